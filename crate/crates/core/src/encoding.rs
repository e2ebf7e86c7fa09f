//! Thermometer (unary) encoding of real-valued sensor windows.
//!
//! Each value becomes `B` bits: bit `k` is set iff the value is strictly
//! greater than the channel's `k`-th threshold, so every group is a run of
//! ones followed by zeros. Encoded bits are laid out channel-major, then by
//! timestep, then by threshold index:
//!
//! ```text
//! index(c, t, k) = (c * timesteps + t) * B + k
//! ```
//!
//! Model routing tables refer to this layout, so it is part of the model
//! contract.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitVector;
use crate::window::Window;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("channel {channel} has {distinct} distinct values, need at least {required}")]
    DegenerateChannel {
        channel: usize,
        distinct: usize,
        required: usize,
    },
    #[error("window has {got} channels, encoder expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("window has {got} timesteps, encoding expects {expected}")]
    TimestepMismatch { expected: usize, got: usize },
    #[error("bits_per_value must be positive")]
    ZeroBits,
    #[error("encoder needs at least one channel")]
    NoChannels,
    #[error("threshold row {channel} is not non-decreasing or not finite")]
    BadThresholds { channel: usize },
    #[error("threshold matrix has {got} entries, expected {expected}")]
    ThresholdShape { expected: usize, got: usize },
}

/// Per-channel ordered thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermometerEncoder {
    num_channels: usize,
    bits_per_value: usize,
    /// Row-major `[num_channels][bits_per_value]`.
    thresholds: Vec<f64>,
}

impl ThermometerEncoder {
    pub fn new(
        num_channels: usize,
        bits_per_value: usize,
        thresholds: Vec<f64>,
    ) -> Result<Self, EncodingError> {
        if num_channels == 0 {
            return Err(EncodingError::NoChannels);
        }
        if bits_per_value == 0 {
            return Err(EncodingError::ZeroBits);
        }
        if thresholds.len() != num_channels * bits_per_value {
            return Err(EncodingError::ThresholdShape {
                expected: num_channels * bits_per_value,
                got: thresholds.len(),
            });
        }
        for (c, row) in thresholds.chunks(bits_per_value).enumerate() {
            let ok = row.iter().all(|v| v.is_finite()) && row.windows(2).all(|w| w[0] <= w[1]);
            if !ok {
                return Err(EncodingError::BadThresholds { channel: c });
            }
        }
        Ok(Self {
            num_channels,
            bits_per_value,
            thresholds,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn bits_per_value(&self) -> usize {
        self.bits_per_value
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn channel_thresholds(&self, channel: usize) -> &[f64] {
        let b = self.bits_per_value;
        &self.thresholds[channel * b..(channel + 1) * b]
    }

    /// Number of thresholds strictly below `value` on `channel`.
    #[inline]
    pub fn level(&self, channel: usize, value: f64) -> usize {
        self.channel_thresholds(channel)
            .partition_point(|&thr| value > thr)
    }

    /// Encodes one value into its `B`-bit unary group.
    pub fn encode_value(&self, channel: usize, value: f64) -> Vec<bool> {
        let ones = self.level(channel, value);
        (0..self.bits_per_value).map(|k| k < ones).collect()
    }

    /// Encodes a whole window (any number of timesteps).
    pub fn encode(&self, window: &Window) -> Result<BitVector, EncodingError> {
        if window.channels() != self.num_channels {
            return Err(EncodingError::ChannelMismatch {
                expected: self.num_channels,
                got: window.channels(),
            });
        }
        let b = self.bits_per_value;
        let t_len = window.timesteps();
        let mut bits = BitVector::zeros(self.num_channels * t_len * b);
        for c in 0..self.num_channels {
            for (t, &v) in window.channel(c).iter().enumerate() {
                let ones = self.level(c, v as f64);
                if ones > 0 {
                    bits.set_run((c * t_len + t) * b, ones);
                }
            }
        }
        Ok(bits)
    }
}

/// Linear-interpolation quantile of a sorted slice at probability `q`
/// (position `q * (n - 1)` between order statistics).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fits distributive thresholds: threshold `k` (1-indexed) of a channel is the
/// empirical quantile at `k / (B + 1)` of that channel's pooled values.
pub fn fit_distributive<C>(per_channel: &[C], bits_per_value: usize) -> Result<ThermometerEncoder, EncodingError>
where
    C: AsRef<[f32]>,
{
    if bits_per_value == 0 {
        return Err(EncodingError::ZeroBits);
    }
    let mut thresholds = Vec::with_capacity(per_channel.len() * bits_per_value);
    for (c, values) in per_channel.iter().enumerate() {
        let mut sorted: Vec<f64> = values.as_ref().iter().map(|&v| v as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let distinct = count_distinct_sorted(&sorted);
        if distinct < bits_per_value {
            return Err(EncodingError::DegenerateChannel {
                channel: c,
                distinct,
                required: bits_per_value,
            });
        }
        for k in 1..=bits_per_value {
            let q = k as f64 / (bits_per_value + 1) as f64;
            thresholds.push(quantile_sorted(&sorted, q));
        }
    }
    ThermometerEncoder::new(per_channel.len(), bits_per_value, thresholds)
}

fn count_distinct_sorted(sorted: &[f64]) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    1 + sorted.windows(2).filter(|w| w[0] != w[1]).count()
}

/// An encoder bound to a fixed window length; this is what a model consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEncoding {
    pub encoder: ThermometerEncoder,
    pub timesteps: usize,
}

impl WindowEncoding {
    pub fn new(encoder: ThermometerEncoder, timesteps: usize) -> Self {
        Self { encoder, timesteps }
    }

    pub fn input_width(&self) -> usize {
        self.encoder.num_channels() * self.timesteps * self.encoder.bits_per_value()
    }

    pub fn encode(&self, window: &Window) -> Result<BitVector, EncodingError> {
        if window.timesteps() != self.timesteps {
            return Err(EncodingError::TimestepMismatch {
                expected: self.timesteps,
                got: window.timesteps(),
            });
        }
        self.encoder.encode(window)
    }
}

//! Stochastic 1D augmentations for sensor windows.
//!
//! Seven transforms, each applied independently with probability `p`, in a
//! fixed order: time shift, scaling, jitter, time masking, axis flip,
//! rotation of channels 0..3, and zero-phase Butterworth low-pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::window::Window;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("low-pass cutoff {cutoff} Hz must be in (0, {nyquist}) Hz")]
    Cutoff { cutoff: f64, nyquist: f64 },
    #[error("scale range [{0}, {1}] is empty")]
    ScaleRange(f64, f64),
    #[error("Butterworth order {0} must be even and positive")]
    FilterOrder(usize),
    #[error("{name} = {value} is invalid")]
    Invalid { name: &'static str, value: f64 },
    #[error("{0}")]
    Parameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub probability: f64,
    pub max_shift: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub jitter_sigma: f64,
    pub max_mask_len: usize,
    pub flip_axis_prob: f64,
    pub max_rotation_deg: f64,
    /// `None` disables the low-pass step.
    pub lowpass_cutoff_hz: Option<f64>,
    pub lowpass_order: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.3,
            max_shift: 10,
            scale_min: 0.9,
            scale_max: 1.1,
            jitter_sigma: 0.05,
            max_mask_len: 10,
            flip_axis_prob: 0.5,
            max_rotation_deg: 10.0,
            lowpass_cutoff_hz: Some(20.0),
            lowpass_order: 4,
            sample_rate_hz: 50.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every transform configured to be a no-op.
    pub fn identity() -> Self {
        Self {
            max_shift: 0,
            scale_min: 1.0,
            scale_max: 1.0,
            jitter_sigma: 0.0,
            max_mask_len: 0,
            flip_axis_prob: 0.0,
            max_rotation_deg: 0.0,
            lowpass_cutoff_hz: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(AugmentError::Probability(self.probability));
        }
        if !(0.0..=1.0).contains(&self.flip_axis_prob) {
            return Err(AugmentError::Probability(self.flip_axis_prob));
        }
        if !(self.scale_min <= self.scale_max) {
            return Err(AugmentError::ScaleRange(self.scale_min, self.scale_max));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(AugmentError::Invalid {
                name: "jitter_sigma",
                value: self.jitter_sigma,
            });
        }
        if !(self.max_rotation_deg >= 0.0) {
            return Err(AugmentError::Invalid {
                name: "max_rotation_deg",
                value: self.max_rotation_deg,
            });
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(AugmentError::Invalid {
                name: "sample_rate_hz",
                value: self.sample_rate_hz,
            });
        }
        if let Some(cutoff) = self.lowpass_cutoff_hz {
            let nyquist = self.sample_rate_hz / 2.0;
            if !(cutoff > 0.0 && cutoff < nyquist) {
                return Err(AugmentError::Cutoff { cutoff, nyquist });
            }
            if self.lowpass_order == 0 || self.lowpass_order % 2 != 0 {
                return Err(AugmentError::FilterOrder(self.lowpass_order));
            }
        }
        Ok(())
    }
}

/// Random stream for one sample of one epoch.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mix = splitmix(splitmix(seed ^ 0xA076_1D64_78BD_642F) ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        ^ splitmix(index.wrapping_add(0xE703_7ED1_A0B4_28DB));
    ChaCha8Rng::seed_from_u64(mix)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Moves samples by `shift` steps (positive = later); vacated steps become 0.
pub fn time_shift(window: &Window, shift: isize) -> Window {
    let t_len = window.timesteps() as isize;
    let mut out = Window::zeros(window.channels(), window.timesteps());
    for c in 0..window.channels() {
        let src = window.channel(c);
        let dst = out.channel_mut(c);
        for t in 0..t_len {
            let from = t - shift;
            if (0..t_len).contains(&from) {
                dst[t as usize] = src[from as usize];
            }
        }
    }
    out
}

pub fn scale(window: &Window, factor: f64) -> Window {
    let mut out = window.clone();
    for v in out.as_flat_mut() {
        *v = (*v as f64 * factor) as f32;
    }
    out
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma`.
pub fn jitter<R: Rng + ?Sized>(window: &Window, sigma: f64, rng: &mut R) -> Window {
    let mut out = window.clone();
    if sigma == 0.0 {
        return out;
    }
    for v in out.as_flat_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = (*v as f64 + sigma * n) as f32;
    }
    out
}

/// Zeroes `start..start + len` on every channel.
pub fn time_mask(window: &Window, start: usize, len: usize) -> Result<Window, AugmentError> {
    if start + len > window.timesteps() {
        return Err(AugmentError::Parameter(format!(
            "mask {start}..{} exceeds {} timesteps",
            start + len,
            window.timesteps()
        )));
    }
    let mut out = window.clone();
    for c in 0..out.channels() {
        out.channel_mut(c)[start..start + len].fill(0.0);
    }
    Ok(out)
}

/// Negates channels whose mask entry is set.
pub fn axis_flip(window: &Window, mask: &[bool]) -> Window {
    let mut out = window.clone();
    for (c, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        if c < out.channels() {
            for v in out.channel_mut(c) {
                *v = -*v;
            }
        }
    }
    out
}

/// Axis-angle (Rodrigues) rotation matrix.
pub fn rotation_matrix(axis: [f64; 3], angle_deg: f64) -> [[f64; 3]; 3] {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / norm);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Rotates the vector formed by channels 0..3 at every timestep.
pub fn rotate3(window: &Window, axis: [f64; 3], angle_deg: f64) -> Result<Window, AugmentError> {
    if window.channels() < 3 {
        return Err(AugmentError::Parameter(format!(
            "rotation needs 3 channels, window has {}",
            window.channels()
        )));
    }
    let m = rotation_matrix(axis, angle_deg);
    let mut out = window.clone();
    for t in 0..window.timesteps() {
        let v = [0, 1, 2].map(|c| window.get(c, t) as f64);
        for (r, row) in m.iter().enumerate() {
            out.set(r, t, (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]) as f32);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a1: f64,
    a2: f64,
}

/// Even-order Butterworth low-pass as cascaded biquads (bilinear transform
/// with pre-warping).
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
    order: usize,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self, AugmentError> {
        if order == 0 || order % 2 != 0 {
            return Err(AugmentError::FilterOrder(order));
        }
        let nyquist = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(AugmentError::Cutoff {
                cutoff: cutoff_hz,
                nyquist,
            });
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let sections = (1..=order / 2)
            .map(|i| {
                let q = 1.0
                    / (2.0 * (std::f64::consts::PI * (2 * i - 1) as f64 / (2 * order) as f64).sin());
                let norm = 1.0 / (1.0 + k / q + k * k);
                let b0 = k * k * norm;
                Biquad {
                    b: [b0, 2.0 * b0, b0],
                    a1: 2.0 * (k * k - 1.0) * norm,
                    a2: (1.0 - k / q + k * k) * norm,
                }
            })
            .collect();
        Ok(Self { sections, order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Complex gain `H(e^{jω})` magnitude at frequency `f` for one pass.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = std::f64::consts::TAU * freq_hz / sample_rate_hz;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        self.sections
            .iter()
            .map(|s| {
                let nr = s.b[0] + s.b[1] * c1 + s.b[2] * c2;
                let ni = s.b[1] * s1 + s.b[2] * s2;
                let dr = 1.0 + s.a1 * c1 + s.a2 * c2;
                let di = s.a1 * s1 + s.a2 * s2;
                ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
            })
            .product()
    }

    /// One causal pass; the state starts at the steady state for `x[0]`.
    fn filter(&self, x: &mut [f64]) {
        if x.is_empty() {
            return;
        }
        for s in &self.sections {
            let x0 = x[0];
            let mut z1 = x0 * (1.0 - s.b[0]);
            let mut z2 = x0 * (s.b[2] - s.a2);
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a1 * y + z2;
                z2 = s.b[2] * input - s.a2 * y;
                *v = y;
            }
        }
    }

    /// Forward-backward filtering with odd-extension padding (zero phase).
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (self.order + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.filter(&mut ext);
        ext.reverse();
        self.filter(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Per-channel zero-phase low-pass.
pub fn lowpass(window: &Window, filter: &Butterworth) -> Window {
    let mut out = window.clone();
    for c in 0..out.channels() {
        let x: Vec<f64> = window.channel(c).iter().map(|&v| v as f64).collect();
        for (dst, y) in out.channel_mut(c).iter_mut().zip(filter.filtfilt(&x)) {
            *dst = y as f32;
        }
    }
    out
}

/// Precomputed augmentation pipeline.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: AugmentConfig,
    filter: Option<Butterworth>,
}

impl Augmenter {
    pub fn new(config: AugmentConfig) -> Result<Self, AugmentError> {
        config.validate()?;
        let filter = match config.lowpass_cutoff_hz {
            Some(fc) => Some(Butterworth::lowpass(
                config.lowpass_order,
                fc,
                config.sample_rate_hz,
            )?),
            None => None,
        };
        Ok(Self { config, filter })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    pub fn apply<R: Rng + ?Sized>(&self, window: &Window, rng: &mut R) -> Window {
        let cfg = &self.config;
        let p = cfg.probability;
        let mut w = window.clone();
        if rng.random_bool(p) {
            let m = cfg.max_shift as i64;
            w = time_shift(&w, rng.random_range(-m..=m) as isize);
        }
        if rng.random_bool(p) {
            w = scale(&w, rng.random_range(cfg.scale_min..=cfg.scale_max));
        }
        if rng.random_bool(p) {
            w = jitter(&w, cfg.jitter_sigma, rng);
        }
        if rng.random_bool(p) && cfg.max_mask_len > 0 {
            let len = rng.random_range(1..=cfg.max_mask_len.min(w.timesteps()));
            let start = rng.random_range(0..=w.timesteps() - len);
            w = time_mask(&w, start, len).expect("mask within window");
        }
        if rng.random_bool(p) && cfg.flip_axis_prob > 0.0 {
            let mut mask: Vec<bool> = (0..w.channels())
                .map(|_| rng.random_bool(cfg.flip_axis_prob))
                .collect();
            if !mask.iter().any(|&m| m) && !mask.is_empty() {
                let pick = rng.random_range(0..mask.len());
                mask[pick] = true;
            }
            w = axis_flip(&w, &mask);
        }
        if rng.random_bool(p) && cfg.max_rotation_deg > 0.0 && w.channels() >= 3 {
            let normal = Normal::new(0.0, 1.0).unwrap();
            let axis = loop {
                let a: [f64; 3] = [0; 3].map(|_| normal.sample(rng));
                if a.iter().map(|v| v * v).sum::<f64>() > 1e-12 {
                    break a;
                }
            };
            let angle = rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
            w = rotate3(&w, axis, angle).expect("three channels");
        }
        if rng.random_bool(p) {
            if let Some(f) = &self.filter {
                w = lowpass(&w, f);
            }
        }
        w
    }
}

/// One-shot convenience over [`Augmenter`].
pub fn apply_all<R: Rng + ?Sized>(
    window: &Window,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<Window, AugmentError> {
    Ok(Augmenter::new(config.clone())?.apply(window, rng))
}

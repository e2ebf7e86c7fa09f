//! Multi-channel time-series window.

use serde::{Deserialize, Serialize};

/// A `channels × timesteps` block of sensor values, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    channels: usize,
    timesteps: usize,
    data: Vec<f32>,
}

impl Window {
    pub fn zeros(channels: usize, timesteps: usize) -> Self {
        Self {
            channels,
            timesteps,
            data: vec![0.0; channels * timesteps],
        }
    }

    /// Builds a window from a flat channel-major buffer.
    pub fn from_flat(channels: usize, timesteps: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * timesteps, "window buffer size");
        Self {
            channels,
            timesteps,
            data,
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Self {
        let timesteps = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * timesteps);
        for r in rows {
            assert_eq!(r.as_ref().len(), timesteps, "ragged window rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            channels: rows.len(),
            timesteps,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    #[inline]
    pub fn get(&self, channel: usize, t: usize) -> f32 {
        self.data[channel * self.timesteps + t]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, t: usize, value: f32) {
        self.data[channel * self.timesteps + t] = value;
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        &self.data[channel * self.timesteps..(channel + 1) * self.timesteps]
    }

    pub fn channel_mut(&mut self, channel: usize) -> &mut [f32] {
        &mut self.data[channel * self.timesteps..(channel + 1) * self.timesteps]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

//! Synthetic HAR-shaped data for tests, demos and benchmarks.
//!
//! Each class gets its own motion frequency, amplitude and gravity
//! orientation, plus Gaussian noise, so a small model can separate them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::datahar::{HarDataset, HarSample, Split, NUM_CHANNELS, TIMESTEPS};
use crate::window::Window;

/// `per_class × num_classes` samples with labels `1..=num_classes`,
/// interleaved by class.
pub fn har_like(per_class: usize, num_classes: usize, seed: u64) -> HarDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.08).unwrap();
    let mut samples = Vec::with_capacity(per_class * num_classes);
    for i in 0..per_class {
        for c in 0..num_classes {
            let freq = 0.6 + 0.55 * c as f64;
            let amp = 0.15 + 0.12 * ((c * 3) % num_classes.max(1)) as f64;
            let tilt = 0.4 * c as f64;
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let mut w = Window::zeros(NUM_CHANNELS, TIMESTEPS);
            for t in 0..TIMESTEPS {
                let time = t as f64 / 50.0;
                let motion = amp * (std::f64::consts::TAU * freq * time + phase).sin();
                let body = [motion, 0.6 * motion, -0.3 * motion];
                let gyro = [
                    0.5 * amp * (std::f64::consts::TAU * freq * time + phase).cos(),
                    0.2 * motion,
                    0.1 * c as f64 * motion,
                ];
                let gravity = [tilt.cos(), tilt.sin(), 0.2 * tilt];
                for a in 0..3 {
                    w.set(a, t, (body[a] + noise.sample(&mut rng)) as f32);
                    w.set(3 + a, t, (gyro[a] + noise.sample(&mut rng)) as f32);
                    w.set(6 + a, t, (body[a] + gravity[a] + noise.sample(&mut rng)) as f32);
                }
            }
            samples.push(HarSample {
                window: w,
                label: (c + 1) as u8,
                subject: 1 + (i % 7) as u32,
            });
        }
    }
    HarDataset::new(samples, Split::Train)
}

/// Random windows with standard-normal values.
pub fn random_windows(count: usize, channels: usize, timesteps: usize, seed: u64) -> Vec<Window> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    (0..count)
        .map(|_| {
            let data = (0..channels * timesteps).map(|_| normal.sample(&mut rng)).collect();
            Window::from_flat(channels, timesteps, data)
        })
        .collect()
}

//! Exact soft relaxation of the hard forward pass.
//!
//! Every pin is treated as an independent Bernoulli variable with
//! probability `p_j = Σ_c softmax(logits_j)_c · x[pool_j[c]]`, and a LUT
//! outputs the expectation of its (squashed) entries over the `2^n`
//! addresses. The relaxation is multilinear in the pins, which makes its
//! derivatives at binary pins coincide with the finite-difference rules in
//! [`super::backward_efd`].

use super::{DwnModel, Gradients, ModelError};

/// Map from entry weight to an entry value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Squash {
    /// `1 / (1 + exp(-4w))`, slope 1 at `w = 0`.
    Logistic,
    /// Raw weights; used when comparing against finite-difference rules.
    Identity,
    /// `[w > 0]`; matches the hard forward pass, no useful derivative.
    Step,
}

impl Squash {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            Squash::Logistic => 1.0 / (1.0 + (-4.0 * w).exp()),
            Squash::Identity => w,
            Squash::Step => (w > 0.0) as u8 as f64,
        }
    }

    pub fn derivative(self, w: f64) -> f64 {
        match self {
            Squash::Logistic => {
                let s = self.apply(w);
                4.0 * s * (1.0 - s)
            }
            Squash::Identity => 1.0,
            Squash::Step => 0.0,
        }
    }
}

/// Probability of each address `u` under independent pins.
pub fn address_probabilities(pins: &[f64]) -> Vec<f64> {
    let n = pins.len();
    (0..1usize << n)
        .map(|u| {
            pins.iter()
                .enumerate()
                .map(|(j, &p)| if (u >> j) & 1 == 1 { p } else { 1.0 - p })
                .product()
        })
        .collect()
}

/// Expected output of one LUT.
pub fn soft_lut(entries: &[f64], pins: &[f64], squash: Squash) -> f64 {
    address_probabilities(pins)
        .iter()
        .zip(entries)
        .map(|(pr, &w)| pr * squash.apply(w))
        .sum()
}

/// `(d out / d pins, d out / d entries)` of [`soft_lut`].
pub fn soft_lut_grad(entries: &[f64], pins: &[f64], squash: Squash) -> (Vec<f64>, Vec<f64>) {
    let n = pins.len();
    let probs = address_probabilities(pins);
    let d_entries = probs
        .iter()
        .zip(entries)
        .map(|(pr, &w)| pr * squash.derivative(w))
        .collect();
    let d_pins = (0..n)
        .map(|j| {
            (0..1usize << n)
                .filter(|u| (u >> j) & 1 == 0)
                .map(|u| {
                    let others: f64 = (0..n)
                        .filter(|&i| i != j)
                        .map(|i| if (u >> i) & 1 == 1 { pins[i] } else { 1.0 - pins[i] })
                        .product();
                    others * (squash.apply(entries[u | (1 << j)]) - squash.apply(entries[u]))
                })
                .sum()
        })
        .collect();
    (d_pins, d_entries)
}

struct SoftLayerPass {
    input: Vec<f64>,
    softmax: Vec<f64>,
    pins: Vec<f64>,
}

fn soft_pass(
    model: &DwnModel,
    soft_bits: &[f64],
    squash: Squash,
) -> Result<(Vec<SoftLayerPass>, Vec<f64>), ModelError> {
    if soft_bits.len() != model.input_width {
        return Err(ModelError::WidthMismatch {
            expected: model.input_width,
            got: soft_bits.len(),
        });
    }
    if let Some((index, &value)) = soft_bits
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(ModelError::SoftBitRange { index, value });
    }
    let mut passes = Vec::with_capacity(model.layers.len());
    let mut x = soft_bits.to_vec();
    for layer in &model.layers {
        let n = layer.arity;
        let p = layer.pool_size;
        let softmax = layer.mapping_softmax();
        let pins: Vec<f64> = (0..layer.num_luts * n)
            .map(|pin| {
                let base = pin * p;
                (0..p)
                    .map(|c| softmax[base + c] * x[layer.candidate_pools[base + c] as usize])
                    .sum()
            })
            .collect();
        let out: Vec<f64> = (0..layer.num_luts)
            .map(|l| soft_lut(layer.lut_entries(l), &pins[l * n..(l + 1) * n], squash))
            .collect();
        passes.push(SoftLayerPass {
            input: std::mem::replace(&mut x, out),
            softmax,
            pins,
        });
    }
    Ok((passes, x))
}

fn soft_head(model: &DwnModel, final_out: &[f64]) -> Vec<f64> {
    let g = model.group_size();
    (0..model.num_classes)
        .map(|c| model.tau * final_out[c * g..(c + 1) * g].iter().sum::<f64>() / g as f64)
        .collect()
}

/// Class scores of the relaxed model for soft input bits in `[0, 1]`.
pub fn soft_forward(model: &DwnModel, soft_bits: &[f64], squash: Squash) -> Result<Vec<f64>, ModelError> {
    let (_, out) = soft_pass(model, soft_bits, squash)?;
    Ok(soft_head(model, &out))
}

/// Exact gradients of `Σ_c upstream_c · score_c` w.r.t. all parameters and
/// the input bits.
pub fn soft_gradients(
    model: &DwnModel,
    soft_bits: &[f64],
    upstream: &[f64],
    squash: Squash,
) -> Result<(Gradients, Vec<f64>), ModelError> {
    if upstream.len() != model.num_classes {
        return Err(ModelError::UpstreamLength {
            expected: model.num_classes,
            got: upstream.len(),
        });
    }
    let (passes, _) = soft_pass(model, soft_bits, squash)?;
    let g = model.group_size();
    let head = model.tau / g as f64;
    let mut grad_out: Vec<f64> = (0..model.layers.last().unwrap().num_luts)
        .map(|l| upstream[l / g] * head)
        .collect();
    let mut grads = Gradients::zeros_like(model);
    for (li, (layer, pass)) in model.layers.iter().zip(&passes).enumerate().rev() {
        let n = layer.arity;
        let p = layer.pool_size;
        let e = layer.entries_per_lut();
        let lg = &mut grads.layers[li];
        let mut grad_in = vec![0.0; layer.input_width];
        for l in 0..layer.num_luts {
            let pins = &pass.pins[l * n..(l + 1) * n];
            let (d_pins, d_entries) = soft_lut_grad(layer.lut_entries(l), pins, squash);
            for (u, d) in d_entries.iter().enumerate() {
                lg.entry[l * e + u] += grad_out[l] * d;
            }
            for j in 0..n {
                let g_pin = grad_out[l] * d_pins[j];
                let base = (l * n + j) * p;
                let mean = pins[j];
                for c in 0..p {
                    let src = layer.candidate_pools[base + c] as usize;
                    let s = pass.softmax[base + c];
                    lg.mapping[base + c] += g_pin * s * (pass.input[src] - mean);
                    grad_in[src] += g_pin * s;
                }
            }
        }
        grad_out = grad_in;
    }
    Ok((grads, grad_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_pins_average_entries() {
        let w = [0.3, -1.2, 2.0, 0.0];
        let out = soft_lut(&w, &[0.5, 0.5], Squash::Logistic);
        let mean = w.iter().map(|&v| Squash::Logistic.apply(v)).sum::<f64>() / 4.0;
        assert!((out - mean).abs() < 1e-15);
    }

    #[test]
    fn saturated_pins_pick_the_addressed_entry() {
        let w = [0.3, -1.2, 2.0, 0.0, 0.9, -0.4, 0.1, 1.5];
        for a in 0..8usize {
            let pins: Vec<f64> = (0..3).map(|j| ((a >> j) & 1) as f64).collect();
            let out = soft_lut(&w, &pins, Squash::Logistic);
            assert!((out - Squash::Logistic.apply(w[a])).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_has_unit_slope_at_zero() {
        assert!((Squash::Logistic.derivative(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(Squash::Logistic.apply(0.0), 0.5);
    }

    #[test]
    fn rejects_out_of_range_soft_bits() {
        let layer = super::super::LutLayer::with_fixed_routing(2, 2, &[0, 1], vec![0.0; 4]).unwrap();
        let m = DwnModel::new(2, vec![layer], 1, 1.0, None).unwrap();
        assert_eq!(
            soft_forward(&m, &[0.5, 1.5], Squash::Logistic).unwrap_err(),
            ModelError::SoftBitRange { index: 1, value: 1.5 }
        );
    }
}

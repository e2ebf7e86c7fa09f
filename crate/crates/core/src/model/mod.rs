//! Differentiable weightless network: layers of LUTs with learnable input
//! mapping and a grouped-popcount head.
//!
//! Each LUT has `n` pins. Pin `j` chooses its source among a fixed candidate
//! pool through `softmax(mapping_logits[j])`; in the hard forward pass the
//! argmax candidate is used. The pin bits form an address (pin 0 is the
//! least significant bit) and the LUT outputs `1` iff the addressed entry
//! weight is strictly positive. The last layer is split into `K` equal
//! contiguous groups and class `c` scores `tau * popcount(group c) / G`.
//!
//! Gradients come from [`backward_efd`]: the addressed entry receives the
//! upstream gradient (optionally spread to Hamming neighbours), each pin
//! receives the finite difference of the two entries reached by flipping it,
//! and the mapping logits receive the pin gradient through the softmax.
//! [`soft`] holds the exact multilinear relaxation used to verify those rules.

pub(crate) mod checkpoint;
pub mod soft;

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitVector;
use crate::encoding::WindowEncoding;

pub use checkpoint::{load_checkpoint, save_checkpoint};

pub const MIN_ARITY: usize = 2;
pub const MAX_ARITY: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input has {got} bits, model expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("LUT arity {0} outside {MIN_ARITY}..={MAX_ARITY}")]
    Arity(usize),
    #[error("pool size {pool} exceeds layer input width {width}")]
    PoolTooLarge { pool: usize, width: usize },
    #[error("final layer has {luts} LUTs, not divisible by {classes} classes")]
    GroupSize { luts: usize, classes: usize },
    #[error("trace does not match the model: {0}")]
    TraceMismatch(String),
    #[error("expected {expected} upstream gradients, got {got}")]
    UpstreamLength { expected: usize, got: usize },
    #[error("soft bit {index} = {value} outside [0, 1]")]
    SoftBitRange { index: usize, value: f64 },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Shape and head hyperparameters for [`init_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_width: usize,
    pub layers: usize,
    pub num_luts: usize,
    pub arity: usize,
    pub num_classes: usize,
    pub tau: f64,
    pub pool_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(MIN_ARITY..=MAX_ARITY).contains(&self.arity) {
            return Err(ModelError::Arity(self.arity));
        }
        if self.layers == 0 || self.num_luts == 0 || self.num_classes == 0 || self.input_width == 0 {
            return Err(ModelError::Config(
                "layers, num_luts, num_classes and input width must be positive".into(),
            ));
        }
        if self.pool_size == 0 {
            return Err(ModelError::Config("pool_size must be positive".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(ModelError::Config(format!("tau {} must be positive", self.tau)));
        }
        if self.num_luts % self.num_classes != 0 {
            return Err(ModelError::GroupSize {
                luts: self.num_luts,
                classes: self.num_classes,
            });
        }
        for width in std::iter::once(self.input_width).chain(
            std::iter::repeat_n(self.num_luts, self.layers - 1),
        ) {
            if self.pool_size > width {
                return Err(ModelError::PoolTooLarge {
                    pool: self.pool_size,
                    width,
                });
            }
        }
        Ok(())
    }
}

/// One layer of LUTs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutLayer {
    pub(crate) num_luts: usize,
    pub(crate) arity: usize,
    pub(crate) input_width: usize,
    pub(crate) pool_size: usize,
    /// `[L][2^n]`
    pub(crate) entry_weights: Vec<f64>,
    /// `[L][n][pool]`
    pub(crate) mapping_logits: Vec<f64>,
    /// `[L][n][pool]` indices into the layer input.
    pub(crate) candidate_pools: Vec<u32>,
}

impl LutLayer {
    pub fn new(
        num_luts: usize,
        arity: usize,
        input_width: usize,
        entry_weights: Vec<f64>,
        mapping_logits: Vec<f64>,
        candidate_pools: Vec<u32>,
    ) -> Result<Self, ModelError> {
        if !(MIN_ARITY..=MAX_ARITY).contains(&arity) {
            return Err(ModelError::Arity(arity));
        }
        if num_luts == 0 {
            return Err(ModelError::Config("layer needs at least one LUT".into()));
        }
        let entries = 1usize << arity;
        if entry_weights.len() != num_luts * entries {
            return Err(ModelError::Config(format!(
                "{} entry weights for {num_luts} LUT-{arity}",
                entry_weights.len()
            )));
        }
        if entry_weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::Config("non-finite entry weight".into()));
        }
        let pins = num_luts * arity;
        if mapping_logits.len() != candidate_pools.len() || mapping_logits.is_empty() || mapping_logits.len() % pins != 0 {
            return Err(ModelError::Config("mapping logits/pools shape".into()));
        }
        let pool_size = mapping_logits.len() / pins;
        if pool_size > input_width {
            return Err(ModelError::PoolTooLarge {
                pool: pool_size,
                width: input_width,
            });
        }
        if let Some(bad) = candidate_pools.iter().find(|&&i| i as usize >= input_width) {
            return Err(ModelError::Config(format!(
                "candidate index {bad} outside input width {input_width}"
            )));
        }
        Ok(Self {
            num_luts,
            arity,
            input_width,
            pool_size,
            entry_weights,
            mapping_logits,
            candidate_pools,
        })
    }

    /// Layer whose pins are wired to fixed inputs (pool of one candidate).
    pub fn with_fixed_routing(
        arity: usize,
        input_width: usize,
        routing: &[u32],
        entry_weights: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let num_luts = routing.len() / arity.max(1);
        Self::new(
            num_luts,
            arity,
            input_width,
            entry_weights,
            vec![0.0; routing.len()],
            routing.to_vec(),
        )
    }

    pub fn num_luts(&self) -> usize {
        self.num_luts
    }
    pub fn arity(&self) -> usize {
        self.arity
    }
    pub fn input_width(&self) -> usize {
        self.input_width
    }
    pub fn pool_size(&self) -> usize {
        self.pool_size
    }
    pub fn entries_per_lut(&self) -> usize {
        1 << self.arity
    }
    pub fn entry_weights(&self) -> &[f64] {
        &self.entry_weights
    }
    pub fn mapping_logits(&self) -> &[f64] {
        &self.mapping_logits
    }
    pub fn candidate_pools(&self) -> &[u32] {
        &self.candidate_pools
    }
    pub fn lut_entries(&self, lut: usize) -> &[f64] {
        let e = self.entries_per_lut();
        &self.entry_weights[lut * e..(lut + 1) * e]
    }

    /// Mutable views of `(entry_weights, mapping_logits)` for optimizers.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.entry_weights, &mut self.mapping_logits)
    }

    /// Chosen input index per pin (argmax of the logits, ties to the lowest
    /// candidate position).
    pub fn routing(&self) -> Vec<u32> {
        let p = self.pool_size;
        self.mapping_logits
            .chunks(p)
            .zip(self.candidate_pools.chunks(p))
            .map(|(logits, pool)| pool[argmax(logits)])
            .collect()
    }

    /// Softmax of every pin's logits, same layout as the logits.
    pub fn mapping_softmax(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mapping_logits.len());
        for logits in self.mapping_logits.chunks(self.pool_size) {
            softmax_into(logits, &mut out);
        }
        out
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for &l in logits {
        let e = (l - max).exp();
        sum += e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v /= sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwnModel {
    pub(crate) input_width: usize,
    pub(crate) layers: Vec<LutLayer>,
    pub(crate) num_classes: usize,
    pub(crate) tau: f64,
    pub(crate) encoding: Option<WindowEncoding>,
}

impl DwnModel {
    pub fn new(
        input_width: usize,
        layers: Vec<LutLayer>,
        num_classes: usize,
        tau: f64,
        encoding: Option<WindowEncoding>,
    ) -> Result<Self, ModelError> {
        let last = layers
            .last()
            .ok_or_else(|| ModelError::Config("model needs at least one layer".into()))?;
        if num_classes == 0 || last.num_luts % num_classes != 0 {
            return Err(ModelError::GroupSize {
                luts: last.num_luts,
                classes: num_classes,
            });
        }
        let mut width = input_width;
        for (i, l) in layers.iter().enumerate() {
            if l.input_width != width {
                return Err(ModelError::Config(format!(
                    "layer {i} input width {} != {width}",
                    l.input_width
                )));
            }
            width = l.num_luts;
        }
        if let Some(enc) = &encoding {
            if enc.input_width() != input_width {
                return Err(ModelError::WidthMismatch {
                    expected: input_width,
                    got: enc.input_width(),
                });
            }
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(ModelError::Config(format!("tau {tau} must be positive")));
        }
        Ok(Self {
            input_width,
            layers,
            num_classes,
            tau,
            encoding,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }
    pub fn layers(&self) -> &[LutLayer] {
        &self.layers
    }
    pub fn layers_mut(&mut self) -> &mut [LutLayer] {
        &mut self.layers
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn encoding(&self) -> Option<&WindowEncoding> {
        self.encoding.as_ref()
    }
    pub fn set_encoding(&mut self, encoding: Option<WindowEncoding>) -> Result<(), ModelError> {
        if let Some(enc) = &encoding {
            if enc.input_width() != self.input_width {
                return Err(ModelError::WidthMismatch {
                    expected: self.input_width,
                    got: enc.input_width(),
                });
            }
        }
        self.encoding = encoding;
        Ok(())
    }

    /// LUTs per class group in the final layer.
    pub fn group_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.num_luts) / self.num_classes
    }

    pub fn routing(&self) -> Routing {
        Routing {
            layers: self.layers.iter().map(|l| Arc::from(l.routing())).collect(),
        }
    }

    pub fn forward_hard(&self, bits: &BitVector) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
        self.forward_routed(&self.routing(), bits)
    }

    /// Hard forward pass with a precomputed routing (shared across a batch).
    pub fn forward_routed(
        &self,
        routing: &Routing,
        bits: &BitVector,
    ) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
        if bits.len() != self.input_width {
            return Err(ModelError::WidthMismatch {
                expected: self.input_width,
                got: bits.len(),
            });
        }
        if routing.layers.len() != self.layers.len() {
            return Err(ModelError::TraceMismatch("routing layer count".into()));
        }
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut input = bits.clone();
        for (layer, sources) in self.layers.iter().zip(&routing.layers) {
            let n = layer.arity;
            let e = layer.entries_per_lut();
            let mut addresses = Vec::with_capacity(layer.num_luts);
            let mut outputs = BitVector::zeros(layer.num_luts);
            for l in 0..layer.num_luts {
                let mut addr = 0usize;
                for (j, &src) in sources[l * n..(l + 1) * n].iter().enumerate() {
                    addr |= (input.bit(src as usize) as usize) << j;
                }
                addresses.push(addr as u16);
                if layer.entry_weights[l * e + addr] > 0.0 {
                    outputs.set(l);
                }
            }
            let next = outputs.clone();
            traces.push(LayerTrace {
                sources: Arc::clone(sources),
                addresses,
                outputs,
                input,
            });
            input = next;
        }
        let scores = self.head_scores(&input);
        Ok((scores, ForwardTrace { layers: traces }))
    }

    /// Popcount per class group.
    pub fn group_popcounts(&self, final_outputs: &BitVector) -> Vec<usize> {
        let g = self.group_size();
        (0..self.num_classes)
            .map(|c| final_outputs.count_ones_in(c * g, g))
            .collect()
    }

    fn head_scores(&self, final_outputs: &BitVector) -> Vec<f64> {
        let g = self.group_size() as f64;
        self.group_popcounts(final_outputs)
            .into_iter()
            .map(|p| self.tau * p as f64 / g)
            .collect()
    }

    /// Predicted class (argmax, ties to the lowest index).
    pub fn predict_bits(&self, bits: &BitVector) -> Result<usize, ModelError> {
        let (scores, _) = self.forward_hard(bits)?;
        Ok(argmax(&scores))
    }
}

/// Argmax-selected source per pin, per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub layers: Vec<Arc<[u32]>>,
}

/// Per-layer record of one hard forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Input index feeding each pin, `[L][n]`.
    pub sources: Arc<[u32]>,
    /// Address formed by each LUT (pin 0 = least significant bit).
    pub addresses: Vec<u16>,
    /// Binarized LUT outputs.
    pub outputs: BitVector,
    /// Bits the layer read.
    pub input: BitVector,
}

impl LayerTrace {
    pub fn pin_bit(&self, lut: usize, pin: usize) -> bool {
        (self.addresses[lut] >> pin) & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn final_outputs(&self) -> &BitVector {
        &self.layers.last().expect("non-empty trace").outputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub entry: Vec<f64>,
    pub mapping: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(model: &DwnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradients {
                    entry: vec![0.0; l.entry_weights.len()],
                    mapping: vec![0.0; l.mapping_logits.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.entry.iter_mut().zip(&b.entry).for_each(|(x, y)| *x += y);
            a.mapping.iter_mut().zip(&b.mapping).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.entry.iter().chain(&l.mapping).all(|v| v.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.entry
                    .iter()
                    .zip(&b.entry)
                    .chain(a.mapping.iter().zip(&b.mapping))
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Extended-neighbourhood settings for the entry gradient: entries within
/// Hamming distance `radius` of the addressed one receive `decay^distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfdParams {
    pub radius: u32,
    pub decay: f64,
}

impl Default for EfdParams {
    fn default() -> Self {
        Self {
            radius: 0,
            decay: 1.0,
        }
    }
}

/// Finite-difference gradient of one LUT output w.r.t. pin `j` at `addr`.
#[inline]
pub fn pin_difference(entries: &[f64], addr: usize, pin: usize) -> f64 {
    entries[addr | (1 << pin)] - entries[addr & !(1 << pin)]
}

/// Gradients of the loss for one sample given `upstream = dL/dscores`.
pub fn backward_efd(
    model: &DwnModel,
    trace: &ForwardTrace,
    upstream: &[f64],
    efd: EfdParams,
) -> Result<Gradients, ModelError> {
    backward_efd_with_input(model, trace, upstream, efd).map(|(g, _)| g)
}

/// [`backward_efd`] that also returns the gradient w.r.t. the input bits.
pub fn backward_efd_with_input(
    model: &DwnModel,
    trace: &ForwardTrace,
    upstream: &[f64],
    efd: EfdParams,
) -> Result<(Gradients, Vec<f64>), ModelError> {
    check_trace(model, trace)?;
    if upstream.len() != model.num_classes {
        return Err(ModelError::UpstreamLength {
            expected: model.num_classes,
            got: upstream.len(),
        });
    }
    let g = model.group_size();
    let head = model.tau / g as f64;
    let mut grad_out: Vec<f64> = (0..model.layers.last().unwrap().num_luts)
        .map(|l| upstream[l / g] * head)
        .collect();
    let mut grads = Gradients::zeros_like(model);
    for (li, (layer, lt)) in model.layers.iter().zip(&trace.layers).enumerate().rev() {
        let softmax = layer.mapping_softmax();
        let n = layer.arity;
        let e = layer.entries_per_lut();
        let p = layer.pool_size;
        let lg = &mut grads.layers[li];
        let mut grad_in = vec![0.0; layer.input_width];
        for l in 0..layer.num_luts {
            let go = grad_out[l];
            if go == 0.0 {
                continue;
            }
            let addr = lt.addresses[l] as usize;
            spread_entry_gradient(&mut lg.entry[l * e..(l + 1) * e], addr, go, efd);
            let entries = layer.lut_entries(l);
            for j in 0..n {
                let g_pin = go * pin_difference(entries, addr, j);
                let base = (l * n + j) * p;
                let s = &softmax[base..base + p];
                let pool = &layer.candidate_pools[base..base + p];
                let mean: f64 = s
                    .iter()
                    .zip(pool)
                    .map(|(&sc, &src)| sc * lt.input.bit(src as usize) as f64)
                    .sum();
                for c in 0..p {
                    let x = lt.input.bit(pool[c] as usize) as f64;
                    lg.mapping[base + c] += g_pin * s[c] * (x - mean);
                    grad_in[pool[c] as usize] += g_pin * s[c];
                }
            }
        }
        grad_out = grad_in;
    }
    Ok((grads, grad_out))
}

#[inline]
pub(crate) fn spread_entry_gradient(entry_grad: &mut [f64], addr: usize, go: f64, efd: EfdParams) {
    if efd.radius == 0 {
        entry_grad[addr] += go;
        return;
    }
    for (u, g) in entry_grad.iter_mut().enumerate() {
        let d = (u ^ addr).count_ones();
        if d <= efd.radius {
            *g += go * efd.decay.powi(d as i32);
        }
    }
}

fn check_trace(model: &DwnModel, trace: &ForwardTrace) -> Result<(), ModelError> {
    if trace.layers.len() != model.layers.len() {
        return Err(ModelError::TraceMismatch(format!(
            "{} trace layers for {} model layers",
            trace.layers.len(),
            model.layers.len()
        )));
    }
    for (i, (l, t)) in model.layers.iter().zip(&trace.layers).enumerate() {
        if t.addresses.len() != l.num_luts
            || t.sources.len() != l.num_luts * l.arity
            || t.input.len() != l.input_width
        {
            return Err(ModelError::TraceMismatch(format!("layer {i} shape")));
        }
    }
    Ok(())
}

/// Random initialization: entries uniform in (-1, 1), logits uniform in
/// (-0.01, 0.01), candidate pools drawn without replacement per pin.
pub fn init_model<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<DwnModel, ModelError> {
    config.validate()?;
    let mut layers = Vec::with_capacity(config.layers);
    let mut width = config.input_width;
    for _ in 0..config.layers {
        let l = config.num_luts;
        let n = config.arity;
        let entries = (0..l << n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pins = l * n;
        let mut pools = Vec::with_capacity(pins * config.pool_size);
        for _ in 0..pins {
            pools.extend(index::sample(rng, width, config.pool_size).into_iter().map(|i| i as u32));
        }
        let logits = (0..pins * config.pool_size)
            .map(|_| rng.random_range(-0.01..0.01))
            .collect();
        layers.push(LutLayer::new(l, n, width, entries, logits, pools)?);
        width = l;
    }
    DwnModel::new(config.input_width, layers, config.num_classes, config.tau, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_lut(weights: [f64; 4]) -> DwnModel {
        let layer = LutLayer::with_fixed_routing(2, 2, &[0, 1], weights.to_vec()).unwrap();
        DwnModel::new(2, vec![layer], 1, 1.0, None).unwrap()
    }

    #[test]
    fn and_lut_fires_on_both_inputs() {
        let m = single_lut([-1.0, -1.0, -1.0, 1.0]);
        for (bits, want) in [([true, true], 1.0), ([true, false], 0.0), ([false, true], 0.0), ([false, false], 0.0)] {
            let (scores, trace) = m.forward_hard(&BitVector::from_bools(&bits)).unwrap();
            assert_eq!(scores, vec![want]);
            assert_eq!(trace.final_outputs().get(0), want == 1.0);
        }
    }

    #[test]
    fn all_negative_entries_give_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig {
            input_width: 32,
            layers: 1,
            num_luts: 12,
            arity: 3,
            num_classes: 3,
            tau: 2.0,
            pool_size: 4,
        };
        let mut m = init_model(&cfg, &mut rng).unwrap();
        m.layers[0].entry_weights.iter_mut().for_each(|w| *w = -w.abs() - 0.1);
        let bits = BitVector::from_u64(0xdead_beef, 32);
        assert_eq!(m.forward_hard(&bits).unwrap().0, vec![0.0; 3]);
    }

    #[test]
    fn head_normalizes_group_popcounts() {
        // K = 2, G = 3; group 0 all on, group 1 one on.
        let mut w = Vec::new();
        for on in [true, true, true, true, false, false] {
            let v = if on { 1.0 } else { -1.0 };
            w.extend([v; 4]);
        }
        let routing: Vec<u32> = (0..6).flat_map(|_| [0, 1]).collect();
        let layer = LutLayer::with_fixed_routing(2, 2, &routing, w).unwrap();
        let m = DwnModel::new(2, vec![layer], 2, 1.0, None).unwrap();
        let (scores, _) = m.forward_hard(&BitVector::zeros(2)).unwrap();
        assert_eq!(scores[0], 1.0);
        assert!((scores[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_binarizes_to_zero() {
        let m = single_lut([0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.forward_hard(&BitVector::zeros(2)).unwrap().0, vec![0.0]);
    }

    #[test]
    fn width_mismatch_rejected() {
        let m = single_lut([1.0; 4]);
        assert_eq!(
            m.forward_hard(&BitVector::zeros(3)).unwrap_err(),
            ModelError::WidthMismatch { expected: 2, got: 3 }
        );
    }

    #[test]
    fn entry_gradient_is_delta_at_address() {
        let w = [0.2, -0.5, 0.7, 0.1];
        let m = single_lut(w);
        // address 0b10: pin 1 high, pin 0 low → input bit 1 set, bit 0 clear
        let bits = BitVector::from_bools(&[false, true]);
        let (_, trace) = m.forward_hard(&bits).unwrap();
        assert_eq!(trace.layers[0].addresses, vec![2]);
        let g = backward_efd(&m, &trace, &[1.0], EfdParams::default()).unwrap();
        assert_eq!(g.layers[0].entry, vec![0.0, 0.0, 1.0, 0.0]);
        assert!((pin_difference(&w, 2, 1) - 0.5).abs() < 1e-15);
        assert!((pin_difference(&w, 2, 0) - -0.6).abs() < 1e-15);
    }

    #[test]
    fn pin_difference_matches_multilinear_derivative() {
        // Oracle: f(p0, p1) = Σ_u P(u) w_u; ∂f/∂p_j at the vertex (p0=0, p1=1).
        let w = [0.2, -0.5, 0.7, 0.1];
        let f = |p0: f64, p1: f64| {
            (1.0 - p0) * (1.0 - p1) * w[0] + p0 * (1.0 - p1) * w[1] + (1.0 - p0) * p1 * w[2] + p0 * p1 * w[3]
        };
        let d1 = f(0.0, 1.0) - f(0.0, 0.0); // f is linear in each p_j
        let d0 = f(1.0, 1.0) - f(0.0, 1.0);
        assert!((d1 - 0.5).abs() < 1e-15 && (d0 + 0.6).abs() < 1e-15);
    }

    #[test]
    fn extended_neighbourhood_weights() {
        let mut g = vec![0.0; 8];
        spread_entry_gradient(&mut g, 0b101, 2.0, EfdParams { radius: 1, decay: 0.5 });
        assert_eq!(g, vec![0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn scores_invariant_to_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ModelConfig {
            input_width: 40,
            layers: 2,
            num_luts: 12,
            arity: 4,
            num_classes: 4,
            tau: 3.0,
            pool_size: 8,
        };
        let m = init_model(&cfg, &mut rng).unwrap();
        let mut scaled = m.clone();
        for l in &mut scaled.layers {
            l.entry_weights.iter_mut().for_each(|w| *w *= 7.5);
        }
        for s in 0..50u64 {
            let bits = BitVector::from_bools(&(0..40).map(|i| (s * 31 + i * 7) % 3 == 0).collect::<Vec<_>>());
            assert_eq!(m.forward_hard(&bits).unwrap().0, scaled.forward_hard(&bits).unwrap().0);
        }
    }

    #[test]
    fn address_bit_order_round_trips() {
        for n in MIN_ARITY..=MAX_ARITY {
            for a in 0..1usize << n {
                let bits: Vec<bool> = (0..n).map(|j| (a >> j) & 1 == 1).collect();
                let back = bits.iter().enumerate().fold(0, |acc, (j, &b)| acc | (b as usize) << j);
                assert_eq!(back, a);
            }
        }
    }

    #[test]
    fn init_is_seeded_and_validates_pool() {
        let cfg = ModelConfig {
            input_width: 16,
            layers: 1,
            num_luts: 4,
            arity: 2,
            num_classes: 2,
            tau: 1.0,
            pool_size: 16,
        };
        let a = init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        for pool in a.layers[0].candidate_pools.chunks(16) {
            let mut p = pool.to_vec();
            p.sort_unstable();
            assert_eq!(p, (0..16).collect::<Vec<u32>>());
        }
        let bad = ModelConfig { pool_size: 17, ..cfg };
        assert_eq!(
            init_model(&bad, &mut ChaCha8Rng::seed_from_u64(3)).unwrap_err(),
            ModelError::PoolTooLarge { pool: 17, width: 16 }
        );
    }

    #[test]
    fn trace_mismatch_is_reported() {
        let m = single_lut([1.0; 4]);
        let (_, mut trace) = m.forward_hard(&BitVector::zeros(2)).unwrap();
        trace.layers[0].addresses.push(0);
        assert!(matches!(
            backward_efd(&m, &trace, &[1.0], EfdParams::default()),
            Err(ModelError::TraceMismatch(_))
        ));
    }
}

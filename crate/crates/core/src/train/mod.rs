//! Training loop: augment → encode → hard forward → softmax cross-entropy →
//! EFD backward → Adam, with step learning-rate decay. Also evaluation
//! metrics (accuracy, macro-F1, confusion matrix).

mod config;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{sample_rng, AugmentError, Augmenter};
use crate::bits::BitVector;
use crate::datahar::HarDataset;
use crate::encoding::{fit_distributive, EncodingError, WindowEncoding};
use crate::model::{
    argmax, init_model, pin_difference, spread_entry_gradient, DwnModel, EfdParams, ForwardTrace,
    Gradients, ModelConfig, ModelError,
};

pub use config::{ConfigError, TrainConfig};
pub use metrics::{evaluate, evaluate_predictions, Metrics};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("sample {index} has label {label}, model has {classes} classes")]
    Label {
        index: usize,
        label: u8,
        classes: usize,
    },
}

/// Separates the epoch-shuffle stream from model initialization.
const SHUFFLE_STREAM: u64 = 0x5eed_5a17_0000_0001;

/// Softmax cross-entropy: returns `(loss, dL/dscores)`.
pub fn cross_entropy_grad(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (scores[label] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / sum - (i == label) as u8 as f64)
        .collect();
    (loss, grad)
}

/// `lr × decay^floor(epoch / step)`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.lr_decay.powi((epoch / config.lr_step_epochs) as i32)
}

/// Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        params
            .par_iter_mut()
            .zip(grads.par_iter())
            .zip(self.m.par_iter_mut().zip(self.v.par_iter_mut()))
            .with_min_len(4096)
            .for_each(|((p, &g), (m, v))| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}

/// Optimizer over every tensor of a model.
#[derive(Debug, Clone)]
pub struct ModelOptimizer {
    states: Vec<(AdamState, AdamState)>,
}

impl ModelOptimizer {
    pub fn new(model: &DwnModel, config: &TrainConfig) -> Self {
        let mk = |n| AdamState::new(n, config.beta1, config.beta2, config.epsilon);
        Self {
            states: model
                .layers()
                .iter()
                .map(|l| (mk(l.entry_weights().len()), mk(l.mapping_logits().len())))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut DwnModel, grads: &Gradients, lr: f64) {
        for ((layer, g), (se, sm)) in model
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.states)
        {
            let (entries, logits) = layer.params_mut();
            se.step(entries, &g.entry, lr);
            sm.step(logits, &g.mapping, lr);
        }
    }
}

/// Summed EFD gradients of a batch.
///
/// Work is split by LUT, and each LUT accumulates its samples in index
/// order, so the result does not depend on the thread count and equals the
/// in-order sum of per-sample [`crate::model::backward_efd`] results.
pub fn batch_gradients(
    model: &DwnModel,
    traces: &[ForwardTrace],
    upstream: &[Vec<f64>],
    efd: EfdParams,
) -> Result<Gradients, ModelError> {
    if traces.len() != upstream.len() {
        return Err(ModelError::TraceMismatch("one upstream per trace".into()));
    }
    for up in upstream {
        if up.len() != model.num_classes() {
            return Err(ModelError::UpstreamLength {
                expected: model.num_classes(),
                got: up.len(),
            });
        }
    }
    for t in traces {
        if t.layers.len() != model.layers().len() {
            return Err(ModelError::TraceMismatch("layer count".into()));
        }
    }
    let g = model.group_size();
    let head = model.tau() / g as f64;
    let last_luts = model.layers().last().unwrap().num_luts();
    let mut grad_out: Vec<Vec<f64>> = upstream
        .iter()
        .map(|up| (0..last_luts).map(|l| up[l / g] * head).collect())
        .collect();
    let mut grads = Gradients::zeros_like(model);
    for li in (0..model.layers().len()).rev() {
        let layer = &model.layers()[li];
        let n = layer.arity();
        let e = layer.entries_per_lut();
        let p = layer.pool_size();
        let softmax = layer.mapping_softmax();
        let pools = layer.candidate_pools();
        let lg = &mut grads.layers[li];
        let go = &grad_out;
        lg.entry
            .par_chunks_mut(e)
            .zip(lg.mapping.par_chunks_mut(n * p))
            .enumerate()
            .for_each(|(l, (entry_g, map_g))| {
                let entries = layer.lut_entries(l);
                for (b, trace) in traces.iter().enumerate() {
                    let gl = go[b][l];
                    if gl == 0.0 {
                        continue;
                    }
                    let lt = &trace.layers[li];
                    let addr = lt.addresses[l] as usize;
                    spread_entry_gradient(entry_g, addr, gl, efd);
                    for j in 0..n {
                        let g_pin = gl * pin_difference(entries, addr, j);
                        let base = (l * n + j) * p;
                        let s = &softmax[base..base + p];
                        let pool = &pools[base..base + p];
                        let mean: f64 = s
                            .iter()
                            .zip(pool)
                            .map(|(&sc, &src)| sc * lt.input.bit(src as usize) as f64)
                            .sum();
                        let mg = &mut map_g[j * p..(j + 1) * p];
                        for c in 0..p {
                            let x = lt.input.bit(pool[c] as usize) as f64;
                            mg[c] += g_pin * s[c] * (x - mean);
                        }
                    }
                }
            });
        if li == 0 {
            break;
        }
        grad_out = traces
            .par_iter()
            .zip(grad_out.par_iter())
            .map(|(trace, gob)| {
                let lt = &trace.layers[li];
                let mut grad_in = vec![0.0; layer.input_width()];
                for (l, &gl) in gob.iter().enumerate() {
                    if gl == 0.0 {
                        continue;
                    }
                    let entries = layer.lut_entries(l);
                    let addr = lt.addresses[l] as usize;
                    for j in 0..n {
                        let g_pin = gl * pin_difference(entries, addr, j);
                        let base = (l * n + j) * p;
                        for c in 0..p {
                            grad_in[pools[base + c] as usize] += g_pin * softmax[base + c];
                        }
                    }
                }
                grad_in
            })
            .collect();
    }
    Ok(grads)
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub first_batch_loss: f64,
    pub last_batch_loss: f64,
    pub eval: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DwnModel,
    pub log: Vec<EpochRecord>,
}

/// Model shape implied by a config and an encoding.
pub fn model_config(config: &TrainConfig, input_width: usize) -> ModelConfig {
    ModelConfig {
        input_width,
        layers: config.layers,
        num_luts: config.num_luts,
        arity: config.arity,
        num_classes: config.num_classes,
        tau: config.tau,
        pool_size: config.pool_size,
    }
}

/// Fits the encoder on the (un-augmented) training windows.
pub fn fit_encoding(dataset: &HarDataset, bits_per_value: usize) -> Result<WindowEncoding, TrainError> {
    let first = dataset.samples.first().ok_or(TrainError::EmptyDataset)?;
    let encoder = fit_distributive(&dataset.pooled_channels(), bits_per_value)?;
    Ok(WindowEncoding::new(encoder, first.window.timesteps()))
}

/// Runs the full recipe. `eval` (validation or test) is scored after every
/// epoch; `on_epoch` sees each log record as it is produced.
pub fn train<F>(
    dataset: &HarDataset,
    config: &TrainConfig,
    eval: Option<&HarDataset>,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (index, s) in dataset.samples.iter().enumerate() {
        if s.label == 0 || s.label as usize > config.num_classes {
            return Err(TrainError::Label {
                index,
                label: s.label,
                classes: config.num_classes,
            });
        }
    }
    let encoding = fit_encoding(dataset, config.bits_per_value)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_model(&model_config(config, encoding.input_width()), &mut init_rng)?;
    model.set_encoding(Some(encoding.clone()))?;
    let mut augment_cfg = config.augment.clone();
    augment_cfg.seed = config.seed;
    let augmenter = Augmenter::new(augment_cfg)?;
    let mut optimizer = ModelOptimizer::new(&model, config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let efd = config.efd();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut batch_losses = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let routing = model.routing();
            let scale = 1.0 / batch.len() as f64;
            let results: Vec<Result<(ForwardTrace, f64, bool, Vec<f64>), TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &dataset.samples[i];
                    let mut rng = sample_rng(config.seed, epoch as u64, i as u64);
                    let window = augmenter.apply(&s.window, &mut rng);
                    let bits = encoding.encode(&window)?;
                    let (scores, trace) = model.forward_routed(&routing, &bits)?;
                    let (loss, mut grad) = cross_entropy_grad(&scores, s.class());
                    grad.iter_mut().for_each(|g| *g *= scale);
                    Ok((trace, loss, argmax(&scores) == s.class(), grad))
                })
                .collect();
            let mut traces = Vec::with_capacity(batch.len());
            let mut upstream = Vec::with_capacity(batch.len());
            let mut batch_loss = 0.0;
            for r in results {
                let (trace, loss, ok, grad) = r?;
                batch_loss += loss;
                correct += ok as usize;
                traces.push(trace);
                upstream.push(grad);
            }
            loss_sum += batch_loss;
            batch_losses.push(batch_loss * scale);
            let grads = batch_gradients(&model, &traces, &upstream, efd)?;
            optimizer.step(&mut model, &grads, lr);
        }
        let eval_metrics = match eval {
            Some(ds) if !ds.is_empty() => Some(evaluate(&model, ds)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            batches: batch_losses.len(),
            train_loss: loss_sum / dataset.len() as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
            first_batch_loss: batch_losses[0],
            last_batch_loss: *batch_losses.last().unwrap(),
            eval: eval_metrics,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(TrainOutcome { model, log })
}

/// Encodes every sample without augmentation (parallel, order-preserving).
pub fn encode_dataset(encoding: &WindowEncoding, ds: &HarDataset) -> Result<Vec<BitVector>, EncodingError> {
    ds.samples
        .par_iter()
        .map(|s| encoding.encode(&s.window))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::backward_efd;
    use rand::Rng;

    #[test]
    fn cross_entropy_matches_closed_form() {
        let (loss, g) = cross_entropy_grad(&[1.0, 2.0, 0.5], 1);
        let z: f64 = [1.0f64, 2.0, 0.5].iter().map(|s| s.exp()).sum();
        assert!((loss - (z.ln() - 2.0)).abs() < 1e-12);
        assert!((g[0] - 1f64.exp() / z).abs() < 1e-12);
        assert!((g[1] - (2f64.exp() / z - 1.0)).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn step_schedule() {
        let c = TrainConfig::default();
        for (e, want) in [(0, 0.01), (13, 0.01), (14, 0.001), (27, 0.001), (28, 0.0001), (31, 0.0001)] {
            assert!((lr_at_epoch(&c, e) - want).abs() < 1e-15, "{e}");
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // Bias correction makes the first step lr * g / (|g| + eps').
        let mut s = AdamState::new(3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 1.0, 1.0];
        s.step(&mut p, &[0.5, -2.0, 0.0], 0.01);
        assert!((p[0] - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (1.0 + 0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(p[2], 1.0);

        // Second step against a hand-rolled recurrence.
        s.step(&mut p, &[0.25, 1.0, 0.0], 0.01);
        let m = 0.9 * 0.05 + 0.1 * 0.25;
        let v = 0.999 * 0.001 * 0.25 + 0.001 * 0.0625;
        let want = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8) - 0.01 * (m / 0.19) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - want).abs() < 1e-14);
    }

    #[test]
    fn batch_gradients_equal_per_sample_sum() {
        let cfg = ModelConfig {
            input_width: 40,
            layers: 2,
            num_luts: 12,
            arity: 3,
            num_classes: 3,
            tau: 5.0,
            pool_size: 6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = init_model(&cfg, &mut rng).unwrap();
        let efd = EfdParams { radius: 1, decay: 0.5 };
        let mut traces = Vec::new();
        let mut ups = Vec::new();
        let mut want = Gradients::zeros_like(&model);
        for _ in 0..7 {
            let bits = BitVector::from_bools(&(0..40).map(|_| rng.random()).collect::<Vec<bool>>());
            let (_, t) = model.forward_hard(&bits).unwrap();
            let up: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            want.add_assign(&backward_efd(&model, &t, &up, efd).unwrap());
            traces.push(t);
            ups.push(up);
        }
        let got = batch_gradients(&model, &traces, &ups, efd).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        let mut ds = crate::synth::har_like(2, 3, 0);
        ds.samples[1].label = 7;
        let cfg = TrainConfig {
            num_classes: 3,
            num_luts: 6,
            pool_size: 4,
            bits_per_value: 2,
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ds, &cfg, None, |_| {}), Err(TrainError::Label { index: 1, .. })));
    }
}

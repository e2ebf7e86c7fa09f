//! Frozen models: static routing plus bit-packed truth tables.
//!
//! # File format
//!
//! All integers little-endian.
//!
//! ```text
//! "DWNM"                      magic
//! u32  version (= 1)
//! u32  num_classes K
//! f64  tau
//! u32  encoder channels C   (0 when the model takes raw bits)
//! u32  encoder timesteps T  (0 when raw)
//! u32  encoder bits B       (0 when raw)
//! u32  input width
//! u32  layer count
//! per layer: u32 num_luts L, u32 arity n
//! f64  thresholds [C][B]
//! per layer: u32 routing [L][n]
//! per layer: ceil(L * 2^n / 8) bytes of truth bits; bit u of LUT l is
//!            stream bit l * 2^n + u, stored at byte i / 8, bit i % 8
//! ```
//!
//! Each layer's input width is the previous layer's LUT count (the first
//! layer reads the input width).

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::bytes::{ByteReader, ByteWriter, FormatError};
use crate::encoding::{EncodingError, WindowEncoding};
use crate::model::checkpoint::{read_encoding_dims, read_thresholds, write_encoding};
use crate::model::{argmax, DwnModel, ModelError, MAX_ARITY, MIN_ARITY};
use crate::window::Window;

const MAGIC: &[u8; 4] = b"DWNM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrozenLayer {
    num_luts: usize,
    arity: usize,
    input_width: usize,
    routing: Vec<u32>,
    /// `words_per_lut` words per LUT; bit `u` is entry `u`.
    truth: Vec<u64>,
}

impl FrozenLayer {
    pub fn new(
        arity: usize,
        input_width: usize,
        routing: Vec<u32>,
        truth_bits: &[bool],
    ) -> Result<Self, ModelError> {
        if !(MIN_ARITY..=MAX_ARITY).contains(&arity) {
            return Err(ModelError::Arity(arity));
        }
        if routing.is_empty() || routing.len() % arity != 0 {
            return Err(ModelError::Config("routing length not a multiple of arity".into()));
        }
        let num_luts = routing.len() / arity;
        if truth_bits.len() != num_luts << arity {
            return Err(ModelError::Config(format!(
                "{} truth bits for {num_luts} LUT-{arity}",
                truth_bits.len()
            )));
        }
        if let Some(bad) = routing.iter().find(|&&r| r as usize >= input_width) {
            return Err(ModelError::Config(format!(
                "routing index {bad} outside input width {input_width}"
            )));
        }
        let e = 1usize << arity;
        let wpl = e.div_ceil(64);
        let mut truth = vec![0u64; num_luts * wpl];
        for (i, &b) in truth_bits.iter().enumerate() {
            if b {
                let (l, u) = (i / e, i % e);
                truth[l * wpl + (u >> 6)] |= 1 << (u & 63);
            }
        }
        Ok(Self {
            num_luts,
            arity,
            input_width,
            routing,
            truth,
        })
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
    pub fn routing(&self) -> &[u32] {
        &self.routing
    }
    pub fn lut_routing(&self, lut: usize) -> &[u32] {
        &self.routing[lut * self.arity..(lut + 1) * self.arity]
    }

    #[inline]
    fn words_per_lut(&self) -> usize {
        (1usize << self.arity).div_ceil(64)
    }

    #[inline]
    pub fn lut_bit(&self, lut: usize, address: usize) -> bool {
        let w = self.truth[lut * self.words_per_lut() + (address >> 6)];
        (w >> (address & 63)) & 1 == 1
    }

    /// Truth table of one LUT, entry order `u = 0..2^n`.
    pub fn lut_truth(&self, lut: usize) -> Vec<bool> {
        (0..1usize << self.arity).map(|u| self.lut_bit(lut, u)).collect()
    }

    pub fn truth_bit_count(&self) -> usize {
        self.num_luts << self.arity
    }

    /// Evaluates the layer on packed input words into packed output words.
    fn eval_into(&self, input: &[u64], out: &mut Vec<u64>) {
        out.clear();
        out.resize(self.num_luts.div_ceil(64), 0);
        let n = self.arity;
        let wpl = self.words_per_lut();
        for (l, pins) in self.routing.chunks_exact(n).enumerate() {
            let mut addr = 0usize;
            for (j, &src) in pins.iter().enumerate() {
                let s = src as usize;
                addr |= (((input[s >> 6] >> (s & 63)) & 1) as usize) << j;
            }
            let bit = (self.truth[l * wpl + (addr >> 6)] >> (addr & 63)) & 1;
            out[l >> 6] |= bit << (l & 63);
        }
    }
}

/// Output of [`FrozenModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub popcounts: Vec<u32>,
}

impl Prediction {
    pub fn scores(&self, tau: f64, group_size: usize) -> Vec<f64> {
        self.popcounts
            .iter()
            .map(|&p| tau * p as f64 / group_size as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    input_width: usize,
    layers: Vec<FrozenLayer>,
    num_classes: usize,
    tau: f64,
    encoding: Option<WindowEncoding>,
}

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl FrozenModel {
    pub fn new(
        input_width: usize,
        layers: Vec<FrozenLayer>,
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
    pub fn layers(&self) -> &[FrozenLayer] {
        &self.layers
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
    pub fn group_size(&self) -> usize {
        self.layers.last().unwrap().num_luts / self.num_classes
    }
    pub fn total_luts(&self) -> usize {
        self.layers.iter().map(|l| l.num_luts).sum()
    }

    /// LUT content only: `ceil(Σ L·2^n / 8)` bytes.
    pub fn model_size_bytes(&self) -> usize {
        self.layers
            .iter()
            .map(FrozenLayer::truth_bit_count)
            .sum::<usize>()
            .div_ceil(8)
    }

    pub fn predict_bits(&self, bits: &BitVector) -> Result<Prediction, ModelError> {
        if bits.len() != self.input_width {
            return Err(ModelError::WidthMismatch {
                expected: self.input_width,
                got: bits.len(),
            });
        }
        Ok(self.predict_words(bits.words(), &mut Scratch::default()))
    }

    fn predict_words(&self, input: &[u64], scratch: &mut Scratch) -> Prediction {
        let Scratch { a, b } = scratch;
        self.layers[0].eval_into(input, a);
        for layer in &self.layers[1..] {
            layer.eval_into(a, b);
            std::mem::swap(a, b);
        }
        let g = self.group_size();
        let popcounts: Vec<u32> = (0..self.num_classes)
            .map(|c| count_range(a, c * g, g))
            .collect();
        let label = popcounts
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > popcounts[best] { i } else { best });
        Prediction { label, popcounts }
    }

    /// Encodes a window and classifies it.
    pub fn predict(&self, window: &Window) -> Result<Prediction, InferError> {
        let enc = self
            .encoding
            .as_ref()
            .ok_or_else(|| ModelError::Config("model has no input encoding".into()))?;
        let bits = enc.encode(window)?;
        Ok(self.predict_bits(&bits)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.usize32(self.num_classes);
        w.f64(self.tau);
        write_encoding(&mut w, self.encoding.as_ref());
        w.usize32(self.input_width);
        w.usize32(self.layers.len());
        for l in &self.layers {
            w.usize32(l.num_luts);
            w.usize32(l.arity);
        }
        if let Some(e) = &self.encoding {
            e.encoder.thresholds().iter().for_each(|&t| w.f64(t));
        }
        for l in &self.layers {
            l.routing.iter().for_each(|&r| w.u32(r));
        }
        for l in &self.layers {
            let e = 1usize << l.arity;
            let mut bytes = vec![0u8; l.truth_bit_count().div_ceil(8)];
            for lut in 0..l.num_luts {
                for u in 0..e {
                    if l.lut_bit(lut, u) {
                        let i = lut * e + u;
                        bytes[i / 8] |= 1 << (i % 8);
                    }
                }
            }
            w.bytes(&bytes);
        }
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(buf);
        r.magic(MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let num_classes = r.usize32()?;
        let tau = r.f64()?;
        let dims = read_encoding_dims(&mut r)?;
        let input_width = r.usize32()?;
        let n_layers = r.usize32()?;
        let mut shapes = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let at = r.offset;
            let (luts, arity) = (r.usize32()?, r.usize32()?);
            if !(MIN_ARITY..=MAX_ARITY).contains(&arity) {
                return Err(FormatError::Invalid {
                    offset: at + 4,
                    message: format!("arity {arity}"),
                });
            }
            shapes.push((luts, arity));
        }
        let encoding = read_thresholds(&mut r, dims)?;
        let mut routings = Vec::with_capacity(shapes.len());
        for &(luts, arity) in &shapes {
            routings.push((r.offset, r.u32s(luts * arity)?));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        let mut width = input_width;
        for (&(luts, arity), (at, routing)) in shapes.iter().zip(routings) {
            let e = 1usize << arity;
            let bytes = r.take((luts * e).div_ceil(8))?;
            let bits: Vec<bool> = (0..luts * e).map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1).collect();
            let layer = FrozenLayer::new(arity, width, routing, &bits).map_err(|e| FormatError::Invalid {
                offset: at,
                message: e.to_string(),
            })?;
            width = luts;
            layers.push(layer);
        }
        r.finish()?;
        Self::new(input_width, layers, num_classes, tau, encoding).map_err(|e| FormatError::Invalid {
            offset: 8,
            message: e.to_string(),
        })
    }
}

#[derive(Default)]
struct Scratch {
    a: Vec<u64>,
    b: Vec<u64>,
}

fn count_range(words: &[u64], start: usize, count: usize) -> u32 {
    let mut total = 0;
    let mut i = start;
    let end = start + count;
    while i < end {
        let off = i & 63;
        let take = (64 - off).min(end - i);
        let mask = if take == 64 { u64::MAX } else { ((1u64 << take) - 1) << off };
        total += (words[i >> 6] & mask).count_ones();
        i += take;
    }
    total
}

/// Routing = argmax of each pin's mapping logits (ties to the lowest
/// candidate); truth bit = `[entry weight > 0]`.
pub fn freeze(model: &DwnModel) -> FrozenModel {
    let layers = model
        .layers()
        .iter()
        .map(|l| {
            let bits: Vec<bool> = l.entry_weights().iter().map(|&w| w > 0.0).collect();
            FrozenLayer::new(l.arity(), l.input_width(), l.routing(), &bits)
                .expect("trained layer is well-formed")
        })
        .collect();
    FrozenModel::new(
        model.input_width(),
        layers,
        model.num_classes(),
        model.tau(),
        model.encoding().cloned(),
    )
    .expect("trained model is well-formed")
}

/// Throughput measurement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub samples: usize,
    pub inferences: usize,
    pub total_seconds: f64,
    pub samples_per_second: f64,
    pub mean_ns: f64,
    pub p50_ns: f64,
    pub p99_ns: f64,
    pub min_ns: f64,
    pub max_ns: f64,
}

/// Single-threaded wall-clock benchmark of [`FrozenModel::predict`] (encode
/// included). One warm-up pass is run and excluded.
pub fn bench(model: &FrozenModel, windows: &[Window], repetitions: usize) -> Result<BenchReport, InferError> {
    let enc = model
        .encoding
        .as_ref()
        .ok_or_else(|| ModelError::Config("model has no input encoding".into()))?;
    let mut scratch = Scratch::default();
    let mut sink = 0usize;
    for w in windows {
        sink += model.predict_words(enc.encode(w)?.words(), &mut scratch).label;
    }
    let mut lat = Vec::with_capacity(repetitions * windows.len());
    let start = Instant::now();
    for _ in 0..repetitions {
        for w in windows {
            let t0 = Instant::now();
            let bits = enc.encode(w)?;
            sink += model.predict_words(bits.words(), &mut scratch).label;
            lat.push(t0.elapsed().as_nanos() as f64);
        }
    }
    let total = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    lat.sort_by(f64::total_cmp);
    let n = lat.len();
    let pct = |q: f64| if n == 0 { 0.0 } else { lat[((n - 1) as f64 * q).round() as usize] };
    Ok(BenchReport {
        repetitions,
        samples: windows.len(),
        inferences: n,
        total_seconds: total,
        samples_per_second: if total > 0.0 { n as f64 / total } else { 0.0 },
        mean_ns: if n == 0 { 0.0 } else { lat.iter().sum::<f64>() / n as f64 },
        p50_ns: pct(0.5),
        p99_ns: pct(0.99),
        min_ns: lat.first().copied().unwrap_or(0.0),
        max_ns: lat.last().copied().unwrap_or(0.0),
    })
}

/// Argmax of a model's hard forward pass, for equivalence checks.
pub fn forward_label(model: &DwnModel, bits: &BitVector) -> Result<usize, ModelError> {
    Ok(argmax(&model.forward_hard(bits)?.0))
}

//! Flat `key=value` training configuration.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::model::EfdParams;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub layers: usize,
    pub arity: usize,
    pub num_luts: usize,
    pub tau: f64,
    pub pool_size: usize,
    pub bits_per_value: usize,
    pub num_classes: usize,
    pub efd_radius: u32,
    pub efd_decay: f64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 32,
            batch_size: 100,
            lr: 0.01,
            lr_decay: 0.1,
            lr_step_epochs: 14,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            layers: 1,
            arity: 4,
            num_luts: 10_000,
            tau: 1.0 / 0.03,
            pool_size: 256,
            bits_per_value: 20,
            num_classes: 6,
            efd_radius: 0,
            efd_decay: 1.0,
            augment: AugmentConfig::default(),
        }
    }
}

fn parse_f64(value: &str) -> Result<f64, String> {
    // "1/0.03" style fractions are accepted for temperatures.
    if let Some((num, den)) = value.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|e| format!("{e}"))?;
        let d: f64 = den.trim().parse().map_err(|e| format!("{e}"))?;
        return Ok(n / d);
    }
    value.parse().map_err(|e| format!("{e}"))
}

fn parse_int<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.replace('_', "").parse().map_err(|e: T::Err| e.to_string())
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "epochs",
        "batch_size",
        "lr",
        "lr_decay",
        "lr_step_epochs",
        "beta1",
        "beta2",
        "epsilon",
        "layers",
        "arity",
        "num_luts",
        "tau",
        "pool_size",
        "bits_per_value",
        "num_classes",
        "efd_radius",
        "efd_decay",
        "augment_p",
        "max_shift",
        "scale_min",
        "scale_max",
        "jitter_sigma",
        "max_mask_len",
        "flip_axis_prob",
        "max_rotation_deg",
        "lowpass_cutoff_hz",
        "lowpass_order",
        "sample_rate_hz",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match self.set_inner(key, value) {
            Ok(true) => Ok(()),
            Ok(false) => Err(ConfigError::UnknownKey(key.to_string())),
            Err(message) => Err(ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                message,
            }),
        }
    }

    fn set_inner(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let a = &mut self.augment;
        match key {
            "seed" => {
                let seed = parse_int(value)?;
                a.seed = seed;
                self.seed = seed;
            }
            "epochs" => self.epochs = parse_int(value)?,
            "batch_size" => self.batch_size = parse_int(value)?,
            "lr" => self.lr = parse_f64(value)?,
            "lr_decay" => self.lr_decay = parse_f64(value)?,
            "lr_step_epochs" => self.lr_step_epochs = parse_int(value)?,
            "beta1" => self.beta1 = parse_f64(value)?,
            "beta2" => self.beta2 = parse_f64(value)?,
            "epsilon" => self.epsilon = parse_f64(value)?,
            "layers" => self.layers = parse_int(value)?,
            "arity" => self.arity = parse_int(value)?,
            "num_luts" => self.num_luts = parse_int(value)?,
            "tau" => self.tau = parse_f64(value)?,
            "pool_size" => self.pool_size = parse_int(value)?,
            "bits_per_value" => self.bits_per_value = parse_int(value)?,
            "num_classes" => self.num_classes = parse_int(value)?,
            "efd_radius" => self.efd_radius = parse_int(value)?,
            "efd_decay" => self.efd_decay = parse_f64(value)?,
            "augment_p" => a.probability = parse_f64(value)?,
            "max_shift" => a.max_shift = parse_int(value)?,
            "scale_min" => a.scale_min = parse_f64(value)?,
            "scale_max" => a.scale_max = parse_f64(value)?,
            "jitter_sigma" => a.jitter_sigma = parse_f64(value)?,
            "max_mask_len" => a.max_mask_len = parse_int(value)?,
            "flip_axis_prob" => a.flip_axis_prob = parse_f64(value)?,
            "max_rotation_deg" => a.max_rotation_deg = parse_f64(value)?,
            "lowpass_cutoff_hz" => {
                a.lowpass_cutoff_hz = match value {
                    "off" | "none" => None,
                    v => Some(parse_f64(v)?),
                }
            }
            "lowpass_order" => a.lowpass_order = parse_int(value)?,
            "sample_rate_hz" => a.sample_rate_hz = parse_f64(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let a = &self.augment;
        Some(match key {
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "lr_step_epochs" => self.lr_step_epochs.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "layers" => self.layers.to_string(),
            "arity" => self.arity.to_string(),
            "num_luts" => self.num_luts.to_string(),
            "tau" => self.tau.to_string(),
            "pool_size" => self.pool_size.to_string(),
            "bits_per_value" => self.bits_per_value.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "efd_radius" => self.efd_radius.to_string(),
            "efd_decay" => self.efd_decay.to_string(),
            "augment_p" => a.probability.to_string(),
            "max_shift" => a.max_shift.to_string(),
            "scale_min" => a.scale_min.to_string(),
            "scale_max" => a.scale_max.to_string(),
            "jitter_sigma" => a.jitter_sigma.to_string(),
            "max_mask_len" => a.max_mask_len.to_string(),
            "flip_axis_prob" => a.flip_axis_prob.to_string(),
            "max_rotation_deg" => a.max_rotation_deg.to_string(),
            "lowpass_cutoff_hz" => a.lowpass_cutoff_hz.map_or("off".into(), |v| v.to_string()),
            "lowpass_order" => a.lowpass_order.to_string(),
            "sample_rate_hz" => a.sample_rate_hz.to_string(),
            _ => return None,
        })
    }

    /// Applies a `key=value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Line {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| ConfigError::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Effective configuration as `key=value` lines, in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            writeln!(out, "{key}={}", self.get(key).unwrap()).unwrap();
        }
        out
    }

    pub fn efd(&self) -> EfdParams {
        EfdParams {
            radius: self.efd_radius,
            decay: self.efd_decay,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.lr_step_epochs == 0 {
            return bad("lr_step_epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if self.bits_per_value == 0 {
            return bad("bits_per_value must be positive");
        }
        self.augment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("num_luts", "2000").unwrap();
        cfg.set("lowpass_cutoff_hz", "off").unwrap();
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn fractions_and_comments() {
        let cfg = TrainConfig::parse("# recipe\ntau = 1/0.03  # temperature\n\nepochs=3\n").unwrap();
        assert!((cfg.tau - 33.333_333_333).abs() < 1e-6);
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = TrainConfig::parse("epochs=3\nbogus=1\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Line {
                line: 2,
                message: "unknown key \"bogus\"".into()
            }
        );
        assert!(matches!(
            TrainConfig::parse("lr=fast").unwrap_err(),
            ConfigError::Line { line: 1, .. }
        ));
        assert!(matches!(
            TrainConfig::parse("lr 0.1").unwrap_err(),
            ConfigError::Line { line: 1, .. }
        ));
    }

    #[test]
    fn every_key_is_readable() {
        let cfg = TrainConfig::default();
        for k in TrainConfig::KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
    }
}

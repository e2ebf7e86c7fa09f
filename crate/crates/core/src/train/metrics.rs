use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::datahar::HarDataset;
use crate::model::{argmax, DwnModel, ModelError};

/// Classification quality; confusion rows are true classes, columns
/// predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Per-class F1 from the confusion matrix; a class with no true and no
    /// predicted samples scores 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        per_class_f1(&self.confusion)
    }

    /// Confusion matrix as an aligned text grid.
    pub fn confusion_text(&self, names: &[&str]) -> String {
        let k = self.confusion.len();
        let label = |i: usize| names.get(i).map_or_else(|| i.to_string(), |s| s.to_string());
        let head_w = (0..k).map(|i| label(i).len()).max().unwrap_or(1).max(9);
        let cell_w = self
            .confusion
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(4);
        let mut out = String::new();
        write!(out, "{:<head_w$}", "true\\pred").unwrap();
        for j in 0..k {
            write!(out, " {:>cell_w$}", j + 1).unwrap();
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            write!(out, "{:<head_w$}", label(i)).unwrap();
            for v in row {
                write!(out, " {v:>cell_w$}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn per_class_f1(confusion: &[Vec<usize>]) -> Vec<f64> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let fn_: usize = confusion[c].iter().sum::<usize>() - tp;
            let fp: usize = (0..k).map(|r| confusion[r][c]).sum::<usize>() - tp;
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect()
}

pub fn evaluate_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Metrics {
    assert_eq!(truth.len(), predicted.len());
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let f1 = per_class_f1(&confusion);
    Metrics {
        accuracy: if truth.is_empty() {
            0.0
        } else {
            correct as f64 / truth.len() as f64
        },
        macro_f1: f1.iter().sum::<f64>() / num_classes as f64,
        confusion,
    }
}

/// Hard-forward evaluation on un-augmented samples.
pub fn evaluate(model: &DwnModel, dataset: &HarDataset) -> Result<Metrics, TrainError> {
    let encoding = model
        .encoding()
        .ok_or_else(|| ModelError::Config("model has no input encoding".into()))?;
    let routing = model.routing();
    let predicted: Vec<usize> = dataset
        .samples
        .par_iter()
        .map(|s| -> Result<usize, TrainError> {
            let bits = encoding.encode(&s.window)?;
            let (scores, _) = model.forward_routed(&routing, &bits)?;
            Ok(argmax(&scores))
        })
        .collect::<Result<_, _>>()?;
    let truth: Vec<usize> = dataset.samples.iter().map(|s| s.class()).collect();
    if let Some(&bad) = truth.iter().find(|&&c| c >= model.num_classes()) {
        return Err(TrainError::Label {
            index: truth.iter().position(|&c| c == bad).unwrap(),
            label: bad as u8 + 1,
            classes: model.num_classes(),
        });
    }
    Ok(evaluate_predictions(&truth, &predicted, model.num_classes()))
}

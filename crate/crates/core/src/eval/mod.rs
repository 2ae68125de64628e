//! Accuracy and mean per-class precision, overall and per stratum.

mod diagnostics;
mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{center_invariance, confidence_center_correlation, pearson};
pub use report::{Diagnostics, Report, ReportEntry, CSV_HEADER, PRECISION_RULE};

use crate::datagen::Dataset;
use crate::error::Result;
use crate::nn::Checkpoint;
use crate::splits::{Split, Strata, Stratum};

/// `#correct / #all` (top-1 recall). Empty input gives 0.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

/// Precision of every class; classes nobody predicted score 0.
pub fn per_class_precision(predictions: &[usize], labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut predicted = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        predicted[p] += 1;
        if p == l {
            correct[p] += 1;
        }
    }
    predicted
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect()
}

pub fn mean_per_class_precision(predictions: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    if n_classes == 0 {
        return 0.0;
    }
    per_class_precision(predictions, labels, n_classes).iter().sum::<f64>() / n_classes as f64
}

/// Accuracy and precision of one group of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub accuracy: f64,
    pub precision: f64,
    /// Samples in the group.
    pub n: usize,
    /// Correctly classified samples in the group.
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedMetrics {
    pub overall: Cell,
    /// `None` when no class falls in the stratum.
    pub class: BTreeMap<Stratum, Option<Cell>>,
    pub attribute: BTreeMap<Stratum, Option<Cell>>,
}

/// Metrics over `ids` for every class and attribute stratum.
///
/// Stratum metrics use only the stratum's samples. A class stratum's precision
/// averages over the stratum's classes, so predictions of its samples that land
/// on other strata's classes do not count; an attribute stratum spans every
/// class and averages over all of them.
pub fn stratified_report(
    ds: &Dataset,
    ids: &[u32],
    predictions: &[usize],
    strata: &Strata,
) -> StratifiedMetrics {
    let k = ds.n_classes;
    let labels: Vec<usize> = ids.iter().map(|&id| ds.sample(id).y).collect();
    let cell = |members: &[usize], classes: &[usize]| {
        let p: Vec<usize> = members.iter().map(|&i| predictions[i]).collect();
        let l: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
        let per_class = per_class_precision(&p, &l, k);
        let correct = p.iter().zip(&l).filter(|(a, b)| a == b).count();
        Cell {
            accuracy: accuracy(&p, &l),
            precision: if classes.is_empty() {
                0.0
            } else {
                classes.iter().map(|&c| per_class[c]).sum::<f64>() / classes.len() as f64
            },
            n: members.len(),
            correct,
        }
    };
    let everyone: Vec<usize> = (0..labels.len()).collect();
    let all_classes: Vec<usize> = (0..k).collect();
    let overall = cell(&everyone, &all_classes);

    let mut class = BTreeMap::new();
    let mut attribute = BTreeMap::new();
    for s in Stratum::ALL {
        let classes: Vec<usize> = (0..k).filter(|&c| strata.class(c) == s).collect();
        let members: Vec<usize> = everyone.iter().copied().filter(|&i| strata.class(labels[i]) == s).collect();
        class.insert(s, (!classes.is_empty()).then(|| cell(&members, &classes)));

        let members: Vec<usize> = everyone
            .iter()
            .copied()
            .filter(|&i| strata.attribute(labels[i], ids[i]) == s)
            .collect();
        attribute.insert(s, (!members.is_empty()).then(|| cell(&members, &all_classes)));
    }
    StratifiedMetrics {
        overall,
        class,
        attribute,
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of every sample in `split`, after any post-hoc adjustment the checkpoint carries.
pub fn predict(ck: &Checkpoint, ds: &Dataset, split: &Split) -> Result<Vec<usize>> {
    split
        .sample_ids
        .par_iter()
        .map(|&id| {
            let f = ck.params.forward_f32(&ds.sample(id).x)?;
            Ok(argmax(&ck.decision_logits(&f.logits)))
        })
        .collect()
}

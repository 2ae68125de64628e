//! Confidence-ranked environment construction.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nn::{softmax, ModelParams};
use crate::rng::StageRng;
use crate::splits::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvTag {
    /// Identity copy of the split.
    Iid,
    /// Low-confidence samples fill `tail_mass` of every class.
    Reversed,
    /// Intermediate re-weighting between the two.
    Extra,
}

/// A per-class resampled multiset of the training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub tag: EnvTag,
    /// `per_class[k]` holds sample ids of class `k`, repetition allowed.
    pub per_class: Vec<Vec<u32>>,
    pub epoch_built: usize,
}

impl Environment {
    /// The environment whose multisets are exactly the split's classes.
    pub fn identity(ds: &Dataset, split: &Split, epoch: usize) -> Self {
        Self {
            tag: EnvTag::Iid,
            per_class: split_by_class(ds, split),
            epoch_built: epoch,
        }
    }

    /// Every slot, class by class.
    pub fn flatten(&self) -> Vec<u32> {
        self.per_class.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn split_by_class(ds: &Dataset, split: &Split) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new(); ds.n_classes];
    for &id in &split.sample_ids {
        out[ds.sample(id).y].push(id);
    }
    out
}

/// `ceil` that ignores floating error just above an integer (0.8 * 15 = 12.000000000000002).
pub fn robust_ceil(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Ground-truth probability `softmax(logits)[y]` of every split sample, in split order.
pub fn confidence_scores(params: &ModelParams, ds: &Dataset, split: &Split) -> Result<Vec<f64>> {
    split
        .sample_ids
        .par_iter()
        .map(|&id| {
            let s = ds.sample(id);
            let f = params.forward_f32(&s.x)?;
            Ok(softmax(&f.logits)[s.y])
        })
        .collect()
}

/// Resampling proportions: the lowest-confidence `tail_fraction` of a class fills `tail_mass` of its slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoRule {
    pub tail_fraction: f64,
    pub tail_mass: f64,
}

impl Default for ParetoRule {
    fn default() -> Self {
        Self {
            tail_fraction: 0.2,
            tail_mass: 0.8,
        }
    }
}

impl ParetoRule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tail_fraction && self.tail_fraction < self.tail_mass && self.tail_mass < 1.0) {
            return Err(Error::config(
                "tail_fraction",
                format!(
                    "need 0 < tail_fraction ({}) < tail_mass ({}) < 1",
                    self.tail_fraction, self.tail_mass
                ),
            ));
        }
        Ok(())
    }

    /// Size of the low-confidence pool and number of slots it fills for a class of `n`.
    pub fn sizes(&self, n: usize) -> (usize, usize) {
        (robust_ceil(self.tail_fraction * n as f64), robust_ceil(self.tail_mass * n as f64))
    }
}

/// One class's reweighted multiset: `tail_slots` draws with replacement from
/// the `pool` lowest-scored ids, the rest without replacement from the others.
fn resample_class(ranked: &[u32], rule: ParetoRule, rng: &mut StageRng) -> Vec<u32> {
    let n = ranked.len();
    let (pool, tail_slots) = rule.sizes(n);
    let (low, high) = ranked.split_at(pool);
    let mut out: Vec<u32> = (0..tail_slots).map(|_| low[rng.random_range(0..low.len())]).collect();
    let rest = crate::datagen::shuffled(high, rng);
    out.extend_from_slice(&rest[..n - tail_slots]);
    out
}

/// Builds `n_envs` environments (1 to 3). `scores` are aligned with `split.sample_ids`.
pub fn construct_environments(
    ds: &Dataset,
    split: &Split,
    scores: &[f64],
    n_envs: usize,
    rule: ParetoRule,
    epoch: usize,
    rng: &mut StageRng,
) -> Result<Vec<Environment>> {
    if scores.len() != split.sample_ids.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} split samples",
            scores.len(),
            split.sample_ids.len()
        )));
    }
    if !(1..=3).contains(&n_envs) {
        return Err(Error::config("n_envs", "must be 1, 2 or 3"));
    }
    rule.validate()?;

    let mut ranked: Vec<Vec<(f64, u32)>> = vec![Vec::new(); ds.n_classes];
    for (&id, &score) in split.sample_ids.iter().zip(scores) {
        ranked[ds.sample(id).y].push((score, id));
    }
    // ascending confidence, ties to the lowest id
    let ranked: Vec<Vec<u32>> = ranked
        .into_iter()
        .map(|mut v| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            v.into_iter().map(|(_, id)| id).collect()
        })
        .collect();

    let mut envs = vec![Environment::identity(ds, split, epoch)];
    let rules = [
        (EnvTag::Reversed, rule),
        (
            EnvTag::Extra,
            ParetoRule {
                tail_fraction: rule.tail_fraction,
                tail_mass: (rule.tail_fraction + rule.tail_mass) / 2.0,
            },
        ),
    ];
    for (tag, r) in rules.into_iter().take(n_envs - 1) {
        let per_class = ranked
            .iter()
            .enumerate()
            .map(|(class, ids)| {
                if ids.len() < 2 {
                    if !ids.is_empty() {
                        warn!("class {class} has {} sample(s); {tag:?} environment copies it unchanged", ids.len());
                    }
                    envs[0].per_class[class].clone()
                } else {
                    resample_class(ids, r, rng)
                }
            })
            .collect();
        envs.push(Environment {
            tag,
            per_class,
            epoch_built: epoch,
        });
    }
    Ok(envs)
}

/// Debug dump of the environments and the confidence cut used for each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDump {
    pub epoch: usize,
    /// Highest confidence inside each class's low-confidence pool.
    pub pool_threshold: Vec<Option<f64>>,
    /// 10/50/90 percent confidence quantiles per class.
    pub quantiles: Vec<[f64; 3]>,
    pub environments: Vec<Environment>,
}

impl EnvironmentDump {
    pub fn new(ds: &Dataset, split: &Split, scores: &[f64], rule: ParetoRule, envs: &[Environment]) -> Self {
        let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); ds.n_classes];
        for (&id, &s) in split.sample_ids.iter().zip(scores) {
            by_class[ds.sample(id).y].push(s);
        }
        by_class.iter_mut().for_each(|v| v.sort_by(f64::total_cmp));
        let quantile = |v: &[f64], q: f64| {
            if v.is_empty() {
                f64::NAN
            } else {
                v[((v.len() - 1) as f64 * q).round() as usize]
            }
        };
        Self {
            epoch: envs.first().map_or(0, |e| e.epoch_built),
            pool_threshold: by_class
                .iter()
                .map(|v| {
                    let (pool, _) = rule.sizes(v.len());
                    (v.len() >= 2 && pool > 0).then(|| v[pool - 1])
                })
                .collect(),
            quantiles: by_class
                .iter()
                .map(|v| [quantile(v, 0.1), quantile(v, 0.5), quantile(v, 0.9)])
                .collect(),
            environments: envs.to_vec(),
        }
    }
}

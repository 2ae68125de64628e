use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};

/// Training objective or re-balancing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain cross-entropy.
    Ce,
    /// Center loss on a single (i.i.d.) environment.
    Center,
    /// Invariant feature learning with two environments.
    Ifl2,
    /// Invariant feature learning with three environments.
    Ifl3,
    /// Balanced softmax.
    Blsoftmax,
    /// Cross-entropy training with post-hoc logit adjustment.
    Logitadj,
    Focal,
    /// Classifier re-training on class-balanced batches after cross-entropy.
    Crt,
    /// IRMv1 penalty over the constructed environments.
    Irm,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ce,
        Method::Center,
        Method::Ifl2,
        Method::Ifl3,
        Method::Blsoftmax,
        Method::Logitadj,
        Method::Focal,
        Method::Crt,
        Method::Irm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Center => "center",
            Method::Ifl2 => "ifl2",
            Method::Ifl3 => "ifl3",
            Method::Blsoftmax => "blsoftmax",
            Method::Logitadj => "logitadj",
            Method::Focal => "focal",
            Method::Crt => "crt",
            Method::Irm => "irm",
        }
    }

    /// Number of environments the method trains on.
    pub fn n_envs(self) -> usize {
        match self {
            Method::Ifl2 | Method::Irm => 2,
            Method::Ifl3 => 3,
            _ => 1,
        }
    }

    /// Whether the method adds the feature-center metric loss.
    pub fn uses_centers(self) -> bool {
        matches!(self, Method::Center | Method::Ifl2 | Method::Ifl3)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LrSchedule {
    Cosine,
    Multistep { milestones: Vec<usize>, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub method: Method,
    /// Hidden layer widths; the last one is the feature dimension.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Logit adjustment temperature.
    pub tau: f64,
    /// Focal loss exponent.
    pub gamma: f64,
    /// IRM penalty weight.
    pub irm_lambda: f64,
    /// Classifier re-training epochs for `crt`.
    pub crt_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            method: Method::Ce,
            hidden: vec![64],
            activation: Activation::Relu,
            tau: 1.0,
            gamma: 2.0,
            irm_lambda: 1.0,
            crt_epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::config("lr0", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be nonnegative"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        if !(self.gamma >= 0.0) || !(self.irm_lambda >= 0.0) || !self.tau.is_finite() {
            return Err(Error::config("gamma", "method knobs must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match &self.lr_schedule {
            LrSchedule::Cosine => super::cosine_lr(epoch, self.epochs, self.lr0),
            LrSchedule::Multistep { milestones, gamma } => super::multistep_lr(epoch, milestones, *gamma, self.lr0),
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassShape {
    Exponential,
    Pareto,
}

/// How attributes are attached to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Exactly one attribute per sample.
    #[default]
    Single,
    /// A 0/1 vector over all attributes.
    Multi,
}

impl Regime {
    pub fn code(self) -> u8 {
        match self {
            Regime::Single => 0,
            Regime::Multi => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Regime::Single),
            1 => Some(Regime::Multi),
            _ => None,
        }
    }
}

/// Boosts one attribute inside one class, planting a class/attribute shortcut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spurious {
    pub class: usize,
    pub attribute: usize,
    pub strength: f64,
}

fn default_mean_attrs() -> f64 {
    2.0
}

fn default_profile_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_classes: usize,
    pub n_attributes: usize,
    pub feat_dim: usize,
    pub class_imbalance_ratio: f64,
    pub class_shape: ClassShape,
    /// Explicit K x A conditional; `None` selects the rotated long-tailed default.
    #[serde(default)]
    pub attr_profile: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub spurious: Option<Spurious>,
    pub noise_sigma: f64,
    pub samples_head: usize,
    pub seed: u64,
    #[serde(default)]
    pub regime: Regime,
    /// Expected attribute count per sample in the multi-label regime.
    #[serde(default = "default_mean_attrs")]
    pub mean_attrs: f64,
    /// Offset (in attribute ranks) between the default profiles of consecutive classes.
    #[serde(default = "default_profile_stride")]
    pub profile_stride: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_classes: 20,
            n_attributes: 12,
            feat_dim: 64,
            class_imbalance_ratio: 1.0,
            class_shape: ClassShape::Exponential,
            attr_profile: None,
            spurious: None,
            noise_sigma: 0.5,
            samples_head: 1000,
            seed: 0,
            regime: Regime::Single,
            mean_attrs: default_mean_attrs(),
            profile_stride: default_profile_stride(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::config("n_classes", "must be positive"));
        }
        if self.n_attributes == 0 {
            return Err(Error::config("n_attributes", "must be positive"));
        }
        if self.feat_dim < self.n_classes + self.n_attributes {
            return Err(Error::config(
                "feat_dim",
                format!(
                    "{} < n_classes + n_attributes = {}; directions cannot be independent",
                    self.feat_dim,
                    self.n_classes + self.n_attributes
                ),
            ));
        }
        if self.n_classes > u16::MAX as usize
            || self.n_attributes > u16::MAX as usize
            || self.feat_dim > u16::MAX as usize
        {
            return Err(Error::config("n_classes", "dimensions must fit in u16"));
        }
        if !(self.class_imbalance_ratio >= 1.0) || !self.class_imbalance_ratio.is_finite() {
            return Err(Error::config("class_imbalance_ratio", "must be a finite real >= 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma", "must be finite and nonnegative"));
        }
        if self.samples_head == 0 {
            return Err(Error::config("samples_head", "must be positive"));
        }
        if (self.samples_head as f64) < self.class_imbalance_ratio {
            return Err(Error::config(
                "samples_head",
                "must be at least class_imbalance_ratio so the tail class is nonempty",
            ));
        }
        if self.regime == Regime::Multi && !(self.mean_attrs > 0.0) {
            return Err(Error::config("mean_attrs", "must be positive"));
        }
        if let Some(rows) = &self.attr_profile {
            if rows.len() != self.n_classes {
                return Err(Error::config(
                    "attr_profile",
                    format!("expected {} rows, found {}", self.n_classes, rows.len()),
                ));
            }
            for (k, row) in rows.iter().enumerate() {
                if row.len() != self.n_attributes {
                    return Err(Error::config(
                        "attr_profile",
                        format!("row {k} has {} entries, expected {}", row.len(), self.n_attributes),
                    ));
                }
                if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(Error::config("attr_profile", format!("row {k} has a negative entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::config("attr_profile", format!("row {k} sums to {sum}")));
                }
            }
        }
        if let Some(sp) = &self.spurious {
            if sp.class >= self.n_classes {
                return Err(Error::config("spurious.class", "out of range"));
            }
            if sp.attribute >= self.n_attributes {
                return Err(Error::config("spurious.attribute", "out of range"));
            }
            if !(sp.strength >= 0.0) || !sp.strength.is_finite() {
                return Err(Error::config("spurious.strength", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

//! Invariant feature learning: warm-up, environment construction, the
//! cross-environment center loss and the periodic-refresh training loop.

mod centers;
mod env;
mod train;

use serde::{Deserialize, Serialize};

pub use centers::{ifl_loss_grad, Centers, MetricVariant, L2_EPS};
pub use env::{
    confidence_scores, construct_environments, robust_ceil, EnvTag, Environment, EnvironmentDump, ParetoRule,
};
pub use train::{crt_stage2, train, EpochLog, TrainOutcome};

use crate::error::{Error, Result};
use crate::nn::Method;

/// Step schedule of the metric-loss weight: `(fraction of total epochs, alpha)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule(pub Vec<(f64, f64)>);

impl AlphaSchedule {
    pub fn constant(alpha: f64) -> Self {
        Self(vec![(0.0, alpha)])
    }

    /// Weight in force at `epoch`: the last step whose start is not after it.
    pub fn at(&self, epoch: usize, total_epochs: usize) -> f64 {
        let mut alpha = 0.0;
        for &(frac, a) in &self.0 {
            if robust_ceil(frac * total_epochs as f64) <= epoch {
                alpha = a;
            }
        }
        alpha
    }

    /// Parses `0:0,0.6:0.001,0.8:0.005`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for part in text.split(',').filter(|p| !p.trim().is_empty()) {
            let (f, a) = part
                .split_once(':')
                .ok_or_else(|| Error::config("alpha", format!("`{part}` is not fraction:alpha")))?;
            let f: f64 = f.trim().parse().map_err(|_| Error::config("alpha", format!("bad fraction `{f}`")))?;
            let a: f64 = a.trim().parse().map_err(|_| Error::config("alpha", format!("bad alpha `{a}`")))?;
            steps.push((f, a));
        }
        let s = Self(steps);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|(f, a)| !(0.0..=1.0).contains(f) || !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::config("alpha", "fractions must lie in [0, 1] and alphas be >= 0"));
        }
        if self.0.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::config("alpha", "steps must be in increasing epoch order"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|(_, a)| *a == 0.0)
    }
}

/// Environment and metric-loss knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Environment count; `None` takes the method's own (1 for `center`, 2 for `ifl2`, ...).
    pub n_envs: Option<usize>,
    pub rule: ParetoRule,
    pub warmup_epochs: usize,
    pub refresh_period_epochs: usize,
    pub alpha_schedule: AlphaSchedule,
    /// Moving-average rate of the class centers.
    pub center_lr: f64,
    pub metric: MetricVariant,
}

/// Warm-up and refresh as fractions of the epoch budget.
pub const WARMUP_FRACTION: f64 = 0.6;
pub const REFRESH_FRACTION: f64 = 0.2;
/// Metric-loss weights after the first and second environment builds.
pub const DEFAULT_ALPHAS: (f64, f64) = (0.001, 0.005);

impl EnvConfig {
    /// Defaults scaled to a budget of `total_epochs`, with metric weights `alpha1` then `alpha2`
    /// switched on together with the first two environment builds.
    pub fn scaled(total_epochs: usize, alpha1: f64, alpha2: f64) -> Self {
        let warmup = (WARMUP_FRACTION * total_epochs as f64).round() as usize;
        let refresh = ((REFRESH_FRACTION * total_epochs as f64).round() as usize).max(1);
        Self::with_timing(total_epochs, warmup, refresh, alpha1, alpha2)
    }

    /// Explicit warm-up and refresh lengths; the weights step up at the first two builds.
    pub fn with_timing(total_epochs: usize, warmup: usize, refresh: usize, alpha1: f64, alpha2: f64) -> Self {
        let frac = |e: usize| (e as f64 / total_epochs.max(1) as f64).min(1.0);
        Self {
            n_envs: None,
            rule: ParetoRule::default(),
            warmup_epochs: warmup,
            refresh_period_epochs: refresh,
            alpha_schedule: AlphaSchedule(vec![(0.0, 0.0), (frac(warmup), alpha1), (frac(warmup + refresh), alpha2)]),
            center_lr: 0.5,
            metric: MetricVariant::Squared,
        }
    }

    pub fn envs_for(&self, method: Method) -> usize {
        self.n_envs.unwrap_or(method.n_envs())
    }

    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        self.alpha_schedule.validate()?;
        if let Some(n) = self.n_envs {
            if !(1..=3).contains(&n) {
                return Err(Error::config("n_envs", "must be 1, 2 or 3"));
            }
        }
        if self.refresh_period_epochs == 0 {
            return Err(Error::config("refresh_period_epochs", "must be positive"));
        }
        if !(self.center_lr > 0.0 && self.center_lr <= 1.0) {
            return Err(Error::config("center_lr", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::scaled(crate::nn::TrainConfig::default().epochs, DEFAULT_ALPHAS.0, DEFAULT_ALPHAS.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_steps() {
        let s = AlphaSchedule::parse("0:0,0.5:0.001,0.75:0.005").unwrap();
        assert_eq!(s.at(0, 40), 0.0);
        assert_eq!(s.at(19, 40), 0.0);
        assert_eq!(s.at(20, 40), 0.001);
        assert_eq!(s.at(30, 40), 0.005);
        assert!(AlphaSchedule::parse("0.5:0.1,0.2:0.3").is_err());
        assert!(AlphaSchedule::parse("0:-1").is_err());
        assert!(AlphaSchedule::parse("nonsense").is_err());
    }

    #[test]
    fn scaled_defaults_follow_budget() {
        let c = EnvConfig::scaled(50, 0.001, 0.005);
        assert_eq!(c.warmup_epochs, 30);
        assert_eq!(c.refresh_period_epochs, 10);
        assert_eq!(c.alpha_schedule.at(29, 50), 0.0);
        assert_eq!(c.alpha_schedule.at(30, 50), 0.001);
        assert_eq!(c.alpha_schedule.at(40, 50), 0.005);
        assert_eq!(c.envs_for(Method::Ifl3), 3);
    }
}

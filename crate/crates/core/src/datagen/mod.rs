//! Synthetic data whose samples are a class component plus attribute components.
//!
//! Every sample is `x = mu_y + sum_{a in attrs} nu_a + sigma * noise` where the
//! class directions `mu` and attribute directions `nu` are jointly orthonormal.
//! Class frequencies follow a long-tailed prior and attribute frequencies inside
//! each class follow a long-tailed conditional, so both kinds of imbalance are
//! controlled independently.

mod config;
pub mod io;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

pub use config::{ClassShape, GenConfig, Regime, Spurious};

use crate::error::{Error, Result};
use crate::rng::{stage_rng, StageRng};

/// Masses of the top, middle and bottom thirds of the default attribute profile.
pub const GROUP_MASSES: [f64; 3] = [0.7, 0.2, 0.1];

/// Ratio between consecutive attribute weights inside one third.
pub const WITHIN_GROUP_DECAY: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Attributes {
    Single(u16),
    Multi(Vec<bool>),
}

impl Attributes {
    /// Attribute indices carried by the sample.
    pub fn indices(&self) -> Vec<usize> {
        match self {
            Attributes::Single(a) => vec![*a as usize],
            Attributes::Multi(bits) => bits
                .iter()
                .enumerate()
                .filter_map(|(a, &on)| on.then_some(a))
                .collect(),
        }
    }

    /// Dense 0/1 count vector of length `n_attributes`.
    pub fn counts(&self, n_attributes: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_attributes];
        for a in self.indices() {
            out[a] = 1.0;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u32,
    pub x: Vec<f32>,
    pub y: usize,
    pub attrs: Attributes,
}

/// Generator provenance kept alongside in-memory datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub config: GenConfig,
    /// K x D class directions.
    pub class_dirs: Vec<Vec<f64>>,
    /// A x D attribute directions.
    pub attr_dirs: Vec<Vec<f64>>,
    pub conditional: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub n_attributes: usize,
    pub feat_dim: usize,
    pub regime: Regime,
    /// Present when the dataset was generated in-process rather than loaded.
    pub generation: Option<Generation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: u32) -> &Sample {
        &self.samples[id as usize]
    }

    /// Sample ids of every class, in id order.
    pub fn class_members(&self) -> Vec<Vec<u32>> {
        let mut members = vec![Vec::new(); self.n_classes];
        for s in &self.samples {
            members[s.y].push(s.id);
        }
        members
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.y] += 1;
        }
        counts
    }

    /// Checks the structural invariants a loaded or generated dataset must hold.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.id as usize != i {
                return Err(Error::format("dataset", format!("sample {i} has id {}", s.id)));
            }
            if s.y >= self.n_classes {
                return Err(Error::format("dataset", format!("sample {i} has class {}", s.y)));
            }
            if s.x.len() != self.feat_dim || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::format("dataset", format!("sample {i} has bad features")));
            }
            if s.attrs.indices().iter().any(|&a| a >= self.n_attributes) {
                return Err(Error::format("dataset", format!("sample {i} has bad attribute")));
            }
        }
        Ok(())
    }
}

/// Per-class sample counts interpolating from `samples_head` down to
/// `round(samples_head / ratio)`.
pub fn build_class_prior(
    n_classes: usize,
    ratio: f64,
    shape: ClassShape,
    samples_head: usize,
) -> Result<Vec<usize>> {
    if n_classes == 0 {
        return Err(Error::config("n_classes", "must be positive"));
    }
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::config("class_imbalance_ratio", "must be a finite real >= 1"));
    }
    let head = samples_head as f64;
    if (head / ratio).round() < 1.0 {
        return Err(Error::config(
            "class_imbalance_ratio",
            format!("ratio {ratio} leaves the tail class of a {samples_head}-sample head empty"),
        ));
    }
    if n_classes == 1 {
        return Ok(vec![samples_head]);
    }
    let last = (n_classes - 1) as f64;
    let counts = (0..n_classes)
        .map(|i| {
            let scale = match shape {
                ClassShape::Exponential => ratio.powf(-(i as f64) / last),
                // (i+1)^-b with b chosen so the last class lands on head / ratio.
                ClassShape::Pareto => {
                    let b = ratio.ln() / (n_classes as f64).ln();
                    ((i + 1) as f64).powf(-b)
                }
            };
            (head * scale).round() as usize
        })
        .collect();
    Ok(counts)
}

/// The rotated long-tailed base profile.
///
/// Attribute ranks are split into thirds holding 70/20/10 percent of the mass,
/// with geometric decay inside each third. Class `k` assigns rank `r` to
/// attribute `(r + k * stride) mod A`, so each class has its own head attributes.
pub fn default_attribute_profile(n_classes: usize, n_attributes: usize, stride: usize) -> Vec<Vec<f64>> {
    let by_rank = ranked_profile(n_attributes);
    (0..n_classes)
        .map(|k| {
            let mut row = vec![0.0; n_attributes];
            for (r, p) in by_rank.iter().enumerate() {
                row[(r + k * stride) % n_attributes] = *p;
            }
            row
        })
        .collect()
}

/// Mass by attribute rank before rotation.
pub fn ranked_profile(n_attributes: usize) -> Vec<f64> {
    let sizes = third_sizes(n_attributes);
    let live: f64 = sizes
        .iter()
        .zip(GROUP_MASSES)
        .filter(|(n, _)| **n > 0)
        .map(|(_, m)| m)
        .sum();
    let mut out = Vec::with_capacity(n_attributes);
    for (size, mass) in sizes.iter().zip(GROUP_MASSES) {
        let weights: Vec<f64> = (0..*size).map(|j| WITHIN_GROUP_DECAY.powi(j as i32)).collect();
        let total: f64 = weights.iter().sum();
        out.extend(weights.iter().map(|w| mass / live * w / total));
    }
    out
}

/// Sizes of the top/middle/bottom thirds of `n` ranked items, as equal as possible,
/// extra items going to the upper thirds.
pub fn third_sizes(n: usize) -> [usize; 3] {
    let base = n / 3;
    let extra = n % 3;
    [base + usize::from(extra > 0), base + usize::from(extra > 1), base]
}

/// K x A row-stochastic matrix of `p(attribute | class)`.
pub fn build_attribute_conditional(cfg: &GenConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rows = match &cfg.attr_profile {
        Some(rows) => rows.clone(),
        None => default_attribute_profile(cfg.n_classes, cfg.n_attributes, cfg.profile_stride),
    };
    if let Some(sp) = cfg.spurious {
        let row = &mut rows[sp.class];
        row[sp.attribute] *= 1.0 + sp.strength;
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(rows)
}

/// Draws `rows x dim` Gaussian vectors and orthonormalizes them with Gram-Schmidt.
pub fn orthonormal_directions(rows: usize, dim: usize, rng: &mut StageRng) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            if dim <= basis.len() {
                return Err(Error::config("feat_dim", "too small for independent directions"));
            }
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    Ok(basis)
}

/// `mu_k + sum nu_a + sigma * N(0, I)`.
pub fn synth_sample(
    class_dir: &[f64],
    attr_dirs: &[Vec<f64>],
    attrs: &Attributes,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Vec<f32> {
    let mut x = class_dir.to_vec();
    for a in attrs.indices() {
        x.iter_mut().zip(&attr_dirs[a]).for_each(|(v, d)| *v += d);
    }
    if noise_sigma > 0.0 {
        for v in x.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += noise_sigma * n;
        }
    }
    x.into_iter().map(|v| v as f32).collect()
}

fn draw_attributes(cfg: &GenConfig, row: &[f64], picker: &WeightedIndex<f64>, rng: &mut StageRng) -> Attributes {
    match cfg.regime {
        Regime::Single => Attributes::Single(picker.sample(rng) as u16),
        Regime::Multi => Attributes::Multi(
            row.iter()
                .map(|p| rng.random::<f64>() < (cfg.mean_attrs * p).min(1.0))
                .collect(),
        ),
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let counts = build_class_prior(
        cfg.n_classes,
        cfg.class_imbalance_ratio,
        cfg.class_shape,
        cfg.samples_head,
    )?;
    let conditional = build_attribute_conditional(cfg)?;
    let mut rng = stage_rng(cfg.seed, "datagen");
    let mut dirs = orthonormal_directions(cfg.n_classes + cfg.n_attributes, cfg.feat_dim, &mut rng)?;
    let attr_dirs = dirs.split_off(cfg.n_classes);
    let class_dirs = dirs;

    let total: usize = counts.iter().sum();
    let mut samples = Vec::with_capacity(total);
    for (k, &n) in counts.iter().enumerate() {
        let picker = WeightedIndex::new(&conditional[k])
            .map_err(|e| Error::config("attr_profile", format!("row {k}: {e}")))?;
        for _ in 0..n {
            let attrs = draw_attributes(cfg, &conditional[k], &picker, &mut rng);
            let x = synth_sample(&class_dirs[k], &attr_dirs, &attrs, cfg.noise_sigma, &mut rng);
            samples.push(Sample {
                id: samples.len() as u32,
                x,
                y: k,
                attrs,
            });
        }
    }
    Ok(Dataset {
        samples,
        n_classes: cfg.n_classes,
        n_attributes: cfg.n_attributes,
        feat_dim: cfg.feat_dim,
        regime: cfg.regime,
        generation: Some(Generation {
            config: cfg.clone(),
            class_dirs,
            attr_dirs,
            conditional,
        }),
    })
}

/// Shuffled copy of `ids`; used wherever a uniform without-replacement draw is needed.
pub(crate) fn shuffled(ids: &[u32], rng: &mut StageRng) -> Vec<u32> {
    let mut out = ids.to_vec();
    out.shuffle(rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> GenConfig {
        GenConfig {
            n_classes: 2,
            n_attributes: 4,
            feat_dim: 8,
            class_imbalance_ratio: 4.0,
            samples_head: 100,
            noise_sigma: 0.1,
            seed: 3,
            ..GenConfig::default()
        }
    }

    #[test]
    fn prior_examples() {
        assert_eq!(build_class_prior(3, 1.0, ClassShape::Exponential, 100).unwrap(), vec![100, 100, 100]);
        assert_eq!(build_class_prior(2, 4.0, ClassShape::Exponential, 100).unwrap(), vec![100, 25]);
        assert_eq!(
            build_class_prior(5, 16.0, ClassShape::Exponential, 160).unwrap(),
            vec![160, 80, 40, 20, 10]
        );
    }

    #[test]
    fn pareto_prior_hits_both_endpoints() {
        let c = build_class_prior(10, 40.0, ClassShape::Pareto, 400).unwrap();
        assert_eq!(c[0], 400);
        assert_eq!(c[9], 10);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn prior_rejects_empty_tail() {
        assert!(build_class_prior(3, 500.0, ClassShape::Exponential, 100).is_err());
    }

    #[test]
    fn uniform_profile_without_spurious_term() {
        let cfg = GenConfig {
            attr_profile: Some(vec![vec![0.25; 4]; 2]),
            ..small_cfg()
        };
        let cond = build_attribute_conditional(&cfg).unwrap();
        assert!(cond.iter().flatten().all(|p| *p == 0.25));
    }

    #[test]
    fn default_profile_thirds_hold_70_20_10() {
        let ranked = ranked_profile(6);
        assert!((ranked[0] + ranked[1] - 0.7).abs() < 1e-12);
        assert!((ranked[2] + ranked[3] - 0.2).abs() < 1e-12);
        assert!((ranked[4] + ranked[5] - 0.1).abs() < 1e-12);
        assert!(ranked.windows(2).all(|w| w[0] >= w[1]));
        for row in default_attribute_profile(5, 6, 1) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn spurious_strength_saturates_row() {
        let cfg = GenConfig {
            spurious: Some(Spurious {
                class: 0,
                attribute: 0,
                strength: 1e12,
            }),
            ..small_cfg()
        };
        let cond = build_attribute_conditional(&cfg).unwrap();
        assert!(cond[0][0] > 1.0 - 1e-9);
        assert!((cond[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noiseless_sample_is_sum_of_directions() {
        let mut rng = stage_rng(1, "dirs");
        let dirs = orthonormal_directions(5, 8, &mut rng).unwrap();
        let x = synth_sample(&dirs[0], &dirs[2..], &Attributes::Single(1), 0.0, &mut rng);
        for (j, v) in x.iter().enumerate() {
            assert!((*v as f64 - (dirs[0][j] + dirs[3][j])).abs() < 1e-6);
        }
        let proj: f64 = x.iter().zip(&dirs[0]).map(|(a, b)| *a as f64 * b).sum();
        assert!((proj - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noisy_sample_mean_converges() {
        let mut rng = stage_rng(2, "dirs");
        let dirs = orthonormal_directions(4, 6, &mut rng).unwrap();
        let mut draw_rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut mean = [0.0f64; 6];
        for _ in 0..n {
            let x = synth_sample(&dirs[1], &dirs[2..], &Attributes::Single(0), 0.1, &mut draw_rng);
            mean.iter_mut().zip(&x).for_each(|(m, v)| *m += *v as f64 / n as f64);
        }
        for j in 0..6 {
            assert!((mean[j] - (dirs[1][j] + dirs[2][j])).abs() < 0.01);
        }
    }

    #[test]
    fn generate_is_deterministic_with_exact_counts() {
        let cfg = small_cfg();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![100, 25]);
        a.validate().unwrap();
    }

    #[test]
    fn rejects_narrow_feature_space() {
        let cfg = GenConfig {
            feat_dim: 5,
            ..small_cfg()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config { field, .. }) if field == "feat_dim"));
    }

    #[test]
    fn directions_are_orthonormal() {
        let mut rng = stage_rng(4, "dirs");
        let dirs = orthonormal_directions(32, 64, &mut rng).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let dot: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }
}

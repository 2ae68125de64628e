//! Benchmark splits and stratification for the three evaluation protocols.
//!
//! | protocol | train    | test     |
//! |----------|----------|----------|
//! | CLT      | TrainGLT | TestCBL  |
//! | ALT      | TrainCBL | TestGBL  |
//! | GLT      | TrainGLT | TestGBL  |
//!
//! Every class is first partitioned into a train pool and a test pool, so any
//! train split is disjoint from any test split.

pub mod greedy;
pub mod kmeans;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use greedy::{greedy_select, normalized_std};
pub use kmeans::{kmeans, KMeans};

use crate::datagen::{self, build_class_prior, ClassShape, Dataset, Regime};
use crate::error::{Error, Result};
use crate::rng::{stage_rng, stage_seed, StageRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Clt,
    Alt,
    Glt,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Clt, Protocol::Alt, Protocol::Glt];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Clt => "clt",
            Protocol::Alt => "alt",
            Protocol::Glt => "glt",
        }
    }

    pub fn train_split(self) -> SplitName {
        match self {
            Protocol::Clt | Protocol::Glt => SplitName::TrainGLT,
            Protocol::Alt => SplitName::TrainCBL,
        }
    }

    pub fn test_split(self) -> SplitName {
        match self {
            Protocol::Clt => SplitName::TestCBL,
            Protocol::Alt | Protocol::Glt => SplitName::TestGBL,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().to_uppercase())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("protocol", format!("unknown protocol `{s}`")))
    }
}

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitName {
    #[serde(rename = "Train-GLT")]
    TrainGLT,
    #[serde(rename = "Train-CBL")]
    TrainCBL,
    #[serde(rename = "Test-CBL")]
    TestCBL,
    #[serde(rename = "Test-GBL")]
    TestGBL,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::TrainGLT => "Train-GLT",
            SplitName::TrainCBL => "Train-CBL",
            SplitName::TestCBL => "Test-CBL",
            SplitName::TestGBL => "Test-GBL",
        }
    }

    pub fn is_train(self) -> bool {
        matches!(self, SplitName::TrainGLT | SplitName::TrainCBL)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub name: SplitName,
    pub protocol: Protocol,
    pub sample_ids: Vec<u32>,
}

impl Split {
    /// Per-class sample counts of this split.
    pub fn class_counts(&self, ds: &Dataset) -> Vec<usize> {
        let mut counts = vec![0; ds.n_classes];
        for &id in &self.sample_ids {
            counts[ds.sample(id).y] += 1;
        }
        counts
    }

    pub fn with_protocol(&self, protocol: Protocol) -> Split {
        Split {
            protocol,
            ..self.clone()
        }
    }

    pub fn check_ids(&self, ds: &Dataset) -> Result<()> {
        match self.sample_ids.iter().find(|&&id| id as usize >= ds.len()) {
            Some(id) => Err(Error::format("split", format!("sample id {id} not in dataset"))),
            None => Ok(()),
        }
    }
}

/// Sample ids available to one split family, per class.
pub type ClassPools = Vec<Vec<u32>>;

/// Splits each class into a train pool and a test pool of `test_per_class` samples.
pub fn partition_pools(ds: &Dataset, test_per_class: usize, rng: &mut StageRng) -> Result<(ClassPools, ClassPools)> {
    let mut train = Vec::with_capacity(ds.n_classes);
    let mut test = Vec::with_capacity(ds.n_classes);
    for (class, ids) in ds.class_members().into_iter().enumerate() {
        if ids.len() < test_per_class {
            return Err(Error::InsufficientSamples {
                class,
                requested: test_per_class,
                available: ids.len(),
            });
        }
        let mut ids = datagen::shuffled(&ids, rng);
        let rest = ids.split_off(test_per_class);
        ids.sort_unstable();
        let mut rest = rest;
        rest.sort_unstable();
        test.push(ids);
        train.push(rest);
    }
    Ok((train, test))
}

/// Uniform without-replacement draw of `counts[k]` ids from every class pool.
pub fn sample_per_class(
    pools: &ClassPools,
    counts: &[usize],
    name: SplitName,
    protocol: Protocol,
    rng: &mut StageRng,
) -> Result<Split> {
    if counts.len() != pools.len() {
        return Err(Error::Shape(format!("{} counts for {} classes", counts.len(), pools.len())));
    }
    let mut ids = Vec::new();
    for (class, (pool, &n)) in pools.iter().zip(counts).enumerate() {
        if pool.len() < n {
            return Err(Error::InsufficientSamples {
                class,
                requested: n,
                available: pool.len(),
            });
        }
        ids.extend_from_slice(&datagen::shuffled(pool, rng)[..n]);
    }
    ids.sort_unstable();
    Ok(Split {
        name,
        protocol,
        sample_ids: ids,
    })
}

pub fn make_train_glt(pools: &ClassPools, prior_counts: &[usize], rng: &mut StageRng) -> Result<Split> {
    sample_per_class(pools, prior_counts, SplitName::TrainGLT, Protocol::Clt, rng)
}

pub fn make_train_cbl(pools: &ClassPools, per_class_n: usize, rng: &mut StageRng) -> Result<Split> {
    sample_per_class(pools, &vec![per_class_n; pools.len()], SplitName::TrainCBL, Protocol::Alt, rng)
}

pub fn make_test_cbl(pools: &ClassPools, per_class_n: usize, rng: &mut StageRng) -> Result<Split> {
    sample_per_class(pools, &vec![per_class_n; pools.len()], SplitName::TestCBL, Protocol::Clt, rng)
}

/// Per-class k-means pretext attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// `centroids[class][cluster]` is a D-vector.
    pub centroids: Vec<Vec<Vec<f64>>>,
    /// Cluster of every sample, indexed by sample id.
    pub labels: Vec<usize>,
    /// Classes whose k-means hit the iteration cap.
    pub unconverged: Vec<usize>,
}

pub fn fit_clusters(ds: &Dataset, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterModel> {
    let members = ds.class_members();
    let fits: Vec<Result<KMeans>> = members
        .par_iter()
        .enumerate()
        .map(|(class, ids)| {
            let points: Vec<Vec<f64>> = ids
                .iter()
                .map(|&id| ds.sample(id).x.iter().map(|v| *v as f64).collect())
                .collect();
            if points.len() < k {
                return Err(Error::InsufficientSamples {
                    class,
                    requested: k,
                    available: points.len(),
                });
            }
            kmeans(&points, k, stage_seed(seed, &format!("kmeans/{class}")), max_iters, tol)
        })
        .collect();
    let mut labels = vec![0; ds.len()];
    let mut centroids = Vec::with_capacity(ds.n_classes);
    let mut unconverged = Vec::new();
    for (class, (fit, ids)) in fits.into_iter().zip(&members).enumerate() {
        let fit = fit?;
        if !fit.converged {
            warn!("k-means for class {class} stopped after {} iterations", fit.iterations);
            unconverged.push(class);
        }
        for (&id, &l) in ids.iter().zip(&fit.labels) {
            labels[id as usize] = l;
        }
        centroids.push(fit.centroids);
    }
    Ok(ClusterModel {
        k,
        centroids,
        labels,
        unconverged,
    })
}

/// A grid-balanced test split and the cells that limited its quota.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSplit {
    pub split: Split,
    /// Samples taken from every (class, cluster) cell.
    pub quota: usize,
    /// `(class, cluster, available)` for every cell smaller than the requested quota.
    pub clipped: Vec<(usize, usize, usize)>,
}

/// Exactly `q = min(per_cell, smallest cell)` samples from every (class, cluster) cell.
pub fn make_test_gbl_grid(
    ds: &Dataset,
    pools: &ClassPools,
    clusters: &ClusterModel,
    per_cell: usize,
    rng: &mut StageRng,
) -> Result<GridSplit> {
    let mut cells: Vec<Vec<Vec<u32>>> = vec![vec![Vec::new(); clusters.k]; ds.n_classes];
    for (class, pool) in pools.iter().enumerate() {
        for &id in pool {
            cells[class][clusters.labels[id as usize]].push(id);
        }
    }
    let mut clipped = Vec::new();
    let mut quota = per_cell;
    for (class, row) in cells.iter().enumerate() {
        for (cluster, cell) in row.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::EmptyCell { class, cluster });
            }
            if cell.len() < per_cell {
                clipped.push((class, cluster, cell.len()));
                quota = quota.min(cell.len());
            }
        }
    }
    if !clipped.is_empty() {
        warn!("Test-GBL quota clipped from {per_cell} to {quota} by cells {clipped:?}");
    }
    let mut ids = Vec::with_capacity(ds.n_classes * clusters.k * quota);
    for row in &cells {
        for cell in row {
            ids.extend_from_slice(&datagen::shuffled(cell, rng)[..quota]);
        }
    }
    ids.sort_unstable();
    Ok(GridSplit {
        split: Split {
            name: SplitName::TestGBL,
            protocol: Protocol::Glt,
            sample_ids: ids,
        },
        quota,
        clipped,
    })
}

/// Greedy attribute-balanced test split for multi-label datasets.
pub fn make_test_gbl_greedy(ds: &Dataset, pools: &ClassPools, per_class_n: usize) -> Result<Split> {
    if ds.regime != Regime::Multi {
        return Err(Error::config("regime", "greedy Test-GBL needs multi-label attributes"));
    }
    let picks: Vec<Result<Vec<u32>>> = pools
        .par_iter()
        .enumerate()
        .map(|(class, pool)| {
            if pool.len() < per_class_n {
                return Err(Error::InsufficientSamples {
                    class,
                    requested: per_class_n,
                    available: pool.len(),
                });
            }
            let cands: Vec<(u32, Vec<f64>)> = pool
                .iter()
                .map(|&id| (id, ds.sample(id).attrs.counts(ds.n_attributes)))
                .collect();
            Ok(greedy_select(&cands, per_class_n))
        })
        .collect();
    let mut ids = Vec::new();
    for p in picks {
        ids.extend(p?);
    }
    ids.sort_unstable();
    Ok(Split {
        name: SplitName::TestGBL,
        protocol: Protocol::Glt,
        sample_ids: ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Many,
    Medium,
    Few,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Many, Stratum::Medium, Stratum::Few];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Many => "many",
            Stratum::Medium => "medium",
            Stratum::Few => "few",
        }
    }

    /// Capitalized form used in table headers.
    pub fn label(self) -> &'static str {
        match self {
            Stratum::Many => "Many",
            Stratum::Medium => "Medium",
            Stratum::Few => "Few",
        }
    }
}

/// Class-frequency thresholds: `> many_above` is Many, `< few_below` is Few.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataThresholds {
    pub many_above: usize,
    pub few_below: usize,
}

impl Default for StrataThresholds {
    fn default() -> Self {
        Self {
            many_above: 100,
            few_below: 20,
        }
    }
}

impl StrataThresholds {
    pub fn classify(&self, count: usize) -> Stratum {
        if count > self.many_above {
            Stratum::Many
        } else if count < self.few_below {
            Stratum::Few
        } else {
            Stratum::Medium
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub class_stratum: BTreeMap<usize, Stratum>,
    /// `attr_stratum[class][cluster]`.
    pub attr_stratum: BTreeMap<usize, BTreeMap<usize, Stratum>>,
    /// Cluster of every sample, indexed by sample id, so strata files are self-contained.
    pub cluster_of: Vec<usize>,
    pub thresholds: StrataThresholds,
}

impl Strata {
    pub fn class(&self, class: usize) -> Stratum {
        self.class_stratum[&class]
    }

    pub fn attribute(&self, class: usize, id: u32) -> Stratum {
        self.attr_stratum[&class][&self.cluster_of[id as usize]]
    }
}

/// Class strata by training frequency; attribute strata by ranking each class's
/// clusters by frequency in `split` (ties by whole-class frequency, then index)
/// and cutting the ranking into thirds.
pub fn stratify(ds: &Dataset, split: &Split, clusters: &ClusterModel, thresholds: StrataThresholds) -> Strata {
    let counts = split.class_counts(ds);
    let class_stratum = counts
        .iter()
        .enumerate()
        .map(|(k, &n)| (k, thresholds.classify(n)))
        .collect();

    let mut in_split = vec![vec![0usize; clusters.k]; ds.n_classes];
    for &id in &split.sample_ids {
        in_split[ds.sample(id).y][clusters.labels[id as usize]] += 1;
    }
    let mut overall = vec![vec![0usize; clusters.k]; ds.n_classes];
    for s in &ds.samples {
        overall[s.y][clusters.labels[s.id as usize]] += 1;
    }
    let sizes = datagen::third_sizes(clusters.k);
    let attr_stratum = (0..ds.n_classes)
        .map(|k| {
            let mut ranked: Vec<usize> = (0..clusters.k).collect();
            ranked.sort_by(|&a, &b| {
                in_split[k][b]
                    .cmp(&in_split[k][a])
                    .then(overall[k][b].cmp(&overall[k][a]))
                    .then(a.cmp(&b))
            });
            let mut row = BTreeMap::new();
            for (rank, c) in ranked.into_iter().enumerate() {
                let s = if rank < sizes[0] {
                    Stratum::Many
                } else if rank < sizes[0] + sizes[1] {
                    Stratum::Medium
                } else {
                    Stratum::Few
                };
                row.insert(c, s);
            }
            (k, row)
        })
        .collect();
    Strata {
        class_stratum,
        attr_stratum,
        cluster_of: clusters.labels.clone(),
        thresholds,
    }
}

/// Sizes and knobs for building all four splits from one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Samples per class reserved for the test splits.
    pub test_pool_per_class: usize,
    /// Train-GLT class counts run from `train_head` down to `train_head / train_ratio`.
    pub train_head: usize,
    pub train_ratio: f64,
    pub train_shape: ClassShape,
    pub train_cbl_per_class: usize,
    pub test_cbl_per_class: usize,
    pub n_clusters: usize,
    pub per_cell: usize,
    /// Per-class size of the greedy Test-GBL (multi-label datasets only).
    pub greedy_per_class: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub thresholds: StrataThresholds,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            test_pool_per_class: 600,
            train_head: 400,
            train_ratio: 40.0,
            train_shape: ClassShape::Exponential,
            train_cbl_per_class: 111,
            test_cbl_per_class: 60,
            n_clusters: 6,
            per_cell: 10,
            greedy_per_class: 60,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            thresholds: StrataThresholds::default(),
        }
    }
}

/// All splits, clusters and per-protocol strata of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train_glt: Split,
    pub train_cbl: Split,
    pub test_cbl: Split,
    pub test_gbl: Split,
    pub clusters: ClusterModel,
    pub gbl_quota: usize,
    pub gbl_clipped: Vec<(usize, usize, usize)>,
    pub strata_glt: Strata,
    pub strata_cbl: Strata,
}

impl Benchmark {
    pub fn build(ds: &Dataset, cfg: &BenchmarkConfig, seed: u64) -> Result<Self> {
        let mut rng = stage_rng(seed, "splits");
        let (train_pool, test_pool) = partition_pools(ds, cfg.test_pool_per_class, &mut rng)?;
        let prior = build_class_prior(ds.n_classes, cfg.train_ratio, cfg.train_shape, cfg.train_head)?;
        let train_glt = make_train_glt(&train_pool, &prior, &mut rng)?;
        let train_cbl = make_train_cbl(&train_pool, cfg.train_cbl_per_class, &mut rng)?;
        let test_cbl = make_test_cbl(&test_pool, cfg.test_cbl_per_class, &mut rng)?;
        let clusters = fit_clusters(ds, cfg.n_clusters, seed, cfg.kmeans_max_iters, cfg.kmeans_tol)?;
        let (test_gbl, gbl_quota, gbl_clipped) = match ds.regime {
            Regime::Single => {
                let grid = make_test_gbl_grid(ds, &test_pool, &clusters, cfg.per_cell, &mut rng)?;
                (grid.split, grid.quota, grid.clipped)
            }
            Regime::Multi => (
                make_test_gbl_greedy(ds, &test_pool, cfg.greedy_per_class)?,
                cfg.greedy_per_class,
                Vec::new(),
            ),
        };
        let strata_glt = stratify(ds, &train_glt, &clusters, cfg.thresholds);
        let strata_cbl = stratify(ds, &train_cbl, &clusters, cfg.thresholds);
        Ok(Self {
            train_glt,
            train_cbl,
            test_cbl,
            test_gbl,
            clusters,
            gbl_quota,
            gbl_clipped,
            strata_glt,
            strata_cbl,
        })
    }

    /// Train split, test split and strata of one protocol, tagged with it.
    pub fn protocol(&self, protocol: Protocol) -> (Split, Split, &Strata) {
        let train = match protocol.train_split() {
            SplitName::TrainCBL => &self.train_cbl,
            _ => &self.train_glt,
        };
        let test = match protocol.test_split() {
            SplitName::TestCBL => &self.test_cbl,
            _ => &self.test_gbl,
        };
        let strata = match protocol {
            Protocol::Alt => &self.strata_cbl,
            _ => &self.strata_glt,
        };
        (train.with_protocol(protocol), test.with_protocol(protocol), strata)
    }
}

//! The method x protocol x seed reproduction matrix, its merged tables and the
//! directional claims checked against them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, Dataset, GenConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Diagnostics, Report, ReportEntry, StratifiedMetrics};
use crate::ifl::{self, construct_environments, EnvConfig};
use crate::nn::{Checkpoint, Method, TrainConfig};
use crate::rng::{digest_hex, stage_rng};
use crate::splits::{Benchmark, BenchmarkConfig, Protocol, Split, Stratum};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything a reproduction run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub generator: GenConfig,
    pub benchmark: BenchmarkConfig,
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub methods: Vec<Method>,
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
}

/// The eight methods of the comparison table (IRM is available but not part of it).
pub const TABLE_METHODS: [Method; 8] = [
    Method::Ce,
    Method::Center,
    Method::Ifl2,
    Method::Ifl3,
    Method::Blsoftmax,
    Method::Logitadj,
    Method::Focal,
    Method::Crt,
];

impl Default for MatrixConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            generator: GenConfig::default(),
            benchmark: BenchmarkConfig::default(),
            env: EnvConfig::default(),
            train,
            methods: TABLE_METHODS.to_vec(),
            protocols: Protocol::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl MatrixConfig {
    /// Parses a (possibly partial) config. Without an `env` section the
    /// environment timing is scaled to the configured epoch budget.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let has_env = value.get("env").is_some();
        let mut cfg: Self = serde_json::from_value(value)?;
        if !has_env {
            cfg.env = EnvConfig::scaled(cfg.train.epochs, ifl::DEFAULT_ALPHAS.0, ifl::DEFAULT_ALPHAS.1);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        self.env.validate()?;
        if self.seeds.is_empty() || self.methods.is_empty() || self.protocols.is_empty() {
            return Err(Error::config("seeds", "seeds, methods and protocols must be non-empty"));
        }
        let need = self.benchmark.test_pool_per_class + self.benchmark.train_head;
        let have = (self.generator.samples_head as f64 / self.generator.class_imbalance_ratio).round() as usize;
        if have < need {
            return Err(Error::config(
                "generator.samples_head",
                format!("every class needs {need} samples for the train and test pools, smallest has {have}"),
            ));
        }
        Ok(())
    }

    fn digest_of<T: Serialize>(v: &T) -> Result<String> {
        Ok(digest_hex(serde_json::to_value(v)?.to_string().as_bytes()))
    }

    pub fn digests(&self) -> Result<BTreeMap<String, String>> {
        let mut d = BTreeMap::new();
        d.insert("generator".into(), Self::digest_of(&self.generator)?);
        d.insert("benchmark".into(), Self::digest_of(&self.benchmark)?);
        d.insert("train".into(), Self::digest_of(&self.train)?);
        d.insert("env".into(), Self::digest_of(&self.env)?);
        Ok(d)
    }
}

/// A reproduction run's configuration, its digests and where its outputs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub config: MatrixConfig,
    pub digests: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub protocols: Vec<Protocol>,
    /// Output name -> path relative to the output directory.
    pub layout: BTreeMap<String, String>,
}

impl ExperimentManifest {
    pub fn new(config: MatrixConfig) -> Result<Self> {
        let mut layout = BTreeMap::new();
        for (k, v) in [
            ("merged", "merged.csv"),
            ("strata", "strata.csv"),
            ("runs", "runs.csv"),
            ("claims", "claims.json"),
            ("report", "report.json"),
            ("failures", "failures.json"),
            ("cells", "seed-{seed}/{method}-{protocol}.{ckpt,json}"),
        ] {
            layout.insert(k.to_string(), v.to_string());
        }
        Ok(Self {
            tool_version: TOOL_VERSION.to_string(),
            digests: config.digests()?,
            seeds: config.seeds.clone(),
            methods: config.methods.clone(),
            protocols: config.protocols.clone(),
            config,
            layout,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)? + "\n")
    }

    /// Parses a manifest and checks its digests and lists against the embedded configuration.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        let fresh = m.config.digests()?;
        for (k, v) in &fresh {
            if m.digests.get(k) != Some(v) {
                return Err(Error::Tampered(format!("digest of `{k}` does not match its configuration")));
            }
        }
        if m.digests.len() != fresh.len() {
            return Err(Error::Tampered("unexpected digest entries".into()));
        }
        if m.seeds != m.config.seeds || m.methods != m.config.methods || m.protocols != m.config.protocols {
            return Err(Error::Tampered("seed, method or protocol list differs from the configuration".into()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A cell that could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub method: Method,
    pub protocol: Protocol,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimResult {
    pub id: u32,
    pub name: String,
    /// `None` when the matrix lacks the methods, protocols or seeds the claim needs.
    pub pass: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub manifest: ExperimentManifest,
    /// Sorted by (seed, method, protocol).
    pub entries: Vec<ReportEntry>,
    pub failures: Vec<CellFailure>,
    pub claims: Vec<ClaimResult>,
}

impl MatrixOutcome {
    pub fn all_claims_pass(&self) -> bool {
        self.claims.iter().all(|c| c.pass != Some(false))
    }

    pub fn merged_csv(&self) -> String {
        merged_csv(&self.entries, &self.manifest.methods, &self.manifest.protocols)
    }

    pub fn strata_csv(&self) -> String {
        strata_csv(&self.entries, &self.manifest.methods, &self.manifest.protocols)
    }
}

/// Benchmark data of one seed.
pub struct SeedData {
    pub dataset: Dataset,
    pub bench: Benchmark,
}

pub fn prepare_seed(cfg: &MatrixConfig, seed: u64) -> Result<SeedData> {
    let gen = GenConfig {
        seed,
        ..cfg.generator.clone()
    };
    let dataset = datagen::generate(&gen)?;
    let bench = Benchmark::build(&dataset, &cfg.benchmark, seed)?;
    Ok(SeedData { dataset, bench })
}

/// Train-split family: CLT and GLT share the Train-GLT model.
fn shares_model(p: Protocol) -> Protocol {
    match p {
        Protocol::Glt => Protocol::Clt,
        other => other,
    }
}

/// Post-training diagnostics on the training split: distance between per-environment
/// class feature means under confidence-based environments, and the CE-style
/// confidence / center-similarity correlation.
pub fn diagnostics(ck: &Checkpoint, ds: &Dataset, train: &Split, env: &EnvConfig, seed: u64) -> Result<Diagnostics> {
    let scores = ifl::confidence_scores(&ck.params, ds, train)?;
    let envs = construct_environments(ds, train, &scores, 2, env.rule, 0, &mut stage_rng(seed, "diagnostics/env"))?;
    Ok(Diagnostics {
        center_invariance: Some(eval::center_invariance(&ck.params, ds, &envs)?),
        confidence_center_pearson: Some(eval::confidence_center_correlation(&ck.params, ds, train)?),
    })
}

/// Trains one method on one protocol's training split.
pub fn train_cell(cfg: &MatrixConfig, data: &SeedData, seed: u64, method: Method, protocol: Protocol) -> Result<Checkpoint> {
    let (train, _, _) = data.bench.protocol(protocol);
    let tcfg = TrainConfig {
        seed,
        method,
        ..cfg.train.clone()
    };
    let out = ifl::train(&data.dataset, &train, &tcfg, &cfg.env)?;
    Ok(Checkpoint::new(out.params, method, protocol, out.class_prior, tcfg.tau))
}

/// Evaluates a trained model on a protocol's test split.
pub fn evaluate_cell(
    cfg: &MatrixConfig,
    data: &SeedData,
    ck: &Checkpoint,
    seed: u64,
    protocol: Protocol,
) -> Result<ReportEntry> {
    let (train, test, strata) = data.bench.protocol(protocol);
    let preds = eval::predict(ck, &data.dataset, &test)?;
    let metrics: StratifiedMetrics = eval::stratified_report(&data.dataset, &test.sample_ids, &preds, strata);
    Ok(ReportEntry {
        protocol,
        split: test.name,
        method: ck.header.method,
        seed: Some(seed),
        metrics,
        diagnostics: diagnostics(ck, &data.dataset, &train, &cfg.env, seed)?,
    })
}

fn thread_cap() -> Option<usize> {
    std::env::var("GLT_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

type CellOutput = (u64, Method, Protocol, Result<(Checkpoint, ReportEntry)>);

/// Runs the whole matrix. With `out`, every checkpoint, per-cell report and merged table is written there.
pub fn run_matrix(cfg: &MatrixConfig, out: Option<&Path>) -> Result<MatrixOutcome> {
    cfg.validate()?;
    let manifest = ExperimentManifest::new(cfg.clone())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::config("GLT_THREADS", e.to_string()))?;

    let cells: Vec<CellOutput> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .flat_map(|&seed| {
                let data = prepare_seed(cfg, seed);
                let mut train_keys: Vec<(Method, Protocol)> = Vec::new();
                for &m in &cfg.methods {
                    for &p in &cfg.protocols {
                        if !train_keys.contains(&(m, shares_model(p))) {
                            train_keys.push((m, shares_model(p)));
                        }
                    }
                }
                let data = match data {
                    Ok(d) => d,
                    Err(e) => {
                        let msg = e.to_string();
                        return cfg
                            .methods
                            .iter()
                            .flat_map(|&m| cfg.protocols.iter().map(move |&p| (m, p)))
                            .map(|(m, p)| (seed, m, p, Err(Error::Protocol(format!("data preparation failed: {msg}")))))
                            .collect::<Vec<CellOutput>>();
                    }
                };
                let trained: Vec<((Method, Protocol), std::result::Result<Checkpoint, String>)> = train_keys
                    .par_iter()
                    .map(|&(m, p)| ((m, p), train_cell(cfg, &data, seed, m, p).map_err(|e| e.to_string())))
                    .collect();
                let jobs: Vec<(Method, Protocol)> = cfg
                    .methods
                    .iter()
                    .flat_map(|&m| cfg.protocols.iter().map(move |&p| (m, p)))
                    .collect();
                jobs.par_iter()
                    .map(|&(m, p)| {
                        let base = trained.iter().find(|(k, _)| *k == (m, shares_model(p))).expect("trained").1.clone();
                        let res = base.map_err(Error::Protocol).and_then(|mut ck| {
                            ck.header.protocol = p;
                            ck.header.provenance.insert("seed".into(), seed.to_string());
                            let entry = evaluate_cell(cfg, &data, &ck, seed, p)?;
                            Ok((ck, entry))
                        });
                        (seed, m, p, res)
                    })
                    .collect::<Vec<CellOutput>>()
            })
            .collect()
    });

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut checkpoints = Vec::new();
    for (seed, method, protocol, res) in cells {
        match res {
            Ok((ck, e)) => {
                checkpoints.push((seed, method, protocol, ck));
                entries.push(e);
            }
            Err(e) => failures.push(CellFailure {
                seed,
                method,
                protocol,
                error: e.to_string(),
            }),
        }
    }
    entries.sort_by_key(|e| (e.seed, e.method, e.protocol));
    let claims = evaluate_claims(&entries, &cfg.seeds);
    let outcome = MatrixOutcome {
        manifest,
        entries,
        failures,
        claims,
    };
    if let Some(dir) = out {
        write_outputs(&outcome, &checkpoints, dir)?;
    }
    Ok(outcome)
}

fn cell_path(dir: &Path, seed: u64, method: Method, protocol: Protocol, ext: &str) -> PathBuf {
    dir.join(format!("seed-{seed}")).join(format!("{}-{}.{ext}", method, protocol.name()))
}

fn write_outputs(o: &MatrixOutcome, checkpoints: &[(u64, Method, Protocol, Checkpoint)], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.json"), o.manifest.to_json()?)?;
    for (seed, method, protocol, ck) in checkpoints {
        std::fs::create_dir_all(dir.join(format!("seed-{seed}")))?;
        ck.write(&cell_path(dir, *seed, *method, *protocol, "ckpt"))?;
    }
    for e in &o.entries {
        let seed = e.seed.unwrap_or_default();
        Report::new(vec![e.clone()]).write(&cell_path(dir, seed, e.method, e.protocol, "json"))?;
    }
    let mut report = Report::new(o.entries.clone());
    report.provenance = o.manifest.digests.clone();
    report.write(&dir.join("report.json"))?;
    report.write(&dir.join("runs.csv"))?;
    std::fs::write(dir.join("merged.csv"), o.merged_csv())?;
    std::fs::write(dir.join("strata.csv"), o.strata_csv())?;
    std::fs::write(dir.join("claims.json"), serde_json::to_string_pretty(&o.claims)? + "\n")?;
    std::fs::write(dir.join("failures.json"), serde_json::to_string_pretty(&o.failures)? + "\n")?;
    Ok(())
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn fmt_ms(xs: &[f64]) -> String {
    if xs.is_empty() {
        return String::new();
    }
    let (m, s) = mean_std(xs);
    format!("{:.2}±{:.2}", 100.0 * m, 100.0 * s)
}

fn select(entries: &[ReportEntry], m: Method, p: Protocol) -> impl Iterator<Item = &ReportEntry> {
    entries.iter().filter(move |e| e.method == m && e.protocol == p)
}

/// One row per method, accuracy and precision columns per protocol, as mean±std over seeds.
pub fn merged_csv(entries: &[ReportEntry], methods: &[Method], protocols: &[Protocol]) -> String {
    let mut out = String::from("method");
    for p in protocols {
        let _ = write!(out, ",{p} acc,{p} prec");
    }
    out.push('\n');
    for &m in methods {
        out.push_str(m.name());
        for &p in protocols {
            let acc: Vec<f64> = select(entries, m, p).map(|e| e.metrics.overall.accuracy).collect();
            let prec: Vec<f64> = select(entries, m, p).map(|e| e.metrics.overall.precision).collect();
            let _ = write!(out, ",{},{}", fmt_ms(&acc), fmt_ms(&prec));
        }
        out.push('\n');
    }
    out
}

/// One row per (protocol, method) with every stratum as mean±std over seeds.
pub fn strata_csv(entries: &[ReportEntry], methods: &[Method], protocols: &[Protocol]) -> String {
    let mut out = String::from("protocol,method,overall acc,overall prec");
    for kind in ["C", "A"] {
        for s in Stratum::ALL {
            let _ = write!(out, ",{}_{kind} acc,{}_{kind} prec", s.label(), s.label());
        }
    }
    out.push('\n');
    for &p in protocols {
        for &m in methods {
            let rows: Vec<&ReportEntry> = select(entries, m, p).collect();
            let col = |f: &dyn Fn(&ReportEntry) -> Option<f64>| fmt_ms(&rows.iter().filter_map(|e| f(e)).collect::<Vec<_>>());
            let _ = write!(
                out,
                "{p},{},{},{}",
                m.name(),
                col(&|e| Some(e.metrics.overall.accuracy)),
                col(&|e| Some(e.metrics.overall.precision))
            );
            for attr in [false, true] {
                for s in Stratum::ALL {
                    let cell = |e: &ReportEntry| {
                        let map = if attr { &e.metrics.attribute } else { &e.metrics.class };
                        map.get(&s).copied().flatten()
                    };
                    let _ = write!(
                        out,
                        ",{},{}",
                        col(&|e| cell(e).map(|c| c.accuracy)),
                        col(&|e| cell(e).map(|c| c.precision))
                    );
                }
            }
            out.push('\n');
        }
    }
    out
}

fn mean_of(entries: &[ReportEntry], m: Method, p: Protocol, f: impl Fn(&ReportEntry) -> Option<f64>) -> Option<f64> {
    let xs: Vec<f64> = select(entries, m, p).filter_map(f).collect();
    (!xs.is_empty()).then(|| mean_std(&xs).0 * 100.0)
}

fn attr_acc(e: &ReportEntry, s: Stratum) -> Option<f64> {
    e.metrics.attribute.get(&s).copied().flatten().map(|c| c.accuracy)
}

fn claim(id: u32, name: &str, pass: Option<bool>, detail: String) -> ClaimResult {
    ClaimResult {
        id,
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Directional claims over the matrix; all accuracies in percentage points.
pub fn evaluate_claims(entries: &[ReportEntry], seeds: &[u64]) -> Vec<ClaimResult> {
    use Method::*;
    use Protocol::*;
    let acc = |m, p| mean_of(entries, m, p, |e| Some(e.metrics.overall.accuracy));
    let prec = |m, p| mean_of(entries, m, p, |e| Some(e.metrics.overall.precision));
    let mut out = Vec::new();

    let c4 = (|| {
        let (center, ce, ifl2, ifl3) = (acc(Center, Clt)?, acc(Ce, Clt)?, acc(Ifl2, Clt)?, acc(Ifl3, Clt)?);
        let pass = center < ce && ce <= ifl2 && ifl2 >= ce + 2.0 && (ifl3 - ifl2).abs() <= 1.0;
        Some((
            pass,
            format!("CLT acc: center {center:.2}, ce {ce:.2}, ifl2 {ifl2:.2}, ifl3 {ifl3:.2}"),
        ))
    })();
    out.push(claim(4, "environment ablation on CLT", c4.as_ref().map(|c| c.0), c4.map(|c| c.1).unwrap_or_default()));

    let c5 = (|| {
        let (ce, ifl2, crt, la) = (acc(Ce, Alt)?, acc(Ifl2, Alt)?, acc(Crt, Alt)?, acc(Logitadj, Alt)?);
        let gap = |m| {
            Some(
                mean_of(entries, m, Alt, |e| attr_acc(e, Stratum::Many))?
                    - mean_of(entries, m, Alt, |e| attr_acc(e, Stratum::Few))?,
            )
        };
        let (gap_ce, gap_ifl) = (gap(Ce)?, gap(Ifl2)?);
        let pass = ifl2 >= ce + 2.0 && gap_ifl <= 0.8 * gap_ce && (crt - ce).abs() < 1.0 && (la - ce).abs() < 1.0;
        Some((
            pass,
            format!(
                "ALT acc: ce {ce:.2}, ifl2 {ifl2:.2}, crt {crt:.2}, logitadj {la:.2}; Many_A-Few_A gap ce {gap_ce:.2}, ifl2 {gap_ifl:.2}"
            ),
        ))
    })();
    out.push(claim(5, "attribute-wise long tail (ALT)", c5.as_ref().map(|c| c.0), c5.map(|c| c.1).unwrap_or_default()));

    let c6 = (|| {
        let (ce_clt, la_clt) = (acc(Ce, Clt)?, acc(Logitadj, Clt)?);
        let (ce_acc, ce_prec) = (acc(Ce, Glt)?, prec(Ce, Glt)?);
        let la_prec = prec(Logitadj, Glt)?;
        let (ifl_acc, ifl_prec) = (acc(Ifl2, Glt)?, prec(Ifl2, Glt)?);
        let pass = la_clt >= ce_clt + 2.0 && la_prec <= ce_prec + 1.0 && ifl_acc >= ce_acc + 1.0 && ifl_prec >= ce_prec + 1.0;
        Some((
            pass,
            format!(
                "CLT acc ce {ce_clt:.2} logitadj {la_clt:.2}; GLT prec ce {ce_prec:.2} logitadj {la_prec:.2}; GLT acc|prec ifl2 {ifl_acc:.2}|{ifl_prec:.2} vs ce {ce_acc:.2}|{ce_prec:.2}"
            ),
        ))
    })();
    out.push(claim(6, "CLT vs GLT trade-off", c6.as_ref().map(|c| c.0), c6.map(|c| c.1).unwrap_or_default()));

    let c7 = (|| {
        let inv = |m, s| {
            select(entries, m, Glt)
                .find(|e| e.seed == Some(s))
                .and_then(|e| e.diagnostics.center_invariance)
        };
        let mut wins = 0;
        let mut compared = 0;
        for &s in seeds {
            if let (Some(a), Some(b)) = (inv(Ifl2, s), inv(Ce, s)) {
                compared += 1;
                wins += usize::from(a < b);
            }
        }
        if compared == 0 {
            return None;
        }
        let r = mean_of(entries, Ce, Glt, |e| e.diagnostics.confidence_center_pearson)? / 100.0;
        let need = (0.8 * compared as f64).ceil() as usize;
        Some((
            wins >= need && r > 0.5,
            format!("ifl2 center distance below ce in {wins}/{compared} seeds (need {need}); ce confidence-similarity r {r:.3}"),
        ))
    })();
    out.push(claim(7, "invariance mechanism", c7.as_ref().map(|c| c.0), c7.map(|c| c.1).unwrap_or_default()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_tamper_check() {
        let m = ExperimentManifest::new(MatrixConfig::default()).unwrap();
        let text = m.to_json().unwrap();
        assert_eq!(ExperimentManifest::from_json(&text).unwrap(), m);
        let tampered = text.replace("\"noise_sigma\": 0.5", "\"noise_sigma\": 0.6");
        assert_ne!(tampered, text);
        assert!(matches!(ExperimentManifest::from_json(&tampered), Err(Error::Tampered(_))));
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn default_matrix_is_valid() {
        MatrixConfig::default().validate().unwrap();
    }
}

//! The `glt` command line: gen, split, train, eval, report and repro.
//!
//! Stages talk to each other only through files. Every file a stage writes
//! records the SHA-256 digests of the inputs it was built from.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, io as gltd, Dataset, GenConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Diagnostics, Report, ReportEntry};
use crate::ifl::{self, AlphaSchedule, EnvConfig, MetricVariant, DEFAULT_ALPHAS};
use crate::nn::{Checkpoint, Method, TrainConfig};
use crate::repro::{self, ExperimentManifest, MatrixConfig, TOOL_VERSION};
use crate::rng::digest_hex;
use crate::splits::{Benchmark, BenchmarkConfig, Protocol, Split, Strata};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const PROTOCOL: i32 = 3;
    pub const ACCEPTANCE: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "glt", version, about = "Synthetic generalized long-tail benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file from a generator config.
    Gen(GenArgs),
    /// Build the train/test splits and strata of one protocol.
    Split(SplitArgs),
    /// Train a model on a training split.
    Train(TrainArgs),
    /// Evaluate a model on a test split.
    Eval(EvalArgs),
    /// Merge evaluation reports into one table.
    Report(ReportArgs),
    /// Run the full method x protocol x seed matrix and check the expected trends.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config (JSON); the built-in default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub protocol: Protocol,
    /// k-means clusters per class.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Samples per (class, cluster) cell of Test-GBL.
    #[arg(long)]
    pub per_cell: Option<usize>,
    /// Benchmark config (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for train.json, test.json and strata.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training split file.
    #[arg(long)]
    pub split: PathBuf,
    /// Dataset file; defaults to the one recorded in the split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "ce")]
    pub method: Method,
    /// Refuse to train unless the split belongs to this protocol.
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Metric-loss schedule as `fraction:alpha` steps, e.g. `0:0,0.5:0.001,0.75:0.005`.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub envs: Option<usize>,
    /// Epochs between environment rebuilds.
    #[arg(long)]
    pub refresh: Option<usize>,
    /// Epochs of plain training before the first environment build.
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub metric: Option<MetricVariant>,
    /// Training config (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment config (JSON); flags override it.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log; defaults to the checkpoint path with a `.log.csv` suffix.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Writes the environments of every rebuild as JSON.
    #[arg(long)]
    pub dump_envs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test split file.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub strata: PathBuf,
    /// Report path; `.csv` writes the table form.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training split, for the invariance diagnostics.
    #[arg(long)]
    pub train_split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report files to merge.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// `.csv` writes the mean±std table, anything else the merged JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// Matrix config (JSON); the built-in default when omitted.
    #[arg(long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Re-run exactly what an earlier manifest describes.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A split as written to disk, with the dataset it indexes into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    #[serde(flatten)]
    pub split: Split,
    pub dataset: PathBuf,
    pub dataset_sha256: String,
    pub seed: u64,
    pub benchmark_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataFile {
    pub protocol: Protocol,
    pub dataset_sha256: String,
    pub strata: Strata,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Json(_)
        | Error::Tampered(_)
        | Error::InsufficientSamples { .. }
        | Error::EmptyCell { .. } => exit::CONFIG,
        Error::Protocol(_) => exit::PROTOCOL,
        _ => exit::FAILURE,
    }
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(digest_hex(&std::fs::read(path)?))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let v = serde_json::to_value(value)?;
    std::fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

fn load_dataset(recorded: &Path, digest: &str, data: Option<&Path>) -> Result<Dataset> {
    let path = data.unwrap_or(recorded);
    let have = file_digest(path)?;
    if have != digest {
        return Err(Error::Tampered(format!(
            "dataset {} has digest {have}, the split was built from {digest}",
            path.display()
        )));
    }
    gltd::read(path)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let res = match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| exit::OK),
        Command::Split(a) => cmd_split(&a).map(|_| exit::OK),
        Command::Train(a) => cmd_train(&a).map(|_| exit::OK),
        Command::Eval(a) => cmd_eval(&a).map(|_| exit::OK),
        Command::Report(a) => cmd_report(&a).map(|_| exit::OK),
        Command::Repro(a) => cmd_repro(&a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<Dataset> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = datagen::generate(&cfg)?;
    gltd::write(&ds, &a.out)?;
    let counts = ds.class_counts();
    let profile = datagen::build_attribute_conditional(&cfg)?;
    println!(
        "wrote {}: n={} K={} A={} D={} regime={:?}",
        a.out.display(),
        ds.len(),
        ds.n_classes,
        ds.n_attributes,
        ds.feat_dim,
        ds.regime
    );
    println!(
        "class counts: head {} .. tail {}",
        counts.iter().max().unwrap_or(&0),
        counts.iter().min().unwrap_or(&0)
    );
    let row: Vec<String> = profile[0].iter().map(|p| format!("{p:.3}")).collect();
    println!("attribute profile of class 0: [{}]", row.join(", "));
    println!("sha256 {}", file_digest(&a.out)?);
    Ok(ds)
}

pub fn cmd_split(a: &SplitArgs) -> Result<()> {
    let mut cfg: BenchmarkConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(k) = a.clusters {
        cfg.n_clusters = k;
    }
    if let Some(q) = a.per_cell {
        cfg.per_cell = q;
    }
    let dataset_sha256 = file_digest(&a.data)?;
    let ds = gltd::read(&a.data)?;
    let bench = Benchmark::build(&ds, &cfg, a.seed)?;
    let (train, test, strata) = bench.protocol(a.protocol);
    let dataset = std::path::absolute(&a.data)?;
    let benchmark_sha256 = digest_hex(serde_json::to_value(&cfg)?.to_string().as_bytes());
    std::fs::create_dir_all(&a.out)?;
    for (name, split) in [("train.json", train), ("test.json", test)] {
        let file = SplitFile {
            split,
            dataset: dataset.clone(),
            dataset_sha256: dataset_sha256.clone(),
            seed: a.seed,
            benchmark_sha256: benchmark_sha256.clone(),
        };
        write_json(&a.out.join(name), &file)?;
    }
    write_json(
        &a.out.join("strata.json"),
        &StrataFile {
            protocol: a.protocol,
            dataset_sha256,
            strata: strata.clone(),
        },
    )?;
    println!(
        "{}: train {} samples, test {} samples, Test-GBL quota {} per cell{}",
        a.protocol,
        bench.protocol(a.protocol).0.sample_ids.len(),
        bench.protocol(a.protocol).1.sample_ids.len(),
        bench.gbl_quota,
        if bench.gbl_clipped.is_empty() { "" } else { " (clipped)" }
    );
    Ok(())
}

fn env_config_for(a: &TrainArgs, epochs: usize) -> Result<EnvConfig> {
    let mut env = match &a.env_config {
        Some(p) => read_json(p)?,
        None => {
            let base = EnvConfig::scaled(epochs, DEFAULT_ALPHAS.0, DEFAULT_ALPHAS.1);
            let warmup = a.warmup.unwrap_or(base.warmup_epochs);
            let refresh = a.refresh.unwrap_or(base.refresh_period_epochs);
            EnvConfig::with_timing(epochs, warmup, refresh, DEFAULT_ALPHAS.0, DEFAULT_ALPHAS.1)
        }
    };
    if a.env_config.is_some() {
        if let Some(w) = a.warmup {
            env.warmup_epochs = w;
        }
        if let Some(r) = a.refresh {
            env.refresh_period_epochs = r;
        }
    }
    if let Some(text) = &a.alpha {
        env.alpha_schedule = if text.contains(':') {
            AlphaSchedule::parse(text)?
        } else {
            let v: f64 = text
                .trim()
                .parse()
                .map_err(|_| Error::config("alpha", format!("`{text}` is neither a number nor a schedule")))?;
            AlphaSchedule::constant(v)
        };
    }
    if a.envs.is_some() {
        env.n_envs = a.envs;
    }
    if let Some(m) = a.metric {
        env.metric = m;
    }
    env.validate()?;
    Ok(env)
}

fn log_csv(log: &[ifl::EpochLog]) -> String {
    let mut out = String::from("epoch,lr,loss_cls,loss_ifl,alpha\n");
    for r in log {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.lr, r.loss_cls, r.loss_ifl, r.alpha));
    }
    out
}

pub fn cmd_train(a: &TrainArgs) -> Result<Checkpoint> {
    let file: SplitFile = read_json(&a.split)?;
    let split = &file.split;
    if !split.name.is_train() {
        return Err(Error::Protocol(format!(
            "{} is a test split; train on the protocol's training split",
            split.name.name()
        )));
    }
    if split.protocol.train_split() != split.name {
        return Err(Error::Protocol(format!(
            "{} trains on {}, not {}",
            split.protocol,
            split.protocol.train_split().name(),
            split.name.name()
        )));
    }
    if let Some(p) = a.protocol {
        if p != split.protocol {
            return Err(Error::Protocol(format!(
                "{p} trains on {}, but the split is {} for {}",
                p.train_split().name(),
                split.name.name(),
                split.protocol
            )));
        }
    }
    let ds = load_dataset(&file.dataset, &file.dataset_sha256, a.data.as_deref())?;
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.method = a.method;
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let env = env_config_for(a, cfg.epochs)?;
    let out = ifl::train(&ds, split, &cfg, &env)?;

    let mut ck = Checkpoint::new(out.params, cfg.method, split.protocol, out.class_prior, cfg.tau);
    let prov = &mut ck.header.provenance;
    prov.insert("dataset_sha256".into(), file.dataset_sha256.clone());
    prov.insert("split_sha256".into(), file_digest(&a.split)?);
    prov.insert("train_config".into(), serde_json::to_value(&cfg)?.to_string());
    prov.insert("env_config".into(), serde_json::to_value(&env)?.to_string());
    prov.insert("seed".into(), a.seed.to_string());
    prov.insert("tool_version".into(), TOOL_VERSION.into());
    ck.write(&a.out)?;

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    std::fs::write(&log_path, log_csv(&out.log))?;
    if let Some(p) = &a.dump_envs {
        write_json(p, &out.dumps)?;
    }
    if let Some(last) = out.log.last() {
        println!(
            "trained {} on {} ({} samples): final loss_cls {:.4}, loss_ifl {:.4}",
            cfg.method,
            split.name.name(),
            split.sample_ids.len(),
            last.loss_cls,
            last.loss_ifl
        );
    }
    Ok(ck)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Report> {
    let ck = Checkpoint::read(&a.model)?;
    let file: SplitFile = read_json(&a.split)?;
    let strata: StrataFile = read_json(&a.strata)?;
    let split = &file.split;
    if split.name.is_train() || split.protocol.test_split() != split.name {
        return Err(Error::Protocol(format!(
            "{} is not the test split of {}",
            split.name.name(),
            split.protocol
        )));
    }
    if ck.header.protocol != split.protocol {
        return Err(Error::Protocol(format!(
            "model was trained for {}, split belongs to {}",
            ck.header.protocol, split.protocol
        )));
    }
    if strata.protocol != split.protocol {
        return Err(Error::Protocol(format!(
            "strata belong to {}, split to {}",
            strata.protocol, split.protocol
        )));
    }
    if strata.dataset_sha256 != file.dataset_sha256 {
        return Err(Error::Tampered("strata and split come from different datasets".into()));
    }
    let ds = load_dataset(&file.dataset, &file.dataset_sha256, a.data.as_deref())?;
    split.check_ids(&ds)?;
    let preds = eval::predict(&ck, &ds, split)?;
    let metrics = eval::stratified_report(&ds, &split.sample_ids, &preds, &strata.strata);

    let diagnostics = match &a.train_split {
        Some(p) => {
            let train: SplitFile = read_json(p)?;
            if train.split.protocol != split.protocol || train.dataset_sha256 != file.dataset_sha256 {
                return Err(Error::Protocol("training split belongs to another protocol or dataset".into()));
            }
            let seed = ck.header.provenance.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
            repro::diagnostics(&ck, &ds, &train.split, &EnvConfig::default(), seed)?
        }
        None => Diagnostics::default(),
    };
    let mut report = Report::new(vec![ReportEntry {
        protocol: split.protocol,
        split: split.name,
        method: ck.header.method,
        seed: ck.header.provenance.get("seed").and_then(|s| s.parse().ok()),
        metrics,
        diagnostics,
    }]);
    report.provenance = BTreeMap::from([
        ("model_sha256".to_string(), file_digest(&a.model)?),
        ("split_sha256".to_string(), file_digest(&a.split)?),
        ("strata_sha256".to_string(), file_digest(&a.strata)?),
        ("dataset_sha256".to_string(), file.dataset_sha256.clone()),
        ("tool_version".to_string(), TOOL_VERSION.to_string()),
    ]);
    report.write(&a.report)?;
    let o = &report.entries[0].metrics.overall;
    println!(
        "{} {} on {}: accuracy {:.2} | precision {:.2}",
        ck.header.method,
        split.protocol,
        split.name.name(),
        100.0 * o.accuracy,
        100.0 * o.precision
    );
    Ok(report)
}

pub fn cmd_report(a: &ReportArgs) -> Result<Report> {
    let mut merged = Report::default();
    for p in &a.inputs {
        let r = Report::read(p)?;
        if r.precision_rule != merged.precision_rule {
            return Err(Error::config("precision_rule", format!("{} uses another precision rule", p.display())));
        }
        merged.entries.extend(r.entries);
        merged.provenance.insert(p.display().to_string(), file_digest(p)?);
    }
    merged.entries.sort_by_key(|e| (e.seed, e.method, e.protocol));
    let mut methods: Vec<Method> = merged.entries.iter().map(|e| e.method).collect();
    methods.sort();
    methods.dedup();
    let mut protocols: Vec<Protocol> = merged.entries.iter().map(|e| e.protocol).collect();
    protocols.sort();
    protocols.dedup();
    let table = repro::merged_csv(&merged.entries, &methods, &protocols);
    if a.out.extension().is_some_and(|e| e == "csv") {
        std::fs::write(&a.out, &table)?;
    } else {
        merged.write(&a.out)?;
    }
    print!("{table}");
    Ok(merged)
}

pub fn cmd_repro(a: &ReproArgs) -> Result<i32> {
    let mut cfg = match (&a.manifest, &a.config) {
        (Some(m), _) => ExperimentManifest::read(m)?.config,
        (None, Some(c)) => {
            let text = std::fs::read_to_string(c)?;
            MatrixConfig::from_json(&text).map_err(|e| Error::config(c.display().to_string(), e.to_string()))?
        }
        (None, None) => MatrixConfig::default(),
    };
    if let Some(seeds) = &a.seeds {
        cfg.seeds = seeds.clone();
    }
    let outcome = repro::run_matrix(&cfg, Some(&a.out))?;
    print!("{}", outcome.merged_csv());
    for c in &outcome.claims {
        let status = match c.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("claim {} {status}: {} ({})", c.id, c.name, c.detail);
    }
    for f in &outcome.failures {
        eprintln!("cell seed {} {} {} failed: {}", f.seed, f.method, f.protocol, f.error);
    }
    Ok(if !outcome.all_claims_pass() {
        exit::ACCEPTANCE
    } else if !outcome.failures.is_empty() {
        exit::FAILURE
    } else {
        exit::OK
    })
}

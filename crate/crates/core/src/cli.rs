//! Command-line pipeline: simulate → ingest → synth → features → eval, plus
//! an all-in-one `demo`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, write_timing, EvalConfig, EvalData, Grouping, TargetStatus};
use crate::features::{extract_features, DctSpec, DstSpec, FeatureConfig, FeatureKind};
use crate::ingest::{
    ingest, parse_layout, parse_readings, read_instances, read_stats, write_instances, write_layout, write_stats,
    CleanConfig, IngestConfig, Instance, Layout, SECONDS_PER_DAY,
};
use crate::models::{Hyperparameters, ModelKind};
use crate::simulate::{simulate, write_readings, SimConfig};
use crate::synth::{augment, DriftConfig, RwiConfig, StepScale, SynthMethod};
use crate::topology::{select_neighbors, trustworthy_series, NeighborMap, DEFAULT_NEIGHBORS, DEFAULT_PHYSICAL_CANDIDATES};

pub const SEED_ENV: &str = "TRUSTFORGE_SEED";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "trustforge", version, about = "Trust-labeled IoT sensor data: synthesis, features and evaluation")]
pub struct Cli {
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Intel Lab style deployment (readings + layout).
    Simulate(SimulateArgs),
    /// Parse, clean and grid raw readings into daily instances.
    Ingest(IngestArgs),
    /// Augment instances with synthesized untrustworthy data.
    Synth(SynthArgs),
    /// Extract window feature vectors.
    Features(FeaturesArgs),
    /// Cross-validate and cross-evaluate models over synthesis realizations.
    Eval(EvalArgs),
    /// Run the whole pipeline on a small synthetic deployment.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sensors: Option<u32>,
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    /// Grid step in seconds; must divide a day.
    #[arg(long)]
    pub step: Option<u32>,
    /// Longest gap (s) bridged by interpolation.
    #[arg(long)]
    pub max_gap: Option<f64>,
    /// Minimum fraction of observed grid points for a day to be kept.
    #[arg(long)]
    pub coverage_min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub readings: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args, Default)]
pub struct SynthParams {
    /// RWI middle points per instance.
    #[arg(long)]
    pub mid_points: Option<usize>,
    /// RWI step std as a multiple of the RMS first difference.
    #[arg(long, conflicts_with = "step_variance")]
    pub step_multiplier: Option<f64>,
    /// Fixed RWI step variance (°C²).
    #[arg(long)]
    pub step_variance: Option<f64>,
    /// Drift added per sample.
    #[arg(long)]
    pub drift_const: Option<f64>,
    /// Std of the per-sample drift noise.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Cap on the cumulative drift.
    #[arg(long)]
    pub cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = ["rwi", "drift"])]
    pub method: Option<String>,
    #[arg(long)]
    pub realizations: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub params: SynthParams,
}

#[derive(Debug, Args, Default)]
pub struct FeatureParams {
    /// Samples per window (default: two hours of grid points).
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub dct_coeffs: Option<usize>,
    #[arg(long)]
    pub dct_bands: Option<usize>,
    #[arg(long)]
    pub dst_bins: Option<usize>,
    /// Physically nearest candidates considered per sensor.
    #[arg(long)]
    pub k_phys: Option<usize>,
    /// Neighbours kept per sensor.
    #[arg(long)]
    pub neighbors: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    /// Sensor layout, needed when the neighbour map must be built.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Precomputed neighbour map; built from trustworthy originals otherwise.
    #[arg(long)]
    pub neighbor_map: Option<PathBuf>,
    #[arg(long, value_parser = ["corr", "dst"])]
    pub kind: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Realization tag written into each row.
    #[arg(long)]
    pub realization: Option<u32>,
    #[command(flatten)]
    pub params: FeatureParams,
}

#[derive(Debug, Args, Default)]
pub struct ModelParams {
    #[arg(long)]
    pub svm_c: Option<f64>,
    #[arg(long)]
    pub svm_epochs: Option<usize>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long)]
    pub mlp_lr: Option<f64>,
    #[arg(long)]
    pub mlp_momentum: Option<f64>,
    #[arg(long)]
    pub mlp_batch: Option<usize>,
    #[arg(long)]
    pub mlp_epochs: Option<usize>,
    #[arg(long)]
    pub mlp_patience: Option<usize>,
    #[arg(long)]
    pub lp_alpha: Option<f64>,
    #[arg(long)]
    pub lp_k: Option<usize>,
    #[arg(long)]
    pub lp_fraction: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Comma-separated: svm,mlp,kmeans,gmm,svm-via-kmeans,labelprop.
    #[arg(long)]
    pub models: Option<String>,
    /// Comma-separated feature kinds: corr,dst.
    #[arg(long)]
    pub features: Option<String>,
    /// Comma-separated synthesis methods: rwi,drift.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long, value_parser = parse_folds)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub realizations: Option<u32>,
    /// Cross-dataset pairs `train:test`, comma-separated; `none` disables.
    #[arg(long)]
    pub cross: Option<String>,
    /// Fold assignment: rows (stratified) or day.
    #[arg(long)]
    pub grouping: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub synth: SynthParams,
    #[command(flatten)]
    pub features_params: FeatureParams,
    #[command(flatten)]
    pub model: ModelParams,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub workdir: PathBuf,
    /// Output directory (default: `<workdir>/eval`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

fn parse_folds(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        Ok(_) => Err("at least 2 folds are needed".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// `key = value` settings loaded with `--config`.
#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "sensors", "days", "step", "max_gap", "coverage_min", "method", "methods", "realizations", "seed", "mid_points",
    "step_multiplier", "step_variance", "drift_const", "noise_std", "cap", "kind", "features", "window_len",
    "dct_coeffs", "dct_bands", "dst_bins", "k_phys", "neighbors", "models", "folds", "cross", "grouping", "svm_c",
    "svm_epochs", "mlp_hidden", "mlp_lr", "mlp_momentum", "mlp_batch", "mlp_epochs", "mlp_patience", "lp_alpha",
    "lp_k", "lp_fraction", "jobs",
];

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(i + 1, "expected `key = value`"))?;
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::format(i + 1, format!("unknown setting `{key}`")));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }

    /// Flag, then settings file, then `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("setting `{key}`: {e}"))),
            None => Ok(None),
        }
    }

    /// `TRUSTFORGE_SEED`, then flag, then settings file, then the default.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            return v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")));
        }
        self.pick(flag, "seed", DEFAULT_SEED)
    }
}

fn list<T>(s: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| Error::Config(e.to_string())))
        .collect()
}

fn resolve_grid(s: &Settings, a: &GridArgs) -> Result<IngestConfig> {
    let d = IngestConfig::default();
    Ok(IngestConfig {
        step: s.pick(a.step, "step", d.step)?,
        max_gap: s.pick(a.max_gap, "max_gap", d.max_gap)?,
        coverage_min: s.pick(a.coverage_min, "coverage_min", d.coverage_min)?,
        clean: CleanConfig::default(),
    })
}

fn resolve_rwi(s: &Settings, p: &SynthParams) -> Result<RwiConfig> {
    let d = RwiConfig::default();
    let variance = s.pick_opt(p.step_variance, "step_variance")?;
    let step = match (p.step_multiplier, variance) {
        (Some(m), _) => StepScale::Adaptive { multiplier: m },
        (None, Some(v)) => StepScale::FixedVariance { variance: v },
        (None, None) => match s.pick_opt::<f64>(None, "step_multiplier")? {
            Some(m) => StepScale::Adaptive { multiplier: m },
            None => d.step,
        },
    };
    Ok(RwiConfig {
        num_mid_points: s.pick(p.mid_points, "mid_points", d.num_mid_points)?,
        step,
        rng_seed: 0,
    })
}

fn resolve_drift(s: &Settings, p: &SynthParams) -> Result<DriftConfig> {
    let d = DriftConfig::default();
    Ok(DriftConfig {
        drift_constant: s.pick(p.drift_const, "drift_const", d.drift_constant)?,
        noise_std: s.pick(p.noise_std, "noise_std", d.noise_std)?,
        drift_cap: s.pick(p.cap, "cap", d.drift_cap)?,
        rng_seed: 0,
    })
}

fn resolve_method(name: &str, s: &Settings, p: &SynthParams) -> Result<SynthMethod> {
    match name {
        "rwi" => Ok(SynthMethod::Rwi(resolve_rwi(s, p)?)),
        "drift" => Ok(SynthMethod::Drift(resolve_drift(s, p)?)),
        other => Err(Error::Config(format!("unknown synthesis method `{other}` (rwi or drift)"))),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TopologyConfig {
    k_phys: usize,
    neighbors: usize,
}

fn resolve_features(s: &Settings, p: &FeatureParams, step: u32) -> Result<(FeatureConfig, TopologyConfig)> {
    let d = FeatureConfig::for_step(step);
    let config = FeatureConfig {
        window_len: s.pick(p.window_len, "window_len", d.window_len)?,
        dct: DctSpec {
            num_coeffs: s.pick(p.dct_coeffs, "dct_coeffs", d.dct.num_coeffs)?,
            num_bands: s.pick(p.dct_bands, "dct_bands", d.dct.num_bands)?,
        },
        dst: DstSpec {
            bins: s.pick(p.dst_bins, "dst_bins", d.dst.bins)?,
        },
    };
    let topo = TopologyConfig {
        k_phys: s.pick(p.k_phys, "k_phys", DEFAULT_PHYSICAL_CANDIDATES)?,
        neighbors: s.pick(p.neighbors, "neighbors", DEFAULT_NEIGHBORS)?,
    };
    Ok((config, topo))
}

fn resolve_hyper(s: &Settings, p: &ModelParams) -> Result<Hyperparameters> {
    let mut h = Hyperparameters::default();
    h.svm.c = s.pick(p.svm_c, "svm_c", h.svm.c)?;
    h.svm.epochs = s.pick(p.svm_epochs, "svm_epochs", h.svm.epochs)?;
    h.mlp.hidden = s.pick(p.mlp_hidden, "mlp_hidden", h.mlp.hidden)?;
    h.mlp.learning_rate = s.pick(p.mlp_lr, "mlp_lr", h.mlp.learning_rate)?;
    h.mlp.momentum = s.pick(p.mlp_momentum, "mlp_momentum", h.mlp.momentum)?;
    h.mlp.batch_size = s.pick(p.mlp_batch, "mlp_batch", h.mlp.batch_size)?;
    h.mlp.max_epochs = s.pick(p.mlp_epochs, "mlp_epochs", h.mlp.max_epochs)?;
    h.mlp.patience = s.pick(p.mlp_patience, "mlp_patience", h.mlp.patience)?;
    h.labelprop.alpha = s.pick(p.lp_alpha, "lp_alpha", h.labelprop.alpha)?;
    h.labelprop.k_graph = s.pick(p.lp_k, "lp_k", h.labelprop.k_graph)?;
    h.labelprop.labeled_fraction = s.pick(p.lp_fraction, "lp_fraction", h.labelprop.labeled_fraction)?;
    h.validate()?;
    Ok(h)
}

fn resolve_experiment(
    s: &Settings,
    a: &ExperimentArgs,
    step: u32,
    defaults: (u32, usize),
) -> Result<(EvalConfig, TopologyConfig)> {
    let models: Vec<ModelKind> = match s.pick_opt(a.models.clone(), "models")? {
        Some(m) => list(&m)?,
        None => ModelKind::ALL.to_vec(),
    };
    let kinds: Vec<FeatureKind> = list(&s.pick(a.features.clone(), "features", "corr,dst".to_string())?)?;
    let method_names: Vec<String> = list(&s.pick(a.methods.clone(), "methods", "rwi,drift".to_string())?)?;
    let methods = method_names
        .iter()
        .map(|m| resolve_method(m, s, &a.synth))
        .collect::<Result<Vec<_>>>()?;
    let cross_text = s.pick(a.cross.clone(), "cross", "rwi:drift,drift:rwi".to_string())?;
    let cross = if cross_text.trim() == "none" {
        Vec::new()
    } else {
        list::<String>(&cross_text)?
            .into_iter()
            .map(|p| {
                p.split_once(':')
                    .map(|(x, y)| (x.trim().to_string(), y.trim().to_string()))
                    .ok_or_else(|| Error::Config(format!("cross pair `{p}` must look like train:test")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let (features, topo) = resolve_features(s, &a.features_params, step)?;
    let config = EvalConfig {
        models,
        feature_kinds: kinds,
        methods,
        cross,
        folds: s.pick(a.folds, "folds", defaults.1)?,
        grouping: s.pick(a.grouping.as_deref().map(Grouping::from_str).transpose()?, "grouping", Grouping::Rows)?,
        realizations: s.pick(a.realizations, "realizations", defaults.0)?,
        base_seed: s.seed(a.seed)?,
        hyper: resolve_hyper(s, &a.model)?,
        features,
    };
    config.validate()?;
    Ok((config, topo))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::file(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).map_err(|e| Error::file(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush().map_err(|e| Error::file(path, e))
}

/// Resolved settings of one command, written next to its outputs.
#[derive(Debug, Serialize)]
struct RunConfig<'a, T: Serialize> {
    command: &'a str,
    seed: Option<u64>,
    inputs: BTreeMap<&'a str, String>,
    settings: T,
}

fn sidecar<T: Serialize>(dir: &Path, command: &str, seed: Option<u64>, inputs: &[(&str, &Path)], settings: T) -> Result<()> {
    let rc = RunConfig {
        command,
        seed,
        inputs: inputs.iter().map(|(k, p)| (*k, p.display().to_string())).collect(),
        settings,
    };
    write_json(&dir.join(format!("{command}.run.json")), &rc)
}

fn grid_step(instances: &[Instance]) -> Result<u32> {
    let n = instances
        .first()
        .map(|i| i.values.len())
        .ok_or_else(|| Error::InsufficientData("instance file holds no instances".into()))?;
    if n == 0 || SECONDS_PER_DAY % n as i64 != 0 {
        return Err(Error::Config(format!("{n} values per instance do not tile a day")));
    }
    Ok((SECONDS_PER_DAY / n as i64) as u32)
}

fn build_neighbors(layout: &Layout, instances: &[Instance], step: u32, topo: TopologyConfig) -> Result<NeighborMap> {
    let series = trustworthy_series(instances, step);
    select_neighbors(layout, &series, topo.k_phys, topo.neighbors)
}

fn load_layout(path: &Path) -> Result<Layout> {
    Ok(parse_layout(open(path)?)?.layout)
}

pub fn cmd_simulate(s: &Settings, a: &SimulateArgs) -> Result<()> {
    let d = SimConfig::default();
    let config = SimConfig {
        sensors: s.pick(a.sensors, "sensors", d.sensors)?,
        days: s.pick(a.days, "days", d.days)?,
        seed: s.seed(a.seed)?,
        ..d
    };
    let sim = simulate(&config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::file(&a.out, e))?;
    let mut w = create(&a.out.join("data.txt"))?;
    write_readings(&mut w, &sim.readings)?;
    w.flush()?;
    let mut w = create(&a.out.join("mote_locs.txt"))?;
    write_layout(&mut w, &sim.layout)?;
    w.flush()?;
    sidecar(&a.out, "simulate", Some(config.seed), &[], config)?;
    println!(
        "simulated {} sensors over {} days: {} readings",
        config.sensors,
        config.days,
        sim.readings.len()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    sensors: usize,
    days: usize,
    instances: usize,
    outliers: usize,
    skipped_lines: usize,
    readings_kept: usize,
    dropped_sensors: Vec<u32>,
}

fn run_ingest(readings: &Path, layout_path: &Path, out: &Path, config: &IngestConfig) -> Result<IngestSummary> {
    let parsed = parse_readings(open(readings)?)?;
    let layout = load_layout(layout_path)?;
    let result = ingest(&parsed.readings, config)?;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let mut w = create(&out.join("instances.csv"))?;
    write_instances(&mut w, &result.instances)?;
    w.flush()?;
    let mut w = create(&out.join("stats.csv"))?;
    write_stats(&mut w, &result.stats)?;
    w.flush()?;
    let mut w = create(&out.join("layout.txt"))?;
    write_layout(&mut w, &layout)?;
    w.flush()?;
    let days: std::collections::BTreeSet<i64> = result.instances.iter().map(|i| i.day_index).collect();
    let sensors: std::collections::BTreeSet<u32> = result.instances.iter().map(|i| i.sensor_id).collect();
    Ok(IngestSummary {
        sensors: sensors.len(),
        days: days.len(),
        instances: result.instances.len(),
        outliers: result.outliers.flagged,
        skipped_lines: parsed.skipped,
        readings_kept: result.readings_kept,
        dropped_sensors: result.dropped_sensors,
    })
}

pub fn cmd_ingest(s: &Settings, a: &IngestArgs) -> Result<()> {
    let config = resolve_grid(s, &a.grid)?;
    let summary = run_ingest(&a.readings, &a.layout, &a.out, &config)?;
    sidecar(
        &a.out,
        "ingest",
        None,
        &[("readings", &a.readings), ("layout", &a.layout)],
        serde_json::json!({ "grid": config, "summary": summary }),
    )?;
    println!(
        "sensors: {}, days: {}, instances: {}, outliers: {}",
        summary.sensors, summary.days, summary.instances, summary.outliers
    );
    Ok(())
}

pub fn cmd_synth(s: &Settings, a: &SynthArgs) -> Result<()> {
    let name = s.pick_opt(a.method.clone(), "method")?.ok_or_else(|| Error::Config("--method is required".into()))?;
    let method = resolve_method(&name, s, &a.params)?;
    let realizations: u32 = s.pick(a.realizations, "realizations", 1)?;
    let seed_value = s.seed(a.seed)?;
    let instances = read_instances(open(&a.instances)?)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::file(&a.out, e))?;
    for r in 0..realizations {
        let aug = augment(&instances, &method, seed_value.wrapping_add(u64::from(r)))?;
        let path = a.out.join(format!("{}_r{r}.csv", method.name()));
        let mut w = create(&path)?;
        write_instances(&mut w, &aug.instances)?;
        w.flush()?;
        write_json(&a.out.join(format!("{}_r{r}.meta.json", method.name())), &aug.meta)?;
    }
    sidecar(&a.out, "synth", Some(seed_value), &[("instances", &a.instances)], serde_json::json!({ "method": method, "realizations": realizations }))?;
    println!("wrote {realizations} {} realization(s) to {}", method.name(), a.out.display());
    Ok(())
}

pub fn cmd_features(s: &Settings, a: &FeaturesArgs) -> Result<()> {
    let kind: FeatureKind = s
        .pick_opt(a.kind.clone(), "kind")?
        .ok_or_else(|| Error::Config("--kind is required".into()))?
        .parse()
        .map_err(Error::Config)?;
    let instances = read_instances(open(&a.instances)?)?;
    let stats = read_stats(open(&a.stats)?)?;
    let step = grid_step(&instances)?;
    let (config, topo) = resolve_features(s, &a.params, step)?;
    let out_dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let neighbors = match &a.neighbor_map {
        Some(p) => NeighborMap::read(open(p)?)?,
        None => {
            let layout_path = a
                .layout
                .as_ref()
                .ok_or_else(|| Error::Config("--layout is required to build the neighbour map".into()))?;
            let map = build_neighbors(&load_layout(layout_path)?, &instances, step, topo)?;
            let mut w = create(&out_dir.join("neighbors.txt"))?;
            map.write(&mut w)?;
            w.flush()?;
            map
        }
    };
    let realization = s.pick(a.realization, "realization", 0)?;
    let ext = extract_features(&instances, &neighbors, &stats, kind, &config, realization)?;
    let mut w = create(&a.out)?;
    ext.table.write(&mut w)?;
    w.flush()?;
    sidecar(
        out_dir,
        "features",
        None,
        &[("instances", &a.instances), ("stats", &a.stats)],
        serde_json::json!({ "kind": kind, "features": config, "topology": topo }),
    )?;
    println!(
        "{} rows × {} features ({} windows skipped, {} correlations substituted)",
        ext.table.rows.len(),
        ext.table.dimension(),
        ext.skipped_windows,
        ext.table.substituted()
    );
    Ok(())
}

fn run_eval(workdir: &Path, out: &Path, config: &EvalConfig, topo: TopologyConfig) -> Result<bool> {
    let instances = read_instances(open(&workdir.join("instances.csv"))?)?;
    let stats = read_stats(open(&workdir.join("stats.csv"))?)?;
    let layout = load_layout(&workdir.join("layout.txt"))?;
    let step = grid_step(&instances)?;
    let neighbors = build_neighbors(&layout, &instances, step, topo)?;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let mut w = create(&out.join("neighbors.txt"))?;
    neighbors.write(&mut w)?;
    w.flush()?;

    let data = EvalData {
        instances: &instances,
        neighbors: &neighbors,
        stats: &stats,
    };
    let (report, timing) = evaluate(&data, config)?;
    emit_report(&report, out)?;
    write_timing(&timing, &out.join("timing.json"))?;

    println!("{:<16} {:<5} {:<6} {:<6} {:>8} {:>8}", "model", "feat", "train", "test", "mean", "std");
    for c in &report.cells {
        println!(
            "{:<16} {:<5} {:<6} {:<6} {:>8.4} {:>8}",
            c.model.name(),
            c.features.to_string(),
            c.train_synth,
            c.test_synth,
            c.mean,
            c.std.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into())
        );
    }
    let mut all_pass = true;
    for t in &report.targets {
        let tag = match t.status {
            TargetStatus::Pass => "PASS",
            TargetStatus::Fail => {
                all_pass = false;
                "FLAG"
            }
            TargetStatus::NotRun => "n/a ",
        };
        println!("[{tag}] target {}: {} ({})", t.id, t.description, t.detail);
    }
    println!("finished in {:.1} s; report in {}", timing.total, out.display());
    Ok(all_pass)
}

pub fn cmd_eval(s: &Settings, a: &EvalArgs) -> Result<()> {
    let instances = read_instances(open(&a.workdir.join("instances.csv"))?)?;
    let step = grid_step(&instances)?;
    let (config, topo) = resolve_experiment(s, &a.experiment, step, (10, 10))?;
    let out = a.out.clone().unwrap_or_else(|| a.workdir.join("eval"));
    run_eval(&a.workdir, &out, &config, topo)?;
    sidecar(&out, "eval", Some(config.base_seed), &[("workdir", &a.workdir)], serde_json::json!({ "eval": config, "topology": topo }))?;
    Ok(())
}

pub const DEMO_SENSORS: u32 = 10;
pub const DEMO_DAYS: u32 = 10;
pub const DEMO_REALIZATIONS: u32 = 3;

/// simulate → ingest → synth/features (realization 0 written out) → eval.
pub fn cmd_demo(s: &Settings, a: &DemoArgs) -> Result<()> {
    let started = Instant::now();
    let seed_value = s.seed(a.experiment.seed)?;
    let sim = SimConfig {
        sensors: DEMO_SENSORS,
        days: DEMO_DAYS,
        seed: seed_value,
        ..SimConfig::default()
    };
    let raw = a.out.join("raw");
    let work = a.out.join("work");
    let simulated = simulate(&sim)?;
    fs::create_dir_all(&raw).map_err(|e| Error::file(&raw, e))?;
    let mut w = create(&raw.join("data.txt"))?;
    write_readings(&mut w, &simulated.readings)?;
    w.flush()?;
    let mut w = create(&raw.join("mote_locs.txt"))?;
    write_layout(&mut w, &simulated.layout)?;
    w.flush()?;

    let grid = IngestConfig::default();
    let summary = run_ingest(&raw.join("data.txt"), &raw.join("mote_locs.txt"), &work, &grid)?;
    println!(
        "sensors: {}, days: {}, instances: {}, outliers: {}",
        summary.sensors, summary.days, summary.instances, summary.outliers
    );

    let (config, topo) = resolve_experiment(s, &a.experiment, grid.step, (DEMO_REALIZATIONS, 10))?;
    let instances = read_instances(open(&work.join("instances.csv"))?)?;
    let stats = read_stats(open(&work.join("stats.csv"))?)?;
    let neighbors = build_neighbors(&simulated.layout, &instances, grid.step, topo)?;
    let features_dir = a.out.join("features");
    for method in &config.methods {
        let aug = augment(&instances, method, config.base_seed)?;
        for &kind in &config.feature_kinds {
            let ext = extract_features(&aug.instances, &neighbors, &stats, kind, &config.features, 0)?;
            let mut w = create(&features_dir.join(format!("{}_{kind}_r0.csv", method.name())))?;
            ext.table.write(&mut w)?;
            w.flush()?;
        }
    }

    let all_pass = run_eval(&work, &a.out.join("eval"), &config, topo)?;
    sidecar(&a.out, "demo", Some(seed_value), &[], serde_json::json!({ "simulate": sim, "grid": grid, "eval": config, "topology": topo }))?;
    println!(
        "demo finished in {:.1} s ({})",
        started.elapsed().as_secs_f64(),
        if all_pass { "all targets met" } else { "some targets flagged" }
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let jobs = settings.pick_opt(cli.jobs, "jobs")?;
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&settings, a),
        Command::Ingest(a) => cmd_ingest(&settings, a),
        Command::Synth(a) => cmd_synth(&settings, a),
        Command::Features(a) => cmd_features(&settings, a),
        Command::Eval(a) => cmd_eval(&settings, a),
        Command::Demo(a) => cmd_demo(&settings, a),
    }
}

//! Experiment harness: stratified k-fold cross validation, repetition over
//! synthesis realizations, cross-dataset runs, PCA projections and report
//! emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, FeatureKind, FeatureTable, Standardizer};
use crate::ingest::{Instance, SensorStats};
use crate::models::{fit, stratified_label_mask, Hyperparameters, LabeledSet, ModelKind, ModelSpec, TrainedModel};
use crate::seed;
use crate::synth::{augment, SynthMethod};
use crate::topology::NeighborMap;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// How rows are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Stratified over individual rows.
    #[default]
    Rows,
    /// Whole days stay in one fold.
    Day,
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" | "row" => Ok(Grouping::Rows),
            "day" | "days" => Ok(Grouping::Day),
            other => Err(Error::Config(format!("unknown fold grouping `{other}` (rows or day)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Test indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    pub grouping: Grouping,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// `(train, test)` indices of fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let test = self.folds[f].clone();
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        train.sort_unstable();
        (train, test)
    }
}

/// Shuffles each class and deals it round-robin over the folds, continuing
/// the dealing position from one class to the next so total fold sizes
/// also differ by at most one.
pub fn stratified_kfold(labels: &[u8], folds: usize, seed_value: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Config("cross validation needs at least 2 folds".into()));
    }
    let mut rng = seed::rng(seed_value);
    let mut plan = vec![Vec::new(); folds];
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < folds {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} rows, fewer than {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.iter().enumerate() {
            plan[(offset + j) % folds].push(*i);
        }
        offset += idx.len();
    }
    plan.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan {
        folds: plan,
        seed: seed_value,
        grouping: Grouping::Rows,
    })
}

/// Keeps rows sharing a group key in the same fold. Groups are shuffled and
/// each goes to the fold currently holding the fewest rows.
pub fn grouped_kfold(labels: &[u8], groups: &[i64], folds: usize, seed_value: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Config("cross validation needs at least 2 folds".into()));
    }
    if labels.len() != groups.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: groups.len(),
        });
    }
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(*g).or_default().push(i);
    }
    if members.len() < folds {
        return Err(Error::InsufficientData(format!(
            "{} groups, fewer than {folds} folds",
            members.len()
        )));
    }
    let mut keys: Vec<i64> = members.keys().copied().collect();
    keys.shuffle(&mut seed::rng(seed_value));
    let mut plan = vec![Vec::new(); folds];
    for k in keys {
        let target = (0..folds).min_by_key(|&f| (plan[f].len(), f)).expect("folds >= 2");
        plan[target].extend_from_slice(&members[&k]);
    }
    for (f, idx) in plan.iter_mut().enumerate() {
        idx.sort_unstable();
        for class in [0u8, 1] {
            if !idx.iter().any(|&i| labels[i] == class) && labels.contains(&class) {
                return Err(Error::InsufficientData(format!("day-grouped fold {f} has no rows of class {class}")));
            }
        }
    }
    Ok(FoldPlan {
        folds: plan,
        seed: seed_value,
        grouping: Grouping::Day,
    })
}

/// Correct classifications over all classifications.
pub fn accuracy(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("accuracy of zero predictions".into()));
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// A model fitted inside one fold together with the scaling learned from
/// that fold's training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel {
    pub standardizer: Standardizer,
    pub model: TrainedModel,
}

impl FoldModel {
    pub fn classify(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        self.model.classify(&self.standardizer.transform(rows))
    }
}

/// Fits `spec` using only `train` rows of `x`. Label propagation sees a
/// stratified `labeled_fraction` of the training labels.
pub fn fit_fold(x: &[Vec<f64>], y: &[u8], train: &[usize], spec: &ModelSpec) -> Result<FoldModel> {
    let standardizer = Standardizer::fit(x, train)?;
    let features: Vec<Vec<f64>> = train.iter().map(|&i| standardizer.transform_row(&x[i])).collect();
    let labels: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let mask = if spec.kind == ModelKind::LabelProp {
        stratified_label_mask(&labels, spec.hyper.labelprop.labeled_fraction, seed::derive(spec.seed, &[0x4c50]))
    } else {
        Vec::new()
    };
    let set = LabeledSet::with_mask(features, labels, mask)?;
    Ok(FoldModel {
        standardizer,
        model: fit(spec, &set)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_accuracies: Vec<f64>,
    /// Pooled accuracy over every test-fold prediction.
    pub accuracy: f64,
}

/// Cross-validates `spec`; fold `f` fits with seed `derive(spec.seed, [f])`.
pub fn run_cv(x: &[Vec<f64>], y: &[u8], spec: &ModelSpec, plan: &FoldPlan) -> Result<CvResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let per_fold: Vec<(usize, usize)> = (0..plan.len())
        .into_par_iter()
        .map(|f| {
            let (train, test) = plan.split(f);
            let fold_spec = ModelSpec {
                seed: seed::derive(spec.seed, &[f as u64]),
                ..*spec
            };
            let model = fit_fold(x, y, &train, &fold_spec)?;
            let rows: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
            let pred = model.classify(&rows)?;
            let correct = pred.iter().zip(&test).filter(|(p, &i)| **p == y[i]).count();
            Ok((correct, test.len()))
        })
        .collect::<Result<_>>()?;
    let total: usize = per_fold.iter().map(|p| p.1).sum();
    let correct: usize = per_fold.iter().map(|p| p.0).sum();
    Ok(CvResult {
        fold_accuracies: per_fold.iter().map(|&(c, n)| c as f64 / n as f64).collect(),
        accuracy: correct as f64 / total as f64,
    })
}

/// Trains on all of `train` and scores all of `test`.
pub fn cross_dataset_eval(train: &FeatureTable, test: &FeatureTable, spec: &ModelSpec) -> Result<f64> {
    if train.kind != test.kind {
        return Err(Error::Config(format!(
            "feature kinds differ: trained on {}, tested on {}",
            train.kind, test.kind
        )));
    }
    if train.dimension() != test.dimension() {
        return Err(Error::DimensionMismatch {
            expected: train.dimension(),
            actual: test.dimension(),
        });
    }
    let x = train.matrix();
    let y = train.labels();
    let all: Vec<usize> = (0..x.len()).collect();
    let model = fit_fold(&x, &y, &all, spec)?;
    accuracy(&model.classify(&test.matrix())?, &test.labels())
}

/// Mean and sample standard deviation (`None` for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub projection: Vec<[f64; 2]>,
    pub explained: [f64; 2],
    /// Loadings of the two axes over the input columns.
    pub axes: [Vec<f64>; 2],
}

/// Projects the column-standardized matrix onto its top two principal axes.
/// Each axis is signed so its largest-magnitude loading is positive.
pub fn pca2d(x: &[Vec<f64>]) -> Result<Pca> {
    if x.len() < 2 {
        return Err(Error::InsufficientData("PCA needs at least 2 rows".into()));
    }
    let d = x[0].len();
    crate::models::check_dimension(x, d)?;
    let z = Standardizer::fit_all(x)?.transform(x);
    let n = z.len();
    let m = DMatrix::from_fn(n, d, |i, j| z[i][j]);
    let cov = (m.transpose() * &m) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let clean = |v: f64| if v <= top * 1e-12 { 0.0 } else { v };
    let total: f64 = eig.eigenvalues.iter().map(|&v| clean(v)).sum();
    let axis = |k: usize| -> (Vec<f64>, f64) {
        let Some(&col) = order.get(k) else {
            return (vec![0.0; d], 0.0);
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        let frac = if total > 0.0 { clean(eig.eigenvalues[col]) / total } else { 0.0 };
        (v, frac)
    };
    let (a0, e0) = axis(0);
    let (a1, e1) = axis(1);
    let projection = z
        .iter()
        .map(|r| [crate::models::dot(r, &a0), crate::models::dot(r, &a1)])
        .collect();
    Ok(Pca {
        projection,
        explained: [e0, e1],
        axes: [a0, a1],
    })
}

/// Everything an evaluation needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub models: Vec<ModelKind>,
    pub feature_kinds: Vec<FeatureKind>,
    pub methods: Vec<SynthMethod>,
    /// `(train method, test method)` names for cross-dataset cells.
    pub cross: Vec<(String, String)>,
    pub folds: usize,
    pub grouping: Grouping,
    pub realizations: u32,
    /// Realization `r` synthesizes with seed `base_seed + r`.
    pub base_seed: u64,
    pub hyper: Hyperparameters,
    pub features: FeatureConfig,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("--folds must be at least 2".into()));
        }
        if self.realizations == 0 {
            return Err(Error::Config("need at least one realization".into()));
        }
        if self.models.is_empty() || self.feature_kinds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("nothing to evaluate".into()));
        }
        self.hyper.validate()?;
        let names: BTreeSet<&str> = self.methods.iter().map(SynthMethod::name).collect();
        if names.len() != self.methods.len() {
            return Err(Error::Config("synthesis methods must be distinct".into()));
        }
        for (a, b) in &self.cross {
            if !names.contains(a.as_str()) || !names.contains(b.as_str()) {
                return Err(Error::Config(format!("cross pair {a}:{b} names a method not being synthesized")));
            }
        }
        Ok(())
    }
}

/// One accuracy bar: CV cells have equal train/test synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: ModelKind,
    pub features: FeatureKind,
    pub train_synth: String,
    pub test_synth: String,
    /// One accuracy per realization.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample std over realizations; absent for a single realization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl Cell {
    pub fn is_cross(&self) -> bool {
        self.train_synth != self.test_synth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetStatus {
    Pass,
    Fail,
    /// Required cells were not part of the run.
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCheck {
    pub id: u32,
    pub description: String,
    pub status: TargetStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub instances: usize,
    pub trustworthy: usize,
    pub outliers: usize,
    /// Feature rows per (method, kind) in realization 0.
    pub rows: BTreeMap<String, usize>,
    pub skipped_windows: BTreeMap<String, usize>,
    pub substituted: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: EvalConfig,
    pub dataset: DatasetSummary,
    pub cells: Vec<Cell>,
    pub targets: Vec<TargetCheck>,
}

impl EvalReport {
    pub fn cell(&self, model: ModelKind, features: FeatureKind, train: &str, test: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.features == features && c.train_synth == train && c.test_synth == test)
    }
}

/// Wall-clock seconds per cell, kept apart from the report so reports stay
/// reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub synthesis_and_features: f64,
    pub cells: Vec<(String, f64)>,
    pub total: f64,
}

/// Inputs shared by every realization.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub instances: &'a [Instance],
    pub neighbors: &'a NeighborMap,
    pub stats: &'a BTreeMap<u32, SensorStats>,
}

/// Augments with `method` using seed `base_seed + realization` and extracts
/// one feature table.
pub fn realization_features(
    data: &EvalData<'_>,
    method: &SynthMethod,
    kind: FeatureKind,
    features: &FeatureConfig,
    base_seed: u64,
    realization: u32,
) -> Result<(FeatureTable, usize)> {
    let augmented = augment(data.instances, method, base_seed.wrapping_add(u64::from(realization)))?;
    let ext = extract_features(&augmented.instances, data.neighbors, data.stats, kind, features, realization)?;
    if ext.table.rows.is_empty() {
        return Err(Error::InsufficientData("no feature rows survived extraction".into()));
    }
    Ok((ext.table, ext.skipped_windows))
}

fn plan_for(table: &FeatureTable, config: &EvalConfig, seed_value: u64) -> Result<FoldPlan> {
    let labels = table.labels();
    match config.grouping {
        Grouping::Rows => stratified_kfold(&labels, config.folds, seed_value),
        Grouping::Day => {
            let days: Vec<i64> = table.rows.iter().map(|r| r.day_index).collect();
            grouped_kfold(&labels, &days, config.folds, seed_value)
        }
    }
}

fn model_seed(base: u64, realization: u32, kind: ModelKind, kind_features: FeatureKind, extra: u64) -> u64 {
    seed::derive(base, &[u64::from(realization), kind as u64, kind_features as u64, extra])
}

/// Runs every configured CV and cross-dataset cell over all realizations.
pub fn evaluate(data: &EvalData<'_>, config: &EvalConfig) -> Result<(EvalReport, Timing)> {
    config.validate()?;
    let started = Instant::now();
    let method_by_name: BTreeMap<&str, &SynthMethod> = config.methods.iter().map(|m| (m.name(), m)).collect();

    let mut table_keys = Vec::new();
    for r in 0..config.realizations {
        for m in &config.methods {
            for &k in &config.feature_kinds {
                table_keys.push((m.name(), k, r));
            }
        }
    }
    let tables: BTreeMap<(&str, FeatureKind, u32), (FeatureTable, usize)> = table_keys
        .par_iter()
        .map(|&(m, k, r)| {
            let t = realization_features(data, method_by_name[m], k, &config.features, config.base_seed, r)?;
            Ok(((m, k, r), t))
        })
        .collect::<Result<_>>()?;
    let prep = started.elapsed().as_secs_f64();

    #[derive(Clone, Copy)]
    struct Job<'a> {
        model: ModelKind,
        kind: FeatureKind,
        train: &'a str,
        test: &'a str,
        r: u32,
    }
    let mut cell_keys = Vec::new();
    for &kind in &config.feature_kinds {
        for m in &config.methods {
            for &model in &config.models {
                cell_keys.push((model, kind, m.name(), m.name()));
            }
        }
        for (a, b) in &config.cross {
            for &model in &config.models {
                cell_keys.push((model, kind, a.as_str(), b.as_str()));
            }
        }
    }
    let jobs: Vec<Job> = cell_keys
        .iter()
        .flat_map(|&(model, kind, train, test)| {
            (0..config.realizations).map(move |r| Job { model, kind, train, test, r })
        })
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|job| {
            let t0 = Instant::now();
            let train = &tables[&(job.train, job.kind, job.r)].0;
            let spec = ModelSpec {
                kind: job.model,
                hyper: config.hyper,
                seed: model_seed(config.base_seed, job.r, job.model, job.kind, u64::from(job.train != job.test)),
            };
            let acc = if job.train == job.test {
                let plan = plan_for(train, config, seed::derive(config.base_seed, &[u64::from(job.r), 0xF01D]))?;
                run_cv(&train.matrix(), &train.labels(), &spec, &plan)?.accuracy
            } else {
                cross_dataset_eval(train, &tables[&(job.test, job.kind, job.r)].0, &spec)?
            };
            Ok((acc, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(cell_keys.len());
    let mut timing = Timing {
        synthesis_and_features: prep,
        ..Timing::default()
    };
    let per = config.realizations as usize;
    for (i, &(model, kind, train, test)) in cell_keys.iter().enumerate() {
        let chunk = &results[i * per..(i + 1) * per];
        let accuracies: Vec<f64> = chunk.iter().map(|c| c.0).collect();
        let (mean, std) = mean_std(&accuracies);
        timing
            .cells
            .push((format!("{model}/{kind}/{train}/{test}"), chunk.iter().map(|c| c.1).sum()));
        cells.push(Cell {
            model,
            features: kind,
            train_synth: train.to_string(),
            test_synth: test.to_string(),
            accuracies,
            mean,
            std,
        });
    }

    let mut dataset = DatasetSummary {
        instances: data.instances.len(),
        trustworthy: data.instances.iter().filter(|i| i.label.is_trustworthy()).count(),
        outliers: data.instances.iter().filter(|i| !i.label.is_trustworthy()).count(),
        rows: BTreeMap::new(),
        skipped_windows: BTreeMap::new(),
        substituted: BTreeMap::new(),
    };
    for ((m, k, r), (t, skipped)) in &tables {
        if *r == 0 {
            let key = format!("{m}/{k}");
            dataset.rows.insert(key.clone(), t.rows.len());
            dataset.skipped_windows.insert(key.clone(), *skipped);
            dataset.substituted.insert(key, t.substituted());
        }
    }
    let mut report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        dataset,
        cells,
        targets: Vec::new(),
    };
    report.targets = check_targets(&report);
    timing.total = started.elapsed().as_secs_f64();
    Ok((report, timing))
}

/// Quantitative expectations checked against a finished report.
pub fn check_targets(report: &EvalReport) -> Vec<TargetCheck> {
    use FeatureKind::{Correlation, Dst};
    use ModelKind::*;
    let cv = |m: ModelKind, k: FeatureKind, s: &str| report.cell(m, k, s, s).map(|c| c.mean);
    let mut out = Vec::new();
    let mut push = |id: u32, description: &str, outcome: Option<(bool, String)>| {
        let (status, detail) = match outcome {
            Some((ok, d)) => (if ok { TargetStatus::Pass } else { TargetStatus::Fail }, d),
            None => (TargetStatus::NotRun, "required cells missing".to_string()),
        };
        out.push(TargetCheck {
            id,
            description: description.to_string(),
            status,
            detail,
        });
    };

    push(
        5,
        "MLP on RWI + correlation >= 0.85 and SVM within 0.05 of MLP",
        (|| {
            let mlp = cv(Mlp, Correlation, "rwi")?;
            let svm = cv(LinearSvm, Correlation, "rwi")?;
            Some((mlp >= 0.85 && (svm - mlp).abs() <= 0.05, format!("mlp {mlp:.4}, svm {svm:.4}")))
        })(),
    );

    push(
        6,
        "|svm-via-kmeans - kmeans| <= 0.02 in every CV cell",
        (|| {
            let mut worst: Option<(f64, String)> = None;
            for c in report.cells.iter().filter(|c| c.model == KMeans && !c.is_cross()) {
                let other = report.cell(SvmViaKMeans, c.features, &c.train_synth, &c.test_synth)?;
                let gap = (other.mean - c.mean).abs();
                if worst.as_ref().is_none_or(|w| gap > w.0) {
                    worst = Some((gap, format!("{}/{}", c.features, c.train_synth)));
                }
            }
            let (gap, at) = worst?;
            Some((gap <= 0.02, format!("largest gap {gap:.4} at {at}")))
        })(),
    );

    push(
        7,
        "k-means and GMM at least 0.10 below the best supervised model on RWI + correlation",
        (|| {
            let best = cv(Mlp, Correlation, "rwi")?.max(cv(LinearSvm, Correlation, "rwi")?);
            let unsup = cv(KMeans, Correlation, "rwi")?.max(cv(Gmm, Correlation, "rwi")?);
            Some((best - unsup >= 0.10, format!("best supervised {best:.4}, best unsupervised {unsup:.4}")))
        })(),
    );

    push(
        8,
        "correlation >= DST in every matched CV cell",
        {
            let mut failures = Vec::new();
            let mut matched = 0;
            for c in report.cells.iter().filter(|c| c.features == Correlation && !c.is_cross()) {
                if let Some(d) = report.cell(c.model, Dst, &c.train_synth, &c.test_synth) {
                    matched += 1;
                    if c.mean < d.mean {
                        failures.push(format!("{}/{} {:.4}<{:.4}", c.model, c.train_synth, c.mean, d.mean));
                    }
                }
            }
            (matched > 0).then(|| (failures.is_empty(), format!("{matched} cells, violations: [{}]", failures.join(", "))))
        },
    );

    push(
        9,
        "cross-dataset RWI->Drift beats Drift->RWI for SVM, MLP, label propagation (correlation)",
        (|| {
            let mut parts = Vec::new();
            let mut ok = true;
            for m in [LinearSvm, Mlp, LabelProp] {
                let a = report.cell(m, Correlation, "rwi", "drift")?.mean;
                let b = report.cell(m, Correlation, "drift", "rwi")?.mean;
                ok &= a > b;
                parts.push(format!("{m} {a:.4} vs {b:.4}"));
            }
            Some((ok, parts.join(", ")))
        })(),
    );

    push(
        10,
        "realization std <= 0.02 in every cell",
        (|| {
            let worst = report
                .cells
                .iter()
                .filter_map(|c| c.std.map(|s| (s, c)))
                .max_by(|a, b| a.0.total_cmp(&b.0))?;
            Some((
                worst.0 <= 0.02,
                format!(
                    "largest std {:.4} at {}/{}/{}->{}",
                    worst.0, worst.1.model, worst.1.features, worst.1.train_synth, worst.1.test_synth
                ),
            ))
        })(),
    );

    push(
        11,
        "label propagation within 0.05 of the best supervised model on RWI + correlation",
        (|| {
            let best = cv(Mlp, Correlation, "rwi")?.max(cv(LinearSvm, Correlation, "rwi")?);
            let lp = cv(LabelProp, Correlation, "rwi")?;
            Some((best - lp <= 0.05, format!("labelprop {lp:.4}, best supervised {best:.4}")))
        })(),
    );
    out
}

pub const PLOT_HEADER: &str = "model,features,train_synth,test_synth,realization,accuracy";

/// Writes `report.json`, `plot_data.csv` (one row per cell and realization)
/// and `summary.csv` (one row per cell) into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::file(path, e))
    };
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write("report.json", json)?;

    let mut plot = Vec::new();
    writeln!(plot, "{PLOT_HEADER}")?;
    for c in &report.cells {
        for (r, a) in c.accuracies.iter().enumerate() {
            writeln!(plot, "{},{},{},{},{r},{a}", c.model, c.features, c.train_synth, c.test_synth)?;
        }
    }
    write("plot_data.csv", plot)?;

    let repeated = report.cells.iter().any(|c| c.std.is_some());
    let mut summary = Vec::new();
    write!(summary, "model,features,train_synth,test_synth,realizations,mean")?;
    writeln!(summary, "{}", if repeated { ",std" } else { "" })?;
    for c in &report.cells {
        write!(
            summary,
            "{},{},{},{},{},{}",
            c.model,
            c.features,
            c.train_synth,
            c.test_synth,
            c.accuracies.len(),
            c.mean
        )?;
        if repeated {
            write!(summary, ",{}", c.std.map(|s| s.to_string()).unwrap_or_default())?;
        }
        writeln!(summary)?;
    }
    write("summary.csv", summary)
}

pub fn write_timing(timing: &Timing, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(timing)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

/// Parses `plot_data.csv` back into `(model, features, train, test, realization, accuracy)`.
pub fn read_plot_data<R: BufRead>(reader: R) -> Result<Vec<(String, String, String, String, u32, f64)>> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::format(1, "missing header"))??;
    if header != PLOT_HEADER {
        return Err(Error::format(1, "unexpected plot-data header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::format(i + 2, "expected 6 columns"));
        }
        out.push((
            f[0].to_string(),
            f[1].to_string(),
            f[2].to_string(),
            f[3].to_string(),
            f[4].parse().map_err(|_| Error::format(i + 2, "bad realization"))?,
            f[5].parse().map_err(|_| Error::format(i + 2, "bad accuracy"))?,
        ));
    }
    Ok(out)
}

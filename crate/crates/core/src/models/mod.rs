//! Trust classifiers: clustering, supervised and semi-supervised learners
//! behind one fit/classify interface, plus a versioned JSON model format.

pub mod gmm;
pub mod kmeans;
pub mod labelprop;
pub mod mlp;
pub mod svm;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
pub use gmm::{gmm_fit, GmmModel, GmmParams};
pub use kmeans::{kmeans_fit, KMeansModel, KMeansParams};
pub use labelprop::{labelprop_fit, LabelPropModel, LabelPropParams};
pub use mlp::{mlp_fit, Mlp, MlpParams};
pub use svm::{svm_fit, LinearSvm, SvmParams};

pub const MODEL_FORMAT: &str = "trustforge-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dimension(x: &[Vec<f64>], dim: usize) -> Result<()> {
    match x.iter().find(|r| r.len() != dim) {
        Some(r) => Err(Error::DimensionMismatch {
            expected: dim,
            actual: r.len(),
        }),
        None => Ok(()),
    }
}

/// Feature rows with binary labels (0 trustworthy, 1 untrustworthy).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    /// `true` hides the row's label from semi-supervised fitting. Empty
    /// means every row is labeled.
    pub unlabeled: Vec<bool>,
}

impl LabeledSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        Self::with_mask(features, labels, Vec::new())
    }

    pub fn with_mask(features: Vec<Vec<f64>>, labels: Vec<u8>, unlabeled: Vec<bool>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        if !unlabeled.is_empty() && unlabeled.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: unlabeled.len(),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Config("labels must be 0 or 1".into()));
        }
        if let Some(first) = features.first() {
            check_dimension(&features, first.len())?;
        }
        Ok(Self {
            features,
            labels,
            unlabeled,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn visible_labels(&self) -> Vec<Option<u8>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &l)| if self.unlabeled.get(i).copied().unwrap_or(false) { None } else { Some(l) })
            .collect()
    }
}

/// Unlabeled mask keeping `fraction` of each class labeled (at least one
/// row per non-empty class).
pub fn stratified_label_mask(labels: &[u8], fraction: f64, seed_value: u64) -> Vec<bool> {
    let mut rng = seed::rng(seed_value);
    let mut unlabeled = vec![true; labels.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let keep = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len());
        for &i in &idx[..keep] {
            unlabeled[i] = false;
        }
    }
    unlabeled
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "kmeans")]
    KMeans,
    #[serde(rename = "gmm")]
    Gmm,
    #[serde(rename = "svm")]
    LinearSvm,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "labelprop")]
    LabelProp,
    #[serde(rename = "svm-via-kmeans")]
    SvmViaKMeans,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::LinearSvm,
        ModelKind::Mlp,
        ModelKind::KMeans,
        ModelKind::Gmm,
        ModelKind::SvmViaKMeans,
        ModelKind::LabelProp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::KMeans => "kmeans",
            ModelKind::Gmm => "gmm",
            ModelKind::LinearSvm => "svm",
            ModelKind::Mlp => "mlp",
            ModelKind::LabelProp => "labelprop",
            ModelKind::SvmViaKMeans => "svm-via-kmeans",
        }
    }

    /// Fit without labels and name clusters afterwards.
    pub fn is_clustering(&self) -> bool {
        matches!(self, ModelKind::KMeans | ModelKind::Gmm | ModelKind::SvmViaKMeans)
    }

    pub fn is_supervised(&self) -> bool {
        matches!(self, ModelKind::LinearSvm | ModelKind::Mlp)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub kmeans: KMeansParams,
    pub gmm: GmmParams,
    pub svm: SvmParams,
    pub mlp: MlpParams,
    pub labelprop: LabelPropParams,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.kmeans.k != 2 || self.gmm.k != 2 {
            return bad("trust classification needs k = 2 clusters");
        }
        if self.kmeans.max_iter == 0 || self.gmm.max_iter == 0 || !(self.kmeans.tol >= 0.0) || !(self.gmm.tol >= 0.0) {
            return bad("clustering iteration limits must be positive");
        }
        if !(self.gmm.ridge > 0.0) {
            return bad("GMM ridge must be positive");
        }
        if !(self.svm.c > 0.0) || self.svm.epochs == 0 {
            return bad("SVM needs C > 0 and epochs >= 1");
        }
        let m = &self.mlp;
        if m.hidden == 0
            || m.batch_size == 0
            || m.max_epochs == 0
            || !(m.learning_rate > 0.0)
            || !(0.0..1.0).contains(&m.momentum)
            || !(0.0..1.0).contains(&m.validation_fraction)
        {
            return bad("MLP hyperparameters out of range");
        }
        let l = &self.labelprop;
        if l.k_graph == 0 || !(0.0..1.0).contains(&l.alpha) || !(l.labeled_fraction > 0.0 && l.labeled_fraction <= 1.0) {
            return bad("label propagation hyperparameters out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyper: Hyperparameters,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self {
            kind,
            hyper: Hyperparameters::default(),
            seed,
        }
    }
}

/// Naming of two clusters as trust classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterMap {
    /// `false`: cluster 0 → class 0, cluster 1 → class 1.
    pub swapped: bool,
}

impl ClusterMap {
    pub fn class_of(&self, cluster: usize) -> u8 {
        u8::from((cluster == 1) != self.swapped)
    }

    pub fn apply(&self, clusters: &[usize]) -> Vec<u8> {
        clusters.iter().map(|&c| self.class_of(c)).collect()
    }
}

/// Picks the bijection with the higher reference accuracy; ties keep the
/// identity. Returns the map and its accuracy.
pub fn cluster_label_map(clusters: &[usize], labels: &[u8]) -> (ClusterMap, f64) {
    let n = clusters.len().min(labels.len());
    let agree = clusters
        .iter()
        .zip(labels)
        .filter(|(&c, &l)| ClusterMap::default().class_of(c) == l)
        .count();
    let swapped = n - agree > agree;
    let best = if swapped { n - agree } else { agree };
    (ClusterMap { swapped }, if n == 0 { 0.0 } else { best as f64 / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    /// Whether the fit met its stopping tolerance. Fixed-schedule learners
    /// (SVM) report `true` once the schedule completes.
    pub converged: bool,
    /// Final objective: inertia, mean log-likelihood, regularized hinge,
    /// training cross-entropy, or none for label propagation.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learned {
    KMeans { model: KMeansModel, map: ClusterMap },
    Gmm { model: GmmModel, map: ClusterMap },
    Svm(LinearSvm),
    Mlp(Mlp),
    LabelProp(LabelPropModel),
    SvmViaKMeans { kmeans: KMeansModel, map: ClusterMap, svm: LinearSvm },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub learned: Learned,
    pub info: FitInfo,
}

fn cluster_fit(set: &LabeledSet, spec: &ModelSpec) -> Result<(KMeansModel, ClusterMap)> {
    let km = kmeans_fit(&set.features, &spec.hyper.kmeans, spec.seed)?;
    let (map, _) = cluster_label_map(&km.predict(&set.features)?, &set.labels);
    Ok((km, map))
}

/// Fits `spec` on `set`. Clustering kinds use labels only to name clusters;
/// label propagation sees only rows not masked as unlabeled.
pub fn fit(spec: &ModelSpec, set: &LabeledSet) -> Result<TrainedModel> {
    spec.hyper.validate()?;
    if set.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let h = &spec.hyper;
    let (learned, info) = match spec.kind {
        ModelKind::KMeans => {
            let (model, map) = cluster_fit(set, spec)?;
            let info = FitInfo {
                iterations: model.iterations,
                converged: model.converged,
                objective: model.inertia_history.last().copied(),
            };
            (Learned::KMeans { model, map }, info)
        }
        ModelKind::Gmm => {
            let model = gmm_fit(&set.features, &h.gmm, spec.seed)?;
            let (map, _) = cluster_label_map(&model.predict(&set.features)?, &set.labels);
            let info = FitInfo {
                iterations: model.iterations,
                converged: model.converged,
                objective: model.log_likelihood.last().copied(),
            };
            (Learned::Gmm { model, map }, info)
        }
        ModelKind::LinearSvm => {
            let model = svm_fit(&set.features, &set.labels, &h.svm, spec.seed)?;
            let info = FitInfo {
                iterations: model.epochs,
                converged: true,
                objective: Some(model.objective),
            };
            (Learned::Svm(model), info)
        }
        ModelKind::Mlp => {
            let model = mlp_fit(&set.features, &set.labels, &h.mlp, spec.seed)?;
            let info = FitInfo {
                iterations: model.train_loss.len(),
                converged: model.stopped_early,
                objective: model.train_loss.get(model.best_epoch).copied(),
            };
            (Learned::Mlp(model), info)
        }
        ModelKind::LabelProp => {
            let model = labelprop_fit(&set.features, &set.visible_labels(), &h.labelprop)?;
            let info = FitInfo {
                iterations: model.iterations,
                converged: model.converged,
                objective: None,
            };
            (Learned::LabelProp(model), info)
        }
        ModelKind::SvmViaKMeans => {
            let (kmeans, map) = cluster_fit(set, spec)?;
            let induced = map.apply(&kmeans.predict(&set.features)?);
            let svm = svm_fit(&set.features, &induced, &h.svm, seed::derive(spec.seed, &[1]))?;
            let info = FitInfo {
                iterations: kmeans.iterations + svm.epochs,
                converged: kmeans.converged,
                objective: Some(svm.objective),
            };
            (Learned::SvmViaKMeans { kmeans, map, svm }, info)
        }
    };
    Ok(TrainedModel {
        spec: *spec,
        learned,
        info,
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn dimension(&self) -> usize {
        match &self.learned {
            Learned::KMeans { model, .. } => model.dimension(),
            Learned::Gmm { model, .. } => model.dimension(),
            Learned::Svm(m) => m.dimension(),
            Learned::Mlp(m) => m.inputs,
            Learned::LabelProp(m) => m.dimension(),
            Learned::SvmViaKMeans { svm, .. } => svm.dimension(),
        }
    }

    /// Binary trust labels; SVM decisions of exactly 0 and MLP outputs of
    /// exactly 0.5 go to class 1.
    pub fn classify(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        match &self.learned {
            Learned::KMeans { model, map } => Ok(map.apply(&model.predict(x)?)),
            Learned::Gmm { model, map } => Ok(map.apply(&model.predict(x)?)),
            Learned::Svm(m) => m.classify(x),
            Learned::Mlp(m) => m.classify(x),
            Learned::LabelProp(m) => m.classify(x),
            Learned::SvmViaKMeans { svm, .. } => svm.classify(x),
        }
    }

    pub fn to_record(&self) -> ModelRecord {
        let mut arrays = BTreeMap::new();
        let mut put = |name: &str, a: Array| {
            arrays.insert(name.to_string(), a);
        };
        let mut map_flag = None;
        match &self.learned {
            Learned::KMeans { model, map } => {
                put_kmeans(&mut put, model);
                map_flag = Some(map.swapped);
            }
            Learned::Gmm { model, map } => {
                put("weights", Array::vector(&model.weights));
                put("means", Array::matrix(&model.means));
                let d = model.dimension();
                put(
                    "covariances",
                    Array {
                        shape: vec![model.covariances.len(), d, d],
                        data: model.covariances.concat(),
                    },
                );
                put("log_likelihood", Array::vector(&model.log_likelihood));
                map_flag = Some(map.swapped);
            }
            Learned::Svm(m) => put_svm(&mut put, "", m),
            Learned::Mlp(m) => {
                put(
                    "w1",
                    Array {
                        shape: vec![m.hidden, m.inputs],
                        data: m.w1.clone(),
                    },
                );
                put("b1", Array::vector(&m.b1));
                put("w2", Array::vector(&m.w2));
                put("b2", Array::vector(&[m.b2]));
                put("train_loss", Array::vector(&m.train_loss));
                put("validation_loss", Array::vector(&m.validation_loss));
                put("best_epoch", Array::vector(&[m.best_epoch as f64]));
                put("stopped_early", Array::vector(&[f64::from(u8::from(m.stopped_early))]));
            }
            Learned::LabelProp(m) => {
                put("nodes", Array::matrix(&m.nodes));
                put(
                    "scores",
                    Array {
                        shape: vec![m.scores.len(), 2],
                        data: m.scores.iter().flatten().copied().collect(),
                    },
                );
                put("bandwidth", Array::vector(&[m.bandwidth]));
                put("k_graph", Array::vector(&[m.k_graph as f64]));
            }
            Learned::SvmViaKMeans { kmeans, map, svm } => {
                put_kmeans(&mut put, kmeans);
                put_svm(&mut put, "svm_", svm);
                map_flag = Some(map.swapped);
            }
        }
        ModelRecord {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            kind: self.spec.kind,
            seed: self.spec.seed,
            hyperparameters: self.spec.hyper,
            cluster_map: map_flag.map(|swapped| ClusterMap { swapped }),
            info: self.info,
            arrays,
        }
    }

    pub fn from_record(record: ModelRecord) -> Result<Self> {
        if record.format != MODEL_FORMAT || record.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format {} v{}",
                record.format, record.version
            )));
        }
        let a = &record.arrays;
        let map = || {
            record
                .cluster_map
                .ok_or_else(|| Error::Config("model record lacks a cluster map".into()))
        };
        let kmeans = |_: &ModelRecord| -> Result<KMeansModel> {
            Ok(KMeansModel {
                centroids: get(a, "centroids", 2)?.rows(),
                inertia_history: get(a, "inertia_history", 1)?.data.clone(),
                iterations: scalar(a, "kmeans_iterations")? as usize,
                converged: scalar(a, "kmeans_converged")? != 0.0,
            })
        };
        let learned = match record.kind {
            ModelKind::KMeans => Learned::KMeans {
                model: kmeans(&record)?,
                map: map()?,
            },
            ModelKind::Gmm => {
                let cov = get(a, "covariances", 3)?;
                let block = cov.shape[1] * cov.shape[2];
                Learned::Gmm {
                    model: GmmModel {
                        weights: get(a, "weights", 1)?.data.clone(),
                        means: get(a, "means", 2)?.rows(),
                        covariances: cov.data.chunks(block.max(1)).map(<[f64]>::to_vec).collect(),
                        log_likelihood: get(a, "log_likelihood", 1)?.data.clone(),
                        iterations: record.info.iterations,
                        converged: record.info.converged,
                    },
                    map: map()?,
                }
            }
            ModelKind::LinearSvm => Learned::Svm(take_svm(a, "", &record)?),
            ModelKind::Mlp => {
                let w1 = get(a, "w1", 2)?;
                Learned::Mlp(Mlp {
                    inputs: w1.shape[1],
                    hidden: w1.shape[0],
                    w1: w1.data.clone(),
                    b1: get(a, "b1", 1)?.data.clone(),
                    w2: get(a, "w2", 1)?.data.clone(),
                    b2: scalar(a, "b2")?,
                    train_loss: get(a, "train_loss", 1)?.data.clone(),
                    validation_loss: get(a, "validation_loss", 1)?.data.clone(),
                    best_epoch: scalar(a, "best_epoch")? as usize,
                    stopped_early: scalar(a, "stopped_early")? != 0.0,
                })
            }
            ModelKind::LabelProp => Learned::LabelProp(LabelPropModel {
                nodes: get(a, "nodes", 2)?.rows(),
                scores: get(a, "scores", 2)?.data.chunks(2).map(|c| [c[0], c[1]]).collect(),
                bandwidth: scalar(a, "bandwidth")?,
                k_graph: scalar(a, "k_graph")? as usize,
                iterations: record.info.iterations,
                converged: record.info.converged,
            }),
            ModelKind::SvmViaKMeans => Learned::SvmViaKMeans {
                kmeans: kmeans(&record)?,
                map: map()?,
                svm: take_svm(a, "svm_", &record)?,
            },
        };
        Ok(Self {
            spec: ModelSpec {
                kind: record.kind,
                hyper: record.hyperparameters,
                seed: record.seed,
            },
            learned,
            info: record.info,
        })
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_record())?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        Self::from_record(serde_json::from_reader(r)?)
    }
}

fn put_kmeans(put: &mut impl FnMut(&str, Array), m: &KMeansModel) {
    put("centroids", Array::matrix(&m.centroids));
    put("inertia_history", Array::vector(&m.inertia_history));
    put("kmeans_iterations", Array::vector(&[m.iterations as f64]));
    put("kmeans_converged", Array::vector(&[f64::from(u8::from(m.converged))]));
}

fn put_svm(put: &mut impl FnMut(&str, Array), prefix: &str, m: &LinearSvm) {
    put(&format!("{prefix}weights"), Array::vector(&m.weights));
    put(&format!("{prefix}bias"), Array::vector(&[m.bias]));
    put(&format!("{prefix}lambda"), Array::vector(&[m.lambda]));
    put(
        &format!("{prefix}objective"),
        Array::vector(&[m.initial_objective, m.objective]),
    );
}

fn take_svm(a: &BTreeMap<String, Array>, prefix: &str, record: &ModelRecord) -> Result<LinearSvm> {
    let obj = get(a, &format!("{prefix}objective"), 1)?;
    if obj.data.len() != 2 {
        return Err(Error::Config("SVM objective array must hold 2 values".into()));
    }
    Ok(LinearSvm {
        weights: get(a, &format!("{prefix}weights"), 1)?.data.clone(),
        bias: scalar(a, &format!("{prefix}bias"))?,
        lambda: scalar(a, &format!("{prefix}lambda"))?,
        initial_objective: obj.data[0],
        objective: obj.data[1],
        epochs: record.hyperparameters.svm.epochs,
    })
}

fn get<'a>(arrays: &'a BTreeMap<String, Array>, name: &str, rank: usize) -> Result<&'a Array> {
    let a = arrays
        .get(name)
        .ok_or_else(|| Error::Config(format!("model record lacks array `{name}`")))?;
    if a.shape.len() != rank || a.shape.iter().product::<usize>() != a.data.len() {
        return Err(Error::Config(format!("array `{name}` has inconsistent shape {:?}", a.shape)));
    }
    Ok(a)
}

fn scalar(arrays: &BTreeMap<String, Array>, name: &str) -> Result<f64> {
    let a = get(arrays, name, 1)?;
    a.data
        .first()
        .copied()
        .ok_or_else(|| Error::Config(format!("array `{name}` is empty")))
}

/// Flat row-major array with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn vector(v: &[f64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn matrix(rows: &[Vec<f64>]) -> Self {
        Self {
            shape: vec![rows.len(), rows.first().map_or(0, Vec::len)],
            data: rows.concat(),
        }
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        if self.shape[1] == 0 {
            return vec![Vec::new(); self.shape[0]];
        }
        self.data.chunks(self.shape[1]).map(<[f64]>::to_vec).collect()
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_map: Option<ClusterMap>,
    pub info: FitInfo,
    pub arrays: BTreeMap<String, Array>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn cluster_map_examples() {
        let (m, acc) = cluster_label_map(&[0, 0, 1, 1], &[0, 0, 1, 1]);
        assert!(!m.swapped && acc == 1.0);
        let (m, acc) = cluster_label_map(&[1, 1, 0, 0], &[0, 0, 1, 1]);
        assert!(m.swapped && acc == 1.0);
        assert_eq!(m.class_of(1), 0);
        let (m, acc) = cluster_label_map(&[0, 1, 0, 1], &[0, 0, 1, 1]);
        assert!(!m.swapped && acc == 0.5);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("forest".parse::<ModelKind>().is_err());
    }

    #[test]
    fn label_mask_is_stratified() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
        let mask = stratified_label_mask(&labels, 0.1, 4);
        let kept = |c: u8| (0..100).filter(|&i| labels[i] == c && !mask[i]).count();
        assert_eq!(kept(1), 3);
        assert_eq!(kept(0), 7);
    }

    fn blobs() -> LabeledSet {
        let mut rng = seed::rng(12);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..120 {
            let c = if i % 2 == 0 { -2.0 } else { 2.0 };
            x.push(vec![c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), c * 0.5]);
            y.push((i % 2) as u8);
        }
        let mask = stratified_label_mask(&y, 0.1, 1);
        LabeledSet::with_mask(x, y, mask).unwrap()
    }

    #[test]
    fn every_kind_round_trips_bit_identically() {
        let set = blobs();
        for kind in ModelKind::ALL {
            let mut spec = ModelSpec::new(kind, 21);
            spec.hyper.mlp.max_epochs = 20;
            let model = fit(&spec, &set).unwrap();
            let mut buf = Vec::new();
            model.save(&mut buf).unwrap();
            let back = TrainedModel::load(buf.as_slice()).unwrap();
            assert_eq!(back, model, "{kind}");
            let probe: Vec<Vec<f64>> = set.features.iter().map(|r| r.iter().map(|v| v * 0.7).collect()).collect();
            assert_eq!(back.classify(&probe).unwrap(), model.classify(&probe).unwrap());
            assert_eq!(model.classify(&set.features).unwrap(), set.labels, "{kind}");
        }
    }

    #[test]
    fn svm_via_kmeans_ignores_labels_for_fitting() {
        let set = blobs();
        let spec = ModelSpec::new(ModelKind::SvmViaKMeans, 3);
        let a = fit(&spec, &set).unwrap();
        // flipping every label only flips the cluster naming
        let flipped = LabeledSet::new(set.features.clone(), set.labels.iter().map(|l| 1 - l).collect()).unwrap();
        let b = fit(&spec, &flipped).unwrap();
        let pa = a.classify(&set.features).unwrap();
        let pb = b.classify(&set.features).unwrap();
        assert!(pa.iter().zip(&pb).all(|(x, y)| x + y == 1));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(LabeledSet::new(vec![vec![1.0]], vec![2]).is_err());
        assert!(LabeledSet::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        let mut spec = ModelSpec::new(ModelKind::KMeans, 0);
        spec.hyper.kmeans.k = 3;
        assert!(fit(&spec, &blobs()).is_err());
    }
}

//! Window-level feature extraction.
//!
//! Correlation features: ten band-averaged DCT coefficients of the window
//! followed by the Pearson coefficients against each neighbour's window.
//! DST features: Canberra distances between the window's belief and
//! plausibility vectors and each neighbour's.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Instance, LabelSource, SensorStats, TrustClass, TrustLabel};
use crate::topology::NeighborMap;

pub const WINDOW_SECONDS: u32 = 7_200;

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub sensor_id: u32,
    pub day_index: i64,
    pub window_index: usize,
    pub values: Vec<f64>,
    pub label: TrustLabel,
}

/// Contiguous, non-overlapping windows of `window_len` samples.
pub fn window(instance: &Instance, window_len: usize) -> Result<Vec<Window>> {
    if window_len == 0 || !instance.values.len().is_multiple_of(window_len) {
        return Err(Error::Config(format!(
            "instance length {} is not a multiple of window length {window_len}",
            instance.values.len()
        )));
    }
    Ok(instance
        .values
        .chunks_exact(window_len)
        .enumerate()
        .map(|(i, chunk)| Window {
            sensor_id: instance.sensor_id,
            day_index: instance.day_index,
            window_index: i,
            values: chunk.to_vec(),
            label: instance.label,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DctSpec {
    pub num_coeffs: usize,
    pub num_bands: usize,
}

impl Default for DctSpec {
    fn default() -> Self {
        Self {
            num_coeffs: 100,
            num_bands: 10,
        }
    }
}

impl DctSpec {
    pub fn validate(&self, window_len: usize) -> Result<()> {
        if self.num_bands == 0 || !self.num_coeffs.is_multiple_of(self.num_bands) {
            return Err(Error::Config(format!(
                "{} DCT coefficients cannot be split into {} bands",
                self.num_coeffs, self.num_bands
            )));
        }
        if self.num_coeffs > window_len {
            return Err(Error::Config(format!(
                "{} DCT coefficients exceed window length {window_len}",
                self.num_coeffs
            )));
        }
        Ok(())
    }
}

/// Cosine table for the unnormalized DCT
/// `a_k = Σ_i x_i cos(π/N (i + ½) k)`, `k < M`.
#[derive(Debug, Clone)]
pub struct DctTable {
    n: usize,
    cos: Vec<f64>,
}

impl DctTable {
    pub fn new(n: usize, m: usize) -> Self {
        let mut cos = Vec::with_capacity(n * m);
        for k in 0..m {
            for i in 0..n {
                cos.push((PI / n as f64 * (i as f64 + 0.5) * k as f64).cos());
            }
        }
        Self { n, cos }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "DCT input length");
        self.cos
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(c, v)| c * v).sum())
            .collect()
    }
}

pub fn dct_coeffs(x: &[f64], m: usize) -> Result<Vec<f64>> {
    if m > x.len() {
        return Err(Error::Config(format!(
            "{m} DCT coefficients exceed input length {}",
            x.len()
        )));
    }
    Ok(DctTable::new(x.len(), m).apply(x))
}

/// Means of `num_bands` equal contiguous blocks of coefficients.
pub fn band_features(coeffs: &[f64], num_bands: usize) -> Result<Vec<f64>> {
    if num_bands == 0 || !coeffs.len().is_multiple_of(num_bands) {
        return Err(Error::Config(format!(
            "{} coefficients cannot be split into {num_bands} bands",
            coeffs.len()
        )));
    }
    let width = coeffs.len() / num_bands;
    Ok(coeffs
        .chunks_exact(width)
        .map(|band| band.iter().sum::<f64>() / width as f64)
        .collect())
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("pearson needs two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// A feature vector plus the number of entries replaced by a fallback
/// value (undefined Pearson coefficients become 0).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub substituted: usize,
}

fn corr_with_table(window: &[f64], neighbors: &[&[f64]], table: &DctTable, spec: &DctSpec) -> Result<FeatureVector> {
    let mut values = band_features(&table.apply(window), spec.num_bands)?;
    let mut substituted = 0;
    for nbr in neighbors {
        if nbr.len() != window.len() {
            return Err(Error::DimensionMismatch {
                expected: window.len(),
                actual: nbr.len(),
            });
        }
        match pearson(window, nbr) {
            Ok(r) => values.push(r),
            Err(Error::UndefinedCorrelation) => {
                values.push(0.0);
                substituted += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FeatureVector {
        values,
        substituted,
    })
}

/// `[bands ‖ pearson(window, neighbor_n) for each neighbour]`.
pub fn corr_features(window: &[f64], neighbors: &[&[f64]], spec: &DctSpec) -> Result<FeatureVector> {
    spec.validate(window.len())?;
    corr_with_table(window, neighbors, &DctTable::new(window.len(), spec.num_coeffs), spec)
}

/// Probability mass function over fixed bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

/// `bins` equal-width bins over `[mean - 4σ, mean + 4σ]`.
pub fn sensor_bin_edges(stats: &SensorStats, bins: usize) -> Vec<f64> {
    let half = if stats.std > 0.0 { 4.0 * stats.std } else { 0.5 };
    let (lo, hi) = (stats.mean - half, stats.mean + half);
    (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect()
}

/// Normalized histogram; values outside the edges land in the edge bins.
pub fn pmf(values: &[f64], edges: &[f64]) -> Result<Pmf> {
    if edges.len() < 3 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "PMF needs at least two bins with ascending edges".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("PMF of an empty window".into()));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &v in values {
        // first edge strictly greater than v, minus one
        let upper = edges.partition_point(|&e| e <= v);
        let bin = upper.saturating_sub(1).min(bins - 1);
        counts[bin] += 1;
    }
    let total = values.len() as f64;
    Ok(Pmf {
        edges: edges.to_vec(),
        masses: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// Set of bins encoded as a bitmask (frames of up to 64 bins).
pub type FocalSet = u64;

pub fn focal_set(bins: &[usize]) -> FocalSet {
    bins.iter().fold(0, |acc, &b| acc | (1u64 << b))
}

/// Basic probability assignment over subsets of the bin frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MassAssignment {
    pub focal: Vec<(FocalSet, f64)>,
}

impl MassAssignment {
    /// All mass on singletons, taken from the PMF.
    pub fn singletons(pmf: &Pmf) -> Self {
        Self {
            focal: pmf
                .masses
                .iter()
                .enumerate()
                .map(|(b, &m)| (1u64 << b, m))
                .collect(),
        }
    }

    /// `Σ m(B)` over focal sets `B ⊆ A`.
    pub fn belief(&self, a: FocalSet) -> f64 {
        self.focal
            .iter()
            .filter(|(b, _)| b & !a == 0)
            .map(|(_, m)| m)
            .sum()
    }

    /// `Σ m(B)` over focal sets `B ∩ A ≠ ∅`.
    pub fn plausibility(&self, a: FocalSet) -> f64 {
        self.focal
            .iter()
            .filter(|(b, _)| b & a != 0)
            .map(|(_, m)| m)
            .sum()
    }
}

/// The ten singletons plus the adjacent pairs `{b_i, b_{i+1}}`.
pub fn default_focal_sets(bins: usize) -> Vec<FocalSet> {
    let mut sets: Vec<FocalSet> = (0..bins).map(|b| 1u64 << b).collect();
    sets.extend((0..bins.saturating_sub(1)).map(|b| focal_set(&[b, b + 1])));
    sets
}

/// Belief and plausibility of each focal set under the PMF's singleton masses.
pub fn belief_plausibility(pmf: &Pmf, focal_sets: &[FocalSet]) -> Result<(Vec<f64>, Vec<f64>)> {
    let frame = if pmf.masses.len() >= 64 {
        u64::MAX
    } else {
        (1u64 << pmf.masses.len()) - 1
    };
    if focal_sets.iter().any(|&a| a == 0 || a & !frame != 0) {
        return Err(Error::Config(
            "focal sets must be non-empty subsets of the bins".into(),
        ));
    }
    let masses = MassAssignment::singletons(pmf);
    Ok(focal_sets
        .iter()
        .map(|&a| (masses.belief(a), masses.plausibility(a)))
        .unzip())
}

/// `Σ |u_i - v_i| / (|u_i| + |v_i|)`, with `0/0` terms counted as zero.
pub fn canberra(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| {
            let den = a.abs() + b.abs();
            if den == 0.0 {
                0.0
            } else {
                (a - b).abs() / den
            }
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DstSpec {
    pub bins: usize,
}

impl Default for DstSpec {
    fn default() -> Self {
        Self { bins: 10 }
    }
}

/// `[canberra(bel_self, bel_n) ‖ canberra(pl_self, pl_n)]` over the
/// neighbours, each window binned on its own sensor's mean ± 4σ range.
pub fn dst_features(
    window: &[f64],
    own: &SensorStats,
    neighbors: &[(&[f64], &SensorStats)],
    spec: &DstSpec,
) -> Result<Vec<f64>> {
    let sets = default_focal_sets(spec.bins);
    let bel_pl = |values: &[f64], stats: &SensorStats| {
        belief_plausibility(&pmf(values, &sensor_bin_edges(stats, spec.bins))?, &sets)
    };
    let (bel, pl) = bel_pl(window, own)?;
    let mut bel_d = Vec::with_capacity(neighbors.len());
    let mut pl_d = Vec::with_capacity(neighbors.len());
    for (values, stats) in neighbors {
        let (nb, np) = bel_pl(values, stats)?;
        bel_d.push(canberra(&bel, &nb)?);
        pl_d.push(canberra(&pl, &np)?);
    }
    bel_d.extend(pl_d);
    Ok(bel_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Correlation,
    Dst,
}

impl FeatureKind {
    pub fn dimension(&self, neighbors: usize, spec: &DctSpec) -> usize {
        match self {
            FeatureKind::Correlation => spec.num_bands + neighbors,
            FeatureKind::Dst => 2 * neighbors,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Correlation => "corr",
            FeatureKind::Dst => "dst",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corr" | "correlation" => Ok(FeatureKind::Correlation),
            "dst" => Ok(FeatureKind::Dst),
            other => Err(format!("unknown feature kind `{other}` (expected corr or dst)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sensor_id: u32,
    pub day_index: i64,
    pub window_index: usize,
    pub label: TrustLabel,
    pub realization: u32,
    pub values: Vec<f64>,
    /// Entries replaced by 0 because a correlation was undefined.
    pub substituted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub kind: FeatureKind,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn dimension(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label.binary()).collect()
    }

    /// Sum of substituted entries over all rows.
    pub fn substituted(&self) -> usize {
        self.rows.iter().map(|r| r.substituted).sum()
    }

    /// Writes `sensor,day,window,label,source,realization,f0..f{D-1}`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "sensor,day,window,label,source,realization")?;
        for k in 0..self.dimension() {
            write!(w, ",f{k}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(
                w,
                "{},{},{},{},{},{}",
                r.sensor_id,
                r.day_index,
                r.window_index,
                r.label.class(),
                r.label.source(),
                r.realization
            )?;
            for v in &r.values {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the feature matrix format; substitution counts are not stored.
    pub fn read<R: BufRead>(reader: R, kind: FeatureKind) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(1, "missing header"))??;
        if !header.starts_with("sensor,day,window,label,source,realization") {
            return Err(Error::format(1, "unexpected feature header"));
        }
        let dim = header.split(',').count() - 6;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != dim + 6 {
                return Err(Error::format(lineno, "wrong number of columns"));
            }
            let bad = |what: &str| Error::format(lineno, format!("bad {what}"));
            let class: TrustClass = f[3].parse().map_err(|e| Error::format(lineno, e))?;
            let source: LabelSource = f[4].parse().map_err(|e| Error::format(lineno, e))?;
            rows.push(FeatureRow {
                sensor_id: f[0].parse().map_err(|_| bad("sensor"))?,
                day_index: f[1].parse().map_err(|_| bad("day"))?,
                window_index: f[2].parse().map_err(|_| bad("window"))?,
                label: TrustLabel::from_parts(class, source)
                    .ok_or_else(|| bad("label class/source pair"))?,
                realization: f[5].parse().map_err(|_| bad("realization"))?,
                values: f[6..]
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|_| bad("feature value")))
                    .collect::<Result<_>>()?,
                substituted: 0,
            });
        }
        Ok(FeatureTable { kind, rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_len: usize,
    pub dct: DctSpec,
    pub dst: DstSpec,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_len: 120,
            dct: DctSpec::default(),
            dst: DstSpec::default(),
        }
    }
}

impl FeatureConfig {
    pub fn for_step(step: u32) -> Self {
        Self {
            window_len: (WINDOW_SECONDS / step) as usize,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtraction {
    pub table: FeatureTable,
    /// Windows dropped because a neighbour had no data for that day.
    pub skipped_windows: usize,
}

/// Features for every window of every instance. Neighbour windows always
/// come from the neighbour's original (non-synthesized) instance of the
/// same day; windows with a missing neighbour are skipped and counted.
pub fn extract_features(
    instances: &[Instance],
    neighbors: &NeighborMap,
    stats: &BTreeMap<u32, SensorStats>,
    kind: FeatureKind,
    config: &FeatureConfig,
    realization: u32,
) -> Result<FeatureExtraction> {
    config.dct.validate(config.window_len)?;
    let originals: HashMap<(u32, i64), &Instance> = instances
        .iter()
        .filter(|i| matches!(i.label.source(), LabelSource::Original | LabelSource::Outlier))
        .map(|i| ((i.sensor_id, i.day_index), i))
        .collect();
    let table = DctTable::new(config.window_len, config.dct.num_coeffs);
    let stats_of = |id: u32| stats.get(&id).ok_or(Error::UnknownSensor(id));

    let per_instance: Vec<(Vec<FeatureRow>, usize)> = instances
        .par_iter()
        .map(|inst| {
            let nbr_ids = neighbors
                .get(inst.sensor_id)
                .ok_or(Error::UnknownSensor(inst.sensor_id))?;
            let windows = window(inst, config.window_len)?;
            let nbr_insts: Option<Vec<&Instance>> = nbr_ids
                .iter()
                .map(|n| originals.get(&(*n, inst.day_index)).copied())
                .collect();
            let Some(nbr_insts) = nbr_insts else {
                return Ok((Vec::new(), windows.len()));
            };
            let mut rows = Vec::with_capacity(windows.len());
            for w in windows {
                let span = w.window_index * config.window_len..(w.window_index + 1) * config.window_len;
                let nbr_windows: Vec<&[f64]> = nbr_insts.iter().map(|n| &n.values[span.clone()]).collect();
                let fv = match kind {
                    FeatureKind::Correlation => corr_with_table(&w.values, &nbr_windows, &table, &config.dct)?,
                    FeatureKind::Dst => {
                        let own = stats_of(inst.sensor_id)?;
                        let nbr: Vec<(&[f64], &SensorStats)> = nbr_windows
                            .iter()
                            .zip(nbr_ids)
                            .map(|(v, id)| Ok((*v, stats_of(*id)?)))
                            .collect::<Result<_>>()?;
                        FeatureVector {
                            values: dst_features(&w.values, own, &nbr, &config.dst)?,
                            substituted: 0,
                        }
                    }
                };
                rows.push(FeatureRow {
                    sensor_id: w.sensor_id,
                    day_index: w.day_index,
                    window_index: w.window_index,
                    label: w.label,
                    realization,
                    values: fv.values,
                    substituted: fv.substituted,
                });
            }
            Ok((rows, 0))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut skipped_windows = 0;
    for (r, s) in per_instance {
        rows.extend(r);
        skipped_windows += s;
    }
    Ok(FeatureExtraction {
        table: FeatureTable { kind, rows },
        skipped_windows,
    })
}

/// Per-column z-scoring with statistics from a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; zero-variance columns store 1.
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(matrix: &[Vec<f64>], fit_rows: &[usize]) -> Result<Self> {
        if fit_rows.is_empty() {
            return Err(Error::InsufficientData(
                "standardization needs at least one row".into(),
            ));
        }
        let dim = matrix[fit_rows[0]].len();
        let n = fit_rows.len() as f64;
        let mut means = vec![0.0; dim];
        for &r in fit_rows {
            for (m, v) in means.iter_mut().zip(&matrix[r]) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; dim];
        for &r in fit_rows {
            for ((s, v), m) in vars.iter_mut().zip(&matrix[r]).zip(&means) {
                *s += (v - m).powi(2);
            }
        }
        let stds = vars
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { means, stds })
    }

    pub fn fit_all(matrix: &[Vec<f64>]) -> Result<Self> {
        Self::fit(matrix, &(0..matrix.len()).collect::<Vec<_>>())
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, matrix: &[Vec<f64>]) -> Vec<Vec<f64>> {
        matrix.iter().map(|r| self.transform_row(r)).collect()
    }
}

/// Fits on `fit_rows` and transforms the whole matrix.
pub fn standardize(matrix: &[Vec<f64>], fit_rows: &[usize]) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let s = Standardizer::fit(matrix, fit_rows)?;
    let t = s.transform(matrix);
    Ok((s.means, s.stds, t))
}

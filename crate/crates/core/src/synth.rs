//! Untrustworthy-data synthesis: random walk infilling (RWI) and Drift.
//!
//! RWI splits an instance at equally spaced boundary indexes, replaces each
//! segment's interior with a Gaussian random walk started from the segment's
//! first value and then pivots the walk around that first value so that the
//! segment's anchored least-squares slope equals the slope it had before the
//! replacement. Segments are processed in order, so every anchor after the
//! first is itself a synthesized value.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Instance, LabelSource, TrustLabel};
use crate::seed;

/// How the random-walk step standard deviation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepScale {
    /// σ_g = multiplier × RMS of the instance's first differences.
    Adaptive { multiplier: f64 },
    /// Fixed step variance σ_g² in °C².
    FixedVariance { variance: f64 },
}

impl Default for StepScale {
    fn default() -> Self {
        StepScale::Adaptive { multiplier: 3.0 }
    }
}

impl StepScale {
    pub fn step_std(&self, values: &[f64]) -> f64 {
        match *self {
            StepScale::FixedVariance { variance } => variance.max(0.0).sqrt(),
            StepScale::Adaptive { multiplier } => {
                if values.len() < 2 {
                    return 0.0;
                }
                let ms = values
                    .windows(2)
                    .map(|w| (w[1] - w[0]).powi(2))
                    .sum::<f64>()
                    / (values.len() - 1) as f64;
                multiplier * ms.sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwiConfig {
    pub num_mid_points: usize,
    pub step: StepScale,
    pub rng_seed: u64,
}

impl Default for RwiConfig {
    fn default() -> Self {
        Self {
            num_mid_points: 10,
            step: StepScale::default(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Constant drift added per sample, °C.
    pub drift_constant: f64,
    /// Standard deviation of the per-sample Gaussian term, °C.
    pub noise_std: f64,
    /// Upper limit on the cumulative drift, °C.
    pub drift_cap: f64,
    pub rng_seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            drift_constant: 0.05,
            noise_std: 0.01,
            drift_cap: 10.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SynthMethod {
    Rwi(RwiConfig),
    Drift(DriftConfig),
}

impl SynthMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SynthMethod::Rwi(_) => "rwi",
            SynthMethod::Drift(_) => "drift",
        }
    }

    pub fn label_source(&self) -> LabelSource {
        match self {
            SynthMethod::Rwi(_) => LabelSource::Rwi,
            SynthMethod::Drift(_) => LabelSource::Drift,
        }
    }

    fn tag(&self) -> u64 {
        match self {
            SynthMethod::Rwi(_) => 1,
            SynthMethod::Drift(_) => 2,
        }
    }
}

/// Inclusive index range `[start, end]` of one RWI segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

/// `p_0 = 0`, `p_{M+1} = n - 1` and `M` interior points at
/// `round(j (n - 1) / (M + 1))`.
pub fn segment_indexes(n: usize, num_mid_points: usize) -> Result<Vec<usize>> {
    if num_mid_points + 2 > n {
        return Err(Error::Config(format!(
            "{num_mid_points} mid points do not fit an instance of length {n}"
        )));
    }
    let parts = (num_mid_points + 1) as f64;
    let idx: Vec<usize> = (0..=num_mid_points + 1)
        .map(|j| ((j as f64) * (n - 1) as f64 / parts).round() as usize)
        .collect();
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "boundary indexes for n={n}, M={num_mid_points} are not strictly increasing"
        )));
    }
    Ok(idx)
}

pub fn segments(n: usize, num_mid_points: usize) -> Result<Vec<Segment>> {
    Ok(segment_indexes(n, num_mid_points)?
        .windows(2)
        .map(|w| Segment {
            start: w[0],
            end: w[1],
        })
        .collect())
}

/// Least-squares slope of a line forced through `values[0]`:
/// `Σ j (s_j - s_0) / Σ j²` over `j = 1..len`.
pub fn anchored_slope(values: &[f64]) -> f64 {
    let anchor = values[0];
    let (num, den) = values
        .iter()
        .enumerate()
        .skip(1)
        .fold((0.0, 0.0), |(num, den), (j, &s)| {
            let j = j as f64;
            (num + j * (s - anchor), den + j * j)
        });
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// RWI on a raw value slice with an explicit random stream.
pub fn rwi_values<R: Rng + ?Sized>(
    values: &[f64],
    num_mid_points: usize,
    step_std: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let walk = Normal::new(0.0, step_std)
        .map_err(|e| Error::Config(format!("invalid random-walk step: {e}")))?;
    let mut s = values.to_vec();
    for seg in segments(values.len(), num_mid_points)? {
        let target = anchored_slope(&s[seg.start..=seg.end]);
        for j in seg.start + 1..=seg.end {
            s[j] = s[j - 1] + walk.sample(rng);
        }
        let correction = target - anchored_slope(&s[seg.start..=seg.end]);
        for j in seg.start + 1..=seg.end {
            s[j] += correction * (j - seg.start) as f64;
        }
    }
    Ok(s)
}

fn relabel(instance: &Instance, values: Vec<f64>, source: LabelSource) -> Instance {
    Instance {
        sensor_id: instance.sensor_id,
        day_index: instance.day_index,
        values,
        coverage: instance.coverage,
        label: TrustLabel::untrustworthy(source),
    }
}

fn rwi_with<R: Rng + ?Sized>(instance: &Instance, config: &RwiConfig, rng: &mut R) -> Result<Instance> {
    let step_std = config.step.step_std(&instance.values);
    let values = rwi_values(&instance.values, config.num_mid_points, step_std, rng)?;
    Ok(relabel(instance, values, LabelSource::Rwi))
}

/// Random walk infilling of one instance, seeded from `config.rng_seed`.
pub fn rwi(instance: &Instance, config: &RwiConfig) -> Result<Instance> {
    rwi_with(instance, config, &mut seed::rng(config.rng_seed))
}

/// `x_i + min(C_i, L)` with `C_i = Σ_{j≤i} (d + n_j)`; once the cumulative
/// drift reaches the cap it stays there.
pub fn drift_values<R: Rng + ?Sized>(values: &[f64], config: &DriftConfig, rng: &mut R) -> Result<Vec<f64>> {
    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| Error::Config(format!("invalid drift noise: {e}")))?;
    if !(config.drift_cap > 0.0) {
        return Err(Error::Config("drift cap must be positive".into()));
    }
    let mut cumulative = 0.0;
    let mut capped = false;
    Ok(values
        .iter()
        .map(|x| {
            if !capped {
                cumulative += config.drift_constant + noise.sample(rng);
                if cumulative >= config.drift_cap {
                    capped = true;
                    cumulative = config.drift_cap;
                }
            }
            x + cumulative
        })
        .collect())
}

fn drift_with<R: Rng + ?Sized>(instance: &Instance, config: &DriftConfig, rng: &mut R) -> Result<Instance> {
    let values = drift_values(&instance.values, config, rng)?;
    Ok(relabel(instance, values, LabelSource::Drift))
}

/// Drift synthesis of one instance, seeded from `config.rng_seed`.
pub fn drift(instance: &Instance, config: &DriftConfig) -> Result<Instance> {
    drift_with(instance, config, &mut seed::rng(config.rng_seed))
}

/// Sidecar record describing how an augmented dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub method: SynthMethod,
    pub realization_seed: u64,
    pub trustworthy: usize,
    pub synthesized: usize,
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub instances: Vec<Instance>,
    pub meta: SynthMeta,
}

/// Adds one synthesized untrustworthy counterpart per trustworthy instance.
///
/// Originals (including outliers) come first in input order, followed by the
/// synthesized instances. Each instance draws from its own stream keyed by
/// `(realization_seed, method, sensor_id, day_index)`; the configs'
/// `rng_seed` fields are not used here.
pub fn augment(dataset: &[Instance], method: &SynthMethod, realization_seed: u64) -> Result<AugmentedDataset> {
    let pool: Vec<&Instance> = dataset.iter().filter(|i| i.label.is_trustworthy()).collect();
    if pool.is_empty() {
        return Err(Error::InsufficientData(
            "no trustworthy instances to synthesize from".into(),
        ));
    }
    let synthesized: Vec<Instance> = pool
        .par_iter()
        .map(|inst| {
            let mut rng = seed::derived_rng(
                realization_seed,
                &[method.tag(), u64::from(inst.sensor_id), inst.day_index as u64],
            );
            match method {
                SynthMethod::Rwi(c) => rwi_with(inst, c, &mut rng),
                SynthMethod::Drift(c) => drift_with(inst, c, &mut rng),
            }
        })
        .collect::<Result<_>>()?;
    let outliers = dataset
        .iter()
        .filter(|i| i.label.source() == LabelSource::Outlier)
        .count();
    let meta = SynthMeta {
        method: *method,
        realization_seed,
        trustworthy: pool.len(),
        synthesized: synthesized.len(),
        outliers,
    };
    let mut instances = dataset.to_vec();
    instances.extend(synthesized);
    Ok(AugmentedDataset { instances, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(values: Vec<f64>) -> Instance {
        Instance {
            sensor_id: 1,
            day_index: 0,
            values,
            coverage: 1.0,
            label: TrustLabel::TRUSTWORTHY,
        }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn boundary_indexes() {
        assert_eq!(segment_indexes(11, 1).unwrap(), vec![0, 5, 10]);
        let p = segment_indexes(1440, 10).unwrap();
        assert_eq!(p.len(), 12);
        assert_eq!((p[0], p[11]), (0, 1439));
        assert_eq!(segments(1440, 10).unwrap().len(), 11);
        assert!(matches!(segment_indexes(3, 2), Err(Error::Config(_))));
    }

    #[test]
    fn slope_examples() {
        assert_eq!(anchored_slope(&[2.0, 4.0, 6.0, 8.0, 10.0]), 2.0);
        assert_eq!(anchored_slope(&[3.0; 6]), 0.0);
        assert!((anchored_slope(&[0.0, 1.0, 0.0, 1.0, 0.0]) - 2.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn zero_step_reproduces_linear_segment() {
        let cfg = RwiConfig {
            num_mid_points: 0,
            step: StepScale::FixedVariance { variance: 0.0 },
            rng_seed: 3,
        };
        let input = instance(vec![2.0, 4.0, 6.0, 8.0, 10.0]);
        let out = rwi(&input, &cfg).unwrap();
        for (a, b) in out.values.iter().zip(&input.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.label.source(), LabelSource::Rwi);
    }

    #[test]
    fn zero_step_on_zigzag() {
        let cfg = RwiConfig {
            num_mid_points: 0,
            step: StepScale::FixedVariance { variance: 0.0 },
            rng_seed: 0,
        };
        let out = rwi(&instance(vec![0.0, 1.0, 0.0, 1.0, 0.0]), &cfg).unwrap();
        let expected = [0.0, 2.0 / 15.0, 4.0 / 15.0, 6.0 / 15.0, 8.0 / 15.0];
        for (a, b) in out.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn full_day_structure() {
        let values: Vec<f64> = (0..1440).map(|i| 20.0 + (i as f64 / 200.0).sin()).collect();
        let out = rwi(&instance(values.clone()), &RwiConfig::default()).unwrap();
        assert_eq!(out.values.len(), 1440);
        assert_eq!(out.values[0], values[0]);
    }

    #[test]
    fn drift_examples() {
        let x = instance(vec![10.0, 10.0, 10.0]);
        let uncapped = DriftConfig {
            drift_constant: 0.5,
            noise_std: 0.0,
            drift_cap: f64::INFINITY,
            rng_seed: 0,
        };
        assert_eq!(drift(&x, &uncapped).unwrap().values, vec![10.5, 11.0, 11.5]);
        let capped = DriftConfig {
            drift_cap: 1.0,
            ..uncapped
        };
        assert_eq!(drift(&x, &capped).unwrap().values, vec![10.5, 11.0, 11.0]);
        let none = DriftConfig {
            drift_constant: 0.0,
            ..capped
        };
        assert_eq!(drift(&x, &none).unwrap().values, x.values);
    }

    #[test]
    fn drift_cap_holds_after_reaching_limit() {
        let x = instance(vec![0.0; 200]);
        let cfg = DriftConfig {
            drift_constant: 0.1,
            noise_std: 0.2,
            drift_cap: 2.0,
            rng_seed: 11,
        };
        let out = drift(&x, &cfg).unwrap().values;
        let first = out.iter().position(|&v| v == 2.0).expect("cap reached");
        assert!(out[first..].iter().all(|&v| v == 2.0));
        assert!(out.iter().all(|&v| v <= 2.0));
    }

    fn pool(trustworthy: usize, outliers: usize) -> Vec<Instance> {
        let mut out = Vec::new();
        for i in 0..trustworthy + outliers {
            let mut inst = instance((0..48).map(|k| 20.0 + ((k + i) as f64).cos()).collect());
            inst.sensor_id = (i % 7) as u32 + 1;
            inst.day_index = (i / 7) as i64;
            if i >= trustworthy {
                inst.label = TrustLabel::untrustworthy(LabelSource::Outlier);
            }
            out.push(inst);
        }
        out
    }

    #[test]
    fn augment_counts() {
        let data = pool(100, 5);
        let aug = augment(&data, &SynthMethod::Rwi(RwiConfig::default()), 1).unwrap();
        assert_eq!(aug.instances.len(), 205);
        let count = |src| aug.instances.iter().filter(|i| i.label.source() == src).count();
        assert_eq!(count(LabelSource::Original), 100);
        assert_eq!(count(LabelSource::Rwi), 100);
        assert_eq!(count(LabelSource::Outlier), 5);
        assert_eq!(aug.meta.synthesized, 100);
    }

    #[test]
    fn augment_seeding() {
        let data = pool(20, 0);
        for method in [
            SynthMethod::Rwi(RwiConfig::default()),
            SynthMethod::Drift(DriftConfig::default()),
        ] {
            let a = augment(&data, &method, 7).unwrap();
            let b = augment(&data, &method, 7).unwrap();
            let c = augment(&data, &method, 8).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.instances[20..], c.instances[20..]);
        }
    }

    #[test]
    fn augment_requires_trustworthy_pool() {
        let data = pool(0, 3);
        assert!(augment(&data, &SynthMethod::Drift(DriftConfig::default()), 0).is_err());
    }

    /// Two-sample Kolmogorov–Smirnov statistic.
    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let v = a[i].min(b[j]);
            while i < a.len() && a[i] <= v {
                i += 1;
            }
            while j < b.len() && b[j] <= v {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rwi_contract(
            values in prop::collection::vec(-5.0f64..40.0, 12..300),
            m in 0usize..10,
            variance in 0.0f64..4.0,
            seed in any::<u64>(),
        ) {
            prop_assume!(m + 2 <= values.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = rwi_values(&values, m, variance.sqrt(), &mut rng).unwrap();
            prop_assert_eq!(out.len(), values.len());
            prop_assert_eq!(out[0], values[0]);
            // replay the anchors: before-slope uses the synthesized anchor
            let mut anchor_src = values.clone();
            for seg in segments(values.len(), m).unwrap() {
                anchor_src[seg.start] = out[seg.start];
                let before = anchored_slope(&anchor_src[seg.start..=seg.end]);
                let after = anchored_slope(&out[seg.start..=seg.end]);
                prop_assert!(close(before, after, 1e-9) || (before - after).abs() <= 1e-9, "{} vs {}", before, after);
                anchor_src[seg.end] = out[seg.end];
            }
        }

        #[test]
        fn drift_is_monotone_and_bounded(
            values in prop::collection::vec(-5.0f64..40.0, 1..200),
            d in 0.001f64..1.0,
            cap in 0.1f64..20.0,
        ) {
            let cfg = DriftConfig { drift_constant: d, noise_std: 0.0, drift_cap: cap, rng_seed: 0 };
            let out = drift(&instance(values.clone()), &cfg).unwrap().values;
            prop_assert_eq!(out.len(), values.len());
            let dev: Vec<f64> = out.iter().zip(&values).map(|(o, x)| o - x).collect();
            for w in dev.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9);
            }
            prop_assert!(dev.iter().all(|&v| v <= cap + 1e-9));
        }
    }

    #[test]
    fn rwi_changes_increment_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let values: Vec<f64> = (0..1440)
            .map(|i| 20.0 + 2.0 * (i as f64 * std::f64::consts::TAU / 1440.0).sin() + noise.sample(&mut rng))
            .collect();
        let typical = StepScale::Adaptive { multiplier: 1.0 }.step_std(&values);
        let out = rwi_values(&values, 10, 3.0 * typical, &mut rng).unwrap();
        let diffs = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>();
        let (a, b) = (diffs(&values), diffs(&out));
        let d = ks_statistic(&a, &b);
        let (n, m) = (a.len() as f64, b.len() as f64);
        let critical = 1.628 * ((n + m) / (n * m)).sqrt(); // alpha = 0.01
        assert!(d > critical, "KS {d} <= {critical}");
    }
}

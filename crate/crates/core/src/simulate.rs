//! Synthetic Intel Lab style deployments.
//!
//! Produces a sensor layout and raw temperature readings in the original
//! log format: a shared diurnal cycle and building-wide weather, smooth
//! regional fluctuations that make nearby motes correlate, per-mote slow
//! wander and measurement noise, irregular ~31 s reporting with dropped
//! packets, occasional outages, out-of-range spikes and short heat events.

use std::io::Write;

use chrono::Duration;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{dataset_origin, Layout, SensorReading, INTEL_SENSOR_IDS, SECONDS_PER_DAY};
use crate::seed;

const ROOM_WIDTH: f64 = 40.0;
const ROOM_DEPTH: f64 = 31.0;
const MINUTE: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Motes 1..=sensors are simulated.
    pub sensors: u32,
    pub days: u32,
    /// Mean seconds between reports.
    pub interval: f64,
    /// Probability that a single report is lost.
    pub dropout: f64,
    /// Probability per sensor-day of a 1–3 h outage.
    pub outage_rate: f64,
    /// Probability that a report is a garbage value outside the valid range.
    pub spike_rate: f64,
    /// Probability per sensor-day of a heat event strong enough to be an
    /// outlier.
    pub anomaly_rate: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sensors: 54,
            days: 3,
            interval: 31.0,
            dropout: 0.05,
            outage_rate: 0.05,
            spike_rate: 2e-4,
            anomaly_rate: 0.03,
            seed: 2004,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub layout: Layout,
    /// Sorted by timestamp, then sensor.
    pub readings: Vec<SensorReading>,
}

/// AR(1) path on a one-minute grid with the given stationary std.
fn ar1<R: Rng>(len: usize, phi: f64, std: f64, rng: &mut R) -> Vec<f64> {
    let innov = Normal::new(0.0, std * (1.0 - phi * phi).sqrt()).expect("finite std");
    let mut v = Normal::new(0.0, std).expect("finite std").sample(rng);
    (0..len)
        .map(|_| {
            v = phi * v + innov.sample(rng);
            v
        })
        .collect()
}

fn lerp(path: &[f64], t: f64) -> f64 {
    let x = (t / MINUTE).max(0.0);
    let i = (x.floor() as usize).min(path.len() - 2);
    let f = (x - i as f64).min(1.0);
    path[i] * (1.0 - f) + path[i + 1] * f
}

pub fn simulate(config: &SimConfig) -> Result<Simulated> {
    if config.sensors == 0 || !INTEL_SENSOR_IDS.contains(&config.sensors) {
        return Err(Error::Config(format!(
            "sensor count must be in 1..={}",
            INTEL_SENSOR_IDS.end()
        )));
    }
    if config.days == 0 || !(config.interval > 1.0) {
        return Err(Error::Config("need at least one day and an interval above 1 s".into()));
    }
    let horizon = f64::from(config.days) * SECONDS_PER_DAY as f64;
    let minutes = (horizon / MINUTE) as usize + 2;

    let mut rng = seed::derived_rng(config.seed, &[0]);
    let layout: Layout = (1..=config.sensors)
        .map(|id| (id, (rng.gen_range(0.5..ROOM_WIDTH), rng.gen_range(0.5..ROOM_DEPTH))))
        .collect();

    let weather = ar1(minutes, 0.9995, 1.5, &mut rng);
    let zones: Vec<((f64, f64), Vec<f64>)> = (0..6)
        .map(|_| {
            let c = (rng.gen_range(0.0..ROOM_WIDTH), rng.gen_range(0.0..ROOM_DEPTH));
            (c, ar1(minutes, 0.995, 1.2, &mut rng))
        })
        .collect();

    let noise = Normal::new(0.0, 0.04).expect("finite std");
    let mut readings = Vec::new();
    for (&id, &(x, y)) in &layout {
        let mut rng = seed::derived_rng(config.seed, &[1, u64::from(id)]);
        let offset = 0.06 * x - 0.04 * y + rng.gen_range(-0.8..0.8);
        let amplitude = 3.5 * rng.gen_range(0.7..1.3);
        let phase = rng.gen_range(0.33..0.42);
        let weights: Vec<f64> = zones
            .iter()
            .map(|((cx, cy), _)| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * 8.0 * 8.0)).exp())
            .collect();
        let wander = ar1(minutes, 0.98, 0.25, &mut rng);

        let mut outages = Vec::new();
        let mut events = Vec::new();
        for day in 0..config.days {
            let day0 = f64::from(day) * SECONDS_PER_DAY as f64;
            if rng.gen_bool(config.outage_rate) {
                let start = day0 + rng.gen_range(0.0..SECONDS_PER_DAY as f64);
                outages.push((start, start + rng.gen_range(3600.0..10_800.0)));
            }
            if rng.gen_bool(config.anomaly_rate) {
                let start = day0 + rng.gen_range(0.0..SECONDS_PER_DAY as f64 - 7200.0);
                events.push((start, rng.gen_range(3600.0..7200.0), rng.gen_range(12.0..18.0)));
            }
        }

        let mut t = rng.gen_range(0.0..config.interval);
        while t < horizon {
            let lost = rng.gen_bool(config.dropout) || outages.iter().any(|&(a, b)| t >= a && t < b);
            if !lost {
                let diurnal = amplitude * (2.0 * std::f64::consts::PI * (t / SECONDS_PER_DAY as f64 - phase)).sin();
                let regional: f64 = weights.iter().zip(&zones).map(|(w, (_, p))| w * lerp(p, t)).sum();
                let bump: f64 = events
                    .iter()
                    .map(|&(s, len, h)| if t >= s && t < s + len { h * (std::f64::consts::PI * (t - s) / len).sin() } else { 0.0 })
                    .sum();
                let mut value = 19.0 + offset + diurnal + lerp(&weather, t) + regional + lerp(&wander, t) + bump + noise.sample(&mut rng);
                if rng.gen_bool(config.spike_rate) {
                    value = if rng.gen_bool(0.5) { 122.153 } else { -38.4 };
                }
                readings.push(SensorReading {
                    sensor_id: id,
                    timestamp: (t * 1e6).round() / 1e6,
                    value: (value * 1e4).round() / 1e4,
                });
            }
            t += config.interval * rng.gen_range(0.7..1.3);
        }
    }
    readings.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.sensor_id.cmp(&b.sensor_id)));
    Ok(Simulated { layout, readings })
}

/// Writes readings as `date time epoch moteid temperature humidity light voltage`.
pub fn write_readings<W: Write>(mut w: W, readings: &[SensorReading]) -> Result<()> {
    let origin = dataset_origin();
    let mut epochs = std::collections::BTreeMap::<u32, u64>::new();
    for r in readings {
        let at = origin + Duration::microseconds((r.timestamp * 1e6).round() as i64);
        let epoch = epochs.entry(r.sensor_id).or_insert(0);
        *epoch += 1;
        let humidity = (60.0 - 0.9 * r.value).clamp(0.0, 100.0);
        writeln!(
            w,
            "{} {} {} {} {:.4} {:.4} {:.2} {:.5}",
            at.format("%Y-%m-%d"),
            at.format("%H:%M:%S%.6f"),
            epoch,
            r.sensor_id,
            r.value,
            humidity,
            if (21_600..72_000).contains(&(r.timestamp as i64 % SECONDS_PER_DAY)) { 420.0 } else { 1.84 },
            2.7 - 1e-7 * r.timestamp
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_readings, ingest, IngestConfig};
    use std::io::Cursor;

    fn small() -> SimConfig {
        SimConfig {
            sensors: 6,
            days: 2,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_parseable() {
        let a = simulate(&small()).unwrap();
        assert_eq!(a, simulate(&small()).unwrap());
        let mut buf = Vec::new();
        write_readings(&mut buf, &a.readings).unwrap();
        let parsed = parse_readings(Cursor::new(buf)).unwrap();
        assert_eq!(parsed.skipped, 0);
        assert_eq!(parsed.readings.len(), a.readings.len());
        let mut sorted = a.readings.clone();
        sorted.sort_by(|x, y| x.sensor_id.cmp(&y.sensor_id).then(x.timestamp.total_cmp(&y.timestamp)));
        for (p, r) in parsed.readings.iter().zip(&sorted) {
            assert_eq!(p.sensor_id, r.sensor_id);
            assert!((p.timestamp - r.timestamp).abs() < 1e-6);
            assert!((p.value - r.value).abs() < 1e-9);
        }
    }

    #[test]
    fn ingests_into_full_days() {
        let sim = simulate(&small()).unwrap();
        let out = ingest(&sim.readings, &IngestConfig::default()).unwrap();
        assert!(out.instances.len() >= 9, "{} instances", out.instances.len());
        assert!(out.instances.iter().all(|i| i.values.len() == 1440));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(simulate(&SimConfig { sensors: 0, ..small() }).is_err());
        assert!(simulate(&SimConfig { sensors: 55, ..small() }).is_err());
        assert!(simulate(&SimConfig { days: 0, ..small() }).is_err());
    }
}

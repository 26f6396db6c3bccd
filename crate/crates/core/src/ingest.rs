//! Raw Intel Lab log parsing, cleaning, regular resampling and
//! sensor-day instance extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Mote ids present in the Intel Berkeley lab deployment.
pub const INTEL_SENSOR_IDS: RangeInclusive<u32> = 1..=54;

/// Midnight of the first deployment day; all timestamps are seconds after it.
pub fn dataset_origin() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2004, 2, 28)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid origin")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub sensor_id: u32,
    /// Seconds since [`dataset_origin`].
    pub timestamp: f64,
    /// Temperature in °C.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrustClass {
    Trustworthy,
    Untrustworthy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelSource {
    Original,
    Outlier,
    Rwi,
    Drift,
}

/// Trust label of an instance. The class is implied by the source, so an
/// inconsistent pair cannot be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrustLabel {
    source: LabelSource,
}

impl TrustLabel {
    pub const TRUSTWORTHY: TrustLabel = TrustLabel {
        source: LabelSource::Original,
    };

    pub fn untrustworthy(source: LabelSource) -> Self {
        assert!(
            source != LabelSource::Original,
            "original data is labeled trustworthy"
        );
        TrustLabel { source }
    }

    /// Builds a label from both parts, rejecting combinations that violate
    /// `Trustworthy <=> Original`.
    pub fn from_parts(class: TrustClass, source: LabelSource) -> Option<Self> {
        let ok = match class {
            TrustClass::Trustworthy => source == LabelSource::Original,
            TrustClass::Untrustworthy => source != LabelSource::Original,
        };
        ok.then_some(TrustLabel { source })
    }

    pub fn class(&self) -> TrustClass {
        match self.source {
            LabelSource::Original => TrustClass::Trustworthy,
            _ => TrustClass::Untrustworthy,
        }
    }

    pub fn source(&self) -> LabelSource {
        self.source
    }

    pub fn is_trustworthy(&self) -> bool {
        self.class() == TrustClass::Trustworthy
    }

    /// 0 = trustworthy, 1 = untrustworthy.
    pub fn binary(&self) -> u8 {
        u8::from(!self.is_trustworthy())
    }
}

impl fmt::Display for TrustClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrustClass::Trustworthy => "trustworthy",
            TrustClass::Untrustworthy => "untrustworthy",
        })
    }
}

impl FromStr for TrustClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trustworthy" => Ok(TrustClass::Trustworthy),
            "untrustworthy" => Ok(TrustClass::Untrustworthy),
            other => Err(format!("unknown label class `{other}`")),
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Original => "original",
            LabelSource::Outlier => "outlier",
            LabelSource::Rwi => "rwi",
            LabelSource::Drift => "drift",
        })
    }
}

impl FromStr for LabelSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(LabelSource::Original),
            "outlier" => Ok(LabelSource::Outlier),
            "rwi" => Ok(LabelSource::Rwi),
            "drift" => Ok(LabelSource::Drift),
            other => Err(format!("unknown label source `{other}`")),
        }
    }
}

/// Readings of one sensor on a regular time grid. `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularSeries {
    pub sensor_id: u32,
    /// Time of `values[0]`, a multiple of `step`.
    pub start_time: i64,
    pub step: u32,
    pub values: Vec<Option<f64>>,
}

impl RegularSeries {
    pub fn time_at(&self, index: usize) -> i64 {
        self.start_time + index as i64 * i64::from(self.step)
    }

    /// Value at grid time `t`; `None` for gaps, off-grid or out-of-range times.
    pub fn value_at_time(&self, t: i64) -> Option<f64> {
        let offset = t - self.start_time;
        let step = i64::from(self.step);
        if offset < 0 || offset % step != 0 {
            return None;
        }
        self.values.get((offset / step) as usize).copied().flatten()
    }

    pub fn end_time(&self) -> i64 {
        self.time_at(self.values.len().saturating_sub(1))
    }
}

/// One sensor-day of gridded values with a single trust label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sensor_id: u32,
    pub day_index: i64,
    pub values: Vec<f64>,
    /// Fraction of grid points that held real (non-gap) data before filling.
    pub coverage: f64,
    pub label: TrustLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorStats {
    pub sensor_id: u32,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReadings {
    pub readings: Vec<SensorReading>,
    pub skipped: usize,
}

fn parse_timestamp(date: &str, time: &str) -> Option<f64> {
    let dt = NaiveDateTime::parse_from_str(&format!("{date} {time}"), "%Y-%m-%d %H:%M:%S%.f")
        .ok()?;
    let delta = dt - dataset_origin();
    let micros = delta.num_microseconds()?;
    Some(micros as f64 / 1e6)
}

fn parse_reading_line(line: &str) -> Option<SensorReading> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 5 {
        return None;
    }
    // fields[2] is the mote's epoch counter, not a time; date+time carry the clock.
    let timestamp = parse_timestamp(fields[0], fields[1])?;
    let sensor_id: u32 = fields[3].parse().ok()?;
    let value: f64 = fields[4].parse().ok()?;
    if !INTEL_SENSOR_IDS.contains(&sensor_id) || !value.is_finite() || !timestamp.is_finite() {
        return None;
    }
    Some(SensorReading {
        sensor_id,
        timestamp,
        value,
    })
}

/// Parses Intel Lab `data.txt` lines:
/// `date time epoch moteid temperature [humidity light voltage]`.
pub fn parse_readings<R: BufRead>(reader: R) -> Result<ParsedReadings> {
    let mut readings = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_reading_line(&line) {
            Some(r) => readings.push(r),
            None => skipped += 1,
        }
    }
    if readings.is_empty() {
        return Err(Error::EmptyDataset { skipped });
    }
    readings.sort_by(|a, b| {
        a.sensor_id
            .cmp(&b.sensor_id)
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    Ok(ParsedReadings { readings, skipped })
}

pub type Layout = BTreeMap<u32, (f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLayout {
    pub layout: Layout,
    /// Ids of [`INTEL_SENSOR_IDS`] absent from the file.
    pub missing: Vec<u32>,
}

/// Parses `moteid x y` lines (Intel Lab `mote_locs.txt`).
pub fn parse_layout<R: BufRead>(reader: R) -> Result<ParsedLayout> {
    let mut layout = Layout::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::format(lineno, "expected `moteid x y`"));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|_| Error::format(lineno, format!("bad mote id `{}`", fields[0])))?;
        let coord = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(lineno, format!("bad coordinate `{s}`")))
        };
        let (x, y) = (coord(fields[1])?, coord(fields[2])?);
        if layout.insert(id, (x, y)).is_some() {
            return Err(Error::format(lineno, format!("duplicate sensor id {id}")));
        }
    }
    let missing = INTEL_SENSOR_IDS
        .filter(|id| !layout.contains_key(id))
        .collect();
    Ok(ParsedLayout { layout, missing })
}

pub fn write_layout<W: Write>(mut w: W, layout: &Layout) -> Result<()> {
    for (id, (x, y)) in layout {
        writeln!(w, "{id} {x} {y}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub min_value: f64,
    pub max_value: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            min_value: -10.0,
            max_value: 60.0,
        }
    }
}

/// Drops duplicate `(sensor, timestamp)` pairs (first wins) and values
/// outside the physical range. Input must be sorted by sensor then time.
pub fn clean(readings: &[SensorReading], config: &CleanConfig) -> Vec<SensorReading> {
    let mut out: Vec<SensorReading> = Vec::with_capacity(readings.len());
    let mut last_key: Option<(u32, f64)> = None;
    for r in readings {
        let key = (r.sensor_id, r.timestamp);
        if last_key == Some(key) {
            continue;
        }
        last_key = Some(key);
        if r.value < config.min_value || r.value > config.max_value {
            continue;
        }
        out.push(*r);
    }
    out
}

/// Splits a sorted reading list into per-sensor runs.
pub fn group_by_sensor(readings: &[SensorReading]) -> BTreeMap<u32, Vec<SensorReading>> {
    let mut map: BTreeMap<u32, Vec<SensorReading>> = BTreeMap::new();
    for r in readings {
        map.entry(r.sensor_id).or_default().push(*r);
    }
    map
}

/// Linear interpolation of one sensor's readings onto multiples of `step`.
///
/// A grid point is a gap unless it coincides with a reading or lies between
/// two consecutive readings at most `max_gap` seconds apart.
pub fn resample(readings: &[SensorReading], step: u32, max_gap: f64) -> Result<RegularSeries> {
    if step == 0 {
        return Err(Error::Config("resample step must be positive".into()));
    }
    if readings.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "resampling needs at least 2 readings, got {}",
            readings.len()
        )));
    }
    let sensor_id = readings[0].sensor_id;
    let step_i = i64::from(step);
    let first = readings[0].timestamp;
    let last = readings[readings.len() - 1].timestamp;
    let start = (first / step as f64).ceil() as i64 * step_i;
    let end = (last / step as f64).floor() as i64 * step_i;

    let mut values = Vec::new();
    let mut idx = 0;
    let mut t = start;
    while t <= end {
        let tf = t as f64;
        // advance so that readings[idx].timestamp <= tf < readings[idx + 1].timestamp
        while idx + 1 < readings.len() && readings[idx + 1].timestamp <= tf {
            idx += 1;
        }
        let a = readings[idx];
        let value = if a.timestamp == tf {
            Some(a.value)
        } else if idx + 1 < readings.len() {
            let b = readings[idx + 1];
            let span = b.timestamp - a.timestamp;
            if span <= max_gap {
                let w = (tf - a.timestamp) / span;
                Some(a.value + w * (b.value - a.value))
            } else {
                None
            }
        } else {
            None
        };
        values.push(value);
        t += step_i;
    }
    Ok(RegularSeries {
        sensor_id,
        start_time: start,
        step,
        values,
    })
}

/// Fills `None` entries by linear interpolation between known neighbours;
/// leading and trailing gaps take the nearest known value. Returns `None`
/// when nothing is known.
pub(crate) fn fill_gaps(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let at = |i: usize| values[i].expect("known index");
    let mut out = vec![at(first); values.len()];
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (at(a), at(b));
        out[a] = va;
        for i in a + 1..b {
            out[i] = va + (vb - va) * (i - a) as f64 / (b - a) as f64;
        }
    }
    for slot in &mut out[last..] {
        *slot = at(last);
    }
    Some(out)
}

/// Cuts a series into calendar-day instances, keeping days whose non-gap
/// coverage is at least `coverage_min`.
pub fn make_instances(series: &RegularSeries, coverage_min: f64) -> Result<Vec<Instance>> {
    let step = i64::from(series.step);
    if step == 0 || SECONDS_PER_DAY % step != 0 {
        return Err(Error::Config(format!(
            "grid step {} s does not divide a day",
            series.step
        )));
    }
    if series.values.is_empty() {
        return Ok(Vec::new());
    }
    let n = (SECONDS_PER_DAY / step) as usize;
    let first_day = series.start_time.div_euclid(SECONDS_PER_DAY);
    let last_day = series.end_time().div_euclid(SECONDS_PER_DAY);
    let mut out = Vec::new();
    for day in first_day..=last_day {
        let day_start = day * SECONDS_PER_DAY;
        let slots: Vec<Option<f64>> = (0..n)
            .map(|k| series.value_at_time(day_start + k as i64 * step))
            .collect();
        let covered = slots.iter().filter(|v| v.is_some()).count();
        let coverage = covered as f64 / n as f64;
        if covered == 0 || coverage < coverage_min {
            continue;
        }
        let values = fill_gaps(&slots).expect("day has data");
        out.push(Instance {
            sensor_id: series.sensor_id,
            day_index: day,
            values,
            coverage,
            label: TrustLabel::TRUSTWORTHY,
        });
    }
    Ok(out)
}

/// Mean and population standard deviation per sensor.
pub fn sensor_stats(readings: &[SensorReading]) -> BTreeMap<u32, SensorStats> {
    group_by_sensor(readings)
        .into_iter()
        .map(|(id, rs)| {
            let count = rs.len();
            let mean = rs.iter().map(|r| r.value).sum::<f64>() / count as f64;
            let var = rs.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / count as f64;
            (
                id,
                SensorStats {
                    sensor_id: id,
                    mean,
                    std: var.sqrt(),
                    count,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutlierSummary {
    pub flagged: usize,
    /// Sensors whose std is zero (or missing stats); never flagged.
    pub degenerate_sensors: Vec<u32>,
}

/// Relabels every original instance containing a value at least three
/// standard deviations from its sensor mean as an outlier.
pub fn flag_outliers(
    instances: &mut [Instance],
    stats: &BTreeMap<u32, SensorStats>,
) -> OutlierSummary {
    let mut summary = OutlierSummary::default();
    for inst in instances.iter_mut() {
        if inst.label.source() != LabelSource::Original {
            continue;
        }
        let Some(s) = stats.get(&inst.sensor_id).filter(|s| s.std > 0.0) else {
            if !summary.degenerate_sensors.contains(&inst.sensor_id) {
                summary.degenerate_sensors.push(inst.sensor_id);
            }
            continue;
        };
        let limit = 3.0 * s.std;
        if inst.values.iter().any(|v| (v - s.mean).abs() >= limit) {
            inst.label = TrustLabel::untrustworthy(LabelSource::Outlier);
            summary.flagged += 1;
        }
    }
    summary.degenerate_sensors.sort_unstable();
    summary
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub step: u32,
    pub max_gap: f64,
    pub coverage_min: f64,
    pub clean: CleanConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            step: 60,
            max_gap: 900.0,
            coverage_min: 0.9,
            clean: CleanConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub instances: Vec<Instance>,
    pub stats: BTreeMap<u32, SensorStats>,
    pub outliers: OutlierSummary,
    /// Sensors with fewer than two readings after cleaning.
    pub dropped_sensors: Vec<u32>,
    pub readings_kept: usize,
}

/// clean → stats → resample → instances → outlier flags, per sensor in parallel.
pub fn ingest(readings: &[SensorReading], config: &IngestConfig) -> Result<IngestOutput> {
    let cleaned = clean(readings, &config.clean);
    let stats = sensor_stats(&cleaned);
    let groups: Vec<(u32, Vec<SensorReading>)> = group_by_sensor(&cleaned).into_iter().collect();
    let per_sensor: Vec<(u32, Option<Vec<Instance>>)> = groups
        .par_iter()
        .map(|(id, rs)| {
            if rs.len() < 2 {
                return Ok((*id, None));
            }
            let series = resample(rs, config.step, config.max_gap)?;
            Ok((*id, Some(make_instances(&series, config.coverage_min)?)))
        })
        .collect::<Result<_>>()?;
    let mut instances = Vec::new();
    let mut dropped_sensors = Vec::new();
    for (id, insts) in per_sensor {
        match insts {
            Some(v) => instances.extend(v),
            None => dropped_sensors.push(id),
        }
    }
    let outliers = flag_outliers(&mut instances, &stats);
    Ok(IngestOutput {
        instances,
        stats,
        outliers,
        dropped_sensors,
        readings_kept: cleaned.len(),
    })
}

/// Writes `sensor_id,day_index,label_class,label_source,v0..v{N-1}`.
pub fn write_instances<W: Write>(mut w: W, instances: &[Instance]) -> Result<()> {
    let n = instances.first().map_or(0, |i| i.values.len());
    write!(w, "sensor_id,day_index,label_class,label_source")?;
    for k in 0..n {
        write!(w, ",v{k}")?;
    }
    writeln!(w)?;
    for inst in instances {
        write!(
            w,
            "{},{},{},{}",
            inst.sensor_id,
            inst.day_index,
            inst.label.class(),
            inst.label.source()
        )?;
        for v in &inst.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads the instance format. Coverage is not part of it and is set to 1.
pub fn read_instances<R: BufRead>(reader: R) -> Result<Vec<Instance>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(1, "missing header"))??;
    if !header.starts_with("sensor_id,day_index,label_class,label_source") {
        return Err(Error::format(1, "unexpected instance header"));
    }
    let width = header.split(',').count() - 4;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width + 4 {
            return Err(Error::format(lineno, "wrong number of columns"));
        }
        let sensor_id = fields[0]
            .parse()
            .map_err(|_| Error::format(lineno, "bad sensor id"))?;
        let day_index = fields[1]
            .parse()
            .map_err(|_| Error::format(lineno, "bad day index"))?;
        let class: TrustClass = fields[2].parse().map_err(|e| Error::format(lineno, e))?;
        let source: LabelSource = fields[3].parse().map_err(|e| Error::format(lineno, e))?;
        let label = TrustLabel::from_parts(class, source)
            .ok_or_else(|| Error::format(lineno, "inconsistent label class/source"))?;
        let values = fields[4..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(lineno, format!("bad value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Instance {
            sensor_id,
            day_index,
            values,
            coverage: 1.0,
            label,
        });
    }
    Ok(out)
}

pub fn write_stats<W: Write>(mut w: W, stats: &BTreeMap<u32, SensorStats>) -> Result<()> {
    writeln!(w, "sensor_id,mean,std,count")?;
    for s in stats.values() {
        writeln!(w, "{},{},{},{}", s.sensor_id, s.mean, s.std, s.count)?;
    }
    Ok(())
}

pub fn read_stats<R: BufRead>(reader: R) -> Result<BTreeMap<u32, SensorStats>> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate().skip(1) {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(i + 1, "expected `sensor_id,mean,std,count`");
        if f.len() != 4 {
            return Err(bad());
        }
        let s = SensorStats {
            sensor_id: f[0].parse().map_err(|_| bad())?,
            mean: f[1].parse().map_err(|_| bad())?,
            std: f[2].parse().map_err(|_| bad())?,
            count: f[3].parse().map_err(|_| bad())?,
        };
        out.insert(s.sensor_id, s);
    }
    Ok(out)
}

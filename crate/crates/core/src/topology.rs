//! Peer-sensor selection: physical proximity first, then historical correlation.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{Instance, Layout, RegularSeries, SECONDS_PER_DAY};

pub const DEFAULT_PHYSICAL_CANDIDATES: usize = 15;
pub const DEFAULT_NEIGHBORS: usize = 7;

/// Sensor id → neighbour ids, best correlated first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeighborMap(pub BTreeMap<u32, Vec<u32>>);

impl NeighborMap {
    pub fn get(&self, sensor: u32) -> Option<&[u32]> {
        self.0.get(&sensor).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `sensor_id: n1 n2 ... nk` per line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (id, nbrs) in &self.0 {
            let list: Vec<String> = nbrs.iter().map(u32::to_string).collect();
            writeln!(w, "{id}: {}", list.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::format(i + 1, "expected `sensor_id: n1 n2 ...`");
            let (id, rest) = line.split_once(':').ok_or_else(bad)?;
            let id: u32 = id.trim().parse().map_err(|_| bad())?;
            let nbrs = rest
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad()))
                .collect::<Result<Vec<u32>>>()?;
            map.insert(id, nbrs);
        }
        Ok(NeighborMap(map))
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// The `k_phys` sensors nearest to `sensor_id`, ascending distance, ties by id.
pub fn euclidean_candidates(layout: &Layout, sensor_id: u32, k_phys: usize) -> Result<Vec<u32>> {
    let origin = *layout
        .get(&sensor_id)
        .ok_or(Error::UnknownSensor(sensor_id))?;
    if k_phys >= layout.len() {
        return Err(Error::Config(format!(
            "{k_phys} physical candidates requested from a layout of {} sensors",
            layout.len()
        )));
    }
    let mut others: Vec<(f64, u32)> = layout
        .iter()
        .filter(|(&id, _)| id != sensor_id)
        .map(|(&id, &pos)| (distance(origin, pos), id))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(others.into_iter().take(k_phys).map(|(_, id)| id).collect())
}

/// Pearson correlation over the grid points where both series hold data.
pub fn historical_correlation(a: &RegularSeries, b: &RegularSeries) -> Result<f64> {
    if a.step != b.step {
        return Err(Error::Config("series have different grid steps".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .values
        .iter()
        .enumerate()
        .filter_map(|(i, va)| {
            let vb = b.value_at_time(a.time_at(i))?;
            Some(((*va)?, vb))
        })
        .unzip();
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "sensors {} and {} share {} grid points",
            a.sensor_id,
            b.sensor_id,
            xs.len()
        )));
    }
    crate::features::pearson(&xs, &ys)
}

/// Per-sensor series holding only trustworthy original instances; other
/// days are gaps.
pub fn trustworthy_series(instances: &[Instance], step: u32) -> BTreeMap<u32, RegularSeries> {
    let mut by_sensor: BTreeMap<u32, Vec<&Instance>> = BTreeMap::new();
    for inst in instances.iter().filter(|i| i.label.is_trustworthy()) {
        by_sensor.entry(inst.sensor_id).or_default().push(inst);
    }
    let per_day = (SECONDS_PER_DAY / i64::from(step)) as usize;
    by_sensor
        .into_iter()
        .map(|(id, insts)| {
            let first = insts.iter().map(|i| i.day_index).min().unwrap();
            let last = insts.iter().map(|i| i.day_index).max().unwrap();
            let days = (last - first + 1) as usize;
            let mut values = vec![None; days * per_day];
            for inst in insts {
                let offset = (inst.day_index - first) as usize * per_day;
                for (slot, v) in values[offset..offset + per_day].iter_mut().zip(&inst.values) {
                    *slot = Some(*v);
                }
            }
            (
                id,
                RegularSeries {
                    sensor_id: id,
                    start_time: first * SECONDS_PER_DAY,
                    step,
                    values,
                },
            )
        })
        .collect()
}

/// For every sensor with a series: take the `k_phys` physically nearest
/// candidates that also have series, rank them by historical correlation
/// (undefined correlations last, ties by id) and keep the top `k`.
///
/// `k_phys` is reduced to `sensors - 1` on small deployments.
pub fn select_neighbors(
    layout: &Layout,
    series: &BTreeMap<u32, RegularSeries>,
    k_phys: usize,
    k: usize,
) -> Result<NeighborMap> {
    let usable: Layout = layout
        .iter()
        .filter(|(id, _)| series.contains_key(id))
        .map(|(&id, &p)| (id, p))
        .collect();
    if usable.len() < k + 1 {
        return Err(Error::InsufficientData(format!(
            "{} sensors with usable series, need at least {}",
            usable.len(),
            k + 1
        )));
    }
    let k_phys = k_phys.min(usable.len() - 1);
    let entries: Vec<(u32, Vec<u32>)> = usable
        .keys()
        .copied()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&id| {
            let candidates = euclidean_candidates(&usable, id, k_phys)?;
            let own = &series[&id];
            let mut scored: Vec<(Option<f64>, u32)> = candidates
                .into_iter()
                .map(|c| (historical_correlation(own, &series[&c]).ok(), c))
                .collect();
            let defined = scored.iter().filter(|s| s.0.is_some()).count();
            if defined < k {
                return Err(Error::Selection {
                    sensor: id,
                    message: format!("only {defined} candidates with defined correlation, need {k}"),
                });
            }
            scored.sort_by(|a, b| match (a.0, b.0) {
                (Some(x), Some(y)) => y.total_cmp(&x).then(a.1.cmp(&b.1)),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => a.1.cmp(&b.1),
            });
            Ok((id, scored.into_iter().take(k).map(|(_, c)| c).collect()))
        })
        .collect::<Result<_>>()?;
    Ok(NeighborMap(entries.into_iter().collect()))
}

//! CSV artifacts, run manifests and the benchmark tables.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dynamics::{RampLogRow, SpaceTime};
use crate::error::{Error, Result};
use crate::harness::{ExperimentResult, GridResult, MetricSettings, Stat};
use crate::metrics::TripRecord;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.toml";
pub const TRIPS: &str = "trips.csv";
pub const RAMP_LOG: &str = "ramp_log.csv";
pub const SPACETIME_SPEED: &str = "spacetime_speed.csv";
pub const SPACETIME_OCCUPANCY: &str = "spacetime_occupancy.csv";

/// Provenance of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub controller: String,
    pub metrics: MetricSettings,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trips(path: &Path, trips: &[TripRecord]) -> Result<()> {
    let mut w = writer(path)?;
    for t in trips {
        w.serialize(t)?;
    }
    finish(w, path)
}

pub fn read_trips(path: &Path) -> Result<Vec<TripRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(f)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_ramp_log(path: &Path, rows: &[RampLogRow]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w, path)
}

/// Header `time_s` then one column per cell position; one row per step.
pub fn write_matrix(
    path: &Path,
    positions_m: &[f64],
    times_s: &[f64],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("time_s".to_string())
        .chain(positions_m.iter().map(|p| p.to_string()))
        .collect();
    w.write_record(&header)?;
    for (t, row) in times_s.iter().zip(rows) {
        let rec: Vec<String> = std::iter::once(t.to_string())
            .chain(row.iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn write_spacetime(dir: &Path, st: &SpaceTime) -> Result<()> {
    write_matrix(
        &dir.join(SPACETIME_SPEED),
        &st.positions_m,
        &st.times_s,
        &st.speed_kmh,
    )?;
    write_matrix(
        &dir.join(SPACETIME_OCCUPANCY),
        &st.positions_m,
        &st.times_s,
        &st.occupancy,
    )
}

fn cell(stat: Option<&Stat>, decimals: usize) -> String {
    match stat {
        Some(s) => format!("{:.d$} ({:.d$})", s.mean, s.std, d = decimals),
        None => "n/a".into(),
    }
}

fn table(path: &Path, results: &[ExperimentResult], rows: &[(String, usize)]) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<&str> = std::iter::once("metric")
        .chain(results.iter().map(|r| r.controller.as_str()))
        .collect();
    w.write_record(&header)?;
    for (label, decimals) in rows {
        let rec: Vec<String> = std::iter::once(label.clone())
            .chain(
                results
                    .iter()
                    .map(|r| cell(r.aggregate.get(label), *decimals)),
            )
            .collect();
        w.write_record(&rec)?;
    }
    finish(w, path)
}

const EFFICIENCY_ROWS: [(&str, usize); 8] = [
    ("Total Departed Vehicles", 1),
    ("Total Arrived Vehicles", 1),
    ("Arrival Rate (%)", 2),
    ("Total Travel Time (h)", 2),
    ("Total Travel Distance (km)", 1),
    ("Total Delay (h)", 2),
    ("Average Speed (km/h)", 2),
    ("Average Delay (s/veh)", 1),
];

/// Efficiency panel, controllers as columns, cells `mean (std)`.
pub fn write_efficiency_table(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let rows: Vec<(String, usize)> = EFFICIENCY_ROWS
        .iter()
        .map(|(l, d)| (l.to_string(), *d))
        .collect();
    table(path, results, &rows)
}

/// Per-ramp delays and fairness statistics, controllers as columns.
pub fn write_fairness_table(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let mut labels: IndexMap<String, usize> = IndexMap::new();
    for r in results {
        for k in r.aggregate.keys() {
            if EFFICIENCY_ROWS.iter().any(|(l, _)| l == k) {
                continue;
            }
            let decimals = if k.contains("Gini") { 4 } else { 1 };
            labels.entry(k.clone()).or_insert(decimals);
        }
    }
    // ramps first, then the summary statistics in a fixed order
    let mut rows: Vec<(String, usize)> = labels
        .iter()
        .filter(|(k, _)| k.starts_with("Ramp "))
        .map(|(k, d)| (k.clone(), *d))
        .collect();
    rows.extend(
        labels
            .iter()
            .filter(|(k, _)| !k.starts_with("Ramp "))
            .map(|(k, d)| (k.clone(), *d)),
    );
    table(path, results, &rows)
}

/// Every per-seed value at full precision, one row per (controller, seed, metric).
pub fn write_per_seed(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["controller", "seed", "metric", "value"])?;
    for r in results {
        for s in &r.per_seed {
            for (k, v) in s.values() {
                w.write_record([r.controller.clone(), s.seed.to_string(), k, v.to_string()])?;
            }
        }
    }
    finish(w, path)
}

const GRID_METRICS: [&str; 4] = [
    "Total Arrived Vehicles",
    "Total Delay (h)",
    "Gini",
    "Rawlsian max (s)",
];

/// One row per (point, seed) followed by one aggregate row per point in
/// rank order.
pub fn write_grid(path: &Path, grid: &GridResult) -> Result<()> {
    let names: Vec<&str> = grid
        .points
        .first()
        .map(|p| p.params.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["row", "point", "rank"].map(String::from).to_vec();
    header.extend(names.iter().map(|n| n.to_string()));
    header.push("seed".into());
    header.extend(GRID_METRICS.map(String::from));
    header.extend(GRID_METRICS.map(|m| format!("{m} std")));
    w.write_record(&header)?;
    let rank_of: Vec<usize> = {
        let mut r = vec![0; grid.points.len()];
        for (rank, &p) in grid.ranking.iter().enumerate() {
            r[p] = rank + 1;
        }
        r
    };
    let params = |p: usize| {
        grid.points[p]
            .params
            .iter()
            .map(|(_, v)| v.clone())
            .collect::<Vec<_>>()
    };
    for (p, res) in grid.results.iter().enumerate() {
        for s in &res.per_seed {
            let vals = s.values();
            let mut rec = vec!["seed".to_string(), p.to_string(), rank_of[p].to_string()];
            rec.extend(params(p));
            rec.push(s.seed.to_string());
            rec.extend(
                GRID_METRICS
                    .iter()
                    .map(|m| vals.get(*m).map_or(String::new(), |v| v.to_string())),
            );
            rec.extend(GRID_METRICS.iter().map(|_| String::new()));
            w.write_record(&rec)?;
        }
    }
    for &p in &grid.ranking {
        let agg = &grid.results[p].aggregate;
        let mut rec = vec!["mean".to_string(), p.to_string(), rank_of[p].to_string()];
        rec.extend(params(p));
        rec.push(String::new());
        rec.extend(
            GRID_METRICS
                .iter()
                .map(|m| agg.get(*m).map_or(String::new(), |s| s.mean.to_string())),
        );
        rec.extend(
            GRID_METRICS
                .iter()
                .map(|m| agg.get(*m).map_or(String::new(), |s| s.std.to_string())),
        );
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trips_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let trips = vec![
            TripRecord {
                origin: "a".into(),
                destination: "x".into(),
                depart_s: 600.0,
                arrive_s: Some(1_234.567_890_123_456_7),
                distance_km: 3.5,
                freeflow_time_s: 140.0,
                weight: 1.0 / 3.0,
            },
            TripRecord {
                origin: "b".into(),
                destination: String::new(),
                depart_s: 660.0,
                arrive_s: None,
                distance_km: 0.0,
                freeflow_time_s: 0.0,
                weight: 1e-9,
            },
        ];
        write_trips(&path, &trips).unwrap();
        assert_eq!(read_trips(&path).unwrap(), trips);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            version: VERSION.into(),
            scenario_sha256: "ab".repeat(32),
            seed: 7,
            controller: "alinea".into(),
            metrics: MetricSettings {
                eval_window_s: [600.0, 7800.0],
                min_ramp_demand_veh: 0.0,
                distance_bins_km: vec![2.0, 5.0],
                on_ramps: vec!["a".into(), "b".into()],
            },
        };
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
    }

    #[test]
    fn table_cells() {
        let s = Stat {
            mean: 282.8181,
            std: 3.04,
            n: 10,
        };
        assert_eq!(cell(Some(&s), 1), "282.8 (3.0)");
        assert_eq!(cell(None, 4), "n/a");
    }
}

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{run_simulation, Plant, SimOutput};
use crate::error::{Error, Result};
use crate::metrics::{self, EfficiencyReport, FairnessReport, RelativeDelay, TripRecord};

use super::scenario::{build_controller, ControllerSpec, Scenario};

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "RAMPMETER_WORKERS";

/// Label of the Gini coefficient of the seed-averaged per-ramp delays.
pub const GINI_OF_MEANS: &str = "Gini of mean delays";

/// What the reports need besides the trips themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub eval_window_s: [f64; 2],
    pub min_ramp_demand_veh: f64,
    pub distance_bins_km: Vec<f64>,
    /// On-ramp ids in corridor order.
    pub on_ramps: Vec<String>,
}

/// Everything computed from one seed's trips.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub efficiency: EfficiencyReport,
    /// `None` when no ramp had completed trips in the window.
    pub fairness: Option<FairnessReport>,
    pub relative: Option<RelativeDelay>,
}

impl SeedReport {
    /// Computes the reports on the evaluation window.
    pub fn from_trips(seed: u64, trips: &[TripRecord], settings: &MetricSettings) -> Result<Self> {
        let window = (settings.eval_window_s[0], settings.eval_window_s[1]);
        let efficiency = metrics::efficiency(trips, window);
        let per_ramp = metrics::per_ramp_avg_delay(
            trips,
            window,
            settings.min_ramp_demand_veh,
            &settings.on_ramps,
        );
        let fairness = if per_ramp.is_empty() {
            None
        } else {
            Some(metrics::fairness(
                &per_ramp,
                &metrics::origin_demand(trips, window),
            )?)
        };
        let edges = &settings.distance_bins_km;
        let relative = if edges.is_empty() {
            None
        } else {
            let inside: Vec<TripRecord> = trips
                .iter()
                .filter(|t| t.departs_within(window))
                .cloned()
                .collect();
            Some(metrics::relative_delay_by_distance(&inside, edges)?)
        };
        Ok(Self {
            seed,
            efficiency,
            fairness,
            relative,
        })
    }

    /// Flat labelled view used for aggregation and tables.
    pub fn values(&self) -> IndexMap<String, f64> {
        let mut out: IndexMap<String, f64> = self
            .efficiency
            .rows()
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect();
        if let Some(f) = &self.fairness {
            for (ramp, d) in &f.per_ramp_avg_delay {
                out.insert(ramp_label(ramp), *d);
            }
            out.insert("Harsanyian (s)".into(), f.harsanyian);
            out.insert("Gini".into(), f.gini);
            out.insert("Rawlsian max (s)".into(), f.rawlsian_max);
            out.insert("Aristotelian (s)".into(), f.aristotelian);
        }
        if let Some(r) = &self.relative {
            for b in &r.bins {
                if let Some(v) = b.delay_s_per_km {
                    out.insert(bin_label(b.lo_km, b.hi_km), v);
                }
            }
            if let Some(g) = r.gini {
                out.insert("Relative delay Gini".into(), g);
            }
        }
        out
    }
}

pub fn ramp_label(ramp: &str) -> String {
    format!("Ramp {ramp} (s)")
}

pub fn bin_label(lo: f64, hi: Option<f64>) -> String {
    match hi {
        Some(hi) => format!("Delay/km [{lo}, {hi}) km (s/km)"),
        None => format!("Delay/km [{lo}, inf) km (s/km)"),
    }
}

/// Mean and sample standard deviation over the seeds reporting a metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

/// Per-seed reports in ascending seed order plus their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub controller: String,
    pub per_seed: Vec<SeedReport>,
    pub aggregate: IndexMap<String, Stat>,
}

/// Element-wise mean/std over seeds, in ascending seed order so that the
/// result does not depend on the order seeds were listed or executed.
pub fn aggregate(controller: &str, mut per_seed: Vec<SeedReport>) -> Result<ExperimentResult> {
    per_seed.sort_by_key(|r| r.seed);
    let mut columns: IndexMap<String, Vec<f64>> = IndexMap::new();
    for r in &per_seed {
        for (k, v) in r.values() {
            columns.entry(k).or_default().push(v);
        }
    }
    let mut aggregate: IndexMap<String, Stat> = columns
        .iter()
        .filter_map(|(k, xs)| Stat::of(xs).map(|s| (k.clone(), s)))
        .collect();
    let ramp_means: Vec<(f64, f64)> = aggregate
        .iter()
        .filter(|(k, _)| k.starts_with("Ramp "))
        .map(|(_, s)| (s.mean.max(0.0), 1.0))
        .collect();
    if !ramp_means.is_empty() {
        let g = metrics::gini(&ramp_means)?;
        aggregate.insert(
            GINI_OF_MEANS.into(),
            Stat {
                mean: g,
                std: 0.0,
                n: per_seed.len(),
            },
        );
    }
    Ok(ExperimentResult {
        controller: controller.to_string(),
        per_seed,
        aggregate,
    })
}

/// One finished seed run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub output: SimOutput,
    pub report: SeedReport,
}

/// Simulates one seed with the given controller block.
pub fn run_seed(scenario: &Scenario, spec: &ControllerSpec, seed: u64) -> Result<SeedRun> {
    let inner = || -> Result<SeedRun> {
        let net = scenario.network()?;
        let plant = Plant::new(&net, scenario.seeded_demand(seed)?, scenario.plant_config())?;
        let mut controller = build_controller(&net, spec, scenario.simulation.cycle_s)?;
        let output = run_simulation(&plant, controller.as_mut(), scenario.run_settings())?;
        let report = SeedReport::from_trips(seed, &output.trips, &scenario.metric_settings(&net))?;
        Ok(SeedRun {
            seed,
            output,
            report,
        })
    };
    inner().map_err(|e| Error::Seed {
        seed,
        source: Box::new(e),
    })
}

/// Thread pool sized by [`WORKERS_ENV`], defaulting to all cores.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::Config(format!(
                "{WORKERS_ENV} must be a non-negative integer, got `{v}`"
            ))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every seed in parallel; results come back in the order of `seeds`.
pub fn run_seeds(
    scenario: &Scenario,
    spec: &ControllerSpec,
    seeds: &[u64],
) -> Result<Vec<SeedRun>> {
    worker_pool()?.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(scenario, spec, s))
            .collect()
    })
}

pub fn run_experiment(
    scenario: &Scenario,
    controller: &str,
    seeds: &[u64],
) -> Result<ExperimentResult> {
    let spec = scenario.controller_spec(controller)?;
    let runs = run_seeds(scenario, spec, seeds)?;
    aggregate(controller, runs.into_iter().map(|r| r.report).collect())
}

//! Command-line front end: simulate, benchmark, gridsearch and report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use log::{info, warn};

use crate::error::{Error, Result};
use crate::harness::{
    aggregate, grid_search, run_seed, run_seeds, ExperimentResult, Scenario, SeedReport,
};
use crate::io::{self, Manifest};

#[derive(Debug, Parser)]
#[command(
    name = "rampmeter",
    version,
    about = "Freeway ramp-metering simulator and benchmark"
)]
pub struct Cli {
    /// Only print errors.
    #[arg(long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Print progress; repeat for more detail.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Dotted-key override such as `controller.alinea.k_gain=5000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one controller for one seed and write trips, ramp log and space-time matrices.
    Simulate {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Controller block to run; defaults to the first one in the scenario.
        #[arg(long)]
        controllers: Option<String>,
    },
    /// Run several controllers over a seed list and write the comparison tables.
    Benchmark {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Comma-separated controller block names; defaults to all blocks.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<String>,
        /// `N..M` (inclusive) or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Evaluate the `[experiment.grid]` parameter grid.
    Gridsearch {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Recompute the tables from saved runs without simulating.
    Report {
        /// Run directories, or directories searched for run manifests.
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Column order; defaults to the order runs are found.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<String>,
    },
}

/// Parses `N..M` (inclusive) or `a,b,c`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || {
        Error::Config(format!(
            "cannot parse seed list `{text}`; use N..M or a,b,c"
        ))
    };
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

/// Output tree built in a hidden staging directory and moved into place
/// only when every file was written.
struct Staging {
    out: PathBuf,
    dir: PathBuf,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let dir = out.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
        })
    }

    fn path(&self) -> &Path {
        &self.dir
    }

    fn commit(self) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&self.dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let target = self.out.join(e.file_name());
            if target.is_dir() {
                std::fs::remove_dir_all(&target).map_err(|err| Error::io(&target, err))?;
            } else if target.exists() {
                std::fs::remove_file(&target).map_err(|err| Error::io(&target, err))?;
            }
            std::fs::rename(e.path(), &target).map_err(|err| Error::io(&target, err))?;
        }
        std::fs::remove_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn with_staging(out: &Path, body: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let staging = Staging::new(out)?;
    body(staging.path())?;
    staging.commit()
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_tables(dir: &Path, results: &[ExperimentResult]) -> Result<()> {
    io::write_efficiency_table(&dir.join("efficiency.csv"), results)?;
    io::write_fairness_table(&dir.join("fairness.csv"), results)?;
    io::write_per_seed(&dir.join("per_seed.csv"), results)
}

pub fn simulate(
    scenario: &Scenario,
    controller: Option<&str>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let name = match controller {
        Some(n) => n.to_string(),
        None => scenario.controller_names()[0].clone(),
    };
    let spec = scenario.controller_spec(&name)?;
    let seed = seed.unwrap_or(scenario.experiment.seeds[0]);
    let net = scenario.network()?;
    info!("simulating `{name}` with seed {seed}");
    let run = run_seed(scenario, spec, seed)?;
    with_staging(out, |dir| {
        io::write_trips(&dir.join(io::TRIPS), &run.output.trips)?;
        io::write_ramp_log(&dir.join(io::RAMP_LOG), &run.output.ramp_log)?;
        io::write_spacetime(dir, &run.output.spacetime)?;
        Manifest {
            version: io::VERSION.into(),
            scenario_sha256: scenario.digest(),
            seed,
            controller: name.clone(),
            metrics: scenario.metric_settings(&net),
        }
        .write(dir)
    })
}

pub fn benchmark(
    scenario: &Scenario,
    controllers: &[String],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<ExperimentResult>> {
    let names: Vec<String> = if controllers.is_empty() {
        scenario.controller_names()
    } else {
        controllers.to_vec()
    };
    for n in &names {
        scenario.controller_spec(n)?;
    }
    let net = scenario.network()?;
    let digest = scenario.digest();
    let mut results = Vec::new();
    with_staging(out, |dir| {
        for name in &names {
            info!("benchmarking `{name}` over {} seeds", seeds.len());
            let runs = run_seeds(scenario, scenario.controller_spec(name)?, seeds)?;
            for run in &runs {
                let rd = dir
                    .join("runs")
                    .join(name)
                    .join(format!("seed-{}", run.seed));
                mkdir(&rd)?;
                io::write_trips(&rd.join(io::TRIPS), &run.output.trips)?;
                io::write_ramp_log(&rd.join(io::RAMP_LOG), &run.output.ramp_log)?;
                Manifest {
                    version: io::VERSION.into(),
                    scenario_sha256: digest.clone(),
                    seed: run.seed,
                    controller: name.clone(),
                    metrics: scenario.metric_settings(&net),
                }
                .write(&rd)?;
            }
            results.push(aggregate(
                name,
                runs.into_iter().map(|r| r.report).collect(),
            )?);
        }
        write_tables(dir, &results)
    })?;
    Ok(results)
}

pub fn gridsearch(scenario: &Scenario, seeds: Option<Vec<u64>>, out: &Path) -> Result<()> {
    let mut grid = scenario
        .experiment
        .grid
        .clone()
        .ok_or_else(|| Error::Scenario("no [experiment.grid] section".into()))?;
    if let Some(s) = seeds {
        grid.seeds = s;
    }
    let result = grid_search(scenario, &grid)?;
    let best = result.best();
    info!("best point {}: {:?}", best.index, best.params);
    with_staging(out, |dir| {
        io::write_grid(&dir.join("gridsearch.csv"), &result)?;
        let mut doc = toml::Table::new();
        let mut blocks = toml::Table::new();
        blocks.insert(
            grid.controller.clone(),
            toml::Value::try_from(&best.spec).map_err(|e| Error::Config(e.to_string()))?,
        );
        doc.insert("controller".into(), toml::Value::Table(blocks));
        io::write_text(
            &dir.join("best.toml"),
            &toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?,
        )
    })
}

fn find_runs(root: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if root.join(io::MANIFEST).is_file() {
        found.push(root.to_path_buf());
        return Ok(());
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        find_runs(&d, found)?;
    }
    Ok(())
}

pub fn report(
    run_dirs: &[PathBuf],
    controllers: &[String],
    out: &Path,
) -> Result<Vec<ExperimentResult>> {
    let mut found = Vec::new();
    for d in run_dirs {
        find_runs(d, &mut found)?;
    }
    if found.is_empty() {
        return Err(Error::Config(
            "no run manifests found in the given directories".into(),
        ));
    }
    let mut warnings = Vec::new();
    let mut groups: IndexMap<String, Vec<SeedReport>> = controllers
        .iter()
        .map(|c| (c.clone(), Vec::new()))
        .collect();
    let mut settings_of: IndexMap<String, _> = IndexMap::new();
    for dir in &found {
        let m = Manifest::read(dir)?;
        if m.version != io::VERSION {
            warnings.push(format!(
                "{}: written by version {}, reading with {}",
                dir.display(),
                m.version,
                io::VERSION
            ));
        }
        let first = settings_of
            .entry(m.controller.clone())
            .or_insert_with(|| m.metrics.clone());
        if *first != m.metrics {
            warnings.push(format!(
                "{}: metric settings differ from other `{}` runs",
                dir.display(),
                m.controller
            ));
        }
        let trips = io::read_trips(&dir.join(io::TRIPS))?;
        let r = SeedReport::from_trips(m.seed, &trips, &m.metrics)?;
        match groups.get_mut(&m.controller) {
            Some(g) => g.push(r),
            None if controllers.is_empty() => {
                groups.insert(m.controller.clone(), vec![r]);
            }
            None => warnings.push(format!(
                "{}: controller `{}` not requested, skipped",
                dir.display(),
                m.controller
            )),
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    let results = groups
        .into_iter()
        .map(|(name, reports)| {
            if reports.is_empty() {
                Err(Error::Config(format!(
                    "no runs found for controller `{name}`"
                )))
            } else {
                aggregate(&name, reports)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    with_staging(out, |dir| {
        write_tables(dir, &results)?;
        if !warnings.is_empty() {
            io::write_text(&dir.join("warnings.txt"), &(warnings.join("\n") + "\n"))?;
        }
        Ok(())
    })?;
    Ok(results)
}

fn load(common: &ScenarioArgs) -> Result<Scenario> {
    Scenario::load(&common.scenario, &common.overrides)
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Simulate {
            common,
            seed,
            controllers,
        } => simulate(&load(common)?, controllers.as_deref(), *seed, &common.out),
        Command::Benchmark {
            common,
            controllers,
            seeds,
        } => {
            let scenario = load(common)?;
            let seeds = match seeds {
                Some(s) => parse_seeds(s)?,
                None => scenario.experiment.seeds.clone(),
            };
            benchmark(&scenario, controllers, &seeds, &common.out).map(|_| ())
        }
        Command::Gridsearch { common, seeds } => {
            let seeds = seeds.as_deref().map(parse_seeds).transpose()?;
            gridsearch(&load(common)?, seeds, &common.out)
        }
        Command::Report {
            run_dirs,
            out,
            controllers,
        } => report(run_dirs, controllers, out).map(|_| ()),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("4, 2").unwrap(), vec![4, 2]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn cli_parses() {
        let cli = Cli::try_parse_from([
            "rampmeter",
            "benchmark",
            "--scenario",
            "s.toml",
            "--out",
            "o",
            "--controllers",
            "alinea,no_control",
            "--set",
            "a.b=1",
            "--set",
            "c=2",
            "--seeds",
            "1..10",
        ])
        .unwrap();
        match cli.command {
            Command::Benchmark {
                common,
                controllers,
                seeds,
            } => {
                assert_eq!(controllers, vec!["alinea", "no_control"]);
                assert_eq!(common.overrides.len(), 2);
                assert_eq!(seeds.as_deref(), Some("1..10"));
            }
            other => panic!("{other:?}"),
        }
    }
}

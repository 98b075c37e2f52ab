use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::experiment::{aggregate, run_seed, worker_pool, ExperimentResult};
use super::scenario::{ControllerSpec, GridSpec, Objective, Scenario};

pub const THROUGHPUT: &str = "Total Arrived Vehicles";
pub const TOTAL_DELAY: &str = "Total Delay (h)";

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    /// Varied parameters and their values, in grid order.
    pub params: Vec<(String, String)>,
    pub spec: ControllerSpec,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub objective: Objective,
    pub points: Vec<GridPoint>,
    /// One experiment per point, same order as `points`.
    pub results: Vec<ExperimentResult>,
    /// Point indices, best first.
    pub ranking: Vec<usize>,
}

impl GridResult {
    pub fn best(&self) -> &GridPoint {
        &self.points[self.ranking[0]]
    }
}

/// Cartesian product of the non-empty value lists, first parameter slowest.
pub fn grid_points(base: &ControllerSpec, grid: &GridSpec) -> Vec<GridPoint> {
    type Setter = Box<dyn Fn(&mut ControllerSpec)>;
    let mut axes: Vec<(&str, Vec<(String, Setter)>)> = Vec::new();
    macro_rules! axis {
        ($field:ident) => {
            if !grid.$field.is_empty() {
                let vals = grid
                    .$field
                    .iter()
                    .map(|&v| {
                        let set: Setter =
                            Box::new(move |s: &mut ControllerSpec| s.$field = Some(v));
                        (v.to_string(), set)
                    })
                    .collect();
                axes.push((stringify!($field), vals));
            }
        };
    }
    axis!(k_gain);
    axis!(o_hat);
    axis!(k_c);
    axis!(m);
    axis!(norm_mode);
    axis!(k1);
    axis!(k2);

    let mut points = vec![(Vec::new(), base.clone())];
    for (name, vals) in &axes {
        points = points
            .into_iter()
            .flat_map(|(params, spec): (Vec<(String, String)>, ControllerSpec)| {
                vals.iter().map(move |(label, set)| {
                    let mut p = params.clone();
                    p.push((name.to_string(), label.clone()));
                    let mut s = spec.clone();
                    set(&mut s);
                    (p, s)
                })
            })
            .collect();
    }
    points
        .into_iter()
        .enumerate()
        .map(|(index, (params, spec))| GridPoint {
            index,
            params,
            spec,
        })
        .collect()
}

fn mean_of(r: &ExperimentResult, key: &str) -> f64 {
    r.aggregate.get(key).map_or(0.0, |s| s.mean)
}

/// Total order: objective, then the other criterion, then grid position.
fn compare(
    objective: &Objective,
    a: (usize, &ExperimentResult),
    b: (usize, &ExperimentResult),
) -> Ordering {
    let (ta, tb) = (mean_of(a.1, THROUGHPUT), mean_of(b.1, THROUGHPUT));
    let (da, db) = (mean_of(a.1, TOTAL_DELAY), mean_of(b.1, TOTAL_DELAY));
    let by_throughput = tb.total_cmp(&ta);
    let by_delay = da.total_cmp(&db);
    let primary = match objective {
        Objective::MaxThroughput => by_throughput.then(by_delay),
        Objective::MinTotalDelay => by_delay.then(by_throughput),
    };
    primary.then(a.0.cmp(&b.0))
}

/// Evaluates every grid point on every grid seed and ranks the points.
pub fn grid_search(scenario: &Scenario, grid: &GridSpec) -> Result<GridResult> {
    if grid.seeds.is_empty() {
        return Err(Error::Config("grid needs at least one seed".into()));
    }
    let base = scenario.controller_spec(&grid.controller)?;
    let points = grid_points(base, grid);
    let runs = points.len() * grid.seeds.len();
    let budget = scenario.experiment.budget;
    if runs > budget {
        return Err(Error::Budget { runs, budget });
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| grid.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let reports = worker_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| run_seed(scenario, &points[p].spec, s).map(|r| r.report))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut per_point: Vec<Vec<_>> = vec![Vec::new(); points.len()];
    for ((p, _), r) in jobs.iter().zip(reports) {
        per_point[*p].push(r);
    }
    let results = per_point
        .into_iter()
        .map(|reports| aggregate(&grid.controller, reports))
        .collect::<Result<Vec<_>>>()?;
    let mut ranking: Vec<usize> = (0..points.len()).collect();
    ranking.sort_by(|&a, &b| compare(&grid.objective, (a, &results[a]), (b, &results[b])));
    Ok(GridResult {
        objective: grid.objective.clone(),
        points,
        results,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::NormMode;
    use crate::harness::scenario::ControllerKind;

    fn grid() -> GridSpec {
        GridSpec {
            controller: "c".into(),
            objective: Objective::MaxThroughput,
            seeds: vec![1],
            k_gain: vec![1.0, 2.0],
            o_hat: vec![],
            k_c: vec![0.1, 0.2, 0.3],
            m: vec![],
            norm_mode: vec![NormMode::Local],
            k1: vec![],
            k2: vec![],
        }
    }

    #[test]
    fn product_order_is_lexicographic() {
        let pts = grid_points(&ControllerSpec::new(ControllerKind::CeqAlinea), &grid());
        assert_eq!(pts.len(), 6);
        let firsts: Vec<(Option<f64>, Option<f64>)> =
            pts.iter().map(|p| (p.spec.k_gain, p.spec.k_c)).collect();
        assert_eq!(
            firsts,
            vec![
                (Some(1.0), Some(0.1)),
                (Some(1.0), Some(0.2)),
                (Some(1.0), Some(0.3)),
                (Some(2.0), Some(0.1)),
                (Some(2.0), Some(0.2)),
                (Some(2.0), Some(0.3)),
            ]
        );
        assert!(pts
            .iter()
            .all(|p| p.spec.norm_mode == Some(NormMode::Local)));
        assert_eq!(pts[4].params[1], ("k_c".to_string(), "0.2".to_string()));
    }

    #[test]
    fn empty_grid_is_the_base_point() {
        let mut g = grid();
        g.k_gain.clear();
        g.k_c.clear();
        g.norm_mode.clear();
        let base = ControllerSpec::new(ControllerKind::Alinea);
        let pts = grid_points(&base, &g);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].spec, base);
    }
}

//! First-order cell-transmission plant: triangular fundamental diagram,
//! metered on-ramp queues, merge/diverge logic, detector occupancy and trip
//! accounting.

mod cell;
mod demand;
mod ledger;
mod measure;
mod run;

use serde::{Deserialize, Serialize};

pub use cell::Cell;
pub use demand::{DemandProfile, MAINLINE};
pub use ledger::{LedgerGeometry, TripLedger, PRUNE_VEH};
pub use measure::{measure, MeasurementFrame, OccupancyWindow};
pub use run::{run_simulation, RampLogRow, RunSettings, SimOutput, SpaceTime};

use crate::error::{Error, Result};
use crate::network::{FreewayNetwork, Topology};

/// Plant parameters that are not part of the corridor geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub dt_s: f64,
    /// Fractional discharge-capacity loss of a cell above critical density.
    pub capacity_drop: f64,
    /// Ramp discharge at a fully green signal, veh/h.
    pub ramp_saturation_vph: f64,
    /// Share of a congested merge's supply reserved for the ramp. `None`
    /// gives the ramp one lane's worth: `1 / (lanes + 1)`.
    pub merge_priority: Option<f64>,
    /// Ramp storage; arrivals beyond it are lost to the feeding arterial.
    pub max_queue_veh: Option<f64>,
    /// Width of the departure bins that form trip cohorts.
    pub cohort_bin_s: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            dt_s: 10.0,
            capacity_drop: 0.0,
            ramp_saturation_vph: 7200.0,
            merge_priority: None,
            max_queue_veh: None,
            cohort_bin_s: 60.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Origin {
    id: String,
    cell: usize,
    /// Corridor slot of a metered on-ramp; `None` for the mainline origin.
    slot: Option<usize>,
}

/// Compiled plant: network, demand and configuration resolved into per-cell
/// lookup tables. Immutable once built.
#[derive(Debug, Clone)]
pub struct Plant<'a> {
    net: &'a FreewayNetwork,
    cfg: PlantConfig,
    demand: DemandProfile,
    origins: Vec<Origin>,
    merge_origin: Vec<Option<usize>>,
    split: Vec<f64>,
    exit_dest: Vec<Option<usize>>,
    next: Vec<Option<usize>>,
    prev: Vec<Option<usize>>,
    destination_ids: Vec<String>,
    destination_cells: Vec<usize>,
    sink_dest: Option<usize>,
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct SimState {
    pub step: u64,
    pub clock_s: f64,
    /// Vehicles in each cell.
    pub vehicles: Vec<f64>,
    /// Vehicles waiting at each origin (on-ramps in corridor order, then the
    /// mainline origin on a line).
    pub queues: Vec<f64>,
    pub entered: f64,
    pub exited: f64,
    /// Arrivals turned away by a full ramp.
    pub rejected: f64,
    pub ledger: TripLedger,
}

/// Boundary and internal flows of one step, in vehicles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepFlows {
    pub arrivals: Vec<f64>,
    pub ramp_inflow: Vec<f64>,
    pub cell_outflow: Vec<f64>,
    pub cell_inflow: Vec<f64>,
    pub offramp_outflow: Vec<f64>,
    pub sink_outflow: f64,
    pub rejected: f64,
}

impl StepFlows {
    pub fn exited(&self) -> f64 {
        self.offramp_outflow.iter().sum::<f64>() + self.sink_outflow
    }
}

impl<'a> Plant<'a> {
    pub fn new(net: &'a FreewayNetwork, demand: DemandProfile, cfg: PlantConfig) -> Result<Self> {
        if !(cfg.dt_s.is_finite() && cfg.dt_s > 0.0) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                cfg.dt_s
            )));
        }
        for (i, c) in net.cells().iter().enumerate() {
            // CFL: a vehicle may not cross more than one cell per step
            if cfg.dt_s > c.max_dt_s() * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "dt {} s violates the CFL bound {} s of cell {i}",
                    cfg.dt_s,
                    c.max_dt_s()
                )));
            }
        }
        if !(0.0..1.0).contains(&cfg.capacity_drop) {
            return Err(Error::Config("capacity drop must lie in [0, 1)".into()));
        }
        if !(cfg.ramp_saturation_vph > 0.0) {
            return Err(Error::Config(
                "ramp saturation flow must be positive".into(),
            ));
        }
        if let Some(p) = cfg.merge_priority {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("merge priority must lie in [0, 1]".into()));
            }
        }
        if let Some(q) = cfg.max_queue_veh {
            if !(q > 0.0) {
                return Err(Error::Config("max queue must be positive".into()));
            }
        }
        if !(cfg.cohort_bin_s > 0.0) {
            return Err(Error::Config("cohort bin must be positive".into()));
        }

        let n = net.n_cells();
        let mut origins: Vec<Origin> = net
            .on_ramps()
            .enumerate()
            .map(|(slot, r)| Origin {
                id: r.id.clone(),
                cell: r.cell,
                slot: Some(slot),
            })
            .collect();
        if net.topology() == Topology::Line {
            origins.push(Origin {
                id: MAINLINE.to_string(),
                cell: 0,
                slot: None,
            });
        }
        for o in demand.origins() {
            if !origins.iter().any(|x| x.id == o) {
                return Err(Error::Config(format!("demand names unknown origin `{o}`")));
            }
        }
        let mut merge_origin = vec![None; n];
        for (i, o) in origins.iter().enumerate() {
            if o.slot.is_some() {
                merge_origin[o.cell] = Some(i);
            }
        }

        let mut split = vec![0.0; n];
        let mut exit_dest = vec![None; n];
        let mut destination_ids = Vec::new();
        let mut destination_cells = Vec::new();
        for r in net.off_ramps() {
            let s = demand.split(&r.id).ok_or_else(|| {
                Error::Config(format!("off-ramp `{}` has no split fraction", r.id))
            })?;
            split[r.cell] = s;
            exit_dest[r.cell] = Some(destination_ids.len());
            destination_ids.push(r.id.clone());
            destination_cells.push(r.cell);
        }
        for (id, _) in demand.splits() {
            if !net.off_ramps().any(|r| r.id == id) {
                return Err(Error::Config(format!(
                    "split given for `{id}`, which is not an off-ramp"
                )));
            }
        }
        let sink_dest = (net.topology() == Topology::Line).then(|| {
            destination_ids.push(MAINLINE.to_string());
            destination_cells.push(n - 1);
            destination_ids.len() - 1
        });

        let next: Vec<Option<usize>> = (0..n).map(|i| net.next_cell(i)).collect();
        let mut prev = vec![None; n];
        for (i, nx) in next.iter().enumerate() {
            if let Some(j) = nx {
                prev[*j] = Some(i);
            }
        }

        Ok(Self {
            net,
            cfg,
            demand,
            origins,
            merge_origin,
            split,
            exit_dest,
            next,
            prev,
            destination_ids,
            destination_cells,
            sink_dest,
        })
    }

    fn mainline_origin(&self) -> Option<usize> {
        self.origins
            .last()
            .filter(|o| o.slot.is_none())
            .map(|_| self.origins.len() - 1)
    }

    pub fn network(&self) -> &FreewayNetwork {
        self.net
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn demand(&self) -> &DemandProfile {
        &self.demand
    }

    pub fn origin_ids(&self) -> Vec<String> {
        self.origins.iter().map(|o| o.id.clone()).collect()
    }

    pub fn n_origins(&self) -> usize {
        self.origins.len()
    }

    /// Empty corridor at t = 0.
    pub fn initial_state(&self) -> SimState {
        SimState {
            step: 0,
            clock_s: 0.0,
            vehicles: vec![0.0; self.net.n_cells()],
            queues: vec![0.0; self.origins.len()],
            entered: 0.0,
            exited: 0.0,
            rejected: 0.0,
            ledger: TripLedger::new(self.origins.len(), self.net.n_cells()),
        }
    }

    pub fn density(&self, state: &SimState, cell: usize) -> f64 {
        self.net.cells()[cell].density_of(state.vehicles[cell])
    }

    pub fn densities(&self, state: &SimState) -> Vec<f64> {
        (0..self.net.n_cells())
            .map(|i| self.density(state, i))
            .collect()
    }

    /// Returns the state one step later.
    pub fn step(&self, state: &SimState, rates: &[f64]) -> Result<SimState> {
        let mut next = state.clone();
        self.advance(&mut next, rates)?;
        Ok(next)
    }

    /// Advances `state` by one step under the per-on-ramp metering `rates`.
    pub fn advance(&self, state: &mut SimState, rates: &[f64]) -> Result<StepFlows> {
        let n_on = self.net.n_on_ramps();
        if rates.len() != n_on {
            return Err(Error::Controller(format!(
                "{} metering rates supplied for {n_on} on-ramps",
                rates.len()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Controller(format!(
                "metering rate {r} outside [0, 1]"
            )));
        }
        let cells = self.net.cells();
        let n = cells.len();
        let h = self.cfg.dt_s / 3600.0;
        let t0 = state.clock_s;
        let t1 = (state.step + 1) as f64 * self.cfg.dt_s;
        let bin = (t1 / self.cfg.cohort_bin_s).floor() as u64;

        let mut flows = StepFlows {
            arrivals: vec![0.0; self.origins.len()],
            ramp_inflow: vec![0.0; self.origins.len()],
            cell_outflow: vec![0.0; n],
            cell_inflow: vec![0.0; n],
            offramp_outflow: vec![0.0; self.destination_ids.len()],
            sink_outflow: 0.0,
            rejected: 0.0,
        };

        for (i, o) in self.origins.iter().enumerate() {
            let mut a = self.demand.inflow_vph(&o.id, t0) * h;
            if let Some(cap) = self.cfg.max_queue_veh {
                let room = (cap - state.queues[i]).max(0.0);
                if a > room {
                    flows.rejected += a - room;
                    a = room;
                }
            }
            state.queues[i] += a;
            flows.arrivals[i] = a;
            state.ledger.arrive(i, a, t1, bin);
        }

        let density: Vec<f64> = (0..n)
            .map(|i| cells[i].density_of(state.vehicles[i]))
            .collect();
        let sending: Vec<f64> = (0..n)
            .map(|i| {
                (cells[i].sending_vph(density[i], self.cfg.capacity_drop) * h)
                    .min(state.vehicles[i])
            })
            .collect();
        let receiving: Vec<f64> = (0..n)
            .map(|i| cells[i].receiving_vph(density[i]) * h)
            .collect();

        for i in 0..n {
            let supply = receiving[i];
            let up = self.prev[i];
            // the mainline origin of a line feeds cell 0 as its upstream demand
            let feeder = if up.is_none() {
                self.mainline_origin()
            } else {
                None
            };
            let main_demand = match (up, feeder) {
                (Some(u), _) => (1.0 - self.split[u]) * sending[u],
                (None, Some(k)) => state.queues[k].min(cells[i].capacity_vph() * h),
                (None, None) => 0.0,
            };
            let ramp = self.merge_origin[i];
            let ramp_demand = ramp.map_or(0.0, |k| {
                let slot = self.origins[k].slot.expect("merge origins are on-ramps");
                state.queues[k].min(rates[slot] * self.cfg.ramp_saturation_vph * h)
            });
            let (y_main, y_ramp) = if main_demand + ramp_demand <= supply {
                (main_demand, ramp_demand)
            } else {
                let alpha = self
                    .cfg
                    .merge_priority
                    .unwrap_or(1.0 / (cells[i].lanes as f64 + 1.0));
                let y_ramp = median(ramp_demand, supply - main_demand, alpha * supply)
                    .clamp(0.0, ramp_demand);
                let y_main = (supply - y_ramp).clamp(0.0, main_demand);
                (y_main, y_ramp)
            };
            if let Some(u) = up {
                flows.cell_outflow[u] = if y_main >= main_demand {
                    sending[u]
                } else {
                    y_main / (1.0 - self.split[u])
                };
            }
            if let Some(k) = ramp {
                flows.ramp_inflow[k] = y_ramp;
            }
            if let Some(k) = feeder {
                flows.ramp_inflow[k] = y_main;
            }
            flows.cell_inflow[i] = y_main + y_ramp;
        }
        for i in 0..n {
            if self.next[i].is_none() {
                flows.cell_outflow[i] = sending[i];
                flows.sink_outflow = sending[i];
            }
        }

        let mut share = vec![0.0; n];
        for i in 0..n {
            let out = flows.cell_outflow[i];
            if let Some(d) = self.exit_dest[i] {
                flows.offramp_outflow[d] = out * self.split[i];
            }
            if state.vehicles[i] > 0.0 {
                share[i] = (out / state.vehicles[i]).min(1.0);
            }
        }
        let origin_cells: Vec<usize> = self.origins.iter().map(|o| o.cell).collect();
        state.ledger.advance(
            &share,
            &self.split,
            &self.exit_dest,
            &self.next,
            self.sink_dest,
            &origin_cells,
            self.net.topology() == Topology::Ring,
            t1,
        );
        for (k, o) in self.origins.iter().enumerate() {
            let y = flows.ramp_inflow[k];
            if y > 0.0 {
                state.ledger.discharge(k, y, o.cell);
            }
            state.queues[k] = (state.queues[k] - y).max(0.0);
        }
        state.ledger.prune();

        for i in 0..n {
            state.vehicles[i] += flows.cell_inflow[i] - flows.cell_outflow[i];
            if state.vehicles[i] < 0.0 {
                // rounding residue of a fully emptied cell
                state.vehicles[i] = 0.0;
            }
        }
        let arrived: f64 = flows.arrivals.iter().sum();
        state.entered += arrived;
        state.exited += flows.exited();
        state.rejected += flows.rejected;
        state.step += 1;
        state.clock_s = t1;
        Ok(flows)
    }

    /// entered − exited − on mainline − queued; zero up to rounding.
    pub fn balance(&self, state: &SimState) -> f64 {
        state.entered
            - state.exited
            - state.vehicles.iter().sum::<f64>()
            - state.queues.iter().sum::<f64>()
    }

    pub fn trip_records(&self, state: &SimState) -> Vec<crate::metrics::TripRecord> {
        let cell_times: Vec<f64> = self.net.cells().iter().map(Cell::max_dt_s).collect();
        let ids = self.origin_ids();
        let origin_cells: Vec<usize> = self.origins.iter().map(|o| o.cell).collect();
        state.ledger.trip_records(&LedgerGeometry {
            origin_ids: &ids,
            origin_cells: &origin_cells,
            destination_ids: &self.destination_ids,
            destination_cells: &self.destination_cells,
            cell_times_s: &cell_times,
            cell_length_km: self.net.cell_length_m() / 1000.0,
            ring: self.net.topology() == Topology::Ring,
        })
    }
}

fn median(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

#[cfg(test)]
mod tests {
    use indexmap::IndexMap;

    use super::*;
    use crate::network::RampSpec;

    fn cell() -> Cell {
        Cell::new(500.0, 2, 90.0, 2000.0, 150.0)
    }

    fn no_demand() -> DemandProfile {
        DemandProfile::new(vec![0.0], IndexMap::new(), IndexMap::new()).unwrap()
    }

    #[test]
    fn median_of_three() {
        assert_eq!(median(1.0, 2.0, 3.0), 2.0);
        assert_eq!(median(3.0, 1.0, 2.0), 2.0);
        assert_eq!(median(2.0, 3.0, 1.0), 2.0);
        assert_eq!(median(5.0, 5.0, 1.0), 5.0);
    }

    #[test]
    fn empty_network_only_advances_clock() {
        let net = FreewayNetwork::new(
            Topology::Ring,
            vec![cell(); 4],
            vec![RampSpec::on_ramp("A", 0)],
        )
        .unwrap();
        let plant = Plant::new(
            &net,
            no_demand(),
            PlantConfig {
                dt_s: 20.0,
                ..Default::default()
            },
        )
        .unwrap();
        let s0 = plant.initial_state();
        let s1 = plant.step(&s0, &[1.0]).unwrap();
        assert_eq!(s1.clock_s, 20.0);
        assert_eq!(s1.vehicles, s0.vehicles);
        assert_eq!(s1.queues, s0.queues);
        assert_eq!(s1.entered, 0.0);
    }

    #[test]
    fn free_flow_single_cell_outflow() {
        let net = FreewayNetwork::new(Topology::Line, vec![cell()], vec![]).unwrap();
        let plant = Plant::new(
            &net,
            no_demand(),
            PlantConfig {
                dt_s: 10.0,
                ..Default::default()
            },
        )
        .unwrap();
        let mut s = plant.initial_state();
        let rho = 15.0; // below critical 22.2
        s.vehicles[0] = rho * 2.0 * 0.5;
        s.entered = s.vehicles[0];
        let f = plant.advance(&mut s, &[]).unwrap();
        let expected = rho * 90.0 * 2.0 * 10.0 / 3600.0;
        assert!((f.cell_outflow[0] - expected).abs() < 1e-12);
        assert!((f.sink_outflow - expected).abs() < 1e-12);
        assert!(plant.balance(&s).abs() < 1e-12);
    }

    #[test]
    fn cfl_violation_is_a_configuration_error() {
        let net = FreewayNetwork::new(Topology::Line, vec![cell()], vec![]).unwrap();
        let err = Plant::new(
            &net,
            no_demand(),
            PlantConfig {
                dt_s: 21.0,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn rates_outside_unit_interval_are_rejected() {
        let net = FreewayNetwork::new(
            Topology::Ring,
            vec![cell(); 4],
            vec![RampSpec::on_ramp("A", 0)],
        )
        .unwrap();
        let plant = Plant::new(&net, no_demand(), PlantConfig::default()).unwrap();
        let mut s = plant.initial_state();
        assert!(matches!(
            plant.advance(&mut s, &[1.5]),
            Err(Error::Controller(_))
        ));
        assert!(matches!(
            plant.advance(&mut s, &[]),
            Err(Error::Controller(_))
        ));
    }

    #[test]
    fn unknown_origin_and_missing_split_are_rejected() {
        let net = FreewayNetwork::new(
            Topology::Ring,
            vec![cell(); 4],
            vec![RampSpec::on_ramp("A", 0), RampSpec::off_ramp("X", 2)],
        )
        .unwrap();
        let mut inflow = IndexMap::new();
        inflow.insert("Q".to_string(), vec![100.0]);
        let d = DemandProfile::new(vec![0.0], inflow, IndexMap::new()).unwrap();
        assert!(Plant::new(&net, d, PlantConfig::default()).is_err());
        assert!(Plant::new(&net, no_demand(), PlantConfig::default()).is_err());
    }

    #[test]
    fn queue_storage_limit_rejects_arrivals() {
        let net = FreewayNetwork::new(
            Topology::Ring,
            vec![cell(); 4],
            vec![RampSpec::on_ramp("A", 0)],
        )
        .unwrap();
        let mut inflow = IndexMap::new();
        inflow.insert("A".to_string(), vec![3600.0]);
        let d = DemandProfile::new(vec![0.0], inflow, IndexMap::new()).unwrap();
        let cfg = PlantConfig {
            dt_s: 10.0,
            max_queue_veh: Some(5.0),
            ..Default::default()
        };
        let plant = Plant::new(&net, d, cfg).unwrap();
        let mut s = plant.initial_state();
        for _ in 0..10 {
            plant.advance(&mut s, &[0.0]).unwrap();
        }
        assert!((s.queues[0] - 5.0).abs() < 1e-12);
        assert!((s.rejected - 95.0).abs() < 1e-9);
        assert!(plant.balance(&s).abs() < 1e-9);
    }

    #[test]
    fn lower_rate_never_raises_merge_density() {
        let net = FreewayNetwork::new(
            Topology::Ring,
            vec![cell(); 6],
            vec![RampSpec::on_ramp("A", 2)],
        )
        .unwrap();
        let mut inflow = IndexMap::new();
        inflow.insert("A".to_string(), vec![1500.0]);
        let d = DemandProfile::new(vec![0.0], inflow, IndexMap::new()).unwrap();
        let plant = Plant::new(&net, d, PlantConfig::default()).unwrap();
        let mut base = plant.initial_state();
        base.vehicles = vec![20.0, 30.0, 25.0, 10.0, 5.0, 40.0];
        base.queues = vec![12.0];
        base.entered = base.vehicles.iter().sum::<f64>() + 12.0;
        let mut last = f64::INFINITY;
        for r in [1.0, 0.8, 0.5, 0.2, 0.0] {
            let s = plant.step(&base, &[r]).unwrap();
            assert!(s.vehicles[2] <= last);
            last = s.vehicles[2];
        }
    }
}

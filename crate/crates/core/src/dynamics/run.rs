use serde::{Deserialize, Serialize};

use crate::control::{Controller, Decision};
use crate::error::{Error, Result};
use crate::metrics::TripRecord;

use super::measure::{measure, OccupancyWindow};
use super::Plant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub warmup_s: f64,
    /// Measured horizon after the warmup.
    pub horizon_s: f64,
    pub cycle_s: f64,
}

/// One row of the per-ramp cycle log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampLogRow {
    pub cycle_index: u64,
    pub ramp_id: String,
    pub occupancy: f64,
    pub flow_command_vph: f64,
    pub rate: f64,
    pub queue_len: f64,
}

/// Per-step cell speed and occupancy, rows = steps, columns = cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpaceTime {
    pub positions_m: Vec<f64>,
    pub times_s: Vec<f64>,
    pub speed_kmh: Vec<Vec<f64>>,
    pub occupancy: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Trips that departed after the warmup.
    pub trips: Vec<TripRecord>,
    pub ramp_log: Vec<RampLogRow>,
    pub spacetime: SpaceTime,
    pub entered: f64,
    pub exited: f64,
    pub rejected: f64,
    /// Largest |entered - exited - on mainline - queued| seen after any step.
    pub max_balance_error: f64,
}

fn check(decisions: &[Decision], n_ramps: usize) -> Result<Vec<f64>> {
    if decisions.len() != n_ramps {
        return Err(Error::Controller(format!(
            "controller returned {} decisions for {n_ramps} on-ramps",
            decisions.len()
        )));
    }
    decisions
        .iter()
        .map(|d| {
            if (0.0..=1.0).contains(&d.rate) {
                Ok(d.rate)
            } else {
                Err(Error::Controller(format!(
                    "metering rate {} outside [0, 1]",
                    d.rate
                )))
            }
        })
        .collect()
}

/// Runs warmup plus horizon, invoking the controller at every cycle boundary.
pub fn run_simulation(
    plant: &Plant<'_>,
    controller: &mut dyn Controller,
    settings: RunSettings,
) -> Result<SimOutput> {
    let dt = plant.config().dt_s;
    let total_s = settings.warmup_s + settings.horizon_s;
    let per_cycle = settings.cycle_s / dt;
    let n_cycles = total_s / settings.cycle_s;
    if per_cycle.fract() != 0.0 || per_cycle < 1.0 {
        return Err(Error::Config(format!(
            "cycle {} s is not a multiple of dt {dt} s",
            settings.cycle_s
        )));
    }
    if n_cycles.fract() != 0.0 {
        return Err(Error::Config(format!(
            "warmup plus horizon ({total_s} s) is not a whole number of {} s cycles",
            settings.cycle_s
        )));
    }
    let (per_cycle, n_cycles) = (per_cycle as u64, n_cycles as u64);
    let net = plant.network();
    let ramp_ids: Vec<String> = net.on_ramps().map(|r| r.id.clone()).collect();

    let mut state = plant.initial_state();
    let mut window = OccupancyWindow::new(net.n_cells());
    let mut rates = check(&controller.initial(), ramp_ids.len())?;
    let mut log = Vec::with_capacity(ramp_ids.len() * n_cycles as usize);
    let mut st = SpaceTime {
        positions_m: net.cell_positions_m(),
        ..Default::default()
    };
    let mut max_err: f64 = 0.0;

    for k in 0..n_cycles {
        window.reset();
        for _ in 0..per_cycle {
            plant.advance(&mut state, &rates)?;
            max_err = max_err.max(plant.balance(&state).abs());
            window.record(net, &state);
            let (speed, occ): (Vec<f64>, Vec<f64>) = net
                .cells()
                .iter()
                .zip(&state.vehicles)
                .map(|(c, &v)| {
                    let d = c.density_of(v);
                    (
                        c.speed_kmh(d),
                        super::measure::occupancy_of(d, c.jam_density_vpkpl),
                    )
                })
                .unzip();
            st.times_s.push(state.clock_s);
            st.speed_kmh.push(speed);
            st.occupancy.push(occ);
        }
        let frame = measure(net, &state, &window, k);
        let decisions = controller.decide(&frame)?;
        rates = check(&decisions, ramp_ids.len())?;
        for (i, id) in ramp_ids.iter().enumerate() {
            log.push(RampLogRow {
                cycle_index: k,
                ramp_id: id.clone(),
                occupancy: frame.occupancy[i],
                flow_command_vph: decisions[i].flow_command_vph,
                rate: decisions[i].rate,
                queue_len: frame.queue_veh[i],
            });
        }
    }

    let trips = plant
        .trip_records(&state)
        .into_iter()
        .filter(|t| t.depart_s >= settings.warmup_s)
        .collect();
    Ok(SimOutput {
        trips,
        ramp_log: log,
        spacetime: st,
        entered: state.entered,
        exited: state.exited,
        rejected: state.rejected,
        max_balance_error: max_err,
    })
}

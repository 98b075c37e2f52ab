use crate::network::FreewayNetwork;

use super::SimState;

/// What the controllers see at the end of a control cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub cycle_index: u64,
    /// Cycle-averaged detector occupancy of each on-ramp, corridor order.
    pub occupancy: Vec<f64>,
    /// Queue of each on-ramp at the end of the cycle, vehicles.
    pub queue_veh: Vec<f64>,
    /// Cycle-averaged occupancy of every cell.
    pub cell_occupancy: Vec<f64>,
    /// End-of-cycle density of every cell, veh/km/lane.
    pub cell_density: Vec<f64>,
    /// End-of-cycle speed of every cell from the fundamental diagram, km/h.
    pub cell_speed_kmh: Vec<f64>,
}

/// Running time-average of cell occupancy over one control cycle.
#[derive(Debug, Clone)]
pub struct OccupancyWindow {
    sums: Vec<f64>,
    samples: u32,
}

/// Occupancy proxy of a density: density over jam density, clamped to [0, 1].
pub fn occupancy_of(density: f64, jam_density: f64) -> f64 {
    (density / jam_density).clamp(0.0, 1.0)
}

impl OccupancyWindow {
    pub fn new(n_cells: usize) -> Self {
        Self {
            sums: vec![0.0; n_cells],
            samples: 0,
        }
    }

    pub fn record(&mut self, net: &FreewayNetwork, state: &SimState) {
        for (i, c) in net.cells().iter().enumerate() {
            self.sums[i] += occupancy_of(c.density_of(state.vehicles[i]), c.jam_density_vpkpl);
        }
        self.samples += 1;
    }

    pub fn samples(&self) -> u32 {
        self.samples
    }

    pub fn averages(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.sums.iter().map(|s| (s / n).clamp(0.0, 1.0)).collect()
    }

    pub fn reset(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.samples = 0;
    }
}

/// Builds the frame for a completed cycle window.
pub fn measure(
    net: &FreewayNetwork,
    state: &SimState,
    window: &OccupancyWindow,
    cycle_index: u64,
) -> MeasurementFrame {
    let cell_occupancy = window.averages();
    let occupancy = net
        .on_ramps()
        .map(|r| cell_occupancy[r.detector_cell])
        .collect();
    let queue_veh = state.queues[..net.n_on_ramps()].to_vec();
    let cell_density: Vec<f64> = net
        .cells()
        .iter()
        .zip(&state.vehicles)
        .map(|(c, &v)| c.density_of(v))
        .collect();
    let cell_speed_kmh = net
        .cells()
        .iter()
        .zip(&cell_density)
        .map(|(c, &d)| c.speed_kmh(d))
        .collect();
    MeasurementFrame {
        cycle_index,
        occupancy,
        queue_veh,
        cell_occupancy,
        cell_density,
        cell_speed_kmh,
    }
}

#[cfg(test)]
mod tests {
    use indexmap::IndexMap;

    use super::*;
    use crate::dynamics::{Cell, DemandProfile, Plant, PlantConfig};
    use crate::network::{RampSpec, Topology};

    fn frame_for(fill: impl Fn(f64) -> f64) -> MeasurementFrame {
        let cell = Cell::new(500.0, 2, 90.0, 2000.0, 150.0);
        let net = FreewayNetwork::new(
            Topology::Ring,
            vec![cell; 3],
            vec![RampSpec::on_ramp("A", 1)],
        )
        .unwrap();
        let demand = DemandProfile::new(vec![0.0], IndexMap::new(), IndexMap::new()).unwrap();
        let plant = Plant::new(&net, demand, PlantConfig::default()).unwrap();
        let mut state = plant.initial_state();
        let mut window = OccupancyWindow::new(3);
        for k in 0..6 {
            state.vehicles[1] = fill(k as f64) * cell.jam_vehicles();
            window.record(&net, &state);
        }
        measure(&net, &state, &window, 0)
    }

    #[test]
    fn jammed_detector_reads_one() {
        assert_eq!(frame_for(|_| 1.0).occupancy, vec![1.0]);
    }

    #[test]
    fn empty_detector_reads_zero() {
        assert_eq!(frame_for(|_| 0.0).occupancy, vec![0.0]);
    }

    #[test]
    fn half_jam_reads_half() {
        assert!((frame_for(|_| 0.5).occupancy[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn occupancy_is_a_time_average() {
        // alternating empty and jammed over an even number of samples
        let f = frame_for(|k| {
            if (k as u32).is_multiple_of(2) {
                0.0
            } else {
                1.0
            }
        });
        assert!((f.occupancy[0] - 0.5).abs() < 1e-12);
        assert!(f.cell_occupancy.iter().all(|o| (0.0..=1.0).contains(o)));
    }
}

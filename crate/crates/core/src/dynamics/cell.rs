use serde::{Deserialize, Serialize};

/// A homogeneous freeway segment with a triangular fundamental diagram.
///
/// The backward wave speed is derived so that the congested branch meets
/// the free-flow branch at capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub length_m: f64,
    pub lanes: u32,
    pub free_speed_kmh: f64,
    pub capacity_vphpl: f64,
    pub jam_density_vpkpl: f64,
    pub backward_wave_kmh: f64,
}

impl Cell {
    pub fn new(
        length_m: f64,
        lanes: u32,
        free_speed_kmh: f64,
        capacity_vphpl: f64,
        jam_density_vpkpl: f64,
    ) -> Self {
        let critical = capacity_vphpl / free_speed_kmh;
        Self {
            length_m,
            lanes,
            free_speed_kmh,
            capacity_vphpl,
            jam_density_vpkpl,
            backward_wave_kmh: capacity_vphpl / (jam_density_vpkpl - critical),
        }
    }

    pub fn with_lanes(mut self, lanes: u32) -> Self {
        self.lanes = lanes;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("length_m", self.length_m),
            ("free_speed_kmh", self.free_speed_kmh),
            ("capacity_vphpl", self.capacity_vphpl),
            ("jam_density_vpkpl", self.jam_density_vpkpl),
            ("backward_wave_kmh", self.backward_wave_kmh),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.lanes == 0 {
            return Err("lanes must be at least 1".into());
        }
        if self.critical_density() >= self.jam_density_vpkpl {
            return Err(format!(
                "critical density {:.3} veh/km/lane must stay below jam density {}",
                self.critical_density(),
                self.jam_density_vpkpl
            ));
        }
        Ok(())
    }

    pub fn length_km(&self) -> f64 {
        self.length_m / 1000.0
    }

    pub fn critical_density(&self) -> f64 {
        self.capacity_vphpl / self.free_speed_kmh
    }

    pub fn capacity_vph(&self) -> f64 {
        self.capacity_vphpl * self.lanes as f64
    }

    /// Vehicles held at jam density.
    pub fn jam_vehicles(&self) -> f64 {
        self.jam_density_vpkpl * self.lanes as f64 * self.length_km()
    }

    pub fn density_of(&self, vehicles: f64) -> f64 {
        vehicles / (self.lanes as f64 * self.length_km())
    }

    /// Longest stable step for this cell, in seconds.
    pub fn max_dt_s(&self) -> f64 {
        self.length_km() / self.free_speed_kmh * 3600.0
    }

    /// Demand (sending) flow in veh/h. `capacity_drop` reduces the discharge
    /// capacity of a cell whose density is above critical.
    pub fn sending_vph(&self, density: f64, capacity_drop: f64) -> f64 {
        let cap = if density > self.critical_density() {
            self.capacity_vph() * (1.0 - capacity_drop)
        } else {
            self.capacity_vph()
        };
        (self.free_speed_kmh * density * self.lanes as f64).min(cap)
    }

    /// Supply (receiving) flow in veh/h.
    pub fn receiving_vph(&self, density: f64) -> f64 {
        let room = (self.jam_density_vpkpl - density).max(0.0);
        (self.backward_wave_kmh * room * self.lanes as f64).min(self.capacity_vph())
    }

    /// Equilibrium flow per lane from the fundamental diagram.
    pub fn flow_vphpl(&self, density: f64) -> f64 {
        let congested = self.backward_wave_kmh * (self.jam_density_vpkpl - density);
        (self.free_speed_kmh * density).min(congested).max(0.0)
    }

    pub fn speed_kmh(&self, density: f64) -> f64 {
        if density <= 0.0 {
            self.free_speed_kmh
        } else {
            self.flow_vphpl(density) / density
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_meets_at_capacity() {
        let c = Cell::new(500.0, 3, 90.0, 2000.0, 150.0);
        let rc = c.critical_density();
        assert!((c.flow_vphpl(rc) - 2000.0).abs() < 1e-9);
        assert_eq!(c.flow_vphpl(c.jam_density_vpkpl), 0.0);
        assert_eq!(c.speed_kmh(0.0), 90.0);
        assert!((c.speed_kmh(rc / 2.0) - 90.0).abs() < 1e-12);
        assert!(c.speed_kmh(100.0) < 90.0);
        assert_eq!(c.max_dt_s(), 20.0);
    }

    #[test]
    fn sending_and_receiving() {
        let c = Cell::new(500.0, 2, 90.0, 2000.0, 150.0);
        assert_eq!(c.sending_vph(10.0, 0.0), 90.0 * 10.0 * 2.0);
        assert_eq!(c.sending_vph(140.0, 0.0), 4000.0);
        assert_eq!(c.sending_vph(140.0, 0.1), 3600.0);
        assert_eq!(c.receiving_vph(0.0), 4000.0);
        assert_eq!(c.receiving_vph(150.0), 0.0);
    }

    #[test]
    fn rejects_inconsistent_diagram() {
        let mut c = Cell::new(500.0, 2, 90.0, 2000.0, 150.0);
        c.jam_density_vpkpl = 20.0;
        assert!(c.validate().is_err());
        assert!(Cell::new(500.0, 0, 90.0, 2000.0, 150.0).validate().is_err());
    }
}

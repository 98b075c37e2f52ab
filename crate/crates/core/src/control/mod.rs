//! Ramp-metering controllers.
//!
//! Flow commands are carried in veh/h and turned into a metering rate (the
//! green share of a cycle) only at the very end, see [`flow_to_rate`].

mod coordination;
mod metaline;

use serde::{Deserialize, Serialize};

pub use coordination::{
    compute_weights, coordination_term, unnormed_weights, CeqAlinea, NeighborMessage, RampAgent,
};
pub use metaline::{Metaline, MetalineConfig};

use crate::dynamics::MeasurementFrame;
use crate::error::{Error, Result};
use crate::network::FreewayNetwork;

/// How `L_max` is chosen when turning neighbour distances into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Largest consecutive on-ramp gap in the whole corridor.
    Global,
    /// Largest consecutive on-ramp gap inside the ramp's own neighbourhood.
    Local,
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::Global => "global",
            NormMode::Local => "local",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Feedback gain, veh/h per unit occupancy.
    pub k_gain: f64,
    /// Desired occupancy.
    pub o_hat: f64,
    /// Coordination gain, dimensionless.
    pub k_c: f64,
    /// Neighbours on each side.
    pub m: usize,
    pub norm_mode: NormMode,
    /// Average discharge headway at green, s/veh.
    pub gamma_s_per_veh: f64,
    pub cycle_s: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k_gain: 7000.0,
            o_hat: 0.18,
            k_c: 0.0,
            m: 1,
            norm_mode: NormMode::Global,
            gamma_s_per_veh: 0.5,
            cycle_s: 60.0,
            q_min: 200.0,
            q_max: 2000.0,
            r_min: 0.0,
            r_max: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.k_gain > 0.0) {
            return fail(format!("k_gain must be positive, got {}", self.k_gain));
        }
        if !(self.o_hat > 0.0 && self.o_hat < 1.0) {
            return fail(format!("o_hat must lie in (0, 1), got {}", self.o_hat));
        }
        if !(self.k_c >= 0.0) {
            return fail(format!("k_c must be non-negative, got {}", self.k_c));
        }
        if self.m < 1 {
            return fail("m must be at least 1".into());
        }
        if !(self.gamma_s_per_veh > 0.0) {
            return fail(format!(
                "gamma must be positive, got {}",
                self.gamma_s_per_veh
            ));
        }
        if !(self.cycle_s > 0.0) {
            return fail(format!("cycle must be positive, got {}", self.cycle_s));
        }
        if !(self.q_min >= 0.0 && self.q_min < self.q_max) {
            return fail(format!(
                "need 0 <= q_min < q_max, got {} and {}",
                self.q_min, self.q_max
            ));
        }
        if !(0.0 <= self.r_min && self.r_min < self.r_max && self.r_max <= 1.0) {
            return fail(format!(
                "need 0 <= r_min < r_max <= 1, got {} and {}",
                self.r_min, self.r_max
            ));
        }
        Ok(())
    }

    pub fn clamp_flow(&self, q: f64) -> f64 {
        q.clamp(self.q_min, self.q_max)
    }
}

/// Converts a flow command into the metering rate.
///
/// The command is first expressed as vehicles per cycle, then as the green
/// share needed to release them at one vehicle every `gamma` seconds.
pub fn flow_to_rate(q_vph: f64, cfg: &ControllerConfig) -> f64 {
    let per_cycle = q_vph * cfg.cycle_s / 3600.0;
    let rate = per_cycle * cfg.gamma_s_per_veh / cfg.cycle_s;
    rate.clamp(cfg.r_min, cfg.r_max)
}

/// Flow a rate releases at saturation, the inverse of [`flow_to_rate`].
pub fn rate_to_flow(rate: f64, cfg: &ControllerConfig) -> f64 {
    rate * 3600.0 / cfg.gamma_s_per_veh
}

/// Local ALINEA update, clamped to the flow bounds.
pub fn alinea_base(q_prev: f64, occupancy: f64, cfg: &ControllerConfig) -> f64 {
    cfg.clamp_flow(q_prev + cfg.k_gain * (cfg.o_hat - occupancy))
}

/// One ramp's decision for the next cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub rate: f64,
    pub flow_command_vph: f64,
}

/// A metering policy driven once per control cycle.
///
/// Decisions are returned for every on-ramp in corridor order.
pub trait Controller: Send {
    fn name(&self) -> &str;

    /// Decisions applied before the first measurement is available.
    fn initial(&mut self) -> Vec<Decision>;

    fn decide(&mut self, frame: &MeasurementFrame) -> Result<Vec<Decision>>;
}

/// Every signal stays at `r_max`.
#[derive(Debug, Clone)]
pub struct NoControl {
    cfg: ControllerConfig,
    n_ramps: usize,
}

impl NoControl {
    pub fn new(net: &FreewayNetwork, cfg: ControllerConfig) -> Self {
        Self {
            cfg,
            n_ramps: net.n_on_ramps(),
        }
    }

    fn all_green(&self) -> Vec<Decision> {
        let d = Decision {
            rate: self.cfg.r_max,
            flow_command_vph: rate_to_flow(self.cfg.r_max, &self.cfg),
        };
        vec![d; self.n_ramps]
    }
}

impl Controller for NoControl {
    fn name(&self) -> &str {
        "no_control"
    }

    fn initial(&mut self) -> Vec<Decision> {
        self.all_green()
    }

    fn decide(&mut self, _frame: &MeasurementFrame) -> Result<Vec<Decision>> {
        Ok(self.all_green())
    }
}

/// Independent ALINEA loop on every on-ramp.
#[derive(Debug, Clone)]
pub struct Alinea {
    cfg: ControllerConfig,
    q_prev: Vec<f64>,
}

impl Alinea {
    pub fn new(net: &FreewayNetwork, cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            q_prev: vec![cfg.q_max; net.n_on_ramps()],
        })
    }

    pub fn flows(&self) -> &[f64] {
        &self.q_prev
    }
}

impl Controller for Alinea {
    fn name(&self) -> &str {
        "alinea"
    }

    fn initial(&mut self) -> Vec<Decision> {
        self.q_prev.iter_mut().for_each(|q| *q = self.cfg.q_max);
        let d = Decision {
            rate: flow_to_rate(self.cfg.q_max, &self.cfg),
            flow_command_vph: self.cfg.q_max,
        };
        vec![d; self.q_prev.len()]
    }

    fn decide(&mut self, frame: &MeasurementFrame) -> Result<Vec<Decision>> {
        if frame.occupancy.len() != self.q_prev.len() {
            return Err(Error::Controller(format!(
                "frame has {} occupancies for {} ramps",
                frame.occupancy.len(),
                self.q_prev.len()
            )));
        }
        Ok(self
            .q_prev
            .iter_mut()
            .zip(&frame.occupancy)
            .map(|(q, &o)| {
                *q = alinea_base(*q, o, &self.cfg);
                Decision {
                    rate: flow_to_rate(*q, &self.cfg),
                    flow_command_vph: *q,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ControllerConfig {
        ControllerConfig::default()
    }

    #[test]
    fn rate_conversion() {
        let unclamped = ControllerConfig {
            r_max: 1.0,
            ..cfg()
        };
        assert_eq!(flow_to_rate(7200.0, &unclamped), 1.0);
        assert_eq!(flow_to_rate(3600.0, &unclamped), 0.5);
        let floor = ControllerConfig {
            r_min: 0.05,
            ..cfg()
        };
        assert_eq!(flow_to_rate(0.0, &floor), 0.05);
        assert_eq!(flow_to_rate(1e9, &cfg()), 1.0);
        assert_eq!(rate_to_flow(0.5, &cfg()), 3600.0);
    }

    #[test]
    fn alinea_update() {
        let c = cfg();
        assert_eq!(alinea_base(1000.0, c.o_hat, &c), 1000.0);
        assert!((alinea_base(1000.0, 0.28, &c) - 300.0).abs() < 1e-9);
        assert_eq!(alinea_base(c.q_min, 0.9, &c), c.q_min);
        assert_eq!(alinea_base(c.q_max, 0.0, &c), c.q_max);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        for bad in [
            ControllerConfig {
                k_gain: 0.0,
                ..cfg()
            },
            ControllerConfig {
                o_hat: 1.0,
                ..cfg()
            },
            ControllerConfig { k_c: -0.1, ..cfg() },
            ControllerConfig { m: 0, ..cfg() },
            ControllerConfig {
                gamma_s_per_veh: 0.0,
                ..cfg()
            },
            ControllerConfig {
                q_min: 3000.0,
                ..cfg()
            },
            ControllerConfig {
                r_min: 0.5,
                r_max: 0.4,
                ..cfg()
            },
            ControllerConfig {
                r_max: 1.2,
                ..cfg()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}

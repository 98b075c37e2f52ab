//! Coordinated, equity-aware ALINEA.
//!
//! Each on-ramp runs as an agent that reads only its own detector and the
//! messages of its neighbourhood. A cycle has two phases separated by a
//! barrier: every agent computes its local ALINEA flow and broadcasts it,
//! then every agent adds `K_c * (sum_j w_j q_j - q_n)` over the received
//! flows, clamps, stores and converts to a rate.

use crate::dynamics::MeasurementFrame;
use crate::error::{Error, Result};
use crate::network::{FreewayNetwork, GapScope};

use super::{alinea_base, flow_to_rate, Controller, ControllerConfig, Decision, NormMode};

/// Phase-one flow of one ramp, as seen by its neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMessage {
    pub sender: String,
    pub base_flow_vph: f64,
}

/// Proximity weights `max(0, 1 - d / L_max)` before normalisation, in
/// neighbourhood order.
pub fn unnormed_weights(
    net: &FreewayNetwork,
    n: &str,
    m: usize,
    norm_mode: NormMode,
) -> Result<Vec<(String, f64)>> {
    let neighbours = net.neighborhood(n, m)?;
    if neighbours.is_empty() {
        return Err(Error::Config(format!("on-ramp `{n}` has no neighbours")));
    }
    let l_max = match norm_mode {
        NormMode::Global => net.max_consecutive_gap(GapScope::Global)?,
        NormMode::Local => net.max_consecutive_gap(GapScope::Local { ramp: n, m })?,
    };
    neighbours
        .into_iter()
        .map(|j| {
            let d = net.proximity(n, j)?;
            Ok((j.to_string(), (1.0 - d / l_max).max(0.0)))
        })
        .collect()
}

/// Normalised coordination weights. When no neighbour is closer than
/// `L_max` every weight is zero and coordination is off for this ramp.
pub fn compute_weights(
    net: &FreewayNetwork,
    n: &str,
    m: usize,
    norm_mode: NormMode,
) -> Result<Vec<(String, f64)>> {
    let mut u = unnormed_weights(net, n, m, norm_mode)?;
    let total: f64 = u.iter().map(|(_, w)| w).sum();
    if total > 0.0 {
        u.iter_mut().for_each(|(_, w)| *w /= total);
    }
    Ok(u)
}

/// `K_c * (sum_j w_j q_j - q_n)`, evaluated as `K_c * sum_j w_j (q_j - q_n)`
/// so that equal flows give exactly zero.
pub fn coordination_term(
    q_base_n: f64,
    messages: &[NeighborMessage],
    weights: &[(String, f64)],
    k_c: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for msg in messages {
        let w = weights
            .iter()
            .find(|(id, _)| *id == msg.sender)
            .map(|(_, w)| *w)
            .ok_or_else(|| Error::NotANeighbour {
                sender: msg.sender.clone(),
                receiver: "this ramp".into(),
            })?;
        acc += w * (msg.base_flow_vph - q_base_n);
    }
    if k_c == 0.0 {
        return Ok(0.0);
    }
    Ok(k_c * acc)
}

/// One decentralised on-ramp controller.
#[derive(Debug, Clone)]
pub struct RampAgent {
    id: String,
    weights: Vec<(String, f64)>,
    q_prev: f64,
}

impl RampAgent {
    pub fn new(net: &FreewayNetwork, id: &str, cfg: &ControllerConfig) -> Result<Self> {
        let weights = if net.n_on_ramps() > 1 {
            compute_weights(net, id, cfg.m, cfg.norm_mode)?
        } else {
            net.on_ramp_slot(id)?;
            Vec::new()
        };
        Ok(Self {
            id: id.to_string(),
            weights,
            q_prev: cfg.q_max,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn weights(&self) -> &[(String, f64)] {
        &self.weights
    }

    pub fn neighbours(&self) -> impl Iterator<Item = &str> {
        self.weights.iter().map(|(id, _)| id.as_str())
    }

    /// Stored flow command `q_n[k-1]`.
    pub fn flow(&self) -> f64 {
        self.q_prev
    }

    pub fn reset(&mut self, cfg: &ControllerConfig) {
        self.q_prev = cfg.q_max;
    }

    /// Phase one: local ALINEA flow from this ramp's own detector.
    pub fn base_flow(&self, occupancy: f64, cfg: &ControllerConfig) -> f64 {
        alinea_base(self.q_prev, occupancy, cfg)
    }

    pub fn message(&self, base_flow_vph: f64) -> NeighborMessage {
        NeighborMessage {
            sender: self.id.clone(),
            base_flow_vph,
        }
    }

    /// Phase two: adds the coordination term from the neighbours' messages,
    /// stores the clamped command and returns the decision.
    pub fn finish(
        &mut self,
        base: f64,
        inbox: &[NeighborMessage],
        cfg: &ControllerConfig,
    ) -> Result<Decision> {
        for msg in inbox {
            if !self.weights.iter().any(|(id, _)| *id == msg.sender) {
                return Err(Error::NotANeighbour {
                    sender: msg.sender.clone(),
                    receiver: self.id.clone(),
                });
            }
        }
        for (id, _) in &self.weights {
            if !inbox.iter().any(|m| m.sender == *id) {
                return Err(Error::MissingMessage {
                    sender: id.clone(),
                    receiver: self.id.clone(),
                });
            }
        }
        let coord = coordination_term(base, inbox, &self.weights, cfg.k_c)?;
        self.q_prev = cfg.clamp_flow(base + coord);
        Ok(Decision {
            rate: flow_to_rate(self.q_prev, cfg),
            flow_command_vph: self.q_prev,
        })
    }
}

/// C-EQ-ALINEA over every on-ramp of a corridor.
#[derive(Debug, Clone)]
pub struct CeqAlinea {
    cfg: ControllerConfig,
    agents: Vec<RampAgent>,
    /// For each agent, the corridor slots of its neighbours.
    routes: Vec<Vec<usize>>,
}

impl CeqAlinea {
    pub fn new(net: &FreewayNetwork, cfg: ControllerConfig) -> Result<Self> {
        cfg.validate()?;
        let agents = net
            .on_ramps()
            .map(|r| RampAgent::new(net, &r.id, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let routes = agents
            .iter()
            .map(|a| {
                a.neighbours()
                    .map(|id| net.on_ramp_slot(id))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            agents,
            routes,
        })
    }

    pub fn agents(&self) -> &[RampAgent] {
        &self.agents
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    /// One two-phase cycle on the given detector occupancies.
    pub fn cycle(&mut self, occupancy: &[f64]) -> Result<Vec<Decision>> {
        if occupancy.len() != self.agents.len() {
            return Err(Error::Controller(format!(
                "frame has {} occupancies for {} ramps",
                occupancy.len(),
                self.agents.len()
            )));
        }
        let bases: Vec<f64> = self
            .agents
            .iter()
            .zip(occupancy)
            .map(|(a, &o)| a.base_flow(o, &self.cfg))
            .collect();
        let outbox: Vec<NeighborMessage> = self
            .agents
            .iter()
            .zip(&bases)
            .map(|(a, &b)| a.message(b))
            .collect();
        // barrier: every base flow is known before any agent finishes
        self.agents
            .iter_mut()
            .zip(&self.routes)
            .zip(&bases)
            .map(|((agent, route), &base)| {
                let inbox: Vec<NeighborMessage> =
                    route.iter().map(|&s| outbox[s].clone()).collect();
                agent.finish(base, &inbox, &self.cfg)
            })
            .collect()
    }
}

impl Controller for CeqAlinea {
    fn name(&self) -> &str {
        "ceq_alinea"
    }

    fn initial(&mut self) -> Vec<Decision> {
        let cfg = self.cfg;
        self.agents.iter_mut().for_each(|a| a.reset(&cfg));
        let d = Decision {
            rate: flow_to_rate(cfg.q_max, &cfg),
            flow_command_vph: cfg.q_max,
        };
        vec![d; self.agents.len()]
    }

    fn decide(&mut self, frame: &MeasurementFrame) -> Result<Vec<Decision>> {
        self.cycle(&frame.occupancy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Cell;
    use crate::network::{RampSpec, Topology};

    fn net(topology: Topology, n_cells: usize, at: &[(&str, usize)]) -> FreewayNetwork {
        let cell = Cell::new(500.0, 3, 90.0, 2000.0, 150.0);
        let ramps = at.iter().map(|&(id, c)| RampSpec::on_ramp(id, c)).collect();
        FreewayNetwork::new(topology, vec![cell; n_cells], ramps).unwrap()
    }

    fn msg(id: &str, q: f64) -> NeighborMessage {
        NeighborMessage {
            sender: id.into(),
            base_flow_vph: q,
        }
    }

    #[test]
    fn single_neighbour_gets_full_weight() {
        let n = net(Topology::Line, 10, &[("A", 0), ("B", 3), ("C", 9)]);
        let w = compute_weights(&n, "A", 1, NormMode::Global).unwrap();
        assert_eq!(w, vec![("B".to_string(), 1.0)]);
    }

    #[test]
    fn weights_from_distances() {
        // corridor order C(500 m) A(1000 m) B(2000 m) D(4000 m); global L_max = 2000 m
        let n = net(
            Topology::Line,
            12,
            &[("A", 2), ("B", 4), ("C", 1), ("D", 8)],
        );
        let u = unnormed_weights(&n, "C", 1, NormMode::Global).unwrap();
        assert_eq!(u, vec![("A".to_string(), 0.75)]);
        let u = unnormed_weights(&n, "A", 1, NormMode::Global).unwrap();
        assert_eq!(u, vec![("C".to_string(), 0.75), ("B".to_string(), 0.5)]);
        let w = compute_weights(&n, "A", 1, NormMode::Global).unwrap();
        assert!((w[0].1 - 0.6).abs() < 1e-15 && (w[1].1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn neighbours_beyond_l_max_disable_coordination() {
        // uniform spacing with local normalisation and m = 1: both neighbours at L_max
        let n = net(Topology::Ring, 12, &[("A", 0), ("B", 4), ("C", 8)]);
        let w = compute_weights(&n, "A", 1, NormMode::Local).unwrap();
        assert!(w.iter().all(|(_, w)| *w == 0.0));
        assert_eq!(
            coordination_term(1000.0, &[msg("B", 1500.0), msg("C", 100.0)], &w, 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn coordination_term_values() {
        let w = vec![("B".to_string(), 0.6), ("C".to_string(), 0.4)];
        let t = coordination_term(1000.0, &[msg("B", 1200.0), msg("C", 900.0)], &w, 0.5).unwrap();
        assert!((t - 40.0).abs() < 1e-9);
        assert_eq!(
            coordination_term(1000.0, &[msg("B", 1000.0), msg("C", 1000.0)], &w, 0.7).unwrap(),
            0.0
        );
        assert_eq!(
            coordination_term(1000.0, &[msg("B", 5000.0), msg("C", 0.0)], &w, 0.0).unwrap(),
            0.0
        );
        assert!(matches!(
            coordination_term(1000.0, &[msg("Z", 1.0)], &w, 0.5),
            Err(Error::NotANeighbour { .. })
        ));
    }

    #[test]
    fn agent_enforces_message_contract() {
        let n = net(Topology::Ring, 12, &[("A", 0), ("B", 4), ("C", 8)]);
        let cfg = ControllerConfig::default();
        let mut a = RampAgent::new(&n, "A", &cfg).unwrap();
        let base = a.base_flow(0.1, &cfg);
        assert!(matches!(
            a.finish(base, &[msg("C", 500.0)], &cfg),
            Err(Error::MissingMessage { .. })
        ));
        assert!(matches!(
            a.finish(base, &[msg("B", 1.0), msg("C", 1.0), msg("Q", 1.0)], &cfg),
            Err(Error::NotANeighbour { .. })
        ));
        assert!(a
            .finish(base, &[msg("B", 500.0), msg("C", 500.0)], &cfg)
            .is_ok());
    }

    #[test]
    fn zero_gain_reproduces_alinea() {
        let n = net(
            Topology::Ring,
            16,
            &[("A", 0), ("B", 3), ("C", 7), ("D", 12)],
        );
        let cfg = ControllerConfig {
            m: 2,
            ..Default::default()
        };
        let mut ceq = CeqAlinea::new(&n, cfg).unwrap();
        let mut alinea = super::super::Alinea::new(&n, cfg).unwrap();
        ceq.initial();
        alinea.initial();
        let occ = [
            [0.05, 0.3, 0.18, 0.25],
            [0.4, 0.1, 0.2, 0.0],
            [0.22, 0.22, 0.5, 0.12],
        ];
        for o in occ {
            let frame = MeasurementFrame {
                cycle_index: 0,
                occupancy: o.to_vec(),
                queue_veh: vec![0.0; 4],
                cell_occupancy: vec![],
                cell_density: vec![],
                cell_speed_kmh: vec![],
            };
            assert_eq!(ceq.decide(&frame).unwrap(), alinea.decide(&frame).unwrap());
        }
    }

    #[test]
    fn uniform_ring_stays_uniform() {
        let n = net(
            Topology::Ring,
            16,
            &[("A", 0), ("B", 4), ("C", 8), ("D", 12)],
        );
        let cfg = ControllerConfig {
            k_c: 0.8,
            m: 2,
            ..Default::default()
        };
        let mut ceq = CeqAlinea::new(&n, cfg).unwrap();
        for o in [0.1, 0.3, 0.18] {
            let d = ceq.cycle(&[o; 4]).unwrap();
            assert!(d.iter().all(|x| *x == d[0]));
        }
    }
}

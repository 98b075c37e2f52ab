use crate::dynamics::MeasurementFrame;
use crate::error::{Error, Result};
use crate::network::FreewayNetwork;

use super::{flow_to_rate, Controller, ControllerConfig, Decision};

/// Gain matrices of the multivariable law. `k1` is ramps x cells and acts
/// on the change of the full cell-occupancy vector; `k2` is ramps x ramps
/// and acts on the deviation of the ramp detectors from their set-points.
#[derive(Debug, Clone, PartialEq)]
pub struct MetalineConfig {
    pub base: ControllerConfig,
    pub k1: Vec<Vec<f64>>,
    pub k2: Vec<Vec<f64>>,
    pub set_points: Vec<f64>,
}

impl MetalineConfig {
    /// `K1 = k1 I` on each ramp's detector cell, `K2 = k2 I`, set-points `o_hat`.
    pub fn diagonal(net: &FreewayNetwork, base: ControllerConfig, k1: f64, k2: f64) -> Self {
        let n_ramps = net.n_on_ramps();
        let n_cells = net.n_cells();
        let mut m1 = vec![vec![0.0; n_cells]; n_ramps];
        let mut m2 = vec![vec![0.0; n_ramps]; n_ramps];
        for (i, r) in net.on_ramps().enumerate() {
            m1[i][r.detector_cell] = k1;
            m2[i][i] = k2;
        }
        Self {
            base,
            k1: m1,
            k2: m2,
            set_points: vec![base.o_hat; n_ramps],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Metaline {
    cfg: MetalineConfig,
    q_prev: Vec<f64>,
    o_prev: Option<Vec<f64>>,
}

impl Metaline {
    pub fn new(net: &FreewayNetwork, cfg: MetalineConfig) -> Result<Self> {
        cfg.base.validate()?;
        let n_ramps = net.n_on_ramps();
        let n_cells = net.n_cells();
        let dims = |m: &Vec<Vec<f64>>, cols: usize| {
            m.len() == n_ramps && m.iter().all(|r| r.len() == cols)
        };
        if !dims(&cfg.k1, n_cells) {
            return Err(Error::Config(format!(
                "METALINE K1 must be {n_ramps}x{n_cells}"
            )));
        }
        if !dims(&cfg.k2, n_ramps) {
            return Err(Error::Config(format!(
                "METALINE K2 must be {n_ramps}x{n_ramps}"
            )));
        }
        if cfg.set_points.len() != n_ramps {
            return Err(Error::Config(format!(
                "METALINE needs {n_ramps} set-points"
            )));
        }
        let q_max = cfg.base.q_max;
        Ok(Self {
            cfg,
            q_prev: vec![q_max; n_ramps],
            o_prev: None,
        })
    }

    /// One cycle of `q[k] = q[k-1] - K1 (o[k] - o[k-1]) - K2 (o_b[k] - o_set)`.
    pub fn cycle(
        &mut self,
        cell_occupancy: &[f64],
        ramp_occupancy: &[f64],
    ) -> Result<Vec<Decision>> {
        let n_cells = self.cfg.k1.first().map_or(0, Vec::len);
        if cell_occupancy.len() != n_cells || ramp_occupancy.len() != self.q_prev.len() {
            return Err(Error::Controller(
                "METALINE frame dimensions do not match its gains".into(),
            ));
        }
        let previous = self.o_prev.as_deref().unwrap_or(cell_occupancy);
        let change: Vec<f64> = cell_occupancy
            .iter()
            .zip(previous)
            .map(|(a, b)| a - b)
            .collect();
        let deviation: Vec<f64> = ramp_occupancy
            .iter()
            .zip(&self.cfg.set_points)
            .map(|(o, s)| o - s)
            .collect();
        let base = self.cfg.base;
        let decisions = self
            .q_prev
            .iter_mut()
            .enumerate()
            .map(|(i, q)| {
                let p: f64 = self.cfg.k1[i].iter().zip(&change).map(|(k, d)| k * d).sum();
                let s: f64 = self.cfg.k2[i]
                    .iter()
                    .zip(&deviation)
                    .map(|(k, d)| k * d)
                    .sum();
                *q = base.clamp_flow(*q - p - s);
                Decision {
                    rate: flow_to_rate(*q, &base),
                    flow_command_vph: *q,
                }
            })
            .collect();
        self.o_prev = Some(cell_occupancy.to_vec());
        Ok(decisions)
    }
}

impl Controller for Metaline {
    fn name(&self) -> &str {
        "metaline"
    }

    fn initial(&mut self) -> Vec<Decision> {
        let base = self.cfg.base;
        self.q_prev.iter_mut().for_each(|q| *q = base.q_max);
        self.o_prev = None;
        let d = Decision {
            rate: flow_to_rate(base.q_max, &base),
            flow_command_vph: base.q_max,
        };
        vec![d; self.q_prev.len()]
    }

    fn decide(&mut self, frame: &MeasurementFrame) -> Result<Vec<Decision>> {
        self.cycle(&frame.cell_occupancy, &frame.occupancy)
    }
}

//! Corridor geometry: cells in travel order, on/off-ramp attachment points
//! and the neighbourhood and distance queries used by coordinated metering.
//!
//! On-ramps merge at the upstream boundary of their attachment cell, so an
//! on-ramp attached to cell `a` sits at `a * cell_length_m`. Off-ramps
//! diverge at the downstream boundary of their cell.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::Cell;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    OnRamp,
    OffRamp,
}

/// Input description of a ramp before positions are resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RampSpec {
    pub id: String,
    pub kind: RampKind,
    pub cell: usize,
    /// Cells between the attachment cell and the detector (on-ramps only).
    pub detector_offset: usize,
}

impl RampSpec {
    pub fn on_ramp(id: impl Into<String>, cell: usize) -> Self {
        Self {
            id: id.into(),
            kind: RampKind::OnRamp,
            cell,
            detector_offset: 0,
        }
    }

    pub fn off_ramp(id: impl Into<String>, cell: usize) -> Self {
        Self {
            id: id.into(),
            kind: RampKind::OffRamp,
            cell,
            detector_offset: 0,
        }
    }

    pub fn with_detector_offset(mut self, offset: usize) -> Self {
        self.detector_offset = offset;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RampNode {
    pub id: String,
    pub kind: RampKind,
    pub position_m: f64,
    /// Cell the ramp merges into (on-ramp) or diverges from (off-ramp).
    pub cell: usize,
    pub detector_cell: usize,
    pub metered: bool,
}

/// Which consecutive on-ramp pairs enter a maximum-gap computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapScope<'a> {
    Global,
    Local { ramp: &'a str, m: usize },
}

#[derive(Debug, Clone)]
pub struct FreewayNetwork {
    topology: Topology,
    cell_length_m: f64,
    cells: Vec<Cell>,
    ramps: Vec<RampNode>,
    /// Indices into `ramps` of the on-ramps, sorted by position.
    on_ramps: Vec<usize>,
    /// Indices into `ramps` of the off-ramps, sorted by position.
    off_ramps: Vec<usize>,
    by_id: HashMap<String, usize>,
    /// Position of each ramp index within `on_ramps`.
    on_slot: HashMap<usize, usize>,
}

/// Maximum number of cells a detector may sit downstream of its merge.
pub const MAX_DETECTOR_OFFSET: usize = 4;

impl FreewayNetwork {
    pub fn new(topology: Topology, cells: Vec<Cell>, ramps: Vec<RampSpec>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Network("network has no cells".into()));
        }
        let cell_length_m = cells[0].length_m;
        if cells.iter().any(|c| c.length_m != cell_length_m) {
            return Err(Error::Network("cells must share one length".into()));
        }
        for (i, c) in cells.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::Network(format!("cell {i}: {e}")))?;
        }
        let n_cells = cells.len();
        let total = cell_length_m * n_cells as f64;

        let mut by_id = HashMap::new();
        let mut nodes = Vec::with_capacity(ramps.len());
        let mut merge_cells = HashMap::new();
        let mut diverge_cells = HashMap::new();
        for spec in ramps {
            if spec.cell >= n_cells {
                return Err(Error::Network(format!(
                    "ramp `{}` attaches to cell {} but the network has {n_cells} cells",
                    spec.id, spec.cell
                )));
            }
            if by_id.insert(spec.id.clone(), nodes.len()).is_some() {
                return Err(Error::Network(format!("duplicate ramp id `{}`", spec.id)));
            }
            let node = match spec.kind {
                RampKind::OnRamp => {
                    if let Some(other) = merge_cells.insert(spec.cell, spec.id.clone()) {
                        return Err(Error::Network(format!(
                            "on-ramps `{other}` and `{}` both attach to cell {}",
                            spec.id, spec.cell
                        )));
                    }
                    if spec.detector_offset > MAX_DETECTOR_OFFSET {
                        return Err(Error::Network(format!(
                            "detector of `{}` is {} cells downstream, at most {MAX_DETECTOR_OFFSET} allowed",
                            spec.id, spec.detector_offset
                        )));
                    }
                    let detector_cell = match topology {
                        Topology::Ring => (spec.cell + spec.detector_offset) % n_cells,
                        Topology::Line => {
                            let d = spec.cell + spec.detector_offset;
                            if d >= n_cells {
                                return Err(Error::Network(format!(
                                    "detector of `{}` lies beyond the end of the line",
                                    spec.id
                                )));
                            }
                            d
                        }
                    };
                    RampNode {
                        id: spec.id,
                        kind: RampKind::OnRamp,
                        position_m: spec.cell as f64 * cell_length_m,
                        cell: spec.cell,
                        detector_cell,
                        metered: true,
                    }
                }
                RampKind::OffRamp => {
                    if let Some(other) = diverge_cells.insert(spec.cell, spec.id.clone()) {
                        return Err(Error::Network(format!(
                            "off-ramps `{other}` and `{}` both leave cell {}",
                            spec.id, spec.cell
                        )));
                    }
                    if topology == Topology::Line && spec.cell + 1 == n_cells {
                        return Err(Error::Network(format!(
                            "off-ramp `{}` on the last cell of a line coincides with the mainline exit",
                            spec.id
                        )));
                    }
                    let position_m = ((spec.cell + 1) as f64 * cell_length_m) % total;
                    RampNode {
                        id: spec.id,
                        kind: RampKind::OffRamp,
                        position_m,
                        cell: spec.cell,
                        detector_cell: spec.cell,
                        metered: false,
                    }
                }
            };
            nodes.push(node);
        }

        let sorted = |kind: RampKind| {
            let mut idx: Vec<usize> = (0..nodes.len())
                .filter(|&i| nodes[i].kind == kind)
                .collect();
            idx.sort_by(|&a, &b| nodes[a].position_m.total_cmp(&nodes[b].position_m));
            idx
        };
        let on_ramps = sorted(RampKind::OnRamp);
        let off_ramps = sorted(RampKind::OffRamp);
        let on_slot = on_ramps.iter().enumerate().map(|(s, &i)| (i, s)).collect();

        Ok(Self {
            topology,
            cell_length_m,
            cells,
            ramps: nodes,
            on_ramps,
            off_ramps,
            by_id,
            on_slot,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn cell_length_m(&self) -> f64 {
        self.cell_length_m
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_length_m(&self) -> f64 {
        self.cell_length_m * self.cells.len() as f64
    }

    /// Upstream boundary of every cell, in meters.
    pub fn cell_positions_m(&self) -> Vec<f64> {
        (0..self.cells.len())
            .map(|i| i as f64 * self.cell_length_m)
            .collect()
    }

    /// Index of the cell downstream of `i`, `None` past the end of a line.
    pub fn next_cell(&self, i: usize) -> Option<usize> {
        match self.topology {
            Topology::Ring => Some((i + 1) % self.cells.len()),
            Topology::Line => (i + 1 < self.cells.len()).then_some(i + 1),
        }
    }

    pub fn ramp(&self, id: &str) -> Result<&RampNode> {
        self.by_id
            .get(id)
            .map(|&i| &self.ramps[i])
            .ok_or_else(|| Error::UnknownRamp(id.to_string()))
    }

    pub fn ramps(&self) -> &[RampNode] {
        &self.ramps
    }

    /// On-ramps in corridor order.
    pub fn on_ramps(&self) -> impl ExactSizeIterator<Item = &RampNode> + '_ {
        self.on_ramps.iter().map(move |&i| &self.ramps[i])
    }

    /// Off-ramps in corridor order.
    pub fn off_ramps(&self) -> impl ExactSizeIterator<Item = &RampNode> + '_ {
        self.off_ramps.iter().map(move |&i| &self.ramps[i])
    }

    pub fn n_on_ramps(&self) -> usize {
        self.on_ramps.len()
    }

    /// Position of an on-ramp in corridor order.
    pub fn on_ramp_slot(&self, id: &str) -> Result<usize> {
        let idx = *self
            .by_id
            .get(id)
            .ok_or_else(|| Error::UnknownRamp(id.to_string()))?;
        self.on_slot
            .get(&idx)
            .copied()
            .ok_or_else(|| Error::NotAnOnRamp(id.to_string()))
    }

    fn on_ramp_at(&self, slot: usize) -> &RampNode {
        &self.ramps[self.on_ramps[slot]]
    }

    /// Slots of the `m` nearest upstream and `m` nearest downstream on-ramps,
    /// upstream-nearest-first then downstream-nearest-first.
    pub fn neighbour_slots(&self, slot: usize, m: usize) -> Vec<usize> {
        let n = self.on_ramps.len();
        let mut out = Vec::with_capacity(2 * m);
        match self.topology {
            Topology::Line => {
                out.extend((1..=m).filter_map(|k| slot.checked_sub(k)));
                out.extend((1..=m).map(|k| slot + k).filter(|&s| s < n));
            }
            Topology::Ring => {
                let upstream = (1..=m).map(|k| (slot + n * k - k) % n);
                let downstream = (1..=m).map(|k| (slot + k) % n);
                for s in upstream.chain(downstream) {
                    if s != slot && !out.contains(&s) {
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    /// The symmetric on-ramp neighbourhood of `n` with `m` ramps on each side.
    pub fn neighborhood(&self, n: &str, m: usize) -> Result<Vec<&str>> {
        if m == 0 {
            return Err(Error::Config(
                "neighbourhood size m must be at least 1".into(),
            ));
        }
        let slot = self.on_ramp_slot(n)?;
        Ok(self
            .neighbour_slots(slot, m)
            .into_iter()
            .map(|s| self.on_ramp_at(s).id.as_str())
            .collect())
    }

    fn on_ramp_pair(&self, n: &str, j: &str) -> Result<(f64, f64)> {
        let a = self.on_ramp_at(self.on_ramp_slot(n)?).position_m;
        let b = self.on_ramp_at(self.on_ramp_slot(j)?).position_m;
        if n == j {
            return Err(Error::SelfDistance(n.to_string()));
        }
        Ok((a, b))
    }

    fn directed(&self, from: f64, to: f64) -> f64 {
        match self.topology {
            Topology::Line => (to - from).abs(),
            Topology::Ring => (to - from).rem_euclid(self.total_length_m()),
        }
    }

    /// Distance travelled along the corridor from on-ramp `n` to on-ramp `j`.
    ///
    /// On a line this is the absolute separation. On a ring it is the arc in
    /// the direction of travel, so `ramp_distance(n, j) + ramp_distance(j, n)`
    /// equals the ring length.
    pub fn ramp_distance(&self, n: &str, j: &str) -> Result<f64> {
        let (a, b) = self.on_ramp_pair(n, j)?;
        Ok(self.directed(a, b))
    }

    /// Spatial proximity of two on-ramps: the shorter of the two ring arcs, or
    /// the separation on a line. This is the `d` used for coordination weights.
    pub fn proximity(&self, n: &str, j: &str) -> Result<f64> {
        let (a, b) = self.on_ramp_pair(n, j)?;
        Ok(self.proximity_between(a, b))
    }

    fn proximity_between(&self, a: f64, b: f64) -> f64 {
        match self.topology {
            Topology::Line => (b - a).abs(),
            Topology::Ring => {
                let fwd = self.directed(a, b);
                fwd.min(self.total_length_m() - fwd)
            }
        }
    }

    /// Largest along-travel gap between consecutive on-ramps in scope.
    pub fn max_consecutive_gap(&self, scope: GapScope<'_>) -> Result<f64> {
        let n = self.on_ramps.len();
        let chain: Vec<usize> = match scope {
            GapScope::Global => (0..n).collect(),
            GapScope::Local { ramp, m } => {
                if m == 0 {
                    return Err(Error::Config(
                        "neighbourhood size m must be at least 1".into(),
                    ));
                }
                let slot = self.on_ramp_slot(ramp)?;
                let members = self.neighbour_slots(slot, m).len() + 1;
                if members == n {
                    (0..n).collect()
                } else {
                    let up = match self.topology {
                        Topology::Line => slot.min(m),
                        Topology::Ring => m,
                    };
                    (0..members).map(|k| (slot + n - up + k) % n).collect()
                }
            }
        };
        if chain.len() < 2 {
            return Err(Error::TooFewRamps(chain.len()));
        }
        let closes_ring = self.topology == Topology::Ring && chain.len() == n;
        let pos = |s: usize| self.on_ramp_at(s).position_m;
        let mut gap = chain
            .windows(2)
            .map(|w| self.directed(pos(w[0]), pos(w[1])))
            .fold(0.0_f64, f64::max);
        if closes_ring {
            gap = gap.max(self.directed(pos(chain[n - 1]), pos(chain[0])));
        }
        Ok(gap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(length_m: f64) -> Cell {
        Cell::new(length_m, 3, 90.0, 2000.0, 150.0)
    }

    /// Network with 1 km cells and on-ramps at the given cells.
    fn with_on_ramps(topology: Topology, n_cells: usize, at: &[(&str, usize)]) -> FreewayNetwork {
        let ramps = at.iter().map(|&(id, c)| RampSpec::on_ramp(id, c)).collect();
        FreewayNetwork::new(topology, vec![cell(1000.0); n_cells], ramps).unwrap()
    }

    #[test]
    fn ring_neighbourhood_is_symmetric() {
        let net = with_on_ramps(
            Topology::Ring,
            16,
            &[("A", 0), ("B", 4), ("C", 8), ("D", 12)],
        );
        assert_eq!(net.neighborhood("B", 1).unwrap(), vec!["A", "C"]);
        assert_eq!(net.neighborhood("A", 1).unwrap(), vec!["D", "B"]);
    }

    #[test]
    fn line_neighbourhood_truncates_at_ends() {
        let net = with_on_ramps(Topology::Line, 10, &[("A", 0), ("B", 3), ("C", 6)]);
        assert_eq!(net.neighborhood("A", 2).unwrap(), vec!["B", "C"]);
        assert_eq!(net.neighborhood("C", 1).unwrap(), vec!["B"]);
    }

    #[test]
    fn ring_of_eleven_has_six_neighbours_at_m3() {
        let ids: Vec<String> = (0..11).map(|i| format!("R{i}")).collect();
        let at: Vec<(&str, usize)> = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i * 3))
            .collect();
        let net = with_on_ramps(Topology::Ring, 33, &at);
        for id in &ids {
            let nb = net.neighborhood(id, 3).unwrap();
            assert_eq!(nb.len(), 6);
            assert!(!nb.contains(&id.as_str()));
        }
    }

    #[test]
    fn small_ring_returns_every_other_ramp_once() {
        let net = with_on_ramps(
            Topology::Ring,
            16,
            &[("A", 0), ("B", 4), ("C", 8), ("D", 12)],
        );
        assert_eq!(net.neighborhood("A", 2).unwrap(), vec!["D", "C", "B"]);
        assert_eq!(net.neighborhood("A", 5).unwrap().len(), 3);
    }

    #[test]
    fn neighbourhood_errors() {
        let ramps = vec![
            RampSpec::on_ramp("A", 0),
            RampSpec::off_ramp("X", 2),
            RampSpec::on_ramp("B", 5),
        ];
        let net = FreewayNetwork::new(Topology::Ring, vec![cell(1000.0); 8], ramps).unwrap();
        assert!(matches!(
            net.neighborhood("Z", 1),
            Err(Error::UnknownRamp(_))
        ));
        assert!(matches!(
            net.neighborhood("X", 1),
            Err(Error::NotAnOnRamp(_))
        ));
        assert_eq!(net.neighborhood("A", 1).unwrap(), vec!["B"]);
    }

    #[test]
    fn distances() {
        let line = FreewayNetwork::new(
            Topology::Line,
            vec![cell(500.0); 10],
            vec![RampSpec::on_ramp("A", 2), RampSpec::on_ramp("B", 7)],
        )
        .unwrap();
        assert_eq!(line.ramp_distance("A", "B").unwrap(), 2500.0);
        assert_eq!(line.ramp_distance("B", "A").unwrap(), 2500.0);

        let ring = with_on_ramps(Topology::Ring, 32, &[("A", 1), ("B", 31)]);
        assert_eq!(ring.ramp_distance("B", "A").unwrap(), 2000.0);
        assert_eq!(ring.ramp_distance("A", "B").unwrap(), 30000.0);
        assert_eq!(ring.proximity("A", "B").unwrap(), 2000.0);
        assert_eq!(ring.proximity("B", "A").unwrap(), 2000.0);
        assert!(matches!(
            ring.ramp_distance("A", "A"),
            Err(Error::SelfDistance(_))
        ));
    }

    #[test]
    fn uniform_ring_gap() {
        let at: Vec<(String, usize)> = (0..8).map(|i| (format!("R{i}"), i * 4)).collect();
        let at: Vec<(&str, usize)> = at.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let net = with_on_ramps(Topology::Ring, 32, &at);
        assert_eq!(net.max_consecutive_gap(GapScope::Global).unwrap(), 4000.0);
        for (id, _) in &at {
            assert_eq!(
                net.max_consecutive_gap(GapScope::Local { ramp: id, m: 2 })
                    .unwrap(),
                4000.0
            );
        }
    }

    #[test]
    fn gap_scopes() {
        // gaps 2000, 3000, 5000 along a line
        let net = with_on_ramps(
            Topology::Line,
            12,
            &[("A", 0), ("B", 2), ("C", 5), ("D", 10)],
        );
        assert_eq!(net.max_consecutive_gap(GapScope::Global).unwrap(), 5000.0);
        assert_eq!(
            net.max_consecutive_gap(GapScope::Local { ramp: "B", m: 1 })
                .unwrap(),
            3000.0
        );
        assert_eq!(
            net.max_consecutive_gap(GapScope::Local { ramp: "A", m: 1 })
                .unwrap(),
            2000.0
        );

        let lonely = with_on_ramps(Topology::Line, 4, &[("A", 0)]);
        assert!(matches!(
            lonely.max_consecutive_gap(GapScope::Global),
            Err(Error::TooFewRamps(1))
        ));
    }

    #[test]
    fn ring_local_gap_uses_contiguous_arc() {
        // gaps A->B 2, B->C 3, C->D 5, D->E 1, E->A 9 (km), ring of 20 km
        let net = with_on_ramps(
            Topology::Ring,
            20,
            &[("A", 0), ("B", 2), ("C", 5), ("D", 10), ("E", 11)],
        );
        assert_eq!(net.max_consecutive_gap(GapScope::Global).unwrap(), 9000.0);
        assert_eq!(
            net.max_consecutive_gap(GapScope::Local { ramp: "B", m: 1 })
                .unwrap(),
            3000.0
        );
        assert_eq!(
            net.max_consecutive_gap(GapScope::Local { ramp: "A", m: 1 })
                .unwrap(),
            9000.0
        );
        assert_eq!(
            net.max_consecutive_gap(GapScope::Local { ramp: "C", m: 1 })
                .unwrap(),
            5000.0
        );
        assert_eq!(
            net.max_consecutive_gap(GapScope::Local { ramp: "D", m: 1 })
                .unwrap(),
            5000.0
        );
    }

    #[test]
    fn construction_rejects_bad_layouts() {
        let c = vec![cell(1000.0); 4];
        let dup = vec![RampSpec::on_ramp("A", 0), RampSpec::on_ramp("A", 1)];
        assert!(FreewayNetwork::new(Topology::Ring, c.clone(), dup).is_err());
        let shared = vec![RampSpec::on_ramp("A", 1), RampSpec::on_ramp("B", 1)];
        assert!(FreewayNetwork::new(Topology::Ring, c.clone(), shared).is_err());
        let outside = vec![RampSpec::on_ramp("A", 4)];
        assert!(FreewayNetwork::new(Topology::Ring, c.clone(), outside).is_err());
        let far_detector = vec![RampSpec::on_ramp("A", 3).with_detector_offset(1)];
        assert!(FreewayNetwork::new(Topology::Line, c.clone(), far_detector).is_err());
        let wraps = vec![RampSpec::on_ramp("A", 3).with_detector_offset(1)];
        let net = FreewayNetwork::new(Topology::Ring, c, wraps).unwrap();
        assert_eq!(net.ramp("A").unwrap().detector_cell, 0);
    }
}

//! Cohort bookkeeping that turns continuum flows into weighted trip records.
//!
//! Demand entering an origin queue during one departure bin forms a cohort.
//! Queues discharge first-in first-out; on the mainline every cell mixes its
//! cohorts, so a cell's outflow carries each cohort in proportion to its
//! share of the cell. A cohort's mass on a ring also carries the number of
//! times it has passed its own origin again (its lap).

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use crate::metrics::TripRecord;

/// Parcels lighter than this are dropped from the ledger (not from the plant).
pub const PRUNE_VEH: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Cohort {
    origin: usize,
    mass: f64,
    time_mass: f64,
}

impl Cohort {
    fn depart_s(&self) -> f64 {
        self.time_mass / self.mass
    }
}

type ParcelKey = (usize, u32);

#[derive(Debug, Clone, Default)]
struct ExitTally {
    mass: f64,
    time_mass: f64,
}

fn add_parcel(parcels: &mut Vec<(ParcelKey, f64)>, key: ParcelKey, mass: f64) {
    match parcels.binary_search_by_key(&key, |p| p.0) {
        Ok(k) => parcels[k].1 += mass,
        Err(k) => parcels.insert(k, (key, mass)),
    }
}

/// Merges two key-sorted parcel lists, adding masses of equal keys.
fn merge(a: Vec<(ParcelKey, f64)>, b: Vec<(ParcelKey, f64)>) -> Vec<(ParcelKey, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut a = a.into_iter().peekable();
    let mut b = b.into_iter().peekable();
    loop {
        let next = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => match x.0.cmp(&y.0) {
                Ordering::Less => a.next(),
                Ordering::Greater => b.next(),
                Ordering::Equal => {
                    let (k, m) = a.next().expect("peeked");
                    let (_, m2) = b.next().expect("peeked");
                    Some((k, m + m2))
                }
            },
            (Some(_), None) => a.next(),
            (None, Some(_)) => b.next(),
            (None, None) => break,
        };
        if let Some((k, m)) = next {
            // an incoming parcel may repeat a key already pushed
            match out.last_mut() {
                Some((lk, lm)) if *lk == k => *lm += m,
                _ => out.push((k, m)),
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TripLedger {
    cohorts: Vec<Cohort>,
    open: Vec<Option<(u64, usize)>>,
    queues: Vec<VecDeque<(usize, f64)>>,
    /// Per cell, parcels sorted by key.
    cells: Vec<Vec<(ParcelKey, f64)>>,
    exits: BTreeMap<(usize, u32, usize), ExitTally>,
    dropped: f64,
}

/// Geometry the ledger needs to turn exits into distances and free-flow times.
pub struct LedgerGeometry<'a> {
    pub origin_ids: &'a [String],
    pub origin_cells: &'a [usize],
    pub destination_ids: &'a [String],
    pub destination_cells: &'a [usize],
    /// Free-flow traversal time of every cell, seconds.
    pub cell_times_s: &'a [f64],
    pub cell_length_km: f64,
    pub ring: bool,
}

impl TripLedger {
    pub fn new(n_origins: usize, n_cells: usize) -> Self {
        Self {
            cohorts: Vec::new(),
            open: vec![None; n_origins],
            queues: vec![VecDeque::new(); n_origins],
            cells: vec![Vec::new(); n_cells],
            exits: BTreeMap::new(),
            dropped: 0.0,
        }
    }

    /// Vehicle mass pruned so far because parcels became negligible.
    pub fn dropped(&self) -> f64 {
        self.dropped
    }

    pub fn n_cohorts(&self) -> usize {
        self.cohorts.len()
    }

    /// Number of (cohort, lap) parcels currently on the mainline.
    pub fn n_parcels(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub(crate) fn arrive(&mut self, origin: usize, mass: f64, at_s: f64, bin: u64) {
        if mass <= 0.0 {
            return;
        }
        let id = match self.open[origin] {
            Some((b, id)) if b == bin => id,
            _ => {
                self.cohorts.push(Cohort {
                    origin,
                    mass: 0.0,
                    time_mass: 0.0,
                });
                let id = self.cohorts.len() - 1;
                self.open[origin] = Some((bin, id));
                id
            }
        };
        let c = &mut self.cohorts[id];
        c.mass += mass;
        c.time_mass += mass * at_s;
        let q = &mut self.queues[origin];
        match q.back_mut() {
            Some((last, m)) if *last == id => *m += mass,
            _ => q.push_back((id, mass)),
        }
    }

    /// Moves `amount` vehicles from the head of an origin queue into `cell`.
    pub(crate) fn discharge(&mut self, origin: usize, mut amount: f64, cell: usize) {
        let q = &mut self.queues[origin];
        while amount > 0.0 {
            let Some(front) = q.front_mut() else { break };
            let take = front.1.min(amount);
            add_parcel(&mut self.cells[cell], (front.0, 0), take);
            front.1 -= take;
            amount -= take;
            if front.1 <= PRUNE_VEH {
                self.dropped += front.1.max(0.0);
                q.pop_front();
            }
        }
    }

    /// Advances mainline parcels. `outflow_share[i]` is the fraction of cell
    /// `i` leaving it this step, `split[i]` the part of that outflow taking
    /// the off-ramp `exit_dest[i]`, and `next[i]` the downstream cell (or the
    /// line sink `sink_dest` when `None`).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance(
        &mut self,
        outflow_share: &[f64],
        split: &[f64],
        exit_dest: &[Option<usize>],
        next: &[Option<usize>],
        sink_dest: Option<usize>,
        origin_cells: &[usize],
        ring: bool,
        at_s: f64,
    ) {
        let n = self.cells.len();
        let mut incoming: Vec<Vec<(ParcelKey, f64)>> = vec![Vec::new(); n];
        let mut relabelled = vec![false; n];
        for (i, parcels) in self.cells.iter_mut().enumerate() {
            let share = outflow_share[i];
            if share <= 0.0 {
                continue;
            }
            for ((cohort, lap), mass) in parcels.iter_mut() {
                let out = *mass * share;
                *mass -= out;
                let off = out * split[i];
                if off > 0.0 {
                    let dest = exit_dest[i].expect("split on a cell without an off-ramp");
                    let t = self.exits.entry((*cohort, *lap, dest)).or_default();
                    t.mass += off;
                    t.time_mass += off * at_s;
                }
                let through = out - off;
                if through <= 0.0 {
                    continue;
                }
                match next[i] {
                    Some(j) => {
                        let origin = self.cohorts[*cohort].origin;
                        let lap = if ring && origin_cells[origin] == j {
                            relabelled[j] = true;
                            *lap + 1
                        } else {
                            *lap
                        };
                        incoming[j].push(((*cohort, lap), through));
                    }
                    None => {
                        let dest = sink_dest.expect("line corridor without a sink");
                        let t = self.exits.entry((*cohort, *lap, dest)).or_default();
                        t.mass += through;
                        t.time_mass += through * at_s;
                    }
                }
            }
        }
        for (j, mut inc) in incoming.into_iter().enumerate() {
            if inc.is_empty() {
                continue;
            }
            if relabelled[j] {
                inc.sort_unstable_by_key(|p| p.0);
            }
            self.cells[j] = merge(std::mem::take(&mut self.cells[j]), inc);
        }
    }

    pub(crate) fn prune(&mut self) {
        let mut dropped = 0.0;
        for parcels in &mut self.cells {
            parcels.retain(|(_, m)| {
                if *m <= PRUNE_VEH {
                    dropped += *m;
                    false
                } else {
                    true
                }
            });
        }
        self.dropped += dropped;
    }

    /// Weighted trip records: one per (cohort, lap, destination) that reached
    /// an exit, plus one unfinished record per cohort with mass still inside.
    pub fn trip_records(&self, geo: &LedgerGeometry<'_>) -> Vec<TripRecord> {
        let n_cells = geo.cell_times_s.len();
        let ring_time: f64 = geo.cell_times_s.iter().sum();
        let path_time = |from: usize, cells: usize| -> f64 {
            let laps = cells / n_cells;
            let rest = cells % n_cells;
            laps as f64 * ring_time
                + (0..rest)
                    .map(|k| geo.cell_times_s[(from + k) % n_cells])
                    .sum::<f64>()
        };

        let mut out = Vec::with_capacity(self.exits.len() + self.cohorts.len());
        let mut arrived = vec![0.0; self.cohorts.len()];
        for (&(cohort, lap, dest), tally) in &self.exits {
            let c = &self.cohorts[cohort];
            let from = geo.origin_cells[c.origin];
            let to = geo.destination_cells[dest];
            let span = if geo.ring {
                (to + n_cells - from) % n_cells + 1
            } else {
                to + 1 - from
            };
            let cells = span + lap as usize * n_cells;
            let freeflow_time_s = path_time(from, cells);
            let depart_s = c.depart_s();
            // cohort means can run ahead of free flow by rounding or numerical diffusion
            let arrive_s = (tally.time_mass / tally.mass).max(depart_s + freeflow_time_s);
            arrived[cohort] += tally.mass;
            out.push(TripRecord {
                origin: geo.origin_ids[c.origin].clone(),
                destination: geo.destination_ids[dest].clone(),
                depart_s,
                arrive_s: Some(arrive_s),
                distance_km: cells as f64 * geo.cell_length_km,
                freeflow_time_s,
                weight: tally.mass,
            });
        }

        let mut inside = vec![0.0; self.cohorts.len()];
        for q in &self.queues {
            for &(id, m) in q {
                inside[id] += m;
            }
        }
        for parcels in &self.cells {
            for &((id, _), m) in parcels {
                inside[id] += m;
            }
        }
        for (id, c) in self.cohorts.iter().enumerate() {
            if inside[id] > PRUNE_VEH {
                out.push(TripRecord {
                    origin: geo.origin_ids[c.origin].clone(),
                    destination: String::new(),
                    depart_s: c.depart_s(),
                    arrive_s: None,
                    distance_km: 0.0,
                    freeflow_time_s: 0.0,
                    weight: inside[id],
                });
            }
        }
        out
    }

    /// Total cohort mass currently queued or on the mainline.
    pub fn tracked_mass(&self) -> f64 {
        let q: f64 = self.queues.iter().flatten().map(|(_, m)| m).sum();
        let c: f64 = self.cells.iter().flatten().map(|(_, m)| m).sum();
        q + c
    }

    pub fn exited_mass(&self) -> f64 {
        self.exits.values().map(|t| t.mass).sum()
    }
}

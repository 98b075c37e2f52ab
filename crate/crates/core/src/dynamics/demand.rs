use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Origin id used for the upstream end of a line corridor.
pub const MAINLINE: &str = "mainline";

/// Piecewise-constant origin inflows plus exogenous off-ramp split fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    piece_starts_s: Vec<f64>,
    inflow_vph: IndexMap<String, Vec<f64>>,
    splits: IndexMap<String, f64>,
}

impl DemandProfile {
    /// `piece_starts_s` must start at 0 and increase; each origin lists one
    /// inflow per piece.
    pub fn new(
        piece_starts_s: Vec<f64>,
        inflow_vph: IndexMap<String, Vec<f64>>,
        splits: IndexMap<String, f64>,
    ) -> Result<Self> {
        if piece_starts_s.first() != Some(&0.0) {
            return Err(Error::Config("demand pieces must start at 0 s".into()));
        }
        if piece_starts_s.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(
                "demand piece starts must be strictly increasing".into(),
            ));
        }
        for (origin, levels) in &inflow_vph {
            if levels.len() != piece_starts_s.len() {
                return Err(Error::Config(format!(
                    "origin `{origin}` lists {} inflows for {} demand pieces",
                    levels.len(),
                    piece_starts_s.len()
                )));
            }
            if let Some(bad) = levels.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Config(format!(
                    "origin `{origin}` has invalid inflow {bad}"
                )));
            }
        }
        for (ramp, s) in &splits {
            if !(0.0..=1.0).contains(s) {
                return Err(Error::Config(format!(
                    "split of `{ramp}` must lie in [0, 1], got {s}"
                )));
            }
        }
        Ok(Self {
            piece_starts_s,
            inflow_vph,
            splits,
        })
    }

    pub fn piece_starts_s(&self) -> &[f64] {
        &self.piece_starts_s
    }

    pub fn origins(&self) -> impl Iterator<Item = &str> {
        self.inflow_vph.keys().map(String::as_str)
    }

    pub fn split(&self, off_ramp: &str) -> Option<f64> {
        self.splits.get(off_ramp).copied()
    }

    pub fn splits(&self) -> impl Iterator<Item = (&str, f64)> {
        self.splits.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn levels(&self, origin: &str) -> Option<&[f64]> {
        self.inflow_vph.get(origin).map(Vec::as_slice)
    }

    /// Inflow of `origin` at time `t_s`; zero for origins without demand.
    pub fn inflow_vph(&self, origin: &str, t_s: f64) -> f64 {
        self.levels(origin)
            .map_or(0.0, |levels| levels[self.piece_at(t_s)])
    }

    pub fn piece_at(&self, t_s: f64) -> usize {
        self.piece_starts_s
            .partition_point(|&s| s <= t_s)
            .saturating_sub(1)
    }

    /// Multiplies every (origin, piece) level by an independent factor drawn
    /// uniformly from `[1 - noise, 1 + noise]`. Draw order is origin order,
    /// then piece order.
    pub fn perturbed(&self, seed: u64, noise: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&noise) {
            return Err(Error::Config(format!(
                "demand noise must lie in [0, 1), got {noise}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for levels in out.inflow_vph.values_mut() {
            for v in levels.iter_mut() {
                let f: f64 = rng.gen_range(-1.0..=1.0);
                *v *= 1.0 + noise * f;
            }
        }
        Ok(out)
    }

    /// Total vehicles an origin is scheduled to release in `[t0, t1)`.
    pub fn volume(&self, origin: &str, t0: f64, t1: f64) -> f64 {
        let Some(levels) = self.levels(origin) else {
            return 0.0;
        };
        let mut total = 0.0;
        for (i, &start) in self.piece_starts_s.iter().enumerate() {
            let end = self
                .piece_starts_s
                .get(i + 1)
                .copied()
                .unwrap_or(f64::INFINITY);
            let overlap = end.min(t1) - start.max(t0);
            if overlap > 0.0 {
                total += levels[i] * overlap / 3600.0;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> DemandProfile {
        let mut inflow = IndexMap::new();
        inflow.insert("A".to_string(), vec![600.0, 1200.0, 0.0]);
        inflow.insert("B".to_string(), vec![300.0, 300.0, 300.0]);
        let mut splits = IndexMap::new();
        splits.insert("X".to_string(), 0.25);
        DemandProfile::new(vec![0.0, 1800.0, 3600.0], inflow, splits).unwrap()
    }

    #[test]
    fn piecewise_lookup() {
        let d = profile();
        assert_eq!(d.inflow_vph("A", 0.0), 600.0);
        assert_eq!(d.inflow_vph("A", 1799.9), 600.0);
        assert_eq!(d.inflow_vph("A", 1800.0), 1200.0);
        assert_eq!(d.inflow_vph("A", 99999.0), 0.0);
        assert_eq!(d.inflow_vph("nobody", 10.0), 0.0);
        assert_eq!(d.volume("A", 0.0, 3600.0), 900.0);
        assert_eq!(d.volume("B", 900.0, 2700.0), 150.0);
    }

    #[test]
    fn perturbation_is_seeded_and_bounded() {
        let d = profile();
        let a = d.perturbed(7, 0.1).unwrap();
        let b = d.perturbed(7, 0.1).unwrap();
        let c = d.perturbed(8, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (orig, pert) in d.levels("A").unwrap().iter().zip(a.levels("A").unwrap()) {
            assert!(*pert >= orig * 0.9 - 1e-12 && *pert <= orig * 1.1 + 1e-12);
        }
        assert_eq!(d.perturbed(7, 0.0).unwrap(), d);
    }

    #[test]
    fn rejects_invalid_profiles() {
        let mut inflow = IndexMap::new();
        inflow.insert("A".to_string(), vec![-1.0]);
        assert!(DemandProfile::new(vec![0.0], inflow, IndexMap::new()).is_err());
        assert!(DemandProfile::new(vec![10.0], IndexMap::new(), IndexMap::new()).is_err());
        assert!(DemandProfile::new(vec![0.0, 5.0, 5.0], IndexMap::new(), IndexMap::new()).is_err());
        let mut splits = IndexMap::new();
        splits.insert("X".to_string(), 1.5);
        assert!(DemandProfile::new(vec![0.0], IndexMap::new(), splits).is_err());
    }
}

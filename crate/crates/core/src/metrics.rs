//! Efficiency panel and fairness statistics computed from weighted trips.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One vehicle-equivalent trip, possibly fractional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin: String,
    /// Empty while the trip is unfinished.
    pub destination: String,
    pub depart_s: f64,
    pub arrive_s: Option<f64>,
    pub distance_km: f64,
    pub freeflow_time_s: f64,
    pub weight: f64,
}

impl TripRecord {
    pub fn travel_time_s(&self) -> Option<f64> {
        self.arrive_s.map(|a| a - self.depart_s)
    }

    /// Travel time above free flow, queue waiting included; never negative.
    pub fn delay_s(&self) -> Option<f64> {
        self.travel_time_s()
            .map(|t| (t - self.freeflow_time_s).max(0.0))
    }

    pub fn departs_within(&self, window: (f64, f64)) -> bool {
        self.depart_s >= window.0 && self.depart_s < window.1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub departed: f64,
    pub arrived: f64,
    /// Percent; `None` when nothing departed.
    pub arrival_rate: Option<f64>,
    pub total_travel_time_h: f64,
    pub total_distance_km: f64,
    pub total_delay_h: f64,
    pub avg_speed_kmh: Option<f64>,
    pub avg_delay_s_per_veh: Option<f64>,
    /// Departed in the window but still travelling at the horizon.
    pub unfinished: f64,
}

impl EfficiencyReport {
    /// Metric rows in table order with their labels.
    pub fn rows(&self) -> [(&'static str, Option<f64>); 8] {
        [
            ("Total Departed Vehicles", Some(self.departed)),
            ("Total Arrived Vehicles", Some(self.arrived)),
            ("Arrival Rate (%)", self.arrival_rate),
            ("Total Travel Time (h)", Some(self.total_travel_time_h)),
            ("Total Travel Distance (km)", Some(self.total_distance_km)),
            ("Total Delay (h)", Some(self.total_delay_h)),
            ("Average Speed (km/h)", self.avg_speed_kmh),
            ("Average Delay (s/veh)", self.avg_delay_s_per_veh),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub per_ramp_avg_delay: IndexMap<String, f64>,
    pub harsanyian: f64,
    pub gini: f64,
    pub rawlsian_max: f64,
    pub aristotelian: f64,
}

/// Aggregates trips departing in `[t0, t1)`.
pub fn efficiency(trips: &[TripRecord], window: (f64, f64)) -> EfficiencyReport {
    let mut r = EfficiencyReport::default();
    let mut travel_s = 0.0;
    let mut delay_s = 0.0;
    for t in trips.iter().filter(|t| t.departs_within(window)) {
        r.departed += t.weight;
        match (t.travel_time_s(), t.delay_s()) {
            (Some(tt), Some(d)) => {
                r.arrived += t.weight;
                travel_s += t.weight * tt;
                delay_s += t.weight * d;
                r.total_distance_km += t.weight * t.distance_km;
            }
            _ => r.unfinished += t.weight,
        }
    }
    r.total_travel_time_h = travel_s / 3600.0;
    r.total_delay_h = delay_s / 3600.0;
    r.arrival_rate = (r.departed > 0.0).then(|| 100.0 * r.arrived / r.departed);
    r.avg_speed_kmh =
        (r.total_travel_time_h > 0.0).then(|| r.total_distance_km / r.total_travel_time_h);
    r.avg_delay_s_per_veh = (r.arrived > 0.0).then(|| delay_s / r.arrived);
    r
}

/// Departed vehicle-equivalents per origin in the window.
pub fn origin_demand(trips: &[TripRecord], window: (f64, f64)) -> IndexMap<String, f64> {
    let mut out = IndexMap::new();
    for t in trips.iter().filter(|t| t.departs_within(window)) {
        *out.entry(t.origin.clone()).or_insert(0.0) += t.weight;
    }
    out
}

/// Weighted mean delay of the completed trips from each origin. Origins that
/// released less than `min_demand` vehicle-equivalents in the window are
/// left out. Output follows `ramps` order; origins not listed are ignored.
pub fn per_ramp_avg_delay(
    trips: &[TripRecord],
    window: (f64, f64),
    min_demand: f64,
    ramps: &[String],
) -> IndexMap<String, f64> {
    let demand = origin_demand(trips, window);
    let mut sums: IndexMap<&str, (f64, f64)> =
        ramps.iter().map(|r| (r.as_str(), (0.0, 0.0))).collect();
    for t in trips.iter().filter(|t| t.departs_within(window)) {
        if let (Some(d), Some(acc)) = (t.delay_s(), sums.get_mut(t.origin.as_str())) {
            acc.0 += t.weight * d;
            acc.1 += t.weight;
        }
    }
    sums.into_iter()
        .filter(|(id, (_, w))| *w > 0.0 && demand.get(*id).copied().unwrap_or(0.0) >= min_demand)
        .map(|(id, (s, w))| (id.to_string(), s / w))
        .collect()
}

/// Weighted Gini coefficient, `sum_ij w_i w_j |x_i - x_j| / (2 W^2 mu)`.
///
/// Evaluated in O(n log n) over the values sorted ascending: each value's
/// contribution is its weight times the weighted count below minus the
/// weighted count above it.
pub fn gini(values: &[(f64, f64)]) -> Result<f64> {
    if let Some((x, _)) = values.iter().find(|(x, _)| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Metric(format!(
            "gini needs non-negative values, got {x}"
        )));
    }
    if let Some((_, w)) = values.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Metric(format!(
            "gini needs non-negative weights, got {w}"
        )));
    }
    let total_w: f64 = values.iter().map(|(_, w)| w).sum();
    if !(total_w > 0.0) {
        return Err(Error::Metric(
            "gini needs at least one positive weight".into(),
        ));
    }
    let mean = values.iter().map(|(x, w)| x * w).sum::<f64>() / total_w;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum_ij w_i w_j |x_i - x_j| = 2 sum_i w_i x_i (W_below_i - W_above_i)
    let mut below = 0.0;
    let mut acc = 0.0;
    for &(x, w) in &sorted {
        let above = total_w - below - w;
        acc += w * x * (below - above);
        below += w;
    }
    Ok((acc / (total_w * total_w * mean)).max(0.0))
}

/// The four fairness notions over per-ramp average delays.
pub fn fairness(
    per_ramp: &IndexMap<String, f64>,
    demands: &IndexMap<String, f64>,
) -> Result<FairnessReport> {
    if per_ramp.is_empty() {
        return Err(Error::Metric("fairness needs at least one ramp".into()));
    }
    let n = per_ramp.len() as f64;
    let harsanyian = per_ramp.values().sum::<f64>() / n;
    let rawlsian_max = per_ramp.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let unit: Vec<(f64, f64)> = per_ramp.values().map(|&d| (d, 1.0)).collect();
    let gini = gini(&unit)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (id, &d) in per_ramp {
        let q = *demands
            .get(id)
            .ok_or_else(|| Error::Metric(format!("no demand given for ramp `{id}`")))?;
        num += q * d;
        den += q;
    }
    if !(den > 0.0) {
        return Err(Error::Metric(
            "total demand of the listed ramps is zero".into(),
        ));
    }
    Ok(FairnessReport {
        per_ramp_avg_delay: per_ramp.clone(),
        harsanyian,
        gini,
        rawlsian_max,
        aristotelian: num / den,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo_km: f64,
    /// `None` for the open last bin.
    pub hi_km: Option<f64>,
    /// Weighted mean delay per kilometre; `None` when no trip fell in the bin.
    pub delay_s_per_km: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDelay {
    pub bins: Vec<DistanceBin>,
    /// Gini across the populated bin means; `None` when no bin is populated.
    pub gini: Option<f64>,
    /// Completed trips with zero distance that were left out.
    pub rejected: f64,
}

/// Delay per kilometre of completed trips, grouped by trip length. With
/// edges `e_0 < ... < e_k` the bins are `[0, e_0), [e_0, e_1), ..., [e_k, inf)`.
pub fn relative_delay_by_distance(
    trips: &[TripRecord],
    bin_edges_km: &[f64],
) -> Result<RelativeDelay> {
    if bin_edges_km.iter().any(|e| !(*e > 0.0)) || bin_edges_km.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Metric(
            "bin edges must be positive and strictly increasing".into(),
        ));
    }
    let n_bins = bin_edges_km.len() + 1;
    let mut sums = vec![(0.0, 0.0); n_bins];
    let mut rejected = 0.0;
    for t in trips {
        let Some(d) = t.delay_s() else { continue };
        if t.distance_km <= 0.0 {
            rejected += t.weight;
            continue;
        }
        let b = bin_edges_km.partition_point(|&e| e <= t.distance_km);
        sums[b].0 += t.weight * d / t.distance_km;
        sums[b].1 += t.weight;
    }
    let bins: Vec<DistanceBin> = sums
        .iter()
        .enumerate()
        .map(|(i, &(s, w))| DistanceBin {
            lo_km: if i == 0 { 0.0 } else { bin_edges_km[i - 1] },
            hi_km: bin_edges_km.get(i).copied(),
            delay_s_per_km: (w > 0.0).then(|| s / w),
            weight: w,
        })
        .collect();
    let present: Vec<(f64, f64)> = bins
        .iter()
        .filter_map(|b| b.delay_s_per_km.map(|v| (v.max(0.0), 1.0)))
        .collect();
    let gini = if present.is_empty() {
        None
    } else {
        Some(gini(&present)?)
    };
    Ok(RelativeDelay {
        bins,
        gini,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(
        origin: &str,
        depart: f64,
        arrive: Option<f64>,
        km: f64,
        ff: f64,
        w: f64,
    ) -> TripRecord {
        TripRecord {
            origin: origin.into(),
            destination: if arrive.is_some() {
                "X".into()
            } else {
                String::new()
            },
            depart_s: depart,
            arrive_s: arrive,
            distance_km: km,
            freeflow_time_s: ff,
            weight: w,
        }
    }

    fn map(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Direct double sum, the definition itself.
    fn gini_pairwise(values: &[(f64, f64)]) -> f64 {
        let w: f64 = values.iter().map(|v| v.1).sum();
        let mu = values.iter().map(|v| v.0 * v.1).sum::<f64>() / w;
        if mu == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for a in values {
            for b in values {
                s += a.1 * b.1 * (a.0 - b.0).abs();
            }
        }
        s / (2.0 * w * w * mu)
    }

    #[test]
    fn free_flow_trip() {
        let r = efficiency(
            &[trip("A", 0.0, Some(600.0), 10.0, 600.0, 1.0)],
            (0.0, 3600.0),
        );
        assert_eq!(r.total_delay_h, 0.0);
        assert_eq!(r.avg_speed_kmh, Some(60.0));
        assert_eq!(r.arrival_rate, Some(100.0));
    }

    #[test]
    fn three_trip_totals() {
        let trips = [
            trip("A", 100.0, Some(1000.0), 12.0, 720.0, 2.0),
            trip("B", 200.0, Some(500.0), 4.0, 240.0, 1.0),
            trip("A", 300.0, None, 0.0, 0.0, 0.5),
        ];
        let r = efficiency(&trips, (0.0, 3600.0));
        assert_eq!(r.departed, 3.5);
        assert_eq!(r.arrived, 3.0);
        assert_eq!(r.unfinished, 0.5);
        // travel: 2*900 + 300 = 2100 s; delay: 2*180 + 60 = 420 s; distance 28 km
        assert!((r.total_travel_time_h - 2100.0 / 3600.0).abs() < 1e-12);
        assert!((r.total_delay_h - 420.0 / 3600.0).abs() < 1e-12);
        assert_eq!(r.total_distance_km, 28.0);
        assert!((r.avg_speed_kmh.unwrap() - 28.0 / (2100.0 / 3600.0)).abs() < 1e-9);
        assert!((r.avg_delay_s_per_veh.unwrap() - 140.0).abs() < 1e-12);
        assert!((r.arrival_rate.unwrap() - 300.0 / 3.5).abs() < 1e-12);
    }

    #[test]
    fn window_filters_on_departure() {
        let trips = [
            trip("A", 100.0, Some(9000.0), 1.0, 10.0, 1.0),
            trip("A", 4000.0, Some(4100.0), 1.0, 10.0, 1.0),
        ];
        let r = efficiency(&trips, (0.0, 3600.0));
        assert_eq!(r.departed, 1.0);
        assert_eq!(r.arrived, 1.0);
    }

    #[test]
    fn empty_trip_set_marks_ratios_undefined() {
        let r = efficiency(&[], (0.0, 1.0));
        assert_eq!(r.departed, 0.0);
        assert_eq!(r.arrival_rate, None);
        assert_eq!(r.avg_speed_kmh, None);
        assert_eq!(r.avg_delay_s_per_veh, None);
    }

    #[test]
    fn per_ramp_delay_and_threshold() {
        let ramps = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let trips = [
            trip("A", 0.0, Some(400.0), 5.0, 300.0, 1.0),
            trip("A", 0.0, Some(500.0), 5.0, 300.0, 1.0),
            trip("B", 0.0, Some(300.0), 5.0, 300.0, 0.1),
            trip("C", 0.0, Some(300.0), 5.0, 300.0, 4.0),
        ];
        let d = per_ramp_avg_delay(&trips, (0.0, 10.0), 0.5, &ramps);
        assert_eq!(d, map(&[("A", 150.0), ("C", 0.0)]));
    }

    #[test]
    fn gini_basics() {
        assert_eq!(gini(&[(5.0, 1.0); 4]).unwrap(), 0.0);
        for x in [1.0, 7.5, 1e6] {
            assert!((gini(&[(0.0, 1.0), (x, 1.0)]).unwrap() - 0.5).abs() < 1e-15);
        }
        assert_eq!(gini(&[(0.0, 1.0), (0.0, 2.0)]).unwrap(), 0.0);
        assert!(gini(&[(-1.0, 1.0)]).is_err());
        assert!(gini(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn gini_matches_pairwise_definition() {
        let v = [(3.0, 1.0), (1.0, 0.5), (7.0, 2.0), (3.0, 1.5), (0.0, 1.0)];
        assert!((gini(&v).unwrap() - gini_pairwise(&v)).abs() < 1e-14);
    }

    #[test]
    fn fairness_notions() {
        let d = fairness(
            &map(&[("A", 100.0), ("B", 300.0)]),
            &map(&[("A", 3.0), ("B", 1.0)]),
        )
        .unwrap();
        assert_eq!(d.aristotelian, 150.0);
        assert_eq!(d.harsanyian, 200.0);
        assert_eq!(d.rawlsian_max, 300.0);
        let u = fairness(
            &map(&[("A", 100.0), ("B", 300.0)]),
            &map(&[("A", 2.0), ("B", 2.0)]),
        )
        .unwrap();
        assert_eq!(u.aristotelian, u.harsanyian);
        assert!(fairness(&IndexMap::new(), &IndexMap::new()).is_err());
        assert!(fairness(&map(&[("A", 1.0)]), &map(&[("B", 1.0)])).is_err());
    }

    #[test]
    fn relative_delay_bins() {
        let trips = [
            trip("A", 0.0, Some(700.0), 2.0, 500.0, 1.0), // 100 s/km, bin [0,5)
            trip("A", 0.0, Some(900.0), 4.0, 500.0, 3.0), // 100 s/km, bin [0,5)
            trip("A", 0.0, Some(1600.0), 10.0, 1000.0, 1.0), // 60 s/km, bin [5,20)
            trip("A", 0.0, Some(1300.0), 12.0, 1000.0, 1.0), // 25 s/km, bin [5,20)
            trip("A", 0.0, Some(10.0), 0.0, 0.0, 2.0),
            trip("A", 0.0, None, 0.0, 0.0, 1.0),
        ];
        let r = relative_delay_by_distance(&trips, &[5.0, 20.0]).unwrap();
        assert_eq!(r.bins.len(), 3);
        assert_eq!(r.bins[0].delay_s_per_km, Some(100.0));
        assert_eq!(r.bins[1].delay_s_per_km, Some(42.5));
        assert_eq!(r.bins[2].delay_s_per_km, None);
        assert_eq!(r.bins[2].hi_km, None);
        assert_eq!(r.rejected, 2.0);
        // two populated bins, 100 and 42.5: 2 * 57.5 / (2 * 2^2 * 71.25)
        assert!((r.gini.unwrap() - 57.5 / 285.0).abs() < 1e-12);
        assert!(relative_delay_by_distance(&trips, &[5.0, 5.0]).is_err());
    }

    #[test]
    fn equal_relative_delay_has_zero_gini() {
        let trips = [
            trip("A", 0.0, Some(200.0), 2.0, 100.0, 1.0),
            trip("A", 0.0, Some(1500.0), 10.0, 1000.0, 1.0),
        ];
        let r = relative_delay_by_distance(&trips, &[5.0]).unwrap();
        assert_eq!(r.bins[0].delay_s_per_km, r.bins[1].delay_s_per_km);
        assert_eq!(r.gini, Some(0.0));
    }
}

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{
    Alinea, CeqAlinea, Controller, ControllerConfig, Metaline, MetalineConfig, NoControl, NormMode,
};
use crate::dynamics::{Cell, DemandProfile, PlantConfig, RunSettings};
use crate::error::{Error, Result};
use crate::network::{FreewayNetwork, RampSpec, Topology};

use super::experiment::MetricSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampEntry {
    pub id: String,
    pub cell: usize,
    #[serde(default)]
    pub detector_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneOverride {
    pub cell: usize,
    pub lanes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub topology: Topology,
    pub n_cells: usize,
    pub cell_length_m: f64,
    pub lanes: u32,
    pub free_speed_kmh: f64,
    pub capacity_vphpl: f64,
    pub jam_density_vpkpl: f64,
    #[serde(default)]
    pub lane_overrides: Vec<LaneOverride>,
    #[serde(default)]
    pub on_ramps: Vec<RampEntry>,
    #[serde(default)]
    pub off_ramps: Vec<RampEntry>,
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    pub piece_starts_s: Vec<f64>,
    /// Half-width of the multiplicative noise band drawn per (origin, piece).
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub inflow_vph: IndexMap<String, Vec<f64>>,
    #[serde(default)]
    pub splits: IndexMap<String, f64>,
}

fn default_saturation() -> f64 {
    7200.0
}

fn default_cohort_bin() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt_s: f64,
    pub warmup_s: f64,
    /// Measured time after the warmup.
    pub horizon_s: f64,
    pub cycle_s: f64,
    /// Absolute departure-time window for metrics; defaults to the whole
    /// post-warmup horizon.
    #[serde(default)]
    pub eval_window_s: Option<[f64; 2]>,
    #[serde(default)]
    pub capacity_drop: f64,
    #[serde(default = "default_saturation")]
    pub ramp_saturation_vph: f64,
    #[serde(default)]
    pub merge_priority: Option<f64>,
    #[serde(default)]
    pub max_queue_veh: Option<f64>,
    #[serde(default = "default_cohort_bin")]
    pub cohort_bin_s: f64,
    /// Ramps releasing fewer vehicles than this in the window are left out
    /// of the fairness statistics.
    #[serde(default)]
    pub min_ramp_demand_veh: f64,
    #[serde(default)]
    pub distance_bins_km: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    NoControl,
    Alinea,
    Metaline,
    CeqAlinea,
}

/// One named `[controller.<name>]` block. Unset gains fall back to
/// [`ControllerConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub o_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_mode: Option<NormMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_s_per_veh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    /// Diagonal METALINE gain on each ramp's detector-cell occupancy change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    /// Diagonal METALINE gain on each ramp's occupancy deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    /// Full METALINE matrices; when given they replace the diagonal ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_points: Option<Vec<f64>>,
}

impl ControllerSpec {
    pub fn new(kind: ControllerKind) -> Self {
        Self {
            kind,
            k_gain: None,
            o_hat: None,
            k_c: None,
            m: None,
            norm_mode: None,
            gamma_s_per_veh: None,
            q_min: None,
            q_max: None,
            r_min: None,
            r_max: None,
            k1: None,
            k2: None,
            k1_matrix: None,
            k2_matrix: None,
            set_points: None,
        }
    }

    pub fn config(&self, cycle_s: f64) -> ControllerConfig {
        let d = ControllerConfig::default();
        ControllerConfig {
            k_gain: self.k_gain.unwrap_or(d.k_gain),
            o_hat: self.o_hat.unwrap_or(d.o_hat),
            k_c: self.k_c.unwrap_or(d.k_c),
            m: self.m.unwrap_or(d.m),
            norm_mode: self.norm_mode.unwrap_or(d.norm_mode),
            gamma_s_per_veh: self.gamma_s_per_veh.unwrap_or(d.gamma_s_per_veh),
            cycle_s,
            q_min: self.q_min.unwrap_or(d.q_min),
            q_max: self.q_max.unwrap_or(d.q_max),
            r_min: self.r_min.unwrap_or(d.r_min),
            r_max: self.r_max.unwrap_or(d.r_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaxThroughput,
    MinTotalDelay,
}

/// Cartesian grid over controller parameters. Empty lists keep the base
/// block's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Name of the controller block the grid varies.
    pub controller: String,
    pub objective: Objective,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub k_gain: Vec<f64>,
    #[serde(default)]
    pub o_hat: Vec<f64>,
    #[serde(default)]
    pub k_c: Vec<f64>,
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub norm_mode: Vec<NormMode>,
    #[serde(default)]
    pub k1: Vec<f64>,
    #[serde(default)]
    pub k2: Vec<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_budget() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Largest number of simulation runs a grid search may request.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            budget: default_budget(),
            grid: None,
        }
    }
}

/// A complete scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub network: NetworkSection,
    pub demand: DemandSection,
    pub simulation: SimulationSection,
    /// Named controller blocks, in document order.
    pub controller: IndexMap<String, ControllerSpec>,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

/// Replaces (or inserts) the value at a dotted key path. The value is parsed
/// as a TOML value and taken as a bare string if that fails.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Scenario(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed table holds `v`"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Scenario(format!(
            "override key `{key}` is malformed"
        )));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Scenario(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl Scenario {
    /// Parses a document, applies overrides and validates the result.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Scenario(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let scenario: Scenario = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Scenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml_str(&text, overrides)
            .map_err(|e| Error::Scenario(format!("{}: {e}", path.as_ref().display())))
    }

    /// Hex SHA-256 of the canonical serialisation (overrides included).
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("scenario serialises");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn eval_window(&self) -> (f64, f64) {
        let s = &self.simulation;
        match s.eval_window_s {
            Some([a, b]) => (a, b),
            None => (s.warmup_s, s.warmup_s + s.horizon_s),
        }
    }

    pub fn metric_settings(&self, net: &FreewayNetwork) -> MetricSettings {
        let (a, b) = self.eval_window();
        MetricSettings {
            eval_window_s: [a, b],
            min_ramp_demand_veh: self.simulation.min_ramp_demand_veh,
            distance_bins_km: self.simulation.distance_bins_km.clone(),
            on_ramps: net.on_ramps().map(|r| r.id.clone()).collect(),
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            warmup_s: self.simulation.warmup_s,
            horizon_s: self.simulation.horizon_s,
            cycle_s: self.simulation.cycle_s,
        }
    }

    pub fn plant_config(&self) -> PlantConfig {
        let s = &self.simulation;
        PlantConfig {
            dt_s: s.dt_s,
            capacity_drop: s.capacity_drop,
            ramp_saturation_vph: s.ramp_saturation_vph,
            merge_priority: s.merge_priority,
            max_queue_veh: s.max_queue_veh,
            cohort_bin_s: s.cohort_bin_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simulation;
        let bad =
            |key: &str, msg: String| Err(Error::Scenario(format!("[simulation] {key}: {msg}")));
        if !(s.dt_s > 0.0) {
            return bad("dt_s", format!("must be positive, got {}", s.dt_s));
        }
        if !(s.warmup_s >= 0.0) {
            return bad(
                "warmup_s",
                format!("must be non-negative, got {}", s.warmup_s),
            );
        }
        if !(s.horizon_s > 0.0) {
            return bad(
                "horizon_s",
                format!("must be positive, got {}", s.horizon_s),
            );
        }
        let per_cycle = s.cycle_s / s.dt_s;
        if !(per_cycle >= 1.0 && per_cycle.fract() == 0.0) {
            return bad(
                "cycle_s",
                format!(
                    "{} is not an integer multiple of dt_s {}",
                    s.cycle_s, s.dt_s
                ),
            );
        }
        if ((s.warmup_s + s.horizon_s) / s.cycle_s).fract() != 0.0 {
            return bad(
                "horizon_s",
                "warmup_s + horizon_s must be a whole number of cycles".into(),
            );
        }
        let (a, b) = self.eval_window();
        if !(s.warmup_s <= a && a < b && b <= s.warmup_s + s.horizon_s) {
            return bad(
                "eval_window_s",
                format!("[{a}, {b}] must be a non-empty interval inside the post-warmup horizon"),
            );
        }
        if self.controller.is_empty() {
            return Err(Error::Scenario(
                "[controller] needs at least one named block".into(),
            ));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::Scenario(
                "[experiment] seeds: must not be empty".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.demand.noise) {
            return Err(Error::Scenario(format!(
                "[demand] noise: must lie in [0, 1), got {}",
                self.demand.noise
            )));
        }
        if let Some(g) = &self.experiment.grid {
            if !self.controller.contains_key(&g.controller) {
                return Err(Error::Scenario(format!(
                    "[experiment.grid] controller: no block named `{}`",
                    g.controller
                )));
            }
            if g.seeds.is_empty() {
                return Err(Error::Scenario(
                    "[experiment.grid] seeds: must not be empty".into(),
                ));
            }
        }
        // surfaces geometry and plant errors at load time
        let net = self.network()?;
        crate::dynamics::Plant::new(&net, self.demand_profile()?, self.plant_config())?;
        for name in self.controller.keys() {
            self.controller(&net, name)?;
        }
        Ok(())
    }

    pub fn network(&self) -> Result<FreewayNetwork> {
        let n = &self.network;
        let base = Cell::new(
            n.cell_length_m,
            n.lanes,
            n.free_speed_kmh,
            n.capacity_vphpl,
            n.jam_density_vpkpl,
        );
        let mut cells = vec![base; n.n_cells];
        for o in &n.lane_overrides {
            let cell = cells.get_mut(o.cell).ok_or_else(|| {
                Error::Scenario(format!(
                    "[network] lane_overrides: cell {} does not exist",
                    o.cell
                ))
            })?;
            *cell = base.with_lanes(o.lanes);
        }
        let ramps = n
            .on_ramps
            .iter()
            .map(|r| RampSpec::on_ramp(&r.id, r.cell).with_detector_offset(r.detector_offset))
            .chain(
                n.off_ramps
                    .iter()
                    .map(|r| RampSpec::off_ramp(&r.id, r.cell)),
            )
            .collect();
        FreewayNetwork::new(n.topology, cells, ramps)
    }

    /// Nominal demand, before seed perturbation.
    pub fn demand_profile(&self) -> Result<DemandProfile> {
        let d = &self.demand;
        DemandProfile::new(
            d.piece_starts_s.clone(),
            d.inflow_vph.clone(),
            d.splits.clone(),
        )
    }

    pub fn seeded_demand(&self, seed: u64) -> Result<DemandProfile> {
        self.demand_profile()?.perturbed(seed, self.demand.noise)
    }

    pub fn controller_names(&self) -> Vec<String> {
        self.controller.keys().cloned().collect()
    }

    pub fn controller_spec(&self, name: &str) -> Result<&ControllerSpec> {
        self.controller.get(name).ok_or_else(|| {
            Error::Scenario(format!(
                "unknown controller `{name}`; valid names: {}",
                self.controller_names().join(", ")
            ))
        })
    }

    /// Instantiates the named controller block on `net`.
    pub fn controller(&self, net: &FreewayNetwork, name: &str) -> Result<Box<dyn Controller>> {
        build_controller(net, self.controller_spec(name)?, self.simulation.cycle_s)
            .map_err(|e| Error::Scenario(format!("[controller.{name}] {e}")))
    }
}

pub fn build_controller(
    net: &FreewayNetwork,
    spec: &ControllerSpec,
    cycle_s: f64,
) -> Result<Box<dyn Controller>> {
    let cfg = spec.config(cycle_s);
    Ok(match spec.kind {
        ControllerKind::NoControl => {
            cfg.validate()?;
            Box::new(NoControl::new(net, cfg))
        }
        ControllerKind::Alinea => Box::new(Alinea::new(net, cfg)?),
        ControllerKind::CeqAlinea => Box::new(CeqAlinea::new(net, cfg)?),
        ControllerKind::Metaline => {
            let mut m = MetalineConfig::diagonal(
                net,
                cfg,
                spec.k1.unwrap_or(0.0),
                spec.k2.unwrap_or(cfg.k_gain),
            );
            if let Some(k1) = &spec.k1_matrix {
                m.k1 = k1.clone();
            }
            if let Some(k2) = &spec.k2_matrix {
                m.k2 = k2.clone();
            }
            if let Some(sp) = &spec.set_points {
                m.set_points = sp.clone();
            }
            Box::new(Metaline::new(net, m)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
[network]
topology = "ring"
n_cells = 8
cell_length_m = 500
lanes = 2
free_speed_kmh = 90
capacity_vphpl = 2000
jam_density_vpkpl = 150
on_ramps = [{ id = "a", cell = 1 }, { id = "b", cell = 5 }]
off_ramps = [{ id = "x", cell = 3 }]

[demand]
piece_starts_s = [0]
inflow_vph = { a = [600], b = [600] }
splits = { x = 0.3 }

[simulation]
dt_s = 20
warmup_s = 120
horizon_s = 600
cycle_s = 60

[controller.alinea]
kind = "alinea"
"#;

    #[test]
    fn parses_with_defaults() {
        let s = Scenario::from_toml_str(MINI, &[]).unwrap();
        assert_eq!(s.demand.noise, 0.1);
        assert_eq!(s.eval_window(), (120.0, 720.0));
        assert_eq!(s.experiment.seeds, vec![1]);
        let cfg = s.controller_spec("alinea").unwrap().config(60.0);
        assert_eq!(cfg, ControllerConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINI.replace("cycle_s = 60", "cycle_s = 60\ncycle_len = 3");
        let e = Scenario::from_toml_str(&text, &[]).unwrap_err().to_string();
        assert!(e.contains("cycle_len"), "{e}");
    }

    #[test]
    fn overrides_replace_values() {
        let s = Scenario::from_toml_str(
            MINI,
            &[
                "controller.alinea.k_gain=3500".into(),
                "network.topology=line".into(),
            ],
        )
        .unwrap();
        assert_eq!(s.controller["alinea"].k_gain, Some(3500.0));
        assert_eq!(s.network.topology, Topology::Line);
        let bad = Scenario::from_toml_str(MINI, &["simulation.bogus=1".into()]).unwrap_err();
        assert!(bad.to_string().contains("bogus"));
        assert!(Scenario::from_toml_str(MINI, &["no_equals".into()]).is_err());
    }

    #[test]
    fn cycle_must_divide() {
        let e = Scenario::from_toml_str(MINI, &["simulation.cycle_s=50".into()]).unwrap_err();
        assert!(e.to_string().contains("cycle_s"));
    }

    #[test]
    fn unknown_controller_lists_valid_names() {
        let s = Scenario::from_toml_str(MINI, &[]).unwrap();
        let e = s.controller_spec("nope").unwrap_err().to_string();
        assert!(e.contains("alinea"));
    }

    #[test]
    fn digest_tracks_content() {
        let a = Scenario::from_toml_str(MINI, &[]).unwrap();
        let b = Scenario::from_toml_str(MINI, &["demand.noise=0.2".into()]).unwrap();
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}

//! Scenario files: a JSON document describing the network, timing and
//! weights, plus two CSV profile tables (`time_min,<zone ids...>`) for zone
//! load and available PV.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coordinator::Timeline;
use crate::formation::FormationWeights;
use crate::netmodel::{EdgeId, GridFormingResource, LateralPolicy, SwitchEdge, ZoneGraph, ZoneId, ZoneNode};

pub const SCHEMA_VERSION: u32 = 1;
/// Name accepted by [`open_scenario`] for the bundled two-feeder case.
pub const BUILTIN_TWO_FEEDER: &str = "builtin:two-feeder";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    /// Standard deviation of the multiplicative forecast error; 0 means the
    /// forecast equals the realized profile.
    #[serde(default)]
    pub noise_sigma: f64,
    /// How 5-minute values collapse into one formation-step snapshot.
    #[serde(default)]
    pub aggregation: Aggregation,
}

/// An edge outage over `[start_min, end_min)`; open-ended when `end_min` is
/// absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultWindow {
    pub edge_id: EdgeId,
    #[serde(default)]
    pub start_min: u32,
    #[serde(default)]
    pub end_min: Option<u32>,
}

impl FaultWindow {
    pub fn active_at(&self, t_min: u32) -> bool {
        t_min >= self.start_min && self.end_min.is_none_or(|e| t_min < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<ZoneNode>,
    pub edges: Vec<SwitchEdge>,
    pub resources: Vec<GridFormingResource>,
    #[serde(default)]
    pub lateral_policies: Vec<LateralPolicy>,
    #[serde(default)]
    pub faults: Vec<FaultWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRefs {
    /// Paths relative to the scenario file.
    pub load: String,
    pub pv: String,
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub network: NetworkSpec,
    pub profiles: ProfileRefs,
    #[serde(default)]
    pub weights: FormationWeights,
    #[serde(default)]
    pub timeline: Timeline,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Per-zone series on a uniform grid; `values[step][zone]` with zones in
/// graph order.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub step_min: u32,
    pub zone_ids: Vec<ZoneId>,
    pub values: Vec<Vec<f64>>,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zone_series(&self, zone_index: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |row| row[zone_index])
    }

    /// Sum over zones at each step, restricted to `zones` (graph indices).
    pub fn total(&self, zones: &[usize]) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| zones.iter().map(|&i| row[i]).sum())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["time_min".to_string()];
        header.extend(self.zone_ids.iter().map(|z| z.to_string()));
        w.write_record(&header).expect("in-memory write");
        for (t, row) in self.values.iter().enumerate() {
            let mut rec = vec![(t as u64 * self.step_min as u64).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }

    /// Parses a profile table and reorders its columns to `zone_order`.
    pub fn from_csv(
        text: &str,
        zone_order: &[ZoneId],
        step_min: u32,
        pointer: &str,
    ) -> Result<Profile, ValidationError> {
        let err = |path: String, msg: String| ValidationError { path, message: msg };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| err(pointer.into(), e.to_string()))?.clone();
        if headers.get(0) != Some("time_min") {
            return Err(err(pointer.into(), "first column must be time_min".into()));
        }
        let mut col_of: BTreeMap<ZoneId, usize> = BTreeMap::new();
        for (c, h) in headers.iter().enumerate().skip(1) {
            let z: ZoneId = h
                .parse()
                .map_err(|_| err(format!("{pointer}/columns/{c}"), format!("`{h}` is not a zone id")))?;
            if col_of.insert(z, c).is_some() {
                return Err(err(format!("{pointer}/columns/{c}"), format!("zone {z} appears twice")));
            }
        }
        for z in zone_order {
            if !col_of.contains_key(z) {
                return Err(err(pointer.into(), format!("missing column for zone {z}")));
            }
        }
        if let Some(z) = col_of.keys().find(|z| !zone_order.contains(z)) {
            return Err(err(pointer.into(), format!("column for unknown zone {z}")));
        }
        let mut values = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(format!("{pointer}/rows/{r}"), e.to_string()))?;
            let t: u64 = rec
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| err(format!("{pointer}/rows/{r}/time_min"), "not an integer".into()))?;
            if t != r as u64 * step_min as u64 {
                return Err(err(
                    format!("{pointer}/rows/{r}/time_min"),
                    format!(
                        "expected {} on a {step_min}-minute grid, found {t}",
                        r as u64 * step_min as u64
                    ),
                ));
            }
            let mut row = Vec::with_capacity(zone_order.len());
            for z in zone_order {
                let c = col_of[z];
                let v: f64 = rec
                    .get(c)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| err(format!("{pointer}/rows/{r}/{z}"), "not a number".into()))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(err(
                        format!("{pointer}/rows/{r}/{z}"),
                        "must be finite and nonnegative".into(),
                    ));
                }
                row.push(v);
            }
            values.push(row);
        }
        Ok(Profile {
            step_min,
            zone_ids: zone_order.to_vec(),
            values,
        })
    }
}

/// A validated scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Network with no faults applied; see [`Scenario::graph_at`].
    pub graph: ZoneGraph,
    pub faults: Vec<FaultWindow>,
    pub load: Profile,
    pub pv: Profile,
    pub weights: FormationWeights,
    pub timeline: Timeline,
    pub forecast: ForecastConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ValidationError {
    /// JSON-pointer-style location of the offending field.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {0}")]
    Validation(#[from] ValidationError),
}

impl ScenarioError {
    pub fn is_validation(&self) -> bool {
        matches!(self, ScenarioError::Validation(_) | ScenarioError::Parse { .. })
    }
}

fn invalid(path: impl Into<String>, message: impl fmt::Display) -> ValidationError {
    ValidationError {
        path: path.into(),
        message: message.to_string(),
    }
}

fn check_network(net: &NetworkSpec) -> Result<(), ValidationError> {
    let mut zones = BTreeSet::new();
    for (i, n) in net.nodes.iter().enumerate() {
        let p = format!("/network/nodes/{i}");
        if !zones.insert(n.id) {
            return Err(invalid(format!("{p}/id"), format!("duplicate zone id {}", n.id)));
        }
        if !(n.peak_load_kw.is_finite() && n.peak_load_kw >= 0.0) {
            return Err(invalid(format!("{p}/peak_load_kw"), "must be finite and nonnegative"));
        }
    }
    let mut edge_ids = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for (i, e) in net.edges.iter().enumerate() {
        let p = format!("/network/edges/{i}");
        if !edge_ids.insert(e.id) {
            return Err(invalid(format!("{p}/id"), format!("duplicate edge id {}", e.id)));
        }
        for (field, z) in [("from", e.from), ("to", e.to)] {
            if !zones.contains(&z) {
                return Err(invalid(format!("{p}/{field}"), format!("unknown zone {z}")));
            }
        }
        if e.from == e.to {
            return Err(invalid(format!("{p}/to"), "edge endpoints must differ"));
        }
        if !pairs.insert((e.from.min(e.to), e.from.max(e.to))) {
            return Err(invalid(p, "a second edge joins the same zones"));
        }
        if !(e.flow_limit_kw.is_finite() && e.flow_limit_kw > 0.0) {
            return Err(invalid(format!("{p}/flow_limit_kw"), "must be positive"));
        }
    }
    for (i, r) in net.resources.iter().enumerate() {
        let p = format!("/network/resources/{i}");
        if !zones.contains(&r.node_id) {
            return Err(invalid(format!("{p}/node_id"), format!("unknown zone {}", r.node_id)));
        }
        let fields = [
            ("battery_power_kw", r.battery_power_kw),
            ("battery_energy_kwh", r.battery_energy_kwh),
            ("diesel_power_kw", r.diesel_power_kw),
            ("diesel_fuel_kwh", r.diesel_fuel_kwh),
        ];
        for (f, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{p}/{f}"), "must be finite and nonnegative"));
            }
        }
        if !(0.0..=1.0).contains(&r.battery_soc0) {
            return Err(invalid(format!("{p}/battery_soc0"), "must lie in [0, 1]"));
        }
        if !(r.battery_efficiency > 0.0 && r.battery_efficiency <= 1.0) {
            return Err(invalid(format!("{p}/battery_efficiency"), "must lie in (0, 1]"));
        }
    }
    for (i, f) in net.faults.iter().enumerate() {
        let p = format!("/network/faults/{i}");
        if !edge_ids.contains(&f.edge_id) {
            return Err(invalid(format!("{p}/edge_id"), format!("unknown edge {}", f.edge_id)));
        }
        if f.end_min.is_some_and(|e| e <= f.start_min) {
            return Err(invalid(format!("{p}/end_min"), "must come after start_min"));
        }
    }
    for (i, pol) in net.lateral_policies.iter().enumerate() {
        let p = format!("/network/lateral_policies/{i}");
        if !edge_ids.contains(&pol.edge_id) {
            return Err(invalid(format!("{p}/edge_id"), format!("unknown edge {}", pol.edge_id)));
        }
    }
    Ok(())
}

fn network_error_path(e: &crate::netmodel::NetworkError) -> &'static str {
    use crate::netmodel::NetworkError as N;
    match e {
        N::DuplicateZone(_) | N::NegativeLoad(_) | N::GfmMismatch(..) => "/network/nodes",
        N::DuplicateEdge(_) | N::UnknownZone { .. } | N::SelfLoop(_) | N::ParallelEdges(..) | N::BadFlowLimit(_) => {
            "/network/edges"
        }
        N::BadResource(..) => "/network/resources",
        N::UnknownFault(_) => "/network/faults",
        N::BadPolicy { .. } => "/network/lateral_policies",
    }
}

impl Scenario {
    /// Validates a parsed document against already-loaded profile tables.
    pub fn from_parts(file: ScenarioFile, load: Profile, pv: Profile) -> Result<Scenario, ValidationError> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "/schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
            ));
        }
        check_network(&file.network)?;
        file.timeline.validate().map_err(|m| invalid("/timeline", m))?;
        file.weights.validate().map_err(|e| invalid("/weights", e))?;
        if !(file.forecast.noise_sigma.is_finite() && file.forecast.noise_sigma >= 0.0) {
            return Err(invalid("/forecast/noise_sigma", "must be finite and nonnegative"));
        }
        let net = file.network;
        let graph = ZoneGraph::new(
            net.nodes,
            net.edges,
            net.resources,
            BTreeSet::new(),
            net.lateral_policies,
        )
        .map_err(|e| invalid(network_error_path(&e), &e))?;
        if graph.resources().is_empty() {
            return Err(invalid(
                "/network/resources",
                "at least one grid-forming resource is required",
            ));
        }
        let order: Vec<ZoneId> = graph.nodes().iter().map(|n| n.id).collect();
        let steps = file.timeline.steps();
        for (name, prof) in [("load", &load), ("pv", &pv)] {
            let p = format!("/profiles/{name}");
            if prof.step_min != file.timeline.dispatch_step_min {
                return Err(invalid(p, "profile resolution must equal the dispatch step"));
            }
            if prof.zone_ids != order {
                return Err(invalid(p, "profile columns do not match the zones"));
            }
            if prof.len() < steps {
                return Err(invalid(
                    p,
                    format!(
                        "covers {} minutes, the run needs {}",
                        prof.len() as u64 * prof.step_min as u64,
                        file.timeline.total_duration_min
                    ),
                ));
            }
        }
        Ok(Scenario {
            name: file.name,
            graph,
            faults: net.faults,
            load,
            pv,
            weights: file.weights,
            timeline: file.timeline,
            forecast: file.forecast,
            seed: file.seed,
        })
    }

    /// Graph with the faults active at `t_min` applied.
    pub fn graph_at(&self, t_min: u32) -> ZoneGraph {
        let active: BTreeSet<EdgeId> = self
            .faults
            .iter()
            .filter(|f| f.active_at(t_min))
            .map(|f| f.edge_id)
            .collect();
        self.graph.with_faults(active).expect("fault ids validated at load")
    }

    pub fn to_file(&self, load_ref: &str, pv_ref: &str) -> ScenarioFile {
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            name: self.name.clone(),
            network: NetworkSpec {
                nodes: self.graph.nodes().to_vec(),
                edges: self.graph.edges().to_vec(),
                resources: self.graph.resources().to_vec(),
                lateral_policies: self.graph.lateral_policies().to_vec(),
                faults: self.faults.clone(),
            },
            profiles: ProfileRefs {
                load: load_ref.into(),
                pv: pv_ref.into(),
            },
            weights: self.weights.clone(),
            timeline: self.timeline.clone(),
            forecast: self.forecast.clone(),
            seed: self.seed,
        }
    }

    /// Writes `scenario.json`, `load.csv` and `pv.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, ScenarioError> {
        fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
            path: dir.into(),
            source,
        })?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|source| ScenarioError::Io { path, source })
        };
        write("load.csv", self.load.to_csv())?;
        write("pv.csv", self.pv.to_csv())?;
        let doc = serde_json::to_string_pretty(&self.to_file("load.csv", "pv.csv")).expect("scenario serializes");
        write("scenario.json", doc + "\n")?;
        Ok(dir.join("scenario.json"))
    }

    /// Stable digest of the scenario contents; runs that disagree on it
    /// cannot be compared.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.to_file("load", "pv")).expect("scenario serializes"));
        h.update(self.load.to_csv());
        h.update(self.pv.to_csv());
        let digest = h.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    /// Forecast copies of the load and PV profiles. With zero noise these
    /// equal the realized profiles; otherwise each value is scaled by
    /// `1 + sigma * N(0, 1)` (clamped at zero) from a generator seeded with
    /// `seed`.
    pub fn forecasts(&self, seed: u64) -> (Profile, Profile) {
        let sigma = self.forecast.noise_sigma;
        if sigma == 0.0 {
            return (self.load.clone(), self.pv.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        let mut perturb = |p: &Profile| {
            let mut q = p.clone();
            for row in &mut q.values {
                for v in row.iter_mut() {
                    *v = (*v * (1.0 + normal.sample(&mut rng))).max(0.0);
                }
            }
            q
        };
        let load = perturb(&self.load);
        let pv = perturb(&self.pv);
        (load, pv)
    }
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.into(),
        source,
    })
}

/// Reads and validates a scenario document and its profile tables.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = read(path)?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.into(),
        message: e.to_string(),
    })?;
    file.timeline.validate().map_err(|m| invalid("/timeline", m))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut order: Vec<ZoneId> = file.network.nodes.iter().map(|n| n.id).collect();
    order.sort_unstable();
    let step = file.timeline.dispatch_step_min;
    let load = Profile::from_csv(&read(&base.join(&file.profiles.load))?, &order, step, "/profiles/load")?;
    let pv = Profile::from_csv(&read(&base.join(&file.profiles.pv))?, &order, step, "/profiles/pv")?;
    Ok(Scenario::from_parts(file, load, pv)?)
}

/// Like [`load_scenario`] but also accepts [`BUILTIN_TWO_FEEDER`].
pub fn open_scenario(source: &str) -> Result<Scenario, ScenarioError> {
    if source == BUILTIN_TWO_FEEDER {
        return Ok(fixture_two_feeder());
    }
    load_scenario(Path::new(source))
}

// ---------------------------------------------------------------------------
// Bundled two-feeder case

const FEEDER1_SHARE: [(ZoneId, f64); 5] = [(1, 0.14), (2, 0.22), (3, 0.24), (4, 0.20), (5, 0.20)];
const FEEDER2_SHARE: [(ZoneId, f64); 5] = [(6, 0.22), (7, 0.14), (8, 0.22), (9, 0.20), (10, 0.22)];
const CRITICAL: [ZoneId; 6] = [2, 3, 4, 7, 9, 10];
/// Feeder peak load per day, kW.
const FEEDER_PEAK_KW: [[f64; 2]; 2] = [[3500.0, 3000.0], [3000.0, 2000.0]];
const PV_NAMEPLATE_KW: f64 = 4000.0;
const PV_DAY_FACTOR: [f64; 2] = [1.0, 0.9];
const LINE_LIMIT_KW: f64 = 6000.0;
const TIE_LIMIT_KW: f64 = 2000.0;
pub const FIXTURE_FUEL_KWH: [f64; 2] = [28_000.0, 22_000.0];

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    (-((h - centre) / width).powi(2)).exp()
}

/// Unnormalized double-peak daily load shape.
fn load_shape(feeder: usize, h: f64) -> f64 {
    match feeder {
        0 => 0.45 + 0.30 * bump(h, 8.5, 2.0) + 0.55 * bump(h, 19.5, 2.5),
        _ => 0.50 + 0.35 * bump(h, 9.0, 2.5) + 0.50 * bump(h, 20.0, 2.0),
    }
}

/// Clear-sky PV availability as a fraction of nameplate, zero at night.
pub fn pv_shape(h: f64) -> f64 {
    if (6.0..=18.0).contains(&h) {
        (std::f64::consts::PI * (h - 6.0) / 12.0).sin().max(0.0).powf(1.3)
    } else {
        0.0
    }
}

fn fixture_nodes() -> Vec<ZoneNode> {
    FEEDER1_SHARE
        .iter()
        .map(|&(z, s)| (z, 1u32, s * FEEDER_PEAK_KW[0][0]))
        .chain(FEEDER2_SHARE.iter().map(|&(z, s)| (z, 2u32, s * FEEDER_PEAK_KW[1][0])))
        .map(|(id, feeder_id, peak)| ZoneNode {
            id,
            feeder_id,
            is_critical: CRITICAL.contains(&id),
            peak_load_kw: peak,
            has_gfm: id == 1 || id == 7,
        })
        .collect()
}

fn fixture_edges() -> Vec<SwitchEdge> {
    let line = |id, from, to| SwitchEdge {
        id,
        from,
        to,
        normally_open: false,
        flow_limit_kw: LINE_LIMIT_KW,
    };
    let tie = |id, from, to| SwitchEdge {
        id,
        from,
        to,
        normally_open: true,
        flow_limit_kw: TIE_LIMIT_KW,
    };
    vec![
        line(1, 1, 2),
        line(2, 1, 3),
        line(3, 3, 4),
        line(4, 4, 5),
        line(5, 6, 7),
        line(6, 7, 8),
        line(7, 8, 9),
        line(8, 9, 10),
        tie(9, 5, 6),
        tie(10, 2, 10),
    ]
}

fn fixture_resources() -> Vec<GridFormingResource> {
    vec![
        GridFormingResource {
            node_id: 1,
            battery_power_kw: 3000.0,
            battery_energy_kwh: 12_000.0,
            battery_soc0: 1.0,
            battery_efficiency: 0.95,
            diesel_power_kw: 4000.0,
            diesel_fuel_kwh: FIXTURE_FUEL_KWH[0],
        },
        GridFormingResource {
            node_id: 7,
            battery_power_kw: 2000.0,
            battery_energy_kwh: 8000.0,
            battery_soc0: 1.0,
            battery_efficiency: 0.95,
            diesel_power_kw: 4000.0,
            diesel_fuel_kwh: FIXTURE_FUEL_KWH[1],
        },
    ]
}

/// Interior-lateral limits of the two-feeder case: two zones behind each
/// source's interior lateral stay with that source, so only the zones next
/// to the ties can change hands.
pub fn fixture_policies() -> Vec<LateralPolicy> {
    vec![
        LateralPolicy {
            gfm_node_id: 1,
            edge_id: 2,
            min_downstream_nodes: 2,
            force_zero: false,
        },
        LateralPolicy {
            gfm_node_id: 7,
            edge_id: 6,
            min_downstream_nodes: 2,
            force_zero: false,
        },
    ]
}

/// Two-feeder zone graph without lateral policies or faults.
pub fn fixture_graph() -> ZoneGraph {
    ZoneGraph::new(
        fixture_nodes(),
        fixture_edges(),
        fixture_resources(),
        BTreeSet::new(),
        vec![],
    )
    .expect("fixture graph is well formed")
}

/// Builds the synthetic load and PV profiles for `graph` over `days`.
fn fixture_profiles(graph: &ZoneGraph, step_min: u32, days: usize) -> (Profile, Profile) {
    let per_day = (1440 / step_min) as usize;
    let shares: BTreeMap<ZoneId, (usize, f64)> = FEEDER1_SHARE
        .iter()
        .map(|&(z, s)| (z, (0, s)))
        .chain(FEEDER2_SHARE.iter().map(|&(z, s)| (z, (1, s))))
        .collect();
    let shape_max: Vec<f64> = (0..2)
        .map(|f| {
            (0..per_day)
                .map(|i| load_shape(f, i as f64 * step_min as f64 / 60.0))
                .fold(0.0, f64::max)
        })
        .collect();
    let zone_ids: Vec<ZoneId> = graph.nodes().iter().map(|n| n.id).collect();
    let mut load = Vec::with_capacity(per_day * days);
    let mut pv = Vec::with_capacity(per_day * days);
    for d in 0..days {
        for i in 0..per_day {
            let h = i as f64 * step_min as f64 / 60.0;
            let mut lrow = Vec::with_capacity(zone_ids.len());
            let mut prow = Vec::with_capacity(zone_ids.len());
            for z in &zone_ids {
                let (f, s) = shares[z];
                let day = d.min(1);
                lrow.push(s * FEEDER_PEAK_KW[f][day] * load_shape(f, h) / shape_max[f]);
                prow.push(s * PV_NAMEPLATE_KW * PV_DAY_FACTOR[day] * pv_shape(h));
            }
            load.push(lrow);
            pv.push(prow);
        }
    }
    (
        Profile {
            step_min,
            zone_ids: zone_ids.clone(),
            values: load,
        },
        Profile {
            step_min,
            zone_ids,
            values: pv,
        },
    )
}

/// The bundled two-day, two-feeder restoration case.
pub fn fixture_two_feeder() -> Scenario {
    let timeline = Timeline::default();
    let graph = fixture_graph()
        .with_policies(fixture_policies())
        .expect("fixture policies are valid");
    let days = (timeline.total_duration_min as usize).div_ceil(1440);
    let (load, pv) = fixture_profiles(&graph, timeline.dispatch_step_min, days);
    Scenario {
        name: "two-feeder".into(),
        graph,
        faults: Vec::new(),
        load,
        pv,
        weights: FormationWeights::default(),
        timeline,
        forecast: ForecastConfig::default(),
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feeder_total(s: &Scenario, p: &Profile, feeder: u32, day: usize) -> f64 {
        let idx: Vec<usize> = s
            .graph
            .nodes()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.feeder_id == feeder)
            .map(|(i, _)| i)
            .collect();
        let per_day = 288;
        p.total(&idx)[day * per_day..(day + 1) * per_day]
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    #[test]
    fn fixture_peaks() {
        let s = fixture_two_feeder();
        assert!((feeder_total(&s, &s.load, 1, 0) - 3500.0).abs() < 1e-9);
        assert!((feeder_total(&s, &s.load, 1, 1) - 3000.0).abs() < 1e-9);
        assert!((feeder_total(&s, &s.load, 2, 0) - 3000.0).abs() < 1e-9);
        assert!((feeder_total(&s, &s.load, 2, 1) - 2000.0).abs() < 1e-9);
        assert!((feeder_total(&s, &s.pv, 1, 0) - 4000.0).abs() < 1e-9);
        assert!((feeder_total(&s, &s.pv, 2, 0) - 4000.0).abs() < 1e-9);
    }

    #[test]
    fn fixture_shape() {
        let s = fixture_two_feeder();
        assert_eq!(s.graph.nodes().len(), 10);
        assert_eq!(s.graph.edges().len(), 10);
        assert_eq!(s.graph.edges().iter().filter(|e| e.normally_open).count(), 2);
        assert_eq!(s.graph.resources().len(), 2);
        assert_eq!(s.graph.nodes().iter().filter(|n| n.is_critical).count(), 6);
        assert_eq!(s.load.len(), 576);
        assert!(s.graph.load_islands().is_empty());
    }

    #[test]
    fn pv_is_dark_at_night() {
        assert_eq!(pv_shape(3.0), 0.0);
        assert_eq!(pv_shape(20.0), 0.0);
        assert!((pv_shape(12.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fault_windows() {
        let f = FaultWindow {
            edge_id: 1,
            start_min: 60,
            end_min: Some(120),
        };
        assert!(!f.active_at(59));
        assert!(f.active_at(60));
        assert!(!f.active_at(120));
    }

    #[test]
    fn zero_noise_forecast_is_truth() {
        let s = fixture_two_feeder();
        let (l, p) = s.forecasts(9);
        assert_eq!(l, s.load);
        assert_eq!(p, s.pv);
    }

    #[test]
    fn noisy_forecast_is_seeded() {
        let mut s = fixture_two_feeder();
        s.forecast.noise_sigma = 0.1;
        assert_eq!(s.forecasts(3), s.forecasts(3));
        assert_ne!(s.forecasts(3).0, s.forecasts(4).0);
    }

    #[test]
    fn csv_rejects_gaps() {
        let text = "time_min,1,2\n0,1,2\n10,1,2\n";
        let e = Profile::from_csv(text, &[1, 2], 5, "/profiles/load").unwrap_err();
        assert_eq!(e.path, "/profiles/load/rows/1/time_min");
    }

    #[test]
    fn csv_reorders_columns() {
        let text = "time_min,2,1\n0,20,10\n5,21,11\n";
        let p = Profile::from_csv(text, &[1, 2], 5, "/p").unwrap();
        assert_eq!(p.values, vec![vec![10.0, 20.0], vec![11.0, 21.0]]);
    }
}

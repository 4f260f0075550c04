//! Static network model: buses, line segments, devices, switches and load
//! points, with the `tsds-model/1` JSON format and topology checks.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phase::PhaseSet;

pub const SCHEMA_VERSION: &str = "tsds-model/1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("unsupported schema version {found:?}, expected {SCHEMA_VERSION:?}")]
    SchemaVersion { found: String },
    #[error("{kind} `{id}` field `{field}` references unknown {target_kind} `{target}`")]
    DanglingReference { kind: &'static str, id: String, field: &'static str, target_kind: &'static str, target: String },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} `{id}`: invalid `{field}`: {reason}")]
    InvalidValue { kind: &'static str, id: String, field: &'static str, reason: String },
    #[error("customer `{customer}` is assigned to more than one load point")]
    DuplicateCustomer { customer: String },
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    pub nominal_ll_kv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feeder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<[f64; 2]>,
}

impl Bus {
    pub fn nominal_ln_volts(&self) -> f64 {
        self.nominal_ll_kv * 1000.0 / 3f64.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Material {
    Acsr,
    Aa,
    Cu,
}

/// One wire type: Ω/mile resistance, diameter in inches, GMR in feet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductorSpec {
    pub id: String,
    pub size: String,
    pub material: Material,
    pub resistance_ohm_per_mile: f64,
    pub diameter_in: f64,
    pub gmr_ft: f64,
    pub ampacity_a: f64,
}

/// Concentric-neutral cable built from a phase conductor and `strands` neutral strands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CableSpec {
    pub id: String,
    pub phase_conductor: String,
    pub strand_conductor: String,
    pub strands: u32,
    /// Radius of the circle through the strand centres (inches).
    pub neutral_circle_radius_in: f64,
    pub relative_permittivity: f64,
}

/// Wire (or cable) positions in feet. Segments use the first `n_phase`
/// positions for their phase wires in A, B, C order, then one per neutral wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireGeometry {
    pub id: String,
    pub positions_ft: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Construction {
    Overhead,
    Underground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSegment {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub length_mi: f64,
    pub construction: Construction,
    pub phases: PhaseSet,
    /// Conductor ids (overhead) or cable ids (underground), one per phase in A, B, C order.
    pub phase_wires: Vec<String>,
    #[serde(default)]
    pub neutral_wires: Vec<String>,
    pub geometry_id: String,
    #[serde(default = "yes")]
    pub normally_energized: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchPosition {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchState {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub phases: PhaseSet,
    pub normal_state: SwitchPosition,
    pub current_state: SwitchPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadPoint {
    pub id: String,
    pub bus: String,
    pub phases: PhaseSet,
    pub transformer_id: String,
    pub customer_ids: Vec<String>,
}

/// Sub-transmission equivalent: Thevenin voltage behind sequence impedances (Ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub bus: String,
    pub nominal_ll_kv: f64,
    #[serde(default = "one")]
    pub voltage_pu: f64,
    #[serde(default)]
    pub angle_deg: f64,
    pub r1: f64,
    pub x1: f64,
    pub r0: f64,
    pub x0: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindingConnection {
    /// Delta primary, grounded-wye secondary; secondary lags by 30°.
    DeltaWye,
    /// Grounded-wye on both sides, one winding per phase.
    WyeWye,
}

/// Two-winding transformer. `from_bus`/`to_bus` are set for network
/// transformers (substation); distribution transformers are referenced by
/// load points instead. Voltages are line-to-line for three-phase units and
/// winding voltages for single-phase units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSpec {
    pub id: String,
    pub phase_count: u8,
    pub kva: f64,
    pub primary_kv: f64,
    pub secondary_kv: f64,
    pub r_pct: f64,
    pub x_pct: f64,
    pub connection: WindingConnection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_bus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_bus: Option<String>,
}

/// Bank of single-phase, wye-connected step regulators (load tap changer).
/// Voltages are on the 120 V base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorSpec {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub phases: PhaseSet,
    pub winding_kv: f64,
    pub kva: f64,
    pub setpoint_v: f64,
    pub bandwidth_v: f64,
    pub vmax_v: f64,
    pub vmin_v: f64,
    pub max_tap: i32,
    /// Ratio change per tap step in percent.
    pub step_pct: f64,
    pub pt_ratio: f64,
    pub monitored_bus: String,
    #[serde(default)]
    pub initial_taps: [i32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacitorConnection {
    GroundedWye,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceState {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorBank {
    pub id: String,
    pub bus: String,
    pub phases: PhaseSet,
    /// Total rating over all phases at nominal voltage.
    pub kvar: f64,
    pub connection: CapacitorConnection,
    pub state: DeviceState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub schema_version: String,
    #[serde(default)]
    pub name: String,
    #[serde(default = "sixty")]
    pub frequency_hz: f64,
    pub source: SourceSpec,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub conductors: Vec<ConductorSpec>,
    #[serde(default)]
    pub cables: Vec<CableSpec>,
    #[serde(default)]
    pub geometries: Vec<WireGeometry>,
    #[serde(default)]
    pub segments: Vec<LineSegment>,
    #[serde(default)]
    pub transformers: Vec<TransformerSpec>,
    #[serde(default)]
    pub regulators: Vec<RegulatorSpec>,
    #[serde(default)]
    pub capacitors: Vec<CapacitorBank>,
    #[serde(default)]
    pub switches: Vec<SwitchState>,
    #[serde(default)]
    pub load_points: Vec<LoadPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles_ref: Option<String>,
    /// Free-text list of modeling assumptions baked into the data.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumptions: Vec<String>,
}

fn sixty() -> f64 {
    60.0
}

/// Reads, parses and structurally validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    parse_model(&text)
}

pub fn parse_model(text: &str) -> Result<NetworkModel, ModelError> {
    // Version check first so an old file fails with the version, not a field error.
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(text) {
        match map.get("schema_version").and_then(|v| v.as_str()) {
            Some(v) if v != SCHEMA_VERSION => {
                return Err(ModelError::SchemaVersion { found: v.to_string() })
            }
            _ => {}
        }
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let model: NetworkModel = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ModelError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
    })?;
    model.check()?;
    Ok(model)
}

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, model.to_json())
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

fn ensure_unique<'a>(kind: &'static str, ids: impl Iterator<Item = &'a str>) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ModelError::DuplicateId { kind, id: id.to_string() });
        }
    }
    Ok(())
}

fn positive(kind: &'static str, id: &str, field: &'static str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidValue { kind, id: id.to_string(), field, reason: format!("{v} must be > 0") })
    }
}

fn invalid(kind: &'static str, id: &str, field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidValue { kind, id: id.to_string(), field, reason: reason.into() }
}

impl NetworkModel {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn conductor(&self, id: &str) -> Option<&ConductorSpec> {
        self.conductors.iter().find(|c| c.id == id)
    }

    pub fn cable(&self, id: &str) -> Option<&CableSpec> {
        self.cables.iter().find(|c| c.id == id)
    }

    pub fn geometry(&self, id: &str) -> Option<&WireGeometry> {
        self.geometries.iter().find(|g| g.id == id)
    }

    pub fn transformer(&self, id: &str) -> Option<&TransformerSpec> {
        self.transformers.iter().find(|t| t.id == id)
    }

    pub fn segment(&self, id: &str) -> Option<&LineSegment> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Cross-reference and value checks. Topology is reported separately by
    /// [`validate_radiality`] so that looped or islanded models still load.
    pub fn check(&self) -> Result<(), ModelError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion { found: self.schema_version.clone() });
        }
        ensure_unique("bus", self.buses.iter().map(|b| b.id.as_str()))?;
        ensure_unique("conductor", self.conductors.iter().map(|c| c.id.as_str()))?;
        ensure_unique("cable", self.cables.iter().map(|c| c.id.as_str()))?;
        ensure_unique("geometry", self.geometries.iter().map(|g| g.id.as_str()))?;
        ensure_unique("transformer", self.transformers.iter().map(|t| t.id.as_str()))?;
        ensure_unique("load point", self.load_points.iter().map(|l| l.id.as_str()))?;
        ensure_unique(
            "branch",
            self.segments
                .iter()
                .map(|s| s.id.as_str())
                .chain(self.switches.iter().map(|s| s.id.as_str()))
                .chain(self.regulators.iter().map(|r| r.id.as_str()))
                .chain(self.transformers.iter().filter(|t| t.from_bus.is_some()).map(|t| t.id.as_str())),
        )?;
        ensure_unique("capacitor", self.capacitors.iter().map(|c| c.id.as_str()))?;

        let buses: HashMap<&str, &Bus> = self.buses.iter().map(|b| (b.id.as_str(), b)).collect();
        let bus_ref = |kind, id: &str, field, target: &str| -> Result<&Bus, ModelError> {
            buses.get(target).copied().ok_or_else(|| ModelError::DanglingReference {
                kind,
                id: id.to_string(),
                field,
                target_kind: "bus",
                target: target.to_string(),
            })
        };

        for b in &self.buses {
            if b.phases.is_empty() {
                return Err(invalid("bus", &b.id, "phases", "must name at least one phase"));
            }
            positive("bus", &b.id, "nominal_ll_kv", b.nominal_ll_kv)?;
        }

        let s = &self.source;
        bus_ref("source", &s.bus, "bus", &s.bus)?;
        positive("source", &s.bus, "nominal_ll_kv", s.nominal_ll_kv)?;
        positive("source", &s.bus, "voltage_pu", s.voltage_pu)?;
        positive("source", &s.bus, "x1", s.x1)?;
        positive("source", &s.bus, "x0", s.x0)?;
        if s.r1 < 0.0 || s.r0 < 0.0 {
            return Err(invalid("source", &s.bus, "r1/r0", "sequence resistances must be >= 0"));
        }

        for c in &self.conductors {
            positive("conductor", &c.id, "resistance_ohm_per_mile", c.resistance_ohm_per_mile)?;
            positive("conductor", &c.id, "gmr_ft", c.gmr_ft)?;
            positive("conductor", &c.id, "ampacity_a", c.ampacity_a)?;
            if c.gmr_ft * 12.0 >= c.diameter_in {
                return Err(invalid("conductor", &c.id, "gmr_ft", "GMR must be smaller than the diameter"));
            }
        }

        for cab in &self.cables {
            let phase = self.conductor(&cab.phase_conductor).ok_or_else(|| ModelError::DanglingReference {
                kind: "cable",
                id: cab.id.clone(),
                field: "phase_conductor",
                target_kind: "conductor",
                target: cab.phase_conductor.clone(),
            })?;
            self.conductor(&cab.strand_conductor).ok_or_else(|| ModelError::DanglingReference {
                kind: "cable",
                id: cab.id.clone(),
                field: "strand_conductor",
                target_kind: "conductor",
                target: cab.strand_conductor.clone(),
            })?;
            if cab.strands == 0 {
                return Err(invalid("cable", &cab.id, "strands", "need at least one strand"));
            }
            positive("cable", &cab.id, "relative_permittivity", cab.relative_permittivity)?;
            if cab.neutral_circle_radius_in <= phase.diameter_in / 2.0 {
                return Err(invalid(
                    "cable",
                    &cab.id,
                    "neutral_circle_radius_in",
                    "must exceed the phase conductor radius",
                ));
            }
        }

        for g in &self.geometries {
            for (i, p) in g.positions_ft.iter().enumerate() {
                for q in &g.positions_ft[..i] {
                    if (p[0] - q[0]).hypot(p[1] - q[1]) <= 0.0 {
                        return Err(invalid("geometry", &g.id, "positions_ft", "two wires share a position"));
                    }
                }
            }
        }

        for seg in &self.segments {
            bus_ref("segment", &seg.id, "from_bus", &seg.from_bus)?;
            bus_ref("segment", &seg.id, "to_bus", &seg.to_bus)?;
            positive("segment", &seg.id, "length_mi", seg.length_mi)?;
            if seg.phases.is_empty() {
                return Err(invalid("segment", &seg.id, "phases", "must name at least one phase"));
            }
            if seg.phase_wires.len() != seg.phases.len() {
                return Err(invalid(
                    "segment",
                    &seg.id,
                    "phase_wires",
                    format!("{} wires for {} phases", seg.phase_wires.len(), seg.phases.len()),
                ));
            }
            for w in &seg.phase_wires {
                let found = match seg.construction {
                    Construction::Overhead => self.conductor(w).is_some(),
                    Construction::Underground => self.cable(w).is_some(),
                };
                if !found {
                    return Err(ModelError::DanglingReference {
                        kind: "segment",
                        id: seg.id.clone(),
                        field: "phase_wires",
                        target_kind: match seg.construction {
                            Construction::Overhead => "conductor",
                            Construction::Underground => "cable",
                        },
                        target: w.clone(),
                    });
                }
            }
            for w in &seg.neutral_wires {
                if self.conductor(w).is_none() {
                    return Err(ModelError::DanglingReference {
                        kind: "segment",
                        id: seg.id.clone(),
                        field: "neutral_wires",
                        target_kind: "conductor",
                        target: w.clone(),
                    });
                }
            }
            let geom = self.geometry(&seg.geometry_id).ok_or_else(|| ModelError::DanglingReference {
                kind: "segment",
                id: seg.id.clone(),
                field: "geometry_id",
                target_kind: "geometry",
                target: seg.geometry_id.clone(),
            })?;
            let needed = seg.phase_wires.len() + seg.neutral_wires.len();
            if geom.positions_ft.len() < needed {
                return Err(invalid(
                    "segment",
                    &seg.id,
                    "geometry_id",
                    format!("geometry `{}` has {} positions, {needed} wires", geom.id, geom.positions_ft.len()),
                ));
            }
        }

        for sw in &self.switches {
            bus_ref("switch", &sw.id, "from_bus", &sw.from_bus)?;
            bus_ref("switch", &sw.id, "to_bus", &sw.to_bus)?;
            if sw.phases.is_empty() {
                return Err(invalid("switch", &sw.id, "phases", "must name at least one phase"));
            }
        }

        for t in &self.transformers {
            if t.phase_count != 1 && t.phase_count != 3 {
                return Err(invalid("transformer", &t.id, "phase_count", "must be 1 or 3"));
            }
            positive("transformer", &t.id, "kva", t.kva)?;
            positive("transformer", &t.id, "primary_kv", t.primary_kv)?;
            positive("transformer", &t.id, "secondary_kv", t.secondary_kv)?;
            positive("transformer", &t.id, "r_pct", t.r_pct)?;
            positive("transformer", &t.id, "x_pct", t.x_pct)?;
            if t.connection == WindingConnection::DeltaWye && t.phase_count != 3 {
                return Err(invalid("transformer", &t.id, "connection", "delta-wye needs three phases"));
            }
            match (&t.from_bus, &t.to_bus) {
                (Some(f), Some(to)) => {
                    bus_ref("transformer", &t.id, "from_bus", f)?;
                    bus_ref("transformer", &t.id, "to_bus", to)?;
                }
                (None, None) => {}
                _ => return Err(invalid("transformer", &t.id, "to_bus", "from_bus and to_bus go together")),
            }
        }

        for r in &self.regulators {
            bus_ref("regulator", &r.id, "from_bus", &r.from_bus)?;
            bus_ref("regulator", &r.id, "to_bus", &r.to_bus)?;
            bus_ref("regulator", &r.id, "monitored_bus", &r.monitored_bus)?;
            positive("regulator", &r.id, "step_pct", r.step_pct)?;
            positive("regulator", &r.id, "pt_ratio", r.pt_ratio)?;
            positive("regulator", &r.id, "bandwidth_v", r.bandwidth_v)?;
            if r.max_tap <= 0 {
                return Err(invalid("regulator", &r.id, "max_tap", "must be positive"));
            }
            let lo = r.setpoint_v - r.bandwidth_v / 2.0;
            let hi = r.setpoint_v + r.bandwidth_v / 2.0;
            if !(r.vmin_v <= lo && hi <= r.vmax_v) {
                return Err(invalid("regulator", &r.id, "setpoint_v", "band must lie inside [vmin, vmax]"));
            }
            if r.initial_taps.iter().any(|t| t.abs() > r.max_tap) {
                return Err(invalid("regulator", &r.id, "initial_taps", "outside tap range"));
            }
        }

        for cap in &self.capacitors {
            bus_ref("capacitor", &cap.id, "bus", &cap.bus)?;
            positive("capacitor", &cap.id, "kvar", cap.kvar)?;
        }

        let mut customers = BTreeSet::new();
        for lp in &self.load_points {
            let bus = bus_ref("load point", &lp.id, "bus", &lp.bus)?;
            if lp.phases.is_empty() || !lp.phases.is_subset(bus.phases) {
                return Err(invalid("load point", &lp.id, "phases", "must be a nonempty subset of the bus phases"));
            }
            let t = self.transformer(&lp.transformer_id).ok_or_else(|| ModelError::DanglingReference {
                kind: "load point",
                id: lp.id.clone(),
                field: "transformer_id",
                target_kind: "transformer",
                target: lp.transformer_id.clone(),
            })?;
            if t.from_bus.is_some() {
                return Err(invalid("load point", &lp.id, "transformer_id", "refers to a network transformer"));
            }
            if usize::from(t.phase_count) != lp.phases.len() && !(t.phase_count == 1 && lp.phases.len() == 1) {
                return Err(invalid(
                    "load point",
                    &lp.id,
                    "phases",
                    format!("{}-phase transformer serving {} phases", t.phase_count, lp.phases.len()),
                ));
            }
            for c in &lp.customer_ids {
                if !customers.insert(c.as_str()) {
                    return Err(ModelError::DuplicateCustomer { customer: c.clone() });
                }
            }
        }
        Ok(())
    }

    /// Every customer id mapped to the index of its load point.
    pub fn customer_map(&self) -> BTreeMap<String, usize> {
        self.load_points
            .iter()
            .enumerate()
            .flat_map(|(i, lp)| lp.customer_ids.iter().map(move |c| (c.clone(), i)))
            .collect()
    }

    /// Distinct feeder labels carried by buses, sorted.
    pub fn feeders(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.buses.iter().filter_map(|b| b.feeder.as_deref()).collect();
        set.into_iter().map(String::from).collect()
    }
}

/// Kind of an energized graph edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Segment(usize),
    Switch(usize),
    Transformer(usize),
    Regulator(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub kind: EdgeKind,
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
}

/// Energized edges of a model: in-service segments, closed switches,
/// network transformers and regulators.
pub fn energized_edges(model: &NetworkModel) -> Vec<Edge> {
    let idx: HashMap<&str, usize> = model.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    let mut edges = Vec::new();
    for (i, s) in model.segments.iter().enumerate().filter(|(_, s)| s.normally_energized) {
        edges.push(Edge { kind: EdgeKind::Segment(i), id: s.id.clone(), from: idx[&*s.from_bus], to: idx[&*s.to_bus], phases: s.phases });
    }
    for (i, s) in model.switches.iter().enumerate().filter(|(_, s)| s.current_state == SwitchPosition::Closed) {
        edges.push(Edge { kind: EdgeKind::Switch(i), id: s.id.clone(), from: idx[&*s.from_bus], to: idx[&*s.to_bus], phases: s.phases });
    }
    for (i, t) in model.transformers.iter().enumerate() {
        if let (Some(f), Some(to)) = (&t.from_bus, &t.to_bus) {
            edges.push(Edge { kind: EdgeKind::Transformer(i), id: t.id.clone(), from: idx[&**f], to: idx[&**to], phases: PhaseSet::ABC });
        }
    }
    for (i, r) in model.regulators.iter().enumerate() {
        edges.push(Edge { kind: EdgeKind::Regulator(i), id: r.id.clone(), from: idx[&*r.from_bus], to: idx[&*r.to_bus], phases: r.phases });
    }
    edges
}

/// Breadth-first spanning tree of the energized graph rooted at the source bus.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Reached buses, parent before child; levels in order, bus id order within a level.
    pub order: Vec<usize>,
    pub level: Vec<Option<usize>>,
    /// Parent bus and the edge (index into `edges`) feeding each reached non-root bus.
    pub parent: Vec<Option<(usize, usize)>>,
    pub edges: Vec<Edge>,
    /// Energized edges that close a loop (not part of the spanning tree).
    pub chords: Vec<usize>,
    pub root: usize,
}

impl Topology {
    pub fn build(model: &NetworkModel) -> Topology {
        let n = model.buses.len();
        let root = model.buses.iter().position(|b| b.id == model.source.bus).expect("source bus checked on load");
        let edges = energized_edges(model);
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            adj[e.from].push(k);
            adj[e.to].push(k);
        }
        let mut level = vec![None; n];
        let mut parent = vec![None; n];
        let mut tree_edge = vec![false; edges.len()];
        let mut order = vec![root];
        level[root] = Some(0);
        let mut frontier = vec![root];
        let mut depth = 0;
        while !frontier.is_empty() {
            depth += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                let mut incident = adj[u].clone();
                incident.sort_by(|a, b| edges[*a].id.cmp(&edges[*b].id));
                for k in incident {
                    let e = &edges[k];
                    let v = if e.from == u { e.to } else { e.from };
                    if level[v].is_none() {
                        level[v] = Some(depth);
                        parent[v] = Some((u, k));
                        tree_edge[k] = true;
                        next.push(v);
                    }
                }
            }
            next.sort_by(|a, b| model.buses[*a].id.cmp(&model.buses[*b].id));
            order.extend_from_slice(&next);
            frontier = next;
        }
        let chords = (0..edges.len())
            .filter(|k| !tree_edge[*k] && level[edges[*k].from].is_some())
            .collect();
        Topology { order, level, parent, edges, chords, root }
    }

    pub fn is_energized(&self, bus: usize) -> bool {
        self.level[bus].is_some()
    }

    fn path_to_root(&self, mut bus: usize) -> Vec<usize> {
        let mut path = vec![bus];
        while let Some((p, _)) = self.parent[bus] {
            path.push(p);
            bus = p;
        }
        path
    }

    /// Buses around the loop closed by chord `k`.
    pub fn cycle_of(&self, k: usize) -> Vec<usize> {
        let e = &self.edges[k];
        let a = self.path_to_root(e.from);
        let b = self.path_to_root(e.to);
        let in_b: BTreeSet<usize> = b.iter().copied().collect();
        let meet = *a.iter().find(|x| in_b.contains(x)).expect("both ends reach the root");
        let mut cycle: Vec<usize> = a.iter().copied().take_while(|x| *x != meet).collect();
        cycle.push(meet);
        let tail: Vec<usize> = b.iter().copied().take_while(|x| *x != meet).collect();
        cycle.extend(tail.into_iter().rev());
        cycle
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleReport {
    /// Energized element whose presence closes the loop.
    pub closing_element: String,
    pub buses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseViolation {
    pub element: String,
    pub bus: String,
    pub detail: String,
}

/// Result of the topology check. Empty iff the energized graph is a single
/// tree rooted at the source with consistent phasing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TopologyReport {
    pub cycles: Vec<CycleReport>,
    /// De-energized buses, sorted by id.
    pub islands: Vec<String>,
    pub phase_violations: Vec<PhaseViolation>,
}

impl TopologyReport {
    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty() && self.islands.is_empty() && self.phase_violations.is_empty()
    }

    pub fn entries(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.cycles {
            out.push(format!("cycle closed by `{}`: {}", c.closing_element, c.buses.join(" -> ")));
        }
        for b in &self.islands {
            out.push(format!("de-energized bus `{b}`"));
        }
        for v in &self.phase_violations {
            out.push(format!("phase violation at `{}` on `{}`: {}", v.bus, v.element, v.detail));
        }
        out
    }
}

pub fn validate_radiality(model: &NetworkModel) -> TopologyReport {
    let topo = Topology::build(model);
    let name = |i: usize| model.buses[i].id.clone();
    let mut report = TopologyReport::default();

    for &k in &topo.chords {
        report.cycles.push(CycleReport {
            closing_element: topo.edges[k].id.clone(),
            buses: topo.cycle_of(k).into_iter().map(name).collect(),
        });
    }
    let mut islands: Vec<String> =
        (0..model.buses.len()).filter(|b| !topo.is_energized(*b)).map(name).collect();
    islands.sort();
    report.islands = islands;

    for e in &topo.edges {
        for end in [e.from, e.to] {
            let bus = &model.buses[end];
            if !e.phases.is_subset(bus.phases) {
                report.phase_violations.push(PhaseViolation {
                    element: e.id.clone(),
                    bus: bus.id.clone(),
                    detail: format!("element phases {} not present on bus phases {}", e.phases, bus.phases),
                });
            }
        }
    }
    for &b in &topo.order {
        if let Some((_, k)) = topo.parent[b] {
            let e = &topo.edges[k];
            let bus = &model.buses[b];
            if !bus.phases.is_subset(e.phases) {
                report.phase_violations.push(PhaseViolation {
                    element: e.id.clone(),
                    bus: bus.id.clone(),
                    detail: format!("bus phases {} not supplied by feeding element phases {}", bus.phases, e.phases),
                });
            }
        }
    }
    report
}

#[derive(Debug, Clone)]
pub struct SwitchingOutcome {
    pub model: NetworkModel,
    pub report: TopologyReport,
    /// False when the new state would close a loop; `model` is then the input unchanged.
    pub applied: bool,
}

/// Sets a switch's current state. Loops are refused; islands are allowed and
/// show up in the report as de-energized buses.
pub fn apply_switching(
    model: &NetworkModel,
    switch_id: &str,
    state: SwitchPosition,
) -> Result<SwitchingOutcome, ModelError> {
    let idx = model
        .switches
        .iter()
        .position(|s| s.id == switch_id)
        .ok_or_else(|| ModelError::UnknownSwitch(switch_id.to_string()))?;
    let mut next = model.clone();
    next.switches[idx].current_state = state;
    let report = validate_radiality(&next);
    if report.cycles.is_empty() {
        Ok(SwitchingOutcome { model: next, report, applied: true })
    } else {
        Ok(SwitchingOutcome { model: model.clone(), report, applied: false })
    }
}

/// Buses reachable from the source by plain breadth-first search; used to
/// list what a switching action de-energizes.
pub fn reachable_buses(model: &NetworkModel) -> BTreeSet<String> {
    let edges = energized_edges(model);
    let root = model.buses.iter().position(|b| b.id == model.source.bus).expect("source bus");
    let mut seen = vec![false; model.buses.len()];
    seen[root] = true;
    let mut q = VecDeque::from([root]);
    while let Some(u) = q.pop_front() {
        for e in &edges {
            let v = if e.from == u { e.to } else if e.to == u { e.from } else { continue };
            if !seen[v] {
                seen[v] = true;
                q.push_back(v);
            }
        }
    }
    (0..seen.len()).filter(|i| seen[*i]).map(|i| model.buses[i].id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal_json() -> String {
        r#"{
          "schema_version": "tsds-model/1",
          "source": {"bus": "src", "nominal_ll_kv": 13.8, "r1": 0.1, "x1": 0.5, "r0": 0.2, "x0": 1.0},
          "buses": [
            {"id": "src", "phases": "ABC", "nominal_ll_kv": 13.8},
            {"id": "b2", "phases": "ABC", "nominal_ll_kv": 13.8}
          ],
          "conductors": [
            {"id": "4/0_ACSR", "size": "4/0", "material": "ACSR", "resistance_ohm_per_mile": 0.592,
             "diameter_in": 0.563, "gmr_ft": 0.00814, "ampacity_a": 340}
          ],
          "geometries": [{"id": "g", "positions_ft": [[0,28],[2.5,28],[7,28],[4,24]]}],
          "segments": [
            {"id": "s1", "from_bus": "src", "to_bus": "b2", "length_mi": 0.5, "construction": "overhead",
             "phases": "ABC", "phase_wires": ["4/0_ACSR","4/0_ACSR","4/0_ACSR"], "neutral_wires": ["4/0_ACSR"],
             "geometry_id": "g"}
          ]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_model_loads() {
        let m = parse_model(&minimal_json()).unwrap();
        assert_eq!(m.segments.len(), 1);
        assert!(validate_radiality(&m).is_empty());
    }

    #[test]
    fn dangling_bus_reference() {
        let text = minimal_json().replace(r#""to_bus": "b2""#, r#""to_bus": "nowhere""#);
        match parse_model(&text) {
            Err(ModelError::DanglingReference { target, .. }) => assert_eq!(target, "nowhere"),
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = minimal_json().replace("tsds-model/1", "tsds-model/0");
        assert!(matches!(parse_model(&text), Err(ModelError::SchemaVersion { .. })));
    }

    #[test]
    fn parse_error_names_field_and_line() {
        let text = minimal_json().replace(r#""length_mi": 0.5"#, r#""length_mi": "long""#);
        match parse_model(&text) {
            Err(ModelError::Parse { field, line, .. }) => {
                assert_eq!(field, "segments[0].length_mi");
                assert!(line > 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = minimal_json().replace(r#""construction": "overhead","#, r#""construction": "overhead", "colour": 1,"#);
        assert!(matches!(parse_model(&text), Err(ModelError::Parse { .. })));
    }

    #[test]
    fn nonpositive_length_rejected() {
        let text = minimal_json().replace(r#""length_mi": 0.5"#, r#""length_mi": 0"#);
        assert!(matches!(parse_model(&text), Err(ModelError::InvalidValue { field: "length_mi", .. })));
    }

    #[test]
    fn phase_superset_on_child_is_violation() {
        let mut m = parse_model(&minimal_json()).unwrap();
        m.segments[0].phases = "A".parse().unwrap();
        m.segments[0].phase_wires.truncate(1);
        let r = validate_radiality(&m);
        assert_eq!(r.phase_violations.len(), 1);
        assert_eq!(r.phase_violations[0].bus, "b2");
    }

    #[test]
    fn unknown_switch() {
        let m = parse_model(&minimal_json()).unwrap();
        assert!(matches!(apply_switching(&m, "nope", SwitchPosition::Open), Err(ModelError::UnknownSwitch(_))));
    }
}

//! Unbalanced radial power flow by forward/backward sweep, with the power
//! mismatch audit and the tap-changer control loop.
//!
//! Every tree element is a three-phase two-port
//! `V_child = A·V_parent − B·I_child`, `I_parent = D·I_child`,
//! with node shunts (cable half-susceptances, capacitors) and constant-power
//! loads as injections. Voltages are in volts, currents in amperes.

use std::collections::HashMap;

use thiserror::Error;

use crate::devices::{
    capacitor_current, ideal_transformer_matrices, load_current, regulator_step, secondary_ohms, sequence_to_phase,
    CapacitorModel, DeviceError, LoadSnapshot, TapChanger,
};
use crate::linalg::{add3, sub3, zero3, Mat3, Phasor3};
use crate::linecalc::{segment_matrices, LineError};
use crate::model::{EdgeKind, NetworkModel, Topology};
use crate::phase::{Phase, PhaseSet};
use crate::scalar::{czero, polar_deg, Cplx, Scalar};

/// Control iterations allowed per snapshot before the tap loop gives up.
pub const MAX_CONTROL_ITERATIONS: usize = 32;
/// Specified power below this (VA) is floored when forming percentage errors.
pub const MISMATCH_FLOOR_VA: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("network is not radial: {0} loop(s), first closed by `{1}`")]
    NonRadial(usize, String),
    #[error("phase inconsistency at bus `{bus}` on `{element}`")]
    PhaseInconsistent { element: String, bus: String },
    #[error("load point `{load_point}` sits on de-energized bus `{bus}`")]
    DeenergizedLoad { load_point: String, bus: String },
    #[error("`{0}` must have its from_bus on the source side")]
    Orientation(String),
    #[error("snapshot input has {got} {what}, circuit needs {want}")]
    InputShape { what: &'static str, got: usize, want: usize },
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error(transparent)]
    Line(#[from] LineError),
    #[error("{node}: {source}")]
    Device { node: String, source: DeviceError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// A model bus (index into `NetworkModel::buses`).
    Bus(usize),
    /// Secondary terminal of a load point's distribution transformer.
    Service(usize),
}

#[derive(Debug, Clone)]
pub struct Node<T: Scalar> {
    pub name: String,
    pub kind: NodeKind,
    pub phases: PhaseSet,
    pub base_ln_volts: T,
    /// Branch feeding this node; `None` for the source bus.
    pub feeder_branch: Option<usize>,
    pub feeder: Option<String>,
    /// Constant shunt admittance (S), e.g. cable half-susceptances.
    pub shunt: Mat3<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Segment,
    Switch,
    Transformer,
    /// Index into `Circuit::regulators`.
    Regulator(usize),
    /// Distribution transformer of a load point.
    Service(usize),
}

#[derive(Debug, Clone)]
pub struct Branch<T: Scalar> {
    pub id: String,
    pub kind: BranchKind,
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    pub a: Mat3<T>,
    pub b: Mat3<T>,
    pub d: Mat3<T>,
}

#[derive(Debug, Clone)]
pub struct RegulatorInfo<T: Scalar> {
    pub id: String,
    pub branch: usize,
    pub monitored_node: usize,
    pub pt_ratio: T,
    pub initial: TapChanger<T>,
}

#[derive(Debug, Clone)]
pub struct LoadPointInfo {
    pub id: String,
    pub bus_node: usize,
    pub service_node: usize,
    pub phases: PhaseSet,
}

/// Network compiled for sweeping. Node indices are in traversal order, so a
/// parent always precedes its children.
#[derive(Debug, Clone)]
pub struct Circuit<T: Scalar> {
    pub nodes: Vec<Node<T>>,
    pub branches: Vec<Branch<T>>,
    pub children: Vec<Vec<usize>>,
    pub source_emf: Phasor3<T>,
    pub source_z: Mat3<T>,
    pub regulators: Vec<RegulatorInfo<T>>,
    /// Capacitor models and the node each sits on.
    pub capacitors: Vec<(usize, CapacitorModel<T>)>,
    pub load_points: Vec<LoadPointInfo>,
    /// Model bus index → node index, `None` when de-energized.
    pub bus_nodes: Vec<Option<usize>>,
}

fn embed<T: Scalar>(mask: [bool; 3], m: Mat3<T>) -> Mat3<T> {
    m.masked(mask)
}

fn real_diag<T: Scalar>(phases: PhaseSet, v: T) -> Mat3<T> {
    let mut d = [czero(); 3];
    for p in phases.iter() {
        d[p.index()] = Cplx::new(v, T::zero());
    }
    Mat3::diag(d)
}

/// Parent-before-child bus order of the energized network.
pub fn network_ordering(model: &NetworkModel) -> Result<Vec<String>, SolveError> {
    let topo = Topology::build(model);
    if let Some(&k) = topo.chords.first() {
        return Err(SolveError::NonRadial(topo.chords.len(), topo.edges[k].id.clone()));
    }
    Ok(topo.order.iter().map(|&b| model.buses[b].id.clone()).collect())
}

impl<T: Scalar> Circuit<T> {
    pub fn compile(model: &NetworkModel) -> Result<Self, SolveError> {
        let topo = Topology::build(model);
        if let Some(&k) = topo.chords.first() {
            return Err(SolveError::NonRadial(topo.chords.len(), topo.edges[k].id.clone()));
        }
        let mut bus_nodes = vec![None; model.buses.len()];
        let mut nodes: Vec<Node<T>> = Vec::new();
        for &b in &topo.order {
            let bus = &model.buses[b];
            bus_nodes[b] = Some(nodes.len());
            nodes.push(Node {
                name: bus.id.clone(),
                kind: NodeKind::Bus(b),
                phases: bus.phases,
                base_ln_volts: T::lit(bus.nominal_ln_volts()),
                feeder_branch: None,
                feeder: bus.feeder.clone(),
                shunt: Mat3::zero(),
            });
        }

        let mut branches: Vec<Branch<T>> = Vec::new();
        let mut regulators = Vec::new();
        for &b in &topo.order {
            let Some((parent_bus, k)) = topo.parent[b] else { continue };
            let edge = &topo.edges[k];
            let bus = &model.buses[b];
            if !bus.phases.is_subset(edge.phases) || !edge.phases.is_subset(model.buses[parent_bus].phases) {
                return Err(SolveError::PhaseInconsistent { element: edge.id.clone(), bus: bus.id.clone() });
            }
            let from = bus_nodes[parent_bus].expect("parent energized");
            let to = bus_nodes[b].expect("child energized");
            let mask = bus.phases.mask();
            let ident = real_diag(bus.phases, T::one());
            let (kind, a, bm, d) = match edge.kind {
                EdgeKind::Segment(i) => {
                    let seg = &model.segments[i];
                    let m = segment_matrices::<T>(seg, model)?;
                    let (z, y) = m.to_mat3();
                    let half = y.scale(Cplx::new(T::lit(0.5), T::zero()));
                    nodes[from].shunt = nodes[from].shunt + embed(model.buses[parent_bus].phases.mask(), half);
                    nodes[to].shunt = nodes[to].shunt + embed(mask, half);
                    (BranchKind::Segment, ident, embed(mask, z), ident)
                }
                EdgeKind::Switch(_) => (BranchKind::Switch, ident, Mat3::zero(), ident),
                EdgeKind::Transformer(i) => {
                    let t = &model.transformers[i];
                    if t.from_bus.as_deref() != Some(model.buses[parent_bus].id.as_str()) {
                        return Err(SolveError::Orientation(t.id.clone()));
                    }
                    let (a, d) = ideal_transformer_matrices::<T>(t);
                    let z = secondary_ohms::<T>(t);
                    (BranchKind::Transformer, embed(mask, a), Mat3::diag([z; 3]).masked(mask), embed(mask, d))
                }
                EdgeKind::Regulator(i) => {
                    let r = &model.regulators[i];
                    if r.from_bus != model.buses[parent_bus].id {
                        return Err(SolveError::Orientation(r.id.clone()));
                    }
                    let monitored = model.buses.iter().position(|x| x.id == r.monitored_bus).expect("checked on load");
                    let monitored_node = bus_nodes[monitored].ok_or_else(|| SolveError::Orientation(r.id.clone()))?;
                    regulators.push(RegulatorInfo {
                        id: r.id.clone(),
                        branch: branches.len(),
                        monitored_node,
                        pt_ratio: T::lit(r.pt_ratio),
                        initial: TapChanger::from_spec(r),
                    });
                    (BranchKind::Regulator(regulators.len() - 1), ident, Mat3::zero(), ident)
                }
            };
            nodes[to].feeder_branch = Some(branches.len());
            branches.push(Branch { id: edge.id.clone(), kind, from, to, phases: bus.phases, a, b: bm, d });
        }

        let mut load_points = Vec::new();
        for (li, lp) in model.load_points.iter().enumerate() {
            let bus_idx = model.buses.iter().position(|b| b.id == lp.bus).expect("checked on load");
            let bus_node = bus_nodes[bus_idx]
                .ok_or_else(|| SolveError::DeenergizedLoad { load_point: lp.id.clone(), bus: lp.bus.clone() })?;
            let t = model.transformer(&lp.transformer_id).expect("checked on load");
            let mask = lp.phases.mask();
            let (a, d) = ideal_transformer_matrices::<T>(t);
            let z = secondary_ohms::<T>(t);
            let (a, d) = if t.phase_count == 1 {
                let n = T::lit(t.primary_kv / t.secondary_kv);
                (real_diag(lp.phases, T::one() / n), real_diag(lp.phases, T::one() / n))
            } else {
                (embed(mask, a), embed(mask, d))
            };
            let sec_ln = if t.phase_count == 1 { t.secondary_kv * 1000.0 } else { t.secondary_kv * 1000.0 / 3f64.sqrt() };
            let service = nodes.len();
            nodes.push(Node {
                name: lp.id.clone(),
                kind: NodeKind::Service(li),
                phases: lp.phases,
                base_ln_volts: T::lit(sec_ln),
                feeder_branch: Some(branches.len()),
                feeder: nodes[bus_node].feeder.clone(),
                shunt: Mat3::zero(),
            });
            branches.push(Branch {
                id: lp.transformer_id.clone(),
                kind: BranchKind::Service(li),
                from: bus_node,
                to: service,
                phases: lp.phases,
                a,
                b: Mat3::diag([z; 3]).masked(mask),
                d,
            });
            load_points.push(LoadPointInfo { id: lp.id.clone(), bus_node, service_node: service, phases: lp.phases });
        }

        let mut capacitors = Vec::new();
        for cap in &model.capacitors {
            let bi = model.buses.iter().position(|b| b.id == cap.bus).expect("checked on load");
            if let Some(n) = bus_nodes[bi] {
                capacitors.push((n, CapacitorModel::new(cap, model.buses[bi].nominal_ln_volts())));
            }
        }

        let mut children = vec![Vec::new(); nodes.len()];
        for (k, br) in branches.iter().enumerate() {
            children[br.from].push(k);
        }

        let src = &model.source;
        let v_ln = T::lit(src.nominal_ll_kv * 1000.0 / 3f64.sqrt() * src.voltage_pu);
        let ang = T::lit(src.angle_deg);
        let source_emf = [
            polar_deg(v_ln, ang),
            polar_deg(v_ln, ang - T::lit(120.0)),
            polar_deg(v_ln, ang + T::lit(120.0)),
        ];
        let source_z = sequence_to_phase(Cplx::new(T::lit(src.r1), T::lit(src.x1)), Cplx::new(T::lit(src.r0), T::lit(src.x0)));

        Ok(Circuit { nodes, branches, children, source_emf, source_z, regulators, capacitors, load_points, bus_nodes })
    }

    /// Initial tap state of every regulator, as configured in the model.
    pub fn initial_taps(&self) -> Vec<TapChanger<T>> {
        self.regulators.iter().map(|r| r.initial).collect()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Default capacitor states as given in the model.
    pub fn capacitor_states(&self) -> Vec<bool> {
        self.capacitors.iter().map(|(_, c)| c.on).collect()
    }

    /// Branch matrices for the given tap positions (regulators only differ).
    fn branch_matrices(&self, k: usize, taps: &[TapChanger<T>]) -> (Mat3<T>, Mat3<T>, Mat3<T>) {
        let br = &self.branches[k];
        match br.kind {
            BranchKind::Regulator(r) => {
                let ratios = taps[r].ratios();
                let mut d = [czero(); 3];
                for p in br.phases.iter() {
                    d[p.index()] = Cplx::new(ratios[p.index()], T::zero());
                }
                // Output = ratio · input; input current = ratio · output current.
                (Mat3::diag(d), br.b, Mat3::diag(d))
            }
            _ => (br.a, br.b, br.d),
        }
    }
}

/// One snapshot: loads per load point, capacitor states and tap positions.
#[derive(Debug, Clone)]
pub struct SnapshotInput<'a, T: Scalar> {
    pub circuit: &'a Circuit<T>,
    pub loads: &'a [LoadSnapshot<T>],
    pub capacitors_on: &'a [bool],
    pub taps: &'a [TapChanger<T>],
    /// Previous solution's node voltages for warm start; flat start when `None`.
    pub warm_start: Option<&'a [Phasor3<T>]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T: Scalar> {
    /// Convergence threshold on the largest voltage update, p.u.
    pub tolerance: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions { tolerance: T::lit(1e-6), max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotSolution<T: Scalar> {
    /// Node voltages, volts line-to-neutral.
    pub voltages: Vec<Phasor3<T>>,
    /// Branch currents at the child end, amperes.
    pub currents: Vec<Phasor3<T>>,
    /// Branch currents at the parent end, amperes.
    pub parent_currents: Vec<Phasor3<T>>,
    /// Current leaving the source equivalent into the source bus.
    pub source_current: Phasor3<T>,
    /// Power delivered at the source bus, kVA.
    pub substation_kva: Cplx<T>,
    pub iterations: usize,
    pub converged: bool,
    pub max_update_pu: T,
}

impl<T: Scalar> SnapshotSolution<T> {
    pub fn voltage_pu(&self, circuit: &Circuit<T>, node: usize) -> [T; 3] {
        let base = circuit.nodes[node].base_ln_volts;
        let v = &self.voltages[node];
        [v[0].norm() / base, v[1].norm() / base, v[2].norm() / base]
    }

    /// Series losses Σ Re(Iᴴ·B·I) over all branches, kW.
    pub fn losses_kw(&self, circuit: &Circuit<T>) -> T {
        let mut total = T::zero();
        for (k, br) in circuit.branches.iter().enumerate() {
            let i = &self.currents[k];
            let bi = br.b.mul_vec(i);
            for p in 0..3 {
                total = total + (i[p].conj() * bi[p]).re;
            }
        }
        total / T::lit(1000.0)
    }

    /// Monitored voltages of regulator `r`, on the 120 V base.
    pub fn regulated_volts(&self, circuit: &Circuit<T>, r: usize) -> [T; 3] {
        let info = &circuit.regulators[r];
        let v = &self.voltages[info.monitored_node];
        [v[0].norm() / info.pt_ratio, v[1].norm() / info.pt_ratio, v[2].norm() / info.pt_ratio]
    }
}

fn node_injection<T: Scalar>(
    circuit: &Circuit<T>,
    input: &SnapshotInput<'_, T>,
    node_caps: &[Vec<usize>],
    n: usize,
    v: &Phasor3<T>,
) -> Result<Phasor3<T>, SolveError> {
    let node = &circuit.nodes[n];
    let mut i = node.shunt.mul_vec(v);
    for &c in &node_caps[n] {
        let mut cap = circuit.capacitors[c].1;
        cap.on = input.capacitors_on[c];
        i = add3(&i, &capacitor_current(&cap, v));
    }
    if let NodeKind::Service(lp) = node.kind {
        let il = load_current(&input.loads[lp], v, node.base_ln_volts)
            .map_err(|source| SolveError::Device { node: node.name.clone(), source })?;
        i = add3(&i, &il);
    }
    Ok(i)
}

fn flat_start<T: Scalar>(circuit: &Circuit<T>, taps: &[TapChanger<T>]) -> Vec<Phasor3<T>> {
    let mut v = vec![zero3(); circuit.nodes.len()];
    v[0] = circuit.source_emf;
    for n in 1..circuit.nodes.len() {
        let k = circuit.nodes[n].feeder_branch.expect("non-root node has a feeder branch");
        let (a, _, _) = circuit.branch_matrices(k, taps);
        v[n] = a.mul_vec(&v[circuit.branches[k].from]);
    }
    v
}

fn check_shape<T: Scalar>(input: &SnapshotInput<'_, T>) -> Result<(), SolveError> {
    let c = input.circuit;
    let checks = [
        ("load snapshots", input.loads.len(), c.load_points.len()),
        ("capacitor states", input.capacitors_on.len(), c.capacitors.len()),
        ("tap states", input.taps.len(), c.regulators.len()),
        ("warm-start voltages", input.warm_start.map_or(c.nodes.len(), <[_]>::len), c.nodes.len()),
    ];
    for (what, got, want) in checks {
        if got != want {
            return Err(SolveError::InputShape { what, got, want });
        }
    }
    Ok(())
}

/// Forward/backward sweep to a fixed point of the node voltages.
///
/// Stops when the largest per-phase voltage change falls below
/// `opts.tolerance` (p.u. of each node's base) or after `opts.max_iter`
/// sweeps; the returned currents come from the last backward sweep.
pub fn solve_snapshot<T: Scalar>(input: &SnapshotInput<'_, T>, opts: &SolveOptions<T>) -> Result<SnapshotSolution<T>, SolveError> {
    if !(opts.tolerance > T::zero()) {
        return Err(SolveError::BadTolerance);
    }
    check_shape(input)?;
    let circuit = input.circuit;
    let n_nodes = circuit.nodes.len();
    let n_br = circuit.branches.len();
    let mut node_caps = vec![Vec::new(); n_nodes];
    for (c, (n, _)) in circuit.capacitors.iter().enumerate() {
        node_caps[*n].push(c);
    }
    let mats: Vec<_> = (0..n_br).map(|k| circuit.branch_matrices(k, input.taps)).collect();

    let mut v = match input.warm_start {
        Some(w) => w.to_vec(),
        None => flat_start(circuit, input.taps),
    };
    let mut i_child = vec![zero3(); n_br];
    let mut i_parent = vec![zero3(); n_br];
    let mut source_current = zero3();
    let mut iterations = 0;
    let mut converged = false;
    let mut max_update = T::infinity();

    while iterations < opts.max_iter {
        iterations += 1;
        // backward: accumulate node currents from the leaves
        for n in (0..n_nodes).rev() {
            let mut total = node_injection(circuit, input, &node_caps, n, &v[n])?;
            for &k in &circuit.children[n] {
                total = add3(&total, &i_parent[k]);
            }
            match circuit.nodes[n].feeder_branch {
                Some(k) => {
                    i_child[k] = total;
                    i_parent[k] = mats[k].2.mul_vec(&total);
                }
                None => source_current = total,
            }
        }
        // forward: propagate voltages from the source
        let mut new_v = vec![zero3(); n_nodes];
        new_v[0] = sub3(&circuit.source_emf, &circuit.source_z.mul_vec(&source_current));
        for n in 1..n_nodes {
            let k = circuit.nodes[n].feeder_branch.expect("non-root node has a feeder branch");
            let (a, b, _) = &mats[k];
            new_v[n] = sub3(&a.mul_vec(&new_v[circuit.branches[k].from]), &b.mul_vec(&i_child[k]));
        }
        max_update = T::zero();
        for n in 0..n_nodes {
            let base = circuit.nodes[n].base_ln_volts;
            for p in 0..3 {
                max_update = max_update.max((new_v[n][p] - v[n][p]).norm() / base);
            }
        }
        v = new_v;
        if max_update < opts.tolerance {
            converged = true;
            break;
        }
    }

    let s0 = (0..3).fold(czero::<T>(), |acc, p| acc + v[0][p] * source_current[p].conj());
    Ok(SnapshotSolution {
        voltages: v,
        currents: i_child,
        parent_currents: i_parent,
        source_current,
        substation_kva: s0 / T::lit(1000.0),
        iterations,
        converged,
        max_update_pu: max_update,
    })
}

/// One percentage-error sample of the mismatch audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchSample {
    pub load_point: usize,
    pub error_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MismatchAudit {
    pub samples: Vec<MismatchSample>,
}

impl MismatchAudit {
    pub fn errors(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.error_pct).collect()
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.error_pct))
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut e = self.errors();
        e.sort_by(f64::total_cmp);
        crate::stats::quantile_sorted(&e, q)
    }
}

/// Compares the power each load bus draws according to the solved voltages
/// and branch currents with the power specified for it:
/// `|S_calc − S_spec| / max(|S_spec|, floor) · 100`.
pub fn audit_mismatch<T: Scalar>(sol: &SnapshotSolution<T>, input: &SnapshotInput<'_, T>) -> MismatchAudit {
    let circuit = input.circuit;
    let mut samples = Vec::with_capacity(circuit.load_points.len());
    for (li, lp) in circuit.load_points.iter().enumerate() {
        let node = lp.service_node;
        let k = circuit.nodes[node].feeder_branch.expect("service node has a branch");
        let v = &sol.voltages[node];
        let i = &sol.currents[k];
        let mut s_calc = czero::<T>();
        let mut s_spec = czero::<T>();
        for p in lp.phases.iter().map(Phase::index) {
            s_calc = s_calc + v[p] * i[p].conj();
            s_spec = s_spec + input.loads[li].phase_va(p);
        }
        let denom = s_spec.norm().as_f64().max(MISMATCH_FLOOR_VA);
        let error_pct = (s_calc - s_spec).norm().as_f64() / denom * 100.0;
        samples.push(MismatchSample { load_point: li, error_pct });
    }
    MismatchAudit { samples }
}

/// Largest KCL residual over all nodes and phases, amperes: the current
/// entering a node minus its injections (at the solved voltages) and the
/// currents leaving through its child branches.
pub fn kcl_residual<T: Scalar>(sol: &SnapshotSolution<T>, input: &SnapshotInput<'_, T>) -> Result<T, SolveError> {
    let circuit = input.circuit;
    let mut node_caps = vec![Vec::new(); circuit.nodes.len()];
    for (c, (n, _)) in circuit.capacitors.iter().enumerate() {
        node_caps[*n].push(c);
    }
    let mut worst = T::zero();
    for n in 0..circuit.nodes.len() {
        let incoming = match circuit.nodes[n].feeder_branch {
            Some(k) => sol.currents[k],
            None => sol.source_current,
        };
        let mut out = node_injection(circuit, input, &node_caps, n, &sol.voltages[n])?;
        for &k in &circuit.children[n] {
            out = add3(&out, &sol.parent_currents[k]);
        }
        for p in 0..3 {
            worst = worst.max((incoming[p] - out[p]).norm());
        }
    }
    Ok(worst)
}

/// A single tap movement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapEvent {
    pub regulator: usize,
    pub phase: Phase,
    pub old_tap: i32,
    pub new_tap: i32,
    /// Monitored voltage that triggered the move, 120 V base.
    pub trigger_v: f64,
}

#[derive(Debug, Clone)]
pub struct ControlledSolution<T: Scalar> {
    pub solution: SnapshotSolution<T>,
    pub taps: Vec<TapChanger<T>>,
    pub events: Vec<TapEvent>,
    pub control_iterations: usize,
}

/// Solves, then lets every regulator act once and re-solves, until no tap
/// moves or [`MAX_CONTROL_ITERATIONS`] is reached.
pub fn solve_controlled<T: Scalar>(
    circuit: &Circuit<T>,
    loads: &[LoadSnapshot<T>],
    capacitors_on: &[bool],
    taps: &[TapChanger<T>],
    warm_start: Option<&[Phasor3<T>]>,
    opts: &SolveOptions<T>,
) -> Result<ControlledSolution<T>, SolveError> {
    let mut taps = taps.to_vec();
    let mut events = Vec::new();
    let mut sol = solve_snapshot(&SnapshotInput { circuit, loads, capacitors_on, taps: &taps, warm_start }, opts)?;
    let mut control_iterations = 0;
    while control_iterations < MAX_CONTROL_ITERATIONS {
        control_iterations += 1;
        let mut next = taps.clone();
        let mut any = false;
        for (r, t) in taps.iter().enumerate() {
            let measured = sol.regulated_volts(circuit, r);
            let (new, changed) = regulator_step(t, measured);
            if changed {
                any = true;
                for p in t.phases.iter() {
                    let i = p.index();
                    if new.taps[i] != t.taps[i] {
                        events.push(TapEvent {
                            regulator: r,
                            phase: p,
                            old_tap: t.taps[i],
                            new_tap: new.taps[i],
                            trigger_v: measured[i].as_f64(),
                        });
                    }
                }
                next[r] = new;
            }
        }
        if !any {
            break;
        }
        taps = next;
        let warm = sol.voltages.clone();
        sol = solve_snapshot(&SnapshotInput { circuit, loads, capacitors_on, taps: &taps, warm_start: Some(&warm) }, opts)?;
    }
    Ok(ControlledSolution { solution: sol, taps, events, control_iterations })
}

/// Index of each model bus's node by id, for callers that address buses by name.
pub fn bus_lookup<T: Scalar>(circuit: &Circuit<T>) -> HashMap<String, usize> {
    circuit
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n.kind, NodeKind::Bus(_)))
        .map(|(i, n)| (n.name.clone(), i))
        .collect()
}

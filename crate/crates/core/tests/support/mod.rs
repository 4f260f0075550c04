//! Shared fixtures and an independent dense Newton power-flow oracle.
//!
//! The oracle assembles a nodal admittance matrix from physical elements:
//! line series/shunt admittances, the source equivalent, and every
//! transformer as single-phase windings wired by an incidence matrix. Ideal
//! couplers (switches, regulators) are eliminated by node merging. It then
//! solves the constant-power mismatch equations with Newton–Raphson in
//! rectangular coordinates. It shares no code with the sweep solver apart
//! from the per-segment line matrices, which are checked separately.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;

use feedersim_core::linecalc::segment_matrices;
use feedersim_core::model::{NetworkModel, SwitchPosition, WindingConnection};
use feedersim_core::{load_model, PhaseSet};
use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

pub const CASES: [&str; 4] = ["two_bus", "four_bus_unbalanced", "lateral_mix", "regulated_feeder"];

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/cases").join(format!("{name}.json"))
}

pub fn load_case(name: &str) -> NetworkModel {
    load_model(case_path(name)).unwrap_or_else(|e| panic!("case {name}: {e}"))
}

fn polar(mag: f64, deg: f64) -> C64 {
    C64::from_polar(mag, deg.to_radians())
}

/// Node key: bus (or load-point) id and phase index.
pub type Key = (String, usize);

pub struct NewtonSolution {
    pub voltages: BTreeMap<Key, C64>,
    pub base: BTreeMap<Key, f64>,
    /// Power delivered into the source bus, VA.
    pub source_power: C64,
    pub iterations: usize,
}

/// Element admittance stamp between full-system nodes.
struct Ybus {
    y: DMatrix<C64>,
}

impl Ybus {
    fn stamp(&mut self, nodes: &[usize], block: &DMatrix<C64>) {
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                self.y[(i, j)] += block[(a, b)];
            }
        }
    }

    /// Winding pair: primary voltage `vp = V[p0] − V[p1]` (p1 may be ground),
    /// secondary `vs = V[s]`, turns ratio `n`, leakage impedance on the
    /// secondary side.
    fn winding(&mut self, p0: usize, p1: Option<usize>, s: usize, n: f64, z: C64) {
        let y = C64::new(1.0, 0.0) / z;
        let yw = [[y / (n * n), -y / n], [-y / n, y]];
        // incidence rows: (node, sign) pairs per winding terminal
        let mut prim = vec![(p0, 1.0)];
        if let Some(p1) = p1 {
            prim.push((p1, -1.0));
        }
        let sec = vec![(s, 1.0)];
        let sides = [prim, sec];
        for (a, ra) in sides.iter().enumerate() {
            for (b, rb) in sides.iter().enumerate() {
                for &(i, si) in ra {
                    for &(j, sj) in rb {
                        self.y[(i, j)] += yw[a][b] * si * sj;
                    }
                }
            }
        }
    }
}

fn sequence_impedance(z1: C64, z0: C64) -> DMatrix<C64> {
    let a = polar(1.0, 120.0);
    let one = C64::new(1.0, 0.0);
    let t = DMatrix::from_row_slice(3, 3, &[one, one, one, one, a * a, a, one, a, a * a]);
    let t_inv = t.clone().try_inverse().expect("symmetrical components matrix");
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![z0, z1, z1]));
    &t * d * t_inv
}

/// Solves the network with the given per-load-point, per-phase complex
/// powers (VA), regulator taps and capacitor states.
pub fn newton_solve(
    model: &NetworkModel,
    loads: &BTreeMap<String, [C64; 3]>,
    taps: &BTreeMap<String, [i32; 3]>,
    capacitors_on: bool,
) -> NewtonSolution {
    // Energized buses by breadth-first search from the source.
    let bus_idx: HashMap<&str, usize> = model.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); model.buses.len()];
    let mut link = |a: &str, b: &str| {
        let (i, j) = (bus_idx[a], bus_idx[b]);
        adj[i].push(j);
        adj[j].push(i);
    };
    for s in model.segments.iter().filter(|s| s.normally_energized) {
        link(&s.from_bus, &s.to_bus);
    }
    for s in model.switches.iter().filter(|s| s.current_state == SwitchPosition::Closed) {
        link(&s.from_bus, &s.to_bus);
    }
    for t in &model.transformers {
        if let (Some(f), Some(to)) = (&t.from_bus, &t.to_bus) {
            link(f, to);
        }
    }
    for r in &model.regulators {
        link(&r.from_bus, &r.to_bus);
    }
    let root = bus_idx[model.source.bus.as_str()];
    let mut energized = vec![false; model.buses.len()];
    let mut queue = VecDeque::from([root]);
    energized[root] = true;
    while let Some(b) = queue.pop_front() {
        for &n in &adj[b] {
            if !energized[n] {
                energized[n] = true;
                queue.push_back(n);
            }
        }
    }

    // Full node list: EMF (3), bus phases, service phases.
    let mut index: BTreeMap<Key, usize> = BTreeMap::new();
    let mut base: BTreeMap<Key, f64> = BTreeMap::new();
    let mut n_full = 3;
    for (_, bus) in model.buses.iter().enumerate().filter(|(b, _)| energized[*b]) {
        for p in bus.phases.iter() {
            index.insert((bus.id.clone(), p.index()), n_full);
            base.insert((bus.id.clone(), p.index()), bus.nominal_ll_kv * 1000.0 / 3f64.sqrt());
            n_full += 1;
        }
    }
    for lp in model.load_points.iter().filter(|lp| energized[bus_idx[lp.bus.as_str()]]) {
        let t = model.transformer(&lp.transformer_id).unwrap();
        let v_base = if t.phase_count == 1 { t.secondary_kv * 1000.0 } else { t.secondary_kv * 1000.0 / 3f64.sqrt() };
        for p in lp.phases.iter() {
            index.insert((lp.id.clone(), p.index()), n_full);
            base.insert((lp.id.clone(), p.index()), v_base);
            n_full += 1;
        }
    }
    let node = |id: &str, p: usize| index[&(id.to_string(), p)];

    let mut yb = Ybus { y: DMatrix::from_element(n_full, n_full, C64::new(0.0, 0.0)) };

    // Source: EMF nodes 0..3 behind the sequence impedance.
    let src = &model.source;
    let zs = sequence_impedance(C64::new(src.r1, src.x1), C64::new(src.r0, src.x0));
    let ys = zs.try_inverse().expect("source impedance");
    let sb: Vec<usize> = (0..3).map(|p| node(&src.bus, p)).collect();
    let mut block = DMatrix::from_element(6, 6, C64::new(0.0, 0.0));
    block.view_mut((0, 0), (3, 3)).copy_from(&ys);
    block.view_mut((3, 3), (3, 3)).copy_from(&ys);
    block.view_mut((0, 3), (3, 3)).copy_from(&(-&ys));
    block.view_mut((3, 0), (3, 3)).copy_from(&(-&ys));
    yb.stamp(&[0, 1, 2, sb[0], sb[1], sb[2]], &block);
    let v_src = src.nominal_ll_kv * 1000.0 / 3f64.sqrt() * src.voltage_pu;
    let emf = [polar(v_src, src.angle_deg), polar(v_src, src.angle_deg - 120.0), polar(v_src, src.angle_deg + 120.0)];

    // Lines: series admittance plus half the shunt at each end.
    for seg in model.segments.iter().filter(|s| s.normally_energized && energized[bus_idx[s.from_bus.as_str()]]) {
        let m = segment_matrices::<f64>(seg, model).unwrap();
        let ph: Vec<usize> = seg.phases.iter().map(|p| p.index()).collect();
        let k = ph.len();
        let z = DMatrix::from_fn(k, k, |a, b| m.z[(a, b)]);
        let ysh = DMatrix::from_fn(k, k, |a, b| m.y_shunt[(a, b)]);
        let yser = z.try_inverse().expect("series impedance invertible");
        let mut block = DMatrix::from_element(2 * k, 2 * k, C64::new(0.0, 0.0));
        let half = ysh.map(|v| v * 0.5);
        block.view_mut((0, 0), (k, k)).copy_from(&(&yser + &half));
        block.view_mut((k, k), (k, k)).copy_from(&(&yser + &half));
        block.view_mut((0, k), (k, k)).copy_from(&(-&yser));
        block.view_mut((k, 0), (k, k)).copy_from(&(-&yser));
        let nodes: Vec<usize> =
            ph.iter().map(|&p| node(&seg.from_bus, p)).chain(ph.iter().map(|&p| node(&seg.to_bus, p))).collect();
        yb.stamp(&nodes, &block);
    }

    // Substation-style transformers between buses.
    for t in &model.transformers {
        let (Some(f), Some(to)) = (&t.from_bus, &t.to_bus) else { continue };
        if !energized[bus_idx[f.as_str()]] {
            continue;
        }
        let zbase = t.secondary_kv * t.secondary_kv * 1000.0 / t.kva;
        let z = C64::new(t.r_pct, t.x_pct) / 100.0 * zbase;
        match t.connection {
            WindingConnection::DeltaWye => {
                let n = t.primary_kv / (t.secondary_kv / 3f64.sqrt());
                // winding a across A–C, b across B–A, c across C–B
                for (s, (p0, p1)) in [(0, (0, 2)), (1, (1, 0)), (2, (2, 1))] {
                    yb.winding(node(f, p0), Some(node(f, p1)), node(to, s), n, z);
                }
            }
            WindingConnection::WyeWye => {
                let n = t.primary_kv / t.secondary_kv;
                for p in 0..3 {
                    yb.winding(node(f, p), None, node(to, p), n, z);
                }
            }
        }
    }

    // Service transformers.
    for lp in model.load_points.iter().filter(|lp| energized[bus_idx[lp.bus.as_str()]]) {
        let t = model.transformer(&lp.transformer_id).unwrap();
        let n = t.primary_kv / t.secondary_kv;
        let zbase = t.secondary_kv * t.secondary_kv * 1000.0 / t.kva;
        let z = C64::new(t.r_pct, t.x_pct) / 100.0 * zbase;
        for p in lp.phases.iter() {
            yb.winding(node(&lp.bus, p.index()), None, node(&lp.id, p.index()), n, z);
        }
    }

    // Capacitors as constant susceptance.
    if capacitors_on {
        for cap in &model.capacitors {
            let bus = model.bus(&cap.bus).unwrap();
            if !energized[bus_idx[cap.bus.as_str()]] {
                continue;
            }
            let v = bus.nominal_ll_kv * 1000.0 / 3f64.sqrt();
            let b = cap.kvar * 1000.0 / cap.phases.len() as f64 / (v * v);
            for p in cap.phases.iter() {
                let i = node(&cap.bus, p.index());
                yb.y[(i, i)] += C64::new(0.0, b);
            }
        }
    }

    // Ideal couplers: out = ratio · in.
    let mut depends: HashMap<usize, (usize, f64)> = HashMap::new();
    for s in model.switches.iter().filter(|s| s.current_state == SwitchPosition::Closed) {
        if energized[bus_idx[s.from_bus.as_str()]] {
            for p in s.phases.iter() {
                depends.insert(node(&s.to_bus, p.index()), (node(&s.from_bus, p.index()), 1.0));
            }
        }
    }
    for r in &model.regulators {
        let tap = taps.get(&r.id).copied().unwrap_or(r.initial_taps);
        for p in r.phases.iter() {
            let rho = 1.0 + r.step_pct / 100.0 * tap[p.index()] as f64;
            depends.insert(node(&r.to_bus, p.index()), (node(&r.from_bus, p.index()), rho));
        }
    }
    let resolve = |mut i: usize| {
        let mut f = 1.0;
        while let Some(&(j, r)) = depends.get(&i) {
            f *= r;
            i = j;
        }
        (i, f)
    };
    let independent: Vec<usize> = (3..n_full).filter(|i| !depends.contains_key(i)).collect();
    let col: HashMap<usize, usize> = independent.iter().enumerate().map(|(c, &i)| (i, c)).collect();
    let m = independent.len();
    // V_full = T · V_ind + E (EMF rows)
    let mut t = DMatrix::<f64>::zeros(n_full, m);
    for i in 3..n_full {
        let (j, f) = resolve(i);
        t[(i, col[&j])] = f;
    }
    let tc = t.map(|v| C64::new(v, 0.0));
    let y_red = tc.transpose() * &yb.y * &tc;
    let mut e_full = DVector::from_element(n_full, C64::new(0.0, 0.0));
    for p in 0..3 {
        e_full[p] = emf[p];
    }
    let i_fixed = tc.transpose() * (&yb.y * &e_full);

    let load_nodes: Vec<(usize, C64)> = model
        .load_points
        .iter()
        .filter(|lp| energized[bus_idx[lp.bus.as_str()]])
        .flat_map(|lp| {
            let s = loads.get(&lp.id).copied().unwrap_or([C64::new(0.0, 0.0); 3]);
            lp.phases.iter().map(move |p| (lp.id.clone(), p.index(), s[p.index()]))
        })
        .map(|(id, p, s)| (col[&index[&(id, p)]], s))
        .collect();

    // Initial guess: nominal magnitudes with angles propagated through the
    // delta–wye shift.
    let mut v = DVector::from_element(m, C64::new(0.0, 0.0));
    for (key, &i) in &index {
        if let Some(&c) = col.get(&i) {
            let mut angle = -120.0 * key.1 as f64;
            if key_downstream_of_delta(model, &key.0) {
                angle -= 30.0;
            }
            v[c] = polar(base[key], angle);
        }
    }

    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut f = &y_red * &v + &i_fixed;
        for &(c, s) in &load_nodes {
            f[c] += (s / v[c]).conj();
        }
        // Real Jacobian over x = [Re V; Im V].
        let mut j = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for r in 0..m {
            for c in 0..m {
                let y = y_red[(r, c)];
                j[(r, c)] = y.re;
                j[(r + m, c)] = y.im;
                j[(r, c + m)] = -y.im;
                j[(r + m, c + m)] = y.re;
            }
        }
        for &(c, s) in &load_nodes {
            // g = conj(s)/conj(v): dg/dx = −conj(s)/conj(v)², dg/dy = j·conj(s)/conj(v)²
            let d = -s.conj() / (v[c].conj() * v[c].conj());
            let dy = C64::new(0.0, -1.0) * d;
            j[(c, c)] += d.re;
            j[(c + m, c)] += d.im;
            j[(c, c + m)] += dy.re;
            j[(c + m, c + m)] += dy.im;
        }
        let rhs = DVector::from_fn(2 * m, |r, _| if r < m { -f[r].re } else { -f[r - m].im });
        let dx = j.lu().solve(&rhs).expect("Jacobian nonsingular");
        let mut step = 0.0f64;
        for c in 0..m {
            let dv = C64::new(dx[c], dx[c + m]);
            v[c] += dv;
            step = step.max(dv.norm());
        }
        if step < 1e-9 || iterations >= 50 {
            assert!(step < 1e-9, "Newton oracle failed to converge");
            break;
        }
    }

    let v_full = &tc * &v + &e_full;
    let mut voltages = BTreeMap::new();
    for (key, &i) in &index {
        voltages.insert(key.clone(), v_full[i]);
    }
    let mut source_power = C64::new(0.0, 0.0);
    let i_src = &ys * DVector::from_fn(3, |p, _| emf[p] - v_full[sb[p]]);
    for p in 0..3 {
        source_power += v_full[sb[p]] * i_src[p].conj();
    }
    NewtonSolution { voltages, base, source_power, iterations }
}

/// True when `id` is on the secondary side of a delta–wye transformer.
fn key_downstream_of_delta(model: &NetworkModel, id: &str) -> bool {
    let Some(t) = model.transformers.iter().find(|t| t.connection == WindingConnection::DeltaWye) else {
        return false;
    };
    let lp_bus = model.load_points.iter().find(|l| l.id == id).map(|l| l.bus.as_str());
    let bus = lp_bus.unwrap_or(id);
    let kv = model.bus(bus).map(|b| b.nominal_ll_kv);
    kv.is_some_and(|kv| (kv - t.secondary_kv).abs() < 1e-9)
}

/// Per-phase complex power (VA) for each load point of a case, scaled by `level`.
/// Phases get different power factors and magnitudes to keep the cases unbalanced.
pub fn case_loads(model: &NetworkModel, level: f64) -> BTreeMap<String, [C64; 3]> {
    model
        .load_points
        .iter()
        .enumerate()
        .map(|(k, lp)| {
            let t = model.transformer(&lp.transformer_id).unwrap();
            let per_phase = t.kva * 1000.0 / lp.phases.len() as f64 * 0.6 * level;
            let mut s = [C64::new(0.0, 0.0); 3];
            for p in lp.phases.iter() {
                let i = p.index();
                let mag = per_phase * (1.0 - 0.15 * ((i + k) % 3) as f64);
                let pf: f64 = [0.95, 0.9, 0.85][(i + 2 * k) % 3];
                s[i] = C64::new(mag * pf, mag * (1.0 - pf * pf).sqrt());
            }
            (lp.id.clone(), s)
        })
        .collect()
}

pub fn phases_of(model: &NetworkModel, id: &str) -> PhaseSet {
    model.bus(id).map(|b| b.phases).unwrap_or(PhaseSet::ABC)
}

use feedersim_core::devices::LoadSnapshot;
use feedersim_core::solver::{solve_snapshot, Circuit, SnapshotInput, SolveOptions};
use feedersim_core::timeseries::{LoadProfile, Provenance};

/// Constant-pf hourly profile for one load point.
pub fn profile(model: &NetworkModel, lp: &str, p_kw: Vec<f64>, pf: f64) -> LoadProfile {
    let phases = model.load_points.iter().find(|l| l.id == lp).unwrap().phases;
    let k = (1.0 - pf * pf).sqrt() / pf;
    LoadProfile {
        load_point: lp.to_string(),
        phases,
        q_kvar: p_kw.iter().map(|p| p * k).collect(),
        p_kw,
        provenance: Provenance::Synthetic,
        power_factors: Vec::new(),
    }
}

/// Highest monitored voltage (120 V base) of the first regulator at its
/// initial taps.
pub fn regulated_max(model: &NetworkModel, loads: &[LoadSnapshot<f64>]) -> [f64; 3] {
    let circuit = Circuit::<f64>::compile(model).unwrap();
    let taps = circuit.initial_taps();
    let caps = circuit.capacitor_states();
    let input = SnapshotInput { circuit: &circuit, loads, capacitors_on: &caps, taps: &taps, warm_start: None };
    let sol = solve_snapshot(&input, &SolveOptions::default()).unwrap();
    sol.regulated_volts(&circuit, 0)
}

/// Adjusts the source voltage so the highest regulated phase reads `target_v`
/// at the initial taps under `loads` (secant iteration).
pub fn tune_source(model: &mut NetworkModel, loads: &[LoadSnapshot<f64>], target_v: f64) {
    let f = |m: &NetworkModel| regulated_max(m, loads).iter().copied().fold(f64::MIN, f64::max) - target_v;
    let (mut x0, mut x1) = (1.0, 0.99);
    model.source.voltage_pu = x0;
    let mut f0 = f(model);
    for _ in 0..20 {
        model.source.voltage_pu = x1;
        let f1 = f(model);
        if f1.abs() < 1e-9 {
            return;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        (x0, f0, x1) = (x1, f1, x2);
    }
    panic!("source tuning did not converge");
}

//! Line constants: modified Carson self/mutual impedances, primitive matrix
//! assembly, Kron reduction and concentric-neutral cable capacitance.
//!
//! Units: resistance in Ω/mile, GMR and spacings in feet, cable radii in
//! inches. The Carson constants assume 60 Hz and 100 Ω·m earth resistivity.

use thiserror::Error;

use crate::linalg::{CMatrix, Mat3};
use crate::model::{CableSpec, ConductorSpec, Construction, LineSegment, NetworkModel};
use crate::phase::PhaseSet;
use crate::scalar::{Cplx, Scalar};

/// Earth-return resistance term, Ω/mile.
pub const EARTH_RETURN_R: f64 = 0.09530;
/// Reactance coefficient, Ω/mile per natural-log unit.
pub const CARSON_X_COEFF: f64 = 0.12134;
/// Constant added to ln(1/GMR) and ln(1/D).
pub const CARSON_X_OFFSET: f64 = 7.93402;
/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const METERS_PER_MILE: f64 = 1609.344;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineError {
    #[error("GMR must be positive, got {0}")]
    NonPositiveGmr(f64),
    #[error("conductor resistance must be positive, got {0}")]
    NonPositiveResistance(f64),
    #[error("wire distance must be positive, got {d} between wires {i} and {j}")]
    NonPositiveDistance { i: usize, j: usize, d: f64 },
    #[error("geometry gives {have} distances, need {need} wires")]
    MissingDistance { have: usize, need: usize },
    #[error("neutral block of the primitive matrix is singular")]
    SingularNeutral,
    #[error("cable geometry gives a non-positive capacitance denominator ({0})")]
    ImpossibleCable(f64),
    #[error("cable parameter {field} invalid: {reason}")]
    InvalidCable { field: &'static str, reason: String },
    #[error("segment `{segment}` references unknown {kind} `{id}`")]
    Unresolved { segment: String, kind: &'static str, id: String },
}

/// Resistance and GMR of one wire as it enters the primitive matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wire<T: Scalar> {
    pub resistance: T,
    pub gmr_ft: T,
}

impl<T: Scalar> Wire<T> {
    pub fn from_conductor(c: &ConductorSpec) -> Self {
        Wire { resistance: T::lit(c.resistance_ohm_per_mile), gmr_ft: T::lit(c.gmr_ft) }
    }
}

/// Self impedance of a conductor with earth return, Ω/mile.
pub fn self_impedance<T: Scalar>(resistance: T, gmr_ft: T) -> Result<Cplx<T>, LineError> {
    if !(gmr_ft > T::zero()) {
        return Err(LineError::NonPositiveGmr(gmr_ft.as_f64()));
    }
    let re = resistance + T::lit(EARTH_RETURN_R);
    let im = T::lit(CARSON_X_COEFF) * ((T::one() / gmr_ft).ln() + T::lit(CARSON_X_OFFSET));
    Ok(Cplx::new(re, im))
}

/// Mutual impedance between two conductors `d_ft` apart, Ω/mile.
pub fn mutual_impedance<T: Scalar>(d_ft: T) -> Result<Cplx<T>, LineError> {
    if !(d_ft > T::zero()) {
        return Err(LineError::NonPositiveDistance { i: 0, j: 0, d: d_ft.as_f64() });
    }
    let im = T::lit(CARSON_X_COEFF) * ((T::one() / d_ft).ln() + T::lit(CARSON_X_OFFSET));
    Ok(Cplx::new(T::lit(EARTH_RETURN_R), im))
}

/// Symmetric table of pairwise wire distances in feet.
#[derive(Debug, Clone, PartialEq)]
pub struct WireDistances<T: Scalar> {
    n: usize,
    d: Vec<T>,
}

impl<T: Scalar> WireDistances<T> {
    pub fn from_positions(positions: &[[T; 2]]) -> Self {
        let n = positions.len();
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                d[i * n + j] = dx.hypot(dy);
            }
        }
        WireDistances { n, d }
    }

    /// Builds from an explicit function; `f(i, j)` is only called for `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        WireDistances { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.d[i * self.n + j]
    }
}

/// Primitive impedance matrix with phase wires first, then neutrals.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveImpedance<T: Scalar> {
    pub n_phase: usize,
    pub n_neutral: usize,
    pub z: CMatrix<T>,
}

impl<T: Scalar> PrimitiveImpedance<T> {
    pub fn z_ij(&self) -> CMatrix<T> {
        self.z.block(0, 0, self.n_phase, self.n_phase)
    }
    pub fn z_in(&self) -> CMatrix<T> {
        self.z.block(0, self.n_phase, self.n_phase, self.n_neutral)
    }
    pub fn z_nj(&self) -> CMatrix<T> {
        self.z.block(self.n_phase, 0, self.n_neutral, self.n_phase)
    }
    pub fn z_nn(&self) -> CMatrix<T> {
        self.z.block(self.n_phase, self.n_phase, self.n_neutral, self.n_neutral)
    }
}

pub fn build_primitive<T: Scalar>(
    phase_wires: &[Wire<T>],
    neutral_wires: &[Wire<T>],
    distances: &WireDistances<T>,
) -> Result<PrimitiveImpedance<T>, LineError> {
    let wires: Vec<&Wire<T>> = phase_wires.iter().chain(neutral_wires).collect();
    let n = wires.len();
    if distances.len() < n {
        return Err(LineError::MissingDistance { have: distances.len(), need: n });
    }
    let mut z = CMatrix::zeros(n, n);
    for i in 0..n {
        if !(wires[i].resistance > T::zero()) {
            return Err(LineError::NonPositiveResistance(wires[i].resistance.as_f64()));
        }
        z[(i, i)] = self_impedance(wires[i].resistance, wires[i].gmr_ft)?;
        for j in 0..i {
            let d = distances.get(i, j);
            let zm = mutual_impedance(d).map_err(|_| LineError::NonPositiveDistance { i: j, j: i, d: d.as_f64() })?;
            z[(i, j)] = zm;
            z[(j, i)] = zm;
        }
    }
    Ok(PrimitiveImpedance { n_phase: phase_wires.len(), n_neutral: neutral_wires.len(), z })
}

/// Per-mile series impedance and shunt admittance over an ordered phase set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseImpedanceMatrix<T: Scalar> {
    pub phases: PhaseSet,
    /// Series impedance, Ω (per mile until scaled by length).
    pub z: CMatrix<T>,
    /// Shunt admittance jB, S (per mile until scaled). Zero for overhead lines.
    pub y_shunt: CMatrix<T>,
}

impl<T: Scalar> PhaseImpedanceMatrix<T> {
    pub fn scaled(&self, length: T) -> Self {
        PhaseImpedanceMatrix { phases: self.phases, z: self.z.scale(length), y_shunt: self.y_shunt.scale(length) }
    }

    /// Capacitive susceptance entry (S).
    pub fn shunt_b(&self, i: usize, j: usize) -> T {
        self.y_shunt[(i, j)].im
    }

    /// Embeds the compact matrices into 3×3 phase blocks.
    pub fn to_mat3(&self) -> (Mat3<T>, Mat3<T>) {
        let idx: Vec<usize> = self.phases.iter().map(|p| p.index()).collect();
        let mut z = Mat3::zero();
        let mut y = Mat3::zero();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                z.0[i][j] = self.z[(a, b)];
                y.0[i][j] = self.y_shunt[(a, b)];
            }
        }
        (z, y)
    }
}

/// Eliminates the neutral wires: z_abc = ẑ_ij − ẑ_in · ẑ_nn⁻¹ · ẑ_nj.
pub fn kron_reduce<T: Scalar>(p: &PrimitiveImpedance<T>, phases: PhaseSet) -> Result<PhaseImpedanceMatrix<T>, LineError> {
    assert_eq!(phases.len(), p.n_phase, "phase set must match phase wire count");
    let z_ij = p.z_ij();
    let z = if p.n_neutral == 0 {
        z_ij
    } else {
        let x = p.z_nn().solve(&p.z_nj()).map_err(|_| LineError::SingularNeutral)?;
        &z_ij - &(&p.z_in() * &x)
    };
    Ok(PhaseImpedanceMatrix { phases, y_shunt: CMatrix::zeros(p.n_phase, p.n_phase), z })
}

/// Geometry of one concentric-neutral cable, radii in inches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CableGeometry<T: Scalar> {
    pub strands: u32,
    /// Radius of the circle through the strand centres.
    pub neutral_circle_radius_in: T,
    pub phase_radius_in: T,
    pub strand_radius_in: T,
    /// Absolute permittivity, F/m.
    pub permittivity: T,
}

pub fn permittivity_from_relative<T: Scalar>(relative: T) -> T {
    relative * T::lit(VACUUM_PERMITTIVITY)
}

/// Phase-to-ground capacitance of a concentric-neutral cable, F/mile:
/// C = 2πε / (ln(R_b/RD_c) − (1/k)·ln(k·RD_s/R_b)).
pub fn cable_shunt_capacitance<T: Scalar>(g: &CableGeometry<T>) -> Result<T, LineError> {
    if g.strands == 0 {
        return Err(LineError::InvalidCable { field: "strands", reason: "need at least one strand".into() });
    }
    for (field, v) in [
        ("neutral_circle_radius", g.neutral_circle_radius_in),
        ("phase_radius", g.phase_radius_in),
        ("strand_radius", g.strand_radius_in),
        ("permittivity", g.permittivity),
    ] {
        if !(v > T::zero()) {
            return Err(LineError::InvalidCable { field, reason: format!("{} must be > 0", v.as_f64()) });
        }
    }
    let k = T::lit(f64::from(g.strands));
    let rb = g.neutral_circle_radius_in;
    let denom = (rb / g.phase_radius_in).ln() - (k * g.strand_radius_in / rb).ln() / k;
    if !(denom > T::zero()) {
        return Err(LineError::ImpossibleCable(denom.as_f64()));
    }
    Ok(T::TAU() * g.permittivity / denom * T::lit(METERS_PER_MILE))
}

/// Capacitive susceptance ωC at `frequency_hz`.
pub fn susceptance<T: Scalar>(capacitance: T, frequency_hz: T) -> T {
    T::TAU() * frequency_hz * capacitance
}

/// Equivalent single wire for `k` neutral strands on a circle of radius `r_ft`:
/// r/k and (GMR_s · k · R^(k−1))^(1/k).
pub fn concentric_neutral_wire<T: Scalar>(strand: Wire<T>, k: u32, r_ft: T) -> Wire<T> {
    let kt = T::lit(f64::from(k));
    let gmr = (strand.gmr_ft * kt * r_ft.powi(k as i32 - 1)).powf(T::one() / kt);
    Wire { resistance: strand.resistance / kt, gmr_ft: gmr }
}

/// Series impedance and shunt admittance of a segment, scaled by its length.
pub fn segment_matrices<T: Scalar>(seg: &LineSegment, model: &NetworkModel) -> Result<PhaseImpedanceMatrix<T>, LineError> {
    let per_mile = per_mile_matrices::<T>(seg, model)?;
    Ok(per_mile.scaled(T::lit(seg.length_mi)))
}

fn unresolved(seg: &LineSegment, kind: &'static str, id: &str) -> LineError {
    LineError::Unresolved { segment: seg.id.clone(), kind, id: id.to_string() }
}

fn conductor<'a>(model: &'a NetworkModel, seg: &LineSegment, id: &str) -> Result<&'a ConductorSpec, LineError> {
    model.conductor(id).ok_or_else(|| unresolved(seg, "conductor", id))
}

pub fn per_mile_matrices<T: Scalar>(seg: &LineSegment, model: &NetworkModel) -> Result<PhaseImpedanceMatrix<T>, LineError> {
    let geom = model.geometry(&seg.geometry_id).ok_or_else(|| unresolved(seg, "geometry", &seg.geometry_id))?;
    let positions: Vec<[T; 2]> = geom.positions_ft.iter().map(|p| [T::lit(p[0]), T::lit(p[1])]).collect();
    let np = seg.phase_wires.len();
    let nn = seg.neutral_wires.len();
    if positions.len() < np + nn {
        return Err(LineError::MissingDistance { have: positions.len(), need: np + nn });
    }
    let neutrals = seg
        .neutral_wires
        .iter()
        .map(|id| conductor(model, seg, id).map(Wire::from_conductor))
        .collect::<Result<Vec<Wire<T>>, _>>()?;

    match seg.construction {
        Construction::Overhead => {
            let phase = seg
                .phase_wires
                .iter()
                .map(|id| conductor(model, seg, id).map(Wire::from_conductor))
                .collect::<Result<Vec<Wire<T>>, _>>()?;
            let dist = WireDistances::from_positions(&positions[..np + nn]);
            let prim = build_primitive(&phase, &neutrals, &dist)?;
            kron_reduce(&prim, seg.phases)
        }
        Construction::Underground => {
            let cables = seg
                .phase_wires
                .iter()
                .map(|id| model.cable(id).ok_or_else(|| unresolved(seg, "cable", id)))
                .collect::<Result<Vec<&CableSpec>, _>>()?;
            underground_matrices(seg, model, &cables, &neutrals, &positions[..np + nn])
        }
    }
}

/// Concentric-neutral cables: phase conductors, then one equivalent neutral
/// per cable, then any extra bare neutrals. Shunt admittance is diagonal.
fn underground_matrices<T: Scalar>(
    seg: &LineSegment,
    model: &NetworkModel,
    cables: &[&CableSpec],
    extra_neutrals: &[Wire<T>],
    positions: &[[T; 2]],
) -> Result<PhaseImpedanceMatrix<T>, LineError> {
    let np = cables.len();
    let inches_to_ft = T::lit(1.0 / 12.0);
    let mut phase = Vec::with_capacity(np);
    let mut neutral = Vec::with_capacity(np + extra_neutrals.len());
    let mut radius_ft = Vec::with_capacity(np);
    let mut strands = Vec::with_capacity(np);
    let mut b_shunt = Vec::with_capacity(np);
    for cab in cables {
        let pc = conductor(model, seg, &cab.phase_conductor)?;
        let sc = conductor(model, seg, &cab.strand_conductor)?;
        let r_ft = T::lit(cab.neutral_circle_radius_in) * inches_to_ft;
        phase.push(Wire::from_conductor(pc));
        neutral.push(concentric_neutral_wire(Wire::from_conductor(sc), cab.strands, r_ft));
        radius_ft.push(r_ft);
        strands.push(cab.strands);
        let geom = CableGeometry {
            strands: cab.strands,
            neutral_circle_radius_in: T::lit(cab.neutral_circle_radius_in),
            phase_radius_in: T::lit(pc.diameter_in / 2.0),
            strand_radius_in: T::lit(sc.diameter_in / 2.0),
            permittivity: permittivity_from_relative(T::lit(cab.relative_permittivity)),
        };
        let cap = cable_shunt_capacitance(&geom)?;
        b_shunt.push(susceptance(cap, T::lit(model.frequency_hz)));
    }
    neutral.extend_from_slice(extra_neutrals);

    let centers = WireDistances::from_positions(positions);
    // Wire index layout: phases 0..np, concentric neutrals np..2np, extras after.
    let slot = |w: usize| if w < np { w } else { w - np };
    let total = 2 * np + extra_neutrals.len();
    // from_fn only asks for i < j, so a phase conductor is always `i`.
    let dist = WireDistances::from_fn(total, |i, j| {
        let (si, sj) = (slot(i), slot(j));
        let j_cn = (np..2 * np).contains(&j);
        if i < np && j_cn && si == sj {
            // phase conductor to its own neutral strands
            return radius_ft[si];
        }
        let d = centers.get(si, sj);
        if i < np && j_cn {
            // phase to another cable's neutral: (D^k − R^k)^(1/k)
            let k = strands[sj];
            (d.powi(k as i32) - radius_ft[sj].powi(k as i32)).powf(T::one() / T::lit(f64::from(k)))
        } else {
            d
        }
    });
    let prim = build_primitive(&phase, &neutral, &dist)?;
    let mut m = kron_reduce(&prim, seg.phases)?;
    for (i, b) in b_shunt.into_iter().enumerate() {
        m.y_shunt[(i, i)] = Cplx::new(T::zero(), b);
    }
    Ok(m)
}

//! Source equivalent, transformers, tap changer control, capacitor banks and
//! constant-power loads.

use thiserror::Error;

use crate::linalg::{zero3, Mat3, Phasor3};
use crate::model::{CapacitorBank, DeviceState, RegulatorSpec, TransformerSpec, WindingConnection};
use crate::phase::{Phase, PhaseSet};
use crate::scalar::{czero, Cplx, Scalar};

/// Loads refuse to convert below this voltage magnitude (p.u.).
pub const COLLAPSE_GUARD_PU: f64 = 0.5;
/// Regulator voltages are expressed on this secondary base.
pub const REGULATOR_BASE_V: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("transformer `{0}` has a non-positive rating")]
    ZeroRating(String),
    #[error("voltage on phase {phase} fell to {pu:.4} p.u., below the {COLLAPSE_GUARD_PU} p.u. collapse guard")]
    VoltageCollapse { phase: Phase, pu: f64 },
}

/// Phase-domain impedance from sequence impedances:
/// diagonal (z0 + 2·z1)/3, off-diagonal (z0 − z1)/3.
pub fn sequence_to_phase<T: Scalar>(z1: Cplx<T>, z0: Cplx<T>) -> Mat3<T> {
    let three = T::lit(3.0);
    let two = T::lit(2.0);
    let ds = (z0 + z1 * two) / three;
    let dm = (z0 - z1) / three;
    Mat3([[ds, dm, dm], [dm, ds, dm], [dm, dm, ds]])
}

/// Series impedance and connection behaviour of a two-winding transformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerBranch<T: Scalar> {
    /// R + jX on the transformer's own kVA base.
    pub z_pu_nameplate: Cplx<T>,
    /// The same impedance on the system kVA base.
    pub z_pu_system: Cplx<T>,
    pub system_base_kva: T,
    /// Secondary-to-primary angle, degrees; −30 for delta-wye (secondary lags).
    pub phase_shift_deg: T,
    /// Whether zero-sequence current passes through to the primary.
    pub passes_zero_sequence: bool,
}

pub fn transformer_branch<T: Scalar>(spec: &TransformerSpec, system_base_kva: T) -> Result<TransformerBranch<T>, DeviceError> {
    if !(spec.kva > 0.0) || !(system_base_kva > T::zero()) {
        return Err(DeviceError::ZeroRating(spec.id.clone()));
    }
    let z = Cplx::new(T::lit(spec.r_pct / 100.0), T::lit(spec.x_pct / 100.0));
    let (shift, zero_seq) = match spec.connection {
        WindingConnection::DeltaWye => (T::lit(-30.0), false),
        WindingConnection::WyeWye => (T::zero(), true),
    };
    Ok(TransformerBranch {
        z_pu_nameplate: z,
        z_pu_system: z * (system_base_kva / T::lit(spec.kva)),
        system_base_kva,
        phase_shift_deg: shift,
        passes_zero_sequence: zero_seq,
    })
}

impl<T: Scalar> TransformerBranch<T> {
    /// Converts the system-base impedance back to the nameplate base.
    pub fn nameplate_from_system(&self, kva: T) -> Cplx<T> {
        self.z_pu_system * (kva / self.system_base_kva)
    }
}

/// Per-phase leakage impedance referred to the secondary winding, Ω.
pub fn secondary_ohms<T: Scalar>(spec: &TransformerSpec) -> Cplx<T> {
    let n = f64::from(spec.phase_count);
    let v_winding = match (spec.phase_count, spec.connection) {
        (3, _) => spec.secondary_kv * 1000.0 / 3f64.sqrt(),
        _ => spec.secondary_kv * 1000.0,
    };
    let z_base = v_winding * v_winding / (spec.kva * 1000.0 / n);
    Cplx::new(T::lit(spec.r_pct / 100.0 * z_base), T::lit(spec.x_pct / 100.0 * z_base))
}

/// Voltage and current matrices of the ideal part of a step-down transformer:
/// `V_sec = A·V_pri − Z·I_sec`, `I_pri = D·I_sec`. For delta-wye, `A = Dᵀ` and
/// row sums of `D` vanish, so no zero-sequence current reaches the primary.
pub fn ideal_transformer_matrices<T: Scalar>(spec: &TransformerSpec) -> (Mat3<T>, Mat3<T>) {
    match spec.connection {
        WindingConnection::DeltaWye => {
            let nt = spec.primary_kv / (spec.secondary_kv / 3f64.sqrt());
            let a = Mat3::from_real([[1.0, 0.0, -1.0], [-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]])
                .scale(Cplx::new(T::lit(1.0 / nt), T::zero()));
            (a, a.transpose())
        }
        WindingConnection::WyeWye => {
            let n = spec.primary_kv / spec.secondary_kv;
            let a = Mat3::identity().scale(Cplx::new(T::lit(1.0 / n), T::zero()));
            (a, a)
        }
    }
}

/// Regulator settings on the 120 V base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapSettings<T: Scalar> {
    pub setpoint_v: T,
    pub bandwidth_v: T,
    pub vmax_v: T,
    pub vmin_v: T,
    pub max_tap: i32,
    /// Ratio change per step, per unit (0.00625 for a 5/8 % step).
    pub step_pu: T,
}

impl<T: Scalar> TapSettings<T> {
    pub fn from_spec(spec: &RegulatorSpec) -> Self {
        TapSettings {
            setpoint_v: T::lit(spec.setpoint_v),
            bandwidth_v: T::lit(spec.bandwidth_v),
            vmax_v: T::lit(spec.vmax_v),
            vmin_v: T::lit(spec.vmin_v),
            max_tap: spec.max_tap,
            step_pu: T::lit(spec.step_pct / 100.0),
        }
    }

    /// Volts per step on the 120 V base.
    pub fn step_v(&self) -> T {
        self.step_pu * T::lit(REGULATOR_BASE_V)
    }
}

/// Three independent single-phase tap changers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapChanger<T: Scalar> {
    pub settings: TapSettings<T>,
    pub phases: PhaseSet,
    pub taps: [i32; 3],
}

impl<T: Scalar> TapChanger<T> {
    pub fn from_spec(spec: &RegulatorSpec) -> Self {
        TapChanger { settings: TapSettings::from_spec(spec), phases: spec.phases, taps: spec.initial_taps }
    }

    /// Output/input voltage ratio of each phase.
    pub fn ratios(&self) -> [T; 3] {
        let mut r = [T::one(); 3];
        for p in self.phases.iter() {
            r[p.index()] = T::one() + self.settings.step_pu * T::lit(f64::from(self.taps[p.index()]));
        }
        r
    }
}

/// One control pass. Each phase independently raises one step below the band,
/// lowers one step above it, and holds when the move would leave the tap range
/// or push the regulated voltage outside [vmin, vmax].
pub fn regulator_step<T: Scalar>(tap: &TapChanger<T>, measured_v: [T; 3]) -> (TapChanger<T>, bool) {
    let s = &tap.settings;
    let half = s.bandwidth_v / T::lit(2.0);
    let step_v = s.step_v();
    let mut next = *tap;
    let mut changed = false;
    for p in tap.phases.iter() {
        let i = p.index();
        let v = measured_v[i];
        let t = tap.taps[i];
        let new = if v < s.setpoint_v - half && t < s.max_tap && v + step_v <= s.vmax_v {
            t + 1
        } else if v > s.setpoint_v + half && t > -s.max_tap && v - step_v >= s.vmin_v {
            t - 1
        } else {
            t
        };
        if new != t {
            next.taps[i] = new;
            changed = true;
        }
    }
    (next, changed)
}

/// Constant-susceptance model of a grounded-wye bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitorModel<T: Scalar> {
    pub phases: PhaseSet,
    /// Susceptance per phase, S.
    pub b_per_phase: T,
    pub on: bool,
}

impl<T: Scalar> CapacitorModel<T> {
    pub fn new(bank: &CapacitorBank, nominal_ln_volts: f64) -> Self {
        let q_phase = bank.kvar * 1000.0 / bank.phases.len() as f64;
        CapacitorModel {
            phases: bank.phases,
            b_per_phase: T::lit(q_phase / (nominal_ln_volts * nominal_ln_volts)),
            on: bank.state == DeviceState::On,
        }
    }
}

/// Current drawn by the bank, `jB·V` per phase (it leads the voltage, so the
/// bank delivers `B·|V|²` vars). Zero when the bank is off.
pub fn capacitor_current<T: Scalar>(cap: &CapacitorModel<T>, v: &Phasor3<T>) -> Phasor3<T> {
    let mut i = zero3();
    if !cap.on {
        return i;
    }
    for p in cap.phases.iter() {
        let k = p.index();
        i[k] = Cplx::new(T::zero(), cap.b_per_phase) * v[k];
    }
    i
}

/// Constant-power demand of a load point for one snapshot, per phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadSnapshot<T: Scalar> {
    pub p_kw: [T; 3],
    pub q_kvar: [T; 3],
}

impl<T: Scalar> LoadSnapshot<T> {
    pub fn zero() -> Self {
        LoadSnapshot { p_kw: [T::zero(); 3], q_kvar: [T::zero(); 3] }
    }

    /// Splits a total evenly over `phases`.
    pub fn balanced(phases: PhaseSet, p_kw: T, q_kvar: T) -> Self {
        let mut s = Self::zero();
        let n = T::lit(phases.len() as f64);
        for ph in phases.iter() {
            s.p_kw[ph.index()] = p_kw / n;
            s.q_kvar[ph.index()] = q_kvar / n;
        }
        s
    }

    pub fn total_kva(&self) -> Cplx<T> {
        (0..3).fold(czero(), |acc, k| acc + Cplx::new(self.p_kw[k], self.q_kvar[k]))
    }

    pub fn phase_va(&self, k: usize) -> Cplx<T> {
        Cplx::new(self.p_kw[k], self.q_kvar[k]) * T::lit(1000.0)
    }
}

/// Current drawn by a constant-power load, `conj(S/V)` per phase.
pub fn load_current<T: Scalar>(load: &LoadSnapshot<T>, v: &Phasor3<T>, base_ln_volts: T) -> Result<Phasor3<T>, DeviceError> {
    let mut i = zero3();
    let guard = T::lit(COLLAPSE_GUARD_PU);
    for (k, phase) in Phase::ALL.into_iter().enumerate() {
        let s = load.phase_va(k);
        if s.re == T::zero() && s.im == T::zero() {
            continue;
        }
        let pu = v[k].norm() / base_ln_volts;
        if !(pu >= guard) {
            return Err(DeviceError::VoltageCollapse { phase, pu: pu.as_f64() });
        }
        i[k] = (s / v[k]).conj();
    }
    Ok(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CapacitorConnection, WindingConnection};
    use crate::scalar::c;

    fn ltc() -> TapChanger<f64> {
        TapChanger {
            settings: TapSettings { setpoint_v: 123.0, bandwidth_v: 2.0, vmax_v: 129.0, vmin_v: 110.0, max_tap: 16, step_pu: 0.00625 },
            phases: PhaseSet::ABC,
            taps: [2, 2, 2],
        }
    }

    #[test]
    fn equal_sequences_give_diagonal() {
        let z = c::<f64>(1.0, 2.0);
        let m = sequence_to_phase(z, z);
        assert_eq!(m, Mat3::diag([z; 3]));
    }

    #[test]
    fn sequence_example_real() {
        let m = sequence_to_phase(c::<f64>(3.0, 0.0), c(0.0, 0.0));
        assert_eq!(m.0[0][0], c(2.0, 0.0));
        assert_eq!(m.0[0][1], c(-1.0, 0.0));
    }

    #[test]
    fn inside_band_holds() {
        let (next, changed) = regulator_step(&ltc(), [123.0; 3]);
        assert!(!changed);
        assert_eq!(next.taps, [2, 2, 2]);
    }

    #[test]
    fn low_phase_a_raises_two_to_three() {
        let (next, changed) = regulator_step(&ltc(), [121.7, 123.0, 123.0]);
        assert!(changed);
        assert_eq!(next.taps, [3, 2, 2]);
    }

    #[test]
    fn high_voltage_lowers() {
        let (next, changed) = regulator_step(&ltc(), [123.0, 124.6, 123.0]);
        assert!(changed);
        assert_eq!(next.taps, [2, 1, 2]);
    }

    #[test]
    fn saturated_tap_holds() {
        let mut t = ltc();
        t.taps = [16, 16, 16];
        let (next, changed) = regulator_step(&t, [121.0; 3]);
        assert!(!changed);
        assert_eq!(next.taps, [16; 3]);
    }

    #[test]
    fn raise_that_would_exceed_vmax_holds() {
        let mut t = ltc();
        t.settings.vmax_v = 122.5;
        t.settings.setpoint_v = 122.4;
        t.settings.bandwidth_v = 0.2;
        let (_, changed) = regulator_step(&t, [122.0; 3]);
        assert!(!changed);
    }

    #[test]
    fn capacitor_off_draws_nothing() {
        let bank = CapacitorBank {
            id: "c".into(),
            bus: "b".into(),
            phases: PhaseSet::ABC,
            kvar: 50.0,
            connection: CapacitorConnection::GroundedWye,
            state: DeviceState::Off,
        };
        let m = CapacitorModel::<f64>::new(&bank, 7967.4);
        let v = [c(7967.4, 0.0); 3];
        assert!(capacitor_current(&m, &v).iter().all(|i| i.norm() == 0.0));
    }

    #[test]
    fn zero_load_zero_current() {
        let i = load_current(&LoadSnapshot::<f64>::zero(), &[c(0.0, 0.0); 3], 7967.0).unwrap();
        assert!(i.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn collapse_guard() {
        let l = LoadSnapshot::balanced(PhaseSet::ABC, 30.0_f64, 10.0);
        let v = [c(3000.0, 0.0); 3];
        assert!(matches!(load_current(&l, &v, 7967.0), Err(DeviceError::VoltageCollapse { .. })));
    }

    #[test]
    fn zero_rating_rejected() {
        let t = TransformerSpec {
            id: "t".into(),
            phase_count: 3,
            kva: 0.0,
            primary_kv: 13.8,
            secondary_kv: 0.24,
            r_pct: 1.0,
            x_pct: 1.0,
            connection: WindingConnection::WyeWye,
            from_bus: None,
            to_bus: None,
        };
        assert!(transformer_branch(&t, 1000.0_f64).is_err());
    }
}

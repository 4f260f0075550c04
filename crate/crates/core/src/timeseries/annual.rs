//! The hourly simulation loop and its statistics.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    aggregate_to_transformer, clean_all, CleanParams, LoadProfile, MeterSeries, PfRange, Provenance, TimeseriesError,
    HOURS_PER_YEAR,
};
use crate::devices::LoadSnapshot;
use crate::model::NetworkModel;
use crate::phase::Phase;
use crate::solver::{audit_mismatch, solve_controlled, Circuit, NodeKind, SnapshotInput, SolveOptions};
use crate::stats::{quantile_sorted, Histogram};

/// Voltage histogram range and bin count, p.u.
pub const HIST_LO_PU: f64 = 0.90;
pub const HIST_HI_PU: f64 = 1.10;
pub const HIST_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Seed used for the power-factor draws; recorded for reproduction.
    pub seed: u64,
    pub hours: Range<usize>,
    pub pf: PfRange,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { tolerance: 1e-6, max_iter: 100, seed: 0, hours: 0..HOURS_PER_YEAR, pf: PfRange::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourRecord {
    pub hour: usize,
    /// Power delivered at the source bus.
    pub p_kw: f64,
    pub q_kvar: f64,
    /// Specified load summed over all load points.
    pub load_kw: f64,
    pub losses_kw: f64,
    pub converged: bool,
    /// Sweeps in the final solve of the hour.
    pub iterations: usize,
    pub control_iterations: usize,
    pub max_update_pu: f64,
    /// Tap positions per regulator after control settles.
    pub taps: Vec<[i32; 3]>,
    /// Monitored voltage per regulator on the 120 V base.
    pub regulated_v: Vec<[f64; 3]>,
    /// `p_kw − load_kw − losses_kw`.
    pub conservation_error_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourTapEvent {
    pub hour: usize,
    pub regulator: String,
    pub phase: Phase,
    pub old_tap: i32,
    pub new_tap: i32,
    pub trigger_v: f64,
}

/// Everything needed to reproduce a run, without wall-clock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model_name: String,
    pub model_sha256: String,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub hour_start: usize,
    pub hour_end: usize,
    pub pf_lo: f64,
    pub pf_hi: f64,
    pub scalar: String,
    pub feedersim_version: String,
    pub load_points: usize,
    pub buses: usize,
    pub nonconverged_hours: Vec<usize>,
    pub tap_events: usize,
    /// Where the load data came from, e.g. a meter file digest or synthetic parameters.
    #[serde(default)]
    pub input: String,
    /// Feeder the voltage summaries were restricted to, if any.
    #[serde(default)]
    pub feeder_filter: Option<String>,
}

/// Monitored bus of the annual run: node index plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BusTrace {
    pub bus: String,
    pub feeder: Option<String>,
    pub phases: Vec<Phase>,
    /// p.u. magnitude per hour, indexed like `phases`.
    pub voltage_pu: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnualResult {
    pub meta: RunMeta,
    pub hours: Vec<HourRecord>,
    pub events: Vec<HourTapEvent>,
    pub buses: Vec<BusTrace>,
    pub load_points: Vec<String>,
    /// Mismatch error (%) per hour and load point, row-major by hour.
    pub mismatch_pct: Vec<f64>,
    /// Hourly P and Q of the load points at one representative bus.
    pub sample_bus: Option<(String, Vec<(f64, f64)>)>,
}

impl AnnualResult {
    pub fn mismatch_row(&self, i: usize) -> &[f64] {
        let n = self.load_points.len();
        &self.mismatch_pct[i * n..(i + 1) * n]
    }

    pub fn mismatch_quantile(&self, q: f64) -> f64 {
        let mut e = self.mismatch_pct.clone();
        e.sort_by(f64::total_cmp);
        quantile_sorted(&e, q)
    }

    pub fn total_energy(&self) -> (f64, f64, f64) {
        self.hours.iter().fold((0.0, 0.0, 0.0), |(p, l, x), h| (p + h.p_kw, l + h.load_kw, x + h.losses_kw))
    }

    /// Drops the voltage traces of buses outside `feeder`.
    pub fn restrict_to_feeder(&mut self, feeder: &str) -> Result<(), TimeseriesError> {
        if !self.buses.iter().any(|b| b.feeder.as_deref() == Some(feeder)) {
            return Err(TimeseriesError::UnknownFeeder(feeder.to_string()));
        }
        self.buses.retain(|b| b.feeder.as_deref() == Some(feeder));
        self.meta.feeder_filter = Some(feeder.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusVoltageSummary {
    pub feeder: String,
    pub bus: String,
    pub phase: Phase,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub histogram: Histogram,
}

fn model_digest(model: &NetworkModel) -> String {
    let digest = Sha256::digest(model.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Cleans raw meter series, aggregates them to load points with power factors
/// drawn from `opts.seed`, and runs the year.
pub fn simulate_meters(
    model: &NetworkModel,
    meters: &[MeterSeries],
    provenance: Provenance,
    clean: &CleanParams,
    opts: &RunOptions,
) -> Result<AnnualResult, TimeseriesError> {
    let cleaned = clean_all(meters, clean)?;
    let profiles = aggregate_to_transformer(&cleaned, model, opts.seed, opts.pf, provenance)?;
    run_year(model, &profiles, opts)
}

/// Simulates the hours in `opts.hours` in order. Tap positions and node
/// voltages carry over from one hour to the next; hours that fail to
/// converge are recorded and the run continues.
pub fn run_year(model: &NetworkModel, profiles: &[LoadProfile], opts: &RunOptions) -> Result<AnnualResult, TimeseriesError> {
    let circuit = Circuit::<f64>::compile(model).map_err(|source| TimeseriesError::Solve { hour: opts.hours.start, source })?;
    let mut ordered = Vec::with_capacity(model.load_points.len());
    for lp in &model.load_points {
        let p = profiles
            .iter()
            .find(|p| p.load_point == lp.id)
            .ok_or_else(|| TimeseriesError::MissingProfile(lp.id.clone()))?;
        if p.hours() < opts.hours.end {
            return Err(TimeseriesError::ProfileLength { id: lp.id.clone(), got: p.hours(), want: opts.hours.end });
        }
        ordered.push(p);
    }
    let solve_opts = SolveOptions { tolerance: opts.tolerance, max_iter: opts.max_iter };
    let capacitors_on = circuit.capacitor_states();
    let mut taps = circuit.initial_taps();

    let mut buses: Vec<(usize, BusTrace)> = circuit
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n.kind, NodeKind::Bus(_)))
        .map(|(i, n)| {
            let phases: Vec<Phase> = n.phases.iter().collect();
            let traces = vec![Vec::with_capacity(opts.hours.len()); phases.len()];
            (i, BusTrace { bus: n.name.clone(), feeder: n.feeder.clone(), phases, voltage_pu: traces })
        })
        .collect();
    buses.sort_by(|a, b| a.1.bus.cmp(&b.1.bus));

    // Representative bus for the seasonal-load export: the one with the most load points.
    let sample_bus = {
        let mut counts = std::collections::BTreeMap::<&str, usize>::new();
        for lp in &model.load_points {
            *counts.entry(lp.bus.as_str()).or_default() += 1;
        }
        counts.iter().max_by_key(|(b, c)| (**c, std::cmp::Reverse(**b))).map(|(b, _)| b.to_string())
    };

    let mut hours = Vec::with_capacity(opts.hours.len());
    let mut events = Vec::new();
    let mut mismatch_pct = Vec::with_capacity(opts.hours.len() * circuit.load_points.len());
    let mut sample_series = Vec::new();
    let mut warm: Option<Vec<_>> = None;
    let mut nonconverged = Vec::new();

    for hour in opts.hours.clone() {
        let loads: Vec<LoadSnapshot<f64>> = ordered.iter().map(|p| p.snapshot(hour)).collect();
        let ctl = solve_controlled(&circuit, &loads, &capacitors_on, &taps, warm.as_deref(), &solve_opts)
            .map_err(|source| TimeseriesError::Solve { hour, source })?;
        let sol = &ctl.solution;
        let input = SnapshotInput { circuit: &circuit, loads: &loads, capacitors_on: &capacitors_on, taps: &ctl.taps, warm_start: None };
        mismatch_pct.extend(audit_mismatch(sol, &input).samples.iter().map(|s| s.error_pct));

        for e in &ctl.events {
            events.push(HourTapEvent {
                hour,
                regulator: circuit.regulators[e.regulator].id.clone(),
                phase: e.phase,
                old_tap: e.old_tap,
                new_tap: e.new_tap,
                trigger_v: e.trigger_v,
            });
        }
        for (node, trace) in buses.iter_mut() {
            let v = sol.voltage_pu(&circuit, *node);
            for (slot, p) in trace.voltage_pu.iter_mut().zip(&trace.phases) {
                slot.push(v[p.index()]);
            }
        }
        if let Some(bus) = &sample_bus {
            let (p, q) = model
                .load_points
                .iter()
                .zip(&ordered)
                .filter(|(lp, _)| &lp.bus == bus)
                .fold((0.0, 0.0), |(p, q), (_, prof)| (p + prof.p_kw[hour], q + prof.q_kvar[hour]));
            sample_series.push((p, q));
        }

        let load_kw: f64 = loads.iter().map(|l| l.p_kw.iter().sum::<f64>()).sum();
        let losses_kw = sol.losses_kw(&circuit);
        if !sol.converged {
            nonconverged.push(hour);
        }
        hours.push(HourRecord {
            hour,
            p_kw: sol.substation_kva.re,
            q_kvar: sol.substation_kva.im,
            load_kw,
            losses_kw,
            converged: sol.converged,
            iterations: sol.iterations,
            control_iterations: ctl.control_iterations,
            max_update_pu: sol.max_update_pu,
            taps: ctl.taps.iter().map(|t| t.taps).collect(),
            regulated_v: (0..circuit.regulators.len()).map(|r| sol.regulated_volts(&circuit, r)).collect(),
            conservation_error_kw: sol.substation_kva.re - load_kw - losses_kw,
        });
        taps = ctl.taps.clone();
        warm = Some(ctl.solution.voltages);
    }

    let meta = RunMeta {
        model_name: model.name.clone(),
        model_sha256: model_digest(model),
        seed: opts.seed,
        tolerance: opts.tolerance,
        max_iter: opts.max_iter,
        hour_start: opts.hours.start,
        hour_end: opts.hours.end,
        pf_lo: opts.pf.lo,
        pf_hi: opts.pf.hi,
        scalar: "f64".into(),
        feedersim_version: env!("CARGO_PKG_VERSION").into(),
        load_points: circuit.load_points.len(),
        buses: buses.len(),
        nonconverged_hours: nonconverged,
        tap_events: events.len(),
        input: "profiles".into(),
        feeder_filter: None,
    };
    Ok(AnnualResult {
        meta,
        hours,
        events,
        buses: buses.into_iter().map(|(_, t)| t).collect(),
        load_points: circuit.load_points.iter().map(|l| l.id.clone()).collect(),
        mismatch_pct,
        sample_bus: sample_bus.map(|b| (b, sample_series)),
    })
}

fn summarize(trace: &BusTrace) -> Vec<BusVoltageSummary> {
    trace
        .phases
        .iter()
        .zip(&trace.voltage_pu)
        .map(|(&phase, v)| {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            let mean = if s.is_empty() { f64::NAN } else { s.iter().sum::<f64>() / s.len() as f64 };
            BusVoltageSummary {
                feeder: trace.feeder.clone().unwrap_or_default(),
                bus: trace.bus.clone(),
                phase,
                min: quantile_sorted(&s, 0.0),
                q1: quantile_sorted(&s, 0.25),
                median: quantile_sorted(&s, 0.5),
                q3: quantile_sorted(&s, 0.75),
                max: quantile_sorted(&s, 1.0),
                mean,
                histogram: Histogram::build(&s, HIST_LO_PU, HIST_HI_PU, HIST_BINS),
            }
        })
        .collect()
}

/// Per-bus, per-phase voltage distribution of one feeder.
pub fn summarize_voltages(result: &AnnualResult, feeder: &str) -> Result<Vec<BusVoltageSummary>, TimeseriesError> {
    let traces: Vec<&BusTrace> = result.buses.iter().filter(|b| b.feeder.as_deref() == Some(feeder)).collect();
    if traces.is_empty() {
        return Err(TimeseriesError::UnknownFeeder(feeder.to_string()));
    }
    Ok(traces.into_iter().flat_map(summarize).collect())
}

/// Summaries for every bus, feeder or not, sorted by bus id.
pub fn summarize_all(result: &AnnualResult) -> Vec<BusVoltageSummary> {
    result.buses.iter().flat_map(summarize).collect()
}

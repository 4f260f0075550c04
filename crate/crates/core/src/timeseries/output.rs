//! Result files of an annual run. Column orders are fixed; numbers are
//! written with fixed precision so identical runs produce identical bytes.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{summarize_all, AnnualResult, RunMeta, TimeseriesError};
use crate::stats::quantile_sorted;

pub const RESULT_FILES: [&str; 6] = [
    "annual_substation.csv",
    "voltage_summary.csv",
    "tap_events.csv",
    "mismatch_samples.csv",
    "seasonal_load.csv",
    "run_meta.json",
];

/// 95th-percentile mismatch above this (%) is reported as a finding.
pub const MISMATCH_P95_LIMIT_PCT: f64 = 3e-3;
/// Regulated-voltage limits on the 120 V base.
pub const REGULATED_V_LIMITS: (f64, f64) = (110.0, 129.0);

fn io_err(path: &Path, source: std::io::Error) -> TimeseriesError {
    TimeseriesError::Io { path: path.display().to_string(), source }
}

fn write(dir: &Path, name: &str, body: String) -> Result<(), TimeseriesError> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| io_err(&path, e))
}

/// Writes every file in [`RESULT_FILES`] into `dir`, creating it if needed.
pub fn write_results(dir: impl AsRef<Path>, result: &AnnualResult) -> Result<(), TimeseriesError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut s = String::from("hour,p_kw,q_kvar,load_kw,losses_kw,converged,iterations,tap_a,tap_b,tap_c,v_reg_a,v_reg_b,v_reg_c\n");
    for h in &result.hours {
        let _ = write!(s, "{},{:.6},{:.6},{:.6},{:.6},{},{}", h.hour, h.p_kw, h.q_kvar, h.load_kw, h.losses_kw, h.converged, h.iterations);
        match (h.taps.first(), h.regulated_v.first()) {
            (Some(t), Some(v)) => {
                let _ = writeln!(s, ",{},{},{},{:.4},{:.4},{:.4}", t[0], t[1], t[2], v[0], v[1], v[2]);
            }
            _ => s.push_str(",,,,,,\n"),
        }
    }
    write(dir, RESULT_FILES[0], s)?;

    let mut s = String::from("feeder,bus,phase,min_pu,q1_pu,median_pu,q3_pu,max_pu,mean_pu,hist_lo_pu,hist_hi_pu,hist_counts\n");
    for v in summarize_all(result) {
        let counts: Vec<String> = v.histogram.counts.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3},{}",
            v.feeder,
            v.bus,
            v.phase.letter(),
            v.min,
            v.q1,
            v.median,
            v.q3,
            v.max,
            v.mean,
            v.histogram.lo,
            v.histogram.hi,
            counts.join(";")
        );
    }
    write(dir, RESULT_FILES[1], s)?;

    let mut s = String::from("hour,phase,old_tap,new_tap,trigger_voltage_v,regulator\n");
    for e in &result.events {
        let _ = writeln!(s, "{},{},{},{},{:.4},{}", e.hour, e.phase.letter(), e.old_tap, e.new_tap, e.trigger_v, e.regulator);
    }
    write(dir, RESULT_FILES[2], s)?;

    let mut s = String::with_capacity(result.mismatch_pct.len() * 24);
    s.push_str("hour,load_point,error_pct\n");
    for (i, h) in result.hours.iter().enumerate() {
        for (lp, e) in result.load_points.iter().zip(result.mismatch_row(i)) {
            let _ = writeln!(s, "{},{},{:.6e}", h.hour, lp, e);
        }
    }
    write(dir, RESULT_FILES[3], s)?;

    let mut s = String::from("hour,bus,p_kw,q_kvar\n");
    if let Some((bus, series)) = &result.sample_bus {
        for (h, (p, q)) in result.hours.iter().zip(series) {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", h.hour, bus, p, q);
        }
    }
    write(dir, RESULT_FILES[4], s)?;

    let mut meta = serde_json::to_string_pretty(&result.meta).expect("metadata serializes");
    meta.push('\n');
    write(dir, RESULT_FILES[5], meta)
}

#[derive(Debug, Deserialize)]
struct SubstationRow {
    hour: usize,
    p_kw: f64,
    q_kvar: f64,
    load_kw: f64,
    losses_kw: f64,
    converged: bool,
    v_reg_a: Option<f64>,
    v_reg_b: Option<f64>,
    v_reg_c: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct MismatchRow {
    error_pct: f64,
}

#[derive(Debug, Deserialize)]
struct VoltageRow {
    min_pu: f64,
    max_pu: f64,
}

/// Headline numbers of a result directory plus anything worth flagging.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub meta: RunMeta,
    pub hours: usize,
    pub peak_kva: f64,
    pub peak_hour: usize,
    pub energy_mwh: f64,
    pub load_mwh: f64,
    pub losses_mwh: f64,
    pub tap_events: usize,
    pub mismatch_p95_pct: f64,
    pub mismatch_max_pct: f64,
    pub voltage_range_pu: (f64, f64),
    pub regulated_range_v: (f64, f64),
    pub findings: Vec<String>,
}

fn read_csv<R: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Vec<R>, TimeseriesError> {
    let path = dir.join(name);
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| TimeseriesError::Results(path.display().to_string(), e.to_string()))?;
    reader
        .deserialize()
        .collect::<Result<Vec<R>, _>>()
        .map_err(|e| TimeseriesError::Results(path.display().to_string(), e.to_string()))
}

/// Reads a result directory written by [`write_results`].
pub fn read_report(dir: impl AsRef<Path>) -> Result<ReportSummary, TimeseriesError> {
    let dir = dir.as_ref();
    let meta_path = dir.join(RESULT_FILES[5]);
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: RunMeta = serde_json::from_str(&text)
        .map_err(|e| TimeseriesError::Results(meta_path.display().to_string(), e.to_string()))?;

    let rows: Vec<SubstationRow> = read_csv(dir, RESULT_FILES[0])?;
    let (mut peak_kva, mut peak_hour) = (0.0, 0);
    let (mut energy, mut load, mut losses) = (0.0, 0.0, 0.0);
    let mut reg = (f64::INFINITY, f64::NEG_INFINITY);
    let mut nonconverged = Vec::new();
    for r in &rows {
        let kva = r.p_kw.hypot(r.q_kvar);
        if kva > peak_kva {
            (peak_kva, peak_hour) = (kva, r.hour);
        }
        energy += r.p_kw;
        load += r.load_kw;
        losses += r.losses_kw;
        for v in [r.v_reg_a, r.v_reg_b, r.v_reg_c].into_iter().flatten() {
            reg = (reg.0.min(v), reg.1.max(v));
        }
        if !r.converged {
            nonconverged.push(r.hour);
        }
    }

    let mut errors: Vec<f64> = read_csv::<MismatchRow>(dir, RESULT_FILES[3])?.into_iter().map(|r| r.error_pct).collect();
    errors.sort_by(f64::total_cmp);
    let p95 = quantile_sorted(&errors, 0.95);
    let max = errors.last().copied().unwrap_or(f64::NAN);

    let volts: Vec<VoltageRow> = read_csv(dir, RESULT_FILES[1])?;
    let vr = volts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.min_pu), hi.max(r.max_pu)));

    let path = dir.join(RESULT_FILES[2]);
    let events = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?.lines().skip(1).filter(|l| !l.is_empty()).count();

    let mut findings = Vec::new();
    if !nonconverged.is_empty() {
        findings.push(format!("{} hour(s) did not converge, first at hour {}", nonconverged.len(), nonconverged[0]));
    }
    if p95 >= MISMATCH_P95_LIMIT_PCT {
        findings.push(format!("95th-percentile mismatch {p95:.3e} % is not below {MISMATCH_P95_LIMIT_PCT:e} %"));
    }
    if reg.0 < REGULATED_V_LIMITS.0 || reg.1 > REGULATED_V_LIMITS.1 {
        findings.push(format!(
            "regulated voltage range {:.2}..{:.2} V leaves {}..{} V",
            reg.0, reg.1, REGULATED_V_LIMITS.0, REGULATED_V_LIMITS.1
        ));
    }

    Ok(ReportSummary {
        meta,
        hours: rows.len(),
        peak_kva,
        peak_hour,
        energy_mwh: energy / 1000.0,
        load_mwh: load / 1000.0,
        losses_mwh: losses / 1000.0,
        tap_events: events,
        mismatch_p95_pct: p95,
        mismatch_max_pct: max,
        voltage_range_pu: vr,
        regulated_range_v: reg,
        findings,
    })
}

impl fmt::Display for ReportSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model            {}", self.meta.model_name)?;
        writeln!(f, "seed             {}", self.meta.seed)?;
        writeln!(f, "hours            {}", self.hours)?;
        writeln!(f, "peak demand      {:.1} kVA at hour {}", self.peak_kva, self.peak_hour)?;
        writeln!(f, "energy in        {:.3} MWh", self.energy_mwh)?;
        writeln!(f, "energy to loads  {:.3} MWh", self.load_mwh)?;
        writeln!(f, "losses           {:.3} MWh", self.losses_mwh)?;
        writeln!(f, "tap events       {}", self.tap_events)?;
        writeln!(f, "mismatch p95     {:.3e} %", self.mismatch_p95_pct)?;
        writeln!(f, "mismatch max     {:.3e} %", self.mismatch_max_pct)?;
        writeln!(f, "bus voltages     {:.4}..{:.4} p.u.", self.voltage_range_pu.0, self.voltage_range_pu.1)?;
        write!(f, "regulated        {:.2}..{:.2} V", self.regulated_range_v.0, self.regulated_range_v.1)
    }
}

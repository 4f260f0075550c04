//! Robust cleaning: rolling-median/MAD outlier screening, then gap repair.

use rayon::prelude::*;

use super::{MeterSeries, SampleFlag, TimeseriesError};

const HOURS_PER_WEEK: usize = 168;
/// Makes the MAD a consistent estimate of σ for normal data.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanParams {
    /// Outlier threshold in multiples of the rolling MAD (scaled by [`MAD_SCALE`]).
    pub mad_k: f64,
    /// Centered rolling window, hours.
    pub window: usize,
    /// Gaps up to this many hours are linearly interpolated.
    pub max_interp_gap: usize,
    /// Series with a larger missing fraction are rejected.
    pub max_missing_fraction: f64,
    /// Lower bound on the MAD so flat stretches don't flag rounding noise (kWh).
    pub mad_floor: f64,
}

impl Default for CleanParams {
    fn default() -> Self {
        CleanParams { mad_k: 6.0, window: 168, max_interp_gap: 3, max_missing_fraction: 0.5, mad_floor: 1e-6 }
    }
}

fn usable(flag: SampleFlag) -> bool {
    matches!(flag, SampleFlag::Ok | SampleFlag::Repaired)
}

/// Ascending window of usable samples, updated as the centre moves.
struct SortedWindow(Vec<f64>);

impl SortedWindow {
    fn insert(&mut self, v: f64) {
        let at = self.0.partition_point(|x| x.total_cmp(&v).is_lt());
        self.0.insert(at, v);
    }

    fn remove(&mut self, v: f64) {
        let at = self.0.partition_point(|x| x.total_cmp(&v).is_lt());
        self.0.remove(at);
    }

    fn median(&self) -> f64 {
        let a = &self.0;
        match a.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => a[n / 2],
            n => (a[n / 2 - 1] + a[n / 2]) / 2.0,
        }
    }

    /// `k`-th smallest (0-based) of `|a_i − m|`: the distances form two
    /// ascending runs on either side of `m`, so a binary search over how many
    /// come from the left run finds it without sorting.
    fn kth_distance(&self, m: f64, k: usize) -> f64 {
        let a = &self.0;
        let p = a.partition_point(|x| *x < m);
        let (nl, nr) = (p, a.len() - p);
        let l = |i: usize| m - a[p - 1 - i];
        let r = |j: usize| a[p + j] - m;
        let t = k + 1;
        let (mut lo, mut hi) = (t.saturating_sub(nr), t.min(nl));
        while lo < hi {
            let i = (lo + hi) / 2;
            if l(i) < r(t - i - 1) {
                lo = i + 1;
            } else {
                hi = i;
            }
        }
        let (i, j) = (lo, t - lo);
        let from_l = if i > 0 { l(i - 1) } else { f64::NEG_INFINITY };
        let from_r = if j > 0 { r(j - 1) } else { f64::NEG_INFINITY };
        from_l.max(from_r)
    }

    fn mad(&self, m: f64) -> f64 {
        match self.0.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => self.kth_distance(m, n / 2),
            n => (self.kth_distance(m, n / 2 - 1) + self.kth_distance(m, n / 2)) / 2.0,
        }
    }
}

/// Indices whose value deviates from the centered rolling median by more than
/// `mad_k` rolling MADs, plus samples already flagged outlier at ingest.
pub fn detect_outliers(s: &MeterSeries, params: &CleanParams) -> Vec<usize> {
    let n = s.kwh.len();
    let half = params.window / 2;
    let mut window = SortedWindow(Vec::with_capacity(params.window + 1));
    let (mut cur_lo, mut cur_hi) = (0, 0);
    let mut out = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + params.window - half).min(n);
        while cur_hi < hi {
            if usable(s.flags[cur_hi]) {
                window.insert(s.kwh[cur_hi]);
            }
            cur_hi += 1;
        }
        while cur_lo < lo {
            if usable(s.flags[cur_lo]) {
                window.remove(s.kwh[cur_lo]);
            }
            cur_lo += 1;
        }
        match s.flags[i] {
            SampleFlag::Outlier => {
                out.push(i);
                continue;
            }
            SampleFlag::Missing => continue,
            _ => {}
        }
        let med = window.median();
        let mad = (MAD_SCALE * window.mad(med)).max(params.mad_floor);
        if (s.kwh[i] - med).abs() > params.mad_k * mad {
            out.push(i);
        }
    }
    out
}

/// Flags and replaces outliers, then fills gaps: runs of at most
/// `max_interp_gap` hours with valid neighbours on both sides are linearly
/// interpolated, longer runs take the mean of valid samples at the same hour
/// of week. Every replaced sample is flagged repaired.
pub fn clean_series(s: &MeterSeries, params: &CleanParams) -> Result<MeterSeries, TimeseriesError> {
    let n = s.kwh.len();
    let missing = s.count(SampleFlag::Missing);
    if n == 0 || missing as f64 > params.max_missing_fraction * n as f64 {
        return Err(TimeseriesError::TooMuchMissing { meter: s.meter_id.clone(), missing, total: n });
    }
    let mut bad: Vec<bool> = s.flags.iter().map(|f| *f == SampleFlag::Missing).collect();
    for i in detect_outliers(s, params) {
        bad[i] = true;
    }
    let mut out = s.clone();
    if !bad.iter().any(|b| *b) {
        return Ok(out);
    }

    let mut week_sum = [0.0; HOURS_PER_WEEK];
    let mut week_cnt = [0usize; HOURS_PER_WEEK];
    let (mut all_sum, mut all_cnt) = (0.0, 0usize);
    for i in (0..n).filter(|&i| !bad[i]) {
        week_sum[i % HOURS_PER_WEEK] += s.kwh[i];
        week_cnt[i % HOURS_PER_WEEK] += 1;
        all_sum += s.kwh[i];
        all_cnt += 1;
    }
    let overall = if all_cnt > 0 { all_sum / all_cnt as f64 } else { 0.0 };
    let week_mean = |i: usize| {
        let k = i % HOURS_PER_WEEK;
        if week_cnt[k] > 0 {
            week_sum[k] / week_cnt[k] as f64
        } else {
            overall
        }
    };

    let mut i = 0;
    while i < n {
        if !bad[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && bad[i] {
            i += 1;
        }
        let end = i; // exclusive
        let len = end - start;
        let interpolate = len <= params.max_interp_gap && start > 0 && end < n;
        for j in start..end {
            out.kwh[j] = if interpolate {
                let (a, b) = (s.kwh[start - 1], s.kwh[end]);
                let t = (j - start + 1) as f64 / (len + 1) as f64;
                a + (b - a) * t
            } else {
                week_mean(j)
            };
            out.flags[j] = SampleFlag::Repaired;
        }
    }
    Ok(out)
}

/// Cleans many series in parallel, preserving order.
pub fn clean_all(meters: &[MeterSeries], params: &CleanParams) -> Result<Vec<MeterSeries>, TimeseriesError> {
    meters.par_iter().map(|m| clean_series(m, params)).collect()
}

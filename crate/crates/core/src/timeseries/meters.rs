//! Hourly meter series and the `timestamp_iso8601,meter_id,kwh` CSV format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Timelike};

use super::{is_leap_year, TimeseriesError, HOURS_PER_YEAR};

pub const METER_CSV_HEADER: [&str; 3] = ["timestamp_iso8601", "meter_id", "kwh"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleFlag {
    Ok,
    Missing,
    Repaired,
    Outlier,
}

/// One meter's hourly energy (kWh per hour) over one calendar year.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSeries {
    pub meter_id: String,
    pub year: i32,
    /// NaN where the sample is missing.
    pub kwh: Vec<f64>,
    pub flags: Vec<SampleFlag>,
}

impl MeterSeries {
    pub fn new(meter_id: impl Into<String>, year: i32, kwh: Vec<f64>) -> Self {
        let flags = kwh
            .iter()
            .map(|v| if v.is_nan() { SampleFlag::Missing } else if *v < 0.0 { SampleFlag::Outlier } else { SampleFlag::Ok })
            .collect();
        MeterSeries { meter_id: meter_id.into(), year, kwh, flags }
    }

    pub fn count(&self, flag: SampleFlag) -> usize {
        self.flags.iter().filter(|f| **f == flag).count()
    }
}

fn year_start(year: i32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year").and_hms_opt(0, 0, 0).expect("midnight")
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    let s = s.strip_suffix('Z').unwrap_or(s);
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a meter CSV from a file.
pub fn ingest_meters(path: impl AsRef<Path>) -> Result<Vec<MeterSeries>, TimeseriesError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TimeseriesError::Io { path: path.display().to_string(), source })?;
    read_meters(file)
}

/// Parses meter CSV rows into one series per meter, sorted by meter id.
/// Hours with no row are flagged missing, negative readings outlier.
pub fn read_meters(reader: impl Read) -> Result<Vec<MeterSeries>, TimeseriesError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| TimeseriesError::Schema { line: 1, message: e.to_string() })?
        .clone();
    if headers.iter().map(str::trim).ne(METER_CSV_HEADER.iter().copied()) {
        return Err(TimeseriesError::Schema {
            line: 1,
            message: format!("header must be `{}`", METER_CSV_HEADER.join(",")),
        });
    }

    struct Acc {
        kwh: Vec<f64>,
        seen: Vec<bool>,
        last: Option<usize>,
    }
    let mut year: Option<i32> = None;
    let mut meters: BTreeMap<String, Acc> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| TimeseriesError::Schema {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let schema = |message: String| TimeseriesError::Schema { line, message };
        if row.len() != 3 {
            return Err(schema(format!("expected 3 fields, found {}", row.len())));
        }
        let ts = parse_timestamp(&row[0]).ok_or_else(|| schema(format!("bad timestamp {:?}", &row[0])))?;
        let y = *year.get_or_insert_with(|| chrono::Datelike::year(&ts));
        if is_leap_year(y) {
            return Err(TimeseriesError::LeapYear(y));
        }
        let offset = ts - year_start(y);
        if offset < Duration::zero() || ts.minute() != 0 || ts.second() != 0 {
            return Err(schema(format!("timestamp {ts} is not an hour of {y}")));
        }
        let hour = offset.num_hours() as usize;
        if hour >= HOURS_PER_YEAR {
            return Err(schema(format!("timestamp {ts} is not an hour of {y}")));
        }
        let meter = row[1].trim();
        if meter.is_empty() {
            return Err(schema("empty meter id".into()));
        }
        let raw = row[2].trim();
        let value = if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
            f64::NAN
        } else {
            raw.parse::<f64>().map_err(|_| schema(format!("bad kwh value {raw:?}")))?
        };
        let acc = meters.entry(meter.to_string()).or_insert_with(|| Acc {
            kwh: vec![f64::NAN; HOURS_PER_YEAR],
            seen: vec![false; HOURS_PER_YEAR],
            last: None,
        });
        if acc.seen[hour] {
            return Err(TimeseriesError::Duplicate { line, meter: meter.to_string(), hour });
        }
        if acc.last.is_some_and(|l| hour < l) {
            return Err(TimeseriesError::NonMonotonic { line, meter: meter.to_string() });
        }
        acc.seen[hour] = true;
        acc.last = Some(hour);
        acc.kwh[hour] = value;
    }
    let year = year.unwrap_or(2017);
    Ok(meters.into_iter().map(|(id, acc)| MeterSeries::new(id, year, acc.kwh)).collect())
}

/// Writes series in meter-major order; missing samples are omitted.
pub fn write_meters_csv(path: impl AsRef<Path>, meters: &[MeterSeries]) -> Result<(), TimeseriesError> {
    let path = path.as_ref();
    let io = |source| TimeseriesError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{}", METER_CSV_HEADER.join(",")).map_err(io)?;
    for m in meters {
        let start = year_start(m.year);
        for (h, v) in m.kwh.iter().enumerate() {
            if m.flags[h] == SampleFlag::Missing {
                continue;
            }
            let ts = start + Duration::hours(h as i64);
            writeln!(w, "{},{},{:.6}", ts.format("%Y-%m-%dT%H:%M:%S"), m.meter_id, v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_for(hours: impl Iterator<Item = usize>, kwh: impl Fn(usize) -> String) -> String {
        let mut s = String::from("timestamp_iso8601,meter_id,kwh\n");
        let start = year_start(2017);
        for h in hours {
            let ts = start + Duration::hours(h as i64);
            s.push_str(&format!("{},m1,{}\n", ts.format("%Y-%m-%dT%H:%M:%S"), kwh(h)));
        }
        s
    }

    #[test]
    fn full_year_one_meter() {
        let text = csv_for(0..HOURS_PER_YEAR, |h| format!("{}", 1.0 + (h % 24) as f64 * 0.1));
        let m = read_meters(text.as_bytes()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].kwh.len(), HOURS_PER_YEAR);
        assert_eq!(m[0].count(SampleFlag::Ok), HOURS_PER_YEAR);
    }

    #[test]
    fn three_missing_hours_flagged() {
        let text = csv_for((0..HOURS_PER_YEAR).filter(|h| !(100..103).contains(h)), |_| "1.0".into());
        let m = read_meters(text.as_bytes()).unwrap();
        assert_eq!(m[0].count(SampleFlag::Missing), 3);
        assert_eq!(m[0].flags[101], SampleFlag::Missing);
    }

    #[test]
    fn negative_reading_is_outlier() {
        let text = csv_for(0..48, |h| if h == 5 { "-2.5".into() } else { "1.0".into() });
        let m = read_meters(text.as_bytes()).unwrap();
        assert_eq!(m[0].flags[5], SampleFlag::Outlier);
        assert_eq!(m[0].kwh[5], -2.5);
    }

    #[test]
    fn duplicate_rejected() {
        let mut text = csv_for(0..3, |_| "1.0".into());
        text.push_str("2017-01-01T02:00:00,m1,1.0\n");
        assert!(matches!(read_meters(text.as_bytes()), Err(TimeseriesError::Duplicate { hour: 2, .. })));
    }

    #[test]
    fn backwards_timestamp_rejected() {
        let text = csv_for([0usize, 2, 1].into_iter(), |_| "1.0".into());
        assert!(matches!(read_meters(text.as_bytes()), Err(TimeseriesError::NonMonotonic { .. })));
    }

    #[test]
    fn bad_header_rejected() {
        let text = "time,meter,energy\n2017-01-01T00:00:00,m1,1\n";
        assert!(matches!(read_meters(text.as_bytes()), Err(TimeseriesError::Schema { line: 1, .. })));
    }

    #[test]
    fn leap_year_rejected() {
        let text = "timestamp_iso8601,meter_id,kwh\n2016-01-01T00:00:00,m1,1\n";
        assert!(matches!(read_meters(text.as_bytes()), Err(TimeseriesError::LeapYear(2016))));
    }

    #[test]
    fn off_hour_timestamp_rejected() {
        let text = "timestamp_iso8601,meter_id,kwh\n2017-01-01T00:30:00,m1,1\n";
        assert!(matches!(read_meters(text.as_bytes()), Err(TimeseriesError::Schema { line: 2, .. })));
    }
}

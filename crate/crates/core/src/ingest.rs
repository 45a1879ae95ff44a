//! Raw record parsing and per-day profile assembly.
//!
//! Input is a UTF-8 CSV stream with header `timestamp,series_id,value`.
//! Records are grouped into daily curves on the clock domain (0h, 24h];
//! a midnight timestamp belongs to the *preceding* day as t = 24, so day
//! boundaries never split the hour-24 sample. Day indices are calendar
//! based (gap preserving): absent days stay absent without renumbering.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 3] = ["timestamp", "series_id", "value"];

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("malformed header: expected `timestamp,series_id,value`, got `{0}`")]
    MalformedHeader(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("day {day_index}: response and covariate grids share no time points")]
    EmptyIntersection { day_index: usize },
    #[error("profile bundle schema error: {0}")]
    SchemaMismatch(String),
    #[error("profile bundle version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

/// One raw observation: a timestamped value of a named series.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecord {
    pub timestamp: NaiveDateTime,
    pub series_id: String,
    pub value: f64,
}

/// One day's irregularly observed curve for a single series.
///
/// `times` are hours in (0, 24], strictly increasing; `values` is the same
/// length and all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyProfile {
    pub day_index: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl DailyProfile {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Pointwise-paired response/covariate observations for one day: the
/// intersection of the two series' time grids.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDay {
    pub day_index: usize,
    pub times: Vec<f64>,
    pub u_values: Vec<f64>,
    pub z_values: Vec<f64>,
}

impl AlignedDay {
    pub fn len(&self) -> usize {
        self.times.len()
    }
}

/// Parse a CSV stream into records. The header must match exactly; any
/// row with an unparseable timestamp or a non-finite value aborts the
/// parse with an error naming the offending line, so bad data is never
/// silently dropped.
pub fn parse_records<R: Read>(reader: R) -> Result<Vec<SensorRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| IngestError::MalformedHeader(e.to_string()))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != CSV_HEADER {
        return Err(IngestError::MalformedHeader(got.join(",")));
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let row = row.map_err(|e| IngestError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if row.len() != 3 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 3 fields, got {}", row.len()),
            });
        }
        let timestamp = parse_timestamp(&row[0]).ok_or_else(|| IngestError::MalformedRow {
            line,
            reason: format!("unparseable timestamp `{}`", &row[0]),
        })?;
        let value: f64 = row[2].parse().map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("unparseable value `{}`", &row[2]),
        })?;
        if !value.is_finite() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("non-finite value `{}`", &row[2]),
            });
        }
        records.push(SensorRecord {
            timestamp,
            series_id: row[1].to_string(),
            value,
        });
    }
    Ok(records)
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    None
}

/// The convention day a timestamp belongs to, together with its clock
/// position in (0, 24]: midnight maps to t = 24 of the previous date.
pub fn convention_day(ts: NaiveDateTime) -> (NaiveDate, f64) {
    let hour_of_day = ts.hour() as f64 + ts.minute() as f64 / 60.0 + ts.second() as f64 / 3600.0;
    if hour_of_day == 0.0 {
        (ts.date() - Duration::days(1), 24.0)
    } else {
        (ts.date(), hour_of_day)
    }
}

/// Earliest convention day across all records; the epoch that receives
/// day index 0. Computing it over the full (multi-series) record set keeps
/// day indices aligned between outputs and the covariate.
pub fn earliest_day(records: &[SensorRecord]) -> Option<NaiveDate> {
    records
        .iter()
        .map(|r| convention_day(r.timestamp).0)
        .min()
}

/// Group the records of `series_id` into per-day profiles. Days without
/// observations are simply absent. `epoch` is the date of day index 0;
/// records before it are discarded.
pub fn assemble_profiles(
    records: &[SensorRecord],
    series_id: &str,
    epoch: NaiveDate,
) -> Vec<DailyProfile> {
    let mut by_day: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.series_id == series_id) {
        let (day, t) = convention_day(r.timestamp);
        let offset = (day - epoch).num_days();
        if offset < 0 {
            log::warn!("record at {} predates epoch {epoch}; dropped", r.timestamp);
            continue;
        }
        by_day.entry(offset as usize).or_default().push((t, r.value));
    }

    let mut profiles = Vec::with_capacity(by_day.len());
    for (day_index, mut pts) in by_day {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times = Vec::with_capacity(pts.len());
        let mut values = Vec::with_capacity(pts.len());
        for (t, v) in pts {
            if times.last().is_some_and(|last: &f64| (t - last).abs() < 1e-9) {
                log::warn!("duplicate timestamp for {series_id} day {day_index} t={t}; keeping first");
                continue;
            }
            times.push(t);
            values.push(v);
        }
        profiles.push(DailyProfile { day_index, times, values });
    }
    profiles
}

/// Serialize profiles back to records (inverse of [`assemble_profiles`]
/// for minute-resolution times).
pub fn records_from_profiles(
    profiles: &[DailyProfile],
    series_id: &str,
    epoch: NaiveDate,
) -> Vec<SensorRecord> {
    let mut out = Vec::new();
    for p in profiles {
        for (&t, &v) in p.times.iter().zip(&p.values) {
            let date = epoch + Duration::days(p.day_index as i64);
            let secs = (t * 3600.0).round() as i64;
            let ts = date.and_hms_opt(0, 0, 0).expect("midnight exists") + Duration::seconds(secs);
            out.push(SensorRecord {
                timestamp: ts,
                series_id: series_id.to_string(),
                value: v,
            });
        }
    }
    out
}

/// Keep exactly the time points observed in both profiles of the same day.
pub fn align_day(u: &DailyProfile, z: &DailyProfile) -> Result<AlignedDay, IngestError> {
    assert_eq!(u.day_index, z.day_index, "profiles must share a day index");
    let tol = 1e-9;
    let mut times = Vec::new();
    let mut u_values = Vec::new();
    let mut z_values = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < u.times.len() && j < z.times.len() {
        let (tu, tz) = (u.times[i], z.times[j]);
        if (tu - tz).abs() <= tol {
            times.push(tu);
            u_values.push(u.values[i]);
            z_values.push(z.values[j]);
            i += 1;
            j += 1;
        } else if tu < tz {
            i += 1;
        } else {
            j += 1;
        }
    }
    if times.is_empty() {
        return Err(IngestError::EmptyIntersection { day_index: u.day_index });
    }
    Ok(AlignedDay {
        day_index: u.day_index,
        times,
        u_values,
        z_values,
    })
}

/// Outcome of the robust outlier screen.
#[derive(Debug, Clone, Default)]
pub struct OutlierReport {
    /// (day_index, time, value) of each removed point.
    pub removed: Vec<(usize, f64, f64)>,
    /// MAD was zero, so no screening was possible.
    pub degenerate_scale: bool,
    pub median: f64,
    pub mad: f64,
}

/// Remove points with |value - median| > k * MAD, median and MAD taken
/// over all points of the series. A zero MAD disables removal (reported,
/// with a warning).
pub fn filter_outliers(profiles: &[DailyProfile], k: f64) -> (Vec<DailyProfile>, OutlierReport) {
    assert!(k > 0.0, "outlier multiplier must be positive");
    let mut all: Vec<f64> = profiles.iter().flat_map(|p| p.values.iter().copied()).collect();
    if all.is_empty() {
        return (profiles.to_vec(), OutlierReport::default());
    }
    let med = median_in_place(&mut all);
    let mut devs: Vec<f64> = all.iter().map(|v| (v - med).abs()).collect();
    let mad = median_in_place(&mut devs);

    let mut report = OutlierReport {
        median: med,
        mad,
        ..OutlierReport::default()
    };
    if mad == 0.0 {
        log::warn!("outlier screen skipped: MAD is zero (degenerate scale)");
        report.degenerate_scale = true;
        return (profiles.to_vec(), report);
    }

    let threshold = k * mad;
    let mut kept = Vec::with_capacity(profiles.len());
    for p in profiles {
        let mut times = Vec::with_capacity(p.len());
        let mut values = Vec::with_capacity(p.len());
        for (&t, &v) in p.times.iter().zip(&p.values) {
            if (v - med).abs() > threshold {
                report.removed.push((p.day_index, t, v));
            } else {
                times.push(t);
                values.push(v);
            }
        }
        if !times.is_empty() {
            kept.push(DailyProfile {
                day_index: p.day_index,
                times,
                values,
            });
        }
    }
    (kept, report)
}

/// Keep aligned days with at least `min_points` paired observations.
pub fn usable_days(days: Vec<AlignedDay>, min_points: usize) -> Vec<AlignedDay> {
    assert!(min_points >= 1);
    days.into_iter().filter(|d| d.len() >= min_points).collect()
}

/// Observed-vs-expected accounting over a day-index window, assuming an
/// hourly cadence (24 expected points per day).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingReport {
    pub observed: usize,
    pub expected: usize,
    pub missing_fraction: f64,
}

pub fn missingness(profiles: &[DailyProfile], day_start: usize, day_end: usize) -> MissingReport {
    assert!(day_end > day_start, "window must be non-empty");
    let expected = 24 * (day_end - day_start);
    let observed: usize = profiles
        .iter()
        .filter(|p| p.day_index >= day_start && p.day_index < day_end)
        .map(|p| p.len())
        .sum();
    MissingReport {
        observed,
        expected,
        missing_fraction: 1.0 - observed as f64 / expected as f64,
    }
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0);
    values.sort_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Profile bundle document
// ---------------------------------------------------------------------------

pub const BUNDLE_VERSION: u32 = 1;

/// One series' profiles plus its role in the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesProfiles {
    pub series_id: String,
    pub role: SeriesRole,
    pub profiles: Vec<DailyProfile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesRole {
    Output,
    Covariate,
}

/// The JSON document produced by the `ingest` subcommand and consumed by
/// `fit` and `monitor`: all series, day-indexed against a common epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileBundle {
    pub version: u32,
    pub epoch_date: NaiveDate,
    pub series: Vec<SeriesProfiles>,
}

impl ProfileBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let bundle: ProfileBundle = serde_json::from_str(text)
            .map_err(|e| IngestError::SchemaMismatch(e.to_string()))?;
        if bundle.version != BUNDLE_VERSION {
            return Err(IngestError::VersionMismatch {
                found: bundle.version,
                expected: BUNDLE_VERSION,
            });
        }
        Ok(bundle)
    }

    pub fn series(&self, id: &str) -> Option<&SeriesProfiles> {
        self.series.iter().find(|s| s.series_id == id)
    }

    /// Last day index present in any series, or None when empty.
    pub fn last_day(&self) -> Option<usize> {
        self.series
            .iter()
            .flat_map(|s| s.profiles.iter().map(|p| p.day_index))
            .max()
    }
}

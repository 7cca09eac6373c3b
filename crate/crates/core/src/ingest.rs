//! Best-track ingestion.
//!
//! Input is delimited text with one row per fix and a header row. The
//! canonical layout is
//!
//! ```text
//! storm_id,name,datetime_utc,lat_deg,lon_deg,ecp_hpa,msws_kt
//! ```
//!
//! with empty fields for missing values and datetimes as `YYYY-MM-DD HH:MM`.
//! Other agency exports are adapted through a [`ColumnMap`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fix spacing of a best track, in hours.
pub const STEP_HOURS: i64 = 3;

/// Timestamps within this many minutes of the 3-hour grid are snapped onto it.
pub const SNAP_TOLERANCE_MINUTES: i64 = 30;

/// Longest run of absent 3-hourly fixes that imputation will bridge (24 h).
pub const MAX_BRIDGED_FIXES: usize = 7;

pub const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M";

pub const CANONICAL_HEADER: [&str; 7] = [
    "storm_id",
    "name",
    "datetime_utc",
    "lat_deg",
    "lon_deg",
    "ecp_hpa",
    "msws_kt",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Basin {
    /// Arabian Sea.
    #[serde(rename = "AS")]
    ArabianSea,
    /// Bay of Bengal.
    #[serde(rename = "BOB")]
    BayOfBengal,
    #[default]
    #[serde(rename = "OTHER")]
    Other,
}

impl Basin {
    fn parse(s: &str) -> Basin {
        match s.trim().to_ascii_uppercase().as_str() {
            "AS" | "ARB" | "ARABIAN SEA" => Basin::ArabianSea,
            "BOB" | "BAY OF BENGAL" => Basin::BayOfBengal,
            _ => Basin::Other,
        }
    }
}

/// Names of the source columns, so that non-canonical exports can be read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub storm_id: String,
    pub name: Option<String>,
    pub basin: Option<String>,
    pub datetime: String,
    pub lat: String,
    pub lon: String,
    pub ecp: String,
    pub msws: String,
    pub delimiter: char,
    pub datetime_format: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            storm_id: "storm_id".into(),
            name: Some("name".into()),
            basin: None,
            datetime: "datetime_utc".into(),
            lat: "lat_deg".into(),
            lon: "lon_deg".into(),
            ecp: "ecp_hpa".into(),
            msws: "msws_kt".into(),
            delimiter: ',',
            datetime_format: DATETIME_FORMAT.into(),
        }
    }
}

/// One parsed fix; any of the measured values may be missing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFix {
    pub timestamp: NaiveDateTime,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub ecp: Option<f64>,
    pub msws: Option<f64>,
}

/// A complete fix: latitude (°N), longitude (°E in `[0, 360)`), central
/// pressure (hPa) and MSWS (kt).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub ecp: f64,
    pub msws: f64,
}

/// Parser output: a storm whose fixes may still carry missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct GappyTrack {
    pub storm_id: String,
    pub name: Option<String>,
    pub basin: Basin,
    pub fixes: Vec<RawFix>,
}

/// A gap-free storm track at constant 3-hour spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycloneTrack {
    pub storm_id: String,
    pub name: Option<String>,
    pub basin: Basin,
    pub fixes: Vec<Fix>,
}

impl CycloneTrack {
    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }
}

impl From<&CycloneTrack> for GappyTrack {
    fn from(track: &CycloneTrack) -> Self {
        GappyTrack {
            storm_id: track.storm_id.clone(),
            name: track.name.clone(),
            basin: track.basin,
            fixes: track
                .fixes
                .iter()
                .map(|f| RawFix {
                    timestamp: f.timestamp,
                    lat: Some(f.lat),
                    lon: Some(f.lon),
                    ecp: Some(f.ecp),
                    msws: Some(f.msws),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRow {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecords {
    pub count: usize,
    pub by_reason: BTreeMap<String, usize>,
    pub rows: Vec<DroppedRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_rows: usize,
    pub storms_parsed: usize,
    pub fixes_parsed: usize,
    pub fixes_snapped: usize,
    /// Fixes created to fill absent 3-hour slots.
    pub fixes_inserted: usize,
    pub values_imputed: BTreeMap<String, usize>,
    pub records_dropped: DroppedRecords,
}

impl IngestReport {
    fn drop_row(&mut self, line: u64, reason: &str) {
        let dropped = &mut self.records_dropped;
        dropped.count += 1;
        *dropped.by_reason.entry(reason.to_string()).or_default() += 1;
        dropped.rows.push(DroppedRow {
            line,
            reason: reason.to_string(),
        });
    }

    pub fn record_imputation(&mut self, counts: &ImputeCounts) {
        self.fixes_inserted += counts.fixes_inserted;
        for (field, n) in [
            ("lat", counts.lat),
            ("lon", counts.lon),
            ("ecp", counts.ecp),
            ("msws", counts.msws),
        ] {
            *self.values_imputed.entry(field.to_string()).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImputeCounts {
    pub fixes_inserted: usize,
    pub lat: usize,
    pub lon: usize,
    pub ecp: usize,
    pub msws: usize,
}

impl ImputeCounts {
    pub fn total(&self) -> usize {
        self.lat + self.lon + self.ecp + self.msws
    }
}

struct ColumnIndex {
    storm_id: usize,
    name: Option<usize>,
    basin: Option<usize>,
    datetime: usize,
    lat: usize,
    lon: usize,
    ecp: usize,
    msws: usize,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, map: &ColumnMap) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| Error::Format(format!("header is missing column '{name}'")))
        };
        let optional = |name: &Option<String>| -> Result<Option<usize>> {
            match name {
                Some(n) => require(n).map(Some),
                None => Ok(None),
            }
        };
        Ok(ColumnIndex {
            storm_id: require(&map.storm_id)?,
            name: optional(&map.name)?,
            basin: optional(&map.basin)?,
            datetime: require(&map.datetime)?,
            lat: require(&map.lat)?,
            lon: require(&map.lon)?,
            ecp: require(&map.ecp)?,
            msws: require(&map.msws)?,
        })
    }
}

/// Rounds `ts` onto the 3-hour grid when it lies within the snap tolerance.
pub fn snap_to_grid(ts: NaiveDateTime) -> Option<NaiveDateTime> {
    let step = STEP_HOURS * 3600;
    let tol = SNAP_TOLERANCE_MINUTES * 60;
    let secs = ts.and_utc().timestamp();
    let rem = secs.rem_euclid(step);
    let snapped = if rem <= tol {
        secs - rem
    } else if step - rem <= tol {
        secs - rem + step
    } else {
        return None;
    };
    chrono::DateTime::from_timestamp(snapped, 0).map(|dt| dt.naive_utc())
}

fn parse_value(raw: &str) -> std::result::Result<Option<f64>, ()> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

struct ParsedRow {
    storm_id: String,
    name: Option<String>,
    basin: Basin,
    fix: RawFix,
    snapped: bool,
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &ColumnIndex,
    header_len: usize,
    map: &ColumnMap,
) -> std::result::Result<ParsedRow, &'static str> {
    if record.len() != header_len {
        return Err("wrong field count");
    }
    let storm_id = record[cols.storm_id].trim();
    if storm_id.is_empty() {
        return Err("missing storm_id");
    }
    let name = cols
        .name
        .map(|i| record[i].trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    let basin = cols
        .basin
        .map(|i| Basin::parse(&record[i]))
        .unwrap_or_default();

    let raw_ts = NaiveDateTime::parse_from_str(record[cols.datetime].trim(), &map.datetime_format)
        .map_err(|_| "unparseable datetime")?;
    let timestamp = snap_to_grid(raw_ts).ok_or("off-grid timestamp")?;

    let lat = parse_value(&record[cols.lat]).map_err(|_| "unparseable lat")?;
    if let Some(lat) = lat {
        if !(-90.0..=90.0).contains(&lat) {
            return Err("lat out of range");
        }
    }
    let mut lon = parse_value(&record[cols.lon]).map_err(|_| "unparseable lon")?;
    if let Some(l) = lon {
        if !(-180.0..360.0).contains(&l) {
            return Err("lon out of range");
        }
        if l < 0.0 {
            lon = Some(l + 360.0);
        }
    }
    let ecp = parse_value(&record[cols.ecp]).map_err(|_| "unparseable ecp")?;
    if matches!(ecp, Some(p) if p <= 0.0) {
        return Err("ecp not positive");
    }
    let msws = parse_value(&record[cols.msws]).map_err(|_| "unparseable msws")?;
    if matches!(msws, Some(w) if w < 0.0) {
        return Err("msws negative");
    }

    Ok(ParsedRow {
        storm_id: storm_id.to_string(),
        name,
        basin,
        fix: RawFix {
            timestamp,
            lat,
            lon,
            ecp,
            msws,
        },
        snapped: timestamp != raw_ts,
    })
}

/// Parses a best-track file into per-storm tracks (sorted by storm id) whose
/// fixes are sorted by time. Rows that cannot be used are counted in the
/// report with a reason; a duplicated `(storm_id, timestamp)` is an error.
pub fn parse_btd<R: Read>(source: R, map: &ColumnMap) -> Result<(Vec<GappyTrack>, IngestReport)> {
    if !map.delimiter.is_ascii() {
        return Err(Error::Format(format!(
            "delimiter {:?} is not a single-byte character",
            map.delimiter
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(map.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let header = reader.headers()?.clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::EmptyInput);
    }
    let cols = ColumnIndex::resolve(&header, map)?;

    let mut report = IngestReport::default();
    let mut storms: BTreeMap<String, GappyTrack> = BTreeMap::new();
    let mut seen: BTreeMap<(String, NaiveDateTime), u64> = BTreeMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        report.total_rows += 1;
        let row = match parse_row(&record, &cols, header.len(), map) {
            Ok(row) => row,
            Err(reason) => {
                report.drop_row(line, reason);
                continue;
            }
        };
        let key = (row.storm_id.clone(), row.fix.timestamp);
        if let Some(first) = seen.insert(key, line) {
            return Err(Error::DuplicateFix {
                storm_id: row.storm_id,
                timestamp: format!(
                    "{} (first seen on line {first})",
                    row.fix.timestamp.format(DATETIME_FORMAT)
                ),
                line,
            });
        }
        report.fixes_parsed += 1;
        if row.snapped {
            report.fixes_snapped += 1;
        }
        let track = storms
            .entry(row.storm_id.clone())
            .or_insert_with(|| GappyTrack {
                storm_id: row.storm_id.clone(),
                name: None,
                basin: row.basin,
                fixes: Vec::new(),
            });
        if track.name.is_none() {
            track.name = row.name;
        }
        track.fixes.push(row.fix);
    }

    let mut tracks: Vec<GappyTrack> = storms.into_values().collect();
    for track in &mut tracks {
        track.fixes.sort_by_key(|f| f.timestamp);
    }
    report.storms_parsed = tracks.len();
    Ok((tracks, report))
}

/// Fills missing values by linear interpolation in time. Absent 3-hour slots
/// (up to [`MAX_BRIDGED_FIXES`] in a row) are inserted first. Values before
/// the first present observation are back-filled, values after the last are
/// forward-filled.
pub fn impute_linear(track: &GappyTrack) -> Result<(CycloneTrack, ImputeCounts)> {
    let mut counts = ImputeCounts::default();
    if track.fixes.is_empty() {
        return Err(Error::Domain(format!("storm '{}' has no fixes", track.storm_id)));
    }

    let step = Duration::hours(STEP_HOURS);
    let mut grid: Vec<RawFix> = Vec::with_capacity(track.fixes.len());
    for (index, fix) in track.fixes.iter().enumerate() {
        if let Some(prev) = grid.last().copied() {
            let delta = fix.timestamp - prev.timestamp;
            if delta <= Duration::zero() || delta.num_seconds() % step.num_seconds() != 0 {
                return Err(Error::Domain(format!(
                    "storm '{}': fix {index} is not on the 3-hour grid after its predecessor",
                    track.storm_id
                )));
            }
            let absent = (delta.num_seconds() / step.num_seconds()) as usize - 1;
            if absent > MAX_BRIDGED_FIXES {
                return Err(Error::TrackGap {
                    storm_id: track.storm_id.clone(),
                    index,
                    hours: delta.num_hours(),
                });
            }
            for k in 1..=absent {
                grid.push(RawFix {
                    timestamp: prev.timestamp + step * k as i32,
                    lat: None,
                    lon: None,
                    ecp: None,
                    msws: None,
                });
            }
            counts.fixes_inserted += absent;
        }
        grid.push(*fix);
    }

    let fill = |field: &str, get: fn(&RawFix) -> Option<f64>| -> Result<(Vec<f64>, usize)> {
        let series: Vec<Option<f64>> = grid.iter().map(get).collect();
        interpolate_series(&series).ok_or_else(|| Error::UnimputableField {
            storm_id: track.storm_id.clone(),
            field: field.to_string(),
        })
    };
    let (lat, n_lat) = fill("lat", |f| f.lat)?;
    let (lon, n_lon) = fill("lon", |f| f.lon)?;
    let (ecp, n_ecp) = fill("ecp", |f| f.ecp)?;
    let (msws, n_msws) = fill("msws", |f| f.msws)?;
    counts.lat = n_lat;
    counts.lon = n_lon;
    counts.ecp = n_ecp;
    counts.msws = n_msws;

    let fixes = grid
        .iter()
        .enumerate()
        .map(|(i, f)| Fix {
            timestamp: f.timestamp,
            lat: lat[i],
            lon: lon[i],
            ecp: ecp[i],
            msws: msws[i],
        })
        .collect();

    Ok((
        CycloneTrack {
            storm_id: track.storm_id.clone(),
            name: track.name.clone(),
            basin: track.basin,
            fixes,
        },
        counts,
    ))
}

/// Linear interpolation over a uniformly spaced series with edge
/// back/forward fill. Returns `None` when no value is present.
pub fn interpolate_series(series: &[Option<f64>]) -> Option<(Vec<f64>, usize)> {
    let present: Vec<usize> = (0..series.len()).filter(|&i| series[i].is_some()).collect();
    let (&first, &last) = (present.first()?, present.last()?);
    let mut out = Vec::with_capacity(series.len());
    let mut filled = 0;
    let mut next = 0; // index into `present` of the first present index >= i
    for (i, value) in series.iter().enumerate() {
        if let Some(v) = value {
            out.push(*v);
            next += 1;
            continue;
        }
        filled += 1;
        let v = if i < first {
            series[first].unwrap()
        } else if i > last {
            series[last].unwrap()
        } else {
            let (lo, hi) = (present[next - 1], present[next]);
            let (y0, y1) = (series[lo].unwrap(), series[hi].unwrap());
            let t = (i - lo) as f64 / (hi - lo) as f64;
            y0 + (y1 - y0) * t
        };
        out.push(v);
    }
    Some((out, filled))
}

/// Which track invariant a [`Violation`] breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Empty,
    /// Timestamp not after its predecessor.
    Ordering,
    /// Gap to the predecessor is not exactly 3 hours.
    Spacing { hours: f64 },
    OffGrid,
    LatRange(f64),
    LonRange(f64),
    NonPositiveEcp(f64),
    NegativeMsws(f64),
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.index;
        match &self.kind {
            ViolationKind::Empty => write!(f, "track has no fixes"),
            ViolationKind::Ordering => write!(f, "timestamp not increasing at index {i}"),
            ViolationKind::Spacing { hours } => {
                write!(f, "spacing != 3h at index {i} ({hours} h)")
            }
            ViolationKind::OffGrid => write!(f, "timestamp off the 3-hour grid at index {i}"),
            ViolationKind::LatRange(v) => write!(f, "lat {v} out of range at index {i}"),
            ViolationKind::LonRange(v) => write!(f, "lon {v} out of range at index {i}"),
            ViolationKind::NonPositiveEcp(v) => write!(f, "ecp {v} not positive at index {i}"),
            ViolationKind::NegativeMsws(v) => write!(f, "msws {v} negative at index {i}"),
            ViolationKind::NonFinite => write!(f, "non-finite value at index {i}"),
        }
    }
}

/// Reports every invariant violation of `track`; empty iff the track is valid.
pub fn validate_track(track: &CycloneTrack) -> Vec<Violation> {
    let mut out = Vec::new();
    if track.fixes.is_empty() {
        out.push(Violation {
            index: 0,
            kind: ViolationKind::Empty,
        });
        return out;
    }
    let mut push = |index, kind| out.push(Violation { index, kind });
    for (i, fix) in track.fixes.iter().enumerate() {
        if snap_to_grid(fix.timestamp) != Some(fix.timestamp) {
            push(i, ViolationKind::OffGrid);
        }
        if i > 0 {
            let delta = fix.timestamp - track.fixes[i - 1].timestamp;
            if delta <= Duration::zero() {
                push(i, ViolationKind::Ordering);
            } else if delta != Duration::hours(STEP_HOURS) {
                push(
                    i,
                    ViolationKind::Spacing {
                        hours: delta.num_seconds() as f64 / 3600.0,
                    },
                );
            }
        }
        if ![fix.lat, fix.lon, fix.ecp, fix.msws].iter().all(|v| v.is_finite()) {
            push(i, ViolationKind::NonFinite);
            continue;
        }
        if !(-90.0..=90.0).contains(&fix.lat) {
            push(i, ViolationKind::LatRange(fix.lat));
        }
        if !(0.0..360.0).contains(&fix.lon) {
            push(i, ViolationKind::LonRange(fix.lon));
        }
        if fix.ecp <= 0.0 {
            push(i, ViolationKind::NonPositiveEcp(fix.ecp));
        }
        if fix.msws < 0.0 {
            push(i, ViolationKind::NegativeMsws(fix.msws));
        }
    }
    out
}

/// Parses and imputes in one pass, folding imputation counts into the report.
pub fn ingest<R: Read>(source: R, map: &ColumnMap) -> Result<(Vec<CycloneTrack>, IngestReport)> {
    let (gappy, mut report) = parse_btd(source, map)?;
    let mut tracks = Vec::with_capacity(gappy.len());
    for g in &gappy {
        let (track, counts) = impute_linear(g)?;
        report.record_imputation(&counts);
        tracks.push(track);
    }
    Ok((tracks, report))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes tracks in the canonical layout. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_btd<W: Write>(sink: W, tracks: &[GappyTrack]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(CANONICAL_HEADER)?;
    for track in tracks {
        for fix in &track.fixes {
            writer.write_record([
                track.storm_id.clone(),
                track.name.clone().unwrap_or_default(),
                fix.timestamp.format(DATETIME_FORMAT).to_string(),
                fmt_opt(fix.lat),
                fmt_opt(fix.lon),
                fmt_opt(fix.ecp),
                fmt_opt(fix.msws),
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io("<track writer>", e))?;
    Ok(())
}

/// Canonical CSV for complete tracks (the CLI's track cache).
pub fn write_tracks<W: Write>(sink: W, tracks: &[CycloneTrack]) -> Result<()> {
    let gappy: Vec<GappyTrack> = tracks.iter().map(GappyTrack::from).collect();
    write_btd(sink, &gappy)
}

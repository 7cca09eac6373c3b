//! Gridded sea-surface temperature with nearest-node lookup.
//!
//! File layout: header `date,lat_deg,lon_deg,sst_c`, one node sample per
//! row, empty `sst_c` for missing (e.g. land) nodes. Rows absent from the
//! file are also treated as missing.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Search radius, in grid cells, around a missing nearest node.
pub const FALLBACK_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SstGrid {
    lats: Vec<f64>,
    lons: Vec<f64>,
    dates: Vec<NaiveDate>,
    /// Indexed `[date][lat][lon]`.
    values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SstSample {
    pub celsius: f64,
    /// The nearest node was missing and a neighbour supplied the value.
    pub fallback: bool,
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Format(format!("SST {name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("SST {name} axis has non-finite values")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Format(format!("SST {name} axis is not strictly ascending")));
    }
    if axis.len() > 2 {
        let step = axis[1] - axis[0];
        if axis
            .windows(2)
            .any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step.abs().max(1.0))
        {
            return Err(Error::Format(format!("SST {name} axis is irregular")));
        }
    }
    Ok(())
}

/// Index of the axis node nearest to `x` (clamped; ties go to the lower node).
fn nearest(axis: &[f64], x: f64) -> usize {
    let upper = axis.partition_point(|&v| v < x);
    if upper == 0 {
        return 0;
    }
    if upper == axis.len() {
        return axis.len() - 1;
    }
    if x - axis[upper - 1] <= axis[upper] - x {
        upper - 1
    } else {
        upper
    }
}

impl SstGrid {
    pub fn new(
        lats: Vec<f64>,
        lons: Vec<f64>,
        dates: Vec<NaiveDate>,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        check_axis("lat", &lats)?;
        check_axis("lon", &lons)?;
        if dates.is_empty() || dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("SST date axis must be non-empty and strictly ascending".into()));
        }
        if dates.len() > 2 {
            let step = dates[1] - dates[0];
            if dates.windows(2).any(|w| w[1] - w[0] != step) {
                return Err(Error::Format("SST date axis is irregular".into()));
            }
        }
        let expected = lats.len() * lons.len() * dates.len();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "SST grid has {} values, axes imply {expected}",
                values.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("SST grid holds non-finite values".into()));
        }
        Ok(SstGrid {
            lats,
            lons,
            dates,
            values,
        })
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn value(&self, date: usize, lat: usize, lon: usize) -> Option<f64> {
        self.values[(date * self.lats.len() + lat) * self.lons.len() + lon]
    }

    fn nearest_date(&self, date: NaiveDate) -> usize {
        let upper = self.dates.partition_point(|&d| d < date);
        if upper == 0 {
            return 0;
        }
        if upper == self.dates.len() {
            return upper - 1;
        }
        let below = (date - self.dates[upper - 1]).num_days();
        let above = (self.dates[upper] - date).num_days();
        if below <= above {
            upper - 1
        } else {
            upper
        }
    }

    /// Value at the nearest node in latitude, longitude and date (each
    /// clamped to the grid). A missing nearest node falls back to the
    /// closest present node within [`FALLBACK_RADIUS`] cells on the same date.
    pub fn lookup(&self, lat: f64, lon: f64, date: NaiveDate) -> Result<SstSample> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::Domain(format!("non-finite SST query ({lat}, {lon})")));
        }
        // Tracks use [0, 360); grids may be stored in [-180, 180).
        let lon = if lon >= 180.0 && self.lons[0] < 0.0 {
            lon - 360.0
        } else {
            lon
        };
        let d = self.nearest_date(date);
        let i = nearest(&self.lats, lat);
        let j = nearest(&self.lons, lon);
        if let Some(v) = self.value(d, i, j) {
            return Ok(SstSample {
                celsius: v,
                fallback: false,
            });
        }

        let mut best: Option<(f64, f64)> = None;
        let lat_range = i.saturating_sub(FALLBACK_RADIUS)..=(i + FALLBACK_RADIUS).min(self.lats.len() - 1);
        for ii in lat_range {
            let lon_range =
                j.saturating_sub(FALLBACK_RADIUS)..=(j + FALLBACK_RADIUS).min(self.lons.len() - 1);
            for jj in lon_range {
                let Some(v) = self.value(d, ii, jj) else { continue };
                let dist = (self.lats[ii] - lat).powi(2) + (self.lons[jj] - lon).powi(2);
                if best.is_none_or(|(b, _)| dist < b) {
                    best = Some((dist, v));
                }
            }
        }
        best.map(|(_, v)| SstSample {
            celsius: v,
            fallback: true,
        })
        .ok_or_else(|| Error::SstUnavailable {
            lat,
            lon,
            date: date.to_string(),
        })
    }
}

fn sort_dedup(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Loads an SST grid from delimited text and validates axis regularity.
pub fn load_sst<R: Read>(source: R) -> Result<SstGrid> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyInput);
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("SST header is missing column '{name}'")))
    };
    let (c_date, c_lat, c_lon, c_sst) = (col("date")?, col("lat_deg")?, col("lon_deg")?, col("sst_c")?);

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::Format(format!("SST line {line}: bad {what}"));
        let date = NaiveDate::parse_from_str(&record[c_date], "%Y-%m-%d").map_err(|_| bad("date"))?;
        let lat: f64 = record[c_lat].parse().map_err(|_| bad("lat_deg"))?;
        let lon: f64 = record[c_lon].parse().map_err(|_| bad("lon_deg"))?;
        let sst = match &record[c_sst] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad("sst_c"))?),
        };
        rows.push((date, lat, lon, sst, line));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }

    let lats = sort_dedup(rows.iter().map(|r| r.1).collect());
    let lons = sort_dedup(rows.iter().map(|r| r.2).collect());
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
    dates.sort();
    dates.dedup();
    let date_index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();

    let mut values = vec![None; lats.len() * lons.len() * dates.len()];
    let mut filled = vec![false; values.len()];
    for (date, lat, lon, sst, line) in rows {
        let i = lats.binary_search_by(|v| v.total_cmp(&lat)).expect("lat on axis");
        let j = lons.binary_search_by(|v| v.total_cmp(&lon)).expect("lon on axis");
        let idx = (date_index[&date] * lats.len() + i) * lons.len() + j;
        if filled[idx] {
            return Err(Error::Format(format!(
                "SST line {line}: duplicate node ({date}, {lat}, {lon})"
            )));
        }
        filled[idx] = true;
        values[idx] = sst;
    }
    SstGrid::new(lats, lons, dates, values)
}

/// Writes a grid in the layout [`load_sst`] reads; missing nodes get an
/// empty `sst_c` field.
pub fn write_sst<W: Write>(sink: W, grid: &SstGrid) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["date", "lat_deg", "lon_deg", "sst_c"])?;
    for (d, date) in grid.dates.iter().enumerate() {
        for (i, lat) in grid.lats.iter().enumerate() {
            for (j, lon) in grid.lons.iter().enumerate() {
                writer.write_record([
                    date.format("%Y-%m-%d").to_string(),
                    lat.to_string(),
                    lon.to_string(),
                    grid.value(d, i, j).map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io("<sst writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn grid(values: Vec<Option<f64>>) -> SstGrid {
        // 5 x 5 nodes at 1 degree spacing, one date.
        SstGrid::new(
            (10..15).map(f64::from).collect(),
            (80..85).map(f64::from).collect(),
            vec![day("2019-05-01")],
            values,
        )
        .unwrap()
    }

    #[test]
    fn exact_node_hit() {
        let g = grid((0..25).map(|k| Some(25.0 + k as f64 * 0.1)).collect());
        let s = g.lookup(12.0, 83.0, day("2019-05-01")).unwrap();
        assert_eq!(s.celsius, g.value(0, 2, 3).unwrap());
        assert!(!s.fallback);
    }

    #[test]
    fn nearest_of_two_nodes() {
        let mut values = vec![Some(20.0); 25];
        values[0] = Some(28.0); // (10, 80)
        values[1] = Some(29.0); // (10, 81)
        let g = grid(values);
        let s = g.lookup(10.0, 80.4, day("2019-05-01")).unwrap();
        assert_eq!(s.celsius, 28.0);
    }

    #[test]
    fn missing_node_falls_back_to_nearest_present_neighbour() {
        // Query at node (12, 82), which is missing. Present nodes at squared
        // distances: east (12, 83) -> 1, north-east (13, 83) -> 2,
        // (14, 84) -> 8. East is nearest.
        let mut values = vec![None; 25];
        values[2 * 5 + 3] = Some(27.5);
        values[3 * 5 + 3] = Some(26.0);
        values[4 * 5 + 4] = Some(25.0);
        let g = grid(values);
        let s = g.lookup(12.0, 82.0, day("2019-05-01")).unwrap();
        assert_eq!(s.celsius, 27.5);
        assert!(s.fallback);
    }

    #[test]
    fn nothing_within_radius_is_unavailable() {
        let mut values = vec![None; 25];
        values[0] = Some(27.0); // (10, 80): 4 cells away in longitude from (10, 84)
        let g = grid(values);
        assert!(matches!(
            g.lookup(14.0, 84.0, day("2019-05-01")),
            Err(Error::SstUnavailable { .. })
        ));
    }

    #[test]
    fn dates_and_positions_clamp() {
        let g = grid((0..25).map(|k| Some(k as f64)).collect());
        let s = g.lookup(-50.0, 200.0, day("2030-01-01")).unwrap();
        assert_eq!(s.celsius, 4.0); // (10, 84)
    }

    #[test]
    fn loads_from_text() {
        let text = "date,lat_deg,lon_deg,sst_c\n\
                    2019-05-01,10,80,28.5\n2019-05-01,10,81,\n\
                    2019-05-01,11,80,28.0\n2019-05-01,11,81,27.9\n\
                    2019-05-02,10,80,28.6\n2019-05-02,11,81,27.8\n";
        let g = load_sst(text.as_bytes()).unwrap();
        assert_eq!(g.lats(), &[10.0, 11.0]);
        assert_eq!(g.dates().len(), 2);
        assert_eq!(g.value(0, 0, 1), None);
        assert_eq!(g.value(1, 1, 1), Some(27.8));
        assert_eq!(g.value(1, 0, 1), None);
        let s = g.lookup(10.2, 80.9, day("2019-05-01")).unwrap();
        assert!(s.fallback);
        // (11, 81) is 0.65 deg^2 away, (10, 80) is 0.85.
        assert_eq!(s.celsius, 27.9);
    }

    #[test]
    fn rejects_irregular_axis_and_duplicates() {
        let text = "date,lat_deg,lon_deg,sst_c\n2019-05-01,10,80,1\n2019-05-01,11,80,1\n2019-05-01,13,80,1\n";
        assert!(matches!(load_sst(text.as_bytes()), Err(Error::Format(_))));
        let text = "date,lat_deg,lon_deg,sst_c\n2019-05-01,10,80,1\n2019-05-01,10,80,2\n";
        assert!(matches!(load_sst(text.as_bytes()), Err(Error::Format(_))));
    }
}

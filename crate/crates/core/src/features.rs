//! Seven-feature representation of a track, min-max scaling, and IMD grades.
//!
//! Feature order is fixed: latitude, longitude, MSWS, central pressure,
//! distance from the previous fix, heading, sea-surface temperature. Every
//! feature except MSWS is scaled to `[-1, 1]`; MSWS stays in knots.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_distance, initial_bearing, LatLon};
use crate::ingest::CycloneTrack;
use crate::sst::SstGrid;

pub const FEATURE_COUNT: usize = 7;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["lat", "lon", "msws", "ecp", "distance", "direction", "sst"];

/// Column of MSWS in a feature row.
pub const MSWS_INDEX: usize = 2;

/// Features passed through the scaler, by column.
pub const SCALED_FEATURES: [usize; 6] = [0, 1, 3, 4, 5, 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub lat: f64,
    pub lon: f64,
    pub msws: f64,
    pub ecp: f64,
    /// Kilometres travelled since the previous fix.
    pub distance: f64,
    /// Heading in degrees clockwise from north.
    pub direction: f64,
    pub sst: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.lat,
            self.lon,
            self.msws,
            self.ecp,
            self.distance,
            self.direction,
            self.sst,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            lat: a[0],
            lon: a[1],
            msws: a[2],
            ecp: a[3],
            distance: a[4],
            direction: a[5],
            sst: a[6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub storm_id: String,
    pub name: Option<String>,
    pub timestamps: Vec<NaiveDateTime>,
    pub vectors: Vec<FeatureVector>,
    pub scaled: bool,
}

impl FeatureFrame {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// The first `n` fixes.
    pub fn prefix(&self, n: usize) -> FeatureFrame {
        let n = n.min(self.len());
        FeatureFrame {
            storm_id: self.storm_id.clone(),
            name: self.name.clone(),
            timestamps: self.timestamps[..n].to_vec(),
            vectors: self.vectors[..n].to_vec(),
            scaled: self.scaled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub distance_km: f64,
    pub direction_deg: f64,
}

/// Step distance and heading for each fix, measured from its predecessor.
/// The first fix gets distance 0 and the heading of the second step (0 for
/// single-fix tracks). Coincident consecutive fixes get heading 0.
pub fn derive_motion_features(track: &CycloneTrack) -> Result<Vec<Motion>> {
    let mut out = Vec::with_capacity(track.len());
    for pair in track.fixes.windows(2) {
        let p = LatLon::new(pair[0].lat, pair[0].lon);
        let q = LatLon::new(pair[1].lat, pair[1].lon);
        out.push(Motion {
            distance_km: haversine_distance(p, q)?,
            direction_deg: initial_bearing(p, q)?.degrees,
        });
    }
    let first = Motion {
        distance_km: 0.0,
        direction_deg: out.first().map_or(0.0, |m| m.direction_deg),
    };
    if !track.is_empty() {
        out.insert(0, first);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SstMatchStats {
    pub fallbacks: usize,
}

/// Builds the unscaled feature frame of a track, matching SST by nearest node.
pub fn build_feature_frame(track: &CycloneTrack, sst: &SstGrid) -> Result<(FeatureFrame, SstMatchStats)> {
    let motion = derive_motion_features(track)?;
    let mut stats = SstMatchStats::default();
    let mut vectors = Vec::with_capacity(track.len());
    for (fix, m) in track.fixes.iter().zip(&motion) {
        let s = sst.lookup(fix.lat, fix.lon, fix.timestamp.date())?;
        if s.fallback {
            stats.fallbacks += 1;
        }
        vectors.push(FeatureVector {
            lat: fix.lat,
            lon: fix.lon,
            msws: fix.msws,
            ecp: fix.ecp,
            distance: m.distance_km,
            direction: m.direction_deg,
            sst: s.celsius,
        });
    }
    Ok((
        FeatureFrame {
            storm_id: track.storm_id.clone(),
            name: track.name.clone(),
            timestamps: track.fixes.iter().map(|f| f.timestamp).collect(),
            vectors,
            scaled: false,
        },
        stats,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Fitted min-max scaler, `f(x) = a + (b - a) (x - min) / (max - min)`
/// with `a = -1`, `b = 1`, for each feature except MSWS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub features: Vec<FeatureRange>,
    pub a: f64,
    pub b: f64,
}

impl ScalerParams {
    fn range_of(&self, column: usize) -> Option<&FeatureRange> {
        let pos = SCALED_FEATURES.iter().position(|&c| c == column)?;
        self.features.get(pos)
    }

    /// Scales one value of feature `column`; MSWS is returned unchanged.
    pub fn scale_value(&self, column: usize, x: f64) -> f64 {
        match self.range_of(column) {
            Some(r) => self.a + (self.b - self.a) * ((x - r.min) / (r.max - r.min)),
            None => x,
        }
    }

    pub fn unscale_value(&self, column: usize, y: f64) -> f64 {
        match self.range_of(column) {
            Some(r) => r.min + ((y - self.a) / (self.b - self.a)) * (r.max - r.min),
            None => y,
        }
    }

    pub fn scale_row(&self, v: &FeatureVector) -> [f64; FEATURE_COUNT] {
        let mut row = v.to_array();
        for (c, x) in row.iter_mut().enumerate() {
            *x = self.scale_value(c, *x);
        }
        row
    }

    /// Number of scaled values in `frame` outside the fitted range.
    pub fn out_of_range(&self, frame: &FeatureFrame) -> usize {
        frame
            .vectors
            .iter()
            .map(|v| {
                let a = v.to_array();
                SCALED_FEATURES
                    .iter()
                    .zip(&self.features)
                    .filter(|(&c, r)| a[c] < r.min || a[c] > r.max)
                    .count()
            })
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let params: ScalerParams = serde_json::from_str(s)?;
        if params.features.len() != SCALED_FEATURES.len() {
            return Err(Error::Format(format!(
                "scaler has {} features, expected {}",
                params.features.len(),
                SCALED_FEATURES.len()
            )));
        }
        Ok(params)
    }
}

/// Fits per-feature min/max over the given (unscaled) training frames only.
pub fn fit_scaler(frames: &[FeatureFrame]) -> Result<ScalerParams> {
    if frames.iter().any(|f| f.scaled) {
        return Err(Error::Domain("cannot fit a scaler on scaled frames".into()));
    }
    let mut features = Vec::with_capacity(SCALED_FEATURES.len());
    for &c in &SCALED_FEATURES {
        let mut values = frames.iter().flat_map(|f| f.vectors.iter().map(move |v| v.to_array()[c]));
        let Some(first) = values.next() else {
            return Err(Error::EmptyInput);
        };
        let (min, max) = values.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if min >= max {
            return Err(Error::DegenerateFeature {
                feature: FEATURE_NAMES[c].to_string(),
                value: min,
            });
        }
        features.push(FeatureRange {
            name: FEATURE_NAMES[c].to_string(),
            min,
            max,
        });
    }
    Ok(ScalerParams {
        features,
        a: -1.0,
        b: 1.0,
    })
}

/// Scales every feature but MSWS. Values outside the fitted range map
/// outside `[-1, 1]`; see [`ScalerParams::out_of_range`].
///
/// Panics if `frame` is already scaled.
pub fn apply_scaler(params: &ScalerParams, frame: &FeatureFrame) -> FeatureFrame {
    assert!(!frame.scaled, "frame '{}' is already scaled", frame.storm_id);
    let vectors = frame
        .vectors
        .iter()
        .map(|v| FeatureVector::from_array(params.scale_row(v)))
        .collect();
    FeatureFrame {
        vectors,
        scaled: true,
        ..frame.clone()
    }
}

/// Exact algebraic inverse of [`apply_scaler`]. Panics if `frame` is not scaled.
pub fn invert_scaler(params: &ScalerParams, frame: &FeatureFrame) -> FeatureFrame {
    assert!(frame.scaled, "frame '{}' is not scaled", frame.storm_id);
    let vectors = frame
        .vectors
        .iter()
        .map(|v| {
            let mut row = v.to_array();
            for (c, y) in row.iter_mut().enumerate() {
                *y = params.unscale_value(c, *y);
            }
            FeatureVector::from_array(row)
        })
        .collect();
    FeatureFrame {
        vectors,
        scaled: false,
        ..frame.clone()
    }
}

/// IMD intensity grade derived from MSWS bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Grade {
    LowPressureArea = 0,
    Depression = 1,
    DeepDepression = 2,
    CyclonicStorm = 3,
    SevereCyclonicStorm = 4,
    VerySevereCyclonicStorm = 5,
    ExtremelySevereCyclonicStorm = 6,
    SuperCyclonicStorm = 7,
}

/// Lower MSWS edge (kt) of grades 1 through 7.
pub const GRADE_LOWER_EDGES: [f64; 7] = [17.0, 28.0, 34.0, 48.0, 64.0, 90.0, 120.0];

impl Grade {
    const ALL: [Grade; 8] = [
        Grade::LowPressureArea,
        Grade::Depression,
        Grade::DeepDepression,
        Grade::CyclonicStorm,
        Grade::SevereCyclonicStorm,
        Grade::VerySevereCyclonicStorm,
        Grade::ExtremelySevereCyclonicStorm,
        Grade::SuperCyclonicStorm,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            Grade::LowPressureArea => "LP",
            Grade::Depression => "D",
            Grade::DeepDepression => "DD",
            Grade::CyclonicStorm => "CS",
            Grade::SevereCyclonicStorm => "SCS",
            Grade::VerySevereCyclonicStorm => "VSCS",
            Grade::ExtremelySevereCyclonicStorm => "ESCS",
            Grade::SuperCyclonicStorm => "SS",
        }
    }
}

/// Grade for an MSWS value; band edges belong to the upper band.
pub fn classify_grade(msws: f64) -> Result<Grade> {
    if !msws.is_finite() || msws < 0.0 {
        return Err(Error::Domain(format!("MSWS {msws} must be a finite, non-negative knot value")));
    }
    let band = GRADE_LOWER_EDGES.iter().filter(|&&edge| msws >= edge).count();
    Ok(Grade::ALL[band])
}

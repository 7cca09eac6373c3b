//! Supervised windows, storm-level folds and named holdouts.
//!
//! A window starting at fix `s` takes fixes `s .. s+t1` as input (all seven
//! features) and the MSWS of fixes `s+t1 .. s+t1+t2` as target, in knots.
//! Windows never cross storms, and folds are assigned per storm so that no
//! storm contributes to both sides of a split.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureFrame, FEATURE_COUNT, MSWS_INDEX};
use crate::ingest::CycloneTrack;
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Observed 3-hour steps.
    pub t1: usize,
    /// Forecast 3-hour steps.
    pub t2: usize,
}

impl WindowSpec {
    pub fn new(t1: usize, t2: usize) -> Result<Self> {
        let spec = WindowSpec { t1, t2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 == 0 || self.t2 == 0 {
            return Err(Error::Domain(format!("t1 and t2 must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    pub fn span(&self) -> usize {
        self.t1 + self.t2
    }

    /// Number of windows in a storm of `len` fixes.
    pub fn windows_in(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.span())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub storm_id: String,
    pub start: usize,
    /// `t1 × 7` input rows.
    pub input: Matrix,
    /// MSWS targets in knots.
    pub target: Vec<f64>,
}

impl WindowSample {
    /// MSWS of the last observed fix (the persistence forecast).
    pub fn last_observed_msws(&self) -> f64 {
        self.input.get(self.input.rows() - 1, MSWS_INDEX)
    }
}

/// All windows of one frame, in start order. Frames are expected to be
/// scaled; MSWS is unscaled either way.
pub fn build_windows(frame: &FeatureFrame, spec: WindowSpec) -> Vec<WindowSample> {
    (0..spec.windows_in(frame.len()))
        .map(|start| {
            let rows: Vec<f64> = frame.vectors[start..start + spec.t1]
                .iter()
                .flat_map(|v| v.to_array())
                .collect();
            let target = frame.vectors[start + spec.t1..start + spec.span()]
                .iter()
                .map(|v| v.msws)
                .collect();
            WindowSample {
                storm_id: frame.storm_id.clone(),
                start,
                input: Matrix::from_vec(spec.t1, FEATURE_COUNT, rows),
                target,
            }
        })
        .collect()
}

/// Windows of several frames, ordered by storm id then start index.
pub fn build_all_windows(frames: &[FeatureFrame], spec: WindowSpec) -> Vec<WindowSample> {
    let mut sorted: Vec<&FeatureFrame> = frames.iter().collect();
    sorted.sort_by(|a, b| a.storm_id.cmp(&b.storm_id));
    sorted.into_iter().flat_map(|f| build_windows(f, spec)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCount {
    pub samples: usize,
    /// Storms contributing at least one window.
    pub storms: usize,
}

pub fn count_windows_by_len(lengths: impl IntoIterator<Item = usize>, spec: WindowSpec) -> WindowCount {
    lengths
        .into_iter()
        .map(|len| spec.windows_in(len))
        .fold(WindowCount::default(), |acc, n| WindowCount {
            samples: acc.samples + n,
            storms: acc.storms + usize::from(n > 0),
        })
}

pub fn count_windows(tracks: &[CycloneTrack], spec: WindowSpec) -> WindowCount {
    count_windows_by_len(tracks.iter().map(CycloneTrack::len), spec)
}

/// Assignment of storms to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
    pub holdout: BTreeSet<String>,
}

impl FoldPlan {
    pub fn fold_of(&self, storm_id: &str) -> Option<usize> {
        self.assignment.get(storm_id).copied()
    }

    pub fn fold_members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the (sorted, de-duplicated) storm ids with a seeded RNG and
/// deals them round-robin into `k` folds. Input order does not matter.
pub fn kfold_split(storm_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut ids: Vec<String> = storm_ids.to_vec();
    ids.sort();
    ids.dedup();
    if k < 2 || ids.len() < k {
        return Err(Error::NotEnoughStorms {
            storms: ids.len(),
            folds: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let assignment = ids.into_iter().enumerate().map(|(i, id)| (id, i % k)).collect();
    Ok(FoldPlan {
        k,
        assignment,
        holdout: BTreeSet::new(),
    })
}

/// Anything with an optional storm name.
pub trait Named {
    fn storm_name(&self) -> Option<&str>;
    fn storm_id(&self) -> &str;
}

impl Named for CycloneTrack {
    fn storm_name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    fn storm_id(&self) -> &str {
        &self.storm_id
    }
}

impl Named for FeatureFrame {
    fn storm_name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    fn storm_id(&self) -> &str {
        &self.storm_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSplit<T> {
    pub remaining: Vec<T>,
    pub holdout: Vec<T>,
    pub warnings: Vec<String>,
}

/// Moves storms whose name matches any of `names` (case-insensitive) into
/// the holdout set. Unmatched names produce warnings.
pub fn holdout_by_name<T: Named>(items: Vec<T>, names: &[String]) -> HoldoutSplit<T> {
    let wanted: BTreeSet<String> = names.iter().map(|n| n.trim().to_uppercase()).collect();
    let mut matched = BTreeSet::new();
    let (holdout, remaining): (Vec<T>, Vec<T>) = items.into_iter().partition(|t| {
        let hit = t.storm_name().map(|n| n.trim().to_uppercase()).filter(|n| wanted.contains(n));
        if let Some(n) = &hit {
            matched.insert(n.clone());
        }
        hit.is_some()
    });
    let warnings = wanted
        .difference(&matched)
        .map(|n| format!("holdout name '{n}' matches no storm"))
        .collect();
    HoldoutSplit {
        remaining,
        holdout,
        warnings,
    }
}

/// Magic bytes of the window cache file.
pub const WINDOW_MAGIC: [u8; 8] = *b"TCWINDOW";
pub const WINDOW_FORMAT_VERSION: u32 = 1;

/// Window dataset as stored in the binary cache (no storm identity).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub spec: WindowSpec,
    pub features: usize,
    /// `(input, target)` pairs.
    pub samples: Vec<(Matrix, Vec<f64>)>,
}

/// Binary window cache. Header: magic (8 bytes), then little-endian `u32`
/// version, t1, t2, feature count and a `u64` sample count. Each sample
/// follows as `t1 × features` then `t2` little-endian `f32` values,
/// row-major.
pub fn write_windows<W: Write>(mut sink: W, spec: WindowSpec, samples: &[WindowSample]) -> Result<()> {
    let io = |e| Error::io("<window cache>", e);
    let mut buf = Vec::with_capacity(32 + samples.len() * 4 * (spec.t1 * FEATURE_COUNT + spec.t2));
    buf.extend_from_slice(&WINDOW_MAGIC);
    for v in [WINDOW_FORMAT_VERSION, spec.t1 as u32, spec.t2 as u32, FEATURE_COUNT as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.input.shape() != (spec.t1, FEATURE_COUNT) || s.target.len() != spec.t2 {
            return Err(Error::Shape(format!(
                "window {}#{} does not match {spec:?}",
                s.storm_id, s.start
            )));
        }
        for v in s.input.data().iter().chain(&s.target) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    sink.write_all(&buf).map_err(io)?;
    sink.flush().map_err(io)
}

pub fn read_windows<R: Read>(mut source: R) -> Result<WindowSet> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<window cache>", e))?;
    if bytes.len() < 32 || bytes[..8] != WINDOW_MAGIC {
        return Err(Error::Format("not a window cache file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u32_at(8);
    if version != WINDOW_FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported window cache version {version}")));
    }
    let spec = WindowSpec::new(u32_at(12), u32_at(16))?;
    let features = u32_at(20);
    let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let per_sample = spec.t1 * features + spec.t2;
    let body = &bytes[32..];
    if body.len() != count * per_sample * 4 {
        return Err(Error::Format(format!(
            "window cache holds {} bytes of data, header implies {}",
            body.len(),
            count * per_sample * 4
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let samples = values
        .chunks_exact(per_sample.max(1))
        .take(count)
        .map(|chunk| {
            let (x, y) = chunk.split_at(spec.t1 * features);
            (Matrix::from_vec(spec.t1, features, x.to_vec()), y.to_vec())
        })
        .collect();
    Ok(WindowSet {
        spec,
        features,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use chrono::NaiveDateTime;

    fn frame(id: &str, msws: &[f64]) -> FeatureFrame {
        FeatureFrame {
            storm_id: id.into(),
            name: None,
            timestamps: vec![NaiveDateTime::default(); msws.len()],
            vectors: msws
                .iter()
                .enumerate()
                .map(|(i, &w)| FeatureVector::from_array([i as f64, 0.0, w, 0.0, 0.0, 0.0, 0.0]))
                .collect(),
            scaled: true,
        }
    }

    fn ramp(len: usize) -> Vec<f64> {
        (0..len).map(|i| 20.0 + i as f64).collect()
    }

    #[test]
    fn window_counts() {
        let spec = WindowSpec::new(4, 1).unwrap();
        assert_eq!(build_windows(&frame("a", &ramp(10)), spec).len(), 6);
        assert!(build_windows(&frame("a", &ramp(5)), WindowSpec::new(4, 4).unwrap()).is_empty());
    }

    #[test]
    fn longest_storm_window_count_matches_enumeration() {
        let spec = WindowSpec::new(12, 24).unwrap();
        let enumerated = (0..90).filter(|&s| s + 12 + 24 <= 90).count();
        assert_eq!(enumerated, 55);
        assert_eq!(build_windows(&frame("a", &ramp(90)), spec).len(), enumerated);
    }

    #[test]
    fn window_contents_are_contiguous() {
        let spec = WindowSpec::new(3, 2).unwrap();
        let w = build_windows(&frame("a", &ramp(8)), spec);
        assert_eq!(w[1].start, 1);
        assert_eq!(w[1].input.get(0, 0), 1.0);
        assert_eq!(w[1].input.get(2, 0), 3.0);
        assert_eq!(w[1].target, vec![24.0, 25.0]);
        assert_eq!(w[1].last_observed_msws(), 23.0);
    }

    #[test]
    fn counts_over_storms() {
        let spec = WindowSpec::new(4, 1).unwrap();
        assert_eq!(count_windows_by_len([10, 4], spec), WindowCount { samples: 6, storms: 1 });
        assert_eq!(count_windows_by_len([], spec), WindowCount::default());
        let wide = WindowSpec::new(4, 3).unwrap();
        assert!(count_windows_by_len([10, 4, 7], wide).samples <= count_windows_by_len([10, 4, 7], spec).samples);
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:03}")).collect()
    }

    #[test]
    fn fold_sizes_are_balanced() {
        let plan = kfold_split(&ids(341), 5, 7).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![68, 68, 68, 68, 69]);
        let plan = kfold_split(&ids(5), 5, 7).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 5]);
    }

    #[test]
    fn folds_are_deterministic_and_order_free() {
        let a = kfold_split(&ids(40), 5, 3).unwrap();
        let mut rev = ids(40);
        rev.reverse();
        let b = kfold_split(&rev, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a, kfold_split(&ids(40), 5, 4).unwrap());
    }

    #[test]
    fn too_few_storms() {
        assert!(matches!(kfold_split(&ids(3), 5, 0), Err(Error::NotEnoughStorms { storms: 3, folds: 5 })));
        assert!(kfold_split(&ids(3), 1, 0).is_err());
    }

    fn named(id: &str, name: Option<&str>) -> FeatureFrame {
        let mut f = frame(id, &ramp(3));
        f.name = name.map(str::to_string);
        f
    }

    #[test]
    fn holdout_matches_names_case_insensitively() {
        let frames = vec![named("1", Some("Vayu")), named("2", Some("FANI")), named("3", None), named("4", Some("Ockhi"))];
        let split = holdout_by_name(frames, &["VAYU".into(), "fani".into()]);
        let held: Vec<&str> = split.holdout.iter().map(|f| f.storm_id.as_str()).collect();
        assert_eq!(held, vec!["1", "2"]);
        assert_eq!(split.remaining.len(), 2);
        assert!(split.warnings.is_empty());
    }

    #[test]
    fn unmatched_holdout_name_warns() {
        let split = holdout_by_name(vec![named("1", Some("Vayu"))], &["XYZ".into()]);
        assert_eq!(split.remaining.len(), 1);
        assert!(split.holdout.is_empty());
        assert_eq!(split.warnings.len(), 1);
        let empty = holdout_by_name(Vec::<FeatureFrame>::new(), &["VAYU".into()]);
        assert!(empty.remaining.is_empty() && empty.holdout.is_empty());
    }

    #[test]
    fn window_cache_round_trip() {
        let spec = WindowSpec::new(2, 3).unwrap();
        let w = build_windows(&frame("a", &ramp(9)), spec);
        let mut buf = Vec::new();
        write_windows(&mut buf, spec, &w).unwrap();
        assert_eq!(&buf[..8], b"TCWINDOW");
        assert_eq!(buf.len(), 32 + w.len() * (2 * 7 + 3) * 4);
        let set = read_windows(buf.as_slice()).unwrap();
        assert_eq!(set.spec, spec);
        assert_eq!(set.samples.len(), w.len());
        for ((x, y), s) in set.samples.iter().zip(&w) {
            assert_eq!(x, &s.input);
            assert_eq!(y, &s.target);
        }
        assert!(read_windows(&buf[..buf.len() - 1]).is_err());
    }
}

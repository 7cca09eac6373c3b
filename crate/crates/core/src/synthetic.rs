//! Seeded synthetic storms for tests, benchmarks and demos.
//!
//! Each storm starts in the North Indian Ocean and drifts north-west with a
//! jittered heading. Its intensity follows a logistic rise-then-decay curve
//!
//! ```text
//! msws(t) = 20 + A · σ((t - t_rise) / s_rise) · σ((t_decay - t) / s_decay) + ε,  ε ~ N(0, noise)
//! ```
//!
//! with per-storm amplitude and timing drawn uniformly, and central pressure
//! falling 0.75 hPa per knot above 20 kt (plus 1 hPa noise). The SST field
//! is a single-date analytic grid, warmest near 10°N.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Basin, CycloneTrack, Fix, STEP_HOURS};
use crate::sst::SstGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub storms: usize,
    pub min_fixes: usize,
    pub max_fixes: usize,
    /// Standard deviation of the MSWS noise, knots.
    pub noise_kt: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            storms: 60,
            min_fixes: 24,
            max_fixes: 48,
            noise_kt: 1.5,
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub tracks: Vec<CycloneTrack>,
    pub sst: SstGrid,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

/// Noise-free intensity curve.
pub fn intensity_curve(t: f64, amplitude: f64, rise: (f64, f64), decay: (f64, f64)) -> f64 {
    20.0 + amplitude * logistic((t - rise.0) / rise.1) * logistic((decay.0 - t) / decay.1)
}

fn storm(index: usize, len: usize, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> CycloneTrack {
    let l = len as f64;
    let amplitude = rng.random_range(30.0..110.0);
    let rise = (rng.random_range(0.2 * l..0.4 * l), rng.random_range(2.0..5.0));
    let decay = (rng.random_range(0.6 * l..0.85 * l), rng.random_range(2.0..5.0));
    let mut lat: f64 = rng.random_range(8.0..18.0);
    let mut lon: f64 = rng.random_range(60.0..92.0);
    let heading: f64 = rng.random_range(290.0..350.0);
    let speed_km: f64 = rng.random_range(15.0..35.0);
    let start = NaiveDate::from_ymd_opt(2015, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
        + Duration::days(10 * index as i64);

    let mut fixes = Vec::with_capacity(len);
    for t in 0..len {
        let msws = (intensity_curve(t as f64, amplitude, rise, decay) + noise.sample(rng)).max(10.0);
        let ecp = 1008.0 - 0.75 * (msws - 20.0) + rng.random_range(-1.0..1.0);
        fixes.push(Fix {
            timestamp: start + Duration::hours(STEP_HOURS * t as i64),
            lat: round_to(lat, 2),
            lon: round_to(lon, 2),
            ecp: round_to(ecp, 1),
            msws: round_to(msws, 1),
        });
        let theta = (heading + rng.random_range(-15.0..15.0)).to_radians();
        let step = speed_km * rng.random_range(0.8..1.2);
        lat += step * theta.cos() / 111.0;
        lon += step * theta.sin() / (111.0 * lat.to_radians().cos());
    }
    CycloneTrack {
        storm_id: format!("SYN{:04}", index + 1),
        name: Some(format!("Synth{:02}", index + 1)),
        basin: if lon < 78.0 { Basin::ArabianSea } else { Basin::BayOfBengal },
        fixes,
    }
}

/// Analytic SST on a 1° grid covering 0–40°N, 40–110°E.
pub fn synthetic_sst() -> SstGrid {
    let lats: Vec<f64> = (0..=40).map(f64::from).collect();
    let lons: Vec<f64> = (40..=110).map(f64::from).collect();
    let mut values = Vec::with_capacity(lats.len() * lons.len());
    for lat in &lats {
        for lon in &lons {
            let v = 29.5 - 0.12 * (lat - 10.0).abs() + 0.4 * (lon / 10.0).sin();
            values.push(Some(round_to(v, 2)));
        }
    }
    let date = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    SstGrid::new(lats, lons, vec![date], values).expect("synthetic grid is regular")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticSet> {
    if config.min_fixes == 0 || config.min_fixes > config.max_fixes {
        return Err(Error::Config(format!(
            "fix range {}..={} is empty",
            config.min_fixes, config.max_fixes
        )));
    }
    let noise = Normal::new(0.0, config.noise_kt)
        .map_err(|e| Error::Config(format!("noise_kt {}: {e}", config.noise_kt)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tracks = (0..config.storms)
        .map(|i| {
            let len = rng.random_range(config.min_fixes..=config.max_fixes);
            storm(i, len, &noise, &mut rng)
        })
        .collect();
    Ok(SyntheticSet {
        tracks,
        sst: synthetic_sst(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_feature_frame;
    use crate::ingest::validate_track;

    #[test]
    fn deterministic_and_valid() {
        let config = SyntheticConfig::default();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tracks.len(), 60);
        for t in &a.tracks {
            assert!((24..=48).contains(&t.len()));
            assert!(validate_track(t).is_empty(), "{}", t.storm_id);
            build_feature_frame(t, &a.sst).unwrap();
        }
        let other = generate(&SyntheticConfig { seed: 1, ..config }).unwrap();
        assert_ne!(a.tracks, other.tracks);
    }

    #[test]
    fn curve_rises_then_decays() {
        let peak = intensity_curve(20.0, 80.0, (8.0, 3.0), (32.0, 3.0));
        assert!(peak > 95.0);
        assert!(intensity_curve(0.0, 80.0, (8.0, 3.0), (32.0, 3.0)) < 30.0);
        assert!(intensity_curve(40.0, 80.0, (8.0, 3.0), (32.0, 3.0)) < 30.0);
    }

    #[test]
    fn empty_fix_range_rejected() {
        let config = SyntheticConfig {
            min_fixes: 10,
            max_fixes: 5,
            ..SyntheticConfig::default()
        };
        assert!(generate(&config).is_err());
    }
}

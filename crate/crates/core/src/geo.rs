//! Great-circle distance and initial bearing on a spherical Earth.

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    fn check(&self) -> Result<()> {
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite coordinate ({}, {})",
                self.lat, self.lon
            )));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Domain(format!("latitude {} out of range", self.lat)));
        }
        Ok(())
    }
}

/// Haversine distance in kilometres.
pub fn haversine_distance(p: LatLon, q: LatLon) -> Result<f64> {
    p.check()?;
    q.check()?;
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (q.lon - p.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    let c = 2.0 * a.sqrt().min(1.0).asin();
    Ok(EARTH_RADIUS_KM * c)
}

/// Forward azimuth in degrees clockwise from true north.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing {
    pub degrees: f64,
    /// Set when the points coincide and no direction exists; `degrees` is 0.
    pub degenerate: bool,
}

/// Initial bearing from `p` to `q`, normalized to `[0, 360)`.
pub fn initial_bearing(p: LatLon, q: LatLon) -> Result<Bearing> {
    p.check()?;
    q.check()?;
    if p.lat == q.lat && (p.lon - q.lon).rem_euclid(360.0) == 0.0 {
        return Ok(Bearing {
            degrees: 0.0,
            degenerate: true,
        });
    }
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dlambda = (q.lon - p.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    let mut degrees = y.atan2(x).to_degrees().rem_euclid(360.0);
    if degrees >= 360.0 {
        degrees = 0.0;
    }
    Ok(Bearing {
        degrees,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_distances() {
        let d = |a: (f64, f64), b: (f64, f64)| {
            haversine_distance(LatLon::new(a.0, a.1), LatLon::new(b.0, b.1)).unwrap()
        };
        assert_eq!(d((10.0, 80.0), (10.0, 80.0)), 0.0);
        // R * pi / 2 and R * pi / 180
        assert!((d((0.0, 0.0), (0.0, 90.0)) - 10007.543398010286).abs() < 0.01);
        assert!((d((0.0, 0.0), (0.0, 1.0)) - 111.19492664455873).abs() < 0.01);
    }

    #[test]
    fn non_finite_is_a_domain_error() {
        let r = haversine_distance(LatLon::new(f64::NAN, 0.0), LatLon::new(0.0, 0.0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn cardinal_bearings() {
        let b = |q: (f64, f64)| initial_bearing(LatLon::new(0.0, 0.0), LatLon::new(q.0, q.1)).unwrap();
        assert_eq!(b((10.0, 0.0)).degrees, 0.0);
        assert!((b((0.0, 10.0)).degrees - 90.0).abs() < 1e-12);
        assert!((b((-10.0, 0.0)).degrees - 180.0).abs() < 1e-12);
        assert!((b((0.0, -10.0)).degrees - 270.0).abs() < 1e-12);
        let same = b((0.0, 0.0));
        assert!(same.degenerate);
        assert_eq!(same.degrees, 0.0);
    }

    /// Bearing from Cartesian vectors: project the chord onto the local
    /// north/east basis at `p`.
    fn vector_bearing(p: (f64, f64), q: (f64, f64)) -> f64 {
        let unit = |lat: f64, lon: f64| {
            let (la, lo) = (lat.to_radians(), lon.to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let a = unit(p.0, p.1);
        let b = unit(q.0, q.1);
        let (la, lo) = (p.0.to_radians(), p.1.to_radians());
        let east = [-lo.sin(), lo.cos(), 0.0];
        let north = [-la.sin() * lo.cos(), -la.sin() * lo.sin(), la.cos()];
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let dot = |u: [f64; 3], v: [f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        let deg = dot(d, east).atan2(dot(d, north)).to_degrees();
        (deg + 360.0) % 360.0
    }

    #[test]
    fn bearing_matches_vector_oracle() {
        let got = initial_bearing(LatLon::new(35.0, 45.0), LatLon::new(35.1, 45.1)).unwrap();
        let want = vector_bearing((35.0, 45.0), (35.1, 45.1));
        assert!((got.degrees - want).abs() < 1e-6, "{} vs {}", got.degrees, want);
    }

    fn point() -> impl Strategy<Value = LatLon> {
        (-89.0..89.0f64, 0.0..360.0f64).prop_map(|(a, b)| LatLon::new(a, b))
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_triangular(p in point(), q in point(), r in point()) {
            let pq = haversine_distance(p, q).unwrap();
            let qp = haversine_distance(q, p).unwrap();
            let pr = haversine_distance(p, r).unwrap();
            let rq = haversine_distance(r, q).unwrap();
            prop_assert!((pq - qp).abs() < 1e-9);
            prop_assert!(pq <= pr + rq + 1e-6);
        }

        #[test]
        fn bearing_in_range(p in point(), q in point()) {
            let b = initial_bearing(p, q).unwrap();
            prop_assert!((0.0..360.0).contains(&b.degrees));
        }
    }
}

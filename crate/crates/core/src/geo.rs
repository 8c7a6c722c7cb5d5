//! Great-circle distances on WGS-84-ish spherical Earth.

use crate::real::Real;

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Haversine distance in kilometres between two (lat, lon) points in degrees.
pub fn haversine_km<R: Real>(lat1: R, lon1: R, lat2: R, lon2: R) -> R {
    let rad = R::from_f64_lossy(std::f64::consts::PI / 180.0);
    let (phi1, phi2) = (lat1 * rad, lat2 * rad);
    let dphi = (lat2 - lat1) * rad;
    let dlambda = (lon2 - lon1) * rad;
    let two = R::from_f64_lossy(2.0);
    let half = R::from_f64_lossy(0.5);
    let s1 = (dphi * half).sin();
    let s2 = (dlambda * half).sin();
    let a = s1 * s1 + phi1.cos() * phi2.cos() * s2 * s2;
    let c = two * a.sqrt().min(R::one()).asin();
    R::from_f64_lossy(EARTH_RADIUS_KM) * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_for_coincident_points() {
        assert!(haversine_km(1.25f64, -3.5, 1.25, -3.5).abs() < 1e-12);
    }

    #[test]
    fn one_degree_latitude_is_about_111km() {
        let d = haversine_km(0.0f64, 0.0, 1.0, 0.0);
        assert!((d - 111.195).abs() < 0.01, "d = {}", d);
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative(
            lat1 in -90.0f64..90.0, lon1 in -180.0f64..180.0,
            lat2 in -90.0f64..90.0, lon2 in -180.0f64..180.0,
        ) {
            let d1 = haversine_km(lat1, lon1, lat2, lon2);
            let d2 = haversine_km(lat2, lon2, lat1, lon1);
            prop_assert!(d1 >= 0.0);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn zero_iff_coincident(lat in -89.0f64..89.0, lon in -179.0f64..179.0) {
            prop_assert!(haversine_km(lat, lon, lat, lon) < 1e-12);
            let d = haversine_km(lat, lon, lat + 0.01, lon);
            prop_assert!(d > 1e-12);
        }
    }
}

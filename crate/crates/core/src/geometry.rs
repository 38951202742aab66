//! Spherical primitives on the unit sphere.
//!
//! All distances are central angles in radians. Locations are carried in
//! degrees with longitude normalized to `[-180, 180)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{GeoBiasError, Result};

/// Angle between successive points of the golden-angle spiral.
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653; // pi * (3 - sqrt(5))

/// Cosine of latitude below which a location is treated as a pole.
const POLE_EPS: f64 = 1e-12;

/// A point on the sphere, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoLocation {
    lon: f64,
    lat: f64,
}

impl GeoLocation {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoBiasError::InvalidLocation { lon, lat });
        }
        Ok(Self {
            lon: normalize_lon(lon),
            lat,
        })
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon_rad(&self) -> f64 {
        self.lon.to_radians()
    }

    pub fn lat_rad(&self) -> f64 {
        self.lat.to_radians()
    }

    /// Cartesian coordinates on the unit sphere.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (sin_lat, cos_lat) = self.lat_rad().sin_cos();
        let (sin_lon, cos_lon) = self.lon_rad().sin_cos();
        [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat]
    }

    fn from_unit_vector(v: [f64; 3]) -> Self {
        let lat = v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt()).to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        Self {
            lon: normalize_lon(lon),
            lat: lat.clamp(-90.0, 90.0),
        }
    }

    /// Unit vectors pointing east and north in the tangent plane.
    fn tangent_basis(&self) -> ([f64; 3], [f64; 3]) {
        let (sin_lat, cos_lat) = self.lat_rad().sin_cos();
        let (sin_lon, cos_lon) = self.lon_rad().sin_cos();
        let east = [-sin_lon, cos_lon, 0.0];
        let north = [-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat];
        (east, north)
    }

    fn is_pole(&self) -> bool {
        self.lat_rad().cos() < POLE_EPS
    }

    /// The point reached by travelling `distance` radians along the great
    /// circle leaving `self` at `bearing` (clockwise from north).
    pub fn destination(&self, bearing: f64, distance: f64) -> GeoLocation {
        let c = self.unit_vector();
        let (east, north) = self.tangent_basis();
        let (sin_b, cos_b) = bearing.sin_cos();
        let (sin_d, cos_d) = distance.sin_cos();
        let mut v = [0.0; 3];
        for k in 0..3 {
            v[k] = c[k] * cos_d + (east[k] * sin_b + north[k] * cos_b) * sin_d;
        }
        Self::from_unit_vector(v)
    }
}

fn normalize_lon(lon: f64) -> f64 {
    let mut l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if l >= 180.0 {
        l -= 360.0;
    }
    l
}

/// Central angle in radians, within `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct AngularDistance(f64);

impl AngularDistance {
    pub fn new(radians: f64) -> Result<Self> {
        if !radians.is_finite() || !(0.0..=PI).contains(&radians) {
            return Err(GeoBiasError::InvalidParameter(format!(
                "angular distance {radians} outside [0, pi]"
            )));
        }
        Ok(Self(radians))
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

/// Azimuthal-equidistant coordinates about a projection center, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalXY {
    /// East of the center.
    pub x: f64,
    /// North of the center.
    pub y: f64,
}

/// Great-circle distance (haversine form).
pub fn great_circle_distance(a: &GeoLocation, b: &GeoLocation) -> AngularDistance {
    AngularDistance(haversine(
        a.lat_rad(),
        a.lon_rad(),
        b.lat_rad(),
        b.lon_rad(),
    ))
}

/// Haversine central angle on raw radians; shared by the hot loops.
#[inline]
pub(crate) fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let s_lat = ((lat2 - lat1) * 0.5).sin();
    let s_lon = ((lon2 - lon1) * 0.5).sin();
    let h = (s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon).clamp(0.0, 1.0);
    2.0 * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Initial great-circle bearing from `from` to `to`, clockwise from north,
/// in `[0, 2pi)`.
pub fn initial_bearing(from: &GeoLocation, to: &GeoLocation) -> Result<f64> {
    if from.is_pole() {
        return Err(GeoBiasError::UndefinedBearing);
    }
    if great_circle_distance(from, to).0 == 0.0 {
        return Err(GeoBiasError::UndefinedBearing);
    }
    Ok(bearing_unchecked(from, to))
}

fn bearing_unchecked(from: &GeoLocation, to: &GeoLocation) -> f64 {
    let (lat1, lat2) = (from.lat_rad(), to.lat_rad());
    let d_lon = to.lon_rad() - from.lon_rad();
    let y = d_lon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * d_lon.cos();
    let b = y.atan2(x).rem_euclid(TAU);
    // rem_euclid can round up to exactly 2pi for tiny negative angles
    if b >= TAU {
        0.0
    } else {
        b
    }
}

/// Azimuthal-equidistant projection of `p` about `center`.
pub fn project_azimuthal(center: &GeoLocation, p: &GeoLocation) -> Result<LocalXY> {
    let d = great_circle_distance(center, p).0;
    if d >= FRAC_PI_2 {
        return Err(GeoBiasError::ProjectionDomain { distance: d });
    }
    if d == 0.0 {
        return Ok(LocalXY { x: 0.0, y: 0.0 });
    }
    let bearing = initial_bearing(center, p)?;
    let (s, c) = bearing.sin_cos();
    Ok(LocalXY { x: d * s, y: d * c })
}

/// Inverse of [`project_azimuthal`].
pub fn unproject_azimuthal(center: &GeoLocation, xy: LocalXY) -> GeoLocation {
    let d = xy.x.hypot(xy.y);
    if d == 0.0 {
        return *center;
    }
    center.destination(xy.x.atan2(xy.y), d)
}

/// Deterministic, area-uniform golden-angle spiral of `count` points inside
/// the cap of angular radius `radius` around `center`. The first point is the
/// center itself.
pub fn fibonacci_cap(
    center: &GeoLocation,
    radius: AngularDistance,
    count: usize,
) -> Result<Vec<GeoLocation>> {
    let r = radius.0;
    if !(r > 0.0 && r < FRAC_PI_2) {
        return Err(GeoBiasError::InvalidRadius(r));
    }
    if count == 0 {
        return Err(GeoBiasError::InvalidParameter(
            "fibonacci_cap count must be >= 1".into(),
        ));
    }
    let cap_height = 2.0 * (0.5 * r).sin().powi(2); // 1 - cos r
    let n = count as f64;
    Ok((0..count)
        .map(|i| {
            if i == 0 {
                return *center;
            }
            let area_frac = i as f64 / n;
            // acos(1 - t*h) loses precision for tiny caps; use the
            // equivalent 2*asin(sqrt(t*h/2)).
            let theta = 2.0 * (0.5 * area_frac * cap_height).sqrt().asin();
            let azimuth = (i as f64 * GOLDEN_ANGLE).rem_euclid(TAU);
            center.destination(azimuth, theta)
        })
        .collect())
}

/// Number of background points `ceil(rho * pi * r^2)` for a density `rho`.
pub fn background_count(rho: f64, radius: f64) -> usize {
    (rho * PI * radius * radius).ceil().max(0.0) as usize
}

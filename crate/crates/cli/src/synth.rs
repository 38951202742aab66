//! Seeded synthetic performance maps with planted spatial bias.
//!
//! Points are spread area-uniformly over a small cap so that ROIs of the
//! default radius hold many points. The `ring` pattern instead concentrates
//! good points in a core surrounded by a sparse ring of bad ones.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use geobias::error::{GeoBiasError, Result};
use geobias::geometry::{initial_bearing, GeoLocation};
use geobias::map::{PerformanceMap, PerformancePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Bernoulli(0.5) marks.
    Null,
    /// Mark 1 west of the center meridian, 0 east of it.
    Hemisphere,
    /// Mark 1 in a dense core, 0 in a surrounding ring.
    Ring,
    /// Mark by parity of the quadrant seen from the center.
    Sector,
    /// Mark by parity of `cell`-sized lon/lat cells (radians).
    Checkerboard,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Self::Null,
        Self::Hemisphere,
        Self::Ring,
        Self::Sector,
        Self::Checkerboard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Null => "null",
            Self::Hemisphere => "hemisphere",
            Self::Ring => "ring",
            Self::Sector => "sector",
            Self::Checkerboard => "checkerboard",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|p| p.name()).collect();
                format!(
                    "unknown pattern '{s}' (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pattern: Pattern,
    pub n: usize,
    pub seed: u64,
    /// Checkerboard cell size in radians.
    pub cell: f64,
    /// Angular radius of the populated cap.
    pub extent: f64,
    pub center: GeoLocation,
    /// Share of points in the ring pattern's core.
    pub core_share: f64,
}

impl SynthConfig {
    pub fn new(pattern: Pattern, n: usize, seed: u64) -> Self {
        Self {
            pattern,
            n,
            seed,
            cell: 0.01,
            extent: 0.04,
            center: GeoLocation::new(0.0, 0.0).expect("origin is valid"),
            core_share: 0.8,
        }
    }
}

/// Area-uniform point at distance `<= radius` from `center`, drawing the
/// radial share from `[lo, 1)` of the cap area.
fn cap_point(rng: &mut ChaCha8Rng, center: &GeoLocation, radius: f64, lo: f64) -> GeoLocation {
    let bearing = rng.gen_range(0.0..TAU);
    let t: f64 = rng.gen_range(lo..1.0);
    let theta = 2.0 * (t.sqrt() * (0.5 * radius).sin()).asin();
    center.destination(bearing, theta)
}

pub fn synthesize(cfg: &SynthConfig) -> Result<PerformanceMap> {
    if cfg.n < 10 {
        return Err(GeoBiasError::InvalidParameter(format!(
            "synthetic maps need n >= 10, got {}",
            cfg.n
        )));
    }
    if !(cfg.extent > 0.0 && cfg.extent < FRAC_PI_2) {
        return Err(GeoBiasError::InvalidRadius(cfg.extent));
    }
    if !(cfg.cell > 0.0 && cfg.cell.is_finite()) {
        return Err(GeoBiasError::InvalidScale(cfg.cell));
    }
    if !(cfg.core_share > 0.0 && cfg.core_share < 1.0) {
        return Err(GeoBiasError::InvalidParameter(
            "core share must lie in (0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = &cfg.center;
    let points = (0..cfg.n)
        .map(|_| {
            let (location, perf) = match cfg.pattern {
                Pattern::Ring => {
                    if rng.gen_bool(cfg.core_share) {
                        (cap_point(&mut rng, c, 0.1 * cfg.extent, 0.0), 1.0)
                    } else {
                        // outer half of the radius: area share from 1/4 up
                        (cap_point(&mut rng, c, cfg.extent, 0.25), 0.0)
                    }
                }
                pattern => {
                    let p = cap_point(&mut rng, c, cfg.extent, 0.0);
                    let perf = match pattern {
                        Pattern::Null => f64::from(u8::from(rng.gen_bool(0.5))),
                        Pattern::Hemisphere => f64::from(u8::from(p.lon() < c.lon())),
                        Pattern::Sector => {
                            let quadrant = initial_bearing(c, &p)
                                .map(|b| (b / FRAC_PI_2) as u64)
                                .unwrap_or(0);
                            (quadrant % 2) as f64
                        }
                        _ => {
                            let parity =
                                (p.lon_rad() / cfg.cell).floor() + (p.lat_rad() / cfg.cell).floor();
                            parity.rem_euclid(2.0)
                        }
                    };
                    (p, perf)
                }
            };
            PerformancePoint::new(location, perf)
        })
        .collect();
    PerformanceMap::new(points)
}

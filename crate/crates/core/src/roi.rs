//! Regions of interest: cap retrieval over a grid index, scoreability rules
//! and size-normalized aggregation weights.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoBiasError, Result};
use crate::geometry::{haversine, GeoLocation};
use crate::map::PerformanceMap;

/// Smallest ROI the scores accept: a pattern needs at least two points.
pub const MIN_ROI_POINTS: usize = 2;

/// ROI size below which hyperparameters are considered too small.
pub const RECOMMENDED_ROI_POINTS: usize = 100;

/// Padding applied to query bounds so floating-point error never drops a
/// candidate cell; the exact distance test runs afterwards.
const BOUND_SLACK: f64 = 1e-9;

/// Exact cap-query index: points bucketed by latitude band and longitude
/// cell, stored as one sorted key array.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    lat_bands: u64,
    lon_cells: u64,
    band_height: f64,
    cell_width: f64,
    /// `(band * lon_cells + cell, point index)`, sorted.
    entries: Vec<(u64, u32)>,
    /// Point coordinates in radians, `(lat, lon)`, in map order.
    coords: Vec<(f64, f64)>,
}

/// Index with a cell size suited to the map's density.
pub fn build_index(map: &PerformanceMap) -> SpatialIndex {
    let cell = (4.0 * PI / map.len() as f64).sqrt();
    SpatialIndex::with_cell_size(map, cell)
}

impl SpatialIndex {
    /// Index with cells of roughly `cell` radians; sized to the query radius
    /// this keeps each query to a handful of cells.
    pub fn with_cell_size(map: &PerformanceMap, cell: f64) -> Self {
        let cell = if cell.is_finite() {
            cell.clamp(1e-5, PI)
        } else {
            PI
        };
        let lat_bands = (PI / cell).ceil().max(1.0) as u64;
        let lon_cells = (TAU / cell).ceil().max(1.0) as u64;
        let band_height = PI / lat_bands as f64;
        let cell_width = TAU / lon_cells as f64;
        let coords: Vec<(f64, f64)> = map
            .points()
            .iter()
            .map(|p| (p.location.lat_rad(), p.location.lon_rad()))
            .collect();
        let mut entries: Vec<(u64, u32)> = coords
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| {
                let band = band_of(lat, band_height, lat_bands);
                let col = cell_of(lon, cell_width, lon_cells);
                (band * lon_cells + col, i as u32)
            })
            .collect();
        entries.sort_unstable();
        Self {
            lat_bands,
            lon_cells,
            band_height,
            cell_width,
            entries,
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Indices of points strictly closer than `radius` to `center`, in map
    /// order.
    pub fn query(&self, center: &GeoLocation, radius: f64) -> Vec<usize> {
        if radius.is_nan() || radius <= 0.0 {
            return Vec::new();
        }
        let (clat, clon) = (center.lat_rad(), center.lon_rad());
        let mut out = Vec::new();
        let visit = |lo_key: u64, hi_key: u64, out: &mut Vec<usize>| {
            let start = self.entries.partition_point(|e| e.0 < lo_key);
            for &(key, idx) in &self.entries[start..] {
                if key > hi_key {
                    break;
                }
                let (lat, lon) = self.coords[idx as usize];
                if haversine(clat, clon, lat, lon) < radius {
                    out.push(idx as usize);
                }
            }
        };

        let lat_lo = clat - radius - BOUND_SLACK;
        let lat_hi = clat + radius + BOUND_SLACK;
        let band_lo = band_of(lat_lo.max(-FRAC_PI_2), self.band_height, self.lat_bands);
        let band_hi = band_of(lat_hi.min(FRAC_PI_2), self.band_height, self.lat_bands);
        let touches_pole = lat_lo <= -FRAC_PI_2 || lat_hi >= FRAC_PI_2 || radius >= FRAC_PI_2;
        let half_width = if touches_pole {
            PI
        } else {
            let ratio = radius.sin() / clat.cos();
            if ratio >= 1.0 {
                PI
            } else {
                ratio.asin() + BOUND_SLACK
            }
        };

        for band in band_lo..=band_hi {
            let base = band * self.lon_cells;
            if half_width >= PI {
                visit(base, base + self.lon_cells - 1, &mut out);
                continue;
            }
            let first = ((clon - half_width + PI) / self.cell_width).floor() as i64;
            let last = ((clon + half_width + PI) / self.cell_width).floor() as i64;
            let span = (last - first + 1) as u64;
            if span >= self.lon_cells {
                visit(base, base + self.lon_cells - 1, &mut out);
                continue;
            }
            let n = self.lon_cells as i64;
            let a = first.rem_euclid(n) as u64;
            let b = last.rem_euclid(n) as u64;
            if a <= b {
                visit(base + a, base + b, &mut out);
            } else {
                visit(base + a, base + self.lon_cells - 1, &mut out);
                visit(base, base + b, &mut out);
            }
        }
        out.sort_unstable();
        out
    }
}

fn band_of(lat: f64, height: f64, bands: u64) -> u64 {
    (((lat + FRAC_PI_2) / height).floor().max(0.0) as u64).min(bands - 1)
}

fn cell_of(lon: f64, width: f64, cells: u64) -> u64 {
    (((lon + PI) / width).floor().max(0.0) as u64).min(cells - 1)
}

/// A spherical cap and the map points strictly inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Roi {
    /// Identifier of the candidate (the center's map index for
    /// point-centered ROIs).
    pub id: usize,
    pub center: GeoLocation,
    pub radius: f64,
    /// Map indices, ascending.
    pub members: Vec<usize>,
}

impl Roi {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn marks<'a>(&'a self, map: &'a PerformanceMap) -> impl Iterator<Item = f64> + 'a {
        self.members.iter().map(move |&i| map.perf(i))
    }
}

/// Retrieves the ROI of radius `radius` around `center`.
pub fn retrieve_roi(index: &SpatialIndex, id: usize, center: GeoLocation, radius: f64) -> Roi {
    Roi {
        id,
        center,
        radius,
        members: index.query(&center, radius),
    }
}

/// Why a candidate ROI does not contribute to global scores.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    TooFewPoints,
    UniformMarks,
    /// A local score failed; carries the error code.
    ScoreError(String),
}

impl ExclusionReason {
    pub fn code(&self) -> String {
        match self {
            Self::TooFewPoints => "too_few_points".into(),
            Self::UniformMarks => "uniform_marks".into(),
            Self::ScoreError(code) => code.clone(),
        }
    }
}

/// Why `roi` cannot be scored, if it cannot.
pub fn scoreability(roi: &Roi, map: &PerformanceMap, min_points: usize) -> Option<ExclusionReason> {
    if roi.len() < min_points.max(MIN_ROI_POINTS) {
        return Some(ExclusionReason::TooFewPoints);
    }
    let mut marks = roi.marks(map);
    let first = marks.next()?;
    if marks.all(|m| m == first) {
        return Some(ExclusionReason::UniformMarks);
    }
    None
}

/// True when the ROI has at least `min_points` members and its marks are
/// not all identical.
pub fn roi_is_scoreable(roi: &Roi, map: &PerformanceMap, min_points: usize) -> bool {
    scoreability(roi, map, min_points).is_none()
}

/// Where ROI centers are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterPolicy {
    /// One ROI per map point.
    #[default]
    EveryPoint,
    /// `k` distinct map points drawn with a seeded generator.
    Sample { k: usize, seed: u64 },
}

impl CenterPolicy {
    /// Map indices used as centers, ascending.
    pub fn centers(&self, map: &PerformanceMap) -> Vec<usize> {
        match *self {
            Self::EveryPoint => (0..map.len()).collect(),
            Self::Sample { k, seed } => {
                let k = k.min(map.len());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picked = rand::seq::index::sample(&mut rng, map.len(), k).into_vec();
                picked.sort_unstable();
                picked
            }
        }
    }
}

/// Retained ROIs with their normalized-size weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSet {
    pub rois: Vec<Roi>,
    pub weights: Vec<f64>,
    /// Candidate ids that were dropped, with the reason.
    pub excluded: Vec<(usize, ExclusionReason)>,
}

/// `|N_m| / sum |N_m|` for each size, in order.
pub fn size_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    let total: usize = sizes.iter().sum();
    if sizes.is_empty() || total == 0 {
        return Err(GeoBiasError::NoScoreableRoi);
    }
    Ok(sizes.iter().map(|&s| s as f64 / total as f64).collect())
}

/// Builds one ROI per selected center, drops unscoreable ones and weights
/// the rest by normalized size.
pub fn enumerate_rois(
    map: &PerformanceMap,
    index: &SpatialIndex,
    radius: f64,
    policy: CenterPolicy,
    min_points: usize,
) -> Result<RoiSet> {
    if !radius.is_finite() || radius <= 0.0 {
        return Err(GeoBiasError::InvalidParameter(format!(
            "ROI radius {radius} must be > 0"
        )));
    }
    let candidates: Vec<(Roi, Option<ExclusionReason>)> = policy
        .centers(map)
        .into_par_iter()
        .map(|c| {
            let roi = retrieve_roi(index, c, *map.location(c), radius);
            let reason = scoreability(&roi, map, min_points);
            (roi, reason)
        })
        .collect();
    let mut rois = Vec::new();
    let mut excluded = Vec::new();
    for (roi, reason) in candidates {
        match reason {
            None => rois.push(roi),
            Some(r) => excluded.push((roi.id, r)),
        }
    }
    let sizes: Vec<usize> = rois.iter().map(Roi::len).collect();
    let weights = size_weights(&sizes)?;
    Ok(RoiSet {
        rois,
        weights,
        excluded,
    })
}

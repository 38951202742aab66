//! Reconstructed space-as-distribution (SPAD) baseline: how far block means
//! of the marks stray from the overall mean over random lon/lat grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoBiasError, Result};
use crate::map::PerformanceMap;

/// Label attached to SPAD values in reports.
pub const SPAD_LABEL: &str = "reconstructed baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpadConfig {
    pub max_rows: usize,
    pub max_cols: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for SpadConfig {
    fn default() -> Self {
        Self {
            max_rows: 100,
            max_cols: 100,
            sample_size: 100,
            seed: 0,
        }
    }
}

/// Grid sizes drawn for `cfg`, in draw order (rows, then cols, per sample).
pub fn sampled_grids(cfg: &SpadConfig) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.sample_size)
        .map(|_| {
            let rows = rng.gen_range(1..=cfg.max_rows);
            let cols = rng.gen_range(1..=cfg.max_cols);
            (rows, cols)
        })
        .collect()
}

fn block(v: f64, lo: f64, hi: f64, count: usize) -> usize {
    if hi > lo {
        (((v - lo) / (hi - lo) * count as f64) as usize).min(count - 1)
    } else {
        0
    }
}

/// Score in `[0, 100]`: the mean absolute deviation of block means from the
/// overall mean, averaged over `sample_size` grids laid over the data's
/// bounding box, relative to the largest deviation the marks allow.
pub fn spad_score(map: &PerformanceMap, cfg: &SpadConfig) -> Result<f64> {
    if cfg.max_rows == 0 || cfg.max_cols == 0 || cfg.sample_size == 0 {
        return Err(GeoBiasError::InvalidParameter(
            "SPAD sizes must be positive".into(),
        ));
    }
    if map.len() < 2 {
        return Err(GeoBiasError::DegenerateInput(format!(
            "SPAD needs at least 2 points, got {}",
            map.len()
        )));
    }
    let marks: Vec<f64> = (0..map.len()).map(|i| map.perf(i)).collect();
    let (lo, hi) = marks
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &m| (a.min(m), b.max(m)));
    if lo == hi {
        return Err(GeoBiasError::DegenerateInput(
            "all marks are identical".into(),
        ));
    }
    let mean = marks.iter().sum::<f64>() / marks.len() as f64;
    let max_dev = (mean - lo).max(hi - mean);

    let lons: Vec<f64> = map.points().iter().map(|p| p.location.lon()).collect();
    let lats: Vec<f64> = map.points().iter().map(|p| p.location.lat()).collect();
    let bounds = |v: &[f64]| {
        v.iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)))
    };
    let (lon_lo, lon_hi) = bounds(&lons);
    let (lat_lo, lat_hi) = bounds(&lats);

    let per_grid: Vec<f64> = sampled_grids(cfg)
        .into_par_iter()
        .map(|(rows, cols)| {
            let mut sums = vec![(0.0f64, 0usize); rows * cols];
            for i in 0..marks.len() {
                let r = block(lats[i], lat_lo, lat_hi, rows);
                let c = block(lons[i], lon_lo, lon_hi, cols);
                let cell = &mut sums[r * cols + c];
                cell.0 += marks[i];
                cell.1 += 1;
            }
            let (total, used) = sums
                .iter()
                .filter(|c| c.1 > 0)
                .fold((0.0, 0usize), |(t, u), c| {
                    (t + (c.0 / c.1 as f64 - mean).abs(), u + 1)
                });
            total / used as f64
        })
        .collect();
    let avg = per_grid.iter().sum::<f64>() / per_grid.len() as f64;
    Ok((100.0 * avg / max_dev).clamp(0.0, 100.0))
}

//! Spatial relative-entropy scores: for each ROI, the patch-size weighted
//! KL divergence between the ROI's mark distribution and each patch's.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{histogram, smooth, KlOrder};
use crate::error::{GeoBiasError, Result};
use crate::map::{BinLayout, PerformanceMap};
use crate::partition::{partition, PartitionKind, Partitioning};
use crate::roi::{retrieve_roi, scoreability, size_weights, CenterPolicy, Roi, SpatialIndex};

/// Histogram settings shared by every SRE computation of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SreSettings {
    pub layout: BinLayout,
    /// Additive smoothing applied to both the ROI and the patch histograms.
    pub alpha: f64,
    pub kl_order: KlOrder,
}

impl Default for SreSettings {
    fn default() -> Self {
        Self {
            layout: BinLayout::binary(),
            alpha: 1.0,
            kl_order: KlOrder::RoiToPatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSre {
    pub roi_id: usize,
    pub kind: PartitionKind,
    /// Bits, >= 0.
    pub value: f64,
    pub patch_count: usize,
    pub patch_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSre {
    pub kind: PartitionKind,
    pub value: f64,
    pub roi_count: usize,
}

/// `sum_k |P_k|/|N| * D_KL(h(N) || h(P_k))` over smoothed histograms.
pub fn local_sre(
    roi: &Roi,
    map: &PerformanceMap,
    part: &Partitioning,
    settings: &SreSettings,
) -> Result<LocalSre> {
    if part.patches.is_empty() {
        return Err(GeoBiasError::EmptyPartition);
    }
    if part.member_count() != roi.len() {
        return Err(GeoBiasError::InvalidParameter(format!(
            "partitioning covers {} members, ROI has {}",
            part.member_count(),
            roi.len()
        )));
    }
    let roi_hist = smooth(
        &histogram(roi.marks(map), &settings.layout)?,
        settings.alpha,
    )?;
    let n = roi.len() as f64;
    let mut value = 0.0;
    for patch in &part.patches {
        let marks = patch.members.iter().map(|&pos| map.perf(roi.members[pos]));
        let patch_hist = smooth(&histogram(marks, &settings.layout)?, settings.alpha)?;
        let d = settings.kl_order.divergence(&roi_hist, &patch_hist)?;
        value += patch.members.len() as f64 / n * d;
    }
    Ok(LocalSre {
        roi_id: roi.id,
        kind: part.kind,
        value,
        patch_count: part.patches.len(),
        patch_sizes: part.patch_sizes(),
    })
}

/// Weighted sum of local scores, accumulated in the given order.
pub fn global_sre(locals: &[LocalSre], weights: &[f64]) -> Result<GlobalSre> {
    if locals.len() != weights.len() {
        return Err(GeoBiasError::Aggregation(format!(
            "{} local scores but {} weights",
            locals.len(),
            weights.len()
        )));
    }
    let first = locals.first().ok_or(GeoBiasError::NoScoreableRoi)?;
    if locals.iter().any(|l| l.kind != first.kind) {
        return Err(GeoBiasError::Aggregation(
            "local scores mix partition kinds".into(),
        ));
    }
    let value = weighted_sum(locals.iter().map(|l| l.value), weights);
    Ok(GlobalSre {
        kind: first.kind,
        value,
        roi_count: locals.len(),
    })
}

pub(crate) fn weighted_sum(values: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    values.zip(weights).fold(0.0, |acc, (v, w)| acc + v * w)
}

/// Hyperparameter grids for [`sweep_hyperparameters`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    pub radii: Vec<f64>,
    pub scales: Vec<f64>,
    pub lags: Vec<f64>,
    pub sectors: Vec<usize>,
}

impl SweepGrid {
    /// Partition kinds in table order: grid scales, then lags, then sectors.
    pub fn kinds(&self) -> Vec<PartitionKind> {
        self.scales
            .iter()
            .map(|&scale| PartitionKind::ScaleGrid { scale })
            .chain(
                self.lags
                    .iter()
                    .map(|&lag| PartitionKind::DistanceLag { lag }),
            )
            .chain(
                self.sectors
                    .iter()
                    .map(|&sectors| PartitionKind::DirectionSector { sectors }),
            )
            .collect()
    }
}

/// One cell of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub radius: f64,
    pub kind: PartitionKind,
    pub result: Result<GlobalSre>,
}

/// Checks a partition hyperparameter against the ROI radius.
pub fn validate_kind(kind: PartitionKind, radius: f64) -> Result<()> {
    match kind {
        PartitionKind::ScaleGrid { scale }
            if !(scale > 0.0 && scale.is_finite() && scale <= 2.0 * radius) =>
        {
            Err(GeoBiasError::InvalidScale(scale))
        }
        PartitionKind::DistanceLag { lag } if !(lag > 0.0 && lag.is_finite() && lag <= radius) => {
            Err(GeoBiasError::InvalidLag(lag))
        }
        PartitionKind::DirectionSector { sectors } if sectors < 2 => {
            Err(GeoBiasError::InvalidSectorCount(sectors))
        }
        _ => Ok(()),
    }
}

/// Global SRE for every radius x partition-kind combination, ordered by
/// radius and then by [`SweepGrid::kinds`]. Failures are reported per cell.
/// Within a cell, ROIs whose local score fails are left out and the
/// weights renormalize over the rest.
pub fn sweep_hyperparameters(
    map: &PerformanceMap,
    grid: &SweepGrid,
    settings: &SreSettings,
    policy: CenterPolicy,
    min_points: usize,
) -> Result<Vec<SweepCell>> {
    let kinds = grid.kinds();
    if grid.radii.is_empty() || kinds.is_empty() {
        return Err(GeoBiasError::InvalidParameter(
            "sweep grids must not be empty".into(),
        ));
    }
    let centers = policy.centers(map);
    let mut cells = Vec::with_capacity(grid.radii.len() * kinds.len());
    for &radius in &grid.radii {
        if !(radius > 0.0 && radius.is_finite()) {
            let err = GeoBiasError::InvalidParameter(format!("ROI radius {radius} must be > 0"));
            cells.extend(kinds.iter().map(|&kind| SweepCell {
                radius,
                kind,
                result: Err(err.clone()),
            }));
            continue;
        }
        let checks: Vec<Result<()>> = kinds.iter().map(|&k| validate_kind(k, radius)).collect();
        let index = SpatialIndex::with_cell_size(map, radius);
        // per center: ROI size and one local result per kind, or None if unscoreable
        let per_center: Vec<Option<(usize, Vec<Result<LocalSre>>)>> = centers
            .par_iter()
            .map(|&c| {
                let roi = retrieve_roi(&index, c, *map.location(c), radius);
                if scoreability(&roi, map, min_points).is_some() {
                    return None;
                }
                let locals = kinds
                    .iter()
                    .zip(&checks)
                    .map(|(&kind, check)| match check {
                        Ok(()) => partition(&roi, map, kind)
                            .and_then(|p| local_sre(&roi, map, &p, settings)),
                        Err(e) => Err(e.clone()),
                    })
                    .collect();
                Some((roi.len(), locals))
            })
            .collect();

        for (k, &kind) in kinds.iter().enumerate() {
            let result = if let Err(e) = &checks[k] {
                Err(e.clone())
            } else {
                aggregate_cell(
                    per_center
                        .iter()
                        .flatten()
                        .map(|(size, locals)| (*size, &locals[k])),
                )
            };
            cells.push(SweepCell {
                radius,
                kind,
                result,
            });
        }
    }
    Ok(cells)
}

fn aggregate_cell<'a>(
    items: impl Iterator<Item = (usize, &'a Result<LocalSre>)>,
) -> Result<GlobalSre> {
    let mut sizes = Vec::new();
    let mut locals = Vec::new();
    let mut first_err = None;
    for (size, local) in items {
        match local {
            Ok(l) => {
                sizes.push(size);
                locals.push(l.clone());
            }
            Err(e) => {
                first_err.get_or_insert_with(|| e.clone());
            }
        }
    }
    if locals.is_empty() {
        return Err(first_err.unwrap_or(GeoBiasError::NoScoreableRoi));
    }
    let weights = size_weights(&sizes)?;
    global_sre(&locals, &weights)
}

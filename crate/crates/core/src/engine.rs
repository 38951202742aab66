//! End-to-end scoring: ROI enumeration, local scores, exclusion and global
//! aggregation, plus hyperparameter sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{GeoBiasError, Result};
use crate::map::PerformanceMap;
use crate::partition::{partition, PartitionKind, Partitioning};
use crate::report::{Globals, PointRecord, RoiCounts, RunMetadata, ScoreKind, ScoreReport};
use crate::roi::{
    retrieve_roi, scoreability, size_weights, CenterPolicy, ExclusionReason, Roi, SpatialIndex,
    RECOMMENDED_ROI_POINTS,
};
use crate::spad::{spad_score, SpadConfig};
use crate::sre::{
    local_sre, sweep_hyperparameters, validate_kind, weighted_sum, SreSettings, SweepGrid,
};
use crate::ssi::{local_ssi_all, SsiKind, SsiSettings};

/// Patches with more than this many points count as informative.
const INFORMATIVE_PATCH_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub scores: Vec<ScoreKind>,
    /// ROI radius in radians.
    pub radius: f64,
    /// Scale-grid cell size in radians.
    pub scale: f64,
    /// Distance-lag ring width in radians.
    pub lag: f64,
    pub sectors: usize,
    pub min_points: usize,
    pub centers: CenterPolicy,
    pub sre: SreSettings,
    pub ssi: SsiSettings,
    pub spad: SpadConfig,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            scores: ScoreKind::ALL.to_vec(),
            radius: 0.05,
            scale: 0.01,
            lag: 0.005,
            sectors: 8,
            min_points: 2,
            centers: CenterPolicy::EveryPoint,
            sre: SreSettings::default(),
            ssi: SsiSettings::default(),
            spad: SpadConfig::default(),
        }
    }
}

impl ScoreConfig {
    pub fn partition_kind(&self, score: ScoreKind) -> Option<PartitionKind> {
        match score {
            ScoreKind::SgSre => Some(PartitionKind::ScaleGrid { scale: self.scale }),
            ScoreKind::DlSre => Some(PartitionKind::DistanceLag { lag: self.lag }),
            ScoreKind::DsSre => Some(PartitionKind::DirectionSector {
                sectors: self.sectors,
            }),
            _ => None,
        }
    }

    fn local_scores(&self) -> Vec<ScoreKind> {
        ScoreKind::ALL
            .into_iter()
            .filter(|k| k.is_local() && self.scores.contains(k))
            .collect()
    }

    /// The configuration as a JSON object, echoed in summaries.
    pub fn to_hyperparameters(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(GeoBiasError::InvalidParameter("no scores requested".into()));
        }
        check_radius(self.radius)?;
        for k in self.local_scores() {
            if let Some(kind) = self.partition_kind(k) {
                validate_kind(kind, self.radius)?;
            }
        }
        if self.ssi.k_neighbors == 0 {
            return Err(GeoBiasError::InvalidParameter(
                "k_neighbors must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius < std::f64::consts::FRAC_PI_2) {
        return Err(GeoBiasError::InvalidParameter(format!(
            "ROI radius {radius} must lie in (0, pi/2)"
        )));
    }
    Ok(())
}

fn ssi_kind(score: ScoreKind) -> Option<SsiKind> {
    match score {
        ScoreKind::USsi => Some(SsiKind::Unmarked),
        ScoreKind::MSsi => Some(SsiKind::Marked),
        _ => None,
    }
}

fn sre_value(
    roi: &Roi,
    map: &PerformanceMap,
    kind: PartitionKind,
    cfg: &ScoreConfig,
) -> Result<(f64, Partitioning)> {
    let part = partition(roi, map, kind)?;
    Ok((local_sre(roi, map, &part, &cfg.sre)?.value, part))
}

/// Scores every candidate ROI, excludes the unscoreable ones (including
/// any whose requested local score fails) and aggregates the rest with
/// normalized-size weights.
pub fn compute_scores(map: &PerformanceMap, cfg: &ScoreConfig) -> Result<ScoreReport> {
    cfg.validate()?;
    if map.is_empty() {
        return Err(GeoBiasError::InsufficientData("map has no points".into()));
    }
    let locals = cfg.local_scores();
    let ssi_kinds: Vec<SsiKind> = locals.iter().filter_map(|&k| ssi_kind(k)).collect();
    let index = SpatialIndex::with_cell_size(map, cfg.radius);
    let centers = cfg.centers.centers(map);

    let scored: Vec<(PointRecord, bool)> = centers
        .par_iter()
        .map(|&c| {
            let loc = map.location(c);
            let roi = retrieve_roi(&index, c, *loc, cfg.radius);
            let mut rec = PointRecord {
                lon: loc.lon(),
                lat: loc.lat(),
                roi_size: roi.len(),
                ..Default::default()
            };
            if let Some(reason) = scoreability(&roi, map, cfg.min_points) {
                rec.reason = Some(reason.code());
                return (rec, false);
            }
            let mut weak = false;
            let mut ssi = local_ssi_all(&roi, map, &ssi_kinds, &cfg.ssi).into_iter();
            for &k in &locals {
                let value = match (ssi_kind(k), cfg.partition_kind(k)) {
                    (Some(_), _) => ssi
                        .next()
                        .unwrap_or(Err(GeoBiasError::Layout))
                        .map(|l| l.value),
                    (None, Some(kind)) => sre_value(&roi, map, kind, cfg).map(|(v, p)| {
                        weak |= p
                            .patches
                            .iter()
                            .filter(|p| p.members.len() > INFORMATIVE_PATCH_POINTS)
                            .count()
                            < 2;
                        v
                    }),
                    (None, None) => Err(GeoBiasError::InvalidParameter(format!(
                        "{k} has no local score"
                    ))),
                };
                match value {
                    Ok(v) => rec.set_local(k, Some(v)),
                    Err(e) => {
                        let mut rec = PointRecord {
                            lon: rec.lon,
                            lat: rec.lat,
                            roi_size: rec.roi_size,
                            ..Default::default()
                        };
                        rec.reason = Some(ExclusionReason::ScoreError(e.code().into()).code());
                        return (rec, false);
                    }
                }
            }
            rec.scoreable = true;
            (rec, weak)
        })
        .collect();

    let mut counts = RoiCounts {
        candidates: scored.len(),
        ..Default::default()
    };
    let mut records = Vec::with_capacity(scored.len());
    for (rec, weak) in scored {
        match rec.reason.as_deref() {
            None => {
                counts.retained += 1;
                counts.below_recommended_size += usize::from(rec.roi_size < RECOMMENDED_ROI_POINTS);
                counts.weak_partitions += usize::from(weak);
            }
            Some("too_few_points") => counts.too_few_points += 1,
            Some("uniform_marks") => counts.uniform_marks += 1,
            Some(_) => counts.score_error += 1,
        }
        records.push(rec);
    }
    if counts.retained == 0 {
        return Err(GeoBiasError::NoScoreableRoi);
    }
    let sizes: Vec<usize> = records
        .iter()
        .filter(|r| r.scoreable)
        .map(|r| r.roi_size)
        .collect();
    let weights = size_weights(&sizes)?;
    let mut w = weights.iter();
    for rec in records.iter_mut().filter(|r| r.scoreable) {
        rec.weight = w.next().copied();
    }

    let mut globals = Globals::default();
    for &k in &locals {
        let values = records
            .iter()
            .filter(|r| r.scoreable)
            .map(|r| r.local(k).unwrap_or(0.0));
        globals.set(k, Some(weighted_sum(values, &weights)));
    }
    if cfg.scores.contains(&ScoreKind::Spad) {
        globals.set(ScoreKind::Spad, Some(spad_score(map, &cfg.spad)?));
    }

    if counts.below_recommended_size > 0 {
        log::warn!(
            "{} of {} retained ROIs have fewer than {} points; consider a larger radius",
            counts.below_recommended_size,
            counts.retained,
            RECOMMENDED_ROI_POINTS
        );
    }
    if counts.weak_partitions > 0 {
        log::warn!(
            "{} retained ROIs have fewer than 2 patches with more than {} points; partitions may be too fine or too coarse",
            counts.weak_partitions,
            INFORMATIVE_PATCH_POINTS
        );
    }

    Ok(ScoreReport {
        hyperparameters: cfg.to_hyperparameters(),
        metadata: RunMetadata::default(),
        records,
        globals,
        roi_counts: counts,
    })
}

/// One row of a sweep table: a radius x scale x lag x sectors combination
/// with the requested global scores. Failed scores are listed in `errors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub radius: f64,
    pub scale: Option<f64>,
    pub lag: Option<f64>,
    pub sectors: Option<usize>,
    pub globals: Globals,
    pub errors: Vec<(ScoreKind, String)>,
}

/// Global SSI for one radius: ROIs are kept per score, so a failure in one
/// SSI kind does not remove the ROI from the other.
fn sweep_ssi(
    map: &PerformanceMap,
    kinds: &[SsiKind],
    radius: f64,
    cfg: &ScoreConfig,
) -> Vec<Result<f64>> {
    if let Err(e) = check_radius(radius) {
        return kinds.iter().map(|_| Err(e.clone())).collect();
    }
    let index = SpatialIndex::with_cell_size(map, radius);
    let per_center: Vec<Option<(usize, Vec<Result<f64>>)>> = cfg
        .centers
        .centers(map)
        .par_iter()
        .map(|&c| {
            let roi = retrieve_roi(&index, c, *map.location(c), radius);
            if scoreability(&roi, map, cfg.min_points).is_some() {
                return None;
            }
            Some((
                roi.len(),
                local_ssi_all(&roi, map, kinds, &cfg.ssi)
                    .into_iter()
                    .map(|r| r.map(|l| l.value))
                    .collect(),
            ))
        })
        .collect();
    (0..kinds.len())
        .map(|j| {
            let mut sizes = Vec::new();
            let mut values = Vec::new();
            let mut first_err = None;
            for (size, res) in per_center.iter().flatten() {
                match &res[j] {
                    Ok(v) => {
                        sizes.push(*size);
                        values.push(*v);
                    }
                    Err(e) => {
                        first_err.get_or_insert_with(|| e.clone());
                    }
                }
            }
            if values.is_empty() {
                return Err(first_err.unwrap_or(GeoBiasError::NoScoreableRoi));
            }
            let weights = size_weights(&sizes)?;
            Ok(weighted_sum(values.into_iter(), &weights))
        })
        .collect()
}

/// Global scores over the Cartesian product of the grids. Grids of scores
/// that were not requested are ignored. SPAD does not depend on these
/// hyperparameters and is not swept.
pub fn sweep(map: &PerformanceMap, cfg: &ScoreConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    if grid.radii.is_empty() {
        return Err(GeoBiasError::InvalidParameter(
            "radius grid is empty".into(),
        ));
    }
    let wants = |k: ScoreKind| cfg.scores.contains(&k);
    let pick = |k: ScoreKind, len: usize| {
        if wants(k) && len == 0 {
            Err(GeoBiasError::InvalidParameter(format!(
                "{k} requested with an empty grid"
            )))
        } else {
            Ok(wants(k))
        }
    };
    let sre_grid = SweepGrid {
        radii: grid.radii.clone(),
        scales: if pick(ScoreKind::SgSre, grid.scales.len())? {
            grid.scales.clone()
        } else {
            vec![]
        },
        lags: if pick(ScoreKind::DlSre, grid.lags.len())? {
            grid.lags.clone()
        } else {
            vec![]
        },
        sectors: if pick(ScoreKind::DsSre, grid.sectors.len())? {
            grid.sectors.clone()
        } else {
            vec![]
        },
    };
    let ssi_kinds: Vec<SsiKind> = [
        (ScoreKind::USsi, SsiKind::Unmarked),
        (ScoreKind::MSsi, SsiKind::Marked),
    ]
    .into_iter()
    .filter(|(k, _)| wants(*k))
    .map(|(_, s)| s)
    .collect();
    if ssi_kinds.is_empty() && sre_grid.kinds().is_empty() {
        return Err(GeoBiasError::InvalidParameter(
            "sweep needs at least one SSI or SRE score".into(),
        ));
    }

    let sre_cells = if sre_grid.kinds().is_empty() {
        Vec::new()
    } else {
        sweep_hyperparameters(map, &sre_grid, &cfg.sre, cfg.centers, cfg.min_points)?
    };
    let opts = |v: &[f64]| {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    };
    let scales = opts(&sre_grid.scales);
    let lags = opts(&sre_grid.lags);
    let sectors: Vec<Option<usize>> = if sre_grid.sectors.is_empty() {
        vec![None]
    } else {
        sre_grid.sectors.iter().copied().map(Some).collect()
    };

    let mut rows = Vec::new();
    for &radius in &grid.radii {
        let ssi = sweep_ssi(map, &ssi_kinds, radius, cfg);
        let sre_of = |kind: PartitionKind| {
            sre_cells
                .iter()
                .find(|c| c.radius.to_bits() == radius.to_bits() && c.kind == kind)
                .map(|c| &c.result)
        };
        for &scale in &scales {
            for &lag in &lags {
                for &sector in &sectors {
                    let mut row = SweepRow {
                        radius,
                        scale,
                        lag,
                        sectors: sector,
                        globals: Globals::default(),
                        errors: vec![],
                    };
                    let mut put = |k: ScoreKind, r: Result<f64>| match r {
                        Ok(v) => row.globals.set(k, Some(v)),
                        Err(e) => row.errors.push((k, e.code().to_string())),
                    };
                    for (j, &kind) in ssi_kinds.iter().enumerate() {
                        let k = if kind == SsiKind::Unmarked {
                            ScoreKind::USsi
                        } else {
                            ScoreKind::MSsi
                        };
                        put(k, ssi[j].clone());
                    }
                    let parts = [
                        (
                            ScoreKind::SgSre,
                            scale.map(|scale| PartitionKind::ScaleGrid { scale }),
                        ),
                        (
                            ScoreKind::DlSre,
                            lag.map(|lag| PartitionKind::DistanceLag { lag }),
                        ),
                        (
                            ScoreKind::DsSre,
                            sector.map(|sectors| PartitionKind::DirectionSector { sectors }),
                        ),
                    ];
                    for (k, kind) in parts {
                        if let Some(res) = kind.and_then(sre_of) {
                            put(k, res.as_ref().map(|g| g.value).map_err(Clone::clone));
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: [&str; 10] = [
    "radius", "scale", "lag", "sectors", "u_ssi", "m_ssi", "sg_sre", "dl_sre", "ds_sre", "errors",
];

/// Sweep table as CSV. `errors` holds `score:Code` pairs joined by `;`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], sink: W) -> Result<()> {
    let io = |e: csv::Error| GeoBiasError::Io {
        context: "sweep CSV".into(),
        message: e.to_string(),
    };
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SWEEP_HEADER).map_err(io)?;
    for r in rows {
        let errors: Vec<String> = r.errors.iter().map(|(k, c)| format!("{k}:{c}")).collect();
        w.write_record([
            r.radius.to_string(),
            opt(r.scale),
            opt(r.lag),
            r.sectors.map(|s| s.to_string()).unwrap_or_default(),
            opt(r.globals.u_ssi),
            opt(r.globals.m_ssi),
            opt(r.globals.sg_sre),
            opt(r.globals.dl_sre),
            opt(r.globals.ds_sre),
            errors.join(";"),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| GeoBiasError::Io {
        context: "sweep CSV".into(),
        message: e.to_string(),
    })
}

//! Partition functions splitting an ROI into disjoint patches: square grid
//! cells, concentric distance rings and direction sectors.
//!
//! Grid cells live in the azimuthal-equidistant plane of the ROI center
//! (x east, y north), with the origin at the center. Rings and sectors use
//! half-open intervals; sector 0 starts at true north and sectors run
//! clockwise.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GeoBiasError, Result};
use crate::geometry::{great_circle_distance, initial_bearing, project_azimuthal};
use crate::map::PerformanceMap;
use crate::roi::Roi;

/// The three shipped partition functions with their hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Square cells of side `scale` radians.
    ScaleGrid { scale: f64 },
    /// Rings of width `lag` radians.
    DistanceLag { lag: f64 },
    /// `sectors` equal-angle sectors.
    DirectionSector { sectors: usize },
}

impl PartitionKind {
    /// Short score name (`sg_sre`, `dl_sre`, `ds_sre`).
    pub fn score_name(&self) -> &'static str {
        match self {
            Self::ScaleGrid { .. } => "sg_sre",
            Self::DistanceLag { .. } => "dl_sre",
            Self::DirectionSector { .. } => "ds_sre",
        }
    }

    /// The hyperparameter as a number.
    pub fn parameter(&self) -> f64 {
        match *self {
            Self::ScaleGrid { scale } => scale,
            Self::DistanceLag { lag } => lag,
            Self::DirectionSector { sectors } => sectors as f64,
        }
    }
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ScaleGrid { scale } => write!(f, "scale_grid({scale})"),
            Self::DistanceLag { lag } => write!(f, "distance_lag({lag})"),
            Self::DirectionSector { sectors } => write!(f, "direction_sector({sectors})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatchKey {
    Cell(i64, i64),
    Ring(u64),
    Sector(usize),
}

/// A non-empty patch. `members` are positions into `Roi::members`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub key: PatchKey,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitioning {
    pub kind: PartitionKind,
    /// Sorted by key.
    pub patches: Vec<Patch>,
}

impl Partitioning {
    pub fn patch_sizes(&self) -> Vec<usize> {
        self.patches.iter().map(|p| p.members.len()).collect()
    }

    pub fn member_count(&self) -> usize {
        self.patches.iter().map(|p| p.members.len()).sum()
    }

    fn from_keys(kind: PartitionKind, keys: impl IntoIterator<Item = PatchKey>) -> Self {
        let mut groups: BTreeMap<PatchKey, Vec<usize>> = BTreeMap::new();
        for (pos, key) in keys.into_iter().enumerate() {
            groups.entry(key).or_default().push(pos);
        }
        let patches = groups
            .into_iter()
            .map(|(key, members)| Patch { key, members })
            .collect();
        Self { kind, patches }
    }
}

/// Square cells `(floor(x / s), floor(y / s))` in the ROI's local plane.
pub fn scale_grid(roi: &Roi, map: &PerformanceMap, scale: f64) -> Result<Partitioning> {
    if !(scale > 0.0 && scale.is_finite() && scale <= 2.0 * roi.radius) {
        return Err(GeoBiasError::InvalidScale(scale));
    }
    let keys = roi
        .members
        .iter()
        .map(|&i| {
            let xy = project_azimuthal(&roi.center, map.location(i))?;
            Ok(PatchKey::Cell(
                (xy.x / scale).floor() as i64,
                (xy.y / scale).floor() as i64,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Partitioning::from_keys(
        PartitionKind::ScaleGrid { scale },
        keys,
    ))
}

/// Rings `floor(d(center, p) / w)`.
pub fn distance_lag(roi: &Roi, map: &PerformanceMap, lag: f64) -> Result<Partitioning> {
    if !(lag > 0.0 && lag.is_finite() && lag <= roi.radius) {
        return Err(GeoBiasError::InvalidLag(lag));
    }
    let keys = roi.members.iter().map(|&i| {
        let d = great_circle_distance(&roi.center, map.location(i)).radians();
        PatchKey::Ring((d / lag).floor() as u64)
    });
    Ok(Partitioning::from_keys(
        PartitionKind::DistanceLag { lag },
        keys,
    ))
}

/// Sectors `floor(bearing / (2pi / k))`; a member at the center goes to
/// sector 0.
pub fn direction_sector(roi: &Roi, map: &PerformanceMap, sectors: usize) -> Result<Partitioning> {
    if sectors < 2 {
        return Err(GeoBiasError::InvalidSectorCount(sectors));
    }
    let width = TAU / sectors as f64;
    let keys = roi
        .members
        .iter()
        .map(|&i| {
            let p = map.location(i);
            if great_circle_distance(&roi.center, p).radians() == 0.0 {
                return Ok(PatchKey::Sector(0));
            }
            let b = initial_bearing(&roi.center, p)?;
            Ok(PatchKey::Sector(
                ((b / width).floor() as usize).min(sectors - 1),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Partitioning::from_keys(
        PartitionKind::DirectionSector { sectors },
        keys,
    ))
}

/// Dispatches on `kind`.
pub fn partition(roi: &Roi, map: &PerformanceMap, kind: PartitionKind) -> Result<Partitioning> {
    match kind {
        PartitionKind::ScaleGrid { scale } => scale_grid(roi, map, scale),
        PartitionKind::DistanceLag { lag } => distance_lag(roi, map, lag),
        PartitionKind::DirectionSector { sectors } => direction_sector(roi, map, sectors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{unproject_azimuthal, GeoLocation, LocalXY};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn roi_from_xy(center: GeoLocation, radius: f64, xy: &[(f64, f64)]) -> (Roi, PerformanceMap) {
        let rows: Vec<(f64, f64, f64)> = xy
            .iter()
            .map(|&(x, y)| {
                let p = unproject_azimuthal(&center, LocalXY { x, y });
                (p.lon(), p.lat(), 0.0)
            })
            .collect();
        let map = PerformanceMap::from_triples(&rows).unwrap();
        let roi = Roi {
            id: 0,
            center,
            radius,
            members: (0..xy.len()).collect(),
        };
        (roi, map)
    }

    fn roi_from_polar(radius: f64, polar: &[(f64, f64)]) -> (Roi, PerformanceMap) {
        let c = GeoLocation::new(20.0, -10.0).unwrap();
        let xy: Vec<(f64, f64)> = polar
            .iter()
            .map(|&(b, d)| (d * b.sin(), d * b.cos()))
            .collect();
        roi_from_xy(c, radius, &xy)
    }

    fn keys(p: &Partitioning) -> Vec<PatchKey> {
        p.patches.iter().map(|p| p.key).collect()
    }

    #[test]
    fn grid_examples() {
        let c = GeoLocation::new(0.0, 0.0).unwrap();
        let (roi, map) = roi_from_xy(c, 0.05, &[(0.012, -0.003)]);
        assert_eq!(
            keys(&scale_grid(&roi, &map, 0.01).unwrap()),
            vec![PatchKey::Cell(1, -1)]
        );

        let (roi, map) = roi_from_xy(c, 0.05, &[(0.001, 0.001), (0.002, 0.003), (0.004, 0.0005)]);
        let p = scale_grid(&roi, &map, 0.01).unwrap();
        assert_eq!(p.patches.len(), 1);
        assert_eq!(p.patches[0].members, vec![0, 1, 2]);

        // hand enumeration: quadrant cells (0,0), (-1,0), (0,-1), (-1,-1)
        let (roi, map) = roi_from_xy(
            c,
            0.05,
            &[(0.03, 0.03), (-0.03, 0.03), (0.03, -0.03), (-0.03, -0.03)],
        );
        let got: BTreeSet<PatchKey> = keys(&scale_grid(&roi, &map, 0.05).unwrap())
            .into_iter()
            .collect();
        let want: BTreeSet<PatchKey> = [
            PatchKey::Cell(0, 0),
            PatchKey::Cell(-1, 0),
            PatchKey::Cell(0, -1),
            PatchKey::Cell(-1, -1),
        ]
        .into();
        assert_eq!(got, want);

        assert_eq!(
            scale_grid(&roi, &map, 0.0),
            Err(GeoBiasError::InvalidScale(0.0))
        );
        assert_eq!(
            scale_grid(&roi, &map, -1.0),
            Err(GeoBiasError::InvalidScale(-1.0))
        );
        assert_eq!(
            scale_grid(&roi, &map, 0.2),
            Err(GeoBiasError::InvalidScale(0.2))
        );
    }

    #[test]
    fn ring_examples() {
        let (roi, map) = roi_from_polar(0.05, &[(1.0, 0.012), (0.0, 0.0)]);
        let p = distance_lag(&roi, &map, 0.005).unwrap();
        assert_eq!(keys(&p), vec![PatchKey::Ring(0), PatchKey::Ring(2)]);
        assert_eq!(
            distance_lag(&roi, &map, 0.0),
            Err(GeoBiasError::InvalidLag(0.0))
        );
    }

    #[test]
    fn sector_examples() {
        let (roi, map) = roi_from_polar(0.05, &[(95f64.to_radians(), 0.01)]);
        assert_eq!(
            keys(&direction_sector(&roi, &map, 8).unwrap()),
            vec![PatchKey::Sector(2)]
        );

        let (roi, map) = roi_from_polar(0.05, &[(0.0, 0.01), (0.0, 0.0)]);
        let p = direction_sector(&roi, &map, 4).unwrap();
        assert_eq!(
            p.patches,
            vec![Patch {
                key: PatchKey::Sector(0),
                members: vec![0, 1]
            }]
        );

        let bearings = [15f64, 45.0, 350.0].map(|b| (b.to_radians(), 0.02));
        let (roi, map) = roi_from_polar(0.05, &bearings);
        assert_eq!(
            keys(&direction_sector(&roi, &map, 12).unwrap()),
            vec![
                PatchKey::Sector(0),
                PatchKey::Sector(1),
                PatchKey::Sector(11)
            ]
        );
        assert_eq!(
            direction_sector(&roi, &map, 1),
            Err(GeoBiasError::InvalidSectorCount(1))
        );
    }

    #[test]
    fn pole_center_is_rejected() {
        let c = GeoLocation::new(0.0, 90.0).unwrap();
        let rows = [(0.0, 89.5, 1.0), (90.0, 89.5, 0.0)];
        let map = PerformanceMap::from_triples(&rows).unwrap();
        let roi = Roi {
            id: 0,
            center: c,
            radius: 0.05,
            members: vec![0, 1],
        };
        assert_eq!(
            direction_sector(&roi, &map, 4),
            Err(GeoBiasError::UndefinedBearing)
        );
        assert!(distance_lag(&roi, &map, 0.01).is_ok());
    }

    fn arb_polar() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0..TAU, 0.0..0.0499f64), 1..80)
    }

    proptest! {
        #[test]
        fn partitions_are_exhaustive_and_disjoint(polar in arb_polar(), scale in 0.002..0.1f64, lag in 0.002..0.05f64, k in 2usize..16) {
            let (roi, map) = roi_from_polar(0.05, &polar);
            for kind in [PartitionKind::ScaleGrid { scale }, PartitionKind::DistanceLag { lag }, PartitionKind::DirectionSector { sectors: k }] {
                let p = partition(&roi, &map, kind).unwrap();
                let mut seen: Vec<usize> = p.patches.iter().flat_map(|q| q.members.clone()).collect();
                prop_assert!(p.patches.iter().all(|q| !q.members.is_empty()));
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..polar.len()).collect::<Vec<_>>());
                let unique: BTreeSet<PatchKey> = keys(&p).into_iter().collect();
                prop_assert_eq!(unique.len(), p.patches.len());
            }
        }

        #[test]
        fn halving_lag_refines_rings(polar in arb_polar(), lag in 0.004..0.05f64) {
            let (roi, map) = roi_from_polar(0.05, &polar);
            let coarse = distance_lag(&roi, &map, lag).unwrap();
            let fine = distance_lag(&roi, &map, lag / 2.0).unwrap();
            let ring_of = |p: &Partitioning, m: usize| p.patches.iter().find(|q| q.members.contains(&m)).unwrap().key;
            for patch in &fine.patches {
                let parents: BTreeSet<PatchKey> = patch.members.iter().map(|&m| ring_of(&coarse, m)).collect();
                prop_assert_eq!(parents.len(), 1);
            }
        }

        #[test]
        fn sector_rotation_is_cyclic(k in 2usize..13, raw in prop::collection::vec((0usize..1000, 0.005..0.04f64), 1..40)) {
            // bearings placed mid-way inside slots of width 2pi/(4k) so the
            // rotation cannot straddle a sector boundary through rounding
            let slots = 4 * k;
            let slot = TAU / slots as f64;
            let polar: Vec<(f64, f64)> = raw.iter().map(|&(s, d)| (((s % slots) as f64 + 0.5) * slot, d)).collect();
            let rotated: Vec<(f64, f64)> = polar.iter().map(|&(b, d)| ((b + TAU / k as f64) % TAU, d)).collect();
            let (roi, map) = roi_from_polar(0.05, &polar);
            let (roi_r, map_r) = roi_from_polar(0.05, &rotated);
            let a = direction_sector(&roi, &map, k).unwrap();
            let b = direction_sector(&roi_r, &map_r, k).unwrap();
            let mut shifted: Vec<(PatchKey, Vec<usize>)> = a.patches.iter().map(|p| match p.key {
                PatchKey::Sector(s) => (PatchKey::Sector((s + 1) % k), p.members.clone()),
                other => (other, p.members.clone()),
            }).collect();
            shifted.sort();
            let got: Vec<(PatchKey, Vec<usize>)> = b.patches.iter().map(|p| (p.key, p.members.clone())).collect();
            prop_assert_eq!(got, shifted);
        }
    }
}

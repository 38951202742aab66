//! Spatial self-information scores. Each ROI's points are merged with an
//! even background of mark-0 points, spatial autocorrelation is measured with
//! Moran's I over k-nearest-neighbor weights, and the result is expressed as
//! surprisal (bits) under the permutation null.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{GeoBiasError, Result};
use crate::geometry::{background_count, fibonacci_cap, AngularDistance, GeoLocation};
use crate::map::PerformanceMap;
use crate::roi::Roi;

/// Largest reported surprisal. Keeps underflowing tail probabilities finite.
pub const MAX_SURPRISAL_BITS: f64 = 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsiKind {
    /// Data points carry mark 1: only locations matter.
    Unmarked,
    /// Data points carry their performance value.
    Marked,
}

impl SsiKind {
    pub fn score_name(self) -> &'static str {
        match self {
            Self::Unmarked => "u_ssi",
            Self::Marked => "m_ssi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsiSettings {
    /// Background density (points per squared radian). `None` matches the
    /// background count to the number of data points.
    pub rho: Option<f64>,
    /// Minimum number of background points.
    pub background_floor: usize,
    pub k_neighbors: usize,
    /// ROIs with more data points are subsampled to this many.
    pub max_roi_points: usize,
    /// Marked patterns use `1` for marks `>= t` and `0` otherwise.
    pub mark_threshold: Option<f64>,
}

impl Default for SsiSettings {
    fn default() -> Self {
        Self {
            rho: None,
            background_floor: 10,
            k_neighbors: 8,
            max_roi_points: 5000,
            mark_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointOrigin {
    Data,
    Background,
}

/// Data and background points of one ROI with their marks.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPattern {
    pub locations: Vec<GeoLocation>,
    pub marks: Vec<f64>,
    pub origins: Vec<PointOrigin>,
}

impl MarkedPattern {
    pub fn new(
        locations: Vec<GeoLocation>,
        marks: Vec<f64>,
        origins: Vec<PointOrigin>,
    ) -> Result<Self> {
        if locations.len() != marks.len() || marks.len() != origins.len() {
            return Err(GeoBiasError::InvalidParameter(
                "pattern columns differ in length".into(),
            ));
        }
        if marks.iter().any(|m| !m.is_finite()) {
            return Err(GeoBiasError::InvalidParameter(
                "pattern marks must be finite".into(),
            ));
        }
        Ok(Self {
            locations,
            marks,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn count(&self, origin: PointOrigin) -> usize {
        self.origins.iter().filter(|&&o| o == origin).count()
    }
}

/// Evenly strided positions when `n` exceeds `cap`.
fn subsample(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap || cap == 0 {
        return (0..n).collect();
    }
    (0..cap).map(|j| j * n / cap).collect()
}

/// Merges the ROI's data points with a Fibonacci-lattice background of
/// mark-0 points. The background size is `ceil(rho * pi * r^2)`, raised to
/// `background_floor` when smaller.
pub fn assemble_pattern(
    roi: &Roi,
    map: &PerformanceMap,
    kind: SsiKind,
    settings: &SsiSettings,
) -> Result<MarkedPattern> {
    let picked = subsample(roi.len(), settings.max_roi_points);
    let data_count = picked.len();
    let requested = match settings.rho {
        Some(rho) if !(rho > 0.0 && rho.is_finite()) => {
            return Err(GeoBiasError::InvalidParameter(format!(
                "background density {rho} must be > 0"
            )));
        }
        Some(rho) => background_count(rho, roi.radius),
        None => data_count,
    };
    let bg_count = requested.max(settings.background_floor).max(1);
    let background = fibonacci_cap(&roi.center, AngularDistance::new(roi.radius)?, bg_count)?;

    let mut locations = Vec::with_capacity(data_count + bg_count);
    let mut marks = Vec::with_capacity(data_count + bg_count);
    for &pos in &picked {
        let i = roi.members[pos];
        locations.push(*map.location(i));
        marks.push(match (kind, settings.mark_threshold) {
            (SsiKind::Unmarked, _) => 1.0,
            (SsiKind::Marked, None) => map.perf(i),
            (SsiKind::Marked, Some(t)) => f64::from(u8::from(map.perf(i) >= t)),
        });
    }
    locations.extend(background);
    marks.resize(data_count + bg_count, 0.0);
    let mut origins = vec![PointOrigin::Data; data_count];
    origins.resize(data_count + bg_count, PointOrigin::Background);
    MarkedPattern::new(locations, marks, origins)
}

fn chord2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// k-nearest-neighbor lists over unit vectors. Chord length is monotone in
/// great-circle distance, so ranking by chord gives the great-circle
/// neighbors. Ties go to the lower index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    n: usize,
    /// Row `i` at `[i*k, (i+1)*k)`, ordered by (distance, index).
    neighbors: Vec<usize>,
    /// `S1` and `S2` of the row-standardized weights.
    s1: f64,
    s2: f64,
}

impl KnnGraph {
    /// Exact kNN via a uniform grid on two tangent coordinates. The planar
    /// offset never exceeds the chord, which bounds the ring search.
    pub fn build(points: &[[f64; 3]], k: usize) -> Self {
        let n = points.len();
        let k = k.min(n.saturating_sub(1));
        if k == 0 {
            return Self {
                k,
                n,
                neighbors: Vec::new(),
                s1: 0.0,
                s2: 0.0,
            };
        }
        let (u, v) = tangent_basis(points);
        let planar: Vec<(f64, f64)> = points.iter().map(|p| (dot(p, &u), dot(p, &v))).collect();
        let (mut amin, mut amax, mut bmin, mut bmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(a, b) in &planar {
            amin = amin.min(a);
            amax = amax.max(a);
            bmin = bmin.min(b);
            bmax = bmax.max(b);
        }
        let area = ((amax - amin) * (bmax - bmin)).max(0.0);
        let mut cell = (2.0 * area / n as f64).sqrt();
        if cell.is_nan() || cell <= 0.0 {
            cell = ((amax - amin).max(bmax - bmin) / n as f64).max(1e-12);
        }
        let dims = |cell: f64| {
            let cols = ((amax - amin) / cell).floor() as usize + 1;
            let rows = ((bmax - bmin) / cell).floor() as usize + 1;
            (cols, rows)
        };
        // elongated sets would otherwise get far more cells than points
        while dims(cell).0.saturating_mul(dims(cell).1) > 4 * n + 4 {
            cell *= 2.0;
        }
        let (cols, rows) = dims(cell);
        let cell_of = |(a, b): (f64, f64)| {
            let c = (((a - amin) / cell) as usize).min(cols - 1);
            let r = (((b - bmin) / cell) as usize).min(rows - 1);
            (c, r)
        };
        // counting sort of points into cells
        let mut start = vec![0usize; cols * rows + 1];
        let cells: Vec<(usize, usize)> = planar.iter().map(|&p| cell_of(p)).collect();
        for &(c, r) in &cells {
            start[r * cols + c + 1] += 1;
        }
        for i in 1..start.len() {
            start[i] += start[i - 1];
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; n];
        for (i, &(c, r)) in cells.iter().enumerate() {
            order[fill[r * cols + c]] = i;
            fill[r * cols + c] += 1;
        }

        let neighbors: Vec<usize> = (0..n)
            .flat_map(|i| {
                let (ci, ri) = (cells[i].0 as i64, cells[i].1 as i64);
                let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
                let max_ring = cols.max(rows) as i64;
                for ring in 0..=max_ring {
                    let mut visit = |c: i64, r: i64| {
                        if c < 0 || r < 0 || c >= cols as i64 || r >= rows as i64 {
                            return;
                        }
                        let id = r as usize * cols + c as usize;
                        for &j in &order[start[id]..start[id + 1]] {
                            if j == i {
                                continue;
                            }
                            let cand = (chord2(&points[i], &points[j]), j);
                            if best.len() == k && !less(cand, best[k - 1]) {
                                continue;
                            }
                            let at = best.partition_point(|&b| less(b, cand));
                            best.insert(at, cand);
                            best.truncate(k);
                        }
                    };
                    if ring == 0 {
                        visit(ci, ri);
                    } else {
                        for d in -ring..=ring {
                            visit(ci + d, ri - ring);
                            visit(ci + d, ri + ring);
                        }
                        for d in (-ring + 1)..ring {
                            visit(ci - ring, ri + d);
                            visit(ci + ring, ri + d);
                        }
                    }
                    // unvisited points are more than ring * cell away in the plane
                    let reach = ring as f64 * cell * (1.0 - 1e-9);
                    if best.len() == k && best[k - 1].0.sqrt() < reach {
                        break;
                    }
                }
                best.into_iter().map(|(_, j)| j)
            })
            .collect();
        let (s1, s2) = weight_moments(&neighbors, n, k);
        Self {
            k,
            n,
            neighbors,
            s1,
            s2,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Neighbors of point `i`.
    pub fn of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }
}

/// `S1 = 1/2 sum_ij (w_ij + w_ji)^2` and `S2 = sum_i (w_i. + w_.i)^2` for
/// weights `1/k` on each kNN edge. Mutual edges weigh `(2/k)^2` per ordered
/// pair; one-way edges contribute `(1/k)^2` for both orders.
fn weight_moments(neighbors: &[usize], n: usize, k: usize) -> (f64, f64) {
    if k == 0 {
        return (0.0, 0.0);
    }
    let w = 1.0 / k as f64;
    let mut sorted = neighbors.to_vec();
    sorted.chunks_mut(k).for_each(|row| row.sort_unstable());
    let mut in_degree = vec![0usize; n];
    let mut s1_twice = 0.0;
    for (i, row) in sorted.chunks(k).enumerate() {
        for &j in row {
            in_degree[j] += 1;
            let mutual = sorted[j * k..(j + 1) * k].binary_search(&i).is_ok();
            s1_twice += if mutual { 4.0 * w * w } else { 2.0 * w * w };
        }
    }
    let s2 = in_degree
        .iter()
        .map(|&d| (1.0 + d as f64 * w).powi(2))
        .sum();
    (s1_twice / 2.0, s2)
}

fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Orthonormal pair spanning the plane normal to the mean direction.
fn tangent_basis(points: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut m = [0.0; 3];
    for p in points {
        for d in 0..3 {
            m[d] += p[d];
        }
    }
    let norm = dot(&m, &m).sqrt();
    let m = if norm > 1e-12 {
        m.map(|x| x / norm)
    } else {
        [0.0, 0.0, 1.0]
    };
    // axis least aligned with m
    let axis = if m[0].abs() <= m[1].abs() && m[0].abs() <= m[2].abs() {
        [1.0, 0.0, 0.0]
    } else if m[1].abs() <= m[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let cross = |a: &[f64; 3], b: &[f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let u = cross(&m, &axis);
    let un = dot(&u, &u).sqrt();
    let u = u.map(|x| x / un);
    let v = cross(&m, &u);
    (u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranResult {
    pub i: f64,
    /// `-1 / (n - 1)`.
    pub expected: f64,
    /// Randomization-null variance.
    pub variance: f64,
    pub z: f64,
    pub n: usize,
}

/// Moran's I over a fixed kNN graph with row-standardized weights, with
/// moments under random permutation of the marks. Needs `n >= 4` (the
/// randomization variance divides by `(n-1)(n-2)(n-3)`). A complete graph
/// (`k = n - 1`) has zero variance and is reported as degenerate.
pub fn moran(graph: &KnnGraph, marks: &[f64]) -> Result<MoranResult> {
    let n = marks.len();
    if n < 4 {
        return Err(GeoBiasError::InsufficientPoints(n));
    }
    if graph.len() != n {
        return Err(GeoBiasError::InvalidParameter(
            "graph and marks differ in size".into(),
        ));
    }
    let nf = n as f64;
    let mean = marks.iter().sum::<f64>() / nf;
    let z: Vec<f64> = marks.iter().map(|m| m - mean).collect();
    let m2: f64 = z.iter().map(|v| v * v).sum();
    if m2.is_nan() || m2 <= 0.0 || marks.iter().all(|&m| m == marks[0]) {
        return Err(GeoBiasError::DegeneratePattern);
    }
    let m4: f64 = z.iter().map(|v| v.powi(4)).sum();

    let w = 1.0 / graph.k as f64;
    let cross: f64 = (0..n)
        .map(|i| z[i] * graph.of(i).iter().map(|&j| z[j]).sum::<f64>() * w)
        .sum();
    let (s0, s1, s2) = (nf, graph.s1, graph.s2);

    let i_stat = (nf / s0) * cross / m2;
    let expected = -1.0 / (nf - 1.0);
    let b2 = nf * m4 / (m2 * m2);
    let numer = nf * ((nf * nf - 3.0 * nf + 3.0) * s1 - nf * s2 + 3.0 * s0 * s0)
        - b2 * ((nf * nf - nf) * s1 - 2.0 * nf * s2 + 6.0 * s0 * s0);
    let denom = (nf - 1.0) * (nf - 2.0) * (nf - 3.0) * s0 * s0;
    let variance = numer / denom - expected * expected;
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(GeoBiasError::DegeneratePattern);
    }
    let z_score = (i_stat - expected) / variance.sqrt();
    Ok(MoranResult {
        i: i_stat,
        expected,
        variance,
        z: z_score,
        n,
    })
}

/// Moran's I of a pattern with `k = min(k_neighbors, n - 1)`.
pub fn morans_i(pattern: &MarkedPattern, k_neighbors: usize) -> Result<MoranResult> {
    if pattern.len() < 4 {
        return Err(GeoBiasError::InsufficientPoints(pattern.len()));
    }
    if k_neighbors == 0 {
        return Err(GeoBiasError::InvalidParameter(
            "k_neighbors must be >= 1".into(),
        ));
    }
    moran(&pattern_graph(pattern, k_neighbors), &pattern.marks)
}

fn pattern_graph(pattern: &MarkedPattern, k_neighbors: usize) -> KnnGraph {
    let vectors: Vec<[f64; 3]> = pattern
        .locations
        .iter()
        .map(GeoLocation::unit_vector)
        .collect();
    KnnGraph::build(&vectors, k_neighbors)
}

/// Two-sided normal-tail surprisal `-log2(2 Phi(-|z|))` in bits, clamped to
/// `[0, MAX_SURPRISAL_BITS]`.
pub fn ssi_convert(moran: &MoranResult) -> f64 {
    surprisal_bits(moran.z)
}

pub(crate) fn surprisal_bits(z: f64) -> f64 {
    if z.is_nan() {
        return 0.0;
    }
    let x = z.abs() / std::f64::consts::SQRT_2;
    let ln_tail = if x < 20.0 {
        erfc(x).ln()
    } else if x.is_finite() {
        // erfc(x) ~ exp(-x^2) / (x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4))
        let x2 = x * x;
        -x2 - (x * std::f64::consts::PI.sqrt()).ln() + (1.0 - 0.5 / x2 + 0.75 / (x2 * x2)).ln()
    } else {
        f64::NEG_INFINITY
    };
    (-ln_tail / std::f64::consts::LN_2).clamp(0.0, MAX_SURPRISAL_BITS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSsi {
    pub roi_id: usize,
    pub kind: SsiKind,
    /// Bits, >= 0.
    pub value: f64,
    pub moran: MoranResult,
}

/// `assemble_pattern`, `morans_i` and `ssi_convert` in sequence.
pub fn local_ssi(
    roi: &Roi,
    map: &PerformanceMap,
    kind: SsiKind,
    settings: &SsiSettings,
) -> Result<LocalSsi> {
    let pattern = assemble_pattern(roi, map, kind, settings)?;
    let moran = morans_i(&pattern, settings.k_neighbors)?;
    Ok(LocalSsi {
        roi_id: roi.id,
        kind,
        value: ssi_convert(&moran),
        moran,
    })
}

/// [`local_ssi`] for several kinds at once. The patterns share their
/// locations, so the neighbor graph is built a single time.
pub fn local_ssi_all(
    roi: &Roi,
    map: &PerformanceMap,
    kinds: &[SsiKind],
    settings: &SsiSettings,
) -> Vec<Result<LocalSsi>> {
    let Some(&first) = kinds.first() else {
        return Vec::new();
    };
    let base = match assemble_pattern(roi, map, first, settings) {
        Ok(p) if p.len() >= 4 && settings.k_neighbors > 0 => p,
        Ok(p) if p.len() < 4 => {
            return kinds
                .iter()
                .map(|_| Err(GeoBiasError::InsufficientPoints(p.len())))
                .collect()
        }
        Ok(_) => {
            return kinds
                .iter()
                .map(|_| {
                    Err(GeoBiasError::InvalidParameter(
                        "k_neighbors must be >= 1".into(),
                    ))
                })
                .collect()
        }
        Err(e) => return kinds.iter().map(|_| Err(e.clone())).collect(),
    };
    let graph = pattern_graph(&base, settings.k_neighbors);
    kinds
        .iter()
        .map(|&kind| {
            let marks = if kind == first {
                base.marks.clone()
            } else {
                assemble_pattern(roi, map, kind, settings)?.marks
            };
            let moran = moran(&graph, &marks)?;
            Ok(LocalSsi {
                roi_id: roi.id,
                kind,
                value: ssi_convert(&moran),
                moran,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roi_over(map: &PerformanceMap, center: GeoLocation, radius: f64) -> Roi {
        Roi {
            id: 0,
            center,
            radius,
            members: (0..map.len()).collect(),
        }
    }

    fn random_vectors(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                let lon: f64 = rng.gen_range(-spread..spread);
                let lat: f64 = rng.gen_range(-spread..spread);
                GeoLocation::new(lon, lat).unwrap().unit_vector()
            })
            .collect()
    }

    /// Dense reference: full distance sort per row, full weight matrix and
    /// the textbook double sums.
    fn dense_moran(points: &[[f64; 3]], marks: &[f64], k: usize) -> (f64, f64) {
        let n = points.len();
        let k = k.min(n - 1);
        let mut wm = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (chord2(&points[i], &points[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, j) in &d[..k] {
                wm[i][j] = 1.0 / k as f64;
            }
        }
        let nf = n as f64;
        let mean = marks.iter().sum::<f64>() / nf;
        let mut s0 = 0.0;
        let mut num = 0.0;
        let mut s1 = 0.0;
        for i in 0..n {
            for j in 0..n {
                s0 += wm[i][j];
                num += wm[i][j] * (marks[i] - mean) * (marks[j] - mean);
                s1 += (wm[i][j] + wm[j][i]).powi(2);
            }
        }
        s1 /= 2.0;
        let s2: f64 = (0..n)
            .map(|i| {
                ((0..n).map(|j| wm[i][j]).sum::<f64>() + (0..n).map(|j| wm[j][i]).sum::<f64>())
                    .powi(2)
            })
            .sum();
        let den: f64 = marks.iter().map(|m| (m - mean).powi(2)).sum();
        let i_stat = nf / s0 * num / den;
        let m4: f64 = marks.iter().map(|m| (m - mean).powi(4)).sum::<f64>() / nf;
        let b2 = m4 / (den / nf).powi(2);
        let e = -1.0 / (nf - 1.0);
        let e2 = (nf * ((nf * nf - 3.0 * nf + 3.0) * s1 - nf * s2 + 3.0 * s0 * s0)
            - b2 * ((nf * nf - nf) * s1 - 2.0 * nf * s2 + 6.0 * s0 * s0))
            / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0) * s0 * s0);
        (i_stat, e2 - e * e)
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, spread) in [(5, 1.0), (60, 0.01), (300, 2.0), (500, 40.0)] {
            let pts = random_vectors(&mut rng, n, spread);
            let graph = KnnGraph::build(&pts, 8);
            for i in 0..n {
                let mut d: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (chord2(&pts[i], &pts[j]), j))
                    .collect();
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let expect: Vec<usize> = d.iter().take(8).map(|x| x.1).collect();
                assert_eq!(graph.of(i), expect.as_slice(), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn knn_coincident_points_tie_by_index() {
        let p = GeoLocation::new(1.0, 1.0).unwrap().unit_vector();
        let graph = KnnGraph::build(&[p; 6], 3);
        assert_eq!(graph.of(0), &[1, 2, 3]);
        assert_eq!(graph.of(4), &[0, 1, 2]);
    }

    #[test]
    fn moran_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = rng.gen_range(4..120);
            let pts = random_vectors(&mut rng, n, 0.5);
            let mut marks: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).round()).collect();
            marks[0] = 0.0;
            marks[1] = 1.0;
            let k = if trial % 3 == 0 { 3 } else { 8 };
            let r = moran(&KnnGraph::build(&pts, k), &marks).unwrap();
            let (i_dense, var_dense) = dense_moran(&pts, &marks, k);
            assert_abs_diff_eq!(r.i, i_dense, epsilon = 1e-10);
            assert_abs_diff_eq!(r.variance, var_dense, epsilon = 1e-10);
            assert_abs_diff_eq!(r.z, (r.i - r.expected) / r.variance.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn moran_sign_fixtures() {
        // two separated clusters, ones in the west cluster
        let mut locs = Vec::new();
        let mut marks = Vec::new();
        for i in 0..40 {
            let off = (i as f64) * 0.001;
            locs.push(GeoLocation::new(-1.0 + off, off).unwrap().unit_vector());
            marks.push(1.0);
            locs.push(GeoLocation::new(1.0 + off, off).unwrap().unit_vector());
            marks.push(0.0);
        }
        let r = moran(&KnnGraph::build(&locs, 8), &marks).unwrap();
        assert_abs_diff_eq!(r.i, 1.0, epsilon = 1e-12);
        // fine checkerboard on a grid, rook neighbors
        let mut locs = Vec::new();
        let mut marks = Vec::new();
        for r in 0..20 {
            for c in 0..20 {
                locs.push(
                    GeoLocation::new(c as f64 * 0.01, r as f64 * 0.01)
                        .unwrap()
                        .unit_vector(),
                );
                marks.push(((r + c) % 2) as f64);
            }
        }
        let r = moran(&KnnGraph::build(&locs, 4), &marks).unwrap();
        assert!(r.i < -0.85, "I = {}", r.i);
    }

    #[test]
    fn moran_errors() {
        let p: Vec<[f64; 3]> = (0..5)
            .map(|i| GeoLocation::new(i as f64, 0.0).unwrap().unit_vector())
            .collect();
        let g = KnnGraph::build(&p, 8);
        assert_eq!(moran(&g, &[1.0; 5]), Err(GeoBiasError::DegeneratePattern));
        let g3 = KnnGraph::build(&p[..3], 8);
        assert_eq!(
            moran(&g3, &[0.0, 1.0, 0.0]),
            Err(GeoBiasError::InsufficientPoints(3))
        );
    }

    #[test]
    fn permutation_null_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 500;
        let pts = random_vectors(&mut rng, n, 1.0);
        let graph = KnnGraph::build(&pts, 8);
        let mut marks: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let mut samples = Vec::new();
        let mut var = 0.0;
        for _ in 0..200 {
            rand::seq::SliceRandom::shuffle(marks.as_mut_slice(), &mut rng);
            let r = moran(&graph, &marks).unwrap();
            var = r.variance;
            samples.push(r.i);
        }
        let mean = samples.iter().sum::<f64>() / 200.0;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        let se = sd / 200f64.sqrt();
        assert!((mean + 1.0 / 499.0).abs() < 3.0 * se, "mean {mean} se {se}");
        // empirical spread agrees with the closed-form variance
        assert!((sd * sd / var - 1.0).abs() < 0.35, "{} vs {var}", sd * sd);
    }

    #[test]
    fn conversion_examples() {
        let at = |z: f64| surprisal_bits(z);
        assert_eq!(at(0.0), 0.0);
        // -log2(0.05)
        assert_abs_diff_eq!(
            at(1.959_963_984_540_054),
            4.321_928_094_887_363,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            at(-1.959_963_984_540_054),
            4.321_928_094_887_363,
            epsilon = 1e-9
        );
        assert_eq!(at(1e6), MAX_SURPRISAL_BITS);
        assert_eq!(at(f64::INFINITY), MAX_SURPRISAL_BITS);
        // the asymptotic branch joins the direct one
        let x = 20.0 * std::f64::consts::SQRT_2;
        assert_abs_diff_eq!(at(x - 1e-9), at(x + 1e-9), epsilon = 1e-6);
        let mut prev = 0.0;
        for i in 1..400 {
            let v = at(i as f64 * 0.25);
            assert!(v > prev || v == MAX_SURPRISAL_BITS);
            prev = v;
        }
    }

    #[test]
    fn assemble_examples() {
        let center = GeoLocation::new(0.0, 0.0).unwrap();
        let map = PerformanceMap::from_triples(&[
            (0.0, 0.0, 1.0),
            (0.5, 0.0, 0.0),
            (0.0, 0.5, 1.0),
            (-0.5, 0.0, 0.0),
            (0.0, -0.5, 1.0),
        ])
        .unwrap();
        let roi = roi_over(&map, center, 0.1);
        let settings = SsiSettings {
            rho: Some(1000.0),
            ..Default::default()
        };
        let p = assemble_pattern(&roi, &map, SsiKind::Unmarked, &settings).unwrap();
        assert_eq!(
            (p.count(PointOrigin::Data), p.count(PointOrigin::Background)),
            (5, 32)
        );
        assert!(p.marks[..5].iter().all(|&m| m == 1.0) && p.marks[5..].iter().all(|&m| m == 0.0));
        let tiny = SsiSettings {
            rho: Some(1e-9),
            ..Default::default()
        };
        assert_eq!(
            assemble_pattern(&roi, &map, SsiKind::Unmarked, &tiny)
                .unwrap()
                .count(PointOrigin::Background),
            10
        );
        let marked =
            assemble_pattern(&roi, &map, SsiKind::Marked, &SsiSettings::default()).unwrap();
        assert_eq!(&marked.marks[..5], &[1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(marked.count(PointOrigin::Background), 10);
        let capped = SsiSettings {
            max_roi_points: 2,
            ..Default::default()
        };
        let sub = assemble_pattern(&roi, &map, SsiKind::Marked, &capped).unwrap();
        assert_eq!(sub.count(PointOrigin::Data), 2);
        // strided positions 0 and 2
        assert_eq!(&sub.marks[..2], &[1.0, 1.0]);
    }

    #[test]
    fn marked_threshold() {
        let map = PerformanceMap::from_triples(&[(0.0, 0.0, 0.2), (0.1, 0.0, 0.7)]).unwrap();
        let roi = roi_over(&map, GeoLocation::new(0.0, 0.0).unwrap(), 0.05);
        let s = SsiSettings {
            mark_threshold: Some(0.5),
            ..Default::default()
        };
        assert_eq!(
            &assemble_pattern(&roi, &map, SsiKind::Marked, &s)
                .unwrap()
                .marks[..2],
            &[0.0, 1.0]
        );
    }

    fn cap_map(center: GeoLocation, n: usize, spread: f64, seed: u64) -> PerformanceMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let b = rng.gen_range(0.0..std::f64::consts::TAU);
                let d = spread * rng.gen_range(0.0..1.0f64).sqrt();
                let p = center.destination(b, d);
                (p.lon(), p.lat(), rng.gen_range(0.0..1.0f64).round())
            })
            .collect();
        PerformanceMap::from_triples(&rows).unwrap()
    }

    #[test]
    fn unmarked_ignores_marks_and_is_deterministic() {
        let center = GeoLocation::new(10.0, 45.0).unwrap();
        let map = cap_map(center, 150, 0.045, 2);
        let flipped = map.flip_marks();
        let roi = roi_over(&map, center, 0.05);
        let s = SsiSettings::default();
        let a = local_ssi(&roi, &map, SsiKind::Unmarked, &s).unwrap();
        let b = local_ssi(&roi, &flipped, SsiKind::Unmarked, &s).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a, local_ssi(&roi, &map, SsiKind::Unmarked, &s).unwrap());
        let both = local_ssi_all(&roi, &map, &[SsiKind::Unmarked, SsiKind::Marked], &s);
        assert_eq!(both[0].as_ref().unwrap(), &a);
        assert_eq!(
            both[1].as_ref().unwrap(),
            &local_ssi(&roi, &map, SsiKind::Marked, &s).unwrap()
        );
    }

    #[test]
    fn contraction_raises_unmarked_ssi() {
        let center = GeoLocation::new(-30.0, 10.0).unwrap();
        let s = SsiSettings {
            rho: Some(40_000.0),
            ..Default::default()
        };
        let mut prev = -1.0;
        for spread in [0.048, 0.03, 0.015, 0.005] {
            let map = cap_map(center, 200, spread, 9);
            let roi = roi_over(&map, center, 0.05);
            let v = local_ssi(&roi, &map, SsiKind::Unmarked, &s).unwrap().value;
            assert!(v >= prev, "spread {spread}: {v} < {prev}");
            prev = v;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn mark_shift_invariance(seed in any::<u64>(), n in 10usize..80, shift in -50.0..50.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_vectors(&mut rng, n, 3.0);
            let mut marks: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            marks[0] = 0.0;
            marks[1] = 1.0;
            let g = KnnGraph::build(&pts, 8);
            let a = moran(&g, &marks).unwrap();
            let shifted: Vec<f64> = marks.iter().map(|m| m + shift).collect();
            let b = moran(&g, &shifted).unwrap();
            prop_assert!((a.i - b.i).abs() < 1e-10);
            prop_assert!(a.variance > 0.0);
        }

        #[test]
        fn knn_is_exact(seed in any::<u64>(), n in 2usize..150, k in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_vectors(&mut rng, n, 0.2);
            let g = KnnGraph::build(&pts, k);
            for i in 0..n {
                let mut d: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| (chord2(&pts[i], &pts[j]), j)).collect();
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let expect: Vec<usize> = d.iter().take(k.min(n - 1)).map(|x| x.1).collect();
                prop_assert_eq!(g.of(i), expect.as_slice());
            }
        }
    }
}

//! Performance maps: locations carrying a performance mark, plus the
//! binarization rules that turn raw predictions into marks.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{GeoBiasError, Result};
use crate::geometry::GeoLocation;

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformancePoint {
    pub location: GeoLocation,
    pub perf: f64,
    pub prediction: Option<String>,
    pub truth: Option<String>,
}

impl PerformancePoint {
    pub fn new(location: GeoLocation, perf: f64) -> Self {
        Self {
            location,
            perf,
            prediction: None,
            truth: None,
        }
    }
}

/// Ordered, non-empty collection of performance points. Input order is kept
/// so that every downstream reduction is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMap {
    points: Vec<PerformancePoint>,
}

impl PerformanceMap {
    pub fn new(points: Vec<PerformancePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeoBiasError::InsufficientData(
                "performance map needs at least one point".into(),
            ));
        }
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| !p.perf.is_finite()) {
            return Err(GeoBiasError::Parse {
                row: i + 1,
                message: format!("non-finite perf {}", p.perf),
            });
        }
        Ok(Self { points })
    }

    /// Builds a map from `(lon, lat, perf)` triples.
    pub fn from_triples(rows: &[(f64, f64, f64)]) -> Result<Self> {
        let points = rows
            .iter()
            .enumerate()
            .map(|(i, &(lon, lat, perf))| {
                let location =
                    GeoLocation::new(lon, lat).map_err(|_| GeoBiasError::InvalidLocationAtRow {
                        row: i + 1,
                        lon,
                        lat,
                    })?;
                Ok(PerformancePoint::new(location, perf))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[PerformancePoint] {
        &self.points
    }

    pub fn location(&self, i: usize) -> &GeoLocation {
        &self.points[i].location
    }

    pub fn perf(&self, i: usize) -> f64 {
        self.points[i].perf
    }

    /// The unmarked projection of the map.
    pub fn locations(&self) -> Vec<GeoLocation> {
        self.points.iter().map(|p| p.location).collect()
    }

    /// Same locations with replaced marks.
    pub fn with_marks(&self, marks: &[f64]) -> Result<Self> {
        if marks.len() != self.points.len() {
            return Err(GeoBiasError::InvalidParameter(format!(
                "expected {} marks, got {}",
                self.points.len(),
                marks.len()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(marks)
            .map(|(p, &m)| PerformancePoint {
                perf: m,
                ..p.clone()
            })
            .collect();
        Self::new(points)
    }

    /// Replaces every mark `m` with `1 - m` (unifies the polarity of
    /// regression and classification marks).
    pub fn flip_marks(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| PerformancePoint {
                perf: 1.0 - p.perf,
                ..p.clone()
            })
            .collect();
        Self { points }
    }
}

/// Strictly increasing histogram edges `b_0 < b_1 < ... < b_H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    edges: Vec<f64>,
}

impl BinLayout {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(GeoBiasError::InvalidBinLayout(
                "at least two edges are required".into(),
            ));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(GeoBiasError::InvalidBinLayout(
                "edges must be finite".into(),
            ));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GeoBiasError::InvalidBinLayout(
                "edges must be strictly increasing".into(),
            ));
        }
        Ok(Self { edges })
    }

    /// Two bins centered on the marks 0 and 1.
    pub fn binary() -> Self {
        Self {
            edges: vec![-0.5, 0.5, 1.5],
        }
    }

    /// One bin per integer code `0..k`.
    pub fn categorical(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(GeoBiasError::InvalidBinLayout(
                "categorical layout needs k >= 1".into(),
            ));
        }
        Self::new((0..=k).map(|i| i as f64 - 0.5).collect())
    }

    /// `bins` equal-width bins spanning `[low, high]`.
    pub fn uniform(low: f64, high: f64, bins: usize) -> Result<Self> {
        if bins == 0 || low.partial_cmp(&high) != Some(std::cmp::Ordering::Less) {
            return Err(GeoBiasError::InvalidBinLayout(format!(
                "uniform({low}, {high}, {bins})"
            )));
        }
        let width = (high - low) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| low + i as f64 * width).collect();
        edges.push(high);
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bin of `value` under half-open `[b_j, b_{j+1})` bins, with the last
    /// bin closed at `b_H`.
    pub fn bin_of(&self, value: f64) -> Result<usize> {
        let low = self.edges[0];
        let high = *self.edges.last().unwrap();
        if !(value >= low && value <= high) {
            return Err(GeoBiasError::OutOfRangeValue { value, low, high });
        }
        let j = self.edges.partition_point(|&e| e <= value) - 1;
        Ok(j.min(self.bin_count() - 1))
    }
}

/// Input encodings accepted by [`load_map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    GeoJson,
}

impl MapFormat {
    /// Guesses the format from a file extension (`.geojson`/`.json` vs csv).
    pub fn from_path(path: &std::path::Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("geojson") | Some("json") => Self::GeoJson,
            _ => Self::Csv,
        }
    }
}

/// Reads a performance map from CSV (`lon,lat,perf` header, optional
/// `pred`/`truth` columns) or a GeoJSON FeatureCollection of points with a
/// numeric `perf` property. Row numbers in errors are 1-based data rows.
pub fn load_map<R: Read>(source: R, format: MapFormat) -> Result<PerformanceMap> {
    let raw = match format {
        MapFormat::Csv => read_csv_rows(source)?,
        MapFormat::GeoJson => read_geojson_rows(source)?,
    };
    let points = raw
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let perf = match row.perf {
                RawPerf::Number(v) => v,
                RawPerf::Text(s) => s.trim().parse::<f64>().map_err(|_| GeoBiasError::Parse {
                    row: i + 1,
                    message: format!("perf {s:?} is not a number"),
                })?,
            };
            if !perf.is_finite() {
                return Err(GeoBiasError::Parse {
                    row: i + 1,
                    message: format!("non-finite perf {perf}"),
                });
            }
            Ok(PerformancePoint {
                location: row.location,
                perf,
                prediction: row.prediction,
                truth: row.truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PerformanceMap::new(points)
}

/// Like [`load_map`] but treats `perf` as a categorical label. Labels are
/// coded `0..K-1` in order of first appearance; the label table is returned
/// alongside the map.
pub fn load_categorical_map<R: Read>(
    source: R,
    format: MapFormat,
) -> Result<(PerformanceMap, Vec<String>)> {
    let raw = match format {
        MapFormat::Csv => read_csv_rows(source)?,
        MapFormat::GeoJson => read_geojson_rows(source)?,
    };
    let labels: Vec<String> = raw
        .iter()
        .map(|r| match &r.perf {
            RawPerf::Number(v) => v.to_string(),
            RawPerf::Text(s) => s.clone(),
        })
        .collect();
    let (codes, table) = encode_categories(&labels);
    let points = raw
        .into_iter()
        .zip(codes)
        .map(|(row, code)| PerformancePoint {
            location: row.location,
            perf: code,
            prediction: row.prediction,
            truth: row.truth,
        })
        .collect();
    Ok((PerformanceMap::new(points)?, table))
}

enum RawPerf {
    Number(f64),
    Text(String),
}

struct RawRow {
    location: GeoLocation,
    perf: RawPerf,
    prediction: Option<String>,
    truth: Option<String>,
}

fn read_csv_rows<R: Read>(source: R) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| GeoBiasError::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (lon_col, lat_col, perf_col) = match (column("lon"), column("lat"), column("perf")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(GeoBiasError::Parse {
                row: 0,
                message: format!(
                    "header must contain lon, lat and perf, got {:?}",
                    headers.iter().collect::<Vec<_>>()
                ),
            })
        }
    };
    let pred_col = column("pred");
    let truth_col = column("truth");

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| GeoBiasError::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize, name: &str| {
            record
                .get(col)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| GeoBiasError::Parse {
                    row,
                    message: format!("missing {name}"),
                })
        };
        let number = |col: usize, name: &str| -> Result<f64> {
            let s = field(col, name)?;
            s.parse::<f64>().map_err(|_| GeoBiasError::Parse {
                row,
                message: format!("{name} {s:?} is not a number"),
            })
        };
        let lon = number(lon_col, "lon")?;
        let lat = number(lat_col, "lat")?;
        let location = GeoLocation::new(lon, lat)
            .map_err(|_| GeoBiasError::InvalidLocationAtRow { row, lon, lat })?;
        let perf = RawPerf::Text(field(perf_col, "perf")?.to_string());
        let optional = |col: Option<usize>| {
            col.and_then(|c| record.get(c))
                .filter(|s| !s.is_empty())
                .map(String::from)
        };
        rows.push(RawRow {
            location,
            perf,
            prediction: optional(pred_col),
            truth: optional(truth_col),
        });
    }
    Ok(rows)
}

fn read_geojson_rows<R: Read>(source: R) -> Result<Vec<RawRow>> {
    let doc: Value = serde_json::from_reader(source).map_err(|e| GeoBiasError::Parse {
        row: 0,
        message: e.to_string(),
    })?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoBiasError::Parse {
            row: 0,
            message: "expected a FeatureCollection".into(),
        });
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| GeoBiasError::Parse {
            row: 0,
            message: "missing features array".into(),
        })?;

    let mut rows = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        let row = i + 1;
        let err = |message: &str| GeoBiasError::Parse {
            row,
            message: message.to_string(),
        };
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| err("missing geometry"))?;
        if geometry.get("type").and_then(Value::as_str) != Some("Point") {
            return Err(err("geometry must be a Point"));
        }
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .filter(|c| c.len() >= 2)
            .ok_or_else(|| err("point needs [lon, lat] coordinates"))?;
        let lon = coords[0]
            .as_f64()
            .ok_or_else(|| err("lon is not a number"))?;
        let lat = coords[1]
            .as_f64()
            .ok_or_else(|| err("lat is not a number"))?;
        let location = GeoLocation::new(lon, lat)
            .map_err(|_| GeoBiasError::InvalidLocationAtRow { row, lon, lat })?;
        let props = feature
            .get("properties")
            .ok_or_else(|| err("missing properties"))?;
        let perf = match props.get("perf") {
            Some(Value::Number(n)) => {
                RawPerf::Number(n.as_f64().ok_or_else(|| err("perf out of range"))?)
            }
            Some(Value::String(s)) => RawPerf::Text(s.clone()),
            _ => return Err(err("missing perf property")),
        };
        let text = |key: &str| props.get(key).and_then(Value::as_str).map(String::from);
        rows.push(RawRow {
            location,
            perf,
            prediction: text("pred"),
            truth: text("truth"),
        });
    }
    Ok(rows)
}

/// Writes `lon,lat,perf` CSV (plus `pred,truth` when any point carries
/// them). Floats use the shortest representation that parses back exactly.
pub fn write_map_csv<W: Write>(map: &PerformanceMap, sink: W) -> Result<()> {
    let io_err = |e: csv::Error| GeoBiasError::Io {
        context: "writing map CSV".into(),
        message: e.to_string(),
    };
    let with_raw = map
        .points
        .iter()
        .any(|p| p.prediction.is_some() || p.truth.is_some());
    let mut writer = csv::Writer::from_writer(sink);
    if with_raw {
        writer
            .write_record(["lon", "lat", "perf", "pred", "truth"])
            .map_err(io_err)?;
    } else {
        writer
            .write_record(["lon", "lat", "perf"])
            .map_err(io_err)?;
    }
    for p in &map.points {
        let mut rec = vec![
            p.location.lon().to_string(),
            p.location.lat().to_string(),
            p.perf.to_string(),
        ];
        if with_raw {
            rec.push(p.prediction.clone().unwrap_or_default());
            rec.push(p.truth.clone().unwrap_or_default());
        }
        writer.write_record(&rec).map_err(io_err)?;
    }
    writer.flush().map_err(|e| GeoBiasError::Io {
        context: "writing map CSV".into(),
        message: e.to_string(),
    })
}

/// Writes the map as a GeoJSON FeatureCollection with a `perf` property.
pub fn write_map_geojson<W: Write>(map: &PerformanceMap, sink: W) -> Result<()> {
    let features: Vec<Value> = map
        .points
        .iter()
        .map(|p| {
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [p.location.lon(), p.location.lat()]},
                "properties": {"perf": p.perf},
            })
        })
        .collect();
    let doc = serde_json::json!({"type": "FeatureCollection", "features": features});
    serde_json::to_writer(sink, &doc).map_err(|e| GeoBiasError::Io {
        context: "writing map GeoJSON".into(),
        message: e.to_string(),
    })
}

/// 1 when the prediction equals the ground truth exactly, else 0.
pub fn binarize_classification<T: PartialEq + ?Sized>(pred: &T, truth: &T) -> f64 {
    if pred == truth {
        1.0
    } else {
        0.0
    }
}

/// Regression marks: 0 when `|e_i|` is strictly below the population
/// variance of the signed errors, 1 otherwise. Note the polarity is the
/// reverse of classification marks (0 = small error), and that an absolute
/// error is compared against a variance, so the threshold is not
/// unit-consistent.
pub fn binarize_regression(errors: &[f64]) -> Result<Vec<f64>> {
    if errors.len() < 2 {
        return Err(GeoBiasError::InsufficientData(format!(
            "variance needs at least 2 errors, got {}",
            errors.len()
        )));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(GeoBiasError::InvalidParameter(
            "errors must be finite".into(),
        ));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let variance = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(errors
        .iter()
        .map(|e| if e.abs() < variance { 0.0 } else { 1.0 })
        .collect())
}

/// Maps labels to integer codes `0..K-1` by first appearance.
pub fn encode_categories<S: AsRef<str>>(labels: &[S]) -> (Vec<f64>, Vec<String>) {
    let mut table: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let codes = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            let code = *lookup.entry(l.to_string()).or_insert_with(|| {
                table.push(l.to_string());
                table.len() - 1
            });
            code as f64
        })
        .collect();
    (codes, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loads_csv() {
        let csv = "lon,lat,perf\n0,0,1\n10,5,0\n190,-3,1\n";
        let map = load_map(csv.as_bytes(), MapFormat::Csv).unwrap();
        assert_eq!(map.len(), 3);
        assert_eq!(map.location(2).lon(), -170.0);
        assert_eq!(map.perf(1), 0.0);
    }

    #[test]
    fn csv_errors_carry_row() {
        let csv = "lon,lat,perf\n0,0,1\n0,91,1\n";
        assert_eq!(
            load_map(csv.as_bytes(), MapFormat::Csv),
            Err(GeoBiasError::InvalidLocationAtRow {
                row: 2,
                lon: 0.0,
                lat: 91.0
            })
        );
        let csv = "lon,lat,perf\n0,0,1\n0,0,\n";
        assert!(matches!(
            load_map(csv.as_bytes(), MapFormat::Csv),
            Err(GeoBiasError::Parse { row: 2, .. })
        ));
        let csv = "lon,lat,perf\n0,abc,1\n";
        assert!(matches!(
            load_map(csv.as_bytes(), MapFormat::Csv),
            Err(GeoBiasError::Parse { row: 1, .. })
        ));
        let csv = "lon,lat\n0,0\n";
        assert!(matches!(
            load_map(csv.as_bytes(), MapFormat::Csv),
            Err(GeoBiasError::Parse { row: 0, .. })
        ));
        let csv = "lon,lat,perf\n";
        assert!(matches!(
            load_map(csv.as_bytes(), MapFormat::Csv),
            Err(GeoBiasError::InsufficientData(_))
        ));
    }

    #[test]
    fn loads_geojson_in_order() {
        let doc = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[5.0,6.0]},"properties":{"perf":1}},
            {"type":"Feature","geometry":{"type":"Point","coordinates":[-5.0,-6.0]},"properties":{"perf":0.25}}
        ]}"#;
        let map = load_map(doc.as_bytes(), MapFormat::GeoJson).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map.location(0).lon(), 5.0);
        assert_eq!(map.perf(1), 0.25);

        let bad = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[5.0,6.0]},"properties":{}}]}"#;
        assert!(matches!(
            load_map(bad.as_bytes(), MapFormat::GeoJson),
            Err(GeoBiasError::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn categorical_codes() {
        let csv = "lon,lat,perf\n0,0,good\n1,1,bad\n2,2,good\n3,3,meh\n";
        let (map, table) = load_categorical_map(csv.as_bytes(), MapFormat::Csv).unwrap();
        assert_eq!(table, vec!["good", "bad", "meh"]);
        let marks: Vec<f64> = map.points().iter().map(|p| p.perf).collect();
        assert_eq!(marks, vec![0.0, 1.0, 0.0, 2.0]);
        let layout = BinLayout::categorical(table.len()).unwrap();
        assert_eq!(layout.bin_of(2.0).unwrap(), 2);
    }

    #[test]
    fn classification_marks() {
        assert_eq!(binarize_classification("forest", "forest"), 1.0);
        assert_eq!(binarize_classification("forest", "urban"), 0.0);
        assert_eq!(binarize_classification("Forest", "forest"), 0.0);
        assert_eq!(binarize_classification(&3u32, &3u32), 1.0);
    }

    // Brute-force oracle: variance from the pairwise identity
    // Var = sum_{i<j} (e_i - e_j)^2 / n^2, no mean involved.
    fn oracle_regression(errors: &[f64]) -> Vec<f64> {
        let n = errors.len() as f64;
        let mut s = 0.0;
        for i in 0..errors.len() {
            for j in (i + 1)..errors.len() {
                s += (errors[i] - errors[j]).powi(2);
            }
        }
        let var = s / (n * n);
        errors
            .iter()
            .map(|e| if e.abs() < var { 0.0 } else { 1.0 })
            .collect()
    }

    #[test]
    fn regression_marks() {
        let e = [1.0, -1.0, 0.0, 2.0];
        assert_eq!(oracle_regression(&e), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(binarize_regression(&e).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            binarize_regression(&[3.0, 3.0, 3.0]).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
        assert_eq!(binarize_regression(&[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(
            binarize_regression(&[1.0]),
            Err(GeoBiasError::InsufficientData(_))
        ));
    }

    #[test]
    fn bin_layout_rules() {
        let l = BinLayout::binary();
        assert_eq!(l.bin_of(0.0).unwrap(), 0);
        assert_eq!(l.bin_of(1.0).unwrap(), 1);
        assert_eq!(l.bin_of(1.5).unwrap(), 1);
        assert_eq!(l.bin_of(0.5).unwrap(), 1);
        assert!(l.bin_of(1.6).is_err());
        assert!(l.bin_of(f64::NAN).is_err());
        assert!(BinLayout::new(vec![0.0, 0.0, 1.0]).is_err());
        assert!(BinLayout::new(vec![0.0]).is_err());
        assert_eq!(
            BinLayout::uniform(0.0, 1.0, 4).unwrap().edges(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec((-180.0..180.0f64, -90.0..=90.0f64, -1e6..1e6f64), 1..50)) {
            let map = PerformanceMap::from_triples(&rows).unwrap();
            let mut buf = Vec::new();
            write_map_csv(&map, &mut buf).unwrap();
            let back = load_map(buf.as_slice(), MapFormat::Csv).unwrap();
            prop_assert_eq!(back, map);
        }

        #[test]
        fn regression_is_permutation_equivariant(errors in prop::collection::vec(-10.0..10.0f64, 2..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let marks = binarize_regression(&errors).unwrap();
            prop_assert_eq!(&marks, &oracle_regression(&errors));
            let mut idx: Vec<usize> = (0..errors.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<f64> = idx.iter().map(|&i| errors[i]).collect();
            let shuffled_marks = binarize_regression(&shuffled).unwrap();
            for (k, &i) in idx.iter().enumerate() {
                prop_assert_eq!(shuffled_marks[k], marks[i]);
            }
        }

        #[test]
        fn classification_reflexive(label in ".*") {
            prop_assert_eq!(binarize_classification(label.as_str(), label.as_str()), 1.0);
        }
    }
}

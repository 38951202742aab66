//! Score reports and their serialized forms: a per-point locals CSV, a
//! GeoJSON mirror of it with normalized values, and a JSON summary.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{GeoBiasError, Result};

/// Column header of the locals CSV.
pub const LOCALS_HEADER: [&str; 8] = [
    "lon",
    "lat",
    "u_ssi",
    "m_ssi",
    "sg_sre",
    "dl_sre",
    "ds_sre",
    "scoreable",
];

/// The six reported scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    USsi,
    MSsi,
    SgSre,
    DlSre,
    DsSre,
    Spad,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 6] = [
        Self::USsi,
        Self::MSsi,
        Self::SgSre,
        Self::DlSre,
        Self::DsSre,
        Self::Spad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::USsi => "u_ssi",
            Self::MSsi => "m_ssi",
            Self::SgSre => "sg_sre",
            Self::DlSre => "dl_sre",
            Self::DsSre => "ds_sre",
            Self::Spad => "spad",
        }
    }

    /// Scores computed per ROI (all but SPAD).
    pub fn is_local(self) -> bool {
        self != Self::Spad
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = GeoBiasError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GeoBiasError::InvalidParameter(format!("unknown score '{s}'")))
    }
}

/// Local scores of one candidate ROI, keyed by its center.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointRecord {
    pub lon: f64,
    pub lat: f64,
    pub u_ssi: Option<f64>,
    pub m_ssi: Option<f64>,
    pub sg_sre: Option<f64>,
    pub dl_sre: Option<f64>,
    pub ds_sre: Option<f64>,
    pub scoreable: bool,
    /// Exclusion reason code when not scoreable.
    pub reason: Option<String>,
    pub roi_size: usize,
    /// Normalized-size weight when scoreable.
    pub weight: Option<f64>,
}

impl PointRecord {
    pub fn local(&self, kind: ScoreKind) -> Option<f64> {
        match kind {
            ScoreKind::USsi => self.u_ssi,
            ScoreKind::MSsi => self.m_ssi,
            ScoreKind::SgSre => self.sg_sre,
            ScoreKind::DlSre => self.dl_sre,
            ScoreKind::DsSre => self.ds_sre,
            ScoreKind::Spad => None,
        }
    }

    pub fn set_local(&mut self, kind: ScoreKind, value: Option<f64>) {
        match kind {
            ScoreKind::USsi => self.u_ssi = value,
            ScoreKind::MSsi => self.m_ssi = value,
            ScoreKind::SgSre => self.sg_sre = value,
            ScoreKind::DlSre => self.dl_sre = value,
            ScoreKind::DsSre => self.ds_sre = value,
            ScoreKind::Spad => {}
        }
    }
}

/// Global scores; `None` for scores that were not requested.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Globals {
    pub u_ssi: Option<f64>,
    pub m_ssi: Option<f64>,
    pub sg_sre: Option<f64>,
    pub dl_sre: Option<f64>,
    pub ds_sre: Option<f64>,
    pub spad: Option<f64>,
}

impl Globals {
    pub fn get(&self, kind: ScoreKind) -> Option<f64> {
        match kind {
            ScoreKind::USsi => self.u_ssi,
            ScoreKind::MSsi => self.m_ssi,
            ScoreKind::SgSre => self.sg_sre,
            ScoreKind::DlSre => self.dl_sre,
            ScoreKind::DsSre => self.ds_sre,
            ScoreKind::Spad => self.spad,
        }
    }

    pub fn set(&mut self, kind: ScoreKind, value: Option<f64>) {
        match kind {
            ScoreKind::USsi => self.u_ssi = value,
            ScoreKind::MSsi => self.m_ssi = value,
            ScoreKind::SgSre => self.sg_sre = value,
            ScoreKind::DlSre => self.dl_sre = value,
            ScoreKind::DsSre => self.ds_sre = value,
            ScoreKind::Spad => self.spad = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoiCounts {
    pub candidates: usize,
    pub retained: usize,
    pub too_few_points: usize,
    pub uniform_marks: usize,
    pub score_error: usize,
    /// Retained ROIs with fewer members than recommended.
    pub below_recommended_size: usize,
    /// Retained ROIs where some partitioning has fewer than two patches
    /// holding more than ten points.
    pub weak_partitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    /// Units of the SSI and SRE scores.
    pub units: String,
    pub spad_label: String,
}

impl Default for RunMetadata {
    fn default() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            units: "bits".into(),
            spad_label: crate::spad::SPAD_LABEL.into(),
        }
    }
}

/// What the summary JSON holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub hyperparameters: Map<String, Value>,
    pub globals: Globals,
    pub roi_counts: RoiCounts,
    pub metadata: RunMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub hyperparameters: Map<String, Value>,
    pub metadata: RunMetadata,
    /// One record per candidate ROI, in center order.
    pub records: Vec<PointRecord>,
    pub globals: Globals,
    pub roi_counts: RoiCounts,
}

impl ScoreReport {
    pub fn summary(&self) -> Summary {
        Summary {
            hyperparameters: self.hyperparameters.clone(),
            globals: self.globals.clone(),
            roi_counts: self.roi_counts.clone(),
            metadata: self.metadata.clone(),
        }
    }
}

/// Min-max scaling to `[0, 1]`; a constant input maps to zeros.
pub fn normalize_for_map(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(GeoBiasError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GeoBiasError::InvalidParameter(
            "values to normalize must be finite".into(),
        ));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if hi == lo {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

fn io_err(context: &str, e: impl fmt::Display) -> GeoBiasError {
    GeoBiasError::Io {
        context: context.into(),
        message: e.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_locals_csv<W: Write>(records: &[PointRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(LOCALS_HEADER)
        .map_err(|e| io_err("locals CSV", e))?;
    for r in records {
        let row = [
            r.lon.to_string(),
            r.lat.to_string(),
            fmt_opt(r.u_ssi),
            fmt_opt(r.m_ssi),
            fmt_opt(r.sg_sre),
            fmt_opt(r.dl_sre),
            fmt_opt(r.ds_sre),
            r.scoreable.to_string(),
        ];
        w.write_record(&row).map_err(|e| io_err("locals CSV", e))?;
    }
    w.flush().map_err(|e| io_err("locals CSV", e))
}

/// Parses a locals CSV back into records. Fields absent from the CSV
/// (reason, size, weight) are left at their defaults.
pub fn read_locals_csv<R: Read>(source: R) -> Result<Vec<PointRecord>> {
    let mut r = csv::Reader::from_reader(source);
    let header = r
        .headers()
        .map_err(|e| GeoBiasError::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().ne(LOCALS_HEADER) {
        return Err(GeoBiasError::Parse {
            row: 0,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| GeoBiasError::Parse {
            row,
            message: e.to_string(),
        })?;
        let num = |j: usize| -> Result<Option<f64>> {
            let s = rec.get(j).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| GeoBiasError::Parse {
                row,
                message: format!("bad number '{s}'"),
            })
        };
        let req = |j: usize| {
            num(j)?.ok_or_else(|| GeoBiasError::Parse {
                row,
                message: "missing coordinate".into(),
            })
        };
        let scoreable = match rec.get(7) {
            Some("true") => true,
            Some("false") => false,
            other => {
                return Err(GeoBiasError::Parse {
                    row,
                    message: format!("bad scoreable flag {other:?}"),
                })
            }
        };
        out.push(PointRecord {
            lon: req(0)?,
            lat: req(1)?,
            u_ssi: num(2)?,
            m_ssi: num(3)?,
            sg_sre: num(4)?,
            dl_sre: num(5)?,
            ds_sre: num(6)?,
            scoreable,
            ..Default::default()
        });
    }
    Ok(out)
}

/// Per-score min-max normalization over the records that have a value.
fn normalized_column(records: &[PointRecord], kind: ScoreKind) -> Vec<Option<f64>> {
    let present: Vec<f64> = records.iter().filter_map(|r| r.local(kind)).collect();
    let Ok(norm) = normalize_for_map(&present) else {
        return vec![None; records.len()];
    };
    let mut it = norm.into_iter();
    records
        .iter()
        .map(|r| r.local(kind).and_then(|_| it.next()))
        .collect()
}

pub fn locals_geojson(records: &[PointRecord]) -> Value {
    let locals: Vec<ScoreKind> = ScoreKind::ALL
        .into_iter()
        .filter(|k| k.is_local())
        .collect();
    let norms: Vec<Vec<Option<f64>>> = locals
        .iter()
        .map(|&k| normalized_column(records, k))
        .collect();
    let features: Vec<Value> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut props = Map::new();
            for (j, &k) in locals.iter().enumerate() {
                props.insert(k.name().into(), json!(r.local(k)));
                props.insert(format!("{}_norm", k.name()), json!(norms[j][i]));
            }
            props.insert("scoreable".into(), json!(r.scoreable));
            props.insert("reason".into(), json!(r.reason));
            props.insert("roi_size".into(), json!(r.roi_size));
            props.insert("weight".into(), json!(r.weight));
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [r.lon, r.lat]},
                "properties": props,
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_locals_geojson<W: Write>(records: &[PointRecord], mut sink: W) -> Result<()> {
    serde_json::to_writer(&mut sink, &locals_geojson(records))
        .map_err(|e| io_err("locals GeoJSON", e))?;
    sink.write_all(b"\n")
        .map_err(|e| io_err("locals GeoJSON", e))
}

pub fn write_summary<W: Write>(summary: &Summary, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, summary).map_err(|e| io_err("summary JSON", e))?;
    sink.write_all(b"\n").map_err(|e| io_err("summary JSON", e))
}

pub fn read_summary<R: Read>(source: R) -> Result<Summary> {
    serde_json::from_reader(source).map_err(|e| GeoBiasError::Parse {
        row: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(lon: f64, v: Option<f64>) -> PointRecord {
        PointRecord {
            lon,
            lat: -lon / 3.0,
            u_ssi: v,
            m_ssi: v.map(|x| x * 2.0),
            sg_sre: v,
            dl_sre: None,
            ds_sre: v.map(|x| x / 7.0),
            scoreable: v.is_some(),
            reason: v.is_none().then(|| "uniform_marks".into()),
            roi_size: 12,
            weight: v.map(|_| 0.5),
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_for_map(&[2.0, 4.0, 6.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(normalize_for_map(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(normalize_for_map(&[0.0, 1024.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(normalize_for_map(&[]), Err(GeoBiasError::EmptyInput));
    }

    #[test]
    fn csv_layout() {
        let records = vec![
            record(1.5, Some(0.25)),
            record(-2.0, None),
            record(3.0, Some(1.0 / 3.0)),
        ];
        let mut buf = Vec::new();
        write_locals_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "lon,lat,u_ssi,m_ssi,sg_sre,dl_sre,ds_sre,scoreable"
        );
        assert_eq!(lines[2], "-2,0.6666666666666666,,,,,,false");
    }

    #[test]
    fn geojson_carries_reason_and_norms() {
        let records = vec![
            record(1.0, Some(2.0)),
            record(2.0, None),
            record(3.0, Some(6.0)),
        ];
        let v = locals_geojson(&records);
        let f = &v["features"];
        assert_eq!(f.as_array().unwrap().len(), 3);
        assert_eq!(f[1]["properties"]["reason"], "uniform_marks");
        assert_eq!(f[1]["properties"]["u_ssi"], Value::Null);
        assert_eq!(f[2]["properties"]["u_ssi_norm"], 1.0);
        assert_eq!(f[0]["properties"]["u_ssi_norm"], 0.0);
        assert_eq!(f[0]["geometry"]["coordinates"][0], 1.0);
    }

    #[test]
    fn summary_round_trip_and_keys() {
        let mut hp = Map::new();
        hp.insert("radius".into(), json!(0.05));
        hp.insert("sectors".into(), json!(8));
        let mut globals = Globals::default();
        globals.set(ScoreKind::SgSre, Some(0.1 + 0.2));
        globals.set(ScoreKind::Spad, Some(12.5));
        let s = Summary {
            hyperparameters: hp,
            globals,
            roi_counts: RoiCounts::default(),
            metadata: RunMetadata::default(),
        };
        let mut a = Vec::new();
        write_summary(&s, &mut a).unwrap();
        let parsed = read_summary(a.as_slice()).unwrap();
        assert_eq!(parsed, s);
        let mut b = Vec::new();
        write_summary(&parsed, &mut b).unwrap();
        assert_eq!(a, b);
        let v: Value = serde_json::from_slice(&a).unwrap();
        for k in ScoreKind::ALL {
            assert!(v["globals"].get(k.name()).is_some(), "{k}");
        }
        assert_eq!(v["metadata"]["spad_label"], "reconstructed baseline");
    }

    #[test]
    fn score_kind_names() {
        for k in ScoreKind::ALL {
            assert_eq!(k.name().parse::<ScoreKind>().unwrap(), k);
        }
        assert!("x_sre".parse::<ScoreKind>().is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_byte_identical(
            rows in prop::collection::vec((-180.0..180.0f64, -90.0..90.0f64, prop::option::of(0.0..1024.0f64)), 0..40)
        ) {
            let records: Vec<PointRecord> = rows.iter().map(|&(lon, lat, v)| PointRecord {
                lon, lat, u_ssi: v, m_ssi: v, sg_sre: None, dl_sre: v, ds_sre: v, scoreable: v.is_some(),
                ..Default::default()
            }).collect();
            let mut a = Vec::new();
            write_locals_csv(&records, &mut a).unwrap();
            let parsed = read_locals_csv(a.as_slice()).unwrap();
            prop_assert_eq!(&parsed, &records);
            let mut b = Vec::new();
            write_locals_csv(&parsed, &mut b).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

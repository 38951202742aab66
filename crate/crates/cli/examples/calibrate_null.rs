//! Simulates null distributions used as frozen thresholds by the
//! acceptance suite.
//!
//! Run with `cargo run --release -p geobias-cli --example calibrate_null`.
//! Optional arguments: number of SRE maps (default 100) and number of SSI
//! patterns (default 1000).

use geobias::engine::{compute_scores, ScoreConfig};
use geobias::geometry::GeoLocation;
use geobias::report::ScoreKind;
use geobias::roi::{build_index, retrieve_roi, CenterPolicy};
use geobias::ssi::{local_ssi, SsiKind, SsiSettings};
use geobias_cli::synth::{synthesize, Pattern, SynthConfig};

/// Seeds are offset so calibration draws never coincide with fixtures.
const SEED_OFFSET: u64 = 100_000;

pub const SSI_ROI_RADIUS: f64 = 0.05;
pub const SSI_DATA_POINTS: usize = 400;

fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    // nearest rank
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("counts must be integers"))
        .collect();
    let sre_maps = args.first().copied().unwrap_or(100);
    let ssi_patterns = args.get(1).copied().unwrap_or(1000);

    let kinds = [ScoreKind::SgSre, ScoreKind::DlSre, ScoreKind::DsSre];
    let mut sre: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
    for i in 0..sre_maps as u64 {
        let seed = SEED_OFFSET + i;
        let map = synthesize(&SynthConfig::new(Pattern::Null, 10_000, seed)).unwrap();
        let cfg = ScoreConfig {
            scores: kinds.to_vec(),
            centers: CenterPolicy::Sample { k: 1000, seed },
            ..ScoreConfig::default()
        };
        let report = compute_scores(&map, &cfg).unwrap();
        for (vals, kind) in sre.iter_mut().zip(kinds) {
            vals.push(report.globals.get(kind).unwrap());
        }
        eprintln!("sre map {}/{sre_maps}", i + 1);
    }
    for (vals, kind) in sre.into_iter().zip(kinds) {
        if !vals.is_empty() {
            println!("null {kind} p99 = {:.6e}", percentile(vals, 0.99));
        }
    }

    let origin = GeoLocation::new(0.0, 0.0).unwrap();
    let settings = SsiSettings::default();
    let ssi: Vec<f64> = (0..ssi_patterns as u64)
        .map(|i| {
            let mut cfg = SynthConfig::new(Pattern::Null, SSI_DATA_POINTS, SEED_OFFSET + i);
            cfg.extent = SSI_ROI_RADIUS * 0.98;
            let map = synthesize(&cfg).unwrap();
            let roi = retrieve_roi(&build_index(&map), 0, origin, SSI_ROI_RADIUS);
            local_ssi(&roi, &map, SsiKind::Unmarked, &settings)
                .unwrap()
                .value
        })
        .collect();
    if !ssi.is_empty() {
        println!("null u_ssi p99 = {:.6e}", percentile(ssi, 0.99));
    }
}

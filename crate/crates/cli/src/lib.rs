//! Command-line driver: argument definitions and the `compute`, `sweep` and
//! `synth` commands.

pub mod synth;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geobias::divergence::KlOrder;
use geobias::engine::{compute_scores, sweep, write_sweep_csv, ScoreConfig};
use geobias::error::GeoBiasError;
use geobias::geometry::GeoLocation;
use geobias::map::{
    load_map, write_map_csv, write_map_geojson, BinLayout, MapFormat, PerformanceMap,
};
use geobias::report::{write_locals_csv, write_locals_geojson, write_summary, ScoreKind};
use geobias::roi::CenterPolicy;
use geobias::spad::SpadConfig;
use geobias::sre::{SreSettings, SweepGrid};
use geobias::ssi::SsiSettings;
use serde_json::{json, Value};

use crate::synth::{synthesize, Pattern, SynthConfig};

pub const LOCALS_CSV: &str = "locals.csv";
pub const LOCALS_GEOJSON: &str = "locals.geojson";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(
    name = "geobias",
    version,
    about = "Geographic bias scores for geolocated model evaluations"
)]
pub struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, env = "GEOBIAS_THREADS", global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Local and global scores for one map.
    Compute(ComputeArgs),
    /// Global scores over hyperparameter grids.
    Sweep(SweepArgs),
    /// Write a synthetic map with a planted bias pattern.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Geojson,
}

impl From<FormatArg> for MapFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MapFormat::Csv,
            FormatArg::Geojson => MapFormat::GeoJson,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KlOrderArg {
    RoiToPatch,
    PatchToRoi,
}

impl From<KlOrderArg> for KlOrder {
    fn from(k: KlOrderArg) -> Self {
        match k {
            KlOrderArg::RoiToPatch => KlOrder::RoiToPatch,
            KlOrderArg::PatchToRoi => KlOrder::PatchToRoi,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Map file: CSV with lon,lat,perf columns or a GeoJSON FeatureCollection.
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Replace every mark m with 1 - m before scoring.
    #[arg(long)]
    pub flip_marks: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// ROI radius in radians.
    #[arg(long, default_value_t = 0.05)]
    pub radius: f64,
    /// Scale-grid cell size in radians.
    #[arg(long, default_value_t = 0.01)]
    pub scale: f64,
    /// Distance-lag ring width in radians.
    #[arg(long, default_value_t = 0.005)]
    pub lag: f64,
    /// Direction sectors.
    #[arg(long, default_value_t = 8)]
    pub sectors: usize,
    /// Histogram bins: binary, categorical:K, uniform:LO:HI:N or edges:E0,E1,...
    #[arg(long, default_value = "binary")]
    pub bins: String,
    /// Additive histogram smoothing (0 disables it).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Background density per squared radian; by default the background
    /// matches the number of data points.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Minimum number of background points.
    #[arg(long, default_value_t = 10)]
    pub background_floor: usize,
    #[arg(long, default_value_t = 8)]
    pub k_neighbors: usize,
    /// ROIs with more points are subsampled for SSI.
    #[arg(long, default_value_t = 5000)]
    pub max_roi_points: usize,
    /// Threshold continuous marks to 0/1 for marked SSI.
    #[arg(long)]
    pub mark_threshold: Option<f64>,
    /// Minimum ROI size.
    #[arg(long, default_value_t = 2)]
    pub min_points: usize,
    /// ROI centers: `all` or `sample:K`.
    #[arg(long, default_value = "all")]
    pub centers: String,
    /// Seed for center sampling and SPAD.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scores to compute.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "u_ssi,m_ssi,sg_sre,dl_sre,ds_sre,spad"
    )]
    pub scores: Vec<ScoreKind>,
    #[arg(long, value_enum, default_value = "roi-to-patch")]
    pub kl_order: KlOrderArg,
    #[arg(long, default_value_t = 100)]
    pub spad_rows: usize,
    #[arg(long, default_value_t = 100)]
    pub spad_cols: usize,
    #[arg(long, default_value_t = 100)]
    pub spad_samples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ComputeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Output directory for locals.csv, locals.geojson and summary.json.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Radius grid; defaults to --radius.
    #[arg(long, value_delimiter = ',')]
    pub radii: Vec<f64>,
    /// Scale grid; defaults to --scale.
    #[arg(long, value_delimiter = ',')]
    pub scales: Vec<f64>,
    /// Lag grid; defaults to --lag.
    #[arg(long, value_delimiter = ',')]
    pub lags: Vec<f64>,
    /// Sector-count grid; defaults to --sectors.
    #[arg(long, value_delimiter = ',')]
    pub sector_counts: Vec<usize>,
    /// Output CSV table.
    #[arg(long, default_value = "sweep.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// null, hemisphere, ring, sector or checkerboard.
    pub pattern: Pattern,
    /// Number of points (>= 10).
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Checkerboard cell size in radians.
    #[arg(long, default_value_t = 0.01)]
    pub cell: f64,
    /// Angular radius of the populated cap.
    #[arg(long, default_value_t = 0.04)]
    pub extent: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub center_lon: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub center_lat: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Output format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

/// Parses a `--bins` value.
pub fn parse_bins(spec: &str) -> anyhow::Result<BinLayout> {
    let spec = spec.trim();
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .with_context(|| format!("bad number '{s}' in --bins"))
    };
    let layout = match kind {
        "binary" if rest.is_empty() => BinLayout::binary(),
        "categorical" => BinLayout::categorical(
            rest.trim()
                .parse()
                .context("bad category count in --bins")?,
        )?,
        "uniform" => {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                bail!("--bins uniform expects uniform:LO:HI:N");
            }
            BinLayout::uniform(
                num(parts[0])?,
                num(parts[1])?,
                parts[2].trim().parse().context("bad bin count")?,
            )?
        }
        "edges" => BinLayout::new(
            rest.split(',')
                .map(num)
                .collect::<anyhow::Result<Vec<f64>>>()?,
        )?,
        _ => bail!("unknown --bins value '{spec}'"),
    };
    Ok(layout)
}

/// Parses a `--centers` value.
pub fn parse_centers(spec: &str, seed: u64) -> anyhow::Result<CenterPolicy> {
    match spec.trim().split_once(':') {
        None if spec.trim() == "all" => Ok(CenterPolicy::EveryPoint),
        Some(("sample", k)) => {
            let k: usize = k
                .trim()
                .parse()
                .with_context(|| format!("bad sample size in --centers '{spec}'"))?;
            if k == 0 {
                bail!("--centers sample size must be positive");
            }
            Ok(CenterPolicy::Sample { k, seed })
        }
        _ => bail!("unknown --centers value '{spec}' (expected all or sample:K)"),
    }
}

impl ScoreArgs {
    pub fn to_config(&self) -> anyhow::Result<ScoreConfig> {
        let mut scores = Vec::new();
        for &s in &self.scores {
            if !scores.contains(&s) {
                scores.push(s);
            }
        }
        Ok(ScoreConfig {
            scores,
            radius: self.radius,
            scale: self.scale,
            lag: self.lag,
            sectors: self.sectors,
            min_points: self.min_points,
            centers: parse_centers(&self.centers, self.seed)?,
            sre: SreSettings {
                layout: parse_bins(&self.bins)?,
                alpha: self.alpha,
                kl_order: self.kl_order.into(),
            },
            ssi: SsiSettings {
                rho: self.rho,
                background_floor: self.background_floor,
                k_neighbors: self.k_neighbors,
                max_roi_points: self.max_roi_points,
                mark_threshold: self.mark_threshold,
            },
            spad: SpadConfig {
                max_rows: self.spad_rows,
                max_cols: self.spad_cols,
                sample_size: self.spad_samples,
                seed: self.seed,
            },
        })
    }

    /// Flag values as given, for the summary echo.
    fn echo(&self) -> Value {
        json!({
            "radius": self.radius,
            "scale": self.scale,
            "lag": self.lag,
            "sectors": self.sectors,
            "bins": self.bins,
            "alpha": self.alpha,
            "rho": self.rho,
            "background_floor": self.background_floor,
            "k_neighbors": self.k_neighbors,
            "max_roi_points": self.max_roi_points,
            "mark_threshold": self.mark_threshold,
            "min_points": self.min_points,
            "centers": self.centers,
            "seed": self.seed,
            "scores": self.scores.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "kl_order": self.kl_order.to_possible_value().map(|v| v.get_name().to_string()),
            "spad_rows": self.spad_rows,
            "spad_cols": self.spad_cols,
            "spad_samples": self.spad_samples,
        })
    }
}

/// Loads the input map, applying `--flip-marks`.
pub fn read_input(input: &InputArgs) -> anyhow::Result<PerformanceMap> {
    let file = File::open(&input.input)
        .with_context(|| format!("cannot open input '{}'", input.input.display()))?;
    let format = input
        .format
        .map(MapFormat::from)
        .unwrap_or_else(|| MapFormat::from_path(&input.input));
    let map = load_map(BufReader::new(file), format)
        .with_context(|| format!("cannot read map from '{}'", input.input.display()))?;
    Ok(if input.flip_marks {
        map.flip_marks()
    } else {
        map
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create '{}'", path.display()))?;
    Ok(BufWriter::new(f))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> anyhow::Result<()> {
    w.flush()
        .with_context(|| format!("cannot write '{}'", path.display()))
}

pub fn cmd_compute(args: &ComputeArgs) -> anyhow::Result<()> {
    let cfg = args.score.to_config()?;
    let map = read_input(&args.input)?;
    let mut report = compute_scores(&map, &cfg)?;
    let mut run = serde_json::Map::new();
    run.insert(
        "input".into(),
        json!(args.input.input.display().to_string()),
    );
    run.insert(
        "format".into(),
        json!(args.input.format.map(|f| format!("{f:?}").to_lowercase())),
    );
    run.insert("flip_marks".into(), json!(args.input.flip_marks));
    run.insert("output".into(), json!(args.output.display().to_string()));
    run.insert("flags".into(), args.score.echo());
    report
        .hyperparameters
        .insert("run".into(), Value::Object(run));

    fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create '{}'", args.output.display()))?;
    let path = args.output.join(LOCALS_CSV);
    let mut w = create(&path)?;
    write_locals_csv(&report.records, &mut w)
        .with_context(|| format!("cannot write '{}'", path.display()))?;
    finish(w, &path)?;
    let path = args.output.join(LOCALS_GEOJSON);
    let mut w = create(&path)?;
    write_locals_geojson(&report.records, &mut w)
        .with_context(|| format!("cannot write '{}'", path.display()))?;
    finish(w, &path)?;
    let path = args.output.join(SUMMARY_JSON);
    let mut w = create(&path)?;
    write_summary(&report.summary(), &mut w)
        .with_context(|| format!("cannot write '{}'", path.display()))?;
    finish(w, &path)?;
    log::info!(
        "wrote {} records to {}",
        report.records.len(),
        args.output.display()
    );
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let cfg = args.score.to_config()?;
    let map = read_input(&args.input)?;
    let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let grid = SweepGrid {
        radii: or(&args.radii, cfg.radius),
        scales: or(&args.scales, cfg.scale),
        lags: or(&args.lags, cfg.lag),
        sectors: if args.sector_counts.is_empty() {
            vec![cfg.sectors]
        } else {
            args.sector_counts.clone()
        },
    };
    let rows = sweep(&map, &cfg, &grid)?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create '{}'", parent.display()))?;
    }
    let mut w = create(&args.output)?;
    write_sweep_csv(&rows, &mut w)
        .with_context(|| format!("cannot write '{}'", args.output.display()))?;
    finish(w, &args.output)?;
    let no_roi = GeoBiasError::NoScoreableRoi.code();
    if rows
        .iter()
        .all(|r| !r.errors.is_empty() && r.errors.iter().all(|(_, c)| c == no_roi))
    {
        return Err(GeoBiasError::NoScoreableRoi.into());
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        cell: args.cell,
        extent: args.extent,
        center: GeoLocation::new(args.center_lon, args.center_lat)?,
        ..SynthConfig::new(args.pattern, args.n, args.seed)
    };
    let map = synthesize(&cfg)?;
    let format = match (args.format, &args.output) {
        (Some(f), _) => f.into(),
        (None, Some(p)) => MapFormat::from_path(p),
        (None, None) => MapFormat::Csv,
    };
    let write = |sink: &mut dyn Write| match format {
        MapFormat::Csv => write_map_csv(&map, sink),
        MapFormat::GeoJson => write_map_geojson(&map, sink),
    };
    match &args.output {
        Some(path) => {
            let mut w = create(path)?;
            write(&mut w).with_context(|| format!("cannot write '{}'", path.display()))?;
            finish(w, path)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).context("cannot write to standard output")?;
            lock.flush().context("cannot write to standard output")
        }
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match &cli.command {
        Command::Compute(a) => cmd_compute(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// 2 when no ROI could be scored, 1 for every other failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let no_roi = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<GeoBiasError>(),
            Some(GeoBiasError::NoScoreableRoi)
        )
    });
    if no_roi {
        2
    } else {
        1
    }
}

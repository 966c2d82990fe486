//! `ecgscan`: digitize ECG page images, score reconstructions, render synthetic pages.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ecgscan::eval::{aggregate_csv, fmt_snr, metrics_csv};
use ecgscan::layout::{read_layouts, shipped_layouts};
use ecgscan::pipeline::{digitize_batch, evaluate_dirs, synthesize_batch, PipelineConfig};
use ecgscan::segmentation::SegmentationMode;
use ecgscan::synth::SceneConfig;

/// Exit status for unusable configuration, distinct from per-image failures.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "ecgscan", version, about = "Digitize raster images of paper ECGs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert page images into per-lead CSV time series.
    Digitize(DigitizeArgs),
    /// Score predicted CSVs against reference CSVs.
    Evaluate(EvaluateArgs),
    /// Render synthetic pages with ground-truth sidecars.
    Synthesize(SynthesizeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Segmentation {
    Classical,
    External,
}

#[derive(Args)]
struct DigitizeArgs {
    /// PNG files, or directories whose PNG files are all processed.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory for `<stem>.csv` files and `report.csv`.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with `[pipeline]` and `[segmentation]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Paper speed in mm/s.
    #[arg(long, value_parser = ["25", "50"])]
    speed: Option<String>,
    /// Gain in mm/mV.
    #[arg(long)]
    gain: Option<f64>,
    /// Output sample rate in Hz.
    #[arg(long)]
    fs: Option<f64>,
    /// TOML file of candidate layouts.
    #[arg(long)]
    layouts: Option<PathBuf>,
    /// Skip layout identification and use this layout.
    #[arg(long)]
    force_layout: Option<String>,
    #[arg(long, value_enum)]
    segmentation: Option<Segmentation>,
    /// Directory of `<stem>.pmap` files for external segmentation.
    #[arg(long)]
    probmap_dir: Option<PathBuf>,
    /// Images processed in parallel (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Millimetres per minor grid cell.
    #[arg(long)]
    grid_mm_per_minor: Option<f64>,
    /// Pixels per minor cell to assume when the grid fit fails.
    #[arg(long)]
    fallback_d_px: Option<f64>,
    /// Dump probability maps, accumulators and angle-angle planes here.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted `<stem>.csv` files.
    pred: PathBuf,
    /// Directory of `<stem>.ref.csv` references and `<stem>.truth.txt` sidecars.
    truth: PathBuf,
    /// Where `metrics.csv` and `aggregate.csv` go (default: the prediction directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Scene spec TOML; built-in defaults when omitted.
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file of layouts the spec may name (default: shipped layouts).
    #[arg(long)]
    layouts: Option<PathBuf>,
}

/// An error that should end the run with the configuration exit status.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl Into<anyhow::Error>) -> anyhow::Error {
    ConfigError(e.into()).into()
}

fn pipeline_config(args: &DigitizeArgs) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::from_toml_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &args.speed {
        cfg.paper_speed = s.parse()?;
    }
    if let Some(g) = args.gain {
        cfg.gain = g;
    }
    if let Some(fs) = args.fs {
        cfg.target_fs = fs;
    }
    if let Some(p) = &args.layouts {
        cfg.layouts = read_layouts(p)?;
    }
    if let Some(name) = &args.force_layout {
        // A shipped layout may be forced even when it is not a match candidate.
        if cfg.layout(name).is_none() {
            if let Some(l) = shipped_layouts().into_iter().find(|l| &l.name == name) {
                cfg.layouts.push(l);
            }
        }
        cfg.force_layout = Some(name.clone());
    }
    if let Some(m) = args.segmentation {
        cfg.segmentation.mode = match m {
            Segmentation::Classical => SegmentationMode::Classical,
            Segmentation::External => SegmentationMode::External,
        };
    }
    if let Some(d) = &args.probmap_dir {
        cfg.probmap_dir = Some(d.clone());
    }
    if let Some(v) = args.grid_mm_per_minor {
        cfg.grid_mm_per_minor = v;
    }
    if args.fallback_d_px.is_some() {
        cfg.fallback_d_px = args.fallback_d_px;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Expands directories to their PNG files, sorted by name.
fn collect_inputs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no input images");
    }
    Ok(out)
}

fn digitize(args: DigitizeArgs) -> anyhow::Result<()> {
    let cfg = pipeline_config(&args).map_err(config_err)?;
    let inputs = collect_inputs(&args.inputs).map_err(config_err)?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(config_err(anyhow::anyhow!("--workers must be at least 1")));
    }
    let report = digitize_batch(&inputs, &cfg, &args.out, workers, args.debug_dir.as_deref())?;
    println!(
        "{} images, {} failures; report in {}",
        report.rows.len(),
        report.failures(),
        args.out.join("report.csv").display()
    );
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    if !args.truth.is_dir() {
        return Err(config_err(anyhow::anyhow!("truth directory {} not found", args.truth.display())));
    }
    let report = evaluate_dirs(&args.pred, &args.truth)?;
    let out = args.out.unwrap_or_else(|| args.pred.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("metrics.csv"), &metrics_csv(&report.rows))?;
    write(&out.join("aggregate.csv"), &aggregate_csv(&report.aggregates))?;
    for stem in &report.unmatched {
        eprintln!("warning: no usable prediction for {stem}, skipped");
    }
    for a in &report.aggregates {
        println!(
            "{}: {} leads ({} failed, {} exact), SNR {} ± {:.2} dB, corr {:.3}",
            a.group,
            a.leads,
            a.failed,
            a.infinite_snr,
            fmt_snr(a.snr.0),
            a.snr.1,
            a.corr.0
        );
    }
    Ok(())
}

fn synthesize(args: SynthesizeArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(config_err)?;
            SceneConfig::parse(&text).map_err(config_err)?
        }
        None => SceneConfig::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let layouts = match &args.layouts {
        Some(p) => read_layouts(p).map_err(config_err)?,
        None => shipped_layouts(),
    };
    spec.validate().map_err(config_err)?;
    let stems = synthesize_batch(&spec, args.count, &args.out, &layouts).map_err(|e| match e {
        ecgscan::Error::Config(_) => config_err(e),
        e => e.into(),
    })?;
    println!("wrote {} pages to {}", stems.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Digitize(a) => digitize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synthesize(a) => synthesize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

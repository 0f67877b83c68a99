use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use rhcd::pipeline::{self, ClassifierConfig, PipelineConfig};
use rhcd::synth;

/// Road-corridor imagery pipeline producing the relative highway crack
/// density (RHCD) index.
#[derive(Parser)]
#[command(name = "rhcd", version)]
struct Cli {
    /// Log level for NDJSON logs on stderr.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::Level,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long, short)]
    config: PathBuf,

    /// Classifier backend: `builtin` or `exec:<command>`.
    #[arg(long)]
    classifier: Option<String>,

    /// Worker count for fetching, tiling and classification.
    #[arg(long)]
    parallelism: Option<usize>,

    /// Override the configured work directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse OSM XML into motorway segments and rail-bridge occluders.
    ExtractNetwork(Common),
    /// Buffer segments into road corridors and occluder polygons.
    Buffer(Common),
    /// Search the imagery catalog and download intersecting tiles.
    Fetch(Common),
    /// Mask imagery to the corridors and cut patches.
    Tile(Common),
    /// Expand crack patches with rotated, flipped and brightness variants.
    Augment(Common),
    /// Stratified train/validation/test split of the patch index.
    Split(Common),
    /// Classify every indexed patch.
    Classify(Common),
    /// Score predictions against ground-truth labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Predictions NDJSON (default: work dir).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Ground-truth labels JSON (default: paths.truth).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Metrics output (default: work dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate predictions into per-segment RHCD and flag the top percentile.
    Rhcd {
        #[command(flatten)]
        common: Common,
        /// Top percentile to flag.
        #[arg(long)]
        top_percentile: Option<f64>,
        /// Weight the percentile by segment length.
        #[arg(long)]
        weight_by_length: bool,
    },
    /// Compute the long-term land-surface-temperature amplitude raster.
    LstAmplitude(Common),
    /// Correlate RHCD with temperature amplitude and traffic volume.
    Correlate(Common),
    /// Generate a synthetic scene with a ready-to-run config.
    Synth {
        /// Scene spec JSON; the built-in demo scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// extract-network → buffer → fetch → tile → classify → rhcd → correlate.
    RunAll(Common),
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
    ExitCode::from(1)
}

fn load_config(c: &Common) -> Result<PipelineConfig, ExitCode> {
    if !c.config.is_file() {
        return Err(usage_error(&format!("config file {} not found", c.config.display())));
    }
    let apply = || -> rhcd::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&c.config)?;
        if let Some(s) = &c.classifier {
            cfg.classifier = ClassifierConfig::parse(s)?;
        }
        if let Some(p) = c.parallelism {
            cfg.parallelism = p;
        }
        if let Some(w) = &c.work_dir {
            cfg.paths.work_dir = std::path::absolute(w).unwrap_or_else(|_| w.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    };
    apply().map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}

fn report(r: rhcd::Result<()>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn synth_cmd(spec: Option<&Path>, out: &Path) -> rhcd::Result<()> {
    let spec = match spec {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(rhcd::Error::io(p))?;
            serde_json::from_slice(&bytes).map_err(|e| rhcd::Error::Scene(format!("{}: {e}", p.display())))?
        }
        None => synth::demo_spec(),
    };
    let scene = synth::generate_scene(&spec)?;
    let files = synth::write_scene(&scene, out)?;
    println!("{}", files.config.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    rhcd::logging::init(cli.log_level);

    macro_rules! with_cfg {
        ($common:expr, |$cfg:ident| $body:expr) => {
            match load_config($common) {
                Ok($cfg) => report($body),
                Err(code) => code,
            }
        };
    }

    match &cli.command {
        Cmd::ExtractNetwork(c) => with_cfg!(c, |cfg| pipeline::extract_network(&cfg).map(drop)),
        Cmd::Buffer(c) => with_cfg!(c, |cfg| pipeline::buffer(&cfg).map(drop)),
        Cmd::Fetch(c) => with_cfg!(c, |cfg| pipeline::fetch(&cfg).map(drop)),
        Cmd::Tile(c) => with_cfg!(c, |cfg| pipeline::tile(&cfg).map(drop)),
        Cmd::Augment(c) => with_cfg!(c, |cfg| pipeline::augment_stage(&cfg).map(drop)),
        Cmd::Split(c) => with_cfg!(c, |cfg| pipeline::split_stage(&cfg).map(drop)),
        Cmd::Classify(c) => with_cfg!(c, |cfg| pipeline::classify(&cfg).map(drop)),
        Cmd::Evaluate {
            common,
            predictions,
            truth,
            out,
        } => with_cfg!(common, |cfg| {
            let mut cfg = cfg;
            if let Some(t) = truth {
                cfg.paths.truth = Some(t.clone());
            }
            pipeline::evaluate_stage(&cfg, predictions.as_deref(), out.as_deref()).map(drop)
        }),
        Cmd::Rhcd {
            common,
            top_percentile,
            weight_by_length,
        } => with_cfg!(common, |cfg| {
            let mut cfg = cfg;
            if let Some(p) = top_percentile {
                cfg.top_percentile = *p;
            }
            cfg.weight_by_length |= weight_by_length;
            cfg.validate().and_then(|_| pipeline::rhcd_stage(&cfg).map(drop))
        }),
        Cmd::LstAmplitude(c) => with_cfg!(c, |cfg| pipeline::lst_amplitude(&cfg).map(drop)),
        Cmd::Correlate(c) => with_cfg!(c, |cfg| pipeline::correlate(&cfg).map(drop)),
        Cmd::RunAll(c) => with_cfg!(c, |cfg| pipeline::run_all(&cfg)),
        Cmd::Synth { spec, out } => report(synth_cmd(spec.as_deref(), out)),
    }
}

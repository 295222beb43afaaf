use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use urbanheight::pipeline::{
    compare_files, generate_synthetic_scene, load_synth_params, run_pipeline, run_stage, write_synthetic, PipelineConfig,
    PipelineError, Stage, SynthParams,
};

/// Gridded building heights from lidar footprints, imagery and random forests.
#[derive(Debug, Parser)]
#[command(name = "urbanheight", version)]
struct Cli {
    /// Pipeline config (for `synth`: synthetic city parameters).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic city with known heights and a ready-to-run config.
    Synth,
    /// Filter footprints and aggregate per-cell height samples.
    Sample,
    /// Build the 323-band feature stack.
    Features,
    /// Train one forest per subregion.
    Train,
    /// Predict heights inside the urban mask.
    Map,
    /// Score the map against held-out samples and references.
    Validate,
    /// Compare two height rasters, downscaling the finer one if needed.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Only cells inside this mask (value 1) are compared.
        #[arg(long, value_name = "PATH")]
        mask: Option<PathBuf>,
        /// Integer strata raster for per-stratum reports.
        #[arg(long, value_name = "PATH")]
        strata: Option<PathBuf>,
    },
    /// Run sample, features, train, map and validate in order.
    Run,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let path = cli.config.as_ref().ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    Ok(cfg)
}

fn require_out(cli: &Cli) -> Result<PathBuf, PipelineError> {
    cli.out.clone().ok_or_else(|| PipelineError::Config("--out is required".into()))
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let stage = match &cli.command {
        Command::Synth => {
            let out = require_out(cli)?;
            let params = match &cli.config {
                Some(p) => load_synth_params(p)?,
                None => SynthParams::default(),
            };
            let scene = generate_synthetic_scene(cli.seed.unwrap_or(0), &params)?;
            let cfg = write_synthetic(&out, &scene)?;
            println!("{}", cfg.display());
            return Ok(());
        }
        Command::Compare { a, b, mask, strata } => {
            let out = require_out(cli)?;
            let reports = compare_files(a, b, mask.as_deref(), strata.as_deref(), &out)?;
            for r in reports {
                let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
                println!("{} n={} r={} rmse={}", r.stratum, r.n, fmt(r.pearson_r), fmt(r.rmse));
            }
            return Ok(());
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            run_pipeline(&cfg)?;
            return Ok(());
        }
        Command::Sample => Stage::Sample,
        Command::Features => Stage::Features,
        Command::Train => Stage::Train,
        Command::Map => Stage::Map,
        Command::Validate => Stage::Validate,
    };
    let cfg = load_config(cli)?;
    run_stage(&cfg, stage)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

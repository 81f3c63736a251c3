mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use voxmotion_core::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "voxmotion", version, about = "Voxel-volume conditioned motion diffusion toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources and overrides, accepted by every subcommand.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat JSON config; keys override the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base profile when the config file names none: `desk` or `full`.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Write the effective config here before running.
    #[arg(long, global = true)]
    dump_config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    batch: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Task ratio approach:reach:goalwalk.
    #[arg(long, global = true)]
    mix: Option<String>,
    #[arg(long, global = true)]
    ddim_steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize a motion's body surface (and optional sidecar object) into a UIV1 volume.
    Voxelize {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a UIM1 motion as a UHF1 heatmap field.
    Encode {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a UHF1 field back into a UIM1 motion.
    Decode {
        #[arg(long)]
        field: PathBuf,
        /// Motion whose skeleton the output uses; the toy skeleton otherwise.
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write generated samples as UIV1 + UIM1 + JSON sidecar triples.
    GenData {
        /// reach, goalwalk, approach, compound or mixed.
        #[arg(long)]
        task: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoiser and write a UCK1 checkpoint.
    Train {
        /// Directory written by gen-data; generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines file receiving every step's losses.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Sample a motion for every condition in a data directory.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write each sampled raw field as UHF1.
        #[arg(long)]
        fields: bool,
    },
    /// Score predicted motions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// MetricReport JSON destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck,
    /// Write voxel centers and joints as an ASCII PLY point cloud.
    ExportPly {
        #[arg(long)]
        uiv: Option<PathBuf>,
        #[arg(long)]
        motion: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(voxmotion_core::Error),
    /// Finished, but a check failed.
    Failed(ErrorKind, String),
}

impl From<voxmotion_core::Error> for CliError {
    fn from(e: voxmotion_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Format => 2,
        ErrorKind::Invariant => 3,
        ErrorKind::Numerical => 4,
    }
}

fn effective_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path, &g.profile)?,
        None => RunConfig::profile(&g.profile)?,
    };
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = g.steps {
        cfg.steps = v;
    }
    if let Some(v) = g.batch {
        cfg.batch = v;
    }
    if let Some(v) = g.lr {
        cfg.lr = v;
    }
    if let Some(v) = &g.mix {
        cfg.mix = v.clone();
    }
    if let Some(v) = g.ddim_steps {
        cfg.ddim_steps = v;
    }
    cfg.validate()?;
    if let Some(path) = &g.dump_config {
        std::fs::write(path, cfg.to_json())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli.global)?;
    match cli.command {
        Command::Voxelize { motion, sidecar, out } => commands::voxelize(&cfg, &motion, sidecar.as_deref(), &out),
        Command::Encode { motion, out } => commands::encode(&cfg, &motion, &out),
        Command::Decode { field, like, out } => commands::decode(&cfg, &field, like.as_deref(), &out),
        Command::GenData { task, count, out } => commands::gen_data(&cfg, &task, count, &out),
        Command::Train { data, out, log } => commands::train(&cfg, data.as_deref(), &out, log.as_deref()),
        Command::Sample { checkpoint, data, out, fields } => commands::sample(&cfg, &checkpoint, &data, &out, fields),
        Command::Eval { pred, gt, out } => commands::eval(&cfg, &pred, &gt, out.as_deref()),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::ExportPly { uiv, motion, out } => commands::export_ply(uiv.as_deref(), motion.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
        Err(CliError::Failed(kind, m)) => {
            eprintln!("error: {m}");
            ExitCode::from(exit_code(kind))
        }
    }
}

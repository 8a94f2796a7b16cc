//! `pgst`: fit, render, animate, benchmark, and inspect Gaussian-splat
//! scenes. Exit codes: 0 success, 2 input/validation failure, 3 numerical
//! failure.

mod checkpoint;
mod commands;
mod config;
mod pngio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pgst_core::densctl::Policy;
use pgst_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "pgst", version, about = "Desk-scale differentiable Gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Baseline,
    PixelAware,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Baseline => Policy::Baseline,
            PolicyArg::PixelAware => Policy::PixelAware,
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides both the scene seed and the schedule seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the densification policy.
    #[arg(long)]
    policy: Option<PolicyArg>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.scene.seed = seed;
            cfg.schedule.seed = seed;
        }
        if let Some(policy) = self.policy {
            cfg.densify.policy = policy.into();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the configured synthetic scene through the requested stages.
    Fit {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output directory for checkpoints, logs, and previews.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated stage list (e.g. "1,2"); "none" copies the
        /// initialization to the output.
        #[arg(long, default_value = "1")]
        stage: String,
    },
    /// Render one PNG from a cloud, optionally deformed or composited.
    Render {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Single-branch cloud snapshot.
        #[arg(long)]
        ply: Option<PathBuf>,
        /// Face-branch cloud (requires --mouth).
        #[arg(long)]
        face: Option<PathBuf>,
        /// Mouth-branch cloud (requires --face).
        #[arg(long)]
        mouth: Option<PathBuf>,
        /// Deformation-model checkpoint (requires --features).
        #[arg(long)]
        model: Option<PathBuf>,
        /// PGSF driving-feature sequence.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Frame index into the feature sequence.
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
    /// Render every frame of a feature sequence as numbered PNGs.
    Animate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Run the baseline and pixel-aware densification policies head-to-head.
    CompareDensify {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient verification; nonzero exit on failure.
    Gradcheck {
        /// Randomized instances per suite.
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Dump per-Gaussian densification statistics as CSV.
    Stats {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_stages(s: &str) -> Result<Vec<u8>, Error> {
    if s.trim() == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| match p.trim() {
            "1" => Ok(1),
            "2" => Ok(2),
            "3" => Ok(3),
            other => Err(Error::InvalidConfig(format!(
                "unknown stage '{other}' (expected 1, 2, 3, or none)"
            ))),
        })
        .collect()
}

fn init_threads() {
    if let Ok(v) = std::env::var("PGST_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Cmd::Fit { common, out, stage } => {
            let cfg = common.load()?;
            let stages = parse_stages(&stage)?;
            commands::fit(&cfg, &out, &stages)?;
            Ok(0)
        }
        Cmd::Render {
            common,
            out,
            ply,
            face,
            mouth,
            model,
            features,
            frame,
        } => {
            let cfg = common.load()?;
            commands::render(
                &cfg,
                &out,
                ply.as_deref(),
                face.as_deref(),
                mouth.as_deref(),
                model.as_deref(),
                features.as_deref(),
                frame,
            )?;
            Ok(0)
        }
        Cmd::Animate {
            common,
            out,
            ply,
            model,
            features,
        } => {
            let cfg = common.load()?;
            commands::animate(&cfg, &out, &ply, &model, &features)?;
            Ok(0)
        }
        Cmd::CompareDensify { common, out } => {
            let cfg = common.load()?;
            commands::compare_densify(&cfg, &out)?;
            Ok(0)
        }
        Cmd::Gradcheck { instances } => {
            if commands::gradcheck(instances)? {
                Ok(0)
            } else {
                Ok(3)
            }
        }
        Cmd::Stats { common, out } => {
            let cfg = common.load()?;
            commands::stats(&cfg, out.as_deref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

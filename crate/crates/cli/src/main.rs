use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ppfnet_core::matchreg::{RansacConfig, RecallConfig};
use ppfnet_core::{Error, Vec3};

mod commands;
mod config;

use commands::{EvalArgs, ExtractArgs, Sweep};

#[derive(Debug, Parser)]
#[command(name = "ppfnet", version, about = "Learned point-pair-feature descriptors for point cloud registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate normals oriented toward a viewpoint.
    Normals {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 17)]
        k: usize,
        #[arg(long, default_value = "0,0,0", value_parser = |s: &str| config::parse_vec3(s).map_err(|e| e.to_string()))]
        viewpoint: Vec3,
    },
    /// Distance-constrained sampling; writes one point index per line.
    Sample {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        tau: f64,
    },
    /// Generate a synthetic fragment pair and its ground-truth pose.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `room` or `plane`, optionally followed by `,key=value` overrides.
        #[arg(long, default_value = "room")]
        spec: String,
        out_x: PathBuf,
        out_y: PathBuf,
        pose: PathBuf,
    },
    /// Train from fragment pairs listed in manifests.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// A manifest file or a directory of `.manifest` files.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute descriptors for a cloud.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        args: ExtractArgs,
    },
    /// Nearest-neighbor matching of two descriptor files.
    Match {
        desc_x: PathBuf,
        desc_y: PathBuf,
        output: PathBuf,
        #[arg(long)]
        mutual: bool,
    },
    /// RANSAC pose from correspondences; the pose maps Y into X.
    Register {
        corrs: PathBuf,
        x: PathBuf,
        y: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 0.10)]
        inlier_tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recall, rotation or sparsity report over a pair manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_enum, default_value_t = Sweep::None)]
        sweep: Sweep,
        output: PathBuf,
        #[arg(long)]
        mutual: bool,
        #[arg(long, default_value_t = 0.10)]
        tau1: f64,
        #[arg(long, default_value_t = 0.05)]
        tau2: f64,
        #[command(flatten)]
        args: ExtractArgs,
    },
    /// Write a cloud colored by a PCA projection of its descriptors.
    Colorize {
        desc: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) => 1,
        Error::Io { .. } | Error::Parse(_) | Error::Shape(_) => 2,
        Error::Degenerate(_) => 3,
    }
}

fn run(cli: Cli) -> ppfnet_core::Result<String> {
    match cli.command {
        Command::Normals { input, output, k, viewpoint } => commands::normals(&input, &output, k, viewpoint),
        Command::Sample { input, output, tau } => commands::sample(&input, &output, tau),
        Command::Synth { seed, spec, out_x, out_y, pose } => commands::synth(seed, &spec, &out_x, &out_y, &pose),
        Command::Train { config, data, out } => commands::train_cmd(&config, data.as_deref(), out.as_deref()),
        Command::Extract { ckpt, input, output, args } => commands::extract(&ckpt, &input, &output, &args),
        Command::Match { desc_x, desc_y, output, mutual } => commands::match_cmd(&desc_x, &desc_y, &output, mutual),
        Command::Register {
            corrs,
            x,
            y,
            output,
            max_iters,
            inlier_tau,
            seed,
        } => {
            let ransac = RansacConfig {
                max_iters,
                inlier_tau,
                ..RansacConfig::default()
            };
            commands::register(&corrs, &x, &y, &output, &ransac, seed)
        }
        Command::Eval {
            ckpt,
            pairs,
            sweep,
            output,
            mutual,
            tau1,
            tau2,
            args,
        } => commands::eval(&EvalArgs {
            ckpt: &ckpt,
            pairs: &pairs,
            sweep,
            output: &output,
            mutual,
            recall: RecallConfig { tau1, tau2 },
            extract: &args,
        }),
        Command::Colorize { desc, input, output } => commands::colorize(&desc, &input, &output),
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
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

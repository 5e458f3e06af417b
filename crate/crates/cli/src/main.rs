use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use cpsc_core::harness::config::load_config;
use cpsc_core::harness::experiment::{run_experiment, ExperimentSpec, PEAK, REPORT_FILE};
use cpsc_core::harness::noise::add_gaussian_noise;
use cpsc_core::harness::pgm::{read_pgm, write_pgm};
use cpsc_core::harness::synth::synthetic_image;
use cpsc_core::{psnr, DenoiseConfig, Dictionary};

#[derive(Parser)]
#[command(name = "cpsc", version, about = "Graph-regularized sparse coding denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add seeded Gaussian noise to images, denoise them and write a PSNR report.
    Denoise(DenoiseArgs),
    /// Write a synthetic test image.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
    },
    /// Add seeded Gaussian noise to an image.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR between two images of the same size.
    Psnr { reference: PathBuf, test: PathBuf },
}

#[derive(Args)]
struct DenoiseArgs {
    /// Clean input image (PGM); repeat for several images.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Noise standard deviation; repeat or comma-separate for several levels.
    #[arg(long, required = true, value_delimiter = ',')]
    sigma: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write graph weights and Laplacians as plain-text matrices.
    #[arg(long)]
    dump_graph: bool,
    /// Write the learned dictionaries as plain-text matrices.
    #[arg(long)]
    dump_dictionary: bool,
    /// Tile size in pixels (overrides the config).
    #[arg(long)]
    tile: Option<usize>,
    /// Weight of the l1 term in the code stage (overrides the config).
    #[arg(long)]
    l1_weight: Option<f64>,
    /// Outer iteration cap (overrides the config).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Initial dictionary matrix file instead of the DCT.
    #[arg(long)]
    dictionary: Option<PathBuf>,
}

fn run_denoise(args: DenoiseArgs) -> anyhow::Result<bool> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => DenoiseConfig::default(),
    };
    if let Some(t) = args.tile {
        config.tile_size = t;
    }
    if let Some(w) = args.l1_weight {
        config.l1_weight = w;
    }
    if let Some(j) = args.max_iters {
        config.max_outer_iters = j;
    }
    let mut spec = ExperimentSpec::new(args.input, args.sigma, args.seed, &args.out);
    spec.config = config;
    spec.dump_graph = args.dump_graph;
    spec.dump_dictionary = args.dump_dictionary;
    if let Some(path) = &args.dictionary {
        let d = Dictionary::load(path).with_context(|| format!("loading dictionary {}", path.display()))?;
        spec.initial_dictionary = Some(d);
    }
    let report = run_experiment(&spec)?;
    print!("{}", report.table());
    eprintln!("report written to {}", args.out.join(REPORT_FILE).display());
    Ok(report.is_success())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Denoise(args) => run_denoise(args),
        Command::Synth { out, width, height } => {
            if width == 0 || height == 0 {
                bail!("image dimensions must be positive");
            }
            write_pgm(&out, &synthetic_image(width, height)?)?;
            Ok(true)
        }
        Command::Noise { input, sigma, seed, out } => {
            let img = read_pgm(&input)?;
            write_pgm(&out, &add_gaussian_noise(&img, sigma, seed)?)?;
            Ok(true)
        }
        Command::Psnr { reference, test } => {
            let value = psnr(&read_pgm(&reference)?, &read_pgm(&test)?, PEAK)?;
            println!("{value:.4}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

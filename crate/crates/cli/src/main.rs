use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ris_core::dataset::{load, save};
use ris_core::geometry::Scene;
use ris_core::policy::{load_checkpoint, save_checkpoint};
use ris_core::vision::{render_top_view, write_pgm};
use ris_lab::{agreement, benchmark, gen_data, render_table, select, train_policy, CliError, Result, RunConfig, Split, Via};

/// Vertex tolerance of the agreement run, pixels.
const VERTEX_TOLERANCE_PX: f64 = 2.0;

#[derive(Parser)]
#[command(name = "ris-lab", version, about = "RIS selection, policy training and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed the command draws from.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; defaults to the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ViaArg {
    Vision,
    Geometry,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Renders a scene to an 8-bit PGM with a JSON sidecar.
    Render {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Prints the selected RIS and pathloss table, or runs an agreement study.
    SelectRis {
        #[arg(long, required_unless_present = "agreement")]
        scene: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "geometry")]
        via: ViaArg,
        /// Compares both paths on this many random scenes instead.
        #[arg(long, conflicts_with = "scene")]
        agreement: Option<usize>,
    },
    /// Generates a calibrated dataset and its sidecar.
    GenData {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Trains the policy and writes a checkpoint.
    Train {
        /// Training set; defaults to the configured path.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluates the policy and both AO runs on the test set.
    Benchmark {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

fn read_scene(path: &Path) -> Result<Scene> {
    Ok(Scene::from_json(&fs::read_to_string(path)?)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_json(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    let out = cli.out.as_deref();
    match cli.command {
        Command::Render { scene } => {
            let raster = render_top_view(&read_scene(&scene)?, config.raster)?;
            let path = out.unwrap_or(&config.paths.raster);
            write_pgm(path, &raster)?;
            eprintln!("wrote {}", path.display());
        }
        Command::SelectRis { agreement: Some(count), .. } => {
            let report = agreement(&config, count, cli.seed.unwrap_or(config.seeds.scenes), VERTEX_TOLERANCE_PX)?;
            emit(out, &serde_json::to_string_pretty(&report)?)?;
        }
        Command::SelectRis { scene, via, agreement: None } => {
            let scene = read_scene(scene.as_deref().expect("clap requires --scene"))?;
            let via = match via {
                ViaArg::Vision => Via::Vision,
                ViaArg::Geometry => Via::Geometry,
            };
            emit(out, &serde_json::to_string_pretty(&select(&config, &scene, via)?)?)?;
        }
        Command::GenData { split } => {
            let (split, default_path) = match split {
                SplitArg::Train => (Split::Train, &config.paths.train_data),
                SplitArg::Test => (Split::Test, &config.paths.test_data),
            };
            let (data, meta) = gen_data(&config, split, cli.seed)?;
            let path = out.unwrap_or(default_path);
            save(path, &data, &meta)?;
            eprintln!("wrote {} samples to {} (rho0 {:.4}, {:.2} dB)", meta.count, path.display(), meta.rho0, meta.empirical_db);
        }
        Command::Train { data } => {
            if let Some(seed) = cli.seed {
                config.train.seed = seed;
            }
            let (dataset, _) = load(data.as_deref().unwrap_or(&config.paths.train_data))?;
            let outcome =
                train_policy(&config, &dataset, |e| eprintln!("epoch {:>4}  loss {:>10.5}  {:.2}s", e.epoch, e.mean_loss, e.seconds))?;
            let path = out.unwrap_or(&config.paths.checkpoint);
            save_checkpoint(path, &outcome.params, &outcome.log)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Benchmark { checkpoint, test } => {
            if let Some(seed) = cli.seed {
                config.ao.seed = seed;
            }
            let params = load_checkpoint(checkpoint.as_deref().unwrap_or(&config.paths.checkpoint))?;
            let (test, _) = load(test.as_deref().unwrap_or(&config.paths.test_data))?;
            let report = benchmark(&config, &params, &test.samples)?;
            fs::write(out.unwrap_or(&config.paths.report), serde_json::to_string_pretty(&report)?)?;
            print!("{}", render_table(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use blindreach::bench::{desk_grid, export_dataset, run_benchmark, BenchmarkConfig, ScenarioOverrides, Variant};
use blindreach::executive::{run_episode, Scenario};
use blindreach::occupancy::{predict, wire, OccupancyEstimate, PredictorConfig};
use blindreach::rng::SeedStream;
use blindreach::workspace::format::encode_grid;
use blindreach::workspace::{generate_scene, Domain, GridSpec, SceneParams};

#[derive(Parser)]
#[command(name = "blindreach", version, about = "Contact-feedback planning simulator and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark campaign described by a JSON config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one episode and print its report as JSON.
    Episode {
        /// Either a full scenario or `{domain, variant, overrides}` to generate one.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also print the resolved scenario and one JSON line per event to stderr.
        #[arg(long)]
        debug_dump: bool,
    },
    /// Write framed training records for external predictors.
    ExportDataset {
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one scene on the desk grid and write it in the grid file format.
    GenScene {
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve structural predictions over the external-predictor protocol on
    /// stdin/stdout until end of input.
    Predictor {
        #[arg(long, default_value_t = 0.98)]
        decay: f64,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioFile {
    Full(Box<Scenario>),
    Generated {
        domain: Domain,
        variant: String,
        #[serde(default)]
        overrides: ScenarioOverrides,
    },
}

fn run(cli: Cli) -> blindreach::Result<()> {
    match cli.command {
        Command::Bench { config } => {
            let cfg: BenchmarkConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
            let (jsonl, csv) = run_benchmark(&cfg)?;
            writeln!(io::stdout().lock(), "{}\n{}", jsonl.display(), csv.display())?;
        }
        Command::Episode { scenario, seed, debug_dump } => {
            let sc = match serde_json::from_str(&fs::read_to_string(scenario)?)? {
                ScenarioFile::Full(sc) => *sc,
                ScenarioFile::Generated { domain, variant, overrides } => {
                    overrides.scenario(domain, Variant::parse(&variant)?, seed)?
                }
            };
            let report = run_episode(&sc, SeedStream::derive(seed, 1))?;
            if debug_dump {
                let mut err = io::stderr().lock();
                writeln!(err, "{}", serde_json::to_string(&sc)?)?;
                for e in &report.events {
                    writeln!(err, "{}", serde_json::to_string(e)?)?;
                }
            }
            writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::ExportDataset { domain, count, seed, out } => export_dataset(domain, count, seed, &out)?,
        Command::GenScene { domain, seed, out } => {
            let spec = desk_grid();
            let grid = generate_scene(&SceneParams::for_domain(domain), &spec, seed)?;
            fs::write(out, encode_grid(&grid, Some(domain), Some(seed))?)?;
        }
        Command::Predictor { decay } => {
            let cfg = PredictorConfig { decay, ..PredictorConfig::structural() };
            let mut input = io::stdin().lock();
            let mut output = BufWriter::new(io::stdout().lock());
            while let Some((header, grid)) = wire::read_request(&mut input)? {
                let spec = GridSpec::new(header.dims.clone(), 1.0, vec![0.0; header.dims.len()])?;
                cfg.validate(spec.ndim())?;
                let est = OccupancyEstimate::from_half_units(spec, &grid, 0.5)?;
                let probs: Vec<f32> = predict(&est, &cfg).into_iter().map(|p| p as f32).collect();
                wire::write_response(&mut output, &header.dims, &probs)?;
                output.flush()?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apgm::TypeTag;
use apgm_scenario::demo::compare_resampling_demo;
use apgm_scenario::{
    export_raster, run_scenario, write_metrics, RunSummary, ScenarioConfig, World,
};
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "apgm",
    version,
    about = "Adaptive patched grid map scenario runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the driving scenario and write metrics.csv and final.apgm.
    Run {
        /// Scenario file; the built-in default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        temporal_alpha: Option<f64>,
        /// Write PGM rasters of the final map.
        #[arg(long)]
        dump_rasters: bool,
        /// Fill the fuse_ms column (makes the CSV non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Coarsen one scan by merging in measurement space and by a Dempster
    /// fold, and write rasters of both.
    DemoResample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario file and list every problem found.
    ValidateConfig { file: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn load(path: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    match path {
        Some(p) => ScenarioConfig::load(p).map_err(|e| Failure::Config(e.to_string())),
        None => Ok(ScenarioConfig::default()),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::ValidateConfig { file } => {
            let cfg = load(Some(&file))?;
            println!("{}: ok ({} cycles)", file.display(), cfg.cycles());
        }
        Command::Run {
            config,
            out,
            seed,
            temporal_alpha,
            dump_rasters,
            timings,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = temporal_alpha {
                cfg.fusion.temporal_alpha = a;
            }
            cfg.fusion.record_timings |= timings;
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(runtime)?;
            let world = World::default_layout(&cfg.world);
            let output = run_scenario(&cfg, &world, |_| {}).map_err(runtime)?;
            write_metrics(&output.records, out.join("metrics.csv")).map_err(runtime)?;
            let file = std::fs::File::create(out.join("final.apgm")).map_err(runtime)?;
            apgm::grid::write_snapshot(&output.grid, std::io::BufWriter::new(file))
                .map_err(runtime)?;
            if dump_rasters {
                for tag in [TypeTag::Occupancy, TypeTag::Semantic] {
                    export_raster(
                        &output.grid,
                        tag,
                        None,
                        out.join(format!("final_{}.pgm", tag.name())),
                    )
                    .map_err(runtime)?;
                }
            }
            let s = RunSummary::from_records(&output.records);
            println!("cycles: {}", s.cycles);
            println!(
                "fused occupancy cells: mean {:.0}, max {}",
                s.mean_fused_occupancy, s.max_fused_occupancy
            );
            if s.cycles > 0 {
                println!("reduction vs static layout: {:.2}x", s.factor_static());
                println!(
                    "reduction vs uniform patched layout: {:.2}x",
                    s.factor_uniform()
                );
                let mean_ms = output.fuse_ms.iter().sum::<f64>() / output.fuse_ms.len() as f64;
                println!("mean fusion time: {mean_ms:.1} ms");
            }
            println!("total-conflict events: {}", output.conflicts);
        }
        Command::DemoResample { config, out } => {
            let cfg = load(config.as_deref())?;
            std::fs::create_dir_all(&out).map_err(runtime)?;
            let report = compare_resampling_demo(&cfg, &out).map_err(runtime)?;
            println!("block  method       occupied_m2  free_m2  conflicts");
            for s in std::iter::once(&report.original).chain(&report.merged) {
                println!(
                    "{:>5}  {:<11}  {:>11.2}  {:>7.2}  {:>9}",
                    s.block,
                    s.method.name(),
                    s.occupied_area_m2,
                    s.free_area_m2,
                    s.conflicts
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use autodesign_bench::report::report;
use autodesign_bench::run::output_dir;
use autodesign_bench::{run, BenchError, BenchResult, LoadedConfig, Overrides, Pipeline};
use clap::{Args, Parser, Subcommand};

/// Hardware-aware architecture search, pruning and quantization on
/// synthetic data.
#[derive(Parser)]
#[command(name = "autodesign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// First seed; replaces the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hardware profile name or file; repeat for several. Replaces the
    /// config's list.
    #[arg(long)]
    hardware: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Differentiable architecture search per hardware profile.
    Search(Common),
    /// Learned channel pruning under MACs or latency budgets.
    Prune(Common),
    /// Learned mixed-precision quantization under resource budgets.
    Quantize(Common),
    /// Exhaustive train-and-measure sweep of a small search space.
    Oracle(Common),
    /// Frontier, summary table and roofline data for an output directory.
    Report {
        /// Output directory of earlier runs.
        dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> BenchResult<()> {
    let (pipeline, common) = match cli.command {
        Command::Search(c) => (Pipeline::Search, c),
        Command::Prune(c) => (Pipeline::Prune, c),
        Command::Quantize(c) => (Pipeline::Quantize, c),
        Command::Oracle(c) => (Pipeline::Oracle, c),
        Command::Report { dir, out } => {
            let dir = dir
                .or(out)
                .ok_or_else(|| BenchError::Config("report needs an output directory".into()))?;
            let files = report(&dir)?;
            println!("wrote {}", files.summary.display());
            for p in files.frontiers.values().chain(files.roofline.iter()) {
                println!("wrote {}", p.display());
            }
            return Ok(());
        }
    };
    let loaded = LoadedConfig::from_file(&common.config)?;
    let ov = Overrides {
        seed: common.seed,
        out: common.out,
        hardware: (!common.hardware.is_empty()).then_some(common.hardware),
    };
    let dir = output_dir(pipeline, &loaded, &ov);
    let rows = run(pipeline, &loaded, &ov, &dir)?;
    for r in &rows {
        println!("{}  accuracy {:.4}  achieved {:?}", r.run_id, r.accuracy, r.achieved);
    }
    println!("results: {}", dir.join("results.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

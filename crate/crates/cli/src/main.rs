use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cspd_core::harness::{self, ExperimentReport, ExperimentSpec, RowStatus};
use cspd_core::generate_channel;

#[derive(Parser)]
#[command(name = "cspd", version, about = "Cross-subcarrier precoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// First seed of the sweep (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Tiny end-to-end run (M=4, K=2, N_v=8, one seed).
    Smoke,
    /// Write one channel realization as raw taps plus a JSON shape file.
    DumpChannel {
        /// Config whose `system` block sets the channel shape.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(config: Option<&Path>) -> Result<ExperimentSpec> {
    match config {
        Some(path) => harness::parse_config(path).with_context(|| format!("reading {}", path.display())),
        None => Ok(ExperimentSpec::default()),
    }
}

fn execute(mut spec: ExperimentSpec, common: &Common) -> Result<()> {
    if let Some(seed) = common.seed {
        spec.first_seed = seed;
    }
    let report = harness::run_to_dir(&spec, &common.out_dir)
        .with_context(|| format!("writing reports to {}", common.out_dir.display()))?;
    print_summary(&report, &common.out_dir);
    Ok(())
}

fn print_summary(report: &ExperimentReport, out_dir: &Path) {
    let failed = report.rows.iter().filter(|r| r.status != RowStatus::Ok).count();
    println!("{} rows ({failed} not ok) -> {}", report.rows.len(), out_dir.display());
    for agg in report.aggregates.iter().filter(|a| a.metric == "wsr_bits") {
        println!(
            "{:>24} {:>6} dB  wsr {:>9.3} ± {:.3} bit/s/Hz (n={})",
            agg.method, agg.snr_db, agg.mean, agg.std, agg.count
        );
    }
}

fn dump_channel(spec: &ExperimentSpec, common: &Common) -> Result<()> {
    let seed = common.seed.unwrap_or(spec.first_seed);
    let ch = generate_channel(&spec.system, &mut ChaCha8Rng::seed_from_u64(seed))?;
    std::fs::create_dir_all(&common.out_dir)?;
    let (bin, json) = ch.dump(&common.out_dir.join(format!("channel_{seed}")))?;
    println!("{}\n{}", bin.display(), json.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Run { config } => load(Some(config)).and_then(|s| execute(s, &cli.common)),
        Command::Smoke => execute(ExperimentSpec::smoke(), &cli.common),
        Command::DumpChannel { config } => load(config.as_deref()).and_then(|s| dump_channel(&s, &cli.common)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Batch front end: simulate hierarchical datasets, run the estimation
//! pipeline, drive replicated benchmark studies, and pretty-print
//! reports. Runs are reproducible from (config, seed); flags override
//! only the seed, thread count, and output path.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hiertmle::config::RunConfig;
use hiertmle::error::Error;
use hiertmle::io::write_csv;
use hiertmle::pipeline::{load_input, run_benchmark, run_estimate, BenchmarkOutput, RunOutput};
use hiertmle::simulate::generate;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "hiertmle", version, about = "TMLE for community-level stochastic interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from the config's DGP block and write it as CSV.
    Simulate(RunArgs),
    /// Fit, target, and report estimates for every configured intervention.
    Estimate(RunArgs),
    /// Replicated simulation study scored against the Monte Carlo oracle.
    Benchmark(RunArgs),
    /// Pretty-print a report JSON as a table.
    Report {
        /// Path to a report written by `estimate`.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seed override; defaults to the config seed, then 42.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the config value, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output path override.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

fn config_error(e: Error) -> Failure {
    match e {
        Error::Io(_) => fail(3, format!("io: {e}")),
        _ => fail(2, format!("config: {e}")),
    }
}

fn data_error(e: Error) -> Failure {
    match e {
        Error::Io(_) | Error::Csv(_) => fail(3, format!("io: {e}")),
        _ => fail(2, format!("input: {e}")),
    }
}

fn estimation_error(e: Error) -> Failure {
    match e {
        Error::Io(_) | Error::Csv(_) => fail(3, format!("io: {e}")),
        _ => fail(4, format!("estimation: {e}")),
    }
}

fn io_error(e: impl std::fmt::Display) -> Failure {
    fail(3, format!("io: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Report { input } => cmd_report(&input),
    }
}

struct Prepared {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    base_dir: PathBuf,
}

fn prepare(args: &RunArgs, default_out: &str) -> Result<Prepared, Failure> {
    let cfg = RunConfig::from_path(&args.config).map_err(config_error)?;
    cfg.validate().map_err(config_error)?;
    let seed = match args.seed.or(cfg.seed) {
        Some(s) => s,
        None => {
            eprintln!("no seed given; defaulting to {DEFAULT_SEED}");
            DEFAULT_SEED
        }
    };
    let threads = args.threads.or(cfg.threads);
    if let Some(t) = threads {
        // ignore failure when a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = args
        .out
        .clone()
        .or(cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(default_out));
    let base_dir = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Prepared { cfg, seed, out, base_dir })
}

fn cmd_simulate(args: RunArgs) -> Result<(), Failure> {
    let p = prepare(&args, "dataset.csv")?;
    let dgp = p
        .cfg
        .dgp
        .as_ref()
        .ok_or_else(|| fail(2, "config: simulate requires a dgp block"))?;
    let ds = generate(dgp, p.seed).map_err(config_error)?;
    write_csv(&ds, &p.out).map_err(io_error)?;
    eprintln!(
        "wrote {} rows over {} communities to {} (seed {})",
        ds.communities.iter().map(|c| c.n()).sum::<usize>(),
        ds.j(),
        p.out.display(),
        p.seed
    );
    Ok(())
}

fn cmd_estimate(args: RunArgs) -> Result<(), Failure> {
    let p = prepare(&args, "report.json")?;
    let ds = load_input(&p.cfg, p.seed, &p.base_dir).map_err(data_error)?;
    let out = run_estimate(&ds, &p.cfg, p.seed, &p.base_dir).map_err(estimation_error)?;
    let json = serde_json::to_string_pretty(&out).map_err(|e| fail(4, e.to_string()))?;
    std::fs::write(&p.out, json + "\n").map_err(io_error)?;
    for r in &out.reports {
        eprintln!(
            "{}: psi = {:.6} (se {:.6}), 95% CI [{:.6}, {:.6}]",
            r.intervention,
            r.psi_natural,
            r.se_natural,
            r.ci_natural_lo,
            r.ci_natural_hi
        );
    }
    eprintln!("report written to {}", p.out.display());
    Ok(())
}

fn cmd_benchmark(args: RunArgs) -> Result<(), Failure> {
    let p = prepare(&args, "benchmark.csv")?;
    let out = run_benchmark(&p.cfg, p.seed, &p.base_dir).map_err(estimation_error)?;
    write_benchmark_csv(&out, &p.out).map_err(io_error)?;
    eprintln!(
        "psi0 = {:.6} (mc se {:.2e}); bias = {:+.6}, coverage = {:.3} over {} replicates",
        out.psi0,
        out.psi0_mc_se,
        out.bias,
        out.coverage,
        out.rows.len()
    );
    eprintln!("summary written to {}", p.out.display());
    Ok(())
}

fn write_benchmark_csv(out: &BenchmarkOutput, path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "replicate,psi_hat,se,ci_lo,ci_hi,covered,epsilon,truncation_count,psi0,bias,coverage"
    )?;
    for r in &out.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},,",
            r.replicate, r.psi_hat, r.se, r.ci_lo, r.ci_hi, r.covered, r.epsilon,
            r.truncation_count, out.psi0
        )?;
    }
    writeln!(
        f,
        "aggregate,{},{},,,,,,{},{},{}",
        out.mean_psi_hat, out.mean_se, out.psi0, out.bias, out.coverage
    )?;
    Ok(())
}

fn cmd_report(input: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(input).map_err(io_error)?;
    let out: RunOutput = serde_json::from_str(&text).map_err(|e| fail(2, format!("report: {e}")))?;

    println!(
        "{:<16} {:>10} {:>10} {:>22} {:>8} {:>6} {:>6}",
        "intervention", "psi", "se", "95% CI", "epsilon", "trunc", "flags"
    );
    for r in &out.reports {
        println!(
            "{:<16} {:>10.6} {:>10.6} [{:>9.6}, {:>9.6}] {:>8.4} {:>6} {:>6}",
            r.intervention,
            r.psi_natural,
            r.se_natural,
            r.ci_natural_lo,
            r.ci_natural_hi,
            r.epsilon,
            r.diagnostics.truncation_count,
            r.diagnostics.positivity.n_flagged
        );
    }
    if !out.contrasts.is_empty() {
        println!();
        println!(
            "{:<28} {:>10} {:>10} {:>22}",
            "contrast", "delta", "se", "95% CI"
        );
        for c in &out.contrasts {
            println!(
                "{:<28} {:>10.6} {:>10.6} [{:>9.6}, {:>9.6}]",
                format!("{} - {}", c.minuend, c.subtrahend),
                c.delta_natural,
                c.se_natural,
                c.ci_natural_lo,
                c.ci_natural_hi
            );
        }
    }
    for r in &out.reports {
        for w in &r.diagnostics.warnings {
            println!("warning ({}): {}", r.intervention, w);
        }
    }
    Ok(())
}

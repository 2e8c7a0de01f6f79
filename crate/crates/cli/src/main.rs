use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scalegp::data::generate;
use scalegp_cli::bench::{bench, bench_table};
use scalegp_cli::config::{ConfigError, RunConfig};
use scalegp_cli::pipeline::{run, summary_text, write_outputs};
use scalegp_cli::validate::{run_suite, table};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_WINDOWS_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "scalegp", version, about = "Distributed GP forecasting of hourly traffic series")]
struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `run.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `section.key=value` override; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic series to `<out>/series.csv`.
    Simulate,
    /// Rolling-window train, predict and evaluate.
    Run,
    /// Training-time scaling over `bench.workers`.
    Bench,
    /// Run the self-check suite.
    Validate {
        #[arg(long, hide = true, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    if let Command::Validate { tolerance_scale } = cli.command {
        let checks = run_suite(tolerance_scale);
        print!("{}", table(&checks));
        return if checks.iter().all(|c| c.passed()) {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(EXIT_FAILURE)
        };
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Simulate => simulate(&cfg),
        Command::Run => run_cmd(&cfg),
        Command::Bench => bench_cmd(&cfg),
        Command::Validate { .. } => unreachable!(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn simulate(cfg: &RunConfig) -> CmdResult {
    let data = generate(&cfg.synth)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("series.csv");
    data.save_csv(&path)?;
    println!("wrote {} points to {}", data.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_cmd(cfg: &RunConfig) -> CmdResult {
    let out = run(cfg)?;
    write_outputs(&out, &cfg.out_dir)?;
    print!("{}", summary_text(&out.report));
    if out.report.aggregate.windows_ok == 0 {
        eprintln!("every window failed");
        return Ok(ExitCode::from(EXIT_ALL_WINDOWS_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_cmd(cfg: &RunConfig) -> CmdResult {
    let report = bench(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("bench.json"), serde_json::to_string_pretty(&report)?)?;
    print!("{}", bench_table(&report));
    Ok(ExitCode::SUCCESS)
}

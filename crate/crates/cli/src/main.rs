use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rllc::equiv::{verify, Suite};
use rllc::exec::Execution;
use rllc::harness::{self, ConfigFile, HarnessError, SuiteOptions};
use rllc::propagators::Propagator;

const USAGE: u8 = 2;
const FAILURE: u8 = 1;

/// Run experiments, grids and property suites for linear-memory optimizers.
#[derive(Parser)]
#[command(name = "rllc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment (and grid cell) of a config, one CSV per seed.
    Run {
        config: PathBuf,
        /// Output directory; defaults to $RLLC_OUT/<config output>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config as a suite and write summary.csv and best.csv.
    Suite {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (1 = sequential).
        #[arg(long)]
        threads: Option<usize>,
        /// Skip the per-run CSV logs.
        #[arg(long)]
        no_runs: bool,
    },
    /// Run a verification suite.
    Verify {
        #[arg(default_value = "all")]
        suite: Suite,
        #[arg(long)]
        sequential: bool,
    },
    /// Print the abstract rule of one memory unit as CSV.
    AbstractRule {
        expr: String,
        #[arg(long, default_value_t = 0)]
        unit: usize,
        #[arg(long, default_value_t = 20)]
        len: usize,
    },
    /// Extract the learning-law trajectory of a run log.
    LawDump {
        record: PathBuf,
        /// Reference decay for the Nesterov-phase flag; read from the run
        /// sidecar when omitted.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Suite {
            config,
            out,
            threads,
            no_runs,
        } => suite(&config, out, threads, !no_runs),
        Command::Verify { suite, sequential } => {
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let report = verify(suite, exec);
            println!("{report}");
            return if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(FAILURE)
            };
        }
        Command::AbstractRule { expr, unit, len } => abstract_rule(&expr, unit, len),
        Command::LawDump { record, beta, out } => law_dump(&record, beta, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

type CliResult = Result<(), (u8, String)>;

fn classify(e: HarnessError) -> (u8, String) {
    let code = match e {
        HarnessError::Config(_) | HarnessError::NotLawBased(_) | HarnessError::Propagator(_) => USAGE,
        _ => FAILURE,
    };
    (code, e.to_string())
}

fn load(path: &Path) -> Result<ConfigFile, (u8, String)> {
    ConfigFile::load(path).map_err(|e| match e {
        HarnessError::Io { .. } => (USAGE, e.to_string()),
        e => classify(e),
    })
}

fn default_out(cfg: &ConfigFile, fallback: &str) -> PathBuf {
    let sub = cfg
        .output
        .clone()
        .or_else(|| cfg.name.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback));
    harness::output_root().join(sub)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn run(config: &Path, out: Option<PathBuf>) -> CliResult {
    let cfg = load(config)?;
    let base = out.unwrap_or_else(|| default_out(&cfg, "runs"));
    for (_, exp) in cfg.cells().map_err(classify)? {
        let dir = match &exp.output {
            Some(o) => harness::output_root().join(o),
            None => base.clone(),
        };
        let task = exp.task.build(exp.execution).map_err(classify)?;
        for &seed in &exp.seeds {
            let rec = harness::run_experiment(&exp, task.as_ref(), seed).map_err(classify)?;
            let path = harness::write_run(&rec, &dir).map_err(classify)?;
            let s = &rec.summary;
            let status = match (&s.failure, s.failure_step) {
                (Some(f), Some(step)) => format!("diverged at step {step}: {f}"),
                _ => format!(
                    "train {} val {} metric {}",
                    fmt_opt(Some(s.final_train_loss)),
                    fmt_opt(s.final_val_loss),
                    fmt_opt(s.final_metric)
                ),
            };
            println!("{} seed {seed}: {status} -> {}", exp.name, path.display());
        }
    }
    Ok(())
}

fn suite(config: &Path, out: Option<PathBuf>, threads: Option<usize>, write_runs: bool) -> CliResult {
    let cfg = load(config)?;
    let opts = SuiteOptions {
        out_dir: out.unwrap_or_else(|| default_out(&cfg, "suite")),
        threads,
        write_runs,
    };
    let outcome = harness::run_suite(&cfg, &opts).map_err(classify)?;
    for group in outcome.groups() {
        match outcome.best(&group) {
            Some(b) => println!(
                "{group}: best {} mean final train loss {}",
                b.cell,
                fmt_opt(b.final_train_loss.map(|s| s.mean))
            ),
            None => println!("{group}: no cell finished"),
        }
    }
    let failed = outcome.cells.iter().filter(|c| !c.clean()).count();
    println!(
        "{} cells, {failed} with failures; summary {}",
        outcome.cells.len(),
        outcome.summary_path.display()
    );
    Ok(())
}

fn abstract_rule(expr: &str, unit: usize, len: usize) -> CliResult {
    let p = Propagator::parse(expr).map_err(|e| (USAGE, e.to_string()))?;
    let rule = p.abstract_rule(unit, len).map_err(|e| (USAGE, e.to_string()))?;
    println!("i,coefficient");
    for (i, c) in rule.coefficients.iter().enumerate() {
        println!("{i},{c}");
    }
    Ok(())
}

fn law_dump(record: &Path, beta: Option<f64>, out: Option<PathBuf>) -> CliResult {
    let rec = harness::read_run(record).map_err(|e| match e {
        HarnessError::Io { .. } | HarnessError::Csv(_) => (USAGE, e.to_string()),
        e => classify(e),
    })?;
    let rows = harness::dump_law_trajectory(&rec, beta).map_err(classify)?;
    let out = out.unwrap_or_else(|| record.with_extension("law.csv"));
    harness::write_law_dump(&rows, &out).map_err(classify)?;
    let flagged = rows.iter().filter(|r| r.nag_phase).count();
    println!("{} rows, {flagged} flagged -> {}", rows.len(), out.display());
    Ok(())
}

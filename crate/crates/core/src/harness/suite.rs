use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::run::run_experiment;
use super::{create_dir, fmt_f64, write_run, ConfigFile, ExperimentConfig, HarnessError, Result, RunRecord};
use crate::exec::{self, Execution};
use crate::tasks::Task;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Directory receiving `summary.csv`, `best.csv` and the run logs.
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses the default pool, `Some(1)` runs
    /// sequentially.
    pub threads: Option<usize>,
    pub write_runs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        Some(Stats {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CellSummary {
    pub group: String,
    pub cell: String,
    pub task: String,
    pub optimizer: String,
    pub lr: f64,
    pub law_lr: Option<f64>,
    pub seeds: usize,
    pub diverged: usize,
    /// First failure message, including setup errors.
    pub error: Option<String>,
    /// Over seeds that finished; `None` when none did.
    pub final_train_loss: Option<Stats>,
    pub final_val_loss: Option<Stats>,
    pub final_metric: Option<Stats>,
    pub min_alignment: Option<f64>,
    pub records: Vec<RunRecord>,
}

impl CellSummary {
    /// Usable for best-cell selection: every seed finished.
    pub fn clean(&self) -> bool {
        self.error.is_none() && self.diverged == 0 && self.final_train_loss.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub cells: Vec<CellSummary>,
    pub summary_path: PathBuf,
    pub best_path: PathBuf,
}

impl SuiteOutcome {
    /// Best clean cell of `group`: lowest mean final train loss, earliest on
    /// ties.
    pub fn best(&self, group: &str) -> Option<&CellSummary> {
        best_of(self.cells.iter().filter(|c| c.group == group))
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.group) {
                out.push(c.group.clone());
            }
        }
        out
    }
}

fn best_of<'a>(cells: impl Iterator<Item = &'a CellSummary>) -> Option<&'a CellSummary> {
    cells
        .filter(|c| c.clean())
        .fold(None, |best: Option<&CellSummary>, c| match best {
            Some(b) if b.final_train_loss.unwrap().mean <= c.final_train_loss.unwrap().mean => Some(b),
            _ => Some(c),
        })
}

struct Job {
    cell: usize,
    seed: u64,
}

/// Runs every experiment and grid cell of `config` for all its seeds.
///
/// Runs fan out over a thread pool with each run single-threaded inside, and
/// results are collected in config order, so `summary.csv` and `best.csv`
/// are byte-identical across repetitions and thread counts. A failing cell is
/// recorded in the summary and does not stop the others.
pub fn run_suite(config: &ConfigFile, opts: &SuiteOptions) -> Result<SuiteOutcome> {
    let cells = config.cells()?;
    let tasks: Vec<std::result::Result<Arc<dyn Task>, String>> = cells
        .iter()
        .map(|(_, c)| c.task.build(Execution::Sequential).map_err(|e| e.to_string()))
        .collect();
    let jobs: Vec<Job> = cells
        .iter()
        .enumerate()
        .filter(|(i, _)| tasks[*i].is_ok())
        .flat_map(|(i, (_, c))| c.seeds.iter().map(move |&seed| Job { cell: i, seed }))
        .collect();

    let run = |job: &Job| -> std::result::Result<RunRecord, String> {
        let (_, cfg) = &cells[job.cell];
        let task = tasks[job.cell].as_ref().expect("jobs only reference built tasks");
        run_experiment(cfg, task.as_ref(), job.seed).map_err(|e| e.to_string())
    };
    let results = run_pool(opts.threads, &jobs, run)?;

    create_dir(&opts.out_dir)?;
    let runs_dir = opts.out_dir.join("runs");
    let mut per_cell: Vec<Vec<std::result::Result<RunRecord, String>>> = cells.iter().map(|_| Vec::new()).collect();
    for (job, res) in jobs.iter().zip(results) {
        if opts.write_runs {
            if let Ok(rec) = &res {
                write_run(rec, &runs_dir)?;
            }
        }
        per_cell[job.cell].push(res);
    }

    let summaries: Vec<CellSummary> = cells
        .iter()
        .zip(per_cell)
        .zip(&tasks)
        .map(|(((group, cfg), results), task)| summarize(group, cfg, task, results))
        .collect();

    let summary_path = opts.out_dir.join("summary.csv");
    write_summary(&summaries, &summary_path)?;
    let best_path = opts.out_dir.join("best.csv");
    write_best(&summaries, &best_path)?;
    Ok(SuiteOutcome {
        cells: summaries,
        summary_path,
        best_path,
    })
}

fn run_pool<F>(threads: Option<usize>, jobs: &[Job], f: F) -> Result<Vec<std::result::Result<RunRecord, String>>>
where
    F: Fn(&Job) -> std::result::Result<RunRecord, String> + Sync + Send,
{
    if threads == Some(1) {
        return Ok(exec::map(Execution::Sequential, jobs, f));
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
        return Ok(pool.install(|| exec::map(Execution::Parallel, jobs, f)));
    }
    Ok(exec::map(Execution::Parallel, jobs, f))
}

fn summarize(
    group: &str,
    cfg: &ExperimentConfig,
    task: &std::result::Result<Arc<dyn Task>, String>,
    results: Vec<std::result::Result<RunRecord, String>>,
) -> CellSummary {
    let mut error = task.as_ref().err().map(|e| format!("setup: {e}"));
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                error.get_or_insert(e);
            }
        }
    }
    let diverged = records.iter().filter(|r| r.summary.diverged()).count();
    if error.is_none() {
        error = records.iter().find_map(|r| {
            r.summary
                .failure
                .as_ref()
                .map(|f| format!("seed {} step {}: {f}", r.seed, r.summary.failure_step.unwrap_or(0)))
        });
    }
    let finished: Vec<&RunRecord> = records.iter().filter(|r| !r.summary.diverged()).collect();
    let train: Vec<f64> = finished.iter().map(|r| r.summary.final_train_loss).collect();
    let val: Vec<f64> = finished.iter().filter_map(|r| r.summary.final_val_loss).collect();
    let metric: Vec<f64> = finished.iter().filter_map(|r| r.summary.final_metric).collect();
    let min_alignment = records
        .iter()
        .filter_map(|r| r.summary.min_alignment)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.min(a))));
    CellSummary {
        group: group.to_string(),
        cell: cfg.name.clone(),
        task: task.as_ref().map_or_else(|_| format!("{:?}", cfg.task), |t| t.name()),
        optimizer: cfg.optimizer.family(),
        lr: cfg.optimizer.lr(),
        law_lr: cfg.optimizer.law_lr(),
        seeds: cfg.seeds.len(),
        diverged,
        error,
        final_train_loss: Stats::of(&train),
        final_val_loss: Stats::of(&val),
        final_metric: Stats::of(&metric),
        min_alignment,
        records,
    }
}

fn stats_cells(s: Option<Stats>) -> [String; 3] {
    match s {
        Some(s) => [fmt_f64(s.mean), fmt_f64(s.min), fmt_f64(s.max)],
        None => Default::default(),
    }
}

fn write_summary(cells: &[CellSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "group",
        "cell",
        "task",
        "optimizer",
        "lr",
        "law_lr",
        "seeds",
        "diverged",
        "final_train_loss_mean",
        "final_train_loss_min",
        "final_train_loss_max",
        "final_val_loss_mean",
        "final_val_loss_min",
        "final_val_loss_max",
        "final_metric_mean",
        "final_metric_min",
        "final_metric_max",
        "error",
    ])?;
    for c in cells {
        let mut line = vec![
            c.group.clone(),
            c.cell.clone(),
            c.task.clone(),
            c.optimizer.clone(),
            fmt_f64(c.lr),
            c.law_lr.map(fmt_f64).unwrap_or_default(),
            c.seeds.to_string(),
            c.diverged.to_string(),
        ];
        line.extend(stats_cells(c.final_train_loss));
        line.extend(stats_cells(c.final_val_loss));
        line.extend(stats_cells(c.final_metric));
        line.push(c.error.clone().unwrap_or_default());
        w.write_record(&line)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// One row per (group, task): the best clean cell and its final train loss.
fn write_best(cells: &[CellSummary], path: &Path) -> Result<()> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.group.as_str(), c.task.as_str())) {
            keys.push((&c.group, &c.task));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "optimizer",
        "task",
        "best_cell",
        "lr",
        "law_lr",
        "final_train_loss_mean",
        "final_train_loss_min",
        "final_train_loss_max",
    ])?;
    for (group, task) in keys {
        let best = best_of(cells.iter().filter(|c| c.group == group && c.task == task));
        let mut line = vec![group.to_string(), task.to_string()];
        match best {
            Some(b) => {
                line.push(b.cell.clone());
                line.push(fmt_f64(b.lr));
                line.push(b.law_lr.map(fmt_f64).unwrap_or_default());
                line.extend(stats_cells(b.final_train_loss));
            }
            None => line.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&line)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

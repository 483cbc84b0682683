use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{create_dir, fmt_f64, sanitize, ExperimentConfig, HarnessError, Result};
use crate::equiv::RANK_PROXY_THRESHOLD;
use crate::tasks::{batch_seed, Split, Task};

/// One logged point, taken after `step` parameter updates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub metric: Option<f64>,
    pub wall_ms: f64,
    pub law: Vec<f64>,
    pub mnorm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps_completed: usize,
    /// Train loss at the last logged row; NaN when nothing was logged.
    #[serde(with = "nan_as_null")]
    pub final_train_loss: f64,
    #[serde(with = "nan_as_null")]
    pub best_train_loss: f64,
    pub final_val_loss: Option<f64>,
    pub final_metric: Option<f64>,
    /// Why the run stopped early, if it did.
    pub failure: Option<String>,
    /// Update index (1-based) at which the failure was detected.
    pub failure_step: Option<usize>,
    /// Smallest `<p, g>` over learning-law corrections made with a
    /// full-rank memory.
    pub min_alignment: Option<f64>,
    pub full_rank_corrections: usize,
}

/// JSON has no NaN; store it as null.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*x)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl RunSummary {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: u64,
    pub seed: u64,
    pub task: String,
    pub optimizer: String,
    /// Number of learning-law coefficients; zero for baselines.
    pub law_units: usize,
    /// `beta` when the optimizer runs over `M(beta) ⊕ M(0)`.
    pub momentum_beta: Option<f64>,
    pub summary: RunSummary,
    #[serde(skip)]
    pub rows: Vec<LogRow>,
}

/// Runs one seed of `cfg` on an already-built task.
///
/// Numerical failures (non-finite gradient, loss or parameters, or a
/// breakdown inside the optimizer) end the run and are recorded in the
/// summary. Only an unbuildable optimizer is an error.
pub fn run_experiment(cfg: &ExperimentConfig, task: &dyn Task, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let mut opt = cfg.optimizer.build(task.dim())?;
    let law_units = opt.probe().map_or(0, |p| p.law.len());
    let mut params = task.initial_params(seed);
    let has_val = task.has_split(Split::Val);
    let start = Instant::now();

    let mut rows = Vec::new();
    let mut failure = None;
    let mut min_alignment: Option<f64> = None;
    let mut full_rank = 0;
    let mut completed = 0;

    for t in 0..cfg.steps {
        let step = t + 1;
        let grad = task.gradient(&params, batch_seed(seed, t));
        let delta = match opt.step(&grad) {
            Ok(d) => d,
            Err(e) => {
                failure = Some((step, format!("optimizer: {e}")));
                break;
            }
        };
        if let Some(c) = opt.last_correction() {
            if !c.skipped && c.rank_proxy >= RANK_PROXY_THRESHOLD {
                full_rank += 1;
                min_alignment = Some(min_alignment.map_or(c.alignment, |m| m.min(c.alignment)));
            }
        }
        for (p, d) in params.iter_mut().zip(&delta) {
            *p += d;
        }
        completed = step;
        if params.iter().any(|p| !p.is_finite()) {
            failure = Some((step, "non-finite parameters".to_string()));
            break;
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            let probe = opt.probe();
            let metric_split = if has_val { Split::Val } else { Split::Train };
            let row = LogRow {
                step,
                train_loss: task.loss(&params, Split::Train),
                val_loss: has_val.then(|| task.loss(&params, Split::Val)),
                metric: task.metric(&params, metric_split),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                law: probe.as_ref().map_or_else(Vec::new, |p| p.law.clone()),
                mnorm: probe.map_or_else(Vec::new, |p| p.column_norms),
            };
            let finite = row.train_loss.is_finite();
            rows.push(row);
            if !finite {
                failure = Some((step, "non-finite train loss".to_string()));
                break;
            }
        }
    }

    let last = rows.last();
    let summary = RunSummary {
        steps_completed: completed,
        final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
        best_train_loss: rows.iter().map(|r| r.train_loss).fold(f64::NAN, f64::min),
        final_val_loss: last.and_then(|r| r.val_loss),
        final_metric: last.and_then(|r| r.metric),
        failure_step: failure.as_ref().map(|f| f.0),
        failure: failure.map(|f| f.1),
        min_alignment,
        full_rank_corrections: full_rank,
    };
    Ok(RunRecord {
        experiment: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed,
        task: task.name(),
        optimizer: opt.label(),
        law_units,
        momentum_beta: cfg.optimizer.momentum_sgd_beta(),
        summary,
        rows,
    })
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Path of the CSV log for one run inside `dir`.
pub(crate) fn run_path(dir: &Path, experiment: &str, seed: u64) -> PathBuf {
    dir.join(sanitize(experiment)).join(format!("seed-{seed}.csv"))
}

/// Writes the CSV log and a JSON sidecar with the summary under `dir`.
/// Returns the CSV path.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    let path = run_path(dir, &record.experiment, record.seed);
    create_dir(path.parent().expect("run path has a parent"))?;
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = ["step", "train_loss", "val_loss", "metric", "wall_ms"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=record.law_units).map(|i| format!("L{i}")));
    header.extend((1..=record.law_units).map(|i| format!("mnorm{i}")));
    w.write_record(&header)?;
    for r in &record.rows {
        let mut line = vec![
            r.step.to_string(),
            fmt_f64(r.train_loss),
            opt_cell(r.val_loss),
            opt_cell(r.metric),
            format!("{:.3}", r.wall_ms),
        ];
        line.extend(r.law.iter().copied().map(fmt_f64));
        line.extend(r.mnorm.iter().copied().map(fmt_f64));
        w.write_record(&line)?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    let meta = path.with_extension("json");
    let json = serde_json::to_string_pretty(record)?;
    std::fs::write(&meta, json).map_err(|e| HarnessError::io(&meta, e))?;
    Ok(path)
}

/// Reads a run log written by [`write_run`]. The JSON sidecar is optional;
/// without it only the rows and the law width are recovered.
pub fn read_run(path: &Path) -> Result<RunRecord> {
    let bad = |reason: String| HarnessError::BadLog {
        path: path.display().to_string(),
        reason,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let fixed = ["step", "train_loss", "val_loss", "metric", "wall_ms"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(a, b)| a != b) {
        return Err(bad(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let extra = header.len() - fixed.len();
    if !extra.is_multiple_of(2) {
        return Err(bad("law and memory-norm columns do not pair up".into()));
    }
    let k = extra / 2;
    let num = |s: &str, what: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad {what} value '{s}'"))) };
    let opt_num = |s: &str, what: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, what).map(Some)
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let step = rec[0].parse().map_err(|_| bad(format!("bad step '{}'", &rec[0])))?;
        let law = (0..k).map(|i| num(&rec[5 + i], "law")).collect::<Result<Vec<_>>>()?;
        let mnorm = (0..k)
            .map(|i| num(&rec[5 + k + i], "mnorm"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(LogRow {
            step,
            train_loss: num(&rec[1], "train_loss")?,
            val_loss: opt_num(&rec[2], "val_loss")?,
            metric: opt_num(&rec[3], "metric")?,
            wall_ms: num(&rec[4], "wall_ms")?,
            law,
            mnorm,
        });
    }
    let meta = path.with_extension("json");
    let mut record = if meta.exists() {
        let text = std::fs::read_to_string(&meta).map_err(|e| HarnessError::io(&meta, e))?;
        serde_json::from_str::<RunRecord>(&text)?
    } else {
        RunRecord {
            experiment: path.display().to_string(),
            config_hash: 0,
            seed: 0,
            task: String::new(),
            optimizer: String::new(),
            law_units: k,
            momentum_beta: None,
            summary: RunSummary {
                steps_completed: rows.last().map_or(0, |r| r.step),
                final_train_loss: rows.last().map_or(f64::NAN, |r| r.train_loss),
                best_train_loss: rows.iter().map(|r| r.train_loss).fold(f64::NAN, f64::min),
                final_val_loss: rows.last().and_then(|r| r.val_loss),
                final_metric: rows.last().and_then(|r| r.metric),
                failure: None,
                failure_step: None,
                min_alignment: None,
                full_rank_corrections: 0,
            },
            rows: Vec::new(),
        }
    };
    if record.law_units != k {
        return Err(bad(format!(
            "sidecar declares {} law units, log has {k}",
            record.law_units
        )));
    }
    record.rows = rows;
    Ok(record)
}

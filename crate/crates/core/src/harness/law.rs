use std::path::Path;

use super::{fmt_f64, HarnessError, Result, RunRecord};

/// Relative half-width of the band around `beta` in which `L1 / L2` counts
/// as the Nesterov ratio.
pub const NAG_BAND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LawRow {
    pub step: usize,
    pub law: Vec<f64>,
    /// `L1 / L2`, when a reference `beta` is known and the law has two or
    /// more coefficients.
    pub ratio: Option<f64>,
    pub nag_phase: bool,
}

/// Extracts the learning-law trajectory of a run.
///
/// With `beta` given (or recorded for an `M(beta) ⊕ M(0)` run), a row is in
/// the Nesterov phase when `|L1/L2 - beta| <= 0.1 beta`, or when the ratio
/// crossed `beta` since the previous row without `L2` changing sign.
pub fn dump_law_trajectory(record: &RunRecord, beta: Option<f64>) -> Result<Vec<LawRow>> {
    if record.law_units == 0 {
        return Err(HarnessError::NotLawBased(record.experiment.clone()));
    }
    let beta = beta.or(record.momentum_beta).filter(|_| record.law_units >= 2);
    let mut out: Vec<LawRow> = Vec::with_capacity(record.rows.len());
    let mut prev: Option<(f64, f64)> = None;
    for r in &record.rows {
        let (ratio, nag_phase) = match beta {
            Some(b) => {
                let ratio = r.law[0] / r.law[1];
                let near = (ratio - b).abs() <= NAG_BAND * b.abs();
                let crossed = prev.is_some_and(|(pr, pl2)| {
                    pl2.signum() == r.law[1].signum() && (pr - b).signum() != (ratio - b).signum()
                });
                prev = ratio.is_finite().then_some((ratio, r.law[1]));
                (Some(ratio), ratio.is_finite() && (near || crossed))
            }
            None => (None, false),
        };
        out.push(LawRow {
            step: r.step,
            law: r.law.clone(),
            ratio,
            nag_phase,
        });
    }
    Ok(out)
}

/// Writes `step, L1..Lk[, ratio, nag_phase]` as CSV.
pub fn write_law_dump(rows: &[LawRow], path: &Path) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.law.len());
    let with_ratio = rows.first().is_some_and(|r| r.ratio.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string()];
    header.extend((1..=k).map(|i| format!("L{i}")));
    if with_ratio {
        header.push("ratio".into());
        header.push("nag_phase".into());
    }
    w.write_record(&header)?;
    for r in rows {
        let mut line = vec![r.step.to_string()];
        line.extend(r.law.iter().copied().map(fmt_f64));
        if with_ratio {
            line.push(r.ratio.map(fmt_f64).unwrap_or_default());
            line.push(u8::from(r.nag_phase).to_string());
        }
        w.write_record(&line)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{LogRow, RunSummary};

    fn record(laws: &[[f64; 2]], beta: Option<f64>) -> RunRecord {
        RunRecord {
            experiment: "x".into(),
            config_hash: 0,
            seed: 0,
            task: String::new(),
            optimizer: String::new(),
            law_units: 2,
            momentum_beta: beta,
            summary: RunSummary {
                steps_completed: laws.len(),
                final_train_loss: 0.0,
                best_train_loss: 0.0,
                final_val_loss: None,
                final_metric: None,
                failure: None,
                failure_step: None,
                min_alignment: None,
                full_rank_corrections: 0,
            },
            rows: laws
                .iter()
                .enumerate()
                .map(|(i, l)| LogRow {
                    step: i + 1,
                    train_loss: 0.0,
                    val_loss: None,
                    metric: None,
                    wall_ms: 0.0,
                    law: l.to_vec(),
                    mnorm: vec![1.0, 1.0],
                })
                .collect(),
        }
    }

    #[test]
    fn flags_band_and_crossing() {
        // ratios 2, 0.95, 0.5, 0.3, 1.5
        let rec = record(
            &[[2.0, 1.0], [0.95, 1.0], [0.5, 1.0], [0.3, 1.0], [3.0, 2.0]],
            Some(0.9),
        );
        let rows = dump_law_trajectory(&rec, None).unwrap();
        let flags: Vec<bool> = rows.iter().map(|r| r.nag_phase).collect();
        assert_eq!(flags, [false, true, true, false, true]);
    }

    #[test]
    fn sign_flip_of_l2_is_not_a_crossing() {
        let rec = record(&[[2.0, 1.0], [2.0, -1.0]], Some(0.9));
        let rows = dump_law_trajectory(&rec, None).unwrap();
        assert!(!rows[1].nag_phase);
    }

    #[test]
    fn no_beta_no_flag() {
        let rec = record(&[[0.9, 1.0]], None);
        let rows = dump_law_trajectory(&rec, None).unwrap();
        assert_eq!(rows[0].ratio, None);
        assert!(!rows[0].nag_phase);
        let rows = dump_law_trajectory(&rec, Some(0.9)).unwrap();
        assert!(rows[0].nag_phase);
    }

    #[test]
    fn baseline_record_is_rejected() {
        let mut rec = record(&[], None);
        rec.law_units = 0;
        assert!(matches!(
            dump_law_trajectory(&rec, None),
            Err(HarnessError::NotLawBased(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("law.csv");
        let rows = dump_law_trajectory(&record(&[[0.9, 1.0]], Some(0.9)), None).unwrap();
        write_law_dump(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,L1,L2,ratio,nag_phase\n1,0.9,1,0.9,1\n");
    }
}

//! Plot-ready exports of an iteration report series.

use std::fmt::Write as _;
use std::path::Path;

use evocot::{Error, IterationReport};

pub const METRICS_HEADER: &str = "iteration,selected_hard_count,stage1_generated,stage1_verified,stage1_yield,\
curriculum_samples,train_steps_executed,final_rollout_correct,eval_pass_at_1,wall_time_seconds";

pub fn metrics_csv(reports: &[IterationReport]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in reports {
        let last = r.rollout_correct_curve.last().map_or(0, |p| p.1);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.selected_hard_count,
            r.stage1_generated,
            r.stage1_verified,
            r.stage1_yield,
            r.curriculum_samples,
            r.train_steps_executed,
            last,
            r.eval_pass_at_1,
            r.wall_time_seconds
        )
        .unwrap();
    }
    out
}

/// One row per training step across all iterations.
pub fn curves_csv(reports: &[IterationReport]) -> String {
    let mut out = String::from("iteration,step,correct_count\n");
    for r in reports {
        for (step, correct) in &r.rollout_correct_curve {
            writeln!(out, "{},{},{}", r.iteration, step, correct).unwrap();
        }
    }
    out
}

pub fn write_csvs(dir: &Path, reports: &[IterationReport]) -> Result<(), Error> {
    for (name, body) in [("metrics.csv", metrics_csv(reports)), ("curves.csv", curves_csv(reports))] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Fixed-width summary, one row per iteration with the change in pass@1.
pub fn table(reports: &[IterationReport]) -> String {
    let mut out = format!(
        "{:>4}  {:>6}  {:>9}  {:>7}  {:>7}  {:>8}  {:>7}\n",
        "iter", "hard", "verified", "yield", "steps", "pass@1", "delta"
    );
    let mut prev: Option<f64> = None;
    for r in reports {
        let delta = prev.map_or_else(|| "-".to_string(), |p| format!("{:+.2}", r.eval_pass_at_1 - p));
        writeln!(
            out,
            "{:>4}  {:>6}  {:>9}  {:>7.3}  {:>7}  {:>8.2}  {:>7}",
            r.iteration,
            r.selected_hard_count,
            r.stage1_verified,
            r.stage1_yield,
            r.train_steps_executed,
            r.eval_pass_at_1,
            delta
        )
        .unwrap();
        prev = Some(r.eval_pass_at_1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(t: u32, pass: f64) -> IterationReport {
        IterationReport {
            iteration: t,
            selected_hard_count: 10,
            stage1_generated: 80,
            stage1_verified: 40,
            stage1_yield: 0.5,
            curriculum_samples: 30,
            train_steps_executed: 2,
            rollout_correct_curve: vec![(1, 3), (2, 5)],
            eval_pass_at_1: pass,
            wall_time_seconds: 0.0,
        }
    }

    #[test]
    fn csv_rows_match_reports() {
        let rs = [report(1, 20.0), report(2, 31.5)];
        let m = metrics_csv(&rs);
        assert_eq!(m.lines().count(), 3);
        assert_eq!(m.lines().nth(2).unwrap(), "2,10,80,40,0.5,30,2,5,31.5,0");
        assert_eq!(curves_csv(&rs).lines().count(), 5);
        let t = table(&rs);
        assert!(t.lines().nth(2).unwrap().ends_with("+11.50"));
    }
}

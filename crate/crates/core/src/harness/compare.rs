//! Cost-to-target comparison of finished runs.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::metrics::{read_metrics, MetricsRecord};
use crate::error::{Error, Result};

/// Metrics of one run.
#[derive(Clone, Debug)]
pub struct RunMetrics {
    pub label: String,
    pub records: Vec<MetricsRecord>,
}

impl RunMetrics {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            label: path.display().to_string(),
            records: read_metrics(path)?,
        })
    }

    pub fn method(&self) -> &str {
        &self.records[0].method
    }

    pub fn task(&self) -> &str {
        &self.records[0].task
    }

    pub fn best_loss(&self) -> f64 {
        self.records.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min)
    }

    pub fn best_acc(&self) -> f64 {
        self.records.iter().map(|r| r.acc).fold(f64::NEG_INFINITY, f64::max)
    }

    /// First evaluation point meeting `target`.
    pub fn reach(&self, target: Target) -> Option<Reach> {
        self.records
            .iter()
            .find(|r| target.met_by(r))
            .map(|r| Reach {
                round: r.round,
                fw_flops: r.fw_flops,
                total_flops: r.fw_flops + r.perturb_flops + r.update_flops,
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "metric", content = "value", rename_all = "snake_case")]
pub enum Target {
    /// Test loss at or below the value.
    Loss(f64),
    /// Test accuracy at or above the value.
    Accuracy(f64),
}

impl Target {
    fn met_by(self, r: &MetricsRecord) -> bool {
        match self {
            Target::Loss(v) => r.loss <= v,
            Target::Accuracy(v) => r.acc >= v,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Loss(v) => write!(f, "loss <= {v:.6}"),
            Target::Accuracy(v) => write!(f, "acc >= {v:.4}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Reach {
    pub round: u32,
    pub fw_flops: u64,
    pub total_flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub method: String,
    pub target: Target,
    pub reach: Option<Reach>,
    /// Rounds relative to the baseline; `None` unless both reached the target.
    pub round_ratio: Option<f64>,
    /// Forward FLOPs relative to the baseline.
    pub fw_flops_ratio: Option<f64>,
    /// Forward + perturbation + update FLOPs relative to the baseline.
    pub total_flops_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub task: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, label: &str, target: Target) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label && r.target == target)
    }
}

/// Targets used when none are given: the baseline's best loss and best accuracy.
pub fn default_targets(baseline: &RunMetrics) -> Vec<Target> {
    vec![Target::Loss(baseline.best_loss()), Target::Accuracy(baseline.best_acc())]
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        if a == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a as f64 / b as f64
    }
}

/// Rounds and FLOPs each run needs to reach each target, normalized by `runs[baseline]`.
pub fn compare(runs: &[RunMetrics], baseline: usize, targets: &[Target]) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::config("comparison needs at least two metrics files"));
    }
    let base = runs
        .get(baseline)
        .ok_or_else(|| Error::config(format!("baseline index {baseline} out of range")))?;
    for run in runs {
        if run.records.is_empty() {
            return Err(Error::config(format!("{} has no records", run.label)));
        }
        if run.task() != base.task() {
            return Err(Error::config(format!(
                "task fingerprints differ: {} has {}, {} has {}",
                run.label,
                run.task(),
                base.label,
                base.task()
            )));
        }
    }
    let targets = if targets.is_empty() {
        default_targets(base)
    } else {
        targets.to_vec()
    };
    let mut rows = Vec::new();
    for &target in &targets {
        let base_reach = base.reach(target);
        for run in runs {
            let reach = run.reach(target);
            let both = reach.zip(base_reach);
            rows.push(ComparisonRow {
                label: run.label.clone(),
                method: run.method().to_string(),
                target,
                reach,
                round_ratio: both.map(|(r, b)| ratio(r.round as u64, b.round as u64)),
                fw_flops_ratio: both.map(|(r, b)| ratio(r.fw_flops, b.fw_flops)),
                total_flops_ratio: both.map(|(r, b)| ratio(r.total_flops, b.total_flops)),
            });
        }
    }
    Ok(Comparison {
        baseline: base.label.clone(),
        task: base.task().to_string(),
        rows,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task {}  baseline {}", self.task, self.baseline)?;
        writeln!(
            f,
            "{:<20} {:<12} {:<18} {:>7} {:>14} {:>9} {:>9} {:>9}",
            "target", "method", "run", "round", "fw_flops", "x_rounds", "x_fw", "x_total"
        )?;
        let fmt_ratio = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.3}"));
        for row in &self.rows {
            let (round, flops) = match row.reach {
                Some(r) => (r.round.to_string(), r.fw_flops.to_string()),
                None => ("not reached".to_string(), "-".to_string()),
            };
            writeln!(
                f,
                "{:<20} {:<12} {:<18} {:>7} {:>14} {:>9} {:>9} {:>9}",
                row.target.to_string(),
                row.method,
                short_label(&row.label),
                round,
                flops,
                fmt_ratio(row.round_ratio),
                fmt_ratio(row.fw_flops_ratio),
                fmt_ratio(row.total_flops_ratio),
            )?;
        }
        Ok(())
    }
}

fn short_label(label: &str) -> String {
    let chars: Vec<char> = label.chars().collect();
    if chars.len() <= 18 {
        label.to_string()
    } else {
        format!("…{}", chars[chars.len() - 17..].iter().collect::<String>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostLedger;

    fn run(label: &str, task: &str, points: &[(u32, f64, f64, u64)]) -> RunMetrics {
        let records = points
            .iter()
            .map(|&(round, loss, acc, fw)| {
                let ledger = CostLedger {
                    fw_flops: fw,
                    ..CostLedger::default()
                };
                MetricsRecord::new("m", task, round, loss, acc, &ledger, 0.0)
            })
            .collect();
        RunMetrics {
            label: label.into(),
            records,
        }
    }

    #[test]
    fn identical_runs_have_unit_ratios() {
        let pts = [(0, 1.0, 0.3, 0), (10, 0.5, 0.8, 100), (20, 0.4, 0.9, 200)];
        let cmp = compare(&[run("a", "t", &pts), run("b", "t", &pts)], 0, &[]).unwrap();
        assert_eq!(cmp.rows.len(), 4);
        for row in &cmp.rows {
            assert_eq!(row.round_ratio, Some(1.0));
            assert_eq!(row.fw_flops_ratio, Some(1.0));
        }
    }

    #[test]
    fn unreached_target_is_reported_not_an_error() {
        let a = run("a", "t", &[(0, 1.0, 0.3, 0), (10, 0.2, 0.95, 100)]);
        let b = run("b", "t", &[(0, 1.0, 0.3, 0), (10, 0.6, 0.7, 50)]);
        let cmp = compare(&[a, b], 0, &[]).unwrap();
        let row = cmp.row("b", Target::Loss(0.2)).unwrap();
        assert!(row.reach.is_none() && row.fw_flops_ratio.is_none());
        assert!(cmp.to_string().contains("not reached"));
    }

    #[test]
    fn cheaper_run_has_ratio_below_one() {
        let a = run("a", "t", &[(0, 1.0, 0.3, 0), (10, 0.5, 0.9, 400)]);
        let b = run("b", "t", &[(0, 1.0, 0.3, 0), (10, 0.5, 0.9, 100)]);
        let cmp = compare(&[a, b], 0, &[Target::Loss(0.5)]).unwrap();
        assert_eq!(cmp.row("b", Target::Loss(0.5)).unwrap().fw_flops_ratio, Some(0.25));
    }

    #[test]
    fn mismatched_tasks_rejected() {
        let pts = [(0, 1.0, 0.3, 0)];
        assert!(compare(&[run("a", "t1", &pts), run("b", "t2", &pts)], 0, &[]).is_err());
        assert!(compare(&[run("a", "t1", &pts)], 0, &[]).is_err());
    }
}

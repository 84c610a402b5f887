use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{actor_failure_rate, pass_at_k, planner_steps, ArityError, FailureRates, MeanStd, PassAtK};
use crate::model::EpisodeResult;

/// Per-task tables list every task up to this many; beyond it only the
/// aggregate row is printed.
const MAX_TASK_ROWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: String,
    pub episodes: usize,
    pub pass_at_k: PassAtK,
    /// Decision steps per task, hitl steps included.
    pub planner_steps: BTreeMap<String, MeanStd>,
    pub failure_rates: FailureRates,
}

impl PolicyReport {
    pub fn from_results(policy: impl Into<String>, k: usize, results: &[EpisodeResult]) -> Result<Self, ArityError> {
        Ok(Self {
            policy: policy.into(),
            episodes: results.len(),
            pass_at_k: pass_at_k(results, k)?,
            planner_steps: planner_steps(results),
            failure_rates: actor_failure_rate(results),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub k: usize,
    pub policies: Vec<PolicyReport>,
    /// Task load and episode hard errors; the affected runs still count.
    #[serde(default)]
    pub errors: Vec<String>,
}

impl BenchReport {
    pub fn from_results(k: usize, groups: Vec<(String, Vec<EpisodeResult>)>) -> Result<Self, ArityError> {
        let policies = groups
            .iter()
            .map(|(policy, results)| PolicyReport::from_results(policy.clone(), k, results))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            k,
            policies,
            errors: Vec::new(),
        })
    }

    pub fn policy(&self, label: &str) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.policy == label)
    }

    pub fn mean(&self, label: &str) -> Option<f64> {
        self.policy(label).map(|p| p.pass_at_k.mean)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text tables: headline pass@k, per-task steps and failure rates,
    /// then per-actor counts.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let k = self.k;
        let _ = writeln!(out, "{:<14} {:>16} {:>10} {:>6}", "Policy", format!("pass@{k} (sd)"), "run sd", "tasks");
        for p in &self.policies {
            let _ = writeln!(
                out,
                "{:<14} {:>16} {:>10.3} {:>6}",
                p.policy,
                format!("{:.3} ({:.3})", p.pass_at_k.mean, p.pass_at_k.stddev),
                p.pass_at_k.run_stddev,
                p.pass_at_k.per_task.len()
            );
        }

        for p in &self.policies {
            let _ = writeln!(out, "\n[{}] per task", p.policy);
            let _ = writeln!(
                out,
                "{:<28} {:>8} {:>22} {:>24}",
                "Task",
                format!("pass@{k}"),
                "Decision steps (sd)",
                "Actor failure % (sd)"
            );
            let rows = |task: &str| {
                let steps = p
                    .planner_steps
                    .get(task)
                    .map(|m| format!("{:.2} ({:.2})", m.mean, m.stddev))
                    .unwrap_or_else(|| "-".into());
                let fail = p
                    .failure_rates
                    .per_task
                    .get(task)
                    .map(|m| format!("{:.2} ({:.2})", m.mean, m.stddev))
                    .unwrap_or_else(|| "-".into());
                (steps, fail)
            };
            if p.pass_at_k.per_task.len() <= MAX_TASK_ROWS {
                for (task, v) in &p.pass_at_k.per_task {
                    let (steps, fail) = rows(task);
                    let _ = writeln!(out, "{task:<28} {v:>8.3} {steps:>22} {fail:>24}");
                }
            }
            let steps: Vec<f64> = p.planner_steps.values().map(|m| m.mean).collect();
            let fails: Vec<f64> = p.failure_rates.per_task.values().map(|m| m.mean).collect();
            let fmt = |v: Option<MeanStd>| v.map(|m| format!("{:.2} ({:.2})", m.mean, m.stddev)).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<28} {:>8.3} {:>22} {:>24}",
                "(mean over tasks)",
                p.pass_at_k.mean,
                fmt(MeanStd::of(&steps)),
                fmt(MeanStd::of(&fails))
            );

            let _ = writeln!(out, "\n[{}] per actor", p.policy);
            let _ = writeln!(out, "{:<26} {:>9} {:>9} {:>9}", "Actor", "success", "failure", "fail %");
            for (actor, r) in &p.failure_rates.per_actor {
                let _ = writeln!(out, "{:<26} {:>9} {:>9} {:>9.2}", actor.as_str(), r.successes, r.failures, r.rate);
            }
        }
        if !self.errors.is_empty() {
            let _ = writeln!(out, "\nerrors:");
            for e in &self.errors {
                let _ = writeln!(out, "  {e}");
            }
        }
        out
    }
}

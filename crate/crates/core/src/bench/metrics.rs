use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{ActorName, EpisodeResult, Tally};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            stddev: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("task `{task}` has {runs} runs; pass@{k} needs exactly {k}")]
pub struct ArityError {
    pub task: String,
    pub runs: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: usize,
    /// successes / k per task.
    pub per_task: BTreeMap<String, f64>,
    pub mean: f64,
    /// Population standard deviation over task values.
    pub stddev: f64,
    /// Population standard deviation over individual run outcomes.
    pub run_stddev: f64,
}

fn by_task(results: &[EpisodeResult]) -> BTreeMap<&str, Vec<&EpisodeResult>> {
    let mut groups: BTreeMap<&str, Vec<&EpisodeResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.task.as_str()).or_default().push(r);
    }
    groups
}

pub fn pass_at_k(results: &[EpisodeResult], k: usize) -> Result<PassAtK, ArityError> {
    let mut per_task = BTreeMap::new();
    for (task, runs) in by_task(results) {
        if runs.len() != k {
            return Err(ArityError {
                task: task.to_owned(),
                runs: runs.len(),
                k,
            });
        }
        let successes = runs.iter().filter(|r| r.is_success()).count();
        per_task.insert(task.to_owned(), successes as f64 / k as f64);
    }
    let values: Vec<f64> = per_task.values().copied().collect();
    let over_tasks = MeanStd::of(&values).unwrap_or_default();
    let outcomes: Vec<f64> = results.iter().map(|r| if r.is_success() { 1.0 } else { 0.0 }).collect();
    let over_runs = MeanStd::of(&outcomes).unwrap_or_default();
    Ok(PassAtK {
        k,
        per_task,
        mean: over_tasks.mean,
        stddev: over_tasks.stddev,
        run_stddev: over_runs.stddev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorRate {
    pub successes: u64,
    pub failures: u64,
    /// Percent.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRates {
    /// Mean/stddev over runs of each run's failure percentage. Runs without
    /// actor invocations are left out; tasks with none at all are absent.
    pub per_task: BTreeMap<String, MeanStd>,
    /// Raw totals; actors never invoked are absent.
    pub per_actor: BTreeMap<ActorName, ActorRate>,
}

/// failures / (successes + failures) × 100, or `None` for 0/0.
pub fn rate(t: &Tally) -> Option<f64> {
    (t.total() > 0).then(|| t.failures as f64 / t.total() as f64 * 100.0)
}

pub fn actor_failure_rate(results: &[EpisodeResult]) -> FailureRates {
    let mut per_task = BTreeMap::new();
    for (task, runs) in by_task(results) {
        let rates: Vec<f64> = runs
            .iter()
            .filter_map(|r| {
                let mut total = Tally::default();
                r.per_actor.values().for_each(|t| total.add(t));
                rate(&total)
            })
            .collect();
        if let Some(ms) = MeanStd::of(&rates) {
            per_task.insert(task.to_owned(), ms);
        }
    }
    let mut totals: BTreeMap<ActorName, Tally> = BTreeMap::new();
    for r in results {
        for (actor, t) in &r.per_actor {
            totals.entry(actor.clone()).or_default().add(t);
        }
    }
    let per_actor = totals
        .into_iter()
        .filter_map(|(a, t)| {
            rate(&t).map(|rate| {
                (
                    a,
                    ActorRate {
                        successes: t.successes,
                        failures: t.failures,
                        rate,
                    },
                )
            })
        })
        .collect();
    FailureRates { per_task, per_actor }
}

/// Mean/stddev of total decision steps (tool steps included) per task.
pub fn planner_steps(results: &[EpisodeResult]) -> BTreeMap<String, MeanStd> {
    by_task(results)
        .into_iter()
        .filter_map(|(task, runs)| {
            let steps: Vec<f64> = runs.iter().map(|r| r.total_steps as f64).collect();
            MeanStd::of(&steps).map(|m| (task.to_owned(), m))
        })
        .collect()
}

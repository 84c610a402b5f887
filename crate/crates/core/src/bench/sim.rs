//! Stochastic stand-ins for actors, used to compare policies offline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::BenchReport;
use super::ConfigError;
use crate::model::{episode_succeeded, legal_from, names, ActorName, EpisodeResult, EpisodeStatus, Tally, TopologyGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedActorModel {
    pub name: ActorName,
    pub base_success_prob: f64,
    #[serde(default)]
    pub upstream_blame: Option<ActorName>,
    #[serde(default)]
    pub blame_prob: f64,
    pub repaired_success_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimPolicy {
    /// Reads blame hints and routes back to the blamed actor.
    Informed,
    Sequential,
    Random,
}

impl SimPolicy {
    pub const ALL: [SimPolicy; 3] = [SimPolicy::Sequential, SimPolicy::Random, SimPolicy::Informed];

    pub fn label(self) -> &'static str {
        match self {
            Self::Informed => "informed",
            Self::Sequential => "sequential",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub max_iterations: usize,
    pub runs_per_task: usize,
    /// Visiting order for the sequential policy and goal order for the
    /// informed one.
    pub order: Vec<ActorName>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 12,
            runs_per_task: 3,
            order: names::DEFAULT_ORDER.iter().map(|a| ActorName::from(*a)).collect(),
        }
    }
}

/// On-disk simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Defaults to the featurization topology.
    #[serde(default)]
    pub graph: Option<TopologyGraph>,
    #[serde(default)]
    pub order: Option<Vec<ActorName>>,
    pub max_iterations: usize,
    #[serde(default = "default_runs")]
    pub runs_per_task: usize,
    pub actors: Vec<SimulatedActorModel>,
}

fn default_runs() -> usize {
    3
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        serde_yaml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn graph(&self) -> TopologyGraph {
        self.graph.clone().unwrap_or_else(TopologyGraph::featurization)
    }

    pub fn options(&self) -> SimOptions {
        let mut options = SimOptions {
            max_iterations: self.max_iterations,
            runs_per_task: self.runs_per_task,
            ..SimOptions::default()
        };
        if let Some(order) = &self.order {
            options.order = order.clone();
        }
        options
    }
}

fn check(models: &[SimulatedActorModel], graph: &TopologyGraph, options: &SimOptions) -> Result<(), ConfigError> {
    let named: BTreeSet<&ActorName> = models.iter().map(|m| &m.name).collect();
    if named.len() != models.len() {
        return Err(ConfigError("an actor has more than one model".into()));
    }
    let actors: BTreeSet<&ActorName> = graph.actors.iter().collect();
    if named != actors {
        let missing: Vec<_> = actors.difference(&named).map(|a| a.as_str()).collect();
        let extra: Vec<_> = named.difference(&actors).map(|a| a.as_str()).collect();
        return Err(ConfigError(format!(
            "models do not match the graph (missing {missing:?}, unknown {extra:?})"
        )));
    }
    let all_true: BTreeMap<ActorName, bool> = graph.actors.iter().map(|a| (a.clone(), true)).collect();
    for m in models {
        for (field, p) in [
            ("base_success_prob", m.base_success_prob),
            ("blame_prob", m.blame_prob),
            ("repaired_success_prob", m.repaired_success_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError(format!("{}: {field} {p} is outside [0, 1]", m.name)));
            }
        }
        if let Some(up) = &m.upstream_blame {
            if !graph.actors.contains(up) || graph.shortest_path(&m.name, up, &all_true).is_none() {
                return Err(ConfigError(format!("{}: blamed actor `{up}` is not reachable", m.name)));
            }
        }
    }
    if options.runs_per_task == 0 || options.max_iterations == 0 {
        return Err(ConfigError("runs_per_task and max_iterations must be positive".into()));
    }
    if let Some(a) = options.order.iter().find(|a| !graph.actors.contains(*a)) {
        return Err(ConfigError(format!("order names unknown actor `{a}`")));
    }
    Ok(())
}

struct World<'a> {
    graph: &'a TopologyGraph,
    models: BTreeMap<&'a ActorName, &'a SimulatedActorModel>,
    options: &'a SimOptions,
}

impl World<'_> {
    /// Next hop from `last` toward `goal`, or `None` when unreachable.
    fn route(&self, last: Option<&ActorName>, goal: &ActorName, status: &BTreeMap<ActorName, bool>) -> Option<ActorName> {
        let legal = legal_from(self.graph, last, status).actors;
        if legal.contains(goal) {
            return Some(goal.clone());
        }
        legal
            .into_iter()
            .filter_map(|n| self.graph.shortest_path(&n, goal, status).map(|p| (p.len(), n)))
            .min_by_key(|(len, _)| *len)
            .map(|(_, n)| n)
    }

    fn episode(&self, policy: SimPolicy, rng: &mut ChaCha8Rng, task: String, run: usize, seed: u64) -> EpisodeResult {
        let mut status: BTreeMap<ActorName, bool> = BTreeMap::new();
        let mut per_actor: BTreeMap<ActorName, Tally> = BTreeMap::new();
        let mut last: Option<ActorName> = None;
        // upstream -> downstream actors that blamed it and await a fix
        let mut awaiting: BTreeMap<ActorName, BTreeSet<ActorName>> = BTreeMap::new();
        let mut repaired: BTreeSet<ActorName> = BTreeSet::new();
        let mut hint: Option<ActorName> = None;
        let mut cursor = 0;
        let mut steps = 0;

        let outcome = loop {
            if steps > 0 && episode_succeeded(self.graph, &status) {
                break EpisodeStatus::Success;
            }
            if steps >= self.options.max_iterations {
                break EpisodeStatus::ExhaustedIterations;
            }
            let legal = legal_from(self.graph, last.as_ref(), &status).actors;
            let pick = match policy {
                SimPolicy::Sequential => {
                    let next = self.options.order.get(cursor).filter(|a| legal.contains(a)).cloned();
                    cursor += 1;
                    next
                }
                SimPolicy::Random => legal.choose(rng).cloned(),
                SimPolicy::Informed => {
                    let goal = hint
                        .clone()
                        .or_else(|| self.options.order.iter().find(|a| status.get(*a) != Some(&true)).cloned());
                    goal.and_then(|g| self.route(last.as_ref(), &g, &status))
                }
            };
            let Some(actor) = pick else {
                break EpisodeStatus::PlannerAbort;
            };

            let model = self.models[&actor];
            let p = if repaired.contains(&actor) {
                model.repaired_success_prob
            } else {
                model.base_success_prob
            };
            let success = rng.gen_bool(p);
            per_actor.entry(actor.clone()).or_default().record(success);
            status.insert(actor.clone(), success);
            steps += 1;
            if success {
                if let Some(fixed) = awaiting.remove(&actor) {
                    repaired.extend(fixed);
                }
                if hint.as_ref() == Some(&actor) {
                    hint = None;
                }
            } else if let Some(up) = &model.upstream_blame {
                if !repaired.contains(&actor) && rng.gen_bool(model.blame_prob) {
                    awaiting.entry(up.clone()).or_default().insert(actor.clone());
                    hint = Some(up.clone());
                }
            }
            last = Some(actor);
        };

        EpisodeResult {
            status: outcome,
            total_steps: steps,
            per_actor,
            hitl_exchanges: 0,
            seed: Some(seed),
            run_label: format!("{task}/{}/run{run}", policy.label()),
            task,
            policy: policy.label().to_owned(),
            final_status: status,
        }
    }
}

/// Raw simulated episodes for one policy: `ceil(episodes / k)` tasks of
/// `k` runs each.
pub fn simulate_episodes(
    models: &[SimulatedActorModel],
    graph: &TopologyGraph,
    policy: SimPolicy,
    episodes: usize,
    seed: u64,
    options: &SimOptions,
) -> Result<Vec<EpisodeResult>, ConfigError> {
    check(models, graph, options)?;
    if episodes == 0 {
        return Err(ConfigError("episodes_per_policy must be at least 1".into()));
    }
    let world = World {
        graph,
        models: models.iter().map(|m| (&m.name, m)).collect(),
        options,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(policy as u64);
    let k = options.runs_per_task;
    let tasks = episodes.div_ceil(k);
    let mut results = Vec::with_capacity(tasks * k);
    for t in 0..tasks {
        for run in 0..k {
            results.push(world.episode(policy, &mut rng, format!("sim-{t:04}"), run, seed));
        }
    }
    Ok(results)
}

pub fn simulate_policies(
    models: &[SimulatedActorModel],
    graph: &TopologyGraph,
    policies: &[SimPolicy],
    episodes_per_policy: usize,
    seed: u64,
    options: &SimOptions,
) -> Result<BenchReport, ConfigError> {
    let mut groups = Vec::new();
    for &policy in policies {
        let results = simulate_episodes(models, graph, policy, episodes_per_policy, seed, options)?;
        groups.push((policy.label().to_owned(), results));
    }
    BenchReport::from_results(options.runs_per_task, groups).map_err(|e| ConfigError(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(p: f64) -> Vec<SimulatedActorModel> {
        names::DEFAULT_ORDER
            .iter()
            .map(|n| SimulatedActorModel {
                name: (*n).into(),
                base_success_prob: p,
                upstream_blame: None,
                blame_prob: 0.0,
                repaired_success_prob: p,
            })
            .collect()
    }

    fn means(models: &[SimulatedActorModel]) -> Vec<f64> {
        let report = simulate_policies(
            models,
            &TopologyGraph::featurization(),
            &SimPolicy::ALL,
            60,
            1,
            // random needs room to wander before it reaches both markers
            &SimOptions {
                max_iterations: 200,
                ..SimOptions::default()
            },
        )
        .unwrap();
        report.policies.iter().map(|p| p.pass_at_k.mean).collect()
    }

    #[test]
    fn certain_actors_always_pass() {
        assert_eq!(means(&uniform(1.0)), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn dead_entry_always_fails() {
        let mut models = uniform(1.0);
        models[0].base_success_prob = 0.0;
        models[0].repaired_success_prob = 0.0;
        assert_eq!(means(&models), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_model_is_rejected() {
        let models = &uniform(1.0)[1..];
        let err = simulate_policies(models, &TopologyGraph::featurization(), &SimPolicy::ALL, 3, 1, &SimOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn unreachable_blame_is_rejected() {
        let mut graph = TopologyGraph::featurization();
        graph.transitions.get_mut(&ActorName::from(names::CODE_GENERATOR)).unwrap().clear();
        graph.transitions.get_mut(&ActorName::from(names::TESTCASE_CODER)).unwrap().clear();
        let mut models = uniform(0.5);
        models[4].upstream_blame = Some(names::CONFIG_GENERATOR.into());
        assert!(check(&models, &graph, &SimOptions::default()).is_err());
    }

    #[test]
    fn seeds_are_deterministic() {
        let models = uniform(0.8);
        let g = TopologyGraph::featurization();
        let o = SimOptions::default();
        let a = simulate_episodes(&models, &g, SimPolicy::Random, 30, 9, &o).unwrap();
        let b = simulate_episodes(&models, &g, SimPolicy::Random, 30, 9, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn informed_returns_to_the_blamed_actor() {
        let mut models = uniform(1.0);
        // code_generator fails until config_generator is redone
        models[4].base_success_prob = 0.0;
        models[4].upstream_blame = Some(names::CONFIG_GENERATOR.into());
        models[4].blame_prob = 1.0;
        let g = TopologyGraph::featurization();
        let o = SimOptions::default();
        let informed = simulate_episodes(&models, &g, SimPolicy::Informed, 3, 1, &o).unwrap();
        assert!(informed.iter().all(|r| r.is_success()));
        // 5 to reach code_generator, 4 back through config, 1 for the coder
        assert!(informed.iter().all(|r| r.total_steps == 10), "{informed:?}");
        let seq = simulate_episodes(&models, &g, SimPolicy::Sequential, 3, 1, &o).unwrap();
        assert!(seq.iter().all(|r| r.status == EpisodeStatus::PlannerAbort && r.total_steps == 5));
    }
}

//! Benchmark protocol over task bundles on disk.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::report::{BenchReport, PolicyReport};
use super::BenchError;
use crate::actors::harness::harness_for;
use crate::actors::ActorRegistry;
use crate::llm::{backend_from_selector, PromptSet};
use crate::log::{read_log, JsonlSink, LogicalClock};
use crate::model::{EpisodeResult, TopologyGraph};
use crate::orchestrator::{run_episode, DefaultHitl, EpisodeEnv, EpisodeOptions, Policy};
use crate::replay::replay;
use crate::taskio::{load_task, TaskSpec};

pub const RUN_FILE: &str = "run.yaml";

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub policies: Vec<Policy>,
    pub runs_per_task: usize,
    /// Replaces each task's own backend selector; relative paths resolve
    /// against the task directory.
    pub backend: Option<String>,
    pub out: PathBuf,
    pub workers: usize,
}

impl BenchOptions {
    pub fn new(policies: Vec<Policy>, out: impl Into<PathBuf>) -> Self {
        Self {
            policies,
            runs_per_task: 3,
            backend: None,
            out: out.into(),
            workers: 1,
        }
    }
}

/// Run files under `task_dir`: the directory itself if it holds one,
/// otherwise each immediate subdirectory that does, sorted.
pub fn discover_tasks(task_dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let own = task_dir.join(RUN_FILE);
    if own.is_file() {
        return Ok(vec![own]);
    }
    let entries = fs::read_dir(task_dir).map_err(|e| BenchError::Config(format!("{}: {e}", task_dir.display())))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path().join(RUN_FILE))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(BenchError::Config(format!("no task bundles under {}", task_dir.display())));
    }
    Ok(found)
}

struct Job<'a> {
    policy: Policy,
    task: &'a TaskSpec,
    run: usize,
}

struct Done {
    result: EpisodeResult,
    error: Option<String>,
}

fn policy_for_run(policy: &Policy, task_index: usize, runs: usize, run: usize) -> Policy {
    match policy {
        Policy::Random { seed } => Policy::Random {
            seed: seed.wrapping_add((task_index * runs + run) as u64),
        },
        other => other.clone(),
    }
}

fn log_path(out: &Path, policy: &str, task: &str, run: usize) -> PathBuf {
    out.join("logs").join(policy).join(task).join(format!("run{run}.jsonl"))
}

fn run_job(job: &Job<'_>, options: &BenchOptions, graph: &TopologyGraph, registry: &ActorRegistry, prompts: &PromptSet) -> Result<Done, BenchError> {
    let label = job.policy.label();
    let task_dir = job.task.run_path.parent().unwrap_or(Path::new("."));
    let work = options.out.join("work").join(label).join(&job.task.id).join(format!("run{}", job.run));
    let mut task = job.task.clone();
    task.layout = task.layout.rebased(&work);

    let planner = &task.run.planner;
    let selector = options.backend.as_deref().unwrap_or(&planner.llm);
    let mut backend = backend_from_selector(selector, task_dir, planner.model.clone(), planner.api_key_env.as_deref())
        .map_err(|e| BenchError::Config(format!("{}: {e}", task.id)))?;
    let mut harness = harness_for(&task.harness_config(), &task.codebase, &work);
    let mut hitl = DefaultHitl::default();
    if let Some(answer) = &planner.default_hitl_answer {
        hitl.answer = answer.clone();
    }

    let path = log_path(&options.out, label, &task.id, job.run);
    fs::create_dir_all(path.parent().expect("log path has a parent"))?;
    let mut sink = JsonlSink::new(BufWriter::new(File::create(&path)?));

    let mut episode = EpisodeOptions::for_task(&task);
    episode.episode_id = format!("{label}-{}-run{}", task.id, job.run);
    episode.run_label = episode.episode_id.clone();
    let outcome = run_episode(
        EpisodeEnv {
            task: &task,
            graph,
            registry,
            prompts,
            backend: &mut *backend,
            harness: &mut *harness,
            hitl: &mut hitl,
            sink: &mut sink,
            clock: &LogicalClock::default(),
        },
        job.policy.clone(),
        &episode,
    );
    use std::io::Write as _;
    sink.into_inner().flush()?;
    Ok(match outcome {
        Ok(run) => Done {
            result: run.result,
            error: None,
        },
        Err(e) => Done {
            error: Some(e.to_string()),
            result: e.run().result.clone(),
        },
    })
}

/// Runs every policy `runs_per_task` times on every task, writes logs and
/// the report under `out`, and checks the report against the logs.
pub fn run_bench(task_dir: &Path, options: &BenchOptions) -> Result<BenchReport, BenchError> {
    if options.runs_per_task == 0 || options.policies.is_empty() {
        return Err(BenchError::Config("need at least one policy and one run per task".into()));
    }
    let graph = TopologyGraph::featurization();
    for p in &options.policies {
        p.validate(&graph).map_err(|e| BenchError::Config(e.to_string()))?;
    }
    let registry = ActorRegistry::featurization();
    let prompts = PromptSet::defaults();
    let mut errors = Vec::new();
    let mut tasks = Vec::new();
    for path in discover_tasks(task_dir)? {
        match load_task(&path) {
            Ok(t) => tasks.push(t),
            Err(e) => errors.push(format!("{}: {e}", path.display())),
        }
    }
    if tasks.is_empty() {
        return Err(BenchError::Config(format!("no task under {} could be loaded: {errors:?}", task_dir.display())));
    }
    fs::create_dir_all(&options.out)?;

    let runs = options.runs_per_task;
    let mut jobs = Vec::new();
    for policy in &options.policies {
        for (ti, task) in tasks.iter().enumerate() {
            for run in 0..runs {
                jobs.push(Job {
                    policy: policy_for_run(policy, ti, runs, run),
                    task,
                    run,
                });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<Option<Result<Done, BenchError>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..options.workers.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = run_job(job, options, &graph, &registry, &prompts);
                done.lock().expect("result slots")[i] = Some(r);
            });
        }
    });

    let mut groups: Vec<(String, Vec<EpisodeResult>)> =
        options.policies.iter().map(|p| (p.label().to_owned(), Vec::new())).collect();
    for (job, slot) in jobs.iter().zip(done.into_inner().expect("result slots")) {
        let label = job.policy.label();
        match slot.expect("every job ran") {
            Ok(d) => {
                if let Some(e) = d.error {
                    errors.push(format!("{label}/{}/run{}: {e}", job.task.id, job.run));
                }
                let group = groups.iter_mut().find(|(l, _)| l == label).expect("policy group");
                group.1.push(d.result);
            }
            Err(e) => errors.push(format!("{label}/{}/run{}: {e}", job.task.id, job.run)),
        }
    }

    let mut report = BenchReport::from_results(runs, groups)?;
    report.errors = errors;
    self_check(&report, &options.out, &jobs)?;

    fs::write(options.out.join("report.yaml"), report.to_yaml())?;
    fs::write(options.out.join("report.txt"), report.render_text())?;
    Ok(report)
}

/// Recomputes each policy's metrics from the episode logs alone and fails
/// when they differ from the report or a log breaks a rule.
fn self_check(report: &BenchReport, out: &Path, jobs: &[Job<'_>]) -> Result<(), BenchError> {
    for policy in &report.policies {
        let mut derived = Vec::new();
        for job in jobs.iter().filter(|j| j.policy.label() == policy.policy) {
            let path = log_path(out, &policy.policy, &job.task.id, job.run);
            let Ok(file) = File::open(&path) else { continue };
            let records = read_log(BufReader::new(file))?;
            let replayed = replay(&records);
            if !replayed.is_clean() {
                return Err(BenchError::SelfCheck(format!(
                    "{}: {} rule violations",
                    path.display(),
                    replayed.violation_count()
                )));
            }
            derived.extend(replayed.derived_results());
        }
        let again = PolicyReport::from_results(policy.policy.clone(), report.k, &derived)?;
        if again.pass_at_k != policy.pass_at_k || again.failure_rates != policy.failure_rates {
            return Err(BenchError::SelfCheck(format!("{} metrics differ from its logs", policy.policy)));
        }
    }
    Ok(())
}

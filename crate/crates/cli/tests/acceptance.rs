//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use planweave_core::actors::harness::SimulatedHarness;
use planweave_core::actors::{parse_tagged, ActorRegistry, TaggedError, TaggedOutput, DEFAULT_MAX_RETRIES};
use planweave_core::bench::{
    actor_failure_rate, pass_at_k, simulate_episodes, BenchReport, SimOptions, SimPolicy, SimulatedActorModel,
};
use planweave_core::llm::{bindings, ChatBackend, ChatRequest, LlmError, PromptSet, DEFAULT_TEMPLATES};
use planweave_core::log::{read_log, LogRecord, LogicalClock};
use planweave_core::model::{
    names, ActorName, ActorOutcome, CallType, DecidedBy, EpisodeResult, EpisodeStatus, Gate, ShortTermMemory, StepOutcome,
    StepRecord, StepTarget, Tally, TopologyGraph,
};
use planweave_core::orchestrator::{
    launch, render_actor_status, render_previous_step, render_transitions, run_episode, DefaultHitl, EpisodeEnv,
    EpisodeOptions, LaunchRequest, Policy,
};
use planweave_core::replay::{replay, ViolationKind};
use planweave_core::taskio::{load_task, parse_document, to_yaml, DataFrameRegistry, FeatureSpecConfig, RunConfig, TaskError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn fixtures() -> PathBuf {
    root().join("fixtures")
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_planweave")
}

/// Every log produced here goes through replay; illegal transitions add up.
#[derive(Default)]
struct Ledger {
    logs: usize,
    illegal: usize,
    other: usize,
}

impl Ledger {
    fn check(&mut self, records: &[LogRecord]) {
        let report = replay(records);
        self.logs += 1;
        self.illegal += report.illegal_transitions();
        self.other += report.violation_count() - report.illegal_transitions();
    }

    fn check_dir(&mut self, dir: &Path) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                self.check_dir(&path);
            } else if path.extension().is_some_and(|e| e == "jsonl") {
                let records = read_log(BufReader::new(fs::File::open(&path).unwrap())).unwrap();
                self.check(&records);
            }
        }
    }
}

// ---------------------------------------------------------------------------

fn policy_ordering(_: &mut Ledger) -> String {
    let start = Instant::now();
    let out = Command::new(bin())
        .args(["bench", "--simulate"])
        .arg(fixtures().join("sim/calibration.yaml"))
        .args(["--episodes", "500", "--seed", "7", "--format", "json"])
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: BenchReport = serde_json::from_slice(&out.stdout).unwrap();
    let informed = report.mean("informed").unwrap();
    let sequential = report.mean("sequential").unwrap();
    let random = report.mean("random").unwrap();
    assert!(informed - sequential >= 0.05, "informed {informed} vs sequential {sequential}");
    assert!(sequential - random >= 0.05, "sequential {sequential} vs random {random}");
    assert!(elapsed < Duration::from_secs(60));
    format!("informed {informed:.3} > sequential {sequential:.3} > random {random:.3} in {elapsed:.2?}")
}

/// Replies drawn at random per call: valid, unparseable, terminated or
/// wrong, and planner decisions naming any target.
struct ChaosBackend {
    rng: ChaCha8Rng,
    good: BTreeMap<String, String>,
}

impl ChaosBackend {
    fn new(seed: u64, transcript: &Path) -> Self {
        let doc: serde_yaml::Value = serde_yaml::from_str(&fs::read_to_string(transcript).unwrap()).unwrap();
        let good = doc["queues"]
            .as_mapping()
            .unwrap()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str()?.to_owned(), v[0].as_str()?.to_owned())))
            .collect();
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            good,
        }
    }
}

impl ChatBackend for ChaosBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let roll: f64 = self.rng.gen();
        if request.tag == "planner" {
            let targets = [names::DEFAULT_ORDER.as_slice(), &[names::HITL]].concat();
            let target = targets[self.rng.gen_range(0..targets.len())];
            return Ok(if roll < 0.8 {
                let call_type = if target == names::HITL { "tool" } else { "actor" };
                format!(
                    r#"{{"call_type": "{call_type}", "actor": "{target}", "reason": "r", "args": {{"planner_input": "what next?"}}}}"#
                )
            } else {
                "I am not sure.".into()
            });
        }
        Ok(match roll {
            r if r < 0.5 => self.good.get(&request.tag).cloned().unwrap_or_default(),
            r if r < 0.8 => "no code this time".into(),
            r if r < 0.9 => "<reason>inputs are wrong</reason><fix>TERMINATE</fix>\n```python\n# none\n```".into(),
            _ => "<reason></reason><fix></fix>\n```python\nx = 1\n```".into(),
        })
    }

    fn describe(&self) -> String {
        "chaos".into()
    }
}

fn retry_cap(ledger: &mut Ledger) -> String {
    let graph = TopologyGraph::featurization();
    let registry = ActorRegistry::featurization();
    let prompts = PromptSet::defaults();
    let tasks: Vec<_> = ["t0", "t1"]
        .iter()
        .map(|t| load_task(&fixtures().join("tasks").join(t).join("run.yaml")).unwrap())
        .collect();
    let mut outcomes = 0;
    let mut max_attempts = 0;
    let mut over = 0;
    let episodes = 1000;
    for i in 0..episodes {
        let task = &tasks[i % 2];
        let policy = if i % 2 == 0 { Policy::Planner } else { Policy::Random { seed: i as u64 } };
        let mut backend = ChaosBackend::new(i as u64, &task.run_path.parent().unwrap().join("transcript.yaml"));
        let mut records = Vec::new();
        let mut sink = |r: &LogRecord| {
            if !matches!(r, LogRecord::Chat { .. }) {
                records.push(r.clone());
            }
        };
        let mut options = EpisodeOptions::for_task(task);
        options.backoff = Duration::ZERO;
        options.write_artifacts = false;
        options.episode_id = format!("chaos-{i}");
        let run = run_episode(
            EpisodeEnv {
                task,
                graph: &graph,
                registry: &registry,
                prompts: &prompts,
                backend: &mut backend,
                harness: &mut SimulatedHarness,
                hitl: &mut DefaultHitl::default(),
                sink: &mut sink,
                clock: &LogicalClock::default(),
            },
            policy,
            &options,
        )
        .unwrap();
        for step in run.memory.steps() {
            if let Some((_, o)) = step.actor_outcome() {
                outcomes += 1;
                max_attempts = max_attempts.max(o.attempts);
                over += usize::from(o.attempts > DEFAULT_MAX_RETRIES);
            }
        }
        ledger.check(&records);
    }
    assert_eq!(over, 0);
    assert_eq!(max_attempts, DEFAULT_MAX_RETRIES, "the cap was never reached, so never tested");
    format!("{episodes} episodes, {outcomes} actor outcomes, max attempts {max_attempts}")
}

fn terminate_routing(ledger: &mut Ledger) -> String {
    let out = tempfile::tempdir().unwrap();
    let launched = launch(
        &LaunchRequest {
            run_path: fixtures().join("tasks/t1/run.yaml"),
            policy: Policy::Planner,
            backend: None,
            out: out.path().to_owned(),
            episode_id: None,
        },
        None,
        None,
    )
    .unwrap();
    let records = read_log(BufReader::new(fs::File::open(&launched.log_path).unwrap())).unwrap();
    ledger.check(&records);
    let terminated = records
        .iter()
        .find_map(|r| match r {
            LogRecord::Step(s) => match &s.outcome {
                StepOutcome::Actor(o) if o.terminated => Some((s.index, s.target.clone(), o.clone())),
                _ => None,
            },
            _ => None,
        })
        .expect("a terminated outcome is logged");
    assert_eq!(terminated.1, StepTarget::Actor(names::CODE_GENERATOR.into()));
    assert!(!terminated.2.success);
    let next = records
        .iter()
        .find_map(|r| match r {
            LogRecord::Decision { step, previous_step, target, .. } if *step == terminated.0 + 1 => {
                Some((previous_step.clone(), target.clone()))
            }
            _ => None,
        })
        .expect("a decision follows the terminated step");
    assert!(next.0.contains("actor: code_generator"), "{}", next.0);
    assert!(next.0.contains("terminated: True"), "{}", next.0);
    format!("step {} terminated; next decision saw it and chose {}", terminated.0, next.1)
}

/// Pass@k and failure rates recomputed from log lines as untyped JSON.
fn oracle(lines: &[String], k: usize) -> (Vec<(String, f64)>, f64, f64, BTreeMap<String, (u64, u64)>, Vec<(String, f64, f64)>) {
    let values: Vec<serde_json::Value> = lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mut by_task: BTreeMap<String, Vec<&serde_json::Value>> = BTreeMap::new();
    for v in &values {
        by_task.entry(v["task"].as_str().unwrap().to_owned()).or_default().push(v);
    }
    let mut per_task = Vec::new();
    for (task, runs) in &by_task {
        assert_eq!(runs.len(), k);
        let ok = runs.iter().filter(|r| r["status"] == "success").count();
        per_task.push((task.clone(), ok as f64 / k as f64));
    }
    let n = per_task.len() as f64;
    let mean = per_task.iter().map(|(_, v)| v).sum::<f64>() / n;
    let sd = (per_task.iter().map(|(_, v)| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();

    let mut actors: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut task_rates = Vec::new();
    for (task, runs) in &by_task {
        let mut rates = Vec::new();
        for r in runs {
            let (mut s, mut f) = (0u64, 0u64);
            for (actor, t) in r["per_actor"].as_object().unwrap() {
                let (ts, tf) = (t["successes"].as_u64().unwrap(), t["failures"].as_u64().unwrap());
                s += ts;
                f += tf;
                let e = actors.entry(actor.clone()).or_default();
                e.0 += ts;
                e.1 += tf;
            }
            if s + f > 0 {
                rates.push(f as f64 / (s + f) as f64 * 100.0);
            }
        }
        if !rates.is_empty() {
            let m = rates.iter().sum::<f64>() / rates.len() as f64;
            let d = (rates.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / rates.len() as f64).sqrt();
            task_rates.push((task.clone(), m, d));
        }
    }
    actors.retain(|_, (s, f)| *s + *f > 0);
    (per_task, mean, sd, actors, task_rates)
}

fn metric_oracles(_: &mut Ledger) -> String {
    let k = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let statuses = [
        EpisodeStatus::Success,
        EpisodeStatus::ExhaustedIterations,
        EpisodeStatus::PlannerAbort,
        EpisodeStatus::HardError,
    ];
    for _ in 0..100 {
        let tasks = rng.gen_range(1..=10);
        let mut results = Vec::new();
        for t in 0..tasks {
            for run in 0..k {
                let mut per_actor = BTreeMap::new();
                for actor in names::DEFAULT_ORDER {
                    if rng.gen_bool(0.7) {
                        let tally = Tally {
                            successes: rng.gen_range(0..5),
                            failures: rng.gen_range(0..5),
                        };
                        per_actor.insert(ActorName::from(actor), tally);
                    }
                }
                results.push(EpisodeResult {
                    status: statuses[rng.gen_range(0..statuses.len())],
                    total_steps: rng.gen_range(0..15),
                    per_actor,
                    hitl_exchanges: 0,
                    seed: None,
                    run_label: format!("t{t}-{run}"),
                    task: format!("task{t:02}"),
                    policy: "planner".into(),
                    final_status: BTreeMap::new(),
                });
            }
        }
        let lines: Vec<String> = results.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        let (per_task, mean, sd, actors, task_rates) = oracle(&lines, k);

        let p = pass_at_k(&results, k).unwrap();
        assert_eq!(p.per_task.into_iter().collect::<Vec<_>>(), per_task);
        assert_eq!(p.mean, mean);
        assert_eq!(p.stddev, sd);
        let f = actor_failure_rate(&results);
        let got: BTreeMap<String, (u64, u64)> = f
            .per_actor
            .iter()
            .map(|(a, r)| (a.to_string(), (r.successes, r.failures)))
            .collect();
        assert_eq!(got, actors);
        let got: Vec<(String, f64, f64)> = f.per_task.iter().map(|(t, m)| (t.clone(), m.mean, m.stddev)).collect();
        assert_eq!(got, task_rates);
    }

    let mut r = EpisodeResult {
        status: EpisodeStatus::Success,
        total_steps: 0,
        per_actor: BTreeMap::from([(ActorName::from(names::CODE_GENERATOR), Tally { successes: 63, failures: 51 })]),
        hitl_exchanges: 0,
        seed: None,
        run_label: String::new(),
        task: "fig".into(),
        policy: "planner".into(),
        final_status: BTreeMap::new(),
    };
    r.total_steps = 114;
    let rate = actor_failure_rate(&[r]).per_actor[&ActorName::from(names::CODE_GENERATOR)].rate;
    assert!((rate - 44.7).abs() <= 0.05, "{rate}");
    format!("100 random result sets match; 63/51 gives {rate:.2}%")
}

fn golden_bindings() -> planweave_core::llm::Bindings {
    let task = load_task(&fixtures().join("tasks/t0/run.yaml")).unwrap();
    let graph = TopologyGraph::featurization();
    let memory = ShortTermMemory::new();
    let template = "def load_inputs(spark, config):\n    pass\n";
    bindings([
        ("fsc", task.fsc_text.clone()),
        ("dfr", task.dfr_text.clone()),
        ("dataset_catalog", task.dfr_text.clone()),
        ("readme", task.readme.clone()),
        ("codebase_readme", task.readme.clone()),
        ("existing_utils", task.existing_utils()),
        ("script_name", task.script_name()),
        ("planner_input", "Use the dev bucket.".to_owned()),
        ("user_task_details", task.summary()),
        ("script_content", template.to_owned()),
        ("selected_utils", "[]".to_owned()),
        ("config", "feature_set: customer_order_features\n".to_owned()),
        ("test_script_content", "Not available yet.".to_owned()),
        ("transitions", render_transitions(&graph)),
        ("actors_status", render_actor_status(&graph, &memory)),
        ("previous_step", render_previous_step(&memory)),
    ])
}

fn golden_prompts(_: &mut Ledger) -> String {
    let dir = fixtures().join("prompts/golden");
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    let prompts = PromptSet::defaults();
    let all = golden_bindings();
    for (name, _) in DEFAULT_TEMPLATES {
        let template = prompts.get(name).unwrap();
        let wanted: planweave_core::llm::Bindings = all
            .iter()
            .filter(|(k, _)| template.required_placeholders.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let rendered = template.render(&wanted).unwrap();
        let path = dir.join(format!("{name}.txt"));
        if update {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&path, &rendered).unwrap();
        }
        let golden = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(golden == rendered, "{name} differs from {}", path.display());
    }

    let blank = parse_tagged("<reason></reason><fix></fix>\n```python\nX\n```").unwrap();
    assert_eq!(
        blank,
        TaggedOutput {
            reason: Some(String::new()),
            fix: Some(String::new()),
            payload: "X".into(),
            terminated: false
        }
    );
    let term = parse_tagged("<reason>bad schema</reason><fix>TERMINATE</fix>```python\n# none\n```").unwrap();
    assert!(term.terminated);
    assert_eq!(parse_tagged("<reason>x</reason><fix>y</fix> no code"), Err(TaggedError::NoPayload));
    for out in [blank, term] {
        let again = parse_tagged(&planweave_core::actors::format_tagged(&out, "python")).unwrap();
        assert_eq!(again, out);
    }
    format!("{} templates match; 3 tagged forms parse", DEFAULT_TEMPLATES.len())
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            fs::copy(entry.path(), dest).unwrap();
        }
    }
}

fn config_round_trip(_: &mut Ledger) -> String {
    let skeleton = fixtures().join("skeleton");
    let task = load_task(&skeleton.join("run.yaml")).unwrap();
    assert_eq!(task.dfr.datasets.len(), 1);
    assert_eq!(task.fsc.features.len(), 1);
    let p = Path::new("again.yaml");
    let fsc: FeatureSpecConfig = parse_document(p, &to_yaml(&task.fsc)).unwrap();
    let dfr: DataFrameRegistry = parse_document(p, &to_yaml(&task.dfr)).unwrap();
    let run: RunConfig = parse_document(p, &to_yaml(&task.run)).unwrap();
    assert_eq!(fsc, task.fsc);
    assert_eq!(dfr, task.dfr);
    assert_eq!(run, task.run);

    let tmp = tempfile::tempdir().unwrap();
    let case = |name: &str, edit: &dyn Fn(&Path)| -> TaskError {
        let dir = tmp.path().join(name);
        copy_dir(&skeleton, &dir);
        edit(&dir);
        load_task(&dir.join("run.yaml")).unwrap_err()
    };
    let dangling = case("dangling", &|d| {
        let dfr = fs::read_to_string(d.join("inputs/dfr.yaml")).unwrap().replace("name: orders", "name: payments");
        fs::write(d.join("inputs/dfr.yaml"), dfr).unwrap();
    });
    assert!(matches!(&dangling, TaskError::Ref { reference, .. } if reference == "orders.amount"), "{dangling}");
    let no_cap = case("no_cap", &|d| {
        let run = fs::read_to_string(d.join("run.yaml")).unwrap().replace("  max_iterations: 10\n", "");
        fs::write(d.join("run.yaml"), run).unwrap();
    });
    assert!(
        matches!(&no_cap, TaskError::Parse { message, .. } if message.contains("max_iterations")),
        "{no_cap}"
    );
    let missing = case("missing", &|d| fs::remove_file(d.join("inputs/dfr.yaml")).unwrap());
    assert!(matches!(&missing, TaskError::MissingFile { .. }), "{missing}");
    "skeleton round-trips; RefError, ParseError, MissingFile raised".into()
}

fn chain_models(pb: f64, q: f64, r: f64) -> (TopologyGraph, Vec<SimulatedActorModel>) {
    let (a, b) = (ActorName::from("a"), ActorName::from("b"));
    let graph = TopologyGraph {
        actors: [a.clone(), b.clone()].into(),
        transitions: [(a.clone(), vec![b.clone()]), (b.clone(), vec![a.clone()])].into(),
        entry: a.clone(),
        terminal_markers: [b.clone()].into(),
        gates: Vec::<Gate>::new(),
    };
    let models = vec![
        SimulatedActorModel {
            name: a.clone(),
            base_success_prob: 1.0,
            upstream_blame: None,
            blame_prob: 0.0,
            repaired_success_prob: 1.0,
        },
        SimulatedActorModel {
            name: b,
            base_success_prob: pb,
            upstream_blame: Some(a),
            blame_prob: q,
            repaired_success_prob: r,
        },
    ];
    (graph, models)
}

/// Exact success probability of the a<->b chain by enumerating every draw.
fn enumerate_chain(left: usize, b_next: bool, repaired: bool, awaiting: bool, pb: f64, q: f64, r: f64) -> f64 {
    if left == 0 {
        return 0.0;
    }
    if !b_next {
        return enumerate_chain(left - 1, true, repaired || awaiting, false, pb, q, r);
    }
    let p = if repaired { r } else { pb };
    let after_fail = if repaired {
        enumerate_chain(left - 1, false, true, false, pb, q, r)
    } else {
        q * enumerate_chain(left - 1, false, false, true, pb, q, r)
            + (1.0 - q) * enumerate_chain(left - 1, false, false, false, pb, q, r)
    };
    p + (1.0 - p) * after_fail
}

fn simulator_validity(_: &mut Ledger) -> String {
    let (pb, q, r) = (0.5, 0.6, 0.9);
    let closed = pb + (1.0 - pb) * (q * r + (1.0 - q) * pb);
    let enumerated = enumerate_chain(4, false, false, false, pb, q, r);
    assert!((closed - enumerated).abs() < 1e-12, "{closed} vs {enumerated}");

    let (graph, models) = chain_models(pb, q, r);
    let options = SimOptions {
        max_iterations: 4,
        runs_per_task: 1,
        order: vec!["a".into(), "b".into()],
    };
    let n = 10_000;
    let start = Instant::now();
    let results = simulate_episodes(&models, &graph, SimPolicy::Informed, n, 11, &options).unwrap();
    let elapsed = start.elapsed();
    let mc = results.iter().filter(|r| r.is_success()).count() as f64 / n as f64;
    let se = (closed * (1.0 - closed) / n as f64).sqrt();
    assert!((mc - closed).abs() <= 3.0 * se, "mc {mc} vs {closed} (se {se})");
    assert!(elapsed < Duration::from_secs(10));
    format!("closed form {closed:.4}, enumeration agrees, Monte-Carlo {mc:.4} (3se = {:.4}) in {elapsed:.2?}", 3.0 * se)
}

fn bench_parity(ledger: &mut Ledger) -> String {
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let run = Command::new(bin())
        .args(["bench"])
        .arg(fixtures().join("tasks"))
        .args(["--runs", "3", "--seed", "5", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(elapsed < Duration::from_secs(30));
    assert!(text.contains("pass@3 (sd)"), "{text}");
    assert!(text.contains("Decision steps (sd)") && text.contains("Actor failure % (sd)"), "{text}");
    for task in ["t0", "t1"] {
        assert!(text.lines().any(|l| l.starts_with(task)), "{task} row missing");
    }
    let report: BenchReport = serde_yaml::from_str(&fs::read_to_string(out.path().join("report.yaml")).unwrap()).unwrap();
    assert_eq!(report.policies.len(), 3);
    assert!(report.policies.iter().all(|p| p.episodes == 6 && p.pass_at_k.per_task.len() == 2));
    let before = ledger.logs;
    ledger.check_dir(&out.path().join("logs"));
    assert_eq!(ledger.logs - before, 18);
    format!("3 policies x 2 tasks x 3 runs in {elapsed:.2?}")
}

fn transition_legality(ledger: &mut Ledger) -> String {
    // the checker itself must catch a testcase_coder step after a failed code_generator
    let step = |index: usize, actor: &str, success: bool| -> Vec<LogRecord> {
        let target = StepTarget::Actor(actor.into());
        vec![
            LogRecord::Decision {
                step: index,
                decided_by: DecidedBy::Planner,
                previous_step: String::new(),
                call_type: CallType::Actor,
                target: target.clone(),
                reason: String::new(),
                planner_input: String::new(),
            },
            LogRecord::Step(StepRecord {
                index,
                decided_by: DecidedBy::Planner,
                call_type: CallType::Actor,
                target,
                planner_input: String::new(),
                outcome: StepOutcome::Actor(ActorOutcome {
                    success,
                    attempts: 1,
                    artifacts: vec![],
                    reason_tag: None,
                    fix_tag: None,
                    terminated: false,
                    error_log: vec![],
                }),
                timestamp: index as u64,
            }),
        ]
    };
    let mut bad = vec![LogRecord::EpisodeStart {
        episode_id: "bad".into(),
        run_label: "bad".into(),
        task: "t".into(),
        policy: "planner".into(),
        seed: None,
        max_iterations: 10,
        graph: TopologyGraph::featurization(),
    }];
    for (i, (a, ok)) in [
        (names::CONFIG_GENERATOR, true),
        (names::CODE_TEMPLATE_GENERATOR, true),
        (names::TESTCASE_GENERATOR, true),
        (names::CODE_GENERATOR, false),
        (names::TESTCASE_CODER, true),
    ]
    .into_iter()
    .enumerate()
    {
        bad.extend(step(i, a, ok));
    }
    let caught = replay(&bad);
    assert_eq!(caught.illegal_transitions(), 1);
    assert_eq!(caught.episodes[0].violations[0].kind, ViolationKind::IllegalTransition);

    assert!(ledger.logs >= 1000, "only {} logs replayed", ledger.logs);
    assert_eq!(ledger.illegal, 0);
    assert_eq!(ledger.other, 0, "other rule violations in the logs");
    format!("{} logs replayed, 0 illegal transitions; gated coder step is caught", ledger.logs)
}

type Criterion = (&'static str, fn(&mut Ledger) -> String);

fn main() {
    let criteria: [Criterion; 9] = [
        ("policy ordering", policy_ordering),
        ("retry cap", retry_cap),
        ("terminate routing", terminate_routing),
        ("metric oracles", metric_oracles),
        ("golden prompts", golden_prompts),
        ("config round-trip", config_round_trip),
        ("simulator validity", simulator_validity),
        ("benchmark protocol parity", bench_parity),
        // last: it checks every log the others produced
        ("transition legality", transition_legality),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut ledger = Ledger::default();
    let mut failed = 0;
    for (name, check) in criteria {
        match catch_unwind(AssertUnwindSafe(|| check(&mut ledger))) {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

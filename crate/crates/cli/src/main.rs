use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use futures::StreamExt;
use planweave_client::{ClientError, ControlClient};
use planweave_core::actors::ActorRegistry;
use planweave_core::bench::{run_bench, simulate_policies, BenchError, BenchOptions, BenchReport, SimConfig, SimPolicy};
use planweave_core::control::{EpisodeState, HitlRoute, StartEpisode};
use planweave_core::llm::PromptSet;
use planweave_core::log::{read_log, LogRecord};
use planweave_core::model::{validate_topology, EpisodeResult, StepOutcome, StepRecord, TopologyGraph};
use planweave_core::orchestrator::{launch, LaunchRequest, Policy};
use planweave_core::replay::replay;
use planweave_core::taskio::load_task;

/// Usage problems that clap cannot see, e.g. a random policy without a seed.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

#[derive(Parser)]
#[command(name = "planweave", version, about = "Planner-guided actor orchestration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the topology, the actor registry and task bundles.
    Validate {
        /// Run files to load and cross-check.
        run_files: Vec<PathBuf>,
        /// Topology to check instead of the built-in one (YAML).
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Run one episode.
    Run(RunArgs),
    /// Run the benchmark protocol or the policy simulator.
    Bench(BenchArgs),
    /// Serve the control interface for the console.
    Serve {
        #[arg(long, default_value = planweave_service::DEFAULT_ADDR)]
        addr: SocketAddr,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-derive metrics and legality checks from episode logs.
    Replay {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Planner,
    Sequential,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HitlArg {
    Console,
    Default,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Yaml,
    Json,
}

#[derive(Args)]
struct RunArgs {
    run_file: PathBuf,
    #[arg(long, value_enum, default_value = "planner")]
    policy: PolicyArg,
    /// Required for the random policy.
    #[arg(long)]
    seed: Option<u64>,
    /// Backend selector overriding the run file, e.g. `scripted:path.yaml`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_enum, default_value = "default")]
    hitl: HitlArg,
    /// Control service used with `--hitl console`.
    #[arg(long, default_value = "http://127.0.0.1:8765")]
    server: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    episode_id: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of task bundles (one run file per subdirectory).
    task_dir: Option<PathBuf>,
    /// Simulator model file; switches to the offline simulator.
    #[arg(long, conflicts_with = "task_dir")]
    simulate: Option<PathBuf>,
    #[arg(long, value_enum)]
    policy: Vec<PolicyArg>,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Episodes per policy for the simulator.
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "out/bench")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn to_policy(arg: PolicyArg, seed: Option<u64>) -> Result<Policy> {
    Ok(match arg {
        PolicyArg::Planner => Policy::Planner,
        PolicyArg::Sequential => Policy::sequential_default(),
        PolicyArg::Random => Policy::Random {
            seed: seed.ok_or_else(|| Usage("--policy random needs --seed".into()))?,
        },
    })
}

fn describe_step(step: &StepRecord) -> String {
    match &step.outcome {
        StepOutcome::Actor(o) => format!(
            "step {:>2}  {:<24} {} attempts={}{}",
            step.index,
            step.target.to_string(),
            if o.success { "ok  " } else { "FAIL" },
            o.attempts,
            if o.terminated { " terminated" } else { "" }
        ),
        StepOutcome::Hitl(h) => format!("step {:>2}  {:<24} {:?}: {}", step.index, "hitl", h.mode, h.question),
    }
}

fn summarize(result: &EpisodeResult) -> ExitCode {
    println!(
        "{}: {:?} after {} steps ({} hitl)",
        result.run_label, result.status, result.total_steps, result.hitl_exchanges
    );
    if result.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_validate(run_files: &[PathBuf], graph: Option<&Path>) -> Result<ExitCode> {
    let graph = match graph {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_yaml::from_str::<TopologyGraph>(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?
        }
        None => TopologyGraph::featurization(),
    };
    let mut clean = true;
    let report = validate_topology(&graph);
    for f in &report.findings {
        clean = false;
        println!("topology: {:?} {}: {}", f.kind, f.subject, f.message);
    }
    if let Err(e) = ActorRegistry::featurization().validate(&PromptSet::defaults(), &graph) {
        clean = false;
        println!("registry: {e}");
    }
    for path in run_files {
        match load_task(path) {
            Ok(task) => {
                for w in &task.warnings {
                    println!("{}: warning: {w}", path.display());
                }
                println!("{}: ok ({} features)", path.display(), task.fsc.features.len());
            }
            Err(e) => {
                clean = false;
                println!("{}: {e}", path.display());
            }
        }
    }
    println!("{}", if clean { "clean" } else { "findings reported" });
    Ok(if clean { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

async fn run_via_service(client: &ControlClient, args: &RunArgs, policy: Policy) -> Result<ExitCode> {
    let run_path = std::fs::canonicalize(&args.run_file).with_context(|| format!("{}", args.run_file.display()))?;
    let info = client
        .start_episode(&StartEpisode {
            run_path,
            policy,
            backend: args.backend.clone(),
            episode_id: args.episode_id.clone(),
            hitl: HitlRoute::Console,
        })
        .await?;
    println!("episode {} started on {}; answer questions from the console", info.episode_id, client.base());
    let mut events = Box::pin(client.events(&info.episode_id).await?);
    let mut last = None;
    while let Some(record) = events.next().await {
        match record? {
            LogRecord::Step(step) => println!("{}", describe_step(&step)),
            LogRecord::EpisodeEnd(result) => last = Some(result),
            LogRecord::Warning { message } => tracing::warn!("{message}"),
            _ => {}
        }
    }
    let info = client.episode(&info.episode_id).await?;
    if let Some(log) = &info.log_path {
        println!("log: {}", log.display());
    }
    match (info.state, last) {
        (EpisodeState::Failed, _) => bail!(info.error.unwrap_or_else(|| "episode failed".into())),
        (_, Some(result)) => Ok(summarize(&result)),
        _ => bail!("event stream ended before the episode did"),
    }
}

async fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let policy = to_policy(args.policy, args.seed)?;
    if args.hitl == HitlArg::Console {
        let client = ControlClient::new(&args.server);
        match client.health().await {
            Ok(()) => return run_via_service(&client, &args, policy).await,
            Err(e @ ClientError::Unreachable { .. }) => {
                tracing::warn!("{e}; continuing with default human answers");
            }
            Err(e) => return Err(e.into()),
        }
    }
    let request = LaunchRequest {
        run_path: args.run_file.clone(),
        policy,
        backend: args.backend.clone(),
        out: args.out.clone(),
        episode_id: args.episode_id.clone(),
    };
    let mut echo = |record: &LogRecord| {
        if let LogRecord::Step(step) = record {
            println!("{}", describe_step(step));
        }
    };
    let launched = tokio::task::block_in_place(|| launch(&request, None, Some(&mut echo)))?;
    println!("log: {}", launched.log_path.display());
    let run = launched.outcome?;
    if let Some(m) = &run.manifest {
        println!("patch: {}", m.patch_bundle.display());
    }
    Ok(summarize(&run.result))
}

fn print_report(report: &BenchReport, format: Format) {
    match format {
        Format::Text => print!("{}", report.render_text()),
        Format::Yaml => print!("{}", report.to_yaml()),
        Format::Json => println!("{}", report.to_json()),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    if let Some(model_file) = &args.simulate {
        let config = SimConfig::load(model_file).map_err(|e| Usage(e.to_string()))?;
        let policies: Vec<SimPolicy> = if args.policy.is_empty() {
            SimPolicy::ALL.to_vec()
        } else {
            args.policy
                .iter()
                .map(|p| match p {
                    PolicyArg::Planner => SimPolicy::Informed,
                    PolicyArg::Sequential => SimPolicy::Sequential,
                    PolicyArg::Random => SimPolicy::Random,
                })
                .collect()
        };
        let report = simulate_policies(&config.actors, &config.graph(), &policies, args.episodes, args.seed, &config.options())
            .map_err(|e| Usage(e.to_string()))?;
        print_report(&report, args.format);
        return Ok(ExitCode::SUCCESS);
    }

    let task_dir = args
        .task_dir
        .clone()
        .ok_or_else(|| Usage("bench needs a task directory or --simulate".into()))?;
    let arms = if args.policy.is_empty() {
        vec![PolicyArg::Sequential, PolicyArg::Random, PolicyArg::Planner]
    } else {
        args.policy.clone()
    };
    let policies = arms.into_iter().map(|p| to_policy(p, Some(args.seed))).collect::<Result<_>>()?;
    let options = BenchOptions {
        policies,
        runs_per_task: args.runs,
        backend: args.backend.clone(),
        out: args.out.clone(),
        workers: args.workers,
    };
    let report = match run_bench(&task_dir, &options) {
        Ok(r) => r,
        Err(BenchError::Config(msg)) => return Err(Usage(msg).into()),
        Err(e) => return Err(e.into()),
    };
    print_report(&report, args.format);
    println!("report: {}", args.out.join("report.yaml").display());
    Ok(ExitCode::SUCCESS)
}

async fn cmd_serve(addr: SocketAddr, out: PathBuf) -> Result<ExitCode> {
    let listener = planweave_service::bind(addr).await?;
    let registry = planweave_service::Registry::new(out);
    println!("control service on http://{}", listener.local_addr()?);
    planweave_service::serve(listener, registry, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(logs: &[PathBuf]) -> Result<ExitCode> {
    let mut violations = 0;
    let mut results = Vec::new();
    for path in logs {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let records = read_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        let report = replay(&records);
        for v in &report.stray {
            println!("{}: {:?}: {}", path.display(), v.kind, v.message);
        }
        for ep in &report.episodes {
            let status = ep
                .recorded
                .as_ref()
                .map(|r| format!("{:?}", r.status))
                .unwrap_or_else(|| "unfinished".into());
            println!(
                "{} [{}] {} steps, max attempts {}, {} hitl, {} violations: {status}",
                ep.episode_id,
                ep.policy,
                ep.steps,
                ep.max_attempts,
                ep.hitl_exchanges,
                ep.violations.len()
            );
            for v in &ep.violations {
                let at = v.step.map(|s| format!(" at step {s}")).unwrap_or_default();
                println!("  {:?}{at}: {}", v.kind, v.message);
            }
        }
        violations += report.violation_count();
        results.extend(report.derived_results());
    }
    let rates = planweave_core::bench::actor_failure_rate(&results);
    for (actor, r) in &rates.per_actor {
        println!("{actor:<26} success {:>4}  failure {:>4}  {:>6.2}%", r.successes, r.failures, r.rate);
    }
    println!("{} episodes, {violations} violations", results.len());
    Ok(if violations == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

async fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Validate { run_files, graph } => cmd_validate(&run_files, graph.as_deref()),
        Command::Run(args) => cmd_run(args).await,
        Command::Bench(args) => tokio::task::block_in_place(|| cmd_bench(args)),
        Command::Serve { addr, out } => cmd_serve(addr, out).await,
        Command::Replay { logs } => cmd_replay(&logs),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,planweave_service=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

//! One episode from a run file, with logs and artifacts under an output
//! directory. Shared by the command line and the control service.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::episode::{run_episode, EpisodeEnv, EpisodeError, EpisodeOptions, EpisodeRun};
use super::hitl::{ConsoleHitl, DefaultHitl, HitlChannel, QuestionBoard, DEFAULT_HITL_TIMEOUT};
use super::policy::{Policy, PolicyError};
use crate::actors::harness::harness_for;
use crate::actors::ActorRegistry;
use crate::llm::{backend_from_selector, LlmError, PromptSet};
use crate::log::{EventSink, JsonlSink, MonotonicClock, TeeSink};
use crate::model::TopologyGraph;
use crate::taskio::{load_task, TaskError};

pub const EPISODE_LOG_FILE: &str = "episode.jsonl";

#[derive(Debug, Clone)]
pub struct LaunchRequest {
    pub run_path: PathBuf,
    pub policy: Policy,
    /// Overrides the run file's backend selector.
    pub backend: Option<String>,
    /// Episode files go to `out/<episode_id>/`.
    pub out: PathBuf,
    pub episode_id: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("preparing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub struct Launched {
    pub episode_id: String,
    pub log_path: PathBuf,
    pub outcome: Result<EpisodeRun, EpisodeError>,
}

/// Episode id used when the request does not name one.
pub fn default_episode_id(task_id: &str, policy: &Policy) -> String {
    match policy.seed() {
        Some(seed) => format!("{task_id}-{}-{seed}", policy.label()),
        None => format!("{task_id}-{}", policy.label()),
    }
}

/// Runs the episode. With a question board, human questions go there and
/// time out into the default answer; without one the default answer is
/// used directly. Every record also goes to `observer` when given.
pub fn launch(
    request: &LaunchRequest,
    board: Option<Box<dyn QuestionBoard>>,
    observer: Option<&mut dyn EventSink>,
) -> Result<Launched, LaunchError> {
    let graph = TopologyGraph::featurization();
    request.policy.validate(&graph)?;
    let mut task = load_task(&request.run_path)?;
    let episode_id = request
        .episode_id
        .clone()
        .unwrap_or_else(|| default_episode_id(&task.id, &request.policy));
    let root = request.out.join(&episode_id);
    fs::create_dir_all(&root).map_err(|source| LaunchError::Io {
        path: root.clone(),
        source,
    })?;
    task.layout = task.layout.rebased(&root);

    let planner = &task.run.planner;
    let base = request.run_path.parent().unwrap_or(Path::new("."));
    let selector = request.backend.as_deref().unwrap_or(&planner.llm);
    let mut backend = backend_from_selector(selector, base, planner.model.clone(), planner.api_key_env.as_deref())?;
    let mut harness = harness_for(&task.harness_config(), &task.codebase, &root);

    let mut fallback = DefaultHitl::default();
    if let Some(answer) = &planner.default_hitl_answer {
        fallback.answer = answer.clone();
    }
    let mut hitl: Box<dyn HitlChannel> = match board {
        Some(board) => {
            let timeout = planner
                .hitl_timeout_secs
                .map(Duration::from_secs)
                .unwrap_or(DEFAULT_HITL_TIMEOUT);
            Box::new(ConsoleHitl::new(board, timeout, fallback.answer.clone()))
        }
        None => Box::new(fallback),
    };

    let log_path = root.join(EPISODE_LOG_FILE);
    let file = File::create(&log_path).map_err(|source| LaunchError::Io {
        path: log_path.clone(),
        source,
    })?;
    let mut file_sink = JsonlSink::new(BufWriter::new(file));
    let mut sinks: Vec<&mut dyn EventSink> = vec![&mut file_sink];
    if let Some(o) = observer {
        sinks.push(o);
    }
    let mut sink = TeeSink::new(sinks);

    let mut options = EpisodeOptions::for_task(&task);
    options.episode_id = episode_id.clone();
    options.run_label = episode_id.clone();
    let outcome = run_episode(
        EpisodeEnv {
            task: &task,
            graph: &graph,
            registry: &ActorRegistry::featurization(),
            prompts: &PromptSet::defaults(),
            backend: &mut *backend,
            harness: &mut *harness,
            hitl: &mut *hitl,
            sink: &mut sink,
            clock: &MonotonicClock::new(),
        },
        request.policy.clone(),
        &options,
    );
    Ok(Launched {
        episode_id,
        log_path,
        outcome,
    })
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};

use planweave_core::control::{
    AnswerAccepted, ArtifactBundle, ArtifactFile, EpisodeInfo, EpisodeState, QuestionView,
};
use planweave_core::orchestrator::{Launched, QuestionBoard};
use planweave_core::taskio::ArtifactManifest;
use tokio::sync::watch;

use crate::ApiError;

struct Pending {
    view: QuestionView,
    reply: mpsc::Sender<String>,
}

struct Entry {
    info: EpisodeInfo,
    lines: Vec<String>,
    pending: BTreeMap<u64, Pending>,
    manifest: Option<ArtifactManifest>,
    /// Bumped on every new line and on completion.
    tick: watch::Sender<usize>,
}

impl Entry {
    fn done(&self) -> bool {
        self.info.state != EpisodeState::Running
    }
}

#[derive(Default)]
struct Inner {
    episodes: BTreeMap<String, Entry>,
    next_question: u64,
}

/// Episodes known to the service, their event lines and open questions.
pub struct Registry {
    inner: Mutex<Inner>,
    out: PathBuf,
}

impl Registry {
    pub fn new(out: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::default(),
            out: out.into(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Reserves `wanted`, or the first free `base`, `base-2`, ... .
    pub(crate) fn register(&self, wanted: Option<&str>, base: &str, info: EpisodeInfo) -> Result<String, ApiError> {
        let mut inner = self.lock();
        let id = match wanted {
            Some(id) if inner.episodes.contains_key(id) => {
                return Err(ApiError::Conflict(format!("episode `{id}` already exists")))
            }
            Some(id) => id.to_owned(),
            None => (1..)
                .map(|n| if n == 1 { base.to_owned() } else { format!("{base}-{n}") })
                .find(|id| !inner.episodes.contains_key(id))
                .expect("unbounded search"),
        };
        let (tick, _) = watch::channel(0);
        inner.episodes.insert(
            id.clone(),
            Entry {
                info: EpisodeInfo {
                    episode_id: id.clone(),
                    ..info
                },
                lines: Vec::new(),
                pending: BTreeMap::new(),
                manifest: None,
                tick,
            },
        );
        Ok(id)
    }

    pub(crate) fn push_line(&self, episode_id: &str, line: String) {
        let mut inner = self.lock();
        if let Some(e) = inner.episodes.get_mut(episode_id) {
            e.lines.push(line);
            let n = e.lines.len();
            e.tick.send_replace(n);
        }
    }

    pub(crate) fn finish(&self, episode_id: &str, launched: Result<Launched, String>) {
        let mut inner = self.lock();
        let Some(e) = inner.episodes.get_mut(episode_id) else { return };
        match launched {
            Ok(l) => {
                e.info.log_path = Some(l.log_path);
                match l.outcome {
                    Ok(run) => {
                        e.info.state = EpisodeState::Finished;
                        e.info.result = Some(run.result);
                        e.manifest = run.manifest;
                    }
                    Err(err) => {
                        e.info.state = EpisodeState::Failed;
                        e.info.error = Some(err.to_string());
                        let run = err.run();
                        e.info.result = Some(run.result.clone());
                        e.manifest = run.manifest.clone();
                    }
                }
            }
            Err(err) => {
                e.info.state = EpisodeState::Failed;
                e.info.error = Some(err);
            }
        }
        e.pending.clear();
        let n = e.lines.len();
        e.tick.send_replace(n);
    }

    pub fn episodes(&self) -> Vec<EpisodeInfo> {
        self.lock().episodes.values().map(|e| e.info.clone()).collect()
    }

    pub fn episode(&self, id: &str) -> Result<EpisodeInfo, ApiError> {
        self.lock()
            .episodes
            .get(id)
            .map(|e| e.info.clone())
            .ok_or_else(|| ApiError::unknown_episode(id))
    }

    /// A change receiver, subscribed before any lines are read.
    pub(crate) fn subscribe(&self, id: &str) -> Result<watch::Receiver<usize>, ApiError> {
        self.lock()
            .episodes
            .get(id)
            .map(|e| e.tick.subscribe())
            .ok_or_else(|| ApiError::unknown_episode(id))
    }

    /// Lines from `from` on, and whether the episode has ended.
    pub(crate) fn lines_from(&self, id: &str, from: usize) -> (Vec<String>, bool) {
        let inner = self.lock();
        match inner.episodes.get(id) {
            Some(e) => (e.lines.get(from..).unwrap_or_default().to_vec(), e.done()),
            None => (Vec::new(), true),
        }
    }

    pub fn questions(&self, id: Option<&str>) -> Result<Vec<QuestionView>, ApiError> {
        let inner = self.lock();
        match id {
            Some(id) => inner
                .episodes
                .get(id)
                .map(|e| e.pending.values().map(|p| p.view.clone()).collect())
                .ok_or_else(|| ApiError::unknown_episode(id)),
            None => Ok(inner
                .episodes
                .values()
                .flat_map(|e| e.pending.values().map(|p| p.view.clone()))
                .collect()),
        }
    }

    pub fn answer(&self, episode_id: &str, question_id: Option<u64>, answer: String) -> Result<AnswerAccepted, ApiError> {
        if answer.trim().is_empty() {
            return Err(ApiError::BadRequest("answer must not be empty".into()));
        }
        let mut inner = self.lock();
        let entry = inner
            .episodes
            .get_mut(episode_id)
            .ok_or_else(|| ApiError::unknown_episode(episode_id))?;
        let qid = match question_id {
            Some(q) => q,
            None => *entry
                .pending
                .keys()
                .next()
                .ok_or_else(|| ApiError::Conflict(format!("episode `{episode_id}` has no pending question")))?,
        };
        let pending = entry
            .pending
            .remove(&qid)
            .ok_or_else(|| ApiError::Conflict(format!("question {qid} is not pending")))?;
        pending
            .reply
            .send(answer)
            .map_err(|_| ApiError::Conflict(format!("question {qid} is no longer awaited")))?;
        Ok(AnswerAccepted {
            episode_id: episode_id.to_owned(),
            question_id: qid,
        })
    }

    pub fn artifacts(&self, id: &str) -> Result<ArtifactBundle, ApiError> {
        let manifest = {
            let inner = self.lock();
            let entry = inner.episodes.get(id).ok_or_else(|| ApiError::unknown_episode(id))?;
            entry
                .manifest
                .clone()
                .ok_or_else(|| ApiError::NotFound(format!("episode `{id}` has no artifacts yet")))?
        };
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| ApiError::Internal(format!("{}: {e}", p.display())));
        let files = manifest
            .entries
            .iter()
            .map(|m| {
                Ok(ArtifactFile {
                    kind: m.kind.clone(),
                    path: m.path.clone(),
                    content: read(&m.path)?,
                })
            })
            .collect::<Result<_, ApiError>>()?;
        Ok(ArtifactBundle {
            episode_id: id.to_owned(),
            files,
            patch: read(&manifest.patch_bundle)?,
        })
    }

    pub(crate) fn board(self: &Arc<Self>, episode_id: &str) -> Box<dyn QuestionBoard> {
        Box::new(EpisodeBoard {
            registry: Arc::clone(self),
            episode_id: episode_id.to_owned(),
        })
    }
}

struct EpisodeBoard {
    registry: Arc<Registry>,
    episode_id: String,
}

impl QuestionBoard for EpisodeBoard {
    fn post(&self, question: &str, context: &str) -> (u64, mpsc::Receiver<String>) {
        let (tx, rx) = mpsc::channel();
        let mut inner = self.registry.lock();
        inner.next_question += 1;
        let id = inner.next_question;
        if let Some(e) = inner.episodes.get_mut(&self.episode_id) {
            e.pending.insert(
                id,
                Pending {
                    view: QuestionView {
                        episode_id: self.episode_id.clone(),
                        question_id: id,
                        question: question.to_owned(),
                        context: context.to_owned(),
                    },
                    reply: tx,
                },
            );
        }
        tracing::info!(episode = %self.episode_id, question = id, "question waiting for an answer");
        (id, rx)
    }

    fn withdraw(&self, question_id: u64) {
        let mut inner = self.registry.lock();
        if let Some(e) = inner.episodes.get_mut(&self.episode_id) {
            e.pending.remove(&question_id);
        }
    }
}

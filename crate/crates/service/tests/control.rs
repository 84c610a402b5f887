use std::path::{Path, PathBuf};
use std::time::Duration;

use futures::StreamExt;
use planweave_client::{ClientError, ControlClient};
use planweave_core::control::{AnswerRequest, EpisodeState, HitlRoute, StartEpisode};
use planweave_core::log::LogRecord;
use planweave_core::model::{HitlMode, StepOutcome};
use planweave_core::orchestrator::Policy;
use planweave_service::{bind, serve, Registry, ServiceError};
use reqwest::StatusCode;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tasks").join(name)
}

async fn start_server(out: &Path) -> ControlClient {
    let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let registry = Registry::new(out);
    tokio::spawn(serve(listener, registry, std::future::pending()));
    ControlClient::new(format!("http://{addr}"))
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}

async fn collect(client: &ControlClient, id: &str) -> Vec<LogRecord> {
    let stream = client.events(id).await.unwrap();
    tokio::time::timeout(Duration::from_secs(20), stream.map(Result::unwrap).collect())
        .await
        .expect("event stream ends with the episode")
}

async fn wait_for_question(client: &ControlClient, id: &str) -> u64 {
    for _ in 0..200 {
        if let Some(q) = client.questions(Some(id)).await.unwrap().first() {
            return q.question_id;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("no question was posted");
}

fn hitl_modes(records: &[LogRecord]) -> Vec<HitlMode> {
    records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => match &s.outcome {
                StepOutcome::Hitl(h) => Some(h.mode),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn console_answer_unblocks_the_episode() {
    let out = tempfile::tempdir().unwrap();
    let client = start_server(out.path()).await;
    client.health().await.unwrap();

    let info = client
        .start_episode(&StartEpisode {
            run_path: fixture("t1").join("run.yaml"),
            policy: Policy::Planner,
            backend: None,
            episode_id: None,
            hitl: HitlRoute::Console,
        })
        .await
        .unwrap();
    assert_eq!(info.state, EpisodeState::Running);
    let id = info.episode_id.clone();

    let qid = wait_for_question(&client, &id).await;
    assert_eq!(client.questions(None).await.unwrap().len(), 1);
    let accepted = client
        .answer(&AnswerRequest {
            episode_id: id.clone(),
            question_id: Some(qid),
            answer: "window_days should be 30".into(),
        })
        .await
        .unwrap();
    assert_eq!(accepted.question_id, qid);

    let records = collect(&client, &id).await;
    assert_eq!(hitl_modes(&records), [HitlMode::Console]);
    assert!(matches!(records.last(), Some(LogRecord::EpisodeEnd(r)) if r.is_success()));

    let stale = client
        .answer(&AnswerRequest {
            episode_id: id.clone(),
            question_id: Some(qid),
            answer: "again".into(),
        })
        .await
        .unwrap_err();
    assert_eq!(stale.status(), Some(StatusCode::CONFLICT));

    let info = client.episode(&id).await.unwrap();
    assert_eq!(info.state, EpisodeState::Finished);
    let bundle = client.artifacts(&id).await.unwrap();
    assert_eq!(bundle.files.len(), 3);
    assert!(bundle.patch.contains("window_days: 30"));
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_carries_every_step() {
    let out = tempfile::tempdir().unwrap();
    let client = start_server(out.path()).await;
    let info = client
        .start_episode(&StartEpisode {
            run_path: fixture("t0").join("run.yaml"),
            policy: Policy::sequential_default(),
            backend: None,
            episode_id: Some("seq".into()),
            hitl: HitlRoute::Default,
        })
        .await
        .unwrap();
    let records = collect(&client, &info.episode_id).await;
    let steps = records.iter().filter(|r| matches!(r, LogRecord::Step(_))).count();
    assert_eq!(steps, 6);
    assert!(matches!(records.first(), Some(LogRecord::EpisodeStart { .. })));
    assert!(matches!(records.last(), Some(LogRecord::EpisodeEnd(_))));

    // the service's copy of the log matches the stream
    let log = client.episode("seq").await.unwrap().log_path.unwrap();
    let on_disk = planweave_core::log::read_log(std::io::BufReader::new(std::fs::File::open(log).unwrap())).unwrap();
    assert_eq!(on_disk, records);

    let dup = client
        .start_episode(&StartEpisode {
            run_path: fixture("t0").join("run.yaml"),
            policy: Policy::sequential_default(),
            backend: None,
            episode_id: Some("seq".into()),
            hitl: HitlRoute::Default,
        })
        .await
        .unwrap_err();
    assert_eq!(dup.status(), Some(StatusCode::CONFLICT));
}

#[tokio::test(flavor = "multi_thread")]
async fn unanswered_question_falls_back_to_default() {
    let out = tempfile::tempdir().unwrap();
    let task = out.path().join("t1");
    copy_dir(&fixture("t1"), &task);
    let run = std::fs::read_to_string(task.join("run.yaml")).unwrap();
    let run = run.replace("planner:\n", "planner:\n  hitl_timeout_secs: 1\n");
    std::fs::write(task.join("run.yaml"), run).unwrap();

    let client = start_server(&out.path().join("runs")).await;
    let info = client
        .start_episode(&StartEpisode {
            run_path: task.join("run.yaml"),
            policy: Policy::Planner,
            backend: None,
            episode_id: None,
            hitl: HitlRoute::Console,
        })
        .await
        .unwrap();
    let records = collect(&client, &info.episode_id).await;
    assert_eq!(hitl_modes(&records), [HitlMode::Default]);
    assert!(records
        .iter()
        .any(|r| matches!(r, LogRecord::Warning { message } if message.contains("default answer"))));
    assert!(matches!(records.last(), Some(LogRecord::EpisodeEnd(r)) if r.is_success()));
}

#[tokio::test]
async fn unknown_episode_is_not_found() {
    let out = tempfile::tempdir().unwrap();
    let client = start_server(out.path()).await;
    let err = client
        .answer(&AnswerRequest {
            episode_id: "nope".into(),
            question_id: None,
            answer: "x".into(),
        })
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::NOT_FOUND));
    assert!(matches!(client.episode("nope").await, Err(ClientError::Status { .. })));
}

#[tokio::test]
async fn second_bind_reports_port_in_use() {
    let first = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = first.local_addr().unwrap();
    assert!(matches!(bind(addr).await, Err(ServiceError::PortInUse(a)) if a == addr));
    drop(first);
}

#[tokio::test]
async fn unreachable_service_is_reported() {
    let client = ControlClient::new("http://127.0.0.1:9");
    assert!(matches!(client.health().await, Err(ClientError::Unreachable { .. })));
}

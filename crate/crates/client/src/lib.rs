//! Typed HTTP client for the control service.

use futures::{Stream, StreamExt};
use planweave_core::control::{
    AnswerAccepted, AnswerRequest, ArtifactBundle, EpisodeInfo, ErrorBody, QuestionView, StartEpisode,
};
use planweave_core::log::LogRecord;
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("control service at {base} is unreachable: {source}")]
    Unreachable {
        base: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("{status}: {message}")]
    Status { status: StatusCode, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("bad event line: {0}")]
    Decode(#[from] serde_json::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            Self::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlClient {
    base: String,
    http: reqwest::Client,
}

impl ControlClient {
    /// `base` is like `http://127.0.0.1:8765`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn connect_error(&self, e: reqwest::Error) -> ClientError {
        if e.is_connect() || e.is_timeout() {
            ClientError::Unreachable {
                base: self.base.clone(),
                source: e,
            }
        } else {
            ClientError::Transport(e)
        }
    }

    async fn checked(&self, response: Result<Response, reqwest::Error>) -> Result<Response, ClientError> {
        let response = response.map_err(|e| self.connect_error(e))?;
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let text = response.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Status { status, message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let response = self.checked(self.http.get(self.url(path)).send().await).await?;
        Ok(response.json().await?)
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        self.checked(self.http.get(self.url("/health")).send().await).await.map(drop)
    }

    pub async fn start_episode(&self, request: &StartEpisode) -> Result<EpisodeInfo, ClientError> {
        let response = self.http.post(self.url("/episodes")).json(request).send().await;
        Ok(self.checked(response).await?.json().await?)
    }

    pub async fn episodes(&self) -> Result<Vec<EpisodeInfo>, ClientError> {
        self.get("/episodes").await
    }

    pub async fn episode(&self, id: &str) -> Result<EpisodeInfo, ClientError> {
        self.get(&format!("/episodes/{id}")).await
    }

    /// Pending questions of one episode, or of all episodes.
    pub async fn questions(&self, episode_id: Option<&str>) -> Result<Vec<QuestionView>, ClientError> {
        match episode_id {
            Some(id) => self.get(&format!("/episodes/{id}/questions")).await,
            None => self.get("/questions").await,
        }
    }

    pub async fn answer(&self, request: &AnswerRequest) -> Result<AnswerAccepted, ClientError> {
        let response = self.http.post(self.url("/answers")).json(request).send().await;
        Ok(self.checked(response).await?.json().await?)
    }

    pub async fn artifacts(&self, id: &str) -> Result<ArtifactBundle, ClientError> {
        self.get(&format!("/episodes/{id}/artifacts")).await
    }

    /// The episode's records from the start, ending when the episode does.
    pub async fn events(&self, id: &str) -> Result<impl Stream<Item = Result<LogRecord, ClientError>>, ClientError> {
        let response = self
            .checked(self.http.get(self.url(&format!("/episodes/{id}/events"))).send().await)
            .await?;
        let mut bytes = response.bytes_stream();
        Ok(async_stream::try_stream! {
            let mut buf: Vec<u8> = Vec::new();
            while let Some(chunk) = bytes.next().await {
                buf.extend_from_slice(&chunk?);
                while let Some(pos) = buf.iter().position(|b| *b == b'\n') {
                    let line: Vec<u8> = buf.drain(..=pos).collect();
                    if line.iter().any(|b| !b.is_ascii_whitespace()) {
                        yield serde_json::from_slice::<LogRecord>(&line)?;
                    }
                }
            }
        })
    }
}

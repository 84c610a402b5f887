use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{HitlExchange, HitlMode};

pub const DEFAULT_HITL_ANSWER: &str = "Human help is not available for this run.";
pub const DEFAULT_HITL_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HitlError {
    #[error("hitl question must not be empty")]
    EmptyQuestion,
    #[error("no answer within {0:?}")]
    Timeout(Duration),
    #[error("question board closed")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingQuestion {
    pub question_id: u64,
    pub question: String,
    pub context: String,
}

/// Where console-mode questions are published and answered.
pub trait QuestionBoard: Send {
    /// Publishes a question; the receiver yields the answer.
    fn post(&self, question: &str, context: &str) -> (u64, Receiver<String>);
    /// Removes a question nobody answered in time.
    fn withdraw(&self, question_id: u64);
}

pub trait HitlChannel: Send {
    /// Blocks until a human answers, or fails.
    fn request(&mut self, question: &str, context: &str) -> Result<(String, HitlMode), HitlError>;
    fn default_answer(&self) -> &str;
}

/// Benchmark behaviour: every question gets the configured string.
#[derive(Debug, Clone)]
pub struct DefaultHitl {
    pub answer: String,
}

impl Default for DefaultHitl {
    fn default() -> Self {
        Self {
            answer: DEFAULT_HITL_ANSWER.to_owned(),
        }
    }
}

impl HitlChannel for DefaultHitl {
    fn request(&mut self, _question: &str, _context: &str) -> Result<(String, HitlMode), HitlError> {
        Ok((self.answer.clone(), HitlMode::Default))
    }

    fn default_answer(&self) -> &str {
        &self.answer
    }
}

pub struct ConsoleHitl {
    board: Box<dyn QuestionBoard>,
    timeout: Duration,
    default_answer: String,
}

impl ConsoleHitl {
    pub fn new(board: Box<dyn QuestionBoard>, timeout: Duration, default_answer: impl Into<String>) -> Self {
        Self {
            board,
            timeout,
            default_answer: default_answer.into(),
        }
    }
}

impl HitlChannel for ConsoleHitl {
    fn request(&mut self, question: &str, context: &str) -> Result<(String, HitlMode), HitlError> {
        let (id, answers) = self.board.post(question, context);
        match answers.recv_timeout(self.timeout) {
            Ok(answer) => Ok((answer, HitlMode::Console)),
            Err(RecvTimeoutError::Timeout) => {
                self.board.withdraw(id);
                Err(HitlError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.board.withdraw(id);
                Err(HitlError::Disconnected)
            }
        }
    }

    fn default_answer(&self) -> &str {
        &self.default_answer
    }
}

/// An exchange plus the reason it fell back to the default answer, if it did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitlAnswered {
    pub exchange: HitlExchange,
    pub fallback: Option<HitlError>,
}

pub fn hitl_ask(channel: &mut dyn HitlChannel, question: &str, context: &str) -> Result<HitlAnswered, HitlError> {
    if question.trim().is_empty() {
        return Err(HitlError::EmptyQuestion);
    }
    let (answer, mode, fallback) = match channel.request(question, context) {
        Ok((answer, mode)) => (answer, mode, None),
        Err(e) => (channel.default_answer().to_owned(), HitlMode::Default, Some(e)),
    };
    Ok(HitlAnswered {
        exchange: HitlExchange {
            question: question.to_owned(),
            context: context.to_owned(),
            answer,
            mode,
        },
        fallback,
    })
}

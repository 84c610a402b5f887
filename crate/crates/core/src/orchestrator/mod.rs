//! Runs one episode under a policy: decides steps, mediates actor inputs,
//! handles human questions and decides termination.

mod decision;
mod episode;
mod executor;
mod hitl;
mod launch;
mod policy;
mod render;

pub use decision::{parse_decision, truncate_words, DecisionArgs, DecisionError, PlannerDecision, MAX_PLANNER_INPUT_WORDS};
pub use episode::{run_episode, EpisodeEnv, EpisodeError, EpisodeOptions, EpisodeRun};
pub use executor::{actor_env, assemble_input, NOT_AVAILABLE};
pub use hitl::{
    hitl_ask, ConsoleHitl, DefaultHitl, HitlAnswered, HitlChannel, HitlError, PendingQuestion, QuestionBoard,
    DEFAULT_HITL_ANSWER, DEFAULT_HITL_TIMEOUT,
};
pub use launch::{default_episode_id, launch, LaunchError, LaunchRequest, Launched, EPISODE_LOG_FILE};
pub use policy::{DecideError, Decider, Decision, Policy, PolicyError, MAX_REASKS, PLANNER_TAG};
pub use render::{render_actor_status, render_previous_step, render_transitions, ERROR_TAIL_CHARS};

//! Planner-guided orchestration of code-generation actors over a
//! constrained topology, with baselines and a benchmark harness.

pub mod actors;
pub mod bench;
pub mod control;
pub mod llm;
pub mod log;
pub mod model;
pub mod orchestrator;
pub mod replay;
pub mod taskio;

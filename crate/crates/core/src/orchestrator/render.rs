//! Text the planner sees: transitions, actor statuses and the previous step.

use std::fmt::Write as _;

use crate::model::{names, ShortTermMemory, StepOutcome, StepRecord, TopologyGraph};

/// Characters of error text kept when describing a failed step.
pub const ERROR_TAIL_CHARS: usize = 2000;

pub fn render_transitions(graph: &TopologyGraph) -> String {
    let mut out = format!("START -> {}\n", graph.entry);
    for (from, to) in &graph.transitions {
        let mut targets: Vec<&str> = to.iter().map(|a| a.as_str()).collect();
        targets.push(names::HITL);
        let _ = writeln!(out, "{from} -> {}", targets.join(" OR "));
    }
    let markers: Vec<&str> = graph.terminal_markers.iter().map(|a| a.as_str()).collect();
    let _ = write!(out, "{} -> END (once every actor has succeeded)", markers.join(" AND "));
    out
}

pub fn render_actor_status(graph: &TopologyGraph, memory: &ShortTermMemory) -> String {
    graph
        .actors
        .iter()
        .map(|a| {
            let status = match memory.status_of(a) {
                Some(true) => "True",
                Some(false) => "False",
                None => "Not called yet",
            };
            format!("{a}: {status}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn tail(text: &str, max: usize) -> &str {
    let count = text.chars().count();
    if count <= max {
        return text;
    }
    let skip = count - max;
    let start = text.char_indices().nth(skip).map(|(i, _)| i).unwrap_or(0);
    &text[start..]
}

fn describe_step(step: &StepRecord) -> String {
    match &step.outcome {
        StepOutcome::Actor(o) => {
            let mut out = format!(
                "actor: {}\nsuccess: {}\nattempts: {}\n",
                step.target,
                if o.success { "True" } else { "False" },
                o.attempts
            );
            let _ = writeln!(out, "planner_input: {}", step.planner_input);
            let _ = writeln!(out, "reason: {}", o.reason_tag.as_deref().unwrap_or(""));
            let _ = writeln!(out, "fix: {}", o.fix_tag.as_deref().unwrap_or(""));
            if o.terminated {
                out.push_str("terminated: True (the actor asked the planner to resolve the problem elsewhere)\n");
            }
            if !o.error_log.is_empty() {
                let _ = writeln!(out, "errors:\n{}", tail(&o.error_log.join("\n"), ERROR_TAIL_CHARS));
            }
            out
        }
        StepOutcome::Hitl(h) => format!(
            "tool: hitl\nquestion: {}\nanswer: {}\nmode: {}\n",
            h.question,
            h.answer,
            serde_json::to_value(h.mode).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
        ),
    }
}

/// The most recent step; after a tool call the last actor step follows.
pub fn render_previous_step(memory: &ShortTermMemory) -> String {
    let Some(last) = memory.last_step() else {
        return "None (this is the first step of the episode)".to_owned();
    };
    let mut out = describe_step(last);
    if matches!(last.outcome, StepOutcome::Hitl(_)) {
        if let Some(actor_step) = memory.steps().iter().rev().find(|s| matches!(s.outcome, StepOutcome::Actor(_))) {
            out.push_str("\nLAST ACTOR STEP:\n");
            out.push_str(&describe_step(actor_step));
        }
    }
    out.trim_end().to_owned()
}

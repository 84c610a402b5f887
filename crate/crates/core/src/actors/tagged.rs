use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const TERMINATE: &str = "TERMINATE";

static REASON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<reason>(.*?)</reason>").unwrap());
static FIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<fix>(.*?)</fix>").unwrap());
static FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_+.-]*[ \t]*\r?\n(.*?)```").unwrap());
static DEF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)\bdef\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedOutput {
    pub reason: Option<String>,
    pub fix: Option<String>,
    pub payload: String,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaggedError {
    #[error("no fenced code block found in the output")]
    NoPayload,
}

/// The `<reason>`/`<fix>` tags alone, plus the byte offset after the last
/// one. Usable even when the payload is missing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tags {
    pub reason: Option<String>,
    pub fix: Option<String>,
    pub end: usize,
}

impl Tags {
    pub fn terminated(&self) -> bool {
        self.fix.as_deref().is_some_and(|f| f.contains(TERMINATE))
    }
}

pub fn parse_tags(text: &str) -> Tags {
    let reason = REASON.captures(text);
    let fix = FIX.captures(text);
    let end = [&reason, &fix]
        .iter()
        .filter_map(|c| c.as_ref().map(|c| c.get(0).unwrap().end()))
        .max()
        .unwrap_or(0);
    Tags {
        reason: reason.map(|c| c[1].trim().to_owned()),
        fix: fix.map(|c| c[1].trim().to_owned()),
        end,
    }
}

/// Extracts the first reason/fix tags and the first fenced block after them.
pub fn parse_tagged(text: &str) -> Result<TaggedOutput, TaggedError> {
    let tags = parse_tags(text);
    let payload = FENCE
        .captures(&text[tags.end..])
        .map(|c| {
            let body = &c[1];
            body.strip_suffix('\n').map(|b| b.strip_suffix('\r').unwrap_or(b)).unwrap_or(body).to_owned()
        })
        .ok_or(TaggedError::NoPayload)?;
    let terminated = tags.terminated();
    Ok(TaggedOutput {
        reason: tags.reason,
        fix: tags.fix,
        payload,
        terminated,
    })
}

/// Names of every `def name(` in `code`.
pub fn declared_functions(code: &str) -> BTreeSet<String> {
    DEF.captures_iter(code).map(|c| c[1].to_owned()).collect()
}

/// Renders a tagged output back into the wire format.
pub fn format_tagged(output: &TaggedOutput, language: &str) -> String {
    format!(
        "<reason>{}</reason>\n<fix>{}</fix>\n```{language}\n{}\n```\n",
        output.reason.as_deref().unwrap_or_default(),
        output.fix.as_deref().unwrap_or_default(),
        output.payload
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blank_first_attempt_tags() {
        let out = parse_tagged("<reason></reason><fix></fix>\n```python\nX\n```").unwrap();
        assert_eq!(
            out,
            TaggedOutput {
                reason: Some(String::new()),
                fix: Some(String::new()),
                payload: "X".into(),
                terminated: false
            }
        );
    }

    #[test]
    fn terminate_in_fix() {
        let out = parse_tagged("<reason>bad schema</reason><fix>TERMINATE</fix>```python\n# none\n```").unwrap();
        assert!(out.terminated);
        assert_eq!(out.reason.as_deref(), Some("bad schema"));
        assert_eq!(out.payload, "# none");
    }

    #[test]
    fn no_fence_is_no_payload() {
        assert_eq!(parse_tagged("<reason>x</reason> just prose"), Err(TaggedError::NoPayload));
    }

    #[test]
    fn untagged_fenced_output() {
        let out = parse_tagged("Here you go:\n```yaml\nname: a\n```\n").unwrap();
        assert_eq!(out.reason, None);
        assert_eq!(out.payload, "name: a");
    }

    #[test]
    fn fence_before_tags_is_skipped() {
        let text = "```\nignored\n```\n<reason>r</reason><fix>f</fix>\n```python\nkept\n```";
        assert_eq!(parse_tagged(text).unwrap().payload, "kept");
    }

    #[test]
    fn finds_function_names() {
        let code = "def load(spark):\n    pass\n\nasync def  _x ( ):\n    pass\nundef y(";
        let names: Vec<_> = declared_functions(code).into_iter().collect();
        assert_eq!(names, ["_x", "load"]);
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(
            reason in "[a-zA-Z .]{0,30}",
            fix in "[a-zA-Z .]{0,30}",
            payload in "[a-zA-Z0-9_ =()\n]{1,80}",
        ) {
            let payload = payload.trim_matches('\n').to_owned();
            prop_assume!(!payload.is_empty());
            let original = TaggedOutput {
                reason: Some(reason.trim().to_owned()),
                fix: Some(fix.trim().to_owned()),
                terminated: fix.contains(TERMINATE),
                payload,
            };
            prop_assert_eq!(parse_tagged(&format_tagged(&original, "python")).unwrap(), original);
        }
    }
}

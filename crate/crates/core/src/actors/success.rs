//! Success predicates, one per [`SuccessKind`].
//!
//! Every evaluator is a pure function of the payload, the task context and
//! the harness result handed to it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::harness::{HarnessError, HarnessReport};
use super::tagged::declared_functions;
use crate::model::SuccessKind;
use crate::taskio::{ConfigSchema, SourceFile};

/// At most this many test scenarios.
pub const MAX_SCENARIOS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub success: bool,
    pub evidence: String,
}

impl Verdict {
    fn pass(evidence: impl Into<String>) -> Self {
        Self {
            success: true,
            evidence: evidence.into(),
        }
    }

    fn fail(evidence: impl Into<String>) -> Self {
        Self {
            success: false,
            evidence: evidence.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("evaluator error: {0}")]
pub struct EvaluatorError(pub String);

pub struct EvalContext<'a> {
    pub config_schema: &'a ConfigSchema,
    pub reusable_sources: &'a [SourceFile],
    pub required_functions: &'a BTreeSet<String>,
    /// Functions declared by the current template or feature script.
    pub script_functions: &'a BTreeSet<String>,
    pub harness: Option<&'a Result<HarnessReport, HarnessError>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedUtil {
    pub method_name: String,
    pub method_signature: String,
    pub method_import: String,
    pub method_description: String,
}

/// Strips the `{ [ ... ] }` wrapper some prompts show around arrays.
fn unwrap_array(text: &str) -> &str {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
        if inner.trim_start().starts_with('[') {
            return inner.trim();
        }
    }
    t
}

pub fn parse_selected_utils(payload: &str) -> Result<Vec<SelectedUtil>, String> {
    serde_json::from_str(unwrap_array(payload)).map_err(|e| format!("utility list is not valid JSON: {e}"))
}

/// `from a.b import c, d` → (`a/b`, [c, d]).
fn split_import(stmt: &str) -> Option<(String, Vec<String>)> {
    let rest = stmt.trim().strip_prefix("from ")?;
    let (module, names) = rest.split_once(" import ")?;
    let module = module.trim();
    if module.is_empty() || module.starts_with('.') {
        return None;
    }
    let names: Vec<String> = names
        .split(',')
        .map(|n| n.trim().split(" as ").next().unwrap_or_default().trim().to_owned())
        .filter(|n| !n.is_empty())
        .collect();
    (!names.is_empty()).then(|| (module.replace('.', "/"), names))
}

fn defines(source: &str, name: &str) -> bool {
    declared_functions(source).contains(name)
        || source.lines().any(|l| {
            let l = l.trim_start();
            l.strip_prefix("class ")
                .is_some_and(|r| r.starts_with(name) && !r[name.len()..].starts_with(|c: char| c.is_alphanumeric() || c == '_'))
                || l.strip_prefix(name).is_some_and(|r| r.trim_start().starts_with('=') && !l.starts_with(' '))
        })
}

/// Checks that `stmt` resolves to a name defined in one of the sources.
pub fn resolve_import(stmt: &str, sources: &[SourceFile]) -> Result<(), String> {
    let (module, names) = split_import(stmt).ok_or_else(|| format!("`{stmt}` is not a `from X import Y` statement"))?;
    let candidates = [format!("{module}.py"), format!("{module}/__init__.py")];
    let source = sources
        .iter()
        .find(|s| candidates.iter().any(|c| s.relative == *c))
        .ok_or_else(|| format!("`{stmt}`: module `{module}` is not among the reusable code paths"))?;
    for name in names {
        if !defines(&source.content, &name) {
            return Err(format!("`{stmt}`: `{name}` is not defined in {}", source.relative));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestScenario {
    pub testcase_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub mocks: Vec<Value>,
}

pub fn parse_scenarios(payload: &str) -> Result<Vec<TestScenario>, String> {
    serde_json::from_str(unwrap_array(payload)).map_err(|e| format!("test case list is not valid JSON: {e}"))
}

fn harness_report<'a>(ctx: &'a EvalContext<'_>) -> Result<&'a HarnessReport, EvaluatorError> {
    match ctx.harness {
        Some(Ok(report)) => Ok(report),
        Some(Err(e)) => Err(EvaluatorError(e.to_string())),
        None => Err(EvaluatorError("no harness result supplied".into())),
    }
}

/// Decides whether an actor's payload meets its success criterion.
pub fn evaluate_success(kind: SuccessKind, payload: &str, ctx: &EvalContext<'_>) -> Result<Verdict, EvaluatorError> {
    Ok(match kind {
        SuccessKind::SchemaParse => match ctx.config_schema.check(payload) {
            Ok(()) => Verdict::pass("config parses and satisfies the declared schema"),
            Err(problems) => Verdict::fail(problems.join("\n")),
        },

        SuccessKind::ErrorFreeExecution => {
            let utils = match parse_selected_utils(payload) {
                Ok(u) => u,
                Err(e) => return Ok(Verdict::fail(e)),
            };
            let unresolved: Vec<String> = utils
                .iter()
                .filter_map(|u| resolve_import(&u.method_import, ctx.reusable_sources).err())
                .collect();
            if !unresolved.is_empty() {
                return Ok(Verdict::fail(unresolved.join("\n")));
            }
            if utils.is_empty() {
                return Ok(Verdict::pass("no utilities selected"));
            }
            let report = harness_report(ctx)?;
            if report.exit_ok {
                Verdict::pass(format!("{} utilities load without errors", utils.len()))
            } else {
                Verdict::fail(format!("loading utilities failed:\n{}", report.log))
            }
        }

        SuccessKind::FunctionsPresent => {
            let declared = declared_functions(payload);
            if ctx.required_functions.is_empty() {
                if declared.is_empty() {
                    Verdict::fail("template declares no functions")
                } else {
                    Verdict::pass(format!("template declares {} functions", declared.len()))
                }
            } else {
                let missing: Vec<&str> = ctx
                    .required_functions
                    .iter()
                    .filter(|f| !declared.contains(*f))
                    .map(String::as_str)
                    .collect();
                if missing.is_empty() {
                    Verdict::pass("all predefined functions present")
                } else {
                    Verdict::fail(format!("missing predefined functions: {}", missing.join(", ")))
                }
            }
        }

        SuccessKind::ScriptRunsAndWrites => {
            let report = harness_report(ctx)?;
            match (report.exit_ok, report.output_written) {
                (true, true) => Verdict::pass("script ran and wrote output"),
                (true, false) => Verdict::fail(format!("script exited cleanly but wrote no output\n{}", report.log)),
                (false, _) => Verdict::fail(format!("script failed:\n{}", report.log)),
            }
        }

        SuccessKind::ScenarioCountAndCoverage => {
            let scenarios = match parse_scenarios(payload) {
                Ok(s) => s,
                Err(e) => return Ok(Verdict::fail(e)),
            };
            if scenarios.is_empty() || scenarios.len() > MAX_SCENARIOS {
                return Ok(Verdict::fail(format!(
                    "{} test cases defined; expected between 1 and {MAX_SCENARIOS}",
                    scenarios.len()
                )));
            }
            let untargeted: Vec<&str> = scenarios
                .iter()
                .filter(|s| {
                    if ctx.script_functions.is_empty() {
                        s.testcase_name.trim().is_empty()
                    } else {
                        !ctx
                            .script_functions
                            .iter()
                            .any(|f| s.testcase_name.contains(f.as_str()) || s.description.contains(f.as_str()))
                    }
                })
                .map(|s| s.testcase_name.as_str())
                .collect();
            if untargeted.is_empty() {
                Verdict::pass(format!("{} test cases, each naming a target function", scenarios.len()))
            } else {
                Verdict::fail(format!("test cases name no script function: {}", untargeted.join(", ")))
            }
        }

        SuccessKind::PassRatioAboveThreshold => {
            let report = harness_report(ctx)?;
            let Some(counts) = report.tests else {
                return Ok(Verdict::fail(format!("no test results reported\n{}", report.log)));
            };
            // strictly more than 80%, in integers
            let ok = counts.total > 0 && u64::from(counts.passed) * 5 > u64::from(counts.total) * 4;
            let evidence = format!("{}/{} tests passed", counts.passed, counts.total);
            if ok {
                Verdict::pass(evidence)
            } else {
                Verdict::fail(format!("{evidence}; more than 80% required\n{}", report.log))
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::harness::TestCounts;

    fn ctx<'a>(
        schema: &'a ConfigSchema,
        sources: &'a [SourceFile],
        required: &'a BTreeSet<String>,
        script_fns: &'a BTreeSet<String>,
        harness: Option<&'a Result<HarnessReport, HarnessError>>,
    ) -> EvalContext<'a> {
        EvalContext {
            config_schema: schema,
            reusable_sources: sources,
            required_functions: required,
            script_functions: script_fns,
            harness,
        }
    }

    fn tests_report(passed: u32, total: u32) -> Result<HarnessReport, HarnessError> {
        Ok(HarnessReport {
            exit_ok: passed == total,
            output_written: false,
            tests: Some(TestCounts { passed, total }),
            log: String::new(),
        })
    }

    fn pass_ratio(passed: u32, total: u32) -> bool {
        let (schema, empty) = (ConfigSchema::default(), BTreeSet::new());
        let report = tests_report(passed, total);
        evaluate_success(
            SuccessKind::PassRatioAboveThreshold,
            "",
            &ctx(&schema, &[], &empty, &empty, Some(&report)),
        )
        .unwrap()
        .success
    }

    #[test]
    fn pass_ratio_is_strict() {
        assert!(pass_ratio(9, 10));
        assert!(!pass_ratio(8, 10));
        assert!(pass_ratio(5, 6));
        assert!(!pass_ratio(4, 5));
        assert!(!pass_ratio(0, 0));
    }

    fn scenarios(n: usize) -> String {
        let items: Vec<String> = (0..n)
            .map(|i| format!(r#"{{"testcase_name":"test_compute_{i}","description":"checks compute","mocks":[]}}"#))
            .collect();
        format!("[{}]", items.join(","))
    }

    #[test]
    fn scenario_bounds() {
        let (schema, empty) = (ConfigSchema::default(), BTreeSet::new());
        let fns = BTreeSet::from(["compute".to_owned()]);
        let c = ctx(&schema, &[], &empty, &fns, None);
        let eval = |p: &str| evaluate_success(SuccessKind::ScenarioCountAndCoverage, p, &c).unwrap().success;
        assert!(eval(&scenarios(10)));
        assert!(!eval(&scenarios(11)));
        assert!(!eval(&scenarios(0)));
        assert!(eval(&format!("{{ {} }}", scenarios(2))));
        assert!(!eval(r#"[{"testcase_name":"test_other","description":"nothing"}]"#));
        assert!(!eval("not json"));
    }

    fn utils_source() -> Vec<SourceFile> {
        vec![SourceFile {
            relative: "src/utils/utils.py".into(),
            path: "src/utils/utils.py".into(),
            content: "def read_spark_dataframe(spark, path):\n    pass\n\nclass Writer:\n    pass\nDEFAULT = 1\n".into(),
        }]
    }

    #[test]
    fn import_resolution() {
        let src = utils_source();
        assert!(resolve_import("from src.utils.utils import read_spark_dataframe", &src).is_ok());
        assert!(resolve_import("from src.utils.utils import Writer, DEFAULT", &src).is_ok());
        assert!(resolve_import("from src.utils.utils import write_it", &src).is_err());
        assert!(resolve_import("from src.other import read_spark_dataframe", &src).is_err());
        assert!(resolve_import("import os", &src).is_err());
    }

    #[test]
    fn utils_need_resolution_and_clean_load() {
        let (schema, empty) = (ConfigSchema::default(), BTreeSet::new());
        let src = utils_source();
        let payload = r#"{ [ {"method_name":"read_spark_dataframe","method_signature":"def read_spark_dataframe(spark, path):","method_import":"from src.utils.utils import read_spark_dataframe","method_description":"reads"} ] }"#;
        let ok = Ok(HarnessReport {
            exit_ok: true,
            output_written: false,
            tests: None,
            log: String::new(),
        });
        let v = evaluate_success(SuccessKind::ErrorFreeExecution, payload, &ctx(&schema, &src, &empty, &empty, Some(&ok)))
            .unwrap();
        assert!(v.success, "{}", v.evidence);
        let crash = Err(HarnessError::Crash("boom".into()));
        assert!(evaluate_success(
            SuccessKind::ErrorFreeExecution,
            payload,
            &ctx(&schema, &src, &empty, &empty, Some(&crash))
        )
        .is_err());
        let bad = payload.replace("read_spark_dataframe\",\"method_description", "nope\",\"method_description");
        let bad = bad.replace("import read_spark_dataframe", "import nope");
        let v = evaluate_success(SuccessKind::ErrorFreeExecution, &bad, &ctx(&schema, &src, &empty, &empty, Some(&ok))).unwrap();
        assert!(!v.success);
    }

    #[test]
    fn functions_present_checks_inclusion() {
        let schema = ConfigSchema::default();
        let empty = BTreeSet::new();
        let required = BTreeSet::from(["load".to_owned(), "compute".to_owned()]);
        let c = ctx(&schema, &[], &required, &empty, None);
        let eval = |p: &str| evaluate_success(SuccessKind::FunctionsPresent, p, &c).unwrap().success;
        assert!(eval("def load():\n  pass\ndef compute(df):\n  pass\ndef extra(): pass"));
        assert!(!eval("def load():\n  pass"));
        let c = ctx(&schema, &[], &empty, &empty, None);
        assert!(!evaluate_success(SuccessKind::FunctionsPresent, "# nothing", &c).unwrap().success);
    }

    #[test]
    fn script_must_write() {
        let (schema, empty) = (ConfigSchema::default(), BTreeSet::new());
        let silent = Ok(HarnessReport {
            exit_ok: true,
            output_written: false,
            tests: None,
            log: String::new(),
        });
        let v = evaluate_success(
            SuccessKind::ScriptRunsAndWrites,
            "",
            &ctx(&schema, &[], &empty, &empty, Some(&silent)),
        )
        .unwrap();
        assert!(!v.success);
        assert!(v.evidence.contains("wrote no output"));
    }
}

//! Execution harnesses that run generated artifacts for the success checks.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::taskio::{HarnessConfig, HarnessKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarnessJob<'a> {
    /// Import every selected utility.
    LoadUtils { imports: &'a [String], payload: &'a str },
    /// Run the feature script; it must write its output.
    RunScript {
        script: &'a str,
        script_name: &'a str,
        config: Option<&'a str>,
    },
    /// Run the test script against the current feature script.
    RunTests {
        tests: &'a str,
        script: Option<&'a str>,
        script_name: &'a str,
        config: Option<&'a str>,
    },
}

impl HarnessJob<'_> {
    fn primary_payload(&self) -> &str {
        match self {
            Self::LoadUtils { payload, .. } => payload,
            Self::RunScript { script, .. } => script,
            Self::RunTests { tests, .. } => tests,
        }
    }

    fn key(&self) -> &'static str {
        match self {
            Self::LoadUtils { .. } => "load_utils",
            Self::RunScript { .. } => "run_script",
            Self::RunTests { .. } => "run_tests",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCounts {
    pub passed: u32,
    pub total: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub exit_ok: bool,
    pub output_written: bool,
    pub tests: Option<TestCounts>,
    pub log: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    /// The harness itself broke; not a verdict on the artifact.
    #[error("harness crashed: {0}")]
    Crash(String),
    #[error("harness unavailable: {0}")]
    Unavailable(String),
}

pub trait Harness: Send {
    fn execute(&mut self, job: &HarnessJob<'_>) -> Result<HarnessReport, HarnessError>;
}

impl<H: Harness + ?Sized> Harness for Box<H> {
    fn execute(&mut self, job: &HarnessJob<'_>) -> Result<HarnessReport, HarnessError> {
        (**self).execute(job)
    }
}

/// Grades payloads by embedded markers instead of running them:
///
/// - `@sim:fail <message>`: non-zero exit with that message
/// - `@sim:no-output`: exits cleanly but writes nothing
/// - `@sim:tests <passed>/<total>`: test counts (default: every `def test_` passes)
/// - `@sim:crash`, `@sim:unavailable`: harness-level errors
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedHarness;

static SIM_FAIL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@sim:fail\b[ \t]*([^\n]*)").unwrap());
static SIM_TESTS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@sim:tests[ \t]+(\d+)\s*/\s*(\d+)").unwrap());

impl Harness for SimulatedHarness {
    fn execute(&mut self, job: &HarnessJob<'_>) -> Result<HarnessReport, HarnessError> {
        let payload = job.primary_payload();
        if payload.contains("@sim:crash") {
            return Err(HarnessError::Crash("simulated crash".into()));
        }
        if payload.contains("@sim:unavailable") {
            return Err(HarnessError::Unavailable("simulated outage".into()));
        }
        let fail = SIM_FAIL.captures(payload).map(|c| c[1].trim().to_owned());
        let tests = match job {
            HarnessJob::RunTests { .. } => Some(match SIM_TESTS.captures(payload) {
                Some(c) => TestCounts {
                    passed: c[1].parse().unwrap_or(0),
                    total: c[2].parse().unwrap_or(0),
                },
                None => {
                    let n = payload.matches("def test_").count() as u32;
                    TestCounts { passed: n, total: n }
                }
            }),
            _ => None,
        };
        let log = match &fail {
            Some(msg) if msg.is_empty() => "simulated failure".to_owned(),
            Some(msg) => msg.clone(),
            None => "ok".to_owned(),
        };
        Ok(HarnessReport {
            exit_ok: fail.is_none(),
            output_written: fail.is_none() && !payload.contains("@sim:no-output"),
            tests,
            log,
        })
    }
}

pub const DEFAULT_LOAD_UTILS: &str = "python3 {imports_file}";
pub const DEFAULT_RUN_SCRIPT: &str = "python3 {script} {output}";
pub const DEFAULT_RUN_TESTS: &str = "python3 -m pytest -q {tests}";
const LOG_TAIL: usize = 4000;

static PASSED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+) passed").unwrap());
static FAILED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+) failed").unwrap());
static ERRORS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+) errors?\b").unwrap());

/// Parses a pytest-style summary line.
pub fn parse_test_summary(output: &str) -> Option<TestCounts> {
    let grab = |re: &Regex| re.captures_iter(output).last().and_then(|c| c[1].parse::<u32>().ok());
    let passed = grab(&PASSED);
    let failed = grab(&FAILED);
    let errors = grab(&ERRORS);
    if passed.is_none() && failed.is_none() && errors.is_none() {
        return None;
    }
    let passed = passed.unwrap_or(0);
    Some(TestCounts {
        passed,
        total: passed + failed.unwrap_or(0) + errors.unwrap_or(0),
    })
}

fn tail(s: &str, n: usize) -> &str {
    if s.len() <= n {
        return s;
    }
    let mut start = s.len() - n;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    &s[start..]
}

/// Runs jobs as shell commands inside a working directory.
///
/// Command templates may use `{workdir}`, `{script}`, `{tests}`,
/// `{config}`, `{output}`, `{imports_file}` and `{codebase}`. The codebase
/// root is put on `PYTHONPATH`.
pub struct SubprocessHarness {
    workdir: PathBuf,
    codebase: PathBuf,
    timeout: Duration,
    commands: std::collections::BTreeMap<String, String>,
}

impl SubprocessHarness {
    pub fn new(config: &HarnessConfig, codebase: &Path, workdir: &Path) -> Self {
        Self {
            workdir: workdir.to_owned(),
            codebase: codebase.to_owned(),
            timeout: Duration::from_secs(config.timeout_secs.max(1)),
            commands: config.commands.clone(),
        }
    }

    fn command_for(&self, key: &str) -> &str {
        self.commands.get(key).map(String::as_str).unwrap_or(match key {
            "load_utils" => DEFAULT_LOAD_UTILS,
            "run_script" => DEFAULT_RUN_SCRIPT,
            _ => DEFAULT_RUN_TESTS,
        })
    }

    fn write(&self, name: &str, content: &str) -> Result<PathBuf, HarnessError> {
        let path = self.workdir.join(name);
        fs::write(&path, content).map_err(|e| HarnessError::Crash(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }

    fn run(&self, command: &str) -> Result<(bool, String), HarnessError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .current_dir(&self.workdir)
            .env("PYTHONPATH", &self.codebase)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0)
            .spawn()
            .map_err(|e| HarnessError::Unavailable(format!("spawning `sh`: {e}")))?;
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let status = child
            .wait_timeout(self.timeout)
            .map_err(|e| HarnessError::Crash(format!("waiting for child: {e}")))?;
        let (ok, note) = match status {
            Some(status) => (status.success(), format!("exit status: {status}")),
            None => {
                // the shell's children share its process group
                unsafe {
                    libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
                }
                let _ = child.kill();
                let _ = child.wait();
                (false, format!("timed out after {}s", self.timeout.as_secs()))
            }
        };
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        let log = format!("{note}\n--- stdout ---\n{}\n--- stderr ---\n{}", tail(&stdout, LOG_TAIL), tail(&stderr, LOG_TAIL));
        Ok((ok, log))
    }
}

fn output_nonempty(path: &Path) -> bool {
    match fs::metadata(path) {
        Ok(m) if m.is_file() => m.len() > 0,
        Ok(m) if m.is_dir() => fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false),
        _ => false,
    }
}

impl Harness for SubprocessHarness {
    fn execute(&mut self, job: &HarnessJob<'_>) -> Result<HarnessReport, HarnessError> {
        fs::create_dir_all(&self.workdir)
            .map_err(|e| HarnessError::Unavailable(format!("creating {}: {e}", self.workdir.display())))?;
        let output = self.workdir.join("output");
        if output.exists() {
            let _ = fs::remove_dir_all(&output);
        }
        let mut vars: Vec<(&str, String)> = vec![
            ("{workdir}", self.workdir.display().to_string()),
            ("{codebase}", self.codebase.display().to_string()),
            ("{output}", output.display().to_string()),
        ];
        match job {
            HarnessJob::LoadUtils { imports, .. } => {
                let p = self.write("imports_check.py", &(imports.join("\n") + "\n"))?;
                vars.push(("{imports_file}", p.display().to_string()));
            }
            HarnessJob::RunScript { script, script_name, config } => {
                vars.push(("{script}", self.write(script_name, script)?.display().to_string()));
                if let Some(cfg) = config {
                    vars.push(("{config}", self.write("config.yaml", cfg)?.display().to_string()));
                }
            }
            HarnessJob::RunTests {
                tests,
                script,
                script_name,
                config,
            } => {
                if let Some(s) = script {
                    vars.push(("{script}", self.write(script_name, s)?.display().to_string()));
                }
                if let Some(cfg) = config {
                    vars.push(("{config}", self.write("config.yaml", cfg)?.display().to_string()));
                }
                let test_name = format!("test_{script_name}");
                vars.push(("{tests}", self.write(&test_name, tests)?.display().to_string()));
            }
        }
        let mut command = self.command_for(job.key()).to_owned();
        for (token, value) in &vars {
            command = command.replace(token, value);
        }
        let (exit_ok, log) = self.run(&command)?;
        let tests = match job {
            HarnessJob::RunTests { .. } => Some(parse_test_summary(&log).unwrap_or(TestCounts { passed: 0, total: 0 })),
            _ => None,
        };
        Ok(HarnessReport {
            exit_ok,
            output_written: output_nonempty(&output),
            tests,
            log,
        })
    }
}

/// Builds the harness a task's configuration asks for.
pub fn harness_for(config: &HarnessConfig, codebase: &Path, workdir: &Path) -> Box<dyn Harness> {
    match config.kind {
        HarnessKind::Simulated => Box::new(SimulatedHarness),
        HarnessKind::Subprocess => Box::new(SubprocessHarness::new(config, codebase, workdir)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(s: &str) -> HarnessJob<'_> {
        HarnessJob::RunScript {
            script: s,
            script_name: "f.py",
            config: None,
        }
    }

    #[test]
    fn simulated_markers() {
        let mut h = SimulatedHarness;
        let ok = h.execute(&script("print(1)")).unwrap();
        assert!(ok.exit_ok && ok.output_written);
        let failed = h.execute(&script("# @sim:fail column amt missing\n")).unwrap();
        assert!(!failed.exit_ok);
        assert_eq!(failed.log, "column amt missing");
        let silent = h.execute(&script("# @sim:no-output")).unwrap();
        assert!(silent.exit_ok && !silent.output_written);
        assert!(matches!(h.execute(&script("@sim:crash")), Err(HarnessError::Crash(_))));
        assert!(matches!(h.execute(&script("@sim:unavailable")), Err(HarnessError::Unavailable(_))));
    }

    #[test]
    fn simulated_test_counts() {
        let mut h = SimulatedHarness;
        let job = |t| HarnessJob::RunTests {
            tests: t,
            script: None,
            script_name: "f.py",
            config: None,
        };
        let r = h.execute(&job("# @sim:tests 8/10")).unwrap();
        assert_eq!(r.tests, Some(TestCounts { passed: 8, total: 10 }));
        let r = h.execute(&job("def test_a():\n pass\ndef test_b():\n pass\n")).unwrap();
        assert_eq!(r.tests, Some(TestCounts { passed: 2, total: 2 }));
    }

    #[test]
    fn pytest_summary_parsing() {
        assert_eq!(
            parse_test_summary("==== 9 passed, 1 failed in 0.2s ===="),
            Some(TestCounts { passed: 9, total: 10 })
        );
        assert_eq!(
            parse_test_summary("1 failed, 2 passed, 1 error"),
            Some(TestCounts { passed: 2, total: 4 })
        );
        assert_eq!(parse_test_summary("no tests ran"), None);
    }

    #[test]
    fn subprocess_runs_with_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = HarnessConfig {
            kind: HarnessKind::Subprocess,
            timeout_secs: 1,
            ..Default::default()
        };
        cfg.commands.insert("run_script".into(), "mkdir -p {output} && cat {script} > {output}/part-0".into());
        let mut h = SubprocessHarness::new(&cfg, dir.path(), dir.path());
        let r = h.execute(&script("data")).unwrap();
        assert!(r.exit_ok && r.output_written, "{}", r.log);

        cfg.commands.insert("run_script".into(), "sleep 5".into());
        let mut h = SubprocessHarness::new(&cfg, dir.path(), dir.path());
        let started = std::time::Instant::now();
        let r = h.execute(&script("data")).unwrap();
        assert!(!r.exit_ok);
        assert!(r.log.contains("timed out"));
        assert!(started.elapsed() < Duration::from_secs(4));

        cfg.commands.insert("run_tests".into(), "echo '3 passed, 1 failed'".into());
        let mut h = SubprocessHarness::new(&cfg, dir.path(), dir.path());
        let r = h
            .execute(&HarnessJob::RunTests {
                tests: "x",
                script: Some("y"),
                script_name: "f.py",
                config: None,
            })
            .unwrap();
        assert_eq!(r.tests, Some(TestCounts { passed: 3, total: 4 }));
    }
}

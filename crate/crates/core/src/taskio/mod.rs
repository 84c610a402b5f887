//! Task inputs (FSC, DFR, run file) and episode artifact output.

mod artifacts;
mod documents;
mod schema;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::de::DeserializeOwned;

pub use artifacts::{write_artifacts, ArtifactManifest, ManifestEntry, PATCH_BUNDLE_FILE, MANIFEST_FILE};
pub use documents::*;
pub use schema::{ConfigSchema, FieldType};

use documents::UnknownFields;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: dangling reference `{reference}`: {reason}")]
    Ref {
        path: PathBuf,
        reference: String,
        reason: String,
    },
    #[error("missing file {path} (declared as `{field}`)")]
    MissingFile { path: PathBuf, field: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TaskError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    fn invalid(path: &Path, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.to_owned(),
            message: message.into(),
        }
    }
}

/// Parses a YAML document, mapping serde's "missing field" into the
/// engine's wording and keeping the error location.
pub fn parse_document<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, TaskError> {
    serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        let raw = e.to_string();
        let message = match raw.find("missing field `") {
            Some(pos) => {
                let rest = &raw[pos + "missing field `".len()..];
                let field = rest.split('`').next().unwrap_or_default();
                format!("missing required field `{field}`")
            }
            None => raw,
        };
        TaskError::Parse {
            path: path.to_owned(),
            line,
            column,
            message,
        }
    })
}

pub fn to_yaml<T: serde::Serialize>(doc: &T) -> String {
    serde_yaml::to_string(doc).expect("documents always serialize")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    #[default]
    Dev,
    Prod,
}

impl Bucket {
    pub fn pick<'a>(&self, buckets: &'a Buckets) -> &'a str {
        match self {
            Bucket::Dev => &buckets.dev,
            Bucket::Prod => &buckets.prod,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    /// Path relative to the codebase root, `/`-separated.
    pub relative: String,
    pub path: PathBuf,
    pub content: String,
}

/// Where artifacts land. `source_*` directories hold the pre-episode state
/// the patch bundle diffs against; writes go to the target directories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoLayout {
    pub output_root: PathBuf,
    pub feature_configs_dir: PathBuf,
    pub feature_scripts_dir: PathBuf,
    pub test_scripts_dir: PathBuf,
    pub source_feature_configs_dir: PathBuf,
    pub source_feature_scripts_dir: PathBuf,
    pub source_test_scripts_dir: PathBuf,
    /// Repo-relative names of the three directories, for patch headers.
    pub relative_configs: String,
    pub relative_scripts: String,
    pub relative_tests: String,
}

impl RepoLayout {
    /// Redirects every write under `out`, keeping the repository-relative
    /// structure and the original directories as diff sources.
    pub fn rebased(&self, out: &Path) -> Self {
        let repo = out.join("repo");
        Self {
            output_root: out.to_owned(),
            feature_configs_dir: repo.join(&self.relative_configs),
            feature_scripts_dir: repo.join(&self.relative_scripts),
            test_scripts_dir: repo.join(&self.relative_tests),
            ..self.clone()
        }
    }
}

/// Everything an episode needs to know about one task.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    /// Short identifier, the run file's parent directory name.
    pub id: String,
    pub run_path: PathBuf,
    pub run: RunConfig,
    pub fsc: FeatureSpecConfig,
    pub fsc_text: String,
    pub dfr: DataFrameRegistry,
    pub dfr_text: String,
    pub readme: String,
    pub reusable_sources: Vec<SourceFile>,
    pub config_schema: ConfigSchema,
    pub layout: RepoLayout,
    pub codebase: PathBuf,
    pub bucket: Bucket,
    pub warnings: Vec<String>,
}

impl TaskSpec {
    /// File stem used for generated config, script and test files.
    pub fn script_stem(&self) -> String {
        sanitize_stem(&self.fsc.name)
    }

    pub fn script_name(&self) -> String {
        format!("{}.py", self.script_stem())
    }

    pub fn max_iterations(&self) -> usize {
        self.run.planner.max_iterations
    }

    pub fn harness_config(&self) -> HarnessConfig {
        self.run.harness.clone().unwrap_or_default()
    }

    /// Concatenated reusable sources with path headers.
    pub fn existing_utils(&self) -> String {
        let mut out = String::new();
        for src in &self.reusable_sources {
            out.push_str(&format!("# file: {}\n{}\n", src.relative, src.content.trim_end()));
        }
        out
    }

    /// Functions the code template must declare: the run file's explicit
    /// list, or every `def name(` mentioned in the README.
    pub fn required_functions(&self) -> BTreeSet<String> {
        match &self.run.env.required_functions {
            Some(list) => list.iter().cloned().collect(),
            None => crate::actors::declared_functions(&self.readme),
        }
    }

    /// Short task summary used where a prompt asks for task details and
    /// no planner instruction exists.
    pub fn summary(&self) -> String {
        let mut out = format!("Build feature set `{}`.\n", self.fsc.name);
        for f in &self.fsc.features {
            out.push_str(&format!("- {}: {}\n", f.name, f.computation_logic.trim()));
        }
        out
    }
}

fn sanitize_stem(name: &str) -> String {
    let stem: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    if stem.is_empty() {
        "feature_set".to_owned()
    } else {
        stem
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_owned()
    } else {
        base.join(path)
    }
}

/// Relative form of a configured directory for use under a rebased root.
fn relative_name(p: &str) -> String {
    Path::new(p)
        .components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("/")
}

fn read_declared(path: &Path, field: &str) -> Result<String, TaskError> {
    if !path.exists() {
        return Err(TaskError::MissingFile {
            path: path.to_owned(),
            field: field.to_owned(),
        });
    }
    fs::read_to_string(path).map_err(|e| TaskError::io(path, e))
}

fn collect_sources(root: &Path, path: &Path, out: &mut Vec<SourceFile>) -> Result<(), TaskError> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| TaskError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for entry in entries {
            collect_sources(root, &entry, out)?;
        }
    } else {
        let content = fs::read_to_string(path).map_err(|e| TaskError::io(path, e))?;
        let relative = path
            .strip_prefix(root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        out.push(SourceFile {
            relative,
            path: path.to_owned(),
            content,
        });
    }
    Ok(())
}

fn validate_run(path: &Path, run: &RunConfig) -> Result<(), TaskError> {
    let env = &run.env;
    let fields = [
        ("env.input_root_dir", &env.input_root_dir),
        ("env.output_root_dir", &env.output_root_dir),
        ("env.codebase", &env.codebase),
        ("env.fsc_path", &env.fsc_path),
        ("env.dfr_path", &env.dfr_path),
        ("env.feature_scripts_dir", &env.feature_scripts_dir),
        ("env.test_scripts_path", &env.test_scripts_path),
        ("env.codebase_readme_path", &env.codebase_readme_path),
        ("env.feature_configs_dir", &env.feature_configs_dir),
        ("planner.llm", &run.planner.llm),
    ];
    for (name, value) in fields {
        if value.trim().is_empty() {
            return Err(TaskError::invalid(path, format!("`{name}` must not be empty")));
        }
    }
    if env.reusable_code_paths.iter().any(|p| p.trim().is_empty()) {
        return Err(TaskError::invalid(path, "`env.reusable_code_paths` contains an empty path"));
    }
    if run.planner.max_iterations == 0 {
        return Err(TaskError::invalid(path, "`planner.max_iterations` must be at least 1"));
    }
    Ok(())
}

/// Checks DFR invariants.
pub fn validate_dfr(path: &Path, dfr: &DataFrameRegistry) -> Result<(), TaskError> {
    let mut names = BTreeSet::new();
    for d in &dfr.datasets {
        if !names.insert(d.name.as_str()) {
            return Err(TaskError::invalid(path, format!("duplicate dataset name `{}`", d.name)));
        }
        if d.features.is_empty() {
            return Err(TaskError::invalid(path, format!("dataset `{}` lists no features", d.name)));
        }
    }
    Ok(())
}

/// Checks FSC invariants and resolves every column reference against the
/// registry. Returns warnings for columns the registry does not list.
pub fn validate_fsc(path: &Path, fsc: &FeatureSpecConfig, dfr: &DataFrameRegistry) -> Result<Vec<String>, TaskError> {
    if fsc.primary_keys.is_empty() {
        return Err(TaskError::invalid(path, "at least one primary key is required"));
    }
    if fsc.features.is_empty() {
        return Err(TaskError::invalid(path, "at least one feature is required"));
    }
    let mut warnings = Vec::new();
    for column in fsc.column_refs() {
        let Some((dataset, col)) = column.split() else {
            return Err(TaskError::Ref {
                path: path.to_owned(),
                reference: column.0.clone(),
                reason: "expected the shape dataset.column".into(),
            });
        };
        let Some(entry) = dfr.dataset(dataset) else {
            return Err(TaskError::Ref {
                path: path.to_owned(),
                reference: column.0.clone(),
                reason: format!("no dataset `{dataset}` in the registry"),
            });
        };
        if !entry.features.iter().any(|f| f.feature_name == col) {
            warnings.push(format!("`{}`: column not listed in registry dataset `{dataset}`", column.0));
        }
    }
    Ok(warnings)
}

/// Loads and cross-validates a task from its run file.
pub fn load_task(run_path: &Path) -> Result<TaskSpec, TaskError> {
    let run_text = read_declared(run_path, "run file")?;
    let run: RunConfig = parse_document(run_path, &run_text)?;
    validate_run(run_path, &run)?;
    let mut warnings = Vec::new();
    run.unknown_fields("", &mut warnings);
    let mut warnings: Vec<String> = warnings
        .into_iter()
        .map(|f| format!("{}: unknown field `{f}`", run_path.display()))
        .collect();

    let base = run_path.parent().map(Path::to_owned).unwrap_or_default();
    let env = &run.env;
    let input_root = resolve(&base, &env.input_root_dir);
    let codebase = resolve(&base, &env.codebase);
    let output_root = resolve(&base, &env.output_root_dir);

    let fsc_path = resolve(&input_root, &env.fsc_path);
    let fsc_text = read_declared(&fsc_path, "env.fsc_path")?;
    let fsc: FeatureSpecConfig = parse_document(&fsc_path, &fsc_text)?;

    let dfr_path = resolve(&input_root, &env.dfr_path);
    let dfr_text = read_declared(&dfr_path, "env.dfr_path")?;
    let dfr: DataFrameRegistry = parse_document(&dfr_path, &dfr_text)?;

    validate_dfr(&dfr_path, &dfr)?;
    warnings.extend(validate_fsc(&fsc_path, &fsc, &dfr)?);
    let mut fields = Vec::new();
    fsc.unknown_fields("", &mut fields);
    warnings.extend(fields.drain(..).map(|f| format!("{}: unknown field `{f}`", fsc_path.display())));
    dfr.unknown_fields("", &mut fields);
    warnings.extend(fields.drain(..).map(|f| format!("{}: unknown field `{f}`", dfr_path.display())));

    let readme_path = resolve(&codebase, &env.codebase_readme_path);
    let readme = read_declared(&readme_path, "env.codebase_readme_path")?;

    let mut reusable_sources = Vec::new();
    for p in &env.reusable_code_paths {
        let path = resolve(&codebase, p);
        if !path.exists() {
            return Err(TaskError::MissingFile {
                path,
                field: "env.reusable_code_paths".into(),
            });
        }
        collect_sources(&codebase, &path, &mut reusable_sources)?;
    }

    let config_schema = match &env.config_schema_path {
        Some(p) => {
            let path = resolve(&base, p);
            let text = read_declared(&path, "env.config_schema_path")?;
            ConfigSchema::parse(&path, &text)?
        }
        None => ConfigSchema::default(),
    };

    let layout = RepoLayout {
        output_root,
        feature_configs_dir: resolve(&codebase, &env.feature_configs_dir),
        feature_scripts_dir: resolve(&codebase, &env.feature_scripts_dir),
        test_scripts_dir: resolve(&codebase, &env.test_scripts_path),
        source_feature_configs_dir: resolve(&codebase, &env.feature_configs_dir),
        source_feature_scripts_dir: resolve(&codebase, &env.feature_scripts_dir),
        source_test_scripts_dir: resolve(&codebase, &env.test_scripts_path),
        relative_configs: relative_name(&env.feature_configs_dir),
        relative_scripts: relative_name(&env.feature_scripts_dir),
        relative_tests: relative_name(&env.test_scripts_path),
    };

    for w in &warnings {
        tracing::warn!("{w}");
    }

    let id = run_path
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| fsc.name.clone());

    Ok(TaskSpec {
        id,
        run_path: run_path.to_owned(),
        run,
        fsc,
        fsc_text,
        dfr,
        dfr_text,
        readme,
        reusable_sources,
        config_schema,
        layout,
        codebase,
        bucket: Bucket::Dev,
        warnings,
    })
}

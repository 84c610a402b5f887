use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

/// Extra keys a document carried that the engine does not interpret.
/// Preserved on round-trip and surfaced as warnings.
pub type Extra = BTreeMap<String, Value>;

/// A `dataset.column` reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnRef(pub String);

impl ColumnRef {
    /// Splits at the first dot; `None` when either side is empty.
    pub fn split(&self) -> Option<(&str, &str)> {
        let (dataset, column) = self.0.split_once('.')?;
        (!dataset.trim().is_empty() && !column.trim().is_empty()).then_some((dataset.trim(), column.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    pub dev: String,
    pub prod: String,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimaryKey {
    pub name: String,
    pub source_columns: Vec<ColumnRef>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub source_columns: Vec<ColumnRef>,
    pub computation_logic: String,
    pub feature_description: String,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDataset {
    pub name: String,
    pub version: Value,
    pub bucket: Buckets,
    pub suffix: String,
    #[serde(flatten)]
    pub extra: Extra,
}

/// Feature Specification Config: what the task must produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpecConfig {
    pub name: String,
    pub primary_keys: Vec<PrimaryKey>,
    pub features: Vec<FeatureSpec>,
    pub output_dataset: OutputDataset,
    #[serde(flatten)]
    pub extra: Extra,
}

impl FeatureSpecConfig {
    pub fn column_refs(&self) -> impl Iterator<Item = &ColumnRef> {
        self.primary_keys
            .iter()
            .flat_map(|k| k.source_columns.iter())
            .chain(self.features.iter().flat_map(|f| f.source_columns.iter()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFeature {
    pub feature_name: String,
    pub feature_description: String,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub bucket: Buckets,
    pub suffix: String,
    pub format: String,
    pub partition_pattern: String,
    pub features: Vec<DatasetFeature>,
    #[serde(flatten)]
    pub extra: Extra,
}

/// DataFrame Registry: the base datasets a task may read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFrameRegistry {
    pub datasets: Vec<DatasetEntry>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl DataFrameRegistry {
    pub fn dataset(&self, name: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub input_root_dir: String,
    pub output_root_dir: String,
    pub codebase: String,
    pub fsc_path: String,
    pub dfr_path: String,
    pub feature_scripts_dir: String,
    pub reusable_code_paths: Vec<String>,
    pub test_scripts_path: String,
    pub codebase_readme_path: String,
    pub feature_configs_dir: String,
    /// Declared schema the generated config must satisfy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_schema_path: Option<String>,
    /// Functions the code template must declare.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_functions: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Backend selector, e.g. `scripted:transcript.yaml` or `http-chat:<url>`.
    pub llm: String,
    pub max_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Name of the environment variable holding the backend credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_chat_calls: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hitl_timeout_secs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_hitl_answer: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnessKind {
    #[default]
    Simulated,
    Subprocess,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    #[serde(default)]
    pub kind: HarnessKind,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<String>,
    /// Command templates keyed by job (`load_utils`, `run_script`, `run_tests`).
    #[serde(default)]
    pub commands: BTreeMap<String, String>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            kind: HarnessKind::Simulated,
            timeout_secs: default_timeout(),
            workdir: None,
            commands: BTreeMap::new(),
        }
    }
}

/// The run file: where inputs live, where outputs go, and planner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub planner: PlannerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harness: Option<HarnessConfig>,
    #[serde(flatten)]
    pub extra: Extra,
}

/// Dotted paths of every uninterpreted key, for warnings.
pub(crate) trait UnknownFields {
    fn unknown_fields(&self, prefix: &str, out: &mut Vec<String>);
}

fn push_extra(extra: &Extra, prefix: &str, out: &mut Vec<String>) {
    for key in extra.keys() {
        out.push(if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        });
    }
}

impl UnknownFields for FeatureSpecConfig {
    fn unknown_fields(&self, prefix: &str, out: &mut Vec<String>) {
        push_extra(&self.extra, prefix, out);
        for (i, k) in self.primary_keys.iter().enumerate() {
            push_extra(&k.extra, &format!("primary_keys[{i}]"), out);
        }
        for (i, f) in self.features.iter().enumerate() {
            push_extra(&f.extra, &format!("features[{i}]"), out);
        }
        push_extra(&self.output_dataset.extra, "output_dataset", out);
        push_extra(&self.output_dataset.bucket.extra, "output_dataset.bucket", out);
    }
}

impl UnknownFields for DataFrameRegistry {
    fn unknown_fields(&self, prefix: &str, out: &mut Vec<String>) {
        push_extra(&self.extra, prefix, out);
        for (i, d) in self.datasets.iter().enumerate() {
            let p = format!("datasets[{i}]");
            push_extra(&d.extra, &p, out);
            push_extra(&d.bucket.extra, &format!("{p}.bucket"), out);
            for (j, f) in d.features.iter().enumerate() {
                push_extra(&f.extra, &format!("{p}.features[{j}]"), out);
            }
        }
    }
}

impl UnknownFields for RunConfig {
    fn unknown_fields(&self, prefix: &str, out: &mut Vec<String>) {
        push_extra(&self.extra, prefix, out);
        push_extra(&self.env.extra, "env", out);
        push_extra(&self.planner.extra, "planner", out);
    }
}

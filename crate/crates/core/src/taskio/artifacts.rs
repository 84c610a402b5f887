use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use similar::TextDiff;

use super::{TaskError, TaskSpec};
use crate::model::{ArtifactKind, ShortTermMemory};

pub const PATCH_BUNDLE_FILE: &str = "changes.patch";
pub const MANIFEST_FILE: &str = "manifest.yaml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub kind: ArtifactKind,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    /// Repository files written, one per mapped artifact kind.
    pub entries: Vec<ManifestEntry>,
    pub patch_bundle: PathBuf,
    pub patch_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, content: &str) -> Result<(), TaskError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| TaskError::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| TaskError::io(path, e))
}

/// Writes the latest config, feature script and test script into the
/// repository directories, then a unified-diff bundle and a manifest under
/// the output root. Intermediate artifacts stay in the episode log.
pub fn write_artifacts(task: &TaskSpec, memory: &ShortTermMemory) -> Result<ArtifactManifest, TaskError> {
    let layout = &task.layout;
    let stem = task.script_stem();
    let targets = [
        (
            ArtifactKind::ConfigYaml,
            format!("{stem}.yaml"),
            &layout.feature_configs_dir,
            &layout.source_feature_configs_dir,
            &layout.relative_configs,
        ),
        (
            ArtifactKind::FeatureScript,
            format!("{stem}.py"),
            &layout.feature_scripts_dir,
            &layout.source_feature_scripts_dir,
            &layout.relative_scripts,
        ),
        (
            ArtifactKind::TestScript,
            format!("test_{stem}.py"),
            &layout.test_scripts_dir,
            &layout.source_test_scripts_dir,
            &layout.relative_tests,
        ),
    ];

    let mut entries = Vec::new();
    let mut patch = String::new();
    for (kind, file_name, dir, source_dir, relative_dir) in targets {
        let Some(content) = memory.artifact(&kind) else {
            continue;
        };
        let mut content = content.to_owned();
        if !content.ends_with('\n') {
            content.push('\n');
        }
        let original = fs::read_to_string(source_dir.join(&file_name)).unwrap_or_default();
        let path = dir.join(&file_name);
        write_file(&path, &content)?;

        let repo_path = if relative_dir.is_empty() {
            file_name.clone()
        } else {
            format!("{relative_dir}/{file_name}")
        };
        let old_header = if original.is_empty() {
            "/dev/null".to_owned()
        } else {
            format!("a/{repo_path}")
        };
        let diff = TextDiff::from_lines(&original, &content);
        patch.push_str(&format!("diff --git a/{repo_path} b/{repo_path}\n"));
        patch.push_str(
            &diff
                .unified_diff()
                .context_radius(3)
                .header(&old_header, &format!("b/{repo_path}"))
                .to_string(),
        );

        entries.push(ManifestEntry {
            kind,
            path,
            sha256: sha256_hex(content.as_bytes()),
        });
    }

    let patch_bundle = layout.output_root.join(PATCH_BUNDLE_FILE);
    write_file(&patch_bundle, &patch)?;
    let manifest = ArtifactManifest {
        entries,
        patch_bundle,
        patch_sha256: sha256_hex(patch.as_bytes()),
    };
    write_file(&layout.output_root.join(MANIFEST_FILE), &super::to_yaml(&manifest))?;
    Ok(manifest)
}

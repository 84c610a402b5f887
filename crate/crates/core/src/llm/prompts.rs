use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::template::{PromptTemplate, TemplateError};

/// Built-in templates, one per actor plus the planner and the human tool.
pub const DEFAULT_TEMPLATES: [(&str, &str); 8] = [
    ("planner", include_str!("../../prompts/planner.txt")),
    ("config_generator", include_str!("../../prompts/config_generator.txt")),
    ("code_template_generator", include_str!("../../prompts/code_template_generator.txt")),
    ("utils_retriever", include_str!("../../prompts/utils_retriever.txt")),
    ("testcase_generator", include_str!("../../prompts/testcase_generator.txt")),
    ("testcase_coder", include_str!("../../prompts/testcase_coder.txt")),
    ("code_generator", include_str!("../../prompts/code_generator.txt")),
    ("hitl", include_str!("../../prompts/hitl.txt")),
];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("reading prompts from {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no template named `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl PromptSet {
    pub fn defaults() -> Self {
        let templates = DEFAULT_TEMPLATES
            .iter()
            .map(|(name, body)| {
                let t = PromptTemplate::parse(*name, *body).expect("built-in templates are well-formed");
                (name.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    /// Defaults overridden by every `<name>.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::defaults();
        let io = |source| PromptError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir).map_err(io)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.insert(PromptTemplate::parse(name, body)?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(name).ok_or_else(|| PromptError::Unknown(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::defaults()
    }
}

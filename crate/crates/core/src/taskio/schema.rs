use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use super::{parse_document, TaskError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    String,
    Integer,
    Number,
    Boolean,
    List,
    Mapping,
    Any,
}

impl FieldType {
    fn admits(&self, value: &Value) -> bool {
        match self {
            Self::String => value.is_string(),
            Self::Integer => value.is_i64() || value.is_u64(),
            Self::Number => value.is_number(),
            Self::Boolean => value.is_bool(),
            Self::List => value.is_sequence(),
            Self::Mapping => value.is_mapping(),
            Self::Any => !value.is_null(),
        }
    }
}

/// Declared shape of a generated feature config: required dotted paths and
/// their types. The default schema only requires a top-level mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSchema {
    #[serde(default)]
    pub required: BTreeMap<String, FieldType>,
}

impl ConfigSchema {
    pub fn parse(path: &Path, text: &str) -> Result<Self, TaskError> {
        parse_document(path, text)
    }

    /// Parses `yaml` and checks it against the schema. Returns every
    /// violation found.
    pub fn check(&self, yaml: &str) -> Result<(), Vec<String>> {
        let doc: Value = serde_yaml::from_str(yaml).map_err(|e| vec![format!("config does not parse: {e}")])?;
        if !doc.is_mapping() {
            return Err(vec!["config must be a mapping at the top level".into()]);
        }
        let mut problems = Vec::new();
        for (path, ty) in &self.required {
            match lookup(&doc, path) {
                None => problems.push(format!("missing required field `{path}`")),
                Some(v) if !ty.admits(v) => {
                    problems.push(format!("field `{path}` should be {}", format!("{ty:?}").to_lowercase()))
                }
                Some(_) => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

fn lookup<'a>(doc: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(doc, |v, key| v.get(key))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ConfigSchema {
        ConfigSchema::parse(
            Path::new("schema.yaml"),
            "required:\n  name: string\n  inputs: list\n  output.path: string\n  output.version: integer\n",
        )
        .unwrap()
    }

    #[test]
    fn valid_config_passes() {
        let cfg = "name: x\ninputs: [a]\noutput:\n  path: s3://b\n  version: 2\n";
        assert_eq!(schema().check(cfg), Ok(()));
    }

    #[test]
    fn reports_missing_and_mistyped() {
        let cfg = "name: 3\noutput:\n  path: s3://b\n";
        let problems = schema().check(cfg).unwrap_err();
        assert!(problems.iter().any(|p| p.contains("`name` should be string")));
        assert!(problems.iter().any(|p| p.contains("missing required field `inputs`")));
        assert!(problems.iter().any(|p| p.contains("output.version")));
    }

    #[test]
    fn unparseable_and_scalar_rejected() {
        assert!(ConfigSchema::default().check("a: [").is_err());
        assert!(ConfigSchema::default().check("just text").is_err());
        assert!(ConfigSchema::default().check("a: 1").is_ok());
    }
}

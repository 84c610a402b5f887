//! Prompt templates with `{name}` placeholders. Literal braces are written
//! doubled (`{{` / `}}`); any other brace is a template error.

use std::collections::{BTreeMap, BTreeSet};

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{template}`: missing binding `{name}`")]
    MissingBinding { template: String, name: String },
    #[error("template `{template}`: malformed at byte {offset}: {message}")]
    Malformed {
        template: String,
        offset: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
    segments: Vec<Segment>,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl PromptTemplate {
    pub fn parse(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let malformed = |offset: usize, message: &str| TemplateError::Malformed {
            template: name.clone(),
            offset,
            message: message.to_owned(),
        };

        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = body.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|(_, c)| *c) == Some('{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek().map(|(_, c)| *c) == Some('}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let mut ident = String::new();
                    loop {
                        match chars.next() {
                            Some((_, '}')) if !ident.is_empty() => break,
                            Some((_, c)) if (ident.is_empty() && is_ident_start(c)) || (!ident.is_empty() && is_ident(c)) => {
                                ident.push(c)
                            }
                            _ => return Err(malformed(i, "unescaped `{` (write `{{` for a literal brace)")),
                        }
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(ident));
                }
                '}' => return Err(malformed(i, "unescaped `}` (write `}}` for a literal brace)")),
                c => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        let required_placeholders = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p.clone()),
                Segment::Literal(_) => None,
            })
            .collect();
        Ok(Self {
            name,
            body,
            required_placeholders,
            segments,
        })
    }

    /// Bindings that match no placeholder.
    pub fn unknown_bindings<'a>(&self, bindings: &'a Bindings) -> Vec<&'a str> {
        bindings
            .keys()
            .filter(|k| !self.required_placeholders.contains(*k))
            .map(String::as_str)
            .collect()
    }

    /// Substitutes every placeholder. Bound values are inserted verbatim, so
    /// braces inside them pass through untouched.
    pub fn render(&self, bindings: &Bindings) -> Result<String, TemplateError> {
        if let Some(name) = self.required_placeholders.iter().find(|p| !bindings.contains_key(*p)) {
            return Err(TemplateError::MissingBinding {
                template: self.name.clone(),
                name: name.clone(),
            });
        }
        for unknown in self.unknown_bindings(bindings) {
            tracing::warn!(template = %self.name, "unknown binding `{unknown}` ignored");
        }
        let mut out = String::with_capacity(self.body.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) => out.push_str(&bindings[name]),
            }
        }
        Ok(out)
    }
}

/// Convenience for building bindings from pairs.
pub fn bindings<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

//! Prompt templates with `{name}` placeholders. `{{` and `}}` render as
//! literal braces; any other brace is literal text.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template:?}: missing binding for placeholder {name:?}")]
    MissingPlaceholder { template: String, name: String },
    #[error("template {template:?}: binding {name:?} has no placeholder")]
    UnknownPlaceholder { template: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    segments: Vec<Segment>,
    placeholders: BTreeSet<String>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let name = name.into();
        let body = body.into();
        let mut segments = Vec::new();
        let mut placeholders = BTreeSet::new();
        let mut text = String::new();
        let mut rest = body.as_str();
        while let Some(pos) = rest.find(['{', '}']) {
            text.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                text.push(tail.as_bytes()[0] as char);
                rest = &tail[2..];
                continue;
            }
            if tail.starts_with('{') {
                if let Some(end) = tail.find('}') {
                    let ident = &tail[1..end];
                    if is_ident(ident) {
                        if !text.is_empty() {
                            segments.push(Segment::Text(std::mem::take(&mut text)));
                        }
                        segments.push(Segment::Slot(ident.to_string()));
                        placeholders.insert(ident.to_string());
                        rest = &tail[end + 1..];
                        continue;
                    }
                }
            }
            text.push(tail.as_bytes()[0] as char);
            rest = &tail[1..];
        }
        text.push_str(rest);
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Self {
            name,
            body,
            segments,
            placeholders,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Every placeholder is required.
    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    pub fn has_placeholder(&self, name: &str) -> bool {
        self.placeholders.contains(name)
    }

    pub fn render<'b>(&self, bindings: impl IntoIterator<Item = (&'b str, &'b str)>) -> Result<String, TemplateError> {
        let bindings: BTreeMap<&str, &str> = bindings.into_iter().collect();
        if let Some(name) = bindings.keys().find(|k| !self.placeholders.contains(**k)) {
            return Err(TemplateError::UnknownPlaceholder {
                template: self.name.clone(),
                name: name.to_string(),
            });
        }
        let mut out = String::with_capacity(self.body.len());
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => match bindings.get(name.as_str()) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::MissingPlaceholder {
                            template: self.name.clone(),
                            name: name.clone(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes() {
        let t = PromptTemplate::new("t", "Q:{question}");
        assert_eq!(t.render([("question", "x?")]).unwrap(), "Q:x?");
    }

    #[test]
    fn missing_and_unknown() {
        let t = PromptTemplate::new("t", "{question} {knowledge}");
        assert_eq!(
            t.render([("question", "q")]),
            Err(TemplateError::MissingPlaceholder {
                template: "t".into(),
                name: "knowledge".into()
            })
        );
        assert!(matches!(
            t.render([("question", "q"), ("knowledge", "k"), ("topic", "z")]),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
    }

    #[test]
    fn values_are_not_reparsed() {
        let t = PromptTemplate::new("t", "{a}|{b}");
        assert_eq!(t.render([("a", "{b}"), ("b", "x")]).unwrap(), "{b}|x");
    }

    #[test]
    fn literal_braces() {
        let t = PromptTemplate::new("t", "{{lit}} {not an ident} {x} }");
        assert_eq!(t.placeholders().iter().collect::<Vec<_>>(), ["x"]);
        assert_eq!(t.render([("x", "1")]).unwrap(), "{lit} {not an ident} 1 }");
    }

    #[test]
    fn repeated_placeholder() {
        let t = PromptTemplate::new("t", "{q}-{q}");
        assert_eq!(t.render([("q", "z")]).unwrap(), "z-z");
    }

    #[test]
    fn non_ascii_text_survives() {
        let t = PromptTemplate::new("t", "László {x} Frič");
        assert_eq!(t.render([("x", "é")]).unwrap(), "László é Frič");
    }
}

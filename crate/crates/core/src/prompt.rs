//! Constrained prompt templates.
//!
//! Templates are data: a TOML file with a `version` and a list of
//! `[[template]]` tables (`id`, `action`, `body`). The body uses `{name}`
//! and `{description}` placeholders; every other character, braces
//! included, is copied verbatim. The built-in set is compiled in from
//! `assets/templates.toml`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::router::RouteAction;

pub const TEMPLATE_FILE_VERSION: u32 = 1;
pub const NAME_PLACEHOLDER: &str = "{name}";
pub const DESCRIPTION_PLACEHOLDER: &str = "{description}";

pub const COMPRESS_GENERIC: &str = "compress_generic";
pub const EXPAND_WORDNET: &str = "expand_wordnet";
pub const EXPAND_FREEBASE: &str = "expand_freebase";

/// Text of the built-in template file.
pub const BUILTIN_TEMPLATES: &str = include_str!("../assets/templates.toml");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{0}`: nothing to compress, the description is empty")]
    NothingToCompress(String),
    #[error("template `{0}`: entity name is empty")]
    EmptyName(String),
    #[error("template `{id}` must contain {placeholder}")]
    MissingPlaceholder { id: String, placeholder: &'static str },
    #[error("template `{0}` is keep-only; only compress and expand templates are allowed")]
    BadAction(String),
    #[error("duplicate template id `{0}`")]
    DuplicateId(String),
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
    #[error("unsupported template file version {0}")]
    Version(u32),
    #[error("template file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("template file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub action: RouteAction,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, action: RouteAction, body: impl Into<String>) -> Result<Self, PromptError> {
        let t = PromptTemplate {
            id: id.into(),
            action,
            body: body.into(),
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.action == RouteAction::Keep {
            return Err(PromptError::BadAction(self.id.clone()));
        }
        for placeholder in [NAME_PLACEHOLDER, DESCRIPTION_PLACEHOLDER] {
            if !self.body.contains(placeholder) {
                return Err(PromptError::MissingPlaceholder {
                    id: self.id.clone(),
                    placeholder,
                });
            }
        }
        Ok(())
    }

    /// Substitutes the placeholders in a single left-to-right pass, so text
    /// inside `name` or `description` is never re-expanded.
    pub fn render(&self, name: &str, description: &str) -> Result<String, PromptError> {
        if name.is_empty() {
            return Err(PromptError::EmptyName(self.id.clone()));
        }
        if self.action == RouteAction::Compress && description.trim().is_empty() {
            return Err(PromptError::NothingToCompress(self.id.clone()));
        }
        let mut out = String::with_capacity(self.body.len() + 2 * (name.len() + description.len()));
        let mut rest = self.body.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix(NAME_PLACEHOLDER) {
                out.push_str(name);
                rest = after;
            } else if let Some(after) = tail.strip_prefix(DESCRIPTION_PLACEHOLDER) {
                out.push_str(description);
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[derive(Deserialize)]
struct TemplateFile {
    version: u32,
    #[serde(default, rename = "template")]
    templates: Vec<PromptTemplate>,
}

/// A registry of templates keyed by id, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATES).expect("built-in templates are valid")
    }

    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let file: TemplateFile = toml::from_str(text)?;
        if file.version != TEMPLATE_FILE_VERSION {
            return Err(PromptError::Version(file.version));
        }
        let mut set = TemplateSet { templates: Vec::new() };
        for t in file.templates {
            set.register(t)?;
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn register(&mut self, template: PromptTemplate) -> Result<(), PromptError> {
        template.validate()?;
        if self.get(&template.id).is_some() {
            return Err(PromptError::DuplicateId(template.id));
        }
        self.templates.push(template);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.get(id).ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.iter()
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_three_templates() {
        let set = TemplateSet::builtin();
        let ids: Vec<_> = set.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, [COMPRESS_GENERIC, EXPAND_WORDNET, EXPAND_FREEBASE]);
    }

    #[test]
    fn compress_rejects_empty_description() {
        let set = TemplateSet::builtin();
        let err = set.require(COMPRESS_GENERIC).unwrap().render("Paris", " ").unwrap_err();
        assert!(matches!(err, PromptError::NothingToCompress(_)));
    }

    #[test]
    fn expansion_allows_empty_description() {
        let set = TemplateSet::builtin();
        let out = set.require(EXPAND_FREEBASE).unwrap().render("Paris", "").unwrap();
        assert_eq!(
            out,
            "Please regenerate the description of Paris based on . You just need answer the regenerated text description!"
        );
    }

    #[test]
    fn placeholders_inside_values_are_not_expanded() {
        let t = PromptTemplate::new("t", RouteAction::Expand, "{name}|{description}|{other}").unwrap();
        assert_eq!(t.render("{description}", "x").unwrap(), "{description}|x|{other}");
    }

    #[test]
    fn missing_placeholder_rejected() {
        let err = PromptTemplate::new("t", RouteAction::Expand, "only {name}").unwrap_err();
        assert!(matches!(err, PromptError::MissingPlaceholder { .. }));
    }

    #[test]
    fn bad_version_rejected() {
        assert!(matches!(
            TemplateSet::parse("version = 2\n"),
            Err(PromptError::Version(2))
        ));
    }
}

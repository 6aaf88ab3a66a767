//! Textual representations of entities and relation types.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pipeline::document::{read_jsonl, write_jsonl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassageKind {
    Entity,
    Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub kind: PassageKind,
    /// Retriever-side text: title plus opening for entities, name plus
    /// definition for relations.
    pub text: String,
    /// Reader-side text; falls back to `text` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_nme: bool,
}

impl Passage {
    pub fn reader_text(&self) -> &str {
        self.title.as_deref().unwrap_or(&self.text)
    }
}

pub fn validate_passages(passages: &[Passage]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for p in passages {
        if !seen.insert(p.id.as_str()) {
            return Err(CoreError::Validation(format!("duplicate passage id `{}`", p.id)));
        }
        if p.is_nme && p.kind == PassageKind::Relation {
            return Err(CoreError::Validation(format!("relation passage `{}` marked NME", p.id)));
        }
    }
    Ok(())
}

pub fn read_passages(path: &Path) -> Result<Vec<Passage>> {
    let ps: Vec<Passage> = read_jsonl(path)?;
    validate_passages(&ps)?;
    Ok(ps)
}

pub fn write_passages(path: &Path, passages: &[Passage]) -> Result<()> {
    write_jsonl(path, passages)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_fields_and_defaults() {
        let p: Passage = serde_json::from_str(r#"{"id":"E1","kind":"entity","text":"alpha city"}"#).unwrap();
        assert_eq!(p.reader_text(), "alpha city");
        assert!(!p.is_nme);
        let dup = vec![p.clone(), p];
        assert!(validate_passages(&dup).is_err());
    }
}

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KalmError, Result};
use crate::io::{read_utf8, write_atomic};
use crate::kgstore::{EntityId, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub tokens: Vec<String>,
    /// Linked entity ids, in mention order (repeats allowed).
    pub mentions: Vec<EntityId>,
}

/// One labelled document; serialized as one JSON object per corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub label: usize,
    pub paragraphs: Vec<Paragraph>,
}

impl DocumentRecord {
    pub fn validate(&self, kg: &KnowledgeGraph) -> Result<()> {
        if self.paragraphs.is_empty() {
            return Err(KalmError::Input(format!("document {} has no paragraphs", self.doc_id)));
        }
        for (i, p) in self.paragraphs.iter().enumerate() {
            if let Some(bad) = p.mentions.iter().find(|&&e| !kg.has_entity(e)) {
                return Err(KalmError::Input(format!(
                    "document {} paragraph {i} mentions unknown entity {bad}",
                    self.doc_id
                )));
            }
        }
        Ok(())
    }

    /// Every entity mentioned anywhere in the document.
    pub fn mentioned_entities(&self) -> BTreeSet<EntityId> {
        self.paragraphs
            .iter()
            .flat_map(|p| p.mentions.iter().copied())
            .collect()
    }

    pub fn n_paragraphs(&self) -> usize {
        self.paragraphs.len()
    }
}

pub fn corpus_to_jsonl(docs: &[DocumentRecord]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("documents always serialize"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(path: &Path, docs: &[DocumentRecord]) -> Result<()> {
    write_atomic(path, corpus_to_jsonl(docs).as_bytes())
}

/// Reads a line-delimited corpus, validating mentions against `kg` when given.
pub fn load_corpus(path: &Path, kg: Option<&KnowledgeGraph>) -> Result<Vec<DocumentRecord>> {
    let text = read_utf8(path)?;
    let mut docs = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| KalmError::Format {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let doc: DocumentRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if let Some(kg) = kg {
            doc.validate(kg).map_err(|e| err(e.to_string()))?;
        }
        if !ids.insert(doc.doc_id.clone()) {
            return Err(err(format!("duplicate doc_id {}", doc.doc_id)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

//! TSV interchange for knowledge graphs.
//!
//! * triples: `head_id<TAB>relation_id<TAB>tail_id`
//! * descriptions: `kind(E|R)<TAB>id<TAB>name<TAB>description`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::graph::{Described, EntityId, KnowledgeGraph, RelationId, Triple};
use crate::error::{KalmError, Result};
use crate::io::{read_utf8, write_atomic};

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> KalmError {
    KalmError::Format {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_id(path: &Path, line: usize, field: &str, raw: &str) -> Result<u32> {
    raw.trim()
        .parse()
        .map_err(|_| format_err(path, line, format!("{field} {raw:?} is not a non-negative integer")))
}

/// Reads a knowledge graph from a triples file and a descriptions file.
pub fn load_kg(triples_path: &Path, descriptions_path: &Path) -> Result<KnowledgeGraph> {
    let desc_text = read_utf8(descriptions_path)?;
    let mut entities = BTreeMap::new();
    let mut relations = BTreeMap::new();
    for (i, line) in desc_text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() < 3 {
            return Err(format_err(
                descriptions_path,
                lineno,
                "expected kind, id, name and description separated by tabs",
            ));
        }
        let id = parse_id(descriptions_path, lineno, "id", fields[1])?;
        let d = Described::new(fields[2], fields.get(3).copied().unwrap_or(""));
        let dup = match fields[0] {
            "E" => entities.insert(EntityId(id), d).is_some(),
            "R" => relations.insert(RelationId(id), d).is_some(),
            other => {
                return Err(format_err(
                    descriptions_path,
                    lineno,
                    format!("kind must be E or R, got {other:?}"),
                ))
            }
        };
        if dup {
            return Err(format_err(descriptions_path, lineno, format!("duplicate id {id}")));
        }
    }

    let triple_text = read_utf8(triples_path)?;
    let mut triples = Vec::new();
    for (i, line) in triple_text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(format_err(triples_path, lineno, "expected head, relation and tail separated by tabs"));
        }
        let head = parse_id(triples_path, lineno, "head", fields[0])?;
        let rel = parse_id(triples_path, lineno, "relation", fields[1])?;
        let tail = parse_id(triples_path, lineno, "tail", fields[2])?;
        if !entities.contains_key(&EntityId(head)) {
            return Err(format_err(triples_path, lineno, format!("unknown head entity {head}")));
        }
        if !relations.contains_key(&RelationId(rel)) {
            return Err(format_err(triples_path, lineno, format!("unknown relation {rel}")));
        }
        if !entities.contains_key(&EntityId(tail)) {
            return Err(format_err(triples_path, lineno, format!("unknown tail entity {tail}")));
        }
        triples.push(Triple::new(head, rel, tail));
    }
    KnowledgeGraph::new(entities, relations, triples)
}

pub fn triples_tsv(kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for t in kg.triples() {
        let _ = writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail);
    }
    out
}

pub fn descriptions_tsv(kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for (id, d) in kg.entities() {
        let _ = writeln!(out, "E\t{id}\t{}\t{}", d.name, d.description);
    }
    for (id, d) in kg.relations() {
        let _ = writeln!(out, "R\t{id}\t{}\t{}", d.name, d.description);
    }
    out
}

pub fn save_kg(kg: &KnowledgeGraph, triples_path: &Path, descriptions_path: &Path) -> Result<()> {
    write_atomic(triples_path, triples_tsv(kg).as_bytes())?;
    write_atomic(descriptions_path, descriptions_tsv(kg).as_bytes())
}

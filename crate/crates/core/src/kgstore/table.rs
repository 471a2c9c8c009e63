use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::graph::{EntityId, RelationId};
use crate::error::{KalmError, Result};
use crate::io::{read_utf8, write_atomic};
use crate::numcore::{load_tensor, save_tensor, Tensor};

/// Relation slots that have no knowledge-graph counterpart. Their vectors are
/// learnable model parameters, not rows of the frozen table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReservedRelation {
    /// Document-graph self loop.
    SelfLoop,
    /// Document-graph edge between the fusion node and a paragraph.
    Super,
    /// Global-subgraph edge between the fusion entity and a KG entity.
    Fusion,
}

/// Frozen entity and relation vectors, e.g. from TransE.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    entity_ids: Vec<EntityId>,
    entity_vecs: Tensor,
    relation_ids: Vec<RelationId>,
    relation_vecs: Tensor,
    entity_rows: BTreeMap<EntityId, usize>,
    relation_rows: BTreeMap<RelationId, usize>,
    frozen: bool,
}

impl EmbeddingTable {
    pub fn new(
        entity_ids: Vec<EntityId>,
        entity_vecs: Tensor,
        relation_ids: Vec<RelationId>,
        relation_vecs: Tensor,
        frozen: bool,
    ) -> Result<Self> {
        let (ne, de) = entity_vecs.check_matrix("entity table")?;
        let (nr, dr) = relation_vecs.check_matrix("relation table")?;
        if ne != entity_ids.len() || nr != relation_ids.len() || de != dr {
            return Err(KalmError::dim(format!(
                "embedding table: {} entity ids for {ne}x{de}, {} relation ids for {nr}x{dr}",
                entity_ids.len(),
                relation_ids.len()
            )));
        }
        let entity_rows = entity_ids.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let relation_rows = relation_ids.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        Ok(Self {
            entity_ids,
            entity_vecs,
            relation_ids,
            relation_vecs,
            entity_rows,
            relation_rows,
            frozen,
        })
    }

    pub fn dim(&self) -> usize {
        self.entity_vecs.cols()
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn entity_count(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_ids.len()
    }

    pub fn entity_vec(&self, e: EntityId) -> Option<&[f64]> {
        self.entity_rows.get(&e).map(|&i| self.entity_vecs.row_slice(i))
    }

    pub fn relation_vec(&self, r: RelationId) -> Option<&[f64]> {
        self.relation_rows.get(&r).map(|&i| self.relation_vecs.row_slice(i))
    }

    pub fn entity_matrix(&self) -> &Tensor {
        &self.entity_vecs
    }

    /// Stacks entity rows in the given order.
    pub fn gather_entities(&self, ids: &[EntityId]) -> Result<Tensor> {
        let rows: Vec<&[f64]> = ids
            .iter()
            .map(|&e| {
                self.entity_vec(e)
                    .ok_or_else(|| KalmError::Input(format!("entity {e} has no embedding")))
            })
            .collect::<Result<_>>()?;
        Tensor::from_rows(&rows)
    }

    fn paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let with = |ext: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        (with(".header"), with(".entities.tns"), with(".relations.tns"))
    }

    /// Writes `<prefix>.entities.tns`, `<prefix>.relations.tns` and a
    /// `<prefix>.header` sidecar with dim, counts and row ids.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let (header, ents, rels) = Self::paths(prefix);
        let join = |ids: Vec<u32>| ids.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let mut h = String::new();
        let _ = writeln!(h, "dim={}", self.dim());
        let _ = writeln!(h, "entities={}", self.entity_count());
        let _ = writeln!(h, "relations={}", self.relation_count());
        let _ = writeln!(h, "frozen={}", self.frozen);
        let _ = writeln!(h, "entity_ids={}", join(self.entity_ids.iter().map(|e| e.0).collect()));
        let _ = writeln!(h, "relation_ids={}", join(self.relation_ids.iter().map(|r| r.0).collect()));
        save_tensor(&ents, &self.entity_vecs)?;
        save_tensor(&rels, &self.relation_vecs)?;
        write_atomic(&header, h.as_bytes())
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let (header, ents, rels) = Self::paths(prefix);
        let text = read_utf8(&header)?;
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| KalmError::Format {
                path: header.display().to_string(),
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields.get(k).cloned().ok_or_else(|| KalmError::Format {
                path: header.display().to_string(),
                line: 0,
                msg: format!("missing {k}"),
            })
        };
        let ids = |k: &str| -> Result<Vec<u32>> {
            let raw = get(k)?;
            if raw.is_empty() {
                return Ok(vec![]);
            }
            raw.split(',')
                .map(|s| {
                    s.parse().map_err(|_| KalmError::Format {
                        path: header.display().to_string(),
                        line: 0,
                        msg: format!("bad id {s:?} in {k}"),
                    })
                })
                .collect()
        };
        let table = Self::new(
            ids("entity_ids")?.into_iter().map(EntityId).collect(),
            load_tensor(&ents)?,
            ids("relation_ids")?.into_iter().map(RelationId).collect(),
            load_tensor(&rels)?,
            get("frozen")? == "true",
        )?;
        let dim: usize = get("dim")?.parse().unwrap_or(0);
        if dim != table.dim() {
            return Err(KalmError::Format {
                path: header.display().to_string(),
                line: 0,
                msg: format!("header dim {dim} disagrees with tensor dim {}", table.dim()),
            });
        }
        Ok(table)
    }

    /// Same table with every value rounded through `f32`.
    pub fn round_to_f32(&self) -> Self {
        let mut t = self.clone();
        t.entity_vecs = t.entity_vecs.round_to_f32();
        t.relation_vecs = t.relation_vecs.round_to_f32();
        t
    }
}

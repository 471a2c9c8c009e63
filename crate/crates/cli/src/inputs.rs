use std::path::{Path, PathBuf};

use anyhow::Result;
use kalm::contexts::{load_corpus, DocumentRecord, EmbeddingInterchange, EmbeddingSource};
use kalm::kgstore::{load_kg, EmbeddingTable, KnowledgeGraph};
use kalm::model::{embed_kg, TrainConfig};

use crate::Common;

pub const CONFIG_FILE: &str = "config.txt";

/// Resolved configuration and file locations of one invocation.
pub struct Context {
    pub cfg: CfgSource,
    pub out: PathBuf,
    pub corpus: PathBuf,
    pub kg_dir: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub model_dir: PathBuf,
}

pub struct CfgSource {
    file: Option<PathBuf>,
    overrides: Vec<String>,
    seed: Option<u64>,
    /// File (or defaults) plus overrides.
    pub resolved: TrainConfig,
}

impl CfgSource {
    fn over(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        for item in &self.overrides {
            cfg.apply_override(item)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Context {
    pub fn new(c: &Common) -> Result<Self> {
        let mut cfg = CfgSource {
            file: c.config.clone(),
            overrides: c.overrides.clone(),
            seed: c.seed,
            resolved: TrainConfig::default(),
        };
        let base = match &cfg.file {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        cfg.resolved = cfg.over(base)?;
        Ok(Self {
            cfg,
            corpus: c.corpus.clone().unwrap_or_else(|| c.out.join("corpus.jsonl")),
            kg_dir: c.kg.clone().unwrap_or_else(|| c.out.join("kg")),
            embeddings: c.embeddings.clone(),
            model_dir: c.model.clone().unwrap_or_else(|| c.out.join("model")),
            out: c.out.clone(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg.resolved
    }

    /// The configuration a checkpoint was trained with, unless `--config`
    /// names another; overrides still apply.
    pub fn model_config(&self) -> Result<TrainConfig> {
        let saved = self.model_dir.join(CONFIG_FILE);
        if self.cfg.file.is_none() && saved.exists() {
            return self.cfg.over(TrainConfig::load(&saved)?);
        }
        Ok(self.cfg.resolved.clone())
    }

    pub fn kg_paths(&self) -> (PathBuf, PathBuf) {
        (self.kg_dir.join("triples.tsv"), self.kg_dir.join("descriptions.tsv"))
    }

    pub fn load_kg(&self) -> Result<KnowledgeGraph> {
        let (t, d) = self.kg_paths();
        Ok(load_kg(&t, &d)?)
    }

    pub fn load_docs(&self, kg: &KnowledgeGraph) -> Result<Vec<DocumentRecord>> {
        Ok(load_corpus(&self.corpus, Some(kg))?)
    }

    pub fn kge_prefix(&self) -> PathBuf {
        self.out.join("kge")
    }

    /// The saved TransE table when its shape fits, otherwise a freshly trained one.
    pub fn table(&self, kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<EmbeddingTable> {
        let prefix = self.kge_prefix();
        if header_path(&prefix).exists() {
            let t = EmbeddingTable::load(&prefix)?;
            if t.dim() == cfg.kge_dim && t.entity_count() == kg.entity_count() {
                return Ok(t);
            }
            log::warn!("saved KG embedding does not match the configuration; retraining");
        }
        log::info!("training TransE ({} epochs, dim {})", cfg.transe_epochs, cfg.kge_dim);
        let t = embed_kg(kg, cfg)?;
        t.save(&prefix)?;
        Ok(t)
    }

    pub fn interchange(&self) -> Result<Option<EmbeddingInterchange>> {
        Ok(match &self.embeddings {
            Some(p) => Some(EmbeddingInterchange::load(p)?),
            None => None,
        })
    }
}

pub fn source(file: &Option<EmbeddingInterchange>) -> EmbeddingSource<'_> {
    match file {
        Some(f) => EmbeddingSource::Precomputed(f),
        None => EmbeddingSource::Hashed,
    }
}

fn header_path(prefix: &Path) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".header");
    PathBuf::from(s)
}

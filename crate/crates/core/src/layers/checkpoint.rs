use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KalmError, Result};
use crate::io::{read_utf8, write_atomic};
use crate::numcore::{encode_tensor, load_tensor, ParamStore};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub layer: Option<usize>,
    pub shape: Vec<usize>,
}

/// Writes every parameter as `pNNNN.tns` plus a JSON manifest. Values are
/// stored as f32, so only f32-representable parameters reload bit-exactly.
pub fn save_params(dir: &Path, store: &ParamStore) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| KalmError::io(dir, e))?;
    let mut manifest = Vec::with_capacity(store.len());
    for (i, entry) in store.entries().iter().enumerate() {
        let file = format!("p{i:04}.tns");
        write_atomic(&dir.join(&file), &encode_tensor(&entry.tensor))?;
        manifest.push(ManifestEntry {
            name: entry.name.clone(),
            file,
            layer: entry.layer,
            shape: entry.tensor.shape().to_vec(),
        });
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn load_params(dir: &Path) -> Result<ParamStore> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(KalmError::MissingPath(path));
    }
    let text = read_utf8(&path)?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| KalmError::Format {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut store = ParamStore::new();
    for m in manifest {
        let t = load_tensor(&dir.join(&m.file))?;
        if t.shape() != m.shape.as_slice() {
            return Err(KalmError::Format {
                path: m.file.clone(),
                line: 0,
                msg: format!("shape {:?} differs from manifest {:?}", t.shape(), m.shape),
            });
        }
        store.insert(m.name, m.layer, t)?;
    }
    Ok(store)
}

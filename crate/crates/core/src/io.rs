use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{KalmError, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| KalmError::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| KalmError::Input(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| KalmError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| KalmError::io(&tmp, e))?;
        f.sync_all().map_err(|e| KalmError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| KalmError::io(path, e))
}

pub fn read_utf8(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(KalmError::MissingPath(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| KalmError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| KalmError::Encoding {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

//! Checkpoint format: magic "DCCM1", length-prefixed UTF-8 config block
//! (JSON), then parameter blobs in declaration order as little-endian f32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, ModelError};

const MAGIC: &[u8; 5] = b"DCCM1";

fn io_err(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let meta = serde_json::to_vec(&model.config).expect("config serializes");
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(MAGIC).map_err(|e| io_err(path, e))?;
    f.write_all(&(meta.len() as u32).to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    f.write_all(&meta).map_err(|e| io_err(path, e))?;
    let mut buf = Vec::new();
    for p in model.params() {
        buf.clear();
        buf.reserve(p.value.numel() * 4);
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, ModelError> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut magic = [0u8; 5];
    f.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(ModelError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes).map_err(|e| io_err(path, e))?;
    let meta_len = u32::from_le_bytes(len_bytes) as usize;
    let mut meta = vec![0u8; meta_len];
    f.read_exact(&mut meta).map_err(|e| io_err(path, e))?;
    let config: ModelConfig = serde_json::from_slice(&meta)
        .map_err(|e| ModelError::Format(format!("config block: {e}")))?;
    let mut model = Model::new(config)?;
    let mut buf = Vec::new();
    for p in model.params_mut() {
        let n = p.value.numel() * 4;
        buf.resize(n, 0);
        f.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
        for (i, v) in p.value.data_mut().iter_mut().enumerate() {
            *v = f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap());
        }
    }
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing).map_err(|e| io_err(path, e))? != 0 {
        return Err(ModelError::Format("trailing bytes after parameters".into()));
    }
    Ok(model)
}

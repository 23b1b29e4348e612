//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 format version, u64 header length, a JSON
//! header (kind, model config, parameter names and shapes, parameter hash),
//! then every parameter as little-endian f64 in header order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;

const MAGIC: &[u8; 8] = b"TSDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub params: Vec<ParamSpec>,
    pub param_hash: String,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    module: &dyn Module,
) -> Result<()> {
    let mut params = Vec::new();
    let mut blob = Vec::new();
    module.visit(&mut |name, p| {
        params.push(ParamSpec {
            name: name.to_string(),
            shape: [p.value.nrows(), p.value.ncols()],
        });
        for v in p.value.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        config,
        params,
        param_hash: module.param_hash(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn read_parts(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::Checkpoint(format!("{}: {why}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 20 + len {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..20 + len]).map_err(|e| bad(&format!("header: {e}")))?;
    Ok((header, bytes[20 + len..].to_vec()))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(read_parts(path)?.0)
}

/// Load parameters into a module built from the header's config. Names,
/// shapes and the stored hash must all match.
pub fn load_checkpoint(path: &Path, module: &mut dyn Module) -> Result<CheckpointHeader> {
    let (header, blob) = read_parts(path)?;
    let bad = |why: String| Error::Checkpoint(format!("{}: {why}", path.display()));
    let expected: usize = header.params.iter().map(|p| p.shape[0] * p.shape[1]).sum();
    if blob.len() != expected * 8 {
        return Err(bad(format!(
            "payload has {} bytes, header needs {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut i = 0;
    let mut offset = 0;
    let mut err = None;
    module.visit_mut(&mut |name, p| {
        if err.is_some() {
            return;
        }
        let Some(spec) = header.params.get(i) else {
            err = Some(format!(
                "model has more parameters than the checkpoint ({name})"
            ));
            return;
        };
        if spec.name != name || spec.shape != [p.value.nrows(), p.value.ncols()] {
            err = Some(format!(
                "parameter {i} is {} {:?} in the checkpoint but {name} {:?} in the model",
                spec.name,
                spec.shape,
                p.value.shape()
            ));
            return;
        }
        let n = spec.shape[0] * spec.shape[1];
        let vals: Vec<f64> = blob[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        p.value = Array2::from_shape_vec((spec.shape[0], spec.shape[1]), vals).expect("sized");
        p.zero_grad();
        offset += n * 8;
        i += 1;
    });
    if let Some(e) = err {
        return Err(bad(e));
    }
    if i != header.params.len() {
        return Err(bad(format!(
            "checkpoint has {} parameters, model {i}",
            header.params.len()
        )));
    }
    if module.param_hash() != header.param_hash {
        return Err(bad("parameter hash mismatch".into()));
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{StudentConfig, StudentModel};

    #[test]
    fn student_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        let m = StudentModel::new(StudentConfig::desk(), 3).unwrap();
        save_checkpoint(
            &path,
            "f_student",
            serde_json::to_value(&m.config).unwrap(),
            &m,
        )
        .unwrap();
        let header = read_checkpoint_header(&path).unwrap();
        assert_eq!(header.version, CHECKPOINT_VERSION);
        let cfg: StudentConfig = serde_json::from_value(header.config).unwrap();
        let mut back = StudentModel::new(cfg, 99).unwrap();
        assert_ne!(back.param_hash(), m.param_hash());
        load_checkpoint(&path, &mut back).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_mismatched_models_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        let m = StudentModel::new(StudentConfig::desk(), 3).unwrap();
        save_checkpoint(&path, "f_student", serde_json::Value::Null, &m).unwrap();
        let mut other = StudentModel::new(StudentConfig::default(), 3).unwrap();
        assert!(load_checkpoint(&path, &mut other).is_err());
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"hello world, not a checkpoint").unwrap();
        assert!(read_checkpoint_header(&junk).is_err());
    }
}

//! Feature cache: raw little-endian f64 array plus a JSON sidecar.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MelConfig, MelSpectrogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCacheMeta {
    pub shape: [usize; 2],
    pub dtype: String,
    pub frames_per_second: f64,
    pub clip_duration: f64,
    pub mel: MelConfig,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn save_feature_cache(path: &Path, mel: &MelSpectrogram, cfg: &MelConfig) -> Result<()> {
    let (t, f) = mel.values.dim();
    let mut bytes = Vec::with_capacity(t * f * 8);
    for v in mel.values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = FeatureCacheMeta {
        shape: [t, f],
        dtype: "f64le".into(),
        frames_per_second: mel.frames_per_second,
        clip_duration: mel.clip_duration,
        mel: cfg.clone(),
    };
    let side = sidecar(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

pub fn load_feature_cache(path: &Path) -> Result<(MelSpectrogram, FeatureCacheMeta)> {
    let side = sidecar(path);
    let meta: FeatureCacheMeta =
        serde_json::from_slice(&std::fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    if meta.dtype != "f64le" {
        return Err(Error::Decode {
            path: path.into(),
            reason: format!("unsupported dtype {}", meta.dtype),
        });
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let [t, f] = meta.shape;
    if bytes.len() != t * f * 8 {
        return Err(Error::Decode {
            path: path.into(),
            reason: format!("expected {} bytes, found {}", t * f * 8, bytes.len()),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((t, f), data).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((
        MelSpectrogram {
            values,
            frames_per_second: meta.frames_per_second,
            clip_duration: meta.clip_duration,
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{mel_spectrogram, Waveform};

    #[test]
    fn cache_roundtrip_is_exact() {
        let s: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.37).sin()).collect();
        let mel = mel_spectrogram(&Waveform::new(s)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        save_feature_cache(&p, &mel, &MelConfig::default()).unwrap();
        let (back, meta) = load_feature_cache(&p).unwrap();
        assert_eq!(back, mel);
        assert_eq!(meta.shape, [mel.frames(), 64]);
    }
}

//! JSON-lines manifests: one sample per line.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ClipLabel, Domain, Event, EventList, Split, TsdSample};
use crate::error::{Error, Result};
use crate::features::{load_audio, mel_spectrogram, MelSpectrogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mixture_path: String,
    pub reference_path: String,
    pub target_class: String,
    /// `[[onset, offset, class], ...]` for every event in the mixture, or
    /// null for weakly annotated data.
    pub events: Option<Vec<(f64, f64, String)>>,
    pub clip_label: u8,
    pub domain: Domain,
    pub split: Split,
}

impl ManifestEntry {
    pub fn event_list(&self) -> Option<EventList> {
        self.events.as_ref().map(|v| {
            v.iter()
                .map(|(on, off, c)| Event::new(*on, *off, c.clone()))
                .collect()
        })
    }
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(manifest_to_string(entries)?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if entry.clip_label > 1 {
            return Err(Error::Dataset(format!(
                "{}:{}: clip_label must be 0 or 1",
                path.display(),
                i + 1
            )));
        }
        out.push(entry);
    }
    Ok(out)
}

/// Load audio for every entry (paths relative to `base_dir`), compute
/// features and build samples. Features of repeated paths are shared.
pub fn load_samples(entries: &[ManifestEntry], base_dir: &Path) -> Result<Vec<TsdSample>> {
    let mut cache: BTreeMap<String, Arc<MelSpectrogram>> = BTreeMap::new();
    let mut features = |rel: &str| -> Result<Arc<MelSpectrogram>> {
        if let Some(m) = cache.get(rel) {
            return Ok(m.clone());
        }
        let m = Arc::new(mel_spectrogram(&load_audio(base_dir.join(rel))?)?);
        cache.insert(rel.to_string(), m.clone());
        Ok(m)
    };
    let mut events_cache: BTreeMap<String, Arc<EventList>> = BTreeMap::new();
    entries
        .iter()
        .map(|e| {
            let mixture = features(&e.mixture_path)?;
            let reference = features(&e.reference_path)?;
            let events = e.event_list().map(|ev| {
                events_cache
                    .entry(e.mixture_path.clone())
                    .or_insert_with(|| Arc::new(ev))
                    .clone()
            });
            TsdSample::new(
                e.mixture_path.clone(),
                e.reference_path.clone(),
                mixture,
                reference,
                e.target_class.clone(),
                ClipLabel(e.clip_label),
                e.domain,
                e.split,
                events,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip_and_field_names() {
        let e = ManifestEntry {
            mixture_path: "mix/0.wav".into(),
            reference_path: "ref/a/0.wav".into(),
            target_class: "a".into(),
            events: Some(vec![(1.0, 2.5, "a".into()), (0.0, 0.5, "b".into())]),
            clip_label: 1,
            domain: Domain::Source,
            split: Split::Train,
        };
        let weak = ManifestEntry {
            events: None,
            domain: Domain::Target,
            ..e.clone()
        };
        let s = manifest_to_string(&[e.clone(), weak.clone()]).unwrap();
        assert_eq!(
            s.lines().next().unwrap(),
            r#"{"mixture_path":"mix/0.wav","reference_path":"ref/a/0.wav","target_class":"a","events":[[1.0,2.5,"a"],[0.0,0.5,"b"]],"clip_label":1,"domain":"source","split":"train"}"#
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &[e.clone(), weak.clone()]).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), vec![e, weak]);
    }

    #[test]
    fn bad_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "{\"nope\": 1}\n").unwrap();
        let err = read_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("m.jsonl:1"), "{err}");
    }
}

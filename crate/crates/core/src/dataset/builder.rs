//! Toy benchmark: a synthetic catalog split into source and target classes,
//! scenes per domain and split, and their TSD samples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{split_source_target, Catalog, SceneEntry};
use super::manifest::{write_manifest, ManifestEntry};
use super::samples::{make_tsd_samples, ReferenceBank, SceneFeatures, TsdSample};
use super::scene::{render_recipe, Placement, SceneRecipe};
use super::toy::{BackgroundKind, BackgroundSpec, ToyBank, ToyBankConfig};
use super::{derive_seed, Domain, Split};
use crate::error::{Error, Result};
use crate::features::wav::write_wav_f32;
use crate::features::{mel_spectrogram, Waveform, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl ToySplitSizes {
    fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDatasetConfig {
    pub bank: ToyBankConfig,
    /// Source class names. Empty picks `n_source_classes` classes spread
    /// evenly over the bank.
    pub source_classes: Vec<String>,
    pub n_source_classes: usize,
    /// Target class names. Empty takes every class that is not a source
    /// class.
    #[serde(default)]
    pub target_classes: Vec<String>,
    pub scene_duration: f64,
    pub source_scenes: ToySplitSizes,
    pub target_scenes: ToySplitSizes,
    pub max_classes_per_scene: usize,
    pub max_events_per_class: usize,
    pub references_per_class: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub source_background: BackgroundKind,
    pub source_background_rms: f64,
    pub target_background: BackgroundKind,
    pub target_background_rms: f64,
    pub seed: u64,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        Self {
            bank: ToyBankConfig::default(),
            source_classes: Vec::new(),
            n_source_classes: 4,
            target_classes: Vec::new(),
            scene_duration: 4.0,
            source_scenes: ToySplitSizes {
                train: 600,
                val: 100,
                test: 100,
            },
            target_scenes: ToySplitSizes {
                train: 900,
                val: 100,
                test: 200,
            },
            max_classes_per_scene: 3,
            max_events_per_class: 2,
            references_per_class: 8,
            snr_db_min: -3.0,
            snr_db_max: 9.0,
            source_background: BackgroundKind::Pink,
            source_background_rms: 0.02,
            target_background: BackgroundKind::BrownHum,
            target_background_rms: 0.04,
            seed: 0,
        }
    }
}

/// One synthetic scene and where it belongs.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub entry: SceneEntry,
    pub domain: Domain,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub config: ToyDatasetConfig,
    pub bank: ToyBank,
    pub catalog: Catalog,
    pub source_catalog: Catalog,
    pub target_catalog: Catalog,
    pub scenes: Vec<ToyScene>,
    /// reference id -> (class index, bank instance)
    references: BTreeMap<String, (usize, u64)>,
}

/// Files written by [`ToyDataset::write`].
#[derive(Debug, Clone)]
pub struct WrittenDataset {
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    pub target_strong_manifest: PathBuf,
    pub n_samples: usize,
}

fn reference_id(class: &str, instance: u64) -> String {
    format!("ref/{class}/{instance:03}.wav")
}

fn scene_id(domain: Domain, split: Split, index: usize) -> String {
    format!("mix/{domain}/{split}/{index:05}.wav")
}

fn default_source_classes(bank: &ToyBank, n: usize) -> Vec<String> {
    let total = bank.classes.len();
    (0..n)
        .map(|k| bank.classes[k * total / n.max(1)].name.clone())
        .collect()
}

/// Lay out the toy catalog and all scene recipes. No audio is rendered.
pub fn build_toy_dataset(config: &ToyDatasetConfig) -> Result<ToyDataset> {
    if config.scene_duration <= 0.0 || config.scene_duration < config.bank.max_len {
        return Err(Error::InvalidInput(format!(
            "scene duration {} must exceed the longest clip {}",
            config.scene_duration, config.bank.max_len
        )));
    }
    if config.max_classes_per_scene == 0
        || config.max_events_per_class == 0
        || config.references_per_class == 0
    {
        return Err(Error::InvalidInput(
            "scene and reference counts must be positive".into(),
        ));
    }
    if config.snr_db_min > config.snr_db_max {
        return Err(Error::InvalidInput("snr_db_min exceeds snr_db_max".into()));
    }
    let bank = ToyBank::new(ToyBankConfig {
        seed: derive_seed(config.seed, &[0xBA4C]),
        ..config.bank.clone()
    });
    let names = bank.class_names();
    let source: Vec<String> = if config.source_classes.is_empty() {
        default_source_classes(&bank, config.n_source_classes)
    } else {
        config.source_classes.clone()
    };
    let source_set: BTreeSet<String> = source.iter().cloned().collect();
    let target_set: BTreeSet<String> = if config.target_classes.is_empty() {
        names
            .iter()
            .filter(|n| !source_set.contains(*n))
            .cloned()
            .collect()
    } else {
        config.target_classes.iter().cloned().collect()
    };
    let known: BTreeSet<&String> = names.iter().collect();
    let unknown: Vec<&String> = source_set
        .iter()
        .chain(&target_set)
        .filter(|c| !known.contains(c))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::InvalidInput(format!("unknown classes: {unknown:?}")));
    }
    let shared: Vec<&String> = source_set.intersection(&target_set).collect();
    if !shared.is_empty() {
        return Err(Error::InvalidInput(format!(
            "source and target classes overlap: {shared:?}"
        )));
    }

    let mut references = BTreeMap::new();
    let mut clean_clips = BTreeMap::new();
    for (k, name) in names.iter().enumerate() {
        if !source_set.contains(name) && !target_set.contains(name) {
            continue;
        }
        let ids: Vec<String> = (0..config.references_per_class as u64)
            .map(|inst| {
                let id = reference_id(name, inst);
                references.insert(id.clone(), (k, inst));
                id
            })
            .collect();
        clean_clips.insert(name.clone(), ids);
    }

    let sr = SAMPLE_RATE as f64;
    let scene_samples = (config.scene_duration * sr).round() as usize;
    let mut next_instance = config.references_per_class as u64;
    let mut scenes = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        let pool: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| match domain {
                Domain::Source => source_set.contains(*n),
                Domain::Target => target_set.contains(*n),
            })
            .map(|(k, _)| k)
            .collect();
        if pool.len() < 2 {
            return Err(Error::Dataset(format!(
                "{domain} side needs at least two classes"
            )));
        }
        let (sizes, kind, level) = match domain {
            Domain::Source => (
                config.source_scenes,
                config.source_background,
                config.source_background_rms,
            ),
            Domain::Target => (
                config.target_scenes,
                config.target_background,
                config.target_background_rms,
            ),
        };
        for (si, split) in [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .enumerate()
        {
            for i in 0..sizes.get(split) {
                let seed = derive_seed(
                    config.seed,
                    &[0x5CE7E, domain.index() as u64, si as u64, i as u64],
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n_classes =
                    rng.random_range(1..=config.max_classes_per_scene.min(pool.len() - 1));
                let chosen: Vec<usize> =
                    pool.choose_multiple(&mut rng, n_classes).copied().collect();
                let mut placements = Vec::new();
                let mut spans: Vec<(usize, usize, usize)> = Vec::new();
                for &k in &chosen {
                    let n_events = rng.random_range(1..=config.max_events_per_class);
                    let mut placed = 0;
                    for _attempt in 0..8 * n_events {
                        if placed == n_events {
                            break;
                        }
                        let len = bank.clip_len(k, next_instance);
                        let start = rng.random_range(0..=scene_samples - len);
                        let end = start + len;
                        // events of one class never overlap
                        if spans
                            .iter()
                            .any(|&(c, s, e)| c == k && start < e && s < end)
                        {
                            continue;
                        }
                        spans.push((k, start, end));
                        placements.push(Placement {
                            class: names[k].clone(),
                            clip_id: bank.clip_id(k, next_instance),
                            onset: start as f64 / sr,
                        });
                        next_instance += 1;
                        placed += 1;
                    }
                }
                let recipe = SceneRecipe {
                    duration: scene_samples as f64 / sr,
                    background: BackgroundSpec {
                        kind,
                        level_rms: level,
                        seed: derive_seed(seed, &[0xB6]),
                    },
                    snr_db: rng.random_range(config.snr_db_min..=config.snr_db_max),
                    seed: derive_seed(seed, &[0x5A1]),
                    placements,
                };
                let events = recipe
                    .placements
                    .iter()
                    .map(|p| {
                        let len = bank.clip_by_id_len(&p.clip_id).expect("placed clip exists");
                        let start = (p.onset * sr).round() as usize;
                        super::Event::new(
                            start as f64 / sr,
                            (start + len) as f64 / sr,
                            p.class.clone(),
                        )
                    })
                    .collect();
                scenes.push(ToyScene {
                    entry: SceneEntry {
                        id: scene_id(domain, split, i),
                        duration: recipe.duration,
                        events,
                        mixture_path: None,
                        recipe: Some(recipe),
                    },
                    domain,
                    split,
                });
            }
        }
    }

    let catalog = Catalog {
        classes: source_set.union(&target_set).cloned().collect(),
        clean_clips,
        scenes: scenes.iter().map(|s| s.entry.clone()).collect(),
    };
    catalog.validate()?;
    let (source_catalog, target_catalog) = split_source_target(&catalog, &source_set)?;
    Ok(ToyDataset {
        config: config.clone(),
        bank,
        catalog,
        source_catalog,
        target_catalog,
        scenes,
        references,
    })
}

impl ToyDataset {
    pub fn source_classes(&self) -> &BTreeSet<String> {
        &self.source_catalog.classes
    }

    pub fn target_classes(&self) -> &BTreeSet<String> {
        &self.target_catalog.classes
    }

    pub fn reference_audio(&self, id: &str) -> Option<Waveform> {
        let &(k, inst) = self.references.get(id)?;
        Some(self.bank.clip(k, inst))
    }

    pub fn render_scene(&self, scene: &ToyScene) -> Result<Waveform> {
        let recipe = scene
            .entry
            .recipe
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("scene {} has no recipe", scene.entry.id)))?;
        let (wave, events) = render_recipe(recipe, &self.bank)?;
        debug_assert_eq!(events, scene.entry.events);
        Ok(wave)
    }

    pub fn reference_features(&self) -> Result<ReferenceBank> {
        self.references
            .keys()
            .map(|id| {
                let w = self.reference_audio(id).expect("known reference");
                Ok((id.clone(), Arc::new(mel_spectrogram(&w)?)))
            })
            .collect()
    }

    pub fn scene_features(&self) -> Result<Vec<SceneFeatures>> {
        self.scenes
            .iter()
            .map(|s| {
                Ok(SceneFeatures {
                    mixture_id: s.entry.id.clone(),
                    mixture: Arc::new(mel_spectrogram(&self.render_scene(s)?)?),
                    events: Arc::new(s.entry.events.clone()),
                    domain: s.domain,
                    split: s.split,
                })
            })
            .collect()
    }

    /// Strongly annotated samples for every scene, in scene order.
    pub fn samples(&self) -> Result<Vec<TsdSample>> {
        let refs = self.reference_features()?;
        let scenes = self.scene_features()?;
        self.samples_from(&scenes, &refs)
    }

    pub fn samples_from(
        &self,
        scenes: &[SceneFeatures],
        refs: &ReferenceBank,
    ) -> Result<Vec<TsdSample>> {
        let mut out = Vec::new();
        for (i, sc) in scenes.iter().enumerate() {
            let cat = match sc.domain {
                Domain::Source => &self.source_catalog,
                Domain::Target => &self.target_catalog,
            };
            out.extend(make_tsd_samples(
                sc,
                cat,
                refs,
                derive_seed(self.config.seed, &[0x5A4E, i as u64]),
            )?);
        }
        Ok(out)
    }

    /// Manifest lines: source (strong), target (strong only on the test
    /// split) and target with strong labels everywhere.
    pub fn manifests(samples: &[TsdSample]) -> [Vec<ManifestEntry>; 3] {
        let mut source = Vec::new();
        let mut target = Vec::new();
        let mut target_strong = Vec::new();
        for s in samples {
            let e = s.to_entry();
            match s.domain {
                Domain::Source => source.push(e),
                Domain::Target => {
                    let mut weak = e.clone();
                    if s.split != Split::Test {
                        weak.events = None;
                    }
                    target.push(weak);
                    target_strong.push(e);
                }
            }
        }
        [source, target, target_strong]
    }

    /// Render every clip to WAV under `dir` and write the three manifests.
    pub fn write(&self, dir: &Path) -> Result<WrittenDataset> {
        let write = |rel: &str, w: &Waveform| -> Result<()> {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_wav_f32(&path, &w.samples, w.sample_rate)
        };
        let mut refs = ReferenceBank::new();
        for id in self.references.keys() {
            let w = self.reference_audio(id).expect("known reference");
            write(id, &w)?;
            refs.insert(id.clone(), Arc::new(mel_spectrogram(&w)?));
        }
        let mut scenes = Vec::with_capacity(self.scenes.len());
        for s in &self.scenes {
            let w = self.render_scene(s)?;
            write(&s.entry.id, &w)?;
            scenes.push(SceneFeatures {
                mixture_id: s.entry.id.clone(),
                mixture: Arc::new(mel_spectrogram(&w)?),
                events: Arc::new(s.entry.events.clone()),
                domain: s.domain,
                split: s.split,
            });
        }
        let samples = self.samples_from(&scenes, &refs)?;
        let [source, target, target_strong] = Self::manifests(&samples);
        let out = WrittenDataset {
            source_manifest: dir.join("source.jsonl"),
            target_manifest: dir.join("target.jsonl"),
            target_strong_manifest: dir.join("target_strong.jsonl"),
            n_samples: samples.len(),
        };
        write_manifest(&out.source_manifest, &source)?;
        write_manifest(&out.target_manifest, &target)?;
        write_manifest(&out.target_strong_manifest, &target_strong)?;
        let catalog_path = dir.join("catalog.json");
        std::fs::write(&catalog_path, serde_json::to_string_pretty(&self.catalog)?)
            .map_err(|e| Error::io(&catalog_path, e))?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{manifest_to_string, read_manifest, ClipLabel};

    fn small() -> ToyDatasetConfig {
        ToyDatasetConfig {
            source_scenes: ToySplitSizes {
                train: 4,
                val: 1,
                test: 1,
            },
            target_scenes: ToySplitSizes {
                train: 4,
                val: 1,
                test: 2,
            },
            references_per_class: 2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn layout_is_disjoint_and_valid() {
        let ds = build_toy_dataset(&small()).unwrap();
        assert_eq!(ds.source_classes().len(), 4);
        assert_eq!(ds.target_classes().len(), 8);
        assert!(ds.source_classes().is_disjoint(ds.target_classes()));
        assert_eq!(ds.scenes.len(), 13);
        for s in &ds.scenes {
            s.entry.events.validate(s.entry.duration).unwrap();
            let side = match s.domain {
                Domain::Source => ds.source_classes(),
                Domain::Target => ds.target_classes(),
            };
            assert!(s.entry.classes().is_subset(side));
        }
    }

    #[test]
    fn explicit_class_spec_is_checked() {
        let names = ToyBank::new(ToyBankConfig::default()).class_names();
        let mut cfg = small();
        cfg.source_classes = names[..3].to_vec();
        cfg.target_classes = names[2..5].to_vec();
        let err = build_toy_dataset(&cfg).unwrap_err().to_string();
        assert!(err.contains("overlap") && err.contains(&names[2]), "{err}");
        cfg.target_classes = vec![names[4].clone(), "no-such-class".into()];
        assert!(build_toy_dataset(&cfg)
            .unwrap_err()
            .to_string()
            .contains("no-such-class"));
        cfg.target_classes = names[3..6].to_vec();
        let ds = build_toy_dataset(&cfg).unwrap();
        assert_eq!(
            *ds.target_classes(),
            names[3..6].iter().cloned().collect::<BTreeSet<_>>()
        );
        assert!(ds
            .scenes
            .iter()
            .all(|s| s.entry.classes().iter().all(|c| names[..6].contains(c))));
    }

    #[test]
    fn rendered_events_match_layout() {
        let ds = build_toy_dataset(&small()).unwrap();
        for s in ds.scenes.iter().take(3) {
            let (_, ev) = render_recipe(s.entry.recipe.as_ref().unwrap(), &ds.bank).unwrap();
            assert_eq!(ev, s.entry.events);
        }
    }

    #[test]
    fn samples_follow_positive_negative_rule() {
        let ds = build_toy_dataset(&small()).unwrap();
        let samples = ds.samples().unwrap();
        for s in &samples {
            let ev = s.events().unwrap();
            let present = ev.classes().contains(&s.target_class);
            assert_eq!(present, s.clip_label == ClipLabel::POSITIVE);
            assert_eq!(s.frame_labels().unwrap().max(), s.clip_label.value());
            assert_eq!(s.frames(), 200);
        }
    }

    #[test]
    fn written_manifests_are_reproducible() {
        let ds = build_toy_dataset(&small()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let wa = ds.write(a.path()).unwrap();
        let wb = build_toy_dataset(&small())
            .unwrap()
            .write(b.path())
            .unwrap();
        for (x, y) in [
            (&wa.source_manifest, &wb.source_manifest),
            (&wa.target_manifest, &wb.target_manifest),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let target = read_manifest(&wa.target_manifest).unwrap();
        assert!(target
            .iter()
            .all(|e| (e.split == Split::Test) == e.events.is_some()));
        let in_memory = ToyDataset::manifests(&ds.samples().unwrap());
        assert_eq!(
            manifest_to_string(&in_memory[0]).unwrap(),
            std::fs::read_to_string(&wa.source_manifest).unwrap()
        );
    }
}

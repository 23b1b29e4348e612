use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::guard::target_labels_locked;
use super::labels::frame_labels_from_events;
use super::manifest::ManifestEntry;
use super::{Catalog, ClipLabel, Domain, EventList, FrameLabels, Split};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

/// Reference features keyed by clip id or path.
pub type ReferenceBank = BTreeMap<String, Arc<MelSpectrogram>>;

/// One detection example: find `target_class`, described by `reference`,
/// inside `mixture`.
#[derive(Debug, Clone)]
pub struct TsdSample {
    pub mixture_id: String,
    pub reference_id: String,
    pub mixture: Arc<MelSpectrogram>,
    pub reference: Arc<MelSpectrogram>,
    pub target_class: String,
    pub clip_label: ClipLabel,
    pub domain: Domain,
    pub split: Split,
    events: Option<Arc<EventList>>,
    frame_labels: Option<FrameLabels>,
}

impl TsdSample {
    /// Build a sample. With known scene `events` the frame labels are derived
    /// from them and must agree with `clip_label`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mixture_id: String,
        reference_id: String,
        mixture: Arc<MelSpectrogram>,
        reference: Arc<MelSpectrogram>,
        target_class: String,
        clip_label: ClipLabel,
        domain: Domain,
        split: Split,
        events: Option<Arc<EventList>>,
    ) -> Result<Self> {
        let frame_labels = events
            .as_deref()
            .map(|ev| frame_labels_from_events(ev, &target_class, mixture.frames()));
        if let Some(fl) = &frame_labels {
            if fl.max() != clip_label.value() {
                return Err(Error::Dataset(format!(
                    "clip label {} disagrees with frame labels of {target_class} in {mixture_id}",
                    clip_label.value()
                )));
            }
        }
        Ok(Self {
            mixture_id,
            reference_id,
            mixture,
            reference,
            target_class,
            clip_label,
            domain,
            split,
            events,
            frame_labels,
        })
    }

    fn check_access(&self) {
        assert!(
            !(self.domain == Domain::Target && target_labels_locked()),
            "strong labels of target sample {} read during a weak-only phase",
            self.mixture_id
        );
    }

    /// Frame labels of the target class, if the sample is strongly annotated.
    ///
    /// Panics for target-domain samples while a
    /// [`TargetLabelLock`](super::TargetLabelLock) is held.
    pub fn frame_labels(&self) -> Option<&FrameLabels> {
        self.check_access();
        self.frame_labels.as_ref()
    }

    /// All annotated scene events (every class). Guarded like
    /// [`frame_labels`](Self::frame_labels).
    pub fn events(&self) -> Option<&EventList> {
        self.check_access();
        self.events.as_deref()
    }

    /// Reference events of the target class only.
    pub fn target_events(&self) -> Option<EventList> {
        self.events().map(|e| e.filter_class(&self.target_class))
    }

    pub fn has_strong_labels(&self) -> bool {
        self.frame_labels.is_some()
    }

    pub fn frames(&self) -> usize {
        self.mixture.frames()
    }

    /// Replace the frame labels, e.g. with a corrupted copy. Strong labels
    /// must already exist. The events become the runs of active frames.
    pub fn with_frame_labels(&self, labels: FrameLabels) -> Result<Self> {
        if labels.len() != self.frames() || self.frame_labels.is_none() {
            return Err(Error::Shape(format!(
                "replacement labels of length {} for sample with {} frames",
                labels.len(),
                self.frames()
            )));
        }
        let mut s = self.clone();
        let events = crate::evaluation::decode_events(&labels.as_f64(), 0.5, 1, &self.target_class);
        s.events = Some(Arc::new(events));
        s.frame_labels = Some(labels);
        Ok(s)
    }

    /// Copy without strong annotation.
    pub fn weak_only(&self) -> Self {
        let mut s = self.clone();
        s.events = None;
        s.frame_labels = None;
        s
    }

    pub fn to_entry(&self) -> ManifestEntry {
        ManifestEntry {
            mixture_path: self.mixture_id.clone(),
            reference_path: self.reference_id.clone(),
            target_class: self.target_class.clone(),
            events: self.events.as_deref().map(|ev| {
                ev.events
                    .iter()
                    .map(|e| (e.onset, e.offset, e.class.clone()))
                    .collect()
            }),
            clip_label: self.clip_label.value(),
            domain: self.domain,
            split: self.split,
        }
    }
}

/// A mixture with its features and annotation, before samples are drawn.
#[derive(Debug, Clone)]
pub struct SceneFeatures {
    pub mixture_id: String,
    pub mixture: Arc<MelSpectrogram>,
    pub events: Arc<EventList>,
    pub domain: Domain,
    pub split: Split,
}

/// One positive per distinct event class in the scene plus `floor(N/2)`
/// negatives whose classes are absent from the scene. References are drawn
/// uniformly from the catalog's clean clips of the target class.
pub fn make_tsd_samples(
    scene: &SceneFeatures,
    catalog: &Catalog,
    references: &ReferenceBank,
    rng_seed: u64,
) -> Result<Vec<TsdSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let present = scene.events.classes();
    for c in &present {
        if !catalog.classes.contains(c) {
            return Err(Error::Dataset(format!(
                "scene class {c} is not in the catalog"
            )));
        }
    }
    let present_set: BTreeSet<&String> = present.iter().collect();
    let absent: Vec<&String> = catalog
        .classes
        .iter()
        .filter(|c| !present_set.contains(c))
        .collect();
    let n_neg = present.len() / 2;
    if n_neg > absent.len() {
        return Err(Error::Dataset(format!(
            "scene {} needs {n_neg} negative classes but only {} are absent",
            scene.mixture_id,
            absent.len()
        )));
    }
    let negatives: Vec<&String> = absent.into_iter().choose_multiple(&mut rng, n_neg);

    let mut pick_reference = |class: &str| -> Result<(String, Arc<MelSpectrogram>)> {
        let clips = catalog
            .clean_clips
            .get(class)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::Dataset(format!("no clean clips for class {class}")))?;
        let id = clips.choose(&mut rng).expect("non-empty").clone();
        let feat = references
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::Dataset(format!("reference {id} has no features")))?;
        Ok((id, feat))
    };

    let mut out = Vec::with_capacity(present.len() + n_neg);
    let labelled = present
        .iter()
        .map(|c| (c.as_str(), ClipLabel::POSITIVE))
        .chain(negatives.iter().map(|c| (c.as_str(), ClipLabel::NEGATIVE)))
        .collect::<Vec<_>>();
    for (class, label) in labelled {
        let (ref_id, ref_feat) = pick_reference(class)?;
        out.push(TsdSample::new(
            scene.mixture_id.clone(),
            ref_id,
            scene.mixture.clone(),
            ref_feat,
            class.to_string(),
            label,
            scene.domain,
            scene.split,
            Some(scene.events.clone()),
        )?);
    }
    Ok(out)
}

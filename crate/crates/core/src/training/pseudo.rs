use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::eval::predict;
use crate::dataset::TsdSample;
use crate::error::{Error, Result};
use crate::evaluation::{harden, pseudo_error_rate};
use crate::models::{EmbeddingCache, StudentModel};

/// Identifies a TSD sample across copies: mixture, reference and class.
pub fn sample_key(s: &TsdSample) -> String {
    format!("{}|{}|{}", s.mixture_id, s.reference_id, s.target_class)
}

/// Soft frame-level targets produced by w_student, one vector per sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub labels: BTreeMap<String, Vec<f64>>,
    /// Hash of the w_student parameters that produced them.
    pub source_hash: String,
}

impl PseudoLabels {
    pub fn get(&self, s: &TsdSample) -> Result<&[f64]> {
        self.labels
            .get(&sample_key(s))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::MissingPrerequisite(format!("no pseudo labels for {}", sample_key(s)))
            })
    }

    pub fn contains(&self, s: &TsdSample) -> bool {
        self.labels.contains_key(&sample_key(s))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Frame probabilities of `w` on every sample, kept soft.
pub fn generate_pseudo_labels(
    w: &StudentModel,
    samples: &[TsdSample],
    emb: &EmbeddingCache,
) -> Result<PseudoLabels> {
    let outputs = predict(w, samples, emb)?;
    let mut labels = BTreeMap::new();
    for (s, o) in samples.iter().zip(outputs) {
        if o.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(format!(
                "w_student produced a non-probability for {}",
                s.mixture_id
            )));
        }
        labels.insert(sample_key(s), o.probs);
    }
    Ok(PseudoLabels {
        labels,
        source_hash: crate::nn::Module::param_hash(w),
    })
}

/// Mean over samples of the fraction of frames where the hardened pseudo
/// label (`p > threshold`) disagrees with the true frame label.
pub fn mean_pseudo_error_rate(
    pseudo: &PseudoLabels,
    samples: &[TsdSample],
    threshold: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to compare".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let p = pseudo.get(s)?;
        let truth = s
            .frame_labels()
            .ok_or_else(|| Error::Dataset(format!("{} has no frame labels", s.mixture_id)))?;
        total += pseudo_error_rate(truth, &harden(p, threshold, &s.target_class))?;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, Split};
    use crate::training::testkit::{tiny_student, world};

    #[test]
    fn soft_labels_cover_every_sample() {
        let w = world();
        let target = w.pick(Domain::Target, Split::Train);
        let model = StudentModel::new(tiny_student(true), 3).unwrap();
        let p = generate_pseudo_labels(&model, &target, &w.emb).unwrap();
        assert_eq!(p.len(), target.len());
        for s in &target {
            let v = p.get(s).unwrap();
            assert_eq!(v.len(), s.frames());
            assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
        }
        assert_eq!(p.source_hash, crate::nn::Module::param_hash(&model));
        assert!(p.get(&w.pick(Domain::Source, Split::Train)[0]).is_err());
    }

    #[test]
    fn error_rate_of_perfect_and_inverted_labels() {
        let w = world();
        let target = w.pick(Domain::Target, Split::Val);
        let mut exact = PseudoLabels::default();
        let mut inverted = PseudoLabels::default();
        for s in &target {
            let y = s.frame_labels().unwrap().as_f64();
            inverted
                .labels
                .insert(sample_key(s), y.iter().map(|v| 1.0 - v).collect());
            exact.labels.insert(sample_key(s), y);
        }
        assert_eq!(mean_pseudo_error_rate(&exact, &target, 0.5).unwrap(), 0.0);
        assert_eq!(
            mean_pseudo_error_rate(&inverted, &target, 0.5).unwrap(),
            1.0
        );
        assert!(mean_pseudo_error_rate(&exact, &[], 0.5).is_err());
    }
}

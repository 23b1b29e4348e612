use serde::{Deserialize, Serialize};

use super::data::group_by_mixture;
use super::{PatienceMetric, TrainConfig};
use crate::dataset::TsdSample;
use crate::error::{Error, Result};
use crate::evaluation::{decode_events, EvalConfig, EvalReport, ReportBuilder};
use crate::models::{EmbeddingCache, HeadOutput, StudentModel};

/// Model outputs for every sample, in sample order.
pub(crate) fn predict(
    model: &StudentModel,
    samples: &[TsdSample],
    emb: &EmbeddingCache,
) -> Result<Vec<HeadOutput>> {
    let mut out: Vec<Option<HeadOutput>> = vec![None; samples.len()];
    for g in group_by_mixture(samples) {
        let (z, _) = model.conv_forward(&g.mixture)?;
        for &i in &g.samples {
            let e = emb.get(&samples[i].reference_id)?;
            out[i] = Some(model.head_forward(&z, e)?.0);
        }
    }
    Ok(out
        .into_iter()
        .map(|o| o.expect("every sample predicted"))
        .collect())
}

/// Segment and event F-scores of a student on strongly labelled samples.
pub fn evaluate_student(
    model: &StudentModel,
    samples: &[TsdSample],
    emb: &EmbeddingCache,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if samples.iter().any(|s| !s.has_strong_labels()) {
        return Err(Error::Dataset(
            "evaluation needs strong labels on every sample".into(),
        ));
    }
    report_from(samples, &predict(model, samples, emb)?, cfg)
}

fn report_from(
    samples: &[TsdSample],
    outputs: &[HeadOutput],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut rb = ReportBuilder::new(cfg);
    for (s, o) in samples.iter().zip(outputs) {
        let est = decode_events(&o.probs, cfg.threshold, cfg.median_window, &s.target_class);
        let reference = s
            .target_events()
            .ok_or_else(|| Error::Dataset(format!("{} has no strong labels", s.mixture_id)))?;
        rb.add(&s.target_class, &reference, &est, s.mixture.clip_duration);
    }
    rb.finish()
}

/// Fraction of samples whose clip decision (any decoded event) matches the
/// clip label. Uses weak labels only.
pub fn clip_accuracy(
    model: &StudentModel,
    samples: &[TsdSample],
    emb: &EmbeddingCache,
    cfg: &EvalConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to score".into()));
    }
    Ok(clip_accuracy_from(
        samples,
        &predict(model, samples, emb)?,
        cfg,
    ))
}

fn clip_accuracy_from(samples: &[TsdSample], outputs: &[HeadOutput], cfg: &EvalConfig) -> f64 {
    let hits = samples
        .iter()
        .zip(outputs)
        .filter(|(s, o)| {
            let active =
                !decode_events(&o.probs, cfg.threshold, cfg.median_window, &s.target_class)
                    .is_empty();
            active == (s.clip_label.value() == 1)
        })
        .count();
    hits as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValScore {
    /// The model-selection value: event- or segment-F with strong labels,
    /// clip accuracy otherwise.
    pub metric: f64,
    pub event_f: Option<f64>,
    pub segment_f: Option<f64>,
    pub clip_accuracy: f64,
}

pub fn validation_score(
    model: &StudentModel,
    val: &[TsdSample],
    emb: &EmbeddingCache,
    cfg: &TrainConfig,
) -> Result<ValScore> {
    if val.is_empty() {
        return Err(Error::Dataset("empty validation set".into()));
    }
    let outputs = predict(model, val, emb)?;
    let clip_acc = clip_accuracy_from(val, &outputs, &cfg.eval);
    if val.iter().all(|s| s.has_strong_labels()) {
        let r = report_from(val, &outputs, &cfg.eval)?;
        let metric = match cfg.patience_metric {
            PatienceMetric::EventF => r.macro_event_f,
            PatienceMetric::SegmentF => r.macro_segment_f,
        };
        Ok(ValScore {
            metric,
            event_f: Some(r.macro_event_f),
            segment_f: Some(r.macro_segment_f),
            clip_accuracy: clip_acc,
        })
    } else {
        Ok(ValScore {
            metric: clip_acc,
            event_f: None,
            segment_f: None,
            clip_accuracy: clip_acc,
        })
    }
}

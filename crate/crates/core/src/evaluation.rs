//! Event decoding and sound event detection metrics.
//!
//! Segment-based scores compare class activity in fixed-length segments;
//! event-based scores match estimated to reference events one-to-one within
//! onset/offset tolerances. Scores are accumulated as TP/FP/FN counts per
//! class and macro-averaged over classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Event, EventList, FrameLabels};
use crate::error::{Error, Result};
use crate::features::frame_time;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Decoding and metric settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub threshold: f64,
    pub median_window: usize,
    pub segment_len: f64,
    pub onset_collar: f64,
    pub offset_collar: f64,
    pub offset_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            median_window: 5,
            segment_len: 1.0,
            onset_collar: 0.2,
            offset_collar: 0.2,
            offset_fraction: 0.2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidInput(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.median_window % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "median window must be odd, got {}",
                self.median_window
            )));
        }
        if self.segment_len <= 0.0 {
            return Err(Error::InvalidInput(
                "segment length must be positive".into(),
            ));
        }
        if self.onset_collar < 0.0 || self.offset_collar < 0.0 || self.offset_fraction < 0.0 {
            return Err(Error::InvalidInput("collars must be non-negative".into()));
        }
        Ok(())
    }
}

/// Median filter with edge replication. A window of 1 is the identity.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 || values.is_empty() {
        return values.to_vec();
    }
    let half = (window / 2) as i64;
    let n = values.len() as i64;
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            buf.clear();
            for k in i - half..=i + half {
                buf.push(values[k.clamp(0, n - 1) as usize]);
            }
            buf.sort_by(f64::total_cmp);
            buf[buf.len() / 2]
        })
        .collect()
}

/// Median-filter, binarize (`p > threshold`) and turn runs of active frames
/// into events of `class`.
pub fn decode_events(
    probs: &[f64],
    threshold: f64,
    median_window: usize,
    class: &str,
) -> EventList {
    let smooth = median_filter(probs, median_window);
    let mut events = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &p) in smooth.iter().enumerate() {
        match (p > threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                events.push(Event::new(frame_time(s), frame_time(i), class));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        events.push(Event::new(frame_time(s), frame_time(smooth.len()), class));
    }
    EventList::new(events)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// F-score with its precision and recall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
}

impl From<Counts> for Prf {
    /// With no reference and no estimate at all the score is a perfect 1.
    fn from(c: Counts) -> Self {
        if c.tp + c.fp + c.fn_ == 0 {
            return Prf {
                f: 1.0,
                precision: 1.0,
                recall: 1.0,
            };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Prf {
            f: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
        }
    }
}

fn segment_count(clip_dur: f64, segment_len: f64) -> usize {
    ((clip_dur / segment_len) - 1e-9).ceil().max(1.0) as usize
}

fn active_segments(events: &[&Event], segment_len: f64, n_seg: usize) -> Vec<bool> {
    let mut active = vec![false; n_seg];
    for e in events {
        let first = (e.onset / segment_len).floor().max(0.0) as usize;
        let end = ((e.offset / segment_len).ceil() as usize).min(n_seg);
        for a in active.iter_mut().take(end).skip(first) {
            *a = true;
        }
    }
    active
}

fn classes_of(a: &EventList, b: &EventList) -> Vec<String> {
    let mut classes = a.classes();
    for c in b.classes() {
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    classes
}

/// Segment-level TP/FP/FN summed over all classes present in either list.
pub fn segment_counts(
    reference: &EventList,
    estimate: &EventList,
    segment_len: f64,
    clip_dur: f64,
) -> Counts {
    let n_seg = segment_count(clip_dur, segment_len);
    let mut c = Counts::default();
    for class in classes_of(reference, estimate) {
        let r: Vec<&Event> = reference.of_class(&class).collect();
        let e: Vec<&Event> = estimate.of_class(&class).collect();
        let ra = active_segments(&r, segment_len, n_seg);
        let ea = active_segments(&e, segment_len, n_seg);
        for (x, y) in ra.iter().zip(&ea) {
            match (x, y) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                _ => {}
            }
        }
    }
    c
}

pub fn segment_f_score(
    reference: &EventList,
    estimate: &EventList,
    segment_len: f64,
    clip_dur: f64,
) -> Prf {
    segment_counts(reference, estimate, segment_len, clip_dur).into()
}

/// Onset/offset tolerances for event matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collars {
    pub onset: f64,
    pub offset: f64,
    /// Offset tolerance as a fraction of the reference event length; the
    /// larger of the two offset tolerances applies.
    pub offset_fraction: f64,
}

impl Default for Collars {
    fn default() -> Self {
        Self {
            onset: 0.2,
            offset: 0.2,
            offset_fraction: 0.2,
        }
    }
}

impl From<&EvalConfig> for Collars {
    fn from(c: &EvalConfig) -> Self {
        Self {
            onset: c.onset_collar,
            offset: c.offset_collar,
            offset_fraction: c.offset_fraction,
        }
    }
}

const TIME_EPS: f64 = 1e-9;

fn events_match(r: &Event, e: &Event, collars: &Collars) -> bool {
    let off_tol = collars.offset.max(collars.offset_fraction * r.duration());
    (r.onset - e.onset).abs() <= collars.onset + TIME_EPS
        && (r.offset - e.offset).abs() <= off_tol + TIME_EPS
}

/// Maximum bipartite matching by augmenting paths. `adj[i]` lists the
/// estimates reference `i` may be paired with.
fn max_matching(adj: &[Vec<usize>], n_est: usize) -> usize {
    fn augment(
        i: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_est];
    let mut size = 0;
    for i in 0..adj.len() {
        let mut seen = vec![false; n_est];
        if augment(i, adj, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Event-level TP/FP/FN with an optimal one-to-one matching per class.
pub fn event_counts(reference: &EventList, estimate: &EventList, collars: &Collars) -> Counts {
    let mut c = Counts::default();
    for class in classes_of(reference, estimate) {
        let r: Vec<&Event> = reference.of_class(&class).collect();
        let e: Vec<&Event> = estimate.of_class(&class).collect();
        let adj: Vec<Vec<usize>> = r
            .iter()
            .map(|re| {
                e.iter()
                    .enumerate()
                    .filter(|(_, ee)| events_match(re, ee, collars))
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        let tp = max_matching(&adj, e.len());
        c.tp += tp;
        c.fp += e.len() - tp;
        c.fn_ += r.len() - tp;
    }
    c
}

pub fn event_f_score(reference: &EventList, estimate: &EventList, collars: &Collars) -> Prf {
    event_counts(reference, estimate, collars).into()
}

/// Unweighted mean of per-class scores.
pub fn macro_average(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("macro average of no classes".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Fraction of frames where the two label vectors disagree.
pub fn pseudo_error_rate(truth: &FrameLabels, pseudo: &FrameLabels) -> Result<f64> {
    if truth.len() != pseudo.len() {
        return Err(Error::Shape(format!(
            "label lengths differ: {} vs {}",
            truth.len(),
            pseudo.len()
        )));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let wrong = truth
        .values
        .iter()
        .zip(&pseudo.values)
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Threshold soft frame probabilities at `threshold`.
pub fn harden(probs: &[f64], threshold: f64, class: &str) -> FrameLabels {
    FrameLabels {
        values: probs.iter().map(|&p| u8::from(p > threshold)).collect(),
        class: class.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub segment: Prf,
    pub event: Prf,
    pub segment_counts: Counts,
    pub event_counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassScores>,
    pub macro_segment_f: f64,
    pub macro_event_f: f64,
}

/// Accumulates per-clip counts into an [`EvalReport`].
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    collars: Collars,
    segment_len: f64,
    counts: BTreeMap<String, (Counts, Counts)>,
    has_reference: BTreeMap<String, bool>,
}

impl ReportBuilder {
    pub fn new(cfg: &EvalConfig) -> Self {
        Self {
            collars: cfg.into(),
            segment_len: cfg.segment_len,
            counts: BTreeMap::new(),
            has_reference: BTreeMap::new(),
        }
    }

    /// Add one clip scored for `class`; events of other classes are ignored.
    pub fn add(&mut self, class: &str, reference: &EventList, estimate: &EventList, clip_dur: f64) {
        let r = reference.filter_class(class);
        let e = estimate.filter_class(class);
        let seg = segment_counts(&r, &e, self.segment_len, clip_dur);
        let ev = event_counts(&r, &e, &self.collars);
        let entry = self.counts.entry(class.to_string()).or_default();
        entry.0 += seg;
        entry.1 += ev;
        *self.has_reference.entry(class.to_string()).or_default() |= !r.is_empty();
    }

    /// Classes without any reference event are excluded from the macro
    /// average.
    pub fn finish(self) -> Result<EvalReport> {
        let per_class: BTreeMap<String, ClassScores> = self
            .counts
            .into_iter()
            .filter(|(c, _)| self.has_reference.get(c).copied().unwrap_or(false))
            .map(|(c, (s, e))| {
                (
                    c,
                    ClassScores {
                        segment: s.into(),
                        event: e.into(),
                        segment_counts: s,
                        event_counts: e,
                    },
                )
            })
            .collect();
        let seg: Vec<f64> = per_class.values().map(|s| s.segment.f).collect();
        let ev: Vec<f64> = per_class.values().map(|s| s.event.f).collect();
        Ok(EvalReport {
            macro_segment_f: macro_average(&seg)?,
            macro_event_f: macro_average(&ev)?,
            per_class,
        })
    }
}

impl EvalReport {
    /// Versioned CSV: two header comment lines, one row per class and a
    /// final `macro` row.
    pub fn to_csv(&self, cfg: &EvalConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# tsd-eval-report schema_version={REPORT_SCHEMA_VERSION}"
        );
        let _ = writeln!(
            s,
            "# threshold={} median_window={} segment_len={} onset_collar={} offset_collar={} offset_fraction={}",
            cfg.threshold, cfg.median_window, cfg.segment_len, cfg.onset_collar, cfg.offset_collar, cfg.offset_fraction
        );
        s.push_str("class,segment_f,segment_precision,segment_recall,event_f,event_precision,event_recall\n");
        for (class, sc) in &self.per_class {
            let _ = writeln!(
                s,
                "{class},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                sc.segment.f,
                sc.segment.precision,
                sc.segment.recall,
                sc.event.f,
                sc.event.precision,
                sc.event.recall
            );
        }
        let _ = writeln!(
            s,
            "macro,{:.6},,,{:.6},,",
            self.macro_segment_f, self.macro_event_f
        );
        s
    }
}

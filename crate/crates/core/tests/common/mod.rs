//! Brute-force metric oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tsd_core::dataset::{Event, EventList};
use tsd_core::evaluation::{event_counts, segment_counts, Collars, Counts};

pub const CLASSES: [&str; 2] = ["a", "b"];

/// Segment k is active for a class when some event of that class overlaps
/// `[k * len, (k + 1) * len)` with positive length.
pub fn segment_oracle(reference: &EventList, estimate: &EventList, len: f64, dur: f64) -> Counts {
    let n = ((dur / len) - 1e-9).ceil().max(1.0) as usize;
    let active = |list: &EventList, class: &str, k: usize| {
        let (lo, hi) = (k as f64 * len, (k + 1) as f64 * len);
        list.events
            .iter()
            .any(|e| e.class == class && e.onset < hi && e.offset > lo)
    };
    let mut c = Counts::default();
    for class in CLASSES {
        for k in 0..n {
            match (active(reference, class, k), active(estimate, class, k)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    c
}

fn compatible(r: &Event, e: &Event, c: &Collars) -> bool {
    let off = c.offset.max(c.offset_fraction * (r.offset - r.onset));
    r.class == e.class
        && (r.onset - e.onset).abs() <= c.onset + 1e-9
        && (r.offset - e.offset).abs() <= off + 1e-9
}

/// Largest number of disjoint (reference, estimate) pairs, by trying every
/// assignment.
fn best_matching(refs: &[Event], ests: &[Event], used: &mut Vec<bool>, c: &Collars) -> usize {
    let Some((r, rest)) = refs.split_first() else {
        return 0;
    };
    let mut best = best_matching(rest, ests, used, c);
    for j in 0..ests.len() {
        if !used[j] && compatible(r, &ests[j], c) {
            used[j] = true;
            best = best.max(1 + best_matching(rest, ests, used, c));
            used[j] = false;
        }
    }
    best
}

pub fn event_oracle(reference: &EventList, estimate: &EventList, c: &Collars) -> Counts {
    let tp = best_matching(
        &reference.events,
        &estimate.events,
        &mut vec![false; estimate.len()],
        c,
    );
    Counts {
        tp,
        fp: estimate.len() - tp,
        fn_: reference.len() - tp,
    }
}

pub fn random_events(rng: &mut ChaCha8Rng, n: usize, dur: f64, near: &[Event]) -> Vec<Event> {
    (0..n)
        .map(|_| {
            // half of the estimates jitter a reference event so matches are common
            if !near.is_empty() && rng.random_bool(0.5) {
                let r = &near[rng.random_range(0..near.len())];
                let on = (r.onset + rng.random_range(-0.3..0.3)).clamp(0.0, dur - 0.02);
                let off = (r.offset + rng.random_range(-0.5..0.5)).clamp(on + 0.02, dur);
                let class = if rng.random_bool(0.8) {
                    r.class.clone()
                } else {
                    "b".to_string()
                };
                return Event::new(on, off, class);
            }
            // frame-grid times hit segment boundaries exactly now and then
            let on = (rng.random_range(0.0..dur - 0.1) * 50.0).round() / 50.0;
            let off = ((on + rng.random_range(0.04..3.0)).min(dur) * 50.0).round() / 50.0;
            Event::new(on, off.max(on + 0.02), CLASSES[rng.random_range(0..2)])
        })
        .collect()
}

/// Compare both counters with their oracles on `n` random instances of at
/// most six events. Returns the first disagreement.
pub fn oracle_sweep(rng: &mut ChaCha8Rng, n: usize) -> Result<(), String> {
    let collars = Collars::default();
    for instance in 0..n {
        let dur = [4.0, 5.5, 10.0][instance % 3];
        let total = rng.random_range(0..=6);
        let n_ref = rng.random_range(0..=total);
        let reference = EventList::new(random_events(rng, n_ref, dur, &[]));
        let estimate = EventList::new(random_events(rng, total - n_ref, dur, &reference.events));
        let seg_len = [1.0, 0.5][instance % 2];
        let (got, want) = (
            segment_counts(&reference, &estimate, seg_len, dur),
            segment_oracle(&reference, &estimate, seg_len, dur),
        );
        if got != want {
            return Err(format!(
                "segment counts, instance {instance}: {got:?} vs {want:?}"
            ));
        }
        let (got, want) = (
            event_counts(&reference, &estimate, &collars),
            event_oracle(&reference, &estimate, &collars),
        );
        if got != want {
            return Err(format!(
                "event counts, instance {instance}: {got:?} vs {want:?}"
            ));
        }
    }
    Ok(())
}

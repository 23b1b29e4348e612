//! Segment and event F-scores against brute-force oracles.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsd_core::dataset::{frame_labels_from_events, Event, EventList};
use tsd_core::evaluation::{decode_events, segment_f_score, Counts, EvalConfig, ReportBuilder};

use common::{oracle_sweep, random_events, segment_oracle};

#[test]
fn metrics_agree_with_oracles_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    if let Err(e) = oracle_sweep(&mut rng, 1000) {
        panic!("{e}");
    }
}

#[test]
fn hand_computed_segment_example() {
    let r = EventList::new(vec![Event::new(0.0, 3.0, "a")]);
    let e = EventList::new(vec![Event::new(1.0, 5.0, "a")]);
    let f = segment_f_score(&r, &e, 1.0, 10.0).f;
    assert!((f - 0.571).abs() < 1e-3, "{f}");
    assert_eq!(
        segment_oracle(&r, &e, 1.0, 10.0),
        Counts {
            tp: 2,
            fp: 2,
            fn_: 1
        }
    );
}

#[test]
fn labels_used_as_probabilities_score_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = EvalConfig {
        median_window: 1,
        ..EvalConfig::default()
    };
    let mut rb = ReportBuilder::new(&cfg);
    for clip in 0..40 {
        let class = ["x", "y", "z"][clip % 3];
        let n = rng.random_range(0..3);
        let events: Vec<Event> = random_events(&mut rng, n, 10.0, &[])
            .into_iter()
            .map(|e| Event::new(e.onset, e.offset, class))
            .collect();
        let labels = frame_labels_from_events(&EventList::new(events), class, 500);
        let truth = decode_events(&labels.as_f64(), 0.5, 1, class);
        let est = decode_events(&labels.as_f64(), cfg.threshold, cfg.median_window, class);
        rb.add(class, &truth, &est, 10.0);
    }
    let report = rb.finish().unwrap();
    assert_eq!(report.macro_event_f, 1.0);
    assert_eq!(report.macro_segment_f, 1.0);
}

proptest! {
    #[test]
    fn decoding_frame_labels_round_trips(bits in proptest::collection::vec(any::<bool>(), 1..300)) {
        let probs: Vec<f64> = bits.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect();
        let events = decode_events(&probs, 0.5, 1, "a");
        let back = frame_labels_from_events(&events, "a", probs.len());
        prop_assert_eq!(back.values, bits.iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
    }
}

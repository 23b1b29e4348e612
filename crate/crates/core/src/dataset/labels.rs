use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EventList, FrameLabels};
use crate::error::{Error, Result};
use crate::features::frame_time;

/// Frame `i` is active iff its time lies in some `[onset, offset)` of `class`.
pub fn frame_labels_from_events(events: &EventList, class: &str, frames: usize) -> FrameLabels {
    let mut values = vec![0u8; frames];
    for e in events.of_class(class) {
        for (i, v) in values.iter_mut().enumerate() {
            let t = frame_time(i);
            if t >= e.onset - 1e-9 && t < e.offset - 1e-9 {
                *v = 1;
            }
        }
    }
    FrameLabels {
        values,
        class: class.to_string(),
    }
}

/// Flip exactly `round(error_rate * T)` frames at positions drawn uniformly
/// without replacement. Positions depend only on `T`, the rate and the seed,
/// so applying the same corruption twice restores the input.
pub fn corrupt_labels(labels: &FrameLabels, error_rate: f64, rng_seed: u64) -> Result<FrameLabels> {
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::InvalidInput(format!(
            "error rate must lie in [0, 1], got {error_rate}"
        )));
    }
    let n = labels.len();
    let flips = (error_rate * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = labels.clone();
    for i in rand::seq::index::sample(&mut rng, n, flips.min(n)) {
        out.values[i] ^= 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Event;
    use proptest::prelude::*;

    fn hamming(a: &FrameLabels, b: &FrameLabels) -> usize {
        a.values
            .iter()
            .zip(&b.values)
            .filter(|(x, y)| x != y)
            .count()
    }

    #[test]
    fn frame_label_examples() {
        let none = frame_labels_from_events(&EventList::default(), "a", 10);
        assert!(none.values.iter().all(|&v| v == 0));
        let full = EventList::new(vec![Event::new(0.0, 2.0, "a")]);
        assert!(frame_labels_from_events(&full, "a", 100)
            .values
            .iter()
            .all(|&v| v == 1));
        let half = EventList::new(vec![Event::new(0.5, 1.0, "a"), Event::new(0.0, 2.0, "b")]);
        let l = frame_labels_from_events(&half, "a", 100);
        let ones: Vec<usize> = (0..100).filter(|&i| l.values[i] == 1).collect();
        assert_eq!(ones, (25..50).collect::<Vec<_>>());
    }

    #[test]
    fn corruption_examples() {
        let l = FrameLabels::new((0..200).map(|i| (i % 3 == 0) as u8).collect(), "a").unwrap();
        assert_eq!(corrupt_labels(&l, 0.0, 1).unwrap(), l);
        let all = corrupt_labels(&l, 1.0, 1).unwrap();
        assert!(all.values.iter().zip(&l.values).all(|(a, b)| a ^ b == 1));
        assert_eq!(hamming(&l, &corrupt_labels(&l, 0.35, 9).unwrap()), 70);
        assert!(corrupt_labels(&l, 1.5, 0).is_err());
        assert!(corrupt_labels(&l, -0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn corruption_is_an_involution(
            bits in proptest::collection::vec(0u8..2, 1..300),
            rate in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let l = FrameLabels::new(bits, "a").unwrap();
            let once = corrupt_labels(&l, rate, seed).unwrap();
            prop_assert_eq!(hamming(&l, &once), (rate * l.len() as f64).round() as usize);
            prop_assert_eq!(corrupt_labels(&once, rate, seed).unwrap(), l);
        }
    }
}

use std::f64::consts::PI;

const ZERO_CROSSINGS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let a = PI * (x + 1.0);
    0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
}

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// The output has `floor(len * to / from)` samples.
pub fn resample(input: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let out_len = (input.len() as u64 * to as u64 / from as u64) as usize;
    let step = from as f64 / to as f64;
    let cutoff = (to as f64 / from as f64).min(1.0) * 0.97;
    let half_width = ZERO_CROSSINGS / cutoff;
    let n = input.len() as i64;
    (0..out_len)
        .map(|i| {
            let t = i as f64 * step;
            let lo = ((t - half_width).ceil() as i64).max(0);
            let hi = ((t + half_width).floor() as i64).min(n - 1);
            let mut acc = 0.0;
            for k in lo..=hi {
                let d = t - k as f64;
                acc += input[k as usize] * cutoff * sinc(cutoff * d) * blackman(d / half_width);
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rate_is_a_copy() {
        let x = vec![0.1, 0.2, -0.3];
        assert_eq!(resample(&x, 22050, 22050), x);
    }

    #[test]
    fn downsampled_tone_keeps_frequency_and_level() {
        let from = 44_100;
        let x: Vec<f64> = (0..44_100)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / from as f64).sin())
            .collect();
        let y = resample(&x, from, 22_050);
        assert_eq!(y.len(), 22_050);
        for (i, &v) in y.iter().enumerate().skip(200).take(20_000) {
            let expect = (2.0 * PI * 1000.0 * i as f64 / 22_050.0).sin();
            assert!((v - expect).abs() < 1e-2, "sample {i}: {v} vs {expect}");
        }
    }
}

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Waveform, HOP_LENGTH, LOG_FLOOR, N_MELS, SAMPLE_RATE, WINDOW_LENGTH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: WINDOW_LENGTH,
            hop_length: HOP_LENGTH,
            n_mels: N_MELS,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
            log_floor: LOG_FLOOR,
        }
    }
}

/// `T x F` natural-log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub frames_per_second: f64,
    pub clip_duration: f64,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, shape `n_mels x (n_fft/2 + 1)`.
pub(crate) fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let n_bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

struct Analyzer {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filters: Array2<f64>,
    power_scale: f64,
}

impl Analyzer {
    fn new(cfg: &MelConfig) -> Self {
        // periodic Hann
        let window: Vec<f64> = (0..cfg.n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.n_fft as f64).cos())
            .collect();
        let wsum: f64 = window.iter().sum();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            window,
            fft,
            filters: mel_filterbank(cfg),
            power_scale: 1.0 / (wsum * wsum),
        }
    }
}

/// Log-mel spectrogram with the crate-wide front-end settings.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    mel_spectrogram_with(w, &MelConfig::default())
}

/// Frames are centered on multiples of the hop with zero padding at both
/// ends, so a clip of `n` samples yields `ceil(n / hop)` frames.
pub fn mel_spectrogram_with(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidInput(format!(
            "waveform is {} Hz, front end expects {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    if w.len() < cfg.n_fft {
        return Err(Error::InvalidInput(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            w.len(),
            cfg.n_fft
        )));
    }
    let an = Analyzer::new(cfg);
    let n = w.len();
    let frames = n.div_ceil(cfg.hop_length);
    let half = cfg.n_fft / 2;
    let n_bins = half + 1;
    let mut values = Array2::zeros((frames, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); an.fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; n_bins];
    for t in 0..frames {
        let center = (t * cfg.hop_length) as i64;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = center - half as i64 + i as i64;
            let s = if idx >= 0 && (idx as usize) < n {
                w.samples[idx as usize]
            } else {
                0.0
            };
            *slot = Complex::new(s * an.window[i], 0.0);
        }
        an.fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr() * an.power_scale;
        }
        for m in 0..cfg.n_mels {
            let row = an.filters.row(m);
            let e: f64 = row.iter().zip(&power).map(|(a, b)| a * b).sum();
            values[[t, m]] = e.max(cfg.log_floor).ln();
        }
    }
    Ok(MelSpectrogram {
        values,
        frames_per_second: cfg.sample_rate as f64 / cfg.hop_length as f64,
        clip_duration: w.duration(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FRAMES_PER_SECOND;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ten_seconds_gives_500_frames() {
        let m = mel_spectrogram(&Waveform::zeros(220_500)).unwrap();
        assert_eq!(m.values.dim(), (500, 64));
        assert_eq!(m.frames_per_second, FRAMES_PER_SECOND);
        assert_eq!(m.clip_duration, 10.0);
    }

    #[test]
    fn silence_is_the_log_floor() {
        let m = mel_spectrogram(&Waveform::zeros(22_050)).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(m.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn short_waveform_is_rejected() {
        assert!(mel_spectrogram(&Waveform::zeros(2047)).is_err());
    }

    #[test]
    fn pure_tone_is_stationary_after_warmup() {
        let sr = SAMPLE_RATE as f64;
        let s: Vec<f64> = (0..3 * SAMPLE_RATE as usize)
            .map(|i| 0.5 * (2.0 * PI * 1000.0 * i as f64 / sr).sin())
            .collect();
        let m = mel_spectrogram(&Waveform::new(s)).unwrap();
        // the first and last 3 frames see zero padding
        let warm = 3;
        let t = m.frames();
        let peak = m.values.row(t / 2).iter().cloned().fold(f64::MIN, f64::max);
        let mut worst = 0.0f64;
        for i in warm + 1..t - warm {
            for b in 0..m.bins() {
                // ignore bins more than 60 dB (ln units) below the peak
                if m.values[[i, b]] < peak - 13.8 {
                    continue;
                }
                worst = worst.max((m.values[[i, b]] - m.values[[i - 1, b]]).abs());
            }
        }
        assert!(worst < 1e-3, "max frame-to-frame change {worst}");
        let peak_bin = m
            .values
            .row(t / 2)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let fb = mel_filterbank(&MelConfig::default());
        let k1000 = (1000.0 / (sr / WINDOW_LENGTH as f64)).round() as usize;
        assert!(fb[[peak_bin, k1000]] > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn noise_never_yields_non_finite(seed in any::<u64>(), scale in 1e-6f64..10.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..4096).map(|_| rng.random_range(-scale..scale)).collect();
            let m = mel_spectrogram(&Waveform::new(s)).unwrap();
            prop_assert!(m.values.iter().all(|v| v.is_finite()));
        }
    }
}

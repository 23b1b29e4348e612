//! Audio front end: loading, resampling and log-mel features.
//!
//! Every feature matrix and every frame label in the crate shares one clock:
//! 22050 Hz audio, hop 441 samples, so frame `i` sits at exactly `i / 50` s.

mod cache;
mod mel;
mod resample;
pub mod wav;

use std::path::Path;

pub use cache::{load_feature_cache, save_feature_cache, FeatureCacheMeta};
pub use mel::{mel_spectrogram, mel_spectrogram_with, MelConfig, MelSpectrogram};
pub use resample::resample;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;
pub const HOP_LENGTH: usize = 441;
pub const WINDOW_LENGTH: usize = 2048;
pub const N_MELS: usize = 64;
pub const FRAMES_PER_SECOND: f64 = SAMPLE_RATE as f64 / HOP_LENGTH as f64;
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Read a WAV file, mix it down to mono and resample to 22050 Hz.
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav = wav::read_wav(path)?;
    let mono = wav.to_mono();
    if mono.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let samples = if wav.sample_rate == SAMPLE_RATE {
        mono
    } else {
        resample(&mono, wav.sample_rate, SAMPLE_RATE)
    };
    Ok(Waveform::new(samples))
}

/// Number of feature frames covering `duration` seconds.
pub fn frames_for_duration(duration: f64) -> Result<usize> {
    if !duration.is_finite() || duration <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "duration must be positive and finite, got {duration}"
        )));
    }
    // tolerate representation error such as 0.3 * 50 = 15.000000000000002
    Ok((duration * FRAMES_PER_SECOND - 1e-9).ceil().max(1.0) as usize)
}

/// Start time of frame `index` in seconds.
pub fn time_of_frame(index: i64) -> Result<f64> {
    if index < 0 {
        return Err(Error::InvalidInput(format!(
            "frame index must be non-negative, got {index}"
        )));
    }
    Ok(index as f64 / FRAMES_PER_SECOND)
}

/// Infallible variant for indices that are known to be valid.
pub fn frame_time(index: usize) -> f64 {
    index as f64 / FRAMES_PER_SECOND
}

/// Index of the first frame at or after `time` seconds.
pub fn frame_at_or_after(time: f64) -> usize {
    (time * FRAMES_PER_SECOND - 1e-9).ceil().max(0.0) as usize
}

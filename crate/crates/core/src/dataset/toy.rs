//! Synthetic sound classes and background noises for desk-scale
//! experiments.
//!
//! Classes differ by spectral band (log-spaced center frequencies) and
//! texture. Every clip has a sharp attack followed by a per-clip amount of
//! exponential decay, so the quiet tail is still part of the annotated event.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::features::{Waveform, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Harmonic,
    NoiseBand,
    Chirp,
    Pulse,
}

impl Texture {
    const ALL: [Texture; 4] = [
        Texture::Harmonic,
        Texture::NoiseBand,
        Texture::Chirp,
        Texture::Pulse,
    ];

    fn name(self) -> &'static str {
        match self {
            Texture::Harmonic => "harmonic",
            Texture::NoiseBand => "noise",
            Texture::Chirp => "chirp",
            Texture::Pulse => "pulse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClass {
    pub name: String,
    pub texture: Texture,
    pub center_hz: f64,
}

/// Clip synthesis settings shared by all classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyBankConfig {
    pub n_classes: usize,
    pub lowest_hz: f64,
    pub highest_hz: f64,
    pub min_len: f64,
    pub max_len: f64,
    /// Upper bound of the decay over a clip, in nepers (e^-x at the end).
    pub max_decay: f64,
    pub seed: u64,
}

impl Default for ToyBankConfig {
    fn default() -> Self {
        Self {
            n_classes: 12,
            lowest_hz: 300.0,
            highest_hz: 6000.0,
            min_len: 0.5,
            max_len: 2.0,
            max_decay: 2.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyBank {
    pub config: ToyBankConfig,
    pub classes: Vec<ToyClass>,
}

impl ToyBank {
    pub fn new(config: ToyBankConfig) -> Self {
        let n = config.n_classes;
        let ratio = if n > 1 {
            (config.highest_hz / config.lowest_hz).powf(1.0 / (n - 1) as f64)
        } else {
            1.0
        };
        let classes = (0..n)
            .map(|k| {
                let texture = Texture::ALL[k % 4];
                let center_hz = config.lowest_hz * ratio.powi(k as i32);
                ToyClass {
                    name: format!("{}_{:04.0}", texture.name(), center_hz),
                    texture,
                    center_hz,
                }
            })
            .collect();
        Self { config, classes }
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Identifier understood by [`ToyBank::clip_by_id`].
    pub fn clip_id(&self, class: usize, instance: u64) -> String {
        format!("{}#{instance}", self.classes[class].name)
    }

    pub fn clip_by_id(&self, id: &str) -> Option<Waveform> {
        let (name, inst) = id.rsplit_once('#')?;
        let class = self.class_index(name)?;
        Some(self.clip(class, inst.parse().ok()?))
    }

    fn clip_rng(&self, class: usize, instance: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[0xC11B, class as u64, instance],
        ))
    }

    /// Length in samples of [`ToyBank::clip`] without synthesizing it.
    pub fn clip_len(&self, class: usize, instance: u64) -> usize {
        let dur = self
            .clip_rng(class, instance)
            .random_range(self.config.min_len..=self.config.max_len);
        (dur * SAMPLE_RATE as f64).round() as usize
    }

    pub fn clip_by_id_len(&self, id: &str) -> Option<usize> {
        let (name, inst) = id.rsplit_once('#')?;
        Some(self.clip_len(self.class_index(name)?, inst.parse().ok()?))
    }

    /// Deterministic single-event clip of `class`.
    pub fn clip(&self, class: usize, instance: u64) -> Waveform {
        let cfg = &self.config;
        let spec = &self.classes[class];
        let mut rng = self.clip_rng(class, instance);
        let sr = SAMPLE_RATE as f64;
        let dur = rng.random_range(cfg.min_len..=cfg.max_len);
        let n = (dur * sr).round() as usize;
        let f0 = spec.center_hz * rng.random_range(0.97..1.03);
        let decay = rng.random_range(0.0..=cfg.max_decay);
        let nyquist_guard = 0.45 * sr;
        let mut s = vec![0.0; n];
        match spec.texture {
            Texture::Harmonic => {
                let vib_rate = rng.random_range(4.0..6.0);
                let mut phase = 0.0;
                for (i, v) in s.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let f = f0 * (1.0 + 0.01 * (2.0 * PI * vib_rate * t).sin());
                    phase += 2.0 * PI * f / sr;
                    let mut acc = 0.0;
                    for (h, amp) in [(1.0, 1.0), (2.0, 0.5), (3.0, 0.25)] {
                        if f0 * h < nyquist_guard {
                            acc += amp * (h * phase).sin();
                        }
                    }
                    *v = acc;
                }
            }
            Texture::NoiseBand => {
                let partials: Vec<(f64, f64, f64)> = (0..24)
                    .map(|_| {
                        (
                            (f0 * rng.random_range(0.85..1.18)).min(nyquist_guard),
                            rng.random_range(0.0..2.0 * PI),
                            rng.random_range(0.5..1.0),
                        )
                    })
                    .collect();
                for (i, v) in s.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    *v = partials
                        .iter()
                        .map(|(f, p, a)| a * (2.0 * PI * f * t + p).sin())
                        .sum();
                }
            }
            Texture::Chirp => {
                let sweep = rng.random_range(2.5..3.5);
                let mut phase = 0.0;
                for (i, v) in s.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let f = f0 * (0.8 + 0.4 * (t * sweep).fract());
                    phase += 2.0 * PI * f / sr;
                    *v = phase.sin();
                }
            }
            Texture::Pulse => {
                let rate = rng.random_range(5.0..7.0);
                let ramp = 0.005;
                for (i, v) in s.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let pos = (t * rate).fract() / rate;
                    let on = 0.45 / rate;
                    let gate = if pos < on {
                        (pos / ramp).min(1.0).min((on - pos) / ramp)
                    } else {
                        0.0
                    };
                    *v = gate * (2.0 * PI * f0 * t).sin();
                }
            }
        }
        let attack = 0.015;
        let release = 0.02;
        for (i, v) in s.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = (t / attack).min(1.0)
                * ((dur - t) / release).clamp(0.0, 1.0)
                * (-decay * t / dur).exp();
            *v *= env;
        }
        let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            s.iter_mut().for_each(|v| *v *= 0.5 / peak);
        }
        Waveform::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    /// Pink noise.
    Pink,
    /// Brown noise with mains hum and its harmonics.
    BrownHum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub kind: BackgroundKind,
    pub level_rms: f64,
    pub seed: u64,
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn normalize_rms(x: &mut [f64], level: f64) {
    let r = rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= level / r);
    }
}

pub fn background(spec: &BackgroundSpec, n_samples: usize) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0xB6]));
    let mut white = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut out = vec![0.0; n_samples];
    match spec.kind {
        BackgroundKind::Pink => {
            // Paul Kellet's refined pink filter
            let (mut b0, mut b1, mut b2, mut b3, mut b4, mut b5, mut b6) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for v in out.iter_mut() {
                let w = white();
                b0 = 0.99886 * b0 + w * 0.0555179;
                b1 = 0.99332 * b1 + w * 0.0750759;
                b2 = 0.96900 * b2 + w * 0.1538520;
                b3 = 0.86650 * b3 + w * 0.3104856;
                b4 = 0.55000 * b4 + w * 0.5329522;
                b5 = -0.7616 * b5 - w * 0.0168980;
                *v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
                b6 = w * 0.115926;
            }
        }
        BackgroundKind::BrownHum => {
            let mut brown = vec![0.0; n_samples];
            let mut y = 0.0;
            for v in brown.iter_mut() {
                y = 0.995 * y + white();
                *v = y;
            }
            normalize_rms(&mut brown, 1.0);
            let sr = SAMPLE_RATE as f64;
            let mut hum: Vec<f64> = (0..n_samples)
                .map(|i| {
                    let t = i as f64 / sr;
                    (1..=6)
                        .map(|h| (2.0 * PI * 60.0 * h as f64 * t).sin() / h as f64)
                        .sum()
                })
                .collect();
            normalize_rms(&mut hum, 1.0);
            for ((o, b), h) in out.iter_mut().zip(&brown).zip(&hum) {
                *o = 0.8 * b + 0.6 * h;
            }
        }
    }
    normalize_rms(&mut out, spec.level_rms);
    Waveform::new(out)
}

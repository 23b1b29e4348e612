use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{linsoft_pool, Embedding, InputNorm};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::{scoped, sigmoid, BiGru, BiGruCache, ConvBlock, ConvCache, Linear, Module, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub n_mels: usize,
    pub conv_channels: Vec<usize>,
    /// Frequency pooling factor after each conv layer. Time is never pooled.
    pub freq_pools: Vec<usize>,
    pub embedding_dim: usize,
    pub gru_hidden: usize,
    pub fc_hidden: usize,
    pub kd_dim: usize,
    pub has_pooling_head: bool,
    pub input_norm: InputNorm,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            conv_channels: vec![16, 32, 64, 64, 64],
            freq_pools: vec![2, 2, 2, 2, 2],
            embedding_dim: 128,
            gru_hidden: 64,
            fc_hidden: 64,
            kd_dim: 64,
            has_pooling_head: false,
            input_norm: InputNorm::default(),
        }
    }
}

impl StudentConfig {
    /// Narrow variant sized for single-core CPU training.
    pub fn desk() -> Self {
        Self {
            conv_channels: vec![8, 16, 16, 16, 16],
            freq_pools: vec![4, 2, 2, 2, 1],
            embedding_dim: 32,
            gru_hidden: 32,
            fc_hidden: 32,
            kd_dim: 32,
            ..Self::default()
        }
    }

    pub fn with_pooling_head(&self, on: bool) -> Self {
        Self {
            has_pooling_head: on,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.freq_pools.len() {
            return Err(Error::InvalidInput(
                "conv_channels and freq_pools must be non-empty and of equal length".into(),
            ));
        }
        let total: usize = self.freq_pools.iter().product();
        if self.freq_pools.contains(&0) || self.n_mels % total != 0 {
            return Err(Error::InvalidInput(format!(
                "frequency pools {:?} do not divide {} bins",
                self.freq_pools, self.n_mels
            )));
        }
        if [
            self.embedding_dim,
            self.gru_hidden,
            self.fc_hidden,
            self.kd_dim,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidInput("layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// Bins and channels of the conv-stack output.
    pub fn z_shape(&self) -> (usize, usize) {
        let total: usize = self.freq_pools.iter().product();
        (
            self.n_mels / total,
            *self.conv_channels.last().expect("validated"),
        )
    }

    pub fn z_dim(&self) -> usize {
        let (f, c) = self.z_shape();
        f * c
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.gru_hidden
    }
}

/// Detection network: conv stack, embedding fusion, BiGRU, two FC layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub config: StudentConfig,
    pub blocks: Vec<ConvBlock>,
    pub gru: BiGru,
    pub fc1: Linear,
    pub fc2: Linear,
    /// Distillation projection `W`, `(2 * gru_hidden, kd_dim)`.
    pub kd_projection: Param,
}

#[derive(Debug, Clone)]
pub struct ConvStackCache {
    caches: Vec<ConvCache>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    gru: BiGruCache,
    features: Array2<f64>,
    fc1_pre: Array2<f64>,
    fc1_out: Array2<f64>,
    probs: Vec<f64>,
    z_shape: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub probs: Vec<f64>,
    /// BiGRU output `F`, `(T, 2 * gru_hidden)`.
    pub features: Array2<f64>,
    /// Pooled clip probability when the model has a pooling head.
    pub clip_prob: Option<f64>,
}

/// Time-broadcast concatenation of the embedding onto every frame.
fn fuse(z: &Array2<f64>, e: &Embedding) -> Array2<f64> {
    let row = Array1::from(e.values.clone());
    let tiled = row
        .broadcast((z.nrows(), e.len()))
        .expect("broadcast")
        .to_owned();
    concatenate![Axis(1), *z, tiled]
}

impl StudentModel {
    pub fn new(config: StudentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        let mut in_ch = 1;
        for (&c, &p) in config.conv_channels.iter().zip(&config.freq_pools) {
            blocks.push(ConvBlock::new(in_ch, c, p, &mut rng));
            in_ch = c;
        }
        let gru = BiGru::new(
            config.z_dim() + config.embedding_dim,
            config.gru_hidden,
            &mut rng,
        );
        let fc1 = Linear::new(config.feature_dim(), config.fc_hidden, &mut rng);
        let fc2 = Linear::new(config.fc_hidden, 1, &mut rng);
        let kd_projection = Param::uniform(
            config.feature_dim(),
            config.kd_dim,
            1.0 / (config.feature_dim() as f64).sqrt(),
            &mut rng,
        );
        Ok(Self {
            config,
            blocks,
            gru,
            fc1,
            fc2,
            kd_projection,
        })
    }

    /// Conv stack output `z` as a `(T, F', C)` map.
    pub fn conv_forward(&self, mixture: &MelSpectrogram) -> Result<(Array3<f64>, ConvStackCache)> {
        if mixture.frames() == 0 {
            return Err(Error::Shape("mixture has no frames".into()));
        }
        if mixture.bins() != self.config.n_mels {
            return Err(Error::Shape(format!(
                "mixture has {} bins, model expects {}",
                mixture.bins(),
                self.config.n_mels
            )));
        }
        let mut x = self.config.input_norm.apply(&mixture.values);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&x);
            caches.push(c);
            x = y;
        }
        Ok((x, ConvStackCache { caches }))
    }

    pub fn conv_backward(&mut self, cache: &ConvStackCache, dz: &Array3<f64>) {
        let mut d = dz.clone();
        for (i, (b, c)) in self.blocks.iter_mut().zip(&cache.caches).enumerate().rev() {
            match b.backward(c, &d, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    pub fn head_forward(&self, z: &Array3<f64>, e: &Embedding) -> Result<(HeadOutput, HeadCache)> {
        if e.len() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding has {} values, model expects {}",
                e.len(),
                self.config.embedding_dim
            )));
        }
        let (t, f, c) = z.dim();
        if f * c != self.config.z_dim() {
            return Err(Error::Shape(format!(
                "z has {} features, expected {}",
                f * c,
                self.config.z_dim()
            )));
        }
        let z2 = z
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t, f * c))
            .expect("contiguous");
        let (features, gru) = self.gru.forward(&fuse(&z2, e));
        let fc1_pre = self.fc1.forward(&features);
        let fc1_out = fc1_pre.mapv(|v| v.max(0.0));
        let logits = self.fc2.forward(&fc1_out);
        let probs: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
        let clip_prob = self.config.has_pooling_head.then(|| linsoft_pool(&probs));
        Ok((
            HeadOutput {
                probs: probs.clone(),
                features: features.clone(),
                clip_prob,
            },
            HeadCache {
                gru,
                features,
                fc1_pre,
                fc1_out,
                probs,
                z_shape: (t, f, c),
            },
        ))
    }

    /// Accumulate gradients from dL/dp (frame probabilities) and dL/dF
    /// (feature map); returns dL/dz.
    pub fn head_backward(
        &mut self,
        cache: &HeadCache,
        d_probs: Option<&[f64]>,
        d_features: Option<&Array2<f64>>,
    ) -> Array3<f64> {
        let t = cache.probs.len();
        let mut d_f = match d_probs {
            Some(dp) => {
                let d_logits = Array2::from_shape_fn((t, 1), |(i, _)| {
                    dp[i] * cache.probs[i] * (1.0 - cache.probs[i])
                });
                let mut d_h = self.fc2.backward(&cache.fc1_out, &d_logits);
                ndarray::Zip::from(&mut d_h)
                    .and(&cache.fc1_pre)
                    .for_each(|g, &a| {
                        if a <= 0.0 {
                            *g = 0.0
                        }
                    });
                self.fc1.backward(&cache.features, &d_h)
            }
            None => Array2::zeros(cache.features.raw_dim()),
        };
        if let Some(df) = d_features {
            d_f += df;
        }
        let dx = self.gru.backward(&cache.gru, &d_f);
        let (t, f, c) = cache.z_shape;
        dx.slice(s![.., ..f * c])
            .to_owned()
            .into_shape_with_order((t, f, c))
            .expect("contiguous")
    }

    /// Frame probabilities and feature map in one pass.
    pub fn infer(&self, mixture: &MelSpectrogram, e: &Embedding) -> Result<HeadOutput> {
        let (z, _) = self.conv_forward(mixture)?;
        Ok(self.head_forward(&z, e)?.0)
    }
}

/// Per-frame target probabilities for one mixture.
pub fn detect_frames(
    model: &StudentModel,
    mixture: &MelSpectrogram,
    e: &Embedding,
) -> Result<Vec<f64>> {
    Ok(model.infer(mixture, e)?.probs)
}

/// BiGRU feature map `F` used for distillation.
pub fn extract_feature_map(
    model: &StudentModel,
    mixture: &MelSpectrogram,
    e: &Embedding,
) -> Result<Array2<f64>> {
    Ok(model.infer(mixture, e)?.features)
}

impl Module for StudentModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            let scope = format!("block{i}");
            b.visit(&mut |n, p| f(&scoped(&scope, n), p));
        }
        self.gru.visit(&mut |n, p| f(&scoped("gru", n), p));
        self.fc1.visit(&mut |n, p| f(&scoped("fc1", n), p));
        self.fc2.visit(&mut |n, p| f(&scoped("fc2", n), p));
        f("kd_projection", &self.kd_projection);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let scope = format!("block{i}");
            b.visit_mut(&mut |n, p| f(&scoped(&scope, n), p));
        }
        self.gru.visit_mut(&mut |n, p| f(&scoped("gru", n), p));
        self.fc1.visit_mut(&mut |n, p| f(&scoped("fc1", n), p));
        self.fc2.visit_mut(&mut |n, p| f(&scoped("fc2", n), p));
        f("kd_projection", &mut self.kd_projection);
    }
}

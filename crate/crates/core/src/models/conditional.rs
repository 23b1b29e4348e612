use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_checkpoint, read_checkpoint_header, save_checkpoint, Embedding, InputNorm};
use crate::dataset::{Catalog, ReferenceBank};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::{scoped, Adam, AdamConfig, ConvBlock, ConvCache, Linear, Module, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalConfig {
    pub n_mels: usize,
    pub channels: Vec<usize>,
    pub freq_pools: Vec<usize>,
    pub embedding_dim: usize,
    pub head_hidden: usize,
    pub input_norm: InputNorm,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            channels: vec![32, 64, 128],
            freq_pools: vec![2, 2, 2],
            embedding_dim: 128,
            head_hidden: 128,
            input_norm: InputNorm::default(),
            lr: 1e-3,
            batch_size: 8,
        }
    }
}

impl ConditionalConfig {
    pub fn desk() -> Self {
        Self {
            channels: vec![8, 16, 16],
            freq_pools: vec![4, 2, 2],
            embedding_dim: 32,
            head_hidden: 32,
            ..Self::default()
        }
    }

    fn pooled_dim(&self) -> usize {
        let total: usize = self.freq_pools.iter().product();
        self.n_mels / total * self.channels.last().copied().unwrap_or(0)
    }
}

/// VGG-like reference encoder with a classification head used only while
/// it is trained. Embeddings are the rectified projection of the
/// time-averaged conv features, rescaled to norm `sqrt(embedding_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalNet {
    pub config: ConditionalConfig,
    pub classes: Vec<String>,
    pub blocks: Vec<ConvBlock>,
    pub embed: Linear,
    pub head1: Linear,
    pub head2: Linear,
}

struct Trace {
    convs: Vec<ConvCache>,
    map_shape: (usize, usize, usize),
    pooled: Array2<f64>,
    embed_pre: Array2<f64>,
    embed_out: Array2<f64>,
    head_pre: Array2<f64>,
    head_out: Array2<f64>,
}

impl ConditionalNet {
    pub fn new(config: ConditionalConfig, classes: Vec<String>, seed: u64) -> Result<Self> {
        let total: usize = config.freq_pools.iter().product();
        if config.channels.is_empty()
            || config.channels.len() != config.freq_pools.len()
            || config.freq_pools.contains(&0)
            || config.n_mels % total != 0
        {
            return Err(Error::InvalidInput("bad conditional network layout".into()));
        }
        if classes.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "conditional network needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (&c, &p) in config.channels.iter().zip(&config.freq_pools) {
            blocks.push(ConvBlock::new(c_in, c, p, &mut rng));
            c_in = c;
        }
        let embed = Linear::new(config.pooled_dim(), config.embedding_dim, &mut rng);
        let head1 = Linear::new(config.embedding_dim, config.head_hidden, &mut rng);
        let head2 = Linear::new(config.head_hidden, classes.len(), &mut rng);
        Ok(Self {
            config,
            classes,
            blocks,
            embed,
            head1,
            head2,
        })
    }

    fn trace(&self, x: &MelSpectrogram) -> Result<(Array2<f64>, Trace)> {
        if x.bins() != self.config.n_mels || x.frames() == 0 {
            return Err(Error::Shape(format!(
                "reference of shape {}x{} does not fit the conditional network",
                x.frames(),
                x.bins()
            )));
        }
        let mut h: Array3<f64> = self.config.input_norm.apply(&x.values);
        let mut convs = Vec::new();
        for b in &self.blocks {
            let (y, c) = b.forward(&h);
            convs.push(c);
            h = y;
        }
        let (t, f, c) = h.dim();
        let pooled = h
            .mean_axis(Axis(0))
            .expect("non-empty")
            .into_shape_with_order((1, f * c))
            .expect("contiguous");
        let embed_pre = self.embed.forward(&pooled);
        let embed_out = embed_pre.mapv(|v| v.max(0.0));
        let head_pre = self.head1.forward(&embed_out);
        let head_out = head_pre.mapv(|v| v.max(0.0));
        let logits = self.head2.forward(&head_out);
        Ok((
            logits,
            Trace {
                convs,
                map_shape: (t, f, c),
                pooled,
                embed_pre,
                embed_out,
                head_pre,
                head_out,
            },
        ))
    }

    pub fn embed(&self, reference: &MelSpectrogram) -> Result<Embedding> {
        let (_, tr) = self.trace(reference)?;
        let a = tr.embed_out.row(0);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 {
            (a.len() as f64).sqrt() / norm
        } else {
            0.0
        };
        Ok(Embedding {
            values: a.iter().map(|v| v * scale).collect(),
        })
    }

    pub fn classify(&self, reference: &MelSpectrogram) -> Result<usize> {
        let (logits, _) = self.trace(reference)?;
        Ok(logits
            .row(0)
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0)
    }

    /// Softmax cross-entropy for one clip; accumulates gradients.
    fn train_step(&mut self, x: &MelSpectrogram, label: usize, scale: f64) -> Result<f64> {
        let (logits, tr) = self.trace(x)?;
        let row = logits.row(0);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = -(exps[label] / z).ln();
        let d_logits = Array2::from_shape_fn((1, exps.len()), |(_, k)| {
            scale * (exps[k] / z - if k == label { 1.0 } else { 0.0 })
        });
        let mut d = self.head2.backward(&tr.head_out, &d_logits);
        ndarray::Zip::from(&mut d)
            .and(&tr.head_pre)
            .for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
        let mut d = self.head1.backward(&tr.embed_out, &d);
        ndarray::Zip::from(&mut d)
            .and(&tr.embed_pre)
            .for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
        let d_pooled = self.embed.backward(&tr.pooled, &d);
        let (t, f, c) = tr.map_shape;
        let mut dh =
            Array3::from_shape_fn((t, f, c), |(_, j, k)| d_pooled[[0, j * c + k]] / t as f64);
        for (i, (b, cache)) in self.blocks.iter_mut().zip(&tr.convs).enumerate().rev() {
            match b.backward(cache, &dh, i > 0) {
                Some(dx) => dh = dx,
                None => break,
            }
        }
        Ok(loss)
    }
}

#[derive(Serialize, Deserialize)]
struct ConditionalMeta {
    config: ConditionalConfig,
    classes: Vec<String>,
}

impl ConditionalNet {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ConditionalMeta {
            config: self.config.clone(),
            classes: self.classes.clone(),
        };
        save_checkpoint(path, "conditional", serde_json::to_value(meta)?, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: ConditionalMeta = serde_json::from_value(read_checkpoint_header(path)?.config)?;
        let mut net = ConditionalNet::new(meta.config, meta.classes, 0)?;
        load_checkpoint(path, &mut net)?;
        Ok(net)
    }
}

impl Module for ConditionalNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            let scope = format!("block{i}");
            b.visit(&mut |n, p| f(&scoped(&scope, n), p));
        }
        self.embed.visit(&mut |n, p| f(&scoped("embed", n), p));
        self.head1.visit(&mut |n, p| f(&scoped("head1", n), p));
        self.head2.visit(&mut |n, p| f(&scoped("head2", n), p));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let scope = format!("block{i}");
            b.visit_mut(&mut |n, p| f(&scoped(&scope, n), p));
        }
        self.embed.visit_mut(&mut |n, p| f(&scoped("embed", n), p));
        self.head1.visit_mut(&mut |n, p| f(&scoped("head1", n), p));
        self.head2.visit_mut(&mut |n, p| f(&scoped("head2", n), p));
    }
}

/// Labelled clean clips of the catalog: `(class index, features)`.
fn labelled_clips(
    catalog: &Catalog,
    features: &ReferenceBank,
) -> Result<(Vec<String>, Vec<(usize, Arc<MelSpectrogram>)>)> {
    let classes: Vec<String> = catalog.classes.iter().cloned().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "conditional training needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    let mut items = Vec::new();
    for (k, c) in classes.iter().enumerate() {
        let clips = catalog.clean_clips.get(c).map(Vec::as_slice).unwrap_or(&[]);
        if clips.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "class {c} has fewer than 2 clean clips"
            )));
        }
        for id in clips {
            let f = features
                .get(id)
                .ok_or_else(|| Error::Dataset(format!("no features for clean clip {id}")))?;
            items.push((k, f.clone()));
        }
    }
    Ok((classes, items))
}

/// Train the reference encoder as a classifier over the catalog's clean
/// clips.
pub fn train_conditional(
    catalog: &Catalog,
    features: &ReferenceBank,
    config: &ConditionalConfig,
    epochs: usize,
    rng_seed: u64,
) -> Result<ConditionalNet> {
    let (classes, items) = labelled_clips(catalog, features)?;
    let mut config = config.clone();
    config.input_norm = InputNorm::fit(items.iter().map(|(_, f)| &f.values));
    let mut net = ConditionalNet::new(config.clone(), classes, rng_seed)?;
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let bs = config.batch_size.max(1);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            for &i in chunk {
                net.train_step(&items[i].1, items[i].0, 1.0 / chunk.len() as f64)?;
            }
            opt.step(&mut net);
        }
    }
    Ok(net)
}

/// Classification accuracy over labelled clips.
pub fn conditional_accuracy(
    net: &ConditionalNet,
    clips: &[(String, Arc<MelSpectrogram>)],
) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("no clips to score".into()));
    }
    let mut hits = 0;
    for (class, x) in clips {
        if net.classes.get(net.classify(x)?) == Some(class) {
            hits += 1;
        }
    }
    Ok(hits as f64 / clips.len() as f64)
}

/// Embedding of a reference clip.
pub fn conditional_embed(net: &ConditionalNet, reference: &MelSpectrogram) -> Result<Embedding> {
    net.embed(reference)
}

/// Embeddings of every reference, computed once by a frozen network.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingCache {
    pub net_hash: String,
    embeddings: BTreeMap<String, Arc<Embedding>>,
}

impl EmbeddingCache {
    pub fn build(net: &ConditionalNet, references: &ReferenceBank) -> Result<Self> {
        let embeddings = references
            .iter()
            .map(|(id, x)| Ok((id.clone(), Arc::new(net.embed(x)?))))
            .collect::<Result<_>>()?;
        Ok(Self {
            net_hash: net.param_hash(),
            embeddings,
        })
    }

    pub fn get(&self, reference_id: &str) -> Result<&Embedding> {
        self.embeddings
            .get(reference_id)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::Dataset(format!("no embedding for reference {reference_id}")))
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

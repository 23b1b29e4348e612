//! Conditional reference encoder, detection students, domain discriminator
//! and the linear-softmax pooling head.

mod checkpoint;
mod conditional;
mod discriminator;
mod student;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION,
};
pub use conditional::{
    conditional_accuracy, conditional_embed, train_conditional, ConditionalConfig, ConditionalNet,
    EmbeddingCache,
};
pub use discriminator::{discriminate, DiscCache, Discriminator, DiscriminatorConfig};
pub use student::{
    detect_frames, extract_feature_map, ConvStackCache, HeadCache, HeadOutput, StudentConfig,
    StudentModel,
};

/// Fixed-length reference descriptor produced by the conditional network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let na = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Scalar standardization applied to log-mel input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl InputNorm {
    /// Mean and standard deviation over all bins of all inputs.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
        for x in inputs {
            n += x.len();
            s += x.sum();
            s2 += x.iter().map(|v| v * v).sum::<f64>();
        }
        if n == 0 {
            return Self::default();
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        Self {
            mean,
            std: var.sqrt().max(1e-6),
        }
    }

    /// `(T, F) -> (T, F, 1)` standardized map.
    pub fn apply(&self, x: &Array2<f64>) -> Array3<f64> {
        let (t, f) = x.dim();
        x.mapv(|v| (v - self.mean) / self.std)
            .into_shape_with_order((t, f, 1))
            .expect("contiguous")
    }
}

/// Linear-softmax pooling `sum p^2 / sum p`, defined as 0 when `sum p = 0`.
pub fn linsoft_pool(probs: &[f64]) -> f64 {
    let s: f64 = probs.iter().sum();
    if s == 0.0 {
        return 0.0;
    }
    probs.iter().map(|p| p * p).sum::<f64>() / s
}

/// `dP/dp_i = (2 p_i S - Q) / S^2` with `S = sum p`, `Q = sum p^2`.
pub fn linsoft_jacobian(probs: &[f64]) -> Vec<f64> {
    let s: f64 = probs.iter().sum();
    if s == 0.0 {
        return vec![0.0; probs.len()];
    }
    let q: f64 = probs.iter().map(|p| p * p).sum();
    probs.iter().map(|p| (2.0 * p * s - q) / (s * s)).collect()
}

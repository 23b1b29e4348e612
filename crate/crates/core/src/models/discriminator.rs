use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{scoped, ConvBlock, ConvCache, Linear, Module, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Channels of the conv-stack output it reads.
    pub in_channels: usize,
    pub channels: Vec<usize>,
}

impl DiscriminatorConfig {
    pub fn for_channels(in_channels: usize) -> Self {
        Self {
            in_channels,
            channels: vec![16, 16, 16],
        }
    }
}

/// Three conv layers, a global mean and one linear layer to a 2-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub convs: Vec<ConvBlock>,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    convs: Vec<ConvCache>,
    pooled: Array2<f64>,
    map_shape: (usize, usize, usize),
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.in_channels == 0 {
            return Err(Error::InvalidInput("discriminator needs channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        let mut c_in = config.in_channels;
        for &c in &config.channels {
            convs.push(ConvBlock::new(c_in, c, 1, &mut rng));
            c_in = c;
        }
        let out = Linear::new(c_in, 2, &mut rng);
        Ok(Self { config, convs, out })
    }

    pub fn forward(&self, z: &Array3<f64>) -> Result<([f64; 2], DiscCache)> {
        if z.dim().2 != self.config.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {}",
                self.config.in_channels,
                z.dim().2
            )));
        }
        if z.dim().0 == 0 {
            return Err(Error::Shape("empty feature map".into()));
        }
        let mut x = z.clone();
        let mut convs = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let (y, cache) = c.forward(&x);
            convs.push(cache);
            x = y;
        }
        let (t, f, c) = x.dim();
        let pooled = x
            .into_shape_with_order((t * f, c))
            .expect("contiguous")
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        let y = self.out.forward(&pooled);
        Ok((
            [y[[0, 0]], y[[0, 1]]],
            DiscCache {
                convs,
                pooled,
                map_shape: (t, f, c),
            },
        ))
    }

    /// Accumulate parameter gradients from dL/dD(z); returns dL/dz if asked.
    pub fn backward(
        &mut self,
        cache: &DiscCache,
        d_out: [f64; 2],
        input_grad: bool,
    ) -> Option<Array3<f64>> {
        let dy = ndarray::array![[d_out[0], d_out[1]]];
        let d_pooled = self.out.backward(&cache.pooled, &dy);
        let (t, f, c) = cache.map_shape;
        let scale = 1.0 / (t * f) as f64;
        let mut d = Array3::from_shape_fn((t, f, c), |(_, _, k)| d_pooled[[0, k]] * scale);
        for (i, (conv, cc)) in self.convs.iter_mut().zip(&cache.convs).enumerate().rev() {
            d = conv.backward(cc, &d, input_grad || i > 0)?;
        }
        Some(d)
    }
}

/// Domain prediction `D(z)` (no output nonlinearity).
pub fn discriminate(d_net: &Discriminator, z: &Array3<f64>) -> Result<[f64; 2]> {
    Ok(d_net.forward(z)?.0)
}

impl Module for Discriminator {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, c) in self.convs.iter().enumerate() {
            let scope = format!("conv{i}");
            c.visit(&mut |n, p| f(&scoped(&scope, n), p));
        }
        self.out.visit(&mut |n, p| f(&scoped("out", n), p));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            let scope = format!("conv{i}");
            c.visit_mut(&mut |n, p| f(&scoped(&scope, n), p));
        }
        self.out.visit_mut(&mut |n, p| f(&scoped("out", n), p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_params;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn output_and_gradients() {
        let mut d = Discriminator::new(
            DiscriminatorConfig {
                in_channels: 2,
                channels: vec![3, 3, 2],
            },
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Array3::from_shape_simple_fn((5, 2, 2), || StandardNormal.sample(&mut rng));
        let out = discriminate(&d, &z).unwrap();
        assert_eq!(out, discriminate(&d, &z).unwrap());
        assert!(out.iter().all(|v| v.is_finite()));
        let probe = [0.7, -1.3];
        let loss = |m: &Discriminator, z: &Array3<f64>| {
            let o = discriminate(m, z).unwrap();
            o[0] * probe[0] + o[1] * probe[1]
        };
        let (_, cache) = d.forward(&z).unwrap();
        let dz = d.backward(&cache, probe, true).unwrap();
        let worst = check_params(&mut d, &|m| loss(m, &z), 1e-6);
        assert!(worst < 1e-5, "{worst}");
        for idx in [(0, 0, 0), (4, 1, 1), (2, 1, 0)] {
            let mut up = z.clone();
            up[idx] += 1e-6;
            let mut down = z.clone();
            down[idx] -= 1e-6;
            let num = (loss(&d, &up) - loss(&d, &down)) / 2e-6;
            assert!((num - dz[idx]).abs() < 1e-6);
        }
        assert!(d.forward(&Array3::zeros((4, 2, 3))).is_err());
    }
}

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;

use super::{scoped, Module, Param};

/// 3x3 convolution with stride 1 and zero "same" padding over `(T, F, C)`
/// maps, computed as an im2col matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `(in_ch * 9, out_ch)`, rows ordered by (dt, df, c_in).
    pub weight: Param,
    pub bias: Param,
}

fn im2col(x: &Array3<f64>) -> Array2<f64> {
    let (t_len, f_len, c) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let width = 9 * c;
    let mut cols = Array2::zeros((t_len * f_len, width));
    let out = cols.as_slice_mut().expect("fresh array");
    for t in 0..t_len {
        for f in 0..f_len {
            let row = &mut out[(t * f_len + f) * width..][..width];
            for dt in 0..3 {
                let tt = t + dt;
                if tt < 1 || tt > t_len {
                    continue;
                }
                for df in 0..3 {
                    let ff = f + df;
                    if ff < 1 || ff > f_len {
                        continue;
                    }
                    let src = ((tt - 1) * f_len + ff - 1) * c;
                    row[(dt * 3 + df) * c..][..c].copy_from_slice(&xs[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, t_len: usize, f_len: usize, c: usize) -> Array3<f64> {
    let mut x = Array3::zeros((t_len, f_len, c));
    let xs = x.as_slice_mut().expect("fresh array");
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let width = 9 * c;
    for t in 0..t_len {
        for f in 0..f_len {
            let row = &cs[(t * f_len + f) * width..][..width];
            for dt in 0..3 {
                let tt = t + dt;
                if tt < 1 || tt > t_len {
                    continue;
                }
                for df in 0..3 {
                    let ff = f + df;
                    if ff < 1 || ff > f_len {
                        continue;
                    }
                    let dst = ((tt - 1) * f_len + ff - 1) * c;
                    for (d, s) in xs[dst..dst + c]
                        .iter_mut()
                        .zip(&row[(dt * 3 + df) * c..][..c])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (in_ch * 9) as f64;
        Self {
            in_ch,
            out_ch,
            weight: Param::uniform(in_ch * 9, out_ch, (6.0 / fan_in).sqrt(), rng),
            bias: Param::uniform(1, out_ch, 1.0 / fan_in.sqrt(), rng),
        }
    }

    /// Output and the im2col matrix needed by [`Conv2d::backward`].
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (t, f, c) = x.dim();
        assert_eq!(c, self.in_ch, "conv input channels");
        let cols = im2col(x);
        let mut y = cols.dot(&self.weight.value);
        y += &self.bias.value;
        let y = y
            .into_shape_with_order((t, f, self.out_ch))
            .expect("contiguous");
        (y, cols)
    }

    /// Accumulate parameter gradients; returns the input gradient if asked.
    pub fn backward(
        &mut self,
        cols: &Array2<f64>,
        dy: &Array3<f64>,
        input_grad: bool,
    ) -> Option<Array3<f64>> {
        let (t, f, c) = dy.dim();
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t * f, c))
            .expect("contiguous");
        ndarray::linalg::general_mat_mul(1.0, &cols.t(), &dy2, 1.0, &mut self.weight.grad);
        self.bias.grad += &dy2.sum_axis(Axis(0)).insert_axis(Axis(0));
        input_grad.then(|| col2im(&dy2.dot(&self.weight.value.t()), t, f, self.in_ch))
    }
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Mean over non-overlapping groups of `factor` frequency bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreqPool {
    pub factor: usize,
}

impl FreqPool {
    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (t, f, c) = x.dim();
        let p = self.factor;
        if p == 1 {
            return x.clone();
        }
        let mut y = Array3::zeros((t, f / p, c));
        for k in 0..f / p {
            let group = x.slice(s![.., k * p..(k + 1) * p, ..]);
            y.slice_mut(s![.., k, ..])
                .assign(&(group.sum_axis(Axis(1)) / p as f64));
        }
        y
    }

    pub fn backward(&self, dy: &Array3<f64>, in_bins: usize) -> Array3<f64> {
        let p = self.factor;
        if p == 1 {
            return dy.clone();
        }
        let (t, fo, c) = dy.dim();
        let mut dx = Array3::zeros((t, in_bins, c));
        for k in 0..fo {
            let g = dy.slice(s![.., k, ..]).mapv(|v| v / p as f64);
            for j in 0..p {
                dx.slice_mut(s![.., k * p + j, ..]).assign(&g);
            }
        }
        dx
    }
}

/// Conv, ReLU, then frequency pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub pool: FreqPool,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    activated: Array3<f64>,
}

impl ConvBlock {
    pub fn new(in_ch: usize, out_ch: usize, pool: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(in_ch, out_ch, rng),
            pool: FreqPool { factor: pool },
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (mut y, cols) = self.conv.forward(x);
        y.mapv_inplace(|v| v.max(0.0));
        let out = self.pool.forward(&y);
        (out, ConvCache { cols, activated: y })
    }

    pub fn backward(
        &mut self,
        cache: &ConvCache,
        dy: &Array3<f64>,
        input_grad: bool,
    ) -> Option<Array3<f64>> {
        let mut d = self.pool.backward(dy, cache.activated.dim().1);
        ndarray::Zip::from(&mut d)
            .and(&cache.activated)
            .for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
        self.conv.backward(&cache.cols, &d, input_grad)
    }
}

impl Module for ConvBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&mut |n, p| f(&scoped("conv", n), p));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&mut |n, p| f(&scoped("conv", n), p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
    }

    fn naive_conv(c: &Conv2d, x: &Array3<f64>) -> Array3<f64> {
        let (t, f, ci) = x.dim();
        let mut y = Array3::zeros((t, f, c.out_ch));
        for tt in 0..t as i64 {
            for ff in 0..f as i64 {
                for o in 0..c.out_ch {
                    let mut acc = c.bias.value[[0, o]];
                    for dt in -1..=1i64 {
                        for df in -1..=1i64 {
                            let (a, b) = (tt + dt, ff + df);
                            if a < 0 || b < 0 || a >= t as i64 || b >= f as i64 {
                                continue;
                            }
                            for k in 0..ci {
                                let row = (((dt + 1) * 3 + df + 1) as usize) * ci + k;
                                acc += c.weight.value[[row, o]] * x[[a as usize, b as usize, k]];
                            }
                        }
                    }
                    y[[tt as usize, ff as usize, o]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Conv2d::new(3, 4, &mut rng);
        let x = randn((5, 6, 3), &mut rng);
        let (y, _) = c.forward(&x);
        let d = (&y - &naive_conv(&c, &x))
            .mapv(f64::abs)
            .fold(0.0f64, |m, v| m.max(*v));
        assert!(d < 1e-12);
    }

    #[test]
    fn block_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = ConvBlock::new(2, 3, 2, &mut rng);
        let x = randn((4, 6, 2), &mut rng);
        let probe = randn((4, 3, 3), &mut rng);
        let loss = |m: &ConvBlock, x: &Array3<f64>| (&m.forward(x).0 * &probe).sum();
        let (_, cache) = b.forward(&x);
        let dx = b.backward(&cache, &probe, true).unwrap();
        let worst = check_params(&mut b, &|m| loss(m, &x), 1e-6);
        assert!(worst < 1e-6, "param grad error {worst}");
        for idx in [(0, 0, 0), (1, 3, 1), (3, 5, 0), (2, 2, 1)] {
            let mut up = x.clone();
            up[idx] += 1e-6;
            let mut down = x.clone();
            down[idx] -= 1e-6;
            let num = (loss(&b, &up) - loss(&b, &down)) / 2e-6;
            assert!(
                (num - dx[idx]).abs() < 1e-6,
                "{idx:?}: {num} vs {}",
                dx[idx]
            );
        }
    }

    #[test]
    fn pool_averages_groups() {
        let x = Array3::from_shape_fn((1, 4, 1), |(_, f, _)| f as f64);
        let y = FreqPool { factor: 2 }.forward(&x);
        assert_eq!(y.into_raw_vec_and_offset().0, vec![0.5, 2.5]);
    }
}

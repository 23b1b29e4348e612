use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

use super::{scoped, sigmoid, Module, Param};

/// Single-direction GRU with gates ordered `[r, z, n]`:
///
/// ```text
/// r = σ(x Wxr + bxr + h Whr + bhr)
/// z = σ(x Wxz + bxz + h Whz + bhz)
/// n = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden: usize,
    pub wx: Param,
    pub bx: Param,
    pub wh: Param,
    pub bh: Param,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Array2<f64>,
    /// `(T + 1, H)`, row 0 is the zero initial state.
    h: Array2<f64>,
    /// `(T, 3H)` gate activations r, z, n.
    gates: Array2<f64>,
    /// `(T, H)` recurrent part of the candidate pre-activation, h Whn + bhn.
    ghn: Array2<f64>,
}

impl Gru {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        Self {
            input_dim,
            hidden,
            wx: Param::uniform(input_dim, 3 * hidden, k, rng),
            bx: Param::uniform(1, 3 * hidden, k, rng),
            wh: Param::uniform(hidden, 3 * hidden, k, rng),
            bh: Param::uniform(1, 3 * hidden, k, rng),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, GruCache) {
        let t_len = x.nrows();
        let h_dim = self.hidden;
        let mut gx = x.dot(&self.wx.value);
        gx += &self.bx.value;
        let wh = self.wh.value.as_standard_layout();
        let wh = wh.as_slice().expect("standard layout");
        let bh = self.bh.value.as_slice().expect("bias row");
        let mut h = Array2::zeros((t_len + 1, h_dim));
        let mut gates = Array2::zeros((t_len, 3 * h_dim));
        let mut ghn = Array2::zeros((t_len, h_dim));
        let mut gh = vec![0.0; 3 * h_dim];
        for t in 0..t_len {
            gh.copy_from_slice(bh);
            {
                let hp = h.row(t);
                for (i, &hv) in hp.iter().enumerate() {
                    if hv != 0.0 {
                        for (g, w) in gh.iter_mut().zip(&wh[i * 3 * h_dim..(i + 1) * 3 * h_dim]) {
                            *g += hv * w;
                        }
                    }
                }
            }
            let gxt = gx.row(t);
            for j in 0..h_dim {
                let r = sigmoid(gxt[j] + gh[j]);
                let z = sigmoid(gxt[h_dim + j] + gh[h_dim + j]);
                let n = (gxt[2 * h_dim + j] + r * gh[2 * h_dim + j]).tanh();
                let hp = h[[t, j]];
                h[[t + 1, j]] = (1.0 - z) * n + z * hp;
                gates[[t, j]] = r;
                gates[[t, h_dim + j]] = z;
                gates[[t, 2 * h_dim + j]] = n;
                ghn[[t, j]] = gh[2 * h_dim + j];
            }
        }
        let out = h.slice(s![1.., ..]).to_owned();
        (
            out,
            GruCache {
                x: x.clone(),
                h,
                gates,
                ghn,
            },
        )
    }

    /// Back-propagation through time. Returns the input gradient.
    pub fn backward(&mut self, cache: &GruCache, dout: &Array2<f64>) -> Array2<f64> {
        let t_len = dout.nrows();
        let h_dim = self.hidden;
        let wh = self.wh.value.as_standard_layout().into_owned();
        let whs = wh.as_slice().expect("standard layout");
        let mut dgx = Array2::zeros((t_len, 3 * h_dim));
        let mut dgh = Array2::zeros((t_len, 3 * h_dim));
        let mut dh_next = vec![0.0; h_dim];
        let mut dh = vec![0.0; h_dim];
        for t in (0..t_len).rev() {
            for j in 0..h_dim {
                dh[j] = dout[[t, j]] + dh_next[j];
            }
            let mut dgxt = dgx.row_mut(t);
            let mut dght = dgh.row_mut(t);
            for j in 0..h_dim {
                let r = cache.gates[[t, j]];
                let z = cache.gates[[t, h_dim + j]];
                let n = cache.gates[[t, 2 * h_dim + j]];
                let hp = cache.h[[t, j]];
                let dn = dh[j] * (1.0 - z) * (1.0 - n * n);
                let dz = dh[j] * (hp - n) * z * (1.0 - z);
                let dr = dn * cache.ghn[[t, j]] * r * (1.0 - r);
                dgxt[j] = dr;
                dgxt[h_dim + j] = dz;
                dgxt[2 * h_dim + j] = dn;
                dght[j] = dr;
                dght[h_dim + j] = dz;
                dght[2 * h_dim + j] = dn * r;
                dh_next[j] = dh[j] * z;
            }
            for (i, dn) in dh_next.iter_mut().enumerate() {
                let row = &whs[i * 3 * h_dim..(i + 1) * 3 * h_dim];
                *dn += row.iter().zip(dght.iter()).map(|(w, g)| w * g).sum::<f64>();
            }
        }
        let h_prev = cache.h.slice(s![..t_len, ..]);
        ndarray::linalg::general_mat_mul(1.0, &h_prev.t(), &dgh, 1.0, &mut self.wh.grad);
        self.bh.grad += &dgh.sum_axis(Axis(0)).insert_axis(Axis(0));
        ndarray::linalg::general_mat_mul(1.0, &cache.x.t(), &dgx, 1.0, &mut self.wx.grad);
        self.bx.grad += &dgx.sum_axis(Axis(0)).insert_axis(Axis(0));
        dgx.dot(&self.wx.value.t())
    }
}

impl Module for Gru {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("wx", &self.wx);
        f("bx", &self.bx);
        f("wh", &self.wh);
        f("bh", &self.bh);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("wx", &mut self.wx);
        f("bx", &mut self.bx);
        f("wh", &mut self.wh);
        f("bh", &mut self.bh);
    }
}

fn reversed(x: &Array2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

/// Forward and time-reversed GRUs with outputs concatenated per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
}

impl BiGru {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fwd = Gru::new(input_dim, hidden, rng);
        let bwd = Gru::new(input_dim, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    /// `(T, D) -> (T, 2H)`.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, BiGruCache) {
        let (hf, cf) = self.fwd.forward(x);
        let (hb, cb) = self.bwd.forward(&reversed(x));
        let out = concatenate![Axis(1), hf, reversed(&hb)];
        (out, BiGruCache { fwd: cf, bwd: cb })
    }

    pub fn backward(&mut self, cache: &BiGruCache, dout: &Array2<f64>) -> Array2<f64> {
        let h = self.fwd.hidden;
        let dxf = self
            .fwd
            .backward(&cache.fwd, &dout.slice(s![.., ..h]).to_owned());
        let dxb = self
            .bwd
            .backward(&cache.bwd, &reversed(&dout.slice(s![.., h..]).to_owned()));
        dxf + reversed(&dxb)
    }
}

impl Module for BiGru {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.fwd.visit(&mut |n, p| f(&scoped("fwd", n), p));
        self.bwd.visit(&mut |n, p| f(&scoped("bwd", n), p));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fwd.visit_mut(&mut |n, p| f(&scoped("fwd", n), p));
        self.bwd.visit_mut(&mut |n, p| f(&scoped("bwd", n), p));
    }
}

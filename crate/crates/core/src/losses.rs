//! Detection, distillation, pseudo-label and domain losses.
//!
//! Every function returns the loss value together with its gradient with
//! respect to the inputs that receive gradient during training. Frame losses
//! are sums over frames.

use ndarray::{Array2, ArrayView2};

use crate::dataset::Domain;
use crate::error::{Error, Result};

/// Probabilities are clipped to `[CLIP_EPS, 1 - CLIP_EPS]` before any log.
pub const CLIP_EPS: f64 = 1e-7;

/// Weight of the domain term in the adversarial objective.
pub const DEFAULT_LAMBDA_D: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn clip(p: f64) -> (f64, bool) {
    let c = p.clamp(CLIP_EPS, 1.0 - CLIP_EPS);
    (c, c == p)
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Soft-target cross entropy `-q ln p - (1-q) ln(1-p)` and its derivative in
/// `p` (zero where `p` was clipped).
fn bce_term(p: f64, q: f64) -> (f64, f64) {
    let (c, inside) = clip(p);
    let v = -q * c.ln() - (1.0 - q) * (1.0 - c).ln();
    let g = if inside {
        -q / c + (1.0 - q) / (1.0 - c)
    } else {
        0.0
    };
    (v, g)
}

/// Strong-label loss `L_s`, summed over frames.
pub fn frame_bce(probs: &[f64], labels: &[f64]) -> Result<LossGrad> {
    check_len(probs.len(), labels.len(), "frame_bce")?;
    let mut value = 0.0;
    let grad = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let (v, g) = bce_term(p, y);
            value += v;
            g
        })
        .collect();
    Ok(LossGrad { value, grad })
}

/// Weak-label loss `L_w` on a clip probability. Returns (value, dL/dP).
pub fn clip_bce(clip_prob: f64, label: f64) -> (f64, f64) {
    bce_term(clip_prob, label)
}

/// Pseudo-label loss `L_re_s`: soft-target cross entropy of the f_student
/// probabilities against w_student probabilities, summed over frames. The
/// gradient is with respect to `f_probs` only.
pub fn pseudo_loss(f_probs: &[f64], w_probs: &[f64]) -> Result<LossGrad> {
    check_len(f_probs.len(), w_probs.len(), "pseudo_loss")?;
    frame_bce(f_probs, w_probs)
}

/// Binary entropy summed over frames; the minimum of [`pseudo_loss`] for
/// fixed targets.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().map(|&q| bce_term(q, q).0).sum()
}

#[derive(Debug, Clone)]
pub struct KdGrad {
    pub value: f64,
    pub d_student_features: Array2<f64>,
    pub d_student_projection: Array2<f64>,
    pub d_teacher_features: Array2<f64>,
    pub d_teacher_projection: Array2<f64>,
}

/// Distillation loss `||F_s W_s - F_w W_w||` over the whole `T x kd_dim`
/// difference (Frobenius norm).
pub fn kd_loss(
    teacher_features: ArrayView2<f64>,
    teacher_projection: ArrayView2<f64>,
    student_features: ArrayView2<f64>,
    student_projection: ArrayView2<f64>,
) -> Result<KdGrad> {
    if teacher_features.nrows() != student_features.nrows() {
        return Err(Error::Shape(format!(
            "kd_loss: teacher has {} frames, student {}",
            teacher_features.nrows(),
            student_features.nrows()
        )));
    }
    if teacher_features.ncols() != teacher_projection.nrows()
        || student_features.ncols() != student_projection.nrows()
        || teacher_projection.ncols() != student_projection.ncols()
    {
        return Err(Error::Shape(
            "kd_loss: projection shapes do not line up".into(),
        ));
    }
    let diff =
        teacher_features.dot(&teacher_projection) - student_features.dot(&student_projection);
    let value = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d_diff = if value > 0.0 {
        diff / value
    } else {
        diff * 0.0
    };
    Ok(KdGrad {
        value,
        d_student_features: -d_diff.dot(&student_projection.t()),
        d_student_projection: -student_features.t().dot(&d_diff),
        d_teacher_features: d_diff.dot(&teacher_projection.t()),
        d_teacher_projection: teacher_features.t().dot(&d_diff),
    })
}

/// Weak student objective with distillation: `L_w + L_kd`.
pub fn w_kd_loss(l_w: f64, l_kd: f64) -> f64 {
    l_w + l_kd
}

/// Domain loss `||D(z) - d||^2` against the one-hot domain label. Returns
/// (value, dL/dD(z)).
pub fn domain_loss(prediction: [f64; 2], domain: Domain) -> (f64, [f64; 2]) {
    let d = domain.one_hot();
    let r = [prediction[0] - d[0], prediction[1] - d[1]];
    (r[0] * r[0] + r[1] * r[1], [2.0 * r[0], 2.0 * r[1]])
}

/// Adversarial objective `L_tsd - lambda_d * L_d`.
pub fn adversarial_objective(l_tsd: f64, l_d: f64, lambda_d: f64) -> f64 {
    l_tsd - lambda_d * l_d
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    #[test]
    fn frame_bce_examples() {
        let l = frame_bce(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((l.value - 2.0 * 2f64.ln()).abs() < 1e-12);
        let perfect = frame_bce(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(perfect.value <= 3e-6);
        assert!(frame_bce(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn clip_bce_examples() {
        assert!((clip_bce(0.99, 1.0).0 - 0.01005033585350145).abs() < 1e-12);
        assert!((clip_bce(0.5, 1.0).0 - 2f64.ln()).abs() < 1e-12);
        assert!((clip_bce(0.5, 0.0).0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kd_examples() {
        let fs = array![[1.0, 1.0], [1.0, 1.0]];
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let zero = Array2::<f64>::zeros((2, 2));
        assert!(
            (kd_loss(fs.view(), eye.view(), zero.view(), eye.view())
                .unwrap()
                .value
                - 2.0)
                .abs()
                < 1e-12
        );
        assert_eq!(
            kd_loss(fs.view(), eye.view(), fs.view(), eye.view())
                .unwrap()
                .value,
            0.0
        );
        let scaled = fs.mapv(|v| -3.0 * v);
        assert!(
            (kd_loss(scaled.view(), eye.view(), zero.view(), eye.view())
                .unwrap()
                .value
                - 6.0)
                .abs()
                < 1e-12
        );
        let short = Array2::<f64>::zeros((3, 2));
        assert!(kd_loss(fs.view(), eye.view(), short.view(), eye.view()).is_err());
    }

    #[test]
    fn domain_and_objective_examples() {
        assert_eq!(domain_loss([1.0, 0.0], Domain::Source).0, 0.0);
        assert_eq!(domain_loss([0.0, 1.0], Domain::Source).0, 2.0);
        for d in [Domain::Source, Domain::Target] {
            assert!((domain_loss([0.5, 0.5], d).0 - 0.5).abs() < 1e-15);
        }
        assert!((adversarial_objective(1.0, 0.5, DEFAULT_LAMBDA_D) - 0.9).abs() < 1e-15);
        assert_eq!(adversarial_objective(1.3, 7.0, 0.0), 1.3);
        assert!((w_kd_loss(0.3, 0.2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pseudo_loss_reduces_to_bce_on_binary_targets() {
        let f = [0.2, 0.7, 0.9];
        let w = [0.0, 1.0, 1.0];
        assert_eq!(
            pseudo_loss(&f, &w).unwrap().value,
            frame_bce(&f, &w).unwrap().value
        );
        let half = [0.5; 4];
        assert!((pseudo_loss(&half, &half).unwrap().value - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn frame_bce_gradient_matches_fd(
            pairs in prop::collection::vec((0.02f64..0.98, 0.0f64..=1.0), 1..=8)
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let y: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let g = frame_bce(&p, &y).unwrap().grad;
            for i in 0..p.len() {
                let n = fd(|x| frame_bce(x, &y).unwrap().value, &p, i);
                prop_assert!((g[i] - n).abs() <= 1e-4 * n.abs().max(1.0));
            }
        }

        #[test]
        fn pseudo_loss_bounded_below_by_entropy(
            pairs in prop::collection::vec((0.01f64..0.99, 0.01f64..0.99), 1..=8)
        ) {
            let f: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let w: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            prop_assert!(pseudo_loss(&f, &w).unwrap().value >= entropy(&w) - 1e-12);
            let at_min = pseudo_loss(&w, &w).unwrap();
            prop_assert!((at_min.value - entropy(&w)).abs() < 1e-12);
            prop_assert!(at_min.grad.iter().all(|g| g.abs() < 1e-9));
        }

        #[test]
        fn larger_domain_loss_lowers_objective(l_tsd in -5.0f64..5.0, a in 0.0f64..4.0, b in 0.0f64..4.0, lam in 0.01f64..2.0) {
            prop_assume!(a < b);
            prop_assert!(adversarial_objective(l_tsd, b, lam) < adversarial_objective(l_tsd, a, lam));
        }
    }
}

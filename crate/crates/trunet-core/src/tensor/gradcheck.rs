//! Central finite-difference verification of backward rules.
//!
//! Runs in `f64` regardless of the training precision: the engine is generic
//! over the element type, so the checked code paths are the same ones the
//! `f32` models execute.

use super::{Element, Tensor};

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Compares backward() gradients of the scalar function `f` against central
/// differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every
/// element of every input. Relative error uses `max(|a|, |b|, 1e-8)` as the
/// denominator. `f` must be deterministic.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    // Analytic gradients on fresh leaves.
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::from_vec(t.shape(), t.to_vec()).with_grad())
        .collect();
    let loss = f(&leaves);
    assert_eq!(loss.numel(), 1, "gradcheck expects a scalar-valued function");
    loss.backward().expect("backward failed during gradcheck");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> f64 { super::no_grad(|| f(xs)).item() };

    let mut max_rel_err: f64 = 0.0;
    for (i, base) in inputs.iter().enumerate() {
        let values = base.to_vec();
        for j in 0..values.len() {
            let mut plus = values.clone();
            let mut minus = values.clone();
            plus[j] += eps;
            minus[j] -= eps;
            let rebuilt = |v: Vec<f64>| -> Vec<Tensor<f64>> {
                inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        if k == i {
                            Tensor::from_vec(t.shape(), v.clone())
                        } else {
                            Tensor::from_vec(t.shape(), t.to_vec())
                        }
                    })
                    .collect()
            };
            let fp = eval(&rebuilt(plus));
            let fm = eval(&rebuilt(minus));
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel_err {
                max_rel_err = rel;
            }
        }
    }
    GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= tol,
    }
}

/// Weighted-sum probe turning any tensor into a scalar loss; random weights
/// expose transposition mistakes a plain sum would cancel out.
pub fn probe_loss<T: Element>(t: &Tensor<T>, seed: u64) -> Tensor<T> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let probe = Tensor::<T>::rand_uniform(t.shape(), T::from_f64(-1.0), T::from_f64(1.0), &mut rng);
    t.mul(&probe).expect("probe shape").sum_all()
}

//! Polynomial learning-rate decay.

/// `base_lr * (1 - iter/max_iters)^power`; strictly non-increasing in
/// `iter`, exactly `base_lr` at 0 and 0 at `max_iters`. Iterations past the
/// horizon clamp to 0 with a warning.
pub fn poly_lr(base_lr: f64, iter: usize, max_iters: usize, power: f64) -> f64 {
    assert!(max_iters > 0, "poly_lr needs a positive horizon");
    if iter > max_iters {
        log::warn!("poly_lr: iteration {iter} past the {max_iters} horizon; clamping to 0");
        return 0.0;
    }
    base_lr * (1.0 - iter as f64 / max_iters as f64).powf(power)
}

//! Group and layer normalization.

use super::{Element, Tensor};
use crate::error::{config_err, Result};
use crate::exec;

struct LaneStats<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Normalizes contiguous lanes of length `lane` to zero mean / unit variance
/// (population variance, `eps`-floored), then applies `y = gamma * xhat + beta`
/// where the affine index of position `j` within a lane is `aff(lane_idx, j)`.
fn normalize_lanes<T: Element>(
    x: &[T],
    lane: usize,
    eps: T,
    gamma: &[T],
    beta: &[T],
    aff: impl Fn(usize, usize) -> usize + Sync,
) -> (Vec<T>, LaneStats<T>) {
    let lanes = x.len() / lane;
    let inv_m = T::one() / T::from_f64(lane as f64);
    let stats: Vec<(T, T)> = exec::map_range(lanes, |li| {
        let src = &x[li * lane..][..lane];
        let mean = exec::chunked_sum(src) * inv_m;
        let mut var = T::zero();
        for &v in src {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_m;
        (mean, T::one() / (var + eps).sqrt())
    });

    let mut xhat = vec![T::zero(); x.len()];
    exec::for_each_chunk_mut(&mut xhat, lane, |li, chunk| {
        let (mean, inv_std) = stats[li];
        for (o, &v) in chunk.iter_mut().zip(&x[li * lane..][..lane]) {
            *o = (v - mean) * inv_std;
        }
    });

    let mut out = vec![T::zero(); x.len()];
    exec::for_each_chunk_mut(&mut out, lane, |li, chunk| {
        let xh = &xhat[li * lane..][..lane];
        for (j, (o, &h)) in chunk.iter_mut().zip(xh).enumerate() {
            let a = aff(li, j);
            *o = gamma[a] * h + beta[a];
        }
    });

    let inv_std = stats.into_iter().map(|(_, s)| s).collect();
    (out, LaneStats { xhat, inv_std })
}

/// Shared backward for lane normalization.
/// Returns (grad_x, grad_gamma, grad_beta).
fn normalize_lanes_backward<T: Element>(
    gout: &[T],
    stats: &LaneStats<T>,
    lane: usize,
    gamma: &[T],
    aff: impl Fn(usize, usize) -> usize + Sync,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let lanes = gout.len() / lane;
    let inv_m = T::one() / T::from_f64(lane as f64);
    let mut gx = vec![T::zero(); gout.len()];
    exec::for_each_chunk_mut(&mut gx, lane, |li, chunk| {
        let g = &gout[li * lane..][..lane];
        let xh = &stats.xhat[li * lane..][..lane];
        let inv_std = stats.inv_std[li];
        let mut sum_wg = T::zero();
        let mut sum_wgx = T::zero();
        for j in 0..lane {
            let wg = gamma[aff(li, j)] * g[j];
            sum_wg += wg;
            sum_wgx += wg * xh[j];
        }
        for j in 0..lane {
            let wg = gamma[aff(li, j)] * g[j];
            chunk[j] = inv_std * (wg - inv_m * sum_wg - xh[j] * inv_m * sum_wgx);
        }
    });
    let mut dgamma = vec![T::zero(); gamma.len()];
    let mut dbeta = vec![T::zero(); gamma.len()];
    for li in 0..lanes {
        let g = &gout[li * lane..][..lane];
        let xh = &stats.xhat[li * lane..][..lane];
        for j in 0..lane {
            let a = aff(li, j);
            dgamma[a] += g[j] * xh[j];
            dbeta[a] += g[j];
        }
    }
    (gx, dgamma, dbeta)
}

impl<T: Element> Tensor<T> {
    /// Group normalization over `[N, C, ...]`: per sample and group of
    /// channels, zero-mean/unit-variance then per-channel affine.
    pub fn group_norm(
        &self,
        groups: usize,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(config_err!("group_norm expects [N, C, ...], got {:?}", s));
        }
        let c = s[1];
        if groups == 0 || c % groups != 0 {
            return Err(config_err!(
                "group_norm: {} channels not divisible by {} groups",
                c,
                groups
            ));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(config_err!(
                "group_norm affine shapes {:?}/{:?} do not match {} channels",
                gamma.shape(),
                beta.shape(),
                c
            ));
        }
        let spatial: usize = s[2..].iter().product();
        let cpg = c / groups;
        let lane = cpg * spatial;
        let aff = move |li: usize, j: usize| {
            let g = li % groups;
            g * cpg + j / spatial
        };
        let (data, stats) = {
            let x = self.data();
            let gm = gamma.data();
            let bt = beta.data();
            normalize_lanes(&x, lane, eps, &gm, &bt, aff)
        };
        let (px, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::from_op(
            s.to_vec(),
            data,
            &[self, gamma, beta],
            move |gout| {
                let gm = pg.data();
                let (gx, dg, db) = normalize_lanes_backward(gout, &stats, lane, &gm, aff);
                drop(gm);
                if px.requires_grad() {
                    px.accumulate_grad(&gx);
                }
                if pg.requires_grad() {
                    pg.accumulate_grad(&dg);
                }
                if pb.requires_grad() {
                    pb.accumulate_grad(&db);
                }
            },
        ))
    }

    /// Layer normalization over the last axis of `[..., E]`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let s = self.shape();
        let e = *s
            .last()
            .ok_or_else(|| config_err!("layer_norm on rank-0 tensor"))?;
        if gamma.shape() != [e] || beta.shape() != [e] {
            return Err(config_err!(
                "layer_norm affine shapes {:?}/{:?} do not match last axis {}",
                gamma.shape(),
                beta.shape(),
                e
            ));
        }
        let aff = move |_li: usize, j: usize| j;
        let (data, stats) = {
            let x = self.data();
            let gm = gamma.data();
            let bt = beta.data();
            normalize_lanes(&x, e, eps, &gm, &bt, aff)
        };
        let (px, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::from_op(
            s.to_vec(),
            data,
            &[self, gamma, beta],
            move |gout| {
                let gm = pg.data();
                let (gx, dg, db) = normalize_lanes_backward(gout, &stats, e, &gm, aff);
                drop(gm);
                if px.requires_grad() {
                    px.accumulate_grad(&gx);
                }
                if pg.requires_grad() {
                    pg.accumulate_grad(&dg);
                }
                if pb.requires_grad() {
                    pb.accumulate_grad(&db);
                }
            },
        ))
    }
}

//! Batched matrix multiplication.

use super::{Element, Tensor};
use crate::error::{usage_err, Result};
use crate::exec;

/// out[M,P] = a[M,K] . b[K,P], accumulated into `out`.
fn mm_acc<T: Element>(a: &[T], b: &[T], m: usize, k: usize, p: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * p..(i + 1) * p];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[K,P] += a[M,K]^T . g[M,P]
fn mm_at_g<T: Element>(a: &[T], g: &[T], m: usize, k: usize, p: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * p..(i + 1) * p];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * p..(kk + 1) * p];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// out[M,K] += g[M,P] . b[K,P]^T
fn mm_g_bt<T: Element>(g: &[T], b: &[T], m: usize, k: usize, p: usize, out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * p..(i + 1) * p];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * p..(kk + 1) * p];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            *o += acc;
        }
    }
}

impl<T: Element> Tensor<T> {
    /// `[..., M, K] . [..., K, P] -> [..., M, P]`. Leading batch extents must
    /// be equal; alternatively either operand may be rank 2 and is then
    /// shared across the other's batch (linear-layer weights).
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(usage_err!(
                "matmul needs rank >= 2 operands, got {:?} and {:?}",
                sa,
                sb
            ));
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if ka != kb {
            return Err(usage_err!(
                "matmul inner dimension mismatch: {:?} . {:?}",
                sa,
                sb
            ));
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let (batch, a_batched, b_batched) = if batch_a == batch_b {
            (batch_a.to_vec(), true, true)
        } else if batch_b.is_empty() {
            (batch_a.to_vec(), true, false)
        } else if batch_a.is_empty() {
            (batch_b.to_vec(), false, true)
        } else {
            return Err(usage_err!(
                "matmul batch extents differ: {:?} vs {:?}",
                batch_a,
                batch_b
            ));
        };
        let nb: usize = batch.iter().product();
        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(p);

        let k = ka;
        let mut data = vec![T::zero(); nb * m * p];
        {
            let ag = self.data();
            let bg = rhs.data();
            let (av, bv): (&[T], &[T]) = (&ag, &bg);
            exec::for_each_chunk_mut(&mut data, m * p, |bi, chunk| {
                let a_off = if a_batched { bi * m * k } else { 0 };
                let b_off = if b_batched { bi * k * p } else { 0 };
                mm_acc(
                    &av[a_off..a_off + m * k],
                    &bv[b_off..b_off + k * p],
                    m,
                    k,
                    p,
                    chunk,
                );
            });
        }

        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(out_shape, data, &[self, rhs], move |gout| {
            if pa.requires_grad() {
                let bg = pb.data();
                let bv: &[T] = &bg;
                let mut ga = vec![T::zero(); pa.numel()];
                exec::for_each_chunk_mut(&mut ga, m * k, |bi, chunk| {
                    if a_batched {
                        let b_off = if b_batched { bi * k * p } else { 0 };
                        mm_g_bt(
                            &gout[bi * m * p..(bi + 1) * m * p],
                            &bv[b_off..b_off + k * p],
                            m,
                            k,
                            p,
                            chunk,
                        );
                    } else {
                        // a is shared: sum over batches (b must be batched).
                        for b2 in 0..nb {
                            mm_g_bt(
                                &gout[b2 * m * p..(b2 + 1) * m * p],
                                &bv[b2 * k * p..(b2 + 1) * k * p],
                                m,
                                k,
                                p,
                                chunk,
                            );
                        }
                    }
                });
                drop(bg);
                pa.accumulate_grad(&ga);
            }
            if pb.requires_grad() {
                let ag = pa.data();
                let av: &[T] = &ag;
                let mut gb = vec![T::zero(); pb.numel()];
                exec::for_each_chunk_mut(&mut gb, k * p, |bi, chunk| {
                    if b_batched {
                        let a_off = if a_batched { bi * m * k } else { 0 };
                        mm_at_g(
                            &av[a_off..a_off + m * k],
                            &gout[bi * m * p..(bi + 1) * m * p],
                            m,
                            k,
                            p,
                            chunk,
                        );
                    } else {
                        for b2 in 0..nb {
                            mm_at_g(
                                &av[b2 * m * k..(b2 + 1) * m * k],
                                &gout[b2 * m * p..(b2 + 1) * m * p],
                                m,
                                k,
                                p,
                                chunk,
                            );
                        }
                    }
                });
                drop(ag);
                pb.accumulate_grad(&gb);
            }
        }))
    }
}

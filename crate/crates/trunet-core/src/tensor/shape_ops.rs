//! Reshape, axis permutation, and concatenation.

use super::{Element, Tensor};
use crate::error::{usage_err, Result};

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&a| shape[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    loop {
        let mut off = 0;
        for d in 0..rank {
            off += idx[d] * in_strides[perm[d]];
        }
        out.push(data[off]);
        // Odometer increment over the output index space.
        let mut d = rank;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Returns the same elements under a new shape (data is copied; the
    /// gradient is reshaped back on the return path).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(usage_err!(
                "cannot reshape {:?} ({} elements) to {:?} ({})",
                self.shape(),
                self.numel(),
                shape,
                numel
            ));
        }
        let p = self.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            &[self],
            move |gout| p.accumulate_grad(gout),
        ))
    }

    /// Reorders axes; `perm` must be a permutation of `0..rank`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(usage_err!(
                "invalid axis permutation {:?} for rank {}",
                perm,
                rank
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&a| self.shape()[a]).collect();
        let data = permute_data(&self.data(), self.shape(), perm);
        let p = self.clone();
        let perm_owned = perm.to_vec();
        let out_shape_bw = out_shape.clone();
        Ok(Tensor::from_op(out_shape, data, &[self], move |gout| {
            let mut inv = vec![0usize; perm_owned.len()];
            for (i, &a) in perm_owned.iter().enumerate() {
                inv[a] = i;
            }
            let d = permute_data(gout, &out_shape_bw, &inv);
            p.accumulate_grad(&d);
        }))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    /// The backward pass splits the gradient exactly.
    pub fn concat(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = inputs
            .first()
            .ok_or_else(|| usage_err!("concat of zero tensors"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(usage_err!("concat axis {} out of range for rank {}", axis, rank));
        }
        let mut cat_extent = 0;
        for t in inputs {
            if t.shape().len() != rank {
                return Err(usage_err!("concat rank mismatch"));
            }
            for d in 0..rank {
                if d != axis && t.shape()[d] != first.shape()[d] {
                    return Err(usage_err!(
                        "concat off-axis extent mismatch at axis {}: {:?} vs {:?}",
                        d,
                        t.shape(),
                        first.shape()
                    ));
                }
            }
            cat_extent += t.shape()[axis];
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = cat_extent;

        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let block_lens: Vec<usize> = inputs.iter().map(|t| t.shape()[axis] * inner).collect();
        let out_block: usize = cat_extent * inner;

        let mut data = vec![T::zero(); outer * out_block];
        for o in 0..outer {
            let mut dst = o * out_block;
            for (t, &bl) in inputs.iter().zip(&block_lens) {
                let src = &t.data()[o * bl..(o + 1) * bl];
                data[dst..dst + bl].copy_from_slice(src);
                dst += bl;
            }
        }

        let parents: Vec<Tensor<T>> = inputs.iter().map(|t| (*t).clone()).collect();
        let bl = block_lens.clone();
        Ok(Tensor::from_op(out_shape, data, inputs, move |gout| {
            for (k, t) in parents.iter().enumerate() {
                if !t.requires_grad() && !t.has_node() {
                    continue;
                }
                let before: usize = bl[..k].iter().sum();
                let mut d = Vec::with_capacity(outer * bl[k]);
                for o in 0..outer {
                    let start = o * out_block + before;
                    d.extend_from_slice(&gout[start..start + bl[k]]);
                }
                t.accumulate_grad(&d);
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f32>::from_vec(&[2, 3, 4], (0..24).map(|i| i as f32).collect());
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        let z = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(z.to_vec(), x.to_vec());
    }

    #[test]
    fn permute_gradient_is_inverse_permutation() {
        let x = Tensor::<f32>::from_vec(&[2, 3], (0..6).map(|i| i as f32).collect()).with_grad();
        let y = x.permute(&[1, 0]).unwrap();
        let w = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        y.mul(&w).unwrap().sum_all().backward().unwrap();
        // grad wrt x is w transposed back.
        assert_eq!(x.grad().unwrap(), vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn concat_splits_gradients_exactly() {
        let a = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1.0; 4]).with_grad();
        let b = Tensor::<f32>::from_vec(&[1, 3, 2], vec![2.0; 6]).with_grad();
        let y = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 2]);
        let w = Tensor::from_vec(&[1, 5, 2], (0..10).map(|i| i as f32).collect());
        y.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn concat_rejects_off_axis_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 3, 3]);
        assert!(Tensor::concat(&[&a, &b], 1).is_err());
    }
}

//! Scalar reductions.

use super::{Element, Tensor};
use crate::exec;

impl<T: Element> Tensor<T> {
    /// Sum of all elements as a `[1]` tensor. Uses fixed chunk boundaries so
    /// the result is independent of thread count.
    pub fn sum_all(&self) -> Tensor<T> {
        let total = exec::chunked_sum(&self.data());
        let p = self.clone();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![total], &[self], move |gout| {
            let g = gout[0];
            p.accumulate_grad(&vec![g; n]);
        })
    }

    /// Arithmetic mean of all elements as a `[1]` tensor.
    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().scale(T::one() / T::from_f64(n as f64))
    }

    /// `[N, C, ...] -> [C]`: per-channel sums over batch and spatial axes.
    pub fn sum_channels(&self) -> crate::error::Result<Tensor<T>> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(crate::error::usage_err!(
                "sum_channels expects [N, C, ...], got {:?}",
                s
            ));
        }
        let (n, c) = (s[0], s[1]);
        let spatial: usize = s[2..].iter().product();
        let data = {
            let guard = self.data();
            let x: &[T] = &guard;
            exec::map_range(c, |ch| {
                let mut acc = T::zero();
                for b in 0..n {
                    let start = (b * c + ch) * spatial;
                    acc += exec::chunked_sum(&x[start..start + spatial]);
                }
                acc
            })
        };
        let p = self.clone();
        Ok(Tensor::from_op(vec![c], data, &[self], move |gout| {
            let mut d = vec![T::zero(); p.numel()];
            for b in 0..n {
                for ch in 0..c {
                    let g = gout[ch];
                    let start = (b * c + ch) * spatial;
                    for v in &mut d[start..start + spatial] {
                        *v = g;
                    }
                }
            }
            p.accumulate_grad(&d);
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_backward_spreads_evenly() {
        let x = Tensor::<f32>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).with_grad();
        let m = x.mean_all();
        assert_eq!(m.item(), 2.5);
        m.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }
}

//! Softmax over an arbitrary axis.

use super::{Element, Tensor};
use crate::error::{usage_err, Result};
use crate::exec;

impl<T: Element> Tensor<T> {
    /// Max-subtracted softmax along `axis`; every lane sums to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(usage_err!(
                "softmax axis {} out of range for shape {:?}",
                axis,
                shape
            ));
        }
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();

        let mut data = self.to_vec();
        // One outer block holds `lane * inner` elements; lanes stride by `inner`.
        exec::for_each_chunk_mut(&mut data, lane * inner, |_, block| {
            for i in 0..inner {
                let mut mx = block[i];
                for l in 1..lane {
                    mx = mx.max(block[l * inner + i]);
                }
                let mut sum = T::zero();
                for l in 0..lane {
                    let e = (block[l * inner + i] - mx).exp();
                    block[l * inner + i] = e;
                    sum += e;
                }
                for l in 0..lane {
                    block[l * inner + i] /= sum;
                }
            }
        });

        let p = self.clone();
        // dx = y * (dy - sum(dy * y)) per lane; the rule needs the outputs,
        // so the closure keeps its own copy of them.
        let saved = data.clone();
        Ok(Tensor::from_op(shape, data, &[self], move |gout| {
            let mut d = vec![T::zero(); saved.len()];
            for o in 0..outer {
                let base = o * lane * inner;
                for i in 0..inner {
                    let mut dot = T::zero();
                    for l in 0..lane {
                        let k = base + l * inner + i;
                        dot += gout[k] * saved[k];
                    }
                    for l in 0..lane {
                        let k = base + l * inner + i;
                        d[k] = saved[k] * (gout[k] - dot);
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
    use approx::assert_relative_eq;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let x = Tensor::<f32>::zeros(&[2, 5]);
        let y = x.softmax(1).unwrap();
        for &v in y.data().iter() {
            assert_relative_eq!(v, 0.2, epsilon = 1e-7);
        }
    }

    #[test]
    fn matches_exp_normalize_reference() {
        // softmax(1, 2, 3) from direct evaluation of exp-normalize.
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]);
        let y = x.softmax(0).unwrap().to_vec();
        assert_relative_eq!(y[0], 0.09003057317038046, epsilon = 1e-5);
        assert_relative_eq!(y[1], 0.24472847105479764, epsilon = 1e-5);
        assert_relative_eq!(y[2], 0.6652409557748219, epsilon = 1e-5);
    }

    #[test]
    fn shift_invariance() {
        let x = Tensor::<f32>::from_vec(&[2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.5]);
        let shifted = x.add_scalar(7.5);
        let a = x.softmax(1).unwrap();
        let b = shifted.softmax(1).unwrap();
        for (&u, &v) in a.data().iter().zip(b.data().iter()) {
            assert_relative_eq!(u, v, epsilon = 1e-6);
        }
    }

    #[test]
    fn lanes_sum_to_one_on_middle_axis() {
        let x = Tensor::<f32>::from_vec(&[2, 3, 4], (0..24).map(|i| (i as f32).sin()).collect());
        let y = x.softmax(1).unwrap();
        let d = y.data();
        for o in 0..2 {
            for i in 0..4 {
                let s: f32 = (0..3).map(|l| d[o * 12 + l * 4 + i]).sum();
                assert_relative_eq!(s, 1.0, epsilon = 1e-6);
            }
        }
    }
}

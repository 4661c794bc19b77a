//! Elementwise and broadcast primitives.

use super::{same_shape, Element, Tensor};
use crate::error::{usage_err, Result};

impl<T: Element> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, rhs)?;
        let data = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, rhs],
            move |gout| {
                if pa.requires_grad() {
                    pa.accumulate_grad(gout);
                }
                if pb.requires_grad() {
                    pb.accumulate_grad(gout);
                }
            },
        ))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, rhs)?;
        let data = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, rhs],
            move |gout| {
                if pa.requires_grad() {
                    pa.accumulate_grad(gout);
                }
                if pb.requires_grad() {
                    let neg: Vec<T> = gout.iter().map(|&g| -g).collect();
                    pb.accumulate_grad(&neg);
                }
            },
        ))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, rhs)?;
        let data = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, rhs],
            move |gout| {
                if pa.requires_grad() {
                    let b = pb.data();
                    let d: Vec<T> = gout.iter().zip(b.iter()).map(|(&g, &y)| g * y).collect();
                    drop(b);
                    pa.accumulate_grad(&d);
                }
                if pb.requires_grad() {
                    let a = pa.data();
                    let d: Vec<T> = gout.iter().zip(a.iter()).map(|(&g, &x)| g * x).collect();
                    drop(a);
                    pb.accumulate_grad(&d);
                }
            },
        ))
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, rhs)?;
        let data = {
            let a = self.data();
            let b = rhs.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x / y).collect()
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, rhs],
            move |gout| {
                if pa.requires_grad() {
                    let b = pb.data();
                    let d: Vec<T> = gout.iter().zip(b.iter()).map(|(&g, &y)| g / y).collect();
                    drop(b);
                    pa.accumulate_grad(&d);
                }
                if pb.requires_grad() {
                    let a = pa.data();
                    let b = pb.data();
                    let d: Vec<T> = gout
                        .iter()
                        .zip(a.iter().zip(b.iter()))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    drop(a);
                    drop(b);
                    pb.accumulate_grad(&d);
                }
            },
        ))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x * c).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |gout| {
            let d: Vec<T> = gout.iter().map(|&g| g * c).collect();
            p.accumulate_grad(&d);
        })
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x + c).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |gout| {
            p.accumulate_grad(gout);
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |gout| {
            let x = p.data();
            let d: Vec<T> = gout
                .iter()
                .zip(x.iter())
                .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                .collect();
            drop(x);
            p.accumulate_grad(&d);
        })
    }

    /// Tanh-form GELU with its exact analytic derivative, so the backward
    /// rule is self-consistent with the forward approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| gelu_fwd(x)).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |gout| {
            let x = p.data();
            let d: Vec<T> = gout
                .iter()
                .zip(x.iter())
                .map(|(&g, &v)| g * gelu_grad(v))
                .collect();
            drop(x);
            p.accumulate_grad(&d);
        })
    }

    /// Natural logarithm. Caller is responsible for keeping inputs positive
    /// (see [`Tensor::clamp_min`]).
    pub fn ln(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| x.ln()).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |gout| {
            let x = p.data();
            let d: Vec<T> = gout.iter().zip(x.iter()).map(|(&g, &v)| g / v).collect();
            drop(x);
            p.accumulate_grad(&d);
        })
    }

    /// Elementwise `max(x, lo)`; gradient is zero where the clamp engages.
    pub fn clamp_min(&self, lo: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| x.max(lo)).collect();
        let p = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |gout| {
            let x = p.data();
            let d: Vec<T> = gout
                .iter()
                .zip(x.iter())
                .map(|(&g, &v)| if v > lo { g } else { T::zero() })
                .collect();
            drop(x);
            p.accumulate_grad(&d);
        })
    }

    /// Parametric ReLU over a `[N, C, ...]` tensor with one learnable slope
    /// per channel: `x` where `x > 0`, `alpha[c] * x` otherwise.
    /// Differentiable in both the input and `alpha`.
    pub fn prelu(&self, alpha: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() < 2 {
            return Err(usage_err!("prelu expects [N, C, ...], got {:?}", self.shape()));
        }
        let channels = self.shape()[1];
        if alpha.shape() != [channels] {
            return Err(usage_err!(
                "prelu alpha shape {:?} does not match {} channels",
                alpha.shape(),
                channels
            ));
        }
        let n = self.shape()[0];
        let inner: usize = self.shape()[2..].iter().product();
        let data = {
            let x = self.data();
            let a = alpha.data();
            let mut out = Vec::with_capacity(x.len());
            for b in 0..n {
                for c in 0..channels {
                    let al = a[c];
                    let base = (b * channels + c) * inner;
                    out.extend(x[base..base + inner].iter().map(|&v| {
                        if v > T::zero() {
                            v
                        } else {
                            al * v
                        }
                    }));
                }
            }
            out
        };
        let (px, pa) = (self.clone(), alpha.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, alpha],
            move |gout| {
                let x = px.data();
                let a = pa.data();
                let mut gx = vec![T::zero(); x.len()];
                let mut ga = vec![T::zero(); a.len()];
                for b in 0..n {
                    for c in 0..channels {
                        let al = a[c];
                        let base = (b * channels + c) * inner;
                        for i in base..base + inner {
                            let v = x[i];
                            if v > T::zero() {
                                gx[i] = gout[i];
                            } else {
                                gx[i] = gout[i] * al;
                                ga[c] += gout[i] * v;
                            }
                        }
                    }
                }
                drop(x);
                drop(a);
                if px.requires_grad() {
                    px.accumulate_grad(&gx);
                }
                if pa.requires_grad() {
                    pa.accumulate_grad(&ga);
                }
            },
        ))
    }

    /// Adds `rhs` whose shape must be a suffix of `self`'s shape (bias and
    /// positional-embedding style broadcast). The gradient for `rhs` sums
    /// over the broadcast leading dimensions.
    pub fn add_broadcast(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if rs.len() > ls.len() || &ls[ls.len() - rs.len()..] != rs {
            return Err(usage_err!(
                "broadcast add: {:?} is not a suffix of {:?}",
                rs,
                ls
            ));
        }
        let tail: usize = rs.iter().product();
        let data = {
            let a = self.data();
            let b = rhs.data();
            let mut out = Vec::with_capacity(a.len());
            for chunk in a.chunks(tail) {
                out.extend(chunk.iter().zip(b.iter()).map(|(&x, &y)| x + y));
            }
            out
        };
        let (pa, pb) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            &[self, rhs],
            move |gout| {
                if pa.requires_grad() {
                    pa.accumulate_grad(gout);
                }
                if pb.requires_grad() {
                    let mut d = vec![T::zero(); tail];
                    for chunk in gout.chunks(tail) {
                        for (di, &g) in d.iter_mut().zip(chunk) {
                            *di += g;
                        }
                    }
                    pb.accumulate_grad(&d);
                }
            },
        ))
    }
}

fn gelu_fwd<T: Element>(x: T) -> T {
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let c = T::from_f64(0.7978845608028654);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    let du = c * (T::one() + three * k * x * x);
    half * (T::one() + t) + half * x * sech2 * du
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-2.0, 0.0, 3.0]);
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 3.0]);
    }

    #[test]
    fn prelu_scales_negative_side() {
        // alpha = 0.25 applied to -4 gives -1.
        let x = Tensor::<f32>::from_vec(&[1, 1, 1], vec![-4.0]);
        let alpha = Tensor::from_vec(&[1], vec![0.25]);
        let y = x.prelu(&alpha).unwrap();
        assert_eq!(y.to_vec(), vec![-1.0]);
    }

    #[test]
    fn prelu_alpha_gets_gradients() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2], vec![-1.0, 2.0, -3.0, 4.0]);
        let alpha = Tensor::from_vec(&[2], vec![0.5, 0.5]).with_grad();
        let y = x.prelu(&alpha).unwrap();
        y.sum_all().backward().unwrap();
        // d/dalpha_c = sum of negative-side x per channel.
        assert_eq!(alpha.grad().unwrap(), vec![-1.0, -3.0]);
    }

    #[test]
    fn gelu_matches_reference_points() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]);
        let y = x.gelu().to_vec();
        assert_relative_eq!(y[0], -0.15880800939172324, max_relative = 1e-9);
        assert_eq!(y[1], 0.0);
        assert_relative_eq!(y[2], 1.954597694087775, max_relative = 1e-9);
    }

    #[test]
    fn broadcast_add_sums_grad_over_batch() {
        let x = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]);
        let b = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).with_grad();
        let y = x.add_broadcast(&b).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn div_by_tensor_gradients() {
        let a = Tensor::<f64>::from_vec(&[2], vec![1.0, 4.0]).with_grad();
        let b = Tensor::<f64>::from_vec(&[2], vec![2.0, 8.0]).with_grad();
        let y = a.div(&b).unwrap();
        y.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.5, 0.125]);
        assert_eq!(b.grad().unwrap(), vec![-0.25, -0.0625]);
    }
}

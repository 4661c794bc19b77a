//! Bias-corrected Adam.

use crate::nn::NamedParams;
use crate::tensor::Element;

pub struct AdamState<T: Element> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &NamedParams<T>) -> Self {
        AdamState {
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            step: 0,
            m: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// One update over all parameters. Missing gradients count as zero.
    pub fn update(&mut self, params: &NamedParams<T>, lr: T) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for (k, (_, p)) in params.iter().enumerate() {
            let grad = p.grad();
            let g = grad.as_deref().unwrap_or(&[]);
            let mut data = p.data_mut();
            for i in 0..data.len() {
                let gi = if g.is_empty() { T::zero() } else { g[i] };
                self.m[k][i] = self.beta1 * self.m[k][i] + (one - self.beta1) * gi;
                self.v[k][i] = self.beta2 * self.v[k][i] + (one - self.beta2) * gi * gi;
                let m_hat = self.m[k][i] / bc1;
                let v_hat = self.v[k][i] / bc2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// Packs the moments as named arrays for checkpointing (after the
    /// model's own parameters).
    pub fn to_extras(&self, params: &NamedParams<T>) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::with_capacity(2 * params.len());
        for (k, (name, _)) in params.iter().enumerate() {
            out.push((
                format!("opt.m.{name}"),
                self.m[k].iter().map(|v| v.to_f64_val() as f32).collect(),
            ));
            out.push((
                format!("opt.v.{name}"),
                self.v[k].iter().map(|v| v.to_f64_val() as f32).collect(),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single_param(value: f64) -> NamedParams<f64> {
        vec![(
            "w".to_string(),
            Tensor::<f64>::full(&[4], value).with_grad(),
        )]
    }

    fn force_grad(params: &NamedParams<f64>, g: f64) {
        params[0].1.zero_grad();
        params[0].1.accumulate_grad(&vec![g; 4]);
    }

    #[test]
    fn first_step_magnitude_matches_hand_derivation() {
        // g = 1 everywhere, lr = 0.01: m_hat = v_hat = 1, so
        // delta = -0.01 / (1 + 1e-8).
        let params = single_param(0.5);
        let mut adam = AdamState::new(&params);
        force_grad(&params, 1.0);
        adam.update(&params, 0.01);
        let expect = 0.5 - 0.01 / (1.0 + 1e-8);
        for &v in params[0].1.data().iter() {
            assert!((v - expect).abs() < 1e-15, "{v} vs {expect}");
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let params = single_param(0.5);
        let mut adam = AdamState::new(&params);
        force_grad(&params, 0.0);
        adam.update(&params, 0.01);
        assert!(params[0].1.data().iter().all(|&v| v == 0.5));
        // A missing gradient behaves the same way.
        params[0].1.zero_grad();
        adam.update(&params, 0.01);
        assert!(params[0].1.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_gradient_two_step_closed_form() {
        // Closed-form two-step evaluation with g = 1 both times:
        //   m1 = 0.1,  m_hat1 = m1 / (1 - 0.9)   = 1
        //   m2 = 0.19, m_hat2 = m2 / (1 - 0.81)  = 1
        // and identically v_hat1 = v_hat2 = 1, so the bias-corrected update
        // magnitude is the same both steps even though the raw moments
        // accumulate.
        let params = single_param(0.0);
        let mut adam = AdamState::new(&params);
        force_grad(&params, 1.0);
        adam.update(&params, 0.01);
        let after1 = params[0].1.data()[0];
        force_grad(&params, 1.0);
        adam.update(&params, 0.01);
        let after2 = params[0].1.data()[0];
        let delta1 = -after1;
        let delta2 = after1 - after2;
        let expect = 0.01 / (1.0 + 1e-8);
        assert!((delta1 - expect).abs() < 1e-12);
        assert!((delta2 - expect).abs() < 1e-9);
        // The raw first moment really did accumulate between the steps.
        assert!((adam.m[0][0] - 0.19).abs() < 1e-12);
    }

    #[test]
    fn varying_gradients_produce_different_magnitudes() {
        let params = single_param(0.0);
        let mut adam = AdamState::new(&params);
        force_grad(&params, 1.0);
        adam.update(&params, 0.01);
        let after1 = params[0].1.data()[0];
        force_grad(&params, 0.2);
        adam.update(&params, 0.01);
        let after2 = params[0].1.data()[0];
        assert!(((-after1) - (after1 - after2)).abs() > 1e-6);
    }
}

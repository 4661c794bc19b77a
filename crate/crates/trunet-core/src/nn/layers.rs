//! Parameterized primitive layers.

use rand::Rng;

use super::{norm_groups, NamedParams, NORM_EPS};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// 3-D convolution layer; weights He-normal (fan-in), bias zero.
pub struct Conv3dLayer<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Element> Conv3dLayer<T> {
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k * k;
        let std = T::from_f64((2.0 / fan_in as f64).sqrt());
        Conv3dLayer {
            weight: Tensor::randn(&[cout, cin, k, k, k], std, rng).with_grad(),
            bias: Tensor::zeros(&[cout]).with_grad(),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv3d(&self.weight, Some(&self.bias), self.stride, self.pad)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Fully connected layer over the last axis; Xavier-uniform weights.
pub struct Linear<T: Element> {
    pub weight: Tensor<T>, // [in, out]
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = T::from_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
        Linear {
            weight: Tensor::rand_uniform(&[fan_in, fan_out], -limit, limit, rng).with_grad(),
            bias: Tensor::zeros(&[fan_out]).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.weight)?.add_broadcast(&self.bias)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Group normalization with learnable per-channel affine.
pub struct GroupNormLayer<T: Element> {
    pub groups: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: T,
}

impl<T: Element> GroupNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        GroupNormLayer {
            groups: norm_groups(channels),
            gamma: Tensor::ones(&[channels]).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            eps: T::from_f64(NORM_EPS),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.group_norm(self.groups, &self.gamma, &self.beta, self.eps)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Layer normalization over the last axis.
pub struct LayerNormLayer<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: T,
}

impl<T: Element> LayerNormLayer<T> {
    pub fn new(extent: usize) -> Self {
        LayerNormLayer {
            gamma: Tensor::ones(&[extent]).with_grad(),
            beta: Tensor::zeros(&[extent]).with_grad(),
            eps: T::from_f64(NORM_EPS),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Parametric ReLU with one learnable slope per channel (init 0.25).
pub struct PRelu<T: Element> {
    pub alpha: Tensor<T>,
}

impl<T: Element> PRelu<T> {
    pub fn new(channels: usize) -> Self {
        PRelu {
            alpha: Tensor::full(&[channels], T::from_f64(0.25)).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.prelu(&self.alpha)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        out.push((format!("{prefix}.alpha"), self.alpha.clone()));
    }
}

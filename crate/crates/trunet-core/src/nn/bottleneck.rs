//! Pre-activation (v2) bottleneck residual unit: the 1-3-1 convolution
//! triple with norm -> relu -> conv ordering and an identity or projection
//! shortcut.

use rand::Rng;

use super::{Conv3dLayer, GroupNormLayer, NamedParams};
use crate::error::{config_err, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckSpec {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl BottleneckSpec {
    pub fn validate(&self) -> Result<()> {
        if self.out_channels != 4 * self.mid_channels {
            return Err(config_err!(
                "bottleneck expects out_channels == 4 * mid_channels, got {} and {}",
                self.out_channels,
                self.mid_channels
            ));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(config_err!("bottleneck stride must be 1 or 2"));
        }
        Ok(())
    }

    /// A projection shortcut is needed whenever the identity cannot carry
    /// the input through (resolution or channel change).
    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

pub struct Bottleneck<T: Element> {
    pub spec: BottleneckSpec,
    norm1: GroupNormLayer<T>,
    conv1: Conv3dLayer<T>,
    norm2: GroupNormLayer<T>,
    conv2: Conv3dLayer<T>,
    norm3: GroupNormLayer<T>,
    pub(crate) conv3: Conv3dLayer<T>,
    shortcut: Option<Conv3dLayer<T>>,
}

impl<T: Element> Bottleneck<T> {
    pub fn new<R: Rng>(spec: BottleneckSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let shortcut = spec
            .needs_projection()
            .then(|| Conv3dLayer::new(spec.in_channels, spec.out_channels, 1, spec.stride, 0, rng));
        Ok(Bottleneck {
            spec,
            norm1: GroupNormLayer::new(spec.in_channels),
            conv1: Conv3dLayer::new(spec.in_channels, spec.mid_channels, 1, 1, 0, rng),
            norm2: GroupNormLayer::new(spec.mid_channels),
            conv2: Conv3dLayer::new(spec.mid_channels, spec.mid_channels, 3, spec.stride, 1, rng),
            norm3: GroupNormLayer::new(spec.mid_channels),
            conv3: Conv3dLayer::new(spec.mid_channels, spec.out_channels, 1, 1, 0, rng),
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape()[1] != self.spec.in_channels {
            return Err(config_err!(
                "bottleneck expects {} input channels, got {}",
                self.spec.in_channels,
                x.shape()[1]
            ));
        }
        let pre = self.norm1.forward(x)?.relu();
        let mut branch = self.conv1.forward(&pre)?;
        branch = self.conv2.forward(&self.norm2.forward(&branch)?.relu())?;
        branch = self.conv3.forward(&self.norm3.forward(&branch)?.relu())?;
        let shortcut = match &self.shortcut {
            Some(proj) => proj.forward(&pre)?,
            None => x.clone(),
        };
        branch.add(&shortcut)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.norm1.collect_params(&format!("{prefix}.norm1"), out);
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.norm2.collect_params(&format!("{prefix}.norm2"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        self.norm3.collect_params(&format!("{prefix}.norm3"), out);
        self.conv3.collect_params(&format!("{prefix}.conv3"), out);
        if let Some(proj) = &self.shortcut {
            proj.collect_params(&format!("{prefix}.shortcut"), out);
        }
    }
}

//! Residual unit for the baseline U-Net: a configurable number of 3x3x3
//! convolutions in pre-activation order (norm -> PReLU -> conv) with an
//! identity or 1x1x1 projection shortcut. The first convolution carries the
//! unit's stride.

use rand::Rng;

use super::{Conv3dLayer, GroupNormLayer, NamedParams, PRelu};
use crate::error::{config_err, Result};
use crate::tensor::{Element, Tensor};

pub struct ResidualUnit<T: Element> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    stages: Vec<(GroupNormLayer<T>, PRelu<T>, Conv3dLayer<T>)>,
    shortcut: Option<Conv3dLayer<T>>,
}

impl<T: Element> ResidualUnit<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        convs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if convs == 0 {
            return Err(config_err!("residual unit needs at least one convolution"));
        }
        let mut stages = Vec::with_capacity(convs);
        let mut ch = in_channels;
        for i in 0..convs {
            let s = if i == 0 { stride } else { 1 };
            stages.push((
                GroupNormLayer::new(ch),
                PRelu::new(ch),
                Conv3dLayer::new(ch, out_channels, 3, s, 1, rng),
            ));
            ch = out_channels;
        }
        let shortcut = (stride != 1 || in_channels != out_channels)
            .then(|| Conv3dLayer::new(in_channels, out_channels, 1, stride, 0, rng));
        Ok(ResidualUnit {
            in_channels,
            out_channels,
            stride,
            stages,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        let mut pre_activated_input = None;
        for (i, (norm, act, conv)) in self.stages.iter().enumerate() {
            let pre = act.forward(&norm.forward(&h)?)?;
            if i == 0 {
                pre_activated_input = Some(pre.clone());
            }
            h = conv.forward(&pre)?;
        }
        let shortcut = match &self.shortcut {
            Some(proj) => proj.forward(pre_activated_input.as_ref().unwrap())?,
            None => x.clone(),
        };
        h.add(&shortcut)
    }

    /// Final convolution of the branch; zeroing it reduces the unit to its
    /// shortcut path.
    pub fn branch_output_conv(&self) -> &Conv3dLayer<T> {
        &self.stages.last().unwrap().2
    }

    pub(crate) fn shortcut(&self) -> Option<&Conv3dLayer<T>> {
        self.shortcut.as_ref()
    }

    pub(crate) fn pre_activation(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (norm, act, _) = &self.stages[0];
        act.forward(&norm.forward(x)?)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        for (i, (norm, act, conv)) in self.stages.iter().enumerate() {
            norm.collect_params(&format!("{prefix}.norm{i}"), out);
            act.collect_params(&format!("{prefix}.act{i}"), out);
            conv.collect_params(&format!("{prefix}.conv{i}"), out);
        }
        if let Some(proj) = &self.shortcut {
            proj.collect_params(&format!("{prefix}.shortcut"), out);
        }
    }
}

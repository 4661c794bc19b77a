//! Cascade upsampling decoder stage and the segmentation head.

use rand::Rng;

use super::{Conv3dLayer, GroupNormLayer, NamedParams};
use crate::error::{config_err, Result};
use crate::tensor::{Element, Tensor};

/// One decoder stage: x2 trilinear upsample, optional skip concatenation,
/// then 3x3x3 convolution, norm, relu. `upsample` is off only for the
/// literal head-upsample variant, where the head carries the final x2.
pub struct DecoderStage<T: Element> {
    pub(crate) conv: Conv3dLayer<T>,
    norm: GroupNormLayer<T>,
    in_channels: usize,
    skip_channels: usize,
    pub upsample: bool,
}

impl<T: Element> DecoderStage<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        skip_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        DecoderStage {
            conv: Conv3dLayer::new(in_channels + skip_channels, out_channels, 3, 1, 1, rng),
            norm: GroupNormLayer::new(out_channels),
            in_channels,
            skip_channels,
            upsample: true,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, skip: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if x.shape()[1] != self.in_channels {
            return Err(config_err!(
                "decoder stage expects {} input channels, got {}",
                self.in_channels,
                x.shape()[1]
            ));
        }
        let up = if self.upsample {
            x.trilinear_upsample(2)?
        } else {
            x.clone()
        };
        let merged = match skip {
            Some(s) => {
                if s.shape()[1] != self.skip_channels {
                    return Err(config_err!(
                        "decoder stage expects {} skip channels, got {}",
                        self.skip_channels,
                        s.shape()[1]
                    ));
                }
                if s.shape()[2..] != up.shape()[2..] {
                    return Err(config_err!(
                        "skip extent {:?} does not match upsampled extent {:?}",
                        &s.shape()[2..],
                        &up.shape()[2..]
                    ));
                }
                Tensor::concat(&[&up, s], 1)?
            }
            None => {
                if self.skip_channels != 0 {
                    return Err(config_err!("decoder stage built with a skip but given none"));
                }
                up
            }
        };
        Ok(self.norm.forward(&self.conv.forward(&merged)?)?.relu())
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.norm.collect_params(&format!("{prefix}.norm"), out);
    }
}

/// Final 3x3x3 convolution to class logits followed by channel softmax.
/// `upsample` performs one extra x2 trilinear upsample first (the literal
/// "upsample again in the head" reading; off by default).
pub struct SegmentationHead<T: Element> {
    conv: Conv3dLayer<T>,
    pub upsample: bool,
}

impl<T: Element> SegmentationHead<T> {
    pub fn new<R: Rng>(in_channels: usize, num_classes: usize, upsample: bool, rng: &mut R) -> Self {
        // Zero-started logits: every class begins uniform, so no class can
        // collapse before the decoder features become discriminative.
        let conv = Conv3dLayer::new(in_channels, num_classes, 3, 1, 1, rng);
        conv.weight.fill(T::zero());
        SegmentationHead { conv, upsample }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = if self.upsample {
            x.trilinear_upsample(2)?
        } else {
            x.clone()
        };
        self.conv.forward(&h)?.softmax(1)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
    }
}

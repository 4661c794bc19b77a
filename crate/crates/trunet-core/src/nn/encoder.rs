//! Hybrid encoder CNN: a 3-D ResNet50-v2 variant cut to three blocks of
//! 3/4/9 bottleneck units so the final feature width is 1024 (times the
//! width multiplier) at 1/16 resolution. The stem output and the first two
//! block outputs feed the decoder as skip connections.

use rand::Rng;

use super::{Bottleneck, BottleneckSpec, Conv3dLayer, GroupNormLayer, NamedParams};
use crate::error::{config_err, Result};
use crate::tensor::{Element, Tensor};

/// Concrete channel plan for the encoder (already scaled by the width
/// multiplier).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub block_out: [usize; 3],
    pub block_mid: [usize; 3],
    pub depths: [usize; 3],
}

/// The three skip tensors at descending resolution (1/2, 1/4, 1/8).
pub struct SkipSet<T: Element> {
    pub stem: Tensor<T>,
    pub block1: Tensor<T>,
    pub block2: Tensor<T>,
}

impl<T: Element> SkipSet<T> {
    pub fn channels(&self) -> [usize; 3] {
        [
            self.stem.shape()[1],
            self.block1.shape()[1],
            self.block2.shape()[1],
        ]
    }
}

/// Symbolic shape plan: lets the paper-scale geometry be checked without
/// allocating paper-scale tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderPlan {
    pub feature_extent: usize,
    pub feature_channels: usize,
    pub skip_extents: [usize; 3],
    pub skip_channels: [usize; 3],
    pub total_units: usize,
}

pub struct ResNetEncoder<T: Element> {
    dims: EncoderDims,
    stem_conv: Conv3dLayer<T>,
    stem_norm: GroupNormLayer<T>,
    blocks: Vec<Vec<Bottleneck<T>>>,
}

impl EncoderDims {
    pub fn plan(&self, input_extent: usize) -> Result<EncoderPlan> {
        if input_extent % 16 != 0 || input_extent == 0 {
            return Err(config_err!(
                "encoder input extent {} must be divisible by 16",
                input_extent
            ));
        }
        Ok(EncoderPlan {
            feature_extent: input_extent / 16,
            feature_channels: self.block_out[2],
            skip_extents: [input_extent / 2, input_extent / 4, input_extent / 8],
            skip_channels: [self.stem_channels, self.block_out[0], self.block_out[1]],
            total_units: self.depths.iter().sum(),
        })
    }
}

impl<T: Element> ResNetEncoder<T> {
    pub fn new<R: Rng>(dims: EncoderDims, rng: &mut R) -> Result<Self> {
        let stem_conv = Conv3dLayer::new(dims.in_channels, dims.stem_channels, 7, 2, 3, rng);
        let stem_norm = GroupNormLayer::new(dims.stem_channels);
        let mut blocks = Vec::with_capacity(3);
        let mut in_ch = dims.stem_channels;
        for b in 0..3 {
            let mut units = Vec::with_capacity(dims.depths[b]);
            for u in 0..dims.depths[b] {
                // Block 1 keeps the post-pool resolution; blocks 2 and 3
                // downsample in their first unit.
                let stride = if b > 0 && u == 0 { 2 } else { 1 };
                let spec = BottleneckSpec {
                    in_channels: in_ch,
                    mid_channels: dims.block_mid[b],
                    out_channels: dims.block_out[b],
                    stride,
                };
                units.push(Bottleneck::new(spec, rng)?);
                in_ch = dims.block_out[b];
            }
            blocks.push(units);
        }
        Ok(ResNetEncoder {
            dims,
            stem_conv,
            stem_norm,
            blocks,
        })
    }

    pub fn dims(&self) -> EncoderDims {
        self.dims
    }

    pub fn unit_count(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    /// Returns the 1/16-resolution features and the three skips.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SkipSet<T>)> {
        let extent = x.shape()[2];
        if extent % 16 != 0 {
            return Err(config_err!(
                "encoder input extent {} must be divisible by 16",
                extent
            ));
        }
        let stem = self.stem_norm.forward(&self.stem_conv.forward(x)?)?.relu();
        let pooled = stem.maxpool3d(3, 2, 1)?;
        let mut h = pooled;
        let mut skips = Vec::with_capacity(2);
        for (b, units) in self.blocks.iter().enumerate() {
            for unit in units {
                h = unit.forward(&h)?;
            }
            if b < 2 {
                skips.push(h.clone());
            }
        }
        let block1 = skips.remove(0);
        let block2 = skips.remove(0);
        Ok((
            h,
            SkipSet {
                stem,
                block1,
                block2,
            },
        ))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.stem_conv.collect_params(&format!("{prefix}.stem.conv"), out);
        self.stem_norm.collect_params(&format!("{prefix}.stem.norm"), out);
        for (b, units) in self.blocks.iter().enumerate() {
            for (u, unit) in units.iter().enumerate() {
                unit.collect_params(&format!("{prefix}.block{}.unit{}", b + 1, u), out);
            }
        }
    }
}

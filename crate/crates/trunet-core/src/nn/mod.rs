//! Composite neural building blocks: parameterized layers, pre-activation
//! bottleneck units, the hybrid CNN encoder, transformer layers, decoder
//! stages, and the segmentation head.

mod bottleneck;
mod decoder;
mod encoder;
mod layers;
mod resunit;
mod vit;

pub use bottleneck::{Bottleneck, BottleneckSpec};
pub use decoder::{DecoderStage, SegmentationHead};
pub use encoder::{EncoderDims, EncoderPlan, ResNetEncoder, SkipSet};
pub use layers::{Conv3dLayer, GroupNormLayer, LayerNormLayer, Linear, PRelu};
pub use resunit::ResidualUnit;
pub use vit::{MultiHeadAttention, PatchEmbed, PosEmbedding, ViTEncoder, ViTLayer, ViTSpec};

use crate::tensor::{Element, Tensor};

/// Normalization epsilon used throughout the network.
pub const NORM_EPS: f64 = 1e-5;

/// Named parameters in declaration order.
pub type NamedParams<T> = Vec<(String, Tensor<T>)>;

/// Group count for group normalization: 32 groups, clamped to the channel
/// count for narrow layers; channel counts not divisible by 32 fall back to
/// the largest divisor not exceeding 32.
pub fn norm_groups(channels: usize) -> usize {
    let cap = channels.min(32);
    (1..=cap).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Per-voxel channel argmax of `[N, C, ...]` probabilities; ties break to
/// the lowest class index.
pub fn argmax_channels<T: Element>(probs: &Tensor<T>) -> Vec<u8> {
    let s = probs.shape();
    assert!(s.len() >= 2, "argmax_channels expects [N, C, ...]");
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let d = probs.data();
    let mut out = Vec::with_capacity(n * spatial);
    for b in 0..n {
        for i in 0..spatial {
            let mut best = d[(b * c) * spatial + i];
            let mut best_c = 0u8;
            for ch in 1..c {
                let v = d[(b * c + ch) * spatial + i];
                if v > best {
                    best = v;
                    best_c = ch as u8;
                }
            }
            out.push(best_c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_groups_rules() {
        assert_eq!(norm_groups(8), 8);
        assert_eq!(norm_groups(24), 24);
        assert_eq!(norm_groups(32), 32);
        assert_eq!(norm_groups(64), 32);
        assert_eq!(norm_groups(48), 24);
        assert_eq!(norm_groups(1), 1);
    }

    #[test]
    fn argmax_ties_break_low() {
        let p = Tensor::<f32>::full(&[1, 3, 2], 1.0 / 3.0);
        assert_eq!(argmax_channels(&p), vec![0, 0]);
    }
}

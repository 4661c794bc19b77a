//! The hybrid transformer / residual U-Net: ResNet50-v2 variant encoder,
//! ViT stack over the 1/16 feature grid, cascade upsampling decoder with
//! skip connections, and a softmax segmentation head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, PATCH_EXTENT};
use crate::error::{config_err, Result};
use crate::nn::{
    Conv3dLayer, DecoderStage, EncoderDims, GroupNormLayer, NamedParams, PatchEmbed,
    ResNetEncoder, SegmentationHead, ViTEncoder, ViTSpec,
};
use crate::tensor::{Element, Tensor};

pub struct TruNet<T: Element> {
    pub config: ModelConfig,
    encoder: ResNetEncoder<T>,
    patch_embed: PatchEmbed<T>,
    pub(crate) vit: ViTEncoder<T>,
    entry_conv: Conv3dLayer<T>,
    entry_norm: GroupNormLayer<T>,
    stages: Vec<DecoderStage<T>>,
    head: SegmentationHead<T>,
}

impl<T: Element> TruNet<T> {
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let w = config.width_multiplier;
        let dims = EncoderDims {
            in_channels: 1,
            stem_channels: w.scale(64)?,
            block_out: [w.scale(256)?, w.scale(512)?, w.scale(1024)?],
            block_mid: [w.scale(64)?, w.scale(128)?, w.scale(256)?],
            depths: config.block_depths,
        };
        let encoder = ResNetEncoder::new(dims, &mut rng)?;
        let grid = config.grid_extent();
        let spec = ViTSpec {
            hidden: config.vit.hidden,
            mlp: config.vit.mlp,
            heads: config.vit.heads,
            layers: config.vit.layers,
            tokens: config.token_count(),
            pos_embedding: config.vit.pos_embedding,
        };
        let patch_embed = PatchEmbed::new(dims.block_out[2], grid, &spec, &mut rng)?;
        let vit = ViTEncoder::new(&spec, &mut rng)?;

        let dc = config.decoder_channels;
        let entry_conv = Conv3dLayer::new(spec.hidden, dc[0], 3, 1, 1, &mut rng);
        let entry_norm = GroupNormLayer::new(dc[0]);
        // Skips are consumed highest-resolution-last: block2 (1/8), block1
        // (1/4), stem (1/2); the fourth stage has none.
        let skip_ch = [dims.block_out[1], dims.block_out[0], dims.stem_channels, 0];
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = dc[0];
        for i in 0..4 {
            let mut stage = DecoderStage::new(in_ch, skip_ch[i], dc[i], &mut rng);
            if i == 3 && config.head_upsample {
                stage.upsample = false;
            }
            stages.push(stage);
            in_ch = dc[i];
        }
        let head = SegmentationHead::new(dc[3], config.num_classes, config.head_upsample, &mut rng);
        Ok(TruNet {
            config,
            encoder,
            patch_embed,
            vit,
            entry_conv,
            entry_norm,
            stages,
            head,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 5 || s[1] != 1 {
            return Err(config_err!(
                "trunet expects input [N, 1, S, S, S], got {:?}",
                s
            ));
        }
        if s[2] != self.config.input_extent || s[3] != s[2] || s[4] != s[2] {
            return Err(config_err!(
                "trunet configured for extent {}, got input {:?}",
                self.config.input_extent,
                &s[2..]
            ));
        }
        let n = s[0];
        let grid = s[2] / PATCH_EXTENT;
        let (features, skips) = self.encoder.forward(x)?;
        let tokens = self.patch_embed.forward(&features)?;
        let encoded = self.vit.forward(&tokens)?;
        let hidden = self.config.vit.hidden;
        let volume = encoded
            .permute(&[0, 2, 1])?
            .reshape(&[n, hidden, grid, grid, grid])?;
        let mut h = self
            .entry_norm
            .forward(&self.entry_conv.forward(&volume)?)?
            .relu();
        h = self.stages[0].forward(&h, Some(&skips.block2))?;
        h = self.stages[1].forward(&h, Some(&skips.block1))?;
        h = self.stages[2].forward(&h, Some(&skips.stem))?;
        h = self.stages[3].forward(&h, None)?;
        self.head.forward(&h)
    }

    pub fn collect_params(&self, out: &mut NamedParams<T>) {
        self.encoder.collect_params("encoder", out);
        self.patch_embed.collect_params("patch_embed", out);
        self.vit.collect_params("vit", out);
        self.entry_conv.collect_params("decoder.entry.conv", out);
        self.entry_norm.collect_params("decoder.entry.norm", out);
        for (i, stage) in self.stages.iter().enumerate() {
            stage.collect_params(&format!("decoder.stage{}", i + 1), out);
        }
        self.head.collect_params("head", out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, Model, ModelKind};

    #[test]
    fn toy_forward_has_contract_shape() {
        let cfg = ModelConfig::toy(ModelKind::TruNet);
        let model = build::<f32>(&cfg, 7).unwrap();
        let x = Tensor::zeros(&[1, 1, 32, 32, 32]);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 6, 32, 32, 32]);
        // Channel softmax: per-voxel probabilities sum to one.
        let d = y.data();
        let spatial = 32 * 32 * 32;
        for i in (0..spatial).step_by(997) {
            let s: f32 = (0..6).map(|c| d[c * spatial + i]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn head_upsample_variant_keeps_full_resolution() {
        let mut cfg = ModelConfig::toy(ModelKind::TruNet);
        cfg.head_upsample = true;
        let model = build::<f32>(&cfg, 7).unwrap();
        let x = Tensor::zeros(&[1, 1, 32, 32, 32]);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 6, 32, 32, 32]);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::toy(ModelKind::TruNet);
        let model = build::<f32>(&cfg, 3).unwrap();
        let x = Tensor::full(&[1, 1, 32, 32, 32], 0.25);
        let a = model.forward(&x).unwrap().to_vec();
        let b = model.forward(&x).unwrap().to_vec();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn parameter_names_are_unique_and_ordered() {
        let cfg = ModelConfig::toy(ModelKind::TruNet);
        let Model::TruNet(model) = build::<f32>(&cfg, 3).unwrap() else {
            panic!()
        };
        let mut params = Vec::new();
        model.collect_params(&mut params);
        let names: Vec<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
        let mut dedup = names.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len(), "duplicate parameter names");
        assert_eq!(names[0], "encoder.stem.conv.weight");
        assert!(names.last().unwrap().starts_with("head."));
    }
}

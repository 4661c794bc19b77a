//! Residual U-Net baseline: a symmetric encoder/decoder with stride-2
//! residual units, skip concatenations, upsample+conv in place of
//! transposed convolutions, PReLU activations, and a softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{config_err, Result};
use crate::nn::{Conv3dLayer, NamedParams, ResidualUnit};
use crate::tensor::{Element, Tensor};

pub struct ResUnet<T: Element> {
    pub config: ModelConfig,
    pub(crate) encoder: Vec<ResidualUnit<T>>,
    pub(crate) decoder: Vec<ResidualUnit<T>>,
    pub(crate) head_conv: Conv3dLayer<T>,
}

impl<T: Element> ResUnet<T> {
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let ch = &config.unet_channels;
        let levels = ch.len();
        let convs = config.unet_res_units;

        let mut encoder = Vec::with_capacity(levels);
        let mut in_ch = 1;
        for &c in ch {
            encoder.push(ResidualUnit::new(in_ch, c, 2, convs, &mut rng)?);
            in_ch = c;
        }
        // Decoder level i consumes the upsampled deeper features together
        // with the encoder skip at that resolution.
        let mut decoder = Vec::with_capacity(levels - 1);
        for i in (0..levels - 1).rev() {
            decoder.push(ResidualUnit::new(ch[i + 1] + ch[i], ch[i], 1, convs, &mut rng)?);
        }
        let head_conv = Conv3dLayer::new(ch[0], config.num_classes, 3, 1, 1, &mut rng);
        head_conv.weight.fill(T::zero());
        Ok(ResUnet {
            config,
            encoder,
            decoder,
            head_conv,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 5 || s[1] != 1 {
            return Err(config_err!(
                "res_unet expects input [N, 1, S, S, S], got {:?}",
                s
            ));
        }
        let factor = 1usize << self.encoder.len();
        if s[2] % factor != 0 {
            return Err(config_err!(
                "res_unet input extent {} must be divisible by {}",
                s[2],
                factor
            ));
        }
        let mut h = x.clone();
        let mut skips = Vec::with_capacity(self.encoder.len() - 1);
        for (i, unit) in self.encoder.iter().enumerate() {
            h = unit.forward(&h)?;
            if i + 1 < self.encoder.len() {
                skips.push(h.clone());
            }
        }
        for unit in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            let up = h.trilinear_upsample(2)?;
            h = unit.forward(&Tensor::concat(&[&up, &skip], 1)?)?;
        }
        let full = h.trilinear_upsample(2)?;
        self.head_conv.forward(&full)?.softmax(1)
    }

    pub fn collect_params(&self, out: &mut NamedParams<T>) {
        for (i, unit) in self.encoder.iter().enumerate() {
            unit.collect_params(&format!("encoder.level{i}"), out);
        }
        for (i, unit) in self.decoder.iter().enumerate() {
            unit.collect_params(&format!("decoder.level{i}"), out);
        }
        self.head_conv.collect_params("head.conv", out);
    }
}

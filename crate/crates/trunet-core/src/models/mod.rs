//! Model configuration, assembly, and checkpoint serialization.

mod checkpoint;
mod resunet;
mod trunet;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use resunet::ResUnet;
pub use trunet::TruNet;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::nn::{NamedParams, PosEmbedding};
use crate::tensor::{Element, Tensor};

/// Edge length of the cubic input patch each ViT token represents; equals
/// the encoder's total downsampling factor.
pub const PATCH_EXTENT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TruNet,
    ResUnet,
    Localizer,
}

/// Exact rational width multiplier; channel counts must scale to integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u32,
    pub den: u32,
}

impl Rational {
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Self {
        Rational { num, den }
    }

    pub fn scale(&self, base: usize) -> Result<usize> {
        if self.num == 0 || self.den == 0 {
            return Err(config_err!("width multiplier must be positive"));
        }
        let scaled = base * self.num as usize;
        if scaled % self.den as usize != 0 {
            return Err(config_err!(
                "width multiplier {}/{} does not scale {} to an integer channel count",
                self.num,
                self.den,
                base
            ));
        }
        let c = scaled / self.den as usize;
        if c == 0 {
            return Err(config_err!(
                "width multiplier {}/{} scales {} to zero channels",
                self.num,
                self.den,
                base
            ));
        }
        Ok(c)
    }
}

/// ViT hyperparameters as configured; the token count is derived from the
/// input extent at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub hidden: usize,
    pub mlp: usize,
    pub heads: usize,
    pub layers: usize,
    #[serde(default)]
    pub pos_embedding: PosEmbedding,
}

/// Every architectural hyperparameter of the three model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_extent: usize,
    pub num_classes: usize,
    pub width_multiplier: Rational,
    pub block_depths: [usize; 3],
    pub vit: ViTConfig,
    pub decoder_channels: [usize; 4],
    pub unet_channels: Vec<usize>,
    /// Convolutions per residual unit in the baseline U-Net.
    pub unet_res_units: usize,
    /// Literal reading of the head description: the fourth decoder stage
    /// stays at half resolution and the head performs the final upsample.
    #[serde(default)]
    pub head_upsample: bool,
}

impl ModelConfig {
    /// Published-scale configuration.
    pub fn paper(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            input_extent: 224,
            num_classes: 6,
            width_multiplier: Rational::ONE,
            block_depths: [3, 4, 9],
            vit: ViTConfig {
                hidden: 768,
                mlp: 3072,
                heads: 12,
                layers: 12,
                pos_embedding: PosEmbedding::ZeroInitLearnable,
            },
            decoder_channels: [512, 256, 128, 64],
            unet_channels: vec![16, 32, 64, 128, 256],
            unet_res_units: 2,
            head_upsample: false,
        }
    }

    /// Desk-scale configuration: minutes on a CPU while exercising every
    /// code path.
    pub fn toy(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            input_extent: 32,
            num_classes: 6,
            width_multiplier: Rational::new(1, 8),
            block_depths: [3, 4, 9],
            vit: ViTConfig {
                hidden: 64,
                mlp: 128,
                heads: 4,
                layers: 2,
                pos_embedding: PosEmbedding::ZeroInitLearnable,
            },
            decoder_channels: [64, 32, 16, 8],
            unet_channels: vec![16, 32, 64, 128, 256],
            unet_res_units: 2,
            head_upsample: false,
        }
    }

    pub fn grid_extent(&self) -> usize {
        self.input_extent / PATCH_EXTENT
    }

    pub fn token_count(&self) -> usize {
        let g = self.grid_extent();
        g * g * g
    }

    pub fn unet_levels(&self) -> usize {
        self.unet_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config_err!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        match self.kind {
            ModelKind::TruNet => {
                if self.input_extent == 0 || self.input_extent % PATCH_EXTENT != 0 {
                    return Err(config_err!(
                        "input_extent {} must be a positive multiple of {}",
                        self.input_extent,
                        PATCH_EXTENT
                    ));
                }
                for base in [64usize, 256, 512, 1024, 128] {
                    self.width_multiplier.scale(base)?;
                }
                if self.vit.heads == 0 || self.vit.hidden % self.vit.heads != 0 {
                    return Err(config_err!(
                        "vit hidden size {} must be divisible by {} heads",
                        self.vit.hidden,
                        self.vit.heads
                    ));
                }
                if self.vit.layers == 0 || self.vit.mlp == 0 {
                    return Err(config_err!("vit layers and mlp size must be positive"));
                }
                if self.block_depths.iter().any(|&d| d == 0) {
                    return Err(config_err!("block depths must all be positive"));
                }
                if self.decoder_channels.iter().any(|&c| c == 0) {
                    return Err(config_err!("decoder channels must all be positive"));
                }
            }
            ModelKind::ResUnet | ModelKind::Localizer => {
                let levels = self.unet_levels();
                if levels == 0 {
                    return Err(config_err!("unet_channels must not be empty"));
                }
                if self.unet_res_units == 0 {
                    return Err(config_err!("unet_res_units must be positive"));
                }
                let factor = 1usize << levels;
                if self.input_extent == 0 || self.input_extent % factor != 0 {
                    return Err(config_err!(
                        "input_extent {} must be divisible by 2^{} = {} for {} stride-2 levels",
                        self.input_extent,
                        levels,
                        factor,
                        levels
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> Result<ModelSummary> {
        self.validate()?;
        Ok(match self.kind {
            ModelKind::TruNet => {
                let w = self.width_multiplier;
                ModelSummary::TruNet {
                    input_extent: self.input_extent,
                    num_classes: self.num_classes,
                    patch_extent: PATCH_EXTENT,
                    token_count: self.token_count(),
                    voxels_per_patch: PATCH_EXTENT.pow(3),
                    vit_hidden: self.vit.hidden,
                    vit_mlp: self.vit.mlp,
                    vit_heads: self.vit.heads,
                    vit_layers: self.vit.layers,
                    skip_channels: [w.scale(64)?, w.scale(256)?, w.scale(512)?],
                    decoder_channels: self.decoder_channels,
                }
            }
            ModelKind::ResUnet | ModelKind::Localizer => ModelSummary::ResUnet {
                input_extent: self.input_extent,
                num_classes: if self.kind == ModelKind::Localizer {
                    2
                } else {
                    self.num_classes
                },
                levels: self.unet_levels(),
                convs_per_unit: self.unet_res_units,
                kernel: 3,
                stride: 2,
                activation: "prelu".to_string(),
                channels: self.unet_channels.clone(),
            },
        })
    }
}

/// Structural constants of a configured model, computed symbolically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSummary {
    TruNet {
        input_extent: usize,
        num_classes: usize,
        patch_extent: usize,
        token_count: usize,
        voxels_per_patch: usize,
        vit_hidden: usize,
        vit_mlp: usize,
        vit_heads: usize,
        vit_layers: usize,
        skip_channels: [usize; 3],
        decoder_channels: [usize; 4],
    },
    ResUnet {
        input_extent: usize,
        num_classes: usize,
        levels: usize,
        convs_per_unit: usize,
        kernel: usize,
        stride: usize,
        activation: String,
        channels: Vec<usize>,
    },
}

/// A built network of either kind.
pub enum Model<T: Element> {
    TruNet(TruNet<T>),
    ResUnet(ResUnet<T>),
}

impl<T: Element> Model<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Model::TruNet(m) => m.forward(x),
            Model::ResUnet(m) => m.forward(x),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::TruNet(m) => &m.config,
            Model::ResUnet(m) => &m.config,
        }
    }

    /// Parameters in declaration order with stable hierarchical names.
    pub fn named_parameters(&self) -> NamedParams<T> {
        let mut out = Vec::new();
        match self {
            Model::TruNet(m) => m.collect_params(&mut out),
            Model::ResUnet(m) => m.collect_params(&mut out),
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Builds a model of the configured kind with deterministic initialization.
pub fn build<T: Element>(config: &ModelConfig, init_seed: u64) -> Result<Model<T>> {
    config.validate()?;
    match config.kind {
        ModelKind::TruNet => Ok(Model::TruNet(TruNet::new(config.clone(), init_seed)?)),
        ModelKind::ResUnet => Ok(Model::ResUnet(ResUnet::new(config.clone(), init_seed)?)),
        ModelKind::Localizer => {
            let mut cfg = config.clone();
            cfg.num_classes = 2;
            Ok(Model::ResUnet(ResUnet::new(cfg, init_seed)?))
        }
    }
}

pub fn build_trunet<T: Element>(config: &ModelConfig, init_seed: u64) -> Result<Model<T>> {
    let mut cfg = config.clone();
    cfg.kind = ModelKind::TruNet;
    build(&cfg, init_seed)
}

pub fn build_res_unet<T: Element>(config: &ModelConfig, init_seed: u64) -> Result<Model<T>> {
    let mut cfg = config.clone();
    cfg.kind = ModelKind::ResUnet;
    build(&cfg, init_seed)
}

/// Binary foreground/background network for ROI localization: the baseline
/// U-Net with the class count forced to 2.
pub fn build_localizer<T: Element>(config: &ModelConfig, init_seed: u64) -> Result<Model<T>> {
    let mut cfg = config.clone();
    cfg.kind = ModelKind::Localizer;
    build(&cfg, init_seed)
}

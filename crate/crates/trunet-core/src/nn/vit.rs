//! Patch embedding and the transformer encoder stack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Conv3dLayer, LayerNormLayer, Linear, NamedParams};
use crate::error::{config_err, Result};
use crate::tensor::{Element, Tensor};

/// How the learnable positional embedding is initialized. The default reads
/// "an array of zeros added to the patch embedding" as a zero-initialized
/// learnable tensor; the 1-D variant starts from small random values
/// indexed by flattened token order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PosEmbedding {
    #[default]
    ZeroInitLearnable,
    RandomInitLearnable1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViTSpec {
    pub hidden: usize,
    pub mlp: usize,
    pub heads: usize,
    pub layers: usize,
    /// Token count; `(input_extent / patch_extent)^3` for grid inputs.
    pub tokens: usize,
    pub pos_embedding: PosEmbedding,
}

impl ViTSpec {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(config_err!(
                "vit hidden size {} must be divisible by {} heads",
                self.hidden,
                self.heads
            ));
        }
        if self.tokens == 0 || self.hidden == 0 || self.mlp == 0 {
            return Err(config_err!("vit dimensions must be positive"));
        }
        Ok(())
    }
}

/// Per-voxel linear map from encoder features to token vectors plus the
/// learnable positional embedding, flattening the grid in row-major order.
pub struct PatchEmbed<T: Element> {
    proj: Conv3dLayer<T>,
    pub pos: Tensor<T>,
    grid: usize,
}

impl<T: Element> PatchEmbed<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        grid: usize,
        spec: &ViTSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.tokens != grid * grid * grid {
            return Err(config_err!(
                "vit token count {} does not match grid {}^3",
                spec.tokens,
                grid
            ));
        }
        let proj = Conv3dLayer::new(in_channels, spec.hidden, 1, 1, 0, rng);
        let pos = match spec.pos_embedding {
            PosEmbedding::ZeroInitLearnable => Tensor::zeros(&[spec.tokens, spec.hidden]),
            PosEmbedding::RandomInitLearnable1d => {
                Tensor::randn(&[spec.tokens, spec.hidden], T::from_f64(0.02), rng)
            }
        }
        .with_grad();
        Ok(PatchEmbed { proj, pos, grid })
    }

    /// `[N, C, G, G, G] -> [N, G^3, hidden]`
    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let s = features.shape();
        if s.len() != 5 || s[2] != self.grid || s[3] != self.grid || s[4] != self.grid {
            return Err(config_err!(
                "patch embed expects a {g}x{g}x{g} grid, got {:?}",
                s,
                g = self.grid
            ));
        }
        let n = s[0];
        let tokens = self.grid * self.grid * self.grid;
        let hidden = self.proj.out_channels();
        let projected = self.proj.forward(features)?;
        let flat = projected.reshape(&[n, hidden, tokens])?;
        let seq = flat.permute(&[0, 2, 1])?;
        seq.add_broadcast(&self.pos)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.proj.collect_params(&format!("{prefix}.proj"), out);
        out.push((format!("{prefix}.pos"), self.pos.clone()));
    }
}

/// Scaled dot-product multi-head self-attention.
pub struct MultiHeadAttention<T: Element> {
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    pub(crate) wo: Linear<T>,
    heads: usize,
}

impl<T: Element> MultiHeadAttention<T> {
    pub fn new<R: Rng>(hidden: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(config_err!(
                "attention hidden size {} must be divisible by {} heads",
                hidden,
                heads
            ));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(hidden, hidden, rng),
            wk: Linear::new(hidden, hidden, rng),
            wv: Linear::new(hidden, hidden, rng),
            wo: Linear::new(hidden, hidden, rng),
            heads,
        })
    }

    /// `[N, T, E] -> [N, T, E]`
    pub fn forward(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let s = tokens.shape();
        if s.len() != 3 {
            return Err(config_err!("attention expects [N, T, E], got {:?}", s));
        }
        let (n, t, e) = (s[0], s[1], s[2]);
        let h = self.heads;
        let hd = e / h;
        let split = |x: &Tensor<T>| -> Result<Tensor<T>> {
            // [N, T, E] -> [N, H, T, hd]
            x.reshape(&[n, t, h, hd])?.permute(&[0, 2, 1, 3])
        };
        let q = split(&self.wq.forward(tokens)?)?;
        let k = split(&self.wk.forward(tokens)?)?;
        let v = split(&self.wv.forward(tokens)?)?;

        let k_t = k.permute(&[0, 1, 3, 2])?; // [N, H, hd, T]
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let scores = q.matmul(&k_t)?.scale(scale); // [N, H, T, T]
        let attn = scores.softmax(3)?;
        let ctx = attn.matmul(&v)?; // [N, H, T, hd]
        let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[n, t, e])?;
        self.wo.forward(&merged)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.wq.collect_params(&format!("{prefix}.wq"), out);
        self.wk.collect_params(&format!("{prefix}.wk"), out);
        self.wv.collect_params(&format!("{prefix}.wv"), out);
        self.wo.collect_params(&format!("{prefix}.wo"), out);
    }
}

/// Pre-norm transformer layer: `x + MHA(LN(x))`, then `x + MLP(LN(x))` with
/// a GELU between the two linear maps.
pub struct ViTLayer<T: Element> {
    ln1: LayerNormLayer<T>,
    pub(crate) mha: MultiHeadAttention<T>,
    ln2: LayerNormLayer<T>,
    fc1: Linear<T>,
    pub(crate) fc2: Linear<T>,
}

impl<T: Element> ViTLayer<T> {
    pub fn new<R: Rng>(hidden: usize, mlp: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(ViTLayer {
            ln1: LayerNormLayer::new(hidden),
            mha: MultiHeadAttention::new(hidden, heads, rng)?,
            ln2: LayerNormLayer::new(hidden),
            fc1: Linear::new(hidden, mlp, rng),
            fc2: Linear::new(mlp, hidden, rng),
        })
    }

    pub fn forward(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let attended = self.mha.forward(&self.ln1.forward(tokens)?)?;
        let x = tokens.add(&attended)?;
        let mlp = self
            .fc2
            .forward(&self.fc1.forward(&self.ln2.forward(&x)?)?.gelu())?;
        x.add(&mlp)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.ln1.collect_params(&format!("{prefix}.ln1"), out);
        self.mha.collect_params(&format!("{prefix}.mha"), out);
        self.ln2.collect_params(&format!("{prefix}.ln2"), out);
        self.fc1.collect_params(&format!("{prefix}.fc1"), out);
        self.fc2.collect_params(&format!("{prefix}.fc2"), out);
    }

    /// Closed-form parameter count for a layer of the given dimensions.
    pub fn param_count_formula(hidden: usize, mlp: usize) -> usize {
        let attn = 4 * (hidden * hidden + hidden);
        let norms = 2 * (2 * hidden);
        let ffn = hidden * mlp + mlp + mlp * hidden + hidden;
        attn + norms + ffn
    }
}

/// Stack of transformer layers with a final layer norm.
pub struct ViTEncoder<T: Element> {
    pub(crate) layers: Vec<ViTLayer<T>>,
    final_ln: LayerNormLayer<T>,
}

impl<T: Element> ViTEncoder<T> {
    pub fn new<R: Rng>(spec: &ViTSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = (0..spec.layers)
            .map(|_| ViTLayer::new(spec.hidden, spec.mlp, spec.heads, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ViTEncoder {
            layers,
            final_ln: LayerNormLayer::new(spec.hidden),
        })
    }

    pub fn forward(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = tokens.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        self.final_ln.forward(&h)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut NamedParams<T>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&format!("{prefix}.layer{i}"), out);
        }
        self.final_ln.collect_params(&format!("{prefix}.final_ln"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_attention_is_value_projection() {
        // With one key the softmax weight is exactly 1, so the output is
        // out_proj(v_proj(token)).
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mha = MultiHeadAttention::<f32>::new(8, 2, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 1, 8], 1.0, &mut rng);
        let y = mha.forward(&x).unwrap();
        let direct = mha.wo.forward(&mha.wv.forward(&x).unwrap()).unwrap();
        for (a, b) in y.data().iter().zip(direct.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_tokens_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mha = MultiHeadAttention::<f32>::new(8, 4, &mut rng).unwrap();
        let row = Tensor::<f32>::randn(&[1, 1, 8], 1.0, &mut rng).to_vec();
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&row);
        }
        let x = Tensor::from_vec(&[1, 5, 8], data);
        let y = mha.forward(&x).unwrap();
        let d = y.to_vec();
        for t in 1..5 {
            for e in 0..8 {
                assert!((d[t * 8 + e] - d[e]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_commutes_with_token_permutation() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mha = MultiHeadAttention::<f32>::new(8, 2, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 6, 8], 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);

        let permute_tokens = |t: &Tensor<f32>| {
            let d = t.to_vec();
            let mut out = vec![0.0; d.len()];
            for (dst, &src) in perm.iter().enumerate() {
                out[dst * 8..(dst + 1) * 8].copy_from_slice(&d[src * 8..(src + 1) * 8]);
            }
            Tensor::from_vec(&[1, 6, 8], out)
        };

        let y_then_p = permute_tokens(&mha.forward(&x).unwrap());
        let p_then_y = mha.forward(&permute_tokens(&x)).unwrap();
        for (a, b) in y_then_p.data().iter().zip(p_then_y.data().iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zeroed_projections_make_layer_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let layer = ViTLayer::<f32>::new(8, 16, 2, &mut rng).unwrap();
        layer.mha.wo.weight.fill(0.0);
        layer.mha.wo.bias.fill(0.0);
        layer.fc2.weight.fill(0.0);
        layer.fc2.bias.fill(0.0);
        let x = Tensor::randn(&[2, 3, 8], 1.0, &mut rng);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn layer_param_count_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let layer = ViTLayer::<f32>::new(8, 16, 2, &mut rng).unwrap();
        let mut params = Vec::new();
        layer.collect_params("l", &mut params);
        let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
        assert_eq!(total, ViTLayer::<f32>::param_count_formula(8, 16));
    }

    #[test]
    fn paper_dims_parameter_count() {
        // 12 layers at hidden 768 / mlp 3072, computed two ways: the shared
        // formula and independent arithmetic spelled out here.
        let per_layer = ViTLayer::<f32>::param_count_formula(768, 3072);
        let independent = 4 * (768 * 768 + 768)      // q, k, v, out projections
            + 2 * 2 * 768                            // two layer norms
            + 768 * 3072 + 3072                      // mlp in
            + 3072 * 768 + 768; // mlp out
        assert_eq!(per_layer, independent);
        assert_eq!(independent, 7_087_872);
        assert_eq!(12 * per_layer, 85_054_464);
    }

    #[test]
    fn patch_embed_token_count_and_zero_pos() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let spec = ViTSpec {
            hidden: 8,
            mlp: 16,
            heads: 2,
            layers: 1,
            tokens: 8,
            pos_embedding: PosEmbedding::ZeroInitLearnable,
        };
        let pe = PatchEmbed::<f32>::new(4, 2, &spec, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 4, 2, 2, 2], 1.0, &mut rng);
        let tokens = pe.forward(&x).unwrap();
        assert_eq!(tokens.shape(), &[1, 8, 8]);

        // Zero-initialized positional embedding adds nothing on the first
        // forward: bumping it changes the output, zeroing it back restores it.
        let before = tokens.to_vec();
        pe.pos.fill(1.0);
        let bumped = pe.forward(&x).unwrap();
        assert!(bumped.to_vec().iter().zip(&before).any(|(a, b)| a != b));
        pe.pos.fill(0.0);
        let restored = pe.forward(&x).unwrap();
        assert_eq!(restored.to_vec(), before);
    }

    #[test]
    fn random_1d_pos_embedding_is_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let spec = ViTSpec {
            hidden: 8,
            mlp: 16,
            heads: 2,
            layers: 1,
            tokens: 8,
            pos_embedding: PosEmbedding::RandomInitLearnable1d,
        };
        let pe = PatchEmbed::<f32>::new(4, 2, &spec, &mut rng).unwrap();
        assert!(pe.pos.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        assert!(MultiHeadAttention::<f32>::new(8, 3, &mut rng).is_err());
    }
}

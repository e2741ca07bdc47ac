//! The multi-level encoder: patch embedding of three backbone feature levels,
//! pooled positional encoding, per-level attention/feed-forward branches, and
//! top-down aggregation.
//!
//! Levels are numbered 3–5 and halve spatially from one to the next
//! (`H_4 = ceil(H_3 / 2)`, and so on). Each level's branch maps its token
//! sequence shape-preservingly; aggregation then fuses coarse levels into
//! finer ones with nearest-neighbor upsampling and per-level lateral
//! projections.

pub mod traced;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

use crate::attention::{st_attention, AttentionParams, ShrinkageParams};
use crate::error::{Error, Result};
use crate::tensor::{ops, LinearParams, Tensor};

/// Backbone feature map at one pyramid level: `[H, W, C]` with level ∈ {3,4,5}.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    level: usize,
    tensor: Tensor,
}

impl FeatureMap {
    pub fn new(level: usize, tensor: Tensor) -> Result<Self> {
        if !(3..=5).contains(&level) {
            return Err(Error::Config(format!(
                "feature level must be 3, 4 or 5, got {}",
                level
            )));
        }
        if tensor.rank() != 3 {
            return Err(Error::Config(format!(
                "feature map for level {} must be a rank-3 [H, W, C] tensor, got shape {:?}",
                level,
                tensor.shape()
            )));
        }
        Ok(FeatureMap { level, tensor })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.extent(0)
    }

    pub fn width(&self) -> usize {
        self.tensor.extent(1)
    }

    pub fn channels(&self) -> usize {
        self.tensor.extent(2)
    }
}

/// Token rows `[N, C]` plus the spatial grid they were flattened from
/// (`N = H·W`, row-major).
#[derive(Debug, Clone)]
pub struct TokenSequence {
    tokens: Tensor,
    grid: (usize, usize),
}

impl TokenSequence {
    pub fn new(tokens: Tensor, grid: (usize, usize)) -> Result<Self> {
        if tokens.rank() != 2 || tokens.extent(0) != grid.0 * grid.1 {
            return Err(Error::ShapeMismatch {
                op: "token-sequence",
                left: tokens.shape().to_vec(),
                right: vec![grid.0, grid.1],
            });
        }
        Ok(TokenSequence { tokens, grid })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.tokens.extent(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embed_dim(&self) -> usize {
        self.tokens.extent(1)
    }
}

/// Structural knobs shared by all three branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Common embedding width `C_e` of all branches.
    pub embed_dim: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Bottleneck reduction of the shrinkage unit.
    pub reduction: usize,
    /// Attention/feed-forward layers per branch.
    pub depth: usize,
}

impl Default for EncoderConfig {
    /// `embed_dim` 32 with 8 heads, reduction 4, one layer per branch — the
    /// smallest width at which the default head count and reduction compose
    /// (head width 4, bottleneck 1).
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 32,
            heads: 8,
            reduction: 4,
            depth: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.reduction == 0 || self.depth == 0 {
            return Err(Error::Config(format!(
                "encoder config fields must be positive: {:?}",
                self
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} does not divide embedding width {}",
                self.heads, self.embed_dim
            )));
        }
        let d = self.embed_dim / self.heads;
        if d % self.reduction != 0 {
            return Err(Error::Config(format!(
                "shrinkage reduction {} does not divide head width {}",
                self.reduction, d
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// One attention/feed-forward layer of a branch.
#[derive(Debug, Clone)]
pub struct LayerParams {
    attention: AttentionParams,
    shrinkage: Vec<ShrinkageParams>,
    ffn1: LinearParams,
    ffn2: LinearParams,
}

impl LayerParams {
    pub fn new(
        attention: AttentionParams,
        shrinkage: Vec<ShrinkageParams>,
        ffn1: LinearParams,
        ffn2: LinearParams,
    ) -> Result<Self> {
        let c = attention.embed_dim();
        if shrinkage.len() != attention.heads() {
            return Err(Error::Config(format!(
                "expected one shrinkage unit per head ({}), got {}",
                attention.heads(),
                shrinkage.len()
            )));
        }
        for s in &shrinkage {
            if s.head_dim() != attention.head_dim() {
                return Err(Error::Config(format!(
                    "shrinkage width {} does not match head width {}",
                    s.head_dim(),
                    attention.head_dim()
                )));
            }
        }
        if ffn1.in_dim() != c || ffn1.out_dim() != 4 * c || ffn2.in_dim() != 4 * c
            || ffn2.out_dim() != c
        {
            return Err(Error::Config(format!(
                "feed-forward layers must map {} -> {} -> {}, got {} -> {} and {} -> {}",
                c,
                4 * c,
                c,
                ffn1.in_dim(),
                ffn1.out_dim(),
                ffn2.in_dim(),
                ffn2.out_dim()
            )));
        }
        Ok(LayerParams {
            attention,
            shrinkage,
            ffn1,
            ffn2,
        })
    }

    pub fn attention(&self) -> &AttentionParams {
        &self.attention
    }

    pub fn shrinkage(&self) -> &[ShrinkageParams] {
        &self.shrinkage
    }

    pub fn ffn1(&self) -> &LinearParams {
        &self.ffn1
    }

    pub fn ffn2(&self) -> &LinearParams {
        &self.ffn2
    }
}

/// Everything one branch needs: the patch-embedding projection plus its
/// layers.
#[derive(Debug, Clone)]
pub struct LevelParams {
    embed: LinearParams,
    layers: Vec<LayerParams>,
}

impl LevelParams {
    pub fn new(embed: LinearParams, layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a branch needs at least one layer".into()));
        }
        for layer in &layers {
            if layer.attention.embed_dim() != embed.out_dim() {
                return Err(Error::Config(format!(
                    "layer width {} does not match embedding width {}",
                    layer.attention.embed_dim(),
                    embed.out_dim()
                )));
            }
        }
        Ok(LevelParams { embed, layers })
    }

    pub fn embed(&self) -> &LinearParams {
        &self.embed
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }
}

/// Full parameter set: three branches plus the aggregation laterals.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    config: EncoderConfig,
    levels: [LevelParams; 3],
    laterals: [LinearParams; 3],
}

impl EncoderParams {
    pub fn new(
        config: EncoderConfig,
        levels: [LevelParams; 3],
        laterals: [LinearParams; 3],
    ) -> Result<Self> {
        config.validate()?;
        for level in &levels {
            if level.embed.out_dim() != config.embed_dim || level.layers.len() != config.depth {
                return Err(Error::Config(format!(
                    "branch shape disagrees with config {:?}: embed width {}, {} layers",
                    config,
                    level.embed.out_dim(),
                    level.layers.len()
                )));
            }
            for layer in &level.layers {
                if layer.attention.heads() != config.heads {
                    return Err(Error::Config(format!(
                        "layer has {} heads, config says {}",
                        layer.attention.heads(),
                        config.heads
                    )));
                }
            }
        }
        for lat in &laterals {
            if lat.in_dim() != config.embed_dim || lat.out_dim() != config.embed_dim {
                return Err(Error::Config(format!(
                    "lateral projection must map {} -> {}, got {} -> {}",
                    config.embed_dim,
                    config.embed_dim,
                    lat.in_dim(),
                    lat.out_dim()
                )));
            }
        }
        Ok(EncoderParams {
            config,
            levels,
            laterals,
        })
    }

    /// Random initialization from one generator stream. Draw order: levels
    /// 3→5 (embedding, then per layer: attention, per-head shrinkage, both
    /// feed-forward projections), then the three laterals 3→5.
    pub fn seeded(
        config: EncoderConfig,
        channels: (usize, usize, usize),
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim;
        let mut levels = Vec::with_capacity(3);
        for c_l in [channels.0, channels.1, channels.2] {
            if c_l == 0 {
                return Err(Error::Config("feature channels must be positive".into()));
            }
            let embed = LinearParams::seeded(c_l, c, rng);
            let mut layers = Vec::with_capacity(config.depth);
            for _ in 0..config.depth {
                let attention = AttentionParams::seeded(c, config.heads, rng)?;
                let shrinkage = (0..config.heads)
                    .map(|_| ShrinkageParams::seeded(config.head_dim(), config.reduction, rng))
                    .collect::<Result<Vec<_>>>()?;
                let ffn1 = LinearParams::seeded(c, 4 * c, rng);
                let ffn2 = LinearParams::seeded(4 * c, c, rng);
                layers.push(LayerParams::new(attention, shrinkage, ffn1, ffn2)?);
            }
            levels.push(LevelParams::new(embed, layers)?);
        }
        let laterals = [
            LinearParams::seeded(c, c, rng),
            LinearParams::seeded(c, c, rng),
            LinearParams::seeded(c, c, rng),
        ];
        let levels: [LevelParams; 3] = levels.try_into().expect("three levels");
        EncoderParams::new(config, levels, laterals)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn levels(&self) -> &[LevelParams; 3] {
        &self.levels
    }

    pub fn laterals(&self) -> &[LinearParams; 3] {
        &self.laterals
    }
}

/// Deterministic stand-in for a backbone: three uniform `(-1, 1)` feature
/// maps with the level-halving spatial relation, drawn level 3 first from a
/// stream seeded by `seed`.
pub fn synth_features(
    seed: u64,
    base: (usize, usize),
    channels: (usize, usize, usize),
) -> Result<[FeatureMap; 3]> {
    let (h3, w3) = base;
    let (c3, c4, c5) = channels;
    if h3 == 0 || w3 == 0 || c3 == 0 || c4 == 0 || c5 == 0 {
        return Err(Error::Config(format!(
            "synthetic features need positive extents, got base {:?} channels {:?}",
            base, channels
        )));
    }
    let (h4, w4) = (h3.div_ceil(2), w3.div_ceil(2));
    let (h5, w5) = (h4.div_ceil(2), w4.div_ceil(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [(h3, w3, c3), (h4, w4, c4), (h5, w5, c5)];
    let mut out = Vec::with_capacity(3);
    for (i, (h, w, c)) in shapes.into_iter().enumerate() {
        let t = Tensor::uniform(vec![h, w, c], -1.0, 1.0, &mut rng);
        out.push(FeatureMap::new(3 + i, t)?);
    }
    Ok(out.try_into().expect("three levels"))
}

/// Flattens a feature map row-major to tokens and projects each token to the
/// embedding width.
pub fn multi_level_patch_embed(f: &FeatureMap, embed: &LinearParams) -> Result<TokenSequence> {
    if embed.in_dim() != f.channels() {
        return Err(Error::Config(format!(
            "embedding expects {} channels, level-{} map has {}",
            embed.in_dim(),
            f.level(),
            f.channels()
        )));
    }
    let n = f.height() * f.width();
    let flat = f.tensor().reshape(vec![n, f.channels()])?;
    let tokens = ops::linear(&flat, embed)?;
    TokenSequence::new(tokens, (f.height(), f.width()))
}

/// `AvgPooling(M) + M`: tokens are reshaped to their grid, average-pooled
/// with kernel 3 / stride 1 / pad 1 (the divisor counting only in-bounds
/// cells), flattened back and added to the input.
pub fn pooling_positional_encoding(m: &TokenSequence) -> Result<TokenSequence> {
    let (h, w) = m.grid();
    let c = m.embed_dim();
    let grid = m.tokens().reshape(vec![h, w, c])?;
    let pooled = ops::avg_pool_2d(&grid, 3, 1, 1)?;
    let out = ops::add(&pooled.reshape(vec![h * w, c])?, m.tokens())?;
    TokenSequence::new(out, (h, w))
}

/// One branch: positional encoding once at entry, then per layer an
/// attention block and a feed-forward block, each with a residual shortcut.
pub fn encoder_branch(m: &TokenSequence, level: &LevelParams) -> Result<TokenSequence> {
    let mut x = pooling_positional_encoding(m)?;
    for layer in &level.layers {
        let att = st_attention(x.tokens(), &layer.attention, &layer.shrinkage)?;
        let a = ops::add(x.tokens(), &att)?;
        let ffn = ops::linear(&ops::relu(&ops::linear(&a, &layer.ffn1)?), &layer.ffn2)?;
        x = TokenSequence::new(ops::add(&a, &ffn)?, x.grid())?;
    }
    Ok(x)
}

/// Top-down fusion: the coarsest branch passes its lateral; each finer level
/// adds the nearest-neighbor upsampling of the level above, then passes its
/// own lateral. Per-level token counts are preserved.
pub fn multi_level_aggregate(
    b3: &TokenSequence,
    b4: &TokenSequence,
    b5: &TokenSequence,
    laterals: &[LinearParams; 3],
) -> Result<[TokenSequence; 3]> {
    let out5 = ops::linear(b5.tokens(), &laterals[2])?;
    let fused4 = ops::add(
        b4.tokens(),
        &ops::upsample_nearest(&out5, b5.grid(), b4.grid())?,
    )?;
    let out4 = ops::linear(&fused4, &laterals[1])?;
    let fused3 = ops::add(
        b3.tokens(),
        &ops::upsample_nearest(&out4, b4.grid(), b3.grid())?,
    )?;
    let out3 = ops::linear(&fused3, &laterals[0])?;
    Ok([
        TokenSequence::new(out3, b3.grid())?,
        TokenSequence::new(out4, b4.grid())?,
        TokenSequence::new(out5, b5.grid())?,
    ])
}

/// Branch outputs before and after aggregation.
#[derive(Debug, Clone)]
pub struct EncoderOutputs {
    pub branches: [TokenSequence; 3],
    pub aggregated: [TokenSequence; 3],
}

/// Embeds each level, runs the three branches (mutually independent), and
/// aggregates. Exposes the pre-aggregation branch outputs alongside the
/// fused ones.
pub fn encoder_forward_detailed(
    features: &[FeatureMap; 3],
    p: &EncoderParams,
) -> Result<EncoderOutputs> {
    for (i, f) in features.iter().enumerate() {
        if f.level() != 3 + i {
            return Err(Error::Config(format!(
                "features must arrive as levels 3, 4, 5; position {} holds level {}",
                i,
                f.level()
            )));
        }
    }
    let mut branches = Vec::with_capacity(3);
    for (f, level) in features.iter().zip(p.levels()) {
        let m = multi_level_patch_embed(f, level.embed())?;
        branches.push(encoder_branch(&m, level)?);
    }
    let aggregated = multi_level_aggregate(&branches[0], &branches[1], &branches[2], p.laterals())?;
    let branches: [TokenSequence; 3] = branches.try_into().expect("three levels");
    Ok(EncoderOutputs {
        branches,
        aggregated,
    })
}

/// The encoder proper: [`encoder_forward_detailed`] without the
/// pre-aggregation intermediates.
pub fn encoder_forward(features: &[FeatureMap; 3], p: &EncoderParams) -> Result<[TokenSequence; 3]> {
    Ok(encoder_forward_detailed(features, p)?.aggregated)
}

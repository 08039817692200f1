//! Cross-modal token mixing.
//!
//! Each available modality contributes one pooled token; a token-mixing MLP
//! lets modalities exchange information per channel, then a channel-mixing
//! MLP refines each token.

use rand::Rng;

use crate::cmae::{FeatureGrid, GridMask};
use crate::error::{Error, Result};
use crate::hetgraph::Modality;
use crate::nn::{LayerNorm, Mlp};
use crate::numeric::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// One pooled token per available modality, in canonical modality order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTokens<T> {
    pub modalities: Vec<Modality>,
    /// `M×C`.
    pub tokens: Tensor<T>,
}

/// Channel means over the visible cells of a latent grid.
pub fn pool_modality<T: Scalar>(latent: &FeatureGrid<T>, mask: &GridMask) -> Result<Tensor<T>> {
    if (latent.h(), latent.w()) != (mask.h, mask.w) {
        return Err(Error::dim("latent grid and mask disagree in size"));
    }
    let vis = mask.visible_cells();
    if vis.is_empty() {
        return Err(Error::dim("cannot pool a grid with no visible cells"));
    }
    let rows = latent.to_rows().gather_rows(&vis)?;
    let c = rows.last_dim();
    let inv = T::one() / T::from_usize_lossy(vis.len());
    let mut out = vec![T::zero(); c];
    for r in 0..rows.rows() {
        for (o, &v) in out.iter_mut().zip(rows.row(r)) {
            *o = *o + v * inv;
        }
    }
    Ok(Tensor::vector(out))
}

/// Token-mixing and channel-mixing MLPs for a fixed number of modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub tokens: usize,
    pub channels: usize,
    pub norm1: LayerNorm,
    /// Mixes along the modality axis, `M → M`.
    pub mlp2: Mlp,
    pub norm2: LayerNorm,
    /// Mixes along the channel axis, `C → C`.
    pub mlp3: Mlp,
}

impl FusionModel {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        tokens: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if tokens == 0 || channels == 0 {
            return Err(Error::config("fusion needs at least one token and one channel"));
        }
        Ok(Self {
            tokens,
            channels,
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), channels)?,
            mlp2: Mlp::new(store, &format!("{name}.mlp2"), tokens, 4 * tokens, tokens, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), channels)?,
            mlp3: Mlp::new(store, &format!("{name}.mlp3"), channels, 2 * channels, channels, rng)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.norm1.gamma, self.norm1.beta];
        out.extend(self.mlp2.params());
        out.extend([self.norm2.gamma, self.norm2.beta]);
        out.extend(self.mlp3.params());
        out
    }
}

/// `H_inter` for `M×C` tokens `h`.
///
/// Step 1 adds `MLP2(LN(H)ᵀ)` to `Hᵀ`, mixing modalities per channel. Step 2
/// transposes back and adds `MLP3(LN(·))`, mixing channels per modality.
/// Both layer norms run over the channel axis.
pub fn cross_fuse<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &FusionModel,
    h: Var,
    dropout: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    let (m, c) = g.value(h).dims2()?;
    if m != model.tokens || c != model.channels {
        return Err(Error::dim(format!(
            "fusion model expects {}×{} tokens, got {m}×{c}",
            model.tokens, model.channels
        )));
    }
    let n1 = model.norm1.forward(g, store, h)?;
    let n1t = g.transpose(n1)?;
    let mix = model.mlp2.forward(g, store, n1t, dropout, training, rng)?;
    let ht = g.transpose(h)?;
    let step1 = g.add(ht, mix)?;

    let back = g.transpose(step1)?;
    let n2 = model.norm2.forward(g, store, back)?;
    let mix = model.mlp3.forward(g, store, n2, dropout, training, rng)?;
    g.add(back, mix)
}

/// `H″ = H ⊕ H_inter`.
pub fn skip_connect<T: Scalar>(g: &mut Graph<T>, h: Var, h_inter: Var) -> Result<Var> {
    g.add(h, h_inter)
}

//! Convolutional masked autoencoder over gridded node embeddings.
//!
//! The encoder sees only visible cells (submanifold sparse convolutions over a
//! `V×C` row matrix); the decoder fills masked cells with a learned token and
//! runs one dense block before projecting back to the target width.

mod grn;
mod sparse;

pub use grn::{grn_aggregate, grn_calibrate, grn_normalize, GRN_EPS};
pub use sparse::{depthwise_conv_rows, sparse_conv_rows, Neighborhood, TAPS};

use rand::Rng;

use crate::error::{Error, Result};
use crate::hetgraph::Layout;
use crate::nn::{Dense, LayerNorm, Prelu};
use crate::numeric::{rng_from_seed, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// Where a grid's cells came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridLayout {
    /// Patch positions of a slide.
    Pathology,
    /// Unordered nodes laid out as a single `1×N` row.
    Sequence,
}

/// Channels-last `h×w×c` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    pub data: Tensor<T>,
    pub layout: GridLayout,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn new(data: Tensor<T>, layout: GridLayout) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::dim(format!("feature grid must be h×w×c, got {:?}", data.shape())));
        }
        Ok(Self { data, layout })
    }

    /// Wraps a row-major `(h·w)×c` matrix.
    pub fn from_rows(rows: Tensor<T>, h: usize, w: usize, layout: GridLayout) -> Result<Self> {
        let c = rows.last_dim();
        if rows.rows() != h * w {
            return Err(Error::dim(format!("{} rows cannot fill a {h}×{w} grid", rows.rows())));
        }
        Self::new(rows.reshape(&[h, w, c])?, layout)
    }

    pub fn h(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn w(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    /// Row-major `(h·w)×c` view.
    pub fn to_rows(&self) -> Tensor<T> {
        self.data.clone().reshape(&[self.h() * self.w(), self.channels()]).expect("sizes agree")
    }

    pub fn cell(&self, y: usize, x: usize) -> &[T] {
        let c = self.channels();
        let i = (y * self.w() + x) * c;
        &self.data.data()[i..i + c]
    }
}

/// Grid shape for `n` nodes under a graph layout.
pub fn grid_dims(layout: Layout, n: usize) -> Result<(usize, usize, GridLayout)> {
    match layout {
        Layout::Grid { h, w } if h * w == n => Ok((h, w, GridLayout::Pathology)),
        Layout::Grid { h, w } => {
            Err(Error::dim(format!("{n} node embeddings cannot fill a {h}×{w} patch grid")))
        }
        Layout::Sequence => Ok((1, n, GridLayout::Sequence)),
    }
}

/// Places node embeddings at their grid positions; unstructured graphs become
/// a single row.
pub fn grid_from_embedding<T: Scalar>(h_nodes: &Tensor<T>, layout: Layout) -> Result<FeatureGrid<T>> {
    let (n, _) = h_nodes.dims2()?;
    let (h, w, gl) = grid_dims(layout, n)?;
    FeatureGrid::from_rows(h_nodes.clone(), h, w, gl)
}

/// Which cells the encoder may see.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMask {
    pub h: usize,
    pub w: usize,
    /// Row-major visibility flags.
    pub visible: Vec<bool>,
    pub ratio: f64,
    pub seed: u64,
}

impl GridMask {
    /// Masks each cell independently with probability `ratio`. If every cell
    /// is drawn masked, cell 0 is kept.
    pub fn random(h: usize, w: usize, ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::config(format!("mask ratio must lie in [0, 1), got {ratio}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::dim("grid must have at least one cell"));
        }
        let mut rng = rng_from_seed(seed);
        let mut visible: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() >= ratio).collect();
        if !visible.iter().any(|&v| v) {
            visible[0] = true;
        }
        Ok(Self { h, w, visible, ratio, seed })
    }

    pub fn all_visible(h: usize, w: usize) -> Self {
        Self { h, w, visible: vec![true; h * w], ratio: 0.0, seed: 0 }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn visible_cells(&self) -> Vec<usize> {
        (0..self.cells()).filter(|&i| self.visible[i]).collect()
    }

    pub fn masked_cells(&self) -> Vec<usize> {
        (0..self.cells()).filter(|&i| !self.visible[i]).collect()
    }

    pub fn neighborhood(&self) -> Neighborhood {
        Neighborhood::new(self.h, self.w, &self.visible).expect("mask matches its own grid")
    }
}

pub fn mask_grid<T: Scalar>(grid: &FeatureGrid<T>, ratio: f64, seed: u64) -> Result<GridMask> {
    GridMask::random(grid.h(), grid.w(), ratio, seed)
}

fn check_mask<T: Scalar>(grid: &FeatureGrid<T>, mask: &GridMask) -> Result<()> {
    if (grid.h(), grid.w()) != (mask.h, mask.w) {
        return Err(Error::dim(format!(
            "mask {}×{} does not match grid {}×{}",
            mask.h,
            mask.w,
            grid.h(),
            grid.w()
        )));
    }
    Ok(())
}

fn scatter_zeros<T: Scalar>(rows: &Tensor<T>, mask: &GridMask, layout: GridLayout) -> Result<FeatureGrid<T>> {
    let c = rows.last_dim();
    let mut full = Tensor::zeros(&[mask.cells(), c]);
    for (r, i) in mask.visible_cells().into_iter().enumerate() {
        full.row_mut(i).copy_from_slice(rows.row(r));
    }
    FeatureGrid::from_rows(full, mask.h, mask.w, layout)
}

/// Submanifold 3×3 convolution of a full grid; masked cells come out 0 and
/// their input values are never read.
pub fn sparse_conv_forward<T: Scalar>(
    x: &FeatureGrid<T>,
    mask: &GridMask,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<FeatureGrid<T>> {
    check_mask(x, mask)?;
    let nb = mask.neighborhood();
    let rows = x.to_rows().gather_rows(&nb.cells)?;
    let mut out = sparse_conv_rows(&rows, &nb, kernel)?;
    let cout = out.last_dim();
    if bias.len() != cout {
        return Err(Error::dim(format!("bias {:?} does not match {cout} channels", bias.shape())));
    }
    for r in 0..out.rows() {
        for (o, &b) in out.row_mut(r).iter_mut().zip(bias.data()) {
            *o = *o + b;
        }
    }
    scatter_zeros(&out, mask, x.layout)
}

/// One ConvNeXt-style block with GRN.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaeBlock {
    /// Depthwise kernel `[3, 3, C]`.
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub norm: LayerNorm,
    pub expand: Dense,
    pub act: Prelu,
    pub grn_gamma: ParamId,
    pub grn_beta: ParamId,
    pub contract: Dense,
}

/// Expansion factor of the pointwise layers.
pub const EXPANSION: usize = 4;

/// Blocks per encoder stage at depth multiplier 1.
pub const STAGE_RATIO: [usize; 4] = [1, 1, 3, 1];

impl CmaeBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = EXPANSION * c;
        Ok(Self {
            dw_kernel: store.add_normal(format!("{name}.dw.k"), &[3, 3, c], 1.0 / 3.0, rng)?,
            dw_bias: store.add_full(format!("{name}.dw.b"), &[c], 0.0)?,
            norm: LayerNorm::new(store, &format!("{name}.ln"), c)?,
            expand: Dense::new(store, &format!("{name}.pw1"), c, hidden, rng)?,
            act: Prelu::new(store, &format!("{name}.act"))?,
            grn_gamma: store.add_full(format!("{name}.grn.gamma"), &[hidden], 0.0)?,
            grn_beta: store.add_full(format!("{name}.grn.beta"), &[hidden], 0.0)?,
            // small residual branch so stacked blocks start close to identity
            contract: Dense::with_std(
                store,
                &format!("{name}.pw2"),
                hidden,
                c,
                0.1 / (hidden as f64).sqrt(),
                rng,
            )?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.dw_kernel,
            self.dw_bias,
            self.norm.gamma,
            self.norm.beta,
            self.expand.w,
            self.expand.b,
            self.act.slope,
            self.grn_gamma,
            self.grn_beta,
            self.contract.w,
            self.contract.b,
        ]
    }
}

/// GRN over the rows of `x`: aggregate, normalize, recalibrate.
fn grn_block<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &CmaeBlock,
    x: Var,
    literal: bool,
) -> Result<Var> {
    let og = g.grn_aggregate(x)?;
    let n = g.grn_normalize(og);
    if literal {
        return g.scale_columns(x, n);
    }
    let gamma = g.param(store, block.grn_gamma);
    let beta = g.param(store, block.grn_beta);
    g.grn_calibrate(x, n, gamma, beta)
}

/// depthwise conv → LN → expand → PReLU → GRN → contract → residual, on the
/// rows listed by `nb`.
pub fn cmae_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &CmaeBlock,
    x: Var,
    nb: &Neighborhood,
    literal_grn: bool,
) -> Result<Var> {
    let k = g.param(store, block.dw_kernel);
    let b = g.param(store, block.dw_bias);
    let y = g.depthwise_conv(x, nb, k)?;
    let y = g.add_row_bias(y, b)?;
    let y = block.norm.forward(g, store, y)?;
    let y = block.expand.forward(g, store, y)?;
    let y = block.act.forward(g, store, y)?;
    let y = grn_block(g, store, block, y, literal_grn)?;
    let y = block.contract.forward(g, store, y)?;
    g.add(x, y)
}

/// Sparse encoder, mask token and dense decoder of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaeModel {
    /// Full 3×3 kernel `[3, 3, Din, C]` lifting inputs to the working width.
    pub stem_kernel: ParamId,
    pub stem_bias: ParamId,
    pub stages: Vec<Vec<CmaeBlock>>,
    pub mask_token: ParamId,
    pub decoder: CmaeBlock,
    pub head: Dense,
    pub width: usize,
    pub literal_grn: bool,
}

impl CmaeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim_in: usize,
        width: usize,
        dim_out: usize,
        depth: usize,
        literal_grn: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("cmae.depth must be at least 1"));
        }
        if width == 0 {
            return Err(Error::config("cmae.width must be at least 1"));
        }
        let stem_std = (1.0 / (TAPS * dim_in) as f64).sqrt();
        let stem_kernel = store.add_normal(format!("{name}.stem.k"), &[3, 3, dim_in, width], stem_std, rng)?;
        let stem_bias = store.add_full(format!("{name}.stem.b"), &[width], 0.0)?;
        let mut stages = Vec::with_capacity(STAGE_RATIO.len());
        for (s, &r) in STAGE_RATIO.iter().enumerate() {
            let blocks = (0..r * depth)
                .map(|b| CmaeBlock::new(store, &format!("{name}.s{s}.b{b}"), width, rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        let mask_token = store.add_full(format!("{name}.mask_token"), &[width], 0.0)?;
        let decoder = CmaeBlock::new(store, &format!("{name}.dec"), width, rng)?;
        let head = Dense::new(store, &format!("{name}.head"), width, dim_out, rng)?;
        Ok(Self { stem_kernel, stem_bias, stages, mask_token, decoder, head, width, literal_grn })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &CmaeBlock> {
        self.stages.iter().flatten()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.stem_kernel, self.stem_bias];
        for b in self.blocks() {
            out.extend(b.params());
        }
        out.push(self.mask_token);
        out.extend(self.decoder.params());
        out.extend([self.head.w, self.head.b]);
        out
    }
}

/// What one masked-autoencoder pass produces.
#[derive(Debug, Clone)]
pub struct CmaeOutput {
    /// Encoder output at visible cells, `V×C`, rows ordered as `visible`.
    pub latent: Var,
    /// Full-grid reconstruction, `(h·w)×Dout`.
    pub reconstruction: Var,
    pub visible: Vec<usize>,
}

/// Sparse encoder over the visible rows of `x` (`(h·w)×Din`).
pub fn cmae_encode<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &CmaeModel,
    x: Var,
    mask: &GridMask,
) -> Result<(Var, Neighborhood)> {
    if g.value(x).rows() != mask.cells() {
        return Err(Error::dim(format!(
            "{} input rows for a {}×{} grid",
            g.value(x).rows(),
            mask.h,
            mask.w
        )));
    }
    let nb = mask.neighborhood();
    let xv = g.gather_rows(x, &nb.cells)?;
    let k = g.param(store, model.stem_kernel);
    let b = g.param(store, model.stem_bias);
    let h = g.sparse_conv(xv, &nb, k)?;
    let mut h = g.add_row_bias(h, b)?;
    for block in model.blocks() {
        h = cmae_block_forward(g, store, block, h, &nb, model.literal_grn)?;
    }
    Ok((h, nb))
}

pub fn cmae_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &CmaeModel,
    x: Var,
    mask: &GridMask,
) -> Result<CmaeOutput> {
    let (latent, nb) = cmae_encode(g, store, model, x, mask)?;
    let token = g.param(store, model.mask_token);
    let full = g.scatter_with_token(latent, token, &nb.cells, mask.cells())?;
    let dense = Neighborhood::dense(mask.h, mask.w);
    let d = cmae_block_forward(g, store, &model.decoder, full, &dense, model.literal_grn)?;
    let reconstruction = model.head.forward(g, store, d)?;
    Ok(CmaeOutput { latent, reconstruction, visible: nb.cells })
}

fn masked_mse_value<T: Scalar>(recon: &Tensor<T>, target: &Tensor<T>, masked: &[usize]) -> Result<T> {
    recon.check_same(target)?;
    if masked.is_empty() {
        return Ok(T::zero());
    }
    let c = recon.last_dim();
    let mut s = T::zero();
    for &i in masked {
        for (&a, &b) in recon.row(i).iter().zip(target.row(i)) {
            s = s + (a - b) * (a - b);
        }
    }
    Ok(s / T::from_usize_lossy(masked.len() * c))
}

/// Mean squared error over the masked cells only; 0 when nothing is masked.
pub fn cmae_loss<T: Scalar>(recon: &Tensor<T>, original: &Tensor<T>, mask: &GridMask) -> Result<T> {
    masked_mse_value(recon, original, &mask.masked_cells())
}

impl<T: Scalar> Graph<T> {
    /// Differentiable [`cmae_loss`] against a fixed target.
    pub fn masked_mse(&mut self, recon: Var, target: &Tensor<T>, masked: &[usize]) -> Result<Var> {
        let v = masked_mse_value(self.value(recon), target, masked)?;
        let target = target.clone();
        let masked = masked.to_vec();
        Ok(self.push(
            Tensor::vector(vec![v]),
            &[recon],
            Box::new(move |c| {
                let r = c.inputs[0];
                let mut gr = Tensor::zeros(r.shape());
                if masked.is_empty() {
                    return vec![Some(gr)];
                }
                let k = T::lit(2.0) * c.grad.data()[0]
                    / T::from_usize_lossy(masked.len() * r.last_dim());
                for &i in &masked {
                    let row: Vec<T> =
                        r.row(i).iter().zip(target.row(i)).map(|(&a, &b)| k * (a - b)).collect();
                    gr.row_mut(i).copy_from_slice(&row);
                }
                vec![Some(gr)]
            }),
        ))
    }
}

//! Submanifold sparse 3×3 convolutions over the visible cells of a grid.
//!
//! Activations are stored as a `V×C` matrix holding only visible cells, in
//! ascending cell order. Masked cells are never materialized, so they cannot
//! leak into any output.

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Number of taps in a 3×3 kernel.
pub const TAPS: usize = 9;

/// For every visible cell, the visible-row index of each 3×3 neighbor.
///
/// Tap `k = (dy + 1)·3 + (dx + 1)` for offsets `dy, dx ∈ {−1, 0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub h: usize,
    pub w: usize,
    /// Flat cell index of each visible row.
    pub cells: Vec<usize>,
    pub taps: Vec<[Option<u32>; TAPS]>,
}

impl Neighborhood {
    /// `visible[i]` tells whether flat cell `i` (row-major) is active.
    pub fn new(h: usize, w: usize, visible: &[bool]) -> Result<Self> {
        if visible.len() != h * w {
            return Err(Error::dim(format!(
                "mask has {} cells, grid is {h}×{w}",
                visible.len()
            )));
        }
        let mut row_of = vec![None; h * w];
        let mut cells = Vec::new();
        for (i, _) in visible.iter().enumerate().filter(|(_, &v)| v) {
            row_of[i] = Some(cells.len() as u32);
            cells.push(i);
        }
        let taps = cells
            .iter()
            .map(|&cell| {
                let (y, x) = ((cell / w) as isize, (cell % w) as isize);
                let mut t = [None; TAPS];
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                            t[((dy + 1) * 3 + dx + 1) as usize] = row_of[ny as usize * w + nx as usize];
                        }
                    }
                }
                t
            })
            .collect();
        Ok(Self { h, w, cells, taps })
    }

    pub fn dense(h: usize, w: usize) -> Self {
        Self::new(h, w, &vec![true; h * w]).expect("sizes agree")
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

fn check_rows<T: Scalar>(x: &Tensor<T>, nb: &Neighborhood) -> Result<(usize, usize)> {
    let (v, c) = x.dims2()?;
    if v != nb.len() {
        return Err(Error::dim(format!("{v} activation rows for {} visible cells", nb.len())));
    }
    Ok((v, c))
}

/// Gathers each row's 3×3 neighborhood into `V×(9·C)`; absent taps are 0.
fn im2col<T: Scalar>(x: &Tensor<T>, nb: &Neighborhood) -> Tensor<T> {
    let c = x.last_dim();
    let mut cols = vec![T::zero(); nb.len() * TAPS * c];
    for (r, taps) in nb.taps.iter().enumerate() {
        let base = r * TAPS * c;
        for (k, t) in taps.iter().enumerate() {
            if let Some(src) = t {
                cols[base + k * c..base + (k + 1) * c].copy_from_slice(x.row(*src as usize));
            }
        }
    }
    Tensor::new(vec![nb.len(), TAPS * c], cols).expect("sizes agree")
}

fn col2im<T: Scalar>(cols: &Tensor<T>, nb: &Neighborhood, c: usize) -> Tensor<T> {
    let mut gx = Tensor::zeros(&[nb.len(), c]);
    for (r, taps) in nb.taps.iter().enumerate() {
        let row = cols.row(r);
        for (k, t) in taps.iter().enumerate() {
            if let Some(src) = t {
                let dst = gx.row_mut(*src as usize);
                for (d, &v) in dst.iter_mut().zip(&row[k * c..(k + 1) * c]) {
                    *d = *d + v;
                }
            }
        }
    }
    gx
}

fn check_kernel<T: Scalar>(kernel: &Tensor<T>, cin: usize) -> Result<usize> {
    match kernel.shape() {
        [3, 3, ci, co] if *ci == cin => Ok(*co),
        s => Err(Error::dim(format!("conv kernel {s:?} does not fit 3×3×{cin}×cout"))),
    }
}

/// Submanifold convolution on visible rows: `V×Cin → V×Cout`, no bias.
pub fn sparse_conv_rows<T: Scalar>(x: &Tensor<T>, nb: &Neighborhood, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, cin) = check_rows(x, nb)?;
    let cout = check_kernel(kernel, cin)?;
    let k2 = kernel.clone().reshape(&[TAPS * cin, cout])?;
    im2col(x, nb).matmul(&k2)
}

fn check_dw_kernel<T: Scalar>(kernel: &Tensor<T>, c: usize) -> Result<()> {
    match kernel.shape() {
        [3, 3, cc] if *cc == c => Ok(()),
        s => Err(Error::dim(format!("depthwise kernel {s:?} does not fit 3×3×{c}"))),
    }
}

/// Depthwise submanifold convolution on visible rows, no bias.
pub fn depthwise_conv_rows<T: Scalar>(x: &Tensor<T>, nb: &Neighborhood, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = check_rows(x, nb)?;
    check_dw_kernel(kernel, c)?;
    let kd = kernel.data();
    let mut out = Tensor::zeros(&[nb.len(), c]);
    for (r, taps) in nb.taps.iter().enumerate() {
        let o = out.row_mut(r);
        for (k, t) in taps.iter().enumerate() {
            if let Some(src) = t {
                let wk = &kd[k * c..(k + 1) * c];
                for ((o, &xv), &wv) in o.iter_mut().zip(x.row(*src as usize)).zip(wk) {
                    *o = *o + xv * wv;
                }
            }
        }
    }
    Ok(out)
}

impl<T: Scalar> Graph<T> {
    /// Full 3×3 submanifold convolution, kernel `[3, 3, Cin, Cout]`.
    pub fn sparse_conv(&mut self, x: Var, nb: &Neighborhood, kernel: Var) -> Result<Var> {
        let (_, cin) = check_rows(self.value(x), nb)?;
        let cout = check_kernel(self.value(kernel), cin)?;
        let cols = im2col(self.value(x), nb);
        let k2 = self.value(kernel).clone().reshape(&[TAPS * cin, cout])?;
        let out = cols.matmul(&k2)?;
        let nb = nb.clone();
        Ok(self.push(
            out,
            &[x, kernel],
            Box::new(move |c| {
                let gx = c.needs[0].then(|| {
                    let gcols = c.grad.matmul_t(false, &k2, true).expect("shape");
                    col2im(&gcols, &nb, cin)
                });
                let gk = c.needs[1].then(|| {
                    cols.matmul_t(true, c.grad, false)
                        .expect("shape")
                        .reshape(&[3, 3, cin, cout])
                        .expect("shape")
                });
                vec![gx, gk]
            }),
        ))
    }

    /// Depthwise 3×3 submanifold convolution, kernel `[3, 3, C]`.
    pub fn depthwise_conv(&mut self, x: Var, nb: &Neighborhood, kernel: Var) -> Result<Var> {
        let out = depthwise_conv_rows(self.value(x), nb, self.value(kernel))?;
        let nb = nb.clone();
        Ok(self.push(
            out,
            &[x, kernel],
            Box::new(move |c| {
                let (x, kernel) = (c.inputs[0], c.inputs[1]);
                let ch = x.last_dim();
                let kd = kernel.data();
                let mut gx = Tensor::zeros(x.shape());
                let mut gk = Tensor::zeros(kernel.shape());
                for (r, taps) in nb.taps.iter().enumerate() {
                    let g = c.grad.row(r);
                    for (k, t) in taps.iter().enumerate() {
                        let Some(src) = t else { continue };
                        let src = *src as usize;
                        let wk = &kd[k * ch..(k + 1) * ch];
                        let xr = x.row(src);
                        let gkk = &mut gk.data_mut()[k * ch..(k + 1) * ch];
                        for j in 0..ch {
                            gkk[j] = gkk[j] + g[j] * xr[j];
                        }
                        let gxr = gx.row_mut(src);
                        for j in 0..ch {
                            gxr[j] = gxr[j] + g[j] * wk[j];
                        }
                    }
                }
                vec![c.needs[0].then_some(gx), c.needs[1].then_some(gk)]
            }),
        ))
    }

    /// Selected rows of a matrix, in the given order.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let out = self.value(x).gather_rows(idx)?;
        let idx = idx.to_vec();
        Ok(self.push(
            out,
            &[x],
            Box::new(move |c| {
                let mut g = Tensor::zeros(c.inputs[0].shape());
                for (r, &i) in idx.iter().enumerate() {
                    let src = c.grad.row(r);
                    for (d, &v) in g.row_mut(i).iter_mut().zip(src) {
                        *d = *d + v;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Full `cells×C` matrix with visible rows taken from `x` (ordered as
    /// `visible`) and every other row set to `token`.
    pub fn scatter_with_token(&mut self, x: Var, token: Var, visible: &[usize], cells: usize) -> Result<Var> {
        let (v, c) = self.value(x).dims2()?;
        if v != visible.len() || self.value(token).len() != c {
            return Err(Error::dim(format!(
                "scatter of {:?} with token {:?} over {} visible cells",
                self.value(x).shape(),
                self.value(token).shape(),
                visible.len()
            )));
        }
        let mut is_vis = vec![false; cells];
        let mut out = Tensor::zeros(&[cells, c]);
        for (r, &i) in visible.iter().enumerate() {
            if i >= cells {
                return Err(Error::dim(format!("visible cell {i} outside {cells} cells")));
            }
            is_vis[i] = true;
            out.row_mut(i).copy_from_slice(self.value(x).row(r));
        }
        let tok = self.value(token).data().to_vec();
        for (i, _) in is_vis.iter().enumerate().filter(|(_, &v)| !v) {
            out.row_mut(i).copy_from_slice(&tok);
        }
        let visible = visible.to_vec();
        Ok(self.push(
            out,
            &[x, token],
            Box::new(move |cx| {
                let gx = cx.needs[0].then(|| {
                    let mut g = Tensor::zeros(cx.inputs[0].shape());
                    for (r, &i) in visible.iter().enumerate() {
                        g.row_mut(r).copy_from_slice(cx.grad.row(i));
                    }
                    g
                });
                let gt = cx.needs[1].then(|| {
                    let mut s = vec![T::zero(); c];
                    for (i, _) in is_vis.iter().enumerate().filter(|(_, &v)| !v) {
                        for (a, &v) in s.iter_mut().zip(cx.grad.row(i)) {
                            *a = *a + v;
                        }
                    }
                    Tensor::new(cx.inputs[1].shape().to_vec(), s).expect("shape")
                });
                vec![gx, gt]
            }),
        ))
    }
}

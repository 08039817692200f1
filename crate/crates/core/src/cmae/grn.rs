//! Global response normalization over the rows of a `V×C` activation.

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Guard added to the channel-norm sum.
pub const GRN_EPS: f64 = 1e-6;

/// Per-channel L2 norm over all rows.
pub fn grn_aggregate<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = x.dims2()?;
    let mut ss = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for (s, &v) in ss.iter_mut().zip(row) {
            *s = *s + v * v;
        }
    }
    Ok(Tensor::vector(ss.into_iter().map(|s| s.sqrt()).collect()))
}

/// `og / (Σ og + ε)`.
pub fn grn_normalize<T: Scalar>(og: &Tensor<T>) -> Tensor<T> {
    let denom = og.sum() + T::lit(GRN_EPS);
    og.map(|v| v / denom)
}

fn check_channels<T: Scalar>(x: &Tensor<T>, v: &Tensor<T>, what: &str) -> Result<usize> {
    let c = x.last_dim();
    if v.len() != c {
        return Err(Error::dim(format!("{what} {:?} does not match {c} channels", v.shape())));
    }
    Ok(c)
}

/// `gamma·(x·n·C) + beta + x`, channel-wise.
pub fn grn_calibrate<T: Scalar>(
    x: &Tensor<T>,
    n: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    let c = check_channels(x, n, "normalizer")?;
    check_channels(x, gamma, "gamma")?;
    check_channels(x, beta, "beta")?;
    let cn = T::from_usize_lossy(c);
    let (nd, gd, bd) = (n.data(), gamma.data(), beta.data());
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        for j in 0..c {
            row[j] = gd[j] * (row[j] * nd[j] * cn) + bd[j] + row[j];
        }
    }
    Ok(out)
}

impl<T: Scalar> Graph<T> {
    pub fn grn_aggregate(&mut self, x: Var) -> Result<Var> {
        let out = grn_aggregate(self.value(x))?;
        Ok(self.push(
            out,
            &[x],
            Box::new(|c| {
                let og = c.output.data();
                let g = c.grad.data();
                let ch = og.len();
                let mut gx = c.inputs[0].clone();
                for row in gx.data_mut().chunks_mut(ch) {
                    for j in 0..ch {
                        // d‖x_j‖/dx = x/‖x‖, taken as 0 at the origin
                        row[j] = if og[j] > T::zero() { g[j] * row[j] / og[j] } else { T::zero() };
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn grn_normalize(&mut self, og: Var) -> Var {
        let out = grn_normalize(self.value(og));
        self.push(
            out,
            &[og],
            Box::new(|c| {
                let denom = c.inputs[0].sum() + T::lit(GRN_EPS);
                let dot: T = c.grad.data().iter().zip(c.output.data()).map(|(&g, &n)| g * n).sum();
                vec![Some(c.grad.map(|g| (g - dot) / denom))]
            }),
        )
    }

    pub fn grn_calibrate(&mut self, x: Var, n: Var, gamma: Var, beta: Var) -> Result<Var> {
        let out = grn_calibrate(self.value(x), self.value(n), self.value(gamma), self.value(beta))?;
        Ok(self.push(
            out,
            &[x, n, gamma, beta],
            Box::new(|c| {
                let (x, n, gamma) = (c.inputs[0], c.inputs[1].data(), c.inputs[2].data());
                let ch = n.len();
                let cn = T::from_usize_lossy(ch);
                let mut gx = c.grad.clone();
                let mut gn = vec![T::zero(); ch];
                let mut gg = vec![T::zero(); ch];
                let mut gb = vec![T::zero(); ch];
                for (grow, xrow) in gx.data_mut().chunks_mut(ch).zip(x.data().chunks(ch)) {
                    for j in 0..ch {
                        let g = grow[j];
                        gn[j] = gn[j] + g * gamma[j] * xrow[j] * cn;
                        gg[j] = gg[j] + g * xrow[j] * n[j] * cn;
                        gb[j] = gb[j] + g;
                        grow[j] = g * (gamma[j] * n[j] * cn + T::one());
                    }
                }
                let shaped = |i: usize, v: Vec<T>| Tensor::new(c.inputs[i].shape().to_vec(), v).expect("shape");
                vec![Some(gx), Some(shaped(1, gn)), Some(shaped(2, gg)), Some(shaped(3, gb))]
            }),
        ))
    }

    /// Column-wise `x · n`, the uncorrected recalibration.
    pub fn scale_columns(&mut self, x: Var, n: Var) -> Result<Var> {
        let c = check_channels(self.value(x), self.value(n), "column scale")?;
        let nd = self.value(n).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (v, &s) in row.iter_mut().zip(&nd) {
                *v = *v * s;
            }
        }
        Ok(self.push(
            out,
            &[x, n],
            Box::new(move |cx| {
                let n = cx.inputs[1].data();
                let mut gx = cx.grad.clone();
                let mut gn = vec![T::zero(); c];
                for (grow, xrow) in gx.data_mut().chunks_mut(c).zip(cx.inputs[0].data().chunks(c)) {
                    for j in 0..c {
                        gn[j] = gn[j] + grow[j] * xrow[j];
                        grow[j] = grow[j] * n[j];
                    }
                }
                vec![Some(gx), Some(Tensor::new(cx.inputs[1].shape().to_vec(), gn).expect("shape"))]
            }),
        ))
    }
}

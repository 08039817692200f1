//! Differentiable primitives and the layer building blocks shared by every
//! model in the crate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Variance epsilon for layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x · w + b` for `x: N×Din`, `w: Din×Dout`, `b: Dout`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = x.matmul(w).map_err(|_| {
        Error::dim(format!("dense: input {:?} incompatible with weight {:?}", x.shape(), w.shape()))
    })?;
    add_bias_rows(&mut out, b)?;
    Ok(out)
}

fn add_bias_rows<T: Scalar>(out: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    let c = out.last_dim();
    if b.len() != c {
        return Err(Error::dim(format!("bias {:?} does not match width {c}", b.shape())));
    }
    for row in out.data_mut().chunks_mut(c) {
        for (v, &bb) in row.iter_mut().zip(b.data()) {
            *v = *v + bb;
        }
    }
    Ok(())
}

/// Symmetric normalization `D^-1/2 (A + I) D^-1/2` with self-loops added.
pub fn gcn_normalize<T: Scalar>(adj: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, m) = adj.dims2()?;
    if n != m || adj.rank() != 2 {
        return Err(Error::dim(format!("adjacency must be square, got {:?}", adj.shape())));
    }
    if adj.data().iter().any(|&v| v < T::zero()) {
        return Err(Error::Numeric("adjacency has negative entries".into()));
    }
    let mut a = adj.clone();
    for i in 0..n {
        a.set(i, i, a.at(i, i) + T::one());
    }
    let inv_sqrt: Vec<T> =
        (0..n).map(|i| T::one() / a.row(i).iter().copied().sum::<T>().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.at(i, j) * inv_sqrt[i] * inv_sqrt[j];
            a.set(i, j, v);
        }
    }
    Ok(a)
}

/// `Â · x · w` with `Â` the normalized adjacency.
pub fn gcn_forward<T: Scalar>(adj: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let norm = gcn_normalize(adj)?;
    if x.rows() != norm.rows() {
        return Err(Error::dim(format!(
            "gcn: features {:?} do not match adjacency {:?}",
            x.shape(),
            adj.shape()
        )));
    }
    norm.matmul(&x.matmul(w)?)
}

/// Per-row normalization over the trailing axis followed by `gamma`/`beta`.
pub fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(layer_norm_parts(x, gamma, beta)?.0)
}

// Returns (output, normalized x̂, per-row 1/sqrt(var+eps)).
fn layer_norm_parts<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let c = x.last_dim();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(format!(
            "layer norm over width {c} with gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let eps = T::lit(LAYER_NORM_EPS);
    let cn = T::from_usize_lossy(c);
    let mut xhat = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.len() / c);
    for (hrow, orow) in xhat.data_mut().chunks_mut(c).zip(out.data_mut().chunks_mut(c)) {
        let mean = hrow.iter().copied().sum::<T>() / cn;
        let var = hrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for k in 0..c {
            hrow[k] = (hrow[k] - mean) * is;
            orow[k] = gamma.data()[k] * hrow[k] + beta.data()[k];
        }
    }
    Ok((out, xhat, inv_std))
}

pub fn prelu_forward<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Keep-mask scaled by `1/(1-rate)`; `None` means identity.
fn dropout_mask<T: Scalar>(
    len: usize,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Option<Vec<T>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    Ok(Some((0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect()))
}

pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    match dropout_mask::<T>(x.len(), rate, training, rng)? {
        None => Ok(x.clone()),
        Some(m) => Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&m).map(|(&v, &k)| v * k).collect(),
        ),
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let a_vec = self.value(a).rank() == 1;
        let b_vec = self.value(b).rank() == 1;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |c| {
                let ga = c.needs[0].then(|| {
                    let g = c.grad.matmul_t(false, c.inputs[1], true).expect("matmul grad");
                    if a_vec {
                        g.reshape(c.inputs[0].shape()).expect("shape")
                    } else {
                        g
                    }
                });
                let gb = c.needs[1].then(|| {
                    let g = c.inputs[0].matmul_t(true, c.grad, false).expect("matmul grad");
                    if b_vec {
                        g.reshape(c.inputs[1].shape()).expect("shape")
                    } else {
                        g
                    }
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Product with a fixed left matrix: `m · x`.
    pub fn left_mul_const(&mut self, m: &Tensor<T>, x: Var) -> Result<Var> {
        let out = m.matmul(self.value(x))?;
        let m = m.clone();
        Ok(self.push(
            out,
            &[x],
            Box::new(move |c| vec![Some(m.matmul_t(true, c.grad, false).expect("grad"))]),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, &[a, b], Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.map(|v| -v))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.zip_map(c.inputs[1], |g, y| g * y).expect("shape")),
                    c.needs[1].then(|| c.grad.zip_map(c.inputs[0], |g, x| g * x).expect("shape")),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, &[a], Box::new(move |c| vec![Some(c.grad.scale(s))]))
    }

    /// Sum of a list of same-shaped nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) =
            vars.split_first().ok_or_else(|| Error::dim("add_all needs at least one input"))?;
        let mut out = self.value(first).clone();
        for &v in rest {
            self.value(v).check_same(&out)?;
            out.add_assign(self.value(v));
        }
        let n = vars.len();
        Ok(self.push(out, vars, Box::new(move |c| vec![Some(c.grad.clone()); n])))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(
            out,
            &[a],
            Box::new(|c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.data()[0]))]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize_lossy(self.value(a).len());
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Column means of an `N×C` matrix, giving a length-`C` vector.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, cdim) = self.value(x).dims2()?;
        let inv = T::one() / T::from_usize_lossy(n);
        let mut out = vec![T::zero(); cdim];
        for row in self.value(x).data().chunks(cdim) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v * inv;
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            Tensor::vector(out),
            &[x],
            Box::new(move |c| {
                let mut g = Vec::with_capacity(n * cdim);
                for _ in 0..n {
                    g.extend(c.grad.data().iter().map(|&v| v * inv));
                }
                vec![Some(Tensor::new(shape.clone(), g).expect("shape"))]
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, &[a], Box::new(|c| vec![Some(c.grad.transpose().expect("2-d"))])))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let orig = self.value(a).shape().to_vec();
        Ok(self.push(
            out,
            &[a],
            Box::new(move |c| vec![Some(c.grad.clone().reshape(&orig).expect("shape"))]),
        ))
    }

    /// Adds a length-`C` bias to every row of an `N×C` matrix.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        add_bias_rows(&mut out, self.value(b))?;
        let cdim = out.last_dim();
        Ok(self.push(
            out,
            &[x, b],
            Box::new(move |c| {
                let gb = c.needs[1].then(|| {
                    let mut s = vec![T::zero(); cdim];
                    for row in c.grad.data().chunks(cdim) {
                        for (a, &v) in s.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    Tensor::new(c.inputs[1].shape().to_vec(), s).expect("shape")
                });
                vec![Some(c.grad.clone()), gb]
            }),
        ))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let h = self.matmul(x, w).map_err(|_| {
            Error::dim(format!("dense: input {xs:?} incompatible with weight {ws:?}"))
        })?;
        self.add_row_bias(h, b)
    }

    /// Graph convolution with a pre-normalized adjacency (see [`gcn_normalize`]).
    pub fn gcn(&mut self, adj_norm: &Tensor<T>, x: Var, w: Var) -> Result<Var> {
        if self.value(x).rows() != adj_norm.rows() {
            return Err(Error::dim(format!(
                "gcn: features {:?} do not match adjacency {:?}",
                self.value(x).shape(),
                adj_norm.shape()
            )));
        }
        let xw = self.matmul(x, w)?;
        self.left_mul_const(adj_norm, xw)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, xhat, inv_std) =
            layer_norm_parts(self.value(x), self.value(gamma), self.value(beta))?;
        let cdim = out.last_dim();
        Ok(self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |c| {
                let gamma = c.inputs[1].data();
                let cn = T::from_usize_lossy(cdim);
                let mut gx = Vec::with_capacity(c.grad.len());
                let mut gg = vec![T::zero(); cdim];
                let mut gbeta = vec![T::zero(); cdim];
                for ((dy, xh), &is) in
                    c.grad.data().chunks(cdim).zip(xhat.data().chunks(cdim)).zip(&inv_std)
                {
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for k in 0..cdim {
                        let d = dy[k] * gamma[k];
                        mean_d = mean_d + d;
                        mean_dx = mean_dx + d * xh[k];
                        gg[k] = gg[k] + dy[k] * xh[k];
                        gbeta[k] = gbeta[k] + dy[k];
                    }
                    mean_d = mean_d / cn;
                    mean_dx = mean_dx / cn;
                    for k in 0..cdim {
                        gx.push(is * (dy[k] * gamma[k] - mean_d - xh[k] * mean_dx));
                    }
                }
                vec![
                    Some(Tensor::new(c.inputs[0].shape().to_vec(), gx).expect("shape")),
                    Some(Tensor::new(c.inputs[1].shape().to_vec(), gg).expect("shape")),
                    Some(Tensor::new(c.inputs[2].shape().to_vec(), gbeta).expect("shape")),
                ]
            }),
        ))
    }

    /// Leaky rectifier with a learnable single-element slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(Error::dim("prelu slope must hold one value"));
        }
        let a = self.item(slope);
        let out = prelu_forward(self.value(x), a);
        Ok(self.push(
            out,
            &[x, slope],
            Box::new(move |c| {
                let gx = c.needs[0].then(|| {
                    c.grad
                        .zip_map(c.inputs[0], |g, v| if v >= T::zero() { g } else { g * a })
                        .expect("shape")
                });
                let gs = c.needs[1].then(|| {
                    let s: T = c
                        .grad
                        .data()
                        .iter()
                        .zip(c.inputs[0].data())
                        .filter(|(_, &v)| v < T::zero())
                        .map(|(&g, &v)| g * v)
                        .sum();
                    Tensor::new(c.inputs[1].shape().to_vec(), vec![s]).expect("shape")
                });
                vec![gx, gs]
            }),
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(
            out,
            &[x],
            Box::new(|c| {
                vec![Some(c.grad.zip_map(c.output, |g, y| g * (T::one() - y * y)).expect("shape"))]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(
            out,
            &[x],
            Box::new(|c| {
                vec![Some(c.grad.zip_map(c.output, |g, y| g * y * (T::one() - y)).expect("shape"))]
            }),
        )
    }

    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        let Some(mask) = dropout_mask::<T>(self.value(x).len(), rate, training, rng)? else {
            return Ok(x);
        };
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect(),
        )?;
        Ok(self.push(
            out,
            &[x],
            Box::new(move |c| {
                let g = c.grad.data().iter().zip(&mask).map(|(&g, &m)| g * m).collect();
                vec![Some(Tensor::new(c.grad.shape().to_vec(), g).expect("shape"))]
            }),
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let max = v.data().iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = v.data().iter().map(|&a| (a - max).exp()).collect();
        let s: T = e.iter().copied().sum();
        let out = Tensor::new(v.shape().to_vec(), e.into_iter().map(|a| a / s).collect())
            .expect("shape");
        self.push(
            out,
            &[x],
            Box::new(|c| {
                let dot: T = c.grad.data().iter().zip(c.output.data()).map(|(&g, &y)| g * y).sum();
                vec![Some(c.grad.zip_map(c.output, |g, y| y * (g - dot)).expect("shape"))]
            }),
        )
    }

    /// Single element `i` of a flat node, as a one-element vector.
    pub fn element(&mut self, x: Var, i: usize) -> Result<Var> {
        let v = self.value(x);
        if i >= v.len() {
            return Err(Error::dim(format!("index {i} out of range for {:?}", v.shape())));
        }
        let out = Tensor::scalar(v.data()[i]);
        Ok(self.push(
            out,
            &[x],
            Box::new(move |c| {
                let mut g = Tensor::zeros(c.inputs[0].shape());
                g.data_mut()[i] = c.grad.data()[0];
                vec![Some(g)]
            }),
        ))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let (r, cdim) = self.value(x).dims2()?;
        if i >= r {
            return Err(Error::dim(format!("row {i} out of range for {r} rows")));
        }
        let out = Tensor::vector(self.value(x).row(i).to_vec());
        Ok(self.push(
            out,
            &[x],
            Box::new(move |c| {
                let mut g = Tensor::zeros(c.inputs[0].shape());
                g.row_mut(i).copy_from_slice(&c.grad.data()[..cdim]);
                vec![Some(g)]
            }),
        ))
    }

    /// Stacks equally long flat nodes as rows; one-element inputs give a vector.
    pub fn stack(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or_else(|| Error::dim("stack needs at least one input"))?;
        let w = self.value(first).len();
        let mut data = Vec::with_capacity(w * vars.len());
        for &v in vars {
            if self.value(v).len() != w {
                return Err(Error::dim("stack inputs differ in length"));
            }
            data.extend_from_slice(self.value(v).data());
        }
        let shape = if w == 1 { vec![vars.len()] } else { vec![vars.len(), w] };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            vars,
            Box::new(move |c| {
                c.grad
                    .data()
                    .chunks(w)
                    .zip(&c.inputs)
                    .map(|(g, inp)| Some(Tensor::new(inp.shape().to_vec(), g.to_vec()).expect("shape")))
                    .collect()
            }),
        ))
    }

    /// `x · s` where `s` is a one-element node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim("mul_scalar needs a one-element factor"));
        }
        let k = self.item(s);
        let out = self.value(x).scale(k);
        Ok(self.push(
            out,
            &[x, s],
            Box::new(move |c| {
                let gx = c.needs[0].then(|| c.grad.scale(k));
                let gs = c.needs[1].then(|| {
                    let d: T = c.grad.data().iter().zip(c.inputs[0].data()).map(|(&g, &v)| g * v).sum();
                    Tensor::new(c.inputs[1].shape().to_vec(), vec![d]).expect("shape")
                });
                vec![gx, gs]
            }),
        ))
    }
}

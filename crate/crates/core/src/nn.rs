//! Parameter bundles for the layers every module reuses.

use rand::Rng;

use crate::error::Result;
use crate::numeric::{Graph, ParamId, ParamStore, Var};
use crate::scalar::Scalar;

/// Affine map `x·w + b` over the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    /// Gaussian weights with variance `1/din`, zero bias.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_std(store, name, din, dout, (1.0 / din as f64).sqrt(), rng)
    }

    /// Gaussian weights with an explicit standard deviation, zero bias.
    pub fn with_std<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_normal(format!("{name}.w"), &[din, dout], std, rng)?,
            b: store.add_full(format!("{name}.b"), &[dout], 0.0)?,
        })
    }

    pub fn zeros<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_full(format!("{name}.w"), &[din, dout], 0.0)?,
            b: store.add_full(format!("{name}.b"), &[dout], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.dense(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_full(format!("{name}.gamma"), &[c], 1.0)?,
            beta: store.add_full(format!("{name}.beta"), &[c], 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Learnable leaky-rectifier slope, initialized at 0.25.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prelu {
    pub slope: ParamId,
}

impl Prelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str) -> Result<Self> {
        Ok(Self { slope: store.add_full(format!("{name}.slope"), &[1], 0.25)? })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.param(store, self.slope);
        g.prelu(x, s)
    }
}

/// `dense → PReLU → dropout → dense`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub fc1: Dense,
    pub act: Prelu,
    pub fc2: Dense,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        hidden: usize,
        dout: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Dense::new(store, &format!("{name}.fc1"), din, hidden, rng)?,
            act: Prelu::new(store, &format!("{name}.act"))?,
            fc2: Dense::new(store, &format!("{name}.fc2"), hidden, dout, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        dropout: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = self.act.forward(g, store, h)?;
        let h = g.dropout(h, dropout, training, rng)?;
        self.fc2.forward(g, store, h)
    }

    /// Every parameter of the stack, in declaration order.
    pub fn params(&self) -> [ParamId; 5] {
        [self.fc1.w, self.fc1.b, self.act.slope, self.fc2.w, self.fc2.b]
    }
}

//! Meta-path feature-edge reconstruction.
//!
//! Per meta-path: drop edges at random, encode node features with a GCN over
//! the thinned graph, decode, rebuild the adjacency from latent inner
//! products and score it against the intact adjacency with a scaled cosine
//! error. Semantic attention weights the paths both for the loss and for the
//! embedding handed downstream.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hetgraph::{metapath_adjacency, HetGraph, MetaPath};
use crate::nn::{Dense, Prelu};
use crate::numeric::{derive_seed, gcn_normalize, rng_from_seed, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// Which entries of a meta-path adjacency survive masking.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask<T> {
    /// 0 where an edge was dropped, 1 elsewhere; symmetric.
    pub mask: Tensor<T>,
    pub rate: f64,
    pub seed: u64,
}

/// Drops each node pair's edges with probability `pe`. Both directions of a
/// pair share one draw, so the mask is symmetric.
pub fn mask_edges<T: Scalar>(a: &Tensor<T>, pe: f64, seed: u64) -> Result<(Tensor<T>, EdgeMask<T>)> {
    if !(0.0..1.0).contains(&pe) {
        return Err(Error::config(format!("edge masking rate must lie in [0, 1), got {pe}")));
    }
    let (n, m) = a.dims2()?;
    if n != m {
        return Err(Error::dim(format!("adjacency must be square, got {:?}", a.shape())));
    }
    let mut mask = Tensor::full(&[n, n], T::one());
    if pe > 0.0 {
        let mut rng = rng_from_seed(seed);
        for i in 0..n {
            for j in i + 1..n {
                if a.at(i, j) == T::zero() && a.at(j, i) == T::zero() {
                    continue;
                }
                if rng.random::<f64>() < pe {
                    mask.set(i, j, T::zero());
                    mask.set(j, i, T::zero());
                }
            }
        }
    }
    let masked = a.zip_map(&mask, |x, k| x * k)?;
    Ok((masked, EdgeMask { mask, rate: pe, seed }))
}

/// GCN encoder/decoder pair plus the semantic attention of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FerModel {
    pub encoder: Vec<ParamId>,
    pub encoder_act: Vec<Prelu>,
    pub decoder: Vec<ParamId>,
    pub decoder_act: Vec<Prelu>,
    /// Attention projection `W, b`.
    pub attention: Dense,
    /// Attention vector `q`, stored as a column.
    pub q: ParamId,
    pub tau: f64,
}

impl FerModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim_in: usize,
        dim_hidden: usize,
        attention_dim: usize,
        layers: usize,
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::config("fer.layers must be at least 1"));
        }
        if !(tau > 0.0) {
            return Err(Error::config(format!("fer.tau must be positive, got {tau}")));
        }
        let mut gcn_stack = |role: &str, first_in: usize| -> Result<(Vec<ParamId>, Vec<Prelu>)> {
            let mut ws = Vec::with_capacity(layers);
            let mut acts = Vec::with_capacity(layers - 1);
            for l in 0..layers {
                let din = if l == 0 { first_in } else { dim_hidden };
                let std = (1.0 / din as f64).sqrt();
                ws.push(store.add_normal(format!("{name}.{role}{l}.w"), &[din, dim_hidden], std, rng)?);
                if l + 1 < layers {
                    acts.push(Prelu::new(store, &format!("{name}.{role}{l}.act"))?);
                }
            }
            Ok((ws, acts))
        };
        let (encoder, encoder_act) = gcn_stack("enc", dim_in)?;
        let (decoder, decoder_act) = gcn_stack("dec", dim_hidden)?;
        let attention = Dense::new(store, &format!("{name}.att"), dim_hidden, attention_dim, rng)?;
        let q = store.add_normal(
            format!("{name}.att.q"),
            &[attention_dim, 1],
            (1.0 / attention_dim as f64).sqrt(),
            rng,
        )?;
        Ok(Self { encoder, encoder_act, decoder, decoder_act, attention, q, tau })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = self.encoder.clone();
        out.extend(self.encoder_act.iter().map(|p| p.slope));
        out.extend(&self.decoder);
        out.extend(self.decoder_act.iter().map(|p| p.slope));
        out.extend([self.attention.w, self.attention.b, self.q]);
        out
    }
}

fn gcn_stack<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    ws: &[ParamId],
    acts: &[Prelu],
    adj_norm: &Tensor<T>,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for (l, &w) in ws.iter().enumerate() {
        let w = g.param(store, w);
        h = g.gcn(adj_norm, h, w)?;
        if let Some(act) = acts.get(l) {
            h = act.forward(g, store, h)?;
        }
    }
    Ok(h)
}

/// Latent node embedding `H1 = f_E(Ã, X)`.
pub fn fer_encode<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &FerModel,
    masked_adj: &Tensor<T>,
    x: Var,
) -> Result<Var> {
    let norm = gcn_normalize(masked_adj)?;
    gcn_stack(g, store, &model.encoder, &model.encoder_act, &norm, x)
}

/// Decoded features `H2 = f_D(Ã, H1)` and the rebuilt adjacency
/// `sigmoid(H2·H2ᵀ)`.
pub fn fer_reconstruct<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &FerModel,
    masked_adj: &Tensor<T>,
    h1: Var,
) -> Result<(Var, Var)> {
    let norm = gcn_normalize(masked_adj)?;
    let h2 = gcn_stack(g, store, &model.decoder, &model.decoder_act, &norm, h1)?;
    let a_prime = inner_product_sigmoid(g, h2)?;
    Ok((h2, a_prime))
}

fn inner_product_sigmoid<T: Scalar>(g: &mut Graph<T>, h: Var) -> Result<Var> {
    let gram = g.value(h).matmul_t(false, g.value(h), true)?;
    // H·Hᵀ with grad (G + Gᵀ)·H
    let gram = g.push(
        gram,
        &[h],
        Box::new(|c| {
            let sym = c.grad.zip_map(&c.grad.transpose().expect("2-d"), |a, b| a + b).expect("square");
            vec![Some(sym.matmul(c.inputs[0]).expect("shape"))]
        }),
    );
    Ok(g.sigmoid(gram))
}

struct SceParts<T> {
    loss: T,
    /// Per included column: (index, 1 − cos, |target|, |recon|, cos).
    cols: Vec<(usize, T, T, T, T)>,
}

fn sce_parts<T: Scalar>(a: &Tensor<T>, a_prime: &Tensor<T>, tau: f64) -> Result<SceParts<T>> {
    a.check_same(a_prime)?;
    let (n, m) = a.dims2()?;
    let tau = T::lit(tau);
    let mut cols = Vec::new();
    let mut total = T::zero();
    for t in 0..m {
        let (mut xy, mut xx, mut yy) = (T::zero(), T::zero(), T::zero());
        for i in 0..n {
            let x = a.at(i, t);
            let y = a_prime.at(i, t);
            xy = xy + x * y;
            xx = xx + x * x;
            yy = yy + y * y;
        }
        if xx == T::zero() {
            continue;
        }
        let (nx, ny) = (xx.sqrt(), yy.sqrt());
        // sqrt of the product keeps cos exactly 1 when the columns coincide
        let cos = if ny == T::zero() { T::zero() } else { xy / (xx * yy).sqrt() };
        let d = (T::one() - cos).max(T::zero());
        total = total + d.powf(tau);
        cols.push((t, d, nx, ny, cos));
    }
    if cols.is_empty() {
        return Err(Error::LossUndefined("target adjacency has no nonzero column".into()));
    }
    Ok(SceParts { loss: total / T::from_usize_lossy(cols.len()), cols })
}

/// Scaled cosine error: mean over nonzero target columns of `(1 − cos)^τ`.
pub fn sce_loss<T: Scalar>(a: &Tensor<T>, a_prime: &Tensor<T>, tau: f64) -> Result<T> {
    Ok(sce_parts(a, a_prime, tau)?.loss)
}

impl<T: Scalar> Graph<T> {
    /// Differentiable [`sce_loss`] against a fixed target.
    pub fn sce_loss(&mut self, a: &Tensor<T>, a_prime: Var, tau: f64) -> Result<Var> {
        let parts = sce_parts(a, self.value(a_prime), tau)?;
        let a = a.clone();
        let k = T::from_usize_lossy(parts.cols.len());
        let cols = parts.cols;
        Ok(self.push(
            Tensor::vector(vec![parts.loss]),
            &[a_prime],
            Box::new(move |c| {
                let y = c.inputs[0];
                let n = y.rows();
                let tau_t = T::lit(tau);
                let up = c.grad.data()[0] / k;
                let mut gy = Tensor::zeros(y.shape());
                for &(t, d, nx, ny, cos) in &cols {
                    if ny == T::zero() {
                        continue;
                    }
                    // d/dd of d^τ; for τ < 1 the cusp at d = 0 gets a zero subgradient
                    let outer = if d > T::zero() {
                        tau_t * d.powf(tau_t - T::one())
                    } else if tau == 1.0 {
                        T::one()
                    } else {
                        T::zero()
                    };
                    let f = -up * outer;
                    for i in 0..n {
                        let dcos = a.at(i, t) / (nx * ny) - cos * y.at(i, t) / (ny * ny);
                        gy.set(i, t, gy.at(i, t) + f * dcos);
                    }
                }
                vec![Some(gy)]
            }),
        ))
    }
}

/// Softmax-normalized semantic attention over meta-path latents, as a
/// vector with one weight per path.
pub fn semantic_weights<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &FerModel,
    latents: &[Var],
) -> Result<Var> {
    if latents.is_empty() {
        return Err(Error::Schema("semantic attention needs at least one meta-path".into()));
    }
    let q = g.param(store, model.q);
    let mut scores = Vec::with_capacity(latents.len());
    for &h in latents {
        let proj = model.attention.forward(g, store, h)?;
        let act = g.tanh(proj);
        let pooled = g.mean_rows(act)?;
        let s = g.matmul(pooled, q)?;
        scores.push(g.reshape(s, &[1])?);
    }
    let stacked = g.stack(&scores)?;
    Ok(g.softmax(stacked))
}

/// `Σ_ψ w^ψ · I^ψ` over matching keys.
pub fn fer_loss<T: Scalar>(losses: &BTreeMap<String, T>, weights: &BTreeMap<String, T>) -> Result<T> {
    if !losses.keys().eq(weights.keys()) {
        return Err(Error::Schema("meta-path losses and weights cover different paths".into()));
    }
    Ok(losses.iter().map(|(k, &l)| weights[k] * l).sum())
}

/// Everything one modality's FER pass produces.
#[derive(Debug, Clone)]
pub struct FerOutput {
    /// Attention-weighted sum of path latents, `N×Dh`.
    pub embedding: Var,
    /// Per-path weights, length = number of paths.
    pub weights: Var,
    /// `I_MER`; `None` when the loss was not requested or every path is empty.
    pub loss: Option<Var>,
    pub latents: Vec<Var>,
}

/// Runs every meta-path of one graph.
///
/// With `pe > 0` each path is masked with a seed derived from `seed` and the
/// path index. Paths whose adjacency has no edges still contribute a latent
/// (self-loops only) but no reconstruction term.
#[allow(clippy::too_many_arguments)]
pub fn fer_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &FerModel,
    x: Var,
    paths: &[Tensor<T>],
    pe: f64,
    seed: u64,
    with_loss: bool,
) -> Result<FerOutput> {
    let mut latents = Vec::with_capacity(paths.len());
    let mut recon = Vec::with_capacity(paths.len());
    for (k, a) in paths.iter().enumerate() {
        let (masked, _) = mask_edges(a, pe, derive_seed(seed, k as u64))?;
        let h1 = fer_encode(g, store, model, &masked, x)?;
        latents.push(h1);
        if with_loss && a.data().iter().any(|&v| v != T::zero()) {
            let (_, a_prime) = fer_reconstruct(g, store, model, &masked, h1)?;
            recon.push((k, g.sce_loss(a, a_prime, model.tau)?));
        }
    }
    let weights = semantic_weights(g, store, model, &latents)?;

    let mut terms = Vec::with_capacity(recon.len());
    for (k, l) in recon {
        let w = g.element(weights, k)?;
        terms.push(g.mul(w, l)?);
    }
    let loss = if terms.is_empty() { None } else { Some(g.add_all(&terms)?) };

    let embedding = if latents.len() == 1 {
        latents[0]
    } else {
        let mut parts = Vec::with_capacity(latents.len());
        for (k, &h) in latents.iter().enumerate() {
            let w = g.element(weights, k)?;
            parts.push(g.mul_scalar(h, w)?);
        }
        g.add_all(&parts)?
    };
    Ok(FerOutput { embedding, weights, loss, latents })
}

/// Unmasked embedding of `graph` over `metapaths`.
pub fn fer_embed<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    model: &FerModel,
    graph: &HetGraph<T>,
    metapaths: &[MetaPath],
) -> Result<Var> {
    let paths =
        metapaths.iter().map(|p| metapath_adjacency(graph, p)).collect::<Result<Vec<_>>>()?;
    let x = g.constant(graph.features().clone());
    Ok(fer_forward(g, store, model, x, &paths, 0.0, 0, false)?.embedding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{Layout, NodeKind, NodeType, RelationType};
    use crate::numeric::grad_check;

    fn model(store: &mut ParamStore<f64>, din: usize, dh: usize, layers: usize) -> FerModel {
        let mut rng = rng_from_seed(5);
        FerModel::new(store, "fer", din, dh, dh, layers, 2.0, &mut rng).unwrap()
    }

    fn complete(n: usize) -> Tensor<f64> {
        let mut a = Tensor::full(&[n, n], 1.0);
        for i in 0..n {
            a.set(i, i, 0.0);
        }
        a
    }

    fn random_graph(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rng_from_seed(seed);
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.5 {
                    a.set(i, j, 1.0);
                    a.set(j, i, 1.0);
                }
            }
        }
        a
    }

    #[test]
    fn zero_rate_mask_is_identity() {
        let a = random_graph(8, 1);
        let (m, mask) = mask_edges(&a, 0.0, 3).unwrap();
        assert_eq!(m, a);
        assert!(mask.mask.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_rate_concentrates() {
        let a = complete(1000);
        let (m, mask) = mask_edges(&a, 0.5, 42).unwrap();
        let kept = m.sum() / a.sum();
        assert!((kept - 0.5).abs() <= 0.02, "kept {kept}");
        assert_eq!(mask.mask, mask.mask.transpose().unwrap());
    }

    #[test]
    fn mask_is_seeded_and_never_adds_edges() {
        let a = random_graph(30, 2);
        let (m1, _) = mask_edges(&a, 0.4, 9).unwrap();
        let (m2, _) = mask_edges(&a, 0.4, 9).unwrap();
        assert_eq!(m1, m2);
        assert!(m1.data().iter().zip(a.data()).all(|(x, y)| x <= y));
        assert!(mask_edges(&a, 1.0, 0).is_err());
    }

    #[test]
    fn single_identity_layer_on_empty_graph_returns_input() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 3, 3, 1);
        store.get_mut(m.encoder[0]).value = Tensor::identity(3);
        let x = Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let h = fer_encode(&mut g, &store, &m, &Tensor::zeros(&[2, 2]), xv).unwrap();
        assert!(g.value(h).max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn two_node_chain_matches_hand_expansion() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 1, 1, 1);
        store.get_mut(m.encoder[0]).value = Tensor::from_f64(&[1, 1], &[2.0]).unwrap();
        let a = Tensor::from_f64(&[2, 2], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap());
        let h = fer_encode(&mut g, &store, &m, &a, xv).unwrap();
        // Â = [[.5,.5],[.5,.5]], so Â·X·W = [[4],[4]]
        assert!(g.value(h).data().iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn reconstruction_values() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[3, 2]));
        let a0 = inner_product_sigmoid(&mut g, z).unwrap();
        assert!(g.value(a0).data().iter().all(|&v| v == 0.5));
        let h = g.constant(Tensor::from_f64(&[2, 1], &[10.0, 10.0]).unwrap());
        let a1 = inner_product_sigmoid(&mut g, h).unwrap();
        assert!((g.value(a1).at(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_is_symmetric() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 4, 5, 2);
        let a = random_graph(7, 3);
        let mut g = Graph::new();
        let mut rng = rng_from_seed(8);
        let x: Vec<f64> = (0..28).map(|_| rng.random::<f64>() - 0.5).collect();
        let xv = g.constant(Tensor::from_f64(&[7, 4], &x).unwrap());
        let h1 = fer_encode(&mut g, &store, &m, &a, xv).unwrap();
        let (_, ap) = fer_reconstruct(&mut g, &store, &m, &a, h1).unwrap();
        let v = g.value(ap);
        assert_eq!(*v, v.transpose().unwrap());
        assert!(v.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn sce_examples() {
        let a = random_graph(6, 4);
        assert_eq!(sce_loss(&a, &a, 2.0).unwrap(), 0.0);
        assert!(sce_loss(&a, &a.scale(3.5), 1.0).unwrap().abs() < 1e-15);

        let a: Tensor<f64> = Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap();
        let y = Tensor::from_f64(&[2, 1], &[0.0, 1.0]).unwrap();
        assert_eq!(sce_loss(&a, &y, 1.0).unwrap(), 1.0);

        // cos([1,0], [1,√3]) = 0.5
        let y = Tensor::from_f64(&[2, 1], &[1.0, 3f64.sqrt()]).unwrap();
        assert!((sce_loss(&a, &y, 2.0).unwrap() - 0.25).abs() < 1e-15);

        assert!(matches!(
            sce_loss(&Tensor::<f64>::zeros(&[3, 3]), &Tensor::full(&[3, 3], 0.5), 2.0),
            Err(Error::LossUndefined(_))
        ));
    }

    #[test]
    fn sce_skips_zero_columns() {
        let a: Tensor<f64> = Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = Tensor::from_f64(&[2, 2], &[0.0, 0.3, 1.0, 0.9]).unwrap();
        // only column 0 counts, and it is orthogonal
        assert_eq!(sce_loss(&a, &y, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn sce_gradient() {
        for tau in [1.0, 2.0, 3.0] {
            let mut store = ParamStore::new();
            let mut rng = rng_from_seed(12);
            let y = store.add_normal("y", &[5, 5], 1.0, &mut rng).unwrap();
            let a = random_graph(5, 6);
            let r = grad_check(
                &mut store,
                |g, s| {
                    let yv = g.param(s, y);
                    let p = g.sigmoid(yv);
                    g.sce_loss(&a, p, tau)
                },
                1e-5,
                25,
            )
            .unwrap();
            assert!(r.max_rel_err <= 1e-6, "tau {tau}: {r:?}");
        }
    }

    fn one_dim_model(store: &mut ParamStore<f64>, qv: f64) -> FerModel {
        let m = model(store, 1, 1, 1);
        store.get_mut(m.attention.w).value = Tensor::from_f64(&[1, 1], &[1.0]).unwrap();
        store.get_mut(m.q).value = Tensor::from_f64(&[1, 1], &[qv]).unwrap();
        m
    }

    #[test]
    fn semantic_weight_examples() {
        let mut store = ParamStore::new();
        let m = one_dim_model(&mut store, 3f64.ln() / 1f64.tanh());
        let mut g = Graph::new();
        let h0 = g.constant(Tensor::zeros(&[4, 1]));
        let h1 = g.constant(Tensor::full(&[4, 1], 1.0));
        let w = semantic_weights(&mut g, &store, &m, &[h0]).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        let w = semantic_weights(&mut g, &store, &m, &[h1, h1]).unwrap();
        assert_eq!(g.value(w).data(), &[0.5, 0.5]);
        let w = semantic_weights(&mut g, &store, &m, &[h0, h1]).unwrap();
        let w = g.value(w).data();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn fer_loss_examples() {
        let m = |v: &[(&str, f64)]| -> BTreeMap<String, f64> {
            v.iter().map(|&(k, x)| (k.to_string(), x)).collect()
        };
        assert_eq!(fer_loss(&m(&[("a", 0.4)]), &m(&[("a", 1.0)])).unwrap(), 0.4);
        assert_eq!(fer_loss(&m(&[("a", 4.0), ("b", 0.0)]), &m(&[("a", 0.25), ("b", 0.75)])).unwrap(), 1.0);
        assert_eq!(fer_loss(&m(&[("a", 0.0), ("b", 0.0)]), &m(&[("a", 0.3), ("b", 0.7)])).unwrap(), 0.0);
        assert!(matches!(fer_loss(&m(&[("a", 1.0)]), &m(&[("b", 1.0)])), Err(Error::Schema(_))));
    }

    fn toy_graph() -> HetGraph<f64> {
        let mut rng = rng_from_seed(21);
        let x: Vec<f64> = (0..18).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut g =
            HetGraph::new(vec![NodeType::Clinical; 6], Tensor::from_f64(&[6, 3], &x).unwrap(), Layout::Sequence)
                .unwrap();
        g.add_relation(RelationType::undirected("r", NodeKind::Clinical), random_graph(6, 13)).unwrap();
        g
    }

    #[test]
    fn embed_shapes_and_single_path() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 3, 4, 2);
        let graph = toy_graph();
        let one = [MetaPath::new("r", &["r"])];
        let two = [MetaPath::new("r", &["r"]), MetaPath::new("rr", &["r", "r"])];
        let mut g = Graph::new();
        let e1 = fer_embed(&mut g, &store, &m, &graph, &one).unwrap();
        let x = g.constant(graph.features().clone());
        let a = metapath_adjacency(&graph, &one[0]).unwrap();
        let h1 = fer_encode(&mut g, &store, &m, &a, x).unwrap();
        assert_eq!(g.value(e1), g.value(h1));
        let e2 = fer_embed(&mut g, &store, &m, &graph, &two).unwrap();
        assert_eq!(g.value(e2).shape(), &[6, 4]);
    }

    #[test]
    fn equal_weights_give_mean_embedding() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 3, 4, 1);
        store.get_mut(m.q).value.fill(0.0);
        let graph = toy_graph();
        let paths = [
            metapath_adjacency(&graph, &MetaPath::new("r", &["r"])).unwrap(),
            Tensor::zeros(&[6, 6]),
        ];
        let mut g = Graph::new();
        let x = g.constant(graph.features().clone());
        let out = fer_forward(&mut g, &store, &m, x, &paths, 0.0, 0, false).unwrap();
        let (l0, l1) = (g.value(out.latents[0]).clone(), g.value(out.latents[1]).clone());
        let mean = l0.zip_map(&l1, |a, b| 0.5 * (a + b)).unwrap();
        assert!(g.value(out.embedding).max_abs_diff(&mean) < 1e-15);
    }

    #[test]
    fn mer_gradient_on_toy_graph() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 3, 4, 2);
        let graph = toy_graph();
        let paths: Vec<_> = [MetaPath::new("r", &["r"]), MetaPath::new("rr", &["r", "r"])]
            .iter()
            .map(|p| metapath_adjacency(&graph, p).unwrap())
            .collect();
        let r = grad_check(
            &mut store,
            |g, s| {
                let x = g.constant(graph.features().clone());
                let out = fer_forward(g, s, &m, x, &paths, 0.3, 77, true)?;
                Ok(out.loss.expect("non-empty paths"))
            },
            1e-5,
            50,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }
}

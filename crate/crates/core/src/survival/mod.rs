//! Survival heads, the Cox objective, modality schemes and the end-to-end
//! pipeline that trains and queries them.

mod checkpoint;
mod cox;
mod pipeline;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::Modality;
use crate::nn::{Dense, Prelu};
use crate::numeric::{Graph, ParamId, ParamStore, Var};
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, CheckpointParam, CHECKPOINT_FORMAT};
pub use cox::{cox_gradient, cox_loss, cox_loss_signed};
pub use pipeline::{prepare_patient, Pipeline, PreparedModality, PreparedPatient, SchemeHead, Tower};
pub use train::{train, EpochLosses, TrainReport};

/// Nonempty subset of the three modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Scheme(u8);

impl Scheme {
    /// The seven schemes: singles, pairs, then the full set.
    pub const ALL: [Scheme; 7] =
        [Scheme(0b001), Scheme(0b010), Scheme(0b100), Scheme(0b011), Scheme(0b101), Scheme(0b110), Scheme(0b111)];

    pub const FULL: Scheme = Scheme(0b111);

    pub fn new(modalities: &[Modality]) -> Result<Self> {
        let bits = modalities.iter().fold(0u8, |b, m| b | (1 << m.index()));
        if bits == 0 {
            return Err(Error::config("a scheme needs at least one modality"));
        }
        Ok(Scheme(bits))
    }

    pub fn single(m: Modality) -> Self {
        Scheme(1 << m.index())
    }

    /// Member modalities in canonical order.
    pub fn modalities(self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|m| self.contains(*m)).collect()
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// First member absent from `available`, if any.
    pub fn missing_from(self, available: &[Modality]) -> Option<Modality> {
        self.modalities().into_iter().find(|m| !available.contains(m))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.modalities().iter().map(|m| m.letter().to_string()).collect();
        f.write_str(&parts.join("&"))
    }
}

impl FromStr for Scheme {
    type Err = Error;

    /// Accepts `P&G&C`, `PGC`, `P,G` and similar; letters are case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let mut mods = Vec::new();
        for c in s.chars().filter(|c| !matches!(c, '&' | ',' | '+' | ' ')) {
            let m = Modality::from_letter(c.to_ascii_uppercase())
                .map_err(|_| Error::config(format!("unknown modality `{c}` in scheme `{s}`")))?;
            if mods.contains(&m) {
                return Err(Error::config(format!("modality `{c}` repeated in scheme `{s}`")));
            }
            mods.push(m);
        }
        Scheme::new(&mods).map_err(|_| Error::config(format!("empty scheme `{s}`")))
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

/// Coefficients of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of `I_CMAE`.
    pub alpha: f64,
    /// Weight of each `I_Cox^m`.
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::config(format!("loss weights must be ≥ 0, got α={alpha} β={beta}")));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 5.0, beta: 1.0 }
    }
}

/// `I_MER + α·I_CMAE + Σ_m β·I_Cox^m`.
pub fn total_loss<T: Scalar>(i_mer: T, i_cmae: T, i_cox: &BTreeMap<Modality, T>, w: LossWeights) -> T {
    let beta = T::lit(w.beta);
    i_cox.values().fold(i_mer + T::lit(w.alpha) * i_cmae, |acc, &c| acc + beta * c)
}

/// Per-modality MLP mapping a fused token to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurvivalHead {
    pub hidden: Option<(Dense, Prelu)>,
    pub out: Dense,
}

impl SurvivalHead {
    /// `C → hidden → 1`, or a single linear map when `hidden == 0`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hidden == 0 {
            return Ok(Self { hidden: None, out: Dense::new(store, &format!("{name}.out"), channels, 1, rng)? });
        }
        let fc = Dense::new(store, &format!("{name}.fc"), channels, hidden, rng)?;
        let act = Prelu::new(store, &format!("{name}.act"))?;
        Ok(Self { hidden: Some((fc, act)), out: Dense::new(store, &format!("{name}.out"), hidden, 1, rng)? })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        if let Some((fc, act)) = self.hidden {
            out.extend([fc.w, fc.b, act.slope]);
        }
        out.extend([self.out.w, self.out.b]);
        out
    }

    /// Score of one length-`C` token, as a one-element node.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        dropout: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let mut h = x;
        if let Some((fc, act)) = &self.hidden {
            h = fc.forward(g, store, h)?;
            h = act.forward(g, store, h)?;
            h = g.dropout(h, dropout, training, rng)?;
        }
        let s = self.out.forward(g, store, h)?;
        g.reshape(s, &[1])
    }
}

/// One score per row of `H″` (`M×C`), row `m` through head `m`.
pub fn survival_head<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    heads: &[SurvivalHead],
    h_doubleprime: Var,
    dropout: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Vec<Var>> {
    let (m, _) = g.value(h_doubleprime).dims2()?;
    if m != heads.len() {
        return Err(Error::dim(format!("{m} fused tokens for {} heads", heads.len())));
    }
    let mut out = Vec::with_capacity(m);
    for (i, head) in heads.iter().enumerate() {
        let row = g.row(h_doubleprime, i)?;
        out.push(head.forward(g, store, row, dropout, training, rng)?);
    }
    Ok(out)
}

/// Arithmetic mean of the modality scores.
pub fn mean_fuse<T: Scalar>(scores: &[T]) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::config("cannot fuse zero modality scores"));
    }
    Ok(scores.iter().copied().sum::<T>() / T::from_usize_lossy(scores.len()))
}

/// Prediction of one patient under one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskScore<T> {
    pub scheme: Scheme,
    /// `H″_m` per scheme modality, canonical order.
    pub scores: Vec<(Modality, T)>,
    pub s_final: T,
    /// `sign · S_final`; larger means shorter expected survival.
    pub risk: T,
}

impl<T: Scalar> RiskScore<T> {
    pub fn new(scheme: Scheme, scores: Vec<(Modality, T)>, sign: f64) -> Result<Self> {
        let vals: Vec<T> = scores.iter().map(|&(_, s)| s).collect();
        let s_final = mean_fuse(&vals)?;
        Ok(Self { scheme, scores, s_final, risk: T::lit(sign) * s_final })
    }
}

/// Tiny dimensions for fast pipeline tests.
#[cfg(test)]
pub(crate) fn test_config() -> crate::config::Config {
    let mut c = crate::config::Config {
        data: crate::hetgraph::SynthConfig {
            n_patients: 6,
            grid_h: 3,
            grid_w: 3,
            genes: 10,
            feature_dim: 16,
            ..Default::default()
        },
        ..Default::default()
    };
    c.fer.hidden = 8;
    c.fer.attention_dim = 4;
    c.cmae.width = 6;
    c.survival.head_hidden = 4;
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, rng_from_seed, Tensor};

    #[test]
    fn seven_distinct_schemes() {
        let mut all = Scheme::ALL.to_vec();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 7);
        let names: Vec<String> = Scheme::ALL.iter().map(|s| s.to_string()).collect();
        assert_eq!(names, ["P", "G", "C", "P&G", "P&C", "G&C", "P&G&C"]);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("P&G&C".parse::<Scheme>().unwrap(), Scheme::FULL);
        assert_eq!("cgp".parse::<Scheme>().unwrap(), Scheme::FULL);
        assert_eq!("G,C".parse::<Scheme>().unwrap().modalities(), vec![Modality::Genomic, Modality::Clinical]);
        for bad in ["", "X", "P&P", "&"] {
            assert!(bad.parse::<Scheme>().is_err(), "{bad}");
        }
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!(
            Scheme::FULL.missing_from(&[Modality::Pathology, Modality::Genomic]),
            Some(Modality::Clinical)
        );
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, &BTreeMap::new(), w), 0.0);
        let cox = BTreeMap::from([(Modality::Pathology, 3.0)]);
        assert_eq!(total_loss(1.0, 2.0, &cox, w), 14.0);
        let no_cox = LossWeights::new(5.0, 0.0).unwrap();
        let big = BTreeMap::from([(Modality::Pathology, 1e6), (Modality::Clinical, -7.0)]);
        assert_eq!(total_loss(1.0, 2.0, &big, no_cox), total_loss(1.0, 2.0, &cox, no_cox));
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn head_examples() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(1);
        let head = SurvivalHead::new(&mut store, "h", 2, 0, &mut rng).unwrap();
        store.get_mut(head.out.w).value = Tensor::from_f64(&[2, 1], &[1.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[1, 2], &[2.0, 3.0]).unwrap());
        let s = survival_head(&mut g, &store, &[head], x, 0.0, false, &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(g.value(s[0]).data(), &[5.0]);

        let mut store = ParamStore::<f64>::new();
        let heads: Vec<SurvivalHead> =
            (0..3).map(|i| SurvivalHead::new(&mut store, &format!("h{i}"), 4, 3, &mut rng).unwrap()).collect();
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[3, 4], 1.5));
        let s = survival_head(&mut g, &store, &heads, x, 0.0, false, &mut rng).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|&v| g.value(v).data() == [0.0]));
        let x = g.constant(Tensor::full(&[2, 4], 1.5));
        assert!(survival_head(&mut g, &store, &heads, x, 0.0, false, &mut rng).is_err());
    }

    #[test]
    fn head_gradient() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(4);
        let heads: Vec<SurvivalHead> =
            (0..2).map(|i| SurvivalHead::new(&mut store, &format!("h{i}"), 3, 4, &mut rng).unwrap()).collect();
        let x = Tensor::from_f64(&[2, 3], &[0.3, -1.0, 0.8, 1.2, 0.1, -0.4]).unwrap();
        let r = grad_check(
            &mut store,
            |g, s| {
                let xv = g.constant(x.clone());
                let mut r = rng_from_seed(0);
                let out = survival_head(g, s, &heads, xv, 0.0, false, &mut r)?;
                let v = g.stack(&out)?;
                let sq = g.mul(v, v)?;
                Ok(g.sum(sq))
            },
            1e-5,
            40,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-5, "{r:?}");
    }

    #[test]
    fn fused_risk_score() {
        let r = RiskScore::new(Scheme::single(Modality::Genomic), vec![(Modality::Genomic, 0.7)], -1.0).unwrap();
        assert_eq!((r.s_final, r.risk), (0.7, -0.7));
        let r = RiskScore::new(
            "P&C".parse().unwrap(),
            vec![(Modality::Pathology, 0.2), (Modality::Clinical, 0.4)],
            -1.0,
        )
        .unwrap();
        assert!((r.s_final - 0.3f64).abs() < 1e-15);
        assert_eq!(r.risk, -r.s_final);
        // Equal scores leave the mean at that score.
        assert_eq!(mean_fuse(&[0.35, 0.35]).unwrap(), 0.35);
    }
}

//! Parameters and forward passes of the full model.
//!
//! Each modality owns one FER + CMAE tower shared by every scheme; each
//! scheme owns its fusion block and one head per member modality.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cmae::{cmae_forward, grid_dims, CmaeModel, GridMask};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fer::{fer_forward, FerModel};
use crate::fusion::{cross_fuse, skip_connect, FusionModel};
use crate::hetgraph::{default_metapaths, metapath_adjacency, Modality, PatientRecord, SurvivalLabel};
use crate::numeric::{derive_seed, rng_from_seed, Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;
use crate::survival::{survival_head, RiskScore, Scheme, SurvivalHead};

/// Seed label for parameter initialization.
const INIT_STREAM: u64 = 0x1417;

/// Per-modality representation learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub fer: FerModel,
    pub cmae: CmaeModel,
}

/// Fusion block and per-modality heads of one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeHead {
    pub scheme: Scheme,
    pub fusion: FusionModel,
    /// One head per scheme modality, canonical order.
    pub heads: Vec<SurvivalHead>,
}

/// Model inputs of one modality, computed once per patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedModality<T> {
    /// Node features `N×D`; also the reconstruction target.
    pub x: Tensor<T>,
    /// One adjacency per default meta-path.
    pub paths: Vec<Tensor<T>>,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPatient<T> {
    pub id: String,
    pub label: SurvivalLabel<T>,
    pub modalities: BTreeMap<Modality, PreparedModality<T>>,
}

impl<T: Scalar> PreparedPatient<T> {
    pub fn available(&self) -> Vec<Modality> {
        self.modalities.keys().copied().collect()
    }

    pub fn has(&self, scheme: Scheme) -> bool {
        scheme.missing_from(&self.available()).is_none()
    }
}

/// Meta-path adjacencies and grid placement of every modality of `record`.
pub fn prepare_patient<T: Scalar>(record: &PatientRecord<T>, feature_dim: usize) -> Result<PreparedPatient<T>> {
    let mut modalities = BTreeMap::new();
    for m in record.available() {
        let graph = record.graph(m).expect("available modality has a graph");
        if graph.feature_dim() != feature_dim {
            return Err(Error::Schema(format!(
                "patient `{}`: {m} features are {} wide, model expects {feature_dim}",
                record.id,
                graph.feature_dim()
            )));
        }
        let paths = default_metapaths(m)
            .iter()
            .map(|p| metapath_adjacency(graph, p))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Schema(format!("patient `{}`: {m}: {e}", record.id)))?;
        let (grid_h, grid_w, _) = grid_dims(graph.layout(), graph.num_nodes())?;
        modalities.insert(m, PreparedModality { x: graph.features().clone(), paths, grid_h, grid_w });
    }
    Ok(PreparedPatient { id: record.id.clone(), label: record.label, modalities })
}

/// Output of one tower pass.
pub(crate) struct TowerOutput {
    /// Pooled latent, length `C`.
    pub token: Var,
    pub mer: Option<Var>,
    pub cmae: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Pipeline<T> {
    pub config: Config,
    pub store: ParamStore<T>,
    pub towers: BTreeMap<Modality, Tower>,
    pub schemes: BTreeMap<Scheme, SchemeHead>,
}

impl<T: Scalar> Pipeline<T> {
    /// Fresh parameters for `config`, seeded by `config.train.seed`.
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(config.train.seed, INIT_STREAM));
        let mut store = ParamStore::new();
        let d = config.data.feature_dim;
        let width = config.cmae.width;
        let mut towers = BTreeMap::new();
        for m in Modality::ALL {
            let name = m.letter();
            let fer = FerModel::new(
                &mut store,
                &format!("{name}.fer"),
                d,
                config.fer.hidden,
                config.fer.attention_dim,
                config.fer.layers,
                config.fer.tau,
                &mut rng,
            )?;
            let cmae = CmaeModel::new(
                &mut store,
                &format!("{name}.cmae"),
                config.fer.hidden,
                width,
                d,
                config.cmae.depth,
                config.cmae.grn.literal,
                &mut rng,
            )?;
            towers.insert(m, Tower { fer, cmae });
        }
        let mut schemes = BTreeMap::new();
        for &scheme in &config.schemes {
            let prefix = format!("scheme.{scheme}");
            let fusion = FusionModel::new(&mut store, &format!("{prefix}.fusion"), scheme.len(), width, &mut rng)?;
            let heads = scheme
                .modalities()
                .into_iter()
                .map(|m| {
                    let name = format!("{prefix}.head.{}", m.letter());
                    SurvivalHead::new(&mut store, &name, width, config.survival.head_hidden, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            schemes.insert(scheme, SchemeHead { scheme, fusion, heads });
        }
        Ok(Self { config, store, towers, schemes })
    }

    pub fn sign(&self) -> f64 {
        self.config.survival.sign
    }

    pub fn scheme_list(&self) -> Vec<Scheme> {
        self.config.schemes.clone()
    }

    pub fn prepare(&self, record: &PatientRecord<T>) -> Result<PreparedPatient<T>> {
        prepare_patient(record, self.config.data.feature_dim)
    }

    /// One modality through FER, CMAE and pooling.
    ///
    /// `train_seed = Some(s)` masks edges and cells with streams derived from
    /// `s` and records both reconstruction losses; `None` is the unmasked
    /// inference pass.
    pub(crate) fn tower_forward(
        &self,
        g: &mut Graph<T>,
        m: Modality,
        pm: &PreparedModality<T>,
        train_seed: Option<u64>,
    ) -> Result<TowerOutput> {
        let tower = &self.towers[&m];
        let x = g.constant(pm.x.clone());
        let (pe, fer_seed) = match train_seed {
            Some(s) => (self.config.fer.pe, derive_seed(s, 0)),
            None => (0.0, 0),
        };
        let fer = fer_forward(g, &self.store, &tower.fer, x, &pm.paths, pe, fer_seed, train_seed.is_some())?;
        let mask = match train_seed {
            Some(s) => GridMask::random(pm.grid_h, pm.grid_w, self.config.cmae.mask_ratio, derive_seed(s, 1))?,
            None => GridMask::all_visible(pm.grid_h, pm.grid_w),
        };
        let out = cmae_forward(g, &self.store, &tower.cmae, fer.embedding, &mask)?;
        let cmae = match train_seed {
            Some(_) => Some(g.masked_mse(out.reconstruction, &pm.x, &mask.masked_cells())?),
            None => None,
        };
        let token = g.mean_rows(out.latent)?;
        Ok(TowerOutput { token, mer: fer.loss, cmae })
    }

    /// Per-modality scores of one scheme from pooled tokens.
    pub(crate) fn scheme_forward(
        &self,
        g: &mut Graph<T>,
        scheme: Scheme,
        tokens: &BTreeMap<Modality, Var>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Vec<Var>> {
        let head = self
            .schemes
            .get(&scheme)
            .ok_or_else(|| Error::config(format!("scheme {scheme} is not part of this model")))?;
        let mods = scheme.modalities();
        let mut rows = Vec::with_capacity(mods.len());
        for m in &mods {
            rows.push(
                *tokens.get(m).ok_or_else(|| Error::MissingModality(format!("scheme {scheme} needs {m}")))?,
            );
        }
        let h = g.stack(&rows)?;
        let h = g.reshape(h, &[mods.len(), self.config.cmae.width])?;
        let dropout = self.config.train.dropout;
        let inter = cross_fuse(g, &self.store, &head.fusion, h, dropout, training, rng)?;
        let fused = skip_connect(g, h, inter)?;
        survival_head(g, &self.store, &head.heads, fused, dropout, training, rng)
    }

    /// Scores under several schemes, computing each tower once. Entries are
    /// `None` where the patient lacks a scheme modality.
    pub fn predict_schemes(&self, p: &PreparedPatient<T>, schemes: &[Scheme]) -> Result<Vec<Option<RiskScore<T>>>> {
        let mut g = Graph::new();
        let mut tokens = BTreeMap::new();
        let needed: Vec<Modality> = Modality::ALL
            .into_iter()
            .filter(|&m| p.modalities.contains_key(&m) && schemes.iter().any(|s| s.contains(m)))
            .collect();
        for m in needed {
            let out = self.tower_forward(&mut g, m, &p.modalities[&m], None)?;
            tokens.insert(m, out.token);
        }
        let mut rng = rng_from_seed(0);
        let mut out = Vec::with_capacity(schemes.len());
        for &scheme in schemes {
            if !p.has(scheme) {
                out.push(None);
                continue;
            }
            let vars = self.scheme_forward(&mut g, scheme, &tokens, false, &mut rng)?;
            let scores = scheme.modalities().into_iter().zip(vars.iter().map(|&v| g.item(v))).collect();
            out.push(Some(RiskScore::new(scheme, scores, self.sign())?));
        }
        Ok(out)
    }

    pub fn predict_prepared(&self, p: &PreparedPatient<T>, scheme: Scheme) -> Result<RiskScore<T>> {
        if let Some(m) = scheme.missing_from(&p.available()) {
            return Err(Error::MissingModality(format!(
                "patient `{}` has no {m} data, required by scheme {scheme}",
                p.id
            )));
        }
        Ok(self.predict_schemes(p, &[scheme])?.pop().flatten().expect("patient has the scheme"))
    }

    /// Unmasked, dropout-free prediction of one patient.
    pub fn predict(&self, record: &PatientRecord<T>, scheme: Scheme) -> Result<RiskScore<T>> {
        if let Some(m) = scheme.missing_from(&record.available()) {
            return Err(Error::MissingModality(format!(
                "patient `{}` has no {m} data, required by scheme {scheme}",
                record.id
            )));
        }
        self.predict_prepared(&self.prepare(record)?, scheme)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::generate_synthetic_cohort;
    use crate::survival::test_config as small_config;

    #[test]
    fn parameter_names_are_unique_and_deterministic() {
        let a = Pipeline::<f64>::new(small_config()).unwrap();
        let b = Pipeline::<f64>::new(small_config()).unwrap();
        let names: Vec<&str> = a.store.iter().map(|p| p.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        for (p, q) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(p.value, q.value);
        }
        assert_eq!(a.schemes.len(), 7);
    }

    #[test]
    fn single_modality_final_equals_its_score() {
        let cfg = small_config();
        let cohort = generate_synthetic_cohort::<f64>(&cfg.data, 3).unwrap();
        let pipe = Pipeline::<f64>::new(cfg).unwrap();
        for s in Scheme::ALL {
            let r = pipe.predict(&cohort[0], s).unwrap();
            assert_eq!(r.scores.len(), s.len());
            if s.len() == 1 {
                assert_eq!(r.s_final, r.scores[0].1);
            }
            assert_eq!(r.risk, -r.s_final);
            assert_eq!(pipe.predict(&cohort[0], s).unwrap(), r);
        }
    }

    #[test]
    fn batched_schemes_match_single_predictions() {
        let cfg = small_config();
        let cohort = generate_synthetic_cohort::<f64>(&cfg.data, 4).unwrap();
        let pipe = Pipeline::<f64>::new(cfg).unwrap();
        let p = pipe.prepare(&cohort[1]).unwrap();
        let all = pipe.predict_schemes(&p, &Scheme::ALL).unwrap();
        for (s, r) in Scheme::ALL.iter().zip(all) {
            assert_eq!(r.unwrap(), pipe.predict_prepared(&p, *s).unwrap());
        }
    }

    #[test]
    fn missing_modality_is_named() {
        let cfg = small_config();
        let cohort = generate_synthetic_cohort::<f64>(&cfg.data, 5).unwrap();
        let pipe = Pipeline::<f64>::new(cfg).unwrap();
        let rec = cohort[0].without(Modality::Clinical).unwrap();
        match pipe.predict(&rec, Scheme::FULL) {
            Err(Error::MissingModality(msg)) => assert!(msg.contains("clinical"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(pipe.predict(&rec, "P&G".parse().unwrap()).is_ok());
        let p = pipe.prepare(&rec).unwrap();
        assert!(pipe.predict_schemes(&p, &[Scheme::FULL]).unwrap()[0].is_none());
    }

    #[test]
    fn feature_width_is_checked() {
        let cfg = small_config();
        let cohort = generate_synthetic_cohort::<f64>(&cfg.data, 5).unwrap();
        let mut other = cfg.clone();
        other.data.feature_dim = 20;
        let pipe = Pipeline::<f64>::new(other).unwrap();
        assert!(matches!(pipe.prepare(&cohort[0]), Err(Error::Schema(_))));
    }
}

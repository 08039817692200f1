//! Minibatch Adam on the joint objective with validation-based selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::concordance_index;
use crate::hetgraph::{Modality, SurvivalLabel};
use crate::numeric::{derive_seed, rng_from_seed, Adam, Graph, Tensor, Var};
use crate::scalar::Scalar;
use crate::survival::{Pipeline, PreparedPatient, Scheme};

const TRAIN_STREAM: u64 = 0x7241;
const SHUFFLE: u64 = 1;
const MASKS: u64 = 2;
const DROPOUT: u64 = 3;

/// Epoch means of the batch loss components.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLosses {
    /// 1-based.
    pub epoch: usize,
    pub mer: f64,
    pub cmae: f64,
    /// Summed over the schemes containing each modality.
    pub cox: BTreeMap<Modality, f64>,
    pub total: f64,
    /// Mean validation C-index over schemes, when computed this epoch.
    pub val_c_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<EpochLosses>,
    /// Epoch whose parameters were kept, when validation ran.
    pub best_epoch: Option<usize>,
    pub best_val_c_index: Option<f64>,
}

struct BatchLosses {
    mer: f64,
    cmae: f64,
    cox: BTreeMap<Modality, f64>,
    total: f64,
}

fn mean_of<T: Scalar>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    if terms.is_empty() {
        return Ok(g.constant(Tensor::vector(vec![T::zero()])));
    }
    let s = g.add_all(terms)?;
    Ok(g.scale(s, T::one() / T::from_usize_lossy(terms.len())))
}

/// Modalities used by at least one configured scheme.
fn used_modalities(schemes: &[Scheme]) -> Vec<Modality> {
    Modality::ALL.into_iter().filter(|&m| schemes.iter().any(|s| s.contains(m))).collect()
}

fn batch_step<T: Scalar>(
    pipe: &mut Pipeline<T>,
    adam: &mut Adam<T>,
    patients: &[PreparedPatient<T>],
    batch: &[usize],
    seed: u64,
) -> Result<BatchLosses> {
    let schemes = pipe.scheme_list();
    let used = used_modalities(&schemes);
    let mut g = Graph::new();
    let mut tokens: Vec<BTreeMap<Modality, Var>> = Vec::with_capacity(batch.len());
    let (mut mers, mut cmaes) = (Vec::new(), Vec::new());
    for &i in batch {
        let mut t = BTreeMap::new();
        for (&m, pm) in &patients[i].modalities {
            if !used.contains(&m) {
                continue;
            }
            let s = derive_seed(derive_seed(derive_seed(seed, MASKS), i as u64), m.index() as u64);
            let out = pipe.tower_forward(&mut g, m, pm, Some(s))?;
            mers.extend(out.mer);
            cmaes.extend(out.cmae);
            t.insert(m, out.token);
        }
        tokens.push(t);
    }
    let mer = mean_of(&mut g, &mers)?;
    let cmae = mean_of(&mut g, &cmaes)?;

    let mut rng = rng_from_seed(derive_seed(seed, DROPOUT));
    let mut cox_terms: BTreeMap<Modality, Vec<Var>> = used.iter().map(|&m| (m, Vec::new())).collect();
    for &scheme in &schemes {
        let members: Vec<usize> =
            (0..batch.len()).filter(|&k| patients[batch[k]].has(scheme)).collect();
        if members.is_empty() {
            continue;
        }
        let mut per_mod: Vec<Vec<Var>> = vec![Vec::with_capacity(members.len()); scheme.len()];
        for &k in &members {
            let scores = pipe.scheme_forward(&mut g, scheme, &tokens[k], true, &mut rng)?;
            for (col, s) in per_mod.iter_mut().zip(scores) {
                col.push(s);
            }
        }
        let labels: Vec<SurvivalLabel<T>> = members.iter().map(|&k| patients[batch[k]].label).collect();
        for (m, col) in scheme.modalities().into_iter().zip(per_mod) {
            let v = g.stack(&col)?;
            let v = g.reshape(v, &[col.len()])?;
            let term = g.cox_loss(v, &labels, pipe.sign())?;
            cox_terms.get_mut(&m).expect("used modality").push(term);
        }
    }
    let mut cox = BTreeMap::new();
    for (m, terms) in &cox_terms {
        let v = if terms.is_empty() { g.constant(Tensor::vector(vec![T::zero()])) } else { g.add_all(terms)? };
        cox.insert(*m, v);
    }

    let a = T::lit(pipe.config.survival.alpha);
    let b = T::lit(pipe.config.survival.beta);
    let mut parts = vec![mer];
    parts.push(g.scale(cmae, a));
    for &v in cox.values() {
        parts.push(g.scale(v, b));
    }
    let total = g.add_all(&parts)?;
    g.backward(total)?;
    pipe.store.zero_grad();
    g.accumulate_param_grads(&mut pipe.store);
    adam.step(&mut pipe.store);

    Ok(BatchLosses {
        mer: g.item(mer).as_f64(),
        cmae: g.item(cmae).as_f64(),
        cox: cox.iter().map(|(&m, &v)| (m, g.item(v).as_f64())).collect(),
        total: g.item(total).as_f64(),
    })
}

/// Mean C-index over the configured schemes on `val`; schemes with no
/// comparable pair are skipped.
fn validation_c_index<T: Scalar>(pipe: &Pipeline<T>, val: &[PreparedPatient<T>]) -> Result<Option<f64>> {
    let schemes = pipe.scheme_list();
    let mut risks: Vec<Vec<f64>> = vec![Vec::new(); schemes.len()];
    let mut labels: Vec<Vec<SurvivalLabel<f64>>> = vec![Vec::new(); schemes.len()];
    for p in val {
        let label = SurvivalLabel { time: p.label.time.as_f64(), event: p.label.event };
        for (k, r) in pipe.predict_schemes(p, &schemes)?.into_iter().enumerate() {
            if let Some(r) = r {
                risks[k].push(r.risk.as_f64());
                labels[k].push(label);
            }
        }
    }
    let cs: Vec<f64> =
        risks.iter().zip(&labels).filter_map(|(r, l)| concordance_index(r, l).ok()).collect();
    Ok((!cs.is_empty()).then(|| cs.iter().sum::<f64>() / cs.len() as f64))
}

/// Trains `pipe` in place on `patients`.
///
/// When `val` is nonempty the parameters with the best mean validation
/// C-index (first on ties) are restored at the end.
pub fn train<T: Scalar>(
    pipe: &mut Pipeline<T>,
    patients: &[PreparedPatient<T>],
    val: &[PreparedPatient<T>],
) -> Result<TrainReport> {
    if patients.len() < 2 {
        return Err(Error::Training(format!("need at least 2 training patients, got {}", patients.len())));
    }
    if !patients.iter().any(|p| p.label.event) {
        return Err(Error::Training("training cohort has no events; the Cox loss is undefined".into()));
    }
    let cfg = pipe.config.train.clone();
    let base = derive_seed(cfg.seed, TRAIN_STREAM);
    let mut adam = Adam::new(&pipe.store, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    let mut order: Vec<usize> = (0..patients.len()).collect();

    for epoch in 0..cfg.epochs {
        let eseed = derive_seed(base, epoch as u64);
        order.shuffle(&mut rng_from_seed(derive_seed(eseed, SHUFFLE)));
        let mut acc: Option<BatchLosses> = None;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let l = batch_step(pipe, &mut adam, patients, chunk, derive_seed(eseed, 100 + b as u64))?;
            batches += 1;
            acc = Some(match acc {
                None => l,
                Some(mut a) => {
                    a.mer += l.mer;
                    a.cmae += l.cmae;
                    a.total += l.total;
                    for (m, v) in l.cox {
                        *a.cox.get_mut(&m).expect("same modalities every batch") += v;
                    }
                    a
                }
            });
        }
        let a = acc.expect("at least one batch");
        let n = batches as f64;
        if !a.total.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {}", epoch + 1)));
        }

        let last = epoch + 1 == cfg.epochs;
        let val_c = if !val.is_empty() && ((epoch + 1) % cfg.val_every == 0 || last) {
            validation_c_index(pipe, val)?
        } else {
            None
        };
        if let Some(c) = val_c {
            if best.as_ref().is_none_or(|(b, _, _)| c > *b) {
                best = Some((c, epoch + 1, pipe.store.iter().map(|p| p.value.clone()).collect()));
            }
        }
        let row = EpochLosses {
            epoch: epoch + 1,
            mer: a.mer / n,
            cmae: a.cmae / n,
            cox: a.cox.into_iter().map(|(m, v)| (m, v / n)).collect(),
            total: a.total / n,
            val_c_index: val_c,
        };
        log::debug!(
            "epoch {} total {:.4} mer {:.4} cmae {:.4} val {:?}",
            row.epoch,
            row.total,
            row.mer,
            row.cmae,
            row.val_c_index
        );
        trace.push(row);
    }

    let (best_val_c_index, best_epoch) = match best {
        Some((c, e, values)) => {
            for (p, v) in pipe.store.iter_mut().zip(values) {
                p.value = v;
            }
            (Some(c), Some(e))
        }
        None => (None, None),
    };
    Ok(TrainReport { trace, best_epoch, best_val_c_index })
}

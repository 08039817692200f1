//! Fold planning, k-fold cross-validation and report serialization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{concordance_index, km_estimator, logrank_test, stratify_by_median, LogRank, SurvivalCurve};
use crate::hetgraph::{PatientRecord, SurvivalLabel};
use crate::numeric::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::survival::{prepare_patient, train, Pipeline, PreparedPatient, Scheme, TrainReport};

const FOLD_STREAM: u64 = 0xF01D;
const VAL_STREAM: u64 = 0x5A1;

/// Disjoint folds of patient indices whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    pub val_fraction: f64,
}

/// Indices of one fold split.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold sizes for `n` items in `k` folds: the first `n mod k` get one extra.
pub fn fold_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|f| n / k + usize::from(f < n % k)).collect()
}

impl FoldPlan {
    pub fn new(n: usize, k: usize, val_fraction: f64, seed: u64) -> Result<Self> {
        if k < 2 || n < k {
            return Err(Error::config(format!("cannot split {n} patients into {k} folds")));
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::config(format!("validation fraction {val_fraction} outside [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from_seed(derive_seed(seed, FOLD_STREAM)));
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for size in fold_sizes(n, k) {
            let mut f = idx[start..start + size].to_vec();
            f.sort_unstable();
            folds.push(f);
            start += size;
        }
        Ok(Self { folds, seed, val_fraction })
    }

    /// Held-out fold `f`, with `round(val_fraction · |rest|)` of the remaining
    /// patients carved out for validation.
    pub fn split(&self, f: usize) -> FoldSplit {
        let test = self.folds[f].clone();
        let mut rest: Vec<usize> =
            self.folds.iter().enumerate().filter(|&(g, _)| g != f).flat_map(|(_, v)| v.iter().copied()).collect();
        rest.sort_unstable();
        rest.shuffle(&mut rng_from_seed(derive_seed(derive_seed(self.seed, VAL_STREAM), f as u64)));
        let n_val = (self.val_fraction * rest.len() as f64).round() as usize;
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        FoldSplit { train, val, test }
    }
}

/// Test-set statistics of one scheme on one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub c_index: f64,
    pub logrank_chi2: Option<f64>,
    pub logrank_p: Option<f64>,
    pub n_events: usize,
    pub n_test: usize,
    /// Test patients lacking a scheme modality.
    pub n_excluded: usize,
}

/// Risks and labels of a set of predictions, with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub n: usize,
    pub n_events: usize,
    pub c_index: Option<f64>,
    pub threshold: Option<f64>,
    pub logrank: Option<LogRank>,
    pub km_high: Option<SurvivalCurve>,
    pub km_low: Option<SurvivalCurve>,
}

/// C-index, median split, log-rank and per-group KM curves.
pub fn summarize(risks: &[f64], labels: &[SurvivalLabel<f64>]) -> GroupSummary {
    let n_events = labels.iter().filter(|l| l.event).count();
    let c_index = concordance_index(risks, labels).ok();
    let mut out =
        GroupSummary { n: risks.len(), n_events, c_index, threshold: None, logrank: None, km_high: None, km_low: None };
    if let Ok(g) = stratify_by_median(risks) {
        let pick = |ix: &[usize]| ix.iter().map(|&i| labels[i]).collect::<Vec<_>>();
        let (hi, lo) = (pick(&g.high_risk), pick(&g.low_risk));
        out.threshold = Some(g.threshold);
        out.logrank = logrank_test(&hi, &lo).ok();
        out.km_high = (!hi.is_empty()).then(|| km_estimator(&hi));
        out.km_low = (!lo.is_empty()).then(|| km_estimator(&lo));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub folds: Vec<FoldMetrics>,
    /// Folds skipped for having no test events or comparable pairs.
    pub skipped_folds: Vec<usize>,
    pub mean_c_index: Option<f64>,
    pub sd_c_index: Option<f64>,
    /// All test predictions of all folds together.
    pub pooled: GroupSummary,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub n_patients: usize,
    pub fold_sizes: Vec<usize>,
    pub seed: u64,
    pub schemes: Vec<SchemeReport>,
    /// Epoch kept by validation selection, per fold.
    pub best_epochs: Vec<Option<usize>>,
}

impl CvReport {
    pub fn scheme(&self, s: Scheme) -> Option<&SchemeReport> {
        self.schemes.iter().find(|r| r.scheme == s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Trained model of one fold with the indices it was tested on.
#[derive(Debug, Clone)]
pub struct FoldModel<T> {
    pub fold: usize,
    pub pipeline: Pipeline<T>,
    pub split: FoldSplit,
    pub report: TrainReport,
}

/// Per-patient risks under every scheme; `None` where a modality is missing.
pub fn predict_all<T: Scalar>(
    pipe: &Pipeline<T>,
    patients: &[PreparedPatient<T>],
    schemes: &[Scheme],
) -> Result<Vec<Vec<Option<f64>>>> {
    patients
        .iter()
        .map(|p| Ok(pipe.predict_schemes(p, schemes)?.into_iter().map(|r| r.map(|r| r.risk.as_f64())).collect()))
        .collect()
}

fn label64<T: Scalar>(l: &SurvivalLabel<T>) -> SurvivalLabel<f64> {
    SurvivalLabel { time: l.time.as_f64(), event: l.event }
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()) } else { None };
    (Some(m), sd)
}

fn run_fold<T: Scalar>(
    config: &Config,
    prepared: &[PreparedPatient<T>],
    plan: &FoldPlan,
    f: usize,
) -> Result<FoldModel<T>> {
    let split = plan.split(f);
    let pick = |ix: &[usize]| ix.iter().map(|&i| prepared[i].clone()).collect::<Vec<_>>();
    let mut cfg = config.clone();
    cfg.train.seed = derive_seed(config.train.seed, f as u64);
    let mut pipeline = Pipeline::new(cfg)?;
    let report = train(&mut pipeline, &pick(&split.train), &pick(&split.val))?;
    log::info!("fold {} trained; kept epoch {:?}", f + 1, report.best_epoch);
    Ok(FoldModel { fold: f, pipeline, split, report })
}

/// Trains one model per fold and keeps them.
///
/// With `config.eval.workers > 1` folds train on that many threads; results
/// are identical to the sequential run.
pub fn cross_validate_models<T: Scalar>(
    records: &[PatientRecord<T>],
    config: &Config,
) -> Result<(CvReport, Vec<FoldModel<T>>)> {
    config.validate()?;
    if records.len() < 10 {
        return Err(Error::Evaluation(format!("cross-validation needs at least 10 patients, got {}", records.len())));
    }
    let prepared = records
        .iter()
        .map(|r| prepare_patient(r, config.data.feature_dim))
        .collect::<Result<Vec<_>>>()?;
    let k = config.eval.folds;
    let plan = FoldPlan::new(records.len(), k, config.eval.val_fraction, config.train.seed)?;

    let workers = config.eval.workers.min(k);
    let mut models: Vec<Option<Result<FoldModel<T>>>> = (0..k).map(|_| None).collect();
    if workers <= 1 {
        for (f, slot) in models.iter_mut().enumerate() {
            *slot = Some(run_fold(config, &prepared, &plan, f));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let (prepared, plan) = (&prepared, &plan);
                    s.spawn(move || {
                        (w..k).step_by(workers).map(|f| (f, run_fold(config, prepared, plan, f))).collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (f, r) in h.join().expect("fold worker panicked") {
                    models[f] = Some(r);
                }
            }
        });
    }
    let models = models.into_iter().map(|m| m.expect("every fold ran")).collect::<Result<Vec<_>>>()?;

    let schemes = config.schemes.clone();
    let mut reports = Vec::with_capacity(schemes.len());
    let fold_preds: Vec<Vec<Vec<Option<f64>>>> = models
        .iter()
        .map(|m| predict_all(&m.pipeline, &m.split.test.iter().map(|&i| prepared[i].clone()).collect::<Vec<_>>(), &schemes))
        .collect::<Result<_>>()?;
    for (si, &scheme) in schemes.iter().enumerate() {
        let mut folds = Vec::new();
        let mut skipped = Vec::new();
        let (mut pooled_r, mut pooled_l) = (Vec::new(), Vec::new());
        let mut excluded = 0;
        for (m, preds) in models.iter().zip(&fold_preds) {
            let (mut r, mut l) = (Vec::new(), Vec::new());
            for (&i, p) in m.split.test.iter().zip(preds) {
                match p[si] {
                    Some(v) => {
                        r.push(v);
                        l.push(label64(&prepared[i].label));
                    }
                    None => excluded += 1,
                }
            }
            let n_excl = m.split.test.len() - r.len();
            pooled_r.extend_from_slice(&r);
            pooled_l.extend_from_slice(&l);
            let n_events = l.iter().filter(|x| x.event).count();
            let c = if n_events == 0 { None } else { concordance_index(&r, &l).ok() };
            let Some(c_index) = c else {
                log::warn!("scheme {scheme}: fold {} has no test events or comparable pairs; skipped", m.fold + 1);
                skipped.push(m.fold);
                continue;
            };
            let s = summarize(&r, &l);
            folds.push(FoldMetrics {
                fold: m.fold,
                c_index,
                logrank_chi2: s.logrank.map(|x| x.chi2),
                logrank_p: s.logrank.map(|x| x.p_value),
                n_events,
                n_test: r.len(),
                n_excluded: n_excl,
            });
        }
        if folds.is_empty() {
            return Err(Error::Evaluation(format!("scheme {scheme}: every fold was skipped")));
        }
        let cs: Vec<f64> = folds.iter().map(|f| f.c_index).collect();
        let (mean_c_index, sd_c_index) = mean_sd(&cs);
        reports.push(SchemeReport {
            scheme,
            folds,
            skipped_folds: skipped,
            mean_c_index,
            sd_c_index,
            pooled: summarize(&pooled_r, &pooled_l),
            n_excluded: excluded,
        });
    }
    let report = CvReport {
        n_patients: records.len(),
        fold_sizes: plan.folds.iter().map(Vec::len).collect(),
        seed: config.train.seed,
        schemes: reports,
        best_epochs: models.iter().map(|m| m.report.best_epoch).collect(),
    };
    Ok((report, models))
}

pub fn cross_validate<T: Scalar>(records: &[PatientRecord<T>], config: &Config) -> Result<CvReport> {
    cross_validate_models(records, config).map(|(r, _)| r)
}

/// Single-split evaluation of a trained model on `records`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_patients: usize,
    pub schemes: Vec<SchemeEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeEval {
    pub scheme: Scheme,
    pub n_excluded: usize,
    #[serde(flatten)]
    pub summary: GroupSummary,
}

impl EvalReport {
    pub fn scheme(&self, s: Scheme) -> Option<&SchemeEval> {
        self.schemes.iter().find(|r| r.scheme == s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn evaluate_pipeline<T: Scalar>(
    pipe: &Pipeline<T>,
    records: &[PatientRecord<T>],
    schemes: &[Scheme],
) -> Result<EvalReport> {
    let prepared = records.iter().map(|r| pipe.prepare(r)).collect::<Result<Vec<_>>>()?;
    let preds = predict_all(pipe, &prepared, schemes)?;
    let mut out = Vec::with_capacity(schemes.len());
    for (si, &scheme) in schemes.iter().enumerate() {
        let (mut r, mut l) = (Vec::new(), Vec::new());
        for (p, pr) in prepared.iter().zip(&preds) {
            if let Some(v) = pr[si] {
                r.push(v);
                l.push(label64(&p.label));
            }
        }
        if r.len() < prepared.len() {
            log::warn!("scheme {scheme}: {} patients lack a required modality", prepared.len() - r.len());
        }
        out.push(SchemeEval { scheme, n_excluded: prepared.len() - r.len(), summary: summarize(&r, &l) });
    }
    Ok(EvalReport { n_patients: records.len(), schemes: out })
}

/// `time,survival,group` rows; each curve starts with `S(0) = 1`.
pub fn km_csv(curves: &[(String, &SurvivalCurve)]) -> String {
    let mut s = String::from("time,survival,group\n");
    for (group, c) in curves {
        s.push_str(&format!("0,1,{group}\n"));
        for (t, v) in c.times.iter().zip(&c.survival) {
            s.push_str(&format!("{t},{v},{group}\n"));
        }
    }
    s
}

/// KM CSV of the high/low groups of a summary, or `None` if either is missing.
pub fn summary_km_csv(s: &GroupSummary) -> Option<String> {
    let (hi, lo) = (s.km_high.as_ref()?, s.km_low.as_ref()?);
    Some(km_csv(&[("high".to_string(), hi), ("low".to_string(), lo)]))
}

/// Per-scheme mean C-indices keyed by scheme name, for quick comparisons.
pub fn mean_c_indices(report: &CvReport) -> BTreeMap<String, Option<f64>> {
    report.schemes.iter().map(|s| (s.scheme.to_string(), s.mean_c_index)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::generate_synthetic_cohort;
    use crate::survival::test_config;
    use proptest::prelude::*;

    #[test]
    fn fold_sizes_for_23() {
        assert_eq!(fold_sizes(23, 5), vec![5, 5, 5, 4, 4]);
        let p = FoldPlan::new(23, 5, 0.25, 1).unwrap();
        assert_eq!(p.folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5, 5, 4, 4]);
        assert_eq!(p, FoldPlan::new(23, 5, 0.25, 1).unwrap());
        assert!(FoldPlan::new(3, 5, 0.25, 1).is_err());
    }

    proptest! {
        #[test]
        fn plan_is_partition(n in 5usize..120, k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let p = FoldPlan::new(n, k, 0.25, seed).unwrap();
            let mut all: Vec<usize> = p.folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..k {
                let s = p.split(f);
                let mut u: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
                u.sort_unstable();
                prop_assert_eq!(u, (0..n).collect::<Vec<_>>());
                let rest = n - s.test.len();
                prop_assert_eq!(s.val.len(), (0.25 * rest as f64).round() as usize);
            }
        }
    }

    #[test]
    fn km_csv_layout() {
        let c = SurvivalCurve { times: vec![1.0, 2.5], survival: vec![0.5, 0.25], at_risk: vec![2, 1], events: vec![1, 1] };
        assert_eq!(km_csv(&[("high".into(), &c)]), "time,survival,group\n0,1,high\n1,0.5,high\n2.5,0.25,high\n");
    }

    #[test]
    fn small_cross_validation_is_deterministic() {
        let mut cfg = test_config();
        cfg.data.n_patients = 12;
        cfg.train.epochs = 1;
        cfg.train.batch = 4;
        cfg.eval.folds = 3;
        cfg.schemes = vec![Scheme::FULL, "P".parse().unwrap()];
        let cohort = generate_synthetic_cohort::<f64>(&cfg.data, 2).unwrap();
        let a = cross_validate(&cohort, &cfg).unwrap();
        let b = cross_validate(&cohort, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.schemes.len(), 2);
        assert_eq!(a.fold_sizes, vec![4, 4, 4]);
        let mut par = cfg.clone();
        par.eval.workers = 3;
        assert_eq!(cross_validate(&cohort, &par).unwrap().to_json(), a.to_json());
        assert!(cross_validate(&cohort[..9], &cfg).is_err());
    }

    #[test]
    fn evaluation_counts_excluded_patients() {
        let cfg = test_config();
        let mut cohort = generate_synthetic_cohort::<f64>(&cfg.data, 3).unwrap();
        cohort[0] = cohort[0].without(crate::hetgraph::Modality::Clinical).unwrap();
        let pipe = Pipeline::<f64>::new(cfg).unwrap();
        let r = evaluate_pipeline(&pipe, &cohort, &Scheme::ALL).unwrap();
        assert_eq!(r.schemes.len(), 7);
        assert_eq!(r.scheme(Scheme::FULL).unwrap().n_excluded, 1);
        assert_eq!(r.scheme("P&G".parse().unwrap()).unwrap().n_excluded, 0);
    }
}

//! Synthetic multimodal cohorts with a planted latent risk factor.
//!
//! Every patient draws a standardized latent `u ~ N(0, 1)`. Pathology patches,
//! gene expression and a few clinical fields are noisy functions of `u`; the
//! event time is exponential with hazard `exp(latent_scale · u)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::build::{build_clinical_graph, build_gene_graph, build_pathology_graph, pad_graph};
use crate::hetgraph::{GeneGroup, HetGraph, Modality, PatientRecord, SurvivalLabel};
use crate::numeric::{derive_seed, rng_from_seed, SeededRng, Tensor};
use crate::scalar::Scalar;

/// Planted signal strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskModel {
    /// Log-hazard is `latent_scale · u`.
    pub latent_scale: f64,
    pub pathology_signal: f64,
    pub genomic_signal: f64,
    pub clinical_signal: f64,
    /// Per-value Gaussian noise added to pathology and gene features.
    pub noise: f64,
    /// Fraction of patches that carry the tumor signal.
    pub tumor_fraction: f64,
}

impl Default for RiskModel {
    fn default() -> Self {
        Self {
            latent_scale: 10.0,
            pathology_signal: 1.0,
            genomic_signal: 1.0,
            clinical_signal: 1.0,
            noise: 1.0,
            tumor_fraction: 0.5,
        }
    }
}

/// Shape of a generated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub genes: usize,
    pub clinical_fields: usize,
    /// Common feature width after zero padding.
    pub feature_dim: usize,
    pub censor_rate: f64,
    /// Probability of dropping each modality per patient (at least one is kept).
    pub missing_rate: f64,
    pub risk: RiskModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            grid_h: 6,
            grid_w: 6,
            genes: 40,
            clinical_fields: 6,
            feature_dim: 64,
            censor_rate: 0.3,
            missing_rate: 0.0,
            risk: RiskModel::default(),
        }
    }
}

/// Gene features: group one-hot followed by one expression column per group.
pub const GENE_RAW_DIM: usize = 10;

// (name, width) of the clinical record fields, in order.
const CLINICAL_FIELDS: [(&str, usize); 6] =
    [("age", 1), ("gender", 2), ("bmi", 1), ("treatment", 3), ("stage", 4), ("grade", 3)];

pub const MAX_CLINICAL_FIELDS: usize = CLINICAL_FIELDS.len();

impl SynthConfig {
    pub fn clinical_width(&self) -> usize {
        CLINICAL_FIELDS[..self.clinical_fields.min(MAX_CLINICAL_FIELDS)].iter().map(|f| f.1).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 2 {
            return Err(Error::config(format!("need at least 2 patients, got {}", self.n_patients)));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(Error::config(format!("censor_rate {} outside [0, 1)", self.censor_rate)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config(format!("missing_rate {} outside [0, 1)", self.missing_rate)));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::config("patch grid must be at least 1×1"));
        }
        if self.genes == 0 {
            return Err(Error::config("need at least one gene"));
        }
        if self.clinical_fields == 0 || self.clinical_fields > MAX_CLINICAL_FIELDS {
            return Err(Error::config(format!(
                "clinical_fields must be in 1..={MAX_CLINICAL_FIELDS}, got {}",
                self.clinical_fields
            )));
        }
        let need = GENE_RAW_DIM.max(self.clinical_width());
        if self.feature_dim < need {
            return Err(Error::config(format!(
                "feature_dim {} is below the raw width {need}",
                self.feature_dim
            )));
        }
        let r = &self.risk;
        let finite = [r.latent_scale, r.pathology_signal, r.genomic_signal, r.clinical_signal, r.noise];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || r.latent_scale == 0.0 {
            return Err(Error::config("risk model coefficients must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&r.tumor_fraction) {
            return Err(Error::config("tumor_fraction outside [0, 1]"));
        }
        Ok(())
    }
}

/// Cohort-wide fixed directions shared by all patients.
struct Loadings {
    patch_base: Vec<f64>,
    patch_signal: Vec<f64>,
    patch_nuisance: Vec<f64>,
    gene_groups: Vec<GeneGroup>,
    gene_loading: Vec<f64>,
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl Loadings {
    fn draw(cfg: &SynthConfig, rng: &mut SeededRng) -> Self {
        let d = cfg.feature_dim;
        let patch_base = (0..d).map(|_| 0.5 * normal(rng)).collect();
        let patch_signal = unit_vector(d, rng).into_iter().map(|v| v * (d as f64).sqrt()).collect();
        let patch_nuisance = unit_vector(d, rng).into_iter().map(|v| v * (d as f64).sqrt()).collect();
        let gene_groups: Vec<GeneGroup> = (0..cfg.genes).map(|i| GeneGroup::ALL[i % 5]).collect();
        let gene_loading = gene_groups
            .iter()
            .map(|g| {
                let sign = match g {
                    GeneGroup::TumorSuppressor | GeneGroup::CellDifferentiation => -1.0,
                    _ => 1.0,
                };
                sign * rng.random_range(0.5..1.5)
            })
            .collect();
        Self { patch_base, patch_signal, patch_nuisance, gene_groups, gene_loading }
    }
}

fn one_hot(width: usize, hot: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[hot] = 1.0;
    v
}

fn bin(v: f64, cuts: &[f64]) -> usize {
    cuts.iter().filter(|&&c| v > c).count()
}

fn patient_graphs<T: Scalar>(
    cfg: &SynthConfig,
    load: &Loadings,
    u: f64,
    rng: &mut SeededRng,
) -> Result<[HetGraph<T>; 3]> {
    let r = &cfg.risk;
    let d = cfg.feature_dim;

    let nuisance = normal(rng);
    let mut patches = Vec::with_capacity(cfg.grid_h * cfg.grid_w * d);
    for _ in 0..cfg.grid_h * cfg.grid_w {
        let tumor = rng.random::<f64>() < r.tumor_fraction;
        let s = if tumor { r.pathology_signal * u } else { 0.0 };
        for k in 0..d {
            let v = load.patch_base[k]
                + s * load.patch_signal[k]
                + 0.5 * nuisance * load.patch_nuisance[k]
                + r.noise * normal(rng);
            patches.push(T::lit(v));
        }
    }
    let path = build_pathology_graph(&Tensor::new(vec![cfg.grid_h, cfg.grid_w, d], patches)?)?;

    let mut genes = Vec::with_capacity(cfg.genes * GENE_RAW_DIM);
    for (g, &grp) in load.gene_groups.iter().enumerate() {
        let mut row = one_hot(GENE_RAW_DIM, grp.index());
        row[5 + grp.index()] = r.genomic_signal * load.gene_loading[g] * u + r.noise * normal(rng);
        genes.extend(row.into_iter().map(T::lit));
    }
    let gene = build_gene_graph(
        &Tensor::new(vec![cfg.genes, GENE_RAW_DIM], genes)?,
        &load.gene_groups,
    )?;

    let c = r.clinical_signal;
    let mut fields = Vec::new();
    for &(name, width) in &CLINICAL_FIELDS[..cfg.clinical_fields] {
        let v = match name {
            "age" => vec![0.4 * c * u + 0.9 * normal(rng)],
            "gender" => one_hot(width, rng.random_range(0..width)),
            "bmi" => vec![normal(rng)],
            "treatment" => one_hot(width, rng.random_range(0..width)),
            "stage" => one_hot(width, bin(0.8 * c * u + 0.6 * normal(rng), &[-0.8, 0.0, 0.8])),
            "grade" => one_hot(width, bin(0.6 * c * u + 0.8 * normal(rng), &[-0.5, 0.5])),
            _ => unreachable!("fixed field list"),
        };
        fields.push(Tensor::vector(v.into_iter().map(T::lit).collect()));
    }
    let clin = build_clinical_graph(&fields)?;

    Ok([path, pad_graph(gene, d)?, pad_graph(clin, d)?])
}

/// Generates `cfg.n_patients` records; identical seeds give identical cohorts.
pub fn generate_synthetic_cohort<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<Vec<PatientRecord<T>>> {
    cfg.validate()?;
    let mut load_rng = rng_from_seed(derive_seed(seed, 0));
    let load = Loadings::draw(cfg, &mut load_rng);
    let mut out = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let mut rng = rng_from_seed(derive_seed(seed, 1 + i as u64));
        let u = normal(&mut rng);
        let graphs = patient_graphs::<T>(cfg, &load, u, &mut rng)?;

        let hazard = (cfg.risk.latent_scale * u).exp();
        let e: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let t_event = -e.ln() / hazard;
        let censored = rng.random::<f64>() < cfg.censor_rate;
        let time = if censored {
            let v: f64 = 1.0 - rng.random::<f64>();
            t_event * v
        } else {
            t_event
        };
        // exp(-ln e) underflow cannot produce 0 for e in (0,1) except e == 1
        let time = if time > 0.0 { time } else { f64::MIN_POSITIVE };

        let mut keep = [true; 3];
        if cfg.missing_rate > 0.0 {
            for k in &mut keep {
                *k = rng.random::<f64>() >= cfg.missing_rate;
            }
            if !keep.iter().any(|&k| k) {
                keep[rng.random_range(0..3)] = true;
            }
        }
        let [p, g, c] = graphs;
        out.push(PatientRecord::new(
            format!("patient-{i:04}"),
            keep[Modality::Pathology.index()].then_some(p),
            keep[Modality::Genomic.index()].then_some(g),
            keep[Modality::Clinical.index()].then_some(c),
            SurvivalLabel::new(T::lit(time), !censored)?,
        )?);
    }
    Ok(out)
}

/// The planted standardized latent of each patient, regenerated from the seed.
/// Used to verify that the planted signal is recoverable.
pub fn planted_latents(cfg: &SynthConfig, seed: u64) -> Vec<f64> {
    (0..cfg.n_patients)
        .map(|i| normal(&mut rng_from_seed(derive_seed(seed, 1 + i as u64))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { n_patients: 12, ..SynthConfig::default() }
    }

    #[test]
    fn no_censoring_means_all_events() {
        let cfg = SynthConfig { censor_rate: 0.0, ..small() };
        let c = generate_synthetic_cohort::<f64>(&cfg, 3).unwrap();
        assert!(c.iter().all(|p| p.label.event));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic_cohort::<f64>(&small(), 5).unwrap();
        let b = generate_synthetic_cohort::<f64>(&small(), 5).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_cohort::<f64>(&small(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_config() {
        let c = generate_synthetic_cohort::<f64>(&small(), 1).unwrap();
        let p = &c[0];
        assert_eq!(p.pathology.as_ref().unwrap().num_nodes(), 36);
        assert_eq!(p.genomic.as_ref().unwrap().num_nodes(), 40);
        assert_eq!(p.clinical.as_ref().unwrap().num_nodes(), 6);
        for m in Modality::ALL {
            assert_eq!(p.graph(m).unwrap().feature_dim(), 64);
        }
        assert!(c.iter().all(|p| p.label.time > 0.0));
    }

    #[test]
    fn degenerate_configs_rejected() {
        for bad in [
            SynthConfig { n_patients: 1, ..small() },
            SynthConfig { censor_rate: 1.0, ..small() },
            SynthConfig { feature_dim: 8, ..small() },
            SynthConfig { clinical_fields: 7, ..small() },
            SynthConfig { genes: 0, ..small() },
        ] {
            assert!(matches!(generate_synthetic_cohort::<f64>(&bad, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn missing_rate_keeps_one_modality() {
        let cfg = SynthConfig { missing_rate: 0.9, n_patients: 50, ..small() };
        let c = generate_synthetic_cohort::<f64>(&cfg, 2).unwrap();
        assert!(c.iter().all(|p| !p.available().is_empty()));
        assert!(c.iter().any(|p| p.available().len() < 3));
    }

    #[test]
    fn planted_latents_are_deterministic() {
        let cfg = small();
        let u = planted_latents(&cfg, 9);
        assert_eq!(u.len(), 12);
        assert_eq!(u, planted_latents(&cfg, 9));
    }
}

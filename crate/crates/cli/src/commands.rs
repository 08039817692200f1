use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use hetsurv::config::Config;
use hetsurv::error::{Error, Result};
use hetsurv::eval::{cross_validate, evaluate_pipeline, summary_km_csv};
use hetsurv::hetgraph::{generate_synthetic_cohort, read_cohort, write_cohort, Modality, PatientRecord};
use hetsurv::persist::write_atomic;
use hetsurv::survival::{train as train_pipeline, Checkpoint, EpochLosses, Pipeline, Scheme};

use crate::Common;

type Record = PatientRecord<f64>;

/// Provenance of one command invocation.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    /// SHA-256 of the resolved config in TOML form.
    config_hash: String,
    seed: u64,
    started_unix: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &'static str, cfg: &Config, inputs: &[&Path], outputs: Vec<PathBuf>) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: format!("{:x}", Sha256::digest(cfg.to_toml().as_bytes())),
            seed: cfg.train.seed,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs,
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }
}

/// File config (or defaults), then `--paper-scale`, `--set` and `--seed`.
fn resolve_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            Config::from_toml(&text)?
        }
        None => Config::default(),
    };
    if common.paper_scale {
        cfg = cfg.paper_scale();
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn user_config_given(common: &Common) -> bool {
    common.config.is_some() || common.paper_scale || !common.overrides.is_empty()
}

fn load_cohort(path: &Path) -> Result<Vec<Record>> {
    let cohort: Vec<Record> = read_cohort(path)?;
    if cohort.is_empty() {
        return Err(Error::Schema(format!("{} holds no patients", path.display())));
    }
    Ok(cohort)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

/// Model for a checkpoint. An explicit config must match its shapes;
/// otherwise the echoed config is used.
fn pipeline_from(common: &Common, ck: &Checkpoint) -> Result<Pipeline<f64>> {
    if user_config_given(common) {
        let cfg = resolve_config(common)?;
        Pipeline::from_checkpoint(ck, Some(&cfg))
    } else {
        Pipeline::from_checkpoint(ck, None)
    }
}

fn event_rate(cohort: &[Record]) -> f64 {
    cohort.iter().filter(|r| r.label.event).count() as f64 / cohort.len() as f64
}

fn scheme_code(s: Scheme) -> String {
    s.modalities().iter().map(|m| m.letter()).collect()
}

pub fn generate(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let cohort: Vec<Record> = generate_synthetic_cohort(&cfg.data, cfg.train.seed)?;
    write_cohort(&cohort, &common.out)?;
    let d = &cfg.data;
    println!(
        "wrote {} patients to {} (event rate {:.3}; patch grid {}x{}, {} genes, {} clinical fields, feature dim {})",
        cohort.len(),
        common.out.display(),
        event_rate(&cohort),
        d.grid_h,
        d.grid_w,
        d.genes,
        d.clinical_fields,
        d.feature_dim
    );
    Ok(())
}

fn trace_csv(trace: &[EpochLosses], mods: &[Modality]) -> String {
    let mut s = String::from("epoch,I_MER,I_CMAE");
    for m in mods {
        s.push_str(&format!(",I_Cox_{}", m.letter()));
    }
    s.push_str(",I_total\n");
    for r in trace {
        s.push_str(&format!("{},{},{}", r.epoch, r.mer, r.cmae));
        for m in mods {
            s.push_str(&format!(",{}", r.cox.get(m).copied().unwrap_or(0.0)));
        }
        s.push_str(&format!(",{}\n", r.total));
    }
    s
}

pub fn train(common: &Common, cohort_path: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let cohort = load_cohort(cohort_path)?;
    let mut pipe = Pipeline::<f64>::new(cfg.clone())?;
    let prepared = cohort.iter().map(|r| pipe.prepare(r)).collect::<Result<Vec<_>>>()?;
    if !cohort.iter().any(|r| r.label.event) {
        return Err(Error::Training("cohort has no events; the Cox loss is undefined".into()));
    }

    let out = &common.out;
    std::fs::create_dir_all(out)?;
    let ckpt_path = out.join("checkpoint.json");
    let trace_path = out.join("loss_trace.csv");
    RunManifest::new("train", &cfg, &[cohort_path], vec![ckpt_path.clone(), trace_path.clone()]).write(out)?;

    let report = train_pipeline(&mut pipe, &prepared, &[])?;
    let mods: Vec<Modality> =
        Modality::ALL.into_iter().filter(|&m| cfg.schemes.iter().any(|s| s.contains(m))).collect();
    write_atomic(&ckpt_path, pipe.to_checkpoint().to_json().as_bytes())?;
    write_atomic(&trace_path, trace_csv(&report.trace, &mods).as_bytes())?;
    match (report.trace.first(), report.trace.last()) {
        (Some(f), Some(l)) => println!(
            "trained {} epochs on {} patients: I_total {:.4} -> {:.4}",
            report.trace.len(),
            cohort.len(),
            f.total,
            l.total
        ),
        _ => println!("0 epochs: wrote initial parameters"),
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

pub fn evaluate(common: &Common, cohort_path: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let cohort = load_cohort(cohort_path)?;
    let out = &common.out;
    let metrics_path = out.join("metrics.json");
    let mut inputs = vec![cohort_path];

    let (cfg, metrics, km): (Config, String, Vec<(String, Option<String>)>) = match checkpoint {
        Some(ck_path) => {
            inputs.push(ck_path);
            let pipe = pipeline_from(common, &load_checkpoint(ck_path)?)?;
            let schemes = if user_config_given(common) { resolve_config(common)?.schemes } else { pipe.scheme_list() };
            let report = evaluate_pipeline(&pipe, &cohort, &schemes)?;
            if report.schemes.iter().all(|s| s.summary.n == 0) {
                return Err(Error::Evaluation("no patient has the modalities of any scheme".into()));
            }
            for s in &report.schemes {
                println!(
                    "{:<6} n={:<4} excluded={:<4} C-index={}",
                    s.scheme.to_string(),
                    s.summary.n,
                    s.n_excluded,
                    s.summary.c_index.map_or("undefined".into(), |c| format!("{c:.4}"))
                );
            }
            let km = report.schemes.iter().map(|s| (scheme_code(s.scheme), summary_km_csv(&s.summary))).collect();
            (pipe.config.clone(), report.to_json(), km)
        }
        None => {
            let cfg = resolve_config(common)?;
            std::fs::create_dir_all(out)?;
            RunManifest::new("evaluate", &cfg, &inputs, vec![metrics_path.clone()]).write(out)?;
            let report = cross_validate(&cohort, &cfg)?;
            for s in &report.schemes {
                println!(
                    "{:<6} mean C-index {} ± {}  pooled log-rank p {}  excluded {}",
                    s.scheme.to_string(),
                    s.mean_c_index.map_or("undefined".into(), |c| format!("{c:.4}")),
                    s.sd_c_index.map_or("-".into(), |c| format!("{c:.4}")),
                    s.pooled.logrank.map_or("undefined".into(), |l| format!("{:.3e}", l.p_value)),
                    s.n_excluded
                );
            }
            let km = report.schemes.iter().map(|s| (scheme_code(s.scheme), summary_km_csv(&s.pooled))).collect();
            (cfg, report.to_json(), km)
        }
    };

    std::fs::create_dir_all(out)?;
    if checkpoint.is_some() {
        RunManifest::new("evaluate", &cfg, &inputs, vec![metrics_path.clone()]).write(out)?;
    }
    write_atomic(&metrics_path, metrics.as_bytes())?;
    for (code, csv) in km {
        match csv {
            Some(csv) => write_atomic(&out.join(format!("km_{code}.csv")), csv.as_bytes())?,
            None => log::warn!("scheme {code}: median split is degenerate; no KM curves written"),
        }
    }
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

pub fn predict(common: &Common, cohort_path: &Path, ckpt_path: &Path, scheme: &str) -> Result<()> {
    let scheme: Scheme = scheme.parse()?;
    let cohort = load_cohort(cohort_path)?;
    let pipe = pipeline_from(common, &load_checkpoint(ckpt_path)?)?;
    if !pipe.schemes.contains_key(&scheme) {
        return Err(Error::Config(format!("checkpoint has no head for scheme {scheme}")));
    }
    let mut csv = String::from("patient_id,scheme,s_final,risk\n");
    let mut skipped = 0usize;
    let mut rows = 0usize;
    for rec in &cohort {
        if let Some(m) = scheme.missing_from(&rec.available()) {
            log::warn!("patient `{}` lacks {m}; skipped", rec.id);
            skipped += 1;
            continue;
        }
        let r = pipe.predict(rec, scheme)?;
        csv.push_str(&format!("{},{},{},{}\n", rec.id, scheme, r.s_final, r.risk));
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Evaluation(format!("no patient has every modality of scheme {scheme}")));
    }
    write_atomic(&common.out, csv.as_bytes())?;
    println!("wrote {rows} predictions to {} ({skipped} skipped)", common.out.display());
    Ok(())
}

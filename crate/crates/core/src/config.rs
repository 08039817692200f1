//! Run configuration: every tunable knob, TOML-serializable, validated at load.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::SynthConfig;
use crate::survival::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FerConfig {
    /// Edge masking rate.
    pub pe: f64,
    /// Exponent of the scaled cosine error.
    pub tau: f64,
    /// GCN layers in each of the encoder and decoder.
    pub layers: usize,
    /// Width of the node embeddings handed to the masked autoencoder.
    pub hidden: usize,
    pub attention_dim: usize,
}

impl Default for FerConfig {
    fn default() -> Self {
        Self { pe: 0.5, tau: 2.0, layers: 2, hidden: 32, attention_dim: 32 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrnConfig {
    /// Use the bare `x · n` recalibration instead of the affine residual form.
    pub literal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaeConfig {
    pub mask_ratio: f64,
    /// Multiplier on the 1:1:3:1 stage block counts.
    pub depth: usize,
    /// Channel width of the encoder and decoder.
    pub width: usize,
    pub grn: GrnConfig,
}

impl Default for CmaeConfig {
    fn default() -> Self {
        Self { mask_ratio: 0.6, depth: 1, width: 32, grn: GrnConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalConfig {
    /// Weight of the masked-autoencoder loss.
    pub alpha: f64,
    /// Weight of each modality's Cox loss.
    pub beta: f64,
    /// Log-hazard is `sign · score`; the reported risk uses the same sign.
    pub sign: f64,
    /// Hidden width of each survival head; 0 makes the head a single linear map.
    pub head_hidden: usize,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self { alpha: 5.0, beta: 1.0, sign: -1.0, head_hidden: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Validation C-index is computed every this many epochs.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch: 32, epochs: 50, lr: 1e-3, dropout: 0.1, seed: 7, val_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub folds: usize,
    /// Share of each training portion held out for model selection.
    pub val_fraction: f64,
    /// Folds trained concurrently.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { folds: 5, val_fraction: 0.25, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: SynthConfig,
    pub fer: FerConfig,
    pub cmae: CmaeConfig,
    pub survival: SurvivalConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub schemes: Vec<Scheme>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data: SynthConfig::default(),
            fer: FerConfig::default(),
            cmae: CmaeConfig::default(),
            survival: SurvivalConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            schemes: Scheme::ALL.to_vec(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl Config {
    /// Hyperparameters of the published large-scale setting.
    pub fn paper_scale(mut self) -> Self {
        self.train.batch = 128;
        self.train.epochs = 500;
        self.train.lr = 3e-4;
        self.train.dropout = 0.3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let f = &self.fer;
        check((0.0..1.0).contains(&f.pe), || format!("fer.pe {} outside [0, 1)", f.pe))?;
        check(f.tau.is_finite() && f.tau > 0.0, || format!("fer.tau must be positive, got {}", f.tau))?;
        check(f.layers >= 1, || "fer.layers must be at least 1".into())?;
        check(f.hidden >= 1, || "fer.hidden must be at least 1".into())?;
        check(f.attention_dim >= 1, || "fer.attention_dim must be at least 1".into())?;
        let c = &self.cmae;
        check((0.0..1.0).contains(&c.mask_ratio), || {
            format!("cmae.mask_ratio {} outside [0, 1)", c.mask_ratio)
        })?;
        check(c.depth >= 1, || "cmae.depth must be at least 1".into())?;
        check(c.width >= 1, || "cmae.width must be at least 1".into())?;
        let s = &self.survival;
        check(s.alpha.is_finite() && s.alpha >= 0.0, || format!("survival.alpha {} must be ≥ 0", s.alpha))?;
        check(s.beta.is_finite() && s.beta >= 0.0, || format!("survival.beta {} must be ≥ 0", s.beta))?;
        check(s.sign == 1.0 || s.sign == -1.0, || format!("survival.sign must be 1 or -1, got {}", s.sign))?;
        let t = &self.train;
        check(t.batch >= 1, || "train.batch must be at least 1".into())?;
        check(t.lr.is_finite() && t.lr >= 0.0, || format!("train.lr {} must be ≥ 0", t.lr))?;
        check((0.0..1.0).contains(&t.dropout), || format!("train.dropout {} outside [0, 1)", t.dropout))?;
        check(t.val_every >= 1, || "train.val_every must be at least 1".into())?;
        let e = &self.eval;
        check(e.folds >= 2, || format!("eval.folds must be at least 2, got {}", e.folds))?;
        check((0.0..1.0).contains(&e.val_fraction), || {
            format!("eval.val_fraction {} outside [0, 1)", e.val_fraction)
        })?;
        check(e.workers >= 1, || "eval.workers must be at least 1".into())?;
        check(!self.schemes.is_empty(), || "at least one scheme is required".into())?;
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        check(seen.len() == self.schemes.len(), || "schemes must not repeat".into())?;
        Ok(())
    }

    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one dotted key, e.g. `train.epochs=10` or `schemes=["P"]`.
    /// The value is read as a TOML literal, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Table::try_from(&*self).expect("config serializes");
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut table = &mut root;
        for p in path {
            table = table
                .get_mut(*p)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown config section `{p}` in `{key}`")))?;
        }
        if !table.contains_key(*last) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(last.to_string(), parsed);
        let cfg: Config = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        let p = Config::default().paper_scale();
        assert_eq!((p.train.batch, p.train.epochs, p.train.lr, p.train.dropout), (128, 500, 3e-4, 0.3));
        assert_eq!(Config::from_toml(&p.to_toml()).unwrap(), p);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(Config::from_toml("[train]\nepochz = 3\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[nope]\n"), Err(Error::Config(_))));
    }

    #[test]
    fn partial_file_takes_defaults() {
        let c = Config::from_toml("schemes = [\"P\", \"P&G&C\"]\n[fer]\npe = 0.25\n").unwrap();
        assert_eq!(c.fer.pe, 0.25);
        assert_eq!(c.fer.tau, 2.0);
        assert_eq!(c.schemes.len(), 2);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml("[data]\ncensor_rate = 1.5\n").is_err());
        assert!(Config::from_toml("[survival]\nsign = 0.5\n").is_err());
        assert!(Config::from_toml("[fer]\npe = 1.0\n").is_err());
        assert!(Config::from_toml("schemes = []\n").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = Config::default();
        c.set("train.epochs", "3").unwrap();
        c.set("cmae.grn.literal", "true").unwrap();
        c.set("schemes", "[\"G\"]").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert!(c.cmae.grn.literal);
        assert_eq!(c.schemes, vec!["G".parse().unwrap()]);
        assert!(c.set("train.nope", "1").is_err());
        assert!(c.set("data.censor_rate", "2.0").is_err());
        assert_eq!(c.data.censor_rate, 0.3);
    }
}

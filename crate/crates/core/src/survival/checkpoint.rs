//! JSON checkpoints: config echo, seed and every named parameter tensor.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::scalar::Scalar;
use crate::survival::Pipeline;

pub const CHECKPOINT_FORMAT: &str = "hetsurv-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: Config,
    /// In parameter-store order.
    pub params: Vec<CheckpointParam>,
}

impl Checkpoint {
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("checkpoint line {}", e.line()),
            message: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "format `{}` is not `{CHECKPOINT_FORMAT}`",
                ck.format
            )));
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }
}

impl<T: Scalar> Pipeline<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            seed: self.config.train.seed,
            config: self.config.clone(),
            params: self
                .store
                .iter()
                .map(|p| CheckpointParam {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.to_f64_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds a pipeline from `ck`. With `config` given, the model is
    /// built from that config instead of the echoed one and every parameter
    /// must match it by name and shape.
    pub fn from_checkpoint(ck: &Checkpoint, config: Option<&Config>) -> Result<Self> {
        let mut cfg = config.cloned().unwrap_or_else(|| ck.config.clone());
        cfg.train.seed = ck.seed;
        let mut pipe = Pipeline::new(cfg)?;
        if pipe.store.len() != ck.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model has {}",
                ck.params.len(),
                pipe.store.len()
            )));
        }
        for cp in &ck.params {
            let id = pipe
                .store
                .id_of(&cp.name)
                .ok_or_else(|| Error::Checkpoint(format!("model has no parameter `{}`", cp.name)))?;
            let have = pipe.store.value(id).shape().to_vec();
            if have != cp.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?} in the checkpoint but {:?} in the model",
                    cp.name, cp.shape, have
                )));
            }
            let t = Tensor::from_f64(&cp.shape, &cp.values)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", cp.name)))?;
            pipe.store.get_mut(id).value = t;
        }
        Ok(pipe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::generate_synthetic_cohort;
    use crate::survival::{test_config, Scheme};

    #[test]
    fn roundtrip_is_exact() {
        let cfg = test_config();
        let pipe = Pipeline::<f64>::new(cfg.clone()).unwrap();
        let json = pipe.to_checkpoint().to_json();
        let back = Pipeline::<f64>::from_checkpoint(&Checkpoint::from_json(&json).unwrap(), None).unwrap();
        assert_eq!(back.store, pipe.store);
        assert_eq!(back.to_checkpoint().to_json(), json);
        let rec = &generate_synthetic_cohort::<f64>(&cfg.data, 1).unwrap()[0];
        assert_eq!(back.predict(rec, Scheme::FULL).unwrap(), pipe.predict(rec, Scheme::FULL).unwrap());
    }

    #[test]
    fn f32_roundtrip() {
        let pipe = Pipeline::<f32>::new(test_config()).unwrap();
        let ck = Checkpoint::from_json(&pipe.to_checkpoint().to_json()).unwrap();
        assert_eq!(Pipeline::<f32>::from_checkpoint(&ck, None).unwrap().store, pipe.store);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let pipe = Pipeline::<f64>::new(test_config()).unwrap();
        let ck = pipe.to_checkpoint();
        let mut other = test_config();
        other.cmae.width = 7;
        match Pipeline::<f64>::from_checkpoint(&ck, Some(&other)) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("[3, 3, 8, 6]") && msg.contains("[3, 3, 8, 7]"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_format_and_garbage() {
        let pipe = Pipeline::<f64>::new(test_config()).unwrap();
        let json = pipe.to_checkpoint().to_json().replace(CHECKPOINT_FORMAT, "other-v9");
        assert!(matches!(Checkpoint::from_json(&json), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::from_json("{"), Err(Error::Parse { .. })));
    }
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "csd-model";

/// Versioned, structured-text model checkpoint. Floats are written in their
/// shortest round-trip form, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Training stage after which the checkpoint was written, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    pub model: EmbeddingModel,
}

impl Checkpoint {
    pub fn new(model: EmbeddingModel, stage: Option<usize>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            stage,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != FORMAT {
            return Err(Error::parse("checkpoint", format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                "checkpoint",
                format!("unsupported version {} (expected {CHECKPOINT_VERSION})", ckpt.version),
            ));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(model: &EmbeddingModel, stage: Option<usize>, path: &Path) -> Result<()> {
    let text = Checkpoint::new(model.clone(), stage).to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, EmbeddingModel};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), scale in -1e6f64..1e6, bias in any::<bool>()) {
            let arch = Architecture { input_dim: 3, hidden: vec![4], feature_dim: 2, classifier_bias: bias };
            let mut m = EmbeddingModel::new(arch, seed).unwrap().extend_classifier(&[4, 0, 9]).unwrap();
            m.repr_params_mut().iter_mut().for_each(|p| *p *= scale);
            let back = Checkpoint::from_json(&Checkpoint::new(m.clone(), Some(2)).to_json().unwrap()).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.model.repr_params()), bits(m.repr_params()));
            prop_assert_eq!(bits(back.model.classifier_params()), bits(m.classifier_params()));
            prop_assert_eq!(back.model, m);
        }
    }

    #[test]
    fn rejects_other_versions() {
        let m = crate::model::reference_network(2, &[], 2, 0).unwrap();
        let text = Checkpoint::new(m, None)
            .to_json()
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        assert!(Checkpoint::from_json(&text).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = crate::model::reference_network(2, &[3], 2, 4)
            .unwrap()
            .extend_classifier(&[1])
            .unwrap();
        save_checkpoint(&m, Some(0), &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().model, m);
    }
}

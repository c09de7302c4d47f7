//! Model files: JSON with a version tag, dimensions, vocabulary and
//! row-major weights.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matrix::Matrix;
use super::model::{Dims, EmbeddingModel, Weights};
use crate::dtw::MetricParams;
use crate::error::{invalid, Result};
use crate::featurize::Vocabulary;

pub const MODEL_VERSION: &str = "parttransfer-embed/1";

/// Cross-validation split a model was trained on, so evaluation can pick
/// the matching held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub folds: usize,
    pub fold: usize,
    pub fold_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub dims: Dims,
    pub seed: u64,
    pub m_norm: usize,
    pub vocab: Vocabulary,
    pub metric: MetricParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<Holdout>,
    pub weights: Weights,
}

impl ModelFile {
    pub fn new(model: &EmbeddingModel, metric: MetricParams, holdout: Option<Holdout>) -> Self {
        ModelFile {
            version: MODEL_VERSION.to_string(),
            dims: model.dims,
            seed: model.seed,
            m_norm: model.m_norm,
            vocab: model.vocab.clone(),
            metric,
            holdout,
            weights: model.weights.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.check()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(invalid(format!(
                "unsupported model version {:?}",
                self.version
            )));
        }
        let d = &self.dims;
        let w = &self.weights;
        let expect: [(&Matrix, usize, usize); 8] = [
            (&w.w1p, d.h1_p, d.n_p + 1),
            (&w.w1l, d.h1_l, d.n_l + 1),
            (&w.w2p, d.h2_pl, d.h1_p),
            (&w.w2l, d.h2_pl, d.h1_l),
            (&w.w3pl, d.m, d.h2_pl),
            (&w.w1t, d.h1_tau, d.n_tau + 1),
            (&w.w2t, d.h2_tau, d.h1_tau),
            (&w.w3t, d.m, d.h2_tau),
        ];
        for ((m, rows, cols), name) in expect.into_iter().zip(Weights::NAMES) {
            if (m.rows, m.cols) != (rows, cols) || m.data.len() != rows * cols {
                return Err(invalid(format!("weight {name} has the wrong shape")));
            }
        }
        if !w.is_finite() {
            return Err(invalid("model weights must be finite"));
        }
        self.metric.validate()
    }

    pub fn into_model(self) -> Result<EmbeddingModel> {
        let mut model = EmbeddingModel::new(self.dims, self.vocab, self.m_norm, self.seed)?;
        model.weights = self.weights;
        Ok(model)
    }
}

/// Hex SHA-256 over dimensions, vocabulary and the bit patterns of every
/// weight; identifies the model that produced an embedded library.
pub fn fingerprint(model: &EmbeddingModel) -> String {
    let mut h = Sha256::new();
    let d = &model.dims;
    for v in [
        d.n_p,
        d.n_l,
        d.n_tau,
        d.h1_p,
        d.h1_l,
        d.h1_tau,
        d.h2_pl,
        d.h2_tau,
        d.m,
        model.m_norm,
    ] {
        h.update((v as u64).to_le_bytes());
    }
    for w in model.vocab.words() {
        h.update(w.as_bytes());
        h.update([0]);
    }
    for m in model.weights.matrices() {
        for v in &m.data {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

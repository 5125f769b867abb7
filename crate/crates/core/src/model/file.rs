//! Model file loading and saving.
//!
//! Models are stored as JSON with a small schema:
//!
//! ```json
//! {"format_version": 1, "kind": "tabular", "vocab_size": 8, "order": 2,
//!  "seed": 42, "concentration": 0.5}
//! ```
//!
//! Tabular models carry either explicit `rows` (each `{context, probs}` with
//! the context given as the unpadded recent tokens) or a `(seed,
//! concentration)` pair for deterministic Dirichlet generation. SSM models
//! carry either explicit `parameters` or a `seed`. An optional `temperature`
//! is baked into the distributions at load time. Probabilities are written
//! with full round-trip precision, so saving and reloading reproduces the
//! exact same model.

use super::{DrafterState, Distribution, Model, SsmDrafter, SsmParameters, TabularModel, TokenId};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    spec: ModelSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelSpec {
    Tabular {
        vocab_size: usize,
        order: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<RowSpec>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        concentration: Option<f64>,
    },
    Ssm {
        vocab_size: usize,
        state_dim: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        parameters: Option<Box<SsmParameters>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Serialize, Deserialize)]
struct RowSpec {
    context: Vec<u32>,
    probs: Vec<f64>,
}

/// A model loaded from a file: either kind, behind the [`Model`] interface.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Tabular(TabularModel),
    Ssm(SsmDrafter),
}

impl LoadedModel {
    pub fn as_tabular(&self) -> Option<&TabularModel> {
        match self {
            LoadedModel::Tabular(m) => Some(m),
            LoadedModel::Ssm(_) => None,
        }
    }
}

impl Model for LoadedModel {
    fn vocab_size(&self) -> usize {
        match self {
            LoadedModel::Tabular(m) => m.vocab_size(),
            LoadedModel::Ssm(m) => m.vocab_size(),
        }
    }

    fn state_len(&self) -> usize {
        match self {
            LoadedModel::Tabular(m) => m.state_len(),
            LoadedModel::Ssm(m) => m.state_len(),
        }
    }

    fn initial_state(&self) -> DrafterState {
        match self {
            LoadedModel::Tabular(m) => m.initial_state(),
            LoadedModel::Ssm(m) => m.initial_state(),
        }
    }

    fn absorb_into(
        &self,
        state: &DrafterState,
        token: TokenId,
        out: &mut DrafterState,
    ) -> Result<()> {
        match self {
            LoadedModel::Tabular(m) => m.absorb_into(state, token, out),
            LoadedModel::Ssm(m) => m.absorb_into(state, token, out),
        }
    }

    fn predict_into(&self, state: &DrafterState, out: &mut Distribution) {
        match self {
            LoadedModel::Tabular(m) => m.predict_into(state, out),
            LoadedModel::Ssm(m) => m.predict_into(state, out),
        }
    }
}

/// Load a model file, validating its invariants. Loading is deterministic:
/// the same file always yields the same model, including seeded generation.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<LoadedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    load_model_str(&text)
}

/// Parse a model from its JSON text.
pub fn load_model_str(text: &str) -> Result<LoadedModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(file.format_version));
    }
    let mut model = match file.spec {
        ModelSpec::Tabular {
            vocab_size,
            order,
            rows,
            seed,
            concentration,
        } => match (rows, seed) {
            (Some(rows), None) => {
                let rows = rows.into_iter().map(|r| (r.context, r.probs)).collect();
                LoadedModel::Tabular(TabularModel::from_rows(vocab_size, order, rows)?)
            }
            (None, Some(seed)) => {
                let concentration = concentration.ok_or_else(|| {
                    Error::InvalidInput("seeded tabular model needs a concentration".into())
                })?;
                LoadedModel::Tabular(TabularModel::seeded(vocab_size, order, seed, concentration)?)
            }
            _ => {
                return Err(Error::InvalidInput(
                    "tabular model needs exactly one of rows or (seed, concentration)".into(),
                ))
            }
        },
        ModelSpec::Ssm {
            vocab_size,
            state_dim,
            parameters,
            seed,
        } => match (parameters, seed) {
            (Some(params), None) => {
                let params = *params;
                if params.embedding.len() != vocab_size || params.decay.len() != state_dim {
                    return Err(Error::InvalidInput(
                        "ssm parameters disagree with declared vocab_size/state_dim".into(),
                    ));
                }
                LoadedModel::Ssm(SsmDrafter::new(params)?)
            }
            (None, Some(seed)) => LoadedModel::Ssm(SsmDrafter::seeded(vocab_size, state_dim, seed)?),
            _ => {
                return Err(Error::InvalidInput(
                    "ssm model needs exactly one of parameters or seed".into(),
                ))
            }
        },
    };
    if let Some(t) = file.temperature {
        match &mut model {
            LoadedModel::Tabular(m) => m.apply_temperature(t)?,
            LoadedModel::Ssm(m) => m.apply_temperature(t)?,
        }
    }
    Ok(model)
}

/// Write a model back out with explicit rows/parameters. Any temperature has
/// already been baked in, so none is recorded.
pub fn save_model<P: AsRef<Path>>(model: &LoadedModel, path: P) -> Result<()> {
    std::fs::write(path.as_ref(), model_to_string(model)?)?;
    Ok(())
}

/// Serialize a model to its JSON text form.
pub fn model_to_string(model: &LoadedModel) -> Result<String> {
    let spec = match model {
        LoadedModel::Tabular(m) => {
            let rows = m
                .reachable_rows()
                .into_iter()
                .map(|(context, row)| RowSpec {
                    context: context.into_iter().map(|t| t.0).collect(),
                    probs: row.probs().to_vec(),
                })
                .collect();
            ModelSpec::Tabular {
                vocab_size: m.vocab_size(),
                order: m.order(),
                rows: Some(rows),
                seed: None,
                concentration: None,
            }
        }
        LoadedModel::Ssm(m) => ModelSpec::Ssm {
            vocab_size: m.vocab_size(),
            state_dim: m.state_dim(),
            parameters: Some(Box::new(m.parameters().clone())),
            seed: None,
        },
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        spec,
        temperature: None,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

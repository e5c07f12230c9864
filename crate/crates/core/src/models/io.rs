//! Structured-text (TOML) model documents.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelSpec, ParamLayout};

pub const MODEL_SCHEMA: u32 = 1;

/// A model spec with its parameters.
///
/// `active` is a string of `1`/`0` flags, one per full parameter, and
/// `params` holds the values of the active entries only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema: u32,
    pub active: String,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<f64>>,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, toml::Value>,
}

impl ModelFile {
    pub fn dense(model: ModelSpec, params: Vec<f64>) -> Self {
        Self {
            schema: MODEL_SCHEMA,
            active: "1".repeat(params.len()),
            params,
            gates: None,
            model,
            provenance: BTreeMap::new(),
        }
    }

    pub fn active_mask(&self) -> Vec<bool> {
        self.active.chars().map(|c| c == '1').collect()
    }

    pub fn layout(&self) -> ParamLayout {
        let mask = self.active_mask();
        if mask.iter().all(|&a| a) {
            ParamLayout::Full
        } else {
            ParamLayout::from_active(&mask)
        }
    }

    /// Full-length parameter vector with zeros off the active set.
    pub fn materialize(&self) -> Vec<f64> {
        let mask = self.active_mask();
        ParamLayout::from_active(&mask).expand(&self.params, mask.len())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema != MODEL_SCHEMA {
            return Err(ModelError::Parse(format!(
                "schema {} does not match supported schema {MODEL_SCHEMA}",
                self.schema
            )));
        }
        self.model.validate()?;
        if let Some(bad) = self.active.chars().find(|&c| c != '0' && c != '1') {
            return Err(ModelError::Parse(format!("active mask contains '{bad}'")));
        }
        let n = self.model.as_model().num_params();
        super::check_len("active flags", n, self.active.len())?;
        let k = self.active_mask().iter().filter(|&&a| a).count();
        super::check_len("active parameters", k, self.params.len())?;
        if let Some(g) = &self.gates {
            super::check_len("gate values", n, g.len())?;
        }
        Ok(())
    }
}

pub fn write_model_file(path: &Path, file: &ModelFile) -> Result<(), ModelError> {
    file.validate()?;
    let text = toml::to_string(file).map_err(|e| ModelError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<ModelFile, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
    file.validate()?;
    Ok(file)
}

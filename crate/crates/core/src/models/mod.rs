//! Physically-constrained neural potentials and their observables.
//!
//! A model is described by an [`ObservableModel`]: it maps a raw record input
//! (a deformation gradient, or a strain and concentration) to a feature
//! vector, and emits its potential and observables into a [`GraphBuilder`]
//! given parameter nodes. [`CompiledModel`] freezes that emission into a
//! per-record graph under a [`ParamLayout`], which is also how pruned models
//! are realized: masked-off parameters become the constant 0 and fold away.

mod compiled;
mod hyper;
mod io;
pub mod kinematics;
mod mechchem;
mod network;

use thiserror::Error;

use crate::diffengine::{DiffError, GraphBuilder, NodeId};

pub use compiled::{CompiledModel, Outputs, ParamLayout, Workspace};
pub use hyper::{hyper_features_of_c, voigt_to_matrix, HyperelasticModel, STRESS_COMPONENTS};
pub use io::{read_model_file, write_model_file, ModelFile, MODEL_SCHEMA};
pub use kinematics::{
    invariants, lagrange_strain_2d, strain_features, DeformationGradient, Invariants, StrainFeatures,
    DET_C_FLOOR,
};
pub use mechchem::MechchemModel;
pub use network::{Activation, IcnnSpec, MlpSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("singular deformation: det(C) = {det_c}")]
    SingularDeformation { det_c: f64 },
    #[error("concentration {0} outside [0, 1]")]
    ConcentrationOutOfRange(f64),
    #[error("constrained weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("shape mismatch: expected {expected} {what}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::ShapeMismatch { what, expected, got })
    }
}

/// Flat parameter vector with an activity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub active: Vec<bool>,
}

impl ParamVector {
    pub fn dense(values: Vec<f64>) -> Self {
        let active = vec![true; values.len()];
        Self { values, active }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Values with inactive entries set to exactly 0.
    pub fn materialize(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.active)
            .map(|(&v, &a)| if a { v } else { 0.0 })
            .collect()
    }
}

/// Nodes emitted for one record.
#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub potential: NodeId,
    pub observables: Vec<NodeId>,
}

/// A potential-based model with derived observables.
pub trait ObservableModel: Send + Sync {
    fn num_params(&self) -> usize;

    /// Width of a raw record input.
    fn input_width(&self) -> usize;

    /// Width of the feature vector bound to the graph's input leaves.
    fn feature_width(&self) -> usize;

    fn observable_names(&self) -> Vec<String>;

    /// Parameters that must stay non-negative.
    fn constrained_mask(&self) -> Vec<bool> {
        vec![false; self.num_params()]
    }

    fn features(&self, raw: &[f64], out: &mut Vec<f64>) -> Result<(), ModelError>;

    /// Emits the potential and observables; the feature vector occupies input
    /// leaves `0..feature_width()`.
    fn emit(&self, b: &mut GraphBuilder, params: &[NodeId]) -> ModelNodes;

    fn num_observables(&self) -> usize {
        self.observable_names().len()
    }
}

/// Replaces every constrained entry by `max(0, value)`.
pub fn clamp_nonneg(theta: &[f64], constrained: &[bool]) -> Vec<f64> {
    let mut out = theta.to_vec();
    clamp_in_place(&mut out, constrained);
    out
}

pub fn clamp_in_place(theta: &mut [f64], constrained: &[bool]) {
    for (t, &c) in theta.iter_mut().zip(constrained) {
        if c && *t < 0.0 {
            *t = 0.0;
        }
    }
}

pub fn check_nonneg(theta: &[f64], constrained: &[bool]) -> Result<(), ModelError> {
    for (index, (&value, &c)) in theta.iter().zip(constrained).enumerate() {
        if c && value < 0.0 {
            return Err(ModelError::NegativeWeight { index, value });
        }
    }
    Ok(())
}

/// Any of the shipped model families.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Hyperelastic(HyperelasticModel),
    Mechchem(MechchemModel),
}

impl ModelSpec {
    pub fn as_model(&self) -> &dyn ObservableModel {
        match self {
            ModelSpec::Hyperelastic(m) => m,
            ModelSpec::Mechchem(m) => m,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Hyperelastic(m) => m.network.validate(),
            ModelSpec::Mechchem(m) => m.network.validate(),
        }
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ModelSpec::Hyperelastic(m) => m.network.init(rng),
            ModelSpec::Mechchem(m) => m.network.init(rng),
        }
    }
}

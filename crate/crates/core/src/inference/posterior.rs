//! Log densities: the Gaussian-likelihood model posterior and analytic targets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, NoiseSpec};
use crate::models::{check_nonneg, clamp_in_place, CompiledModel, ModelError, Workspace};
use crate::sparsify::DataLoss;

use super::InferenceError;

/// A differentiable unnormalized log density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// `(log π(θ), ∇ log π(θ))`.
    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), InferenceError>;

    /// Projects `θ` back onto the feasible set (no-op by default).
    fn constrain(&self, _theta: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lambda", rename_all = "lowercase")]
pub enum Prior {
    None,
    /// `λ‖θ‖₁`.
    L1(f64),
    /// `λ‖θ‖₂²`, a Gaussian with variance `1/(2λ)`.
    L2(f64),
}

impl Prior {
    /// Negative log prior (constant dropped) and its gradient, `sign(0) = 0`.
    pub fn penalty(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        match *self {
            Prior::None => (0.0, vec![0.0; theta.len()]),
            Prior::L1(l) => (
                l * theta.iter().map(|t| t.abs()).sum::<f64>(),
                theta.iter().map(|&t| if t == 0.0 { 0.0 } else { l * t.signum() }).collect(),
            ),
            Prior::L2(l) => (
                l * theta.iter().map(|t| t * t).sum::<f64>(),
                theta.iter().map(|&t| 2.0 * l * t).collect(),
            ),
        }
    }

    /// Prior standard deviation of a Gaussian prior.
    pub fn gaussian_sd(&self) -> Option<f64> {
        match *self {
            Prior::L2(l) if l > 0.0 => Some((0.5 / l).sqrt()),
            _ => None,
        }
    }
}

/// `log π(θ) = −Σᵢ rᵢ²/σᵢ² − prior(θ)` over every observable of every record.
#[derive(Debug, Clone)]
pub struct LogPosteriorModel {
    model: CompiledModel,
    features: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    inv_var: Vec<Vec<f64>>,
    prior: Prior,
}

impl LogPosteriorModel {
    pub fn new(
        model: CompiledModel,
        features: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        prior: Prior,
    ) -> Result<Self, InferenceError> {
        if features.len() != targets.len() || sigma.len() != targets.len() {
            return Err(InferenceError::Invalid("features, targets and sigmas differ in length".into()));
        }
        let k = model.num_outputs();
        let mut inv_var = Vec::with_capacity(sigma.len());
        for (t, s) in targets.iter().zip(&sigma) {
            if t.len() != k || s.len() != k {
                return Err(InferenceError::Invalid(format!("each record needs {k} targets and sigmas")));
            }
            if let Some(bad) = s.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
                return Err(InferenceError::Invalid(format!("likelihood sigma must be positive, got {bad}")));
            }
            inv_var.push(s.iter().map(|v| 1.0 / (v * v)).collect());
        }
        Ok(Self {
            model,
            features,
            targets,
            inv_var,
            prior,
        })
    }

    /// Binds a dataset, deriving `σ` from its noise spec (unit `σ` when the
    /// data are noiseless).
    pub fn from_dataset(model: CompiledModel, data: &Dataset, prior: Prior) -> Result<Self, InferenceError> {
        let features = data
            .inputs
            .iter()
            .map(|x| model.features(x))
            .collect::<Result<Vec<_>, _>>()?;
        let sigma = data.outputs.iter().map(|y| likelihood_sigma(&data.noise, y)).collect();
        Self::new(model, features, data.outputs.clone(), sigma, prior)
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }

    pub fn prior(&self) -> Prior {
        self.prior
    }

    pub fn with_prior(&self, prior: Prior) -> Self {
        Self { prior, ..self.clone() }
    }

    pub fn num_records(&self) -> usize {
        self.features.len()
    }

    /// `Σ rᵢ²/σᵢ²` and its gradient.
    pub fn misfit(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        let mut ws = Workspace::default();
        let mut grad = vec![0.0; theta.len()];
        let mut total = 0.0;
        for ((x, y), w) in self.features.iter().zip(&self.targets).zip(&self.inv_var) {
            self.model.pullback(x, theta, &mut grad, &mut ws, |out| {
                out.iter()
                    .zip(y)
                    .zip(w)
                    .map(|((o, t), w)| {
                        let r = o - t;
                        total += r * r * w;
                        2.0 * r * w
                    })
                    .collect()
            })?;
        }
        Ok((total, grad))
    }

    /// Rows of `Σ^{-1/2} J` for every record and observable.
    pub fn whitened_jacobian(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>, InferenceError> {
        let mut ws = Workspace::default();
        let mut rows = Vec::with_capacity(self.features.len() * self.model.num_outputs());
        for (x, w) in self.features.iter().zip(&self.inv_var) {
            for (mut row, wi) in self.model.jacobian(x, theta, &mut ws)?.into_iter().zip(w) {
                let s = wi.sqrt();
                row.iter_mut().for_each(|v| *v *= s);
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

/// Per-output likelihood standard deviations for observed outputs `y`.
pub fn likelihood_sigma(noise: &NoiseSpec, y: &[f64]) -> Vec<f64> {
    y.iter()
        .map(|&v| {
            let s = noise.sigma(v);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect()
}

impl LogDensity for LogPosteriorModel {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        let (m, mut g) = self.misfit(theta)?;
        let (p, pg) = self.prior.penalty(theta);
        for (gi, pi) in g.iter_mut().zip(pg) {
            *gi = -(*gi + pi);
        }
        let value = -(m + p);
        if !value.is_finite() {
            return Err(InferenceError::NonFinite("log posterior".into()));
        }
        Ok((value, g))
    }

    fn constrain(&self, theta: &mut [f64]) {
        clamp_in_place(theta, self.model.constrained_mask());
    }
}

impl DataLoss for LogPosteriorModel {
    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
        check_nonneg(theta, self.model.constrained_mask())?;
        self.misfit(theta).map_err(|e| match e {
            InferenceError::Model(m) => m,
            other => ModelError::InvalidSpec(other.to_string()),
        })
    }
}

/// `log π = −½(θ − m)ᵀΛ(θ − m) − λ₁‖θ‖₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianL1 {
    pub precision: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub lambda1: f64,
}

impl GaussianL1 {
    pub fn new(precision: DMatrix<f64>, mean: DVector<f64>, lambda1: f64) -> Result<Self, InferenceError> {
        if !precision.is_square() || precision.nrows() != mean.len() {
            return Err(InferenceError::Invalid("precision and mean shapes differ".into()));
        }
        if (&precision - precision.transpose()).amax() > 1e-12 {
            return Err(InferenceError::Invalid("precision must be symmetric".into()));
        }
        Ok(Self {
            precision,
            mean,
            lambda1,
        })
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let d = DVector::from_column_slice(theta) - &self.mean;
        -0.5 * d.dot(&(&self.precision * &d)) - self.lambda1 * theta.iter().map(|t| t.abs()).sum::<f64>()
    }
}

impl LogDensity for GaussianL1 {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        let d = DVector::from_column_slice(theta) - &self.mean;
        let pd = &self.precision * &d;
        let value = -0.5 * d.dot(&pd) - self.lambda1 * theta.iter().map(|t| t.abs()).sum::<f64>();
        let grad = theta
            .iter()
            .zip(pd.iter())
            .map(|(&t, &g)| -g - if t == 0.0 { 0.0 } else { self.lambda1 * t.signum() })
            .collect();
        Ok((value, grad))
    }
}

/// A log density with a box-free clamp supplied by a mask (used in tests
/// and by the reduced-coordinate wrapper).
pub struct Clamped<'a, D: LogDensity + ?Sized> {
    pub inner: &'a D,
    pub mask: Vec<bool>,
}

impl<D: LogDensity + ?Sized> LogDensity for Clamped<'_, D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        self.inner.value_and_grad(theta)
    }

    fn constrain(&self, theta: &mut [f64]) {
        clamp_in_place(theta, &self.mask);
    }
}

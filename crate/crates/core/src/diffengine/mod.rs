//! Differentiation engine for scalar computation graphs.
//!
//! Model observables such as stresses are partial derivatives of a potential
//! with respect to its inputs, and training needs gradients of losses built
//! from those observables with respect to the parameters. The engine realizes
//! this nesting as forward-mode tangents built symbolically into the graph
//! ([`GraphBuilder::tangent`]) followed by a reverse sweep over the enlarged
//! graph ([`param_gradient`], [`Graph::backward`]).
//!
//! ```
//! use sparse_stein::diffengine::{param_gradient, GraphBuilder};
//!
//! // d/dw [ d/dx softplus(w * x) ] at x = 1, w = 0
//! let mut b = GraphBuilder::new();
//! let (x, w) = (b.input(0), b.param(0));
//! let wx = b.mul(w, x);
//! let sp = b.softplus(wx);
//! let dsp = b.tangent(sp, 0);
//! let expr = b.into_expr(dsp);
//! let g = param_gradient(&expr, &[1.0], &[0.0]).unwrap();
//! assert!((g[0] - 0.5).abs() < 1e-15);
//! ```

mod eval;
mod graph;

use std::ops::Deref;

use thiserror::Error;

pub use graph::{Expr, Graph, GraphBuilder, NodeId, Op};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("domain error: {op} undefined at {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("unbound {kind} leaf {index}")]
    UnboundLeaf { kind: &'static str, index: usize },
    #[error("non-finite gradient entry at index {index}")]
    NonFinite { index: usize },
    #[error("input direction {direction} out of range ({declared} declared)")]
    InvalidDirection { direction: usize, declared: usize },
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// A value together with its directional derivative along one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub tangent: f64,
}

/// Gradient aligned index-for-index with a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    /// Wraps `values`, rejecting NaN or infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, DiffError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for GradVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn evaluate(expr: &Expr, inputs: &[f64], params: &[f64]) -> Result<f64, DiffError> {
    let mut values = Vec::new();
    expr.0.forward(inputs, params, &mut values)?;
    Ok(expr.0.output_value(&values, 0))
}

/// Forward-mode derivative along input `direction` using dual numbers.
pub fn input_derivative(
    expr: &Expr,
    inputs: &[f64],
    params: &[f64],
    direction: usize,
) -> Result<DualValue, DiffError> {
    if direction >= inputs.len().max(expr.num_inputs()) {
        return Err(DiffError::InvalidDirection {
            direction,
            declared: expr.num_inputs(),
        });
    }
    let (value, tangent) = expr.0.forward_dual(inputs, params, direction)?[0];
    Ok(DualValue { value, tangent })
}

/// Reverse-mode gradient with respect to every parameter; the result has
/// `params.len()` entries.
pub fn param_gradient(expr: &Expr, inputs: &[f64], params: &[f64]) -> Result<GradVector, DiffError> {
    let mut values = Vec::new();
    expr.0.forward(inputs, params, &mut values)?;
    let mut grad = vec![0.0; params.len()];
    let mut adjoint = Vec::new();
    expr.0.backward(&values, &[1.0], &mut adjoint, &mut grad, None);
    GradVector::new(grad)
}

/// Largest per-coordinate discrepancy between `analytic` and a central
/// difference of `f` at `x`, relative to `max(1, |analytic|)`.
pub fn check_gradient<F>(f: F, analytic: &[f64], x: &[f64], h: f64) -> Result<f64, DiffError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(DiffError::InvalidStep(h));
    }
    assert_eq!(analytic.len(), x.len(), "gradient and point differ in length");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(worst)
}

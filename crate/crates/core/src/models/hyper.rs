//! Hyperelastic ICNN potential with stress normalization.

use std::sync::Arc;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::diffengine::{GraphBuilder, NodeId};

use super::kinematics::{invariants_of_c, DeformationGradient, Invariants};
use super::{check_len, check_nonneg, CompiledModel, ModelError, ModelNodes, ObservableModel, Outputs, Workspace};

/// Voigt ordering of the six stress components.
pub const STRESS_COMPONENTS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

const I1: usize = 0;
const I2: usize = 1;
const J: usize = 2;
const C_AT: usize = 3;
const CINV_AT: usize = 9;
const REF_AT: usize = 15;
const FEATURES: usize = 18;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperelasticModel {
    pub network: super::IcnnSpec,
}

impl HyperelasticModel {
    pub fn new(network: super::IcnnSpec) -> Self {
        Self { network }
    }

    fn compiled(&self, outputs: Outputs) -> CompiledModel {
        CompiledModel::full(Arc::new(self.clone()), outputs)
    }

    /// Raw network output `Ψᴺᴺ(I1, I2, J)`.
    pub fn icnn_forward(&self, x: Invariants, theta: &[f64]) -> Result<f64, ModelError> {
        check_len("parameters", self.network.num_params(), theta.len())?;
        check_nonneg(theta, &self.network.constrained_mask())?;
        let mut b = GraphBuilder::new();
        let params: Vec<_> = (0..theta.len()).map(|i| b.param(i)).collect();
        let xs = [b.input(0), b.input(1), b.input(2)];
        let y = self.network.emit(&mut b, &params, &xs);
        let g = b.finish(&[y]);
        Ok(g.eval(&x.as_array(), theta)?[0])
    }

    /// Normalized potential `Ψ̂(F)`.
    pub fn hyper_potential(&self, f: &DeformationGradient, theta: &[f64]) -> Result<f64, ModelError> {
        self.potential_of_c(&f.right_cauchy_green(), theta)
    }

    pub fn potential_of_c(&self, c: &Matrix3<f64>, theta: &[f64]) -> Result<f64, ModelError> {
        let m = self.compiled(Outputs::Potential);
        let x = hyper_features_of_c(c)?;
        Ok(m.eval(&x, theta, &mut Workspace::default())?[0])
    }

    /// Second Piola–Kirchhoff stress `S = 2 ∂Ψ̂/∂C`.
    pub fn hyper_stress(&self, f: &DeformationGradient, theta: &[f64]) -> Result<Matrix3<f64>, ModelError> {
        let m = self.compiled(Outputs::Observables);
        let x = hyper_features_of_c(&f.right_cauchy_green())?;
        let s = m.eval(&x, theta, &mut Workspace::default())?;
        Ok(voigt_to_matrix(&s))
    }
}

pub fn voigt_to_matrix(s: &[f64]) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (k, &(i, j)) in STRESS_COMPONENTS.iter().enumerate() {
        m[(i, j)] = s[k];
        m[(j, i)] = s[k];
    }
    m
}

/// Graph feature vector for a right Cauchy–Green tensor.
pub fn hyper_features_of_c(c: &Matrix3<f64>) -> Result<Vec<f64>, ModelError> {
    let inv = invariants_of_c(c)?;
    let ci = c.try_inverse().ok_or(ModelError::SingularDeformation { det_c: c.determinant() })?;
    let mut x = Vec::with_capacity(FEATURES);
    x.extend(inv.as_array());
    x.extend(STRESS_COMPONENTS.iter().map(|&(i, j)| c[(i, j)]));
    x.extend(STRESS_COMPONENTS.iter().map(|&(i, j)| ci[(i, j)]));
    x.extend(Invariants::REFERENCE.as_array());
    Ok(x)
}

impl ObservableModel for HyperelasticModel {
    fn num_params(&self) -> usize {
        self.network.num_params()
    }

    fn input_width(&self) -> usize {
        9
    }

    fn feature_width(&self) -> usize {
        FEATURES
    }

    fn observable_names(&self) -> Vec<String> {
        ["S11", "S22", "S33", "S12", "S13", "S23"].map(String::from).to_vec()
    }

    fn constrained_mask(&self) -> Vec<bool> {
        self.network.constrained_mask()
    }

    fn features(&self, raw: &[f64], out: &mut Vec<f64>) -> Result<(), ModelError> {
        check_len("deformation entries", 9, raw.len())?;
        let f = DeformationGradient::from_row_slice(raw);
        out.clear();
        out.extend(hyper_features_of_c(&f.right_cauchy_green())?);
        Ok(())
    }

    fn emit(&self, b: &mut GraphBuilder, params: &[NodeId]) -> ModelNodes {
        let x: Vec<NodeId> = (0..3).map(|k| b.input(k)).collect();
        let r: Vec<NodeId> = (REF_AT..REF_AT + 3).map(|k| b.input(k)).collect();
        let nn = self.network.emit(b, params, &x);
        let nn_ref = self.network.emit(b, params, &r);

        // n = 2 ∂₁Ψᴺᴺ + 4 ∂₂Ψᴺᴺ + ∂_JΨᴺᴺ at (3, 3, 1)
        let r1 = b.tangent(nn_ref, REF_AT);
        let r2 = b.tangent(nn_ref, REF_AT + 1);
        let rj = b.tangent(nn_ref, REF_AT + 2);
        let n = {
            let a = b.scale(2.0, r1);
            let c = b.scale(4.0, r2);
            let ac = b.add(a, c);
            b.add(ac, rj)
        };

        let one = b.constant(1.0);
        let jm1 = b.sub(x[J], one);
        let shift = b.mul(n, jm1);
        let diff = b.sub(nn, nn_ref);
        let potential = b.sub(diff, shift);

        let p1 = b.tangent(nn, I1);
        let p2 = b.tangent(nn, I2);
        let pj = b.tangent(nn, J);
        let two_p1 = b.scale(2.0, p1);
        let four_p2 = b.scale(4.0, p2);
        let two_p2 = b.scale(2.0, p2);

        // Same association as n, so the reference stress cancels exactly.
        let mut observables = Vec::with_capacity(6);
        for (k, &(i, j)) in STRESS_COMPONENTS.iter().enumerate() {
            let c = b.input(C_AT + k);
            let ci = b.input(CINV_AT + k);
            let jci = b.mul(x[J], ci);
            let s = if i == j {
                let i1_minus_c = b.sub(x[I1], c);
                let half = b.scale(0.5, i1_minus_c);
                let t2 = b.mul(four_p2, half);
                let t12 = b.add(two_p1, t2);
                let tj = b.mul(pj, jci);
                let raw = b.add(t12, tj);
                let corr = b.mul(n, jci);
                b.sub(raw, corr)
            } else {
                let t2 = b.mul(two_p2, c);
                let pj_n = b.sub(pj, n);
                let tj = b.mul(pj_n, jci);
                b.sub(tj, t2)
            };
            observables.push(s);
        }
        ModelNodes { potential, observables }
    }
}

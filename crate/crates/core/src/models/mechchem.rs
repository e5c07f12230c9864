//! Mechanochemical free energy over plane-strain features and concentration.

use std::sync::Arc;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::diffengine::{GraphBuilder, NodeId};

use super::kinematics::strain_features;
use super::{check_len, CompiledModel, MlpSpec, ModelError, ModelNodes, ObservableModel, Outputs, Workspace};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechchemModel {
    pub network: MlpSpec,
}

impl MechchemModel {
    pub fn new(network: MlpSpec) -> Self {
        Self { network }
    }

    fn eval(&self, e: &Matrix2<f64>, c: f64, theta: &[f64], outputs: Outputs) -> Result<Vec<f64>, ModelError> {
        let m = CompiledModel::full(Arc::new(self.clone()), outputs);
        let x = m.features(&[e[(0, 0)], e[(1, 1)], 0.5 * (e[(0, 1)] + e[(1, 0)]), c])?;
        m.eval(&x, theta, &mut Workspace::default())
    }

    /// `Ψ̂ = Ψᴺᴺ(e1, e2, e6, c) − Ψᴺᴺ(0, 0, 0, 0)`.
    pub fn mechchem_potential(&self, e: &Matrix2<f64>, c: f64, theta: &[f64]) -> Result<f64, ModelError> {
        Ok(self.eval(e, c, theta, Outputs::Potential)?[0])
    }

    /// Stress `∂Ψ̂/∂E` and chemical potential `∂Ψ̂/∂c`.
    pub fn mechchem_observables(
        &self,
        e: &Matrix2<f64>,
        c: f64,
        theta: &[f64],
    ) -> Result<(Matrix2<f64>, f64), ModelError> {
        let o = self.eval(e, c, theta, Outputs::Observables)?;
        Ok((Matrix2::new(o[0], o[2], o[2], o[1]), o[3]))
    }
}

impl ObservableModel for MechchemModel {
    fn num_params(&self) -> usize {
        self.network.num_params()
    }

    /// `(E11, E22, E12, c)`.
    fn input_width(&self) -> usize {
        4
    }

    fn feature_width(&self) -> usize {
        4
    }

    fn observable_names(&self) -> Vec<String> {
        ["S11", "S22", "S12", "mu"].map(String::from).to_vec()
    }

    fn features(&self, raw: &[f64], out: &mut Vec<f64>) -> Result<(), ModelError> {
        check_len("mechanochemistry inputs", 4, raw.len())?;
        let e = Matrix2::new(raw[0], raw[2], raw[2], raw[1]);
        out.clear();
        out.extend(strain_features(&e, raw[3])?.as_array());
        Ok(())
    }

    fn emit(&self, b: &mut GraphBuilder, params: &[NodeId]) -> ModelNodes {
        let x: Vec<NodeId> = (0..4).map(|k| b.input(k)).collect();
        let zero = vec![b.zero(); 4];
        let nn = self.network.emit(b, params, &x);
        let nn0 = self.network.emit(b, params, &zero);
        let potential = b.sub(nn, nn0);

        let d: Vec<NodeId> = (0..4).map(|k| b.tangent(nn, k)).collect();
        let a = b.scale(1.0 / 3f64.sqrt(), d[0]);
        let s = b.scale(1.0 / SQRT2, d[1]);
        let s11 = b.add(a, s);
        let s22 = b.sub(a, s);
        let s12 = b.scale(1.0 / SQRT2, d[2]);
        ModelNodes {
            potential,
            observables: vec![s11, s22, s12, d[3]],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization_at_origin() {
        let m = MechchemModel::default();
        let theta = m.network.init(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(m.mechchem_potential(&Matrix2::zeros(), 0.0, &theta).unwrap(), 0.0);
    }

    #[test]
    fn output_bias_shift_cancels() {
        let m = MechchemModel::default();
        let mut theta = m.network.init(&mut ChaCha8Rng::seed_from_u64(2));
        let e = Matrix2::new(0.05, 0.02, 0.02, -0.03);
        let before = m.mechchem_potential(&e, 0.4, &theta).unwrap();
        let last = theta.len() - 1;
        theta[last] += 3.75;
        let after = m.mechchem_potential(&e, 0.4, &theta).unwrap();
        assert!((before - after).abs() < 1e-14);
    }

    #[test]
    fn zero_network_has_zero_observables() {
        let m = MechchemModel::default();
        let theta = vec![0.0; m.num_params()];
        let (s, mu) = m.mechchem_observables(&Matrix2::new(0.1, 0.03, 0.03, 0.2), 0.7, &theta).unwrap();
        assert_eq!(s, Matrix2::zeros());
        assert_eq!(mu, 0.0);
    }

    #[test]
    fn stress_is_symmetric() {
        let m = MechchemModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = m.network.init(&mut rng);
        let e = Matrix2::new(rng.gen(), 0.1, 0.1, rng.gen());
        let (s, _) = m.mechchem_observables(&e, 0.5, &theta).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn concentration_checked() {
        let m = MechchemModel::default();
        let theta = vec![0.0; m.num_params()];
        assert!(matches!(
            m.mechchem_potential(&Matrix2::zeros(), 1.5, &theta),
            Err(ModelError::ConcentrationOutOfRange(_))
        ));
    }
}

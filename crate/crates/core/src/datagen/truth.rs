//! Closed-form ground-truth potentials.

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::models::kinematics::{check_concentration, strain_features, invariants_of_c};
use crate::models::{DeformationGradient, Invariants};

use super::DatagenError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GentParams {
    pub jm: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl Default for GentParams {
    fn default() -> Self {
        Self {
            jm: 77.931,
            theta1: 2.4195,
            theta2: -0.75,
            theta3: 1.20975,
        }
    }
}

impl GentParams {
    /// Unshifted energy `Ψ(I1, I2, J)`.
    pub fn raw_energy(&self, x: &Invariants) -> Result<f64, DatagenError> {
        self.check_locking(x.i1)?;
        Ok(-0.5 * self.theta1 * self.jm * (-(x.i1 - 3.0) / self.jm).ln_1p() - self.theta2 * (x.i2 / x.j).ln()
            + self.theta3 * (0.5 * (x.j * x.j - 1.0) - x.j.ln()))
    }

    /// `(∂Ψ/∂I1, ∂Ψ/∂I2, ∂Ψ/∂J)` of the unshifted energy.
    pub fn raw_derivatives(&self, x: &Invariants) -> Result<[f64; 3], DatagenError> {
        self.check_locking(x.i1)?;
        Ok([
            0.5 * self.theta1 / (1.0 - (x.i1 - 3.0) / self.jm),
            -self.theta2 / x.i2,
            self.theta2 / x.j + self.theta3 * (x.j - 1.0 / x.j),
        ])
    }

    /// Shift `n` that cancels the reference stress.
    pub fn normalization(&self) -> f64 {
        let d = self.raw_derivatives(&Invariants::REFERENCE).expect("reference is admissible");
        2.0 * d[0] + 4.0 * d[1] + d[2]
    }

    pub fn check_locking(&self, i1: f64) -> Result<(), DatagenError> {
        if i1 - 3.0 >= self.jm {
            Err(DatagenError::GentLocking { i1, jm: self.jm })
        } else {
            Ok(())
        }
    }
}

/// Shifted Gent energy and stress for a right Cauchy–Green tensor.
pub fn gent_truth_of_c(c: &Matrix3<f64>, p: &GentParams) -> Result<(f64, Matrix3<f64>), DatagenError> {
    let x = invariants_of_c(c)?;
    let n = p.normalization();
    let psi = p.raw_energy(&x)? - p.raw_energy(&Invariants::REFERENCE)? - n * (x.j - 1.0);
    let d = p.raw_derivatives(&x)?;
    let ci = c
        .try_inverse()
        .ok_or(DatagenError::Model(crate::models::ModelError::SingularDeformation { det_c: c.determinant() }))?;
    let id = Matrix3::identity();
    let s = 2.0 * (d[0] * id + d[1] * (x.i1 * id - c) + (d[2] - n) * (0.5 * x.j) * ci);
    Ok((psi, 0.5 * (s + s.transpose())))
}

pub fn gent_truth(f: &DeformationGradient, p: &GentParams) -> Result<(f64, Matrix3<f64>), DatagenError> {
    gent_truth_of_c(&f.right_cauchy_green(), p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechchemParams {
    pub dc: f64,
    pub de: f64,
    pub se: f64,
}

impl Default for MechchemParams {
    fn default() -> Self {
        Self {
            dc: 2.0,
            de: 0.1,
            se: 0.1,
        }
    }
}

/// Free energy, stress `∂Ψ/∂E` and chemical potential `∂Ψ/∂c`.
pub fn mechchem_truth(e: &Matrix2<f64>, c: f64, p: &MechchemParams) -> Result<(f64, Matrix2<f64>, f64), DatagenError> {
    check_concentration(c)?;
    let f = strain_features(e, c)?;
    let (dc, de, se) = (p.dc, p.de, p.se);
    let k2 = 2.0 * de / (se * se);
    let k4 = de / se.powi(4);
    let e2sq = f.e2 * f.e2;
    let psi = 16.0 * dc * (c.powi(4) - 2.0 * c.powi(3) + c * c)
        + k2 * (f.e1 * f.e1 + f.e6 * f.e6)
        + k4 * e2sq * e2sq
        + (2.0 * c - 1.0) * k2 * e2sq;
    let p1 = 2.0 * k2 * f.e1;
    let p6 = 2.0 * k2 * f.e6;
    let p2 = 4.0 * k4 * e2sq * f.e2 + (2.0 * c - 1.0) * 2.0 * k2 * f.e2;
    let mu = 16.0 * dc * (4.0 * c.powi(3) - 6.0 * c * c + 2.0 * c) + 2.0 * k2 * e2sq;
    let (r3, r2) = (3f64.sqrt(), std::f64::consts::SQRT_2);
    let s11 = p1 / r3 + p2 / r2;
    let s22 = p1 / r3 - p2 / r2;
    let s12 = p6 / r2;
    Ok((psi, Matrix2::new(s11, s12, s12, s22), mu))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gent_reference_values() {
        let p = GentParams::default();
        let raw = p.raw_energy(&Invariants::REFERENCE).unwrap();
        assert!((raw - 0.75 * 3f64.ln()).abs() < 1e-15);
        assert!((raw - 0.823959).abs() < 1e-6);
        assert!((p.normalization() - 2.6695).abs() < 1e-12);
        let (psi, s) = gent_truth(&DeformationGradient::identity(), &p).unwrap();
        assert_eq!(psi, 0.0);
        assert!(s.norm() < 1e-15, "{s}");
    }

    #[test]
    fn gent_locking_detected() {
        let p = GentParams { jm: 0.5, ..GentParams::default() };
        let f = DeformationGradient(Matrix3::from_diagonal(&nalgebra::Vector3::new(1.5, 1.0, 1.0)));
        assert!(matches!(gent_truth(&f, &p), Err(DatagenError::GentLocking { .. })));
    }

    #[test]
    fn mechchem_examples() {
        let p = MechchemParams::default();
        let (psi, s, mu) = mechchem_truth(&Matrix2::zeros(), 0.0, &p).unwrap();
        assert_eq!((psi, s, mu), (0.0, Matrix2::zeros(), 0.0));
        let (psi, _, _) = mechchem_truth(&Matrix2::zeros(), 0.5, &p).unwrap();
        assert!((psi - 2.0).abs() < 1e-14);
        for c in [0.0, 0.5, 1.0] {
            assert_eq!(mechchem_truth(&Matrix2::zeros(), c, &p).unwrap().2, 0.0);
        }
        assert!(matches!(
            mechchem_truth(&Matrix2::zeros(), 1.01, &p),
            Err(DatagenError::Model(crate::models::ModelError::ConcentrationOutOfRange(_)))
        ));
    }
}

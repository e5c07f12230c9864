//! Deformation kinematics: invariants of the right Cauchy–Green tensor and
//! plane-strain features of the Lagrange strain.

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Smallest admissible `det(C)`.
pub const DET_C_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationGradient(pub Matrix3<f64>);

impl DeformationGradient {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Row-major `[F11, F12, F13, F21, ...]`.
    pub fn from_row_slice(values: &[f64]) -> Self {
        Self(Matrix3::from_row_slice(values))
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        let m = &self.0;
        (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect()
    }

    /// `C = Fᵀ F`.
    pub fn right_cauchy_green(&self) -> Matrix3<f64> {
        self.0.transpose() * self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Invariants {
    pub i1: f64,
    pub i2: f64,
    pub j: f64,
}

impl Invariants {
    pub const REFERENCE: Invariants = Invariants { i1: 3.0, i2: 3.0, j: 1.0 };

    pub fn as_array(&self) -> [f64; 3] {
        [self.i1, self.i2, self.j]
    }
}

/// `I1 = tr C`, `I2 = tr cof C`, `J = sqrt(det C)`.
pub fn invariants(f: &DeformationGradient) -> Result<Invariants, ModelError> {
    invariants_of_c(&f.right_cauchy_green())
}

pub fn invariants_of_c(c: &Matrix3<f64>) -> Result<Invariants, ModelError> {
    let det = c.determinant();
    if det.is_nan() || det <= 0.0 {
        return Err(ModelError::SingularDeformation { det_c: det });
    }
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    Ok(Invariants { i1, i2, j: det.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrainFeatures {
    pub e1: f64,
    pub e2: f64,
    pub e6: f64,
    pub c: f64,
}

impl StrainFeatures {
    pub fn as_array(&self) -> [f64; 4] {
        [self.e1, self.e2, self.e6, self.c]
    }
}

/// Plane-strain features of a symmetric 2×2 Lagrange strain (`E33 = 0`).
pub fn strain_features(e: &Matrix2<f64>, c: f64) -> Result<StrainFeatures, ModelError> {
    check_concentration(c)?;
    let e12 = 0.5 * (e[(0, 1)] + e[(1, 0)]);
    Ok(StrainFeatures {
        e1: (e[(0, 0)] + e[(1, 1)]) / 3f64.sqrt(),
        e2: (e[(0, 0)] - e[(1, 1)]) / 2f64.sqrt(),
        e6: 2f64.sqrt() * e12,
        c,
    })
}

pub fn check_concentration(c: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(ModelError::ConcentrationOutOfRange(c))
    }
}

/// In-plane Lagrange strain `E = ½(FᵀF − I)` of a 2×2 deformation block.
pub fn lagrange_strain_2d(f: &Matrix2<f64>) -> Matrix2<f64> {
    0.5 * (f.transpose() * f - Matrix2::identity())
}

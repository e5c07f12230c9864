//! Push-forward evaluation: Wasserstein-1 distances, R² scores and L-curves.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{CompiledModel, ModelError, Workspace};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empirical distribution needs at least one sample")]
    EmptySample,
    #[error("non-finite sample {0}")]
    NonFinite(f64),
    #[error("target is constant; R² is undefined")]
    ConstantTarget,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} values")]
    TooShort(usize),
    #[error("L-curve grid must be non-empty and strictly positive")]
    InvalidGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sorted finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist(Vec<f64>);

impl EmpiricalDist {
    pub fn new(mut samples: Vec<f64>) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::EmptySample);
        }
        if let Some(&bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite(bad));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self(samples))
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Population standard deviation.
    pub fn stdev(&self) -> f64 {
        let m = self.mean();
        (self.0.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.0.len() as f64).sqrt()
    }
}

/// `∫ |F_a − F_b| dx` for the empirical CDFs, integrated exactly.
pub fn w1_distance(a: &EmpiricalDist, b: &EmpiricalDist) -> f64 {
    let (xa, xb) = (a.samples(), b.samples());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    if xa.len() == xb.len() {
        return xa.iter().zip(xb).map(|(p, q)| (p - q).abs()).sum::<f64>() / na;
    }
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut x = xa[0].min(xb[0]);
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < xa.len() && xa[i] == x {
            i += 1;
        }
        while j < xb.len() && xb[j] == x {
            j += 1;
        }
    }
    total
}

/// `1 − SS_res / SS_tot`.
pub fn r2_score(y: &[f64], yhat: &[f64]) -> Result<f64, MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < 2 {
        return Err(MetricsError::TooShort(2));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantTarget);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Per-input push-forward samples with mean and stdev curves.
#[derive(Debug, Clone, PartialEq)]
pub struct PushForward {
    pub dists: Vec<EmpiricalDist>,
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
}

/// Evaluates observable `observable` of every posterior sample at every
/// feature vector in `features`.
pub fn pushforward(
    model: &CompiledModel,
    samples: &[Vec<f64>],
    features: &[Vec<f64>],
    observable: usize,
) -> Result<PushForward, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let per_input: Vec<Result<EmpiricalDist, MetricsError>> = features
        .par_iter()
        .map_init(Workspace::default, |ws, x| {
            let vals = samples
                .iter()
                .map(|theta| Ok(model.eval(x, theta, ws)?[observable]))
                .collect::<Result<Vec<f64>, ModelError>>()?;
            EmpiricalDist::new(vals)
        })
        .collect();
    let dists = per_input.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(PushForward {
        mean: dists.iter().map(EmpiricalDist::mean).collect(),
        stdev: dists.iter().map(EmpiricalDist::stdev).collect(),
        dists,
    })
}

/// Per-input W1 between the push-forward and reference sample sets.
pub fn path_w1(push: &PushForward, reference: &[EmpiricalDist]) -> Result<Vec<f64>, MetricsError> {
    if push.dists.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(push.dists.len(), reference.len()));
    }
    Ok(push.dists.iter().zip(reference).map(|(a, b)| w1_distance(a, b)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LCurvePoint {
    pub lambda: f64,
    pub test_r2: f64,
    pub active_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LCurve {
    pub points: Vec<LCurvePoint>,
    pub lambda_star: f64,
}

/// Runs `train` for each distinct `λ` (first occurrence kept). A failing
/// point is recorded with `R² = −∞`. `λ*` is the largest `λ` whose R² is
/// within 0.01 of the best.
pub fn lcurve_sweep<F, E>(grid: &[f64], mut train: F) -> Result<LCurve, MetricsError>
where
    F: FnMut(f64) -> Result<(f64, usize), E>,
{
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(MetricsError::InvalidGrid);
    }
    let mut seen: Vec<f64> = Vec::new();
    let mut points = Vec::new();
    for &lambda in grid {
        if seen.contains(&lambda) {
            continue;
        }
        seen.push(lambda);
        let (test_r2, active_count) = match train(lambda) {
            Ok((r2, k)) if r2.is_finite() => (r2, k),
            Ok((_, k)) => (f64::NEG_INFINITY, k),
            Err(_) => (f64::NEG_INFINITY, 0),
        };
        points.push(LCurvePoint {
            lambda,
            test_r2,
            active_count,
        });
    }
    let best = points.iter().map(|p| p.test_r2).fold(f64::NEG_INFINITY, f64::max);
    let lambda_star = points
        .iter()
        .filter(|p| p.test_r2 >= best - 0.01)
        .map(|p| p.lambda)
        .fold(f64::NEG_INFINITY, f64::max);
    let lambda_star = if lambda_star.is_finite() { lambda_star } else { points[0].lambda };
    Ok(LCurve { points, lambda_star })
}

/// `gamma,mean,stdev,w1` rows.
pub fn format_path_table(gamma: &[f64], mean: &[f64], stdev: &[f64], w1: &[f64]) -> Result<String, MetricsError> {
    for len in [mean.len(), stdev.len(), w1.len()] {
        if len != gamma.len() {
            return Err(MetricsError::LengthMismatch(gamma.len(), len));
        }
    }
    let mut s = String::from("gamma,mean,stdev,w1\n");
    for k in 0..gamma.len() {
        writeln!(s, "{:?},{:?},{:?},{:?}", gamma[k], mean[k], stdev[k], w1[k]).unwrap();
    }
    Ok(s)
}

pub fn format_lcurve(curve: &LCurve) -> String {
    let mut s = String::from("lambda,r2,active_count\n");
    for p in &curve.points {
        writeln!(s, "{:?},{:?},{}", p.lambda, p.test_r2, p.active_count).unwrap();
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), MetricsError> {
    std::fs::write(path, text)?;
    Ok(())
}

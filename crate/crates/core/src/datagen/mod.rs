//! Synthetic datasets: ground-truth generators, samplers, validation paths,
//! measurement noise and the dataset file format.

mod io;
mod truth;

use nalgebra::{Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{lagrange_strain_2d, DeformationGradient, ModelError, DET_C_FLOOR};

pub use io::{read_dataset, write_dataset, DATASET_SCHEMA};
pub use truth::{gent_truth, gent_truth_of_c, mechchem_truth, GentParams, MechchemParams};

/// Consecutive rejected draws tolerated by the samplers.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("Gent locking: I1 - 3 = {} reaches Jm = {jm}", i1 - 3.0)]
    GentLocking { i1: f64, jm: f64 },
    #[error("{0} consecutive samples rejected")]
    TooManyRejections(usize),
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("dataset schema {found} does not match {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset has no records")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Multiplicative,
    Additive,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            level: 0.0,
            seed: 0,
        }
    }

    pub fn multiplicative(level: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Multiplicative,
            level,
            seed,
        }
    }

    pub fn additive(level: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Additive,
            level,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(DatagenError::Invalid(format!("noise level must be >= 0, got {}", self.level)));
        }
        Ok(())
    }

    /// Per-output standard deviation used by the likelihood.
    pub fn sigma(&self, y: f64) -> f64 {
        match self.kind {
            NoiseKind::Multiplicative => self.level * y.abs().max(1.0),
            NoiseKind::Additive | NoiseKind::None => self.level,
        }
    }
}

/// Perturbs `outputs` in place with a stream seeded from `noise.seed`.
pub fn apply_noise(outputs: &mut [f64], noise: &NoiseSpec) -> Result<(), DatagenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    apply_noise_with(outputs, noise, &mut rng)
}

pub fn apply_noise_with<R: Rng + ?Sized>(outputs: &mut [f64], noise: &NoiseSpec, rng: &mut R) -> Result<(), DatagenError> {
    noise.validate()?;
    if noise.kind == NoiseKind::None {
        return Ok(());
    }
    for y in outputs.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        let eta = noise.level * z;
        match noise.kind {
            NoiseKind::Multiplicative => *y *= 1.0 + eta,
            NoiseKind::Additive => *y += eta,
            NoiseKind::None => {}
        }
    }
    Ok(())
}

/// Which ground truth produced a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum Generator {
    Gent(GentParams),
    Mechchem(MechchemParams),
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Gent(_) => "gent",
            Generator::Mechchem(_) => "mechchem",
        }
    }

    pub fn input_names(&self) -> Vec<String> {
        match self {
            Generator::Gent(_) => ["F11", "F12", "F13", "F21", "F22", "F23", "F31", "F32", "F33"]
                .map(String::from)
                .to_vec(),
            Generator::Mechchem(_) => ["E11", "E22", "E12", "c"].map(String::from).to_vec(),
        }
    }

    pub fn output_names(&self) -> Vec<String> {
        match self {
            Generator::Gent(_) => ["S11", "S22", "S33", "S12", "S13", "S23"].map(String::from).to_vec(),
            Generator::Mechchem(_) => ["S11", "S22", "S12", "mu"].map(String::from).to_vec(),
        }
    }

    /// Noiseless observables for one raw input record.
    pub fn observe(&self, raw: &[f64]) -> Result<Vec<f64>, DatagenError> {
        match self {
            Generator::Gent(p) => {
                let f = DeformationGradient::from_row_slice(raw);
                let (_, s) = gent_truth(&f, p)?;
                Ok(crate::models::STRESS_COMPONENTS.iter().map(|&(i, j)| s[(i, j)]).collect())
            }
            Generator::Mechchem(p) => {
                let e = Matrix2::new(raw[0], raw[2], raw[2], raw[1]);
                let (_, s, mu) = mechchem_truth(&e, raw[3], p)?;
                Ok(vec![s[(0, 0)], s[(1, 1)], s[(0, 1)], mu])
            }
        }
    }

    /// Ground-truth potential for one raw input record.
    pub fn potential(&self, raw: &[f64]) -> Result<f64, DatagenError> {
        match self {
            Generator::Gent(p) => Ok(gent_truth(&DeformationGradient::from_row_slice(raw), p)?.0),
            Generator::Mechchem(p) => {
                let e = Matrix2::new(raw[0], raw[2], raw[2], raw[1]);
                Ok(mechchem_truth(&e, raw[3], p)?.0)
            }
        }
    }
}

/// Input/output records with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub generator: Generator,
    pub epsilon: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `[F]ᵢⱼ = δᵢⱼ + U[−ε, ε]`, rejecting `det F ≤ 0`, `det C ≤ 1e-8` and Gent locking.
pub fn sample_deformations<R: Rng + ?Sized>(
    count: usize,
    eps: f64,
    gent: &GentParams,
    rng: &mut R,
) -> Result<Vec<DeformationGradient>, DatagenError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(DatagenError::Invalid(format!("epsilon must lie in [0, 1), got {eps}")));
    }
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count {
        let m = Matrix3::from_fn(|i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            if eps > 0.0 {
                d + rng.gen_range(-eps..=eps)
            } else {
                d
            }
        });
        let f = DeformationGradient(m);
        let c = f.right_cauchy_green();
        if m.determinant() > 0.0 && c.determinant() > DET_C_FLOOR && c.trace() - 3.0 < gent.jm {
            out.push(f);
            rejected = 0;
        } else {
            rejected += 1;
            if rejected >= MAX_REJECTIONS {
                return Err(DatagenError::TooManyRejections(rejected));
            }
        }
    }
    Ok(out)
}

/// In-plane `(E11, E22, E12, c)` draws from `F = I + U[−ε, ε]` (2×2) and `c ~ U[0, 1]`.
pub fn sample_mechchem_inputs<R: Rng + ?Sized>(count: usize, eps: f64, rng: &mut R) -> Result<Vec<Vec<f64>>, DatagenError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(DatagenError::Invalid(format!("epsilon must lie in [0, 1), got {eps}")));
    }
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count {
        let f = Matrix2::from_fn(|i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            if eps > 0.0 {
                d + rng.gen_range(-eps..=eps)
            } else {
                d
            }
        });
        let c: f64 = rng.gen_range(0.0..=1.0);
        if f.determinant() > 0.0 && (f.transpose() * f).determinant() > DET_C_FLOOR {
            let e = lagrange_strain_2d(&f);
            out.push(vec![e[(0, 0)], e[(1, 1)], 0.5 * (e[(0, 1)] + e[(1, 0)]), c]);
            rejected = 0;
        } else {
            rejected += 1;
            if rejected >= MAX_REJECTIONS {
                return Err(DatagenError::TooManyRejections(rejected));
            }
        }
    }
    Ok(out)
}

/// Samples `count` records, evaluates the generator and applies noise.
pub fn generate(
    generator: Generator,
    count: usize,
    epsilon: f64,
    noise: NoiseSpec,
    seed: u64,
) -> Result<Dataset, DatagenError> {
    if count == 0 {
        return Err(DatagenError::Empty);
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = match &generator {
        Generator::Gent(p) => sample_deformations(count, epsilon, p, &mut rng)?
            .iter()
            .map(DeformationGradient::to_row_vec)
            .collect(),
        Generator::Mechchem(_) => sample_mechchem_inputs(count, epsilon, &mut rng)?,
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut outputs = Vec::with_capacity(count);
    for x in &inputs {
        let mut y = generator.observe(x)?;
        apply_noise_with(&mut y, &noise, &mut noise_rng)?;
        outputs.push(y);
    }
    Ok(Dataset {
        generator,
        epsilon,
        noise,
        seed,
        inputs,
        outputs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Uniaxial,
    Mechchem,
}

/// Validation path: its parameter `γ` and the raw input at each point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPath {
    pub gamma: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
}

/// `F = I + γ e₁⊗E₁` on a uniform grid over `γ ∈ [−0.4, 0.4]`; the
/// mechanochemistry path pairs the plane-strain `E` of that `F` with
/// `c = 1.25(γ + 0.4)`.
pub fn validation_path(kind: PathKind, points: usize) -> Result<ValidationPath, DatagenError> {
    if points < 2 {
        return Err(DatagenError::Invalid(format!("a path needs at least 2 points, got {points}")));
    }
    let (lo, hi) = (-0.4, 0.4);
    let step = (hi - lo) / (points - 1) as f64;
    let gamma: Vec<f64> = (0..points)
        .map(|k| if k + 1 == points { hi } else { lo + step * k as f64 })
        .collect();
    let inputs = gamma
        .iter()
        .map(|&g| match kind {
            PathKind::Uniaxial => {
                let mut f = DeformationGradient::identity();
                f.0[(0, 0)] += g;
                f.to_row_vec()
            }
            PathKind::Mechchem => {
                let f = Matrix2::new(1.0 + g, 0.0, 0.0, 1.0);
                let e = lagrange_strain_2d(&f);
                let c = (1.25 * (g + 0.4)).clamp(0.0, 1.0);
                vec![e[(0, 0)], e[(1, 1)], e[(0, 1)], c]
            }
        })
        .collect();
    Ok(ValidationPath { gamma, inputs })
}

/// `replicates` noisy copies of each truth value: `out[k][r]`.
pub fn noisy_replicates(truth: &[f64], noise: &NoiseSpec, replicates: usize) -> Result<Vec<Vec<f64>>, DatagenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    truth
        .iter()
        .map(|&y| {
            let mut row = vec![y; replicates];
            apply_noise_with(&mut row, noise, &mut rng)?;
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epsilon_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fs = sample_deformations(5, 0.0, &GentParams::default(), &mut rng).unwrap();
        assert!(fs.iter().all(|f| f.0 == Matrix3::identity()));
    }

    #[test]
    fn sampler_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fs = sample_deformations(1000, 0.2, &GentParams::default(), &mut rng).unwrap();
        for f in &fs {
            for i in 0..3 {
                for j in 0..3 {
                    let d = if i == j { 1.0 } else { 0.0 };
                    assert!((f.0[(i, j)] - d).abs() <= 0.2);
                }
            }
            assert!(f.0.determinant() > 0.0);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = generate(Generator::Gent(GentParams::default()), 10, 0.2, NoiseSpec::multiplicative(0.1, 4), 9).unwrap();
        let b = generate(Generator::Gent(GentParams::default()), 10, 0.2, NoiseSpec::multiplicative(0.1, 4), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn path_endpoints() {
        let p = validation_path(PathKind::Uniaxial, 1000).unwrap();
        assert_eq!(p.gamma.len(), 1000);
        assert_eq!(p.gamma[0], -0.4);
        assert_eq!(p.gamma[999], 0.4);
        assert!((p.gamma[1] - p.gamma[0] - 0.8 / 999.0).abs() < 1e-15);
        let last = &p.inputs[999];
        assert_eq!(last[0], 1.4);
        assert_eq!(&last[1..], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

        let m = validation_path(PathKind::Mechchem, 3).unwrap();
        assert_eq!(m.inputs[1], vec![0.0, 0.0, 0.0, 0.5]);
        assert_eq!(m.inputs[2][3], 1.0);
        assert_eq!(m.inputs[0][3], 0.0);
        assert!(validation_path(PathKind::Uniaxial, 1).is_err());
    }

    #[test]
    fn noise_examples() {
        let mut y = vec![1.0, 2.0];
        apply_noise(&mut y, &NoiseSpec::multiplicative(0.0, 3)).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
        let mut z = vec![0.0; 10];
        apply_noise(&mut z, &NoiseSpec::multiplicative(0.5, 3)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let mut ones = vec![1.0; 100_000];
        apply_noise(&mut ones, &NoiseSpec::multiplicative(0.1, 5)).unwrap();
        let n = ones.len() as f64;
        let mean = ones.iter().sum::<f64>() / n;
        let sd = (ones.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.095..=0.105).contains(&sd), "{sd}");
    }

    #[test]
    fn empty_generation_rejected() {
        assert!(matches!(
            generate(Generator::Gent(GentParams::default()), 0, 0.2, NoiseSpec::none(), 1),
            Err(DatagenError::Empty)
        ));
    }
}

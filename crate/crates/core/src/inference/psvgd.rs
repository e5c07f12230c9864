//! Projected SVGD on a likelihood-informed subspace.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::posterior::{LogDensity, LogPosteriorModel};
use super::svgd::{svgd_run, KernelSpec, ParticleEnsemble, StepRule};
use super::{InferenceError, PosteriorSamples};

/// `Σ^{-1/2} J` stacked over records and observables (rows × P).
pub fn gauss_newton_factor(m: &LogPosteriorModel, theta: &[f64]) -> Result<DMatrix<f64>, InferenceError> {
    let rows = m.whitened_jacobian(theta)?;
    let p = theta.len();
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// `H = 2 Jᵀ Σ⁻¹ J`.
pub fn gauss_newton_hessian(m: &LogPosteriorModel, theta: &[f64]) -> Result<DMatrix<f64>, InferenceError> {
    let a = gauss_newton_factor(m, theta)?;
    let mut h = a.tr_mul(&a) * 2.0;
    symmetrize(&mut h);
    Ok(h)
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues are
/// sorted descending; column `k` of the returned matrix is the eigenvector
/// of eigenvalue `k`.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), InferenceError> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(InferenceError::Invalid("eigenproblem needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinite("eigenproblem matrix".into()));
    }
    let mut m = a.clone();
    symmetrize(&mut m);
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm();
    for sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[(p, p)], m[(q, q)]);
                if sweep > 3 && 100.0 * apq.abs() + app.abs() == app.abs() && 100.0 * apq.abs() + aqq.abs() == aqq.abs() {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s, t, apq);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

#[allow(clippy::too_many_arguments)]
fn rotate(m: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64, t: f64, apq: f64) {
    let n = m.nrows();
    m[(p, p)] -= t * apq;
    m[(q, q)] += t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let (akp, akq) = (m[(k, p)], m[(k, q)]);
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        m[(k, p)] = np;
        m[(p, k)] = np;
        m[(k, q)] = nq;
        m[(q, k)] = nq;
    }
    let (vp, vq) = (v.column(p).clone_owned(), v.column(q).clone_owned());
    v.set_column(p, &(&vp * c - &vq * s));
    v.set_column(q, &(&vp * s + &vq * c));
}

/// Dominant generalized eigenvectors of `Hψ = λΣ₀⁻¹ψ` around an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProjector {
    /// `P × r`, orthonormal columns.
    pub psi: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue, descending, negatives floored at zero.
    pub spectrum: Vec<f64>,
    pub anchor: Vec<f64>,
    /// Diagonal of `Σ₀`.
    pub prior_var: Vec<f64>,
}

impl SubspaceProjector {
    pub fn rank(&self) -> usize {
        self.psi.ncols()
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    /// `Ψᵀ(θ − θ*)`.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        let d = DVector::from_iterator(theta.len(), theta.iter().zip(&self.anchor).map(|(a, b)| a - b));
        self.psi.tr_mul(&d).as_slice().to_vec()
    }

    /// `θ* + Ψ θʳ`.
    pub fn lift(&self, reduced: &[f64]) -> Vec<f64> {
        let x = &self.psi * DVector::from_column_slice(reduced);
        x.iter().zip(&self.anchor).map(|(a, b)| a + b).collect()
    }

    /// `(I − ΨΨᵀ) ξ`.
    pub fn complement(&self, xi: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(xi);
        let back = &self.psi * self.psi.tr_mul(&x);
        (x - back).as_slice().to_vec()
    }

    /// `Ψθʳ + θ* + (I − ΨΨᵀ)ξ` with `ξ ~ N(0, Σ₀)`.
    pub fn reconstruct<R: rand::Rng + ?Sized>(&self, reduced: &[f64], rng: &mut R) -> Vec<f64> {
        let xi: Vec<f64> = self
            .prior_var
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v.sqrt() * z
            })
            .collect();
        self.lift(reduced).iter().zip(self.complement(&xi)).map(|(a, b)| a + b).collect()
    }
}

fn check_prior(prior_var: &[f64], p: usize, threshold: f64) -> Result<(), InferenceError> {
    if prior_var.len() != p {
        return Err(InferenceError::Invalid(format!("prior variance has {} entries, need {p}", prior_var.len())));
    }
    if prior_var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(InferenceError::Invalid("prior variances must be positive".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(InferenceError::Invalid(format!("spectral threshold must be in (0, 1], got {threshold}")));
    }
    Ok(())
}

fn retained_rank(spectrum: &[f64], threshold: f64) -> Result<usize, InferenceError> {
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return Err(InferenceError::DegenerateSpectrum);
    }
    let mut cum = 0.0;
    for (k, l) in spectrum.iter().enumerate() {
        cum += l;
        if cum / total >= threshold {
            return Ok(k + 1);
        }
    }
    Ok(spectrum.len())
}

/// Modified Gram–Schmidt, applied twice.
fn orthonormalize(mut q: DMatrix<f64>) -> DMatrix<f64> {
    for _ in 0..2 {
        for j in 0..q.ncols() {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let ci = q.column(i).clone_owned();
                let mut cj = q.column_mut(j);
                cj.axpy(-proj, &ci, 1.0);
            }
            let norm = q.column(j).norm();
            q.column_mut(j).unscale_mut(norm);
        }
    }
    q
}

fn finish(
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    prior_var: &[f64],
    threshold: f64,
    anchor: &[f64],
) -> Result<SubspaceProjector, InferenceError> {
    let spectrum: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let r = retained_rank(&spectrum, threshold)?;
    let p = prior_var.len();
    let scaled = DMatrix::from_fn(p, r, |i, j| prior_var[i].sqrt() * vectors[(i, j)]);
    Ok(SubspaceProjector {
        psi: orthonormalize(scaled),
        eigenvalues: spectrum[..r].to_vec(),
        spectrum,
        anchor: anchor.to_vec(),
        prior_var: prior_var.to_vec(),
    })
}

/// Subspace from a dense Hessian via `Σ₀^{1/2} H Σ₀^{1/2}`.
pub fn active_subspace(
    h: &DMatrix<f64>,
    prior_var: &[f64],
    threshold: f64,
    anchor: &[f64],
) -> Result<SubspaceProjector, InferenceError> {
    let p = h.nrows();
    check_prior(prior_var, p, threshold)?;
    if anchor.len() != p {
        return Err(InferenceError::Invalid("anchor length differs from the Hessian".into()));
    }
    let m = DMatrix::from_fn(p, p, |i, j| prior_var[i].sqrt() * h[(i, j)] * prior_var[j].sqrt());
    let (values, vectors) = jacobi_eigen(&m)?;
    finish(values, vectors, prior_var, threshold, anchor)
}

/// Same subspace from a factor `A` with `H = 2AᵀA`, solving the smaller
/// Gram eigenproblem when `A` has fewer rows than columns.
pub fn active_subspace_from_factor(
    a: &DMatrix<f64>,
    prior_var: &[f64],
    threshold: f64,
    anchor: &[f64],
) -> Result<SubspaceProjector, InferenceError> {
    let p = a.ncols();
    check_prior(prior_var, p, threshold)?;
    if anchor.len() != p {
        return Err(InferenceError::Invalid("anchor length differs from the factor".into()));
    }
    let b = DMatrix::from_fn(a.nrows(), p, |i, j| 2f64.sqrt() * a[(i, j)] * prior_var[j].sqrt());
    if a.nrows() >= p {
        let (values, vectors) = jacobi_eigen(&b.tr_mul(&b))?;
        return finish(values, vectors, prior_var, threshold, anchor);
    }
    let (values, u) = jacobi_eigen(&(&b * b.transpose()))?;
    let spectrum: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let r = retained_rank(&spectrum, threshold)?;
    let mut vectors = DMatrix::zeros(p, r);
    for k in 0..r {
        let col = b.tr_mul(&u.column(k)) / spectrum[k].sqrt();
        vectors.set_column(k, &col);
    }
    let mut full = spectrum.clone();
    full.resize(p.max(spectrum.len()), 0.0);
    let mut out = finish(spectrum[..r].to_vec(), vectors, prior_var, 1.0, anchor)?;
    out.spectrum = full;
    Ok(out)
}

/// `log π(θ* + Ψθʳ)` as a density on the reduced coordinates.
pub struct Reduced<'a, D: LogDensity + ?Sized> {
    pub inner: &'a D,
    pub projector: &'a SubspaceProjector,
}

impl<D: LogDensity + ?Sized> LogDensity for Reduced<'_, D> {
    fn dim(&self) -> usize {
        self.projector.rank()
    }

    fn value_and_grad(&self, reduced: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        let (v, g) = self.inner.value_and_grad(&self.projector.lift(reduced))?;
        let rg = self.projector.psi.tr_mul(&DVector::from_vec(g));
        Ok((v, rg.as_slice().to_vec()))
    }
}

/// SVGD transport in reduced coordinates, then reconstruction with prior
/// draws in the complement. Reconstructed samples are projected onto the
/// feasible set of `density`.
pub fn psvgd_run<D: LogDensity + ?Sized>(
    ens: &ParticleEnsemble,
    density: &D,
    projector: &SubspaceProjector,
    kernel: &KernelSpec,
    rule: &StepRule,
    iterations: usize,
) -> Result<PosteriorSamples, InferenceError> {
    if ens.dim() != projector.dim() || density.dim() != projector.dim() {
        return Err(InferenceError::Invalid("ensemble, density and projector dimensions differ".into()));
    }
    let reduced_parts = ens.particles.iter().map(|t| projector.project(t)).collect();
    let mut reduced = ParticleEnsemble::new(reduced_parts, ens.seed)?;
    let target = Reduced {
        inner: density,
        projector,
    };
    let run = svgd_run(&mut reduced, &target, kernel, rule, iterations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ens.seed ^ 0x9e37_79b9_7f4a_7c15);
    let samples = run
        .samples
        .iter()
        .map(|r| {
            let mut theta = projector.reconstruct(r, &mut rng);
            density.constrain(&mut theta);
            theta
        })
        .collect();
    Ok(PosteriorSamples {
        method: "psvgd".into(),
        samples,
        ..run
    })
}

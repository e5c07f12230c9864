use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_stein::datagen::{generate, Generator, GentParams, NoiseSpec};
use sparse_stein::diffengine::{check_gradient, GraphBuilder, NodeId};
use sparse_stein::inference::*;
use sparse_stein::metrics::{w1_distance, EmpiricalDist};
use sparse_stein::models::{
    CompiledModel, HyperelasticModel, IcnnSpec, ModelError, ModelNodes, ObservableModel, Outputs,
};
use statrs::distribution::{ContinuousCDF, Normal};

/// `ŷ = Σᵢ θᵢ xᵢ`.
struct Linear(usize);

impl ObservableModel for Linear {
    fn num_params(&self) -> usize {
        self.0
    }
    fn input_width(&self) -> usize {
        self.0
    }
    fn feature_width(&self) -> usize {
        self.0
    }
    fn observable_names(&self) -> Vec<String> {
        vec!["y".into()]
    }
    fn features(&self, raw: &[f64], out: &mut Vec<f64>) -> Result<(), ModelError> {
        out.extend_from_slice(raw);
        Ok(())
    }
    fn emit(&self, b: &mut GraphBuilder, params: &[NodeId]) -> ModelNodes {
        let x: Vec<NodeId> = (0..self.0).map(|i| b.input(i)).collect();
        let y = b.dot(params, &x);
        ModelNodes {
            potential: y,
            observables: vec![y],
        }
    }
}

fn linear_posterior(xs: Vec<Vec<f64>>, ys: Vec<f64>, sigma: f64, prior: Prior) -> LogPosteriorModel {
    let p = xs.first().map_or(1, Vec::len);
    let model = CompiledModel::full(Arc::new(Linear(p)), Outputs::Observables);
    let n = ys.len();
    LogPosteriorModel::new(model, xs, ys.into_iter().map(|y| vec![y]).collect(), vec![vec![sigma]; n], prior).unwrap()
}

fn gaussian(precision: &[f64], mean: &[f64]) -> GaussianL1 {
    let d = mean.len();
    GaussianL1::new(DMatrix::from_row_slice(d, d, precision), DVector::from_column_slice(mean), 0.0).unwrap()
}

fn normal_quantiles(mean: f64, sd: f64, n: usize) -> EmpiricalDist {
    let dist = Normal::new(mean, sd).unwrap();
    EmpiricalDist::new((0..n).map(|k| dist.inverse_cdf((k as f64 + 0.5) / n as f64)).collect()).unwrap()
}

fn stdev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn identity_model_posterior_example() {
    let post = linear_posterior(vec![vec![1.0]], vec![0.0], 1.0, Prior::None);
    let (v, g) = post.value_and_grad(&[1.0]).unwrap();
    assert_eq!(v, -1.0);
    assert_eq!(g, vec![-2.0]);
    let (_, pg) = Prior::L1(3.0).penalty(&[0.0, -2.0]);
    assert_eq!(pg, vec![0.0, -3.0]);
}

#[test]
fn nonpositive_sigma_rejected() {
    let model = CompiledModel::full(Arc::new(Linear(1)), Outputs::Observables);
    let r = LogPosteriorModel::new(model, vec![vec![1.0]], vec![vec![0.0]], vec![vec![0.0]], Prior::None);
    assert!(matches!(r, Err(InferenceError::Invalid(_))));
}

fn small_hyper_posterior(prior: Prior) -> (LogPosteriorModel, IcnnSpec) {
    let spec = IcnnSpec::new(3, vec![5, 5]);
    let model = CompiledModel::full(Arc::new(HyperelasticModel::new(spec.clone())), Outputs::Observables);
    let data = generate(Generator::Gent(GentParams::default()), 12, 0.2, NoiseSpec::multiplicative(0.1, 1), 2).unwrap();
    (LogPosteriorModel::from_dataset(model, &data, prior).unwrap(), spec)
}

#[test]
fn hyper_log_posterior_gradient_matches_differences() {
    let (post, spec) = small_hyper_posterior(Prior::L2(0.3));
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let theta = spec.init(&mut rng);
        let (_, g) = post.value_and_grad(&theta).unwrap();
        let rel = check_gradient(|t| post.value_and_grad(t).unwrap().0, &g, &theta, 1e-6).unwrap();
        assert!(rel < 1e-5, "{rel}");
    }
}

#[test]
fn map_matches_closed_form_ridge() {
    let xs = [0.5, -1.0, 2.0, 1.5, 0.2];
    let ys = [1.1, -1.7, 4.3, 2.9, 0.1];
    let lambda = 0.7;
    let post = linear_posterior(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec(), 1.0, Prior::L2(lambda));
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let ridge = sxy / (sxx + lambda);
    let r = train_map(&post, &[0.0], AdamConfig::new(0.05).with_decay(0.997), 4000).unwrap();
    assert!((r.theta[0] - ridge).abs() < 1e-4, "{} vs {ridge}", r.theta[0]);
}

#[test]
fn map_clamps_constrained_weights() {
    let (post, spec) = small_hyper_posterior(Prior::L2(0.01));
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let r = train_map(&post, &spec.init(&mut rng), AdamConfig::new(0.01), 30).unwrap();
    for (t, &c) in r.theta.iter().zip(post.model().constrained_mask()) {
        assert!(!c || *t >= 0.0);
    }
    assert!(r.trace.last().unwrap() > &r.trace[0]);
}

#[test]
fn single_particle_svgd_is_adam_ascent() {
    let target = gaussian(&[2.0, 0.5, 0.5, 1.0], &[1.0, -2.0]);
    let cfg = AdamConfig::new(0.03).with_decay(0.999);
    let start = vec![3.0, 4.0];
    let mut ens = ParticleEnsemble::new(vec![start.clone()], 0).unwrap();
    let s = svgd_run(&mut ens, &target, &KernelSpec::median(), &StepRule::Adam(cfg), 500).unwrap();
    let mut theta = start;
    let mut adam = Adam::new(cfg, 2);
    for _ in 0..500 {
        let (_, g) = target.value_and_grad(&theta).unwrap();
        adam.ascend(&mut theta, &g);
    }
    assert_eq!(s.samples[0], theta);
}

#[test]
fn zero_iterations_leave_ensemble_unchanged() {
    let target = gaussian(&[1.0], &[0.0]);
    let mut ens = ParticleEnsemble::around(&[0.3], 6, 1.0, 5).unwrap();
    let before = ens.particles.clone();
    let s = svgd_run(&mut ens, &target, &KernelSpec::median(), &StepRule::Plain { lr: 0.1 }, 0).unwrap();
    assert_eq!(s.samples, before);
    assert!(s.trace.is_empty());
}

fn svgd_gaussian_2d(rule: StepRule, iterations: usize) -> (PosteriorSamples, DMatrix<f64>, GaussianL1) {
    let prec = [2.0, 0.6, 0.6, 1.0];
    let target = gaussian(&prec, &[1.0, -2.0]);
    let cov = target.precision.clone().try_inverse().unwrap();
    let mut ens = ParticleEnsemble::around(&[0.0, 0.0], 100, 1.0, 11).unwrap();
    let s = svgd_run(&mut ens, &target, &KernelSpec::median(), &rule, iterations).unwrap();
    assert!(ens.min_pairwise_distance() > 1e-4);
    (s, cov, target)
}

#[test]
fn svgd_recovers_gaussian_moments() {
    let (s, cov, target) = svgd_gaussian_2d(StepRule::Adam(AdamConfig::new(0.05).with_decay(0.998)), 2000);
    let mean = s.mean();
    for k in 0..2 {
        let sd = cov[(k, k)].sqrt();
        assert!((mean[k] - target.mean[k]).abs() < 0.1 * sd, "mean {k}: {}", mean[k]);
        let got = stdev(&s.marginal(k));
        assert!((got / sd - 1.0).abs() < 0.15, "sd {k}: {got} vs {sd}");
    }
}

#[test]
fn svgd_is_deterministic() {
    let target = gaussian(&[1.0, 0.0, 0.0, 1.0], &[0.5, 0.5]);
    let run = || {
        let mut e = ParticleEnsemble::around(&[0.0, 0.0], 20, 1.0, 3).unwrap();
        svgd_run(&mut e, &target, &KernelSpec::median(), &StepRule::Adam(AdamConfig::new(0.05)), 50).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn gauss_newton_examples() {
    let post = linear_posterior(vec![vec![1.0]], vec![0.3], 1.0, Prior::None);
    let h = gauss_newton_hessian(&post, &[0.7]).unwrap();
    assert_eq!(h[(0, 0)], 2.0);
    let empty = linear_posterior(vec![], vec![], 1.0, Prior::None);
    assert_eq!(gauss_newton_hessian(&empty, &[0.7]).unwrap(), DMatrix::zeros(1, 1));

    let (post, spec) = small_hyper_posterior(Prior::None);
    let theta = spec.init(&mut ChaCha8Rng::seed_from_u64(43));
    let h = gauss_newton_hessian(&post, &theta).unwrap();
    assert_eq!(h, h.transpose());
    let (vals, _) = jacobi_eigen(&h).unwrap();
    assert!(vals.iter().all(|&v| v >= -1e-10 * vals[0].max(1.0)));
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a + a.transpose()
}

#[test]
fn jacobi_agrees_with_reference_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for n in [1, 2, 5, 17, 40] {
        let a = random_symmetric(n, &mut rng);
        let (vals, vecs) = jacobi_eigen(&a).unwrap();
        let mut reference: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
        reference.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in vals.iter().zip(&reference) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        assert!((vecs.transpose() * &vecs - DMatrix::identity(n, n)).amax() < 1e-12);
        let recon = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals)) * vecs.transpose();
        assert!((recon - &a).amax() < 1e-11);
    }
}

#[test]
fn projector_is_idempotent_and_routes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let (m, p) = (6, 15);
    let a = DMatrix::from_fn(m, p, |_, _| rng.gen_range(-1.0..1.0));
    let prior_var: Vec<f64> = (0..p).map(|_| rng.gen_range(0.5..2.0)).collect();
    let anchor = vec![0.0; p];
    let dense = active_subspace(&(a.tr_mul(&a) * 2.0), &prior_var, 0.99, &anchor).unwrap();
    let gram = active_subspace_from_factor(&a, &prior_var, 0.99, &anchor).unwrap();
    assert_eq!(dense.rank(), gram.rank());
    for s in [&dense, &gram] {
        let proj = &s.psi * s.psi.transpose();
        assert!((&proj * &proj - &proj).amax() < 1e-10);
        assert!((s.psi.tr_mul(&s.psi) - DMatrix::identity(s.rank(), s.rank())).amax() < 1e-10);
        assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
    for (x, y) in dense.eigenvalues.iter().zip(&gram.eigenvalues) {
        assert!((x - y).abs() < 1e-9 * x.max(1.0));
    }
    let pd = &dense.psi * dense.psi.transpose();
    let pg = &gram.psi * gram.psi.transpose();
    assert!((pd - pg).amax() < 1e-8);
}

#[test]
fn reconstruction_complement_is_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let a = DMatrix::from_fn(3, 8, |_, _| rng.gen_range(-1.0..1.0));
    let anchor: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = active_subspace_from_factor(&a, &[1.0; 8], 0.99, &anchor).unwrap();
    for _ in 0..50 {
        let r: Vec<f64> = (0..s.rank()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let theta = s.reconstruct(&r, &mut rng);
        let back = s.project(&theta);
        for (x, y) in back.iter().zip(&r) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn psvgd_at_full_rank_matches_svgd() {
    let target = gaussian(&[2.0, 0.6, 0.6, 1.0], &[1.0, -2.0]);
    let h = target.precision.clone();
    let proj = active_subspace(&h, &[1.0, 1.0], 1.0, &[1.0, -2.0]).unwrap();
    assert_eq!(proj.rank(), 2);
    let rule = StepRule::Adam(AdamConfig::new(0.05).with_decay(0.998));
    let init = ParticleEnsemble::around(&[0.0, 0.0], 100, 1.0, 12).unwrap();
    let projected = psvgd_run(&init, &target, &proj, &KernelSpec::median(), &rule, 2000).unwrap();
    let plain = svgd_run(&mut init.clone(), &target, &KernelSpec::median(), &rule, 2000).unwrap();
    for k in 0..2 {
        let a = EmpiricalDist::new(projected.marginal(k)).unwrap();
        let b = EmpiricalDist::new(plain.marginal(k)).unwrap();
        let w = w1_distance(&a, &b);
        assert!(w <= 0.05, "marginal {k}: W1 = {w}");
    }
}

#[test]
fn psvgd_rank_one_direction() {
    // one datum along u; the orthogonal direction keeps the N(0, 1) prior
    let u = [0.6, 0.8];
    let (y, sigma) = (1.5, 0.5);
    let post = linear_posterior(vec![u.to_vec()], vec![y], sigma, Prior::L2(0.5));
    let map = train_map(&post, &[0.0, 0.0], AdamConfig::new(0.05).with_decay(0.998), 3000).unwrap().theta;
    let h = gauss_newton_hessian(&post, &map).unwrap();
    let proj = active_subspace(&h, &[1.0, 1.0], 0.99, &map).unwrap();
    assert_eq!(proj.rank(), 1);

    // along u: log π = −½(2/σ² + 1)s² + (2y/σ²)s + const
    let prec = 2.0 / (sigma * sigma) + 1.0;
    let (mean_s, sd_s) = (2.0 * y / (sigma * sigma) / prec, prec.sqrt().recip());
    let n = 500;
    let init = ParticleEnsemble::around(&map, n, 0.3, 13).unwrap();
    let rule = StepRule::Adam(AdamConfig::new(0.02).with_decay(0.998));
    let s = psvgd_run(&init, &post, &proj, &KernelSpec::median(), &rule, 1500).unwrap();
    let along: Vec<f64> = s.samples.iter().map(|t| u[0] * t[0] + u[1] * t[1]).collect();
    let across: Vec<f64> = s.samples.iter().map(|t| -u[1] * t[0] + u[0] * t[1]).collect();
    let w_active = w1_distance(&EmpiricalDist::new(along).unwrap(), &normal_quantiles(mean_s, sd_s, n));
    let w_inactive = w1_distance(&EmpiricalDist::new(across).unwrap(), &normal_quantiles(0.0, 1.0, n));
    assert!(w_active <= 0.05, "active W1 = {w_active}");
    assert!(w_inactive <= 0.1, "inactive W1 = {w_inactive}");
}

struct UnitGaussian;

impl LogDensity for UnitGaussian {
    fn dim(&self) -> usize {
        1
    }
    fn value_and_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        Ok((-0.5 * q[0] * q[0], vec![-q[0]]))
    }
}

#[test]
fn hmc_unit_gaussian_statistics() {
    let cfg = HmcConfig {
        step_size: 0.5,
        leapfrog_steps: 5,
        chain_length: 20_000,
        burn_in: 500,
        thin: 2,
    };
    let s = hmc_run(&UnitGaussian, &[2.0], &cfg, 7).unwrap();
    assert_eq!(s.len(), 10_000);
    let v = s.marginal(0);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean.abs() < 0.1, "{mean}");
    assert!((stdev(&v) - 1.0).abs() < 0.1);
    let acc = s.acceptance.unwrap();
    assert!((0.6..=0.999).contains(&acc), "{acc}");
    assert_eq!(s, hmc_run(&UnitGaussian, &[2.0], &cfg, 7).unwrap());
}

#[test]
fn hmc_energy_error_is_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let states: Vec<(f64, f64)> = (0..2000)
        .map(|_| {
            let q: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            let p: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            (q, p)
        })
        .collect();
    let mean_dh = |eps: f64, steps: usize| {
        states
            .iter()
            .map(|&(q, p)| {
                let h0 = 0.5 * q * q + 0.5 * p * p;
                let (nq, np, _, _) = leapfrog(&UnitGaussian, &[q], &[p], &[-q], eps, steps).unwrap();
                (0.5 * nq[0] * nq[0] + 0.5 * np[0] * np[0] - h0).abs()
            })
            .sum::<f64>()
            / states.len() as f64
    };
    // fixed trajectory length: halving ε doubles the step count
    let ratio = mean_dh(0.2, 5) / mean_dh(0.1, 10);
    assert!((3.0..=5.0).contains(&ratio), "{ratio}");
}

#[test]
fn l1_prior_demo_without_penalty_matches_gaussian_mean() {
    let prec = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.025]);
    let m = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    let target = GaussianL1::new(prec, m.clone(), 0.0).unwrap();
    let mut ens = ParticleEnsemble::around(&[0.0; 3], 50, 1.0, 14).unwrap();
    let rule = StepRule::Adam(AdamConfig::new(0.1).with_decay(0.998));
    let s = sparsifying_prior_svgd(&target, &mut ens, &KernelSpec::median(), &rule, 2000).unwrap();
    for (k, v) in s.mean().iter().enumerate() {
        assert!((v - m[k]).abs() < 0.1, "coordinate {k}: {v}");
    }
}

#[test]
fn samples_file_roundtrip() {
    let mut ens = ParticleEnsemble::around(&[0.0, 1.0], 4, 0.5, 15).unwrap();
    let target = gaussian(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    let s = svgd_run(&mut ens, &target, &KernelSpec::median(), &StepRule::Plain { lr: 0.1 }, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    write_samples(&path, &s).unwrap();
    let back = read_samples(&path).unwrap();
    assert_eq!(back.samples, s.samples);
    assert_eq!((back.method, back.seed, back.iterations), (s.method, s.seed, s.iterations));
}

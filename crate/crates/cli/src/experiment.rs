//! In-memory pipeline stages.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparse_stein::datagen::{
    self, noisy_replicates, validation_path, DatagenError, Dataset, GentParams, Generator, MechchemParams, NoiseSpec,
    PathKind,
};
use sparse_stein::inference::{
    active_subspace_from_factor, gauss_newton_factor, hmc_run, psvgd_run, sparsifying_prior_svgd, svgd_run,
    train_map_l0, GaussianL1, InferenceError, KernelSpec, LogDensity, LogPosteriorModel, ParticleEnsemble,
    PosteriorSamples, Prior, StepRule,
};
use sparse_stein::metrics::{
    format_path_table, lcurve_sweep, path_w1, pushforward, r2_score, w1_distance, EmpiricalDist, LCurve, MetricsError,
};
use sparse_stein::models::{
    CompiledModel, HyperelasticModel, IcnnSpec, MechchemModel, MlpSpec, ModelError, ModelFile, ModelSpec,
    ObservableModel, Outputs, Workspace, MODEL_SCHEMA,
};
use sparse_stein::sparsify::{deterministic_gates, GateState, Penalty, RegularizerSpec, SparsifyError};
use thiserror::Error;

use crate::config::{ExperimentConfig, Method, Problem};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sparsify(#[from] SparsifyError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ExperimentError>;

pub fn generator(problem: Problem) -> Option<Generator> {
    match problem {
        Problem::Hyperelasticity => Some(Generator::Gent(GentParams::default())),
        Problem::Mechanochemistry => Some(Generator::Mechchem(MechchemParams::default())),
        Problem::GaussianDemo => None,
    }
}

pub fn observable_names(problem: Problem) -> Vec<String> {
    generator(problem).map(|g| g.output_names()).unwrap_or_default()
}

fn path_kind(problem: Problem) -> PathKind {
    match problem {
        Problem::Mechanochemistry => PathKind::Mechchem,
        _ => PathKind::Uniaxial,
    }
}

fn observable_index(cfg: &ExperimentConfig) -> Result<usize> {
    let obs = cfg.observable();
    observable_names(cfg.problem)
        .iter()
        .position(|n| *n == obs)
        .ok_or_else(|| ExperimentError::Invalid(format!("unknown observable '{obs}'")))
}

pub fn model_spec(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    match cfg.problem {
        Problem::Hyperelasticity => {
            let mut net = IcnnSpec::new(3, cfg.hidden());
            net.constrain_first_layer = cfg.architecture.constrain_first_layer;
            Ok(ModelSpec::Hyperelastic(HyperelasticModel::new(net)))
        }
        Problem::Mechanochemistry => Ok(ModelSpec::Mechchem(MechchemModel::new(MlpSpec::new(4, cfg.hidden())))),
        Problem::GaussianDemo => Err(ExperimentError::Invalid("the gaussian demo has no model".into())),
    }
}

fn shared(spec: &ModelSpec) -> Arc<dyn ObservableModel> {
    match spec {
        ModelSpec::Hyperelastic(m) => Arc::new(m.clone()),
        ModelSpec::Mechchem(m) => Arc::new(m.clone()),
    }
}

/// Compiles a model file over its active parameters.
pub fn compile(file: &ModelFile) -> CompiledModel {
    CompiledModel::new(shared(&file.model), file.layout(), Outputs::Observables)
}

fn data_generator(cfg: &ExperimentConfig) -> Result<Generator> {
    generator(cfg.problem).ok_or_else(|| ExperimentError::Invalid("the gaussian demo has no data stage".into()))
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let g = data_generator(cfg)?;
    Ok(datagen::generate(g, cfg.data.count, cfg.data.epsilon, cfg.data.noise, cfg.data.seed)?)
}

fn provenance(pairs: &[(&str, toml::Value)]) -> BTreeMap<String, toml::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// MAP training. The L0 variant stores `θ̄ ⊙ ẑ` with the test-time gates.
pub fn train_map(cfg: &ExperimentConfig, data: &Dataset) -> Result<ModelFile> {
    let spec = model_spec(cfg)?;
    let model = CompiledModel::full(shared(&spec), Outputs::Observables);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = spec.init(&mut rng);
    let adam = cfg.map_adam();
    let reg = &cfg.regularizer;
    let mut prov = provenance(&[
        ("p", toml::Value::Integer(reg.p as i64)),
        ("lambda", toml::Value::Float(reg.lambda)),
        ("epochs", toml::Value::Integer(cfg.map.epochs as i64)),
        ("seed", toml::Value::Integer(cfg.seed as i64)),
    ]);
    match Penalty::from_p(reg.p)? {
        Penalty::L0 => {
            let post = LogPosteriorModel::from_dataset(model.clone(), data, Prior::None)?;
            let gates = GateState::init(init.len(), &mut rng);
            let spec_reg = RegularizerSpec {
                penalty: Penalty::L0,
                lambda: reg.lambda,
                mc_samples: reg.mc_samples,
            };
            let out = train_map_l0(&post, model.constrained_mask(), &init, gates, &spec_reg, adam, cfg.map.epochs, &mut rng)?;
            let z = deterministic_gates(&out.gates);
            let params: Vec<f64> = out.theta_bar.iter().zip(&z).map(|(t, zi)| t * zi).collect();
            if let Some(last) = out.trace.last() {
                prov.insert("final_objective".into(), toml::Value::Float(*last));
            }
            let mut file = ModelFile::dense(spec, params);
            file.gates = Some(z);
            file.provenance = prov;
            Ok(file)
        }
        penalty => {
            let prior = if penalty == Penalty::L1 {
                Prior::L1(reg.lambda)
            } else {
                Prior::L2(reg.lambda)
            };
            let post = LogPosteriorModel::from_dataset(model, data, prior)?;
            let out = sparse_stein::inference::train_map(&post, &init, adam, cfg.map.epochs)?;
            if let Some(last) = out.trace.last() {
                prov.insert("final_log_posterior".into(), toml::Value::Float(*last));
            }
            let mut file = ModelFile::dense(spec, out.theta);
            file.provenance = prov;
            Ok(file)
        }
    }
}

/// Keeps entries with an open gate, or with `|θ| > tolerance` when the
/// model carries no gates.
pub fn sparsify(cfg: &ExperimentConfig, map: &ModelFile) -> Result<ModelFile> {
    let full = map.materialize();
    let prior_mask = map.active_mask();
    let keep: Vec<bool> = match &map.gates {
        Some(z) => z.iter().zip(&prior_mask).map(|(&zi, &a)| a && zi > 0.0).collect(),
        None => full
            .iter()
            .zip(&prior_mask)
            .map(|(&t, &a)| a && t.abs() > cfg.sparsify.tolerance)
            .collect(),
    };
    let params: Vec<f64> = full.iter().zip(&keep).filter(|(_, &k)| k).map(|(&t, _)| t).collect();
    if params.is_empty() {
        return Err(SparsifyError::AllPruned.into());
    }
    let mut prov = map.provenance.clone();
    prov.insert("active_count".into(), toml::Value::Integer(params.len() as i64));
    prov.insert("full_count".into(), toml::Value::Integer(full.len() as i64));
    Ok(ModelFile {
        schema: MODEL_SCHEMA,
        active: keep.iter().map(|&k| if k { '1' } else { '0' }).collect(),
        params,
        gates: map.gates.clone(),
        model: map.model.clone(),
        provenance: prov,
    })
}

fn kernel(cfg: &ExperimentConfig) -> KernelSpec {
    match cfg.inference.bandwidth {
        Some(h) => KernelSpec::fixed(h),
        None => KernelSpec::median(),
    }
}

/// Posterior sampling on the surviving parameters under a Gaussian prior.
pub fn sample(cfg: &ExperimentConfig, data: &Dataset, model: &ModelFile) -> Result<PosteriorSamples> {
    let inf = &cfg.inference;
    let post = LogPosteriorModel::from_dataset(compile(model), data, Prior::L2(inf.prior_lambda))?;
    let anchor = model.params.clone();
    let rule = StepRule::Adam(cfg.svgd_adam());
    match inf.method {
        Method::Svgd => {
            let mut ens = start_ensemble(&post, &anchor, cfg)?;
            Ok(svgd_run(&mut ens, &post, &kernel(cfg), &rule, inf.iterations)?)
        }
        Method::Psvgd => {
            let factor = gauss_newton_factor(&post, &anchor)?;
            let sd = Prior::L2(inf.prior_lambda).gaussian_sd().expect("L2 prior is Gaussian");
            let var = vec![sd * sd; anchor.len()];
            let projector = active_subspace_from_factor(&factor, &var, inf.threshold, &anchor)?;
            let ens = start_ensemble(&post, &anchor, cfg)?;
            Ok(psvgd_run(&ens, &post, &projector, &kernel(cfg), &rule, inf.iterations)?)
        }
        Method::Hmc => Ok(hmc_run(&post, &anchor, &inf.hmc, inf.seed)?),
    }
}

fn start_ensemble(post: &LogPosteriorModel, anchor: &[f64], cfg: &ExperimentConfig) -> Result<ParticleEnsemble> {
    let mut ens = ParticleEnsemble::around(anchor, cfg.inference.particles, cfg.inference.jitter, cfg.inference.seed)?;
    for p in ens.particles.iter_mut() {
        post.constrain(p);
    }
    Ok(ens)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `gamma,mean,stdev,w1` rows.
    pub table: String,
    pub mean_w1: f64,
    /// R² of the point model against the noiseless truth.
    pub r2: f64,
    pub active_count: usize,
}

/// Noiseless truth of the selected observable along the validation path.
pub fn path_truth(cfg: &ExperimentConfig, points: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let g = data_generator(cfg)?;
    let k = observable_index(cfg)?;
    let path = validation_path(path_kind(cfg.problem), points)?;
    let truth = path
        .inputs
        .iter()
        .map(|x| Ok(g.observe(x)?[k]))
        .collect::<Result<Vec<f64>>>()?;
    Ok((path.gamma, path.inputs, truth))
}

fn in_range(problem: Problem, raw: &[f64]) -> bool {
    match problem {
        Problem::Hyperelasticity => (0.6..=1.4).contains(&raw[0]),
        _ => true,
    }
}

/// R² of a point model on the in-range portion of the validation path.
pub fn point_r2(cfg: &ExperimentConfig, model: &ModelFile) -> Result<f64> {
    let (_, inputs, truth) = path_truth(cfg, cfg.evaluate.path_points)?;
    let k = observable_index(cfg)?;
    let compiled = compile(model);
    let mut ws = Workspace::default();
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for (x, t) in inputs.iter().zip(&truth) {
        if in_range(cfg.problem, x) {
            y.push(*t);
            yhat.push(compiled.eval(&compiled.features(x)?, &model.params, &mut ws)?[k]);
        }
    }
    Ok(r2_score(&y, &yhat)?)
}

/// Push-forward of `samples` along the path, compared per point with noisy
/// replicates of the truth.
pub fn evaluate(cfg: &ExperimentConfig, data_noise: &NoiseSpec, model: &ModelFile, samples: &PosteriorSamples) -> Result<Evaluation> {
    let (gamma, inputs, truth) = path_truth(cfg, cfg.evaluate.path_points)?;
    let k = observable_index(cfg)?;
    let compiled = compile(model);
    let features = inputs.iter().map(|x| compiled.features(x)).collect::<std::result::Result<Vec<_>, _>>()?;
    let push = pushforward(&compiled, &samples.samples, &features, k)?;
    let noise = NoiseSpec {
        seed: cfg.evaluate.noise_seed,
        ..*data_noise
    };
    let reference = noisy_replicates(&truth, &noise, cfg.evaluate.replicates)?
        .into_iter()
        .map(EmpiricalDist::new)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let w1 = path_w1(&push, &reference)?;
    let mean_w1 = w1.iter().sum::<f64>() / w1.len() as f64;
    Ok(Evaluation {
        table: format_path_table(&gamma, &push.mean, &push.stdev, &w1)?,
        mean_w1,
        r2: point_r2(cfg, model)?,
        active_count: model.params.len(),
    })
}

/// One MAP + sparsify per `λ`, scored by path R².
pub fn lcurve(cfg: &ExperimentConfig, data: &Dataset) -> Result<LCurve> {
    let curve = lcurve_sweep(&cfg.lcurve.lambdas, |lambda| -> Result<(f64, usize)> {
        let mut c = cfg.clone();
        c.regularizer.lambda = lambda;
        let sparse = sparsify(&c, &train_map(&c, data)?)?;
        Ok((point_r2(&c, &sparse)?, sparse.params.len()))
    })?;
    Ok(curve)
}

pub fn demo_target(cfg: &ExperimentConfig) -> Result<GaussianL1> {
    let d = &cfg.demo;
    let n = d.mean.len();
    let precision = DMatrix::from_fn(n, n, |i, j| d.precision[i][j]);
    Ok(GaussianL1::new(precision, DVector::from_vec(d.mean.clone()), d.lambda1)?)
}

/// SVGD on the Gaussian target with an L1 prior, started around the origin.
pub fn demo_samples(cfg: &ExperimentConfig) -> Result<PosteriorSamples> {
    let target = demo_target(cfg)?;
    let inf = &cfg.inference;
    let origin = vec![0.0; cfg.demo.mean.len()];
    let mut ens = ParticleEnsemble::around(&origin, inf.particles, cfg.demo.init_sd, inf.seed)?;
    Ok(sparsifying_prior_svgd(&target, &mut ens, &kernel(cfg), &StepRule::Adam(cfg.svgd_adam()), inf.iterations)?)
}

/// Per-coordinate W1 between the particles and a long HMC reference chain.
pub fn demo_table(cfg: &ExperimentConfig, samples: &PosteriorSamples) -> Result<(String, f64)> {
    let target = demo_target(cfg)?;
    let hmc = sparse_stein::inference::HmcConfig {
        step_size: 0.2,
        leapfrog_steps: 10,
        chain_length: cfg.demo.reference_samples * 2,
        burn_in: 1000,
        thin: 2,
    };
    let reference = hmc_run(&target, &cfg.demo.mean, &hmc, cfg.evaluate.noise_seed)?;
    let mut s = String::from("coordinate,mean,stdev,reference_mean,reference_stdev,w1\n");
    let mut total = 0.0;
    for k in 0..samples.dim() {
        let a = EmpiricalDist::new(samples.marginal(k))?;
        let b = EmpiricalDist::new(reference.marginal(k))?;
        let w = w1_distance(&a, &b);
        total += w;
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            k + 1,
            a.mean(),
            a.stdev(),
            b.mean(),
            b.stdev(),
            w
        ));
    }
    Ok((s, total / samples.dim() as f64))
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_stein::datagen::{generate, Generator, MechchemParams, NoiseSpec};
use sparse_stein::diffengine::check_gradient;
use sparse_stein::inference::{LogPosteriorModel, Prior};
use sparse_stein::models::{CompiledModel, MechchemModel, MlpSpec, Outputs};
use sparse_stein::sparsify::*;

fn mechchem_loss() -> (LogPosteriorModel, MlpSpec) {
    let spec = MlpSpec::new(4, vec![4, 6]);
    let model = CompiledModel::full(Arc::new(MechchemModel::new(spec.clone())), Outputs::Observables);
    let data = generate(Generator::Mechchem(MechchemParams::default()), 10, 0.2, NoiseSpec::none(), 3).unwrap();
    (LogPosteriorModel::from_dataset(model, &data, Prior::None).unwrap(), spec)
}

#[test]
fn l0_loss_gradients_match_differences() {
    let (data, spec) = mechchem_loss();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let n = spec.num_params();
    for _ in 0..100 {
        let theta = spec.init(&mut rng);
        let la: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let u: Vec<Vec<f64>> = (0..2).map(|_| draw_uniforms(n, &mut rng)).collect();
        let lambda = 0.3;
        let g = GateState::from_log_alpha(la.clone());
        let loss = l0_loss_with_uniforms(&data, &theta, &g, lambda, &u).unwrap();

        let f_theta = |t: &[f64]| l0_loss_with_uniforms(&data, t, &g, lambda, &u).unwrap().value;
        let rel = check_gradient(f_theta, &loss.grad_theta, &theta, 1e-6).unwrap();
        assert!(rel < 1e-5, "theta: {rel}");

        let f_gate = |a: &[f64]| {
            l0_loss_with_uniforms(&data, &theta, &GateState::from_log_alpha(a.to_vec()), lambda, &u)
                .unwrap()
                .value
        };
        let rel = check_gradient(f_gate, &loss.grad_log_alpha, &la, 1e-6).unwrap();
        assert!(rel < 1e-4, "log alpha: {rel}");
    }
}

#[test]
fn pruned_model_reproduces_deterministic_gated_outputs() {
    let (data, spec) = mechchem_loss();
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let theta = spec.init(&mut rng);
    let la: Vec<f64> = (0..theta.len()).map(|i| if i % 3 == 0 { -8.0 } else { 1.0 }).collect();
    let g = GateState::from_log_alpha(la);
    let sparse = prune(&theta, &g).unwrap();
    assert!(sparse.active_count() < theta.len());
    let gated: Vec<f64> = theta.iter().zip(deterministic_gates(&g)).map(|(t, z)| t * z).collect();
    assert_eq!(sparse.materialize(), gated);
    assert_eq!(data.loss_and_grad(&sparse.materialize()).unwrap().0, data.loss_and_grad(&gated).unwrap().0);
}

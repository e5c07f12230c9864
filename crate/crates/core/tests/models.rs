use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_stein::models::*;

fn random_f(rng: &mut ChaCha8Rng, eps: f64) -> DeformationGradient {
    loop {
        let m = Matrix3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } + rng.gen_range(-eps..eps));
        if m.determinant() > 0.1 {
            return DeformationGradient(m);
        }
    }
}

fn symmetric_unit(i: usize, j: usize) -> Matrix3<f64> {
    let mut e = Matrix3::zeros();
    e[(i, j)] += 0.5;
    e[(j, i)] += 0.5;
    e
}

#[test]
fn icnn_midpoint_convexity() {
    let spec = IcnnSpec::default();
    let model = HyperelasticModel::new(spec.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let theta = spec.init(&mut rng);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let mut pt = || Invariants {
            i1: rng.gen_range(2.0..6.0),
            i2: rng.gen_range(2.0..6.0),
            j: rng.gen_range(0.5..1.5),
        };
        let (a, b) = (pt(), pt());
        let mid = Invariants {
            i1: 0.5 * (a.i1 + b.i1),
            i2: 0.5 * (a.i2 + b.i2),
            j: 0.5 * (a.j + b.j),
        };
        let f = |x| model.icnn_forward(x, &theta).unwrap();
        worst = worst.max(f(mid) - 0.5 * f(a) - 0.5 * f(b));
    }
    assert!(worst <= 1e-10, "convexity violated by {worst}");
}

#[test]
fn icnn_monotone_in_first_two_invariants() {
    let spec = IcnnSpec {
        constrain_first_layer: true,
        ..IcnnSpec::default()
    };
    let model = HyperelasticModel::new(spec.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let theta = spec.init(&mut rng);
    let h = 1e-6;
    for _ in 0..1000 {
        let x = [rng.gen_range(2.0..6.0), rng.gen_range(2.0..6.0), rng.gen_range(0.5..1.5)];
        for k in 0..2 {
            let (mut p, mut q) = (x, x);
            p[k] += h;
            q[k] -= h;
            let at = |a: [f64; 3]| model.icnn_forward(Invariants { i1: a[0], i2: a[1], j: a[2] }, &theta).unwrap();
            let d = (at(p) - at(q)) / (2.0 * h);
            assert!(d >= -1e-10, "d/dI{} = {d}", k + 1);
        }
    }
}

#[test]
fn hyper_stress_matches_potential_differences() {
    let model = Arc::new(HyperelasticModel::default());
    let pot = CompiledModel::full(model.clone(), Outputs::Potential);
    let obs = CompiledModel::full(model.clone(), Outputs::Observables);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut ws = Workspace::default();
    let h = 1e-5;
    for _ in 0..100 {
        let theta = model.network.init(&mut rng);
        let f = random_f(&mut rng, 0.2);
        let c = f.right_cauchy_green();
        let s = voigt_to_matrix(&obs.eval(&hyper_features_of_c(&c).unwrap(), &theta, &mut ws).unwrap());
        assert!((s - s.transpose()).norm() == 0.0);
        let mut fd = Matrix3::zeros();
        for &(i, j) in &STRESS_COMPONENTS {
            let e = symmetric_unit(i, j);
            let mut at = |cc: Matrix3<f64>| pot.eval(&hyper_features_of_c(&cc).unwrap(), &theta, &mut ws).unwrap()[0];
            let d = 2.0 * (at(c + h * e) - at(c - h * e)) / (2.0 * h);
            fd[(i, j)] = d;
            fd[(j, i)] = d;
        }
        let rel = (s - fd).norm() / s.norm().max(1e-12);
        assert!(rel < 1e-5, "relative stress error {rel}");
    }
}

#[test]
fn mechchem_observables_match_potential_differences() {
    let model = Arc::new(MechchemModel::default());
    let pot = CompiledModel::full(model.clone(), Outputs::Potential);
    let obs = CompiledModel::full(model.clone(), Outputs::Observables);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut ws = Workspace::default();
    let h = 1e-5;
    for _ in 0..100 {
        let theta = model.network.init(&mut rng);
        let raw = [
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(0.05..0.95),
        ];
        let got = obs.eval(&pot.features(&raw).unwrap(), &theta, &mut ws).unwrap();
        let mut at = |r: [f64; 4]| pot.eval(&pot.features(&r).unwrap(), &theta, &mut ws).unwrap()[0];
        let diff = |k: usize, at: &mut dyn FnMut([f64; 4]) -> f64| {
            let (mut p, mut q) = (raw, raw);
            p[k] += h;
            q[k] -= h;
            (at(p) - at(q)) / (2.0 * h)
        };
        // E12 is the symmetric shear component: dΨ = 2 S12 dE12
        let fd = [diff(0, &mut at), diff(1, &mut at), 0.5 * diff(2, &mut at), diff(3, &mut at)];
        for k in 0..4 {
            let rel = (got[k] - fd[k]).abs() / got[k].abs().max(1e-3);
            assert!(rel < 1e-5, "observable {k}: {} vs {} ({rel})", got[k], fd[k]);
        }
    }
}

#[test]
fn mechchem_regression_anchor() {
    let model = MechchemModel::default();
    let theta = model.network.init(&mut ChaCha8Rng::seed_from_u64(2024));
    let e = Matrix2::new(0.05, -0.02, -0.02, 0.1);
    let v = model.mechchem_potential(&e, 0.3, &theta).unwrap();
    assert!((v - MECHCHEM_ANCHOR).abs() < 1e-12, "{v:.17e}");
}

const MECHCHEM_ANCHOR: f64 = 2.163_441_349_324_335_4e-4;

#[test]
fn pruned_graph_equals_gated_full_graph() {
    let model = Arc::new(HyperelasticModel::default());
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let theta = model.network.init(&mut rng);
    let active: Vec<bool> = (0..theta.len()).map(|_| rng.gen_bool(0.05)).collect();
    let gated: Vec<f64> = theta.iter().zip(&active).map(|(&t, &a)| if a { t } else { 0.0 }).collect();
    let layout = ParamLayout::from_active(&active);
    let full = CompiledModel::full(model.clone(), Outputs::Observables);
    let sparse = CompiledModel::new(model.clone(), layout.clone(), Outputs::Observables);
    assert!(sparse.graph().len() < full.graph().len() / 5);
    let compact = layout.compact(&gated);
    let mut ws = Workspace::default();
    for _ in 0..100 {
        let x = full.features(&random_f(&mut rng, 0.3).to_row_vec()).unwrap();
        let a = full.eval(&x, &gated, &mut ws).unwrap();
        let b = sparse.eval(&x, &compact, &mut ws).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn gent_sized_gradient_cost() {
    let model = Arc::new(HyperelasticModel::default());
    let obs = CompiledModel::full(model.clone(), Outputs::Observables);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let theta = model.network.init(&mut rng);
    let feats: Vec<Vec<f64>> = (0..80).map(|_| obs.features(&random_f(&mut rng, 0.2).to_row_vec()).unwrap()).collect();
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; theta.len()];
    let t = Instant::now();
    for _ in 0..10 {
        for x in &feats {
            obs.pullback(x, &theta, &mut grad, &mut ws, |o| o.to_vec()).unwrap();
        }
    }
    println!("nodes {} gradient {:?}", obs.graph().len(), t.elapsed() / 10);
}

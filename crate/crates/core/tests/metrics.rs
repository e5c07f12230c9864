use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_stein::datagen::{validation_path, PathKind};
use sparse_stein::metrics::*;
use sparse_stein::models::{CompiledModel, HyperelasticModel, IcnnSpec, Outputs};

fn dist(v: Vec<f64>) -> EmpiricalDist {
    EmpiricalDist::new(v).unwrap()
}

/// Integrates |F_a − F_b| over the merged support by evaluating counting CDFs
/// at the midpoint of every elementary interval.
fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut knots: Vec<f64> = a.iter().chain(b).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    knots
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (cdf(a, mid) - cdf(b, mid)).abs() * (w[1] - w[0])
        })
        .sum()
}

#[test]
fn w1_matches_brute_force_on_unequal_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let na = rng.gen_range(1..60);
        let mut nb = rng.gen_range(1..60);
        if nb == na {
            nb += 1;
        }
        let a: Vec<f64> = (0..na).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.gen_range(-2.0..4.0)).collect();
        let fast = w1_distance(&dist(a.clone()), &dist(b.clone()));
        let slow = brute_force_w1(&a, &b);
        assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1e-300), "{fast} vs {slow}");
    }
}

#[test]
fn w1_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let draw = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..40);
        dist((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    for _ in 0..200 {
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        assert!(w1_distance(&a, &c) <= w1_distance(&a, &b) + w1_distance(&b, &c) + 1e-12);
    }
}

proptest! {
    #[test]
    fn w1_nonnegative_symmetric_and_zero_on_self(
        a in proptest::collection::vec(-10.0f64..10.0, 1..30),
        b in proptest::collection::vec(-10.0f64..10.0, 1..30),
    ) {
        let (da, db) = (dist(a.clone()), dist(b));
        let ab = w1_distance(&da, &db);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - w1_distance(&db, &da)).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(w1_distance(&da, &dist(a)), 0.0);
    }

    #[test]
    fn w1_translation_equivariance(
        a in proptest::collection::vec(-512i32..512, 1..20),
        b in proptest::collection::vec(-512i32..512, 1..20),
        c in -64i32..64,
    ) {
        // dyadic values keep every sum exact
        let f = |v: &[i32], s: i32| dist(v.iter().map(|&k| (k + s) as f64 / 64.0).collect());
        prop_assert_eq!(w1_distance(&f(&a, 0), &f(&b, 0)), w1_distance(&f(&a, c * 64), &f(&b, c * 64)));
    }

    #[test]
    fn r2_affine_invariance(
        y in proptest::collection::vec(-5.0f64..5.0, 3..30),
        noise in proptest::collection::vec(-0.5f64..0.5, 30),
        alpha in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
        beta in -4.0f64..4.0,
    ) {
        let yhat: Vec<f64> = y.iter().zip(&noise).map(|(a, e)| a + e).collect();
        let base = match r2_score(&y, &yhat) {
            Ok(v) => v,
            Err(_) => return Ok(()),
        };
        let t = |v: &[f64]| v.iter().map(|x| alpha * x + beta).collect::<Vec<_>>();
        let moved = r2_score(&t(&y), &t(&yhat)).unwrap();
        prop_assert!((base - moved).abs() < 1e-12 * base.abs().max(1.0));
    }
}

fn small_model() -> CompiledModel {
    CompiledModel::full(Arc::new(HyperelasticModel::new(IcnnSpec::new(3, vec![5, 5]))), Outputs::Observables)
}

#[test]
fn pushforward_basic_properties() {
    let model = small_model();
    let path = validation_path(PathKind::Uniaxial, 21).unwrap();
    let feats: Vec<Vec<f64>> = path.inputs.iter().map(|x| model.features(x).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let spec = IcnnSpec::new(3, vec![5, 5]);
    let (t1, t2) = (spec.init(&mut rng), spec.init(&mut rng));

    let single = pushforward(&model, std::slice::from_ref(&t1), &feats, 0).unwrap();
    assert!(single.stdev.iter().all(|&s| s == 0.0));

    let pair = pushforward(&model, &[t1.clone(), t2.clone()], &feats, 0).unwrap();
    let other = pushforward(&model, &[t2], &feats, 0).unwrap();
    for k in 0..feats.len() {
        let avg = 0.5 * (single.mean[k] + other.mean[k]);
        assert!((pair.mean[k] - avg).abs() < 1e-14);
    }
    // γ = 0 is the reference configuration
    assert!(pair.dists[10].samples().iter().all(|&v| v == 0.0));
    assert!(pushforward(&model, &[], &feats, 0).is_err());
}

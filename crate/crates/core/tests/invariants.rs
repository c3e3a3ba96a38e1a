//! Property tests for the regularizer, the Bellman operator, the features
//! and the stochastic gradients of the single-loop learner.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use regq_core::envs::{mountain_car, GridWorld};
use regq_core::learner::{RunConfig, SingleLoopLearner};
use regq_core::linfa::{
    estimate_sigma, exact_sigma, FeatureMap, RbfFeatures, TabularFeatures, DEFAULT_LAMBDA_FLOOR,
};
use regq_core::mdp::{
    bellman_backup, regularized_value_iteration, ExactOracle, QTable, TabularMdp,
};
use regq_core::regularizer::{project_to_simplex, Regularizer, RegularizerKind, SmoothTruncation};
use regq_core::Transition;

fn kind_strategy() -> impl Strategy<Value = RegularizerKind> {
    prop_oneof![
        Just(RegularizerKind::Shannon),
        Just(RegularizerKind::Tsallis)
    ]
}

fn q_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

proptest! {
    #[test]
    fn conjugate_is_within_tau_bound_of_max(kind in kind_strategy(), tau in 0.01f64..5.0, q in q_strategy(4)) {
        let reg = Regularizer::new(kind, tau, 4).unwrap();
        let v = reg.conjugate_value(&q).unwrap();
        let mx = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= mx - 1e-10);
        prop_assert!(v <= mx + tau * reg.bound() + 1e-10);
    }

    #[test]
    fn policy_lies_on_the_simplex(kind in kind_strategy(), tau in 0.01f64..5.0, q in q_strategy(5)) {
        let reg = Regularizer::new(kind, tau, 5).unwrap();
        let p = reg.conjugate_policy(&q).unwrap();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conjugate_value_is_attained_by_the_policy(kind in kind_strategy(), tau in 0.05f64..5.0, q in q_strategy(3)) {
        let reg = Regularizer::new(kind, tau, 3).unwrap();
        let (v, p) = reg.conjugate(&q).unwrap();
        let attained: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() - tau * reg.penalty(&p);
        prop_assert!((v - attained).abs() <= 1e-9 * (1.0 + v.abs()));
    }

    #[test]
    fn conjugate_gradient_matches_finite_differences(kind in kind_strategy(), tau in 0.5f64..5.0, q in q_strategy(3)) {
        let reg = Regularizer::new(kind, tau, 3).unwrap();
        let p = reg.conjugate_policy(&q).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = q.clone();
            let mut down = q.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (reg.conjugate_value(&up).unwrap() - reg.conjugate_value(&down).unwrap()) / (2.0 * h);
            prop_assert!((fd - p[i]).abs() < 1e-5, "fd {} vs {}", fd, p[i]);
        }
    }

    #[test]
    fn conjugate_is_convex(kind in kind_strategy(), tau in 0.01f64..5.0, a in q_strategy(4), b in q_strategy(4), w in 0.0f64..1.0) {
        let reg = Regularizer::new(kind, tau, 4).unwrap();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| w * x + (1.0 - w) * y).collect();
        let lhs = reg.conjugate_value(&mid).unwrap();
        let rhs = w * reg.conjugate_value(&a).unwrap() + (1.0 - w) * reg.conjugate_value(&b).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn conjugate_shifts_with_constants(kind in kind_strategy(), tau in 0.01f64..5.0, q in q_strategy(4), c in -100.0f64..100.0) {
        let reg = Regularizer::new(kind, tau, 4).unwrap();
        let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
        let diff = reg.conjugate_value(&shifted).unwrap() - reg.conjugate_value(&q).unwrap();
        prop_assert!((diff - c).abs() < 1e-9);
    }

    #[test]
    fn simplex_projection_is_closest_point(v in prop::collection::vec(-3.0f64..3.0, 4), probe in prop::collection::vec(0.0f64..1.0, 4)) {
        let p = project_to_simplex(&v);
        let s: f64 = probe.iter().sum();
        prop_assume!(s > 1e-6);
        let other: Vec<f64> = probe.iter().map(|x| x / s).collect();
        let dist = |x: &[f64]| x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prop_assert!(dist(&p) <= dist(&other) + 1e-12);
    }

    #[test]
    fn truncation_is_odd_monotone_and_bounded(delta in 0.1f64..100.0, x in -1e3f64..1e3, y in -1e3f64..1e3) {
        let k = SmoothTruncation::new(delta).unwrap();
        prop_assert!(k.truncate(x).abs() <= delta);
        prop_assert!((k.truncate(-x) + k.truncate(x)).abs() < 1e-12 * delta);
        if x < y {
            prop_assert!(k.truncate(x) <= k.truncate(y));
        }
        let d = k.derivative(x);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(k.truncate(x).abs() <= x.abs() + 1e-12);
    }

    #[test]
    fn truncated_backup_is_a_contraction(seed in 0u64..1000, kind in kind_strategy(), delta in prop_oneof![Just(1.0), Just(10.0), Just(f64::INFINITY)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(5, 3, 0.9, 1.0, &mut rng).unwrap();
        let reg = Regularizer::new(kind, 0.7, 3).unwrap();
        let trunc = if delta.is_infinite() { SmoothTruncation::identity() } else { SmoothTruncation::new(delta).unwrap() };
        let q1 = QTable::from_vec(5, 3, gaussian_vec(&mut rng, 15, 20.0).as_slice().to_vec()).unwrap();
        let q2 = QTable::from_vec(5, 3, gaussian_vec(&mut rng, 15, 20.0).as_slice().to_vec()).unwrap();
        let b1 = bellman_backup(&mdp, &reg, &trunc, &q1).unwrap();
        let b2 = bellman_backup(&mdp, &reg, &trunc, &q2).unwrap();
        prop_assert!(b1.max_abs_diff(&b2) <= mdp.gamma() * q1.max_abs_diff(&q2) + 1e-12);
    }

    #[test]
    fn rbf_features_are_bounded(seed in 0u64..50, x in -1.2f64..0.6, v in -0.07f64..0.07, a in 0usize..3) {
        let f = RbfFeatures::new(10, 0.5, 3, &mountain_car::LOW, &mountain_car::HIGH, seed).unwrap();
        let phi = FeatureMap::<[f64]>::phi(&f, &[x, v][..], a);
        prop_assert!(phi.norm() <= 1.0 + 1e-12);
        prop_assert_eq!(phi.len(), 30);
    }
}

#[test]
fn sigma_dominates_lambda_g() {
    let mdp = GridWorld::default().to_mdp().unwrap();
    let f = TabularFeatures::grid_poly(5, 5, 5).unwrap();
    let ctx = exact_sigma(&f, &mdp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let v = gaussian_vec(&mut rng, 30, 1.0).normalize();
        assert!((v.transpose() * ctx.sigma() * &v)[0] >= ctx.lambda_g() - 1e-10);
    }
}

#[test]
fn estimated_sigma_approaches_the_exact_one() {
    let mdp = GridWorld::default().to_mdp().unwrap();
    let f = TabularFeatures::grid_poly(5, 5, 5).unwrap();
    let exact = exact_sigma(&f, &mdp).unwrap();
    let n = 200_000;
    let samples = mdp.stream(5).map(|tr| (tr.state, tr.action));
    let est = estimate_sigma::<usize, _, _, _>(&f, samples, n, DEFAULT_LAMBDA_FLOOR).unwrap();
    let err = (est.sigma() - exact.sigma()).amax();
    assert!(err <= 3.0 / (n as f64).sqrt(), "entrywise error {err}");
    assert!(est.lambda_g() >= DEFAULT_LAMBDA_FLOOR);
}

#[test]
fn value_iteration_solves_the_bellman_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mdp = TabularMdp::random(8, 4, 0.95, 1.0, &mut rng).unwrap();
    for reg in [
        Regularizer::shannon(0.3, 4).unwrap(),
        Regularizer::tsallis(0.3, 4).unwrap(),
    ] {
        let q = regularized_value_iteration(&mdp, &reg, 1e-11, 100_000).unwrap();
        let bq = bellman_backup(&mdp, &reg, &SmoothTruncation::identity(), &q).unwrap();
        assert!(bq.max_abs_diff(&q) <= 1e-11);
        let d0 = mdp.delta0(&reg);
        assert!(q.sup_norm() <= d0);
    }
}

/// Exact expectations of the sampled gradients under `D = μ ⊗ P` equal the
/// oracle gradients: `E[h_g] = ∇_ω g(θ,ω)` and `E[h_f] = Σ̂_θ(ω − θ)`.
#[test]
fn sampled_gradients_are_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mdp = TabularMdp::random(6, 3, 0.9, 1.0, &mut rng).unwrap();
    let m = DMatrix::from_fn(18, 7, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = TabularFeatures::from_matrix(6, 3, m).unwrap();
    let ctx = exact_sigma(&f, &mdp).unwrap();
    for kind in [RegularizerKind::Shannon, RegularizerKind::Tsallis] {
        let reg = Regularizer::new(kind, 0.8, 3).unwrap();
        let trunc = SmoothTruncation::new(3.0).unwrap();
        let oracle = ExactOracle::new(&mdp, &reg, trunc, &f, &ctx).unwrap();
        let learner = SingleLoopLearner::new(
            &f,
            reg,
            trunc,
            0.9,
            RunConfig::new(0.1, 0.1, 1, 1e6).unwrap(),
        )
        .unwrap();
        let theta = gaussian_vec(&mut rng, 7, 2.0);
        let omega = gaussian_vec(&mut rng, 7, 2.0);
        let mut eh_g = DVector::zeros(7);
        let mut eh_f = DVector::zeros(7);
        let mu = mdp.state_action_distribution();
        for s in 0..6 {
            for a in 0..3 {
                for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    let w = mu[s * 3 + a] * p;
                    if w == 0.0 {
                        continue;
                    }
                    let tr = Transition {
                        state: s,
                        action: a,
                        reward: mdp.reward(s, a),
                        next_state: s2,
                        terminal: false,
                    };
                    eh_g += learner.lower_grad_sample(&theta, &omega, &tr).unwrap() * w;
                    eh_f += learner.upper_grad_sample(&theta, &omega, &tr).unwrap() * w;
                }
            }
        }
        let g = oracle.lower_grad(&theta, &omega).unwrap();
        let ev = oracle.evaluate(&theta).unwrap();
        let sf = oracle.sigma_hat_of(&ev) * (&omega - &theta);
        assert!((&eh_g - &g).amax() < 1e-12, "{kind:?}: E[h_g] mismatch");
        assert!((&eh_f - &sf).amax() < 1e-12, "{kind:?}: E[h_f] mismatch");
    }
}

//! Seeded battery of the analytical inequalities: the finite-difference
//! gradient check, the Lipschitz and boundedness bounds, strong convexity
//! of the lower level, the conjugate bound, and the pointwise estimation
//! bound under one-hot features.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envs::GridWorld;
use crate::error::Result;
use crate::learner::{project_to_ball, LearnerState, RunConfig, SingleLoopLearner};
use crate::linfa::{exact_sigma, ProjectionContext, TabularFeatures};
use crate::mdp::{regularized_value_iteration, ExactOracle, TabularMdp};
use crate::regularizer::{Regularizer, RegularizerKind, SmoothTruncation, L_G};

#[derive(Debug, Clone)]
pub struct BatterySettings {
    pub seed: u64,
    pub num_mdps: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub gamma: f64,
    /// Random `(θ₁, θ₂)` pairs per MDP.
    pub pairs: usize,
    /// Parameters per MDP for the finite-difference gradient check.
    pub gradient_points: usize,
    /// Additive tolerance of the inequality checks.
    pub tolerance: f64,
    /// Relative tolerance of the finite-difference check.
    pub gradient_tolerance: f64,
    /// Random iterates for the one-hot GridWorld estimation bound.
    pub estimation_points: usize,
}

impl Default for BatterySettings {
    fn default() -> Self {
        BatterySettings {
            seed: 0,
            num_mdps: 20,
            num_states: 6,
            num_actions: 3,
            dim: 8,
            gamma: 0.9,
            pairs: 200,
            gradient_points: 10,
            tolerance: 1e-9,
            gradient_tolerance: 1e-5,
            estimation_points: 200,
        }
    }
}

/// Outcome of one named inequality over all instances. `max_violation`
/// is the largest `lhs − rhs` seen (negative when every instance holds
/// with slack); `witness` describes the instance attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub witness: String,
}

impl CheckResult {
    fn new(name: &'static str, tolerance: f64) -> Self {
        CheckResult {
            name,
            instances: 0,
            max_violation: f64::NEG_INFINITY,
            tolerance,
            witness: String::new(),
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, at: impl FnOnce() -> String) {
        self.instances += 1;
        let v = lhs - rhs;
        if v > self.max_violation || v.is_nan() {
            self.max_violation = v;
            self.witness = format!("{}: lhs {lhs:.6e}, rhs {rhs:.6e}", at());
        }
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_violation <= self.tolerance
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

struct Instance {
    mdp: TabularMdp,
    features: TabularFeatures,
    ctx: ProjectionContext,
    reg: Regularizer,
    trunc: SmoothTruncation,
}

fn instance(settings: &BatterySettings, k: usize, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let (ns, na, d) = (settings.num_states, settings.num_actions, settings.dim);
    let mdp = TabularMdp::random(ns, na, settings.gamma, 1.0, rng)?;
    let m = DMatrix::from_fn(ns * na, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let features = TabularFeatures::from_matrix(ns, na, m)?;
    let ctx = exact_sigma(&features, &mdp)?;
    let kind = if k % 2 == 0 {
        RegularizerKind::Shannon
    } else {
        RegularizerKind::Tsallis
    };
    let reg = Regularizer::new(kind, [0.5, 1.0, 2.0][k % 3], na)?;
    let trunc = SmoothTruncation::new([1.0, 5.0, 50.0][k % 3])?;
    Ok(Instance {
        mdp,
        features,
        ctx,
        reg,
        trunc,
    })
}

/// Runs every check and returns one result per inequality.
pub fn run_battery(settings: &BatterySettings) -> Result<Vec<CheckResult>> {
    let tol = settings.tolerance;
    let mut fd = CheckResult::new("gradient_finite_difference", settings.gradient_tolerance);
    let mut lower_grad = CheckResult::new("lower_gradient_bound", tol);
    let mut omega_lip = CheckResult::new("omega_star_lipschitz", tol);
    let mut omega_lip_gamma = CheckResult::new("omega_star_lipschitz_gamma", tol);
    let mut policy_lip = CheckResult::new("policy_lipschitz", tol);
    let mut sigma_lip = CheckResult::new("sigma_hat_lipschitz", tol);
    let mut sigma_norm = CheckResult::new("sigma_hat_norm_bound", tol);
    let mut step_bound = CheckResult::new("theta_step_bound", tol);
    let mut surrogate_gap = CheckResult::new("surrogate_gradient_gap", tol);
    let mut smoothness = CheckResult::new("relaxed_smoothness", tol);
    let mut convexity = CheckResult::new("lower_level_strong_convexity", tol);
    let mut conjugate = CheckResult::new("conjugate_bound", tol);

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for k in 0..settings.num_mdps {
        let inst = instance(settings, k, &mut rng)?;
        let d = settings.dim;
        let na = settings.num_actions as f64;
        let tau = inst.reg.tau();
        let delta = inst.trunc.delta();
        let oracle = ExactOracle::new(&inst.mdp, &inst.reg, inst.trunc, &inst.features, &inst.ctx)?;
        let lambda = inst.ctx.lambda_g();
        let consts = oracle.diagnostic_constants(&DVector::zeros(d))?;

        let h = 1e-5;
        for j in 0..settings.gradient_points {
            let theta = gaussian(&mut rng, d, 1.0);
            let g = oracle.grad(&theta)?;
            let mut num = DVector::zeros(d);
            for i in 0..d {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[i] += h;
                m[i] -= h;
                num[i] = (oracle.objective(&p)? - oracle.objective(&m)?) / (2.0 * h);
            }
            fd.record((&g - &num).norm() / g.norm(), 0.0, || {
                format!("mdp {k} point {j}")
            });
        }

        for j in 0..settings.pairs {
            let at = || format!("mdp {k} pair {j}");
            let scale = 10f64.powf(rng.gen_range(-1.0..1.5));
            let t1 = gaussian(&mut rng, d, scale);
            let step = scale * rng.gen_range(0.01..1.0);
            let t2 = &t1 + gaussian(&mut rng, d, step);
            let dist = (&t1 - &t2).norm();
            let e1 = oracle.evaluate(&t1)?;
            let e2 = oracle.evaluate(&t2)?;

            let omega_shift = (&e1.omega_star - &e2.omega_star).norm();
            omega_lip.record(omega_shift, dist / lambda, at);
            omega_lip_gamma.record(omega_shift, settings.gamma * dist / lambda, at);

            let na_u = settings.num_actions;
            let worst_policy = (0..settings.num_states)
                .map(|s| {
                    let p1 = DVector::from_column_slice(&e1.policy[s * na_u..(s + 1) * na_u]);
                    let p2 = DVector::from_column_slice(&e2.policy[s * na_u..(s + 1) * na_u]);
                    (p1 - p2).norm()
                })
                .fold(0.0, f64::max);
            policy_lip.record(worst_policy, L_G * na.sqrt() / tau * dist, at);

            let sh1 = oracle.sigma_hat_of(&e1);
            let sh2 = oracle.sigma_hat_of(&e2);
            let op = (&sh1 - &sh2).svd(false, false).singular_values.max();
            sigma_lip.record(op, (L_G * na / tau + 2.0 / delta) * dist, at);
            sigma_norm.record(sh1.clone().svd(false, false).singular_values.max(), 2.0, at);

            let omega = &e1.omega_star + gaussian(&mut rng, d, scale);
            let grad1 = &sh1 * (&e1.omega_star - &t1);
            let surrogate = &sh1 * (&omega - &t1);
            surrogate_gap.record(
                (&grad1 - surrogate).norm(),
                2.0 * (&e1.omega_star - &omega).norm(),
                at,
            );

            let grad2 = &sh2 * (&e2.omega_star - &t2);
            smoothness.record(
                (&grad1 - grad2).norm(),
                (consts.l0 + consts.l1 * (&e2.omega_star - &t2).norm()) * dist,
                at,
            );

            let w1 = gaussian(&mut rng, d, scale);
            let w2 = gaussian(&mut rng, d, scale);
            let g1 = oracle.lower_objective(&t1, &w1)?;
            let g2 = oracle.lower_objective(&t1, &w2)?;
            let dg = oracle.lower_grad(&t1, &w2)?;
            let diff = &w1 - &w2;
            convexity.record(
                g2 + dg.dot(&diff) + 0.5 * lambda * diff.norm_squared(),
                g1,
                at,
            );

            for s in 0..settings.num_states {
                let q = e1.q.row(s);
                let mx = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                conjugate.record(
                    (inst.reg.conjugate_value(q)? - mx).abs(),
                    tau * inst.reg.bound(),
                    || format!("mdp {k} pair {j} state {s}"),
                );
            }
        }

        // per-step bounds along a short run with ω kept in the projection ball
        let radius = inst
            .ctx
            .projection_radius(inst.mdp.r_max(), inst.mdp.gamma(), delta);
        let alpha = 0.05;
        let cfg = RunConfig::new(alpha, 0.5, settings.pairs, radius)?;
        let learner =
            SingleLoopLearner::new(&inst.features, inst.reg, inst.trunc, inst.mdp.gamma(), cfg)?;
        let mut state = LearnerState::zeros(d);
        state.theta = gaussian(&mut rng, d, 5.0);
        state.omega = gaussian(&mut rng, d, 5.0);
        project_to_ball(&mut state.omega, radius);
        let h_bound = 2.0 * (inst.mdp.r_max() + delta) / lambda;
        for (j, tr) in inst
            .mdp
            .stream(settings.seed ^ k as u64)
            .take(settings.pairs)
            .enumerate()
        {
            let h_g = learner.lower_grad_sample(&state.theta, &state.omega, &tr)?;
            lower_grad.record(h_g.norm(), h_bound, || format!("mdp {k} step {j}"));
            let info = learner.step(&mut state, &tr)?;
            step_bound.record(info.theta_step, 2.0 * alpha, || format!("mdp {k} step {j}"));
        }
    }

    let estimation = estimation_bound_one_hot(settings, &mut rng)?;
    Ok(vec![
        fd,
        lower_grad,
        omega_lip,
        omega_lip_gamma,
        policy_lip,
        sigma_lip,
        sigma_norm,
        step_bound,
        surrogate_gap,
        smoothness,
        convexity,
        conjugate,
        estimation,
    ])
}

/// `(1−γ)‖Q*_τ − Φθ‖∞ ≤ ‖∇J(θ)‖/σ_min(θ) + γ(δ₀ − K_δ(δ₀))` on the default
/// GridWorld with one-hot features (`E_approx = 0`) and `δ = 30δ₀`, at random
/// tables whose regularized state values stay inside `[−δ₀, δ₀]`, the range
/// where the truncation term dominates the per-state truncation error.
fn estimation_bound_one_hot(
    settings: &BatterySettings,
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult> {
    let mut check = CheckResult::new("estimation_bound_one_hot", 1e-6);
    let mdp = GridWorld::default().to_mdp()?;
    let na = mdp.num_actions();
    let reg = Regularizer::shannon(1.0, na)?;
    let features = TabularFeatures::one_hot(mdp.num_states(), na)?;
    let ctx = exact_sigma(&features, &mdp)?;
    let d0 = mdp.delta0(&reg);
    let oracle = ExactOracle::new(
        &mdp,
        &reg,
        SmoothTruncation::new(30.0 * d0)?,
        &features,
        &ctx,
    )?;
    let q_star = regularized_value_iteration(&mdp, &reg, 1e-12, 1_000_000)?;
    let half = 0.5 * (d0 - reg.tau() * reg.bound());
    for j in 0..settings.estimation_points {
        let mix = rng.gen_range(0.0..1.0);
        let values: Vec<f64> = q_star
            .as_slice()
            .iter()
            .map(|&q| mix * q + (1.0 - mix) * rng.gen_range(-half..half))
            .collect();
        // one-hot coordinates are the table entries
        let theta = DVector::from_vec(values);
        let r = oracle.estimation_bound_check(&theta, 0.0, &q_star)?;
        check.record(r.lhs, r.rhs, || format!("point {j}"));
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_battery_passes() {
        let settings = BatterySettings {
            num_mdps: 3,
            pairs: 20,
            gradient_points: 2,
            estimation_points: 20,
            ..BatterySettings::default()
        };
        let results = run_battery(&settings).unwrap();
        assert_eq!(results.len(), 13);
        for r in &results {
            assert!(r.passed(), "{} failed: {}", r.name, r.witness);
        }
    }

    #[test]
    fn record_keeps_the_worst_instance() {
        let mut c = CheckResult::new("x", 0.0);
        c.record(1.0, 2.0, || "a".into());
        c.record(3.0, 2.5, || "b".into());
        c.record(0.0, 2.0, || "c".into());
        assert_eq!(c.instances, 3);
        assert_eq!(c.max_violation, 0.5);
        assert!(c.witness.starts_with("b"));
        assert!(!c.passed());
    }
}

//! Single-loop regularized Q-learning.
//!
//! Two parameter vectors are updated on every transition `(s, a, s′)`:
//!
//! ```text
//! h_g = φ(s,a)·(φ(s,a)ᵀω − R(s,a) − γ·Ĝ_{τ,δ}(Q̂_θ(s′,·)))
//! ω  ← P_r(ω − β·h_g)                       (P_r: projection onto the ℓ₂ ball of radius r)
//! h_f = (γ·z(s′)·Σ_{a′} π_θ(a′|s′)φ(s′,a′) − φ(s,a))·φ(s,a)ᵀ(ω − θ)
//! θ  ← θ − α·h_f/‖θ − ω‖                    (θ unchanged when θ = ω exactly)
//! ```
//!
//! `ω` (main network) tracks the projected truncated Bellman backup of the
//! target network `θ`, which follows a normalized surrogate gradient of the
//! truncated MSPBE. On a terminal transition the `s′` terms are dropped.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linfa::FeatureMap;
use crate::mdp::ExactOracle;
use crate::regularizer::{Regularizer, SmoothTruncation};
use crate::transition::Transition;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Iteration budget `T`.
    pub steps: usize,
    pub projection_radius: f64,
    pub seed: u64,
    /// Oracle metrics are logged every `log_every` iterations.
    pub log_every: usize,
    /// Also log the smallest singular value of `Σ̂` (one SVD per log point).
    pub track_sigma_min: bool,
}

impl RunConfig {
    pub fn new(alpha: f64, beta: f64, steps: usize, projection_radius: f64) -> Result<Self> {
        let cfg = RunConfig {
            alpha,
            beta,
            steps,
            projection_radius,
            seed: 0,
            log_every: (steps / 100).max(1),
            track_sigma_min: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite())
            || !(self.beta > 0.0 && self.beta.is_finite())
        {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        if !(self.projection_radius > 0.0) {
            return Err(Error::InvalidArgument(
                "projection radius must be positive".into(),
            ));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument(
                "log_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Target parameters `θ`, main parameters `ω`, iteration counter `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub theta: DVector<f64>,
    pub omega: DVector<f64>,
    pub t: usize,
}

impl LearnerState {
    pub fn zeros(dim: usize) -> Self {
        LearnerState {
            theta: DVector::zeros(dim),
            omega: DVector::zeros(dim),
            t: 0,
        }
    }
}

/// Per-step quantities, cheap enough to compute on every transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub lower_grad_norm: f64,
    pub upper_grad_norm: f64,
    /// `‖θ^{t+1} − θ^t‖`.
    pub theta_step: f64,
    /// `‖ω^{t+1}‖`.
    pub omega_norm: f64,
    /// `‖θ^t − ω^t‖`.
    pub gap: f64,
}

/// One row of the metrics series. Oracle columns are `None` without a
/// tabular oracle; the row for `t = T` has no step columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub t: usize,
    pub mspbe: Option<f64>,
    /// `‖∇J(θ^t)‖`.
    pub grad_norm: Option<f64>,
    /// `‖ω*(θ^t) − ω^{t+1}‖`.
    pub tracking: Option<f64>,
    /// `σ_min(Σ̂_{θ^t})`.
    pub sigma_min: Option<f64>,
    /// `‖θ^t − ω^t‖`.
    pub gap: f64,
    pub theta_step: Option<f64>,
    pub omega_norm: f64,
}

pub const METRICS_HEADER: [&str; 7] = [
    "t",
    "mspbe",
    "grad_norm",
    "tracking",
    "gap",
    "theta_step",
    "omega_norm",
];

impl MetricsRecord {
    pub fn csv_fields(&self) -> [String; 7] {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        [
            self.t.to_string(),
            opt(self.mspbe),
            opt(self.grad_norm),
            opt(self.tracking),
            self.gap.to_string(),
            opt(self.theta_step),
            self.omega_norm.to_string(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: LearnerState,
    pub metrics: Vec<MetricsRecord>,
    /// Largest per-step values seen over the run.
    pub max_lower_grad_norm: f64,
    pub max_theta_step: f64,
    pub max_omega_norm: f64,
}

/// Radial projection onto `{‖x‖ ≤ radius}`.
pub fn project_to_ball(v: &mut DVector<f64>, radius: f64) {
    let n = v.norm();
    if n > radius {
        *v *= radius / n;
    }
}

/// The single-loop learner for a fixed feature map, regularizer and truncation.
#[derive(Debug, Clone)]
pub struct SingleLoopLearner<'f, F> {
    features: &'f F,
    reg: Regularizer,
    trunc: SmoothTruncation,
    gamma: f64,
    config: RunConfig,
}

impl<'f, F> SingleLoopLearner<'f, F> {
    pub fn new(
        features: &'f F,
        reg: Regularizer,
        trunc: SmoothTruncation,
        gamma: f64,
        config: RunConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0,1], got {gamma}"
            )));
        }
        Ok(SingleLoopLearner {
            features,
            reg,
            trunc,
            gamma,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    pub fn truncation(&self) -> SmoothTruncation {
        self.trunc
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `π_θ(·|s)`.
    pub fn policy<S: ?Sized>(&self, theta: &DVector<f64>, state: &S) -> Result<Vec<f64>>
    where
        F: FeatureMap<S>,
    {
        self.reg
            .conjugate_policy(&self.features.q_values(state, theta))
    }

    /// Stochastic lower-level gradient `h_g` at `(θ, ω)`.
    pub fn lower_grad_sample<S>(
        &self,
        theta: &DVector<f64>,
        omega: &DVector<f64>,
        tr: &Transition<S>,
    ) -> Result<DVector<f64>>
    where
        F: FeatureMap<S>,
    {
        let phi = self.features.phi(&tr.state, tr.action);
        let bootstrap = if tr.terminal {
            0.0
        } else {
            self.trunc.truncate(
                self.reg
                    .conjugate_value(&self.features.q_values(&tr.next_state, theta))?,
            )
        };
        let td = phi.dot(omega) - tr.reward - self.gamma * bootstrap;
        Ok(phi * td)
    }

    /// Stochastic surrogate upper-level gradient `h_f`, evaluated with the
    /// already-updated main parameters `omega_next`.
    pub fn upper_grad_sample<S>(
        &self,
        theta: &DVector<f64>,
        omega_next: &DVector<f64>,
        tr: &Transition<S>,
    ) -> Result<DVector<f64>>
    where
        F: FeatureMap<S>,
    {
        let phi = self.features.phi(&tr.state, tr.action);
        let scale = phi.dot(&(omega_next - theta));
        let mut direction = -phi;
        if !tr.terminal {
            let next = self.features.state_features(&tr.next_state);
            let q: Vec<f64> = next.iter().map(|f| f.dot(theta)).collect();
            let (value, policy) = self.reg.conjugate(&q)?;
            let weight = self.gamma * self.trunc.derivative(value);
            for (p, f) in policy.iter().zip(&next) {
                if *p != 0.0 {
                    direction.axpy(weight * p, f, 1.0);
                }
            }
        }
        Ok(direction * scale)
    }

    /// One iteration on `state` in place.
    pub fn step<S>(&self, state: &mut LearnerState, tr: &Transition<S>) -> Result<StepInfo>
    where
        F: FeatureMap<S>,
    {
        let gap = (&state.theta - &state.omega).norm();
        let h_g = self.lower_grad_sample(&state.theta, &state.omega, tr)?;
        let mut omega_next = &state.omega - &h_g * self.config.beta;
        project_to_ball(&mut omega_next, self.config.projection_radius);

        let diff_norm = (&state.theta - &omega_next).norm();
        // exact comparison: the normalized step is defined for every nonzero gap
        let (theta_next, upper_grad_norm) = if diff_norm != 0.0 {
            let h_f = self.upper_grad_sample(&state.theta, &omega_next, tr)?;
            let n = h_f.norm();
            (&state.theta - h_f * (self.config.alpha / diff_norm), n)
        } else {
            (state.theta.clone(), 0.0)
        };
        let theta_step = (&theta_next - &state.theta).norm();
        if theta_next
            .iter()
            .chain(omega_next.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::Divergence { t: state.t });
        }
        let omega_norm = omega_next.norm();
        state.theta = theta_next;
        state.omega = omega_next;
        state.t += 1;
        Ok(StepInfo {
            lower_grad_norm: h_g.norm(),
            upper_grad_norm,
            theta_step,
            omega_norm,
            gap,
        })
    }

    /// Runs at most `config.steps` iterations from `init` over `stream`.
    /// With an oracle, exact metrics are logged at every multiple of
    /// `log_every` and once more after the last iteration.
    pub fn run<S, I>(
        &self,
        init: LearnerState,
        stream: I,
        oracle: Option<&ExactOracle<'_>>,
    ) -> Result<RunOutput>
    where
        F: FeatureMap<S>,
        I: IntoIterator<Item = Transition<S>>,
    {
        let mut state = init;
        let mut metrics = Vec::new();
        let mut out_max = (0.0f64, 0.0f64, 0.0f64);
        let start = state.t;
        for tr in stream.into_iter().take(self.config.steps) {
            let logging = (state.t - start) % self.config.log_every == 0;
            let before = logging.then(|| state.theta.clone());
            let info = self.step(&mut state, &tr)?;
            out_max.0 = out_max.0.max(info.lower_grad_norm);
            out_max.1 = out_max.1.max(info.theta_step);
            out_max.2 = out_max.2.max(info.omega_norm);
            if let Some(theta) = before {
                let mut rec =
                    self.oracle_record(oracle, &theta, state.t - 1, info.gap, info.omega_norm)?;
                if let (Some(o), Some(_)) = (oracle, rec.mspbe) {
                    let omega_star = o.omega_star(&theta)?;
                    rec.tracking = Some((omega_star - &state.omega).norm());
                }
                rec.theta_step = Some(info.theta_step);
                metrics.push(rec);
            }
        }
        let gap = (&state.theta - &state.omega).norm();
        let last = self.oracle_record(oracle, &state.theta, state.t, gap, state.omega.norm())?;
        metrics.push(last);
        Ok(RunOutput {
            state,
            metrics,
            max_lower_grad_norm: out_max.0,
            max_theta_step: out_max.1,
            max_omega_norm: out_max.2,
        })
    }

    fn oracle_record(
        &self,
        oracle: Option<&ExactOracle<'_>>,
        theta: &DVector<f64>,
        t: usize,
        gap: f64,
        omega_norm: f64,
    ) -> Result<MetricsRecord> {
        let mut rec = MetricsRecord {
            t,
            mspbe: None,
            grad_norm: None,
            tracking: None,
            sigma_min: None,
            gap,
            theta_step: None,
            omega_norm,
        };
        if let Some(o) = oracle {
            let ev = o.evaluate(theta)?;
            let sh = o.sigma_hat_of(&ev);
            rec.grad_norm = Some((&sh * (&ev.omega_star - theta)).norm());
            rec.mspbe = Some(o.mspbe(theta)?);
            if self.config.track_sigma_min {
                rec.sigma_min = Some(crate::mdp::smallest_singular_value(&sh));
            }
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridWorld;
    use crate::linfa::{exact_sigma, TabularFeatures};

    fn setup() -> (crate::mdp::TabularMdp, TabularFeatures) {
        let mdp = GridWorld::default().to_mdp().unwrap();
        let f = TabularFeatures::grid_poly(5, 5, 5).unwrap();
        (mdp, f)
    }

    #[test]
    fn zero_temporal_error_gives_zero_lower_gradient() {
        let (mdp, f) = setup();
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        let tr_op = SmoothTruncation::new(10.0).unwrap();
        let cfg = RunConfig::new(0.05, 0.5, 10, 1e3).unwrap();
        let learner = SingleLoopLearner::new(&f, reg, tr_op, 0.9, cfg).unwrap();
        let theta = DVector::from_fn(30, |i, _| (i as f64 * 0.3).sin());
        let tr = Transition {
            state: 7usize,
            action: 2,
            reward: mdp.reward(7, 2),
            next_state: 8usize,
            terminal: false,
        };
        let target =
            tr.reward + 0.9 * tr_op.truncate(reg.conjugate_value(&f.q_values(&8, &theta)).unwrap());
        // ω along φ(s,a) hitting the sampled target exactly
        let phi = f.phi(&7, 2);
        let omega = &phi * (target / phi.norm_squared());
        assert!(
            learner
                .lower_grad_sample(&theta, &omega, &tr)
                .unwrap()
                .norm()
                < 1e-12
        );
    }

    #[test]
    fn equal_parameters_leave_theta_unchanged() {
        let (_, f) = setup();
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        let cfg = RunConfig::new(0.05, 0.5, 10, 1e3).unwrap();
        let learner =
            SingleLoopLearner::new(&f, reg, SmoothTruncation::new(10.0).unwrap(), 0.9, cfg)
                .unwrap();
        let theta = DVector::from_element(30, 0.25);
        let tr = Transition {
            state: 3usize,
            action: 1,
            reward: 0.0,
            next_state: 8usize,
            terminal: false,
        };
        assert_eq!(
            learner
                .upper_grad_sample(&theta, &theta, &tr)
                .unwrap()
                .norm(),
            0.0
        );

        // choose ω so that one update lands exactly on θ: with reward chosen
        // to zero h_g and ω = θ, the update keeps ω = θ
        let boot = 0.9
            * SmoothTruncation::new(10.0)
                .unwrap()
                .truncate(reg.conjugate_value(&f.q_values(&8, &theta)).unwrap());
        let phi = f.phi(&3, 1);
        let tr = Transition {
            reward: phi.dot(&theta) - boot,
            ..tr
        };
        let mut st = LearnerState {
            theta: theta.clone(),
            omega: theta.clone(),
            t: 0,
        };
        let info = learner.step(&mut st, &tr).unwrap();
        assert_eq!(st.theta, theta);
        assert_eq!(info.theta_step, 0.0);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn steps_respect_the_projection_and_two_alpha() {
        let (mdp, f) = setup();
        let ctx = exact_sigma(&f, &mdp).unwrap();
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        let delta = 30.0 * mdp.delta0(&reg);
        let radius = ctx.projection_radius(mdp.r_max(), 0.9, delta);
        let cfg = RunConfig::new(0.05, 0.5, 20_000, radius).unwrap();
        let learner =
            SingleLoopLearner::new(&f, reg, SmoothTruncation::new(delta).unwrap(), 0.9, cfg)
                .unwrap();
        let mut st = LearnerState::zeros(30);
        let bound = 2.0 * (mdp.r_max() + delta) / ctx.lambda_g();
        for tr in mdp.stream(3).take(20_000) {
            let info = learner.step(&mut st, &tr).unwrap();
            assert!(info.theta_step <= 2.0 * 0.05 + 1e-12);
            assert!(info.omega_norm <= radius * (1.0 + 1e-12));
            assert!(info.lower_grad_norm <= bound);
            assert!(
                info.upper_grad_norm
                    <= 2.0 * (&st.omega - &st.theta).norm() + 2.0 * 0.05 * 2.0 + 1e-9
            );
        }
    }

    #[test]
    fn tiny_radius_is_enforced() {
        let (mdp, f) = setup();
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        let cfg = RunConfig::new(0.05, 0.5, 500, 0.1).unwrap();
        let learner =
            SingleLoopLearner::new(&f, reg, SmoothTruncation::identity(), 0.9, cfg).unwrap();
        let out = learner
            .run(LearnerState::zeros(30), mdp.stream(0), None)
            .unwrap();
        assert!(out.max_omega_norm <= 0.1 * (1.0 + 1e-12));
    }

    #[test]
    fn empty_stream_returns_initial_state() {
        let (mdp, f) = setup();
        let ctx = exact_sigma(&f, &mdp).unwrap();
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        let oracle = ExactOracle::new(&mdp, &reg, SmoothTruncation::identity(), &f, &ctx).unwrap();
        let cfg = RunConfig::new(0.05, 0.5, 0, 1e3).unwrap();
        let learner =
            SingleLoopLearner::new(&f, reg, SmoothTruncation::identity(), 0.9, cfg).unwrap();
        let init = LearnerState::zeros(30);
        let out = learner
            .run(init.clone(), mdp.stream(0), Some(&oracle))
            .unwrap();
        assert_eq!(out.state, init);
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].t, 0);
        assert!(out.metrics[0].mspbe.unwrap() > 0.0);
        assert!(out.metrics[0].tracking.is_none());
    }

    #[test]
    fn runs_are_deterministic() {
        let (mdp, f) = setup();
        let ctx = exact_sigma(&f, &mdp).unwrap();
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        let trunc = SmoothTruncation::new(30.0).unwrap();
        let oracle = ExactOracle::new(&mdp, &reg, trunc, &f, &ctx).unwrap();
        let mut cfg = RunConfig::new(0.05, 0.5, 3000, 1e4).unwrap();
        cfg.log_every = 500;
        let learner = SingleLoopLearner::new(&f, reg, trunc, 0.9, cfg).unwrap();
        let a = learner
            .run(LearnerState::zeros(30), mdp.stream(9), Some(&oracle))
            .unwrap();
        let b = learner
            .run(LearnerState::zeros(30), mdp.stream(9), Some(&oracle))
            .unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.state, b.state);
        assert_eq!(a.metrics.len(), 7);
        assert_eq!(a.metrics.last().unwrap().t, 3000);
    }

    #[test]
    fn invalid_configs() {
        assert!(RunConfig::new(0.0, 0.5, 1, 1.0).is_err());
        assert!(RunConfig::new(0.1, -0.5, 1, 1.0).is_err());
        assert!(RunConfig::new(0.1, 0.5, 1, 0.0).is_err());
    }

    #[test]
    fn metrics_csv_leaves_missing_cells_empty() {
        let rec = MetricsRecord {
            t: 4,
            mspbe: None,
            grad_norm: Some(0.5),
            tracking: None,
            sigma_min: None,
            gap: 1.0,
            theta_step: None,
            omega_norm: 2.0,
        };
        assert_eq!(
            rec.csv_fields(),
            ["4", "", "0.5", "", "1", "", "2"].map(String::from)
        );
    }
}

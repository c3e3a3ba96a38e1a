use nalgebra::{DMatrix, DVector};

use super::{backup_from_state_values, QTable, TabularMdp};
use crate::error::{Error, Result};
use crate::linfa::{FeatureMap, ProjectionContext, TabularFeatures};
use crate::regularizer::{Regularizer, SmoothTruncation, L_G};

/// Smallest singular value of `Σ̂` below which it is treated as singular.
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-12;

/// Exact evaluation of every quantity of the bi-level problem on a tabular
/// MDP with linear features.
#[derive(Debug, Clone)]
pub struct ExactOracle<'a> {
    mdp: &'a TabularMdp,
    reg: Regularizer,
    trunc: SmoothTruncation,
    features: &'a TabularFeatures,
    ctx: &'a ProjectionContext,
    /// `P` as an `|S||A| × |S|` matrix.
    kernel: DMatrix<f64>,
}

/// Everything derived from one `θ`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub theta: DVector<f64>,
    /// `Φθ`.
    pub q: QTable,
    /// `G*_τ(Q̂_θ(s,·))` per state.
    pub state_values: Vec<f64>,
    /// `Ĝ_{τ,δ}(Q̂_θ(s,·))` per state.
    pub truncated_values: Vec<f64>,
    /// `z(s;τ,δ,θ) = 1 − Ĝ²/δ²` per state.
    pub z: Vec<f64>,
    /// `π_θ(a|s)`, flat in `s·|A| + a` order.
    pub policy: Vec<f64>,
    /// `B_{τ,δ}Φθ`.
    pub backup: QTable,
    pub omega_star: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub theta: DVector<f64>,
    /// `‖ω*(θ) − θ‖₂` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Constants of the relaxed smoothness and value bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticConstants {
    /// `4/λ_g`.
    pub l0: f64,
    /// `L_G·|A|/τ + 2/δ`.
    pub l1: f64,
    /// `(R_max + τB)/(1−γ)`.
    pub delta0: f64,
    /// Smallest singular value of `Σ̂` at the probed `θ`.
    pub sigma_min: f64,
}

/// Both sides of the pointwise value-estimation bound at one `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationBoundReport {
    /// `(1−γ)‖Q*_τ − Φθ‖∞`.
    pub lhs: f64,
    /// `‖∇J(θ)‖/σ_min(θ) + E_approx + γ(δ₀ − K_δ(δ₀))`.
    pub rhs: f64,
    pub grad_norm: f64,
    pub sigma_min: f64,
    pub e_approx: f64,
    pub truncation_bias: f64,
    pub holds: bool,
}

impl<'a> ExactOracle<'a> {
    pub fn new(
        mdp: &'a TabularMdp,
        reg: &Regularizer,
        trunc: SmoothTruncation,
        features: &'a TabularFeatures,
        ctx: &'a ProjectionContext,
    ) -> Result<Self> {
        if features.num_states() != mdp.num_states()
            || features.num_actions() != mdp.num_actions()
            || reg.num_actions() != mdp.num_actions()
        {
            return Err(Error::InvalidArgument(
                "MDP, features and regularizer disagree on sizes".into(),
            ));
        }
        if ctx.sigma().nrows() != features.dim() {
            return Err(Error::InvalidArgument(
                "projection context dimension mismatch".into(),
            ));
        }
        let sa = mdp.num_states() * mdp.num_actions();
        let kernel = DMatrix::from_row_slice(sa, mdp.num_states(), &mdp.transitions);
        Ok(ExactOracle {
            mdp,
            reg: *reg,
            trunc,
            features,
            ctx,
            kernel,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    pub fn truncation(&self) -> SmoothTruncation {
        self.trunc
    }

    pub fn features(&self) -> &TabularFeatures {
        self.features
    }

    pub fn context(&self) -> &ProjectionContext {
        self.ctx
    }

    /// The same oracle with a different truncation.
    pub fn with_truncation(&self, trunc: SmoothTruncation) -> Self {
        ExactOracle {
            trunc,
            ..self.clone()
        }
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.features.dim() {
            return Err(Error::InvalidArgument(format!(
                "parameter has length {}, expected {}",
                theta.len(),
                self.features.dim()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "parameter has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    fn weighted(&self, values: &[f64]) -> DVector<f64> {
        let mu = self.mdp.state_action_distribution();
        DVector::from_iterator(values.len(), values.iter().zip(mu).map(|(v, m)| v * m))
    }

    pub fn evaluate(&self, theta: &DVector<f64>) -> Result<Evaluation> {
        self.check_theta(theta)?;
        let ns = self.mdp.num_states();
        let na = self.mdp.num_actions();
        let q = QTable::from_vec(ns, na, self.features.values(theta).as_slice().to_vec())?;
        let mut state_values = Vec::with_capacity(ns);
        let mut truncated_values = Vec::with_capacity(ns);
        let mut z = Vec::with_capacity(ns);
        let mut policy = Vec::with_capacity(ns * na);
        for s in 0..ns {
            let (v, p) = self.reg.conjugate(q.row(s))?;
            state_values.push(v);
            truncated_values.push(self.trunc.truncate(v));
            z.push(self.trunc.derivative(v));
            policy.extend(p);
        }
        let backup = backup_from_state_values(self.mdp, &truncated_values);
        let rhs = self.features.matrix().transpose() * self.weighted(backup.as_slice());
        let omega_star = self.ctx.solve(&rhs)?;
        Ok(Evaluation {
            theta: theta.clone(),
            q,
            state_values,
            truncated_values,
            z,
            policy,
            backup,
            omega_star,
        })
    }

    /// `ω*(θ) = Σ⁻¹ E_D[φ(s,a)(R(s,a) + γĜ_{τ,δ}(Q̂_θ(s′,·)))]`.
    pub fn omega_star(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(theta)?.omega_star)
    }

    /// `J(θ) = ½ Σ μ(s,a)·(φ(s,a)ᵀ(ω*(θ) − θ))²`.
    pub fn objective(&self, theta: &DVector<f64>) -> Result<f64> {
        let ev = self.evaluate(theta)?;
        Ok(0.5 * self.weighted_sq_residual(&(&ev.omega_star - theta)))
    }

    fn weighted_sq_residual(&self, diff: &DVector<f64>) -> f64 {
        let r = self.features.values(diff);
        r.iter()
            .zip(self.mdp.state_action_distribution())
            .map(|(x, m)| m * x * x)
            .sum()
    }

    /// `Σ̂_{τ,δ,θ} = E_D[(γ z(s′) Σ_{a′} π_θ(a′|s′) φ(s′,a′) − φ(s,a)) φ(s,a)ᵀ]`.
    pub fn sigma_hat_of(&self, ev: &Evaluation) -> DMatrix<f64> {
        let ns = self.mdp.num_states();
        let na = self.mdp.num_actions();
        let phi = self.features.matrix();
        let d = phi.ncols();
        // rows z(s′)·Σ_{a′} π(a′|s′)φ(s′,a′)
        let mut expected_next = DMatrix::zeros(ns, d);
        for s in 0..ns {
            for a in 0..na {
                let w = ev.z[s] * ev.policy[s * na + a];
                if w != 0.0 {
                    let src = phi.row(s * na + a) * w;
                    let mut row = expected_next.row_mut(s);
                    row += src;
                }
            }
        }
        let mut m = &self.kernel * expected_next * self.mdp.gamma();
        m -= phi;
        let mu = self.mdp.state_action_distribution();
        for (r, w) in mu.iter().enumerate() {
            let mut row = m.row_mut(r);
            row *= *w;
        }
        m.transpose() * phi
    }

    /// `Σ̂_{τ,δ,θ}` and its smallest singular value.
    pub fn sigma_hat(&self, theta: &DVector<f64>) -> Result<(DMatrix<f64>, f64)> {
        let ev = self.evaluate(theta)?;
        let m = self.sigma_hat_of(&ev);
        let smin = smallest_singular_value(&m);
        Ok((m, smin))
    }

    /// `∇J(θ) = Σ̂_{τ,δ,θ}(ω*(θ) − θ)`.
    pub fn grad(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let ev = self.evaluate(theta)?;
        Ok(self.sigma_hat_of(&ev) * (&ev.omega_star - theta))
    }

    /// Exact lower-level objective `g(θ,ω)`, including the variance over `s′`.
    pub fn lower_objective(&self, theta: &DVector<f64>, omega: &DVector<f64>) -> Result<f64> {
        let ev = self.evaluate(theta)?;
        let pred = self.features.values(omega);
        let mu = self.mdp.state_action_distribution();
        let gamma = self.mdp.gamma();
        let na = self.mdp.num_actions();
        let mut total = 0.0;
        for (sa, &m) in mu.iter().enumerate() {
            let (s, a) = (sa / na, sa % na);
            let inner: f64 = self
                .mdp
                .transition_row(s, a)
                .iter()
                .zip(&ev.truncated_values)
                .map(|(p, v)| {
                    let err = pred[sa] - self.mdp.reward(s, a) - gamma * v;
                    p * err * err
                })
                .sum();
            total += m * inner;
        }
        Ok(0.5 * total)
    }

    /// `∇_ω g(θ,ω) = Σω − E_D[φ(R + γĜ)]`.
    pub fn lower_grad(&self, theta: &DVector<f64>, omega: &DVector<f64>) -> Result<DVector<f64>> {
        let ev = self.evaluate(theta)?;
        let rhs = self.features.matrix().transpose() * self.weighted(ev.backup.as_slice());
        Ok(self.ctx.sigma() * omega - rhs)
    }

    /// `Σ_{s,a} μ(s,a)(φᵀθ − φᵀω*_∞(θ))²`, always with the untruncated backup.
    pub fn mspbe(&self, theta: &DVector<f64>) -> Result<f64> {
        let omega = self
            .with_truncation(SmoothTruncation::identity())
            .omega_star(theta)?;
        Ok(self.weighted_sq_residual(&(theta - omega)))
    }

    /// `π_θ(·|s) = ∇G*_τ(Q̂_θ(s,·))`.
    pub fn policy(&self, theta: &DVector<f64>, state: usize) -> Result<Vec<f64>> {
        self.reg
            .conjugate_policy(&self.features.q_values(&state, theta))
    }

    /// Damped iteration `θ ← (1−η)θ + η·ω*(θ)` from zero until
    /// `‖ω*(θ) − θ‖ ≤ tol`.
    pub fn projected_fixed_point(
        &self,
        damping: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<FixedPoint> {
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0,1], got {damping}"
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        let mut theta = DVector::zeros(self.features.dim());
        let mut history = Vec::new();
        for it in 0..=max_iter {
            let omega = self.omega_star(&theta)?;
            let residual = (&omega - &theta).norm();
            history.push(residual);
            if residual <= tol {
                return Ok(FixedPoint {
                    theta,
                    residual,
                    iterations: it,
                });
            }
            if !residual.is_finite() {
                break;
            }
            theta = &theta * (1.0 - damping) + omega * damping;
            if theta.iter().any(|x| !x.is_finite()) {
                break;
            }
        }
        let residual = history.last().copied().unwrap_or(f64::NAN);
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual,
            history,
        })
    }

    /// `‖Φω*(θ) − B_{τ,δ}Φθ‖∞` at one `θ`.
    pub fn projection_residual(&self, theta: &DVector<f64>) -> Result<f64> {
        let ev = self.evaluate(theta)?;
        let proj = self.features.values(&ev.omega_star);
        Ok(proj
            .iter()
            .zip(ev.backup.as_slice())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Lower estimate of `E_approx`: the largest projection residual over
    /// the supplied parameters. The true quantity is a supremum over all `θ`.
    pub fn approx_error_estimate(&self, thetas: &[DVector<f64>]) -> Result<f64> {
        thetas
            .iter()
            .try_fold(0.0_f64, |m, t| Ok(m.max(self.projection_residual(t)?)))
    }

    /// `γ(δ₀ − K_δ(δ₀))`, zero without truncation.
    pub fn truncation_bias(&self) -> f64 {
        let d0 = self.mdp.delta0(&self.reg);
        self.mdp.gamma() * (d0 - self.trunc.truncate(d0))
    }

    pub fn estimation_bound_check(
        &self,
        theta: &DVector<f64>,
        e_approx: f64,
        q_star: &QTable,
    ) -> Result<EstimationBoundReport> {
        let ev = self.evaluate(theta)?;
        let sh = self.sigma_hat_of(&ev);
        let sigma_min = smallest_singular_value(&sh);
        if sigma_min <= SINGULAR_VALUE_FLOOR {
            return Err(Error::SingularSurrogate { sigma_min });
        }
        let grad_norm = (sh * (&ev.omega_star - theta)).norm();
        let lhs = (1.0 - self.mdp.gamma()) * q_star.max_abs_diff(&ev.q);
        let truncation_bias = self.truncation_bias();
        let rhs = grad_norm / sigma_min + e_approx + truncation_bias;
        Ok(EstimationBoundReport {
            lhs,
            rhs,
            grad_norm,
            sigma_min,
            e_approx,
            truncation_bias,
            holds: lhs <= rhs + 1e-8,
        })
    }

    pub fn diagnostic_constants(&self, theta: &DVector<f64>) -> Result<DiagnosticConstants> {
        let (_, sigma_min) = self.sigma_hat(theta)?;
        Ok(DiagnosticConstants {
            l0: 4.0 / self.ctx.lambda_g(),
            l1: L_G * self.mdp.num_actions() as f64 / self.reg.tau() + 2.0 / self.trunc.delta(),
            delta0: self.mdp.delta0(&self.reg),
            sigma_min,
        })
    }
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

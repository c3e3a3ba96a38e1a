//! Linear-function-approximation control baselines.
//!
//! The recursions implemented here, with `δ` a TD error, `φ = φ(s,a)`,
//! `φ′_b = φ(s′,b)`, and every `s′` term dropped on terminal transitions:
//!
//! * **Q-learning**: `δ = r + γ·max_b φ′_bᵀw − φᵀw`, `w ← w + α·δ·φ`.
//! * **Double Q-learning**: a fair coin picks the estimator `A` to update
//!   (the other is `B`); `b* = argmax_b φ′_bᵀw_A`,
//!   `δ = r + γ·φ′_{b*}ᵀw_B − φᵀw_A`, `w_A ← w_A + α·δ·φ`. Acts on `½(w_A + w_B)`.
//! * **Coupled Q-learning**: fast `w`, target `θ`;
//!   `δ = r + γ·max_b φ′_bᵀθ − φᵀw`, `w ← w + α·δ·φ`,
//!   `θ ← θ + β·φφᵀ(w − θ)` with the pre-update `w`. Acts on `θ`.
//! * **Greedy-GQ**: `b* = argmax_b φ′_bᵀθ`, `δ = r + γ·φ′_{b*}ᵀθ − φᵀθ`,
//!   `θ ← θ + α·(δ·φ − γ·(φᵀw)·φ′_{b*})`, `w ← w + β·(δ − φᵀw)·φ`. Acts on `θ`.
//!
//! Ties in every max/argmax resolve to the lowest action index.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linfa::FeatureMap;
use crate::transition::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    QLearning,
    DoubleQLearning,
    CoupledQLearning,
    GreedyGq,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::QLearning => "qlearning",
            BaselineKind::DoubleQLearning => "double_ql",
            BaselineKind::CoupledQLearning => "cql",
            BaselineKind::GreedyGq => "greedy_gq",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qlearning" | "q_learning" => Ok(BaselineKind::QLearning),
            "double_ql" | "double_qlearning" => Ok(BaselineKind::DoubleQLearning),
            "cql" | "coupled_ql" | "coupled_qlearning" => Ok(BaselineKind::CoupledQLearning),
            "greedy_gq" => Ok(BaselineKind::GreedyGq),
            other => Err(Error::InvalidArgument(format!(
                "unknown baseline `{other}`"
            ))),
        }
    }
}

/// Lowest index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `1 − ε` the lowest-index argmax, otherwise uniform.
pub fn epsilon_greedy_action<R: Rng + ?Sized>(
    q_values: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub kind: BaselineKind,
    pub primary: DVector<f64>,
    /// Second estimator (Double QL), target (CQL) or correction weights (Greedy-GQ).
    pub secondary: DVector<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl BaselineState {
    pub fn new(
        kind: BaselineKind,
        dim: usize,
        alpha: f64,
        beta: f64,
        gamma: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0,1], got {epsilon}"
            )));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0,1], got {gamma}"
            )));
        }
        Ok(BaselineState {
            kind,
            primary: DVector::zeros(dim),
            secondary: DVector::zeros(dim),
            alpha,
            beta,
            gamma,
            epsilon,
        })
    }

    /// Default step sizes `α = β = 0.1`, `ε = 0.1`.
    pub fn with_defaults(kind: BaselineKind, dim: usize, gamma: f64) -> Result<Self> {
        Self::new(kind, dim, 0.1, 0.1, gamma, 0.1)
    }

    /// Action values the policy acts on.
    pub fn q_values<S, F: FeatureMap<S>>(&self, features: &F, state: &S) -> Vec<f64> {
        match self.kind {
            BaselineKind::QLearning => features.q_values(state, &self.primary),
            BaselineKind::DoubleQLearning => {
                let avg = (&self.primary + &self.secondary) * 0.5;
                features.q_values(state, &avg)
            }
            BaselineKind::CoupledQLearning => features.q_values(state, &self.secondary),
            BaselineKind::GreedyGq => features.q_values(state, &self.primary),
        }
    }

    pub fn act<S, F: FeatureMap<S>, R: Rng + ?Sized>(
        &self,
        features: &F,
        state: &S,
        rng: &mut R,
    ) -> usize {
        epsilon_greedy_action(&self.q_values(features, state), self.epsilon, rng)
    }

    pub fn greedy_action<S, F: FeatureMap<S>>(&self, features: &F, state: &S) -> usize {
        argmax(&self.q_values(features, state))
    }

    /// Applies the recursion of `self.kind`; the coin for Double QL comes from `rng`.
    pub fn update<S, F: FeatureMap<S>, R: Rng + ?Sized>(
        &mut self,
        features: &F,
        tr: &Transition<S>,
        rng: &mut R,
    ) -> Result<()> {
        match self.kind {
            BaselineKind::QLearning => self.qlearning_step(features, tr),
            BaselineKind::DoubleQLearning => {
                let first = rng.gen::<bool>();
                self.double_qlearning_step(features, tr, first)
            }
            BaselineKind::CoupledQLearning => self.coupled_qlearning_step(features, tr),
            BaselineKind::GreedyGq => self.greedy_gq_step(features, tr),
        }
        if self
            .primary
            .iter()
            .chain(self.secondary.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::Divergence { t: 0 });
        }
        Ok(())
    }

    pub fn qlearning_step<S, F: FeatureMap<S>>(&mut self, features: &F, tr: &Transition<S>) {
        let phi = features.phi(&tr.state, tr.action);
        let next = if tr.terminal {
            0.0
        } else {
            max_value(&features.q_values(&tr.next_state, &self.primary))
        };
        let td = tr.reward + self.gamma * next - phi.dot(&self.primary);
        self.primary.axpy(self.alpha * td, &phi, 1.0);
    }

    /// `update_first` selects `primary` as the estimator being updated.
    pub fn double_qlearning_step<S, F: FeatureMap<S>>(
        &mut self,
        features: &F,
        tr: &Transition<S>,
        update_first: bool,
    ) {
        let (a, b) = if update_first {
            (&mut self.primary, &self.secondary)
        } else {
            (&mut self.secondary, &self.primary)
        };
        let phi = features.phi(&tr.state, tr.action);
        let next = if tr.terminal {
            0.0
        } else {
            let best = argmax(&features.q_values(&tr.next_state, a));
            features.phi(&tr.next_state, best).dot(b)
        };
        let td = tr.reward + self.gamma * next - phi.dot(a);
        a.axpy(self.alpha * td, &phi, 1.0);
    }

    pub fn coupled_qlearning_step<S, F: FeatureMap<S>>(
        &mut self,
        features: &F,
        tr: &Transition<S>,
    ) {
        let phi = features.phi(&tr.state, tr.action);
        let next = if tr.terminal {
            0.0
        } else {
            max_value(&features.q_values(&tr.next_state, &self.secondary))
        };
        let td = tr.reward + self.gamma * next - phi.dot(&self.primary);
        let coupling = phi.dot(&self.primary) - phi.dot(&self.secondary);
        self.primary.axpy(self.alpha * td, &phi, 1.0);
        self.secondary.axpy(self.beta * coupling, &phi, 1.0);
    }

    pub fn greedy_gq_step<S, F: FeatureMap<S>>(&mut self, features: &F, tr: &Transition<S>) {
        let phi = features.phi(&tr.state, tr.action);
        let correction = phi.dot(&self.secondary);
        let mut grad = phi.clone();
        let td = if tr.terminal {
            grad *= tr.reward - phi.dot(&self.primary);
            tr.reward - phi.dot(&self.primary)
        } else {
            let best = argmax(&features.q_values(&tr.next_state, &self.primary));
            let next_phi = features.phi(&tr.next_state, best);
            let td = tr.reward + self.gamma * next_phi.dot(&self.primary) - phi.dot(&self.primary);
            grad *= td;
            grad.axpy(-self.gamma * correction, &next_phi, 1.0);
            td
        };
        self.primary.axpy(self.alpha, &grad, 1.0);
        self.secondary
            .axpy(self.beta * (td - correction), &phi, 1.0);
    }
}

fn max_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

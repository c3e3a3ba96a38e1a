//! Finite MDPs with a fixed behavior policy, regularized Bellman operators,
//! and exact oracles for the bi-level objective.

mod oracle;
mod text;

pub use oracle::{
    smallest_singular_value, DiagnosticConstants, EstimationBoundReport, Evaluation, ExactOracle,
    FixedPoint,
};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::regularizer::{Regularizer, SmoothTruncation};
use crate::transition::Transition;

const STOCHASTIC_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 1_000_000;

/// A finite discounted MDP together with its behavior policy and the
/// stationary state-action distribution that policy induces.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// `P(s′|s,a)` at `(s·|A| + a)·|S| + s′`.
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
    behavior: Vec<f64>,
    stationary: Vec<f64>,
}

fn check_stochastic(rows: &[f64], width: usize, what: &str) -> Result<()> {
    for (i, row) in rows.chunks(width).enumerate() {
        if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{what} row {i} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidArgument(format!(
                "{what} row {i} sums to {sum}"
            )));
        }
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        initial: Vec<f64>,
        behavior: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidArgument("empty state or action space".into()));
        }
        let sa = num_states * num_actions;
        if transitions.len() != sa * num_states
            || rewards.len() != sa
            || initial.len() != num_states
            || behavior.len() != sa
        {
            return Err(Error::InvalidArgument(
                "MDP array sizes do not match |S| and |A|".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0,1), got {gamma}"
            )));
        }
        ensure_finite(&rewards, "reward table")?;
        check_stochastic(&transitions, num_states, "transition")?;
        check_stochastic(&initial, num_states, "initial distribution")?;
        check_stochastic(&behavior, num_actions, "behavior policy")?;
        if behavior.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidArgument(
                "behavior policy must be positive everywhere".into(),
            ));
        }
        let mut mdp = TabularMdp {
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
            initial,
            behavior,
            stationary: Vec::new(),
        };
        mdp.stationary = mdp.compute_stationary()?;
        Ok(mdp)
    }

    /// Uniform initial distribution and uniform behavior policy.
    pub fn with_uniform_behavior(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let initial = vec![1.0 / num_states.max(1) as f64; num_states];
        let behavior = vec![1.0 / num_actions.max(1) as f64; num_states * num_actions];
        Self::new(
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
            initial,
            behavior,
        )
    }

    /// Dense random MDP: every transition row and behavior row is a normalized
    /// vector of exponential draws, rewards uniform in `[−r_max, r_max]`.
    pub fn random<R: Rng>(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        r_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut simplex_row = |n: usize| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3)
                .collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let sa = num_states * num_actions;
        let transitions: Vec<f64> = (0..sa).flat_map(|_| simplex_row(num_states)).collect();
        let behavior: Vec<f64> = (0..num_states)
            .flat_map(|_| simplex_row(num_actions))
            .collect();
        let initial = vec![1.0 / num_states as f64; num_states];
        let rewards = (0..sa)
            .map(|_| r_max * (2.0 * rng.gen::<f64>() - 1.0))
            .collect();
        Self::new(
            num_states,
            num_actions,
            transitions,
            rewards,
            gamma,
            initial,
            behavior,
        )
    }

    /// Power iteration on the lazy chain `½(I + K)`, which shares the
    /// stationary distribution of `K` and converges even for periodic `K`.
    fn compute_stationary(&self) -> Result<Vec<f64>> {
        let ns = self.num_states;
        let kernel = self.state_kernel();
        let mut nu = vec![1.0 / ns as f64; ns];
        let mut next = vec![0.0; ns];
        let mut residual = f64::INFINITY;
        for _ in 0..STATIONARY_MAX_ITER {
            next.iter_mut().for_each(|x| *x = 0.0);
            for s in 0..ns {
                for (sp, k) in kernel[s * ns..(s + 1) * ns].iter().enumerate() {
                    next[sp] += nu[s] * k;
                }
            }
            residual = nu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            for (x, y) in nu.iter_mut().zip(&next) {
                *x = 0.5 * (*x + y);
            }
            let total: f64 = nu.iter().sum();
            nu.iter_mut().for_each(|x| *x /= total);
            if residual <= STATIONARY_TOL {
                break;
            }
        }
        if residual > STATIONARY_TOL {
            return Err(Error::NonConvergence {
                iterations: STATIONARY_MAX_ITER,
                residual,
                history: vec![residual],
            });
        }
        let mut mu = vec![0.0; ns * self.num_actions];
        for s in 0..ns {
            for a in 0..self.num_actions {
                mu[s * self.num_actions + a] = nu[s] * self.behavior_prob(s, a);
            }
        }
        Ok(mu)
    }

    /// `K(s, s′) = Σ_a π_bhv(a|s)·P(s′|s,a)`, row-major.
    pub fn state_kernel(&self) -> Vec<f64> {
        let ns = self.num_states;
        let mut k = vec![0.0; ns * ns];
        for s in 0..ns {
            for a in 0..self.num_actions {
                let w = self.behavior_prob(s, a);
                for (sp, p) in self.transition_row(s, a).iter().enumerate() {
                    k[s * ns + sp] += w * p;
                }
            }
        }
        k
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same dynamics with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0,1), got {gamma}"
            )));
        }
        Ok(TabularMdp {
            gamma,
            ..self.clone()
        })
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn r_max(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn behavior_prob(&self, s: usize, a: usize) -> f64 {
        self.behavior[s * self.num_actions + a]
    }

    /// `μ_bhv(s,a)`, flat in `s·|A| + a` order.
    pub fn state_action_distribution(&self) -> &[f64] {
        &self.stationary
    }

    /// `δ₀ = (R_max + τB)/(1−γ)`, a bound on every regularized state value.
    pub fn delta0(&self, reg: &Regularizer) -> f64 {
        (self.r_max() + reg.tau() * reg.bound()) / (1.0 - self.gamma)
    }

    /// Markovian `(s, a, s′)` samples under the behavior policy starting
    /// from `s₀ ∼ μ₀`.
    pub fn stream(&self, seed: u64) -> BehaviorStream<'_> {
        BehaviorStream::new(self, seed)
    }
}

/// An `|S| × |A|` table of action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_vec(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::InvalidArgument("Q-table size mismatch".into()));
        }
        ensure_finite(&values, "Q-table")?;
        Ok(QTable {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// `V(s) = G*_τ(Q(s,·))`.
    pub fn state_values(&self, reg: &Regularizer) -> Result<Vec<f64>> {
        (0..self.num_states)
            .map(|s| reg.conjugate_value(self.row(s)))
            .collect()
    }
}

/// `(B_{τ,δ}q)(s,a) = R(s,a) + γ·Σ_{s′} P(s′|s,a)·K_δ(G*_τ(q(s′,·)))`.
pub fn bellman_backup(
    mdp: &TabularMdp,
    reg: &Regularizer,
    tr: &SmoothTruncation,
    q: &QTable,
) -> Result<QTable> {
    if q.num_states != mdp.num_states || q.num_actions != mdp.num_actions {
        return Err(Error::InvalidArgument(
            "Q-table shape does not match the MDP".into(),
        ));
    }
    let next_values: Vec<f64> = (0..mdp.num_states)
        .map(|s| Ok(tr.truncate(reg.conjugate_value(q.row(s))?)))
        .collect::<Result<_>>()?;
    Ok(backup_from_state_values(mdp, &next_values))
}

pub(crate) fn backup_from_state_values(mdp: &TabularMdp, next_values: &[f64]) -> QTable {
    let mut out = QTable::zeros(mdp.num_states, mdp.num_actions);
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let ev: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(next_values)
                .map(|(p, v)| p * v)
                .sum();
            out.values[s * mdp.num_actions + a] = mdp.reward(s, a) + mdp.gamma * ev;
        }
    }
    out
}

/// Value iteration for `Q*_τ` from the zero table. On success the returned
/// table satisfies `‖Q − B_τQ‖∞ ≤ tol·(1−γ)`.
pub fn regularized_value_iteration(
    mdp: &TabularMdp,
    reg: &Regularizer,
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    Ok(value_iteration_trace(mdp, reg, tol, max_iter)?.0)
}

/// Same as [`regularized_value_iteration`], also returning the sup-norm
/// change of every sweep.
pub fn value_iteration_trace(
    mdp: &TabularMdp,
    reg: &Regularizer,
    tol: f64,
    max_iter: usize,
) -> Result<(QTable, Vec<f64>)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let identity = SmoothTruncation::identity();
    let threshold = if mdp.gamma > 0.0 {
        tol * (1.0 - mdp.gamma) / mdp.gamma
    } else {
        f64::INFINITY
    };
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let next = bellman_backup(mdp, reg, &identity, &q)?;
        let change = next.max_abs_diff(&q);
        history.push(change);
        q = next;
        if change <= threshold {
            return Ok((q, history));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Infinite iterator over behavior-policy transitions of a [`TabularMdp`].
#[derive(Debug, Clone)]
pub struct BehaviorStream<'a> {
    mdp: &'a TabularMdp,
    rng: ChaCha8Rng,
    state: usize,
    actions: Vec<WeightedIndex<f64>>,
    next_states: Vec<WeightedIndex<f64>>,
}

impl<'a> BehaviorStream<'a> {
    fn new(mdp: &'a TabularMdp, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions: Vec<_> = (0..mdp.num_states)
            .map(|s| {
                WeightedIndex::new(&mdp.behavior[s * mdp.num_actions..(s + 1) * mdp.num_actions])
                    .unwrap()
            })
            .collect();
        let next_states: Vec<_> = (0..mdp.num_states * mdp.num_actions)
            .map(|i| {
                WeightedIndex::new(&mdp.transitions[i * mdp.num_states..(i + 1) * mdp.num_states])
                    .unwrap()
            })
            .collect();
        let state = WeightedIndex::new(&mdp.initial).unwrap().sample(&mut rng);
        BehaviorStream {
            mdp,
            rng,
            state,
            actions,
            next_states,
        }
    }
}

impl Iterator for BehaviorStream<'_> {
    type Item = Transition<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        let s = self.state;
        let a = self.actions[s].sample(&mut self.rng);
        let sp = self.next_states[s * self.mdp.num_actions + a].sample(&mut self.rng);
        self.state = sp;
        Some(Transition {
            state: s,
            action: a,
            reward: self.mdp.reward(s, a),
            next_state: sp,
            terminal: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridWorld;

    fn random_mdp(seed: u64) -> TabularMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TabularMdp::random(6, 3, 0.9, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn stationary_distribution_is_invariant() {
        for seed in 0..5 {
            let mdp = random_mdp(seed);
            let mu = mdp.state_action_distribution();
            assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let k = mdp.state_kernel();
            let ns = mdp.num_states();
            let nu: Vec<f64> = (0..ns)
                .map(|s| (0..3).map(|a| mu[s * 3 + a]).sum())
                .collect();
            for sp in 0..ns {
                let pushed: f64 = (0..ns).map(|s| nu[s] * k[s * ns + sp]).sum();
                assert!((pushed - nu[sp]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn periodic_chain_still_has_a_stationary_distribution() {
        // two states that swap deterministically
        let p = vec![0.0, 1.0, 1.0, 0.0];
        let mdp = TabularMdp::with_uniform_behavior(2, 1, p, vec![0.0, 1.0], 0.5).unwrap();
        assert!((mdp.state_action_distribution()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_models() {
        let bad_row = vec![0.5, 0.4, 1.0, 0.0];
        assert!(TabularMdp::with_uniform_behavior(2, 1, bad_row, vec![0.0; 2], 0.9).is_err());
        let p = vec![1.0, 0.0, 0.0, 1.0];
        assert!(TabularMdp::with_uniform_behavior(2, 1, p.clone(), vec![0.0; 2], 1.0).is_err());
        assert!(
            TabularMdp::new(2, 1, p, vec![0.0; 2], 0.9, vec![0.5, 0.5], vec![1.0, 0.0]).is_err()
        );
    }

    #[test]
    fn zero_discount_backup_is_the_reward() {
        let mdp = random_mdp(3).with_gamma(0.0).unwrap();
        let reg = Regularizer::shannon(1.0, 3).unwrap();
        let q = QTable::from_vec(6, 3, (0..18).map(|i| i as f64 * 0.37 - 2.0).collect()).unwrap();
        let b = bellman_backup(&mdp, &reg, &SmoothTruncation::new(2.0).unwrap(), &q).unwrap();
        assert_eq!(b.as_slice(), mdp.rewards());
    }

    #[test]
    fn constant_table_backup_without_reward() {
        let mdp = random_mdp(4);
        let zero_r = TabularMdp::new(
            6,
            3,
            mdp.transitions.clone(),
            vec![0.0; 18],
            0.9,
            mdp.initial.clone(),
            mdp.behavior.clone(),
        )
        .unwrap();
        let reg = Regularizer::shannon(0.5, 3).unwrap();
        let c = 1.7;
        let b = bellman_backup(
            &zero_r,
            &reg,
            &SmoothTruncation::identity(),
            &QTable::from_vec(6, 3, vec![c; 18]).unwrap(),
        )
        .unwrap();
        let expected = 0.9 * (c + 0.5 * 3f64.ln());
        assert!(b.as_slice().iter().all(|v| (v - expected).abs() < 1e-14));
    }

    #[test]
    fn value_iteration_symmetric_fixed_point() {
        let mdp = random_mdp(5);
        let zero_r =
            TabularMdp::with_uniform_behavior(6, 3, mdp.transitions.clone(), vec![0.0; 18], 0.9)
                .unwrap();
        let tau = 0.8;
        let reg = Regularizer::shannon(tau, 3).unwrap();
        let q = regularized_value_iteration(&zero_r, &reg, 1e-12, 10_000).unwrap();
        let expected = 0.9 * tau * 3f64.ln() / 0.1;
        assert!(q.as_slice().iter().all(|v| (v - expected).abs() < 1e-10));
    }

    #[test]
    fn value_iteration_residual_and_bounds() {
        for reg in [
            Regularizer::shannon(1.0, 3).unwrap(),
            Regularizer::tsallis(0.5, 3).unwrap(),
        ] {
            let mdp = random_mdp(6);
            let tol = 1e-10;
            let (q, history) = value_iteration_trace(&mdp, &reg, tol, 10_000).unwrap();
            let bq = bellman_backup(&mdp, &reg, &SmoothTruncation::identity(), &q).unwrap();
            assert!(bq.max_abs_diff(&q) <= tol * (1.0 - mdp.gamma()));
            // the sweep-to-sweep change contracts by at least γ
            for w in history.windows(2).skip(1) {
                assert!(w[1] <= mdp.gamma() * w[0] + 1e-12, "{} > γ·{}", w[1], w[0]);
            }
            let v = q.state_values(&reg).unwrap();
            let bound = mdp.delta0(&reg);
            assert!(v.iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn value_iteration_reports_non_convergence() {
        let mdp = random_mdp(7);
        let reg = Regularizer::shannon(1.0, 3).unwrap();
        match regularized_value_iteration(&mdp, &reg, 1e-12, 3) {
            Err(Error::NonConvergence {
                iterations,
                history,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn stream_is_deterministic_and_follows_dynamics() {
        let mdp = GridWorld::default().to_mdp().unwrap();
        let a: Vec<_> = mdp.stream(11).take(500).collect();
        let b: Vec<_> = mdp.stream(11).take(500).collect();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
            assert!(mdp.transition_row(w[0].state, w[0].action)[w[0].next_state] > 0.0);
        }
    }
}

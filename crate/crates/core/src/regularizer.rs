//! Strongly convex policy regularizers on the probability simplex, their
//! convex conjugates, and the smooth truncation `K_δ(x) = δ·tanh(x/δ)`.
//!
//! Two regularizers are supported:
//!
//! * `Shannon`: negative entropy `G(p) = Σ p log p`, conjugate
//!   `τ·logsumexp(q/τ)`, conjugate gradient `softmax(q/τ)`.
//! * `Tsallis`: `G(p) = ½(‖p‖² − 1)`, conjugate gradient is the Euclidean
//!   projection of `q/τ` onto the simplex (sparsemax).

use crate::error::{ensure_finite, Error, Result};

/// Lipschitz constant of the conjugate gradient used in diagnostic bounds.
pub const L_G: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    Shannon,
    Tsallis,
}

impl std::str::FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shannon" | "entropy" => Ok(RegularizerKind::Shannon),
            "tsallis" => Ok(RegularizerKind::Tsallis),
            other => Err(Error::InvalidArgument(format!(
                "unknown regularizer `{other}`"
            ))),
        }
    }
}

/// A scaled regularizer `G_τ = τ·G` over an action set of fixed size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    kind: RegularizerKind,
    tau: f64,
    num_actions: usize,
}

impl Regularizer {
    pub fn new(kind: RegularizerKind, tau: f64, num_actions: usize) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        if num_actions == 0 {
            return Err(Error::InvalidArgument("action set is empty".into()));
        }
        Ok(Regularizer {
            kind,
            tau,
            num_actions,
        })
    }

    pub fn shannon(tau: f64, num_actions: usize) -> Result<Self> {
        Self::new(RegularizerKind::Shannon, tau, num_actions)
    }

    pub fn tsallis(tau: f64, num_actions: usize) -> Result<Self> {
        Self::new(RegularizerKind::Tsallis, tau, num_actions)
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Tight bound `B` with `|G(p)| ≤ B` on the simplex.
    pub fn bound(&self) -> f64 {
        let n = self.num_actions as f64;
        match self.kind {
            RegularizerKind::Shannon => n.ln(),
            RegularizerKind::Tsallis => 0.5 * (1.0 - 1.0 / n),
        }
    }

    /// Unscaled `G(p)`.
    pub fn penalty(&self, p: &[f64]) -> f64 {
        match self.kind {
            RegularizerKind::Shannon => p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum(),
            RegularizerKind::Tsallis => 0.5 * (p.iter().map(|x| x * x).sum::<f64>() - 1.0),
        }
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.is_empty() {
            return Err(Error::InvalidArgument("empty action-value vector".into()));
        }
        ensure_finite(q, "action-value vector")
    }

    /// `G*_τ(q) = max_{p ∈ Δ} ⟨p, q⟩ − τ G(p)`.
    pub fn conjugate_value(&self, q: &[f64]) -> Result<f64> {
        self.check(q)?;
        Ok(match self.kind {
            RegularizerKind::Shannon => log_sum_exp_scaled(q, self.tau),
            RegularizerKind::Tsallis => {
                let p = self.tsallis_argmax(q);
                self.tsallis_value_at(q, &p)
            }
        })
    }

    /// `∇G*_τ(q)`, the maximizing distribution.
    pub fn conjugate_policy(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check(q)?;
        Ok(match self.kind {
            RegularizerKind::Shannon => softmax_scaled(q, self.tau),
            RegularizerKind::Tsallis => self.tsallis_argmax(q),
        })
    }

    /// Value and gradient together; cheaper than two calls for Tsallis.
    pub fn conjugate(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(q)?;
        Ok(match self.kind {
            RegularizerKind::Shannon => {
                let p = softmax_scaled(q, self.tau);
                (log_sum_exp_scaled(q, self.tau), p)
            }
            RegularizerKind::Tsallis => {
                let p = self.tsallis_argmax(q);
                (self.tsallis_value_at(q, &p), p)
            }
        })
    }

    fn tsallis_argmax(&self, q: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = q.iter().map(|x| x / self.tau).collect();
        project_to_simplex(&scaled)
    }

    fn tsallis_value_at(&self, q: &[f64], p: &[f64]) -> f64 {
        let inner: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
        inner - self.tau * self.penalty(p)
    }
}

/// `τ·log Σ exp(q_i/τ)` with max subtraction.
pub fn log_sum_exp_scaled(q: &[f64], tau: f64) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = q.iter().map(|x| ((x - m) / tau).exp()).sum();
    m + tau * s.ln()
}

pub fn softmax_scaled(q: &[f64], tau: f64) -> Vec<f64> {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = q.iter().map(|x| ((x - m) / tau).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Euclidean projection onto the probability simplex, sort-based, `O(n log n)`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut threshold = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            threshold = candidate;
        }
    }
    v.iter().map(|x| (x - threshold).max(0.0)).collect()
}

/// Smooth truncation `K_δ(x) = δ·tanh(x/δ)`; `δ = +∞` is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothTruncation {
    delta: f64,
}

impl SmoothTruncation {
    pub fn new(delta: f64) -> Result<Self> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "delta must be positive, got {delta}"
            )));
        }
        Ok(SmoothTruncation { delta })
    }

    pub fn identity() -> Self {
        SmoothTruncation {
            delta: f64::INFINITY,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_identity(&self) -> bool {
        self.delta.is_infinite()
    }

    pub fn truncate(&self, x: f64) -> f64 {
        if self.is_identity() {
            x
        } else {
            self.delta * (x / self.delta).tanh()
        }
    }

    /// `1 − (K_δ(x)/δ)²`.
    pub fn derivative(&self, x: f64) -> f64 {
        if self.is_identity() {
            1.0
        } else {
            let t = (x / self.delta).tanh();
            1.0 - t * t
        }
    }

    /// `|x − K_δ(x)|`.
    pub fn gap(&self, x: f64) -> f64 {
        (x - self.truncate(x)).abs()
    }
}

/// `Ĝ_{τ,δ}(q) = K_δ(G*_τ(q))`.
pub fn truncated_conjugate(reg: &Regularizer, tr: &SmoothTruncation, q: &[f64]) -> Result<f64> {
    Ok(tr.truncate(reg.conjugate_value(q)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Brute-force maximization of ⟨p,q⟩ − τG(p) over a grid on the 1-simplex.
    fn brute_conjugate_2(reg: &Regularizer, q: [f64; 2]) -> f64 {
        (0..=100_000)
            .map(|i| {
                let p0 = i as f64 / 100_000.0;
                let p = [p0, 1.0 - p0];
                p[0] * q[0] + p[1] * q[1] - reg.tau() * reg.penalty(&p)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn shannon_conjugate_examples() {
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        assert!(close(
            reg.conjugate_value(&[0.0; 5]).unwrap(),
            5f64.ln(),
            1e-14
        ));

        let reg2 = Regularizer::shannon(1.0, 2).unwrap();
        let direct = (1f64.exp() + 1.0).ln();
        let v = reg2.conjugate_value(&[1.0, 0.0]).unwrap();
        assert!(close(v, direct, 1e-14));
        assert!(close(v, 1.31326, 1e-5));
        assert!(close(v, brute_conjugate_2(&reg2, [1.0, 0.0]), 1e-6));
    }

    #[test]
    fn tsallis_conjugate_example() {
        let reg = Regularizer::tsallis(1.0, 2).unwrap();
        let v = reg.conjugate_value(&[1.0, 0.0]).unwrap();
        assert!(close(v, 1.0, 1e-14));
        assert!(close(v, brute_conjugate_2(&reg, [1.0, 0.0]), 1e-9));
        let reg = Regularizer::tsallis(0.7, 2).unwrap();
        let q = [0.2, -0.1];
        assert!(close(
            reg.conjugate_value(&q).unwrap(),
            brute_conjugate_2(&reg, q),
            1e-8
        ));
    }

    #[test]
    fn policy_examples() {
        for reg in [
            Regularizer::shannon(0.3, 4).unwrap(),
            Regularizer::tsallis(0.3, 4).unwrap(),
        ] {
            let p = reg.conjugate_policy(&[2.5; 4]).unwrap();
            assert!(p.iter().all(|&x| close(x, 0.25, 1e-15)));
        }
        let p = Regularizer::shannon(1.0, 2)
            .unwrap()
            .conjugate_policy(&[1.0, 0.0])
            .unwrap();
        let e = 1f64.exp();
        assert!(close(p[0], e / (e + 1.0), 1e-15) && close(p[1], 1.0 / (e + 1.0), 1e-15));
        assert!(close(p[0], 0.73106, 1e-5));

        let p = Regularizer::tsallis(0.5, 2)
            .unwrap()
            .conjugate_policy(&[1.0, 0.0])
            .unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn invalid_inputs() {
        let reg = Regularizer::shannon(1.0, 3).unwrap();
        assert!(matches!(
            reg.conjugate_value(&[]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            reg.conjugate_value(&[0.0, f64::NAN]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            reg.conjugate_policy(&[f64::INFINITY]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Regularizer::shannon(0.0, 3).is_err());
        assert!(Regularizer::tsallis(1.0, 0).is_err());
        assert!(SmoothTruncation::new(0.0).is_err());
        assert!(SmoothTruncation::new(-1.0).is_err());
        assert!(SmoothTruncation::new(f64::INFINITY).unwrap().is_identity());
    }

    #[test]
    fn shannon_is_stable_at_small_tau() {
        let reg = Regularizer::shannon(1e-4, 3).unwrap();
        let v = reg.conjugate_value(&[1000.0, 999.0, -5.0]).unwrap();
        assert!(v.is_finite() && close(v, 1000.0, 1e-9));
    }

    #[test]
    fn bounds_on_sampled_simplex_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..7 {
            for reg in [
                Regularizer::shannon(1.0, n).unwrap(),
                Regularizer::tsallis(1.0, n).unwrap(),
            ] {
                for _ in 0..500 {
                    let mut p: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().ln()).collect();
                    let s: f64 = p.iter().sum();
                    p.iter_mut().for_each(|x| *x /= s);
                    assert!(reg.penalty(&p).abs() <= reg.bound() + 1e-12);
                }
                // the bound is attained at the uniform distribution
                let uniform = vec![1.0 / n as f64; n];
                assert!(close(reg.penalty(&uniform).abs(), reg.bound(), 1e-12));
            }
        }
    }

    #[test]
    fn truncation_examples() {
        let one = SmoothTruncation::new(1.0).unwrap();
        assert_eq!(one.truncate(0.0), 0.0);
        assert!(close(one.truncate(1.0), 1f64.tanh(), 1e-15));
        assert!(close(one.truncate(1.0), 0.76159, 1e-5));
        assert_eq!(one.derivative(0.0), 1.0);
        assert!(one.derivative(10.0) < 1e-8);
        assert!(one.derivative(10.0) > 0.0);

        let two = SmoothTruncation::new(2.0).unwrap();
        let h = 1e-5;
        let fd = (two.truncate(1.0 + h) - two.truncate(1.0 - h)) / (2.0 * h);
        assert!(close(two.derivative(1.0), fd, 1e-8));

        let id = SmoothTruncation::identity();
        assert_eq!(id.truncate(123.5), 123.5);
        assert_eq!(id.derivative(-7.0), 1.0);
        let three = SmoothTruncation::new(3.0).unwrap();
        assert!(three.truncate(30.0) < 3.0);
        // tanh saturates in floating point
        assert_eq!(three.truncate(1e6), 3.0);
    }

    #[test]
    fn truncated_conjugate_examples() {
        let reg = Regularizer::shannon(1.0, 5).unwrap();
        let q = [0.0; 5];
        let id = SmoothTruncation::identity();
        assert_eq!(
            truncated_conjugate(&reg, &id, &q).unwrap(),
            reg.conjugate_value(&q).unwrap()
        );
        let one = SmoothTruncation::new(1.0).unwrap();
        let v = truncated_conjugate(&reg, &one, &q).unwrap();
        assert!(close(v, 5f64.ln().tanh(), 1e-15));
        // tanh(ln 5) = (25 − 1)/(25 + 1)
        assert!(close(v, 12.0 / 13.0, 1e-15));
    }

    #[test]
    fn projection_matches_sparsemax_definition() {
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|&x| close(x, 1.0 / 3.0, 1e-15)));
        let p = project_to_simplex(&[0.3, 0.1, -2.0]);
        assert!(close(p[0], 0.6, 1e-15) && close(p[1], 0.4, 1e-15) && p[2] == 0.0);
    }
}

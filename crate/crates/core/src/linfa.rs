//! Linear function approximation: feature maps with `‖φ(s,a)‖₂ ≤ 1`, the
//! behavior second-moment matrix `Σ = E_D[φφᵀ]` and its eigenvalue floor.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Eigenvalues at or below this are treated as singular.
pub const SINGULAR_EIGENVALUE: f64 = 1e-12;

/// Default floor on `λ_g` for contexts estimated from samples.
pub const DEFAULT_LAMBDA_FLOOR: f64 = 1e-3;

/// A state-action feature map into `R^d`.
pub trait FeatureMap<S: ?Sized> {
    fn dim(&self) -> usize;

    fn num_actions(&self) -> usize;

    fn phi(&self, state: &S, action: usize) -> DVector<f64>;

    /// `[φ(s,a₁), …, φ(s,a_|A|)]`.
    fn state_features(&self, state: &S) -> Vec<DVector<f64>> {
        (0..self.num_actions())
            .map(|a| self.phi(state, a))
            .collect()
    }

    /// `Q̂_θ(s,·) = φ(s,·)ᵀθ`.
    fn q_values(&self, state: &S, theta: &DVector<f64>) -> Vec<f64> {
        (0..self.num_actions())
            .map(|a| self.phi(state, a).dot(theta))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    OneHot,
    GridPoly,
    Rbf,
    Custom,
}

/// Features over a finite state space, stored as the dense `|S||A| × d`
/// matrix `Φ` with row `s·|A| + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularFeatures {
    kind: FeatureKind,
    num_states: usize,
    num_actions: usize,
    matrix: DMatrix<f64>,
}

impl TabularFeatures {
    pub fn one_hot(num_states: usize, num_actions: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidArgument("empty state or action space".into()));
        }
        let n = num_states * num_actions;
        Ok(TabularFeatures {
            kind: FeatureKind::OneHot,
            num_states,
            num_actions,
            matrix: DMatrix::identity(n, n),
        })
    }

    /// Per-action blocks of `(1, x, y, x², y², xy)` over normalized cell
    /// coordinates. State `s` is the cell at row `s / width`, column
    /// `s % width`; `x` is the column and `y` the row, both scaled to `[0,1]`.
    /// The whole map is scaled so that the largest `‖φ(s,a)‖₂` equals 1.
    pub fn grid_poly(width: usize, height: usize, num_actions: usize) -> Result<Self> {
        if width == 0 || height == 0 || num_actions == 0 {
            return Err(Error::InvalidArgument(
                "grid dimensions must be positive".into(),
            ));
        }
        let num_states = width * height;
        let d = 6 * num_actions;
        let coord = |i: usize, n: usize| {
            if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            }
        };
        let mut matrix = DMatrix::zeros(num_states * num_actions, d);
        for s in 0..num_states {
            let x = coord(s % width, width);
            let y = coord(s / width, height);
            let block = [1.0, x, y, x * x, y * y, x * y];
            for a in 0..num_actions {
                for (k, v) in block.iter().enumerate() {
                    matrix[(s * num_actions + a, 6 * a + k)] = *v;
                }
            }
        }
        let max_norm = matrix.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        matrix /= max_norm;
        Ok(TabularFeatures {
            kind: FeatureKind::GridPoly,
            num_states,
            num_actions,
            matrix,
        })
    }

    /// Arbitrary features; each row is divided by `max(1, ‖row‖₂)`.
    pub fn from_matrix(
        num_states: usize,
        num_actions: usize,
        mut matrix: DMatrix<f64>,
    ) -> Result<Self> {
        if matrix.nrows() != num_states * num_actions || matrix.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature matrix is {}x{}, expected {} rows",
                matrix.nrows(),
                matrix.ncols(),
                num_states * num_actions
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature matrix has non-finite entries".into(),
            ));
        }
        for mut row in matrix.row_iter_mut() {
            let n = row.norm();
            if n > 1.0 {
                row /= n;
            }
        }
        Ok(TabularFeatures {
            kind: FeatureKind::Custom,
            num_states,
            num_actions,
            matrix,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// The dense `Φ`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `Φθ` as a flat `|S||A|` vector.
    pub fn values(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.matrix * theta
    }
}

impl FeatureMap<usize> for TabularFeatures {
    fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn phi(&self, state: &usize, action: usize) -> DVector<f64> {
        self.matrix
            .row(state * self.num_actions + action)
            .transpose()
    }

    fn q_values(&self, state: &usize, theta: &DVector<f64>) -> Vec<f64> {
        let start = state * self.num_actions;
        (start..start + self.num_actions)
            .map(|r| self.matrix.row(r).dot(&theta.transpose()))
            .collect()
    }
}

/// Gaussian radial basis features on a box-bounded continuous state space.
///
/// States are rescaled to `[0,1]^k` before evaluation. Kernel `k` gives
/// `exp(−‖s̃ − c_k‖² / (2·width²))`; the `l` kernel activations are
/// replicated into one block per action, so `d = l·|A|`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfFeatures {
    centers: Vec<Vec<f64>>,
    width: f64,
    num_actions: usize,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl RbfFeatures {
    pub fn new(
        num_kernels: usize,
        width: f64,
        num_actions: usize,
        low: &[f64],
        high: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if num_kernels == 0 {
            return Err(Error::InvalidArgument(
                "at least one kernel is required".into(),
            ));
        }
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel width must be positive, got {width}"
            )));
        }
        if num_actions == 0 || low.is_empty() || low.len() != high.len() {
            return Err(Error::InvalidArgument(
                "malformed state box or action count".into(),
            ));
        }
        if low.iter().zip(high).any(|(l, h)| !(h > l)) {
            return Err(Error::InvalidArgument("state box has an empty side".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..num_kernels)
            .map(|_| (0..low.len()).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Ok(RbfFeatures {
            centers,
            width,
            num_actions,
            low: low.to_vec(),
            high: high.to_vec(),
        })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn num_kernels(&self) -> usize {
        self.centers.len()
    }

    /// Raw kernel activations before per-action replication and normalization.
    pub fn activations(&self, state: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = state
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(x, (l, h))| (x - l) / (h - l))
            .collect();
        let denom = 2.0 * self.width * self.width;
        self.centers
            .iter()
            .map(|c| {
                let sq: f64 = c
                    .iter()
                    .zip(&scaled)
                    .map(|(ci, si)| (si - ci).powi(2))
                    .sum();
                (-sq / denom).exp()
            })
            .collect()
    }
}

impl FeatureMap<[f64]> for RbfFeatures {
    fn dim(&self) -> usize {
        self.centers.len() * self.num_actions
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn phi(&self, state: &[f64], action: usize) -> DVector<f64> {
        let act = self.activations(state);
        let norm = act.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        let l = act.len();
        let mut out = DVector::zeros(self.centers.len() * self.num_actions);
        for (k, v) in act.iter().enumerate() {
            out[action * l + k] = v / norm;
        }
        out
    }

    fn state_features(&self, state: &[f64]) -> Vec<DVector<f64>> {
        let act = self.activations(state);
        let norm = act.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        let l = act.len();
        (0..self.num_actions)
            .map(|a| {
                let mut out = DVector::zeros(self.centers.len() * self.num_actions);
                for (k, v) in act.iter().enumerate() {
                    out[a * l + k] = v / norm;
                }
                out
            })
            .collect()
    }
}

impl FeatureMap<[f64; 2]> for RbfFeatures {
    fn dim(&self) -> usize {
        FeatureMap::<[f64]>::dim(self)
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn phi(&self, state: &[f64; 2], action: usize) -> DVector<f64> {
        FeatureMap::<[f64]>::phi(self, &state[..], action)
    }

    fn state_features(&self, state: &[f64; 2]) -> Vec<DVector<f64>> {
        FeatureMap::<[f64]>::state_features(self, &state[..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSource {
    Exact,
    Estimated { samples: usize },
}

/// `Σ`, its eigenvalue floor `λ_g`, and a factorization for solves against `Σ`.
#[derive(Debug, Clone)]
pub struct ProjectionContext {
    sigma: DMatrix<f64>,
    lambda_g: f64,
    source: SigmaSource,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl ProjectionContext {
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn lambda_g(&self) -> f64 {
        self.lambda_g
    }

    pub fn source(&self) -> SigmaSource {
        self.source
    }

    /// `Σ⁻¹ b`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.chol {
            Some(c) => Ok(c.solve(rhs)),
            None => Err(Error::DegenerateFeatures {
                min_eigenvalue: min_eigenvalue(&self.sigma),
            }),
        }
    }

    /// Radius `(R_max + γδ)/λ_g` of the ball containing every `ω*(θ)`.
    pub fn projection_radius(&self, r_max: f64, gamma: f64, delta: f64) -> f64 {
        (r_max + gamma * delta) / self.lambda_g
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// `Σ = Σ_{s,a} μ_bhv(s,a)·φφᵀ` with the exact smallest eigenvalue as `λ_g`.
pub fn exact_sigma(features: &TabularFeatures, mdp: &TabularMdp) -> Result<ProjectionContext> {
    if features.num_states() != mdp.num_states() || features.num_actions() != mdp.num_actions() {
        return Err(Error::InvalidArgument(
            "features and MDP disagree on |S| or |A|".into(),
        ));
    }
    let phi = features.matrix();
    let weights = DVector::from_column_slice(mdp.state_action_distribution());
    let weighted = DMatrix::from_fn(phi.nrows(), phi.ncols(), |r, c| phi[(r, c)] * weights[r]);
    let mut sigma = phi.transpose() * weighted;
    symmetrize(&mut sigma);
    let lambda = min_eigenvalue(&sigma);
    if lambda <= SINGULAR_EIGENVALUE {
        return Err(Error::DegenerateFeatures {
            min_eigenvalue: lambda,
        });
    }
    let chol = Cholesky::new(sigma.clone());
    if chol.is_none() {
        return Err(Error::DegenerateFeatures {
            min_eigenvalue: lambda,
        });
    }
    Ok(ProjectionContext {
        sigma,
        lambda_g: lambda,
        source: SigmaSource::Exact,
        chol,
    })
}

/// Empirical `Σ` over `n` sampled state-action pairs, `λ_g = max(λ_min, floor)`.
pub fn estimate_sigma<S, F, I, B>(
    features: &F,
    samples: I,
    n: usize,
    floor: f64,
) -> Result<ProjectionContext>
where
    S: ?Sized,
    F: FeatureMap<S>,
    I: IntoIterator<Item = (B, usize)>,
    B: std::borrow::Borrow<S>,
{
    let d = features.dim();
    if n < d {
        return Err(Error::InsufficientSamples { needed: d, got: n });
    }
    let mut sigma = DMatrix::zeros(d, d);
    let mut count = 0usize;
    for (s, a) in samples.into_iter().take(n) {
        let phi = features.phi(s.borrow(), a);
        sigma.ger(1.0, &phi, &phi, 1.0);
        count += 1;
    }
    if count < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            got: count,
        });
    }
    sigma /= count as f64;
    symmetrize(&mut sigma);
    let lambda = min_eigenvalue(&sigma);
    let chol = if lambda > SINGULAR_EIGENVALUE {
        Cholesky::new(sigma.clone())
    } else {
        None
    };
    Ok(ProjectionContext {
        sigma,
        lambda_g: lambda.max(floor),
        source: SigmaSource::Estimated { samples: count },
        chol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GridWorld;

    #[test]
    fn grid_poly_shape_and_normalization() {
        let f = TabularFeatures::grid_poly(5, 5, 5).unwrap();
        assert_eq!(f.dim(), 30);
        let mut max_norm: f64 = 0.0;
        for s in 0..25 {
            for a in 0..5 {
                let phi = f.phi(&s, a);
                max_norm = max_norm.max(phi.norm());
                for b in 0..5 {
                    let block = phi.rows(6 * b, 6);
                    // the constant monomial makes the acting block nonzero
                    assert_eq!(block.norm() > 0.0, a == b);
                }
            }
        }
        assert!((max_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_hot_is_identity() {
        let f = TabularFeatures::one_hot(3, 2).unwrap();
        assert_eq!(f.dim(), 6);
        assert_eq!(f.phi(&2, 1)[5], 1.0);
        assert_eq!(f.phi(&2, 1).sum(), 1.0);
    }

    #[test]
    fn rbf_dimensions_and_determinism() {
        let low = [-1.2, -0.07];
        let high = [0.6, 0.07];
        let f = RbfFeatures::new(10, 1.0, 3, &low, &high, 7).unwrap();
        assert_eq!(FeatureMap::<[f64]>::dim(&f), 30);
        let g = RbfFeatures::new(10, 1.0, 3, &low, &high, 7).unwrap();
        assert_eq!(f.centers(), g.centers());
        let s = [-0.5, 0.01];
        assert_eq!(f.phi(&s[..], 2), g.phi(&s[..], 2));
        assert!(RbfFeatures::new(0, 1.0, 3, &low, &high, 7).is_err());
        assert!(RbfFeatures::new(3, 0.0, 3, &low, &high, 7).is_err());

        // a state sitting on a center activates that kernel fully
        let c = &f.centers()[3];
        let state: Vec<f64> = c
            .iter()
            .zip(low.iter().zip(&high))
            .map(|(ci, (l, h))| l + ci * (h - l))
            .collect();
        assert!((f.activations(&state)[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_sigma_one_hot_gridworld() {
        let gw = GridWorld::default();
        let mdp = gw.to_mdp().unwrap();
        let f = TabularFeatures::one_hot(25, 5).unwrap();
        let ctx = exact_sigma(&f, &mdp).unwrap();
        let expected = DMatrix::<f64>::identity(125, 125) / 125.0;
        assert!((ctx.sigma() - expected).amax() < 1e-14);
        assert!((ctx.lambda_g() - 1.0 / 125.0).abs() < 1e-13);
        assert_eq!(ctx.source(), SigmaSource::Exact);
    }

    #[test]
    fn exact_sigma_is_symmetric_with_unit_trace_bound() {
        let mdp = GridWorld::default().to_mdp().unwrap();
        let f = TabularFeatures::grid_poly(5, 5, 5).unwrap();
        let ctx = exact_sigma(&f, &mdp).unwrap();
        assert!((ctx.sigma() - ctx.sigma().transpose()).amax() < 1e-14);
        assert!(ctx.sigma().trace() <= 1.0 + 1e-12);
        assert!(ctx.lambda_g() > 0.0);
    }

    #[test]
    fn degenerate_features_are_rejected() {
        let mdp = GridWorld::default().to_mdp().unwrap();
        let f = TabularFeatures::from_matrix(25, 5, DMatrix::from_element(125, 2, 0.1)).unwrap();
        assert!(matches!(
            exact_sigma(&f, &mdp),
            Err(Error::DegenerateFeatures { .. })
        ));
    }

    #[test]
    fn estimate_sigma_floor_and_sample_checks() {
        let f = TabularFeatures::one_hot(2, 2).unwrap();
        let err = estimate_sigma(&f, vec![(0usize, 0usize); 3], 3, 1e-3).unwrap_err();
        assert_eq!(err, Error::InsufficientSamples { needed: 4, got: 3 });

        // n = d, all duplicates: rank one, floor kicks in
        let ctx = estimate_sigma(&f, vec![(1usize, 1usize); 4], 4, 1e-3).unwrap();
        assert_eq!(ctx.lambda_g(), 1e-3);
        assert!(ctx.solve(&DVector::zeros(4)).is_err());
    }
}

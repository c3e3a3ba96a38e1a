//! Experiment pipelines shared by the CLI and the acceptance tests.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{argmax, BaselineKind, BaselineState};
use crate::envs::{
    mountain_car, run_episode, CarState, EpisodeRecord, GridWorld, MountainCarStream,
};
use crate::error::{Error, Result};
use crate::learner::{LearnerState, MetricsRecord, RunConfig, RunOutput, SingleLoopLearner};
use crate::linfa::{
    estimate_sigma, exact_sigma, FeatureMap, RbfFeatures, TabularFeatures, DEFAULT_LAMBDA_FLOOR,
};
use crate::mdp::{regularized_value_iteration, ExactOracle, FixedPoint, QTable, TabularMdp};
use crate::regularizer::{Regularizer, RegularizerKind, SmoothTruncation};

/// Distances of truncated projected fixed points to the untruncated one.
#[derive(Debug, Clone)]
pub struct FixedPointStudy {
    pub q_star: QTable,
    pub v_star: Vec<f64>,
    pub delta0: f64,
    /// Fixed point of `ΠB_τ`, or the non-convergence error.
    pub untruncated: std::result::Result<FixedPoint, Error>,
    pub truncated: Vec<TruncatedFixedPoint>,
}

#[derive(Debug, Clone)]
pub struct TruncatedFixedPoint {
    pub multiplier: f64,
    pub delta: f64,
    pub fixed_point: std::result::Result<FixedPoint, Error>,
    /// `‖Φθ_c − Φθ_∞‖∞` over all state-action pairs.
    pub distance: Option<f64>,
    /// Per-state `G*_τ(Φθ_c(s,·))`.
    pub state_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointSettings {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        FixedPointSettings {
            damping: 1.0,
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

pub fn fixed_point_study(
    mdp: &TabularMdp,
    reg: &Regularizer,
    features: &TabularFeatures,
    multipliers: &[f64],
    settings: FixedPointSettings,
) -> Result<FixedPointStudy> {
    let ctx = exact_sigma(features, mdp)?;
    let q_star = regularized_value_iteration(mdp, reg, 1e-12, 1_000_000)?;
    let v_star = q_star.state_values(reg)?;
    let delta0 = mdp.delta0(reg);
    let base = ExactOracle::new(mdp, reg, SmoothTruncation::identity(), features, &ctx)?;
    let untruncated = base.projected_fixed_point(settings.damping, settings.tol, settings.max_iter);
    let truncated = multipliers
        .par_iter()
        .map(|&c| {
            let delta = c * delta0;
            let oracle = base.with_truncation(SmoothTruncation::new(delta)?);
            let fixed_point =
                oracle.projected_fixed_point(settings.damping, settings.tol, settings.max_iter);
            let theta = fixed_point.as_ref().map(|fp| &fp.theta);
            let (distance, state_values) = match (theta, &untruncated) {
                (Ok(t), Ok(u)) => {
                    let u = &u.theta;
                    let diff = features.values(&(t - u)).amax();
                    let q = QTable::from_vec(
                        mdp.num_states(),
                        mdp.num_actions(),
                        features.values(t).as_slice().to_vec(),
                    )?;
                    (Some(diff), Some(q.state_values(reg)?))
                }
                (Ok(t), Err(_)) => {
                    let q = QTable::from_vec(
                        mdp.num_states(),
                        mdp.num_actions(),
                        features.values(t).as_slice().to_vec(),
                    )?;
                    (None, Some(q.state_values(reg)?))
                }
                _ => (None, None),
            };
            Ok(TruncatedFixedPoint {
                multiplier: c,
                delta,
                fixed_point,
                distance,
                state_values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedPointStudy {
        q_star,
        v_star,
        delta0,
        untruncated,
        truncated,
    })
}

/// Settings of one single-loop training run on a tabular MDP.
#[derive(Debug, Clone)]
pub struct TabularTrainSettings {
    pub regularizer: RegularizerKind,
    pub tau: f64,
    /// Truncation threshold; infinite for no truncation.
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub steps: usize,
    pub log_every: usize,
    pub track_sigma_min: bool,
}

/// One seeded run with exact metrics.
pub fn tabular_train_run(
    mdp: &TabularMdp,
    features: &TabularFeatures,
    settings: &TabularTrainSettings,
    seed: u64,
) -> Result<RunOutput> {
    let ctx = exact_sigma(features, mdp)?;
    tabular_train_run_with(mdp, features, &ctx, settings, seed)
}

pub fn tabular_train_run_with(
    mdp: &TabularMdp,
    features: &TabularFeatures,
    ctx: &crate::linfa::ProjectionContext,
    settings: &TabularTrainSettings,
    seed: u64,
) -> Result<RunOutput> {
    let reg = Regularizer::new(settings.regularizer, settings.tau, mdp.num_actions())?;
    let trunc = if settings.delta.is_infinite() {
        SmoothTruncation::identity()
    } else {
        SmoothTruncation::new(settings.delta)?
    };
    let oracle = ExactOracle::new(mdp, &reg, trunc, features, ctx)?;
    let radius = ctx.projection_radius(mdp.r_max(), mdp.gamma(), settings.delta);
    let radius = if radius.is_finite() { radius } else { f64::MAX };
    let config = RunConfig {
        alpha: settings.alpha,
        beta: settings.beta,
        steps: settings.steps,
        projection_radius: radius,
        seed,
        log_every: settings.log_every,
        track_sigma_min: settings.track_sigma_min,
    };
    let learner = SingleLoopLearner::new(features, reg, trunc, mdp.gamma(), config)?;
    learner.run(
        LearnerState::zeros(features.dim()),
        mdp.stream(seed),
        Some(&oracle),
    )
}

/// Mean and sample standard deviation per logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Aggregates one metric over runs logged at identical steps.
pub fn aggregate<G>(runs: &[Vec<MetricsRecord>], metric: G) -> Vec<AggregateRow>
where
    G: Fn(&MetricsRecord) -> Option<f64>,
{
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.get(i).and_then(&metric))
                .collect();
            let (mean, sd) = mean_sd(&vals);
            AggregateRow {
                t: first[i].t,
                mean,
                sd,
                n: vals.len(),
            }
        })
        .collect()
}

/// Algorithms compared on MountainCar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlAlgorithm {
    Regularized { kind: RegularizerKind, tau: f64 },
    Baseline(BaselineKind),
}

impl ControlAlgorithm {
    pub fn name(&self) -> String {
        match self {
            ControlAlgorithm::Regularized { .. } => "algorithm1".into(),
            ControlAlgorithm::Baseline(b) => b.name().into(),
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            ControlAlgorithm::Regularized { tau, .. } => Some(*tau),
            ControlAlgorithm::Baseline(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MountainCarSettings {
    pub num_kernels: usize,
    pub kernel_width: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub train_episodes: usize,
    pub test_episodes: usize,
    /// State-action samples from a uniform-random policy used to estimate `λ_g`.
    pub sigma_samples: usize,
    pub lambda_floor: f64,
}

impl Default for MountainCarSettings {
    fn default() -> Self {
        MountainCarSettings {
            num_kernels: 20,
            kernel_width: 1.0,
            alpha: 0.1,
            beta: 0.1,
            delta: 500.0,
            gamma: 1.0,
            epsilon: 0.1,
            train_episodes: 1000,
            test_episodes: 10,
            sigma_samples: 20_000,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MountainCarRun {
    pub seed: u64,
    pub train: Vec<EpisodeRecord>,
    pub test: Vec<EpisodeRecord>,
    pub diverged: bool,
}

impl MountainCarRun {
    pub fn mean_test_return(&self) -> f64 {
        mean_sd(&self.test.iter().map(|e| e.ret).collect::<Vec<_>>()).0
    }
}

fn split_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        ^ stream
}

/// Trains for `train_episodes`, then plays `test_episodes` greedy episodes.
/// Features are drawn from `seed`; a divergent run stops training and is
/// flagged.
pub fn mountaincar_run(
    algorithm: ControlAlgorithm,
    settings: &MountainCarSettings,
    seed: u64,
) -> Result<MountainCarRun> {
    let features = RbfFeatures::new(
        settings.num_kernels,
        settings.kernel_width,
        mountain_car::NUM_ACTIONS,
        &mountain_car::LOW,
        &mountain_car::HIGH,
        seed,
    )?;
    let d = FeatureMap::<CarState>::dim(&features);
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1));
    let mut train = Vec::with_capacity(settings.train_episodes);
    let mut diverged = false;

    enum Agent<'f> {
        Regularized(SingleLoopLearner<'f, RbfFeatures>, LearnerState),
        Baseline(BaselineState),
    }

    let mut agent = match algorithm {
        ControlAlgorithm::Regularized { kind, tau } => {
            let samples = MountainCarStream::new(
                |_: &CarState, r: &mut ChaCha8Rng| {
                    use rand::Rng;
                    r.gen_range(0..mountain_car::NUM_ACTIONS)
                },
                split_seed(seed, 2),
            )
            .map(|(tr, _)| (tr.state, tr.action));
            let ctx = estimate_sigma::<CarState, _, _, _>(
                &features,
                samples,
                settings.sigma_samples.max(d),
                settings.lambda_floor,
            )?;
            let reg = Regularizer::new(kind, tau, mountain_car::NUM_ACTIONS)?;
            let trunc = if settings.delta.is_infinite() {
                SmoothTruncation::identity()
            } else {
                SmoothTruncation::new(settings.delta)?
            };
            let radius = ctx.projection_radius(1.0, settings.gamma, settings.delta);
            let config = RunConfig {
                alpha: settings.alpha,
                beta: settings.beta,
                steps: usize::MAX,
                projection_radius: if radius.is_finite() { radius } else { f64::MAX },
                seed,
                log_every: 1,
                track_sigma_min: false,
            };
            Agent::Regularized(
                SingleLoopLearner::new(&features, reg, trunc, settings.gamma, config)?,
                LearnerState::zeros(d),
            )
        }
        ControlAlgorithm::Baseline(kind) => Agent::Baseline(BaselineState::new(
            kind,
            d,
            settings.alpha,
            settings.beta,
            settings.gamma,
            settings.epsilon,
        )?),
    };

    let mut coin = ChaCha8Rng::seed_from_u64(split_seed(seed, 3));
    for episode in 0..settings.train_episodes {
        let rec = match &mut agent {
            Agent::Regularized(learner, state) => {
                let cell = std::cell::RefCell::new(state);
                run_episode(
                    &mut rng,
                    episode,
                    |s, r| {
                        let theta = &cell.borrow().theta;
                        match learner.policy(theta, s) {
                            Ok(p) => WeightedIndex::new(&p)
                                .map(|w| w.sample(r))
                                .unwrap_or_else(|_| argmax(&p)),
                            Err(_) => 0,
                        }
                    },
                    |tr| learner.step(&mut cell.borrow_mut(), tr).map(|_| ()),
                )
            }
            Agent::Baseline(st) => {
                let cell = std::cell::RefCell::new(st);
                run_episode(
                    &mut rng,
                    episode,
                    |s, r| cell.borrow().act(&features, s, r),
                    |tr| cell.borrow_mut().update(&features, tr, &mut coin),
                )
            }
        };
        match rec {
            Ok(rec) => train.push(rec),
            Err(Error::Divergence { .. }) | Err(Error::InvalidArgument(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let mut test = Vec::with_capacity(settings.test_episodes);
    if !diverged {
        let mut test_rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 4));
        for episode in 0..settings.test_episodes {
            let rec = match &agent {
                Agent::Regularized(_, state) => run_episode(
                    &mut test_rng,
                    episode,
                    |s, _| argmax(&features.q_values(s, &state.theta)),
                    |_| Ok(()),
                )?,
                Agent::Baseline(st) => run_episode(
                    &mut test_rng,
                    episode,
                    |s, _| st.greedy_action(&features, s),
                    |_| Ok(()),
                )?,
            };
            test.push(rec);
        }
    }
    Ok(MountainCarRun {
        seed,
        train,
        test,
        diverged,
    })
}

/// GridWorld with its default map as an MDP.
pub fn default_gridworld() -> Result<(GridWorld, TabularMdp)> {
    let gw = GridWorld::default();
    let mdp = gw.to_mdp()?;
    Ok((gw, mdp))
}

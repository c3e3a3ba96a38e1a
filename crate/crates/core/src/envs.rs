//! The GridWorld and MountainCar environments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::mdp::TabularMdp;
use crate::transition::Transition;

/// Deterministic grid with actions up, down, left, right, stay. A move that
/// would leave the grid keeps the agent in place. The reward depends on the
/// current cell only.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    rewards: Vec<f64>,
    gamma: f64,
}

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;

impl Default for GridWorld {
    /// 5×5, γ = 0.9, +1 in the bottom-right corner, −1 at the center cell.
    fn default() -> Self {
        let mut rewards = vec![0.0; 25];
        rewards[24] = 1.0;
        rewards[12] = -1.0;
        GridWorld {
            width: 5,
            height: 5,
            rewards,
            gamma: 0.9,
        }
    }
}

impl GridWorld {
    /// `rewards` is row-major, cell `(row, col)` at `row·width + col`.
    pub fn new(width: usize, height: usize, rewards: Vec<f64>, gamma: f64) -> Result<Self> {
        if width == 0 || height == 0 || rewards.len() != width * height {
            return Err(Error::InvalidArgument(
                "reward map does not match grid size".into(),
            ));
        }
        ensure_finite(&rewards, "reward map")?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in [0,1), got {gamma}"
            )));
        }
        Ok(GridWorld {
            width,
            height,
            rewards,
            gamma,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn next_state(&self, s: usize, action: usize) -> usize {
        let (row, col) = (s / self.width, s % self.width);
        let (row, col) = match action {
            UP if row > 0 => (row - 1, col),
            DOWN if row + 1 < self.height => (row + 1, col),
            LEFT if col > 0 => (row, col - 1),
            RIGHT if col + 1 < self.width => (row, col + 1),
            _ => (row, col),
        };
        row * self.width + col
    }

    /// Tabular view with uniform behavior policy and uniform initial state.
    pub fn to_mdp(&self) -> Result<TabularMdp> {
        let ns = self.num_states();
        let mut transitions = vec![0.0; ns * 5 * ns];
        let mut rewards = vec![0.0; ns * 5];
        for s in 0..ns {
            for a in 0..5 {
                transitions[(s * 5 + a) * ns + self.next_state(s, a)] = 1.0;
                rewards[s * 5 + a] = self.rewards[s];
            }
        }
        TabularMdp::with_uniform_behavior(ns, 5, transitions, rewards, self.gamma)
    }
}

/// MountainCar dynamics, matching the classic-control `MountainCar-v0`:
///
/// ```text
/// v′ = clip(v + 0.001·(a − 1) − 0.0025·cos(3x), −0.07, 0.07)
/// x′ = clip(x + v′, −1.2, 0.6);  v′ = 0 if x′ = −1.2 and v′ < 0
/// reward −1 per step; goal at x ≥ 0.5; 200-step time limit
/// reset: x ∼ U[−0.6, −0.4], v = 0
/// ```
pub mod mountain_car {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.5;
    pub const FORCE: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;
    pub const MAX_STEPS: usize = 200;
    pub const NUM_ACTIONS: usize = 3;
    pub const LOW: [f64; 2] = [MIN_POSITION, -MAX_SPEED];
    pub const HIGH: [f64; 2] = [MAX_POSITION, MAX_SPEED];
}

use mountain_car::*;

/// `[position, velocity]`.
pub type CarState = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarStep {
    pub state: CarState,
    pub reward: f64,
    /// Goal reached.
    pub terminated: bool,
}

/// One step of the dynamics. A state already at the goal is terminal.
pub fn mountaincar_step(state: CarState, action: usize) -> Result<CarStep> {
    let [x, v] = state;
    if !(MIN_POSITION..=MAX_POSITION).contains(&x) || !(-MAX_SPEED..=MAX_SPEED).contains(&v) {
        return Err(Error::InvalidArgument(format!(
            "state ({x}, {v}) is out of bounds"
        )));
    }
    if action >= NUM_ACTIONS {
        return Err(Error::InvalidArgument(format!(
            "action {action} is out of range"
        )));
    }
    let mut v2 = (v + (action as f64 - 1.0) * FORCE - (3.0 * x).cos() * GRAVITY)
        .clamp(-MAX_SPEED, MAX_SPEED);
    let x2 = (x + v2).clamp(MIN_POSITION, MAX_POSITION);
    if x2 == MIN_POSITION && v2 < 0.0 {
        v2 = 0.0;
    }
    Ok(CarStep {
        state: [x2, v2],
        reward: -1.0,
        terminated: x >= GOAL_POSITION || x2 >= GOAL_POSITION,
    })
}

pub fn mountaincar_reset<R: Rng>(rng: &mut R) -> CarState {
    [rng.gen_range(-0.6..-0.4), 0.0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub ret: f64,
    pub steps: usize,
}

/// Plays one episode, calling `policy` for actions and `observe` after each
/// transition. Episodes end at the goal or after [`MAX_STEPS`] steps.
pub fn run_episode<R, P, O>(
    rng: &mut R,
    episode: usize,
    mut policy: P,
    mut observe: O,
) -> Result<EpisodeRecord>
where
    R: Rng,
    P: FnMut(&CarState, &mut R) -> usize,
    O: FnMut(&Transition<CarState>) -> Result<()>,
{
    let mut state = mountaincar_reset(rng);
    let mut ret = 0.0;
    for steps in 1..=MAX_STEPS {
        let action = policy(&state, rng);
        let out = mountaincar_step(state, action)?;
        ret += out.reward;
        let tr = Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.state,
            terminal: out.terminated,
        };
        observe(&tr)?;
        state = out.state;
        if out.terminated {
            return Ok(EpisodeRecord {
                episode,
                ret,
                steps,
            });
        }
    }
    Ok(EpisodeRecord {
        episode,
        ret,
        steps: MAX_STEPS,
    })
}

/// Transitions of repeated episodes under a fixed policy. Each item carries
/// the episode record when that transition closes an episode.
pub struct MountainCarStream<P> {
    policy: P,
    rng: ChaCha8Rng,
    state: CarState,
    episode: usize,
    steps: usize,
    ret: f64,
}

impl<P> MountainCarStream<P>
where
    P: FnMut(&CarState, &mut ChaCha8Rng) -> usize,
{
    pub fn new(policy: P, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = mountaincar_reset(&mut rng);
        MountainCarStream {
            policy,
            rng,
            state,
            episode: 0,
            steps: 0,
            ret: 0.0,
        }
    }
}

impl<P> Iterator for MountainCarStream<P>
where
    P: FnMut(&CarState, &mut ChaCha8Rng) -> usize,
{
    type Item = (Transition<CarState>, Option<EpisodeRecord>);

    fn next(&mut self) -> Option<Self::Item> {
        let action = (self.policy)(&self.state, &mut self.rng);
        let out = mountaincar_step(self.state, action).ok()?;
        self.steps += 1;
        self.ret += out.reward;
        let tr = Transition {
            state: self.state,
            action,
            reward: out.reward,
            next_state: out.state,
            terminal: out.terminated,
        };
        let record = if out.terminated || self.steps == MAX_STEPS {
            let rec = EpisodeRecord {
                episode: self.episode,
                ret: self.ret,
                steps: self.steps,
            };
            self.episode += 1;
            self.steps = 0;
            self.ret = 0.0;
            self.state = mountaincar_reset(&mut self.rng);
            Some(rec)
        } else {
            self.state = out.state;
            None
        };
        Some((tr, record))
    }
}

//! Smoothly truncated regularized Q-learning with linear function
//! approximation, exact tabular oracles, baselines and benchmark
//! environments.

pub mod baselines;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod learner;
pub mod linfa;
pub mod mdp;
pub mod regularizer;
pub mod transition;

pub use error::{Error, Result};
pub use learner::{LearnerState, MetricsRecord, RunConfig, RunOutput, SingleLoopLearner};
pub use linfa::{FeatureMap, ProjectionContext, RbfFeatures, TabularFeatures};
pub use mdp::{ExactOracle, QTable, TabularMdp};
pub use regularizer::{Regularizer, RegularizerKind, SmoothTruncation};
pub use transition::Transition;

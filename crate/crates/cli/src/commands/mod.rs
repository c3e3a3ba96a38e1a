//! Each command is split into a `plan` step, which loads and checks all
//! inputs, and an `execute` step, which computes and writes CSV files.

mod diagnostics;
mod fixed_points;
mod mountaincar;
mod train;

use std::path::Path;

use regq_core::linfa::TabularFeatures;
use regq_core::mdp::TabularMdp;

use crate::config::{Experiment, ExperimentConfig, FeatureSpec};
use crate::error::CliError;
use crate::output::OutputDir;

pub enum Plan {
    FixedPoints(fixed_points::FixedPointsPlan),
    Train(train::TrainPlan),
    MountainCar(mountaincar::MountainCarPlan),
    Diagnostics(diagnostics::DiagnosticsPlan),
}

pub fn plan(
    experiment: Experiment,
    config: &ExperimentConfig,
    base: &Path,
) -> Result<Plan, CliError> {
    Ok(match experiment {
        Experiment::GridworldFixedPoints => Plan::FixedPoints(fixed_points::plan(config, base)?),
        Experiment::GridworldTrain => Plan::Train(train::plan(config, base)?),
        Experiment::MountaincarTrain => Plan::MountainCar(mountaincar::plan(config, true)?),
        Experiment::MountaincarEval => Plan::MountainCar(mountaincar::plan(config, false)?),
        Experiment::Diagnostics => Plan::Diagnostics(diagnostics::plan(config)?),
    })
}

pub fn execute(plan: Plan, out: &OutputDir) -> Result<(), CliError> {
    match plan {
        Plan::FixedPoints(p) => fixed_points::execute(p, out),
        Plan::Train(p) => train::execute(p, out),
        Plan::MountainCar(p) => mountaincar::execute(p, out),
        Plan::Diagnostics(p) => diagnostics::execute(p, out),
    }
}

/// Tabular features for the configured MDP. Polynomial features need the
/// grid layout and are the default on a GridWorld; one-hot otherwise.
fn tabular_features(
    config: &ExperimentConfig,
    mdp: &TabularMdp,
    grid: Option<(usize, usize)>,
) -> Result<TabularFeatures, CliError> {
    let na = mdp.num_actions();
    let spec = config.features.clone().unwrap_or(if grid.is_some() {
        FeatureSpec::GridPoly
    } else {
        FeatureSpec::OneHot
    });
    let features = match (spec, grid) {
        (FeatureSpec::OneHot, _) => TabularFeatures::one_hot(mdp.num_states(), na),
        (FeatureSpec::GridPoly, Some((w, h))) => TabularFeatures::grid_poly(w, h, na),
        (FeatureSpec::GridPoly, None) => {
            return Err(CliError::Config(
                "`grid_poly` features need a `gridworld`, not an `mdp_file`".into(),
            ))
        }
        (FeatureSpec::Rbf { .. }, _) => {
            return Err(CliError::Config(
                "RBF features apply to MountainCar only".into(),
            ))
        }
    };
    features.map_err(|e| CliError::Config(format!("features: {e}")))
}

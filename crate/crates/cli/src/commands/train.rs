use std::path::Path;

use rayon::prelude::*;

use regq_core::experiments::{aggregate, tabular_train_run_with, TabularTrainSettings};
use regq_core::learner::{MetricsRecord, METRICS_HEADER};
use regq_core::linfa::{exact_sigma, ProjectionContext, TabularFeatures};
use regq_core::mdp::TabularMdp;
use regq_core::regularizer::Regularizer;
use regq_core::Error;

use super::tabular_features;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{fmt_f64, fmt_opt, OutputDir};

pub struct TrainPlan {
    mdp: TabularMdp,
    features: TabularFeatures,
    ctx: ProjectionContext,
    /// `(multiplier, δ)` per cell; `δ = ∞` runs without truncation.
    cells: Vec<(Option<f64>, f64)>,
    settings: TabularTrainSettings,
    seeds: Vec<u64>,
}

pub fn plan(config: &ExperimentConfig, base: &Path) -> Result<TrainPlan, CliError> {
    let (mdp, grid) = config.tabular_mdp(base)?;
    let features = tabular_features(config, &mdp, grid)?;
    let ctx =
        exact_sigma(&features, &mdp).map_err(|e| CliError::Config(format!("features: {e}")))?;
    let (kind, tau) = config.regularizer()?;
    let reg = Regularizer::new(kind, tau, mdp.num_actions())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let cells = config.thresholds(mdp.delta0(&reg));
    let settings = TabularTrainSettings {
        regularizer: kind,
        tau,
        delta: f64::INFINITY,
        alpha: config.alpha()?,
        beta: config.beta()?,
        steps: config.steps.unwrap_or(0),
        log_every: config.log_every.unwrap_or(1),
        track_sigma_min: false,
    };
    Ok(TrainPlan {
        mdp,
        features,
        ctx,
        cells,
        settings,
        seeds: config.seeds()?.to_vec(),
    })
}

pub fn execute(p: TrainPlan, out: &OutputDir) -> Result<(), CliError> {
    const CMD: &str = "gridworld-train";
    let jobs: Vec<(usize, u64)> = (0..p.cells.len())
        .flat_map(|i| p.seeds.iter().map(move |&s| (i, s)))
        .collect();
    // `None` marks a diverged seed.
    let results = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let settings = TabularTrainSettings {
                delta: p.cells[i].1,
                ..p.settings.clone()
            };
            match tabular_train_run_with(&p.mdp, &p.features, &p.ctx, &settings, seed) {
                Ok(run) => Ok(Some(run.metrics)),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<Option<Vec<MetricsRecord>>>, Error>>()?;

    let label = |i: usize| (fmt_opt(p.cells[i].0), fmt_f64(p.cells[i].1));

    let mut w = out.create("_seeds", CMD, &[])?;
    let mut header = vec!["c", "delta", "seed"];
    header.extend(METRICS_HEADER);
    w.write_record(&header)?;
    for (&(i, seed), res) in jobs.iter().zip(&results) {
        let (c, delta) = label(i);
        for m in res.iter().flatten() {
            let mut rec = vec![c.clone(), delta.clone(), seed.to_string()];
            rec.extend(m.csv_fields());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut w = out.create("", CMD, &[])?;
    w.write_record([
        "c",
        "delta",
        "t",
        "mean_mspbe",
        "sd_mspbe",
        "n_seeds",
        "n_diverged",
    ])?;
    let mut dead_cells = Vec::new();
    for i in 0..p.cells.len() {
        let cell = &results[i * p.seeds.len()..(i + 1) * p.seeds.len()];
        let runs: Vec<Vec<MetricsRecord>> = cell.iter().flatten().cloned().collect();
        let diverged = cell.len() - runs.len();
        let (c, delta) = label(i);
        if runs.is_empty() {
            dead_cells.push(format!("c={c} delta={delta}"));
        }
        for row in aggregate(&runs, |m| m.mspbe) {
            w.write_record([
                c.clone(),
                delta.clone(),
                row.t.to_string(),
                fmt_f64(row.mean),
                fmt_f64(row.sd),
                row.n.to_string(),
                diverged.to_string(),
            ])?;
        }
    }
    w.flush()?;
    if !dead_cells.is_empty() {
        return Err(CliError::AllDiverged {
            cells: dead_cells.join(", "),
        });
    }
    Ok(())
}

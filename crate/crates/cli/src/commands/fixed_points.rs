use std::path::Path;

use regq_core::experiments::{fixed_point_study, FixedPointSettings};
use regq_core::linfa::{exact_sigma, TabularFeatures};
use regq_core::mdp::{ExactOracle, FixedPoint, TabularMdp};
use regq_core::regularizer::{Regularizer, SmoothTruncation};
use regq_core::Error;

use super::tabular_features;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{fmt_f64, fmt_opt, OutputDir};

pub struct FixedPointsPlan {
    mdp: TabularMdp,
    grid: Option<(usize, usize)>,
    features: TabularFeatures,
    reg: Regularizer,
    multipliers: Vec<f64>,
    settings: FixedPointSettings,
}

pub fn plan(config: &ExperimentConfig, base: &Path) -> Result<FixedPointsPlan, CliError> {
    let (mdp, grid) = config.tabular_mdp(base)?;
    let features = tabular_features(config, &mdp, grid)?;
    exact_sigma(&features, &mdp).map_err(|e| CliError::Config(format!("features: {e}")))?;
    let (kind, tau) = config.regularizer()?;
    let reg = Regularizer::new(kind, tau, mdp.num_actions())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let delta0 = mdp.delta0(&reg);
    let multipliers = config
        .thresholds(delta0)
        .into_iter()
        .filter(|(_, d)| d.is_finite())
        .map(|(c, d)| c.unwrap_or(d / delta0))
        .collect();
    let defaults = FixedPointSettings::default();
    let settings = FixedPointSettings {
        damping: config.damping.unwrap_or(defaults.damping),
        tol: config.tolerance.unwrap_or(defaults.tol),
        max_iter: config.max_iter.unwrap_or(defaults.max_iter),
    };
    Ok(FixedPointsPlan {
        mdp,
        grid,
        features,
        reg,
        multipliers,
        settings,
    })
}

/// `(converged, residual, iterations)` of one fixed-point solve.
fn convergence(fp: &Result<FixedPoint, Error>) -> (bool, f64, usize) {
    match fp {
        Ok(fp) => (true, fp.residual, fp.iterations),
        Err(Error::NonConvergence {
            iterations,
            residual,
            ..
        }) => (false, *residual, *iterations),
        Err(_) => (false, f64::NAN, 0),
    }
}

pub fn execute(p: FixedPointsPlan, out: &OutputDir) -> Result<(), CliError> {
    const CMD: &str = "gridworld-fixed-points";
    let study = fixed_point_study(&p.mdp, &p.reg, &p.features, &p.multipliers, p.settings)?;
    let ctx = exact_sigma(&p.features, &p.mdp)?;
    let oracle = ExactOracle::new(
        &p.mdp,
        &p.reg,
        SmoothTruncation::identity(),
        &p.features,
        &ctx,
    )?;
    let untruncated_values = match &study.untruncated {
        Ok(fp) => {
            let q = p.features.values(&fp.theta);
            let na = p.mdp.num_actions();
            Some(
                (0..p.mdp.num_states())
                    .map(|s| p.reg.conjugate_value(&q.as_slice()[s * na..(s + 1) * na]))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        }
        Err(_) => None,
    };

    let mut w = out.create("_values", CMD, &[])?;
    let mut header = vec![
        "state".to_string(),
        "row".into(),
        "col".into(),
        "v_star".into(),
        "v_untruncated".into(),
    ];
    header.extend(
        study
            .truncated
            .iter()
            .map(|t| format!("v_c{}", t.multiplier)),
    );
    w.write_record(&header)?;
    for s in 0..p.mdp.num_states() {
        let (row, col) = match p.grid {
            Some((width, _)) => ((s / width).to_string(), (s % width).to_string()),
            None => (String::new(), String::new()),
        };
        let mut rec = vec![
            s.to_string(),
            row,
            col,
            fmt_f64(study.v_star[s]),
            fmt_opt(untruncated_values.as_ref().map(|v| v[s])),
        ];
        rec.extend(
            study
                .truncated
                .iter()
                .map(|t| fmt_opt(t.state_values.as_ref().map(|v| v[s]))),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = out.create(
        "_summary",
        CMD,
        &[format!("delta0={}", fmt_f64(study.delta0))],
    )?;
    w.write_record([
        "c",
        "delta",
        "linf_distance",
        "converged",
        "residual",
        "iterations",
        "bellman_residual",
    ])?;
    let bellman = |fp: &Result<FixedPoint, Error>, o: &ExactOracle| -> Result<String, CliError> {
        Ok(match fp {
            Ok(fp) => fmt_f64(o.projection_residual(&fp.theta)?),
            Err(_) => String::new(),
        })
    };
    let (ok, res, it) = convergence(&study.untruncated);
    w.write_record([
        "inf".to_string(),
        "inf".into(),
        "0".into(),
        ok.to_string(),
        fmt_f64(res),
        it.to_string(),
        bellman(&study.untruncated, &oracle)?,
    ])?;
    for t in &study.truncated {
        let (ok, res, it) = convergence(&t.fixed_point);
        let o = oracle.with_truncation(SmoothTruncation::new(t.delta)?);
        w.write_record([
            fmt_f64(t.multiplier),
            fmt_f64(t.delta),
            fmt_opt(t.distance),
            ok.to_string(),
            fmt_f64(res),
            it.to_string(),
            bellman(&t.fixed_point, &o)?,
        ])?;
    }
    w.flush()?;
    Ok(())
}

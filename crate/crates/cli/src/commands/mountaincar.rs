use std::io::Write;

use rayon::prelude::*;

use regq_core::baselines::BaselineKind;
use regq_core::experiments::{
    mean_sd, mountaincar_run, ControlAlgorithm, MountainCarRun, MountainCarSettings,
};

use crate::config::{AlgorithmName, ExperimentConfig, FeatureSpec};
use crate::error::CliError;
use crate::output::{fmt_f64, fmt_opt, OutputDir};

/// Published mean ± sd of test returns over 20 runs, by `d`:
/// Q-learning, CQL, Double Q-learning, regularized τ = 0.01, τ = 0.05.
/// Greedy-GQ stays at −200 for every `d`.
const REFERENCE: [(usize, [(f64, f64); 5]); 6] = [
    (
        30,
        [
            (-177.28, 32.00),
            (-199.37, 6.27),
            (-177.51, 33.73),
            (-144.36, 26.46),
            (-177.83, 30.09),
        ],
    ),
    (
        60,
        [
            (-143.08, 32.47),
            (-200.00, 0.0),
            (-132.76, 31.54),
            (-121.01, 31.82),
            (-123.84, 28.35),
        ],
    ),
    (
        90,
        [
            (-175.40, 17.77),
            (-200.00, 0.0),
            (-146.78, 22.74),
            (-121.37, 19.84),
            (-120.31, 19.20),
        ],
    ),
    (
        120,
        [
            (-138.74, 11.00),
            (-199.12, 3.97),
            (-146.23, 12.77),
            (-176.17, 22.65),
            (-145.15, 29.48),
        ],
    ),
    (
        150,
        [
            (-141.04, 24.77),
            (-200.00, 0.0),
            (-155.60, 19.43),
            (-139.58, 20.59),
            (-120.17, 20.64),
        ],
    ),
    (
        180,
        [
            (-135.62, 32.01),
            (-196.32, 13.61),
            (-110.66, 20.87),
            (-120.88, 22.50),
            (-122.64, 22.01),
        ],
    ),
];

fn reference(algorithm: &ControlAlgorithm, d: usize) -> Option<(f64, f64)> {
    let row = REFERENCE.iter().find(|(rd, _)| *rd == d)?.1;
    match algorithm {
        ControlAlgorithm::Baseline(BaselineKind::QLearning) => Some(row[0]),
        ControlAlgorithm::Baseline(BaselineKind::CoupledQLearning) => Some(row[1]),
        ControlAlgorithm::Baseline(BaselineKind::DoubleQLearning) => Some(row[2]),
        ControlAlgorithm::Baseline(BaselineKind::GreedyGq) => Some((-200.0, 0.0)),
        ControlAlgorithm::Regularized { tau, .. } if *tau == 0.01 => Some(row[3]),
        ControlAlgorithm::Regularized { tau, .. } if *tau == 0.05 => Some(row[4]),
        ControlAlgorithm::Regularized { .. } => None,
    }
}

pub struct MountainCarPlan {
    /// `(algorithm, l)` per cell; `d = 3l`.
    cells: Vec<(ControlAlgorithm, usize)>,
    settings: MountainCarSettings,
    seeds: Vec<u64>,
    write_episodes: bool,
}

pub fn plan(config: &ExperimentConfig, write_episodes: bool) -> Result<MountainCarPlan, CliError> {
    let defaults = MountainCarSettings::default();
    let (kernels, width) = match &config.features {
        Some(FeatureSpec::Rbf { num_kernels, width }) => (num_kernels.clone(), *width),
        _ => return Err(CliError::Config("MountainCar requires RBF features".into())),
    };
    let mut algorithms = Vec::new();
    for &a in &config.algorithms {
        match a.baseline() {
            Some(b) => algorithms.push(ControlAlgorithm::Baseline(b)),
            None => {
                debug_assert_eq!(a, AlgorithmName::Algorithm1);
                let (kind, tau) = config.regularizer()?;
                let taus = if config.taus.is_empty() {
                    vec![tau]
                } else {
                    config.taus.clone()
                };
                algorithms.extend(
                    taus.into_iter()
                        .map(|tau| ControlAlgorithm::Regularized { kind, tau }),
                );
            }
        }
    }
    let delta = config
        .truncation
        .as_ref()
        .and_then(|t| t.delta.first().copied())
        .unwrap_or(if config.algorithms.contains(&AlgorithmName::Algorithm1) {
            f64::INFINITY
        } else {
            defaults.delta
        });
    let settings = MountainCarSettings {
        num_kernels: 0,
        kernel_width: width,
        alpha: config.alpha()?,
        beta: config.beta()?,
        delta,
        gamma: config.gamma.unwrap_or(defaults.gamma),
        epsilon: config.epsilon.unwrap_or(defaults.epsilon),
        train_episodes: config.train_episodes.unwrap_or(defaults.train_episodes),
        test_episodes: config.test_episodes.unwrap_or(defaults.test_episodes),
        sigma_samples: config.sigma_samples.unwrap_or(defaults.sigma_samples),
        lambda_floor: config.lambda_floor.unwrap_or(defaults.lambda_floor),
    };
    let cells = algorithms
        .iter()
        .flat_map(|&a| kernels.iter().map(move |&l| (a, l)))
        .collect();
    Ok(MountainCarPlan {
        cells,
        settings,
        seeds: config.seeds()?.to_vec(),
        write_episodes,
    })
}

pub fn execute(p: MountainCarPlan, out: &OutputDir) -> Result<(), CliError> {
    let cmd = if p.write_episodes {
        "mountaincar-train"
    } else {
        "mountaincar-eval"
    };
    let jobs: Vec<(usize, u64)> = (0..p.cells.len())
        .flat_map(|i| p.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let (algorithm, l) = p.cells[i];
            let settings = MountainCarSettings {
                num_kernels: l,
                ..p.settings.clone()
            };
            mountaincar_run(algorithm, &settings, seed)
        })
        .collect::<Result<Vec<MountainCarRun>, _>>()?;

    let ident = |i: usize| {
        let (a, l) = p.cells[i];
        (a.name(), 3 * l, fmt_opt(a.tau()))
    };

    if p.write_episodes {
        let mut w = out.create("_episodes", cmd, &[])?;
        w.write_record([
            "algorithm",
            "d",
            "tau",
            "seed",
            "phase",
            "episode",
            "return",
            "steps",
        ])?;
        for (&(i, seed), run) in jobs.iter().zip(&runs) {
            let (name, d, tau) = ident(i);
            for (phase, eps) in [("train", &run.train), ("test", &run.test)] {
                for e in eps {
                    w.write_record([
                        name.clone(),
                        d.to_string(),
                        tau.clone(),
                        seed.to_string(),
                        phase.to_string(),
                        e.episode.to_string(),
                        fmt_f64(e.ret),
                        e.steps.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
    }

    let mut comments = vec![
        "published reference (informational): algorithm,d,tau,mean_return,sd_return".to_string(),
    ];
    let mut summary = Vec::new();
    let mut dead_cells = Vec::new();
    for (i, &(algorithm, _)) in p.cells.iter().enumerate() {
        let cell = &runs[i * p.seeds.len()..(i + 1) * p.seeds.len()];
        let (name, d, tau) = ident(i);
        let means: Vec<f64> = cell
            .iter()
            .filter(|r| !r.diverged)
            .map(|r| r.mean_test_return())
            .collect();
        let excluded = cell.len() - means.len();
        if means.is_empty() {
            dead_cells.push(format!("{name} d={d} tau={tau}"));
        }
        if let Some((m, s)) = reference(&algorithm, d) {
            comments.push(format!("{name},{d},{tau},{m:.2},{s:.2}"));
        }
        let (mean, sd) = mean_sd(&means);
        summary.push((
            [
                name,
                d.to_string(),
                tau,
                fmt_f64(mean),
                fmt_f64(sd),
                means.len().to_string(),
            ],
            excluded,
        ));
    }
    let mut w = out.create("", cmd, &comments)?;
    w.write_record([
        "algorithm",
        "d",
        "tau",
        "mean_return",
        "sd_return",
        "n_runs",
    ])?;
    for (rec, _) in &summary {
        w.write_record(rec)?;
    }
    w.flush()?;
    let mut tail = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    for (rec, excluded) in &summary {
        if *excluded > 0 {
            writeln!(
                tail,
                "# excluded {},{},{}: {excluded} diverged run(s)",
                rec[0], rec[1], rec[2]
            )?;
        }
    }
    tail.flush()?;
    if !dead_cells.is_empty() {
        return Err(CliError::AllDiverged {
            cells: dead_cells.join(", "),
        });
    }
    Ok(())
}

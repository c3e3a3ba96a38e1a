//! Experiment configuration. One JSON file per run; unknown keys are
//! rejected and every field is checked before any computation starts.
//! The schema is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use regq_core::baselines::BaselineKind;
use regq_core::envs::GridWorld;
use regq_core::mdp::TabularMdp;
use regq_core::regularizer::RegularizerKind;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GridworldFixedPoints,
    GridworldTrain,
    MountaincarTrain,
    MountaincarEval,
    Diagnostics,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::GridworldFixedPoints => "gridworld-fixed-points",
            Experiment::GridworldTrain => "gridworld-train",
            Experiment::MountaincarTrain => "mountaincar-train",
            Experiment::MountaincarEval => "mountaincar-eval",
            Experiment::Diagnostics => "diagnostics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerName {
    Shannon,
    Tsallis,
}

impl From<RegularizerName> for RegularizerKind {
    fn from(r: RegularizerName) -> Self {
        match r {
            RegularizerName::Shannon => RegularizerKind::Shannon,
            RegularizerName::Tsallis => RegularizerKind::Tsallis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerName,
    pub tau: f64,
}

/// Either absolute thresholds or multiples of `δ₀`. An empty `delta` list
/// with `untruncated: true` runs without truncation only.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    #[serde(default)]
    pub delta: Vec<f64>,
    #[serde(default)]
    pub multipliers: Vec<f64>,
    #[serde(default)]
    pub untruncated: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    OneHot,
    GridPoly,
    Rbf {
        num_kernels: Vec<usize>,
        #[serde(default = "default_width")]
        width: f64,
    },
}

fn default_width() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major reward per cell.
    pub rewards: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Algorithm1,
    Qlearning,
    DoubleQl,
    Cql,
    GreedyGq,
}

impl AlgorithmName {
    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            AlgorithmName::Algorithm1 => None,
            AlgorithmName::Qlearning => Some(BaselineKind::QLearning),
            AlgorithmName::DoubleQl => Some(BaselineKind::DoubleQLearning),
            AlgorithmName::Cql => Some(BaselineKind::CoupledQLearning),
            AlgorithmName::GreedyGq => Some(BaselineKind::GreedyGq),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub regularizer: Option<RegularizerSpec>,
    /// Extra `τ` values for `algorithm1` on MountainCar.
    #[serde(default)]
    pub taus: Vec<f64>,
    pub truncation: Option<TruncationSpec>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub steps: Option<usize>,
    pub log_every: Option<usize>,
    pub features: Option<FeatureSpec>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub gridworld: Option<GridWorldSpec>,
    /// Tabular MDP in the text format; replaces the GridWorld.
    pub mdp_file: Option<PathBuf>,
    #[serde(default)]
    pub algorithms: Vec<AlgorithmName>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub train_episodes: Option<usize>,
    pub test_episodes: Option<usize>,
    pub sigma_samples: Option<usize>,
    pub lambda_floor: Option<f64>,
    pub damping: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
    pub num_mdps: Option<usize>,
    pub pairs: Option<usize>,
    /// Output file name inside the output directory.
    pub output: Option<String>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: Option<f64>) -> Result<f64, CliError> {
    match v {
        Some(x) if x.is_finite() && x > 0.0 => Ok(x),
        Some(x) => Err(bad(format!(
            "`{name}` must be positive and finite, got {x}"
        ))),
        None => Err(bad(format!("`{name}` is required"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn regularizer(&self) -> Result<(RegularizerKind, f64), CliError> {
        let r = self
            .regularizer
            .as_ref()
            .ok_or_else(|| bad("`regularizer` is required"))?;
        Ok((r.kind.into(), positive("regularizer.tau", Some(r.tau))?))
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        positive("alpha", self.alpha)
    }

    pub fn beta(&self) -> Result<f64, CliError> {
        positive("beta", self.beta)
    }

    pub fn seeds(&self) -> Result<&[u64], CliError> {
        if self.seeds.is_empty() {
            return Err(bad("`seeds` must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(bad("`seeds` contains duplicates"));
        }
        Ok(&self.seeds)
    }

    /// The tabular MDP of the GridWorld experiments.
    pub fn tabular_mdp(
        &self,
        base: &Path,
    ) -> Result<(TabularMdp, Option<(usize, usize)>), CliError> {
        match (&self.gridworld, &self.mdp_file) {
            (Some(_), Some(_)) => Err(bad("`gridworld` and `mdp_file` are mutually exclusive")),
            (None, Some(p)) => {
                let path = if p.is_absolute() {
                    p.clone()
                } else {
                    base.join(p)
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
                let mdp = TabularMdp::from_text(&text)
                    .map_err(|e| bad(format!("{}: {e}", path.display())))?;
                Ok((mdp, None))
            }
            (g, None) => {
                let gw = match g {
                    Some(g) => GridWorld::new(g.width, g.height, g.rewards.clone(), g.gamma)
                        .map_err(|e| bad(format!("gridworld: {e}")))?,
                    None => GridWorld::default(),
                };
                let mdp = gw.to_mdp().map_err(|e| bad(format!("gridworld: {e}")))?;
                Ok((mdp, Some((gw.width(), gw.height()))))
            }
        }
    }

    /// Checks that the fields needed by `experiment` are present and valid.
    pub fn validate(&self, expected: Experiment) -> Result<(), CliError> {
        if self.experiment != expected {
            return Err(bad(format!(
                "config is for `{}` but the command is `{}`",
                self.experiment.name(),
                expected.name()
            )));
        }
        match expected {
            Experiment::GridworldFixedPoints => {
                self.regularizer()?;
                self.validate_truncation(true)?;
                self.validate_tabular_features()?;
                if let Some(d) = self.damping {
                    if !(d > 0.0 && d <= 1.0) {
                        return Err(bad(format!("`damping` must lie in (0,1], got {d}")));
                    }
                }
                if self.tolerance.is_some() {
                    positive("tolerance", self.tolerance)?;
                }
            }
            Experiment::GridworldTrain => {
                self.regularizer()?;
                self.alpha()?;
                self.beta()?;
                self.seeds()?;
                self.validate_truncation(false)?;
                self.validate_tabular_features()?;
                if self.steps.is_none() {
                    return Err(bad("`steps` is required"));
                }
                match self.log_every {
                    Some(0) => return Err(bad("`log_every` must be positive")),
                    None => return Err(bad("`log_every` is required")),
                    _ => {}
                }
            }
            Experiment::MountaincarTrain | Experiment::MountaincarEval => {
                self.alpha()?;
                self.beta()?;
                self.seeds()?;
                if self.algorithms.is_empty() {
                    return Err(bad("`algorithms` must list at least one algorithm"));
                }
                if self.algorithms.contains(&AlgorithmName::Algorithm1) {
                    self.regularizer()?;
                    for &t in &self.taus {
                        positive("taus", Some(t))?;
                    }
                    let tr = self
                        .truncation
                        .as_ref()
                        .ok_or_else(|| bad("`truncation` is required"))?;
                    if !tr.multipliers.is_empty() {
                        return Err(bad("MountainCar has no finite δ₀; give `truncation.delta`"));
                    }
                    if tr.delta.len() > 1 {
                        return Err(bad("MountainCar takes a single `truncation.delta`"));
                    }
                    if tr.delta.is_empty() && !tr.untruncated {
                        return Err(bad("`truncation` must set `delta` or `untruncated`"));
                    }
                    for &d in &tr.delta {
                        positive("truncation.delta", Some(d))?;
                    }
                }
                match &self.features {
                    Some(FeatureSpec::Rbf { num_kernels, width }) => {
                        if num_kernels.is_empty() || num_kernels.contains(&0) {
                            return Err(bad("`features.num_kernels` must list positive counts"));
                        }
                        positive("features.width", Some(*width))?;
                    }
                    _ => return Err(bad("MountainCar requires `features.kind = \"rbf\"`")),
                }
                if let Some(g) = self.gamma {
                    if !(0.0..=1.0).contains(&g) {
                        return Err(bad(format!("`gamma` must lie in [0,1], got {g}")));
                    }
                }
                if let Some(e) = self.epsilon {
                    if !(0.0..=1.0).contains(&e) {
                        return Err(bad(format!("`epsilon` must lie in [0,1], got {e}")));
                    }
                }
                if self.lambda_floor.is_some() {
                    positive("lambda_floor", self.lambda_floor)?;
                }
                if self.gridworld.is_some() || self.mdp_file.is_some() {
                    return Err(bad("MountainCar does not take a tabular environment"));
                }
            }
            Experiment::Diagnostics => {
                if self.tolerance.is_some() {
                    positive("tolerance", self.tolerance)?;
                }
                if self.num_mdps == Some(0) || self.pairs == Some(0) {
                    return Err(bad("`num_mdps` and `pairs` must be positive"));
                }
            }
        }
        Ok(())
    }

    fn validate_truncation(&self, needs_finite: bool) -> Result<(), CliError> {
        let tr = self
            .truncation
            .as_ref()
            .ok_or_else(|| bad("`truncation` is required"))?;
        for &d in &tr.delta {
            positive("truncation.delta", Some(d))?;
        }
        for &c in &tr.multipliers {
            positive("truncation.multipliers", Some(c))?;
        }
        if tr.delta.is_empty() && tr.multipliers.is_empty() && (needs_finite || !tr.untruncated) {
            if needs_finite {
                return Err(bad("`truncation` must list `delta` or `multipliers`"));
            }
            return Err(bad(
                "`truncation` must list `delta`, `multipliers` or set `untruncated`",
            ));
        }
        Ok(())
    }

    fn validate_tabular_features(&self) -> Result<(), CliError> {
        match self.features {
            None | Some(FeatureSpec::OneHot) | Some(FeatureSpec::GridPoly) => Ok(()),
            Some(FeatureSpec::Rbf { .. }) => Err(bad("RBF features apply to MountainCar only")),
        }
    }

    /// Thresholds for tabular experiments as `(label, multiplier, δ)`;
    /// `multiplier` is `None` for absolute thresholds.
    pub fn thresholds(&self, delta0: f64) -> Vec<(Option<f64>, f64)> {
        let tr = self.truncation.clone().unwrap_or_default();
        let mut out: Vec<(Option<f64>, f64)> = tr
            .multipliers
            .iter()
            .map(|&c| (Some(c), c * delta0))
            .collect();
        out.extend(tr.delta.iter().map(|&d| (None, d)));
        if tr.untruncated {
            out.push((None, f64::INFINITY));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRAIN: &str = r#"{
        "experiment": "gridworld-train",
        "regularizer": {"kind": "shannon", "tau": 1.0},
        "truncation": {"multipliers": [1, 30]},
        "alpha": 0.05, "beta": 0.5, "steps": 100, "log_every": 10,
        "features": {"kind": "grid_poly"},
        "seeds": [0, 1]
    }"#;

    #[test]
    fn parses_and_validates() {
        let c = ExperimentConfig::parse(TRAIN).unwrap();
        c.validate(Experiment::GridworldTrain).unwrap();
        assert_eq!(
            c.thresholds(2.0),
            vec![(Some(1.0), 2.0), (Some(30.0), 60.0)]
        );
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = TRAIN.replace("\"seeds\"", "\"sedes\"");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(CliError::Config(_))
        ));
        let text = TRAIN.replace("\"tau\": 1.0", "\"tau\": 1.0, \"temperature\": 2");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn rejects_mismatched_command_and_bad_values() {
        let c = ExperimentConfig::parse(TRAIN).unwrap();
        assert!(c.validate(Experiment::GridworldFixedPoints).is_err());
        for (from, to) in [
            ("\"alpha\": 0.05", "\"alpha\": -0.05"),
            ("\"seeds\": [0, 1]", "\"seeds\": []"),
            ("\"seeds\": [0, 1]", "\"seeds\": [1, 1]"),
            ("\"log_every\": 10", "\"log_every\": 0"),
            ("\"multipliers\": [1, 30]", "\"multipliers\": [0]"),
            (
                "{\"kind\": \"grid_poly\"}",
                "{\"kind\": \"rbf\", \"num_kernels\": [10]}",
            ),
        ] {
            let c = ExperimentConfig::parse(&TRAIN.replace(from, to)).unwrap();
            assert!(c.validate(Experiment::GridworldTrain).is_err(), "{to}");
        }
    }

    #[test]
    fn mountaincar_needs_rbf_and_absolute_delta() {
        let text = r#"{
            "experiment": "mountaincar-eval",
            "regularizer": {"kind": "shannon", "tau": 0.01},
            "truncation": {"delta": [500]},
            "alpha": 0.1, "beta": 0.1,
            "features": {"kind": "rbf", "num_kernels": [10, 20]},
            "algorithms": ["algorithm1", "qlearning"],
            "seeds": [0]
        }"#;
        let c = ExperimentConfig::parse(text).unwrap();
        c.validate(Experiment::MountaincarEval).unwrap();
        let c = ExperimentConfig::parse(&text.replace("\"delta\": [500]", "\"multipliers\": [1]"))
            .unwrap();
        assert!(c.validate(Experiment::MountaincarEval).is_err());
        let c = ExperimentConfig::parse(
            &text.replace("\"rbf\", \"num_kernels\": [10, 20]", "\"one_hot\""),
        )
        .unwrap();
        assert!(c.validate(Experiment::MountaincarEval).is_err());
    }
}

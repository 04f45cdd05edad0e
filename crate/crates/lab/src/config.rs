//! Experiment configuration, read from and re-emitted as TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsc_core::control::FixedTime;
use tsc_core::ppo::{AdvantageMode, Hyperparameters, RewardAggregation};
use tsc_core::sim::SimConfig;

use crate::dataset::{GaussianFlowParams, TurnRatios, UNIFORM_PRESET_HORIZON};
use crate::error::LabError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Hangzhou,
    Jinan,
    Synth4x4,
    Synth6x6,
    /// Explicit roadnet and flow files given under `[data]`.
    Files,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Hangzhou => "hangzhou",
            Self::Jinan => "jinan",
            Self::Synth4x4 => "synth4x4",
            Self::Synth6x6 => "synth6x6",
            Self::Files => "files",
        }
    }

    /// Roadnet and flow file names that the public releases ship with.
    fn known_files(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Self::Hangzhou => &[("roadnet_4_4.json", "anon_4_4_hangzhou_real.json"), ("roadnet.json", "flow.json")],
            Self::Jinan => &[("roadnet_3_4.json", "anon_3_4_jinan_real.json"), ("roadnet.json", "flow.json")],
            _ => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Fixed,
    #[value(name = "maxpressure")]
    MaxPressure,
    #[value(name = "dhlight")]
    DhLight,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::MaxPressure => "maxpressure",
            Self::DhLight => "dhlight",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" => Some(Self::Fixed),
            "maxpressure" => Some(Self::MaxPressure),
            "dhlight" => Some(Self::DhLight),
            _ => None,
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roadnet: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
    /// Directory searched for the Hangzhou or Jinan release files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Vehicle count of the Gaussian 4x4 demand.
    pub vehicles: usize,
    pub gaussian_horizon: f64,
    pub left: f64,
    pub through: f64,
    pub right: f64,
    /// Arrival cut-off of the uniform 6x6 demand.
    pub uniform_horizon: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let g = GaussianFlowParams::default();
        Self {
            vehicles: g.total,
            gaussian_horizon: g.horizon,
            left: g.ratios.left,
            through: g.ratios.through,
            right: g.ratios.right,
            uniform_horizon: UNIFORM_PRESET_HORIZON,
        }
    }
}

impl SyntheticConfig {
    pub fn gaussian(&self) -> Result<GaussianFlowParams, LabError> {
        Ok(GaussianFlowParams {
            total: self.vehicles,
            horizon: self.gaussian_horizon,
            ratios: TurnRatios::new(self.left, self.through, self.right)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedTimeConfig {
    pub cycle: f64,
    pub splits: [f64; 4],
}

impl Default for FixedTimeConfig {
    fn default() -> Self {
        let d = FixedTime::default();
        Self { cycle: d.cycle(), splits: d.splits() }
    }
}

/// TOML mirror of [`Hyperparameters`]; the episode length comes from the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperparameterConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub heads: usize,
    pub recon_lambda: f64,
    pub gamma2: f64,
    pub beta: f64,
    pub zeta: f64,
    pub embed_dim: usize,
    pub actor_hidden: usize,
    pub value_hidden: usize,
    pub epochs: usize,
    pub entropy_coef: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    pub obs_count_scale: f64,
    pub reward_scale: f64,
    /// `sum` or `mean`.
    pub reward_aggregation: String,
    /// `per_agent` or `shared`.
    pub advantage_mode: String,
    pub normalize_advantages: bool,
}

impl Default for HyperparameterConfig {
    fn default() -> Self {
        Self::from_hyperparameters(&Hyperparameters::default())
    }
}

impl HyperparameterConfig {
    pub fn from_hyperparameters(h: &Hyperparameters) -> Self {
        Self {
            gamma: h.gamma,
            gae_lambda: h.gae_lambda,
            clip_eps: h.clip_eps,
            learning_rate: h.learning_rate,
            batch_size: h.batch_size,
            episodes: h.episodes,
            buffer_capacity: h.buffer_capacity,
            heads: h.heads,
            recon_lambda: h.recon_lambda,
            gamma2: h.gamma2,
            beta: h.beta,
            zeta: h.zeta,
            embed_dim: h.embed_dim,
            actor_hidden: h.actor_hidden,
            value_hidden: h.value_hidden,
            epochs: h.epochs,
            entropy_coef: h.entropy_coef,
            max_grad_norm: h.max_grad_norm,
            obs_count_scale: h.obs_count_scale,
            reward_scale: h.reward_scale,
            reward_aggregation: match h.reward_aggregation {
                RewardAggregation::Sum => "sum",
                RewardAggregation::Mean => "mean",
            }
            .into(),
            advantage_mode: match h.advantage_mode {
                AdvantageMode::PerAgent => "per_agent",
                AdvantageMode::Shared => "shared",
            }
            .into(),
            normalize_advantages: h.normalize_advantages,
        }
    }

    pub fn to_hyperparameters(&self, episode_steps: usize) -> Result<Hyperparameters, LabError> {
        let reward_aggregation = match self.reward_aggregation.as_str() {
            "sum" => RewardAggregation::Sum,
            "mean" => RewardAggregation::Mean,
            other => {
                return Err(LabError::Config(format!("reward_aggregation must be `sum` or `mean`, got `{other}`")))
            }
        };
        let advantage_mode = match self.advantage_mode.as_str() {
            "per_agent" => AdvantageMode::PerAgent,
            "shared" => AdvantageMode::Shared,
            other => {
                return Err(LabError::Config(format!("advantage_mode must be `per_agent` or `shared`, got `{other}`")))
            }
        };
        let hp = Hyperparameters {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip_eps: self.clip_eps,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            episodes: self.episodes,
            buffer_capacity: self.buffer_capacity,
            heads: self.heads,
            recon_lambda: self.recon_lambda,
            gamma2: self.gamma2,
            beta: self.beta,
            zeta: self.zeta,
            embed_dim: self.embed_dim,
            actor_hidden: self.actor_hidden,
            value_hidden: self.value_hidden,
            epochs: self.epochs,
            episode_steps,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            obs_count_scale: self.obs_count_scale,
            reward_scale: self.reward_scale,
            reward_aggregation,
            advantage_mode,
            normalize_advantages: self.normalize_advantages,
        };
        hp.validate()?;
        Ok(hp)
    }
}

/// Parameters a sweep may vary.
pub const SWEEP_PARAMS: [&str; 10] = [
    "beta",
    "zeta",
    "learning_rate",
    "clip_eps",
    "gamma",
    "gae_lambda",
    "recon_lambda",
    "gamma2",
    "entropy_coef",
    "seed",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), LabError> {
        if !SWEEP_PARAMS.contains(&self.param.as_str()) {
            return Err(LabError::Config(format!(
                "cannot sweep `{}`; supported: {}",
                self.param,
                SWEEP_PARAMS.join(", ")
            )));
        }
        if self.values.is_empty() {
            return Err(LabError::Config("sweep needs at least one value".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(LabError::Config(format!("sweep value {v} is not finite")));
        }
        for (i, v) in self.values.iter().enumerate() {
            if self.values[..i].contains(v) {
                return Err(LabError::Config(format!("sweep value {v} is listed twice")));
            }
        }
        Ok(())
    }

    /// Parses a comma-separated value list such as `0.1,0.3`.
    pub fn parse_values(text: &str) -> Result<Vec<f64>, LabError> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| LabError::Config(format!("sweep value `{s}`: {e}"))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written to every results row; derived from the other fields when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub dataset: DatasetKind,
    pub controller: ControllerKind,
    pub seed: u64,
    pub delta_t: f64,
    pub horizon: f64,
    pub yellow: f64,
    pub out_dir: PathBuf,
    /// Measured seconds in `wall_secs`; off by default so reruns are byte-identical.
    pub record_wall_time: bool,
    /// Per-step phase and queue log of the final episode.
    pub replay_log: bool,
    /// Hyperedges after every training episode.
    pub hypergraph_dump: bool,
    pub data: DataPaths,
    pub synthetic: SyntheticConfig,
    pub fixed_time: FixedTimeConfig,
    pub hyperparameters: HyperparameterConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            dataset: DatasetKind::Synth4x4,
            controller: ControllerKind::DhLight,
            seed: 0,
            delta_t: 10.0,
            horizon: 3600.0,
            yellow: 0.0,
            out_dir: PathBuf::from("runs/default"),
            record_wall_time: false,
            replay_log: false,
            hypergraph_dump: false,
            data: DataPaths::default(),
            synthetic: SyntheticConfig::default(),
            fixed_time: FixedTimeConfig::default(),
            hyperparameters: HyperparameterConfig::default(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.roadnet, &mut cfg.data.flow, &mut cfg.data.dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{}-{}-s{}", self.controller, self.dataset.name(), self.seed))
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { delta_t: self.delta_t, yellow: self.yellow, ..SimConfig::default() }
    }

    /// Decisions per episode.
    pub fn episode_steps(&self) -> Result<usize, LabError> {
        let k = self.horizon / self.delta_t;
        if !(self.delta_t > 0.0 && self.horizon > 0.0 && k.is_finite()) || (k - k.round()).abs() > 1e-9 || k < 1.0 {
            return Err(LabError::Config(format!(
                "horizon {} must be a positive multiple of delta_t {}",
                self.horizon, self.delta_t
            )));
        }
        Ok(k.round() as usize)
    }

    pub fn hyperparameters(&self) -> Result<Hyperparameters, LabError> {
        self.hyperparameters.to_hyperparameters(self.episode_steps()?)
    }

    pub fn fixed_time_plan(&self) -> Result<FixedTime, LabError> {
        Ok(FixedTime::new(self.fixed_time.cycle, self.fixed_time.splits, self.delta_t)?)
    }

    /// Roadnet and flow files of a file-backed dataset, `None` for synthetic ones.
    pub fn dataset_files(&self) -> Result<Option<(PathBuf, PathBuf)>, LabError> {
        match self.dataset {
            DatasetKind::Synth4x4 | DatasetKind::Synth6x6 => Ok(None),
            DatasetKind::Files => match (&self.data.roadnet, &self.data.flow) {
                (Some(r), Some(f)) => Ok(Some((r.clone(), f.clone()))),
                _ => Err(LabError::Config("dataset `files` needs data.roadnet and data.flow".into())),
            },
            kind => {
                if let (Some(r), Some(f)) = (&self.data.roadnet, &self.data.flow) {
                    return Ok(Some((r.clone(), f.clone())));
                }
                let dir = self.data.dir.clone().unwrap_or_else(|| PathBuf::from("data").join(kind.name()));
                let found = kind
                    .known_files()
                    .iter()
                    .map(|(r, f)| (dir.join(r), dir.join(f)))
                    .find(|(r, f)| r.is_file() && f.is_file());
                found.map(Some).ok_or_else(|| {
                    LabError::Data(crate::dataset::DataError::Io {
                        path: dir.clone(),
                        source: std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("no {} roadnet/flow pair in this directory", kind.name()),
                        ),
                    })
                })
            }
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), LabError> {
        self.hyperparameters()?;
        self.sim_config().validate()?;
        if self.controller == ControllerKind::Fixed {
            self.fixed_time_plan()?;
        }
        match self.dataset {
            DatasetKind::Synth4x4 => {
                self.synthetic.gaussian()?;
            }
            DatasetKind::Synth6x6 => {
                if !(self.synthetic.uniform_horizon.is_finite() && self.synthetic.uniform_horizon > 0.0) {
                    return Err(LabError::Config("synthetic.uniform_horizon must be positive".into()));
                }
            }
            _ => {}
        }
        if let Some((r, f)) = self.dataset_files()? {
            for p in [r, f] {
                if !p.is_file() {
                    return Err(LabError::Data(crate::dataset::DataError::Io {
                        path: p,
                        source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                    }));
                }
            }
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        Ok(())
    }

    /// Returns a copy with one sweepable parameter set to `value`.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self, LabError> {
        let mut c = self.clone();
        let h = &mut c.hyperparameters;
        match param {
            "beta" => h.beta = value,
            "zeta" => h.zeta = value,
            "learning_rate" => h.learning_rate = value,
            "clip_eps" => h.clip_eps = value,
            "gamma" => h.gamma = value,
            "gae_lambda" => h.gae_lambda = value,
            "recon_lambda" => h.recon_lambda = value,
            "gamma2" => h.gamma2 = value,
            "entropy_coef" => h.entropy_coef = value,
            "seed" => {
                if !(value >= 0.0 && value.fract() == 0.0 && value <= u64::MAX as f64) {
                    return Err(LabError::Config(format!("seed must be a non-negative integer, got {value}")));
                }
                c.seed = value as u64;
            }
            other => return Err(LabError::Config(format!("cannot sweep `{other}`"))),
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let hp = cfg.hyperparameters().unwrap();
        assert_eq!(hp.episode_steps, 360);
        assert_eq!(HyperparameterConfig::from_hyperparameters(&hp), cfg.hyperparameters);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "controller = \"maxpressure\"\nseed = 4\n[hyperparameters]\nbeta = 0.5\n[sweep]\nparam = \"zeta\"\nvalues = [0.0, 0.1]\n",
        )
        .unwrap();
        assert_eq!(cfg.controller, ControllerKind::MaxPressure);
        assert_eq!(cfg.hyperparameters.beta, 0.5);
        assert_eq!(cfg.hyperparameters.gamma, 0.91);
        assert_eq!(cfg.run_id(), "maxpressure-synth4x4-s4");
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("controller = \"greedy\"").is_err());
        let mut cfg = ExperimentConfig { horizon: 3605.0, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        cfg.horizon = 3600.0;
        cfg.sweep = Some(SweepSpec { param: "beta".into(), values: vec![] });
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(SweepSpec { param: "beta".into(), values: vec![f64::NAN] });
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(SweepSpec { param: "depth".into(), values: vec![1.0] });
        assert!(cfg.validate().is_err());
        cfg.sweep = None;
        cfg.hyperparameters.advantage_mode = "mine".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_files_are_data_errors() {
        let cfg = ExperimentConfig {
            dataset: DatasetKind::Files,
            data: DataPaths {
                roadnet: Some("/nonexistent/r.json".into()),
                flow: Some("/nonexistent/f.json".into()),
                dir: None,
            },
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 3);
        let cfg = ExperimentConfig { dataset: DatasetKind::Files, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let cfg = ExperimentConfig {
            dataset: DatasetKind::Hangzhou,
            data: DataPaths { dir: Some("/nonexistent".into()), ..Default::default() },
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 3);
    }

    #[test]
    fn sweep_values_and_params() {
        assert_eq!(SweepSpec::parse_values("0.1, 0.3,0.5").unwrap(), vec![0.1, 0.3, 0.5]);
        assert!(SweepSpec::parse_values("0.1,x").is_err());
        let base = ExperimentConfig::default();
        assert_eq!(base.with_param("zeta", 0.5).unwrap().hyperparameters.zeta, 0.5);
        assert_eq!(base.with_param("seed", 3.0).unwrap().seed, 3);
        assert!(base.with_param("seed", 1.5).is_err());
        assert!(base.with_param("depth", 1.0).is_err());
    }
}

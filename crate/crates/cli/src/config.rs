//! TOML run configuration. Unknown keys are rejected; every command writes
//! the fully resolved configuration next to its outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rvp_core::calibration::{tune_lambda, TuningSpec};
use rvp_core::meta_risk::MetaRiskModel;
use rvp_core::model::{Layout, Loss};
use rvp_core::objectives::{LambdaSchedule, ObjectiveSpec, Smoothing};
use rvp_core::synth_data::GridConfig;
use rvp_core::trainer::{BatchMode, TrainConfig};

use crate::formats::parse_activation;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainSection,
    pub coverage: CoverageSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub p_eps: f64,
    pub train_probs: Vec<f64>,
    pub m_train: usize,
    pub m_test: usize,
    pub d_noise: usize,
    pub shape_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            p_eps: g.p_eps,
            train_probs: g.train_probs,
            m_train: g.m_train,
            m_test: g.m_test,
            d_noise: g.d_noise,
            shape_scale: g.shape_scale,
        }
    }
}

impl DataConfig {
    pub fn grid(&self, p_eps: f64, master_seed: u64) -> GridConfig {
        GridConfig {
            p_eps,
            train_probs: self.train_probs.clone(),
            m_train: self.m_train,
            m_test: self.m_test,
            d_noise: self.d_noise,
            shape_scale: self.shape_scale,
            master_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// One of erm, gdro, vrex, mmrex, quasidro, rvp, elastic.
    pub method: String,
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
    pub rho: f64,
    /// Elastic schedule as `[first epoch, lambda]` pairs.
    pub schedule: Vec<(usize, f64)>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    /// 0 means the subgradient at equal risks.
    pub smoothing: f64,
    pub report_every: usize,
    /// linear or mlp.
    pub model: String,
    pub hidden: usize,
    pub activation: String,
    /// Clip the logistic loss at this value when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_bound: Option<f64>,
    pub init_scale: f64,
    pub checkpoints: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            method: "erm".into(),
            lambda: 1.0,
            beta: 1.0,
            alpha: 0.0,
            rho: 1.0,
            schedule: vec![(0, 1.0), (100, 10_000.0)],
            epochs: rvp_core::trainer::DEFAULT_EPOCHS,
            learning_rate: rvp_core::trainer::DEFAULT_LEARNING_RATE,
            batch_size: 0,
            smoothing: 0.0,
            report_every: rvp_core::trainer::DEFAULT_REPORT_EVERY,
            model: "linear".into(),
            hidden: rvp_core::model::DEFAULT_HIDDEN,
            activation: "tanh".into(),
            loss_bound: None,
            init_scale: rvp_core::model::DEFAULT_INIT_SCALE,
            checkpoints: Vec::new(),
        }
    }
}

/// A method name with one hyperparameter value from a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hyper {
    None,
    Lambda(f64),
    Beta(f64),
    Alpha(f64),
}

pub const METHODS: [&str; 7] = ["erm", "gdro", "vrex", "mmrex", "quasidro", "rvp", "elastic"];

impl TrainSection {
    pub fn layout(&self, inputs: usize) -> Result<Layout> {
        match self.model.as_str() {
            "linear" => Ok(Layout::Linear { inputs }),
            "mlp" => Ok(Layout::Mlp {
                inputs,
                hidden: self.hidden,
                activation: parse_activation(&self.activation)?,
            }),
            other => bail!("unknown model {other:?} (expected linear or mlp)"),
        }
    }

    /// The objective for `method`, taking the swept value from `hyper` and
    /// everything else from this section.
    pub fn objective(&self, method: &str, hyper: Hyper) -> Result<ObjectiveSpec> {
        let pick = |default: f64| match hyper {
            Hyper::Lambda(v) | Hyper::Beta(v) | Hyper::Alpha(v) => v,
            Hyper::None => default,
        };
        Ok(match method {
            "erm" => ObjectiveSpec::Erm,
            "gdro" => ObjectiveSpec::GroupDro,
            "vrex" => ObjectiveSpec::VRex { beta: pick(self.beta) },
            "mmrex" => ObjectiveSpec::MmRex { alpha: pick(self.alpha) },
            "quasidro" => ObjectiveSpec::QuasiDro { alpha: pick(self.alpha), rho: self.rho },
            "rvp" => ObjectiveSpec::Rvp { lambda: pick(self.lambda) },
            "elastic" => ObjectiveSpec::Elastic(LambdaSchedule::new(self.schedule.clone())?),
            other => bail!("unknown method {other:?} (expected one of {})", METHODS.join(", ")),
        })
    }

    pub fn train_config(&self, objective: ObjectiveSpec, inputs: usize, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(objective, self.layout(inputs)?);
        cfg.epochs = self.epochs;
        cfg.learning_rate = self.learning_rate;
        cfg.batch_mode = match self.batch_size {
            0 => BatchMode::Full,
            b => BatchMode::Minibatch(b),
        };
        cfg.seed = seed;
        cfg.smoothing = if self.smoothing > 0.0 { Smoothing::Smoothed(self.smoothing) } else { Smoothing::Subgradient };
        cfg.report_every = self.report_every;
        cfg.loss = match self.loss_bound {
            Some(b) => Loss::ClippedLogistic(b),
            None => Loss::Logistic,
        };
        cfg.init_scale = self.init_scale;
        cfg.checkpoint_epochs = self.checkpoints.clone();
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSection {
    /// Penalty weight; derived from `gamma` and `n` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub gamma: f64,
    pub n: usize,
    pub trials: usize,
    pub model: MetaModelConfig,
}

impl Default for CoverageSection {
    fn default() -> Self {
        Self { lambda: None, gamma: 0.025, n: 50, trials: 100_000, model: MetaModelConfig::default() }
    }
}

impl CoverageSection {
    pub fn resolved_lambda(&self) -> Result<f64> {
        match self.lambda {
            Some(l) => Ok(l),
            None => Ok(tune_lambda(TuningSpec::new(self.gamma, self.n)?)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaModelConfig {
    /// truncated_normal, uniform, beta or constant.
    pub family: String,
    pub mean: f64,
    pub std_dev: f64,
    pub lower: f64,
    pub upper: f64,
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

impl Default for MetaModelConfig {
    fn default() -> Self {
        Self {
            family: "truncated_normal".into(),
            mean: 0.5,
            std_dev: 0.1,
            lower: 0.0,
            upper: 1.0,
            a: 2.0,
            b: 2.0,
            value: 0.5,
        }
    }
}

impl MetaModelConfig {
    pub fn model(&self) -> Result<MetaRiskModel> {
        let m = match self.family.as_str() {
            "truncated_normal" => MetaRiskModel::TruncatedNormal {
                mean: self.mean,
                std_dev: self.std_dev,
                lower: self.lower,
                upper: self.upper,
            },
            "uniform" => MetaRiskModel::Uniform { lower: self.lower, upper: self.upper },
            "beta" => MetaRiskModel::ScaledBeta { a: self.a, b: self.b, lower: self.lower, upper: self.upper },
            "constant" => MetaRiskModel::Constant { value: self.value },
            other => bail!("unknown risk model family {other:?}"),
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub methods: Vec<String>,
    /// Number of seeds per cell; seeds run from 0.
    pub seeds: u64,
    pub p_eps: Vec<f64>,
    /// RVP sweep.
    pub lambdas: Vec<f64>,
    /// V-REx sweep.
    pub betas: Vec<f64>,
    /// MM-REx and quasi-DRO sweep.
    pub alphas: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            methods: vec!["erm".into(), "rvp".into()],
            seeds: 3,
            p_eps: vec![0.25, 0.5],
            lambdas: vec![10.0, 100.0, 1000.0],
            betas: vec![10.0, 100.0, 1000.0],
            alphas: vec![1.0],
        }
    }
}

impl ExperimentSection {
    /// Every (method, swept value) pair in declaration order.
    pub fn cells(&self) -> Result<Vec<(String, Hyper)>> {
        let mut cells = Vec::new();
        for m in &self.methods {
            match m.as_str() {
                "erm" | "gdro" | "elastic" => cells.push((m.clone(), Hyper::None)),
                "rvp" => cells.extend(self.lambdas.iter().map(|&v| (m.clone(), Hyper::Lambda(v)))),
                "vrex" => cells.extend(self.betas.iter().map(|&v| (m.clone(), Hyper::Beta(v)))),
                "mmrex" | "quasidro" => cells.extend(self.alphas.iter().map(|&v| (m.clone(), Hyper::Alpha(v)))),
                other => bail!("unknown method {other:?} (expected one of {})", METHODS.join(", ")),
            }
        }
        if cells.is_empty() {
            bail!("experiment names no runs");
        }
        Ok(cells)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("--seed is required")
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }

    /// Writes the resolved configuration into the output directory.
    pub fn capture(&self) -> Result<()> {
        let path = self.out()?.join(RESOLVED_CONFIG);
        crate::formats::write_atomic(&path, self.to_toml()?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig { seed: Some(3), out: Some("o".into()), ..Default::default() };
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[train]\nlearnig_rate = 0.1\n").is_err());
        assert!(RunConfig::parse("bogus = 1\n").is_err());
        let ok = RunConfig::parse("seed = 4\n[train]\nlearning_rate = 0.5\n").unwrap();
        assert_eq!(ok.train.learning_rate, 0.5);
        assert_eq!(ok.seed, Some(4));
    }

    #[test]
    fn experiment_cells() {
        let e = ExperimentSection {
            methods: vec!["erm".into(), "rvp".into(), "elastic".into()],
            lambdas: vec![10.0, 100.0],
            ..Default::default()
        };
        assert_eq!(e.cells().unwrap().len(), 4);
        let bad = ExperimentSection { methods: vec!["irm".into()], ..Default::default() };
        assert!(bad.cells().is_err());
    }

    #[test]
    fn coverage_lambda_defaults_to_tuning_rule() {
        let c = CoverageSection { n: 3, ..Default::default() };
        assert!((c.resolved_lambda().unwrap() - 1.131586).abs() < 1e-6);
    }
}

//! Run configuration file: a single TOML document with one section per
//! subsystem. Every section is optional and defaults to the standard
//! benchmark values; unknown keys and out-of-range values are rejected with
//! the offending field named.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineConfig, BaselineRunContext};
use crate::error::{Error, Result};
use crate::orchestrator::{InitialTrajectory, RunContext};
use crate::solver::SolverConfig;
use crate::task::{DubinsParams, TaskSpec};
use crate::trainer::{LossWeights, TrainerConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub task: DubinsParams,
    pub weights: WeightsSection,
    pub trainer: TrainerConfig,
    pub solver: SolverConfig,
    pub baseline: BaselineSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_ite: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// "auto" generates the built-in maneuver; anything else is a JSONL path.
    pub initial_trajectory: String,
    pub behind_offsets: Vec<f64>,
    pub heatmap_theta: f64,
    pub heatmap_resolution: usize,
    pub containment_samples: usize,
    /// Optional larger step count for the initial training round.
    pub bootstrap_n_iter: Option<usize>,
    pub bootstrap_cert: Option<PathBuf>,
    pub bootstrap_policy: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            n_ite: 5,
            seed: 0,
            out_dir: PathBuf::from("runs/benchmark"),
            initial_trajectory: "auto".into(),
            behind_offsets: vec![-0.3, 0.35, 0.7, 1.05, 1.4],
            heatmap_theta: -std::f64::consts::FRAC_PI_4,
            heatmap_resolution: 100,
            containment_samples: 10_000,
            bootstrap_n_iter: None,
            bootstrap_cert: None,
            bootstrap_policy: None,
        }
    }
}

/// Loss weights section; the level and discount always follow the task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection {
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
            a4: 1.0,
            a5: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Candidate budget per step: a positive integer or "all".
    pub k_candidates: KCandidates,
    pub dedupe_tol: f64,
    pub reach_margin: f64,
    pub max_inner: usize,
    pub max_outer: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let d = BaselineConfig::default();
        BaselineSection {
            k_candidates: match d.k_candidates {
                Some(k) => KCandidates::K(k),
                None => KCandidates::All,
            },
            dedupe_tol: d.dedupe_tol,
            reach_margin: d.reach_margin,
            max_inner: d.solver.max_inner,
            max_outer: d.solver.max_outer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KCandidates {
    /// The literal string "all".
    All,
    K(usize),
}

impl KCandidates {
    pub fn as_option(&self) -> Option<usize> {
        match self {
            KCandidates::All => None,
            KCandidates::K(k) => Some(*k),
        }
    }
}

impl Serialize for KCandidates {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KCandidates::All => serializer.serialize_str("all"),
            KCandidates::K(k) => serializer.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KCandidates {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(k) => Ok(KCandidates::K(k)),
            Raw::Text(s) if s == "all" => Ok(KCandidates::All),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "k_candidates must be a positive integer or \"all\", got \"{s}\""
            ))),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: Config = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.trainer.validate("trainer")?;
        self.solver.validate("solver")?;
        self.weights_struct().validate("weights")?;
        self.baseline_config().validate("baseline")?;
        if self.run.n_ite == 0 {
            return Err(Error::Config("run.n_ite must be >= 1".into()));
        }
        if self.run.heatmap_resolution < 2 {
            return Err(Error::Config("run.heatmap_resolution must be >= 2".into()));
        }
        if self.run.containment_samples == 0 {
            return Err(Error::Config("run.containment_samples must be >= 1".into()));
        }
        if let Some(n) = self.run.bootstrap_n_iter {
            if n == 0 {
                return Err(Error::Config("run.bootstrap_n_iter must be >= 1".into()));
            }
        }
        if self.run.bootstrap_cert.is_some() != self.run.bootstrap_policy.is_some() {
            return Err(Error::Config(
                "run.bootstrap_cert and run.bootstrap_policy must be given together".into(),
            ));
        }
        match self.run.initial_trajectory.as_str() {
            "auto" => {}
            path if !path.is_empty() => {}
            _ => {
                return Err(Error::Config(
                    "run.initial_trajectory must be \"auto\" or a dataset path".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        TaskSpec::dubins_benchmark(&self.task)
    }

    pub fn weights_struct(&self) -> LossWeights {
        LossWeights {
            a1: self.weights.a1,
            a2: self.weights.a2,
            a3: self.weights.a3,
            a4: self.weights.a4,
            a5: self.weights.a5,
            level: self.task.level,
            gamma: self.task.gamma,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            k_candidates: self.baseline.k_candidates.as_option(),
            dedupe_tol: self.baseline.dedupe_tol,
            reach_margin: self.baseline.reach_margin,
            solver: SolverConfig {
                max_inner: self.baseline.max_inner,
                max_outer: self.baseline.max_outer,
                ..self.solver
            },
        }
    }

    pub fn initial_trajectory(&self) -> InitialTrajectory {
        if self.run.initial_trajectory == "auto" {
            InitialTrajectory::Generate
        } else {
            InitialTrajectory::File(PathBuf::from(&self.run.initial_trajectory))
        }
    }

    /// Builds the full-run context; `seed`/`out_dir` override the file.
    pub fn run_context(&self, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<RunContext> {
        let task = self.task_spec()?;
        Ok(RunContext {
            task,
            trainer: self.trainer.clone(),
            weights: self.weights_struct(),
            solver: self.solver,
            n_ite: self.run.n_ite,
            seed: seed.unwrap_or(self.run.seed),
            out_dir: out_dir.unwrap_or_else(|| self.run.out_dir.clone()),
            initial: self.initial_trajectory(),
            behind_offsets: self.run.behind_offsets.clone(),
            heatmap_theta: self.run.heatmap_theta,
            heatmap_resolution: self.run.heatmap_resolution,
            containment_samples: self.run.containment_samples,
            bootstrap_params: match (&self.run.bootstrap_cert, &self.run.bootstrap_policy) {
                (Some(c), Some(p)) => Some((c.clone(), p.clone())),
                _ => None,
            },
            bootstrap_n_iter: self.run.bootstrap_n_iter,
        })
    }

    pub fn baseline_context(
        &self,
        out_dir: Option<PathBuf>,
        k_override: Option<KCandidates>,
    ) -> Result<BaselineRunContext> {
        let task = self.task_spec()?;
        let mut baseline = self.baseline_config();
        if let Some(k) = k_override {
            baseline.k_candidates = k.as_option();
        }
        Ok(BaselineRunContext {
            task,
            baseline,
            n_ite: self.run.n_ite,
            out_dir: out_dir.unwrap_or_else(|| self.run.out_dir.join("baseline")),
            initial: self.initial_trajectory(),
        })
    }
}

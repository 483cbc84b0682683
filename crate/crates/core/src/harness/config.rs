use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::exec::Execution;
use crate::optim::{Adam, AdamConfig, FixedLaw, LastStepRule, MomentumSgd, Nesterov, Optimizer, Rllc, RllcConfig, Sgd};
use crate::propagators::Propagator;
use crate::tasks::{
    load_idx, synthetic_classification, Dataset, LogisticTask, MlpTask, Normalization, QuadraticTask, RosenbrockTask,
    SplitFractions, Task, MNIST_NORMALIZATION,
};

fn default_beta() -> f64 {
    0.9
}
fn one() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    crate::numerics::DEFAULT_EPSILON
}
fn default_log_every() -> usize {
    50
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn mnist() -> Normalization {
    MNIST_NORMALIZATION
}
fn default_train_fraction() -> f64 {
    0.9
}
fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        samples: usize,
        features: usize,
        classes: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        standardize: bool,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
        #[serde(default = "mnist")]
        normalization: Normalization,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// A dataset written by `Dataset::save`.
    File { path: PathBuf },
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DataSpec::Synthetic {
                samples,
                features,
                classes,
                separation,
                seed,
                standardize,
            } => {
                let d = synthetic_classification(*samples, *features, *classes, *separation, *seed)?;
                if *standardize {
                    d.standardize()
                } else {
                    d
                }
            }
            DataSpec::Idx {
                images,
                labels,
                limit,
                normalization,
                train_fraction,
                val_fraction,
            } => load_idx(
                images,
                labels,
                *limit,
                normalization.clone(),
                SplitFractions {
                    train: *train_fraction,
                    val: *val_fraction,
                },
            )?,
            DataSpec::File { path } => Dataset::load(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Quadratic {
        n: usize,
        condition: f64,
        /// Seed of the random rotation.
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        noise: f64,
    },
    Rosenbrock {
        n: usize,
    },
    Logistic {
        data: DataSpec,
        #[serde(default)]
        l2: f64,
        batch: usize,
    },
    Mlp {
        data: DataSpec,
        hidden: Vec<usize>,
        batch: usize,
    },
}

impl TaskSpec {
    pub fn build(&self, exec: Execution) -> Result<Arc<dyn Task>> {
        Ok(match self {
            TaskSpec::Quadratic {
                n,
                condition,
                seed,
                noise,
            } => Arc::new(QuadraticTask::new(*n, *condition, *seed)?.with_noise(*noise)),
            TaskSpec::Rosenbrock { n } => Arc::new(RosenbrockTask::new(*n)?),
            TaskSpec::Logistic { data, l2, batch } => {
                Arc::new(LogisticTask::new(Arc::new(data.load()?), *l2, *batch)?.with_execution(exec))
            }
            TaskSpec::Mlp { data, hidden, batch } => {
                Arc::new(MlpTask::new(Arc::new(data.load()?), hidden, *batch)?.with_execution(exec))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
    },
    Momentum {
        lr: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Nesterov {
        lr: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    FixedLaw {
        propagator: String,
        law: Vec<f64>,
        #[serde(default = "one")]
        base_lr: f64,
    },
    Rllc {
        propagator: String,
        c1: f64,
        c2: f64,
        /// Defaults to all ones.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        law0: Option<Vec<f64>>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// RLLC over a single memory unit holding the last step of `inner`.
    LastStep {
        inner: Box<OptimizerSpec>,
        c1: f64,
        c2: f64,
        #[serde(default = "one")]
        law0: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

impl OptimizerSpec {
    pub fn build(&self, dim: usize) -> Result<Box<dyn Optimizer>> {
        Ok(match self {
            OptimizerSpec::Sgd { lr } => Box::new(Sgd::new(dim, *lr)?),
            OptimizerSpec::Momentum { lr, beta } => Box::new(MomentumSgd::new(dim, *lr, *beta)?),
            OptimizerSpec::Nesterov { lr, beta } => Box::new(Nesterov::new(dim, *lr, *beta)?),
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => Box::new(Adam::new(
                dim,
                AdamConfig {
                    lr: *lr,
                    beta1: *beta1,
                    beta2: *beta2,
                    eps: *eps,
                },
            )?),
            OptimizerSpec::FixedLaw {
                propagator,
                law,
                base_lr,
            } => Box::new(FixedLaw::new(
                dim,
                Propagator::parse(propagator)?,
                law.clone(),
                *base_lr,
            )?),
            OptimizerSpec::Rllc {
                propagator,
                c1,
                c2,
                law0,
                epsilon,
            } => {
                let p = Propagator::parse(propagator)?;
                let law0 = law0.clone().unwrap_or_else(|| vec![1.0; p.dim()]);
                Box::new(Rllc::new(dim, p, RllcConfig::new(*c1, *c2, *epsilon), law0)?)
            }
            OptimizerSpec::LastStep {
                inner,
                c1,
                c2,
                law0,
                epsilon,
            } => {
                let rule = LastStepRule::new(inner.build(dim)?);
                Box::new(Rllc::with_rule(
                    dim,
                    rule,
                    RllcConfig::new(*c1, *c2, *epsilon),
                    vec![*law0],
                )?)
            }
        })
    }

    /// Short human-readable name: the propagator expression for law-based
    /// optimizers, the method name otherwise.
    pub fn family(&self) -> String {
        match self {
            OptimizerSpec::Sgd { .. } => "SGD".into(),
            OptimizerSpec::Momentum { beta, .. } => format!("momentum({beta})"),
            OptimizerSpec::Nesterov { beta, .. } => format!("NAG({beta})"),
            OptimizerSpec::Adam { .. } => "Adam".into(),
            OptimizerSpec::FixedLaw { propagator, .. } => format!("fixed {}", label_of(propagator)),
            OptimizerSpec::Rllc { propagator, .. } => label_of(propagator),
            OptimizerSpec::LastStep { inner, .. } => format!("last-step {}", inner.family()),
        }
    }

    /// The primary learning rate (`c1` or `base_lr` for law-based optimizers).
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr }
            | OptimizerSpec::Momentum { lr, .. }
            | OptimizerSpec::Nesterov { lr, .. }
            | OptimizerSpec::Adam { lr, .. } => lr,
            OptimizerSpec::FixedLaw { base_lr, .. } => base_lr,
            OptimizerSpec::Rllc { c1, .. } | OptimizerSpec::LastStep { c1, .. } => c1,
        }
    }

    /// The learning-law learning rate `c2`, for RLLC optimizers.
    pub fn law_lr(&self) -> Option<f64> {
        match *self {
            OptimizerSpec::Rllc { c2, .. } | OptimizerSpec::LastStep { c2, .. } => Some(c2),
            _ => None,
        }
    }

    pub fn with_lr(&self, value: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            OptimizerSpec::Sgd { lr }
            | OptimizerSpec::Momentum { lr, .. }
            | OptimizerSpec::Nesterov { lr, .. }
            | OptimizerSpec::Adam { lr, .. } => *lr = value,
            OptimizerSpec::FixedLaw { base_lr, .. } => *base_lr = value,
            OptimizerSpec::Rllc { c1, .. } | OptimizerSpec::LastStep { c1, .. } => *c1 = value,
        }
        s
    }

    pub fn with_law_lr(&self, value: f64) -> Result<Self> {
        let mut s = self.clone();
        match &mut s {
            OptimizerSpec::Rllc { c2, .. } | OptimizerSpec::LastStep { c2, .. } => *c2 = value,
            other => {
                return Err(HarnessError::Config(format!(
                    "{} has no learning-law learning rate",
                    other.family()
                )))
            }
        }
        Ok(s)
    }

    pub fn with_epsilon(&self, value: f64) -> Self {
        let mut s = self.clone();
        if let OptimizerSpec::Rllc { epsilon, .. } | OptimizerSpec::LastStep { epsilon, .. } = &mut s {
            *epsilon = value;
        }
        s
    }

    pub fn is_rllc(&self) -> bool {
        self.law_lr().is_some()
    }

    /// `beta` when the optimizer runs over exactly `M(beta) ⊕ M(0)`.
    pub fn momentum_sgd_beta(&self) -> Option<f64> {
        match self {
            OptimizerSpec::Rllc { propagator, .. } | OptimizerSpec::FixedLaw { propagator, .. } => {
                Propagator::parse(propagator).ok()?.momentum_sgd_pair()
            }
            _ => None,
        }
    }
}

fn label_of(expr: &str) -> String {
    Propagator::parse(expr).map_or_else(|_| expr.to_string(), |p| p.label().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Directory for per-run CSVs, relative to the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub execution: Execution,
    pub task: TaskSpec,
    pub optimizer: OptimizerSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config(format!("experiment '{}' has no seeds", self.name)));
        }
        if self.log_every == 0 {
            return Err(HarnessError::Config(format!(
                "experiment '{}' has log_every = 0",
                self.name
            )));
        }
        if self.name.is_empty() {
            return Err(HarnessError::Config("experiment name is empty".into()));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the canonical serialization.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
        })
    }
}

/// A hyperparameter grid: every `lr` (and every `law_lr` for RLLC
/// optimizers) applied to a base optimizer, one cell per combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Row label in the best-cell table, e.g. "momentum" or "M(0.9)".
    pub name: String,
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    pub lr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub law_lr: Vec<f64>,
    pub task: TaskSpec,
    pub optimizer: OptimizerSpec,
}

impl GridSpec {
    /// Expands the grid into one experiment per hyperparameter combination.
    pub fn cells(&self) -> Result<Vec<ExperimentConfig>> {
        if self.lr.is_empty() {
            return Err(HarnessError::Config(format!(
                "grid '{}' has no learning rates",
                self.name
            )));
        }
        let law: Vec<Option<f64>> = if self.optimizer.is_rllc() {
            if self.law_lr.is_empty() {
                vec![self.optimizer.law_lr()]
            } else {
                self.law_lr.iter().copied().map(Some).collect()
            }
        } else if self.law_lr.is_empty() {
            vec![None]
        } else {
            return Err(HarnessError::Config(format!(
                "grid '{}': law_lr given for an optimizer without a learning law",
                self.name
            )));
        };
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &c2 in &law {
                let mut opt = self.optimizer.with_lr(lr);
                let mut name = format!("{}/lr={lr}", self.name);
                if let Some(c2) = c2 {
                    opt = opt.with_law_lr(c2)?;
                    name.push_str(&format!(",law_lr={c2}"));
                }
                out.push(ExperimentConfig {
                    name,
                    steps: self.steps,
                    seeds: self.seeds.clone(),
                    log_every: self.log_every,
                    output: None,
                    execution: Execution::Sequential,
                    task: self.task.clone(),
                    optimizer: opt,
                });
            }
        }
        Ok(out)
    }
}

/// Top-level config file: any number of `[[experiment]]` and `[[grid]]`
/// tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Suite output directory, relative to the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experiment: Vec<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridSpec>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for e in &cfg.experiment {
            e.validate()?;
        }
        for g in &cfg.grid {
            for c in g.cells()? {
                c.validate()?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every runnable cell: plain experiments first, then grid cells, each
    /// tagged with its group name.
    pub fn cells(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        let mut out: Vec<(String, ExperimentConfig)> =
            self.experiment.iter().map(|e| (e.name.clone(), e.clone())).collect();
        for g in &self.grid {
            out.extend(g.cells()?.into_iter().map(|c| (g.name.clone(), c)));
        }
        Ok(out)
    }
}

use serde::{Deserialize, Serialize};

use crate::autograd::{LrSchedule, OptimizerKind, OptimizerState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

pub const DEFAULT_LR_GAMMA: f32 = 0.1;

/// Per-job training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerChoice,
    pub lr_milestones: Option<Vec<u32>>,
    pub lr_gamma: f32,
    pub momentum: f32,
    pub seed: u64,
}

/// The document as written by users; every field is checked before use.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyper {
    epochs: i64,
    batch_size: i64,
    learning_rate: f64,
    optimizer: String,
    lr_milestones: Option<Vec<i64>>,
    lr_gamma: Option<f64>,
    momentum: Option<f64>,
    seed: Option<u64>,
}

impl HyperParams {
    pub fn new(epochs: u32, batch_size: usize, learning_rate: f32, optimizer: OptimizerChoice) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            optimizer,
            lr_milestones: None,
            lr_gamma: DEFAULT_LR_GAMMA,
            momentum: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_momentum(mut self, momentum: f32) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_milestones(mut self, milestones: Vec<u32>, gamma: f32) -> Self {
        self.lr_milestones = Some(milestones);
        self.lr_gamma = gamma;
        self
    }

    /// Parses a JSON hyper-parameter document. Absent optional fields take
    /// their defaults: no schedule, seed 0, momentum 0, gamma 0.1.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawHyper = serde_json::from_str(text)?;
        let positive = |name: &str, v: i64| -> Result<i64> {
            if v > 0 {
                Ok(v)
            } else {
                Err(Error::InvalidHyperParams(format!("`{name}` must be positive, got {v}")))
            }
        };
        let epochs = u32::try_from(positive("epochs", raw.epochs)?)
            .map_err(|_| Error::InvalidHyperParams("`epochs` is too large".into()))?;
        let batch_size = positive("batch_size", raw.batch_size)? as usize;
        let optimizer = match raw.optimizer.to_ascii_lowercase().as_str() {
            "sgd" => OptimizerChoice::Sgd,
            "adam" => OptimizerChoice::Adam,
            other => return Err(Error::InvalidHyperParams(format!("unknown optimizer `{other}`"))),
        };
        let lr_milestones = raw
            .lr_milestones
            .map(|ms| {
                ms.into_iter()
                    .map(|m| {
                        positive("lr_milestones", m)
                            .and_then(|m| u32::try_from(m).map_err(|_| Error::InvalidHyperParams("milestone too large".into())))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let hyper = HyperParams {
            epochs,
            batch_size,
            learning_rate: raw.learning_rate as f32,
            optimizer,
            lr_milestones,
            lr_gamma: raw.lr_gamma.map_or(DEFAULT_LR_GAMMA, |g| g as f32),
            momentum: raw.momentum.unwrap_or(0.0) as f32,
            seed: raw.seed.unwrap_or(0),
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidHyperParams(msg));
        if self.epochs == 0 {
            return fail("`epochs` must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("`batch_size` must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("`learning_rate` must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_gamma.is_finite() && self.lr_gamma > 0.0) {
            return fail(format!("`lr_gamma` must be positive, got {}", self.lr_gamma));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("`momentum` must be in [0, 1), got {}", self.momentum));
        }
        if self.optimizer == OptimizerChoice::Adam && self.momentum != 0.0 {
            return fail("`momentum` applies to sgd only".into());
        }
        if let Some(ms) = &self.lr_milestones {
            if ms.windows(2).any(|w| w[0] >= w[1]) {
                return fail("`lr_milestones` must be strictly increasing".into());
            }
            if ms.iter().any(|&m| m == 0 || m >= self.epochs) {
                return fail("`lr_milestones` must lie in [1, epochs)".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("hyper-parameters always serialize")
    }

    /// Fresh optimizer state for these hyper-parameters.
    pub fn optimizer_state(&self) -> OptimizerState {
        let kind = match self.optimizer {
            OptimizerChoice::Sgd => OptimizerKind::Sgd {
                momentum: self.momentum,
            },
            OptimizerChoice::Adam => OptimizerKind::adam(),
        };
        let schedule = self.lr_milestones.as_ref().map(|ms| LrSchedule {
            milestones: ms.clone(),
            gamma: self.lr_gamma,
        });
        OptimizerState::new(kind, self.learning_rate, schedule)
    }
}

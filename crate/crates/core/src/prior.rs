//! Zero-shot scoring from the source classifier bank and the schedules that
//! mix the zero-shot score with the actively learned model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{RelationMatrix, SourceBank};
use crate::svm::{dot, LinearModel};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("no relation weights for target class {0:?}")]
    UnknownTarget(String),
    #[error("relation row has {found} weights but the source bank has {expected}")]
    WeightCount { expected: usize, found: usize },
    #[error("dimension mismatch: prior has {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

pub type Result<T, E = PriorError> = std::result::Result<T, E>;

/// A zero-shot classifier for one target class: the relation-weighted sum
/// of the source classifiers, collapsed into a single linear scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotPrior {
    beta: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl ZeroShotPrior {
    pub fn new(bank: &SourceBank, beta: &[f64]) -> Result<ZeroShotPrior> {
        if beta.len() != bank.len() {
            return Err(PriorError::WeightCount {
                expected: bank.len(),
                found: beta.len(),
            });
        }
        let mut w = vec![0.0; bank.dim()];
        let mut b = 0.0;
        for (k, &beta_k) in beta.iter().enumerate() {
            for (wi, si) in w.iter_mut().zip(bank.weights(k)) {
                *wi += beta_k * si;
            }
            b += beta_k * bank.bias(k);
        }
        Ok(ZeroShotPrior {
            beta: beta.to_vec(),
            w,
            b,
        })
    }

    pub fn for_target(
        bank: &SourceBank,
        relations: &RelationMatrix,
        target: &str,
    ) -> Result<ZeroShotPrior> {
        let beta = relations
            .row_for(target)
            .ok_or_else(|| PriorError::UnknownTarget(target.to_string()))?;
        ZeroShotPrior::new(bank, beta)
    }

    /// An uninformative prior: a random direction rescaled to `norm`.
    pub fn random(dim: usize, norm: f64, seed: u64) -> ZeroShotPrior {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let len = dot(&w, &w).sqrt();
        if len > 0.0 {
            w.iter_mut().for_each(|v| *v *= norm / len);
        }
        ZeroShotPrior {
            beta: Vec::new(),
            w,
            b: 0.0,
        }
    }

    /// The constant-zero prior.
    pub fn zero(dim: usize) -> ZeroShotPrior {
        ZeroShotPrior {
            beta: Vec::new(),
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> f64 {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn zs_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(PriorError::DimensionMismatch {
                expected: self.w.len(),
                found: x.len(),
            });
        }
        Ok(self.score(x))
    }

    pub(crate) fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Prior used at t = 0 only.
    Vanilla,
    Constant,
    InverseDecay,
    LinearDecay,
}

impl std::str::FromStr for ScheduleKind {
    type Err = PriorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(ScheduleKind::Vanilla),
            "constant" => Ok(ScheduleKind::Constant),
            "inverse_decay" | "inverse-decay" | "inverse" => Ok(ScheduleKind::InverseDecay),
            "linear_decay" | "linear-decay" | "linear" => Ok(ScheduleKind::LinearDecay),
            other => Err(PriorError::InvalidSchedule(format!(
                "unknown prior schedule {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSchedule {
    pub kind: ScheduleKind,
    #[serde(default = "default_t0")]
    pub t0: u32,
    /// Iteration from which the prior weight is forced to zero; 0 disables.
    #[serde(default = "default_drop_after")]
    pub drop_after: u32,
}

fn default_t0() -> u32 {
    20
}

fn default_drop_after() -> u32 {
    150
}

impl PriorSchedule {
    pub fn new(kind: ScheduleKind) -> PriorSchedule {
        PriorSchedule {
            kind,
            t0: default_t0(),
            drop_after: default_drop_after(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t0 == 0 {
            return Err(PriorError::InvalidSchedule("t0 must be at least 1".into()));
        }
        Ok(())
    }

    /// Coefficients on the zero-shot score and on the model score at
    /// iteration `t`.
    pub fn mix_weights(&self, t: u32) -> MixWeights {
        let t_f = t as f64;
        let (prior, model) = match self.kind {
            ScheduleKind::Vanilla => (if t == 0 { 1.0 } else { 0.0 }, 1.0),
            ScheduleKind::Constant => (1.0, 1.0),
            ScheduleKind::InverseDecay => (1.0 / (t_f + 1.0), 1.0),
            ScheduleKind::LinearDecay => {
                let t0 = self.t0 as f64;
                (t0 / (t_f + t0), t_f / (t_f + t0))
            }
        };
        let prior = if self.drop_after > 0 && t >= self.drop_after {
            0.0
        } else {
            prior
        };
        MixWeights { prior, model }
    }
}

impl Default for PriorSchedule {
    fn default() -> Self {
        PriorSchedule::new(ScheduleKind::Constant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixWeights {
    pub prior: f64,
    pub model: f64,
}

/// `eta_prior * f_zs(x) + eta_model * (w.x + b)` at iteration `t`.
pub fn combined_score(
    prior: &ZeroShotPrior,
    schedule: &PriorSchedule,
    model: &LinearModel,
    x: &[f64],
    t: u32,
) -> Result<f64> {
    if x.len() != prior.dim() || x.len() != model.dim() {
        return Err(PriorError::DimensionMismatch {
            expected: prior.dim(),
            found: x.len(),
        });
    }
    let eta = schedule.mix_weights(t);
    Ok(mixed(prior, model, eta, x))
}

pub(crate) fn mixed(prior: &ZeroShotPrior, model: &LinearModel, eta: MixWeights, x: &[f64]) -> f64 {
    let mut s = 0.0;
    if eta.prior != 0.0 {
        s += eta.prior * prior.score(x);
    }
    if eta.model != 0.0 {
        s += eta.model * model.score(x);
    }
    s
}

//! Margin zones, query selection rules and the sampling statistics kept
//! alongside them.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no unlabeled samples left to query")]
    EmptyPool,
    #[error("{ids} sample ids but {scores} scores")]
    Misaligned { ids: usize, scores: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

pub type Result<T, E = SamplerError> = std::result::Result<T, E>;

/// Position of a score relative to the margin: below -1, within [-1, 1],
/// above +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    #[serde(rename = "F_minus")]
    FMinus,
    #[serde(rename = "F_zero")]
    FZero,
    #[serde(rename = "F_plus")]
    FPlus,
}

impl Zone {
    pub fn of(score: f64) -> Zone {
        if score < -1.0 {
            Zone::FMinus
        } else if score > 1.0 {
            Zone::FPlus
        } else {
            Zone::FZero
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Zone::FMinus => "F_minus",
            Zone::FZero => "F_zero",
            Zone::FPlus => "F_plus",
        })
    }
}

pub fn partition(scores: &[f64]) -> Vec<Zone> {
    scores.iter().map(|&s| Zone::of(s)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneHistogram {
    #[serde(rename = "F_minus")]
    pub f_minus: usize,
    #[serde(rename = "F_zero")]
    pub f_zero: usize,
    #[serde(rename = "F_plus")]
    pub f_plus: usize,
}

impl ZoneHistogram {
    pub fn from_scores(scores: &[f64]) -> ZoneHistogram {
        let mut h = ZoneHistogram::default();
        for z in partition(scores) {
            match z {
                Zone::FMinus => h.f_minus += 1,
                Zone::FZero => h.f_zero += 1,
                Zone::FPlus => h.f_plus += 1,
            }
        }
        h
    }

    pub fn total(&self) -> usize {
        self.f_minus + self.f_zero + self.f_plus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Top score while too few positives (or during burn-in), else the
    /// most uncertain sample.
    Mcle,
    FplusOnly,
    FzeroOnly,
    FminusOnly,
    Random,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Mcle,
        StrategyKind::FplusOnly,
        StrategyKind::FzeroOnly,
        StrategyKind::FminusOnly,
        StrategyKind::Random,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            StrategyKind::Mcle => "mcle",
            StrategyKind::FplusOnly => "fplus",
            StrategyKind::FzeroOnly => "fzero",
            StrategyKind::FminusOnly => "fminus",
            StrategyKind::Random => "random",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcle" => Ok(StrategyKind::Mcle),
            "fplus" | "fplus_only" => Ok(StrategyKind::FplusOnly),
            "fzero" | "fzero_only" => Ok(StrategyKind::FzeroOnly),
            "fminus" | "fminus_only" => Ok(StrategyKind::FminusOnly),
            "random" => Ok(StrategyKind::Random),
            other => Err(SamplerError::InvalidStrategy(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "default_rho_prime")]
    pub rho_prime: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_rho_prime() -> f64 {
    0.5
}

fn default_burn_in() -> u32 {
    10
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> StrategyConfig {
        StrategyConfig {
            kind,
            rho_prime: default_rho_prime(),
            burn_in: default_burn_in(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_prime > 0.0 && self.rho_prime < 1.0) {
            return Err(SamplerError::InvalidStrategy(format!(
                "rho_prime must lie in (0, 1), got {}",
                self.rho_prime
            )));
        }
        Ok(())
    }
}

/// Fraction of positives among the labels queried so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceStat {
    pub n_pos: u32,
    pub n_neg: u32,
    pub rho: f64,
}

impl BalanceStat {
    pub fn update(&mut self, label: Label) {
        match label {
            Label::Positive => self.n_pos += 1,
            Label::Negative => self.n_neg += 1,
        }
        self.rho = self.n_pos as f64 / (self.n_pos + self.n_neg) as f64;
    }
}

/// Label likelihoods for queries drawn from `F_plus` and `F_zero`.
///
/// Each update adds, to every cell, that cell's count divided by the number
/// of tracked queries so far, then renormalises all four cells jointly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodTracker {
    pub p_pos_fplus: f64,
    pub p_neg_fplus: f64,
    pub p_pos_fzero: f64,
    pub p_neg_fzero: f64,
    /// Counts in the same cell order.
    pub counts: [u32; 4],
    /// Number of tracked updates.
    pub t: u32,
}

impl Default for LikelihoodTracker {
    fn default() -> Self {
        // 0.5 and 0.1 on the positive cells, the remaining 0.4 split evenly
        LikelihoodTracker {
            p_pos_fplus: 0.5,
            p_neg_fplus: 0.2,
            p_pos_fzero: 0.1,
            p_neg_fzero: 0.2,
            counts: [0; 4],
            t: 0,
        }
    }
}

impl LikelihoodTracker {
    pub fn values(&self) -> [f64; 4] {
        [
            self.p_pos_fplus,
            self.p_neg_fplus,
            self.p_pos_fzero,
            self.p_neg_fzero,
        ]
    }

    fn set(&mut self, v: [f64; 4]) {
        self.p_pos_fplus = v[0];
        self.p_neg_fplus = v[1];
        self.p_pos_fzero = v[2];
        self.p_neg_fzero = v[3];
    }

    /// Records one query. Returns `false` (and changes nothing) for
    /// `F_minus`, which the tracker does not cover.
    pub fn update(&mut self, zone: Zone, label: Label) -> bool {
        let cell = match (zone, label) {
            (Zone::FPlus, Label::Positive) => 0,
            (Zone::FPlus, Label::Negative) => 1,
            (Zone::FZero, Label::Positive) => 2,
            (Zone::FZero, Label::Negative) => 3,
            (Zone::FMinus, _) => {
                log::debug!("query from F_minus is not tracked");
                return false;
            }
        };
        self.counts[cell] += 1;
        self.t += 1;
        let n = self.t as f64;
        let mut v = self.values();
        for (p, &c) in v.iter_mut().zip(&self.counts) {
            *p += c as f64 / n;
        }
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= total);
        self.set(v);
        true
    }

    /// The four cells normalised within each zone instead of jointly:
    /// `(p+|F+, p-|F+, p+|F0, p-|F0)`.
    pub fn per_zone(&self) -> [f64; 4] {
        let v = self.values();
        let plus = v[0] + v[1];
        let zero = v[2] + v[3];
        [v[0] / plus, v[1] / plus, v[2] / zero, v[3] / zero]
    }
}

fn argmax_by(ids: &[usize], scores: &[f64], key: impl Fn(f64) -> f64) -> usize {
    let mut best = 0;
    for k in 1..ids.len() {
        let (v, bv) = (key(scores[k]), key(scores[best]));
        if v > bv || (v == bv && ids[k] < ids[best]) {
            best = k;
        }
    }
    best
}

/// Picks the next sample to label among `ids` (aligned with `scores`).
///
/// Returns the chosen sample id, its position in `ids`, and the zone the
/// rule aimed at; the sample's actual zone is `Zone::of(score)`.
pub fn select_query(
    strategy: &StrategyConfig,
    scores: &[f64],
    ids: &[usize],
    balance: &BalanceStat,
    t: u32,
) -> Result<(usize, usize, Zone)> {
    if ids.is_empty() {
        return Err(SamplerError::EmptyPool);
    }
    if ids.len() != scores.len() {
        return Err(SamplerError::Misaligned {
            ids: ids.len(),
            scores: scores.len(),
        });
    }
    let top = || argmax_by(ids, scores, |s| s);
    let most_uncertain = || argmax_by(ids, scores, |s| -s.abs());
    let (pos, zone) = match strategy.kind {
        StrategyKind::Mcle => {
            if t < strategy.burn_in || balance.rho < strategy.rho_prime {
                (top(), Zone::FPlus)
            } else {
                (most_uncertain(), Zone::FZero)
            }
        }
        StrategyKind::FplusOnly => (top(), Zone::FPlus),
        StrategyKind::FzeroOnly => (most_uncertain(), Zone::FZero),
        StrategyKind::FminusOnly => (argmax_by(ids, scores, |s| -s), Zone::FMinus),
        StrategyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
            rng.set_stream(t as u64);
            // ids are drawn in ascending order so the pick does not depend
            // on how the caller ordered them
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by_key(|&k| ids[k]);
            let pick = order[rng.random_range(0..ids.len())];
            (pick, Zone::of(scores[pick]))
        }
    };
    Ok((ids[pos], pos, zone))
}

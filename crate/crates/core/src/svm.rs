//! Incremental soft-margin linear SVM trained on the queried samples only.
//!
//! The dual is solved with pairwise (SMO-style) updates over the selected
//! set, which keeps `sum(alpha_i * y_i) = 0` exact at every step. Pairs are
//! picked by maximal KKT violation with ties going to the lowest sample
//! index. Selected samples are never removed and their multipliers carry
//! over between calls, so each call warm-starts from a feasible point.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Label, Pool};

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("dimension mismatch: model has {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample {0} was selected without a label")]
    MissingLabel(usize),
    #[error("sample {0} is already in the selected set")]
    AlreadySelected(usize),
    #[error("sample {0} is outside the pool")]
    OutOfRange(usize),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("model snapshot: {0}")]
    Snapshot(String),
    #[error("model snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SvmError> = std::result::Result<T, E>;

/// How the bias enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    /// Bias term with the dual equality constraint.
    #[default]
    Constrained,
    /// `f(x) = w.x`, no equality constraint (box-constrained dual).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub c: f64,
    pub kkt_tol: f64,
    pub max_passes: usize,
    pub eq_tol: f64,
    pub bias_mode: BiasMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            c: 1.0,
            kkt_tol: 1e-3,
            max_passes: 10_000,
            eq_tol: 1e-6,
            bias_mode: BiasMode::Constrained,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.c) {
            return Err(SvmError::InvalidConfig(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if !positive(self.kkt_tol) || !positive(self.eq_tol) {
            return Err(SvmError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if self.max_passes == 0 {
            return Err(SvmError::InvalidConfig(
                "max_passes must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainReport {
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One binary linear classifier and its dual state over the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    w: Vec<f64>,
    b: f64,
    alpha: Vec<f64>,
    gamma: Vec<bool>,
    selected: Vec<usize>,
    selected_labels: Vec<Label>,
    config: SolverConfig,
    converged: bool,
}

type Candidate = (usize, f64);

impl LinearModel {
    /// An untrained model: `w = 0`, `b = 0`, nothing selected.
    pub fn new(dim: usize, n_samples: usize, config: SolverConfig) -> Result<LinearModel> {
        config.validate()?;
        Ok(LinearModel {
            w: vec![0.0; dim],
            b: 0.0,
            alpha: vec![0.0; n_samples],
            gamma: vec![false; n_samples],
            selected: Vec::new(),
            selected_labels: Vec::new(),
            config,
            converged: true,
        })
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn alpha(&self, sample: usize) -> f64 {
        self.alpha[sample]
    }

    pub fn is_selected(&self, sample: usize) -> bool {
        self.gamma[sample]
    }

    /// Selected samples in selection order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn selected_labels(&self) -> &[Label] {
        &self.selected_labels
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Whether the last training call met the KKT tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// `w.x + b`.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(SvmError::DimensionMismatch {
                expected: self.w.len(),
                found: x.len(),
            });
        }
        Ok(self.score(x))
    }

    /// Unchecked `w.x + b`; callers guarantee the dimension.
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// Adds `newly_selected` to the training set (their multipliers start at
    /// zero) and re-solves the dual from the current multipliers.
    pub fn train_incremental(
        &mut self,
        pool: &Pool,
        labels: &BTreeMap<usize, Label>,
        newly_selected: &[usize],
    ) -> Result<TrainReport> {
        if pool.dim() != self.w.len() {
            return Err(SvmError::DimensionMismatch {
                expected: self.w.len(),
                found: pool.dim(),
            });
        }
        let mut staged = Vec::with_capacity(newly_selected.len());
        for &i in newly_selected {
            if i >= self.gamma.len() {
                return Err(SvmError::OutOfRange(i));
            }
            if self.gamma[i] || staged.iter().any(|&(j, _)| j == i) {
                return Err(SvmError::AlreadySelected(i));
            }
            let label = *labels.get(&i).ok_or(SvmError::MissingLabel(i))?;
            staged.push((i, label));
        }
        for (i, label) in staged {
            self.gamma[i] = true;
            self.alpha[i] = 0.0;
            self.selected.push(i);
            self.selected_labels.push(label);
        }
        let report = match self.config.bias_mode {
            BiasMode::Constrained => self.solve_constrained(pool),
            BiasMode::None => self.solve_unbiased(pool),
        };
        self.converged = report.converged;
        if !report.converged {
            log::warn!(
                "solver stopped after {} updates without meeting kkt_tol {}",
                report.iterations,
                self.config.kkt_tol
            );
        }
        Ok(report)
    }

    fn recompute_w(&mut self, pool: &Pool) {
        self.w.iter_mut().for_each(|v| *v = 0.0);
        for (&i, label) in self.selected.iter().zip(&self.selected_labels) {
            let coef = self.alpha[i] * label.sign();
            if coef != 0.0 {
                for (wk, xk) in self.w.iter_mut().zip(pool.row(i)) {
                    *wk += coef * xk;
                }
            }
        }
    }

    /// Gradient of the (minimisation-form) dual: `y_k w.x_k - 1`.
    fn gradient(&self, pool: &Pool) -> Vec<f64> {
        self.selected
            .iter()
            .zip(&self.selected_labels)
            .map(|(&i, l)| l.sign() * dot(&self.w, pool.row(i)) - 1.0)
            .collect()
    }

    fn snap_to_bounds(&mut self, i: usize) {
        let c = self.config.c;
        let eps = 1e-12 * c;
        if self.alpha[i] <= eps {
            self.alpha[i] = 0.0;
        } else if self.alpha[i] >= c - eps {
            self.alpha[i] = c;
        }
    }

    /// Maximal violating pair over the selected set, as `(local index,
    /// -y*grad)` for the up and low sides.
    fn violating_pair(&self, y: &[f64], grad: &[f64]) -> (Option<Candidate>, Option<Candidate>) {
        let c = self.config.c;
        let mut up: Option<Candidate> = None;
        let mut low: Option<Candidate> = None;
        for k in 0..self.selected.len() {
            let a = self.alpha[self.selected[k]];
            let v = -y[k] * grad[k];
            let sample = self.selected[k];
            let in_up = (y[k] > 0.0 && a < c) || (y[k] < 0.0 && a > 0.0);
            let in_low = (y[k] > 0.0 && a > 0.0) || (y[k] < 0.0 && a < c);
            if in_up {
                let better = match up {
                    None => true,
                    Some((j, best)) => v > best || (v == best && sample < self.selected[j]),
                };
                if better {
                    up = Some((k, v));
                }
            }
            if in_low {
                let better = match low {
                    None => true,
                    Some((j, best)) => v < best || (v == best && sample < self.selected[j]),
                };
                if better {
                    low = Some((k, v));
                }
            }
        }
        (up, low)
    }

    fn solve_constrained(&mut self, pool: &Pool) -> TrainReport {
        let y: Vec<f64> = self.selected_labels.iter().map(|l| l.sign()).collect();
        self.recompute_w(pool);
        let mut grad = self.gradient(pool);
        let c = self.config.c;
        let mut iterations = 0;
        let mut converged = false;

        while iterations < self.config.max_passes {
            let (up, low) = self.violating_pair(&y, &grad);
            let ((i, vi), (j, vj)) = match (up, low) {
                (Some(u), Some(l)) => (u, l),
                _ => {
                    converged = true;
                    break;
                }
            };
            if vi - vj <= self.config.kkt_tol || i == j {
                converged = true;
                break;
            }
            let (si, sj) = (self.selected[i], self.selected[j]);
            let (xi, xj) = (pool.row(si), pool.row(sj));
            // alpha_i += y_i t, alpha_j -= y_j t keeps sum(alpha y) fixed and
            // moves w by t (x_i - x_j)
            let curvature = (dot(xi, xi) + dot(xj, xj) - 2.0 * dot(xi, xj)).max(1e-12);
            let mut t = (vi - vj) / curvature;
            let bound_i = if y[i] > 0.0 {
                c - self.alpha[si]
            } else {
                self.alpha[si]
            };
            let bound_j = if y[j] > 0.0 {
                self.alpha[sj]
            } else {
                c - self.alpha[sj]
            };
            t = t.min(bound_i).min(bound_j);

            self.alpha[si] += y[i] * t;
            self.alpha[sj] -= y[j] * t;
            self.snap_to_bounds(si);
            self.snap_to_bounds(sj);

            let delta: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| t * (a - b)).collect();
            for (wk, dk) in self.w.iter_mut().zip(&delta) {
                *wk += dk;
            }
            for (k, &s) in self.selected.iter().enumerate() {
                grad[k] += y[k] * dot(pool.row(s), &delta);
            }
            iterations += 1;
        }

        // drop accumulated rounding in w and the gradient before fixing b
        self.recompute_w(pool);
        let grad = self.gradient(pool);
        let mut free_sum = 0.0;
        let mut free_count = 0usize;
        for (k, &s) in self.selected.iter().enumerate() {
            let a = self.alpha[s];
            if a > 0.0 && a < c {
                free_sum += -y[k] * grad[k];
                free_count += 1;
            }
        }
        self.b = if free_count > 0 {
            free_sum / free_count as f64
        } else {
            match self.violating_pair(&y, &grad) {
                (Some((_, m)), Some((_, big_m))) => 0.5 * (m + big_m),
                // single-sign selections: the bias alone carries the label
                (Some((_, m)), None) => m,
                (None, Some((_, big_m))) => big_m,
                (None, None) => 0.0,
            }
        };
        TrainReport {
            converged,
            iterations,
        }
    }

    fn solve_unbiased(&mut self, pool: &Pool) -> TrainReport {
        let y: Vec<f64> = self.selected_labels.iter().map(|l| l.sign()).collect();
        self.b = 0.0;
        self.recompute_w(pool);
        let mut grad = self.gradient(pool);
        let c = self.config.c;
        let mut iterations = 0;
        let mut converged = false;

        while iterations < self.config.max_passes {
            let mut best: Option<(usize, f64)> = None;
            for (k, &s) in self.selected.iter().enumerate() {
                let a = self.alpha[s];
                let pg = if a <= 0.0 {
                    grad[k].min(0.0)
                } else if a >= c {
                    grad[k].max(0.0)
                } else {
                    grad[k]
                };
                let v = pg.abs();
                let better = match best {
                    None => v > 0.0,
                    Some((j, bv)) => v > bv || (v == bv && s < self.selected[j]),
                };
                if better {
                    best = Some((k, v));
                }
            }
            let k = match best {
                Some((k, v)) if v > self.config.kkt_tol => k,
                _ => {
                    converged = true;
                    break;
                }
            };
            let s = self.selected[k];
            let x = pool.row(s);
            let q = dot(x, x);
            let old = self.alpha[s];
            let new = if q > 0.0 {
                (old - grad[k] / q).clamp(0.0, c)
            } else if grad[k] < 0.0 {
                c
            } else {
                0.0
            };
            self.alpha[s] = new;
            self.snap_to_bounds(s);
            let step = (self.alpha[s] - old) * y[k];
            for (wk, xk) in self.w.iter_mut().zip(x) {
                *wk += step * xk;
            }
            for (j, &sj) in self.selected.iter().enumerate() {
                grad[j] += y[j] * step * dot(pool.row(sj), x);
            }
            iterations += 1;
        }
        self.recompute_w(pool);
        TrainReport {
            converged,
            iterations,
        }
    }

    /// Dual objective `sum(alpha) - |w|^2 / 2` over the selected set.
    pub fn dual_objective(&self, pool: &Pool) -> f64 {
        let sum: f64 = self.selected.iter().map(|&i| self.alpha[i]).sum();
        let mut w = vec![0.0; self.w.len()];
        for (&i, l) in self.selected.iter().zip(&self.selected_labels) {
            for (wk, xk) in w.iter_mut().zip(pool.row(i)) {
                *wk += self.alpha[i] * l.sign() * xk;
            }
        }
        sum - 0.5 * dot(&w, &w)
    }

    /// Per-sample KKT residuals over the selected set, the equality residual
    /// `|sum(alpha y)|` and the gap between `w` and `sum(alpha y x)`.
    pub fn check_kkt(&self, pool: &Pool) -> KktReport {
        let c = self.config.c;
        let mut residuals = Vec::with_capacity(self.selected.len());
        let mut equality = 0.0;
        let mut implied_w = vec![0.0; self.w.len()];
        for (&i, l) in self.selected.iter().zip(&self.selected_labels) {
            let a = self.alpha[i];
            let margin = l.sign() * self.score(pool.row(i));
            let residual = if a <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if a >= c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            residuals.push(KktResidual {
                sample: i,
                alpha: a,
                margin,
                residual,
            });
            equality += a * l.sign();
            for (wk, xk) in implied_w.iter_mut().zip(pool.row(i)) {
                *wk += a * l.sign() * xk;
            }
        }
        let max_residual = residuals.iter().map(|r| r.residual).fold(0.0, f64::max);
        let weight_residual = implied_w
            .iter()
            .zip(&self.w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let box_violation = self
            .alpha
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                if !self.gamma[i] {
                    a.abs()
                } else {
                    (-a).max(a - c).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        KktReport {
            residuals,
            max_residual,
            equality_residual: equality.abs(),
            weight_residual,
            box_violation,
        }
    }

    /// Overrides one multiplier and rebuilds `w`; for diagnostics and tests.
    pub fn set_alpha(&mut self, pool: &Pool, sample: usize, value: f64) {
        self.alpha[sample] = value;
        self.recompute_w(pool);
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            w: self.w.iter().map(|&v| v as f32).collect(),
            b: self.b as f32,
            entries: self
                .selected
                .iter()
                .zip(&self.selected_labels)
                .map(|(&i, &label)| SnapshotEntry {
                    index: i as u32,
                    alpha: self.alpha[i] as f32,
                    label,
                })
                .collect(),
        }
    }

    /// Rebuilds a model from a snapshot. `w` and `b` are taken from the file
    /// as stored (f32 precision).
    pub fn from_snapshot(
        snapshot: &ModelSnapshot,
        n_samples: usize,
        config: SolverConfig,
    ) -> Result<LinearModel> {
        let mut model = LinearModel::new(snapshot.w.len(), n_samples, config)?;
        model.w = snapshot.w.iter().map(|&v| v as f64).collect();
        model.b = snapshot.b as f64;
        for e in &snapshot.entries {
            let i = e.index as usize;
            if i >= n_samples {
                return Err(SvmError::OutOfRange(i));
            }
            if model.gamma[i] {
                return Err(SvmError::AlreadySelected(i));
            }
            model.gamma[i] = true;
            model.alpha[i] = e.alpha as f64;
            model.selected.push(i);
            model.selected_labels.push(e.label);
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    pub sample: usize,
    pub alpha: f64,
    /// `y f(x)`
    pub margin: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub residuals: Vec<KktResidual>,
    pub max_residual: f64,
    pub equality_residual: f64,
    pub weight_residual: f64,
    /// Largest violation of `0 <= alpha <= C` (or of `alpha = 0` off the
    /// selected set).
    pub box_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotEntry {
    pub index: u32,
    pub alpha: f32,
    pub label: Label,
}

/// `ALMD` model file: u32 version, u32 d, f32 w[d], f32 b, u32 n, then n
/// `(u32 index, f32 alpha, i8 label)` records, all little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub w: Vec<f32>,
    pub b: f32,
    pub entries: Vec<SnapshotEntry>,
}

const MODEL_MAGIC: &[u8; 4] = b"ALMD";

impl ModelSnapshot {
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.w.len() as u32).to_le_bytes())?;
        for v in &self.w {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.b.to_le_bytes())?;
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            out.write_all(&e.index.to_le_bytes())?;
            out.write_all(&e.alpha.to_le_bytes())?;
            out.write_all(&e.label.as_i8().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<ModelSnapshot> {
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        if &word != MODEL_MAGIC {
            return Err(SvmError::Snapshot("bad magic".into()));
        }
        let read_u32 = |input: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut input)?;
        if version != 1 {
            return Err(SvmError::Snapshot(format!("unsupported version {version}")));
        }
        let d = read_u32(&mut input)? as usize;
        let mut w = Vec::with_capacity(d);
        for _ in 0..d {
            w.push(f32::from_bits(read_u32(&mut input)?));
        }
        let b = f32::from_bits(read_u32(&mut input)?);
        let n = read_u32(&mut input)? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let index = read_u32(&mut input)?;
            let alpha = f32::from_bits(read_u32(&mut input)?);
            let mut l = [0u8; 1];
            input.read_exact(&mut l)?;
            let label = Label::from_i64(i8::from_le_bytes(l) as i64).ok_or_else(|| {
                SvmError::Snapshot(format!("entry {index}: bad label byte {}", l[0]))
            })?;
            entries.push(SnapshotEntry {
                index,
                alpha,
                label,
            });
        }
        Ok(ModelSnapshot { w, b, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelSnapshot> {
        ModelSnapshot::read_from(BufReader::new(File::open(path)?))
    }
}

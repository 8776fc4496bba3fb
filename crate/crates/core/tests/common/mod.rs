//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mcle_core::data::{Label, Pool, SplitTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A small labelled problem: rows of `x` with labels `y` in {-1, +1}.
#[derive(Debug, Clone)]
pub struct Problem {
    pub dim: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Problem {
    pub fn random(seed: u64, max_points: usize, max_dim: usize) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..=max_points);
        let dim = rng.random_range(1..=max_dim);
        let shift = rng.random_range(0.0..2.0);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            // both signs present
            let s = if i < 2 {
                [1.0, -1.0][i]
            } else if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            };
            let row: Vec<f64> = (0..dim)
                .map(|k| {
                    let z: f64 = rng.sample(StandardNormal);
                    z + if k == 0 { s * shift } else { 0.0 }
                })
                .collect();
            x.push(row);
            y.push(s);
        }
        Problem { dim, x, y }
    }

    pub fn pool(&self) -> Pool {
        let features: Vec<f64> = self.x.iter().flatten().copied().collect();
        Pool::new(
            self.dim,
            features,
            vec![SplitTag::Train; self.x.len()],
            vec![],
            vec![],
        )
        .unwrap()
    }

    pub fn labels(&self) -> BTreeMap<usize, Label> {
        self.y
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                (
                    i,
                    if s > 0.0 {
                        Label::Positive
                    } else {
                        Label::Negative
                    },
                )
            })
            .collect()
    }

    fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.x.len();
        let mut q = vec![vec![0.0; n]; n];
        for (i, row) in q.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let d: f64 = self.x[i].iter().zip(&self.x[j]).map(|(a, b)| a * b).sum();
                *cell = self.y[i] * self.y[j] * d;
            }
        }
        q
    }

    /// `sum(alpha) - |sum(alpha_i y_i x_i)|^2 / 2`
    pub fn dual_objective(&self, alpha: &[f64]) -> f64 {
        let mut w = vec![0.0; self.dim];
        for (i, a) in alpha.iter().enumerate() {
            for (wk, xk) in w.iter_mut().zip(&self.x[i]) {
                *wk += a * self.y[i] * xk;
            }
        }
        alpha.iter().sum::<f64>() - 0.5 * w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Projects `v` onto `{a : 0 <= a <= c, y.a = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64, equality: bool) -> Vec<f64> {
    let clip = |mu: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .map(|(vi, yi)| (vi - mu * yi).clamp(0.0, c))
            .collect()
    };
    if !equality {
        return clip(0.0);
    }
    let h = |mu: f64| -> f64 { clip(mu).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    // h is non-increasing in mu
    while hi - lo > 1e-14 * span {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

/// Maximises the SVM dual by accelerated projected gradient (FISTA with
/// restarts). Returns the multipliers.
pub fn qp_oracle(p: &Problem, c: f64, equality: bool) -> Vec<f64> {
    let n = p.x.len();
    let q = p.gram();
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| q[i].iter().zip(a).map(|(qij, aj)| qij * aj).sum::<f64>() - 1.0)
            .collect()
    };
    let lipschitz = (0..n).map(|i| q[i][i]).sum::<f64>().max(1e-12);
    let step = 1.0 / lipschitz;
    let loss = |a: &[f64]| -p.dual_objective(a);
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut theta = 1.0f64;
    for _ in 0..50_000 {
        let g = grad(&z);
        let cand: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&cand, &p.y, c, equality);
        if loss(&next) > loss(&x) {
            // restart momentum
            theta = 1.0;
            z = x.clone();
            continue;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        let moved: f64 = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        z = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        x = next;
        theta = theta_next;
        if moved < 1e-12 {
            break;
        }
    }
    x
}

/// Average precision by definition: for every positive, count the items
/// ranked at or above it (higher score, or equal score and lower index).
pub fn brute_force_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let above = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut total = 0.0;
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        let rank = (0..scores.len()).filter(|&j| above(i, j)).count();
        let hits = (0..scores.len())
            .filter(|&j| positive[j] && above(i, j))
            .count();
        total += hits as f64 / rank as f64;
    }
    Some(total / n_pos as f64)
}

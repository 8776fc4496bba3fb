//! Ranking metrics and learning-curve aggregation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("average precision is undefined without positives")]
    NoPositives,
    #[error("{scores} scores but {labels} relevance labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no curves to average")]
    Empty,
    #[error("curve for {class:?} has no point at or before t={t}")]
    NoPoint { class: String, t: u32 },
    #[error("curve for {class:?} is missing an AP value at t={t}")]
    MissingValue { class: String, t: u32 },
    #[error("csv export: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Ranks by descending score; equal scores keep ascending index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Non-interpolated average precision: the mean, over positives, of the
/// precision at each positive's rank.
pub fn average_precision(scores: &[f64], relevance: &[Label]) -> Result<f64> {
    if scores.len() != relevance.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: relevance.len(),
        });
    }
    let n_pos = relevance.iter().filter(|l| l.is_positive()).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if relevance[i].is_positive() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Per-iteration test AP for one class under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub class_name: String,
    pub strategy: String,
    pub iterations: Vec<u32>,
    pub ap_values: Vec<Option<f64>>,
}

impl LearningCurve {
    /// AP at `t`, or at the last logged iteration before it.
    pub fn at(&self, t: u32) -> Result<f64> {
        let pos = self
            .iterations
            .iter()
            .rposition(|&it| it <= t)
            .ok_or_else(|| EvalError::NoPoint {
                class: self.class_name.clone(),
                t,
            })?;
        self.ap_values[pos].ok_or_else(|| EvalError::MissingValue {
            class: self.class_name.clone(),
            t,
        })
    }
}

pub fn mean_ap(curves: &[LearningCurve], t: u32) -> Result<f64> {
    if curves.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for c in curves {
        sum += c.at(t)?;
    }
    Ok(sum / curves.len() as f64)
}

/// The 0, 50, ..., 300 reporting grid.
pub const QUERY_GRID: [u32; 7] = [0, 50, 100, 150, 200, 250, 300];

/// Writes `t,<class...>,mean` with one row per grid point.
pub fn write_grid_csv(mut out: impl Write, curves: &[LearningCurve], grid: &[u32]) -> Result<()> {
    if curves.is_empty() {
        return Err(EvalError::Empty);
    }
    let header: Vec<&str> = curves.iter().map(|c| c.class_name.as_str()).collect();
    writeln!(out, "t,{},mean", header.join(","))?;
    for &t in grid {
        let mut row = vec![t.to_string()];
        for c in curves {
            row.push(format!("{:.6}", c.at(t)?));
        }
        row.push(format!("{:.6}", mean_ap(curves, t)?));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Negative as N, Positive as P};

    fn curve(class: &str, points: &[(u32, f64)]) -> LearningCurve {
        LearningCurve {
            class_name: class.into(),
            strategy: "mcle".into(),
            iterations: points.iter().map(|p| p.0).collect(),
            ap_values: points.iter().map(|p| Some(p.1)).collect(),
        }
    }

    #[test]
    fn three_item_case() {
        let ap = average_precision(&[3.0, 2.0, 1.0], &[P, N, P]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_undefined() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[P, P, N]).unwrap(),
            1.0
        );
        assert!(matches!(
            average_precision(&[1.0, 2.0], &[N, N]),
            Err(EvalError::NoPositives)
        ));
        assert!(matches!(
            average_precision(&[1.0], &[N, P]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ties_rank_by_index() {
        // all tied: ranking is index order, so (N, P) gives 1/2
        assert_eq!(average_precision(&[0.0, 0.0], &[N, P]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.0, 0.0], &[P, N]).unwrap(), 1.0);
    }

    #[test]
    fn mean_ap_cases() {
        let a = curve("a", &[(0, 0.1), (100, 0.2)]);
        let b = curve("b", &[(0, 0.3), (100, 0.4)]);
        assert!((mean_ap(&[a.clone(), b.clone()], 100).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(mean_ap(std::slice::from_ref(&a), 100).unwrap(), 0.2);
        // nearest logged t at or before the request
        assert_eq!(mean_ap(std::slice::from_ref(&a), 99).unwrap(), 0.1);
        assert!(matches!(mean_ap(&[], 0), Err(EvalError::Empty)));
        assert_eq!(
            mean_ap(&[a.clone(), b.clone()], 100).unwrap(),
            mean_ap(&[b, a], 100).unwrap()
        );
    }

    #[test]
    fn grid_export_layout() {
        let pts: Vec<(u32, f64)> = (0..=300).map(|t| (t, t as f64 / 600.0)).collect();
        let curves = [curve("c0", &pts), curve("c1", &pts)];
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &curves, &QUERY_GRID).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,c0,c1,mean");
        assert_eq!(lines.len(), 1 + 7);
        assert_eq!(lines[2], "50,0.083333,0.083333,0.083333");
    }
}

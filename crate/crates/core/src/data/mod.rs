//! Dataset bundle: the sample pool, per-class ground truth, the bank of
//! source classifiers and the relation weights linking target classes to
//! those sources.
//!
//! Bundles are immutable once loaded and are shared read-only between
//! sessions (wrap them in an `Arc`).

mod io;
mod synth;

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use io::{load_dataset, save_dataset};
pub use synth::{generate_synthetic, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: missing")]
    MissingFile { file: String },
    #[error("{file}: io error: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad header: {reason}")]
    BadHeader { file: String, reason: String },
    #[error("{file}: shape mismatch: {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        file: String,
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{file}: row {row}: {what}: expected {expected}, found {found}")]
    RowShape {
        file: String,
        row: usize,
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{file}: row {row}, column {col}: non-finite value")]
    NonFinite {
        file: String,
        row: usize,
        col: usize,
    },
    #[error("{file}: row {row}: duplicate sample id {id:?}")]
    DuplicateId {
        file: String,
        row: usize,
        id: String,
    },
    #[error("{file}: row {row}: {msg}")]
    Parse {
        file: String,
        row: usize,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// A binary label, serialized as `1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Label> {
        match v {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "+1",
            Label::Negative => "-1",
        })
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_i64(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be +1 or -1, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// The feature matrix and per-sample metadata the learner queries from.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    n_samples: usize,
    dim: usize,
    features: Vec<f64>,
    sample_ids: Vec<String>,
    split: Vec<SplitTag>,
    display_uri: Vec<String>,
}

impl Pool {
    /// Builds a pool, checking every invariant. `sample_ids` and
    /// `display_uri` may be empty, in which case ids default to the row
    /// index and URIs to the empty string.
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        split: Vec<SplitTag>,
        sample_ids: Vec<String>,
        display_uri: Vec<String>,
    ) -> Result<Pool> {
        if dim == 0 {
            return Err(DataError::Invalid(
                "feature dimension must be positive".into(),
            ));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(DataError::Invalid(format!(
                "feature buffer of length {} is not a multiple of dim {dim}",
                features.len()
            )));
        }
        let n = features.len() / dim;
        if n < 2 {
            return Err(DataError::Invalid(format!(
                "pool needs at least 2 samples, got {n}"
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                file: "features".into(),
                row: pos / dim,
                col: pos % dim,
            });
        }
        if split.len() != n {
            return Err(DataError::ShapeMismatch {
                file: "split.csv".into(),
                what: "rows".into(),
                expected: n,
                found: split.len(),
            });
        }
        let sample_ids = if sample_ids.is_empty() {
            (0..n).map(|i| i.to_string()).collect()
        } else {
            if sample_ids.len() != n {
                return Err(DataError::ShapeMismatch {
                    file: "ids.csv".into(),
                    what: "rows".into(),
                    expected: n,
                    found: sample_ids.len(),
                });
            }
            let mut seen = HashSet::with_capacity(n);
            for (row, id) in sample_ids.iter().enumerate() {
                if !seen.insert(id.as_str()) {
                    return Err(DataError::DuplicateId {
                        file: "ids.csv".into(),
                        row,
                        id: id.clone(),
                    });
                }
            }
            sample_ids
        };
        let display_uri = if display_uri.is_empty() {
            vec![String::new(); n]
        } else if display_uri.len() != n {
            return Err(DataError::ShapeMismatch {
                file: "uris.csv".into(),
                what: "rows".into(),
                expected: n,
                found: display_uri.len(),
            });
        } else {
            display_uri
        };
        Ok(Pool {
            n_samples: n,
            dim,
            features,
            sample_ids,
            split,
            display_uri,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample_id(&self, i: usize) -> &str {
        &self.sample_ids[i]
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn split(&self) -> &[SplitTag] {
        &self.split
    }

    pub fn display_uri(&self, i: usize) -> &str {
        &self.display_uri[i]
    }

    pub fn display_uris(&self) -> &[String] {
        &self.display_uri
    }

    pub fn has_default_ids(&self) -> bool {
        self.sample_ids
            .iter()
            .enumerate()
            .all(|(i, id)| *id == i.to_string())
    }

    pub fn indices_of(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.n_samples)
            .filter(|&i| self.split[i] == tag)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(SplitTag::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(SplitTag::Test)
    }

    /// Projects every sample onto the two leading principal directions of
    /// the centred feature matrix. Used by the console when a sample has no
    /// display URI.
    pub fn principal_projection(&self) -> Vec<[f64; 2]> {
        let d = self.dim;
        let n = self.n_samples as f64;
        let mut mean = vec![0.0; d];
        for i in 0..self.n_samples {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v / n;
            }
        }
        let centred = |i: usize, k: usize| self.row(i)[k] - mean[k];
        let total_var: f64 = (0..self.n_samples)
            .flat_map(|i| (0..d).map(move |k| (i, k)))
            .map(|(i, k)| centred(i, k).powi(2))
            .sum();
        let floor = 1e-12 * total_var.max(f64::MIN_POSITIVE);
        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(2);
        for comp in 0..2 {
            // deterministic start vector
            let mut v: Vec<f64> = (0..d).map(|k| 1.0 + ((k + comp) % 3) as f64).collect();
            normalize(&mut v);
            for _ in 0..100 {
                let mut next = vec![0.0; d];
                for i in 0..self.n_samples {
                    let proj: f64 = (0..d).map(|k| centred(i, k) * v[k]).sum();
                    for (k, nk) in next.iter_mut().enumerate() {
                        *nk += proj * centred(i, k);
                    }
                }
                for prev in &directions {
                    let dot: f64 = next.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (nk, pk) in next.iter_mut().zip(prev) {
                        *nk -= dot * pk;
                    }
                }
                if normalize(&mut next) <= floor {
                    // no variance left in this direction
                    v = vec![0.0; d];
                    break;
                }
                v = next;
            }
            directions.push(v);
        }
        (0..self.n_samples)
            .map(|i| {
                let p0: f64 = (0..d).map(|k| centred(i, k) * directions[0][k]).sum();
                let p1: f64 = (0..d).map(|k| centred(i, k) * directions[1][k]).sum();
                [p0, p1]
            })
            .collect()
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Ground-truth labels, one column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    class_names: Vec<String>,
    labels: Vec<Label>,
}

impl LabelMatrix {
    pub fn new(class_names: Vec<String>, labels: Vec<Label>) -> Result<LabelMatrix> {
        if class_names.is_empty() {
            return Err(DataError::Invalid("label matrix has no classes".into()));
        }
        if !labels.len().is_multiple_of(class_names.len()) {
            return Err(DataError::Invalid(format!(
                "{} labels do not fill {} class columns",
                labels.len(),
                class_names.len()
            )));
        }
        Ok(LabelMatrix {
            class_names,
            labels,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len() / self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn get(&self, sample: usize, class: usize) -> Label {
        self.labels[sample * self.class_names.len() + class]
    }

    pub fn column(&self, class: usize) -> Vec<Label> {
        (0..self.n_samples()).map(|i| self.get(i, class)).collect()
    }
}

/// Linear classifiers for the known source concepts, one row per source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBank {
    source_names: Vec<String>,
    dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl SourceBank {
    pub fn new(
        source_names: Vec<String>,
        dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<SourceBank> {
        let k = source_names.len();
        if weights.len() != k * dim {
            return Err(DataError::ShapeMismatch {
                file: "sources.bin".into(),
                what: "weight rows".into(),
                expected: k,
                found: weights.len().checked_div(dim).unwrap_or(0),
            });
        }
        let biases = if biases.is_empty() {
            vec![0.0; k]
        } else {
            biases
        };
        if biases.len() != k {
            return Err(DataError::ShapeMismatch {
                file: "source_biases.csv".into(),
                what: "rows".into(),
                expected: k,
                found: biases.len(),
            });
        }
        if let Some(pos) = weights.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                file: "sources.bin".into(),
                row: pos / dim,
                col: pos % dim,
            });
        }
        if let Some(row) = biases.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                file: "source_biases.csv".into(),
                row,
                col: 0,
            });
        }
        Ok(SourceBank {
            source_names,
            dim,
            weights,
            biases,
        })
    }

    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    pub fn len(&self) -> usize {
        self.source_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn bias(&self, k: usize) -> f64 {
        self.biases[k]
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
}

/// Relation weights between each target class and the source concepts.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    target_names: Vec<String>,
    source_names: Vec<String>,
    betas: Vec<f64>,
}

impl RelationMatrix {
    pub fn new(
        target_names: Vec<String>,
        source_names: Vec<String>,
        betas: Vec<f64>,
    ) -> Result<RelationMatrix> {
        let k = source_names.len();
        if betas.len() != target_names.len() * k {
            return Err(DataError::ShapeMismatch {
                file: "relations.csv".into(),
                what: "beta entries".into(),
                expected: target_names.len() * k,
                found: betas.len(),
            });
        }
        if let Some(pos) = betas.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                file: "relations.csv".into(),
                row: pos / k.max(1),
                col: pos % k.max(1),
            });
        }
        Ok(RelationMatrix {
            target_names,
            source_names,
            betas,
        })
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    pub fn n_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn row(&self, target: usize) -> &[f64] {
        let k = self.n_sources();
        &self.betas[target * k..(target + 1) * k]
    }

    pub fn row_for(&self, target: &str) -> Option<&[f64]> {
        self.target_names
            .iter()
            .position(|t| t == target)
            .map(|i| self.row(i))
    }
}

/// Everything a session needs: pool, ground truth, sources and relations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pool: Pool,
    pub labels: LabelMatrix,
    pub sources: SourceBank,
    pub relations: RelationMatrix,
}

impl Dataset {
    /// Checks the cross-shape invariants and returns human-readable warnings
    /// for classes that lack a positive or negative training example.
    pub fn new(
        pool: Pool,
        labels: LabelMatrix,
        sources: SourceBank,
        relations: RelationMatrix,
    ) -> Result<(Dataset, Vec<String>)> {
        if labels.n_samples() != pool.n_samples() {
            return Err(DataError::ShapeMismatch {
                file: "labels.csv".into(),
                what: "rows (features has a different count)".into(),
                expected: pool.n_samples(),
                found: labels.n_samples(),
            });
        }
        if sources.dim() != pool.dim() {
            return Err(DataError::ShapeMismatch {
                file: "sources.bin".into(),
                what: "dimension".into(),
                expected: pool.dim(),
                found: sources.dim(),
            });
        }
        if relations.source_names() != sources.source_names() {
            return Err(DataError::ShapeMismatch {
                file: "relations.csv".into(),
                what: "source columns".into(),
                expected: sources.len(),
                found: relations.n_sources(),
            });
        }
        let mut warnings = Vec::new();
        let train = pool.train_indices();
        for (c, name) in labels.class_names().iter().enumerate() {
            let pos = train
                .iter()
                .filter(|&&i| labels.get(i, c).is_positive())
                .count();
            if pos == 0 || pos == train.len() {
                warnings.push(format!(
                    "class {name:?} has {pos} positives among {} training samples",
                    train.len()
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok((
            Dataset {
                pool,
                labels,
                sources,
                relations,
            },
            warnings,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub known: Vec<String>,
    pub unknown: Vec<String>,
}

/// Randomly divides classes into known (source) and unknown (target) sets.
/// Both halves keep the original class order.
pub fn make_class_split(
    class_names: &[String],
    known_fraction: f64,
    seed: u64,
) -> Result<ClassSplit> {
    if !(known_fraction > 0.0 && known_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "known fraction must lie in (0, 1), got {known_fraction}"
        )));
    }
    let n_known = (known_fraction * class_names.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..class_names.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_known = vec![false; class_names.len()];
    for &i in &order[..n_known] {
        is_known[i] = true;
    }
    let (known, unknown): (Vec<_>, Vec<_>) =
        class_names.iter().zip(is_known).partition(|(_, k)| *k);
    Ok(ClassSplit {
        known: known.into_iter().map(|(c, _)| c.clone()).collect(),
        unknown: unknown.into_iter().map(|(c, _)| c.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn class_split_counts() {
        let s = make_class_split(&names(8), 0.75, 1).unwrap();
        assert_eq!((s.known.len(), s.unknown.len()), (6, 2));
        assert_eq!(s, make_class_split(&names(8), 0.75, 1).unwrap());

        for seed in 0..5 {
            let s = make_class_split(&names(107), 0.75, seed).unwrap();
            assert_eq!((s.known.len(), s.unknown.len()), (80, 27));
            let mut all: Vec<_> = s.known.iter().chain(&s.unknown).cloned().collect();
            all.sort();
            let mut expect = names(107);
            expect.sort();
            assert_eq!(all, expect);
        }
    }

    #[test]
    fn class_split_rejects_bad_fraction() {
        assert!(make_class_split(&names(4), 0.0, 1).is_err());
        assert!(make_class_split(&names(4), 1.0, 1).is_err());
        assert!(make_class_split(&names(4), f64::NAN, 1).is_err());
    }

    #[test]
    fn pool_rejects_nan_with_row() {
        let mut f = vec![0.0; 20];
        f[7 * 2 + 1] = f64::NAN;
        let err = Pool::new(2, f, vec![SplitTag::Train; 10], vec![], vec![]).unwrap_err();
        assert!(
            matches!(err, DataError::NonFinite { row: 7, col: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn pool_rejects_duplicate_ids() {
        let ids = vec!["a".into(), "b".into(), "a".into()];
        let err = Pool::new(1, vec![0.0; 3], vec![SplitTag::Train; 3], ids, vec![]).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId { row: 2, .. }));
    }

    #[test]
    fn label_serde() {
        assert_eq!(serde_json::to_string(&Label::Negative).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Label>("1").unwrap(), Label::Positive);
        assert!(serde_json::from_str::<Label>("0").is_err());
    }

    #[test]
    fn projection_recovers_dominant_axis() {
        // variance lives on axis 1 only
        let f: Vec<f64> = (0..10).flat_map(|i| [0.0, i as f64, 0.0]).collect();
        let pool = Pool::new(3, f, vec![SplitTag::Train; 10], vec![], vec![]).unwrap();
        let proj = pool.principal_projection();
        let spread: Vec<f64> = proj.iter().map(|p| p[0].abs()).collect();
        assert!((spread[0] - 4.5).abs() < 1e-9);
        assert!(proj.iter().all(|p| p[1].abs() < 1e-9));
    }
}

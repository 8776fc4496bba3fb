//! Active-learning sessions.
//!
//! A [`Session`] ties a zero-shot prior, the incremental SVM and a query
//! strategy to one target class. Each iteration scores the unlabeled
//! training samples with the mixed prior/model score, picks up to `budget`
//! queries, obtains their labels, retrains, and logs the test-set AP.
//!
//! Labels come either from the bundle's ground truth (simulated oracle,
//! driven with [`Session::step`]) or from outside (driven with
//! [`Session::next_query`] / [`Session::submit_label`]). The second path
//! parks the session in `awaiting_label` until every pending query of the
//! batch is answered.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Label};
use crate::eval::{average_precision, LearningCurve};
use crate::prior::{mixed, PriorError, PriorSchedule, ZeroShotPrior};
use crate::sampler::{
    select_query, BalanceStat, LikelihoodTracker, SamplerError, StrategyConfig, Zone, ZoneHistogram,
};
use crate::svm::{dot, LinearModel, SolverConfig, SvmError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("the training split is empty")]
    EmptyTrainSplit,
    #[error("class {0:?} has no ground truth; a simulated oracle cannot answer for it")]
    NoGroundTruth(String),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("session is finished")]
    Finished,
    #[error("session is {actual}, expected {expected}")]
    WrongStatus {
        expected: SessionStatus,
        actual: SessionStatus,
    },
    #[error("step() needs a simulated oracle")]
    ExternalOracle,
    #[error("no query is pending")]
    NoPendingQuery,
    #[error("sample {got} is not the pending query (expected {expected})")]
    SampleMismatch { expected: usize, got: usize },
    #[error("checkpoint replay diverged at label {index}: expected sample {expected}, engine chose {got}")]
    CheckpointDiverged {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Simulated,
    External,
}

/// Where the zero-shot score comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// Relation-weighted source classifiers.
    #[default]
    ZeroShot,
    /// A random direction with the zero-shot prior's norm.
    Random,
    /// No prior at all.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingQuery,
    AwaitingLabel,
    Finished,
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionStatus::AwaitingQuery => "awaiting_query",
            SessionStatus::AwaitingLabel => "awaiting_label",
            SessionStatus::Finished => "finished",
        })
    }
}

/// How a multi-sample budget was filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One pick at a time, balance and tracker updated between picks.
    Greedy,
    /// All picks chosen up front, labels arrive afterwards.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub class_name: String,
    pub strategy: StrategyConfig,
    pub schedule: PriorSchedule,
    #[serde(default)]
    pub solver: SolverConfig,
    pub oracle: OracleKind,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: u32,
    #[serde(default)]
    pub prior_source: PriorSource,
    /// Seeds the random strategy and the random prior.
    #[serde(default)]
    pub seed: u64,
}

fn default_budget() -> usize {
    1
}

fn default_max_iters() -> u32 {
    300
}

impl SessionConfig {
    pub fn new(
        class_name: impl Into<String>,
        strategy: StrategyConfig,
        schedule: PriorSchedule,
    ) -> SessionConfig {
        SessionConfig {
            class_name: class_name.into(),
            strategy,
            schedule,
            solver: SolverConfig::default(),
            oracle: OracleKind::Simulated,
            budget: default_budget(),
            max_iters: default_max_iters(),
            prior_source: PriorSource::ZeroShot,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.schedule.validate()?;
        self.solver.validate()?;
        if self.budget == 0 {
            return Err(EngineError::InvalidConfig(
                "budget must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One sample asked of the oracle, as logged per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueriedSample {
    pub id: usize,
    pub zone_intended: Zone,
    pub zone_actual: Zone,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u32,
    pub queried: Vec<QueriedSample>,
    pub rho: f64,
    pub tracker: LikelihoodTracker,
    pub test_ap: Option<f64>,
    pub solver_converged: bool,
}

/// One labelled query with the sampler state right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub t: u32,
    pub sample_id: usize,
    pub intended_zone: Zone,
    pub actual_zone: Zone,
    pub score: f64,
    pub label: Label,
    pub rho_after: f64,
    pub tracker_after: LikelihoodTracker,
    /// Tracker cells normalised within each zone instead of jointly.
    pub tracker_per_zone_after: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingQuery {
    pub sample_id: usize,
    pub score: f64,
    pub intended_zone: Zone,
    pub actual_zone: Zone,
    pub t: u32,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub t: u32,
    pub queried: Vec<QueriedSample>,
    pub test_ap: Option<f64>,
    pub solver_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelOutcome {
    pub t: u32,
    pub rho: f64,
    pub tracker: LikelihoodTracker,
    pub test_ap: Option<f64>,
    pub iteration_complete: bool,
    pub status: SessionStatus,
}

/// Serialized form of a finished (or interrupted) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: SessionConfig,
    pub batch_mode: BatchMode,
    pub iterations: Vec<IterationRecord>,
    pub final_model_path: Option<String>,
}

impl RunResult {
    pub fn learning_curve(&self) -> LearningCurve {
        LearningCurve {
            class_name: self.config.class_name.clone(),
            strategy: self.config.strategy.kind.short_name().to_string(),
            iterations: self.iterations.iter().map(|r| r.t).collect(),
            ap_values: self.iterations.iter().map(|r| r.test_ap).collect(),
        }
    }

    /// All labels in query order.
    pub fn labels(&self) -> Vec<(usize, Label)> {
        self.iterations
            .iter()
            .flat_map(|r| r.queried.iter().map(|q| (q.id, q.label)))
            .collect()
    }
}

/// Enough to rebuild a session exactly: the config plus every label in
/// the order it was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCheckpoint {
    pub id: String,
    pub config: SessionConfig,
    pub labels: Vec<(usize, Label)>,
}

pub struct Session {
    id: String,
    config: SessionConfig,
    data: Arc<Dataset>,
    prior: ZeroShotPrior,
    model: LinearModel,
    truth: Option<Vec<Label>>,
    balance: BalanceStat,
    tracker: LikelihoodTracker,
    labels: BTreeMap<usize, Label>,
    train: Vec<usize>,
    test: Vec<usize>,
    t: u32,
    status: SessionStatus,
    pending: Vec<PendingQuery>,
    answered: usize,
    batch_mode: BatchMode,
    iterations: Vec<IterationRecord>,
    query_log: Vec<QueryRecord>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("class", &self.config.class_name)
            .field("t", &self.t)
            .field("status", &self.status)
            .finish()
    }
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        data: Arc<Dataset>,
        mut config: SessionConfig,
    ) -> Result<Session> {
        config.validate()?;
        config.strategy.seed = config.seed;
        let class = config.class_name.as_str();
        let class_index = data.labels.class_index(class);
        let relation = data.relations.row_for(class);
        if class_index.is_none() && relation.is_none() {
            return Err(EngineError::UnknownClass(class.to_string()));
        }
        if class_index.is_none() && config.oracle == OracleKind::Simulated {
            return Err(EngineError::NoGroundTruth(class.to_string()));
        }
        let train = data.pool.train_indices();
        if train.is_empty() {
            return Err(EngineError::EmptyTrainSplit);
        }
        let dim = data.pool.dim();
        let prior = match config.prior_source {
            PriorSource::ZeroShot => {
                ZeroShotPrior::for_target(&data.sources, &data.relations, class)?
            }
            PriorSource::Random => {
                let norm = relation
                    .map(|beta| ZeroShotPrior::new(&data.sources, beta))
                    .transpose()?
                    .map(|p| dot(p.weights(), p.weights()).sqrt())
                    .filter(|&n| n > 0.0)
                    .unwrap_or(1.0);
                ZeroShotPrior::random(dim, norm, config.seed ^ 0x0005_eed0_fa11_f00d)
            }
            PriorSource::None => ZeroShotPrior::zero(dim),
        };
        let model = LinearModel::new(dim, data.pool.n_samples(), config.solver)?;
        let truth = class_index.map(|c| data.labels.column(c));
        let batch_mode = match config.oracle {
            OracleKind::Simulated => BatchMode::Greedy,
            OracleKind::External => BatchMode::Batch,
        };
        let mut session = Session {
            id: id.into(),
            test: data.pool.test_indices(),
            config,
            data,
            prior,
            model,
            truth,
            balance: BalanceStat::default(),
            tracker: LikelihoodTracker::default(),
            labels: BTreeMap::new(),
            train,
            t: 0,
            status: SessionStatus::AwaitingQuery,
            pending: Vec::new(),
            answered: 0,
            batch_mode,
            iterations: Vec::new(),
            query_log: Vec::new(),
        };
        let test_ap = session.test_ap();
        session.iterations.push(IterationRecord {
            t: 0,
            queried: Vec::new(),
            rho: 0.0,
            tracker: session.tracker,
            test_ap,
            solver_converged: true,
        });
        if session.config.max_iters == 0 {
            session.status = SessionStatus::Finished;
        }
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    /// Completed iterations.
    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn prior(&self) -> &ZeroShotPrior {
        &self.prior
    }

    pub fn balance(&self) -> &BalanceStat {
        &self.balance
    }

    pub fn tracker(&self) -> &LikelihoodTracker {
        &self.tracker
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    pub fn query_log(&self) -> &[QueryRecord] {
        &self.query_log
    }

    pub fn labels(&self) -> &BTreeMap<usize, Label> {
        &self.labels
    }

    pub fn has_ground_truth(&self) -> bool {
        self.truth.is_some()
    }

    pub fn learning_curve(&self) -> LearningCurve {
        self.run_result(None).learning_curve()
    }

    pub fn unlabeled_train(&self) -> Vec<usize> {
        let pending: Vec<usize> = self.pending.iter().map(|p| p.sample_id).collect();
        self.train
            .iter()
            .copied()
            .filter(|i| !self.labels.contains_key(i) && !pending.contains(i))
            .collect()
    }

    /// Mixed prior/model scores for `samples` at iteration `t`.
    pub fn scores_at(&self, samples: &[usize], t: u32) -> Vec<f64> {
        let eta = self.config.schedule.mix_weights(t);
        samples
            .iter()
            .map(|&i| mixed(&self.prior, &self.model, eta, self.data.pool.row(i)))
            .collect()
    }

    /// Test-split scores at the current iteration.
    pub fn test_scores(&self) -> Vec<f64> {
        self.scores_at(&self.test, self.t)
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    fn test_ap(&self) -> Option<f64> {
        let truth = self.truth.as_ref()?;
        let relevance: Vec<Label> = self.test.iter().map(|&i| truth[i]).collect();
        average_precision(&self.test_scores(), &relevance).ok()
    }

    /// Zone occupancy of the unlabeled training pool under the current
    /// scores.
    pub fn zone_histogram(&self) -> ZoneHistogram {
        let unlabeled: Vec<usize> = self
            .train
            .iter()
            .copied()
            .filter(|i| !self.labels.contains_key(i))
            .collect();
        ZoneHistogram::from_scores(&self.scores_at(&unlabeled, self.t))
    }

    fn record_label(&mut self, q: &PendingQuery, label: Label) -> QueriedSample {
        self.labels.insert(q.sample_id, label);
        self.balance.update(label);
        self.tracker.update(q.actual_zone, label);
        self.query_log.push(QueryRecord {
            t: self.t + 1,
            sample_id: q.sample_id,
            intended_zone: q.intended_zone,
            actual_zone: q.actual_zone,
            score: q.score,
            label,
            rho_after: self.balance.rho,
            tracker_after: self.tracker,
            tracker_per_zone_after: self.tracker.per_zone(),
        });
        QueriedSample {
            id: q.sample_id,
            zone_intended: q.intended_zone,
            zone_actual: q.actual_zone,
            score: q.score,
            label,
        }
    }

    fn pick(&self, ids: &[usize], scores: &[f64]) -> Result<(usize, PendingQuery)> {
        let (sample_id, pos, intended_zone) =
            select_query(&self.config.strategy, scores, ids, &self.balance, self.t)?;
        Ok((
            pos,
            PendingQuery {
                sample_id,
                score: scores[pos],
                intended_zone,
                actual_zone: Zone::of(scores[pos]),
                t: self.t,
                rho: self.balance.rho,
            },
        ))
    }

    fn complete_iteration(&mut self, queried: Vec<QueriedSample>) -> Result<StepOutcome> {
        let newly: Vec<usize> = queried.iter().map(|q| q.id).collect();
        let report = self
            .model
            .train_incremental(&self.data.pool, &self.labels, &newly)?;
        self.t += 1;
        self.pending.clear();
        self.answered = 0;
        let test_ap = self.test_ap();
        self.iterations.push(IterationRecord {
            t: self.t,
            queried: queried.clone(),
            rho: self.balance.rho,
            tracker: self.tracker,
            test_ap,
            solver_converged: report.converged,
        });
        let exhausted = self.train.iter().all(|i| self.labels.contains_key(i));
        self.status = if self.t >= self.config.max_iters || exhausted {
            SessionStatus::Finished
        } else {
            SessionStatus::AwaitingQuery
        };
        Ok(StepOutcome {
            t: self.t,
            queried,
            test_ap,
            solver_converged: report.converged,
        })
    }

    /// Runs one full iteration with the simulated oracle.
    pub fn step(&mut self) -> Result<StepOutcome> {
        match self.status {
            SessionStatus::Finished => return Err(EngineError::Finished),
            SessionStatus::AwaitingLabel => {
                return Err(EngineError::WrongStatus {
                    expected: SessionStatus::AwaitingQuery,
                    actual: self.status,
                })
            }
            SessionStatus::AwaitingQuery => {}
        }
        let truth = match (&self.truth, self.config.oracle) {
            (Some(t), OracleKind::Simulated) => t.clone(),
            _ => return Err(EngineError::ExternalOracle),
        };
        let mut ids = self.unlabeled_train();
        let mut scores = self.scores_at(&ids, self.t);
        let picks = self.config.budget.min(ids.len());
        let mut queried = Vec::with_capacity(picks);
        for _ in 0..picks {
            let (pos, q) = self.pick(&ids, &scores)?;
            ids.remove(pos);
            scores.remove(pos);
            let label = truth[q.sample_id];
            queried.push(self.record_label(&q, label));
        }
        self.complete_iteration(queried)
    }

    /// Steps until finished and returns the run log.
    pub fn run_to_completion(&mut self) -> Result<RunResult> {
        while self.status != SessionStatus::Finished {
            self.step()?;
        }
        Ok(self.run_result(None))
    }

    pub fn run_result(&self, final_model_path: Option<String>) -> RunResult {
        RunResult {
            config: self.config.clone(),
            batch_mode: self.batch_mode,
            iterations: self.iterations.clone(),
            final_model_path,
        }
    }

    /// The query awaiting a label, selecting a new batch first if none is
    /// pending. Re-reading without answering returns the same query.
    pub fn next_query(&mut self) -> Result<PendingQuery> {
        match self.status {
            SessionStatus::Finished => return Err(EngineError::Finished),
            SessionStatus::AwaitingLabel => return Ok(self.pending[self.answered].clone()),
            SessionStatus::AwaitingQuery => {}
        }
        let mut ids = self.unlabeled_train();
        let mut scores = self.scores_at(&ids, self.t);
        let picks = self.config.budget.min(ids.len());
        let mut pending = Vec::with_capacity(picks);
        for _ in 0..picks {
            let (pos, q) = self.pick(&ids, &scores)?;
            ids.remove(pos);
            scores.remove(pos);
            pending.push(q);
        }
        self.pending = pending;
        self.answered = 0;
        self.status = SessionStatus::AwaitingLabel;
        Ok(self.pending[0].clone())
    }

    pub fn pending_query(&self) -> Option<&PendingQuery> {
        match self.status {
            SessionStatus::AwaitingLabel => self.pending.get(self.answered),
            _ => None,
        }
    }

    /// Answers the pending query. The iteration completes (and the model
    /// retrains) once every query of the batch is answered.
    pub fn submit_label(&mut self, sample_id: usize, label: Label) -> Result<LabelOutcome> {
        match self.status {
            SessionStatus::Finished => return Err(EngineError::Finished),
            SessionStatus::AwaitingQuery => return Err(EngineError::NoPendingQuery),
            SessionStatus::AwaitingLabel => {}
        }
        let q = self.pending[self.answered].clone();
        if q.sample_id != sample_id {
            return Err(EngineError::SampleMismatch {
                expected: q.sample_id,
                got: sample_id,
            });
        }
        self.record_label(&q, label);
        self.answered += 1;
        let mut test_ap = None;
        let complete = self.answered == self.pending.len();
        if complete {
            let start = self.query_log.len() - self.pending.len();
            let queried = self.query_log[start..]
                .iter()
                .map(|r| QueriedSample {
                    id: r.sample_id,
                    zone_intended: r.intended_zone,
                    zone_actual: r.actual_zone,
                    score: r.score,
                    label: r.label,
                })
                .collect();
            test_ap = self.complete_iteration(queried)?.test_ap;
        }
        Ok(LabelOutcome {
            t: self.t,
            rho: self.balance.rho,
            tracker: self.tracker,
            test_ap,
            iteration_complete: complete,
            status: self.status,
        })
    }

    pub fn checkpoint(&self) -> SessionCheckpoint {
        SessionCheckpoint {
            id: self.id.clone(),
            config: self.config.clone(),
            labels: self
                .query_log
                .iter()
                .map(|r| (r.sample_id, r.label))
                .collect(),
        }
    }

    /// Rebuilds a session by replaying its labels through the external
    /// path. Selection is deterministic, so the replay lands on the same
    /// state; a mismatch means the checkpoint does not belong to `data`.
    pub fn restore(data: Arc<Dataset>, checkpoint: &SessionCheckpoint) -> Result<Session> {
        let mut session = Session::new(checkpoint.id.clone(), data, checkpoint.config.clone())?;
        for (index, &(sample, label)) in checkpoint.labels.iter().enumerate() {
            let q = session.next_query()?;
            if q.sample_id != sample {
                return Err(EngineError::CheckpointDiverged {
                    index,
                    expected: sample,
                    got: q.sample_id,
                });
            }
            session.submit_label(sample, label)?;
        }
        Ok(session)
    }
}

/// Trains on every training sample at once; the reference an exhausted
/// active-learning run should reach.
pub fn train_supervised(
    data: &Dataset,
    class_name: &str,
    solver: SolverConfig,
) -> Result<LinearModel> {
    let c = data
        .labels
        .class_index(class_name)
        .ok_or_else(|| EngineError::UnknownClass(class_name.to_string()))?;
    let train = data.pool.train_indices();
    if train.is_empty() {
        return Err(EngineError::EmptyTrainSplit);
    }
    let labels: BTreeMap<usize, Label> =
        train.iter().map(|&i| (i, data.labels.get(i, c))).collect();
    let mut model = LinearModel::new(data.pool.dim(), data.pool.n_samples(), solver)?;
    model.train_incremental(&data.pool, &labels, &train)?;
    Ok(model)
}

/// Test AP of an arbitrary linear scorer for one class.
pub fn test_ap_of(
    data: &Dataset,
    class_name: &str,
    score: impl Fn(&[f64]) -> f64,
) -> Result<Option<f64>> {
    let c = data
        .labels
        .class_index(class_name)
        .ok_or_else(|| EngineError::UnknownClass(class_name.to_string()))?;
    let test = data.pool.test_indices();
    let scores: Vec<f64> = test.iter().map(|&i| score(data.pool.row(i))).collect();
    let relevance: Vec<Label> = test.iter().map(|&i| data.labels.get(i, c)).collect();
    Ok(average_precision(&scores, &relevance).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::eval::ranking;
    use crate::prior::ScheduleKind;
    use crate::sampler::StrategyKind;

    fn bundle() -> Arc<Dataset> {
        Arc::new(
            generate_synthetic(&SynthConfig {
                n_per_class: 40,
                ..SynthConfig::default()
            })
            .unwrap(),
        )
    }

    fn config(kind: StrategyKind, schedule: ScheduleKind) -> SessionConfig {
        SessionConfig::new(
            "c0",
            StrategyConfig::new(kind),
            PriorSchedule::new(schedule),
        )
    }

    #[test]
    fn new_session_contract() {
        let data = bundle();
        let s = Session::new(
            "s",
            data.clone(),
            config(StrategyKind::Mcle, ScheduleKind::Constant),
        )
        .unwrap();
        assert_eq!(s.status(), SessionStatus::AwaitingQuery);
        assert_eq!(s.t(), 0);
        assert_eq!(s.iterations().len(), 1);
        // untrained model: test ranking is the prior's ranking
        let prior_scores: Vec<f64> = s
            .test_indices()
            .iter()
            .map(|&i| s.prior().score(data.pool.row(i)))
            .collect();
        assert_eq!(ranking(&s.test_scores()), ranking(&prior_scores));

        let err = Session::new(
            "s",
            data,
            config(StrategyKind::Mcle, ScheduleKind::Constant).with_class("zzz"),
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::UnknownClass(ref c) if c == "zzz"));
    }

    impl SessionConfig {
        fn with_class(mut self, c: &str) -> Self {
            self.class_name = c.into();
            self
        }
    }

    #[test]
    fn five_steps_five_distinct_queries() {
        let mut s = Session::new(
            "s",
            bundle(),
            config(StrategyKind::Mcle, ScheduleKind::Constant),
        )
        .unwrap();
        let mut seen = Vec::new();
        for _ in 0..5 {
            let out = s.step().unwrap();
            assert_eq!(out.queried.len(), 1);
            seen.push(out.queried[0].id);
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 5);
        assert_eq!(s.iterations().len(), 6);
    }

    #[test]
    fn finished_session_rejects_step() {
        let mut cfg = config(StrategyKind::Random, ScheduleKind::Vanilla);
        cfg.max_iters = 2;
        let mut s = Session::new("s", bundle(), cfg).unwrap();
        s.step().unwrap();
        s.step().unwrap();
        assert_eq!(s.status(), SessionStatus::Finished);
        let before = s.iterations().len();
        assert!(matches!(s.step(), Err(EngineError::Finished)));
        assert_eq!(s.iterations().len(), before);
    }

    #[test]
    fn zero_iterations_is_prior_only() {
        let mut cfg = config(StrategyKind::Mcle, ScheduleKind::Constant);
        cfg.max_iters = 0;
        let mut s = Session::new("s", bundle(), cfg).unwrap();
        let r = s.run_to_completion().unwrap();
        assert_eq!(r.iterations.len(), 1);
        assert!(r.iterations[0].queried.is_empty());
    }

    #[test]
    fn budget_picks_distinct_samples() {
        let mut cfg = config(StrategyKind::Mcle, ScheduleKind::Constant);
        cfg.budget = 4;
        cfg.max_iters = 3;
        let mut s = Session::new("s", bundle(), cfg).unwrap();
        let r = s.run_to_completion().unwrap();
        assert!(r.iterations[1..].iter().all(|it| it.queried.len() == 4));
        assert_eq!(s.model().selected().len(), 12);
        assert_eq!(r.batch_mode, BatchMode::Greedy);
    }

    #[test]
    fn external_path_idempotent_and_checked() {
        let mut cfg = config(StrategyKind::Mcle, ScheduleKind::Constant);
        cfg.oracle = OracleKind::External;
        let mut s = Session::new("s", bundle(), cfg).unwrap();
        assert!(matches!(
            s.submit_label(0, Label::Positive),
            Err(EngineError::NoPendingQuery)
        ));
        assert!(matches!(s.step(), Err(EngineError::ExternalOracle)));
        let q = s.next_query().unwrap();
        assert_eq!(s.status(), SessionStatus::AwaitingLabel);
        assert_eq!(s.next_query().unwrap(), q);
        let wrong = q.sample_id + 1;
        assert!(matches!(
            s.submit_label(wrong, Label::Negative),
            Err(EngineError::SampleMismatch { .. })
        ));
        assert_eq!(s.t(), 0);
        let out = s.submit_label(q.sample_id, Label::Negative).unwrap();
        assert!(out.iteration_complete);
        assert_eq!(out.t, 1);
        assert_eq!(s.status(), SessionStatus::AwaitingQuery);
    }

    #[test]
    fn external_replay_matches_simulated_run() {
        let data = bundle();
        let mut cfg = config(StrategyKind::Mcle, ScheduleKind::Constant);
        cfg.max_iters = 20;
        let mut sim = Session::new("a", data.clone(), cfg.clone()).unwrap();
        let result = sim.run_to_completion().unwrap();

        cfg.oracle = OracleKind::External;
        let mut ext = Session::new("b", data, cfg).unwrap();
        for (id, label) in result.labels() {
            let q = ext.next_query().unwrap();
            assert_eq!(q.sample_id, id);
            ext.submit_label(id, label).unwrap();
        }
        assert_eq!(ext.query_log(), sim.query_log());
        assert_eq!(ext.status(), SessionStatus::Finished);
    }

    #[test]
    fn checkpoint_restore_is_exact() {
        let data = bundle();
        let mut cfg = config(StrategyKind::Mcle, ScheduleKind::LinearDecay);
        cfg.oracle = OracleKind::External;
        cfg.budget = 2;
        let mut s = Session::new("x", data.clone(), cfg).unwrap();
        for k in 0..7 {
            let q = s.next_query().unwrap();
            let label = if k % 3 == 0 {
                Label::Positive
            } else {
                Label::Negative
            };
            s.submit_label(q.sample_id, label).unwrap();
        }
        // one label of the fourth batch is outstanding
        let ck = s.checkpoint();
        let back = Session::restore(data, &ck).unwrap();
        assert_eq!(back.query_log(), s.query_log());
        assert_eq!(back.model(), s.model());
        assert_eq!(back.status(), SessionStatus::AwaitingLabel);
        assert_eq!(back.pending_query(), s.pending_query());
    }

    #[test]
    fn simulated_labels_follow_ground_truth() {
        let data = bundle();
        let mut s = Session::new(
            "s",
            data.clone(),
            config(StrategyKind::FzeroOnly, ScheduleKind::Constant),
        )
        .unwrap();
        for _ in 0..15 {
            s.step().unwrap();
        }
        for r in s.query_log() {
            assert_eq!(r.label, data.labels.get(r.sample_id, 0));
            assert_eq!(data.pool.split()[r.sample_id], crate::data::SplitTag::Train);
        }
    }

    #[test]
    fn novel_class_without_truth() {
        let mut data = generate_synthetic(&SynthConfig {
            n_per_class: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        let k = data.sources.len();
        let mut names = data.relations.target_names().to_vec();
        names.push("novel".into());
        let mut betas: Vec<f64> = (0..names.len() - 1)
            .flat_map(|t| data.relations.row(t).to_vec())
            .collect();
        betas.extend(std::iter::repeat_n(0.2, k));
        data.relations =
            crate::data::RelationMatrix::new(names, data.sources.source_names().to_vec(), betas)
                .unwrap();
        let data = Arc::new(data);
        let mut cfg = config(StrategyKind::Mcle, ScheduleKind::Constant).with_class("novel");
        assert!(matches!(
            Session::new("s", data.clone(), cfg.clone()),
            Err(EngineError::NoGroundTruth(_))
        ));
        cfg.oracle = OracleKind::External;
        let mut s = Session::new("s", data, cfg).unwrap();
        let q = s.next_query().unwrap();
        let out = s.submit_label(q.sample_id, Label::Positive).unwrap();
        assert_eq!(out.test_ap, None);
    }
}

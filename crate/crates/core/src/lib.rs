//! Pool-based active learning seeded by a zero-shot prior.
//!
//! The crate is organised bottom-up: [`data`] loads feature bundles,
//! [`svm`] holds the incremental linear SVM, [`prior`] builds the
//! zero-shot score and its mixing schedules, [`sampler`] picks queries,
//! [`engine`] runs sessions and [`eval`] scores rankings.

pub mod data;
pub mod engine;
pub mod eval;
pub mod prior;
pub mod sampler;
pub mod svm;

pub use data::{Dataset, Label};
pub use engine::{OracleKind, PriorSource, RunResult, Session, SessionConfig, SessionStatus};
pub use prior::{PriorSchedule, ScheduleKind};
pub use sampler::{StrategyConfig, StrategyKind, Zone};
pub use svm::{BiasMode, LinearModel, SolverConfig};

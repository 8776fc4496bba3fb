//! In-memory session registry with on-disk checkpoints.
//!
//! Every session lives behind its own mutex, so requests for one session
//! are linearized while different sessions proceed in parallel. Idle
//! sessions are checkpointed and dropped from memory; the next request for
//! them replays the checkpoint.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant, SystemTime};

use mcle_core::engine::{EngineError, SessionCheckpoint};
use mcle_core::{Dataset, Session, SessionConfig};
use thiserror::Error;

const CHECKPOINT_FILE: &str = "checkpoint.json";
const RUN_FILE: &str = "run.json";
const MODEL_FILE: &str = "model.almd";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no session {0:?}")]
    NotFound(String),
    #[error("session limit of {0} reached")]
    Capacity(usize),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: io::Error },
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

struct Slot {
    session: Option<Session>,
    last_activity: Instant,
}

pub struct SessionStore {
    data: Arc<Dataset>,
    checkpoint_dir: Option<PathBuf>,
    max_sessions: usize,
    idle_timeout: Duration,
    slots: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
    started: SystemTime,
    projection: OnceLock<Vec<[f64; 2]>>,
}

impl SessionStore {
    pub fn new(
        data: Arc<Dataset>,
        checkpoint_dir: Option<PathBuf>,
        max_sessions: usize,
        idle_timeout: Duration,
    ) -> SessionStore {
        SessionStore {
            data,
            checkpoint_dir,
            max_sessions,
            idle_timeout,
            slots: Mutex::new(HashMap::new()),
            started: SystemTime::now(),
            projection: OnceLock::new(),
        }
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn idle_timeout(&self) -> Duration {
        self.idle_timeout
    }

    pub fn started(&self) -> SystemTime {
        self.started
    }

    /// 2-D principal projection of the pool, computed on first use.
    pub fn projection(&self) -> &[[f64; 2]] {
        self.projection.get_or_init(|| self.data.pool.principal_projection())
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, config: SessionConfig) -> Result<(String, u32, mcle_core::SessionStatus)> {
        let mut slots = self.slots.lock().unwrap();
        if slots.len() >= self.max_sessions {
            return Err(StoreError::Capacity(self.max_sessions));
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::new(id.clone(), self.data.clone(), config)?;
        let reply = (id.clone(), session.t(), session.status());
        slots.insert(
            id,
            Arc::new(Mutex::new(Slot {
                session: Some(session),
                last_activity: Instant::now(),
            })),
        );
        Ok(reply)
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>> {
        self.slots
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    /// Runs `f` with exclusive access to the session, restoring it from its
    /// checkpoint first if it was evicted.
    pub fn with_session<R>(&self, id: &str, f: impl FnOnce(&mut Session) -> R) -> Result<R> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock().unwrap();
        if slot.session.is_none() {
            let checkpoint = self.read_checkpoint(id)?;
            log::info!("restoring session {id} from checkpoint");
            slot.session = Some(Session::restore(self.data.clone(), &checkpoint)?);
        }
        slot.last_activity = Instant::now();
        Ok(f(slot.session.as_mut().expect("restored above")))
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.checkpoint_dir.as_ref().map(|d| d.join(id))
    }

    fn read_checkpoint(&self, id: &str) -> Result<SessionCheckpoint> {
        let dir = self
            .session_dir(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let path = dir.join(CHECKPOINT_FILE);
        let text = fs::read_to_string(&path).map_err(|source| StoreError::Checkpoint {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| StoreError::Checkpoint {
            path,
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })
    }

    /// Writes the replay log, the run log and the model snapshot.
    fn write_checkpoint(&self, session: &Session) -> Result<()> {
        let Some(dir) = self.session_dir(session.id()) else {
            return Ok(());
        };
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Checkpoint { path, source }
        };
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let model_path = dir.join(MODEL_FILE);
        session
            .model()
            .snapshot()
            .save(&model_path)
            .map_err(|e| StoreError::Checkpoint {
                path: model_path.clone(),
                source: io::Error::other(e),
            })?;
        let run = session.run_result(Some(model_path.display().to_string()));
        let run_path = dir.join(RUN_FILE);
        fs::write(&run_path, serde_json::to_vec_pretty(&run).expect("serializable")).map_err(io_err(&run_path))?;
        // written last: its presence marks a complete checkpoint
        let ck_path = dir.join(CHECKPOINT_FILE);
        let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&session.checkpoint()).expect("serializable"))
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &ck_path).map_err(io_err(&ck_path))?;
        Ok(())
    }

    /// Checkpoints and drops sessions idle for longer than the timeout.
    /// Without a checkpoint directory nothing is evicted.
    pub fn evict_idle(&self) -> usize {
        if self.checkpoint_dir.is_none() {
            return 0;
        }
        let slots: Vec<Arc<Mutex<Slot>>> = self.slots.lock().unwrap().values().cloned().collect();
        let mut evicted = 0;
        for slot in slots {
            // skip sessions busy with a request
            let Ok(mut slot) = slot.try_lock() else { continue };
            if slot.last_activity.elapsed() < self.idle_timeout {
                continue;
            }
            if let Some(session) = &slot.session {
                match self.write_checkpoint(session) {
                    Ok(()) => {
                        log::info!("evicted idle session {}", session.id());
                        slot.session = None;
                        evicted += 1;
                    }
                    Err(e) => log::error!("could not checkpoint {}: {e}", session.id()),
                }
            }
        }
        evicted
    }

    /// Checkpoints every live session; used on shutdown.
    pub fn checkpoint_all(&self) -> Result<usize> {
        let slots: Vec<Arc<Mutex<Slot>>> = self.slots.lock().unwrap().values().cloned().collect();
        let mut written = 0;
        for slot in slots {
            let slot = slot.lock().unwrap();
            if let Some(session) = &slot.session {
                self.write_checkpoint(session)?;
                written += 1;
            }
        }
        Ok(written)
    }

    /// Registers every checkpoint found on disk as an evicted session.
    pub fn load_checkpoints(&self) -> Result<usize> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(0);
        };
        if !dir.exists() {
            return Ok(0);
        }
        let entries = fs::read_dir(dir).map_err(|source| StoreError::Checkpoint {
            path: dir.clone(),
            source,
        })?;
        let mut slots = self.slots.lock().unwrap();
        let mut found = 0;
        for entry in entries.flatten() {
            let path = entry.path();
            let Some(id) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
                continue;
            };
            if !path.join(CHECKPOINT_FILE).is_file() || slots.contains_key(&id) {
                continue;
            }
            slots.insert(
                id,
                Arc::new(Mutex::new(Slot {
                    session: None,
                    last_activity: Instant::now(),
                })),
            );
            found += 1;
        }
        Ok(found)
    }
}

//! On-disk session store.
//!
//! Each session lives in `<root>/sessions/<id>/`:
//!
//! - `session.json`: metadata, including the byte length of `samples.jsonl`
//!   covered by acknowledged batches
//! - `samples.jsonl`: accepted samples, one per line
//! - `sparse_map.json`, `radiomap.json`, `report.json`: training artifacts
//!
//! A batch is appended with a single write, synced, and only then counted in
//! `session.json`. On reopen, anything past the recorded length is a batch
//! that was never acknowledged and is cut off.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use ips_core::jsonl::encode_line;
use ips_core::localizer::{AccuracyRecord, LocalizerConfig};
use ips_core::{
    evaluate, localize, read_jsonl, train, DenseRadioMap, Evaluation, FingerprintSample, LocalizeError,
    Observation, PositionEstimate, SurveyArea, TrainConfig, TrainingReport, TruthObservation,
    ValidationError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, Mutex};

/// Events buffered per subscriber before it counts as too slow.
pub const STREAM_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Collecting,
    Training,
    Trained,
    Failed,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session {0:?}")]
    SessionNotFound(String),
    #[error("session is {state:?}; {action} requires {expected}")]
    WrongState { state: SessionState, action: &'static str, expected: &'static str },
    #[error("session has no trained radio map (state {0:?})")]
    NotTrained(SessionState),
    #[error("invalid area: {0}")]
    InvalidArea(ValidationError),
    #[error("sample {index}: {reason}")]
    ValidationFailed { index: usize, reason: String },
    #[error("{0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Localize(LocalizeError),
    #[error("{kind}: {detail}")]
    TrainingFailed { kind: &'static str, detail: String },
    #[error("storage error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    session_id: String,
    area: SurveyArea,
    state: SessionState,
    created_at: DateTime<Utc>,
    trained_at: Option<DateTime<Utc>>,
    committed_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

/// Public view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub area: SurveyArea,
    pub state: SessionState,
    pub sample_count: usize,
    pub created_at: DateTime<Utc>,
    pub trained_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// One message on a session's live stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "lowercase")]
pub enum StreamEvent {
    Estimate(PositionEstimate),
    Accuracy(AccuracyRecord),
}

struct Inner {
    meta: SessionMeta,
    sample_count: usize,
}

pub struct Session {
    dir: PathBuf,
    inner: Mutex<Inner>,
    radiomap: RwLock<Option<Arc<DenseRadioMap>>>,
    events: broadcast::Sender<StreamEvent>,
}

impl Session {
    fn new(dir: PathBuf, meta: SessionMeta, sample_count: usize, radiomap: Option<DenseRadioMap>) -> Self {
        let (events, _) = broadcast::channel(STREAM_CAPACITY);
        Session {
            dir,
            inner: Mutex::new(Inner { meta, sample_count }),
            radiomap: RwLock::new(radiomap.map(Arc::new)),
            events,
        }
    }

    fn samples_path(&self) -> PathBuf {
        self.dir.join("samples.jsonl")
    }

    fn snapshot(&self) -> Option<Arc<DenseRadioMap>> {
        self.radiomap.read().unwrap().clone()
    }
}

fn info(meta: &SessionMeta, sample_count: usize) -> SessionInfo {
    SessionInfo {
        session_id: meta.session_id.clone(),
        area: meta.area.clone(),
        state: meta.state,
        sample_count,
        created_at: meta.created_at,
        trained_at: meta.trained_at,
        failure: meta.failure.clone(),
    }
}

/// Writes `bytes` to `path` through a synced temporary file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // Best effort: not every platform can open a directory for syncing.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

fn save_meta(dir: &Path, meta: &SessionMeta) -> io::Result<()> {
    let mut json = serde_json::to_vec_pretty(meta).map_err(io::Error::other)?;
    json.push(b'\n');
    write_atomic(&dir.join("session.json"), &json)
}

fn count_lines(path: &Path) -> io::Result<usize> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e),
    };
    let mut n = 0;
    for line in BufReader::new(f).lines() {
        if !line?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

pub struct SessionStore {
    sessions_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionStore {
    /// Opens (or creates) a store under `root`, recovering every session
    /// found there.
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let sessions_dir = root.as_ref().join("sessions");
        fs::create_dir_all(&sessions_dir)?;
        let mut sessions = HashMap::new();
        let mut entries: Vec<_> = fs::read_dir(&sessions_dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let dir = entry.path();
            if !dir.is_dir() {
                continue;
            }
            match recover(&dir) {
                Ok(Some(session)) => {
                    let id = session.inner.try_lock().unwrap().meta.session_id.clone();
                    sessions.insert(id, Arc::new(session));
                }
                Ok(None) => {}
                Err(e) => eprintln!("warning: skipping session {}: {e}", dir.display()),
            }
        }
        Ok(SessionStore { sessions_dir, sessions: RwLock::new(sessions) })
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, StoreError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| StoreError::SessionNotFound(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn create_session(&self, area: SurveyArea) -> Result<String, StoreError> {
        area.validate().map_err(StoreError::InvalidArea)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.sessions_dir.join(&id);
        let meta = SessionMeta {
            session_id: id.clone(),
            area,
            state: SessionState::Collecting,
            created_at: Utc::now(),
            trained_at: None,
            committed_bytes: 0,
            failure: None,
        };
        let write_dir = dir.clone();
        let write_meta = meta.clone();
        blocking(move || {
            fs::create_dir_all(&write_dir)?;
            File::create(write_dir.join("samples.jsonl"))?.sync_all()?;
            save_meta(&write_dir, &write_meta)
        })
        .await?;
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(Session::new(dir, meta, 0, None)));
        Ok(id)
    }

    pub async fn info(&self, id: &str) -> Result<SessionInfo, StoreError> {
        let session = self.get(id)?;
        let inner = session.inner.lock().await;
        Ok(info(&inner.meta, inner.sample_count))
    }

    /// Validates the whole batch, then appends it in one write. Returns the
    /// number of samples accepted.
    pub async fn ingest(&self, id: &str, batch: Vec<FingerprintSample>) -> Result<usize, StoreError> {
        let session = self.get(id)?;
        let mut inner = session.inner.lock().await;
        if inner.meta.state != SessionState::Collecting {
            return Err(StoreError::WrongState { state: inner.meta.state, action: "ingest", expected: "Collecting" });
        }
        let mut buf = Vec::new();
        for (index, sample) in batch.into_iter().enumerate() {
            let sample = ips_core::validate_sample(sample, &inner.meta.area)
                .map_err(|e| StoreError::ValidationFailed { index, reason: e.to_string() })?;
            buf.extend(encode_line(&sample));
        }
        let n = buf.iter().filter(|&&b| b == b'\n').count();
        if n == 0 {
            return Ok(0);
        }
        let mut meta = inner.meta.clone();
        let path = session.samples_path();
        let dir = session.dir.clone();
        let committed = meta.committed_bytes;
        meta.committed_bytes += buf.len() as u64;
        let new_meta = meta.clone();
        blocking(move || {
            let mut f = OpenOptions::new().write(true).open(&path)?;
            // Anything past the marker is debris from a failed append.
            f.set_len(committed)?;
            let result = (|| {
                use std::io::Seek;
                f.seek(io::SeekFrom::Start(committed))?;
                f.write_all(&buf)?;
                f.sync_data()?;
                save_meta(&dir, &new_meta)
            })();
            if result.is_err() {
                let _ = f.set_len(committed);
            }
            result
        })
        .await?;
        inner.meta = meta;
        inner.sample_count += n;
        Ok(n)
    }

    /// Trains the session's radio map. The session is marked Training for
    /// the duration, so other train or ingest requests are refused.
    pub async fn train(&self, id: &str, config: TrainConfig) -> Result<TrainingReport, StoreError> {
        config.validate().map_err(|e| StoreError::InvalidRequest(e.to_string()))?;
        let session = self.get(id)?;
        let (area, committed) = {
            let mut inner = session.inner.lock().await;
            if !matches!(inner.meta.state, SessionState::Collecting | SessionState::Failed) {
                return Err(StoreError::WrongState {
                    state: inner.meta.state,
                    action: "train",
                    expected: "Collecting or Failed",
                });
            }
            let mut meta = inner.meta.clone();
            meta.state = SessionState::Training;
            meta.failure = None;
            let dir = session.dir.clone();
            let to_save = meta.clone();
            blocking(move || save_meta(&dir, &to_save)).await?;
            inner.meta = meta;
            (inner.meta.area.clone(), inner.meta.committed_bytes)
        };

        let dir = session.dir.clone();
        let job = tokio::task::spawn_blocking(move || run_training(&dir, &area, committed, config)).await;
        let outcome = match job {
            Ok(r) => r,
            Err(e) => Err(StoreError::TrainingFailed { kind: "Panicked", detail: e.to_string() }),
        };

        let mut inner = session.inner.lock().await;
        let mut meta = inner.meta.clone();
        let result = match outcome {
            Ok((report, map)) => {
                meta.state = SessionState::Trained;
                meta.trained_at = Some(Utc::now());
                *session.radiomap.write().unwrap() = Some(Arc::new(map));
                Ok(report)
            }
            Err(e) => {
                meta.state = SessionState::Failed;
                meta.failure = Some(e.to_string());
                let body = serde_json::json!({ "error": "TrainingFailed", "detail": e.to_string() });
                let dir = session.dir.clone();
                let _ = blocking(move || write_atomic(&dir.join("report.json"), format!("{body:#}\n").as_bytes())).await;
                Err(e)
            }
        };
        let dir = session.dir.clone();
        let to_save = meta.clone();
        blocking(move || save_meta(&dir, &to_save)).await?;
        inner.meta = meta;
        result
    }

    /// The persisted radiomap.json bytes of a trained session.
    pub async fn radiomap_json(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let session = self.get(id)?;
        if session.snapshot().is_none() {
            return Err(StoreError::NotTrained(session.inner.lock().await.meta.state));
        }
        let path = session.dir.join("radiomap.json");
        Ok(blocking(move || fs::read(path)).await?)
    }

    async fn trained(&self, id: &str) -> Result<(Arc<Session>, Arc<DenseRadioMap>), StoreError> {
        let session = self.get(id)?;
        match session.snapshot() {
            Some(map) => Ok((session, map)),
            None => {
                let state = session.inner.lock().await.meta.state;
                Err(StoreError::NotTrained(state))
            }
        }
    }

    /// Localizes against the session's radio map and publishes the estimate.
    pub async fn localize(&self, id: &str, obs: Observation) -> Result<PositionEstimate, StoreError> {
        let (session, map) = self.trained(id).await?;
        let est = localize(&obs, &map, LocalizerConfig::default()).map_err(StoreError::Localize)?;
        let _ = session.events.send(StreamEvent::Estimate(est.clone()));
        Ok(est)
    }

    /// Scores observations against their ground truth and publishes one
    /// accuracy event per localized record.
    pub async fn evaluate(&self, id: &str, items: Vec<TruthObservation>) -> Result<Evaluation, StoreError> {
        let (session, map) = self.trained(id).await?;
        for (index, item) in items.iter().enumerate() {
            item.observation
                .validate()
                .map_err(|e| StoreError::ValidationFailed { index, reason: e.to_string() })?;
        }
        let ev = evaluate(&items, &map, LocalizerConfig::default()).map_err(StoreError::Localize)?;
        for r in &ev.records {
            let _ = session.events.send(StreamEvent::Accuracy(r.clone()));
        }
        Ok(ev)
    }

    /// Subscribes to a trained session's live events, starting from now.
    pub async fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<StreamEvent>, StoreError> {
        let (session, _) = self.trained(id).await?;
        Ok(session.events.subscribe())
    }

    /// Reads back every accepted sample.
    pub async fn samples(&self, id: &str) -> Result<Vec<FingerprintSample>, StoreError> {
        let session = self.get(id)?;
        let _guard = session.inner.lock().await;
        let path = session.samples_path();
        let samples = blocking(move || read_jsonl(BufReader::new(File::open(path)?)).map_err(io::Error::other)).await?;
        Ok(samples)
    }
}

fn run_training(
    dir: &Path,
    area: &SurveyArea,
    committed: u64,
    config: TrainConfig,
) -> Result<(TrainingReport, DenseRadioMap), StoreError> {
    let mut bytes = Vec::new();
    File::open(dir.join("samples.jsonl"))?.take(committed).read_to_end(&mut bytes)?;
    let samples = read_jsonl(&bytes[..]).map_err(|e| StoreError::TrainingFailed {
        kind: "CorruptStore",
        detail: e.to_string(),
    })?;
    let artifacts = train(&samples, area, config)
        .map_err(|e| StoreError::TrainingFailed { kind: e.kind(), detail: e.to_string() })?;
    let mut sparse = artifacts.sparse.to_json();
    if !sparse.ends_with('\n') {
        sparse.push('\n');
    }
    let mut report = serde_json::to_string_pretty(&artifacts.report).map_err(io::Error::other)?;
    report.push('\n');
    write_atomic(&dir.join("sparse_map.json"), sparse.as_bytes())?;
    write_atomic(&dir.join("radiomap.json"), artifacts.dense.to_json().as_bytes())?;
    write_atomic(&dir.join("report.json"), report.as_bytes())?;
    Ok((artifacts.report, artifacts.dense))
}

/// Restores one session directory. Returns `None` for a directory without
/// metadata (a creation that never completed).
fn recover(dir: &Path) -> io::Result<Option<Session>> {
    let meta_path = dir.join("session.json");
    let raw = match fs::read(&meta_path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut meta: SessionMeta = serde_json::from_slice(&raw).map_err(io::Error::other)?;
    let samples = dir.join("samples.jsonl");
    let mut dirty = false;
    match OpenOptions::new().write(true).open(&samples) {
        Ok(f) => {
            let len = f.metadata()?.len();
            if len > meta.committed_bytes {
                f.set_len(meta.committed_bytes)?;
                f.sync_all()?;
            } else if len < meta.committed_bytes {
                return Err(io::Error::other(format!(
                    "samples.jsonl has {len} bytes but {} were acknowledged",
                    meta.committed_bytes
                )));
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound && meta.committed_bytes == 0 => {
            File::create(&samples)?;
        }
        Err(e) => return Err(e),
    }
    let sample_count = count_lines(&samples)?;

    if meta.state == SessionState::Training {
        meta.state = SessionState::Failed;
        meta.failure = Some("training interrupted by shutdown".into());
        dirty = true;
    }
    let mut radiomap = None;
    if meta.state == SessionState::Trained {
        match fs::read_to_string(dir.join("radiomap.json")).map_err(|e| e.to_string()).and_then(|s| {
            DenseRadioMap::from_json(&s).map_err(|e| e.to_string())
        }) {
            Ok(map) => radiomap = Some(map),
            Err(e) => {
                meta.state = SessionState::Failed;
                meta.failure = Some(format!("radiomap.json unreadable: {e}"));
                dirty = true;
            }
        }
    }
    if dirty {
        save_meta(dir, &meta)?;
    }
    Ok(Some(Session::new(dir.to_path_buf(), meta, sample_count, radiomap)))
}

async fn blocking<T, F>(f: F) -> io::Result<T>
where
    F: FnOnce() -> io::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(io::Error::other)?
}

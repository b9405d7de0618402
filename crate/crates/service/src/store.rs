//! In-memory session registry with periodic snapshot persistence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use storyweave_core::gateway::{Gateway, GatewayError};
use storyweave_core::model::{KnowledgeDoc, NarrativeContext};

use crate::session::{Session, SessionConfig, SessionError};

/// Builds the gateway for a new session. Each session gets its own so that
/// scripted backends keep per-session call order.
pub type GatewayFactory = Arc<dyn Fn() -> Result<Gateway, GatewayError> + Send + Sync>;

pub type SharedSession = Arc<RwLock<Session>>;

pub struct SessionStore {
    sessions: RwLock<HashMap<String, SharedSession>>,
    next_id: AtomicU64,
    gateway: GatewayFactory,
    defaults: SessionConfig,
    /// Last revision written per session.
    persisted: Mutex<HashMap<String, u64>>,
}

impl std::fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionStore")
            .field("sessions", &self.len())
            .field("defaults", &self.defaults)
            .finish()
    }
}

pub struct NewSession<'a> {
    pub data: &'a [u8],
    pub format_hint: Option<&'a str>,
    pub dataset_name: &'a str,
    pub knowledge: Vec<KnowledgeDoc>,
    pub intent: String,
    pub config: Option<SessionConfig>,
}

impl SessionStore {
    pub fn new(gateway: GatewayFactory, defaults: SessionConfig) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            gateway,
            defaults,
            persisted: Mutex::new(HashMap::new()),
        }
    }

    /// Sessions whose gateway is always unavailable.
    pub fn offline(defaults: SessionConfig) -> Self {
        Self::new(Arc::new(|| Ok(Gateway::disabled())), defaults)
    }

    pub fn defaults(&self) -> SessionConfig {
        self.defaults
    }

    pub fn len(&self) -> usize {
        self.sessions.read().map(|s| s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, req: NewSession<'_>) -> Result<(String, SharedSession), SessionError> {
        let gateway = (self.gateway)().map_err(|e| SessionError::GatewayUnavailable(e.to_string()))?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Session::create(
            id.clone(),
            req.data,
            req.format_hint,
            req.dataset_name,
            NarrativeContext::new(req.knowledge, req.intent),
            req.config.unwrap_or(self.defaults),
            gateway,
        )?;
        let shared = Arc::new(RwLock::new(session));
        self.sessions
            .write()
            .map_err(|_| SessionError::InvalidRequest("session registry poisoned".into()))?
            .insert(id.clone(), Arc::clone(&shared));
        Ok((id, shared))
    }

    pub fn get(&self, id: &str) -> Result<SharedSession, SessionError> {
        self.sessions
            .read()
            .ok()
            .and_then(|s| s.get(id).cloned())
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    /// Runs `f` with exclusive access to one session.
    pub fn mutate<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, SessionError>) -> Result<T, SessionError> {
        let shared = self.get(id)?;
        let mut guard = shared.write().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }

    pub fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> Result<T, SessionError>) -> Result<T, SessionError> {
        let shared = self.get(id)?;
        let guard = shared.read().unwrap_or_else(|p| p.into_inner());
        f(&guard)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().map(|s| s.keys().cloned().collect()).unwrap_or_default();
        ids.sort();
        ids
    }

    pub fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.story.json"))
    }

    /// Writes `<id>.story.json` for every session changed since its last
    /// snapshot. Returns the ids written.
    pub fn snapshot_changed(&self, dir: &Path) -> std::io::Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for id in self.ids() {
            let Ok(shared) = self.get(&id) else { continue };
            let (revision, text) = {
                let s = shared.read().unwrap_or_else(|p| p.into_inner());
                let last = self.persisted.lock().ok().and_then(|m| m.get(&id).copied());
                if last == Some(s.revision) {
                    continue;
                }
                match s.snapshot() {
                    Ok(t) => (s.revision, t),
                    Err(e) => {
                        tracing::warn!(session = %id, error = %e, "snapshot failed");
                        continue;
                    }
                }
            };
            let path = Self::snapshot_path(dir, &id);
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, text)?;
            std::fs::rename(&tmp, &path)?;
            if let Ok(mut m) = self.persisted.lock() {
                m.insert(id.clone(), revision);
            }
            written.push(id);
        }
        Ok(written)
    }

    /// Periodically snapshots changed sessions until the runtime stops.
    pub fn spawn_snapshots(self: &Arc<Self>, dir: PathBuf, every: Duration) -> tokio::task::JoinHandle<()> {
        let store = Arc::clone(self);
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(every);
            ticker.tick().await;
            loop {
                ticker.tick().await;
                let store = Arc::clone(&store);
                let dir = dir.clone();
                match tokio::task::spawn_blocking(move || store.snapshot_changed(&dir)).await {
                    Ok(Ok(ids)) if !ids.is_empty() => tracing::debug!(?ids, "snapshots written"),
                    Ok(Err(e)) => tracing::warn!(error = %e, "snapshot write failed"),
                    _ => {}
                }
            }
        })
    }
}

//! Sessions and the bounded in-memory store that holds them.

use std::collections::HashMap;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex, MutexGuard};

use lro_core::bench::Method;
use lro_core::instruction::EditSpec;
use lro_core::lro::RunEvent;
use lro_core::manifest::RunManifest;
use lro_core::pipeline::{CodecKind, ComponentSelection, DenoiserKind, ExtractorKind};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Created,
    Running,
    Cancelled,
    Failed,
    Done,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Cancelled | Self::Failed | Self::Done)
    }
}

/// Body of `POST /sessions/{id}/run`; every field is optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunRequest {
    pub method: Method,
    pub codec: CodecKind,
    pub denoiser: DenoiserKind,
    pub extractor: ExtractorKind,
    /// Attach image-resolution RLE target regions to every event.
    pub rho_preview: bool,
    pub seed: u64,
}

impl Default for RunRequest {
    fn default() -> Self {
        Self {
            method: Method::Pbsi,
            codec: CodecKind::default(),
            denoiser: DenoiserKind::default(),
            extractor: ExtractorKind::default(),
            rho_preview: true,
            seed: 0,
        }
    }
}

impl RunRequest {
    pub fn components(&self) -> ComponentSelection {
        ComponentSelection {
            codec: self.codec,
            denoiser: self.denoiser,
            extractor: self.extractor,
        }
    }
}

/// Finished run output.
#[derive(Debug)]
pub struct Completed {
    pub png: Vec<u8>,
    pub manifest: RunManifest,
}

#[derive(Debug)]
pub struct SessionData {
    pub state: SessionState,
    pub events: Vec<RunEvent>,
    pub result: Option<Arc<Completed>>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub spec: EditSpec,
    pub cancel: AtomicBool,
    data: Mutex<SessionData>,
    changed: watch::Sender<u64>,
}

impl Session {
    pub fn new(id: String, spec: EditSpec) -> Self {
        Self {
            id,
            spec,
            cancel: AtomicBool::new(false),
            data: Mutex::new(SessionData {
                state: SessionState::Created,
                events: Vec::new(),
                result: None,
                error: None,
            }),
            changed: watch::Sender::new(0),
        }
    }

    pub fn data(&self) -> MutexGuard<'_, SessionData> {
        self.data.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Applies `f` under the lock and wakes pollers.
    pub fn update<R>(&self, f: impl FnOnce(&mut SessionData) -> R) -> R {
        let out = f(&mut self.data());
        self.changed.send_modify(|v| *v += 1);
        out
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.changed.subscribe()
    }

    pub fn state(&self) -> SessionState {
        self.data().state
    }
}

/// Sessions keyed by id; at capacity the least recently used terminal session is evicted.
#[derive(Debug)]
pub struct SessionStore {
    capacity: usize,
    clock: u64,
    entries: HashMap<String, (Arc<Session>, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("session store is full ({0} live sessions)")]
pub struct StoreFull(pub usize);

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            clock: 0,
            entries: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn insert(&mut self, session: Arc<Session>) -> Result<(), StoreFull> {
        if self.entries.len() >= self.capacity {
            let victim = self
                .entries
                .iter()
                .filter(|(_, (s, _))| s.state().is_terminal())
                .min_by_key(|(_, (_, used))| *used)
                .map(|(id, _)| id.clone())
                .ok_or(StoreFull(self.entries.len()))?;
            tracing::debug!(session = %victim, "evicting terminal session");
            self.entries.remove(&victim);
        }
        let now = self.tick();
        self.entries.insert(session.id.clone(), (session, now));
        Ok(())
    }

    pub fn get(&mut self, id: &str) -> Option<Arc<Session>> {
        let now = self.tick();
        self.entries.get_mut(id).map(|(s, used)| {
            *used = now;
            s.clone()
        })
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Arc<Session>> {
        self.entries.values().map(|(s, _)| s)
    }
}

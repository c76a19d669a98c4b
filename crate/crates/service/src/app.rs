//! Shared service state: the session store, the worker pool and result persistence.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use lro_core::baseline::BaselineParams;
use lro_core::bench::run_spec;
use lro_core::instruction::encode_png;
use lro_core::lro::{RunEvent, RunOptions};
use lro_core::manifest::{trace_csv, RunManifest};
use tokio::sync::{Notify, Semaphore};

use crate::session::{Completed, RunRequest, Session, SessionState, SessionStore, StoreFull};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Runs executing at once.
    pub workers: usize,
    /// Accepted runs waiting for a worker.
    pub queue: usize,
    /// Sessions kept in memory.
    pub capacity: usize,
    /// Finished results land in `<output_dir>/<session id>/`.
    pub output_dir: PathBuf,
    /// Upper bound on `wait_ms` for event long-polls.
    pub max_wait_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            queue: 4,
            capacity: 32,
            output_dir: PathBuf::from("sessions"),
            max_wait_ms: 30_000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error("session is {0:?}, not created")]
    State(SessionState),
    #[error("all {0} run slots are taken")]
    Busy(usize),
}

#[derive(Debug)]
pub struct App {
    pub config: ServiceConfig,
    store: Mutex<SessionStore>,
    slots: Arc<Semaphore>,
    in_flight: AtomicUsize,
    idle: Notify,
}

impl App {
    pub fn new(config: ServiceConfig) -> std::io::Result<Arc<Self>> {
        std::fs::create_dir_all(&config.output_dir)?;
        Ok(Arc::new(Self {
            store: Mutex::new(SessionStore::new(config.capacity)),
            slots: Arc::new(Semaphore::new(config.workers.max(1))),
            in_flight: AtomicUsize::new(0),
            idle: Notify::new(),
            config,
        }))
    }

    fn store(&self) -> std::sync::MutexGuard<'_, SessionStore> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn insert(&self, session: Session) -> Result<Arc<Session>, StoreFull> {
        let session = Arc::new(session);
        self.store().insert(session.clone())?;
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.store().get(id)
    }

    fn run_capacity(&self) -> usize {
        self.config.workers.max(1) + self.config.queue
    }

    /// Moves a created session to running and schedules it on the worker pool.
    pub fn start(self: &Arc<Self>, session: Arc<Session>, req: RunRequest) -> Result<(), StartError> {
        let mut data = session.data();
        if data.state != SessionState::Created {
            return Err(StartError::State(data.state));
        }
        let cap = self.run_capacity();
        self.in_flight
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < cap).then_some(n + 1))
            .map_err(|_| StartError::Busy(cap))?;
        data.state = SessionState::Running;
        drop(data);
        session.update(|_| ());

        let app = self.clone();
        tokio::spawn(async move {
            let permit = app.slots.clone().acquire_owned().await.expect("worker semaphore never closes");
            let worker_app = app.clone();
            let worker_session = session.clone();
            let joined = tokio::task::spawn_blocking(move || {
                let slot = Slot(&worker_app);
                worker_app.execute(&worker_session, req, slot)
            })
            .await;
            drop(permit);
            if let Err(e) = joined {
                session.update(|d| {
                    d.state = SessionState::Failed;
                    d.error = Some(format!("worker panicked: {e}"));
                });
            }
        });
        Ok(())
    }

    /// Runs the session; `slot` is released once results are persisted and before the
    /// terminal state becomes visible, so a client reacting to it can start another run.
    fn execute(&self, session: &Session, req: RunRequest, slot: Slot<'_>) {
        tracing::info!(session = %session.id, method = %req.method, "run started");
        let sink = |e: &RunEvent| session.update(|d| d.events.push(e.clone()));
        let opts = RunOptions {
            session_id: &session.id,
            rho_preview: req.rho_preview,
            cancel: Some(&session.cancel),
            on_event: Some(&sink),
            snapshot_every: 0,
        };
        let outcome = run_spec(&session.spec, req.method, req.components(), &BaselineParams::default(), &opts);
        match outcome {
            Ok(result) => {
                let completed = Completed {
                    png: encode_png(&result.image),
                    manifest: RunManifest::new(&session.spec, req.method, req.components(), req.seed, &result),
                };
                if let Err(e) = persist(&self.config.output_dir.join(&session.id), &completed) {
                    tracing::error!(session = %session.id, error = %e, "could not persist result");
                }
                let state = if result.cancelled {
                    SessionState::Cancelled
                } else {
                    SessionState::Done
                };
                tracing::info!(session = %session.id, ?state, events = result.loss_trace.len(), "run finished");
                drop(slot);
                session.update(|d| {
                    d.state = state;
                    d.result = Some(Arc::new(completed));
                });
            }
            Err(e) => {
                tracing::warn!(session = %session.id, error = %e, "run failed");
                drop(slot);
                session.update(|d| {
                    d.state = SessionState::Failed;
                    d.error = Some(e.to_string());
                });
            }
        }
    }

    /// Raises the cancel flag of every running session.
    pub fn cancel_all(&self) {
        for s in self.store().sessions() {
            if s.state() == SessionState::Running {
                s.cancel.store(true, Ordering::SeqCst);
            }
        }
    }

    /// Resolves once no run is queued or executing.
    pub async fn drain(&self) {
        loop {
            let idle = self.idle.notified();
            if self.in_flight.load(Ordering::SeqCst) == 0 {
                return;
            }
            idle.await;
        }
    }
}

/// One unit of run capacity, returned on drop.
struct Slot<'a>(&'a App);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        if self.0.in_flight.fetch_sub(1, Ordering::SeqCst) == 1 {
            self.0.idle.notify_waiters();
        }
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

/// Writes `edited.png`, `loss_trace.csv` and `manifest.json`, each through a temporary
/// file renamed into place.
pub fn persist(dir: &Path, completed: &Completed) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(dir, "edited.png", &completed.png)?;
    write_atomic(dir, "loss_trace.csv", trace_csv(&completed.manifest.loss_trace).as_bytes())?;
    let manifest = serde_json::to_vec_pretty(&completed.manifest).map_err(std::io::Error::other)?;
    write_atomic(dir, "manifest.json", &manifest)
}

//! Level-triggered reconciliation machinery.
//!
//! Controllers are registered per [`Kind`]. The [`Manager`] turns store watch
//! events, periodic resyncs and external pokes into deduplicated object keys
//! and hands each key to the kind's [`Reconciler`]. Reconcilers only ever see
//! the key, never the event, so they must read current state themselves.

mod manager;
mod queue;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::clock::Tick;
use crate::model::{Kind, ObjectKey};
use crate::store::{Store, WatchEvent};

pub use manager::{
    ControllerReport, ExecutionMode, InvocationRecord, Manager, ManagerConfig, ManagerReport,
    OutcomeKind,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("a controller for {0} is already registered")]
    DuplicateController(Kind),
    #[error("no controller registered for {0}")]
    UnknownKind(Kind),
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

/// Why a reconcile pass failed. `reason` is a short machine token.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{reason}: {message}")]
pub struct ReconcileError {
    pub reason: String,
    pub message: String,
}

impl ReconcileError {
    pub fn new(reason: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReconcileOutcome {
    Done,
    RequeueAfter(Tick),
    Failed(ReconcileError),
}

impl ReconcileOutcome {
    pub fn failed(reason: impl Into<String>, message: impl Into<String>) -> Self {
        ReconcileOutcome::Failed(ReconcileError::new(reason, message))
    }
}

impl<E: Into<ReconcileError>> From<Result<ReconcileOutcome, E>> for ReconcileOutcome {
    fn from(r: Result<ReconcileOutcome, E>) -> Self {
        r.unwrap_or_else(|e| ReconcileOutcome::Failed(e.into()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReconcileContext {
    pub tick: Tick,
}

pub trait Reconciler: Send + Sync {
    fn reconcile(&self, key: &ObjectKey, ctx: &ReconcileContext) -> ReconcileOutcome;
}

impl<F> Reconciler for F
where
    F: Fn(&ObjectKey, &ReconcileContext) -> ReconcileOutcome + Send + Sync,
{
    fn reconcile(&self, key: &ObjectKey, ctx: &ReconcileContext) -> ReconcileOutcome {
        self(key, ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ControllerConfig {
    pub max_concurrent_reconciles: usize,
    pub base_backoff: Tick,
    pub max_backoff: Tick,
    pub resync_period: Tick,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            max_concurrent_reconciles: 1,
            base_backoff: 1,
            max_backoff: 64,
            resync_period: 100,
        }
    }
}

impl ControllerConfig {
    pub fn check(&self) -> Result<(), RuntimeError> {
        if self.max_concurrent_reconciles == 0 {
            return Err(RuntimeError::InvalidConfig(
                "maxConcurrentReconciles must be at least 1".into(),
            ));
        }
        if self.base_backoff == 0 || self.base_backoff > self.max_backoff {
            return Err(RuntimeError::InvalidConfig(
                "require 0 < baseBackoff <= maxBackoff".into(),
            ));
        }
        if self.resync_period == 0 {
            return Err(RuntimeError::InvalidConfig("resyncPeriod must be positive".into()));
        }
        Ok(())
    }
}

/// Maps an event on a watched kind to keys of the owning controller.
pub type Mapper = Arc<dyn Fn(&WatchEvent, &Store) -> Vec<ObjectKey> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerHandle {
    pub kind: Kind,
}

#[derive(Debug, Default)]
struct ExternalInner {
    kinds: BTreeSet<Kind>,
    pending: Vec<ObjectKey>,
}

/// Handle through which components outside the manager loop (the validation
/// agent) poke controllers.
#[derive(Debug, Clone, Default)]
pub struct ExternalQueue(Arc<Mutex<ExternalInner>>);

impl ExternalQueue {
    pub fn enqueue(&self, key: ObjectKey) -> Result<(), RuntimeError> {
        let mut inner = self.0.lock().unwrap_or_else(|p| p.into_inner());
        if !inner.kinds.contains(&key.kind) {
            return Err(RuntimeError::UnknownKind(key.kind));
        }
        inner.pending.push(key);
        Ok(())
    }

    fn register(&self, kind: Kind) {
        self.0
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .kinds
            .insert(kind);
    }

    fn drain(&self) -> Vec<ObjectKey> {
        std::mem::take(&mut self.0.lock().unwrap_or_else(|p| p.into_inner()).pending)
    }

    fn is_empty(&self) -> bool {
        self.0
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .pending
            .is_empty()
    }
}

/// Something advanced by the manager once per tick, before reconciles run.
pub trait TickHook: Send + Sync {
    fn on_tick(&self, tick: Tick, queue: &ExternalQueue);

    /// Whether the hook has no timed work outstanding. The manager is only
    /// quiescent when every hook is settled.
    fn is_settled(&self) -> bool {
        true
    }
}

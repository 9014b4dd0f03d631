//! Versioned, watchable object store.
//!
//! Every successful write is assigned the next global revision and produces
//! exactly one [`WatchEvent`]. The last [`DEFAULT_RETENTION`] events are kept
//! so watchers can resume; older starting points fail with
//! [`StoreError::CompactedRevision`] and the watcher has to relist.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::ids::opaque_id;
use crate::model::{validate, Kind, ObjectKey, ResourceObject, Status, ValidationResult};

pub type Revision = u64;

pub const DEFAULT_RETENTION: usize = 1024;

const UID_SALT: u64 = 0x6b75_7065_6e73_7461;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("{0} already exists")]
    AlreadyExists(ObjectKey),
    #[error("{0} not found")]
    NotFound(ObjectKey),
    #[error("conflict on {key}: expected resourceVersion {expected}, current {current}")]
    Conflict {
        key: ObjectKey,
        expected: u64,
        current: u64,
    },
    #[error("{key} failed validation: {result}")]
    ValidationFailed {
        key: ObjectKey,
        result: ValidationResult,
    },
    #[error("namespace {0:?} not found")]
    NamespaceNotFound(String),
    #[error("namespace {0:?} is terminating")]
    NamespaceTerminating(String),
    #[error("revision {requested} has been compacted (oldest retained {oldest})")]
    CompactedRevision { requested: Revision, oldest: Revision },
    #[error("invalid write to {key}: {reason}")]
    Invalid { key: ObjectKey, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventType {
    Added,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEvent {
    #[serde(rename = "type")]
    pub type_: EventType,
    pub object: ResourceObject,
    pub revision: Revision,
}

/// Consistent snapshot returned by [`Store::list`].
#[derive(Debug, Clone)]
pub struct ListResult {
    pub items: Vec<ResourceObject>,
    pub revision: Revision,
}

/// Serializable image of the store: revision counter plus all live objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub revision: Revision,
    pub objects: Vec<ResourceObject>,
}

#[derive(Debug, Default)]
struct Inner {
    revision: Revision,
    objects: BTreeMap<ObjectKey, ResourceObject>,
    history: VecDeque<WatchEvent>,
}

#[derive(Debug)]
struct Shared {
    inner: Mutex<Inner>,
    committed: Condvar,
    clock: Clock,
    retention: usize,
}

/// Cheaply cloneable handle; all clones share the same state.
#[derive(Debug, Clone)]
pub struct Store {
    shared: Arc<Shared>,
}

fn labels_match(obj: &ResourceObject, selector: Option<&BTreeMap<String, String>>) -> bool {
    selector.is_none_or(|sel| {
        sel.iter()
            .all(|(k, v)| obj.metadata.labels.get(k) == Some(v))
    })
}

impl Store {
    pub fn new(clock: Clock) -> Self {
        Self::with_retention(clock, DEFAULT_RETENTION)
    }

    pub fn with_retention(clock: Clock, retention: usize) -> Self {
        Self::from_inner(clock, retention, Inner::default())
    }

    fn from_inner(clock: Clock, retention: usize, inner: Inner) -> Self {
        Store {
            shared: Arc::new(Shared {
                inner: Mutex::new(inner),
                committed: Condvar::new(),
                clock,
                retention: retention.max(1),
            }),
        }
    }

    /// Restore a snapshot, keeping uids and versions. Watch history starts
    /// empty, so any watch from before the snapshot revision is compacted.
    pub fn from_snapshot(snapshot: StoreSnapshot, clock: Clock) -> Self {
        let objects = snapshot
            .objects
            .into_iter()
            .map(|o| (o.key(), o))
            .collect();
        Self::from_inner(
            clock,
            DEFAULT_RETENTION,
            Inner {
                revision: snapshot.revision,
                objects,
                history: VecDeque::new(),
            },
        )
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        let inner = self.lock();
        StoreSnapshot {
            revision: inner.revision,
            objects: inner.objects.values().cloned().collect(),
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.shared.clock
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.shared.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn revision(&self) -> Revision {
        self.lock().revision
    }

    /// Assign the next revision, record the event and wake blocked watchers.
    fn commit(&self, inner: &mut Inner, type_: EventType, mut object: ResourceObject) -> ResourceObject {
        inner.revision += 1;
        let revision = inner.revision;
        object.metadata.resource_version = revision;
        match type_ {
            EventType::Deleted => {
                inner.objects.remove(&object.key());
            }
            _ => {
                inner.objects.insert(object.key(), object.clone());
            }
        }
        inner.history.push_back(WatchEvent {
            type_,
            object: object.clone(),
            revision,
        });
        while inner.history.len() > self.shared.retention {
            inner.history.pop_front();
        }
        self.shared.committed.notify_all();
        object
    }

    fn check_namespace(inner: &Inner, obj: &ResourceObject) -> Result<(), StoreError> {
        let Some(ns) = obj.metadata.namespace.as_deref() else {
            return Ok(());
        };
        match inner.objects.get(&ObjectKey::cluster(Kind::Namespace, ns)) {
            None => Err(StoreError::NamespaceNotFound(ns.to_owned())),
            Some(n) if n.is_deleting() => Err(StoreError::NamespaceTerminating(ns.to_owned())),
            Some(_) => Ok(()),
        }
    }

    pub fn create(&self, obj: ResourceObject) -> Result<ResourceObject, StoreError> {
        let key = obj.key();
        let result = validate(&obj);
        if !result.is_ok() {
            return Err(StoreError::ValidationFailed { key, result });
        }
        let mut inner = self.lock();
        if inner.objects.contains_key(&key) {
            return Err(StoreError::AlreadyExists(key));
        }
        Self::check_namespace(&inner, &obj)?;
        let mut obj = obj;
        obj.metadata.uid = opaque_id(UID_SALT, inner.revision + 1);
        obj.metadata.generation = 1;
        obj.metadata.deletion_timestamp = None;
        obj.metadata.creation_tick = self.shared.clock.now();
        obj.status = Status::default_for(key.kind);
        Ok(self.commit(&mut inner, EventType::Added, obj))
    }

    pub fn get(&self, key: &ObjectKey) -> Result<ResourceObject, StoreError> {
        self.try_get(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    pub fn try_get(&self, key: &ObjectKey) -> Option<ResourceObject> {
        self.lock().objects.get(key).cloned()
    }

    fn current_for_cas<'a>(
        inner: &'a Inner,
        obj: &ResourceObject,
    ) -> Result<&'a ResourceObject, StoreError> {
        let key = obj.key();
        let current = inner
            .objects
            .get(&key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        if current.metadata.resource_version != obj.metadata.resource_version {
            return Err(StoreError::Conflict {
                key,
                expected: obj.metadata.resource_version,
                current: current.metadata.resource_version,
            });
        }
        Ok(current)
    }

    /// Compare-and-swap write of spec and user-writable metadata (labels,
    /// annotations, finalizers). Status is left untouched. A write that
    /// changes nothing does not create a revision.
    pub fn update(&self, obj: ResourceObject) -> Result<ResourceObject, StoreError> {
        let key = obj.key();
        let mut inner = self.lock();
        let current = Self::current_for_cas(&inner, &obj)?;
        let spec_changed = current.spec != obj.spec;
        if spec_changed {
            let result = validate(&obj);
            if !result.is_ok() {
                return Err(StoreError::ValidationFailed { key, result });
            }
        }
        if current.is_deleting()
            && obj
                .metadata
                .finalizers
                .iter()
                .any(|f| !current.metadata.finalizers.contains(f))
        {
            return Err(StoreError::Invalid {
                key,
                reason: "finalizers cannot be added to a deleting object".into(),
            });
        }
        let meta_changed = current.metadata.labels != obj.metadata.labels
            || current.metadata.annotations != obj.metadata.annotations
            || current.metadata.finalizers != obj.metadata.finalizers;
        if !spec_changed && !meta_changed {
            return Ok(current.clone());
        }
        let mut next = current.clone();
        next.spec = obj.spec;
        next.metadata.labels = obj.metadata.labels;
        next.metadata.annotations = obj.metadata.annotations;
        next.metadata.finalizers = obj.metadata.finalizers;
        if spec_changed {
            next.metadata.generation += 1;
        }
        let event = if next.is_deleting() && next.metadata.finalizers.is_empty() {
            EventType::Deleted
        } else {
            EventType::Modified
        };
        Ok(self.commit(&mut inner, event, next))
    }

    /// Compare-and-swap write of status only.
    pub fn update_status(&self, obj: ResourceObject) -> Result<ResourceObject, StoreError> {
        let mut inner = self.lock();
        let current = Self::current_for_cas(&inner, &obj)?;
        if current.status == obj.status {
            return Ok(current.clone());
        }
        if std::mem::discriminant(&current.status) != std::mem::discriminant(&obj.status) {
            return Err(StoreError::Invalid {
                key: obj.key(),
                reason: "status does not match kind".into(),
            });
        }
        let mut next = current.clone();
        next.status = obj.status;
        Ok(self.commit(&mut inner, EventType::Modified, next))
    }

    /// Delete immediately when no finalizers are present; otherwise mark the
    /// object deleting and leave removal to whoever drains the finalizers.
    pub fn delete(&self, key: &ObjectKey) -> Result<ResourceObject, StoreError> {
        let mut inner = self.lock();
        let current = inner
            .objects
            .get(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        if current.is_deleting() {
            return Ok(current.clone());
        }
        let mut next = current.clone();
        if next.metadata.finalizers.is_empty() {
            next.metadata.deletion_timestamp = Some(self.shared.clock.now());
            Ok(self.commit(&mut inner, EventType::Deleted, next))
        } else {
            next.metadata.deletion_timestamp = Some(self.shared.clock.now());
            Ok(self.commit(&mut inner, EventType::Modified, next))
        }
    }

    pub fn list(
        &self,
        kind: Kind,
        namespace: Option<&str>,
        selector: Option<&BTreeMap<String, String>>,
    ) -> ListResult {
        let inner = self.lock();
        let items = inner
            .objects
            .values()
            .filter(|o| o.kind() == kind)
            .filter(|o| namespace.is_none_or(|ns| o.metadata.namespace.as_deref() == Some(ns)))
            .filter(|o| labels_match(o, selector))
            .cloned()
            .collect();
        ListResult {
            items,
            revision: inner.revision,
        }
    }

    /// Every live object, all kinds.
    pub fn list_all(&self) -> ListResult {
        let inner = self.lock();
        ListResult {
            items: inner.objects.values().cloned().collect(),
            revision: inner.revision,
        }
    }

    /// Watch events of `kind` (all kinds when `None`) committed after
    /// `from_revision`.
    pub fn watch(&self, kind: Option<Kind>, from_revision: Revision) -> Result<Watch, StoreError> {
        let inner = self.lock();
        Self::check_retained(&inner, from_revision)?;
        Ok(Watch {
            store: self.clone(),
            kind,
            cursor: from_revision,
        })
    }

    fn check_retained(inner: &Inner, from: Revision) -> Result<(), StoreError> {
        if from >= inner.revision {
            return Ok(());
        }
        let oldest = inner
            .history
            .front()
            .map_or(inner.revision + 1, |e| e.revision);
        if from + 1 < oldest {
            return Err(StoreError::CompactedRevision {
                requested: from,
                oldest,
            });
        }
        Ok(())
    }

    fn events_after(inner: &Inner, kind: Option<Kind>, cursor: Revision) -> Vec<WatchEvent> {
        let start = inner.history.partition_point(|e| e.revision <= cursor);
        inner
            .history
            .range(start..)
            .filter(|e| kind.is_none_or(|k| e.object.kind() == k))
            .cloned()
            .collect()
    }
}

/// A resumable cursor over the store's event history.
#[derive(Debug, Clone)]
pub struct Watch {
    store: Store,
    kind: Option<Kind>,
    cursor: Revision,
}

impl Watch {
    pub fn cursor(&self) -> Revision {
        self.cursor
    }

    /// Return every matching event committed since the last poll, in
    /// revision order. Fails when the watcher fell behind compaction.
    pub fn poll(&mut self) -> Result<Vec<WatchEvent>, StoreError> {
        let store = self.store.clone();
        let inner = store.lock();
        self.poll_locked(&inner)
    }

    fn poll_locked(&mut self, inner: &Inner) -> Result<Vec<WatchEvent>, StoreError> {
        Store::check_retained(inner, self.cursor)?;
        let events = Store::events_after(inner, self.kind, self.cursor);
        self.cursor = inner.revision.max(self.cursor);
        Ok(events)
    }

    /// Like [`Watch::poll`] but blocks up to `timeout` for at least one event.
    pub fn wait(&mut self, timeout: Duration) -> Result<Vec<WatchEvent>, StoreError> {
        let deadline = std::time::Instant::now() + timeout;
        let store = self.store.clone();
        let mut inner = store.lock();
        loop {
            let events = self.poll_locked(&inner)?;
            if !events.is_empty() {
                return Ok(events);
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return Ok(Vec::new());
            }
            inner = store
                .shared
                .committed
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }
}

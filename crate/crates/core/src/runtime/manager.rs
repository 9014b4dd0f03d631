use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::queue::{backoff_delay, WorkQueue};
use super::{
    ControllerConfig, ControllerHandle, ExternalQueue, Mapper, ReconcileContext, ReconcileOutcome,
    Reconciler, RuntimeError, TickHook,
};
use crate::clock::{Clock, Tick};
use crate::ids::mix64;
use crate::model::{Kind, ObjectKey, ResourceObject};
use crate::store::{EventType, Store, StoreError, Watch, WatchEvent};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionMode {
    /// One reconcile at a time, in a seeded but reproducible order.
    #[default]
    Deterministic,
    /// Up to `maxConcurrentReconciles` per controller on worker threads.
    Parallel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerConfig {
    pub mode: ExecutionMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    Done,
    Requeued,
    Failed,
    Panicked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub tick: Tick,
    pub key: ObjectKey,
    pub outcome: OutcomeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ControllerReport {
    pub invocations: u64,
    pub failures: u64,
    pub panics: u64,
    pub max_queue_depth: usize,
    pub quiescent_at_tick: Option<Tick>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManagerReport {
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub quiescent: bool,
    pub quiescent_at_tick: Option<Tick>,
    pub reentrancy_violations: u64,
    pub controllers: BTreeMap<Kind, ControllerReport>,
}

/// Metadata fingerprint: changes whenever anything but status changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Fingerprint {
    generation: u64,
    meta: u64,
}

impl Fingerprint {
    fn of(obj: &ResourceObject) -> Self {
        let mut h = DefaultHasher::new();
        obj.metadata.labels.hash(&mut h);
        obj.metadata.annotations.hash(&mut h);
        obj.metadata.finalizers.hash(&mut h);
        obj.metadata.deletion_timestamp.hash(&mut h);
        Fingerprint {
            generation: obj.metadata.generation,
            meta: h.finish(),
        }
    }
}

struct Controller {
    reconciler: Arc<dyn Reconciler>,
    config: ControllerConfig,
    watches: Vec<(Kind, Mapper)>,
    queue: WorkQueue,
    observed: HashMap<ObjectKey, Fingerprint>,
    next_resync: Tick,
    report: ControllerReport,
}

/// Shared guard used to detect two reconciles of one key at the same time.
#[derive(Default)]
struct InFlight {
    keys: Mutex<HashSet<ObjectKey>>,
    violations: AtomicU64,
}

impl InFlight {
    fn run(
        &self,
        reconciler: &dyn Reconciler,
        key: &ObjectKey,
        ctx: &ReconcileContext,
    ) -> (ReconcileOutcome, bool) {
        if !self.keys.lock().unwrap_or_else(|p| p.into_inner()).insert(key.clone()) {
            self.violations.fetch_add(1, Ordering::SeqCst);
        }
        let result = catch_unwind(AssertUnwindSafe(|| reconciler.reconcile(key, ctx)));
        self.keys.lock().unwrap_or_else(|p| p.into_inner()).remove(key);
        match result {
            Ok(outcome) => (outcome, false),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "reconciler panicked".into());
                (ReconcileOutcome::failed("Panicked", msg), true)
            }
        }
    }
}

/// Drives every registered controller on a logical clock.
pub struct Manager {
    store: Store,
    clock: Clock,
    config: ManagerConfig,
    controllers: BTreeMap<Kind, Controller>,
    hooks: Vec<Arc<dyn TickHook>>,
    external: ExternalQueue,
    watch: Option<Watch>,
    in_flight: Arc<InFlight>,
    log: Vec<InvocationRecord>,
}

impl Manager {
    pub fn new(store: Store, config: ManagerConfig) -> Self {
        let clock = store.clock().clone();
        Manager {
            store,
            clock,
            config,
            controllers: BTreeMap::new(),
            hooks: Vec::new(),
            external: ExternalQueue::default(),
            watch: None,
            in_flight: Arc::default(),
            log: Vec::new(),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    /// Handle for enqueuing keys from outside the loop.
    pub fn external_queue(&self) -> ExternalQueue {
        self.external.clone()
    }

    pub fn add_hook(&mut self, hook: Arc<dyn TickHook>) {
        self.hooks.push(hook);
    }

    /// Register the controller for `kind`: every existing object is enqueued
    /// and later changes arrive through the store watch.
    pub fn register_controller(
        &mut self,
        kind: Kind,
        reconciler: Arc<dyn Reconciler>,
        config: ControllerConfig,
    ) -> Result<ControllerHandle, RuntimeError> {
        config.check()?;
        if self.controllers.contains_key(&kind) {
            return Err(RuntimeError::DuplicateController(kind));
        }
        let listed = self.store.list(kind, None, None);
        if self.watch.is_none() {
            self.watch = Some(
                self.store
                    .watch(None, listed.revision)
                    .expect("watching from the current revision always succeeds"),
            );
        }
        let mut ctrl = Controller {
            reconciler,
            config,
            watches: Vec::new(),
            queue: WorkQueue::default(),
            observed: HashMap::new(),
            next_resync: self.clock.now() + config.resync_period,
            report: ControllerReport::default(),
        };
        for obj in listed.items {
            ctrl.observed.insert(obj.key(), Fingerprint::of(&obj));
            ctrl.queue.add(obj.key());
        }
        ctrl.report.max_queue_depth = ctrl.queue.depth();
        self.controllers.insert(kind, ctrl);
        self.external.register(kind);
        Ok(ControllerHandle { kind })
    }

    /// Let the controller for `owner` react to events on `source`.
    pub fn add_watch(&mut self, owner: Kind, source: Kind, mapper: Mapper) -> Result<(), RuntimeError> {
        let ctrl = self
            .controllers
            .get_mut(&owner)
            .ok_or(RuntimeError::UnknownKind(owner))?;
        ctrl.watches.push((source, mapper));
        Ok(())
    }

    pub fn enqueue_external(&mut self, key: ObjectKey) -> Result<(), RuntimeError> {
        let ctrl = self
            .controllers
            .get_mut(&key.kind)
            .ok_or(RuntimeError::UnknownKind(key.kind))?;
        ctrl.queue.add(key);
        Ok(())
    }

    /// Enqueue every live key of every controller.
    pub fn resync_all(&mut self) {
        for (kind, ctrl) in self.controllers.iter_mut() {
            for obj in self.store.list(*kind, None, None).items {
                ctrl.queue.add(obj.key());
            }
        }
    }

    /// Invoke a reconciler directly, outside the queue. Used by harnesses
    /// that need to run a reconcile on demand.
    pub fn reconcile_now(&mut self, key: &ObjectKey) -> Result<ReconcileOutcome, RuntimeError> {
        let ctrl = self
            .controllers
            .get(&key.kind)
            .ok_or(RuntimeError::UnknownKind(key.kind))?;
        let ctx = ReconcileContext {
            tick: self.clock.now(),
        };
        let (outcome, _) = self.in_flight.run(ctrl.reconciler.as_ref(), key, &ctx);
        Ok(outcome)
    }

    pub fn invocation_log(&self) -> &[InvocationRecord] {
        &self.log
    }

    pub fn reentrancy_violations(&self) -> u64 {
        self.in_flight.violations.load(Ordering::SeqCst)
    }

    /// Run until quiescent or until `tick_budget` ticks have elapsed.
    pub fn run(&mut self, tick_budget: Tick) -> ManagerReport {
        self.drive(tick_budget, true)
    }

    /// Run exactly `ticks` ticks, quiescent or not.
    pub fn run_ticks(&mut self, ticks: Tick) -> ManagerReport {
        self.drive(ticks, false)
    }

    /// Advance a single tick and process it.
    pub fn step(&mut self) {
        self.advance();
        self.process_tick();
    }

    fn drive(&mut self, budget: Tick, stop_when_quiescent: bool) -> ManagerReport {
        let start = self.clock.now();
        let mut quiescent_at = None;
        loop {
            self.process_tick();
            let quiet = self.is_quiescent();
            if quiet && stop_when_quiescent {
                quiescent_at = Some(self.clock.now());
                break;
            }
            if self.clock.now() - start >= budget {
                if quiet {
                    quiescent_at = Some(self.clock.now());
                }
                break;
            }
            self.advance();
        }
        self.report(start, quiescent_at)
    }

    pub fn report(&self, start: Tick, quiescent_at: Option<Tick>) -> ManagerReport {
        ManagerReport {
            start_tick: start,
            end_tick: self.clock.now(),
            quiescent: quiescent_at.is_some(),
            quiescent_at_tick: quiescent_at,
            reentrancy_violations: self.reentrancy_violations(),
            controllers: self
                .controllers
                .iter()
                .map(|(k, c)| (*k, c.report.clone()))
                .collect(),
        }
    }

    /// Move the clock forward one tick, run the tick hooks and enqueue due
    /// resyncs. Nothing is reconciled until [`Manager::process_tick`].
    pub fn advance(&mut self) {
        let now = self.clock.advance();
        for hook in &self.hooks {
            hook.on_tick(now, &self.external);
        }
        for (kind, ctrl) in self.controllers.iter_mut() {
            if now >= ctrl.next_resync {
                ctrl.next_resync = now + ctrl.config.resync_period;
                for obj in self.store.list(*kind, None, None).items {
                    ctrl.queue.add(obj.key());
                }
            }
        }
    }

    pub fn is_quiescent(&self) -> bool {
        self.controllers.values().all(|c| c.queue.is_idle())
            && self.external.is_empty()
            && self.hooks.iter().all(|h| h.is_settled())
    }

    fn pump(&mut self) {
        let now = self.clock.now();
        if let Some(watch) = self.watch.as_mut() {
            match watch.poll() {
                Ok(events) => {
                    for ev in events {
                        Self::dispatch(&mut self.controllers, &self.store, &ev);
                    }
                }
                Err(StoreError::CompactedRevision { .. }) => {
                    warn!("watch fell behind compaction, relisting");
                    let listed = self.store.list_all();
                    for obj in listed.items {
                        if let Some(c) = self.controllers.get_mut(&obj.kind()) {
                            c.observed.insert(obj.key(), Fingerprint::of(&obj));
                            c.queue.add(obj.key());
                        }
                    }
                    self.watch = self.store.watch(None, listed.revision).ok();
                }
                Err(e) => warn!(error = %e, "watch poll failed"),
            }
        }
        for key in self.external.drain() {
            if let Some(c) = self.controllers.get_mut(&key.kind) {
                c.queue.add(key);
            }
        }
        for c in self.controllers.values_mut() {
            c.queue.promote(now);
            c.report.max_queue_depth = c.report.max_queue_depth.max(c.queue.depth());
        }
    }

    fn dispatch(controllers: &mut BTreeMap<Kind, Controller>, store: &Store, ev: &WatchEvent) {
        let kind = ev.object.kind();
        let key = ev.object.key();
        for (ctrl_kind, ctrl) in controllers.iter_mut() {
            if *ctrl_kind == kind {
                let fp = Fingerprint::of(&ev.object);
                let relevant = match ev.type_ {
                    EventType::Deleted => {
                        ctrl.observed.remove(&key);
                        true
                    }
                    // status-only writes do not retrigger the owning controller
                    _ => ctrl.observed.insert(key.clone(), fp) != Some(fp),
                };
                if relevant {
                    ctrl.queue.add(key.clone());
                }
            }
            for (source, mapper) in &ctrl.watches {
                if *source == kind {
                    for mapped in mapper(ev, store) {
                        if mapped.kind == *ctrl_kind {
                            ctrl.queue.add(mapped);
                        }
                    }
                }
            }
        }
    }

    /// Drain watch events and run every key that is due at the current tick.
    /// A key runs at most once per tick; keys re-enqueued after running wait
    /// for the next tick.
    pub fn process_tick(&mut self) {
        let now = self.clock.now();
        let ctx = ReconcileContext { tick: now };
        let mut ran: HashSet<ObjectKey> = HashSet::new();
        loop {
            self.pump();
            let mut order: Vec<Kind> = self.controllers.keys().copied().collect();
            if !order.is_empty() {
                let rot = (mix64(self.config.seed ^ now) % order.len() as u64) as usize;
                order.rotate_left(rot);
            }
            let mut batch: Vec<(Kind, ObjectKey)> = Vec::new();
            for kind in order {
                let ctrl = self.controllers.get_mut(&kind).expect("kind from keys");
                let take = match self.config.mode {
                    ExecutionMode::Deterministic => 1,
                    ExecutionMode::Parallel => ctrl.config.max_concurrent_reconciles,
                };
                for _ in 0..take {
                    match ctrl.queue.pop_excluding(&ran) {
                        Some(key) => {
                            ran.insert(key.clone());
                            batch.push((kind, key));
                        }
                        None => break,
                    }
                }
            }
            if batch.is_empty() {
                break;
            }
            match self.config.mode {
                ExecutionMode::Deterministic => {
                    for (kind, key) in batch {
                        let reconciler = self.controllers[&kind].reconciler.clone();
                        let (outcome, panicked) = self.in_flight.run(reconciler.as_ref(), &key, &ctx);
                        self.apply_outcome(kind, key, outcome, panicked, now);
                        self.pump();
                    }
                }
                ExecutionMode::Parallel => {
                    let jobs: Vec<_> = batch
                        .into_iter()
                        .map(|(kind, key)| (kind, key, self.controllers[&kind].reconciler.clone()))
                        .collect();
                    let in_flight = self.in_flight.clone();
                    let results: Vec<_> = std::thread::scope(|s| {
                        let handles: Vec<_> = jobs
                            .into_iter()
                            .map(|(kind, key, rec)| {
                                let in_flight = in_flight.clone();
                                s.spawn(move || {
                                    let (outcome, panicked) = in_flight.run(rec.as_ref(), &key, &ctx);
                                    (kind, key, outcome, panicked)
                                })
                            })
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("reconcile panics are caught"))
                            .collect()
                    });
                    for (kind, key, outcome, panicked) in results {
                        self.apply_outcome(kind, key, outcome, panicked, now);
                    }
                }
            }
        }
        for c in self.controllers.values_mut() {
            if c.queue.is_idle() {
                if c.report.quiescent_at_tick.is_none() {
                    c.report.quiescent_at_tick = Some(now);
                }
            } else {
                c.report.quiescent_at_tick = None;
            }
        }
    }

    fn apply_outcome(&mut self, kind: Kind, key: ObjectKey, outcome: ReconcileOutcome, panicked: bool, now: Tick) {
        let ctrl = self.controllers.get_mut(&kind).expect("registered");
        ctrl.report.invocations += 1;
        let recorded = match &outcome {
            ReconcileOutcome::Done => {
                ctrl.queue.forget(&key);
                OutcomeKind::Done
            }
            ReconcileOutcome::RequeueAfter(ticks) => {
                ctrl.queue.add_at(key.clone(), now + (*ticks).max(1));
                OutcomeKind::Requeued
            }
            ReconcileOutcome::Failed(err) => {
                ctrl.report.failures += 1;
                if panicked {
                    ctrl.report.panics += 1;
                }
                let n = ctrl.queue.record_failure(&key);
                let delay = backoff_delay(ctrl.config.base_backoff, ctrl.config.max_backoff, n);
                debug!(%key, %err, delay, "reconcile failed");
                ctrl.queue.add_at(key.clone(), now + delay);
                if panicked {
                    OutcomeKind::Panicked
                } else {
                    OutcomeKind::Failed
                }
            }
        };
        self.log.push(InvocationRecord {
            tick: now,
            key,
            outcome: recorded,
        });
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicUsize;

    use super::*;
    use crate::model::*;

    fn ns(name: &str) -> ResourceObject {
        ResourceObject::new(ObjectMeta::named(name), Spec::Namespace(NamespaceSpec {}))
    }

    fn counting() -> (Arc<AtomicUsize>, Arc<dyn Reconciler>) {
        let n = Arc::new(AtomicUsize::new(0));
        let c = n.clone();
        let rec = move |_: &ObjectKey, _: &ReconcileContext| {
            c.fetch_add(1, Ordering::SeqCst);
            ReconcileOutcome::Done
        };
        (n, Arc::new(rec))
    }

    #[test]
    fn duplicate_controller_rejected() {
        let mut m = Manager::new(Store::new(Clock::new()), ManagerConfig::default());
        let (_, r) = counting();
        m.register_controller(Kind::Namespace, r.clone(), ControllerConfig::default())
            .unwrap();
        assert_eq!(
            m.register_controller(Kind::Namespace, r, ControllerConfig::default()),
            Err(RuntimeError::DuplicateController(Kind::Namespace))
        );
    }

    #[test]
    fn bad_config_rejected() {
        let mut m = Manager::new(Store::new(Clock::new()), ManagerConfig::default());
        let (_, r) = counting();
        let cfg = ControllerConfig {
            base_backoff: 10,
            max_backoff: 5,
            ..ControllerConfig::default()
        };
        assert!(matches!(
            m.register_controller(Kind::Namespace, r, cfg),
            Err(RuntimeError::InvalidConfig(_))
        ));
    }

    #[test]
    fn empty_store_quiescent_at_zero() {
        let mut m = Manager::new(Store::new(Clock::new()), ManagerConfig::default());
        let (n, r) = counting();
        m.register_controller(Kind::Namespace, r, ControllerConfig::default())
            .unwrap();
        let report = m.run(100);
        assert_eq!(report.quiescent_at_tick, Some(0));
        assert_eq!(n.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn existing_objects_enqueued_on_register() {
        let store = Store::new(Clock::new());
        store.create(ns("a")).unwrap();
        store.create(ns("b")).unwrap();
        let mut m = Manager::new(store, ManagerConfig::default());
        let (n, r) = counting();
        m.register_controller(Kind::Namespace, r, ControllerConfig::default())
            .unwrap();
        m.run(10);
        assert_eq!(n.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn status_only_writes_do_not_retrigger() {
        let store = Store::new(Clock::new());
        let mut m = Manager::new(store.clone(), ManagerConfig::default());
        let n = Arc::new(AtomicUsize::new(0));
        let (c, s) = (n.clone(), store.clone());
        let rec = move |key: &ObjectKey, ctx: &ReconcileContext| {
            c.fetch_add(1, Ordering::SeqCst);
            let mut obj = s.get(key).unwrap();
            obj.status
                .conditions_mut()
                .set(ConditionType::Ready, ConditionStatus::True, "Seen", "", 1, ctx.tick);
            s.update_status(obj).unwrap();
            ReconcileOutcome::Done
        };
        m.register_controller(Kind::Namespace, Arc::new(rec), ControllerConfig::default())
            .unwrap();
        store.create(ns("a")).unwrap();
        let report = m.run(50);
        assert!(report.quiescent);
        assert_eq!(n.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn panics_are_counted_as_failures() {
        let store = Store::new(Clock::new());
        store.create(ns("a")).unwrap();
        let mut m = Manager::new(store, ManagerConfig::default());
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let rec = move |_: &ObjectKey, _: &ReconcileContext| {
            if c.fetch_add(1, Ordering::SeqCst) == 0 {
                panic!("boom");
            }
            ReconcileOutcome::Done
        };
        m.register_controller(Kind::Namespace, Arc::new(rec), ControllerConfig::default())
            .unwrap();
        let report = m.run(10);
        let c = &report.controllers[&Kind::Namespace];
        assert_eq!((c.invocations, c.failures, c.panics), (2, 1, 1));
        assert!(report.quiescent);
    }

    #[test]
    fn enqueue_unknown_kind() {
        let mut m = Manager::new(Store::new(Clock::new()), ManagerConfig::default());
        let key = ObjectKey::cluster(Kind::Namespace, "a");
        assert_eq!(m.enqueue_external(key.clone()), Err(RuntimeError::UnknownKind(Kind::Namespace)));
        assert_eq!(m.external_queue().enqueue(key), Err(RuntimeError::UnknownKind(Kind::Namespace)));
    }
}

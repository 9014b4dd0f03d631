//! Composition root: one store, one simulator, the manager with every
//! controller registered, and the health agent, all on a shared clock.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Tick};
use crate::controllers::{register_all, ControllerContext};
use crate::model::{Kind, NamespaceSpec, ObjectKey, ObjectMeta, ResourceObject, Spec, DEFAULT_NAMESPACE, RESERVED_ANNOTATION_PREFIX};
use crate::runtime::{ControllerConfig, ExecutionMode, Manager, ManagerConfig, ManagerReport, RuntimeError};
use crate::sim::{FaultAction, OwnerIndex, Sim, SimConfig, SimState, ValidationAgent, ValidationAgentState};
use crate::store::{Store, StoreError, StoreSnapshot};

/// Attempts for an apply that keeps losing the resourceVersion race.
pub const APPLY_CONFLICT_RETRIES: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineConfig {
    /// Seeds both the simulator RNG and the manager's scheduling order.
    pub seed: u64,
    pub mode: ExecutionMode,
    pub sim: SimConfig,
    pub controller: ControllerConfig,
}

impl EngineConfig {
    pub fn seeded(seed: u64) -> Self {
        EngineConfig {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("state file: {0}")]
    Snapshot(String),
}

/// Everything needed to resume an engine in a later process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineSnapshot {
    pub tick: Tick,
    pub config: EngineConfig,
    pub store: StoreSnapshot,
    pub sim: SimState,
    pub agent: ValidationAgentState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyResult {
    Created,
    Configured,
    Unchanged,
}

impl fmt::Display for ApplyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApplyResult::Created => "created",
            ApplyResult::Configured => "configured",
            ApplyResult::Unchanged => "unchanged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeleteResult {
    Deleted,
    Deleting { blocked_by: Vec<String> },
}

impl fmt::Display for DeleteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeleteResult::Deleted => f.write_str("deleted"),
            DeleteResult::Deleting { blocked_by } => write!(f, "deleting (blocked by: {})", blocked_by.join(", ")),
        }
    }
}

pub struct Engine {
    config: EngineConfig,
    store: Store,
    sim: Sim,
    manager: Manager,
    agent: Arc<ValidationAgent>,
    index: OwnerIndex,
}

impl Engine {
    /// Fresh engine at tick 0 with the default fleet and the `default`
    /// namespace.
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        let clock = Clock::new();
        let store = Store::new(clock.clone());
        let sim = Sim::new(
            clock,
            SimConfig {
                seed: config.seed,
                ..config.sim
            },
        );
        store.create(ResourceObject::new(
            ObjectMeta::named(DEFAULT_NAMESPACE),
            Spec::Namespace(NamespaceSpec {}),
        ))?;
        Self::assemble(config, store, sim, OwnerIndex::default(), ValidationAgentState::default())
    }

    fn assemble(
        config: EngineConfig,
        store: Store,
        sim: Sim,
        index: OwnerIndex,
        agent_state: ValidationAgentState,
    ) -> Result<Self, EngineError> {
        let mut manager = Manager::new(
            store.clone(),
            ManagerConfig {
                mode: config.mode,
                seed: config.seed,
            },
        );
        let agent = Arc::new(ValidationAgent::from_state(sim.clone(), index.clone(), agent_state));
        manager.add_hook(Arc::new(sim.clone()));
        manager.add_hook(agent.clone());
        let ctx = ControllerContext {
            store: store.clone(),
            sim: sim.clone(),
            index: index.clone(),
        };
        register_all(&mut manager, &ctx, config.controller)?;
        Ok(Engine {
            config,
            store,
            sim,
            manager,
            agent,
            index,
        })
    }

    pub fn from_snapshot(snap: EngineSnapshot) -> Result<Self, EngineError> {
        let clock = Clock::starting_at(snap.tick);
        let store = Store::from_snapshot(snap.store, clock.clone());
        let sim = Sim::from_state(snap.sim, clock);
        let index = OwnerIndex::default();
        for obj in store.list(Kind::Instance, None, None).items {
            if let Some(id) = obj.instance_status().and_then(|s| s.instance_id.as_deref()) {
                index.insert(id, obj.key());
            }
        }
        Self::assemble(snap.config, store, sim, index, snap.agent)
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            tick: self.now(),
            config: self.config,
            store: self.store.snapshot(),
            sim: self.sim.state(),
            agent: self.agent.state(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        let text = serde_json::to_string(&self.snapshot()).map_err(|e| EngineError::Snapshot(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| EngineError::Snapshot(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Snapshot(format!("{}: {e}", path.display())))?;
        let snap: EngineSnapshot =
            serde_json::from_str(&text).map_err(|e| EngineError::Snapshot(format!("{}: {e}", path.display())))?;
        Self::from_snapshot(snap)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    pub fn agent(&self) -> &ValidationAgent {
        &self.agent
    }

    pub fn index(&self) -> &OwnerIndex {
        &self.index
    }

    pub fn manager(&self) -> &Manager {
        &self.manager
    }

    pub fn manager_mut(&mut self) -> &mut Manager {
        &mut self.manager
    }

    pub fn now(&self) -> Tick {
        self.manager.now()
    }

    /// Create the object, or replace spec, labels and user annotations of
    /// the existing one. Controller-owned annotations and finalizers are
    /// kept.
    pub fn apply(&self, obj: ResourceObject) -> Result<ApplyResult, StoreError> {
        let key = obj.key();
        let mut last = None;
        for _ in 0..APPLY_CONFLICT_RETRIES {
            let Some(current) = self.store.try_get(&key) else {
                match self.store.create(obj.clone()) {
                    Ok(_) => return Ok(ApplyResult::Created),
                    Err(e @ StoreError::AlreadyExists(_)) => {
                        last = Some(e);
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            };
            let mut next = current.clone();
            next.spec = obj.spec.clone();
            next.metadata.labels = obj.metadata.labels.clone();
            next.metadata.annotations = current
                .metadata
                .annotations
                .iter()
                .filter(|(k, _)| k.starts_with(RESERVED_ANNOTATION_PREFIX))
                .chain(
                    obj.metadata
                        .annotations
                        .iter()
                        .filter(|(k, _)| !k.starts_with(RESERVED_ANNOTATION_PREFIX)),
                )
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            match self.store.update(next) {
                Ok(written) if written.metadata.resource_version == current.metadata.resource_version => {
                    return Ok(ApplyResult::Unchanged)
                }
                Ok(_) => return Ok(ApplyResult::Configured),
                Err(e @ StoreError::Conflict { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("loop ran at least once"))
    }

    /// Start deletion. The result reflects the store right after the call;
    /// use [`Engine::deletion_state`] after running the manager.
    pub fn delete(&self, key: &ObjectKey) -> Result<DeleteResult, StoreError> {
        self.store.delete(key)?;
        Ok(self.deletion_state(key))
    }

    pub fn deletion_state(&self, key: &ObjectKey) -> DeleteResult {
        match self.store.try_get(key) {
            None => DeleteResult::Deleted,
            Some(obj) => {
                // a namespace waits on its contents, everything else on finalizers
                let contents: Vec<String> = match key.kind {
                    Kind::Namespace => Kind::ALL
                        .into_iter()
                        .filter(|k| k.is_namespaced())
                        .flat_map(|k| self.store.list(k, Some(&key.name), None).items)
                        .map(|o| o.key().to_string())
                        .collect(),
                    _ => Vec::new(),
                };
                let blocked_by = if contents.is_empty() {
                    obj.metadata.finalizers.iter().cloned().collect()
                } else {
                    contents
                };
                DeleteResult::Deleting { blocked_by }
            }
        }
    }

    pub fn inject(&self, action: &FaultAction) {
        self.sim.inject(action);
    }

    /// Run until quiescent or `budget` ticks have passed.
    pub fn run(&mut self, budget: Tick) -> ManagerReport {
        self.manager.run(budget)
    }

    pub fn run_ticks(&mut self, ticks: Tick) -> ManagerReport {
        self.manager.run_ticks(ticks)
    }

    pub fn step(&mut self) {
        self.manager.step();
    }

    pub fn is_quiescent(&self) -> bool {
        self.manager.is_quiescent()
    }
}

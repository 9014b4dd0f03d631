use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{Sim, UnitState, VmState};
use crate::clock::Tick;
use crate::model::ObjectKey;
use crate::runtime::{ExternalQueue, TickHook};

/// VM id -> owning Instance key. Written by the Instance controller, read by
/// the agent.
#[derive(Debug, Clone, Default)]
pub struct OwnerIndex(Arc<Mutex<BTreeMap<String, ObjectKey>>>);

impl OwnerIndex {
    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, ObjectKey>> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn insert(&self, vm_id: &str, owner: ObjectKey) {
        self.lock().insert(vm_id.to_owned(), owner);
    }

    pub fn remove(&self, vm_id: &str) {
        self.lock().remove(vm_id);
    }

    pub fn get(&self, vm_id: &str) -> Option<ObjectKey> {
        self.lock().get(vm_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthEvent {
    pub tick: Tick,
    /// Unit uid or VM id.
    pub target: String,
    pub cause: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<ObjectKey>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationAgentState {
    /// Targets already reported while they stay failed.
    pub seen_failed: BTreeSet<String>,
    pub events: Vec<HealthEvent>,
}

const MAX_EVENTS: usize = 4096;

/// Watches unit and VM health after each simulator tick and pokes the owning
/// controller about anything that newly failed.
#[derive(Debug)]
pub struct ValidationAgent {
    sim: Sim,
    index: OwnerIndex,
    state: Mutex<ValidationAgentState>,
}

impl ValidationAgent {
    pub fn new(sim: Sim, index: OwnerIndex) -> Self {
        Self::from_state(sim, index, ValidationAgentState::default())
    }

    pub fn from_state(sim: Sim, index: OwnerIndex, state: ValidationAgentState) -> Self {
        ValidationAgent {
            sim,
            index,
            state: Mutex::new(state),
        }
    }

    pub fn state(&self) -> ValidationAgentState {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn events(&self) -> Vec<HealthEvent> {
        self.state().events
    }

    pub fn events_for(&self, owner: &ObjectKey) -> Vec<HealthEvent> {
        self.state()
            .events
            .into_iter()
            .filter(|e| e.owner.as_ref() == Some(owner))
            .collect()
    }

    /// Report every unit or VM that is failed now and was not at the last sweep.
    pub fn sweep(&self, now: Tick, queue: &ExternalQueue) {
        let failed: Vec<(String, String, Option<ObjectKey>)> = self.sim.inspect(|st| {
            let units = st
                .units
                .values()
                .filter(|u| u.state == UnitState::Failed)
                .map(|u| (u.uid.clone(), u.failure_cause.clone().unwrap_or_default(), Some(u.owner.clone())));
            let vms = st
                .vms
                .values()
                .filter(|v| v.state == VmState::Failed)
                .map(|v| (v.id.clone(), v.failure_cause.clone().unwrap_or_default(), self.index.get(&v.id)));
            units.chain(vms).collect()
        });
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let current: BTreeSet<String> = failed.iter().map(|(id, _, _)| id.clone()).collect();
        for (target, cause, owner) in failed {
            if state.seen_failed.contains(&target) {
                continue;
            }
            if let Some(owner) = &owner {
                if let Err(e) = queue.enqueue(owner.clone()) {
                    debug!(%owner, error = %e, "no controller for failed target");
                }
            }
            state.events.push(HealthEvent {
                tick: now,
                target,
                cause,
                owner,
            });
        }
        state.seen_failed = current;
        let excess = state.events.len().saturating_sub(MAX_EVENTS);
        state.events.drain(..excess);
    }
}

impl TickHook for ValidationAgent {
    fn on_tick(&self, tick: Tick, queue: &ExternalQueue) {
        self.sweep(tick, queue);
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::ready_sim;
    use super::super::{FaultAction, UnitTarget};
    use super::*;
    use crate::model::{Kind, OpenStackService};

    #[test]
    fn unit_crash_reported_once() {
        let (clock, sim) = ready_sim();
        let agent = ValidationAgent::new(sim.clone(), OwnerIndex::default());
        let q = ExternalQueue::default();
        agent.sweep(clock.now(), &q);
        assert!(agent.events().is_empty());
        sim.inject(&FaultAction::CrashUnit(UnitTarget {
            id: None,
            service: Some(OpenStackService::Nova),
        }));
        agent.sweep(clock.now(), &q);
        agent.sweep(clock.now(), &q);
        let ev = agent.events();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].tick, clock.now());
        assert_eq!(ev[0].owner, Some(ObjectKey::cluster(Kind::OpenStackCloud, "c")));
        assert_eq!(ev[0].cause, "injected crash");
    }
}

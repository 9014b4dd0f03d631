//! Built-in invariant suite evaluated over an engine and its mutation log.
//!
//! Most properties are checked on the final state. Restart counting needs
//! history, so [`InvariantMonitor::observe`] has to be called after every
//! tick for it to mean anything.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::model::{ConditionType, Kind, ObjectKey, PROJECT_ID_ANNOTATION};
use crate::sim::{NodeRole, ACTOR_FAULTS, ACTOR_FLEET};

pub const ALLOWED_ACTORS: [&str; 6] = ["keystone", "glance", "nova", "neutron", ACTOR_FLEET, ACTOR_FAULTS];

/// Operations that may name a service unit as their target.
pub const UNIT_OPERATIONS: [&str; 4] = ["createUnit", "deleteUnit", "unitReady", "failUnit"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl InvariantResult {
    fn from(name: &str, violations: Vec<String>) -> Self {
        InvariantResult {
            name: name.to_owned(),
            passed: violations.is_empty(),
            violations,
        }
    }
}

#[derive(Debug, Clone)]
struct Seen {
    instance_id: Option<String>,
    restart_count: u32,
}

/// Tracks per-instance history between ticks.
#[derive(Debug, Clone, Default)]
pub struct InvariantMonitor {
    // keyed by uid so a re-created object starts fresh
    instances: BTreeMap<String, Seen>,
    restart_violations: Vec<String>,
}

impl InvariantMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, engine: &Engine) {
        let now = engine.now();
        for obj in engine.store().list(Kind::Instance, None, None).items {
            let Some(status) = obj.instance_status() else { continue };
            let next = Seen {
                instance_id: status.instance_id.clone(),
                restart_count: status.restart_count,
            };
            if let Some(prev) = self.instances.get(&obj.metadata.uid) {
                if next.restart_count < prev.restart_count {
                    self.restart_violations.push(format!(
                        "tick {now}: {} restartCount went {} -> {}",
                        obj.key(),
                        prev.restart_count,
                        next.restart_count
                    ));
                }
                let replaced = matches!((&prev.instance_id, &next.instance_id), (Some(a), Some(b)) if a != b);
                if replaced && next.restart_count <= prev.restart_count {
                    self.restart_violations.push(format!(
                        "tick {now}: {} instanceID changed without a restart",
                        obj.key()
                    ));
                }
            }
            self.instances.insert(obj.metadata.uid.clone(), next);
        }
    }

    /// Evaluate the whole suite against the engine as it is now.
    pub fn check(&self, engine: &Engine) -> Vec<InvariantResult> {
        vec![
            capacity_conservation(engine),
            allowed_actors(engine),
            unit_immutability(engine),
            id_stewardship(engine),
            namespace_project_bijection(engine),
            placement(engine),
            InvariantResult::from("restartCountMonotonic", self.restart_violations.clone()),
            no_degraded_instances(engine),
            no_reentrancy(engine),
        ]
    }
}

pub fn capacity_conservation(engine: &Engine) -> InvariantResult {
    let v = engine.sim().inspect(|st| {
        st.nodes
            .values()
            .filter_map(|n| {
                let used = st.node_usage(&n.name);
                (used.vcpus > n.capacity.vcpus || used.ram_mib > n.capacity.ram_mib).then(|| {
                    format!(
                        "{}: {} vcpus / {} MiB used of {} / {}",
                        n.name, used.vcpus, used.ram_mib, n.capacity.vcpus, n.capacity.ram_mib
                    )
                })
            })
            .collect()
    });
    InvariantResult::from("capacityConservation", v)
}

pub fn allowed_actors(engine: &Engine) -> InvariantResult {
    let v = engine.sim().inspect(|st| {
        st.log
            .entries()
            .iter()
            .filter(|m| !ALLOWED_ACTORS.contains(&m.actor.as_str()))
            .map(|m| format!("tick {}: {} by {}", m.tick, m.operation, m.actor))
            .collect()
    });
    InvariantResult::from("allowedActors", v)
}

/// Units are only ever created, marked ready or failed, and deleted. A
/// version or config change therefore always shows up as a new uid.
pub fn unit_immutability(engine: &Engine) -> InvariantResult {
    let v = engine.sim().inspect(|st| {
        let mut created = BTreeSet::new();
        let mut v = Vec::new();
        for m in st.log.entries() {
            if m.operation == "createUnit" && !created.insert(m.target.clone()) {
                v.push(format!("unit {} created twice", m.target));
            }
        }
        for m in st.log.entries() {
            if created.contains(&m.target) && !UNIT_OPERATIONS.contains(&m.operation.as_str()) {
                v.push(format!("tick {}: {} on unit {}", m.tick, m.operation, m.target));
            }
        }
        v
    });
    InvariantResult::from("unitImmutability", v)
}

/// Remote objects versus ids recorded in object statuses and namespace
/// annotations. Both directions are reported.
pub fn id_stewardship_diff(engine: &Engine) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut recorded = BTreeSet::new();
    for obj in engine.store().list_all().items {
        if let Some(id) = obj.status.service_assigned_id() {
            recorded.insert(id.to_owned());
        }
        if let Some(p) = obj.metadata.annotations.get(PROJECT_ID_ANNOTATION) {
            recorded.insert(p.clone());
        }
    }
    let remote = engine.sim().inspect(|st| st.remote_ids());
    let leaked = remote.difference(&recorded).cloned().collect();
    let dangling = recorded.difference(&remote).cloned().collect();
    (leaked, dangling)
}

pub fn id_stewardship(engine: &Engine) -> InvariantResult {
    let (leaked, dangling) = id_stewardship_diff(engine);
    let v = leaked
        .into_iter()
        .map(|id| format!("remote {id} not recorded in any status"))
        .chain(dangling.into_iter().map(|id| format!("status id {id} has no remote object")))
        .collect();
    InvariantResult::from("idStewardship", v)
}

pub fn namespace_project_bijection(engine: &Engine) -> InvariantResult {
    let namespaces: BTreeMap<String, Option<String>> = engine
        .store()
        .list(Kind::Namespace, None, None)
        .items
        .into_iter()
        .map(|n| (n.metadata.name.clone(), n.metadata.annotations.get(PROJECT_ID_ANNOTATION).cloned()))
        .collect();
    let projects: BTreeMap<String, String> =
        engine.sim().inspect(|st| st.projects.values().map(|p| (p.id.clone(), p.name.clone())).collect());
    let mut v = Vec::new();
    let mut claimed = BTreeSet::new();
    for (ns, id) in &namespaces {
        match id {
            None => v.push(format!("namespace {ns} has no project")),
            Some(id) => match projects.get(id) {
                None => v.push(format!("namespace {ns} points at missing project {id}")),
                Some(name) if name != ns => v.push(format!("namespace {ns} points at project {id} named {name}")),
                Some(_) => {
                    if !claimed.insert(id.clone()) {
                        v.push(format!("project {id} claimed twice"));
                    }
                }
            },
        }
    }
    for (id, name) in &projects {
        if !claimed.contains(id) {
            v.push(format!("project {id} ({name}) has no namespace"));
        }
    }
    InvariantResult::from("namespaceProjectBijection", v)
}

/// Every live VM sits on a compute node that satisfies its instance's
/// node selector.
pub fn placement(engine: &Engine) -> InvariantResult {
    let store = engine.store();
    let v = engine.sim().inspect(|st| {
        let mut v = Vec::new();
        for vm in st.vms.values().filter(|vm| vm.is_live()) {
            let Some(node) = st.nodes.get(&vm.node) else {
                v.push(format!("vm {} on unknown node {}", vm.id, vm.node));
                continue;
            };
            if node.role != NodeRole::Compute {
                v.push(format!("vm {} on {} node {}", vm.id, node.role.as_str(), node.name));
            }
            let owner = vm
                .name
                .split_once('/')
                .and_then(|(ns, name)| store.try_get(&ObjectKey::namespaced(Kind::Instance, ns, name)));
            if let Some(spec) = owner.as_ref().and_then(|o| o.instance_spec()) {
                if !node.matches(&spec.node_selector) {
                    v.push(format!("vm {} on {} does not satisfy its selector", vm.id, node.name));
                }
            }
        }
        v
    });
    InvariantResult::from("placement", v)
}

pub fn no_degraded_instances(engine: &Engine) -> InvariantResult {
    let v = degraded_instances(engine)
        .into_iter()
        .map(|(k, msg)| format!("{k}: {msg}"))
        .collect();
    InvariantResult::from("noDegradedInstances", v)
}

/// Instances with Degraded=True and the condition message.
pub fn degraded_instances(engine: &Engine) -> Vec<(ObjectKey, String)> {
    engine
        .store()
        .list(Kind::Instance, None, None)
        .items
        .into_iter()
        .filter_map(|o| {
            let c = o.status.conditions().get(ConditionType::Degraded)?;
            o.status
                .conditions()
                .is_true(ConditionType::Degraded)
                .then(|| (o.key(), c.message.clone()))
        })
        .collect()
}

pub fn no_reentrancy(engine: &Engine) -> InvariantResult {
    let n = engine.manager().reentrancy_violations();
    let v = if n == 0 {
        Vec::new()
    } else {
        vec![format!("{n} overlapping reconciles of one key")]
    };
    InvariantResult::from("noReentrancy", v)
}

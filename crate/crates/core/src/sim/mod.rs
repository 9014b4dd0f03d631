//! In-process simulated planes: a node fleet, toy OpenStack services behind
//! API facades, a seeded fault injector, the mutation log and the validation
//! agent.
//!
//! All state sits behind one mutex. Every state change appends exactly one
//! entry to the mutation log, attributed to a service, the fleet or the fault
//! injector.

mod agent;
mod faults;
mod fleet;
mod glance;
mod keystone;
mod log;
mod neutron;
mod nova;
mod objects;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Tick};
use crate::ids::{mix64, opaque_id};
use crate::model::{ObjectKey, OpenStackService};
use crate::runtime::{ExternalQueue, ReconcileError, TickHook};

pub use agent::{HealthEvent, OwnerIndex, ValidationAgent, ValidationAgentState};
pub use faults::{parse_schedule, FaultAction, ScheduledFault, UnitTarget, VmTarget};
pub use fleet::{default_fleet, Capacity, NodeRole, ServiceUnit, SimNode, UnitState};
pub use glance::Glance;
pub use keystone::Keystone;
pub use log::{Mutation, MutationLog, ACTOR_FAULTS, ACTOR_FLEET};
pub use neutron::Neutron;
pub use nova::{Nova, PlacementConstraint};
pub use objects::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum SimError {
    #[error("{0} is unavailable")]
    ServiceUnavailable(OpenStackService),
    #[error("{kind} {id} not found")]
    NotFound { kind: String, id: String },
    #[error("{0}")]
    QuotaExceeded(String),
    #[error("{0}")]
    NoValidHost(String),
    #[error("project {0} still owns resources")]
    ProjectNotEmpty(String),
    #[error("{kind} {id} is in use: {by}")]
    InUse { kind: String, id: String, by: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
}

impl SimError {
    pub fn not_found(kind: &str, id: &str) -> Self {
        SimError::NotFound {
            kind: kind.to_owned(),
            id: id.to_owned(),
        }
    }

    /// Machine token used as a condition reason.
    pub fn reason(&self) -> &'static str {
        match self {
            SimError::ServiceUnavailable(_) => "ServiceUnavailable",
            SimError::NotFound { .. } => "NotFound",
            SimError::QuotaExceeded(_) => "QuotaExceeded",
            SimError::NoValidHost(_) => "NoValidHost",
            SimError::ProjectNotEmpty(_) => "ProjectNotEmpty",
            SimError::InUse { .. } => "InUse",
            SimError::Conflict(_) => "RemoteConflict",
            SimError::Invalid(_) => "Invalid",
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, SimError::NotFound { .. })
    }
}

impl From<SimError> for ReconcileError {
    fn from(e: SimError) -> Self {
        ReconcileError::new(e.reason(), e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimConfig {
    pub seed: u64,
    pub vm_boot_ticks: Tick,
    pub unit_boot_ticks: Tick,
    pub image_import_ticks: Tick,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            vm_boot_ticks: 3,
            unit_boot_ticks: 2,
            image_import_ticks: 1,
        }
    }
}

// id salts, one per object family
const SALT_UNIT: u64 = 0x11;
const SALT_PROJECT: u64 = 0x21;
const SALT_IMAGE: u64 = 0x31;
const SALT_VM: u64 = 0x41;
const SALT_KEYPAIR: u64 = 0x42;
const SALT_NETWORK: u64 = 0x51;
const SALT_SUBNET: u64 = 0x52;
const SALT_ROUTER: u64 = 0x53;

/// Entire simulator state. Serializable so the CLI can persist it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimState {
    pub config: SimConfig,
    pub nodes: BTreeMap<String, SimNode>,
    pub units: BTreeMap<String, ServiceUnit>,
    pub projects: BTreeMap<String, Project>,
    pub images: BTreeMap<String, SimImage>,
    pub vms: BTreeMap<String, SimVM>,
    pub keypairs: BTreeMap<String, SimKeyPair>,
    pub networks: BTreeMap<String, SimNetwork>,
    pub subnets: BTreeMap<String, SimSubnet>,
    pub routers: BTreeMap<String, SimRouter>,
    pub schedule: Vec<ScheduledFault>,
    /// Service -> first tick at which the burst is over.
    pub bursts: BTreeMap<OpenStackService, Tick>,
    /// VM name -> injected boot failure.
    pub boot_failures: BTreeMap<String, BootFailure>,
    pub next_id: u64,
    pub log: MutationLog,
}

impl SimState {
    fn fresh_id(&mut self, salt: u64) -> (String, u64) {
        self.next_id += 1;
        (opaque_id(salt, self.next_id), self.next_id)
    }

    fn record(&mut self, tick: Tick, actor: &str, op: &str, target: &str, summary: impl Into<String>) {
        self.log.push(tick, actor, op, target, summary.into());
    }

    fn has_ready_unit(&self, svc: OpenStackService) -> bool {
        self.units
            .values()
            .any(|u| u.service == svc && u.state == UnitState::Ready)
    }

    /// Facade calls need a ready unit of the service and of keystone, and no
    /// error burst in progress.
    fn require(&self, svc: OpenStackService, now: Tick) -> Result<(), SimError> {
        for s in [OpenStackService::Keystone, svc] {
            if !self.has_ready_unit(s) || self.bursts.get(&s).is_some_and(|until| now < *until) {
                return Err(SimError::ServiceUnavailable(s));
            }
        }
        Ok(())
    }

    fn require_project(&self, project_id: &str) -> Result<(), SimError> {
        if self.projects.contains_key(project_id) {
            Ok(())
        } else {
            Err(SimError::not_found("project", project_id))
        }
    }

    fn rng(&self, now: Tick, n: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.config.seed ^ mix64(now ^ mix64(n))))
    }

    fn fail_vm(&mut self, id: &str, cause: &str, now: Tick, actor: &str) -> bool {
        let Some(vm) = self.vms.get_mut(id) else {
            return false;
        };
        if !matches!(vm.state, VmState::Building | VmState::Running) {
            return false;
        }
        let before = vm.state;
        vm.state = VmState::Failed;
        vm.failure_cause = Some(cause.to_owned());
        self.record(now, actor, "failVM", id, format!("{before:?} -> Failed ({cause})"));
        true
    }

    fn fail_unit(&mut self, uid: &str, cause: &str, now: Tick) -> bool {
        let Some(u) = self.units.get_mut(uid) else {
            return false;
        };
        if !matches!(u.state, UnitState::Starting | UnitState::Ready) {
            return false;
        }
        let before = u.state;
        u.state = UnitState::Failed;
        u.failure_cause = Some(cause.to_owned());
        self.record(now, ACTOR_FAULTS, "failUnit", uid, format!("{before:?} -> Failed ({cause})"));
        true
    }

    fn apply_fault(&mut self, action: &FaultAction, now: Tick, n: u64) {
        match action {
            FaultAction::CrashVm(target) => {
                let id = match (&target.id, &target.name) {
                    (Some(id), _) => Some(id.clone()),
                    (None, Some(name)) => self
                        .vms
                        .values()
                        .find(|v| &v.name == name && v.state == VmState::Running)
                        .map(|v| v.id.clone()),
                    (None, None) => {
                        let running: Vec<_> = self
                            .vms
                            .values()
                            .filter(|v| v.state == VmState::Running)
                            .map(|v| v.id.clone())
                            .collect();
                        running.choose(&mut self.rng(now, n)).cloned()
                    }
                };
                if let Some(id) = id {
                    self.fail_vm(&id, "injected crash", now, ACTOR_FAULTS);
                }
            }
            FaultAction::CrashUnit(target) => {
                let uid = match &target.id {
                    Some(id) => Some(id.clone()),
                    None => {
                        let ready: Vec<_> = self
                            .units
                            .values()
                            .filter(|u| u.state == UnitState::Ready)
                            .filter(|u| target.service.is_none_or(|s| s == u.service))
                            .map(|u| u.uid.clone())
                            .collect();
                        ready.choose(&mut self.rng(now, n)).cloned()
                    }
                };
                if let Some(uid) = uid {
                    self.fail_unit(&uid, "injected crash", now);
                }
            }
            FaultAction::ApiErrorBurst { service, ticks } => {
                let until = now + ticks;
                let slot = self.bursts.entry(*service).or_insert(until);
                *slot = (*slot).max(until);
                self.record(now, ACTOR_FAULTS, "apiErrorBurst", service.as_str(), format!("errors until tick {until}"));
            }
            FaultAction::NodeDown { name, ticks } => {
                let Some(node) = self.nodes.get_mut(name) else {
                    return;
                };
                node.healthy = false;
                let until = now + ticks;
                node.down_until = Some(node.down_until.map_or(until, |u| u.max(until)));
                self.record(now, ACTOR_FAULTS, "nodeDown", name, format!("healthy -> down until tick {until}"));
                let cause = format!("node {name} went down");
                let vms: Vec<_> = self.vms.values().filter(|v| &v.node == name).map(|v| v.id.clone()).collect();
                for id in vms {
                    self.fail_vm(&id, &cause, now, ACTOR_FAULTS);
                }
                let units: Vec<_> = self.units.values().filter(|u| &u.node == name).map(|u| u.uid.clone()).collect();
                for uid in units {
                    self.fail_unit(&uid, &cause, now);
                }
            }
            FaultAction::FailBoot { name, cause, times } => {
                self.boot_failures.insert(
                    name.clone(),
                    BootFailure {
                        cause: cause.clone(),
                        remaining: *times,
                    },
                );
                self.record(now, ACTOR_FAULTS, "failBoot", name, format!("boots fail: {cause}"));
            }
        }
    }

    /// Advance timed work to `now`: scheduled faults, recoveries, unit and VM
    /// boots, image imports.
    fn tick(&mut self, now: Tick) {
        let due: Vec<ScheduledFault> = {
            let split = self.schedule.partition_point(|f| f.tick <= now);
            self.schedule.drain(..split).collect()
        };
        for (n, f) in due.iter().enumerate() {
            self.apply_fault(&f.action, now, n as u64);
        }

        let recovered: Vec<String> = self
            .nodes
            .values()
            .filter(|n| n.down_until.is_some_and(|t| t <= now))
            .map(|n| n.name.clone())
            .collect();
        for name in recovered {
            let node = self.nodes.get_mut(&name).expect("listed");
            node.healthy = true;
            node.down_until = None;
            self.record(now, ACTOR_FAULTS, "nodeUp", &name, "down -> healthy");
        }
        let ended: Vec<OpenStackService> =
            self.bursts.iter().filter(|(_, t)| **t <= now).map(|(s, _)| *s).collect();
        for s in ended {
            self.bursts.remove(&s);
            self.record(now, ACTOR_FAULTS, "apiErrorBurstEnd", s.as_str(), "errors -> ok");
        }

        let boot = self.config.unit_boot_ticks;
        let booted: Vec<String> = self
            .units
            .values()
            .filter(|u| u.state == UnitState::Starting && u.start_tick + boot <= now)
            .map(|u| u.uid.clone())
            .collect();
        for uid in booted {
            let u = self.units.get_mut(&uid).expect("listed");
            u.state = UnitState::Ready;
            let svc = u.service;
            self.record(now, svc.as_str(), "unitReady", &uid, "Starting -> Ready");
        }

        let boot = self.config.vm_boot_ticks;
        let booted: Vec<String> = self
            .vms
            .values()
            .filter(|v| v.state == VmState::Building && v.created_tick + boot <= now)
            .map(|v| v.id.clone())
            .collect();
        for id in booted {
            let name = self.vms[&id].name.clone();
            let failure = self.boot_failures.get_mut(&name).map(|f| {
                if let Some(r) = f.remaining.as_mut() {
                    *r = r.saturating_sub(1);
                }
                (f.cause.clone(), f.remaining == Some(0))
            });
            match failure {
                Some((cause, exhausted)) => {
                    if exhausted {
                        self.boot_failures.remove(&name);
                    }
                    self.fail_vm(&id, &cause, now, OpenStackService::Nova.as_str());
                }
                None => {
                    self.vms.get_mut(&id).expect("listed").state = VmState::Running;
                    self.record(now, "nova", "vmRunning", &id, "Building -> Running");
                }
            }
        }

        let import = self.config.image_import_ticks;
        let imported: Vec<String> = self
            .images
            .values()
            .filter(|i| i.state == ImageState::Queued && i.created_tick + import <= now)
            .map(|i| i.id.clone())
            .collect();
        for id in imported {
            self.images.get_mut(&id).expect("listed").state = ImageState::Active;
            self.record(now, "glance", "imageActive", &id, "Queued -> Active");
        }
    }

    /// No timed work left: nothing booting, importing, down or scheduled.
    fn is_settled(&self) -> bool {
        self.schedule.is_empty()
            && self.bursts.is_empty()
            && self.nodes.values().all(|n| n.healthy)
            && self.units.values().all(|u| u.state != UnitState::Starting)
            && self.vms.values().all(|v| v.state != VmState::Building)
            && self.images.values().all(|i| i.state != ImageState::Queued)
    }

    /// Ids of every remote object a controller is responsible for.
    pub fn remote_ids(&self) -> BTreeSet<String> {
        let mut ids = BTreeSet::new();
        ids.extend(self.projects.keys().cloned());
        ids.extend(self.images.keys().cloned());
        ids.extend(self.vms.values().filter(|v| v.is_live()).map(|v| v.id.clone()));
        ids.extend(self.keypairs.keys().cloned());
        ids.extend(self.networks.keys().cloned());
        ids.extend(self.subnets.keys().cloned());
        ids.extend(self.routers.keys().cloned());
        ids
    }

    /// vcpus and ram used on a node by VMs that are not deleted.
    pub fn node_usage(&self, node: &str) -> Capacity {
        self.vms
            .values()
            .filter(|v| v.is_live() && v.node == node)
            .fold(Capacity { vcpus: 0, ram_mib: 0 }, |acc, v| Capacity {
                vcpus: acc.vcpus + v.flavor.vcpus,
                ram_mib: acc.ram_mib + v.flavor.ram_mib,
            })
    }
}

/// Shared handle onto the simulator.
#[derive(Debug, Clone)]
pub struct Sim {
    state: Arc<Mutex<SimState>>,
    clock: Clock,
}

impl Sim {
    pub fn new(clock: Clock, config: SimConfig) -> Self {
        Self::with_fleet(clock, config, default_fleet())
    }

    pub fn with_fleet(clock: Clock, config: SimConfig, nodes: Vec<SimNode>) -> Self {
        let state = SimState {
            config,
            nodes: nodes.into_iter().map(|n| (n.name.clone(), n)).collect(),
            ..SimState::default()
        };
        Self::from_state(state, clock)
    }

    pub fn from_state(state: SimState, clock: Clock) -> Self {
        Sim {
            state: Arc::new(Mutex::new(state)),
            clock,
        }
    }

    fn lock(&self) -> MutexGuard<'_, SimState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn now(&self) -> Tick {
        self.clock.now()
    }

    /// A copy of the whole state, for inspection and persistence.
    pub fn state(&self) -> SimState {
        self.lock().clone()
    }

    /// Read-only access without cloning.
    pub fn inspect<R>(&self, f: impl FnOnce(&SimState) -> R) -> R {
        f(&self.lock())
    }

    pub fn log_len(&self) -> usize {
        self.lock().log.len()
    }

    pub fn log_since(&self, index: usize) -> Vec<Mutation> {
        self.lock().log.since(index).to_vec()
    }

    pub fn log_digest(&self) -> String {
        self.lock().log.digest()
    }

    pub fn export_log(&self) -> String {
        self.lock().log.export_jsonl()
    }

    pub fn keystone(&self) -> Keystone<'_> {
        Keystone(self)
    }

    pub fn glance(&self) -> Glance<'_> {
        Glance(self)
    }

    pub fn nova(&self) -> Nova<'_> {
        Nova(self)
    }

    pub fn neutron(&self) -> Neutron<'_> {
        Neutron(self)
    }

    /// Apply a fault right now.
    pub fn inject(&self, action: &FaultAction) {
        let now = self.now();
        let mut st = self.lock();
        let n = st.log.len() as u64;
        st.apply_fault(action, now, n);
    }

    /// Queue faults for later ticks. Entries at or before the current tick
    /// fire on the next tick.
    pub fn load_schedule(&self, faults: impl IntoIterator<Item = ScheduledFault>) {
        let mut st = self.lock();
        st.schedule.extend(faults);
        st.schedule.sort_by_key(|f| f.tick);
    }

    pub fn tick(&self, now: Tick) {
        self.lock().tick(now);
    }

    pub fn is_settled(&self) -> bool {
        self.lock().is_settled()
    }

    // -- fleet: service units -------------------------------------------------

    /// Start a new unit on the healthy control-plane node running the fewest
    /// units (ties by node name).
    pub fn create_unit(
        &self,
        owner: &ObjectKey,
        service: OpenStackService,
        version: &str,
        config_hash: &str,
    ) -> Result<ServiceUnit, SimError> {
        let now = self.now();
        let mut st = self.lock();
        let node = st
            .nodes
            .values()
            .filter(|n| n.healthy && n.role == NodeRole::ControlPlane)
            .min_by_key(|n| {
                let load = st
                    .units
                    .values()
                    .filter(|u| u.node == n.name && matches!(u.state, UnitState::Starting | UnitState::Ready))
                    .count();
                (load, n.name.clone())
            })
            .map(|n| n.name.clone())
            .ok_or_else(|| SimError::NoValidHost("no healthy control-plane node".into()))?;
        let (uid, seq) = st.fresh_id(SALT_UNIT);
        let unit = ServiceUnit {
            uid: uid.clone(),
            seq,
            owner: owner.clone(),
            service,
            version: version.to_owned(),
            config_hash: config_hash.to_owned(),
            node: node.clone(),
            state: UnitState::Starting,
            start_tick: now,
            failure_cause: None,
        };
        st.units.insert(uid.clone(), unit.clone());
        st.record(
            now,
            ACTOR_FLEET,
            "createUnit",
            &uid,
            format!("-> Starting {service} {version} {config_hash} on {node}"),
        );
        Ok(unit)
    }

    pub fn delete_unit(&self, uid: &str) -> Result<(), SimError> {
        let now = self.now();
        let mut st = self.lock();
        let u = st.units.remove(uid).ok_or_else(|| SimError::not_found("unit", uid))?;
        st.record(now, ACTOR_FLEET, "deleteUnit", uid, format!("{:?} -> gone", u.state));
        Ok(())
    }

    pub fn units_of(&self, owner: &ObjectKey) -> Vec<ServiceUnit> {
        let mut units: Vec<_> = self.lock().units.values().filter(|u| &u.owner == owner).cloned().collect();
        units.sort_by_key(|u| u.seq);
        units
    }

    pub fn unit(&self, uid: &str) -> Option<ServiceUnit> {
        self.lock().units.get(uid).cloned()
    }

    pub fn nodes(&self) -> Vec<SimNode> {
        self.lock().nodes.values().cloned().collect()
    }
}

impl TickHook for Sim {
    fn on_tick(&self, tick: Tick, _queue: &ExternalQueue) {
        self.tick(tick);
    }

    fn is_settled(&self) -> bool {
        Sim::is_settled(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kind;

    pub(super) fn ready_sim() -> (Clock, Sim) {
        let clock = Clock::new();
        let sim = Sim::new(clock.clone(), SimConfig::default());
        let owner = ObjectKey::cluster(Kind::OpenStackCloud, "c");
        for svc in OpenStackService::ALL {
            sim.create_unit(&owner, svc, "1.0.0", "h").unwrap();
        }
        for _ in 0..2 {
            let t = clock.advance();
            sim.tick(t);
        }
        (clock, sim)
    }

    #[test]
    fn units_boot_after_latency() {
        let clock = Clock::new();
        let sim = Sim::new(clock.clone(), SimConfig::default());
        let owner = ObjectKey::cluster(Kind::OpenStackCloud, "c");
        let u = sim.create_unit(&owner, OpenStackService::Keystone, "1.0.0", "h").unwrap();
        assert_eq!(u.state, UnitState::Starting);
        assert!(!sim.is_settled());
        sim.tick(clock.advance());
        assert_eq!(sim.unit(&u.uid).unwrap().state, UnitState::Starting);
        sim.tick(clock.advance());
        assert_eq!(sim.unit(&u.uid).unwrap().state, UnitState::Ready);
        assert!(sim.is_settled());
    }

    #[test]
    fn units_spread_over_control_plane() {
        let (_, sim) = ready_sim();
        let nodes: BTreeSet<_> = sim.state().units.values().map(|u| u.node.clone()).collect();
        assert_eq!(nodes.len(), 3);
        assert!(nodes.iter().all(|n| n.starts_with("control-")));
    }

    #[test]
    fn node_down_fails_units_and_recovers() {
        let (clock, sim) = ready_sim();
        sim.inject(&FaultAction::NodeDown {
            name: "control-0".into(),
            ticks: 10,
        });
        let st = sim.state();
        assert!(!st.nodes["control-0"].healthy);
        assert!(st
            .units
            .values()
            .filter(|u| u.node == "control-0")
            .all(|u| u.state == UnitState::Failed));
        let start = clock.now();
        while clock.now() < start + 10 {
            sim.tick(clock.advance());
        }
        assert!(sim.state().nodes["control-0"].healthy);
    }

    #[test]
    fn crash_unit_random_is_seeded() {
        let pick = || {
            let (_, sim) = ready_sim();
            sim.inject(&FaultAction::CrashUnit(UnitTarget::default()));
            sim.export_log()
        };
        assert_eq!(pick(), pick());
    }

    #[test]
    fn scheduled_faults_fire_on_their_tick() {
        let (clock, sim) = ready_sim();
        let at = clock.now() + 3;
        sim.load_schedule([ScheduledFault {
            tick: at,
            action: FaultAction::CrashUnit(UnitTarget {
                id: None,
                service: Some(OpenStackService::Nova),
            }),
        }]);
        assert!(!sim.is_settled());
        while clock.now() < at {
            sim.tick(clock.advance());
        }
        let st = sim.state();
        let failed: Vec<_> = st.units.values().filter(|u| u.state == UnitState::Failed).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].service, OpenStackService::Nova);
    }

    #[test]
    fn burst_blocks_calls() {
        let (clock, sim) = ready_sim();
        sim.inject(&FaultAction::ApiErrorBurst {
            service: OpenStackService::Keystone,
            ticks: 2,
        });
        assert_eq!(
            sim.keystone().create_project("p"),
            Err(SimError::ServiceUnavailable(OpenStackService::Keystone))
        );
        sim.tick(clock.advance());
        sim.tick(clock.advance());
        assert!(sim.keystone().create_project("p").is_ok());
    }

    #[test]
    fn state_round_trips_through_json() {
        let (_, sim) = ready_sim();
        let st = sim.state();
        let back: SimState = serde_json::from_str(&serde_json::to_string(&st).unwrap()).unwrap();
        assert_eq!(back, st);
    }
}

use super::{
    ensure_finalizer, fail_ready, gone_ok, live_ref, missing_ref, namespace_of, project_of, reason,
    remove_finalizer, save_status, set_condition, sim_err, ControllerContext, Step,
};
use crate::model::{
    ConditionType, ImagePhase, InstancePhase, InstanceSpec, Kind, ObjectKey, ResourceObject,
    FINALIZER_RESOURCE_CLEANUP,
};
use crate::runtime::{ReconcileContext, ReconcileError, ReconcileOutcome, Reconciler};
use crate::sim::{PlacementConstraint, SimError, SimVM, VmState};

/// Consecutive failed boots tolerated before an instance is left Degraded.
pub const HEAL_RETRY_LIMIT: u32 = 5;

struct Refs {
    image_id: String,
    key_pair_id: Option<String>,
    subnet_ids: Vec<String>,
}

/// Boots one VM per Instance and replaces it when it fails.
pub struct InstanceReconciler {
    ctx: ControllerContext,
}

fn vm_name(key: &ObjectKey) -> String {
    format!("{}/{}", namespace_of(key), key.name)
}

impl InstanceReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        InstanceReconciler { ctx }
    }

    fn resolve(&self, ns: &str, spec: &InstanceSpec) -> Step<Refs> {
        let store = &self.ctx.store;
        let image = live_ref(store, Kind::Image, ns, &spec.image_ref)
            .ok_or_else(|| missing_ref(format!("image {} not found", spec.image_ref)))?;
        let image_id = match image.image_status() {
            Some(s) if s.phase == ImagePhase::Active => s.image_id.clone(),
            _ => None,
        }
        .ok_or_else(|| missing_ref(format!("image {} not active yet", spec.image_ref)))?;
        let key_pair_id = match &spec.key_pair_ref {
            Some(name) => Some(
                live_ref(store, Kind::KeyPair, ns, name)
                    .and_then(|k| k.status.service_assigned_id().map(str::to_owned))
                    .ok_or_else(|| missing_ref(format!("keypair {name} not ready")))?,
            ),
            None => None,
        };
        let subnet_ids = spec
            .subnet_refs
            .iter()
            .map(|name| {
                live_ref(store, Kind::Subnet, ns, name)
                    .and_then(|s| s.status.service_assigned_id().map(str::to_owned))
                    .ok_or_else(|| missing_ref(format!("subnet {name} not ready")))
            })
            .collect::<Step<Vec<_>>>()?;
        Ok(Refs {
            image_id,
            key_pair_id,
            subnet_ids,
        })
    }

    fn release_addresses(&self, key: &ObjectKey) -> Result<(), SimError> {
        let neutron = self.ctx.sim.neutron();
        for (subnet, addr) in neutron.addresses_of(&key.to_string())? {
            gone_ok(neutron.release_ip(&subnet, addr))?;
        }
        Ok(())
    }

    /// Allocate addresses and create the VM. Addresses are handed back if
    /// the VM cannot be created.
    fn boot(&self, key: &ObjectKey, project: &str, spec: &InstanceSpec, refs: &Refs) -> Result<(SimVM, Vec<String>), SimError> {
        let neutron = self.ctx.sim.neutron();
        let owner = key.to_string();
        let mut ips = Vec::new();
        for s in &refs.subnet_ids {
            match neutron.allocate_ip(s, &owner) {
                Ok(a) => ips.push(a.to_string()),
                Err(e) => {
                    self.release_addresses(key)?;
                    return Err(e);
                }
            }
        }
        let placement = PlacementConstraint {
            node_selector: spec.node_selector.clone(),
        };
        match self.ctx.sim.nova().create_vm(
            project,
            &vm_name(key),
            spec.flavor,
            &refs.image_id,
            refs.key_pair_id.as_deref(),
            &placement,
        ) {
            Ok(vm) => {
                self.ctx.index.insert(&vm.id, key.clone());
                Ok((vm, ips))
            }
            Err(e) => {
                self.release_addresses(key)?;
                Err(e)
            }
        }
    }

    /// No VM recorded: adopt one by name or boot a new one.
    fn create(&self, key: &ObjectKey, mut obj: ResourceObject, project: &str, now: u64) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let spec = obj.instance_spec().expect("instance").clone();
        let healing = obj.instance_status().is_some_and(|s| s.phase == InstancePhase::Healing);
        let refs = match self.resolve(namespace_of(key), &spec) {
            Ok(r) => r,
            Err(e) => {
                if !healing {
                    obj.instance_status_mut().expect("status").phase = InstancePhase::Pending;
                }
                return Ok(fail_ready(store, obj, e, now));
            }
        };
        let adopted = self.ctx.sim.nova().find_vm(project, &vm_name(key)).map_err(sim_err)?;
        let (vm, ips) = match adopted {
            Some(vm) => {
                self.ctx.index.insert(&vm.id, key.clone());
                let ips = self
                    .ctx
                    .sim
                    .neutron()
                    .addresses_of(&key.to_string())
                    .map_err(sim_err)?
                    .into_iter()
                    .map(|(_, a)| a.to_string())
                    .collect();
                (vm, ips)
            }
            None => match self.boot(key, project, &spec, &refs) {
                Ok(x) => x,
                Err(e) => {
                    if !healing {
                        obj.instance_status_mut().expect("status").phase = InstancePhase::Pending;
                    }
                    return Ok(fail_ready(store, obj, e.into(), now));
                }
            },
        };
        let status = obj.instance_status_mut().expect("status");
        status.instance_id = Some(vm.id.clone());
        status.node = Some(vm.node.clone());
        status.ip_addresses = ips;
        if !healing {
            status.phase = InstancePhase::Building;
        }
        set_condition(&mut obj, ConditionType::Ready, false, "Building", format!("vm {} building", vm.id), now);
        save_status(store, obj)?;
        Ok(ReconcileOutcome::RequeueAfter(1))
    }

    /// Replace a failed or vanished VM, or give up once the retry budget is
    /// spent.
    fn heal(
        &self,
        key: &ObjectKey,
        mut obj: ResourceObject,
        project: &str,
        remnant: Option<SimVM>,
        now: u64,
    ) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let cause = remnant
            .as_ref()
            .and_then(|v| v.failure_cause.clone())
            .unwrap_or_else(|| "vm disappeared".to_owned());
        let attempts = obj.instance_status().map_or(0, |s| s.heal_attempts);
        if attempts >= HEAL_RETRY_LIMIT {
            obj.instance_status_mut().expect("status").phase = InstancePhase::Failed;
            set_condition(&mut obj, ConditionType::Ready, false, "VMFailed", cause.clone(), now);
            set_condition(&mut obj, ConditionType::Degraded, true, reason::HEAL_EXHAUSTED, cause, now);
            save_status(store, obj)?;
            return Ok(ReconcileOutcome::Done);
        }
        if let Some(vm) = &remnant {
            if vm.is_live() {
                gone_ok(self.ctx.sim.nova().delete_vm(&vm.id)).map_err(sim_err)?;
            }
            self.ctx.index.remove(&vm.id);
        }
        self.release_addresses(key).map_err(sim_err)?;
        let status = obj.instance_status_mut().expect("status");
        status.instance_id = None;
        status.node = None;
        status.ip_addresses.clear();
        status.restart_count += 1;
        status.heal_attempts += 1;
        status.phase = InstancePhase::Healing;
        set_condition(&mut obj, ConditionType::Ready, false, "Healing", cause.clone(), now);
        let obj = save_status(store, obj)?;
        match self.create(key, obj, project, now)? {
            ReconcileOutcome::Failed(e) => Ok(ReconcileOutcome::Failed(e)),
            _ => Ok(ReconcileOutcome::Failed(ReconcileError::new("Healing", cause))),
        }
    }

    fn run(&self, key: &ObjectKey, rc: &ReconcileContext) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let nova = self.ctx.sim.nova();
        let Some(obj) = store.try_get(key) else {
            return Ok(ReconcileOutcome::Done);
        };
        let now = rc.tick;
        if obj.is_deleting() {
            if let Some(id) = obj.instance_status().and_then(|s| s.instance_id.clone()) {
                gone_ok(nova.delete_vm(&id)).map_err(sim_err)?;
                self.ctx.index.remove(&id);
            }
            self.release_addresses(key).map_err(sim_err)?;
            remove_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
            return Ok(ReconcileOutcome::Done);
        }
        let mut obj = ensure_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
        let project = match project_of(store, namespace_of(key)) {
            Ok(p) => p,
            Err(e) => return Ok(fail_ready(store, obj, e, now)),
        };
        let Some(id) = obj.instance_status().and_then(|s| s.instance_id.clone()) else {
            return self.create(key, obj, &project, now);
        };
        let remote = match nova.get_vm(&id) {
            Ok(vm) => Some(vm),
            Err(e) if e.is_not_found() => None,
            Err(e) => return Err(e.into()),
        };
        match remote {
            Some(vm) if vm.state == VmState::Building => {
                self.ctx.index.insert(&vm.id, key.clone());
                Ok(ReconcileOutcome::RequeueAfter(1))
            }
            Some(vm) if vm.state == VmState::Running => {
                self.ctx.index.insert(&vm.id, key.clone());
                let status = obj.instance_status_mut().expect("status");
                status.phase = InstancePhase::Running;
                status.heal_attempts = 0;
                status.node = Some(vm.node.clone());
                set_condition(&mut obj, ConditionType::Ready, true, "Running", "", now);
                if obj.status.conditions().get(ConditionType::Degraded).is_some() {
                    set_condition(&mut obj, ConditionType::Degraded, false, "Recovered", "", now);
                }
                save_status(store, obj)?;
                Ok(ReconcileOutcome::Done)
            }
            other => self.heal(key, obj, &project, other, now),
        }
    }
}

impl Reconciler for InstanceReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

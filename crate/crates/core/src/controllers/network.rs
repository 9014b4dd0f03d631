use super::subnet::network_key;
use super::{
    ensure_finalizer, fail_ready, gone_ok, namespace_of, project_of, reason, remove_finalizer, save_status,
    set_condition, sim_err, ControllerContext, Step,
};
use crate::model::{ConditionType, Kind, ObjectKey, ResourcePhase, FINALIZER_RESOURCE_CLEANUP};
use crate::runtime::{ReconcileContext, ReconcileOutcome, Reconciler};
use crate::sim::SimError;

pub struct NetworkReconciler {
    ctx: ControllerContext,
}

impl NetworkReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        NetworkReconciler { ctx }
    }

    /// Live Subnet objects, in any namespace, that point at `key`.
    fn dependents(&self, key: &ObjectKey) -> Vec<String> {
        self.ctx
            .store
            .list(Kind::Subnet, None, None)
            .items
            .into_iter()
            .filter(|s| {
                let ns = s.metadata.namespace.as_deref().unwrap_or_default();
                s.subnet_spec().and_then(|spec| network_key(ns, spec)).as_ref() == Some(key)
            })
            .map(|s| s.key().to_string())
            .collect()
    }

    fn run(&self, key: &ObjectKey, rc: &ReconcileContext) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let neutron = self.ctx.sim.neutron();
        let Some(obj) = store.try_get(key) else {
            return Ok(ReconcileOutcome::Done);
        };
        let now = rc.tick;
        if obj.is_deleting() {
            let deps = self.dependents(key);
            if !deps.is_empty() {
                let mut obj = obj;
                obj.network_status_mut().expect("network status").phase = ResourcePhase::Deleting;
                set_condition(
                    &mut obj,
                    ConditionType::Ready,
                    false,
                    reason::MISSING_DEPENDENTS,
                    format!("waiting for subnets to go: {}", deps.join(", ")),
                    now,
                );
                save_status(store, obj)?;
                // subnet deletions re-enqueue this key
                return Ok(ReconcileOutcome::Done);
            }
            if let Some(id) = obj.status.service_assigned_id().map(str::to_owned) {
                match gone_ok(neutron.delete_network(&id)) {
                    Ok(()) => {}
                    Err(e @ SimError::InUse { .. }) => {
                        let err = e.into();
                        return Ok(fail_ready(store, obj, err, now));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            remove_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
            return Ok(ReconcileOutcome::Done);
        }
        let mut obj = ensure_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
        let project = match project_of(store, namespace_of(key)) {
            Ok(p) => p,
            Err(e) => return Ok(fail_ready(store, obj, e, now)),
        };
        let shared = obj.network_spec().expect("network").shared;

        let known = obj.status.service_assigned_id().map(str::to_owned);
        let remote = match known {
            Some(id) => match neutron.get_network(&id) {
                Ok(n) => Some(n),
                Err(e) if e.is_not_found() => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        let remote = match remote {
            Some(n) => n,
            None => match neutron.find_network(&project, &key.name).map_err(sim_err)? {
                Some(n) => n,
                None => neutron.create_network(&project, &key.name, shared).map_err(sim_err)?,
            },
        };
        neutron.set_network_shared(&remote.id, shared).map_err(sim_err)?;

        let status = obj.network_status_mut().expect("network status");
        status.service_assigned_id = Some(remote.id);
        status.phase = ResourcePhase::Active;
        set_condition(&mut obj, ConditionType::Ready, true, reason::PROVISIONED, "", now);
        save_status(store, obj)?;
        Ok(ReconcileOutcome::Done)
    }
}

impl Reconciler for NetworkReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

use std::collections::BTreeSet;

use ipnet::Ipv4Net;

use super::{
    ensure_finalizer, fail_ready, gone_ok, live_ref, missing_ref, namespace_of, project_of, reason,
    remove_finalizer, save_status, set_condition, sim_err, ControllerContext, Step,
};
use crate::model::{ConditionType, Kind, ObjectKey, ResourcePhase, FINALIZER_RESOURCE_CLEANUP};
use crate::runtime::{ReconcileContext, ReconcileError, ReconcileOutcome, Reconciler};
use crate::sim::SimError;

pub struct RouterReconciler {
    ctx: ControllerContext,
}

impl RouterReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        RouterReconciler { ctx }
    }

    /// Remote subnet ids for the refs; any unresolved ref fails the pass.
    /// Overlapping CIDRs among the refs are rejected before touching the
    /// router.
    fn resolve(&self, ns: &str, refs: &[String]) -> Step<BTreeSet<String>> {
        let mut ids = BTreeSet::new();
        let mut cidrs: Vec<(String, Ipv4Net)> = Vec::new();
        for name in refs {
            let s = live_ref(&self.ctx.store, Kind::Subnet, ns, name)
                .ok_or_else(|| missing_ref(format!("subnet {name} not found")))?;
            let id = s
                .status
                .service_assigned_id()
                .ok_or_else(|| missing_ref(format!("subnet {name} not provisioned yet")))?;
            let cidr: Ipv4Net = s
                .subnet_spec()
                .expect("subnet")
                .cidr
                .parse()
                .map_err(|_| missing_ref(format!("subnet {name} has a bad cidr")))?;
            if let Some((other, _)) = cidrs
                .iter()
                .find(|(_, c)| c.contains(&cidr.network()) || cidr.contains(&c.network()))
            {
                return Err(ReconcileError::new("CIDROverlap", format!("subnets {other} and {name} overlap")));
            }
            cidrs.push((name.clone(), cidr));
            ids.insert(id.to_owned());
        }
        Ok(ids)
    }

    fn teardown(&self, id: &str) -> Result<(), SimError> {
        let neutron = self.ctx.sim.neutron();
        let router = match neutron.get_router(id) {
            Ok(r) => r,
            Err(e) if e.is_not_found() => return Ok(()),
            Err(e) => return Err(e),
        };
        for s in &router.interfaces {
            gone_ok(neutron.remove_interface(id, s))?;
        }
        gone_ok(neutron.delete_router(id))
    }

    fn run(&self, key: &ObjectKey, rc: &ReconcileContext) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let neutron = self.ctx.sim.neutron();
        let Some(obj) = store.try_get(key) else {
            return Ok(ReconcileOutcome::Done);
        };
        let now = rc.tick;
        if obj.is_deleting() {
            if let Some(id) = obj.status.service_assigned_id().map(str::to_owned) {
                self.teardown(&id).map_err(sim_err)?;
            }
            remove_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
            return Ok(ReconcileOutcome::Done);
        }
        let mut obj = ensure_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
        let ns = namespace_of(key);
        let project = match project_of(store, ns) {
            Ok(p) => p,
            Err(e) => return Ok(fail_ready(store, obj, e, now)),
        };
        let spec = obj.router_spec().expect("router").clone();

        let known = obj.status.service_assigned_id().map(str::to_owned);
        let remote = match known {
            Some(id) => match neutron.get_router(&id) {
                Ok(r) => Some(r),
                Err(e) if e.is_not_found() => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        let remote = match remote {
            Some(r) => r,
            None => match neutron.find_router(&project, &key.name).map_err(sim_err)? {
                Some(r) => r,
                None => neutron
                    .create_router(&project, &key.name, spec.external_gateway)
                    .map_err(sim_err)?,
            },
        };
        obj.router_status_mut().expect("router status").service_assigned_id = Some(remote.id.clone());
        neutron
            .set_router_gateway(&remote.id, spec.external_gateway)
            .map_err(sim_err)?;

        let want = match self.resolve(ns, &spec.subnet_refs) {
            Ok(w) => w,
            Err(e) => {
                obj.router_status_mut().expect("router status").phase = ResourcePhase::Pending;
                return Ok(fail_ready(store, obj, e, now));
            }
        };
        for s in remote.interfaces.difference(&want) {
            gone_ok(neutron.remove_interface(&remote.id, s)).map_err(sim_err)?;
        }
        for s in want.difference(&remote.interfaces) {
            if let Err(e) = neutron.add_interface(&remote.id, s) {
                return Ok(fail_ready(store, obj, e.into(), now));
            }
        }
        obj.router_status_mut().expect("router status").phase = ResourcePhase::Active;
        set_condition(&mut obj, ConditionType::Ready, true, reason::PROVISIONED, "", now);
        save_status(store, obj)?;
        Ok(ReconcileOutcome::Done)
    }
}

impl Reconciler for RouterReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

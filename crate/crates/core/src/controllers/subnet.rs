use std::net::Ipv4Addr;

use ipnet::Ipv4Net;

use super::{
    ensure_finalizer, fail_ready, gone_ok, missing_ref, namespace_of, project_of, reason, remove_finalizer,
    save_status, set_condition, sim_err, ControllerContext, Step,
};
use crate::model::{
    ConditionType, Kind, NetworkRef, ObjectKey, ResourcePhase, SubnetSpec, FINALIZER_RESOURCE_CLEANUP,
};
use crate::runtime::{ReconcileContext, ReconcileError, ReconcileOutcome, Reconciler};
use crate::sim::SimSubnet;

/// Key of the Network a Subnet in `namespace` points at.
pub(crate) fn network_key(namespace: &str, spec: &SubnetSpec) -> Option<ObjectKey> {
    let r = NetworkRef::parse(&spec.network_ref)?;
    Some(ObjectKey::namespaced(Kind::Network, r.namespace.unwrap_or(namespace), r.name))
}

struct Desired {
    network_id: String,
    cidr: Ipv4Net,
    pool: Option<(Ipv4Addr, Ipv4Addr)>,
}

impl Desired {
    fn matches(&self, s: &SimSubnet) -> bool {
        s.network_id == self.network_id
            && s.cidr == self.cidr
            && self.pool.is_none_or(|(a, b)| (s.pool_start, s.pool_end) == (a, b))
    }
}

pub struct SubnetReconciler {
    ctx: ControllerContext,
}

impl SubnetReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        SubnetReconciler { ctx }
    }

    /// Resolve the network and check visibility: another namespace's network
    /// is only usable when shared.
    fn desired(&self, namespace: &str, spec: &SubnetSpec) -> Step<Desired> {
        let invalid = |m: String| ReconcileError::new("Invalid", m);
        let net_key = network_key(namespace, spec).ok_or_else(|| invalid(format!("bad networkRef {}", spec.network_ref)))?;
        let net = self
            .ctx
            .store
            .try_get(&net_key)
            .filter(|n| !n.is_deleting())
            .ok_or_else(|| missing_ref(format!("network {} not found", spec.network_ref)))?;
        let cross = net_key.namespace.as_deref() != Some(namespace);
        if cross && !net.network_spec().is_some_and(|s| s.shared) {
            return Err(missing_ref(format!("network {} is not shared", spec.network_ref)));
        }
        let network_id = net
            .status
            .service_assigned_id()
            .ok_or_else(|| missing_ref(format!("network {} not provisioned yet", spec.network_ref)))?
            .to_owned();
        let cidr: Ipv4Net = spec.cidr.parse().map_err(|e| invalid(format!("cidr: {e}")))?;
        let pool = match &spec.allocation_pool {
            Some(p) => Some((
                p.start.parse().map_err(|e| invalid(format!("pool start: {e}")))?,
                p.end.parse().map_err(|e| invalid(format!("pool end: {e}")))?,
            )),
            None => None,
        };
        Ok(Desired { network_id, cidr, pool })
    }

    /// Detach routers, then delete. Fails while addresses are still held.
    fn teardown(&self, id: &str) -> Result<(), crate::sim::SimError> {
        let neutron = self.ctx.sim.neutron();
        let routers = match neutron.routers_on(id) {
            Ok(r) => r,
            Err(e) if e.is_not_found() => return Ok(()),
            Err(e) => return Err(e),
        };
        for r in routers {
            gone_ok(neutron.remove_interface(&r.id, id))?;
        }
        gone_ok(neutron.delete_subnet(id))
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
                if let Err(e) = self.teardown(&id) {
                    let mut obj = obj;
                    obj.subnet_status_mut().expect("subnet status").phase = ResourcePhase::Deleting;
                    return Ok(fail_ready(store, obj, e.into(), now));
                }
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
        let spec = obj.subnet_spec().expect("subnet").clone();
        let want = match self.desired(ns, &spec) {
            Ok(d) => d,
            Err(e) => {
                obj.subnet_status_mut().expect("subnet status").phase = ResourcePhase::Pending;
                return Ok(fail_ready(store, obj, e, now));
            }
        };

        let known = obj.status.service_assigned_id().map(str::to_owned);
        let mut remote = match known {
            Some(id) => match neutron.get_subnet(&id) {
                Ok(s) => Some(s),
                Err(e) if e.is_not_found() => neutron.find_subnet(&project, &key.name).map_err(sim_err)?,
                Err(e) => return Err(e.into()),
            },
            None => neutron.find_subnet(&project, &key.name).map_err(sim_err)?,
        };
        if let Some(s) = remote.as_ref().filter(|s| !want.matches(s)) {
            // network, cidr and pool are fixed remotely: replace the subnet
            if let Err(e) = self.teardown(&s.id) {
                return Ok(fail_ready(store, obj, e.into(), now));
            }
            remote = None;
        }
        let remote = match remote {
            Some(s) => s,
            None => neutron
                .create_subnet(&project, &want.network_id, &key.name, want.cidr, want.pool)
                .map_err(sim_err)?,
        };
        let status = obj.subnet_status_mut().expect("subnet status");
        status.service_assigned_id = Some(remote.id);
        status.phase = ResourcePhase::Active;
        set_condition(&mut obj, ConditionType::Ready, true, reason::PROVISIONED, "", now);
        save_status(store, obj)?;
        Ok(ReconcileOutcome::Done)
    }
}

impl Reconciler for SubnetReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ensure_finalizer, remove_finalizer, save_status, set_condition, ControllerContext, Step};
use crate::model::{
    hash_config, ConditionType, ObjectKey, OpenStackCloudSpec, OpenStackService, RolloutPhase,
    RolloutState, ServiceState, FINALIZER_CLOUD_TEARDOWN,
};
use crate::runtime::{ReconcileContext, ReconcileOutcome, Reconciler};
use crate::sim::{NodeRole, ServiceUnit, SimError, UnitState};

/// Extra units allowed above `replicas` during a roll.
const MAX_SURGE: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlannedUnit {
    pub service: OpenStackService,
    pub version: String,
    pub config_hash: String,
    pub placement: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ServicePlan {
    pub version: String,
    pub config_hash: String,
    pub units: Vec<PlannedUnit>,
}

impl ServicePlan {
    pub fn replicas(&self) -> usize {
        self.units.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RenderedUnitPlan(pub BTreeMap<OpenStackService, ServicePlan>);

/// Desired units per service, straight from the spec.
pub fn render_plan(spec: &OpenStackCloudSpec) -> RenderedUnitPlan {
    RenderedUnitPlan(
        spec.services
            .iter()
            .map(|s| {
                let hash = hash_config(&s.config_overrides, &s.version);
                let unit = PlannedUnit {
                    service: s.name,
                    version: s.version.clone(),
                    config_hash: hash.clone(),
                    placement: NodeRole::ControlPlane,
                };
                let plan = ServicePlan {
                    version: s.version.clone(),
                    config_hash: hash,
                    units: vec![unit; s.replicas as usize],
                };
                (s.name, plan)
            })
            .collect(),
    )
}

/// Drives the simulated fleet to run the units a cloud declares.
pub struct CloudReconciler {
    ctx: ControllerContext,
}

struct Pass {
    failed_seen: bool,
    converged: bool,
    states: BTreeMap<OpenStackService, ServiceState>,
}

impl CloudReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        CloudReconciler { ctx }
    }

    fn teardown(&self, key: &ObjectKey) -> Result<(), SimError> {
        for u in self.ctx.sim.units_of(key) {
            super::gone_ok(self.ctx.sim.delete_unit(&u.uid))?;
        }
        Ok(())
    }

    fn converge(&self, key: &ObjectKey, plan: &RenderedUnitPlan) -> Result<Pass, SimError> {
        let sim = &self.ctx.sim;
        let mut failed_seen = false;
        for u in sim.units_of(key) {
            if u.state == UnitState::Failed || !plan.0.contains_key(&u.service) {
                failed_seen |= u.state == UnitState::Failed;
                sim.delete_unit(&u.uid)?;
            }
        }
        let keystone_ready = sim
            .units_of(key)
            .iter()
            .any(|u| u.service == OpenStackService::Keystone && u.state == UnitState::Ready);

        let mut converged = true;
        let mut states = BTreeMap::new();
        for (svc, sp) in &plan.0 {
            let replicas = sp.replicas();
            let current = |u: &ServiceUnit| u.version == sp.version && u.config_hash == sp.config_hash;
            let units: Vec<ServiceUnit> = sim.units_of(key).into_iter().filter(|u| u.service == *svc).collect();
            if *svc != OpenStackService::Keystone && units.is_empty() && !keystone_ready {
                converged = false;
                states.insert(*svc, service_state(sp, &units, &current));
                continue;
            }
            let (new, old): (Vec<_>, Vec<_>) = units.into_iter().partition(|u| current(u));
            if old.is_empty() {
                if new.len() < replicas {
                    for _ in new.len()..replicas {
                        sim.create_unit(key, *svc, &sp.version, &sp.config_hash)?;
                    }
                } else {
                    // oldest first
                    for u in new.iter().take(new.len() - replicas) {
                        sim.delete_unit(&u.uid)?;
                    }
                }
            } else {
                self.roll(key, *svc, sp, new, old)?;
            }
            let units: Vec<ServiceUnit> = sim.units_of(key).into_iter().filter(|u| u.service == *svc).collect();
            let state = service_state(sp, &units, &current);
            let done = units.len() == replicas && units.iter().all(|u| current(u) && u.state == UnitState::Ready);
            converged &= done;
            states.insert(*svc, state);
        }
        Ok(Pass {
            failed_seen,
            converged,
            states,
        })
    }

    /// Surge then drain: at most `replicas + 1` units, and an old ready unit
    /// goes only while the remaining ready units still cover `replicas`.
    fn roll(
        &self,
        key: &ObjectKey,
        svc: OpenStackService,
        sp: &ServicePlan,
        mut new: Vec<ServiceUnit>,
        old: Vec<ServiceUnit>,
    ) -> Result<(), SimError> {
        let sim = &self.ctx.sim;
        let replicas = sp.replicas();
        let (mut old_ready, old_starting): (Vec<_>, Vec<_>) =
            old.into_iter().partition(|u| u.state == UnitState::Ready);
        for u in old_starting {
            sim.delete_unit(&u.uid)?;
        }
        while new.len() > replicas {
            let u = new.remove(0);
            sim.delete_unit(&u.uid)?;
        }
        let new_ready = new.iter().filter(|u| u.state == UnitState::Ready).count();
        while !old_ready.is_empty() && new_ready + old_ready.len() > replicas {
            let u = old_ready.remove(0);
            sim.delete_unit(&u.uid)?;
        }
        if new.len() < replicas && new.len() + old_ready.len() < replicas + MAX_SURGE {
            sim.create_unit(key, svc, &sp.version, &sp.config_hash)?;
        }
        Ok(())
    }
}

fn service_state(sp: &ServicePlan, units: &[ServiceUnit], current: &dyn Fn(&ServiceUnit) -> bool) -> ServiceState {
    let replicas = sp.replicas();
    let ready = units.iter().filter(|u| u.state == UnitState::Ready).count();
    let (new, old): (Vec<&ServiceUnit>, Vec<&ServiceUnit>) = units.iter().partition(|u| current(u));
    let rolling = !old.is_empty();
    let (active_version, active_hash) = match old.first() {
        Some(u) if rolling => (u.version.clone(), u.config_hash.clone()),
        _ => (sp.version.clone(), sp.config_hash.clone()),
    };
    ServiceState {
        ready_replicas: ready.min(replicas) as u32,
        desired_replicas: replicas as u32,
        active_version,
        active_config_hash: active_hash,
        rollout: RolloutState {
            phase: if rolling { RolloutPhase::RollingOut } else { RolloutPhase::Stable },
            old_units: if rolling { old.iter().map(|u| u.uid.clone()).collect() } else { Vec::new() },
            new_units: if rolling { new.iter().map(|u| u.uid.clone()).collect() } else { Vec::new() },
        },
    }
}

impl Reconciler for CloudReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

impl CloudReconciler {
    fn run(&self, key: &ObjectKey, rc: &ReconcileContext) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let Some(obj) = store.try_get(key) else {
            return Ok(ReconcileOutcome::Done);
        };
        if obj.is_deleting() {
            self.teardown(key)?;
            remove_finalizer(store, obj, FINALIZER_CLOUD_TEARDOWN)?;
            return Ok(ReconcileOutcome::Done);
        }
        let mut obj = ensure_finalizer(store, obj, FINALIZER_CLOUD_TEARDOWN)?;
        let spec = obj.cloud_spec().expect("cloud key holds a cloud").clone();
        let plan = render_plan(&spec);
        let pass = self.converge(key, &plan)?;
        let now = rc.tick;

        let was_degraded = obj.status.conditions().is_true(ConditionType::Degraded);
        let rolling = pass.states.values().any(|s| s.rollout.phase == RolloutPhase::RollingOut);
        let short = pass.states.values().any(|s| s.ready_replicas < s.desired_replicas);
        obj.cloud_status_mut().expect("cloud status").service_states = pass.states;
        set_condition(
            &mut obj,
            ConditionType::Progressing,
            !pass.converged,
            if rolling { "RollingOut" } else if pass.converged { "Stable" } else { "Provisioning" },
            "",
            now,
        );
        if pass.converged {
            set_condition(&mut obj, ConditionType::Ready, true, "AllUnitsReady", "", now);
        } else {
            set_condition(&mut obj, ConditionType::Ready, false, "UnitsNotReady", "waiting for units", now);
        }
        if pass.failed_seen || (was_degraded && short) {
            let msg = if pass.failed_seen { "replacing failed units" } else { "ready replicas below desired" };
            set_condition(&mut obj, ConditionType::Degraded, true, "UnitFailed", msg, now);
        } else if was_degraded {
            set_condition(&mut obj, ConditionType::Degraded, false, "Recovered", "", now);
        }
        save_status(store, obj)?;
        Ok(if pass.converged {
            ReconcileOutcome::Done
        } else {
            ReconcileOutcome::RequeueAfter(1)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ServiceSpec;

    fn svc(name: OpenStackService, version: &str, replicas: u32) -> ServiceSpec {
        ServiceSpec {
            name,
            version: version.into(),
            replicas,
            config_overrides: BTreeMap::new(),
        }
    }

    #[test]
    fn plan_has_one_entry_per_replica() {
        let spec = OpenStackCloudSpec {
            services: vec![svc(OpenStackService::Keystone, "1.0.0", 1), svc(OpenStackService::Nova, "1.0.0", 2)],
        };
        let plan = render_plan(&spec);
        let nova = &plan.0[&OpenStackService::Nova];
        assert_eq!(nova.replicas(), 2);
        assert!(nova.units.iter().all(|u| u.placement == NodeRole::ControlPlane
            && u.config_hash == hash_config(&BTreeMap::new(), "1.0.0")));
        assert_eq!(plan, render_plan(&spec));
    }
}

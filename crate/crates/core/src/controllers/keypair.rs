use super::{
    ensure_finalizer, fail_ready, gone_ok, namespace_of, project_of, remove_finalizer, save_status, set_condition,
    sim_err, ControllerContext, Step,
};
use crate::model::{ConditionType, ObjectKey, ResourcePhase, FINALIZER_RESOURCE_CLEANUP};
use crate::runtime::{ReconcileContext, ReconcileOutcome, Reconciler};

pub struct KeyPairReconciler {
    ctx: ControllerContext,
}

impl KeyPairReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        KeyPairReconciler { ctx }
    }

    fn run(&self, key: &ObjectKey, rc: &ReconcileContext) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let nova = self.ctx.sim.nova();
        let Some(obj) = store.try_get(key) else {
            return Ok(ReconcileOutcome::Done);
        };
        if obj.is_deleting() {
            if let Some(id) = obj.status.service_assigned_id().map(str::to_owned) {
                gone_ok(nova.delete_keypair(&id)).map_err(sim_err)?;
            }
            remove_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
            return Ok(ReconcileOutcome::Done);
        }
        let mut obj = ensure_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
        let project = match project_of(store, namespace_of(key)) {
            Ok(p) => p,
            Err(e) => return Ok(fail_ready(store, obj, e, rc.tick)),
        };
        let public_key = obj.keypair_spec().expect("keypair").public_key.clone();

        let mut id = obj.status.service_assigned_id().map(str::to_owned);
        if let Some(known) = &id {
            match nova.get_keypair(known) {
                Ok(kp) if kp.public_key != public_key => {
                    // keys are immutable remotely: replace
                    nova.delete_keypair(known).map_err(sim_err)?;
                    id = None;
                }
                Ok(_) => {}
                Err(e) if e.is_not_found() => id = None,
                Err(e) => return Err(e.into()),
            }
        }
        let id = match id {
            Some(id) => id,
            None => match nova.find_keypair(&project, &key.name).map_err(sim_err)? {
                Some(kp) if kp.public_key == public_key => kp.id,
                Some(stale) => {
                    nova.delete_keypair(&stale.id).map_err(sim_err)?;
                    nova.create_keypair(&project, &key.name, &public_key).map_err(sim_err)?.id
                }
                None => nova.create_keypair(&project, &key.name, &public_key).map_err(sim_err)?.id,
            },
        };
        let status = obj.keypair_status_mut().expect("keypair status");
        status.service_assigned_id = Some(id);
        status.phase = ResourcePhase::Active;
        set_condition(&mut obj, ConditionType::Ready, true, super::reason::PROVISIONED, "", rc.tick);
        save_status(store, obj)?;
        Ok(ReconcileOutcome::Done)
    }
}

impl Reconciler for KeyPairReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

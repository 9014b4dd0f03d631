use super::{
    ensure_finalizer, fail_ready, gone_ok, namespace_of, project_of, remove_finalizer, save_status, set_condition,
    sim_err, ControllerContext, Step,
};
use crate::model::{ConditionType, ImagePhase, ObjectKey, FINALIZER_RESOURCE_CLEANUP};
use crate::runtime::{ReconcileContext, ReconcileOutcome, Reconciler};
use crate::sim::ImageState;

pub struct ImageReconciler {
    ctx: ControllerContext,
}

impl ImageReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        ImageReconciler { ctx }
    }

    fn run(&self, key: &ObjectKey, rc: &ReconcileContext) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let glance = self.ctx.sim.glance();
        let Some(obj) = store.try_get(key) else {
            return Ok(ReconcileOutcome::Done);
        };
        if obj.is_deleting() {
            if let Some(id) = obj.image_status().and_then(|s| s.image_id.clone()) {
                gone_ok(glance.delete_image(&id)).map_err(sim_err)?;
            }
            remove_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
            return Ok(ReconcileOutcome::Done);
        }
        let mut obj = ensure_finalizer(store, obj, FINALIZER_RESOURCE_CLEANUP)?;
        let project = match project_of(store, namespace_of(key)) {
            Ok(p) => p,
            Err(e) => return Ok(fail_ready(store, obj, e, rc.tick)),
        };
        let spec = obj.image_spec().expect("image").clone();

        let known = obj.image_status().and_then(|s| s.image_id.clone());
        let remote = match known {
            Some(id) => match glance.get_image(&id) {
                Ok(img) => Some(img),
                Err(e) if e.is_not_found() => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        let remote = match remote {
            Some(img) => img,
            None => match glance.find_image(&project, &key.name).map_err(sim_err)? {
                Some(img) => img,
                None => glance.create_image(&project, &key.name, &spec).map_err(sim_err)?,
            },
        };

        let status = obj.image_status_mut().expect("image status");
        status.image_id = Some(remote.id.clone());
        let active = remote.state == ImageState::Active;
        status.phase = if active { ImagePhase::Active } else { ImagePhase::Importing };
        if active {
            set_condition(&mut obj, ConditionType::Ready, true, "Active", "", rc.tick);
        } else {
            set_condition(&mut obj, ConditionType::Ready, false, "Importing", "image is importing", rc.tick);
        }
        save_status(store, obj)?;
        Ok(if active {
            ReconcileOutcome::Done
        } else {
            ReconcileOutcome::RequeueAfter(1)
        })
    }
}

impl Reconciler for ImageReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

use super::{ensure_finalizer, gone_ok, remove_finalizer, save_status, set_condition, sim_err, ControllerContext, Step};
use crate::model::{
    ConditionType, Kind, NamespacePhase, ObjectKey, FINALIZER_PROJECT_DRAIN, PROJECT_ID_ANNOTATION,
};
use crate::runtime::{ReconcileContext, ReconcileOutcome, Reconciler};

/// Keeps one project per namespace and drains the namespace before the
/// project goes.
pub struct NamespaceReconciler {
    ctx: ControllerContext,
}

impl NamespaceReconciler {
    pub fn new(ctx: ControllerContext) -> Self {
        NamespaceReconciler { ctx }
    }

    fn run(&self, key: &ObjectKey, rc: &ReconcileContext) -> Step<ReconcileOutcome> {
        let store = &self.ctx.store;
        let keystone = self.ctx.sim.keystone();
        let Some(obj) = store.try_get(key) else {
            return Ok(ReconcileOutcome::Done);
        };
        let now = rc.tick;

        if obj.is_deleting() {
            let remaining: Vec<String> = Kind::ALL
                .into_iter()
                .filter(|k| k.is_namespaced())
                .flat_map(|k| store.list(k, Some(&key.name), None).items)
                .map(|o| o.key().to_string())
                .collect();
            if !remaining.is_empty() {
                let mut obj = obj;
                obj.namespace_status_mut().expect("namespace status").phase = NamespacePhase::Terminating;
                let shown: Vec<_> = remaining.iter().take(5).cloned().collect();
                set_condition(
                    &mut obj,
                    ConditionType::Ready,
                    false,
                    "DrainPending",
                    format!("{} resource(s) remain: {}", remaining.len(), shown.join(", ")),
                    now,
                );
                save_status(store, obj)?;
                // deletions of the remaining objects re-enqueue this key
                return Ok(ReconcileOutcome::Done);
            }
            if let Some(id) = obj.metadata.annotations.get(PROJECT_ID_ANNOTATION) {
                gone_ok(keystone.delete_project(id)).map_err(sim_err)?;
            }
            remove_finalizer(store, obj, FINALIZER_PROJECT_DRAIN)?;
            return Ok(ReconcileOutcome::Done);
        }

        let mut obj = ensure_finalizer(store, obj, FINALIZER_PROJECT_DRAIN)?;
        let recorded = obj.metadata.annotations.get(PROJECT_ID_ANNOTATION).cloned();
        let live = match &recorded {
            Some(id) => match keystone.get_project(id) {
                Ok(p) => Some(p),
                Err(e) if e.is_not_found() => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        if live.is_none() {
            let project = match keystone.find_project(&key.name).map_err(sim_err)? {
                Some(p) => p,
                None => keystone.create_project(&key.name).map_err(sim_err)?,
            };
            obj.metadata
                .annotations
                .insert(PROJECT_ID_ANNOTATION.to_owned(), project.id.clone());
            obj = store.update(obj)?;
        }
        obj.namespace_status_mut().expect("namespace status").phase = NamespacePhase::Active;
        set_condition(&mut obj, ConditionType::Ready, true, "ProjectReady", "", now);
        save_status(store, obj)?;
        Ok(ReconcileOutcome::Done)
    }
}

impl Reconciler for NamespaceReconciler {
    fn reconcile(&self, key: &ObjectKey, rc: &ReconcileContext) -> ReconcileOutcome {
        self.run(key, rc).into()
    }
}

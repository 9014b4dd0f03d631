//! Reconcilers for every kind and the watch wiring between them.
//!
//! Reconcilers talk to the simulator only through its service facades and
//! to the store only through the public read/write API.

mod cloud;
mod image;
mod instance;
mod keypair;
mod namespace;
mod network;
mod router;
mod subnet;
mod wiring;

use crate::clock::Tick;
use crate::model::{
    ConditionStatus, ConditionType, Kind, ObjectKey, ResourceObject, PROJECT_ID_ANNOTATION,
};
use crate::runtime::{ReconcileError, ReconcileOutcome};
use crate::sim::{OwnerIndex, Sim, SimError};
use crate::store::{Store, StoreError};

pub use cloud::{render_plan, CloudReconciler, PlannedUnit, RenderedUnitPlan, ServicePlan};
pub use image::ImageReconciler;
pub use instance::{InstanceReconciler, HEAL_RETRY_LIMIT};
pub use keypair::KeyPairReconciler;
pub use namespace::NamespaceReconciler;
pub use network::NetworkReconciler;
pub use router::RouterReconciler;
pub use subnet::SubnetReconciler;
pub use wiring::register_all;

/// Condition reasons shared across controllers.
pub mod reason {
    pub const MISSING_REFERENCE: &str = "MissingReference";
    pub const MISSING_DEPENDENTS: &str = "MissingDependents";
    pub const PROJECT_PENDING: &str = "ProjectPending";
    pub const PROVISIONED: &str = "Provisioned";
    pub const HEAL_EXHAUSTED: &str = "HealRetriesExhausted";
}

/// Everything a reconciler needs.
#[derive(Debug, Clone)]
pub struct ControllerContext {
    pub store: Store,
    pub sim: Sim,
    pub index: OwnerIndex,
}

impl From<StoreError> for ReconcileError {
    fn from(e: StoreError) -> Self {
        let reason = match &e {
            StoreError::Conflict { .. } => "Conflict",
            StoreError::NotFound(_) => "NotFound",
            _ => "StoreError",
        };
        ReconcileError::new(reason, e.to_string())
    }
}

type Step<T> = Result<T, ReconcileError>;

fn sim_err(e: SimError) -> ReconcileError {
    e.into()
}

/// Treat a remote NotFound as success; used by deletes.
fn gone_ok(r: Result<(), SimError>) -> Result<(), SimError> {
    match r {
        Err(e) if e.is_not_found() => Ok(()),
        other => other,
    }
}

fn ensure_finalizer(store: &Store, mut obj: ResourceObject, f: &str) -> Step<ResourceObject> {
    if obj.has_finalizer(f) {
        return Ok(obj);
    }
    obj.metadata.finalizers.insert(f.to_owned());
    Ok(store.update(obj)?)
}

fn remove_finalizer(store: &Store, mut obj: ResourceObject, f: &str) -> Step<()> {
    if obj.metadata.finalizers.remove(f) {
        store.update(obj)?;
    }
    Ok(())
}

fn set_condition(
    obj: &mut ResourceObject,
    type_: ConditionType,
    status: bool,
    reason: &str,
    message: impl Into<String>,
    now: Tick,
) {
    let gen = obj.metadata.generation;
    obj.status
        .conditions_mut()
        .set(type_, ConditionStatus::from(status), reason, message, gen, now);
}

/// Writes status and hands back the stored object. Writes that change
/// nothing are dropped by the store.
fn save_status(store: &Store, obj: ResourceObject) -> Step<ResourceObject> {
    Ok(store.update_status(obj)?)
}

/// Record Ready=False with `err` and fail the pass so it is retried.
fn fail_ready(store: &Store, mut obj: ResourceObject, err: ReconcileError, now: Tick) -> ReconcileOutcome {
    set_condition(&mut obj, ConditionType::Ready, false, &err.reason, err.message.clone(), now);
    if let Err(e) = save_status(store, obj) {
        return ReconcileOutcome::Failed(e);
    }
    ReconcileOutcome::Failed(err)
}

fn missing_ref(what: impl Into<String>) -> ReconcileError {
    ReconcileError::new(reason::MISSING_REFERENCE, what)
}

/// Id of the project backing `namespace`, once the namespace controller has
/// recorded it.
fn project_of(store: &Store, namespace: &str) -> Step<String> {
    let key = ObjectKey::cluster(Kind::Namespace, namespace);
    store
        .try_get(&key)
        .and_then(|ns| ns.metadata.annotations.get(PROJECT_ID_ANNOTATION).cloned())
        .ok_or_else(|| {
            ReconcileError::new(
                reason::PROJECT_PENDING,
                format!("namespace {namespace} has no project yet"),
            )
        })
}

fn namespace_of(key: &ObjectKey) -> &str {
    key.namespace.as_deref().unwrap_or_default()
}

/// Same-namespace reference lookup that treats deleting objects as absent.
fn live_ref(store: &Store, kind: Kind, namespace: &str, name: &str) -> Option<ResourceObject> {
    store
        .try_get(&ObjectKey::namespaced(kind, namespace, name))
        .filter(|o| !o.is_deleting())
}

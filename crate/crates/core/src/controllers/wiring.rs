use std::sync::Arc;

use super::subnet::network_key;
use super::{
    CloudReconciler, ControllerContext, ImageReconciler, InstanceReconciler, KeyPairReconciler, NamespaceReconciler,
    NetworkReconciler, RouterReconciler, SubnetReconciler,
};
use crate::model::{ConditionType, Kind, ObjectKey, ResourceObject};
use crate::runtime::{ControllerConfig, Manager, Mapper, Reconciler, RuntimeError};
use crate::store::{EventType, Store, WatchEvent};

fn mapper(f: impl Fn(&WatchEvent, &Store) -> Vec<ObjectKey> + Send + Sync + 'static) -> Mapper {
    Arc::new(f)
}

fn keys_where(store: &Store, kind: Kind, ns: Option<&str>, pred: impl Fn(&ResourceObject) -> bool) -> Vec<ObjectKey> {
    store
        .list(kind, ns, None)
        .items
        .iter()
        .filter(|o| pred(o))
        .map(ResourceObject::key)
        .collect()
}

fn ns_of(ev: &WatchEvent) -> Option<&str> {
    ev.object.metadata.namespace.as_deref()
}

/// Register a controller for every kind and the cross-kind watches that
/// re-trigger them.
pub fn register_all(manager: &mut Manager, ctx: &ControllerContext, config: ControllerConfig) -> Result<(), RuntimeError> {
    let reconcilers: Vec<(Kind, Arc<dyn Reconciler>)> = vec![
        (Kind::Namespace, Arc::new(NamespaceReconciler::new(ctx.clone()))),
        (Kind::OpenStackCloud, Arc::new(CloudReconciler::new(ctx.clone()))),
        (Kind::Image, Arc::new(ImageReconciler::new(ctx.clone()))),
        (Kind::KeyPair, Arc::new(KeyPairReconciler::new(ctx.clone()))),
        (Kind::Network, Arc::new(NetworkReconciler::new(ctx.clone()))),
        (Kind::Subnet, Arc::new(SubnetReconciler::new(ctx.clone()))),
        (Kind::Router, Arc::new(RouterReconciler::new(ctx.clone()))),
        (Kind::Instance, Arc::new(InstanceReconciler::new(ctx.clone()))),
    ];
    for (kind, r) in reconcilers {
        manager.register_controller(kind, r, config)?;
    }

    for kind in Kind::ALL.into_iter().filter(|k| *k != Kind::OpenStackCloud) {
        // services coming up unblock anything not yet ready
        manager.add_watch(
            kind,
            Kind::OpenStackCloud,
            mapper(move |_, store| {
                keys_where(store, kind, None, |o| {
                    o.is_deleting() || !o.status.conditions().is_true(ConditionType::Ready)
                })
            }),
        )?;
        if kind.is_namespaced() {
            // project id recorded on the namespace
            manager.add_watch(
                kind,
                Kind::Namespace,
                mapper(move |ev, store| {
                    if ev.type_ == EventType::Deleted {
                        return Vec::new();
                    }
                    keys_where(store, kind, Some(&ev.object.metadata.name), |_| true)
                }),
            )?;
            // a draining namespace waits on its contents
            manager.add_watch(
                Kind::Namespace,
                kind,
                mapper(|ev, store| {
                    let Some(ns) = ns_of(ev) else { return Vec::new() };
                    let key = ObjectKey::cluster(Kind::Namespace, ns);
                    match store.try_get(&key) {
                        Some(n) if n.is_deleting() => vec![key],
                        _ => Vec::new(),
                    }
                }),
            )?;
        }
    }

    manager.add_watch(
        Kind::Network,
        Kind::Subnet,
        mapper(|ev, _| {
            let ns = ns_of(ev).unwrap_or_default();
            ev.object
                .subnet_spec()
                .and_then(|s| network_key(ns, s))
                .into_iter()
                .collect()
        }),
    )?;
    manager.add_watch(
        Kind::Subnet,
        Kind::Network,
        mapper(|ev, store| {
            let target = ev.object.key();
            keys_where(store, Kind::Subnet, None, |s| {
                let ns = s.metadata.namespace.as_deref().unwrap_or_default();
                s.subnet_spec().and_then(|spec| network_key(ns, spec)).as_ref() == Some(&target)
            })
        }),
    )?;
    // address release by deleted instances unblocks subnet deletion
    manager.add_watch(
        Kind::Subnet,
        Kind::Instance,
        mapper(|ev, store| {
            let refs = ev.object.instance_spec().map(|s| s.subnet_refs.clone()).unwrap_or_default();
            keys_where(store, Kind::Subnet, ns_of(ev), |s| {
                s.is_deleting() && refs.contains(&s.metadata.name)
            })
        }),
    )?;
    manager.add_watch(
        Kind::Router,
        Kind::Subnet,
        mapper(|ev, store| {
            let name = ev.object.metadata.name.clone();
            keys_where(store, Kind::Router, ns_of(ev), |r| {
                r.router_spec().is_some_and(|s| s.subnet_refs.contains(&name))
            })
        }),
    )?;
    for source in [Kind::Image, Kind::KeyPair, Kind::Subnet] {
        manager.add_watch(
            Kind::Instance,
            source,
            mapper(move |ev, store| {
                let name = ev.object.metadata.name.clone();
                keys_where(store, Kind::Instance, ns_of(ev), |i| {
                    i.instance_spec().is_some_and(|s| match source {
                        Kind::Image => s.image_ref == name,
                        Kind::KeyPair => s.key_pair_ref.as_deref() == Some(name.as_str()),
                        _ => s.subnet_refs.contains(&name),
                    })
                })
            }),
        )?;
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use kupenstack::builders::image;
use kupenstack::model::Kind;
use kupenstack::runtime::{
    ControllerConfig, ExecutionMode, Manager, ManagerConfig, ReconcileContext, ReconcileOutcome,
};
use kupenstack::store::Store;
use kupenstack::{Clock, ObjectKey};

type Calls = Arc<Mutex<Vec<(u64, ObjectKey)>>>;

fn setup(mode: ManagerConfig) -> (Store, Manager) {
    let store = Store::new(Clock::new());
    store.create(kupenstack::builders::namespace("default")).unwrap();
    let manager = Manager::new(store.clone(), mode);
    (store, manager)
}

/// Records every invocation; keys whose name starts with "bad" always fail.
fn recorder(manager: &mut Manager, config: ControllerConfig) -> Calls {
    let calls: Calls = Arc::default();
    let c = calls.clone();
    let reconcile = move |key: &ObjectKey, ctx: &ReconcileContext| {
        c.lock().unwrap().push((ctx.tick, key.clone()));
        if key.name.starts_with("bad") {
            ReconcileOutcome::failed("Boom", "always fails")
        } else {
            ReconcileOutcome::Done
        }
    };
    manager.register_controller(Kind::Image, Arc::new(reconcile), config).unwrap();
    calls
}

fn ticks_for(calls: &Calls, name: &str) -> Vec<u64> {
    calls.lock().unwrap().iter().filter(|(_, k)| k.name == name).map(|(t, _)| *t).collect()
}

fn no_resync() -> ControllerConfig {
    ControllerConfig {
        resync_period: 10_000,
        ..ControllerConfig::default()
    }
}

#[test]
fn failures_back_off_exponentially_up_to_the_cap() {
    let (store, mut m) = setup(ManagerConfig::default());
    let calls = recorder(
        &mut m,
        ControllerConfig {
            max_backoff: 8,
            ..no_resync()
        },
    );
    store.create(image("default", "bad")).unwrap();
    m.run_ticks(40);
    let t = ticks_for(&calls, "bad");
    let gaps: Vec<u64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(&gaps[..6], &[1, 2, 4, 8, 8, 8], "invocations at {t:?}");
}

#[test]
fn failing_key_does_not_starve_others() {
    let (store, mut m) = setup(ManagerConfig::default());
    let calls = recorder(&mut m, no_resync());
    for i in 0..5 {
        store.create(image("default", &format!("bad-{i}"))).unwrap();
    }
    m.run_ticks(3);
    store.create(image("default", "good")).unwrap();
    let created = m.now();
    m.run_ticks(1);
    let t = ticks_for(&calls, "good");
    assert_eq!(t.len(), 1);
    assert!(t[0] <= created + 1, "good reconciled at {} (created {created})", t[0]);
}

#[test]
fn resync_reenqueues_live_objects() {
    let (store, mut m) = setup(ManagerConfig::default());
    let calls = recorder(
        &mut m,
        ControllerConfig {
            resync_period: 10,
            ..ControllerConfig::default()
        },
    );
    store.create(image("default", "a")).unwrap();
    m.run_ticks(35);
    assert_eq!(ticks_for(&calls, "a"), vec![0, 10, 20, 30]);
}

#[test]
fn quiescence_excludes_resync_and_new_work_wakes_the_manager() {
    let (store, mut m) = setup(ManagerConfig::default());
    let calls = recorder(&mut m, ControllerConfig::default());
    store.create(image("default", "a")).unwrap();
    let r = m.run(50);
    assert!(r.quiescent);
    assert_eq!(r.quiescent_at_tick, Some(0));

    m.run_ticks(5);
    store.create(image("default", "b")).unwrap();
    let r = m.run(50);
    assert!(r.quiescent);
    assert_eq!(ticks_for(&calls, "b"), vec![5]);
}

#[test]
fn writes_are_coalesced_into_one_reconcile() {
    let (store, mut m) = setup(ManagerConfig::default());
    let calls = recorder(&mut m, no_resync());
    let mut obj = store.create(image("default", "a")).unwrap();
    for i in 0..5 {
        obj.metadata.labels.insert("n".into(), i.to_string());
        obj = store.update(obj).unwrap();
    }
    m.run(10);
    assert_eq!(ticks_for(&calls, "a").len(), 1);
}

#[test]
fn deleted_objects_are_reconciled_once_more() {
    let (store, mut m) = setup(ManagerConfig::default());
    let calls = recorder(&mut m, no_resync());
    let key = store.create(image("default", "a")).unwrap().key();
    m.run(5);
    store.delete(&key).unwrap();
    m.run(5);
    assert_eq!(ticks_for(&calls, "a").len(), 2);
}

#[test]
fn parallel_mode_never_reenters_a_key() {
    let (store, mut m) = setup(ManagerConfig {
        mode: ExecutionMode::Parallel,
        seed: 3,
    });
    let calls = recorder(
        &mut m,
        ControllerConfig {
            max_concurrent_reconciles: 4,
            resync_period: 2,
            ..ControllerConfig::default()
        },
    );
    for i in 0..20 {
        store.create(image("default", &format!("img-{i}"))).unwrap();
    }
    for i in 0..3 {
        store.create(image("default", &format!("bad-{i}"))).unwrap();
    }
    let r = m.run_ticks(30);
    assert_eq!(r.reentrancy_violations, 0);
    let mut per_tick: BTreeMap<(u64, ObjectKey), u32> = BTreeMap::new();
    for c in calls.lock().unwrap().iter() {
        *per_tick.entry(c.clone()).or_default() += 1;
    }
    assert!(per_tick.values().all(|n| *n == 1), "a key ran twice in one tick");
}

#[test]
fn same_seed_same_invocation_order() {
    let order = |seed: u64| {
        let (store, mut m) = setup(ManagerConfig {
            mode: ExecutionMode::Deterministic,
            seed,
        });
        let calls = recorder(&mut m, ControllerConfig::default());
        m.register_controller(Kind::Network, Arc::new(|_: &ObjectKey, _: &ReconcileContext| ReconcileOutcome::Done), ControllerConfig::default())
            .unwrap();
        for i in 0..10 {
            store.create(image("default", &format!("img-{i}"))).unwrap();
        }
        m.run_ticks(20);
        let log: Vec<(u64, ObjectKey)> = m.invocation_log().iter().map(|r| (r.tick, r.key.clone())).collect();
        assert_eq!(calls.lock().unwrap().len(), log.iter().filter(|(_, k)| k.kind == Kind::Image).count());
        log
    };
    assert_eq!(order(1), order(1));
}

#[test]
fn panicking_reconciler_is_isolated() {
    let (store, mut m) = setup(ManagerConfig::default());
    m.register_controller(
        Kind::Image,
        Arc::new(|key: &ObjectKey, _: &ReconcileContext| {
            if key.name == "boom" {
                panic!("reconciler bug");
            }
            ReconcileOutcome::Done
        }),
        no_resync(),
    )
    .unwrap();
    store.create(image("default", "boom")).unwrap();
    store.create(image("default", "fine")).unwrap();
    let r = m.run_ticks(10);
    let img = &r.controllers[&Kind::Image];
    assert!(img.panics >= 2);
    assert!(m.invocation_log().iter().any(|r| r.key.name == "fine"));
}

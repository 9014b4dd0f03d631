use std::collections::BTreeMap;
use std::sync::Barrier;

use kupenstack::builders::{image, namespace};
use kupenstack::model::Kind;
use kupenstack::store::{EventType, Store, StoreError, WatchEvent};
use kupenstack::{Clock, ObjectKey, ResourceObject};
use proptest::prelude::*;

fn store() -> Store {
    let s = Store::new(Clock::new());
    s.create(namespace("default")).unwrap();
    s
}

#[derive(Debug, Clone)]
enum Op {
    Create(u8, bool),
    Label(u8, u8),
    Status(u8, u8),
    Delete(u8),
    DropFinalizers(u8),
    StaleUpdate(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..6u8, any::<bool>()).prop_map(|(n, f)| Op::Create(n, f)),
        (0..6u8, 0..4u8).prop_map(|(n, v)| Op::Label(n, v)),
        (0..6u8, 0..4u8).prop_map(|(n, v)| Op::Status(n, v)),
        (0..6u8).prop_map(Op::Delete),
        (0..6u8).prop_map(Op::DropFinalizers),
        (0..6u8).prop_map(Op::StaleUpdate),
    ]
}

fn key(n: u8) -> ObjectKey {
    ObjectKey::namespaced(Kind::Image, "default", &format!("img-{n}"))
}

/// Apply one op; returns whether the store reported a successful write.
fn apply(s: &Store, op: &Op) -> bool {
    match op {
        Op::Create(n, fin) => {
            let mut o = image("default", &format!("img-{n}"));
            if *fin {
                o.metadata.finalizers.insert("test/hold".into());
            }
            s.create(o).is_ok()
        }
        Op::Label(n, v) => s.try_get(&key(*n)).is_some_and(|mut o| {
            o.metadata.labels.insert("v".into(), v.to_string());
            s.update(o).is_ok()
        }),
        Op::Status(n, v) => s.try_get(&key(*n)).is_some_and(|mut o| {
            if let Some(st) = o.image_status_mut() {
                st.image_id = Some(format!("id-{v}"));
            }
            s.update_status(o).is_ok()
        }),
        Op::Delete(n) => s.delete(&key(*n)).is_ok(),
        Op::DropFinalizers(n) => s.try_get(&key(*n)).is_some_and(|mut o| {
            o.metadata.finalizers.clear();
            s.update(o).is_ok()
        }),
        Op::StaleUpdate(n) => {
            if let Some(mut o) = s.try_get(&key(*n)) {
                o.metadata.resource_version -= 1;
                o.metadata.labels.insert("stale".into(), "1".into());
                let r = s.update(o);
                assert!(matches!(r, Err(StoreError::Conflict { .. })), "{r:?}");
            }
            false
        }
    }
}

fn replay(base: BTreeMap<ObjectKey, ResourceObject>, events: &[WatchEvent]) -> BTreeMap<ObjectKey, ResourceObject> {
    let mut state = base;
    for ev in events {
        match ev.type_ {
            EventType::Deleted => {
                state.remove(&ev.object.key());
            }
            _ => {
                state.insert(ev.object.key(), ev.object.clone());
            }
        }
    }
    state
}

fn as_map(objects: Vec<ResourceObject>) -> BTreeMap<ObjectKey, ResourceObject> {
    objects.into_iter().map(|o| (o.key(), o)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn list_then_watch_has_no_gaps(before in prop::collection::vec(op(), 0..30), after in prop::collection::vec(op(), 0..60)) {
        let s = store();
        for o in &before {
            apply(&s, o);
        }
        let listed = s.list_all();
        let mut w = s.watch(None, listed.revision).unwrap();
        for o in &after {
            apply(&s, o);
        }
        let events = w.poll().unwrap();
        prop_assert_eq!(replay(as_map(listed.items), &events), as_map(s.list_all().items));
    }

    #[test]
    fn one_event_per_successful_write_with_increasing_revisions(ops in prop::collection::vec(op(), 1..80)) {
        let s = store();
        let mut w = s.watch(None, s.revision()).unwrap();
        let mut writes = 0;
        for o in &ops {
            let rev = s.revision();
            let ok = apply(&s, o);
            let events = w.poll().unwrap();
            prop_assert!(events.len() <= 1);
            // a finalized delete touches the object once; a no-op write not at all
            if ok && s.revision() > rev {
                writes += 1;
                prop_assert_eq!(events.len(), 1);
                prop_assert_eq!(events[0].revision, s.revision());
            } else {
                prop_assert!(events.is_empty());
            }
        }
        prop_assert_eq!(s.revision() as usize, writes + 1);
    }

    #[test]
    fn stale_writes_never_land(n in 0..6u8, ops in prop::collection::vec(op(), 0..20)) {
        let s = store();
        s.create(image("default", &format!("img-{n}"))).unwrap();
        let stale = s.get(&key(n)).unwrap();
        let mut changed = false;
        for o in &ops {
            apply(&s, o);
            changed |= s.try_get(&key(n)).map(|c| c.metadata.resource_version) != Some(stale.metadata.resource_version);
        }
        let mut attempt = stale.clone();
        attempt.metadata.labels.insert("late".into(), "yes".into());
        let result = s.update(attempt);
        if changed {
            prop_assert!(result.is_err());
        }
    }

    #[test]
    fn generation_tracks_spec_only(labels in prop::collection::vec(0..4u8, 0..10)) {
        let s = store();
        let mut o = s.create(image("default", "a")).unwrap();
        for v in labels {
            o.metadata.labels.insert("v".into(), v.to_string());
            o = s.update(o).unwrap();
        }
        prop_assert_eq!(o.metadata.generation, 1);
    }
}

#[test]
fn concurrent_cas_loses_no_increments() {
    let s = store();
    s.create(image("default", "counter")).unwrap();
    let threads = 8;
    let per_thread = 50;
    let barrier = Barrier::new(threads);
    let start = s.revision();
    let _conflicts: usize = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                let s = s.clone();
                let barrier = &barrier;
                scope.spawn(move || {
                    barrier.wait();
                    let mut conflicts = 0;
                    for _ in 0..per_thread {
                        loop {
                            let mut o = s.get(&key_named("counter")).unwrap();
                            let n: u64 = o.metadata.labels.get("n").map_or(0, |v| v.parse().unwrap());
                            o.metadata.labels.insert("n".into(), (n + 1).to_string());
                            match s.update(o) {
                                Ok(_) => break,
                                Err(StoreError::Conflict { .. }) => conflicts += 1,
                                Err(e) => panic!("{e}"),
                            }
                        }
                    }
                    conflicts
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    let o = s.get(&key_named("counter")).unwrap();
    assert_eq!(o.metadata.labels["n"], (threads * per_thread).to_string());
    // conflicting attempts never produced a revision
    assert_eq!(s.revision() - start, (threads * per_thread) as u64);
}

fn key_named(name: &str) -> ObjectKey {
    ObjectKey::namespaced(Kind::Image, "default", name)
}

#[test]
fn identical_watchers_see_identical_streams() {
    let s = store();
    let rev = s.revision();
    let mut a = s.watch(None, rev).unwrap();
    let mut b = s.watch(None, rev).unwrap();
    let writer = {
        let s = s.clone();
        std::thread::spawn(move || {
            for i in 0..200u32 {
                let name = format!("img-{}", i % 7);
                match s.try_get(&key_named(&name)) {
                    None => {
                        s.create(image("default", &name)).unwrap();
                    }
                    Some(mut o) if i % 3 == 0 => {
                        o.metadata.labels.insert("i".into(), i.to_string());
                        s.update(o).unwrap();
                    }
                    Some(o) => {
                        s.delete(&o.key()).unwrap();
                    }
                }
            }
        })
    };
    let mut seen_a = Vec::new();
    let mut seen_b = Vec::new();
    while !writer.is_finished() {
        seen_a.extend(a.poll().unwrap());
        seen_b.extend(b.wait(std::time::Duration::from_millis(1)).unwrap());
    }
    writer.join().unwrap();
    seen_a.extend(a.poll().unwrap());
    seen_b.extend(b.poll().unwrap());
    assert_eq!(seen_a.len() as u64, s.revision() - rev);
    assert_eq!(seen_a, seen_b);
}

#[test]
fn watch_behind_retention_is_rejected() {
    let s = Store::with_retention(Clock::new(), 4);
    s.create(namespace("default")).unwrap();
    for i in 0..10 {
        s.create(image("default", &format!("i{i}"))).unwrap();
    }
    assert!(matches!(s.watch(None, 1), Err(StoreError::CompactedRevision { .. })));
    assert!(s.watch(None, s.revision() - 2).is_ok());
}

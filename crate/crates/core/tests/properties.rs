//! Whole-engine properties over generated workloads and fault schedules.

use kupenstack::builders::*;
use kupenstack::engine::{Engine, EngineConfig};
use kupenstack::invariants::InvariantMonitor;
use kupenstack::model::{ConditionType, Kind, OpenStackService};
use kupenstack::sim::{FaultAction, UnitTarget, VmTarget};
use kupenstack::{ObjectKey, ResourceObject};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Event {
    Vm { name: u8, image: u8, subnet: u8 },
    DeleteVm(u8),
    Subnet(u8),
    DeleteSubnet(u8),
    Image(u8),
    DeleteImage(u8),
    CrashVm,
    CrashUnit,
    Burst(u8),
    NodeDown(u8),
}

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        4 => (0..5u8, 0..2u8, 0..2u8).prop_map(|(name, image, subnet)| Event::Vm { name, image, subnet }),
        2 => (0..5u8).prop_map(Event::DeleteVm),
        1 => (0..2u8).prop_map(Event::Subnet),
        1 => (0..2u8).prop_map(Event::DeleteSubnet),
        1 => (0..2u8).prop_map(Event::Image),
        1 => (0..2u8).prop_map(Event::DeleteImage),
        1 => Just(Event::CrashVm),
        1 => Just(Event::CrashUnit),
        1 => (0..4u8).prop_map(Event::Burst),
        1 => (0..3u8).prop_map(Event::NodeDown),
    ]
}

fn key(kind: Kind, name: String) -> ObjectKey {
    ObjectKey::namespaced(kind, "default", &name)
}

fn fire(e: &Engine, ev: &Event) {
    let apply = |o: ResourceObject| {
        let _ = e.apply(o);
    };
    let delete = |k: ObjectKey| {
        let _ = e.delete(&k);
    };
    match ev {
        Event::Vm { name, image, subnet } => apply(instance(
            "default",
            &format!("vm-{name}"),
            &format!("img-{image}"),
            &[&format!("sub-{subnet}")],
        )),
        Event::DeleteVm(n) => delete(key(Kind::Instance, format!("vm-{n}"))),
        Event::Subnet(n) => apply(subnet("default", &format!("sub-{n}"), "net", &format!("10.0.{n}.0/24"))),
        Event::DeleteSubnet(n) => delete(key(Kind::Subnet, format!("sub-{n}"))),
        Event::Image(n) => apply(image("default", &format!("img-{n}"))),
        Event::DeleteImage(n) => delete(key(Kind::Image, format!("img-{n}"))),
        Event::CrashVm => e.inject(&FaultAction::CrashVm(VmTarget::default())),
        Event::CrashUnit => e.inject(&FaultAction::CrashUnit(UnitTarget::default())),
        Event::Burst(s) => e.inject(&FaultAction::ApiErrorBurst {
            service: OpenStackService::ALL[*s as usize],
            ticks: 3,
        }),
        Event::NodeDown(n) => e.inject(&FaultAction::NodeDown {
            name: format!("compute-{n}"),
            ticks: 5,
        }),
    }
}

fn boot(seed: u64) -> Engine {
    let mut e = Engine::new(EngineConfig::seeded(seed)).unwrap();
    e.apply(standard_cloud("1.0.0")).unwrap();
    e.apply(network("default", "net", false)).unwrap();
    e.run(50);
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every invariant holds once the fault schedule is over and the engine
    /// has settled, whatever happened on the way.
    #[test]
    fn invariants_hold_after_settling(seed in any::<u64>(), schedule in prop::collection::vec((0..4u64, event()), 1..40)) {
        let mut e = boot(seed);
        let mut monitor = InvariantMonitor::new();
        for (gap, ev) in &schedule {
            fire(&e, ev);
            for _ in 0..=*gap {
                e.step();
                monitor.observe(&e);
            }
        }
        // let delayed faults and heals play out
        for _ in 0..150 {
            e.step();
            monitor.observe(&e);
        }
        for inv in monitor.check(&e) {
            prop_assert!(inv.passed, "{}: {:?}", inv.name, inv.violations);
        }
    }

    /// Same seed and same schedule give the same mutation log.
    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), schedule in prop::collection::vec(event(), 1..15)) {
        let run = || {
            let mut e = boot(seed);
            for ev in &schedule {
                fire(&e, ev);
                e.step();
            }
            e.run_ticks(40);
            e.sim().export_log()
        };
        prop_assert_eq!(run(), run());
    }

    /// A cloud with any replica counts converges with one unit per replica.
    #[test]
    fn cloud_converges_for_any_replica_counts(nova in 1..4u32, neutron in 1..3u32, glance in 1..3u32) {
        let mut e = Engine::new(EngineConfig::seeded(1)).unwrap();
        e.apply(cloud("openstack", &[
            (OpenStackService::Keystone, "1.0.0", 1),
            (OpenStackService::Glance, "1.0.0", glance),
            (OpenStackService::Nova, "1.0.0", nova),
            (OpenStackService::Neutron, "1.0.0", neutron),
        ])).unwrap();
        e.run(120);
        let c = e.store().get(&ObjectKey::cluster(Kind::OpenStackCloud, "openstack")).unwrap();
        prop_assert!(c.status.conditions().is_true(ConditionType::Ready));
        let units = e.sim().units_of(&c.key());
        prop_assert_eq!(units.len() as u32, 1 + glance + nova + neutron);
    }

    /// Deleting a namespace always completes once its contents are gone.
    #[test]
    fn namespace_deletion_completes(images in 0..4usize, delete_images_first in any::<bool>()) {
        let mut e = boot(5);
        e.apply(namespace("team")).unwrap();
        for i in 0..images {
            e.apply(image("team", &format!("i{i}"))).unwrap();
        }
        e.run(50);
        let ns = ObjectKey::cluster(Kind::Namespace, "team");
        if delete_images_first {
            for i in 0..images {
                e.delete(&ObjectKey::namespaced(Kind::Image, "team", &format!("i{i}"))).unwrap();
            }
            e.delete(&ns).unwrap();
        } else {
            e.delete(&ns).unwrap();
            e.run(20);
            prop_assert_eq!(e.store().try_get(&ns).is_some(), images > 0);
            for i in 0..images {
                e.delete(&ObjectKey::namespaced(Kind::Image, "team", &format!("i{i}"))).unwrap();
            }
        }
        e.run(100);
        prop_assert!(e.store().try_get(&ns).is_none());
        prop_assert_eq!(e.sim().inspect(|st| st.projects.len()), 1);
    }
}

//! Shared fixtures for the benchmarks.

use kupenstack::builders::*;
use kupenstack::engine::{Engine, EngineConfig};
use kupenstack::store::Store;
use kupenstack::Clock;

/// Engine with a converged cloud and tenant network, ready for instances.
pub fn converged_engine(seed: u64) -> Engine {
    let mut e = Engine::new(EngineConfig::seeded(seed)).expect("engine");
    e.apply(standard_cloud("1.0.0")).expect("cloud");
    for o in tenant_basics("default") {
        e.apply(o).expect("tenant");
    }
    e.run(200);
    e
}

/// Apply `n` instances and run until they settle. Returns the ticks taken.
pub fn boot_instances(e: &mut Engine, n: usize) -> u64 {
    for i in 0..n {
        e.apply(instance("default", &format!("vm-{i}"), "cirros", &["subnet"]))
            .expect("instance");
    }
    let r = e.run(500);
    r.end_tick - r.start_tick
}

/// Store holding `n` images in `default`.
pub fn populated_store(n: usize) -> Store {
    let s = Store::new(Clock::new());
    s.create(namespace("default")).expect("namespace");
    for i in 0..n {
        s.create(image("default", &format!("img-{i}"))).expect("image");
    }
    s
}

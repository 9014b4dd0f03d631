use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use kupenstack::builders::standard_cloud;
use kupenstack::engine::{Engine, EngineConfig};
use kupenstack::model::Kind;
use kupenstack::sim::{FaultAction, VmTarget};
use kupenstack::ObjectKey;
use kupenstack_bench::{boot_instances, converged_engine, populated_store};

fn cloud_rollout(c: &mut Criterion) {
    c.bench_function("cloud_rollout", |b| {
        b.iter(|| {
            let mut e = Engine::new(EngineConfig::seeded(1)).unwrap();
            e.apply(standard_cloud("1.0.0")).unwrap();
            e.run(200)
        })
    });
}

fn instance_boot(c: &mut Criterion) {
    let mut g = c.benchmark_group("instance_boot");
    g.sample_size(20);
    for n in [10, 50] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter_batched(|| converged_engine(1), |mut e| boot_instances(&mut e, n), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn vm_heal(c: &mut Criterion) {
    let mut base = converged_engine(2);
    boot_instances(&mut base, 20);
    let snap = base.snapshot();
    c.bench_function("vm_heal_20", |b| {
        b.iter_batched(
            || Engine::from_snapshot(snap.clone()).unwrap(),
            |mut e| {
                for _ in 0..5 {
                    e.inject(&FaultAction::CrashVm(VmTarget::default()));
                }
                e.run(200)
            },
            BatchSize::LargeInput,
        )
    });
}

fn resync_quiescent(c: &mut Criterion) {
    let mut e = converged_engine(3);
    boot_instances(&mut e, 20);
    c.bench_function("resync_quiescent_20", |b| {
        b.iter(|| {
            e.manager_mut().resync_all();
            e.run(50)
        })
    });
}

fn store_ops(c: &mut Criterion) {
    let s = populated_store(1000);
    let key = ObjectKey::namespaced(Kind::Image, "default", "img-500");
    c.bench_function("store_update_1000", |b| {
        b.iter(|| {
            let mut o = s.get(&key).unwrap();
            let n = o.metadata.labels.get("n").map_or(0, |v| v.parse::<u64>().unwrap()) + 1;
            o.metadata.labels.insert("n".into(), n.to_string());
            s.update(o).unwrap()
        })
    });
    c.bench_function("store_list_1000", |b| b.iter(|| s.list(Kind::Image, Some("default"), None)));
}

criterion_group!(benches, cloud_rollout, instance_boot, vm_heal, resync_quiescent, store_ops);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion};

use cobra_core::contact::Terrain;
use cobra_core::gait_library::GaitSpec;
use cobra_core::gait_optimizer::{shoot_trajectory, ShootingSetup};
use cobra_core::parallel;
use cobra_core::robot_model::build_cobra_model;

fn rollouts(c: &mut Criterion) {
    let model = build_cobra_model(None).expect("model");
    let setup = ShootingSetup::new(model, Terrain::flat(), 0.5).expect("setup");
    let gaits: Vec<GaitSpec> = (0..4)
        .map(|i| {
            let mut g = GaitSpec::gait1(2.0);
            g.amp_h *= 1.0 - 0.1 * i as f64;
            g
        })
        .collect();
    let shoot = |g: &GaitSpec| {
        shoot_trajectory(&setup, g)
            .map(|r| r.objective)
            .unwrap_or(f64::INFINITY)
    };

    let mut group = c.benchmark_group("rollouts_x4");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| parallel::map(&gaits, shoot)));
    group.bench_function("sequential", |b| b.iter(|| parallel::map_sequential(&gaits, shoot)));
    group.finish();
}

criterion_group!(benches, rollouts);
criterion_main!(benches);

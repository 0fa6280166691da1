//! Timings for the three hot paths: collocation table construction, one
//! training step (forward + backward over a full batch), and the implicit
//! reference solver.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use irknet::{
    consistent_z, irk_step, physics_loss_nodes, sample_initial_conditions, ButcherTableau,
    NetSpec, PinnAssembly, SemiExplicitDae, SolverConfig, Tape, ThreeBus, ThreeBusParams,
};

fn three_bus() -> ThreeBus {
    ThreeBus::new(ThreeBusParams::default()).unwrap()
}

fn bench_tableau(c: &mut Criterion) {
    c.bench_function("tableau/gauss_10", |b| {
        b.iter(|| ButcherTableau::gauss(black_box(10)).unwrap())
    });
    let mut slow = c.benchmark_group("tableau");
    slow.sample_size(10);
    slow.bench_function("gauss_100", |b| {
        b.iter(|| ButcherTableau::gauss(black_box(100)).unwrap())
    });
    slow.finish();
}

/// One full-batch gradient evaluation at the geometry used for desk-scale
/// training: eight stages, 64/32-wide nets, 128 collocation points.
fn bench_train_step(c: &mut Criterion) {
    let dae = three_bus();
    let ranges = [
        (-0.5, 0.5),
        (-0.5, 0.5),
        (-0.1, 0.1),
        (-0.1, 0.1),
    ];
    let tableau = ButcherTableau::gauss(8).unwrap();
    let assembly = PinnAssembly::unstacked(
        dae.n(),
        dae.m(),
        NetSpec { width: 64, depth: 4 },
        NetSpec { width: 32, depth: 4 },
        &ranges,
        tableau.clone(),
        0.1,
        7,
    )
    .unwrap();
    let data = sample_initial_conditions(128, &ranges, 1).unwrap();

    c.bench_function("train/loss_and_grads_128x8", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let y_n = tape.constant(data.clone());
            let nodes = assembly.stage_nodes(&mut tape, y_n, true).unwrap();
            let loss = physics_loss_nodes(
                &mut tape,
                &dae,
                y_n,
                &nodes.ys,
                &nodes.zs,
                &tableau,
                assembly.step,
                1.0,
                1.0,
            )
            .unwrap();
            let grads = tape.backward(loss.total).unwrap();
            black_box(grads);
        })
    });
}

fn bench_reference_solver(c: &mut Criterion) {
    let dae = three_bus();
    let y0 = [0.1, -0.05, 0.02, 0.01];
    let z0 = consistent_z(&dae, &y0, &[1.0]).unwrap();
    let cfg = SolverConfig {
        tableau: ButcherTableau::gauss(3).unwrap(),
        h_ref: 1e-3,
        ..SolverConfig::default()
    };
    c.bench_function("solver/irk_step_gauss3", |b| {
        b.iter(|| irk_step(&dae, black_box(&y0), &z0, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_tableau, bench_train_step, bench_reference_solver);
criterion_main!(benches);

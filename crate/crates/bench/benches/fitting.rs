use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dexfit_bench::Scene;
use dexfit_core::body_model::{forward_kinematics, skin_vertices};
use dexfit_core::fitting::{fit_frame, FitProblem, FitWeights, FrameObjective};

fn kinematics(c: &mut Criterion) {
    let scene = Scene::new();
    c.bench_function("forward_kinematics", |b| {
        b.iter(|| forward_kinematics(&scene.tpl, black_box(&scene.gt)).unwrap())
    });
    c.bench_function("skin_vertices", |b| b.iter(|| skin_vertices(&scene.tpl, black_box(&scene.gt)).unwrap()));
}

fn priors(c: &mut Criterion) {
    let scene = Scene::new();
    let z = vec![0.1; scene.body.latent_dim()];
    c.bench_function("body_prior_decode", |b| b.iter(|| scene.body.decode(black_box(&z)).unwrap()));
    let z = vec![0.1; scene.hand.latent_dim()];
    c.bench_function("hand_prior_decode", |b| b.iter(|| scene.hand.decode(black_box(&z)).unwrap()));
}

fn objective(c: &mut Criterion) {
    let scene = Scene::new();
    let objective = FrameObjective::new(scene.problem(), &scene.frame, &scene.gt, None).unwrap();
    let x = objective.initial_vector(&scene.gt.root_orient, &scene.gt.root_trans).unwrap();
    c.bench_function("objective_value_and_gradient", |b| {
        b.iter(|| objective.value_and_gradient(black_box(&x)).unwrap())
    });
}

fn lbfgs(c: &mut Criterion) {
    let scene = Scene::new();
    let mut weights = FitWeights::default();
    weights.lbfgs.max_iterations = 10;
    let problem = FitProblem {
        weights: &weights,
        ..scene.problem()
    };
    let mut group = c.benchmark_group("lbfgs");
    group.sample_size(10);
    group.bench_function("fit_frame_10_iterations", |b| {
        b.iter(|| fit_frame(problem, &scene.frame, &scene.gt, None, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kinematics, priors, objective, lbfgs);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bandit_tutor_bench::{candidates, run_section, standard_curriculum};
use bandit_tutor_core::bandit::{compute_reward, selection_probabilities};
use bandit_tutor_core::experiment::{run_experiment, ExperimentPlan};
use bandit_tutor_core::student::update_posterior;
use bandit_tutor_core::{BktParams, Session, SessionConfig};

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("selection_probabilities");
    for n in [3, 10, 100] {
        let cands = candidates(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &cands, |b, cands| {
            b.iter(|| selection_probabilities(black_box(cands), 0.1).unwrap())
        });
    }
    group.finish();
}

fn primitives(c: &mut Criterion) {
    let history: Vec<f64> = (0..64).map(|i| (i % 3) as f64 * 0.5).collect();
    c.bench_function("compute_reward L=4", |b| {
        b.iter(|| compute_reward(black_box(&history), 4))
    });
    let p = BktParams {
        prior: 0.2,
        learn: 0.15,
        guess: 0.2,
        slip: 0.1,
    };
    c.bench_function("update_posterior", |b| {
        b.iter(|| update_posterior(black_box(0.4), black_box(true), &p))
    });
}

fn session(c: &mut Criterion) {
    let curriculum = standard_curriculum(7);
    let full = SessionConfig::default();
    let agnostic = SessionConfig::difficulty_agnostic();
    c.bench_function("section to completion (full)", |b| {
        b.iter(|| run_section(&curriculum, &full, black_box(11), 4))
    });
    c.bench_function("section to completion (agnostic)", |b| {
        b.iter(|| run_section(&curriculum, &agnostic, black_box(11), 4))
    });

    let section = curriculum.sections()[0].id.clone();
    let mut live = Session::start(curriculum.clone(), &section, full, 5).unwrap();
    live.next_recommendation().unwrap();
    c.bench_function("snapshot", |b| b.iter(|| black_box(live.snapshot())));
    let snap = live.snapshot();
    c.bench_function("restore", |b| {
        b.iter(|| Session::restore(black_box(&snap), curriculum.clone()).unwrap())
    });
}

fn experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    let plan = ExperimentPlan::new(standard_curriculum(3), 3).with_students(50);
    group.bench_function("three groups, 50 students", |b| {
        b.iter(|| run_experiment(black_box(&plan)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, selection, primitives, session, experiment);
criterion_main!(benches);

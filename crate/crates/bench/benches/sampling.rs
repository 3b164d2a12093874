use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use noise_align_core::{
    calibrate_source_stats, ddim_step_scaled, ddpm_step_scaled, domain_shift, make_linear_schedule,
    quantile_mask, run_sampler_sa, run_sampler_sf, sample_condition, spectrum_gap,
    AnalyticPredictor, NoisePredictor, NoiseSchedule, Purpose, SaOptions, Sampler, SfParams,
    ShiftParams, StreamId, TrajectorySeed, World,
};

fn setup() -> (World, NoiseSchedule, AnalyticPredictor) {
    let world = World::default();
    let schedule = make_linear_schedule(1000, 1e-4, 0.02, 50).unwrap();
    let predictor = AnalyticPredictor::new(world.clone(), schedule.clone());
    (world, schedule, predictor)
}

fn steps(c: &mut Criterion) {
    let (world, schedule, predictor) = setup();
    let cond = sample_condition(&world, &mut StreamId::new(1, Purpose::SourceCondition, 0).rng());
    let state = TrajectorySeed::new(1, 0).initial_state(cond.clone(), &schedule);
    let eps = predictor.predict(&state.x, state.t, &cond).unwrap();
    c.bench_function("predict", |b| {
        b.iter(|| predictor.predict(black_box(&state.x), state.t, &cond).unwrap())
    });
    c.bench_function("ddim_step", |b| {
        b.iter(|| ddim_step_scaled(state.clone(), black_box(&eps), 1.2, &schedule).unwrap())
    });
    c.bench_function("ddpm_step", |b| {
        b.iter(|| ddpm_step_scaled(state.clone(), black_box(&eps), 1.2, &schedule, true).unwrap())
    });
    c.bench_function("quantile_mask", |b| b.iter(|| quantile_mask(black_box(&eps), 0.3).unwrap()));
    c.bench_function("spectrum_gap", |b| b.iter(|| spectrum_gap(black_box(&eps), &state.x).unwrap()));
}

fn trajectories(c: &mut Criterion) {
    let (world, schedule, predictor) = setup();
    let mut rng = StreamId::new(2, Purpose::TargetCondition, 0).rng();
    let clean = sample_condition(&world, &mut rng);
    let shifted = domain_shift(&clean, &ShiftParams::default(), &mut rng);
    let stats = calibrate_source_stats(&predictor, &[clean], &schedule, Sampler::Ddim, 2, 2).unwrap();
    let options = SaOptions::default();
    let params = SfParams::default();
    let mut group = c.benchmark_group("trajectory");
    group.sample_size(20);
    group.bench_function("sa", |b| {
        b.iter(|| run_sampler_sa(&predictor, &shifted, &schedule, &stats, 3, &options).unwrap())
    });
    group.bench_function("sf", |b| {
        b.iter(|| run_sampler_sf(&predictor, &shifted, &schedule, &params, 3).unwrap())
    });
    group.finish();
}

criterion_group!(benches, steps, trajectories);
criterion_main!(benches);

//! Derived values checked against independent reimplementations.

use noise_align_core::diagnostics::{write_csv, write_grid};
use noise_align_core::testbed::{box_blur, DEPTH_FLOOR};
use noise_align_core::{
    absrel, analytic_eps, batch_variance_map, calibrate_source_stats, consistency_gamma,
    ddim_step_scaled, delta_n, direct_alignment_lambda, domain_shift, forward_sample,
    ground_truth, make_linear_schedule, run_ensemble_baseline, run_sampler_plain,
    run_sampler_sa, run_sf_detailed, sample_condition, AlignMode, AnalyticPredictor, Grid, Mask,
    NoiseSchedule, Purpose, SaOptions, SampleState, Sampler, SfParams, ShiftParams, StreamId,
    TrajectorySeed, World,
};

fn default_schedule() -> NoiseSchedule {
    make_linear_schedule(1000, 1e-4, 0.02, 50).unwrap()
}

fn condition(world: &World, purpose: Purpose, i: u64) -> Grid {
    sample_condition(world, &mut StreamId::new(7, purpose, i).rng())
}

#[test]
fn alpha_bar_matches_product_loop() {
    let s = default_schedule();
    let mut prod = 1.0;
    for k in 0..1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * k as f64 / 999.0;
        prod *= 1.0 - beta;
    }
    assert!((s.alpha_bar(1000) - prod).abs() < 1e-15);
    assert!((prod - 4.035e-5).abs() < 1e-7, "{prod}");
}

#[test]
fn ddim_scaled_step_matches_scratch_update() {
    let s = default_schedule();
    let mut rng = StreamId::new(3, Purpose::Latent, 0).rng();
    let x = rng.normal_grid(3, 3);
    let eps = rng.normal_grid(3, 3);
    let cond = Grid::zeros(3, 3);
    let state = SampleState::new(x.clone(), cond, &s, StreamId::new(3, Purpose::StepNoise, 0).rng())
        .unwrap();
    // First step: t = 1000 to t = 980.
    let next = ddim_step_scaled(state, &eps, 1.5, &s).unwrap();
    assert_eq!(next.t, 980);
    let (a, ap) = (s.alpha_bar(1000), s.alpha_bar(980));
    for i in 0..9 {
        let e = eps.data()[i] / 1.5;
        let x0 = (x.data()[i] - (1.0 - a).sqrt() * e) / a.sqrt();
        let want = ap.sqrt() * x0 + (1.0 - ap).sqrt() * e;
        assert!((next.x.data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn calibration_matches_scratch_loop() {
    let world = World::default();
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let conds: Vec<Grid> = (0..8).map(|i| condition(&world, Purpose::SourceCondition, i)).collect();
    let stats = calibrate_source_stats(&p, &conds, &s, Sampler::Ddim, 7, 1).unwrap();

    let steps = s.step_indices();
    let mut sums = vec![0.0; steps.len()];
    for (i, c) in conds.iter().enumerate() {
        let mut x = StreamId::new(7, Purpose::Latent, i as u64).rng().normal_grid(32, 32);
        for (k, &t) in steps.iter().enumerate() {
            let e = analytic_eps(&world, &x, t, c, &s).unwrap();
            sums[k] += (e.data().iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
            let prev = steps.get(k + 1).copied().unwrap_or(0);
            let (a, ap) = (s.alpha_bar(t), s.alpha_bar(prev));
            x = x.zip_map(&e, |x, e| {
                let x0 = (x - (1.0 - a).sqrt() * e) / a.sqrt();
                ap.sqrt() * x0 + (1.0 - ap).sqrt() * e
            });
        }
    }
    for (k, &t) in steps.iter().enumerate() {
        let got = stats.rms_at(t).unwrap();
        assert!((got - sums[k] / 8.0).abs() < 1e-12, "t={t}");
    }
    assert_eq!(stats.sample_count, 8);
}

#[test]
fn delta_n_at_mid_step_matches_direct_ratio() {
    let world = World::default();
    let s = default_schedule();
    let clean = condition(&world, Purpose::TargetCondition, 0);
    let shifted = domain_shift(&clean, &ShiftParams::default(), &mut StreamId::new(7, Purpose::Shift, 0).rng());
    let mut rng = StreamId::new(7, Purpose::Latent, 0).rng();
    let x0 = ground_truth(&world, &clean);
    let x_t = forward_sample(&x0, 500, &rng.normal_grid(32, 32), &s).unwrap();
    let src = analytic_eps(&world, &x_t, 500, &clean, &s).unwrap();
    let tgt = analytic_eps(&world, &x_t, 500, &shifted, &s).unwrap();
    let rms = |g: &Grid| (g.data().iter().map(|v| v * v).sum::<f64>() / 1024.0).sqrt();
    let d = delta_n(rms(&src), &tgt).unwrap();
    assert!((d - rms(&src) / rms(&tgt)).abs() < 1e-12);
    let l = direct_alignment_lambda(rms(&src), &tgt).unwrap();
    assert!((l * d - 1.0).abs() < 1e-12);
}

#[test]
fn direct_lambda_is_reciprocal_along_a_trajectory() {
    let world = World::default();
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let src = [condition(&world, Purpose::SourceCondition, 0)];
    let stats = calibrate_source_stats(&p, &src, &s, Sampler::Ddim, 7, 2).unwrap();
    let cond = domain_shift(&src[0], &ShiftParams::default(), &mut StreamId::new(7, Purpose::Shift, 0).rng());
    let options = SaOptions {
        mode: AlignMode::Direct,
        ..SaOptions::default()
    };
    let (_, log) = run_sampler_sa(&p, &cond, &s, &stats, 5, &options).unwrap();
    for r in &log.rows {
        assert!((r.lambda * r.delta_n.unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn source_domain_dna_stays_near_neutral() {
    let world = World::default();
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let conds: Vec<Grid> = (0..8).map(|i| condition(&world, Purpose::SourceCondition, i)).collect();
    let stats = calibrate_source_stats(&p, &conds, &s, Sampler::Ddim, 7, 2).unwrap();
    let (mut dna_err, mut off_err) = (0.0, 0.0);
    for i in 0..8 {
        let c = condition(&world, Purpose::TargetCondition, i);
        let gt = ground_truth(&world, &c);
        let seed = TrajectorySeed::new(11, i);
        let run = |mode| {
            let options = SaOptions {
                mode,
                ..SaOptions::default()
            };
            run_sampler_sa(&p, &c, &s, &stats, seed, &options).unwrap()
        };
        let (dna, log) = run(AlignMode::Dna);
        let (off, _) = run(AlignMode::Off);
        for r in &log.rows {
            let d = r.delta_n.unwrap();
            assert!((d - 1.0).abs() <= 0.1, "delta_n {d} at t={}", r.timestep);
        }
        dna_err += absrel(&dna.map(|v| v.max(1e-3)), &gt).unwrap();
        off_err += absrel(&off.map(|v| v.max(1e-3)), &gt).unwrap();
    }
    assert!((dna_err - off_err).abs() <= 0.1 * off_err, "{dna_err} vs {off_err}");
}

#[test]
fn off_mode_matches_plain_sampling() {
    let world = World::default();
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let c = condition(&world, Purpose::SourceCondition, 0);
    let stats = calibrate_source_stats(&p, std::slice::from_ref(&c), &s, Sampler::Ddpm, 1, 1).unwrap();
    let options = SaOptions {
        mode: AlignMode::Off,
        sampler: Sampler::Ddpm,
        ..SaOptions::default()
    };
    let (off, _) = run_sampler_sa(&p, &c, &s, &stats, 4, &options).unwrap();
    let (plain, _) = run_sampler_plain(&p, &c, &s, 4, Sampler::Ddpm).unwrap();
    assert_eq!(off, plain);
}

#[test]
fn deterministic_world_is_recovered() {
    let world = World {
        sigma0: 0.0,
        ..World::default()
    };
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    for i in 0..4 {
        let c = condition(&world, Purpose::SourceCondition, i);
        let (pred, _) = run_sampler_plain(&p, &c, &s, i, Sampler::Ddim).unwrap();
        assert!(absrel(&pred, &ground_truth(&world, &c)).unwrap() < 0.01);
    }
}

#[test]
fn ground_truth_matches_naive_blur() {
    let world = World {
        height: 8,
        width: 8,
        smoothing_radius: 1,
        ..World::default()
    };
    let c = condition(&world, Purpose::SourceCondition, 2);
    let base = c.map(|v| world.a * v + world.b);
    let naive = Grid::from_fn(8, 8, |r, col| {
        let mut sum = 0.0;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let rr = (r as i64 + dr).clamp(0, 7) as usize;
                let cc = (col as i64 + dc).clamp(0, 7) as usize;
                sum += base.get(rr, cc);
            }
        }
        sum / 9.0
    });
    let blurred = box_blur(&base, 1);
    for (a, b) in blurred.data().iter().zip(naive.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let gt = ground_truth(&world, &c);
    let lift = (DEPTH_FLOOR - naive.min()).max(0.0);
    for (g, n) in gt.data().iter().zip(naive.data()) {
        assert!((g - (n + lift)).abs() < 1e-12);
    }
}

#[test]
fn different_seeds_give_different_conditions() {
    let world = World::default();
    let a = condition(&world, Purpose::SourceCondition, 0);
    let b = condition(&world, Purpose::SourceCondition, 1);
    let differing = a.data().iter().zip(b.data()).filter(|(x, y)| (*x - *y).abs() > 1e-6).count();
    assert!(differing * 2 >= a.len());
}

#[test]
fn darkening_fixture() {
    let shift = ShiftParams {
        gamma: 2.2,
        gain: 0.5,
        offset: 0.0,
        noise_std: 0.0,
    };
    let out = domain_shift(&Grid::filled(2, 2, 0.5), &shift, &mut StreamId::new(0, Purpose::Shift, 0).rng());
    let want = 0.5 * 0.5f64.powf(2.2);
    assert!(out.data().iter().all(|&v| (v - want).abs() < 1e-15));
    assert!((want - 0.108_818_8).abs() < 1e-7);
}

#[test]
fn batch_variance_matches_two_pass() {
    let mut rng = StreamId::new(2, Purpose::Latent, 0).rng();
    let batch: Vec<Grid> = (0..4).map(|_| rng.normal_grid(5, 6)).collect();
    let v = batch_variance_map(&batch).unwrap();
    for i in 0..30 {
        let xs: Vec<f64> = batch.iter().map(|g| g.data()[i]).collect();
        let mean = xs.iter().sum::<f64>() / 4.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((v.data()[i] - var).abs() < 1e-14);
    }
}

#[test]
fn gamma_is_near_one_for_homogeneous_noise() {
    let mut rng = StreamId::new(4, Purpose::Latent, 1).rng();
    let batch: Vec<Grid> = (0..4).map(|_| rng.normal_grid(64, 64)).collect();
    let checker = Mask::new(64, 64, (0..64 * 64).map(|i| (i / 64 + i % 64) % 2 == 0).collect()).unwrap();
    let g = consistency_gamma(&batch, &checker).unwrap();
    assert!((g - 1.0).abs() < 0.05, "{g}");
}

#[test]
fn zero_spread_batch_is_neutral() {
    let world = World {
        sigma0: 0.0,
        ..World::default()
    };
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let c = condition(&world, Purpose::TargetCondition, 3);
    for sampler in [Sampler::Ddim, Sampler::Ddpm] {
        let params = SfParams {
            sampler,
            ..SfParams::default()
        };
        let sf = run_sf_detailed(&p, &c, &s, &params, 9).unwrap();
        let base = run_ensemble_baseline(&p, &c, &s, &params, 9).unwrap();
        assert!(sf.log.rows.iter().all(|r| r.delta_n == Some(1.0) && r.lambda == 1.0));
        assert_eq!(sf.members, base.members);
        assert_eq!(sf.prediction, base.prediction);
    }
}

#[test]
fn source_free_matches_ensemble_when_lambda_is_one() {
    // Bounds pinned at 1 force lambda to 1 whatever delta_n is.
    let world = World::default();
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let c = condition(&world, Purpose::TargetCondition, 3);
    let params = SfParams {
        bounds: noise_align_core::LambdaBounds::new(1.0, 1.0).unwrap(),
        ..SfParams::default()
    };
    let sf = run_sf_detailed(&p, &c, &s, &params, 9).unwrap();
    let base = run_ensemble_baseline(&p, &c, &s, &params, 9).unwrap();
    assert!(sf.log.rows.iter().all(|r| r.lambda == 1.0));
    assert_eq!(sf.members, base.members);
    assert_eq!(sf.prediction, base.prediction);
}

#[test]
fn empty_masks_everywhere_abort() {
    let world = World::default();
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let c = condition(&world, Purpose::TargetCondition, 3);
    let params = SfParams {
        p_lo: 0.0,
        p_hi: 0.0,
        ..SfParams::default()
    };
    let err = run_sf_detailed(&p, &c, &s, &params, 9).unwrap_err();
    assert!(matches!(err, noise_align_core::Error::DegenerateMask));
}

#[test]
fn export_line_counts() {
    let world = World::default();
    let s = default_schedule();
    let p = AnalyticPredictor::new(world.clone(), s.clone());
    let c = condition(&world, Purpose::TargetCondition, 1);
    let run = run_sf_detailed(&p, &c, &s, &SfParams::default(), 1).unwrap();
    let mut buf = Vec::new();
    write_csv(&run.log, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 51);
    let mut buf = Vec::new();
    write_grid(&run.prediction, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 33);
}

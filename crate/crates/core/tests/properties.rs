use noise_align_core::diagnostics::{read_grid, write_grid};
use noise_align_core::{
    absrel, consistency_gamma, ddpm_step, ddpm_step_scaled, delta1, delta_n,
    direct_alignment_lambda, estimate_x0, forward_sample, lambda_step, linear_p,
    make_linear_schedule, masked_delta_n, quantile_mask, spectrum_gap, DnaState, Grid,
    LambdaBounds, Purpose, SampleState, StreamId,
};
use proptest::prelude::*;

fn grid(h: usize, w: usize, values: impl Strategy<Value = f64>) -> impl Strategy<Value = Grid> {
    prop::collection::vec(values, h * w).prop_map(move |v| Grid::new(h, w, v).unwrap())
}

fn any_grid(values: impl Strategy<Value = f64> + Clone) -> impl Strategy<Value = Grid> {
    (1usize..7, 1usize..7).prop_flat_map(move |(h, w)| grid(h, w, values.clone()))
}

/// Grids whose values come from a handful of levels, so ties are common.
fn tied_grid() -> impl Strategy<Value = Grid> {
    any_grid((0u8..4).prop_map(f64::from))
}

proptest! {
    #[test]
    fn mask_selects_ceil_p_m_smallest(v in tied_grid(), p in 0.0f64..=1.0) {
        let mask = quantile_mask(&v, p).unwrap();
        let k = (p * v.len() as f64).ceil() as usize;
        prop_assert_eq!(mask.count(), k);
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v.data()[a].partial_cmp(&v.data()[b]).unwrap().then(a.cmp(&b)));
        let mut want = vec![false; v.len()];
        for &i in &order[..k] {
            want[i] = true;
        }
        prop_assert_eq!(mask.bits(), &want[..]);
    }

    #[test]
    fn mask_grows_with_p(v in tied_grid(), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let (lo, hi) = (p.min(q), p.max(q));
        prop_assert!(quantile_mask(&v, lo).unwrap().is_subset_of(&quantile_mask(&v, hi).unwrap()));
    }

    #[test]
    fn masked_ratio_is_scale_invariant(
        eps in any_grid(-3.0f64..3.0),
        p in 0.05f64..=1.0,
        k in 1e-3f64..1e3,
    ) {
        prop_assume!(eps.rms() > 1e-6);
        let mask = quantile_mask(&eps.map(f64::abs), p).unwrap();
        let a = masked_delta_n(&eps, &mask).unwrap();
        let b = masked_delta_n(&eps.scale(k), &mask).unwrap();
        prop_assert!(a >= 0.0 && a.is_finite());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn gamma_is_scale_invariant(
        batch in prop::collection::vec(grid(4, 5, -2.0f64..2.0), 2..5),
        p in 0.05f64..=1.0,
        k in 1e-2f64..1e2,
    ) {
        let mask = quantile_mask(&batch[0].map(f64::abs), p).unwrap();
        let scaled: Vec<Grid> = batch.iter().map(|g| g.scale(k)).collect();
        let a = consistency_gamma(&batch, &mask).unwrap();
        let b = consistency_gamma(&scaled, &mask).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn p_schedule_is_non_increasing_in_t(
        t in 1usize..1000,
        lo in 0.0f64..=0.5,
        span in 0.0f64..=0.5,
    ) {
        prop_assert!(linear_p(t + 1, 1000, lo, lo + span) <= linear_p(t, 1000, lo, lo + span));
    }

    #[test]
    fn spectrum_gap_is_symmetric(a in grid(4, 6, -5.0f64..5.0), b in grid(4, 6, -5.0f64..5.0)) {
        let ab = spectrum_gap(&a, &b).unwrap();
        let ba = spectrum_gap(&b, &a).unwrap();
        prop_assert_eq!(ab.amp_gap, ba.amp_gap);
        prop_assert_eq!(ab.phase_gap, ba.phase_gap);
        prop_assert!(ab.amp_gap >= 0.0);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&ab.phase_gap));
    }

    #[test]
    fn scaling_leaves_phase_alone(a in grid(5, 4, -5.0f64..5.0), s in 0.01f64..100.0) {
        prop_assert!(spectrum_gap(&a, &a.scale(s)).unwrap().phase_gap < 1e-9);
    }

    #[test]
    fn metrics_are_scale_invariant(
        pred in grid(3, 3, 0.1f64..5.0),
        gt in grid(3, 3, 0.1f64..5.0),
        k in 0.01f64..100.0,
    ) {
        let (a, d) = (absrel(&pred, &gt).unwrap(), delta1(&pred, &gt).unwrap());
        prop_assert!(a >= 0.0 && (0.0..=1.0).contains(&d));
        prop_assert!((absrel(&pred.scale(k), &gt.scale(k)).unwrap() - a).abs() < 1e-12);
        // Ratios move by an ulp under scaling; only pixels exactly at the threshold could flip.
        let dk = delta1(&pred.scale(k), &gt.scale(k)).unwrap();
        prop_assert!((dk - d).abs() < 1e-12 || pred.data().iter().zip(gt.data()).any(|(p, g)| ((p / g).max(g / p) - 1.25).abs() < 1e-12));
    }

    #[test]
    fn forward_then_estimate_is_identity(
        x0 in grid(3, 4, -3.0f64..3.0),
        eps in grid(3, 4, -3.0f64..3.0),
        t in 1usize..=1000,
    ) {
        let s = make_linear_schedule(1000, 1e-4, 0.02, 50).unwrap();
        let back = estimate_x0(&forward_sample(&x0, t, &eps, &s).unwrap(), &eps, t, &s).unwrap();
        for (a, b) in back.data().iter().zip(x0.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "t={}: {} vs {}", t, a, b);
        }
    }

    #[test]
    fn unit_lambda_is_the_plain_step(
        x in grid(3, 3, -3.0f64..3.0),
        eps in grid(3, 3, -3.0f64..3.0),
        seed in any::<u64>(),
        a in 0.1f64..10.0,
    ) {
        let s = make_linear_schedule(1000, 1e-4, 0.02, 50).unwrap();
        let state = || SampleState::new(
            x.clone(),
            Grid::zeros(3, 3),
            &s,
            StreamId::new(seed, Purpose::StepNoise, 0).rng(),
        ).unwrap();
        let scaled = ddpm_step_scaled(state(), &eps, 1.0, &s, true).unwrap();
        let plain = ddpm_step(state(), &eps, &s, true).unwrap();
        prop_assert_eq!(scaled.x, plain.x);
        let stretched = ddpm_step_scaled(state(), &eps.scale(a), a, &s, false).unwrap();
        let unit = ddpm_step_scaled(state(), &eps, 1.0, &s, false).unwrap();
        for (u, v) in stretched.x.data().iter().zip(unit.x.data()) {
            prop_assert!((u - v).abs() < 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn recurrence_tracks_adjacent_difference(deltas in prop::collection::vec(0.8f64..1.3, 1..60)) {
        let mut state = DnaState::new(LambdaBounds::UNBOUNDED);
        let mut prev = 1.0;
        for (i, &d) in deltas.iter().enumerate() {
            let (_, next) = lambda_step(state, 1000 - i, d).unwrap();
            prop_assert!((next.lambda_sum - (d - prev)).abs() < 1e-12);
            let total: f64 = next.applied.iter().map(|a| a.lambda - 1.0).sum();
            prop_assert!((next.lambda_sum - total).abs() < 1e-12);
            prev = d;
            state = next;
        }
    }

    #[test]
    fn direct_lambda_is_reciprocal(src in 0.01f64..10.0, eps in any_grid(-3.0f64..3.0)) {
        prop_assume!(eps.rms() > 1e-6);
        let product = direct_alignment_lambda(src, &eps).unwrap() * delta_n(src, &eps).unwrap();
        prop_assert!((product - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_export_round_trips(g in any_grid(-1e6f64..1e6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        let mut first = Vec::new();
        write_grid(&g, &mut first).unwrap();
        std::fs::write(&path, &first).unwrap();
        let back = read_grid(&path).unwrap();
        for (a, b) in back.data().iter().zip(g.data()) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300));
        }
        let mut second = Vec::new();
        write_grid(&back, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }
}

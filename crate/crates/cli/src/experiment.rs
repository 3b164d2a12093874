//! Experiment building blocks shared by the subcommands and the test suites.

use noise_align_core::{
    absrel, calibrate_source_stats, delta1, domain_shift, eps_along_trajectory, ground_truth,
    run_ensemble_baseline, run_sampler_plain, run_sampler_sa, run_sf_detailed, sample_condition,
    spectrum_gap, AlignMode, AnalyticPredictor, Application, ConstantPredictor, Grid,
    NoisePredictor, PSchedule, Purpose, SaOptions, SfParams, SourceStats, StreamId,
    TrajectoryLog, TrajectorySeed,
};
use rayon::prelude::*;

use crate::config::{PredictorKind, Resolved, RunConfig};
use crate::CliError;

/// A validated config with its predictor.
pub struct Setup {
    pub config: RunConfig,
    pub resolved: Resolved,
    pub predictor: Box<dyn NoisePredictor>,
    pub jobs: usize,
}

impl Setup {
    pub fn new(config: RunConfig, jobs: usize) -> Result<Self, CliError> {
        let resolved = config.resolve()?;
        let predictor: Box<dyn NoisePredictor> = match config.predictor.kind {
            PredictorKind::Analytic => Box::new(AnalyticPredictor::new(
                resolved.world.clone(),
                resolved.schedule.clone(),
            )),
            PredictorKind::Constant => Box::new(ConstantPredictor(config.predictor.value)),
        };
        Ok(Self {
            config,
            resolved,
            predictor,
            jobs,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.run.seed
    }

    /// Runs `f` over `0..n` on the configured number of workers, keeping index order.
    pub fn par_map<T: Send>(
        &self,
        n: usize,
        f: impl Fn(usize) -> Result<T, CliError> + Sync + Send,
    ) -> Result<Vec<T>, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?;
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// Which domain the conditions fed to the predictor come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Shifted,
}

/// One evaluation condition.
#[derive(Debug, Clone)]
pub struct Case {
    pub index: usize,
    /// Underlying scene, as the source domain would render it.
    pub clean: Grid,
    /// What the predictor sees.
    pub condition: Grid,
    pub gt: Grid,
}

pub fn source_conditions(setup: &Setup, n: usize) -> Vec<Grid> {
    (0..n)
        .map(|i| {
            let mut rng = StreamId::new(setup.seed(), Purpose::SourceCondition, i as u64).rng();
            sample_condition(&setup.resolved.world, &mut rng)
        })
        .collect()
}

/// Evaluation case `i`: a fresh scene, shifted with its own stream.
pub fn case(setup: &Setup, index: usize, domain: Domain) -> Case {
    let (world, seed) = (&setup.resolved.world, setup.seed());
    let clean = sample_condition(
        world,
        &mut StreamId::new(seed, Purpose::TargetCondition, index as u64).rng(),
    );
    let condition = match domain {
        Domain::Source => clean.clone(),
        Domain::Shifted => domain_shift(
            &clean,
            &setup.resolved.shift,
            &mut StreamId::new(seed, Purpose::Shift, index as u64).rng(),
        ),
    };
    let gt = ground_truth(world, &clean);
    Case {
        index,
        clean,
        condition,
        gt,
    }
}

pub fn calibrate(setup: &Setup) -> Result<SourceStats, CliError> {
    let cal = &setup.config.calibration;
    let conditions = source_conditions(setup, cal.conditions);
    Ok(calibrate_source_stats(
        &*setup.predictor,
        &conditions,
        &setup.resolved.schedule,
        setup.resolved.sampler,
        setup.seed(),
        cal.trajectories,
    )?)
}

/// What to run on each case.
#[derive(Debug, Clone)]
pub enum Setting {
    /// Single unmodified trajectory.
    Baseline,
    Sa { mode: AlignMode, stats: SourceStats },
    Sf(SfParams),
    /// The source-free batch with lambda fixed at 1.
    Ensemble(SfParams),
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Baseline => "baseline",
            Setting::Sa { mode, .. } => match mode {
                AlignMode::Dna => "sa",
                AlignMode::Direct => "sa-direct",
                AlignMode::Off => "sa-off",
            },
            Setting::Sf(_) => "sf",
            Setting::Ensemble(_) => "ensemble",
        }
    }
}

/// Predictions are clipped to this depth before scoring.
pub const MIN_EVAL_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub index: usize,
    pub prediction: Grid,
    pub gt: Grid,
    pub log: TrajectoryLog,
    pub absrel: f64,
    pub delta1: f64,
    /// Mean final variance across batch members; batch settings only.
    pub batch_variance: Option<f64>,
}

pub fn run_case(setup: &Setup, setting: &Setting, case: &Case) -> Result<TrajectoryResult, CliError> {
    let r = &setup.resolved;
    let seed = TrajectorySeed::new(setup.seed(), case.index as u64);
    let p = &*setup.predictor;
    let (prediction, mut log, batch_variance) = match setting {
        Setting::Baseline => {
            let (g, l) = run_sampler_plain(p, &case.condition, &r.schedule, seed, r.sampler)?;
            (g, l, None)
        }
        Setting::Sa { mode, stats } => {
            let options = SaOptions {
                mode: *mode,
                bounds: r.bounds,
                sampler: r.sampler,
            };
            let (g, l) = run_sampler_sa(p, &case.condition, &r.schedule, stats, seed, &options)?;
            (g, l, None)
        }
        Setting::Sf(params) => {
            let run = run_sf_detailed(p, &case.condition, &r.schedule, params, seed)?;
            (run.prediction, run.log, Some(run.final_variance))
        }
        Setting::Ensemble(params) => {
            let run = run_ensemble_baseline(p, &case.condition, &r.schedule, params, seed)?;
            (run.prediction, run.log, Some(run.final_variance))
        }
    };
    log.metadata.run_id = format!("{}-{}", setting.name(), case.index);
    log.metadata.config_hash = setup.config.hash();
    let scored = prediction.map(|v| v.max(MIN_EVAL_DEPTH));
    Ok(TrajectoryResult {
        index: case.index,
        absrel: absrel(&scored, &case.gt)?,
        delta1: delta1(&scored, &case.gt)?,
        prediction,
        gt: case.gt.clone(),
        log,
        batch_variance,
    })
}

/// Runs `setting` on the first `n` cases of `domain`.
pub fn run_setting(
    setup: &Setup,
    setting: &Setting,
    domain: Domain,
    n: usize,
) -> Result<Vec<TrajectoryResult>, CliError> {
    setup.par_map(n, |i| run_case(setup, setting, &case(setup, i, domain)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub n: usize,
    pub mean_absrel: f64,
    pub std_absrel: f64,
    pub mean_delta1: f64,
    pub std_delta1: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(results: &[TrajectoryResult]) -> MetricSummary {
    let (mean_absrel, std_absrel) = mean_std(results.iter().map(|r| r.absrel));
    let (mean_delta1, std_delta1) = mean_std(results.iter().map(|r| r.delta1));
    MetricSummary {
        n: results.len(),
        mean_absrel,
        std_absrel,
        mean_delta1,
        std_delta1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Alignment,
    MaskSchedule,
    Consistency,
    Application,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Alignment => "alignment",
            Suite::MaskSchedule => "mask_schedule",
            Suite::Consistency => "consistency",
            Suite::Application => "application",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.replace('-', "_").as_str() {
            "alignment" => Some(Suite::Alignment),
            "mask_schedule" => Some(Suite::MaskSchedule),
            "consistency" => Some(Suite::Consistency),
            "application" => Some(Suite::Application),
            _ => None,
        }
    }
}

/// Named settings a suite compares. The alignment suite needs source stats.
pub fn suite_variants(
    setup: &Setup,
    suite: Suite,
    stats: Option<&SourceStats>,
) -> Result<Vec<(String, Setting)>, CliError> {
    let sf = setup.resolved.sf.clone();
    let with = |name: &str, f: &dyn Fn(&mut SfParams)| {
        let mut p = sf.clone();
        f(&mut p);
        (name.to_string(), Setting::Sf(p))
    };
    Ok(match suite {
        Suite::Alignment => {
            let stats = stats.ok_or_else(|| {
                CliError::Other("alignment suite requires source statistics".into())
            })?;
            [AlignMode::Off, AlignMode::Direct, AlignMode::Dna]
                .into_iter()
                .map(|mode| {
                    (
                        mode.name().to_string(),
                        Setting::Sa {
                            mode,
                            stats: stats.clone(),
                        },
                    )
                })
                .collect()
        }
        Suite::MaskSchedule => {
            let mid = 0.5 * (sf.p_lo + sf.p_hi);
            vec![
                with("constant", &|p| p.p_schedule = PSchedule::Constant(mid)),
                with("larger_early", &|p| p.p_schedule = PSchedule::Reversed),
                with("larger_late", &|p| p.p_schedule = PSchedule::Linear),
            ]
        }
        Suite::Consistency => vec![
            with("gamma_off", &|p| p.consistency_scaling = false),
            with("gamma_on", &|p| p.consistency_scaling = true),
        ],
        Suite::Application => vec![
            with("global", &|p| p.application = Application::Global),
            with("masked_complement", &|p| p.application = Application::MaskedComplement),
        ],
    })
}

/// Every variant of `suite` on the same `n` cases.
pub fn ablate(
    setup: &Setup,
    suite: Suite,
    stats: Option<&SourceStats>,
    domain: Domain,
    n: usize,
) -> Result<Vec<(String, MetricSummary)>, CliError> {
    suite_variants(setup, suite, stats)?
        .into_iter()
        .map(|(name, setting)| Ok((name, summarize(&run_setting(setup, &setting, domain, n)?))))
        .collect()
}

/// Spectrum gaps at one inference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRow {
    pub step_position: usize,
    pub timestep: usize,
    /// Mean source prediction against mean shifted prediction.
    pub amp_gap: f64,
    pub phase_gap: f64,
    /// Mean source prediction against an independent mean source prediction.
    pub ref_amp_gap: f64,
    pub ref_phase_gap: f64,
}

impl SpectrumRow {
    pub fn norm_amp_gap(&self) -> f64 {
        ratio(self.amp_gap, self.ref_amp_gap)
    }

    pub fn norm_phase_gap(&self) -> f64 {
        ratio(self.phase_gap, self.ref_phase_gap)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Per-step spectrum comparison of source and shifted noise predictions.
///
/// For pair `j` with scene `c_j`: trajectory S follows `c_j` from latent `2j`;
/// trajectory R follows `c_j` from latent `2j + 1`; D is the prediction for the
/// shifted `c_j` on R's states. Each of S, R and D is averaged over pairs, then
/// the domain gap is `gap(S, D)` and the reference gap `gap(S, R)`. D equals R
/// under the identity shift, so both normalised gaps are then exactly 1.
pub fn diagnose(setup: &Setup, pairs: usize) -> Result<Vec<SpectrumRow>, CliError> {
    let r = &setup.resolved;
    let p = &*setup.predictor;
    let seed = setup.seed();
    let per_pair = setup.par_map(pairs, |j| {
        let c = case(setup, j, Domain::Shifted);
        let (s, _) = eps_along_trajectory(
            p,
            &c.clean,
            None,
            &r.schedule,
            TrajectorySeed::new(seed, 2 * j as u64),
            r.sampler,
        )?;
        let (rr, d) = eps_along_trajectory(
            p,
            &c.clean,
            Some(&c.condition),
            &r.schedule,
            TrajectorySeed::new(seed, 2 * j as u64 + 1),
            r.sampler,
        )?;
        Ok((s, rr, d))
    })?;
    type Triple = (Vec<Grid>, Vec<Grid>, Vec<Grid>);
    let mean_of = |pick: &dyn Fn(&Triple) -> &Grid| {
        let grids: Vec<Grid> = per_pair.iter().map(|t| pick(t).clone()).collect();
        Grid::mean_of(&grids)
    };
    r.schedule
        .step_indices()
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let s = mean_of(&|t| &t.0[i])?;
            let rr = mean_of(&|t| &t.1[i])?;
            let d = mean_of(&|t| &t.2[i])?;
            let dom = spectrum_gap(&s, &d)?;
            let reference = spectrum_gap(&s, &rr)?;
            Ok(SpectrumRow {
                step_position: i,
                timestep: t,
                amp_gap: dom.amp_gap,
                phase_gap: dom.phase_gap,
                ref_amp_gap: reference.amp_gap,
                ref_phase_gap: reference.phase_gap,
            })
        })
        .collect()
}

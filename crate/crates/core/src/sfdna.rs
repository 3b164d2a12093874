//! Source-free domain noise alignment.
//!
//! Without source statistics, the low-variance region of a batch of x0
//! estimates stands in for the source domain. Each step:
//! predict B epsilons, estimate B x0, take the per-pixel batch variance,
//! select the `p(t)` lowest-variance pixels, and feed
//! `rms(eps[mask]) / rms(eps)` into the same lambda recurrence as the
//! source-available sampler.

use crate::diagnostics::{StepRecord, TrajectoryLog};
use crate::dna::{lambda_step, DnaState, LambdaBounds, TrajectorySeed};
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::predictor::{predict_checked, NoisePredictor};
use crate::rng::{Purpose, StreamId};
use crate::schedule::{estimate_x0, NoiseSchedule, SampleState, Sampler};

/// Where the scaled step is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Application {
    /// Every pixel.
    Global,
    /// Only the low-confidence pixels outside the mask.
    #[default]
    MaskedComplement,
}

/// How the mask fraction moves over the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PSchedule {
    /// `p_lo` at the first (noisiest) step rising to `p_hi` at the last.
    #[default]
    Linear,
    /// `p_hi` early falling to `p_lo` late.
    Reversed,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfParams {
    pub batch: usize,
    pub p_lo: f64,
    pub p_hi: f64,
    pub p_schedule: PSchedule,
    pub consistency_scaling: bool,
    pub application: Application,
    /// Members share the injected step noise and differ only in their
    /// initial latent.
    pub shared_step_noise: bool,
    pub aggregate: Aggregate,
    pub bounds: LambdaBounds,
    pub sampler: Sampler,
    /// Keep per-step variance maps and masks in [`SfRun::maps`].
    pub record_maps: bool,
}

impl Default for SfParams {
    fn default() -> Self {
        Self {
            batch: 4,
            p_lo: 0.3,
            p_hi: 0.7,
            p_schedule: PSchedule::Linear,
            consistency_scaling: true,
            application: Application::MaskedComplement,
            shared_step_noise: true,
            aggregate: Aggregate::Mean,
            bounds: LambdaBounds::default(),
            sampler: Sampler::Ddim,
            record_maps: false,
        }
    }
}

impl SfParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::InsufficientBatch(self.batch));
        }
        if !(0.0..=1.0).contains(&self.p_lo) {
            return Err(Error::param("sf.p_lo", format!("{} is not in [0, 1]", self.p_lo)));
        }
        if !(0.0..=1.0).contains(&self.p_hi) || self.p_hi < self.p_lo {
            return Err(Error::param(
                "sf.p_hi",
                format!("{} must be in [p_lo, 1] with p_lo = {}", self.p_hi, self.p_lo),
            ));
        }
        if let PSchedule::Constant(p) = self.p_schedule {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param("sf.p_constant", format!("{p} is not in [0, 1]")));
            }
        }
        if !(self.bounds.min <= 1.0 && self.bounds.max >= 1.0) {
            return Err(Error::param("dna.lambda_min", "bounds must bracket 1"));
        }
        Ok(())
    }

    /// Mask fraction at timestep `t` of a `timesteps`-long chain.
    pub fn p_at(&self, t: usize, timesteps: usize) -> f64 {
        match self.p_schedule {
            PSchedule::Linear => linear_p(t, timesteps, self.p_lo, self.p_hi),
            PSchedule::Reversed => linear_p(t, timesteps, self.p_hi, self.p_lo),
            PSchedule::Constant(p) => p,
        }
    }
}

/// Per-pixel population variance across the batch.
pub fn batch_variance_map(batch: &[Grid]) -> Result<Grid> {
    if batch.len() < 2 {
        return Err(Error::InsufficientBatch(batch.len()));
    }
    let first = &batch[0];
    for g in &batch[1..] {
        first.ensure_same_shape(g)?;
    }
    let mean = Grid::mean_of(batch)?;
    let n = batch.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for g in batch {
        for ((a, &x), &m) in acc.iter_mut().zip(g.data()).zip(mean.data()) {
            *a += (x - m) * (x - m);
        }
    }
    Grid::new(first.height(), first.width(), acc.into_iter().map(|a| a / n).collect())
}

/// `p_lo + (p_hi - p_lo) * (T - t) / (T - 1)`; `p_hi` when `T == 1`.
pub fn linear_p(t: usize, timesteps: usize, p_lo: f64, p_hi: f64) -> f64 {
    if timesteps <= 1 {
        return p_hi;
    }
    let t = t.clamp(1, timesteps);
    p_lo + (p_hi - p_lo) * (timesteps - t) as f64 / (timesteps - 1) as f64
}

/// Number of pixels a mask of fraction `p` over `m` pixels selects.
pub fn mask_size(p: f64, m: usize) -> usize {
    let k = (p.clamp(0.0, 1.0) * m as f64).ceil() as usize;
    k.min(m)
}

/// The `ceil(p * M)` lowest-variance pixels, ties broken by row-major index.
pub fn quantile_mask(variance_map: &Grid, p: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param("p", format!("{p} is not in [0, 1]")));
    }
    let data = variance_map.data();
    let k = mask_size(p, data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[a].total_cmp(&data[b]).then(a.cmp(&b)));
    let mut bits = vec![false; data.len()];
    for &i in &order[..k] {
        bits[i] = true;
    }
    Mask::new(variance_map.height(), variance_map.width(), bits)
}

/// `rms(eps[mask]) / rms(eps)`.
pub fn masked_delta_n(eps: &Grid, mask: &Mask) -> Result<f64> {
    if eps.shape() != mask.shape() {
        return Err(Error::Dimension {
            expected: eps.shape(),
            actual: mask.shape(),
        });
    }
    let count = mask.count();
    if count == 0 {
        return Err(Error::DegenerateMask);
    }
    let full = eps.rms();
    if full == 0.0 {
        return Err(Error::DegenerateInput("noise prediction has zero RMS".into()));
    }
    let sum_sq: f64 = eps
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|(&e, _)| e * e)
        .sum();
    Ok((sum_sq / count as f64).sqrt() / full)
}

/// Row and column ranges of the four quadrants, split at `(ceil(H/2), ceil(W/2))`.
fn quadrants(height: usize, width: usize) -> [(std::ops::Range<usize>, std::ops::Range<usize>); 4] {
    let (h2, w2) = (height.div_ceil(2), width.div_ceil(2));
    [
        (0..h2, 0..w2),
        (0..h2, w2..width),
        (h2..height, 0..w2),
        (h2..height, w2..width),
    ]
}

/// Ratio of batch disagreement inside the mask to disagreement overall.
///
/// Per quadrant, the mean over member pairs of the RMS difference. The
/// numerator weights quadrants by masked-pixel count, the denominator by
/// quadrant size, so a full mask gives exactly 1. Returns 1 when the
/// denominator is below `1e-9` or the mask is empty.
pub fn consistency_gamma(eps_batch: &[Grid], mask: &Mask) -> Result<f64> {
    if eps_batch.len() < 2 {
        return Err(Error::InsufficientBatch(eps_batch.len()));
    }
    let (h, w) = eps_batch[0].shape();
    for g in &eps_batch[1..] {
        eps_batch[0].ensure_same_shape(g)?;
    }
    if mask.shape() != (h, w) {
        return Err(Error::Dimension {
            expected: (h, w),
            actual: mask.shape(),
        });
    }
    let (mut num, mut num_w, mut den, mut den_w) = (0.0, 0.0, 0.0, 0.0);
    for (rows, cols) in quadrants(h, w) {
        let size = rows.len() * cols.len();
        if size == 0 {
            continue;
        }
        let mut dist = 0.0;
        let mut pairs = 0usize;
        for i in 0..eps_batch.len() {
            for j in i + 1..eps_batch.len() {
                let (a, b) = (eps_batch[i].data(), eps_batch[j].data());
                let mut ss = 0.0;
                for r in rows.clone() {
                    for c in cols.clone() {
                        let d = a[r * w + c] - b[r * w + c];
                        ss += d * d;
                    }
                }
                dist += (ss / size as f64).sqrt();
                pairs += 1;
            }
        }
        let d = dist / pairs as f64;
        let masked = rows
            .clone()
            .flat_map(|r| cols.clone().map(move |c| (r, c)))
            .filter(|&(r, c)| mask.get(r, c))
            .count() as f64;
        num += masked * d;
        num_w += masked;
        den += size as f64 * d;
        den_w += size as f64;
    }
    let den = den / den_w;
    if den < 1e-9 || num_w == 0.0 {
        return Ok(1.0);
    }
    Ok((num / num_w) / den)
}

/// Shrinks the deviation of `lambda` from 1 by `gamma`.
pub fn apply_gamma(lambda: f64, gamma: f64) -> f64 {
    if gamma > 0.0 && gamma.is_finite() {
        1.0 + (lambda - 1.0) / gamma
    } else {
        lambda
    }
}

/// Per-step variance map and mask, kept when `record_maps` is set.
#[derive(Debug, Clone)]
pub struct StepMaps {
    pub timestep: usize,
    pub variance: Grid,
    pub mask: Mask,
}

/// Everything a source-free (or ensemble) run produces.
#[derive(Debug, Clone)]
pub struct SfRun {
    pub prediction: Grid,
    pub members: Vec<Grid>,
    pub log: TrajectoryLog,
    /// Mean per-pixel variance across the final member outputs.
    pub final_variance: f64,
    pub maps: Vec<StepMaps>,
}

/// Batch members' initial states. Member `b` of trajectory `i` draws its
/// latent from index `i * B + b`. Step noise comes from index `i` when shared,
/// otherwise from `i * B + b`.
fn member_states(
    condition: &Grid,
    schedule: &NoiseSchedule,
    seed: TrajectorySeed,
    params: &SfParams,
) -> Vec<SampleState> {
    let b = params.batch as u64;
    (0..b)
        .map(|m| {
            let idx = seed.index * b + m;
            let mut latent = StreamId::new(seed.seed, Purpose::Latent, idx).rng();
            let noise_idx = if params.shared_step_noise { seed.index } else { idx };
            let step_noise = StreamId::new(seed.seed, Purpose::StepNoise, noise_idx).rng();
            SampleState::from_noise(condition.clone(), schedule, &mut latent, step_noise)
        })
        .collect()
}

/// Source-free sampling; returns the aggregated prediction and the step log.
pub fn run_sampler_sf<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Grid,
    schedule: &NoiseSchedule,
    params: &SfParams,
    seed: impl Into<TrajectorySeed>,
) -> Result<(Grid, TrajectoryLog)> {
    let run = run_sf_detailed(predictor, condition, schedule, params, seed)?;
    Ok((run.prediction, run.log))
}

/// The B-member ensemble with lambda fixed at 1; same member streams as
/// [`run_sampler_sf`].
pub fn run_ensemble_baseline<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Grid,
    schedule: &NoiseSchedule,
    params: &SfParams,
    seed: impl Into<TrajectorySeed>,
) -> Result<SfRun> {
    run_batch(predictor, condition, schedule, params, seed.into(), false)
}

pub fn run_sf_detailed<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Grid,
    schedule: &NoiseSchedule,
    params: &SfParams,
    seed: impl Into<TrajectorySeed>,
) -> Result<SfRun> {
    run_batch(predictor, condition, schedule, params, seed.into(), true)
}

fn run_batch<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Grid,
    schedule: &NoiseSchedule,
    params: &SfParams,
    seed: TrajectorySeed,
    align: bool,
) -> Result<SfRun> {
    params.validate()?;
    let mode = if align { "sf" } else { "ensemble" };
    let mut log = TrajectoryLog::new(mode, seed.seed);
    let mut states = member_states(condition, schedule, seed, params);
    let mut dna = DnaState::new(params.bounds);
    let mut maps = Vec::new();
    let mut degenerate_steps = 0usize;
    let (h, w) = condition.shape();

    while !states[0].is_done() {
        let t = states[0].t;
        let position = states[0].position;
        let mut eps = Vec::with_capacity(states.len());
        let mut x0 = Vec::with_capacity(states.len());
        for s in &states {
            let e = predict_checked(predictor, &s.x, t, &s.condition)?;
            x0.push(estimate_x0(&s.x, &e, t, schedule)?);
            eps.push(e);
        }
        let variance = batch_variance_map(&x0)?;
        let p = params.p_at(t, schedule.timesteps());
        let mask = quantile_mask(&variance, p)?;

        // A batch that agrees everywhere (up to rounding) has no low-confidence
        // region, so the mask stands for the whole grid. An empty mask carries
        // no statistics. Both steps are neutral.
        let scale = x0.iter().map(|g| g.rms().powi(2)).sum::<f64>() / x0.len() as f64;
        let no_spread = variance.max() <= 1e-18 * scale.max(1.0);
        let empty = mask.count() == 0;
        if empty {
            degenerate_steps += 1;
        }
        let degenerate = empty || no_spread;
        let delta = if degenerate {
            1.0
        } else {
            let mut sum = 0.0;
            for e in &eps {
                sum += masked_delta_n(e, &mask)?;
            }
            sum / eps.len() as f64
        };

        let (mut lambda, mut gamma, mut lambda_sum) = (1.0, None, None);
        if align {
            let (l, next) = lambda_step(dna, t, delta)?;
            dna = next;
            lambda = l;
            lambda_sum = Some(dna.lambda_sum);
            if params.consistency_scaling && !degenerate {
                let g = consistency_gamma(&eps, &mask)?;
                lambda = params.bounds.clamp(apply_gamma(lambda, g));
                gamma = Some(g);
            }
        }

        log.push(StepRecord {
            step_position: position,
            timestep: t,
            delta_n: Some(delta),
            lambda,
            lambda_sum,
            target_rms: Some(eps.iter().map(Grid::rms).sum::<f64>() / eps.len() as f64),
            source_rms: None,
            p: Some(p),
            gamma,
            mask_fraction: Some(mask.fraction()),
            mean_variance: Some(variance.mean()),
        });

        let divisor = match params.application {
            Application::Global => None,
            Application::MaskedComplement => Some(Grid::from_fn(h, w, |r, c| {
                if mask.get(r, c) {
                    1.0
                } else {
                    lambda
                }
            })),
        };
        if params.record_maps {
            maps.push(StepMaps {
                timestep: t,
                variance,
                mask,
            });
        }
        states = states
            .into_iter()
            .zip(&eps)
            .map(|(s, e)| match &divisor {
                None => params.sampler.step_scaled(s, e, lambda, schedule),
                Some(d) => params
                    .sampler
                    .step_scaled(s, &e.zip_map(d, |e, l| e / l), 1.0, schedule),
            })
            .collect::<Result<_>>()?;
    }

    if align && degenerate_steps == log.len() {
        return Err(Error::DegenerateMask);
    }
    let members: Vec<Grid> = states.into_iter().map(|s| s.x).collect();
    let prediction = match params.aggregate {
        Aggregate::Mean => Grid::mean_of(&members)?,
        Aggregate::Median => Grid::median_of(&members)?,
    };
    let final_variance = batch_variance_map(&members)?.mean();
    Ok(SfRun {
        prediction,
        members,
        log,
        final_variance,
        maps,
    })
}

//! Source-available domain noise alignment.
//!
//! Source statistics are calibrated offline as the per-step RMS of the
//! predicted noise over source-domain trajectories. At test time the ratio
//! `delta_n(t) = source_rms(t) / rms(eps_target)` drives a running recurrence
//! whose output `lambda_t` divides the predicted noise inside the reverse step.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::diagnostics::{format_sig, StepRecord, TrajectoryLog};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::predictor::{predict_checked, NoisePredictor};
use crate::rng::{Purpose, StreamId};
use crate::schedule::{NoiseSchedule, SampleState, Sampler};

/// Per-step RMS of source-domain noise predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStats {
    pub per_step_rms: BTreeMap<usize, f64>,
    pub sample_count: usize,
}

impl SourceStats {
    pub fn rms_at(&self, t: usize) -> Result<f64> {
        self.per_step_rms
            .get(&t)
            .copied()
            .ok_or_else(|| Error::Calibration(format!("no source statistics for timestep {t}")))
    }

    /// Checks that every inference step is covered with a positive value.
    pub fn validate_for(&self, schedule: &NoiseSchedule) -> Result<()> {
        for &t in schedule.step_indices() {
            let v = self.rms_at(t)?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Calibration(format!(
                    "source RMS at timestep {t} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// CSV with columns `timestep,rms,sample_count`, in sampling order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestep,rms,sample_count\n");
        for (t, v) in self.per_step_rms.iter().rev() {
            let _ = writeln!(out, "{t},{},{}", format_sig(*v), self.sample_count);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, why: &str| Error::Calibration(format!("stats line {line}: {why}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "timestep,rms,sample_count")) => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut per_step_rms = BTreeMap::new();
        let mut sample_count = None;
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            let [t, v, n] = fields.as_slice() else {
                return Err(bad(i + 1, "expected three fields"));
            };
            let t: usize = t.parse().map_err(|_| bad(i + 1, "bad timestep"))?;
            let v: f64 = v.parse().map_err(|_| bad(i + 1, "bad rms"))?;
            let n: usize = n.parse().map_err(|_| bad(i + 1, "bad sample_count"))?;
            if sample_count.is_some_and(|c| c != n) {
                return Err(bad(i + 1, "inconsistent sample_count"));
            }
            sample_count = Some(n);
            per_step_rms.insert(t, v);
        }
        Ok(Self {
            per_step_rms,
            sample_count: sample_count.ok_or_else(|| bad(2, "no rows"))?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Seed plus trajectory index; together they address every random stream a
/// trajectory uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectorySeed {
    pub seed: u64,
    pub index: u64,
}

impl TrajectorySeed {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn stream(self, purpose: Purpose) -> StreamId {
        StreamId::new(self.seed, purpose, self.index)
    }

    /// Initial state from this trajectory's latent stream.
    pub fn initial_state(self, condition: Grid, schedule: &NoiseSchedule) -> SampleState {
        let mut latent = self.stream(Purpose::Latent).rng();
        SampleState::from_noise(
            condition,
            schedule,
            &mut latent,
            self.stream(Purpose::StepNoise).rng(),
        )
    }
}

impl From<u64> for TrajectorySeed {
    fn from(seed: u64) -> Self {
        Self { seed, index: 0 }
    }
}

/// Unmodified sampling from pure noise; the log carries only the target RMS.
pub fn run_sampler_plain<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Grid,
    schedule: &NoiseSchedule,
    seed: impl Into<TrajectorySeed>,
    sampler: Sampler,
) -> Result<(Grid, TrajectoryLog)> {
    let seed = seed.into();
    let mut log = TrajectoryLog::new("baseline", seed.seed);
    let mut state = seed.initial_state(condition.clone(), schedule);
    while !state.is_done() {
        let eps = predict_checked(predictor, &state.x, state.t, &state.condition)?;
        log.push(StepRecord {
            step_position: state.position,
            timestep: state.t,
            lambda: 1.0,
            target_rms: Some(eps.rms()),
            ..StepRecord::default()
        });
        state = sampler.step(state, &eps, schedule)?;
    }
    Ok((state.x, log))
}

/// Noise predictions along an unmodified trajectory, one per inference step.
///
/// With `probe`, each step also predicts on the same state under the probe
/// condition; the trajectory itself always follows `condition`.
pub fn eps_along_trajectory<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Grid,
    probe: Option<&Grid>,
    schedule: &NoiseSchedule,
    seed: impl Into<TrajectorySeed>,
    sampler: Sampler,
) -> Result<(Vec<Grid>, Vec<Grid>)> {
    let mut state = seed.into().initial_state(condition.clone(), schedule);
    let (mut own, mut probed) = (Vec::new(), Vec::new());
    while !state.is_done() {
        let eps = predict_checked(predictor, &state.x, state.t, &state.condition)?;
        if let Some(c) = probe {
            probed.push(predict_checked(predictor, &state.x, state.t, c)?);
        }
        state = sampler.step(state, &eps, schedule)?;
        own.push(eps);
    }
    Ok((own, probed))
}

/// Runs `n_trajectories` unmodified trajectories per source condition and
/// averages the RMS of the predicted noise at every inference step.
///
/// Trajectory `j` of condition `i` uses stream index `i * n_trajectories + j`.
pub fn calibrate_source_stats<P: NoisePredictor + ?Sized>(
    predictor: &P,
    source_conditions: &[Grid],
    schedule: &NoiseSchedule,
    sampler: Sampler,
    seed: u64,
    n_trajectories: usize,
) -> Result<SourceStats> {
    if source_conditions.is_empty() {
        return Err(Error::Calibration("no source conditions".into()));
    }
    if n_trajectories == 0 {
        return Err(Error::Calibration("n_trajectories must be positive".into()));
    }
    let steps = schedule.step_indices();
    let mut sums = vec![0.0; steps.len()];
    for (i, condition) in source_conditions.iter().enumerate() {
        for j in 0..n_trajectories {
            let index = (i * n_trajectories + j) as u64;
            let mut state =
                TrajectorySeed::new(seed, index).initial_state(condition.clone(), schedule);
            for sum in sums.iter_mut() {
                let eps = predict_checked(predictor, &state.x, state.t, &state.condition)?;
                *sum += eps.rms();
                state = sampler.step(state, &eps, schedule)?;
            }
        }
    }
    let count = source_conditions.len() * n_trajectories;
    Ok(SourceStats {
        per_step_rms: steps
            .iter()
            .zip(sums)
            .map(|(&t, s)| (t, s / count as f64))
            .collect(),
        sample_count: count,
    })
}

/// `source_rms / rms(eps_target)`.
pub fn delta_n(source_rms: f64, eps_target: &Grid) -> Result<f64> {
    if !(source_rms > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "source RMS must be positive, got {source_rms}"
        )));
    }
    let target = eps_target.rms();
    if target == 0.0 {
        return Err(Error::DegenerateInput("target noise has zero RMS".into()));
    }
    Ok(source_rms / target)
}

/// The lambda that maps the target RMS exactly onto the source RMS; `1 / delta_n`.
pub fn direct_alignment_lambda(source_rms: f64, eps_target: &Grid) -> Result<f64> {
    if !(source_rms > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "source RMS must be positive, got {source_rms}"
        )));
    }
    let target = eps_target.rms();
    if target == 0.0 {
        return Err(Error::DegenerateInput("target noise has zero RMS".into()));
    }
    Ok(target / source_rms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaBounds {
    pub min: f64,
    pub max: f64,
}

impl LambdaBounds {
    pub const UNBOUNDED: LambdaBounds = LambdaBounds {
        min: f64::NEG_INFINITY,
        max: f64::INFINITY,
    };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min <= 1.0 && max >= 1.0 && max.is_finite()) {
            return Err(Error::param(
                "dna.lambda_min",
                format!("bounds [{min}, {max}] must satisfy 0 < min <= 1 <= max"),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn clamp(self, lambda: f64) -> f64 {
        lambda.clamp(self.min, self.max)
    }
}

impl Default for LambdaBounds {
    fn default() -> Self {
        Self { min: 0.5, max: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedLambda {
    pub timestep: usize,
    pub delta_n: f64,
    pub lambda: f64,
}

/// Running state of the lambda recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct DnaState {
    /// Sum of `lambda - 1` over the steps processed so far.
    pub lambda_sum: f64,
    pub prev_delta_n: f64,
    pub applied: Vec<AppliedLambda>,
    pub bounds: LambdaBounds,
}

impl DnaState {
    pub fn new(bounds: LambdaBounds) -> Self {
        Self {
            lambda_sum: 0.0,
            prev_delta_n: 1.0,
            applied: Vec::new(),
            bounds,
        }
    }
}

impl Default for DnaState {
    fn default() -> Self {
        Self::new(LambdaBounds::default())
    }
}

/// One step of `lambda_t = delta_n(t) - delta_n(t+1) + 1 - lambda_sum`,
/// clamped before it is used or accumulated.
pub fn lambda_step(mut state: DnaState, timestep: usize, delta_n_t: f64) -> Result<(f64, DnaState)> {
    if !(delta_n_t > 0.0) || !delta_n_t.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "delta_n must be positive and finite, got {delta_n_t}"
        )));
    }
    let raw = delta_n_t - state.prev_delta_n + 1.0 - state.lambda_sum;
    let lambda = state.bounds.clamp(raw);
    state.lambda_sum += lambda - 1.0;
    state.prev_delta_n = delta_n_t;
    state.applied.push(AppliedLambda {
        timestep,
        delta_n: delta_n_t,
        lambda,
    });
    Ok((lambda, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMode {
    #[default]
    Dna,
    Direct,
    Off,
}

impl AlignMode {
    pub fn name(self) -> &'static str {
        match self {
            AlignMode::Dna => "dna",
            AlignMode::Direct => "direct",
            AlignMode::Off => "off",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SaOptions {
    pub mode: AlignMode,
    pub bounds: LambdaBounds,
    pub sampler: Sampler,
}

/// Full source-available sampling loop from pure noise. The final sample is
/// the dense prediction.
pub fn run_sampler_sa<P: NoisePredictor + ?Sized>(
    predictor: &P,
    condition: &Grid,
    schedule: &NoiseSchedule,
    stats: &SourceStats,
    seed: impl Into<TrajectorySeed>,
    options: &SaOptions,
) -> Result<(Grid, TrajectoryLog)> {
    stats.validate_for(schedule)?;
    let seed = seed.into();
    let mut log = TrajectoryLog::new(options.mode.name(), seed.seed);
    let mut state = seed.initial_state(condition.clone(), schedule);
    let mut dna = DnaState::new(options.bounds);
    while !state.is_done() {
        let t = state.t;
        let eps = predict_checked(predictor, &state.x, t, &state.condition)?;
        let source_rms = stats.rms_at(t)?;
        let target_rms = eps.rms();
        let (delta, lambda) = match options.mode {
            AlignMode::Off => (delta_n(source_rms, &eps).ok(), 1.0),
            AlignMode::Direct => (
                Some(delta_n(source_rms, &eps)?),
                direct_alignment_lambda(source_rms, &eps)?,
            ),
            AlignMode::Dna => {
                let d = delta_n(source_rms, &eps)?;
                let (lambda, next) = lambda_step(dna, t, d)?;
                dna = next;
                (Some(d), lambda)
            }
        };
        log.push(StepRecord {
            step_position: state.position,
            timestep: t,
            delta_n: delta,
            lambda,
            lambda_sum: (options.mode == AlignMode::Dna).then_some(dna.lambda_sum),
            target_rms: Some(target_rms),
            source_rms: Some(source_rms),
            ..StepRecord::default()
        });
        state = options.sampler.step_scaled(state, &eps, lambda, schedule)?;
    }
    Ok((state.x, log))
}

//! Declarative run configuration.

use std::path::{Path, PathBuf};

use noise_align_core::{
    make_linear_schedule, AlignMode, Aggregate, Application, LambdaBounds, NoiseSchedule,
    PSchedule, Sampler, SfParams, ShiftParams, StepVariance, World,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub inference_steps: usize,
    pub sampler: SamplerKind,
    pub variance: VarianceKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            inference_steps: 50,
            sampler: SamplerKind::Ddim,
            variance: VarianceKind::Beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Ddim,
    Ddpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    Beta,
    BetaTilde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub height: usize,
    pub width: usize,
    pub a: f64,
    pub b: f64,
    pub sigma0: f64,
    pub dark_spread: f64,
    pub smoothing_radius: usize,
    pub coarse_cells: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let w = World::default();
        Self {
            height: w.height,
            width: w.width,
            a: w.a,
            b: w.b,
            sigma0: w.sigma0,
            dark_spread: w.dark_spread,
            smoothing_radius: w.smoothing_radius,
            coarse_cells: w.coarse_cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub gamma: f64,
    pub gain: f64,
    pub offset: f64,
    pub noise_std: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        let s = ShiftParams::default();
        Self {
            gamma: s.gamma,
            gain: s.gain,
            offset: s.offset,
            noise_std: s.noise_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    /// Closed-form predictor of the testbed world.
    Analytic,
    /// Returns `value` everywhere; for plumbing checks.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub value: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Analytic,
            value: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    Dna,
    Direct,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnaConfig {
    pub mode: ModeKind,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for DnaConfig {
    fn default() -> Self {
        let b = LambdaBounds::default();
        Self {
            mode: ModeKind::Dna,
            lambda_min: b.min,
            lambda_max: b.max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PScheduleKind {
    Linear,
    Reversed,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApplicationKind {
    Global,
    MaskedComplement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateKind {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfConfig {
    pub batch: usize,
    pub p_lo: f64,
    pub p_hi: f64,
    pub p_schedule: PScheduleKind,
    /// Used when `p_schedule = "constant"`.
    pub p_constant: f64,
    pub consistency_scaling: bool,
    pub application: ApplicationKind,
    pub shared_step_noise: bool,
    pub aggregate: AggregateKind,
}

impl Default for SfConfig {
    fn default() -> Self {
        let p = SfParams::default();
        Self {
            batch: p.batch,
            p_lo: p.p_lo,
            p_hi: p.p_hi,
            p_schedule: PScheduleKind::Linear,
            p_constant: 0.5,
            consistency_scaling: p.consistency_scaling,
            application: ApplicationKind::MaskedComplement,
            shared_step_noise: p.shared_step_noise,
            aggregate: AggregateKind::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Number of source conditions.
    pub conditions: usize,
    /// Trajectories per source condition.
    pub trajectories: usize,
    /// Stats file for `run-sa`; defaults to `stats.csv` in the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<PathBuf>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            conditions: 8,
            trajectories: 2,
            stats: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    pub trajectories: usize,
    pub output: PathBuf,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            seed: 0,
            trajectories: 16,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub world: WorldConfig,
    pub shift: ShiftConfig,
    pub predictor: PredictorConfig,
    pub dna: DnaConfig,
    pub sf: SfConfig,
    pub calibration: CalibrationConfig,
    pub run: RunBlock,
}

/// Validated, ready-to-use view of a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub schedule: NoiseSchedule,
    pub sampler: Sampler,
    pub world: World,
    pub shift: ShiftParams,
    pub mode: AlignMode,
    pub bounds: LambdaBounds,
    pub sf: SfParams,
}

fn field_error(block: &str, e: noise_align_core::Error) -> CliError {
    match e {
        noise_align_core::Error::Parameter { field, reason } => {
            let field = if field.contains('.') {
                field.to_string()
            } else {
                format!("{block}.{field}")
            };
            CliError::Config(format!("`{field}`: {reason}"))
        }
        other => CliError::Config(format!("[{block}]: {other}")),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every block and builds the core parameter types.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let s = &self.schedule;
        let schedule = make_linear_schedule(s.timesteps, s.beta_start, s.beta_end, s.inference_steps)
            .map_err(|e| field_error("schedule", e))?
            .with_variance(match s.variance {
                VarianceKind::Beta => StepVariance::Beta,
                VarianceKind::BetaTilde => StepVariance::BetaTilde,
            });
        let sampler = match s.sampler {
            SamplerKind::Ddim => Sampler::Ddim,
            SamplerKind::Ddpm => Sampler::Ddpm,
        };
        let w = &self.world;
        let world = World {
            height: w.height,
            width: w.width,
            a: w.a,
            b: w.b,
            sigma0: w.sigma0,
            dark_spread: w.dark_spread,
            smoothing_radius: w.smoothing_radius,
            coarse_cells: w.coarse_cells,
            seed: self.run.seed,
        };
        world.validate().map_err(|e| field_error("world", e))?;
        let shift = ShiftParams {
            gamma: self.shift.gamma,
            gain: self.shift.gain,
            offset: self.shift.offset,
            noise_std: self.shift.noise_std,
        };
        shift.validate().map_err(|e| field_error("shift", e))?;
        if !self.predictor.value.is_finite() {
            return Err(CliError::Config("`predictor.value` must be finite".into()));
        }
        let bounds = LambdaBounds::new(self.dna.lambda_min, self.dna.lambda_max)
            .map_err(|e| field_error("dna", e))?;
        let mode = match self.dna.mode {
            ModeKind::Dna => AlignMode::Dna,
            ModeKind::Direct => AlignMode::Direct,
            ModeKind::Off => AlignMode::Off,
        };
        let c = &self.sf;
        let sf = SfParams {
            batch: c.batch,
            p_lo: c.p_lo,
            p_hi: c.p_hi,
            p_schedule: match c.p_schedule {
                PScheduleKind::Linear => PSchedule::Linear,
                PScheduleKind::Reversed => PSchedule::Reversed,
                PScheduleKind::Constant => PSchedule::Constant(c.p_constant),
            },
            consistency_scaling: c.consistency_scaling,
            application: match c.application {
                ApplicationKind::Global => Application::Global,
                ApplicationKind::MaskedComplement => Application::MaskedComplement,
            },
            shared_step_noise: c.shared_step_noise,
            aggregate: match c.aggregate {
                AggregateKind::Mean => Aggregate::Mean,
                AggregateKind::Median => Aggregate::Median,
            },
            bounds,
            sampler,
            record_maps: false,
        };
        sf.validate().map_err(|e| match e {
            noise_align_core::Error::InsufficientBatch(b) => {
                CliError::Config(format!("`sf.batch`: need at least 2, got {b}"))
            }
            other => field_error("sf", other),
        })?;
        if self.calibration.conditions == 0 {
            return Err(CliError::Config("`calibration.conditions` must be positive".into()));
        }
        if self.calibration.trajectories == 0 {
            return Err(CliError::Config("`calibration.trajectories` must be positive".into()));
        }
        if self.run.trajectories == 0 {
            return Err(CliError::Config("`run.trajectories` must be positive".into()));
        }
        Ok(Resolved {
            schedule,
            sampler,
            world,
            shift,
            mode,
            bounds,
            sf,
        })
    }

    /// Digest of the canonical document, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.output = PathBuf::new();
        c.calibration.stats = None;
        digest(&c.to_toml())
    }

    /// Digest of the blocks source statistics depend on.
    pub fn calibration_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            schedule: &'a ScheduleConfig,
            world: &'a WorldConfig,
            predictor: &'a PredictorConfig,
            conditions: usize,
            trajectories: usize,
            seed: u64,
        }
        let key = Key {
            schedule: &self.schedule,
            world: &self.world,
            predictor: &self.predictor,
            conditions: self.calibration.conditions,
            trajectories: self.calibration.trajectories,
            seed: self.run.seed,
        };
        digest(&toml::to_string(&key).expect("key serializes"))
    }
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

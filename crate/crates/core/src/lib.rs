//! Diffusion sampling for dense prediction with domain noise alignment.
//!
//! A conditional diffusion model trained on one domain predicts noise with the
//! wrong magnitude when its condition comes from a shifted domain. The
//! samplers here rescale the predicted noise step by step so its statistics
//! track those seen on the source domain, either from calibrated source
//! statistics ([`dna`]) or from the low-variance region of a sample batch
//! ([`sfdna`]). [`testbed`] provides an analytic world with a closed-form
//! noise predictor to run everything against.

pub mod diagnostics;
pub mod dna;
pub mod error;
pub mod grid;
pub mod predictor;
pub mod rng;
pub mod schedule;
pub mod sfdna;
pub mod testbed;

pub use diagnostics::{absrel, delta1, spectrum_gap, SpectrumGap, StepRecord, TrajectoryLog};
pub use dna::{
    calibrate_source_stats, delta_n, direct_alignment_lambda, eps_along_trajectory, lambda_step, run_sampler_plain,
    run_sampler_sa,
    AlignMode, DnaState, LambdaBounds, SaOptions, SourceStats, TrajectorySeed,
};
pub use error::{Error, Result};
pub use grid::{Grid, Mask};
pub use predictor::{ConstantPredictor, NoisePredictor};
pub use rng::{Purpose, Stream, StreamId};
pub use schedule::{
    ddim_step_scaled, ddpm_step, ddpm_step_scaled, estimate_x0, forward_sample,
    make_linear_schedule, NoiseSchedule, SampleState, Sampler, StepVariance,
};
pub use sfdna::{
    batch_variance_map, consistency_gamma, linear_p, masked_delta_n, quantile_mask,
    run_ensemble_baseline, run_sampler_sf, run_sf_detailed, Aggregate, Application, PSchedule,
    SfParams, SfRun,
};
pub use testbed::{
    analytic_eps, domain_shift, ground_truth, sample_condition, AnalyticPredictor, ShiftParams,
    World,
};

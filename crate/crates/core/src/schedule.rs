//! Noise schedules, the forward process and the λ-scaled reverse steps.
//!
//! Timesteps are 1-based: `alpha_bar(t)` for `t in 1..=T`, with the convention
//! `alpha_bar(0) = 1` for the clean end of the chain. Inference visits the
//! strictly decreasing `step_indices`; a step from `t` to the next index `s`
//! uses the effective coefficients `alpha = alpha_bar(t) / alpha_bar(s)` and
//! `beta = 1 - alpha`, which reduce to the stored `alpha_t`, `beta_t` when
//! `s = t - 1`.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::Stream;

/// Variance of the noise injected by the ancestral (DDPM) step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepVariance {
    /// `sigma^2 = beta`.
    #[default]
    Beta,
    /// `sigma^2 = beta * (1 - alpha_bar_prev) / (1 - alpha_bar_t)`.
    BetaTilde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    step_indices: Vec<usize>,
    variance: StepVariance,
}

/// Linearly spaced betas from `beta_start` to `beta_end` over `timesteps`.
pub fn make_linear_schedule(
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    inference_steps: usize,
) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(Error::param("timesteps", "must be positive"));
    }
    if !(beta_start > 0.0 && beta_start < 1.0) {
        return Err(Error::param("beta_start", format!("{beta_start} is not in (0, 1)")));
    }
    if !(beta_end >= beta_start && beta_end < 1.0) {
        return Err(Error::param(
            "beta_end",
            format!("{beta_end} must lie in [beta_start, 1)"),
        ));
    }
    let betas = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas, inference_steps)
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, rejecting anything that breaks
    /// `0 < beta < 1` or a strictly decreasing, positive `alpha_bar`.
    pub fn from_betas(betas: Vec<f64>, inference_steps: usize) -> Result<Self> {
        let timesteps = betas.len();
        if timesteps == 0 {
            return Err(Error::param("timesteps", "must be positive"));
        }
        if inference_steps == 0 || inference_steps > timesteps {
            return Err(Error::param(
                "inference_steps",
                format!("{inference_steps} is not in 1..={timesteps}"),
            ));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(Error::param("betas", format!("beta_{} = {b} is not in (0, 1)", i + 1)));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut acc = 1.0;
        for &a in &alphas {
            let next = acc * a;
            if !(next > 0.0 && next < acc) {
                return Err(Error::param(
                    "betas",
                    format!(
                        "alpha_bar is not strictly decreasing and positive at t = {}",
                        alpha_bars.len() + 1
                    ),
                ));
            }
            acc = next;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            step_indices: spaced_indices(timesteps, inference_steps),
            variance: StepVariance::default(),
        })
    }

    pub fn with_variance(mut self, variance: StepVariance) -> Self {
        self.variance = variance;
        self
    }

    pub fn variance(&self) -> StepVariance {
        self.variance
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn inference_steps(&self) -> usize {
        self.step_indices.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn step_indices(&self) -> &[usize] {
        &self.step_indices
    }

    /// `alpha_bar(t)` with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Timestep visited after position `position`, or 0 after the last one.
    pub fn next_timestep(&self, position: usize) -> usize {
        self.step_indices.get(position + 1).copied().unwrap_or(0)
    }

    fn transition(&self, t: usize, prev: usize) -> (f64, f64) {
        if prev + 1 == t {
            (self.alphas[t - 1], self.betas[t - 1])
        } else {
            let alpha = self.alpha_bar(t) / self.alpha_bar(prev);
            (alpha, 1.0 - alpha)
        }
    }
}

fn spaced_indices(timesteps: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![timesteps];
    }
    let span = timesteps - 1;
    let denom = n - 1;
    // round(k * span / denom) in integer arithmetic
    (0..n)
        .map(|k| timesteps - (k * span + denom / 2) / denom)
        .collect()
}

/// One trajectory's position in the reverse chain.
#[derive(Debug, Clone)]
pub struct SampleState {
    pub x: Grid,
    /// Current timestep; 0 once the chain is finished.
    pub t: usize,
    /// Index into `step_indices` of the current timestep.
    pub position: usize,
    pub condition: Grid,
    pub rng: Stream,
}

impl SampleState {
    pub fn new(x: Grid, condition: Grid, schedule: &NoiseSchedule, rng: Stream) -> Result<Self> {
        x.ensure_same_shape(&condition)?;
        Ok(Self {
            x,
            t: schedule.step_indices()[0],
            position: 0,
            condition,
            rng,
        })
    }

    /// Starts from pure noise drawn from `latent`.
    pub fn from_noise(
        condition: Grid,
        schedule: &NoiseSchedule,
        latent: &mut Stream,
        step_noise: Stream,
    ) -> Self {
        let x = latent.normal_grid(condition.height(), condition.width());
        Self {
            x,
            t: schedule.step_indices()[0],
            position: 0,
            condition,
            rng: step_noise,
        }
    }

    pub fn is_done(&self) -> bool {
        self.t == 0
    }
}

/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn forward_sample(x0: &Grid, t: usize, eps: &Grid, schedule: &NoiseSchedule) -> Result<Grid> {
    x0.ensure_same_shape(eps)?;
    check_timestep(t, schedule)?;
    Ok(forward_with_alpha_bar(x0, eps, schedule.alpha_bar(t)))
}

pub(crate) fn forward_with_alpha_bar(x0: &Grid, eps: &Grid, alpha_bar: f64) -> Grid {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.zip_map(eps, |x, e| s * x + n * e)
}

/// Online estimate `(x_t - sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_bar_t)`.
pub fn estimate_x0(x_t: &Grid, eps_hat: &Grid, t: usize, schedule: &NoiseSchedule) -> Result<Grid> {
    x_t.ensure_same_shape(eps_hat)?;
    check_timestep(t, schedule)?;
    let ab = schedule.alpha_bar(t);
    if ab <= 0.0 {
        return Err(Error::Singularity {
            timestep: t,
            alpha_bar: ab,
        });
    }
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.zip_map(eps_hat, |x, e| (x - n * e) / s))
}

fn check_timestep(t: usize, schedule: &NoiseSchedule) -> Result<()> {
    if t == 0 || t > schedule.timesteps() {
        return Err(Error::param(
            "timestep",
            format!("{t} is not in 1..={}", schedule.timesteps()),
        ));
    }
    Ok(())
}

fn check_step_inputs(state: &SampleState, eps_hat: &Grid, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Scaling(lambda));
    }
    if state.is_done() {
        return Err(Error::param("timestep", "the chain has already reached t = 0"));
    }
    state.x.ensure_same_shape(eps_hat)?;
    if !eps_hat.is_finite() {
        return Err(Error::Numeric {
            timestep: state.t,
            what: "predicted epsilon".into(),
        });
    }
    Ok(())
}

/// Reverse sampler family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    /// Deterministic DDIM (eta = 0).
    #[default]
    Ddim,
    /// Ancestral DDPM; noise is injected on every step but the last.
    Ddpm,
}

impl Sampler {
    /// Advances `state` with the (already scaled) epsilon.
    pub fn step(self, state: SampleState, eps: &Grid, schedule: &NoiseSchedule) -> Result<SampleState> {
        match self {
            Sampler::Ddim => ddim_step_scaled(state, eps, 1.0, schedule),
            Sampler::Ddpm => ddpm_step_scaled(state, eps, 1.0, schedule, true),
        }
    }

    pub fn step_scaled(
        self,
        state: SampleState,
        eps: &Grid,
        lambda: f64,
        schedule: &NoiseSchedule,
    ) -> Result<SampleState> {
        match self {
            Sampler::Ddim => ddim_step_scaled(state, eps, lambda, schedule),
            Sampler::Ddpm => ddpm_step_scaled(state, eps, lambda, schedule, true),
        }
    }
}

/// Ancestral step with the predicted noise divided by `lambda`:
///
/// `mean = (x_t - beta / sqrt(1 - alpha_bar_t) * eps / lambda) / sqrt(alpha)`.
///
/// Noise is never injected on the final step.
pub fn ddpm_step_scaled(
    state: SampleState,
    eps_hat: &Grid,
    lambda: f64,
    schedule: &NoiseSchedule,
    inject_noise: bool,
) -> Result<SampleState> {
    check_step_inputs(&state, eps_hat, lambda)?;
    let scaled = eps_hat.map(|e| e / lambda);
    ddpm_kernel(state, &scaled, schedule, inject_noise)
}

/// The unmodified ancestral step.
pub fn ddpm_step(
    state: SampleState,
    eps_hat: &Grid,
    schedule: &NoiseSchedule,
    inject_noise: bool,
) -> Result<SampleState> {
    check_step_inputs(&state, eps_hat, 1.0)?;
    ddpm_kernel(state, eps_hat, schedule, inject_noise)
}

fn ddpm_kernel(
    mut state: SampleState,
    eps: &Grid,
    schedule: &NoiseSchedule,
    inject_noise: bool,
) -> Result<SampleState> {
    let t = state.t;
    let prev = schedule.next_timestep(state.position);
    let (alpha, beta) = schedule.transition(t, prev);
    let coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut x = state.x.zip_map(eps, |x, e| inv_sqrt_alpha * (x - coef * e));
    if inject_noise && prev > 0 {
        let var = match schedule.variance() {
            StepVariance::Beta => beta,
            StepVariance::BetaTilde => {
                beta * (1.0 - schedule.alpha_bar(prev)) / (1.0 - schedule.alpha_bar(t))
            }
        };
        let sigma = var.sqrt();
        let z = state.rng.normal_grid(x.height(), x.width());
        x = x.zip_map(&z, |m, z| m + sigma * z);
    }
    state.x = x;
    state.t = prev;
    state.position += 1;
    Ok(state)
}

/// Deterministic DDIM step with `eps / lambda` used in both the x0 estimate and
/// the direction term.
pub fn ddim_step_scaled(
    mut state: SampleState,
    eps_hat: &Grid,
    lambda: f64,
    schedule: &NoiseSchedule,
) -> Result<SampleState> {
    check_step_inputs(&state, eps_hat, lambda)?;
    let t = state.t;
    let prev = schedule.next_timestep(state.position);
    let (ab_t, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(prev));
    let (s_t, n_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (s_prev, n_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    state.x = state.x.zip_map(eps_hat, |x, e| {
        let e = e / lambda;
        let x0 = (x - n_t * e) / s_t;
        s_prev * x0 + n_prev * e
    });
    state.t = prev;
    state.position += 1;
    Ok(state)
}

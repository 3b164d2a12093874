//! Synthetic conditional-Gaussian dense-prediction world.
//!
//! Given a condition `c`, the target is `x0 | c ~ N(m(c), diag(s(c)^2))` with
//! `m = ground_truth(world, c)` and a per-pixel spread that grows in dark
//! regions, `s(c) = sigma0 * (1 + dark_spread * (1 - c))`. The analytic
//! predictor is the exact minimum-MSE epsilon for that model. It always uses
//! the source world's `m` and `s`, so feeding a domain-shifted condition
//! produces the biased predictions a network would give on unseen inputs.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::predictor::NoisePredictor;
use crate::rng::Stream;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub height: usize,
    pub width: usize,
    /// Affine gain of the condition to target map.
    pub a: f64,
    /// Affine offset.
    pub b: f64,
    /// Conditional spread of x0 at a fully bright pixel.
    pub sigma0: f64,
    /// Relative growth of the spread from bright (c = 1) to dark (c = 0) pixels.
    pub dark_spread: f64,
    pub smoothing_radius: usize,
    /// Cells of the coarse random lattice behind each condition.
    pub coarse_cells: usize,
    pub seed: u64,
}

impl Default for World {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            a: 1.0,
            b: 0.2,
            sigma0: 0.05,
            dark_spread: 1.0,
            smoothing_radius: 2,
            coarse_cells: 4,
            seed: 0,
        }
    }
}

impl World {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::param("world.height", "grid dimensions must be positive"));
        }
        if !(self.a != 0.0 && self.a.is_finite()) {
            return Err(Error::param("world.a", "must be finite and non-zero"));
        }
        if !self.b.is_finite() {
            return Err(Error::param("world.b", "must be finite"));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::param("world.sigma0", "must be finite and non-negative"));
        }
        if !(self.dark_spread >= 0.0 && self.dark_spread.is_finite()) {
            return Err(Error::param("world.dark_spread", "must be finite and non-negative"));
        }
        if self.coarse_cells == 0 {
            return Err(Error::param("world.coarse_cells", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftParams {
    /// Intensity exponent; above 1 darkens.
    pub gamma: f64,
    pub gain: f64,
    pub offset: f64,
    pub noise_std: f64,
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            gain: 0.6,
            offset: 0.0,
            noise_std: 0.02,
        }
    }
}

impl ShiftParams {
    pub const IDENTITY: ShiftParams = ShiftParams {
        gamma: 1.0,
        gain: 1.0,
        offset: 0.0,
        noise_std: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("shift.gamma", "must be positive"));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::param("shift.gain", "must be positive"));
        }
        if !self.offset.is_finite() {
            return Err(Error::param("shift.offset", "must be finite"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("shift.noise_std", "must be non-negative"));
        }
        Ok(())
    }
}

/// Smooth random field in [0, 1]: a coarse uniform lattice, bilinearly upsampled.
pub fn sample_condition(world: &World, rng: &mut Stream) -> Grid {
    let cells = world.coarse_cells;
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
    let coord = |i: usize, len: usize| -> (usize, f64) {
        if len == 1 {
            return (0, 0.0);
        }
        let pos = i as f64 * cells as f64 / (len - 1) as f64;
        let base = (pos.floor() as usize).min(cells - 1);
        (base, pos - base as f64)
    };
    Grid::from_fn(world.height, world.width, |r, c| {
        let (y, fy) = coord(r, world.height);
        let (x, fx) = coord(c, world.width);
        let at = |yy: usize, xx: usize| lattice[yy * n + xx];
        let v = at(y, x) * (1.0 - fy) * (1.0 - fx)
            + at(y, x + 1) * (1.0 - fy) * fx
            + at(y + 1, x) * fy * (1.0 - fx)
            + at(y + 1, x + 1) * fy * fx;
        v.clamp(0.0, 1.0)
    })
}

/// `clamp(gain * c^gamma + offset + noise, 0, 1)`. One normal draw is consumed
/// per pixel even when `noise_std` is zero.
pub fn domain_shift(condition: &Grid, shift: &ShiftParams, rng: &mut Stream) -> Grid {
    let data = condition
        .data()
        .iter()
        .map(|&c| {
            let z = rng.normal();
            (shift.gain * c.max(0.0).powf(shift.gamma) + shift.offset + shift.noise_std * z)
                .clamp(0.0, 1.0)
        })
        .collect();
    Grid::new(condition.height(), condition.width(), data).expect("shape preserved")
}

/// Box blur with edge replication.
pub fn box_blur(grid: &Grid, radius: usize) -> Grid {
    if radius == 0 {
        return grid.clone();
    }
    let (h, w) = grid.shape();
    let r = radius as isize;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    // separable: rows then columns
    let rows = Grid::from_fn(h, w, |y, x| {
        (-r..=r)
            .map(|d| grid.get(y, clamp(x as isize + d, w)))
            .sum::<f64>()
    });
    let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    Grid::from_fn(h, w, |y, x| {
        (-r..=r)
            .map(|d| rows.get(clamp(y as isize + d, h), x))
            .sum::<f64>()
            / norm
    })
}

/// Lowest value a ground-truth map may take.
pub const DEPTH_FLOOR: f64 = 0.1;

/// Toy depth map: `box_blur(a * c + b)`, shifted up so its minimum is at least
/// [`DEPTH_FLOOR`].
pub fn ground_truth(world: &World, condition: &Grid) -> Grid {
    let blurred = box_blur(&condition.map(|c| world.a * c + world.b), world.smoothing_radius);
    let lo = blurred.min();
    if lo < DEPTH_FLOOR {
        let lift = DEPTH_FLOOR - lo;
        blurred.map(|v| (v + lift).max(DEPTH_FLOOR))
    } else {
        blurred
    }
}

/// Per-pixel conditional spread of x0 given the condition.
pub fn conditional_spread(world: &World, condition: &Grid) -> Grid {
    condition.map(|c| world.sigma0 * (1.0 + world.dark_spread * (1.0 - c.clamp(0.0, 1.0))))
}

/// Exact minimum-MSE epsilon for the world's Gaussian model.
pub fn analytic_eps(
    world: &World,
    x_t: &Grid,
    t: usize,
    condition: &Grid,
    schedule: &NoiseSchedule,
) -> Result<Grid> {
    x_t.ensure_same_shape(condition)?;
    let ab = if t == 0 || t > schedule.timesteps() {
        f64::NAN
    } else {
        schedule.alpha_bar(t)
    };
    if !(ab > 0.0 && ab < 1.0) {
        return Err(Error::ScheduleBoundary {
            timestep: t,
            alpha_bar: ab,
        });
    }
    let mean = ground_truth(world, condition);
    let spread = conditional_spread(world, condition);
    Ok(posterior_eps(x_t, &mean, &spread, ab))
}

fn posterior_eps(x_t: &Grid, mean: &Grid, spread: &Grid, alpha_bar: f64) -> Grid {
    let (s, n2) = (alpha_bar.sqrt(), 1.0 - alpha_bar);
    let n = n2.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(mean.data())
        .zip(spread.data())
        .map(|((&x, &m), &sd)| {
            let v = sd * sd;
            let post_mean = (v * s * x + n2 * m) / (alpha_bar * v + n2);
            (x - s * post_mean) / n
        })
        .collect();
    Grid::new(x_t.height(), x_t.width(), data).expect("shape preserved")
}

/// [`analytic_eps`] behind the predictor interface.
#[derive(Debug, Clone)]
pub struct AnalyticPredictor {
    world: World,
    schedule: NoiseSchedule,
}

impl AnalyticPredictor {
    pub fn new(world: World, schedule: NoiseSchedule) -> Self {
        Self { world, schedule }
    }

    pub fn world(&self) -> &World {
        &self.world
    }
}

impl NoisePredictor for AnalyticPredictor {
    fn predict(&self, x_t: &Grid, t: usize, condition: &Grid) -> Result<Grid> {
        analytic_eps(&self.world, x_t, t, condition, &self.schedule)
    }
}

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::grid::Grid;

/// Bins where both magnitudes fall below this are left out of the phase average.
pub const MAGNITUDE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumGap {
    /// Mean over bins of `| |A| - |B| |`.
    pub amp_gap: f64,
    /// Mean over bins of `|wrap(arg A - arg B)|`, in radians.
    pub phase_gap: f64,
}

/// Unnormalised forward 2-D DFT, bins in natural (unshifted) order, row-major.
pub fn fft2(grid: &Grid) -> Vec<Complex64> {
    let (h, w) = grid.shape();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = grid.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
    buf
}

/// Wraps an angle into (-pi, pi].
fn wrap(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

pub fn spectrum_gap(grid_a: &Grid, grid_b: &Grid) -> Result<SpectrumGap> {
    grid_a.ensure_same_shape(grid_b)?;
    let fa = fft2(grid_a);
    let fb = fft2(grid_b);
    let mut amp = 0.0;
    let mut phase = 0.0;
    let mut phase_bins = 0usize;
    for (a, b) in fa.iter().zip(&fb) {
        let (ma, mb) = (a.norm(), b.norm());
        amp += (ma - mb).abs();
        if ma < MAGNITUDE_FLOOR && mb < MAGNITUDE_FLOOR {
            continue;
        }
        phase += wrap(a.arg() - b.arg()).abs();
        phase_bins += 1;
    }
    Ok(SpectrumGap {
        amp_gap: amp / fa.len() as f64,
        phase_gap: if phase_bins == 0 {
            0.0
        } else {
            phase / phase_bins as f64
        },
    })
}

//! Row-major 2-D grids of reals and boolean masks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param("shape", "height and width must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::param(
                "data",
                format!("expected {} values, got {}", height * width, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("data", format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn ensure_same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination; panics on shape mismatch, callers check first.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        assert_eq!(self.shape(), other.shape(), "zip_map on mismatched grids");
        Grid {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Grid {
        self.map(|v| v * k)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Root mean square over all elements.
    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pixelwise mean of equally shaped grids.
    pub fn mean_of(grids: &[Grid]) -> Result<Grid> {
        let first = grids
            .first()
            .ok_or_else(|| Error::DegenerateInput("mean of an empty grid list".into()))?;
        let mut acc = vec![0.0; first.len()];
        for g in grids {
            first.ensure_same_shape(g)?;
            for (a, v) in acc.iter_mut().zip(&g.data) {
                *a += v;
            }
        }
        let n = grids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(Grid {
            height: first.height,
            width: first.width,
            data: acc,
        })
    }

    /// Pixelwise median of equally shaped grids (mean of the middle pair for even counts).
    pub fn median_of(grids: &[Grid]) -> Result<Grid> {
        let first = grids
            .first()
            .ok_or_else(|| Error::DegenerateInput("median of an empty grid list".into()))?;
        for g in grids {
            first.ensure_same_shape(g)?;
        }
        let mut column = vec![0.0; grids.len()];
        let data = (0..first.len())
            .map(|i| {
                for (slot, g) in column.iter_mut().zip(grids) {
                    *slot = g.data[i];
                }
                column.sort_by(f64::total_cmp);
                let n = column.len();
                if n % 2 == 1 {
                    column[n / 2]
                } else {
                    0.5 * (column[n / 2 - 1] + column[n / 2])
                }
            })
            .collect();
        Ok(Grid {
            height: first.height,
            width: first.width,
            data,
        })
    }
}

/// Boolean per-pixel mask, row-major like [`Grid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::param(
                "mask",
                format!("{} bits do not fit a {height}x{width} mask", bits.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_grid(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(Grid::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Grid::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Grid::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn rms_of_constant() {
        assert_eq!(Grid::filled(3, 5, -2.0).rms(), 2.0);
    }

    #[test]
    fn median_even_and_odd() {
        let g = |v: f64| Grid::filled(1, 1, v);
        assert_eq!(Grid::median_of(&[g(3.0), g(1.0), g(2.0)]).unwrap().get(0, 0), 2.0);
        assert_eq!(Grid::median_of(&[g(4.0), g(1.0)]).unwrap().get(0, 0), 2.5);
    }
}

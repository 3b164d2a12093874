use crate::error::{Error, Result};
use crate::grid::Grid;

/// A conditional noise predictor `eps(x_t, t, c)`.
///
/// Implementations must be safe to call concurrently with disjoint inputs.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, x_t: &Grid, t: usize, condition: &Grid) -> Result<Grid>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(&self, x_t: &Grid, t: usize, condition: &Grid) -> Result<Grid> {
        (**self).predict(x_t, t, condition)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(&self, x_t: &Grid, t: usize, condition: &Grid) -> Result<Grid> {
        (**self).predict(x_t, t, condition)
    }
}

/// Always predicts a constant grid. Used as a calibration stub.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl NoisePredictor for ConstantPredictor {
    fn predict(&self, x_t: &Grid, _t: usize, _condition: &Grid) -> Result<Grid> {
        Ok(Grid::filled(x_t.height(), x_t.width(), self.0))
    }
}

/// Calls `predictor` and rejects non-finite output, tagging the timestep.
pub(crate) fn predict_checked<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x_t: &Grid,
    t: usize,
    condition: &Grid,
) -> Result<Grid> {
    let eps = predictor.predict(x_t, t, condition)?;
    x_t.ensure_same_shape(&eps)?;
    if !eps.is_finite() {
        return Err(Error::Numeric {
            timestep: t,
            what: "predictor output".into(),
        });
    }
    Ok(eps)
}

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DELTA1_THRESHOLD: f64 = 1.25;

/// Mean absolute relative error `mean(|pred - gt| / gt)`.
pub fn absrel(pred: &Grid, gt: &Grid) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    if let Some(v) = gt.data().iter().find(|&&d| d <= 0.0) {
        return Err(Error::MetricDomain(format!(
            "ground truth must be positive, found {v}"
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, d)| (a - d).abs() / d)
        .sum();
    Ok(sum / gt.len() as f64)
}

/// Fraction of pixels with `max(pred / gt, gt / pred) < 1.25`.
pub fn delta1(pred: &Grid, gt: &Grid) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    if let Some(v) = pred
        .data()
        .iter()
        .chain(gt.data())
        .find(|&&v| v <= 0.0)
    {
        return Err(Error::MetricDomain(format!(
            "delta1 needs positive values, found {v}"
        )));
    }
    let hits = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(&a, &d)| (a / d).max(d / a) < DELTA1_THRESHOLD)
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

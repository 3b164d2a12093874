//! Dense-prediction metrics, Fourier gap analysis, trajectory logs and file export.

mod export;
mod log;
mod metrics;
mod spectrum;

pub use export::{export_csv, export_grid, format_sig, read_grid, write_csv, write_grid};
pub use log::{LogMetadata, StepRecord, TrajectoryLog, CSV_COLUMNS};
pub use metrics::{absrel, delta1, DELTA1_THRESHOLD};
pub use spectrum::{fft2, spectrum_gap, SpectrumGap, MAGNITUDE_FLOOR};

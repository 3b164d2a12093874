/// Column order of the trajectory CSV.
pub const CSV_COLUMNS: [&str; 11] = [
    "step_position",
    "timestep",
    "delta_n",
    "lambda",
    "lambda_sum",
    "target_rms",
    "source_rms",
    "p",
    "gamma",
    "mask_fraction",
    "mean_variance",
];

/// Per-step scalars; fields a sampling mode does not produce stay `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    pub step_position: usize,
    pub timestep: usize,
    pub delta_n: Option<f64>,
    pub lambda: f64,
    pub lambda_sum: Option<f64>,
    pub target_rms: Option<f64>,
    pub source_rms: Option<f64>,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
    pub mask_fraction: Option<f64>,
    pub mean_variance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogMetadata {
    pub run_id: String,
    pub seed: u64,
    pub mode: String,
    pub config_hash: String,
}

/// One row per inference step, in sampling order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub metadata: LogMetadata,
    pub rows: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn new(mode: impl Into<String>, seed: u64) -> Self {
        Self {
            metadata: LogMetadata {
                mode: mode.into(),
                seed,
                ..LogMetadata::default()
            },
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: StepRecord) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.lambda)
    }
}

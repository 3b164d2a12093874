//! Subcommands: argument parsing, output files and manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use noise_align_core::diagnostics::{export_csv, export_grid, format_sig};
use noise_align_core::SourceStats;

use crate::config::RunConfig;
use crate::experiment::{self, Domain, Setting, Setup, Suite, TrajectoryResult};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "noise-align", version, about = "Domain noise alignment experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML config; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `run.output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Source,
    Shifted,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Source => Domain::Source,
            DomainArg::Shifted => Domain::Shifted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Alignment,
    MaskSchedule,
    Consistency,
    Application,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Alignment => Suite::Alignment,
            SuiteArg::MaskSchedule => Suite::MaskSchedule,
            SuiteArg::Consistency => Suite::Consistency,
            SuiteArg::Application => Suite::Application,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate per-step source noise statistics.
    Calibrate,
    /// Source-available alignment using `stats.csv`.
    RunSa {
        #[arg(long, value_enum, default_value = "shifted")]
        domain: DomainArg,
    },
    /// Source-free alignment.
    RunSf {
        #[arg(long, value_enum, default_value = "shifted")]
        domain: DomainArg,
    },
    /// Unmodified sampler.
    RunBaseline {
        #[arg(long, value_enum, default_value = "shifted")]
        domain: DomainArg,
    },
    /// Compare the variants of one design choice.
    Ablate {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long, value_enum, default_value = "shifted")]
        domain: DomainArg,
    },
    /// Per-step amplitude and phase gaps between source and shifted predictions.
    Diagnose,
}

/// Loads the config and applies flag overrides.
pub fn load_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &global.out {
        config.run.output = out.clone();
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(&cli.global)?;
    let setup = Setup::new(config, cli.global.jobs)?;
    match &cli.command {
        Command::Calibrate => cmd_calibrate(&setup),
        Command::RunSa { domain } => {
            let stats = load_checked_stats(&setup)?;
            let mode = setup.resolved.mode;
            cmd_run(&setup, &Setting::Sa { mode, stats }, (*domain).into())
        }
        Command::RunSf { domain } => {
            cmd_run(&setup, &Setting::Sf(setup.resolved.sf.clone()), (*domain).into())
        }
        Command::RunBaseline { domain } => cmd_run(&setup, &Setting::Baseline, (*domain).into()),
        Command::Ablate { suite, domain } => cmd_ablate(&setup, (*suite).into(), (*domain).into()),
        Command::Diagnose => cmd_diagnose(&setup),
    }
}

fn out_dir(setup: &Setup) -> &Path {
    &setup.config.run.output
}

fn create_out(setup: &Setup) -> Result<PathBuf, CliError> {
    let dir = out_dir(setup).to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_manifest(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Merges `entries` into `manifest.txt` so earlier commands' stamps survive.
fn update_manifest(setup: &Setup, command: &str, extra: &[(&str, String)]) -> Result<(), CliError> {
    let path = out_dir(setup).join("manifest.txt");
    let mut m = read_manifest(&path);
    m.insert(format!("{command}.config_hash"), setup.config.hash());
    m.insert(format!("{command}.seed"), setup.seed().to_string());
    for (k, v) in extra {
        m.insert(k.to_string(), v.clone());
    }
    // Core and cli share the workspace version.
    m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    let mut text = String::new();
    for (k, v) in m {
        let _ = writeln!(text, "{k} = {v}");
    }
    write(&path, &text)
}

fn stats_path(setup: &Setup) -> PathBuf {
    setup
        .config
        .calibration
        .stats
        .clone()
        .unwrap_or_else(|| out_dir(setup).join("stats.csv"))
}

/// Reads the stats file and checks it was produced for this schedule and world.
pub fn load_checked_stats(setup: &Setup) -> Result<SourceStats, CliError> {
    let path = stats_path(setup);
    if !path.exists() {
        return Err(CliError::MissingStats(format!(
            "no source statistics at {}; run `noise-align calibrate` with the same config first",
            path.display()
        )));
    }
    let manifest = path.with_file_name("manifest.txt");
    let want = setup.config.calibration_hash();
    match read_manifest(&manifest).get("calibration_hash") {
        Some(h) if *h == want => {}
        Some(h) => {
            return Err(CliError::CalibrationMismatch(format!(
                "{} was calibrated for {h}, this config needs {want}; rerun `noise-align calibrate`",
                path.display()
            )))
        }
        None => {
            return Err(CliError::CalibrationMismatch(format!(
                "{} has no calibration_hash entry",
                manifest.display()
            )))
        }
    }
    let stats = SourceStats::read(&path)?;
    stats.validate_for(&setup.resolved.schedule)?;
    Ok(stats)
}

pub fn cmd_calibrate(setup: &Setup) -> Result<(), CliError> {
    let stats = experiment::calibrate(setup)?;
    let dir = create_out(setup)?;
    write(&dir.join("stats.csv"), &stats.to_csv())?;
    update_manifest(
        setup,
        "calibrate",
        &[("calibration_hash", setup.config.calibration_hash())],
    )
}

pub fn summary_csv(results: &[TrajectoryResult]) -> String {
    let mut text = String::from("trajectory,absrel,delta1\n");
    for r in results {
        let _ = writeln!(text, "{},{},{}", r.index, format_sig(r.absrel), format_sig(r.delta1));
    }
    let s = experiment::summarize(results);
    let _ = writeln!(text, "mean,{},{}", format_sig(s.mean_absrel), format_sig(s.mean_delta1));
    let _ = writeln!(text, "std,{},{}", format_sig(s.std_absrel), format_sig(s.std_delta1));
    text
}

pub fn cmd_run(setup: &Setup, setting: &Setting, domain: Domain) -> Result<(), CliError> {
    let results = experiment::run_setting(setup, setting, domain, setup.config.run.trajectories)?;
    let dir = create_out(setup)?;
    for r in &results {
        export_csv(&r.log, dir.join(format!("trajectory_{}.csv", r.index)))?;
        export_grid(&r.prediction, dir.join(format!("pred_{}.grid", r.index)))?;
        export_grid(&r.gt, dir.join(format!("gt_{}.grid", r.index)))?;
    }
    write(&dir.join("summary.csv"), &summary_csv(&results))?;
    update_manifest(setup, &format!("run-{}", setting.name()), &[])
}

pub fn ablation_csv(rows: &[(String, experiment::MetricSummary)]) -> String {
    let mut text = String::from("variant,n,mean_absrel,std_absrel,mean_delta1,std_delta1\n");
    for (name, s) in rows {
        let _ = writeln!(
            text,
            "{name},{},{},{},{},{}",
            s.n,
            format_sig(s.mean_absrel),
            format_sig(s.std_absrel),
            format_sig(s.mean_delta1),
            format_sig(s.std_delta1)
        );
    }
    text
}

pub fn cmd_ablate(setup: &Setup, suite: Suite, domain: Domain) -> Result<(), CliError> {
    let stats = match suite {
        Suite::Alignment => Some(experiment::calibrate(setup)?),
        _ => None,
    };
    let rows = experiment::ablate(setup, suite, stats.as_ref(), domain, setup.config.run.trajectories)?;
    let dir = create_out(setup)?;
    write(&dir.join(format!("ablation_{}.csv", suite.name())), &ablation_csv(&rows))?;
    update_manifest(setup, &format!("ablate-{}", suite.name()), &[])
}

pub fn spectrum_csv(rows: &[experiment::SpectrumRow]) -> String {
    let mut text = String::from(
        "step_position,timestep,amp_gap,phase_gap,ref_amp_gap,ref_phase_gap,norm_amp_gap,norm_phase_gap\n",
    );
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.step_position,
            r.timestep,
            format_sig(r.amp_gap),
            format_sig(r.phase_gap),
            format_sig(r.ref_amp_gap),
            format_sig(r.ref_phase_gap),
            format_sig(r.norm_amp_gap()),
            format_sig(r.norm_phase_gap())
        );
    }
    text
}

pub fn cmd_diagnose(setup: &Setup) -> Result<(), CliError> {
    let rows = experiment::diagnose(setup, setup.config.run.trajectories)?;
    let dir = create_out(setup)?;
    write(&dir.join("spectrum.csv"), &spectrum_csv(&rows))?;
    update_manifest(setup, "diagnose", &[])
}

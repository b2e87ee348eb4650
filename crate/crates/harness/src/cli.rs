//! Command-line surface and its translation into an [`ExperimentConfig`].

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clup_core::clup::{ClupConfig, RadiusMode, WarmStart};
use clup_core::rdt::clup::ScanAxis;

use crate::records::BUILD_VERSION;

/// Numbers given as `a,b,c` or as an inclusive range `start:stop:step`.
#[derive(Debug, Clone, PartialEq)]
pub struct NumList(pub Vec<f64>);

impl FromStr for NumList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"));
        let parts: Vec<&str> = s.split(':').collect();
        let values = match parts.as_slice() {
            [single] => single.split(',').filter(|t| !t.trim().is_empty()).map(num).collect::<Result<Vec<_>, _>>()?,
            [a, b, step] => {
                let (a, b, step) = (num(a)?, num(b)?, num(step)?);
                if !(step > 0.0) || !(b >= a) {
                    return Err(format!("range {s:?} needs start <= stop and a positive step"));
                }
                let count = ((b - a) / step + 1e-9).floor() as usize + 1;
                // rounding keeps 10:12:0.1 from producing 10.000000000000002
                (0..count).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect()
            }
            _ => return Err(format!("expected a comma list or start:stop:step, got {s:?}")),
        };
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(format!("no usable numbers in {s:?}"));
        }
        Ok(NumList(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RadiusModeArg {
    PerInstance,
    Theoretical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WarmStartArg {
    Random,
    Polytope,
    PolytopeOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    C1,
    C2,
}

#[derive(Debug, Parser)]
#[command(name = "clup", version = BUILD_VERSION, about = "CLuP detector experiments: theory sweeps and Monte Carlo campaigns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// CLuP, polytope and ML predictions per (SNR, r_sc).
    Predict,
    /// Monte Carlo CLuP runs with per-trial and aggregate rows.
    Simulate {
        /// Also run the polytope detector and bit-flipping ML.
        #[arg(long)]
        baselines: bool,
        /// Random restarts of the bit-flipping search.
        #[arg(long, default_value_t = 10)]
        ml_restarts: usize,
    },
    /// ML prediction curve.
    Ml {
        /// Add a row with the two critical SNRs.
        #[arg(long)]
        critical: bool,
    },
    /// Stationary points of the radius-constrained Lagrangian.
    Stationary {
        /// Radii to use instead of r_sc * r_plt.
        #[arg(long)]
        radius: Option<NumList>,
    },
    /// Reduced objective along c1 (fixed c2) or along c2.
    Scan {
        #[arg(long, value_enum, default_value_t = AxisArg::C1)]
        axis: AxisArg,
        /// Fixed c2 values for a c1 scan (ignored along c2).
        #[arg(long, default_value = "0.985")]
        fixed: NumList,
        /// Scan grid as start:stop:step or a list; defaults cover [0.5, 1).
        #[arg(long)]
        grid: Option<NumList>,
    },
    /// First-iteration predictions, optionally with a Monte Carlo check.
    FirstIter {
        /// Radii to use instead of r_sc * r_plt.
        #[arg(long)]
        radius: Option<NumList>,
        /// Run `--trials` single CLuP steps at `--n` and report sample means.
        #[arg(long)]
        simulate: bool,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, global = true, default_value_t = 0.8)]
    pub alpha: f64,
    /// SNR in dB as a list or start:stop:step.
    #[arg(long, global = true, default_value = "12")]
    pub snr_db: NumList,
    #[arg(long, global = true, default_value_t = 400)]
    pub n: usize,
    #[arg(long, global = true, default_value_t = 100)]
    pub trials: usize,
    /// Radius multipliers of r_plt.
    #[arg(long, global = true, default_value = "1.1")]
    pub r_sc: NumList,
    /// Expected fraction of starting signs that agree with the signal.
    #[arg(long, global = true, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "CLUP_WORKERS")]
    pub workers: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, global = true, value_enum, default_value_t = RadiusModeArg::PerInstance)]
    pub radius_mode: RadiusModeArg,
    #[arg(long, global = true, value_enum, default_value_t = WarmStartArg::Random)]
    pub warm_start: WarmStartArg,
    /// Random starts per trial; the run with the largest c2 is kept.
    #[arg(long, global = true, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, global = true, default_value_t = 50)]
    pub i_max: usize,
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub delta_min: f64,
    /// Stamp records with the wall-clock time (breaks byte-identical reruns).
    #[arg(long, global = true)]
    pub timestamp: bool,
}

/// What to run, after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Predict,
    Simulate { baselines: bool, ml_restarts: usize },
    Ml { critical: bool },
    Stationary { radius: Option<Vec<f64>> },
    Scan { axis: ScanAxis, fixed: Vec<f64>, grid: Option<Vec<f64>> },
    FirstIter { radius: Option<Vec<f64>>, simulate: bool },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Predict => "predict",
            Task::Simulate { .. } => "simulate",
            Task::Ml { .. } => "ml",
            Task::Stationary { .. } => "stationary",
            Task::Scan { .. } => "scan",
            Task::FirstIter { .. } => "first-iter",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub alpha: f64,
    pub snr_db_list: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    pub r_sc_list: Vec<f64>,
    pub rho: f64,
    pub seed: u64,
    pub workers: usize,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub clup: ClupConfig,
    pub timestamp: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.trials < 1 {
            return Err("trials must be >= 1".into());
        }
        if self.snr_db_list.is_empty() {
            return Err("at least one SNR is required".into());
        }
        if self.r_sc_list.is_empty() || self.r_sc_list.iter().any(|&r| !(r >= 1.0)) {
            return Err("r_sc values must be >= 1".into());
        }
        if self.workers < 1 {
            return Err("workers must be >= 1".into());
        }
        if self.n < 1 {
            return Err("n must be >= 1".into());
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err("alpha must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err("rho must lie in [0, 1]".into());
        }
        self.clup.validate().map_err(|e| e.to_string())
    }
}

impl Cli {
    pub fn into_config(self) -> Result<ExperimentConfig, String> {
        let c = self.common;
        let task = match self.command {
            Command::Predict => Task::Predict,
            Command::Simulate { baselines, ml_restarts } => Task::Simulate { baselines, ml_restarts },
            Command::Ml { critical } => Task::Ml { critical },
            Command::Stationary { radius } => Task::Stationary { radius: radius.map(|r| r.0) },
            Command::Scan { axis, fixed, grid } => Task::Scan {
                axis: match axis {
                    AxisArg::C1 => ScanAxis::C1,
                    AxisArg::C2 => ScanAxis::C2,
                },
                fixed: fixed.0,
                grid: grid.map(|g| g.0),
            },
            Command::FirstIter { radius, simulate } => Task::FirstIter {
                radius: radius.map(|r| r.0),
                simulate,
            },
        };
        let clup = ClupConfig {
            r_sc: c.r_sc.0[0],
            radius_mode: match c.radius_mode {
                RadiusModeArg::PerInstance => RadiusMode::PerInstance,
                RadiusModeArg::Theoretical => RadiusMode::Theoretical,
            },
            i_max: c.i_max,
            delta_min: c.delta_min,
            restarts: c.restarts,
            warm_start: match c.warm_start {
                WarmStartArg::Random => WarmStart::RandomSign,
                WarmStartArg::Polytope => WarmStart::PolytopeRound,
                WarmStartArg::PolytopeOverlap => WarmStart::PolytopeWithOverlapConstraint,
            },
            ..ClupConfig::default()
        };
        let workers = c
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        let config = ExperimentConfig {
            task,
            alpha: c.alpha,
            snr_db_list: c.snr_db.0,
            n: c.n,
            trials: c.trials,
            r_sc_list: c.r_sc.0,
            rho: c.rho,
            seed: c.seed,
            workers,
            output_path: c.out,
            format: c.format,
            clup,
            timestamp: c.timestamp,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_lists() {
        assert_eq!("10,11.5".parse::<NumList>().unwrap().0, vec![10.0, 11.5]);
        assert_eq!("10:12:0.5".parse::<NumList>().unwrap().0, vec![10.0, 10.5, 11.0, 11.5, 12.0]);
        assert_eq!("10:11:0.1".parse::<NumList>().unwrap().0.len(), 11);
        assert_eq!("10:11:0.1".parse::<NumList>().unwrap().0[1], 10.1);
        assert!("12:10:1".parse::<NumList>().is_err());
        assert!("1:2".parse::<NumList>().is_err());
        assert!("a".parse::<NumList>().is_err());
        assert!("".parse::<NumList>().is_err());
    }

    #[test]
    fn defaults_mirror_the_main_experiment() {
        let cfg = Cli::try_parse_from(["clup", "simulate", "--workers", "2"]).unwrap().into_config().unwrap();
        assert_eq!(cfg.alpha, 0.8);
        assert_eq!(cfg.n, 400);
        assert_eq!(cfg.clup.i_max, 50);
        assert_eq!(cfg.clup.delta_min, 1e-8);
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.task, Task::Simulate { baselines: false, ml_restarts: 10 });
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |args: &[&str]| Cli::try_parse_from(args).map_err(|e| e.to_string()).and_then(Cli::into_config).is_err();
        assert!(bad(&["clup", "predict", "--trials", "0"]));
        assert!(bad(&["clup", "predict", "--workers", "0"]));
        assert!(bad(&["clup", "predict", "--r-sc", "0.9"]));
        assert!(bad(&["clup", "predict", "--rho", "1.5"]));
        assert!(bad(&["clup", "predict", "--format", "xml"]));
    }

    #[test]
    fn flags_may_follow_the_subcommand() {
        let cfg = Cli::try_parse_from(["clup", "scan", "--axis", "c2", "--snr-db", "9:10:1"]).unwrap().into_config().unwrap();
        assert_eq!(cfg.snr_db_list, vec![9.0, 10.0]);
        assert!(matches!(cfg.task, Task::Scan { axis: ScanAxis::C2, .. }));
    }
}

//! Run configuration: one TOML document plus command-line overrides.

use std::path::{Path, PathBuf};

use rvf_core::inference::{AttractorOptions, SignificanceOptions};
use rvf_core::kde::{Kernel, NormalizerRule};
use rvf_core::tuning::{DEFAULT_ALPHA_GRID, DEFAULT_H_GRID};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_grid() -> [usize; 2] {
    [rvf_core::rvf::DEFAULT_RESOLUTION; 2]
}

fn default_bootstrap() -> usize {
    500
}

fn default_step() -> f64 {
    0.1
}

fn default_permutations() -> usize {
    999
}

fn default_curve_replicates() -> usize {
    500
}

fn default_h_grid() -> Vec<f64> {
    DEFAULT_H_GRID.to_vec()
}

fn default_alpha_grid() -> Vec<f64> {
    DEFAULT_ALPHA_GRID.to_vec()
}

fn default_pad_h() -> f64 {
    0.21
}

/// Contents of the configuration file. Relative paths are resolved against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub panel: PathBuf,
    pub partitions: PathBuf,
    #[serde(default)]
    pub crosswalk: Option<PathBuf>,
    #[serde(default)]
    pub membership: Option<PathBuf>,
    /// `[start, end]`; defaults to the full span of the panel.
    #[serde(default)]
    pub window: Option<[i32; 2]>,
    /// Years spanning the partition switch for `diag-partition-switch`.
    #[serde(default)]
    pub switch_years: Option<[i32; 2]>,
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_h_grid")]
    pub tune_h: Vec<f64>,
    #[serde(default = "default_alpha_grid")]
    pub tune_alpha: Vec<f64>,
    /// Share of transitions held out when tuning; 0 keeps the in-sample MSE.
    #[serde(default)]
    pub tune_holdout: f64,
    /// Bandwidth used to pad the evaluation grid when `h` is not set.
    #[serde(default = "default_pad_h")]
    pub grid_pad_h: f64,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub normalizer: NormalizerRule,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_curve_replicates")]
    pub curve_replicates: usize,
    #[serde(default)]
    pub curve_bandwidth: Option<f64>,
    /// Trajectory horizon in years; defaults to the window length.
    #[serde(default)]
    pub forecast_horizon: Option<f64>,
    #[serde(default)]
    pub attractors: AttractorOptions,
    #[serde(default)]
    pub significance: SignificanceOptions,
    /// Attractor labels in order of decreasing own density.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Values given on the command line take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub h: Option<f64>,
    pub alpha: Option<f64>,
    pub bootstrap: Option<usize>,
    pub seed: Option<u64>,
    pub grid: Option<[usize; 2]>,
    pub window: Option<[i32; 2]>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.panel);
        resolve(&mut cfg.partitions);
        cfg.crosswalk.as_mut().map(resolve);
        cfg.membership.as_mut().map(resolve);
        cfg.out.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.h.is_some() {
            self.h = o.h;
        }
        if o.alpha.is_some() {
            self.alpha = o.alpha;
        }
        if let Some(b) = o.bootstrap {
            self.bootstrap = b;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(g) = o.grid {
            self.grid = g;
        }
        if o.window.is_some() {
            self.window = o.window;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }

    /// Checks file existence and value ranges.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut files = vec![&self.panel, &self.partitions];
        files.extend(self.crosswalk.iter());
        files.extend(self.membership.iter());
        for f in files {
            if !f.is_file() {
                return Err(CliError::Config(format!("input file {} does not exist", f.display())));
            }
        }
        if let Some([a, b]) = self.window {
            if a >= b {
                return Err(CliError::Config(format!("window {a}:{b} is empty")));
            }
        }
        if self.grid[0] < 2 || self.grid[1] < 2 {
            return Err(CliError::Config("grid needs at least 2 nodes per axis".into()));
        }
        if self.h.is_some() != self.alpha.is_some() {
            return Err(CliError::Config("set both h and alpha, or neither to tune them".into()));
        }
        if self.h.is_none() && (self.tune_h.is_empty() || self.tune_alpha.is_empty()) {
            return Err(CliError::Config("no (h, alpha) given and the tuning grids are empty".into()));
        }
        if !(self.step > 0.0) {
            return Err(CliError::Config("step must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.tune_holdout) {
            return Err(CliError::Config("tune_holdout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("rvf-out"))
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }
}

/// Parses `NxM`.
pub fn parse_grid(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NxM, got {s:?}"))?;
    let n = a.trim().parse().map_err(|_| format!("bad grid size {a:?}"))?;
    let m = b.trim().parse().map_err(|_| format!("bad grid size {b:?}"))?;
    Ok([n, m])
}

/// Parses `Y1:Y2`.
pub fn parse_window(s: &str) -> Result<[i32; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected Y1:Y2, got {s:?}"))?;
    let a = a.trim().parse().map_err(|_| format!("bad year {a:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad year {b:?}"))?;
    Ok([a, b])
}

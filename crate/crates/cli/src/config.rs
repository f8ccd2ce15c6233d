//! Run configuration: JSON schema, per-example defaults, and flag overrides.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use warpcal_core::calibrate::Prior;
use warpcal_core::synthetic::DesignKind;

/// Version of the config schema this binary understands.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Forward model used during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Train curve emulators from the decomposed ensemble.
    Emulator,
    /// Call the registered simulator inside the likelihood.
    Direct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Ensemble size; defaults to the built-in study's size.
    pub n_runs: Option<usize>,
    pub grid_points: usize,
    pub design: DesignKind,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n_runs: None, grid_points: 101, design: DesignKind::Uniform }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub penalty_lambda: f64,
    /// Ensemble member to use as the alignment target; `null` aligns
    /// everything to the observation.
    pub reference_index: Option<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { penalty_lambda: 0.0, reference_index: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmulatorConfig {
    pub variance_target_aligned: f64,
    pub variance_target_shooting: f64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig { variance_target_aligned: 0.999, variance_target_shooting: 0.995 }
    }
}

/// Piecewise shift-capable discrepancy on the shooting block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftDiscrepancySpec {
    pub breakpoints: [f64; 3],
    #[serde(default = "one")]
    pub coeff_sd: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub proposal_scale_init: f64,
    pub refresh_every: usize,
    pub inflate_emulator_variance: bool,
    pub include_shooting_block: bool,
    /// One prior per calibration input; `null` uses the built-in study's.
    pub priors: Option<Vec<Prior>>,
    pub shift_discrepancy: Option<ShiftDiscrepancySpec>,
    pub sigma2_fix_aligned: Option<f64>,
    pub sigma2_fix_shooting: Option<f64>,
    pub sigma2_prior_aligned: Option<Prior>,
    pub sigma2_prior_shooting: Option<Prior>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            n_iter: 20_000,
            n_burn: 5_000,
            proposal_scale_init: 0.05,
            refresh_every: 10,
            inflate_emulator_variance: true,
            include_shooting_block: true,
            priors: None,
            shift_discrepancy: None,
            sigma2_fix_aligned: None,
            sigma2_fix_shooting: None,
            sigma2_prior_aligned: None,
            sigma2_prior_shooting: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub n_band_draws: usize,
    pub band_level: f64,
    pub contour_level: f64,
    pub n_bins: usize,
    pub kde_grid: usize,
    pub n_shift_draws: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            n_band_draws: 400,
            band_level: 0.95,
            contour_level: 0.95,
            n_bins: 40,
            kde_grid: 96,
            n_shift_draws: 200,
        }
    }
}

/// Whole-run configuration; the resolved snapshot of this struct is written
/// to the output directory by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Built-in study (1 or 2); optional when all settings are explicit.
    #[serde(default)]
    pub example: Option<u8>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub emulator: EmulatorConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_mode() -> Mode {
    Mode::Emulator
}

impl RunConfig {
    /// Built-in defaults, specialized to a study when one is named.
    pub fn built_in(example: Option<u8>) -> RunConfig {
        let mut cfg = RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            out_dir: None,
            example,
            mode: Mode::Emulator,
            simulate: SimulateConfig::default(),
            align: AlignConfig::default(),
            emulator: EmulatorConfig::default(),
            calibrate: CalibrateConfig::default(),
            report: ReportConfig::default(),
        };
        if example == Some(2) {
            cfg.calibrate.shift_discrepancy =
                Some(ShiftDiscrepancySpec { breakpoints: [0.5, 0.7, 0.85], coeff_sd: 1.0 });
            cfg.calibrate.n_iter = 12_000;
            cfg.calibrate.n_burn = 3_000;
        }
        cfg
    }

    /// Default priors for the built-in studies.
    pub fn default_priors(example: u8) -> Option<Vec<Prior>> {
        match example {
            1 => Some(vec![
                Prior::Uniform { lo: 0.0, hi: 1.0 },
                Prior::Uniform { lo: 0.0, hi: 1.0 },
                Prior::Uniform { lo: 0.0, hi: 1.0 },
            ]),
            // The second study's active inputs are designed on [0, 0.3] with
            // the truth at the design edge; the wider box keeps the posterior
            // from being clipped at the true value.
            2 => Some(vec![
                Prior::Uniform { lo: 0.0, hi: 0.4 },
                Prior::Uniform { lo: 0.0, hi: 0.4 },
                Prior::Uniform { lo: 0.0, hi: 1.0 },
            ]),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!(
                "config {} has schema_version {}, this build expects {CONFIG_SCHEMA_VERSION}",
                path.display(),
                cfg.schema_version
            ));
        }
        Ok(cfg)
    }

    /// Validate ranges that serde cannot express.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(e) = self.example {
            if !(1..=2).contains(&e) {
                return Err(format!("example must be 1 or 2, got {e}"));
            }
        }
        if self.simulate.grid_points < 5 {
            return Err("simulate.grid_points must be at least 5".into());
        }
        if self.align.penalty_lambda < 0.0 {
            return Err("align.penalty_lambda must be nonnegative".into());
        }
        for (name, v) in [
            ("emulator.variance_target_aligned", self.emulator.variance_target_aligned),
            ("emulator.variance_target_shooting", self.emulator.variance_target_shooting),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if self.calibrate.n_iter == 0 || self.calibrate.n_burn >= self.calibrate.n_iter {
            return Err(format!(
                "calibrate needs n_iter > n_burn, got {} and {}",
                self.calibrate.n_iter, self.calibrate.n_burn
            ));
        }
        for (name, v) in [
            ("report.band_level", self.report.band_level),
            ("report.contour_level", self.report.contour_level),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.report.n_band_draws == 0 || self.report.n_bins == 0 || self.report.kde_grid < 4 {
            return Err("report sizes must be positive (kde_grid at least 4)".into());
        }
        Ok(())
    }
}

//! Experiment harness: configuration, the shared setup every sweep needs,
//! the rate and bias-variance sweeps, and provenance-stamped output.
//!
//! All randomness is derived from one master seed through [`crate::seed`],
//! keyed by the task's coordinates, so a sweep gives the same numbers no
//! matter how rayon schedules its cells.

mod bias_variance;
mod output;
mod rate;

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::Regime;
use crate::erm::TrainConfig;
use crate::error::{invalid, Result};
use crate::seed::{derive_seed, tag, task_rng};
use crate::spectrum::{fit_decay, layer_spectrum, DecayFit, LayerSpectrum};
use crate::teacher::{sample_teacher_calibrated, DecayCalibration, InputLaw, TeacherConfig, TeacherNetwork};

pub use bias_variance::{lambda_for_width, run_bias_variance_sweep, run_bias_variance_sweep_in, BiasVarianceRow, BiasVarianceTable};
pub use output::{config_hash, write_csv_with_provenance, write_json_with_provenance, Provenance};
pub use rate::{fit_slope, run_rate_sweep, run_rate_sweep_in, CellOutcome, RateComparison, RatePoint, RateResult, RegimeSweep, SlopeFit};

/// Settings for the bias-variance sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceConfig {
    /// Sample size held fixed along the sweep.
    pub n: usize,
    /// Hidden widths to try; every hidden layer gets the same width.
    pub widths: Vec<usize>,
}

impl Default for BiasVarianceConfig {
    fn default() -> Self {
        Self { n: 256, widths: vec![1, 2, 4, 8, 16, 32, 64, 128, 256] }
    }
}

/// One JSON document describing a whole experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub teacher: TeacherConfig,
    /// Load the teacher from this JSON file instead of sampling it.
    #[serde(default)]
    pub teacher_file: Option<PathBuf>,
    /// Strictly increasing sample sizes.
    pub n_grid: Vec<usize>,
    /// Repetitions per grid cell.
    pub seeds: usize,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Regime>,
    /// Extra regime evaluated only at the largest `n`, for the regime comparison.
    #[serde(default)]
    pub compare_regime: Option<Regime>,
    pub sigma: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Inputs used for spectra and decay fits.
    #[serde(default = "default_spectrum_samples")]
    pub spectrum_samples: usize,
    /// Held-out inputs for Monte-Carlo `L2(P_X)` errors.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bias_variance: BiasVarianceConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_regimes() -> Vec<Regime> {
    vec![Regime::Tight]
}

fn default_delta() -> f64 {
    0.1
}

fn default_spectrum_samples() -> usize {
    2000
}

fn default_eval_samples() -> usize {
    4000
}

impl ExperimentConfig {
    /// The desk instance: tanh teacher with one 512-node hidden layer whose
    /// spectrum is calibrated to decay like `j^{-1/0.5}`.
    pub fn desk() -> Self {
        Self {
            teacher: TeacherConfig {
                depth: 2,
                input_dim: 4,
                resolutions: vec![512],
                budget: crate::NormBudget { r: 1.0, r_b: 0.5, d_x: 40.0, delta: 0.1 },
                activation: crate::Activation::tanh(),
                decay: Some(0.5),
            },
            teacher_file: None,
            n_grid: vec![256, 512, 1024, 2048, 4096, 8192],
            seeds: 5,
            regimes: vec![Regime::Tight],
            compare_regime: Some(Regime::Loose),
            sigma: 0.1,
            delta: 0.1,
            spectrum_samples: 2000,
            eval_samples: 4000,
            train: TrainConfig { max_epochs: 200, ..TrainConfig::default() },
            bias_variance: BiasVarianceConfig::default(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.teacher_file.is_none() {
            self.teacher.validate()?;
        }
        if let Some(p) = &self.teacher_file {
            if !p.exists() {
                return Err(invalid(format!("teacher file {} does not exist", p.display())));
            }
        }
        if self.n_grid.is_empty() || self.n_grid[0] < 2 {
            return Err(invalid("n_grid must be nonempty with n >= 2"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(format!("n_grid {:?} is not strictly increasing", self.n_grid)));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds must be >= 1"));
        }
        if self.regimes.is_empty() {
            return Err(invalid("at least one regime is required"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(invalid(format!("delta {} not in (0, 1/2)", self.delta)));
        }
        if self.spectrum_samples < 2 || self.eval_samples < 2 {
            return Err(invalid("spectrum_samples and eval_samples must be >= 2"));
        }
        if self.bias_variance.n < 2 || self.bias_variance.widths.contains(&0) {
            return Err(invalid("bias_variance needs n >= 2 and positive widths"));
        }
        self.train.validate()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn input_law(&self, teacher: &TeacherNetwork) -> InputLaw {
        InputLaw::uniform(teacher.budget().d_x)
    }
}

/// Everything a sweep shares: the teacher, its fitted spectra and a fixed
/// held-out sample with the teacher's values on it.
#[derive(Clone, Debug)]
pub struct Lab {
    pub teacher: TeacherNetwork,
    pub calibration: Option<DecayCalibration>,
    pub spectra: Vec<LayerSpectrum>,
    /// Decay fits for layers `2..=L`.
    pub fits: Vec<DecayFit>,
    pub eval_xs: DMatrix<f64>,
    pub eval_truth: DVector<f64>,
    pub law: InputLaw,
}

impl Lab {
    pub fn prepare(cfg: &ExperimentConfig, master_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (teacher, calibration) = match &cfg.teacher_file {
            Some(p) => (TeacherNetwork::load(p)?, None),
            None => sample_teacher_calibrated(&cfg.teacher, derive_seed(master_seed, &[tag::TEACHER]))?,
        };
        if teacher.depth() < 2 {
            return Err(invalid("sweeps need a teacher with at least one hidden layer"));
        }
        let law = cfg.input_law(&teacher);
        let d = teacher.input_dim();
        let xs = law.sample(cfg.spectrum_samples, d, &mut task_rng(master_seed, &[tag::XSAMPLE]));
        let spectra = (2..=teacher.depth()).map(|ell| layer_spectrum(&teacher, ell, &xs)).collect::<Result<Vec<_>>>()?;
        let fits = spectra.iter().map(fit_decay).collect::<Result<Vec<_>>>()?;
        let eval_xs = law.sample(cfg.eval_samples, d, &mut task_rng(master_seed, &[tag::EVAL]));
        let eval_truth = teacher.eval_batch(&eval_xs)?;
        Ok(Self { teacher, calibration, spectra, fits, eval_xs, eval_truth, law })
    }

    /// `‖f − f^o‖²_{L2(P_X)}` on the held-out sample.
    pub fn sq_error(&self, f: &crate::FiniteNetwork) -> Result<f64> {
        let pred = f.eval_batch(&self.eval_xs)?;
        Ok((pred - &self.eval_truth).norm_squared() / self.eval_truth.len() as f64)
    }

    /// `‖f − g‖²_{L2(P_X)}` on the held-out sample.
    pub fn sq_distance(&self, f: &crate::FiniteNetwork, g: &crate::FiniteNetwork) -> Result<f64> {
        let a = f.eval_batch(&self.eval_xs)?;
        let b = g.eval_batch(&self.eval_xs)?;
        Ok((a - b).norm_squared() / self.eval_truth.len() as f64)
    }
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

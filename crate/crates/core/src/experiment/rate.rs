use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{median, ExperimentConfig, Lab};
use crate::bounds::{plan_from_fits, rate_exponent, Regime, WidthPlan};
use crate::discretize::{construct_fstar, Construction, SampleMode};
use crate::erm::{train, Architecture, TrainConfig};
use crate::error::{invalid, Result};
use crate::seed::{derive_seed, tag};
use crate::spectrum::DecayFit;
use crate::teacher::{generate_dataset, DecayCalibration};

/// Fewest surviving grid points for which a slope is reported.
const MIN_SLOPE_POINTS: usize = 3;

/// One `(regime, n, repetition)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub regime: Regime,
    pub n: usize,
    pub rep: usize,
    /// `λ` and width of the first sampled layer (the plan holds the rest).
    pub lambda: f64,
    pub width: usize,
    /// `‖f* − f^o‖²` of the warm start.
    pub fstar_error: Option<f64>,
    /// `‖f̂ − f^o‖²` after training.
    pub fhat_error: Option<f64>,
    pub final_risk: Option<f64>,
    pub epochs: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub plan: WidthPlan,
    pub median_fhat_error: Option<f64>,
    pub median_fstar_error: Option<f64>,
    pub failures: usize,
}

/// Least-squares slope with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Zero when only two points are fitted.
    pub std_err: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSweep {
    pub regime: Regime,
    /// Predicted exponent of the squared error in `n`.
    pub predicted_exponent: f64,
    pub points: Vec<RatePoint>,
    /// `None` when fewer than three grid points survived.
    pub slope: Option<SlopeFit>,
}

/// Primary regime against the comparison regime at the largest `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub n: usize,
    pub primary: Regime,
    pub primary_median: Option<f64>,
    pub other: Regime,
    pub other_median: Option<f64>,
    /// Primary median ≤ other median.
    pub primary_not_worse: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub fits: Vec<DecayFit>,
    pub calibration: Option<DecayCalibration>,
    pub sweeps: Vec<RegimeSweep>,
    pub comparison: Option<RateComparison>,
    pub cells: Vec<CellOutcome>,
}

/// Slope of `y` on `x` by least squares, with the usual standard error.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<SlopeFit> {
    let k = points.len();
    if k < 2 {
        return None;
    }
    let kf = k as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / kf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_err = if k > 2 {
        let ssr: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (ssr / (kf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(SlopeFit { slope, intercept, std_err, points: k })
}

/// Runs one grid cell; failures are recorded, not propagated.
fn run_cell(lab: &Lab, cfg: &ExperimentConfig, plan: &WidthPlan, master: u64, rep: usize) -> CellOutcome {
    let n = plan.n;
    let mut out = CellOutcome {
        regime: plan.regime,
        n,
        rep,
        lambda: plan.layers[0].lambda,
        width: plan.layers[0].m,
        fstar_error: None,
        fhat_error: None,
        final_risk: None,
        epochs: None,
        failure: None,
    };
    let result = (|| -> Result<()> {
        let key = [n as u64, rep as u64];
        let data_seed = derive_seed(master, &[tag::DATA, key[0], key[1]]);
        let d = generate_dataset(&lab.teacher, n, cfg.sigma, lab.law, data_seed)?;
        let spec = Construction {
            lambdas: plan.lambdas(),
            widths: plan.hidden_widths(),
            delta: cfg.delta,
            mode: SampleMode::Leverage,
        };
        let node_seed = derive_seed(master, &[tag::NODES, key[0], key[1]]);
        let (fstar, _) = construct_fstar(&lab.teacher, &spec, &d.xs, node_seed)?;
        out.fstar_error = Some(lab.sq_error(&fstar)?);
        let arch = Architecture { widths: plan.widths(lab.teacher.input_dim()), activation: *lab.teacher.activation() };
        let tc = TrainConfig { seed: derive_seed(master, &[tag::INIT, key[0], key[1]]), ..cfg.train.clone() };
        let trained = train(&d, &arch, lab.teacher.budget(), &tc, Some(&fstar))?;
        out.fhat_error = Some(lab.sq_error(&trained.net)?);
        out.final_risk = Some(trained.final_risk());
        out.epochs = Some(trained.epochs());
        Ok(())
    })();
    if let Err(e) = result {
        out.failure = Some(e.to_string());
    }
    out
}

fn summarize(plan: WidthPlan, cells: &[CellOutcome]) -> RatePoint {
    let mine: Vec<&CellOutcome> = cells.iter().filter(|c| c.regime == plan.regime && c.n == plan.n).collect();
    let fhat: Vec<f64> = mine.iter().filter_map(|c| c.fhat_error).collect();
    let fstar: Vec<f64> = mine.iter().filter_map(|c| c.fstar_error).collect();
    RatePoint {
        n: plan.n,
        median_fhat_error: median(&fhat),
        median_fstar_error: median(&fstar),
        failures: mine.iter().filter(|c| c.failure.is_some()).count(),
        plan,
    }
}

/// For every regime and `n`: plan widths from the fitted decays, draw data,
/// construct `f*`, train from it and measure `‖f̂ − f^o‖²`; then fit the
/// log-log slope of the median error against `n`.
pub fn run_rate_sweep(cfg: &ExperimentConfig, master_seed: u64) -> Result<RateResult> {
    cfg.validate()?;
    if cfg.n_grid.len() < 4 || cfg.seeds < 5 {
        return Err(invalid(format!(
            "a rate sweep needs at least 4 sample sizes and 5 seeds (got {} and {})",
            cfg.n_grid.len(),
            cfg.seeds
        )));
    }
    let lab = Lab::prepare(cfg, master_seed)?;
    run_rate_sweep_in(&lab, cfg, master_seed)
}

/// As [`run_rate_sweep`] on an already prepared lab.
pub fn run_rate_sweep_in(lab: &Lab, cfg: &ExperimentConfig, master_seed: u64) -> Result<RateResult> {
    let largest = *cfg.n_grid.last().unwrap();
    let mut plans = Vec::new();
    for &regime in &cfg.regimes {
        for &n in &cfg.n_grid {
            plans.push(plan_from_fits(&lab.fits, n, cfg.delta, regime)?);
        }
    }
    let compare = match cfg.compare_regime {
        Some(r) if !cfg.regimes.contains(&r) => {
            let p = plan_from_fits(&lab.fits, largest, cfg.delta, r)?;
            plans.push(p);
            Some(r)
        }
        other => other,
    };
    let jobs: Vec<(usize, usize)> = (0..plans.len()).flat_map(|p| (0..cfg.seeds).map(move |r| (p, r))).collect();
    let cells: Vec<CellOutcome> =
        jobs.par_iter().map(|&(p, rep)| run_cell(lab, cfg, &plans[p], master_seed, rep)).collect();

    let s_max = lab.fits.iter().map(|f| f.s).fold(f64::NEG_INFINITY, f64::max);
    let mut sweeps = Vec::new();
    for &regime in &cfg.regimes {
        let points: Vec<RatePoint> =
            plans.iter().filter(|p| p.regime == regime).cloned().map(|p| summarize(p, &cells)).collect();
        let xy: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| p.median_fhat_error.filter(|&e| e > 0.0).map(|e| ((p.n as f64).ln(), e.ln())))
            .collect();
        let slope = if xy.len() >= MIN_SLOPE_POINTS { fit_slope(&xy) } else { None };
        sweeps.push(RegimeSweep { regime, predicted_exponent: rate_exponent(regime, s_max)?, points, slope });
    }

    let comparison = compare.map(|other| {
        let primary = cfg.regimes[0];
        let med = |r: Regime| {
            let v: Vec<f64> = cells.iter().filter(|c| c.regime == r && c.n == largest).filter_map(|c| c.fhat_error).collect();
            median(&v)
        };
        let (a, b) = (med(primary), med(other));
        RateComparison {
            n: largest,
            primary,
            primary_median: a,
            other,
            other_median: b,
            primary_not_worse: a.zip(b).map(|(a, b)| a <= b),
        }
    });

    Ok(RateResult {
        fits: lab.fits.clone(),
        calibration: lab.calibration,
        sweeps,
        comparison,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_line_has_zero_error() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 3.0 - 0.5 * k as f64)).collect();
        let f = fit_slope(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 3.0).abs() < 1e-14);
        assert!(f.std_err < 1e-14);
        assert!(fit_slope(&pts[..1]).is_none());
    }

    #[test]
    fn slope_std_err_matches_textbook_formula() {
        // y = (1, 2, 2, 4) at x = (0, 1, 2, 3): slope 0.9, residuals
        // (0.1, 0.2, −0.7, 0.4), SSR 0.7, Sxx 5 → se = √(0.35/5).
        let pts = [(0.0, 1.0), (1.0, 2.0), (2.0, 2.0), (3.0, 4.0)];
        let f = fit_slope(&pts).unwrap();
        assert!((f.slope - 0.9).abs() < 1e-12);
        assert!((f.std_err - (0.35f64 / 5.0).sqrt()).abs() < 1e-12);
    }

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.teacher.resolutions = vec![48];
        cfg.teacher.decay = None;
        cfg.teacher.budget.d_x = 2.0;
        cfg.n_grid = vec![32, 48, 64, 96];
        cfg.spectrum_samples = 200;
        cfg.eval_samples = 300;
        cfg.train.max_epochs = 5;
        cfg
    }

    #[test]
    fn sweep_is_reproducible_and_complete() {
        let cfg = tiny();
        let a = run_rate_sweep(&cfg, 3).unwrap();
        let b = run_rate_sweep(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), (4 + 1) * 5);
        assert!(a.cells.iter().all(|c| c.failure.is_none()));
        let sweep = &a.sweeps[0];
        assert_eq!(sweep.points.len(), 4);
        assert!(sweep.slope.is_some());
        let cmp = a.comparison.as_ref().unwrap();
        assert_eq!((cmp.n, cmp.other), (96, Regime::Loose));
        assert!(cmp.primary_not_worse.is_some());
    }

    #[test]
    fn sweep_rejects_small_grids() {
        let mut cfg = tiny();
        cfg.seeds = 4;
        assert!(run_rate_sweep(&cfg, 0).is_err());
        let mut cfg = tiny();
        cfg.n_grid.pop();
        assert!(run_rate_sweep(&cfg, 0).is_err());
    }

    /// Noiseless data from a teacher that the exhaustive construction copies
    /// exactly: the warm start already interpolates, so every error is ~0.
    #[test]
    fn noiseless_exact_warm_start_gives_zero_error() {
        let cfg = ExperimentConfig { sigma: 0.0, ..tiny() };
        let lab = Lab::prepare(&cfg, 5).unwrap();
        let spec = Construction { lambdas: vec![1e-3], widths: vec![], delta: 0.1, mode: SampleMode::Exhaustive };
        let (fstar, _) = construct_fstar(&lab.teacher, &spec, &lab.eval_xs, 0).unwrap();
        assert!(lab.sq_error(&fstar).unwrap() < 1e-20);
        for &n in &cfg.n_grid {
            let d = generate_dataset(&lab.teacher, n, 0.0, lab.law, n as u64).unwrap();
            let arch = Architecture { widths: fstar.widths().to_vec(), activation: *fstar.activation() };
            let out = train(&d, &arch, lab.teacher.budget(), &cfg.train, Some(&fstar)).unwrap();
            assert!(lab.sq_error(&out.net).unwrap() < 1e-20);
        }
    }
}

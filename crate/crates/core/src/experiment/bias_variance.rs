use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{median, ExperimentConfig, Lab};
use crate::bounds::{delta1, delta2};
use crate::discretize::{construct_fstar, min_width, Construction, SampleMode};
use crate::erm::{train, Architecture, TrainConfig};
use crate::error::{invalid, Result};
use crate::netcore::{lip_diff_constant, sup_norm_bound};
use crate::seed::{derive_seed, tag};
use crate::spectrum::{dof, LayerSpectrum};

/// Bisection steps on `ln λ`.
const LAMBDA_BISECTIONS: usize = 80;

/// Smallest `λ` whose degree of freedom still fits in width `m`, i.e. with
/// `min_width(dof(λ), δ) ≤ m`. Wider layers afford smaller `λ`.
pub fn lambda_for_width(spec: &LayerSpectrum, m: usize, delta: f64) -> Result<f64> {
    if m == 0 {
        return Err(invalid("width must be >= 1"));
    }
    let top = spec.top();
    if !(top > 0.0) {
        return Err(invalid("spectrum has no positive eigenvalue"));
    }
    let fits = |lam: f64| -> Result<bool> { Ok(min_width(dof(spec, lam)?, delta)? <= m) };
    let (mut lo, mut hi) = ((top * 1e-14).ln(), (top * 1e14).ln());
    if fits(lo.exp())? {
        return Ok(lo.exp());
    }
    if !fits(hi.exp())? {
        return Err(invalid(format!("no λ fits width {m}")));
    }
    for _ in 0..LAMBDA_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if fits(mid.exp())? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

/// One width of the sweep, medians over repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRow {
    pub m: usize,
    /// `λ` of the first sampled layer.
    pub lambda: f64,
    /// `‖f* − f^o‖²`.
    pub bias: Option<f64>,
    /// `‖f̂ − f*‖²`, how far fitting the noise moved the estimator.
    pub variance_proxy: Option<f64>,
    /// `‖f̂ − f^o‖²`.
    pub excess_risk: Option<f64>,
    pub delta1_sq: f64,
    /// Undefined for noiseless data.
    pub delta2_sq: Option<f64>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceTable {
    pub n: usize,
    pub rows: Vec<BiasVarianceRow>,
}

struct Cell {
    bias: f64,
    variance: f64,
    excess: f64,
}

fn run_cell(lab: &Lab, cfg: &ExperimentConfig, lambdas: &[f64], m: usize, master: u64, rep: usize) -> Result<Cell> {
    let n = cfg.bias_variance.n;
    let key = [n as u64, rep as u64];
    let d = crate::teacher::generate_dataset(
        &lab.teacher,
        n,
        cfg.sigma,
        lab.law,
        derive_seed(master, &[tag::DATA, key[0], key[1]]),
    )?;
    let depth = lab.teacher.depth();
    let spec = Construction {
        lambdas: lambdas.to_vec(),
        widths: vec![m; depth - 1],
        delta: cfg.delta,
        mode: SampleMode::Leverage,
    };
    let node_seed = derive_seed(master, &[tag::NODES, m as u64, key[0], key[1]]);
    let (fstar, _) = construct_fstar(&lab.teacher, &spec, &d.xs, node_seed)?;
    let arch = Architecture { widths: fstar.widths().to_vec(), activation: *lab.teacher.activation() };
    let tc = TrainConfig { seed: derive_seed(master, &[tag::INIT, m as u64, key[1]]), ..cfg.train.clone() };
    let fhat = train(&d, &arch, lab.teacher.budget(), &tc, Some(&fstar))?.net;
    Ok(Cell { bias: lab.sq_error(&fstar)?, variance: lab.sq_distance(&fhat, &fstar)?, excess: lab.sq_error(&fhat)? })
}

/// Sweeps the hidden width at fixed `n`. Each width gets the smallest `λ`
/// it can afford per layer; the bound columns use the same `λ` and widths.
pub fn run_bias_variance_sweep(cfg: &ExperimentConfig, master_seed: u64) -> Result<BiasVarianceTable> {
    let lab = Lab::prepare(cfg, master_seed)?;
    run_bias_variance_sweep_in(&lab, cfg, master_seed)
}

pub fn run_bias_variance_sweep_in(lab: &Lab, cfg: &ExperimentConfig, master_seed: u64) -> Result<BiasVarianceTable> {
    let t = &lab.teacher;
    let depth = t.depth();
    let budget = t.budget();
    let n = cfg.bias_variance.n;
    let g_hat = lip_diff_constant(budget, depth, t.activation())?;
    let r_inf = sup_norm_bound(budget, depth, t.activation())?.network;

    let grid = &cfg.bias_variance.widths;
    let lambdas: Vec<Vec<f64>> = grid
        .iter()
        .map(|&m| lab.spectra.iter().map(|s| lambda_for_width(s, m, cfg.delta)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|k| (0..cfg.seeds).map(move |r| (k, r))).collect();
    let cells: Vec<(usize, Result<Cell>)> = jobs
        .par_iter()
        .map(|&(k, rep)| (k, run_cell(lab, cfg, &lambdas[k], grid[k], master_seed, rep)))
        .collect();

    let mut rows = Vec::with_capacity(grid.len());
    for (k, &m) in grid.iter().enumerate() {
        let ok: Vec<&Cell> = cells.iter().filter(|(j, _)| *j == k).filter_map(|(_, c)| c.as_ref().ok()).collect();
        let failures = cells.iter().filter(|(j, c)| *j == k && c.is_err()).count();
        let col = |f: fn(&Cell) -> f64| median(&ok.iter().map(|c| f(c)).collect::<Vec<_>>());
        let mut widths = vec![t.input_dim()];
        widths.extend(std::iter::repeat_n(m, depth - 1));
        widths.push(1);
        let d1 = delta1(budget, depth, &lambdas[k])?;
        let d2 = if cfg.sigma > 0.0 { Some(delta2(budget, depth, &widths, n, cfg.sigma, g_hat, r_inf)?) } else { None };
        rows.push(BiasVarianceRow {
            m,
            lambda: lambdas[k][0],
            bias: col(|c| c.bias),
            variance_proxy: col(|c| c.variance),
            excess_risk: col(|c| c.excess),
            delta1_sq: d1 * d1,
            delta2_sq: d2.map(|v| v * v),
            failures,
        });
    }
    Ok(BiasVarianceTable { n, rows })
}

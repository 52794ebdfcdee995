//! Closed-form bound quantities: approximation terms `δ̂₁`, `Δ̂₁`, the
//! complexity term `δ̂₂`, covering entropy of F, the excess-risk bracket,
//! and the bias-variance width planner.
//!
//! Widths are always the full architecture `m_1, …, m_{L+1}` with
//! `m_{L+1} = 1`; `lambdas` holds `λ_2, …, λ_L`. Logs are natural. The
//! universal constant in the excess-risk bound is set to 1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::discretize::min_width;
use crate::error::{invalid, Result};
use crate::netcore::{lip_diff_constant, sup_norm_bound, Activation, NormBudget};
use crate::spectrum::{dof_from_decay, DecayFit};

/// `log_+(x) = max(1, ln x)`.
pub fn log_plus(x: f64) -> f64 {
    if x <= std::f64::consts::E {
        1.0
    } else {
        x.ln()
    }
}

fn check_lambdas(depth: usize, lambdas: &[f64]) -> Result<()> {
    if depth == 0 {
        return Err(invalid("depth L must be >= 1"));
    }
    if lambdas.len() + 1 != depth {
        return Err(invalid(format!("need {} lambdas (layers 2..L), got {}", depth - 1, lambdas.len())));
    }
    if let Some(l) = lambdas.iter().find(|&&l| !(l >= 0.0 && l.is_finite())) {
        return Err(invalid(format!("lambda = {l} must be finite and >= 0")));
    }
    Ok(())
}

fn check_widths(depth: usize, widths: &[usize]) -> Result<()> {
    if widths.len() != depth + 1 {
        return Err(invalid(format!("need {} widths m_1..m_(L+1), got {}", depth + 1, widths.len())));
    }
    if widths.contains(&0) {
        return Err(invalid("widths must be >= 1"));
    }
    if widths[depth] != 1 {
        return Err(invalid("the output width m_(L+1) must be 1"));
    }
    Ok(())
}

/// Per-layer summands `2√(ĉ^{L−ℓ})·R^{L−ℓ+1}·√λ_ℓ·√scale_ℓ`.
fn delta1_terms(budget: &NormBudget, depth: usize, lambdas: &[f64], scale: impl Fn(usize) -> f64) -> f64 {
    let c = budget.c_hat();
    (2..=depth)
        .map(|ell| {
            let k = (depth - ell) as i32;
            2.0 * (scale(ell) * c.powi(k)).sqrt() * budget.r.powi(k + 1) * lambdas[ell - 2].sqrt()
        })
        .sum()
}

/// `δ̂₁ = Σ_{ℓ=2}^L 2√(ĉ_δ^{L−ℓ}) R^{L−ℓ+1} √λ_ℓ`; zero for `L = 1`.
pub fn delta1(budget: &NormBudget, depth: usize, lambdas: &[f64]) -> Result<f64> {
    check_lambdas(depth, lambdas)?;
    Ok(delta1_terms(budget, depth, lambdas, |_| 1.0))
}

/// `Δ̂₁`: as [`delta1`] with an extra `√m_{ℓ+1}` per layer.
pub fn delta1_loose(budget: &NormBudget, depth: usize, lambdas: &[f64], widths: &[usize]) -> Result<f64> {
    check_lambdas(depth, lambdas)?;
    check_widths(depth, widths)?;
    Ok(delta1_terms(budget, depth, lambdas, |ell| widths[ell] as f64))
}

/// `S = Σ_ℓ m_{ℓ+1} m_ℓ`, the weight count of F.
pub fn weight_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1]).sum()
}

/// `δ̂₂ = √((S/n)·log_+(1 + √n·Ĝ·max(R̄,R_b) / (min(σ,R̂_∞)·√S)))`.
pub fn delta2(
    budget: &NormBudget,
    depth: usize,
    widths: &[usize],
    n: usize,
    sigma: f64,
    g_hat: f64,
    r_hat_inf: f64,
) -> Result<f64> {
    check_widths(depth, widths)?;
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma = {sigma} must be > 0")));
    }
    let s = weight_count(widths) as f64;
    let n = n as f64;
    let floor = sigma.min(r_hat_inf);
    if !(floor > 0.0) {
        return Err(invalid("min(sigma, R_inf) must be > 0"));
    }
    let arg = 1.0 + n.sqrt() * g_hat * budget.r_bar().max(budget.r_b) / (floor * s.sqrt());
    Ok((s / n * log_plus(arg)).sqrt())
}

/// `log(1 + 2Ĝ·max(R̄,R_b)/ε)·Σ_ℓ (m_{ℓ+1} + 1)·m_ℓ`, the log covering
/// number of F at sup-norm radius ε.
pub fn covering_log(budget: &NormBudget, widths: &[usize], g_hat: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps = {eps} must be > 0")));
    }
    if widths.len() < 2 {
        return Err(invalid("need at least two widths"));
    }
    let count: usize = widths.windows(2).map(|w| (w[1] + 1) * w[0]).sum();
    Ok((1.0 + 2.0 * g_hat * budget.r_bar().max(budget.r_b) / eps).ln() * count as f64)
}

/// Which range of the approximation slack `r̃` the bracket is stated for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackRange {
    /// `r̃ ∈ (1, 2]`.
    #[default]
    Statement,
    /// `r̃ ∈ (0, 1]`.
    Appendix,
}

impl SlackRange {
    pub fn contains(&self, r_tilde: f64) -> bool {
        match self {
            SlackRange::Statement => r_tilde > 1.0 && r_tilde <= 2.0,
            SlackRange::Appendix => r_tilde > 0.0 && r_tilde <= 1.0,
        }
    }
}

/// Excess-risk bracket
/// `r̃δ̂₁² + (σ²+R̂_∞²)δ̂₂² + (σ²+R̂_∞²)/n·[log_+(√n / min(1, σ/R̂_∞)) + r]`,
/// up to a universal constant (taken as 1).
#[allow(clippy::too_many_arguments)]
pub fn thm2_rhs(
    delta1: f64,
    delta2: f64,
    sigma: f64,
    r_hat_inf: f64,
    n: usize,
    r: f64,
    r_tilde: f64,
    range: SlackRange,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(invalid(format!("r = {r} must be > 0")));
    }
    if !range.contains(r_tilde) {
        return Err(invalid(format!("r_tilde = {r_tilde} outside the {range:?} range")));
    }
    if n == 0 || !(sigma > 0.0) || !(r_hat_inf > 0.0) {
        return Err(invalid("need n >= 1, sigma > 0 and R_inf > 0"));
    }
    let v = sigma * sigma + r_hat_inf * r_hat_inf;
    let nf = n as f64;
    let log_term = log_plus(nf.sqrt() / (sigma / r_hat_inf).min(1.0));
    Ok(r_tilde * delta1 * delta1 + v * delta2 * delta2 + v / nf * (log_term + r))
}

/// The two tail-probability expressions attached to the bracket. Printed,
/// never asserted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailProbabilities {
    /// `1 − exp(−n·δ̂₁²·(r̃−1)²/11) − 2exp(−r)`.
    pub statement: f64,
    /// `1 − exp(−3n·δ̂₁²·r̃²/32) − 2exp(−r)`.
    pub appendix: f64,
}

pub fn tail_probabilities(delta1: f64, n: usize, r: f64, r_tilde: f64) -> TailProbabilities {
    let nd = n as f64 * delta1 * delta1;
    let tail = 2.0 * (-r).exp();
    TailProbabilities {
        statement: 1.0 - (-nd * (r_tilde - 1.0).powi(2) / 11.0).exp() - tail,
        appendix: 1.0 - (-3.0 * nd * r_tilde * r_tilde / 32.0).exp() - tail,
    }
}

/// Width regime: `λ = m²/n` (tight) or `λ = m/n` (loose).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Tight,
    Loose,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Tight, Regime::Loose];
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Tight => "tight",
            Regime::Loose => "loose",
        })
    }
}

impl FromStr for Regime {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tight" => Ok(Regime::Tight),
            "loose" => Ok(Regime::Loose),
            other => Err(invalid(format!("unknown regime '{other}' (tight|loose)"))),
        }
    }
}

fn check_decay(a: f64, s: f64) -> Result<()> {
    if !(a > 0.0) {
        return Err(invalid(format!("a = {a} must be > 0")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid(format!("s = {s} not in (0, 1)")));
    }
    Ok(())
}

/// Bias-variance balancing `λ`: tight `a^{2s/(1+2s)} n^{−1/(1+2s)}`,
/// loose `a^{s/(1+s)} n^{−1/(1+s)}`.
pub fn optimal_lambda(regime: Regime, a: f64, s: f64, n: usize) -> Result<f64> {
    check_decay(a, s)?;
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let n = n as f64;
    Ok(match regime {
        Regime::Tight => a.powf(2.0 * s / (1.0 + 2.0 * s)) * n.powf(-1.0 / (1.0 + 2.0 * s)),
        Regime::Loose => a.powf(s / (1.0 + s)) * n.powf(-1.0 / (1.0 + s)),
    })
}

/// Exponent of `n` in the excess-risk rate.
pub fn rate_exponent(regime: Regime, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid(format!("s = {s} not in (0, 1)")));
    }
    Ok(match regime {
        Regime::Tight => -1.0 / (1.0 + 2.0 * s),
        Regime::Loose => -(1.0 - s) / (1.0 + s),
    })
}

/// One planned layer `ℓ ≥ 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedLayer {
    pub layer: usize,
    pub a: f64,
    pub s: f64,
    pub lambda: f64,
    /// `(λ/a)^{−s}`.
    pub dof: f64,
    pub min_width: usize,
    /// `⌈√(nλ)⌉` (tight) or `⌈nλ⌉` (loose).
    pub consistency_width: usize,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthPlan {
    pub regime: Regime,
    pub n: usize,
    pub delta: f64,
    pub layers: Vec<PlannedLayer>,
    /// Rate exponent of the slowest-decaying layer.
    pub predicted_rate_exponent: f64,
}

impl WidthPlan {
    pub fn lambdas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.lambda).collect()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.m).collect()
    }

    /// `[d, m_2, …, m_L, 1]`.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(self.hidden_widths());
        w.push(1);
        w
    }
}

/// Plans `(λ_ℓ, m_ℓ)` for layers `2..L` from per-layer decay fits.
pub fn plan_widths(decays: &[(f64, f64)], n: usize, delta: f64, regime: Regime) -> Result<WidthPlan> {
    if n < 2 {
        return Err(invalid("planning needs n >= 2"));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(invalid(format!("delta = {delta} not in (0, 1/2)")));
    }
    let mut layers = Vec::with_capacity(decays.len());
    let mut s_max: f64 = 0.0;
    for (k, &(a, s)) in decays.iter().enumerate() {
        let lambda = optimal_lambda(regime, a, s, n)?;
        let dof = dof_from_decay(a, s, lambda)?;
        let mw = min_width(dof, delta)?;
        let nl = n as f64 * lambda;
        let consistency_width = match regime {
            Regime::Tight => nl.sqrt().ceil(),
            Regime::Loose => nl.ceil(),
        }
        .max(1.0) as usize;
        s_max = s_max.max(s);
        layers.push(PlannedLayer {
            layer: k + 2,
            a,
            s,
            lambda,
            dof,
            min_width: mw,
            consistency_width,
            m: mw.max(consistency_width),
        });
    }
    let predicted_rate_exponent = if layers.is_empty() { -1.0 } else { rate_exponent(regime, s_max)? };
    Ok(WidthPlan { regime, n, delta, layers, predicted_rate_exponent })
}

/// [`plan_widths`] from fitted spectra.
pub fn plan_from_fits(fits: &[DecayFit], n: usize, delta: f64, regime: Regime) -> Result<WidthPlan> {
    let decays: Vec<(f64, f64)> = fits.iter().map(|f| (f.a, f.s)).collect();
    plan_widths(&decays, n, delta, regime)
}

/// Everything needed for a [`BoundReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub budget: NormBudget,
    pub activation: Activation,
    /// `m_1, …, m_{L+1}`.
    pub widths: Vec<usize>,
    /// `λ_2, …, λ_L`.
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub sigma: f64,
    /// Confidence parameter `r > 0`.
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_r_tilde")]
    pub r_tilde: f64,
    #[serde(default)]
    pub slack_range: SlackRange,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
}

fn default_r() -> f64 {
    1.0
}

fn default_r_tilde() -> f64 {
    2.0
}

pub fn default_eps_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta1: f64,
    pub delta1_loose: f64,
    pub delta2: f64,
    pub g_hat: f64,
    pub r_hat_inf: f64,
    /// `(ε, log N(ε))`.
    pub covering_log: Vec<(f64, f64)>,
    pub thm2_rhs: f64,
    /// The bracket omits a universal constant; reported as 1.
    pub universal_constant: f64,
    pub probabilities: TailProbabilities,
    pub inputs: BoundInputs,
}

impl BoundReport {
    pub fn compute(inputs: BoundInputs) -> Result<Self> {
        inputs.budget.validate()?;
        let depth = inputs.widths.len().saturating_sub(1);
        check_widths(depth, &inputs.widths)?;
        let g_hat = lip_diff_constant(&inputs.budget, depth, &inputs.activation)?;
        let r_hat_inf = sup_norm_bound(&inputs.budget, depth, &inputs.activation)?.network;
        let d1 = delta1(&inputs.budget, depth, &inputs.lambdas)?;
        let d1l = delta1_loose(&inputs.budget, depth, &inputs.lambdas, &inputs.widths)?;
        let d2 = delta2(&inputs.budget, depth, &inputs.widths, inputs.n, inputs.sigma, g_hat, r_hat_inf)?;
        let covering = inputs
            .eps_grid
            .iter()
            .map(|&e| covering_log(&inputs.budget, &inputs.widths, g_hat, e).map(|v| (e, v)))
            .collect::<Result<Vec<_>>>()?;
        let rhs = thm2_rhs(d1, d2, inputs.sigma, r_hat_inf, inputs.n, inputs.r, inputs.r_tilde, inputs.slack_range)?;
        Ok(Self {
            delta1: d1,
            delta1_loose: d1l,
            delta2: d2,
            g_hat,
            r_hat_inf,
            covering_log: covering,
            thm2_rhs: rhs,
            universal_constant: 1.0,
            probabilities: tail_probabilities(d1, inputs.n, inputs.r, inputs.r_tilde),
            inputs,
        })
    }
}

//! Norm-constrained least squares over the finite class by projected
//! gradient descent.
//!
//! The minimizer is approximate: gradient steps on the mean squared error,
//! each followed by a projection back onto the class (row ℓ1 balls of
//! radius `R̄`, biases clamped to `[−R_b, R_b]`). Full-batch runs halve the
//! step until the risk does not increase, so the history is monotone.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::netcore::{inf_norm, max_norm, Activation, FiniteNetwork, NormBudget};
use crate::seed::{tag, task_rng};
use crate::teacher::Dataset;

/// Rows per rayon task when accumulating gradients.
const GRAD_CHUNK: usize = 512;
/// Give up on an epoch after this many step halvings.
const MAX_HALVINGS: usize = 40;
/// Absolute slack allowed by the per-epoch feasibility check.
const FEASIBILITY_TOL: f64 = 1e-12;
/// Rows this close to the ℓ1 sphere count as inside, so that projecting
/// twice gives the same answer despite rounding in the first pass.
const PROJECTION_SLACK: f64 = 1e-13;
/// Divergence guard: abort once the risk exceeds this multiple of the start.
const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Start from a supplied network, normally the constructed `f*`.
    FstarWarmstart,
    /// Random member of the class.
    RandomInF,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub step_size: f64,
    /// Multiplies the step after every epoch.
    pub step_decay: f64,
    /// Mini-batch size; `None` means full batch.
    pub batch: Option<usize>,
    pub init: Init,
    /// Stop once an epoch improves the risk by less than this fraction.
    pub tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 2000,
            step_size: 1e-2,
            step_decay: 1.0,
            batch: None,
            init: Init::FstarWarmstart,
            tol: 1e-9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("step_size {} must be positive", self.step_size)));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(invalid(format!("step_decay {} not in (0, 1]", self.step_decay)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol {} must be positive", self.tol)));
        }
        if self.batch == Some(0) {
            return Err(invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Widths `m_1, …, m_{L+1}` and the activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    /// Relative improvement fell below `tol`.
    Converged,
    /// No step size in the halving schedule decreased the risk.
    StepUnderflow,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub net: FiniteNetwork,
    /// Entry 0 is the starting risk, entry `e` the full-data risk after epoch `e`.
    pub history: Vec<f64>,
    pub stop: StopReason,
    pub final_step: f64,
}

impl TrainOutcome {
    pub fn final_risk(&self) -> f64 {
        *self.history.last().unwrap()
    }

    pub fn epochs(&self) -> usize {
        self.history.len() - 1
    }
}

/// Gradient of the empirical risk, laid out like the network's layers.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradient {
    fn zeros(net: &FiniteNetwork) -> Self {
        let weights = net.layers().iter().map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols())).collect();
        let biases = net.layers().iter().map(|l| DVector::zeros(l.bias.len())).collect();
        Self { weights, biases }
    }

    fn add(mut self, other: Self) -> Self {
        for (a, b) in self.weights.iter_mut().zip(other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases) {
            *a += b;
        }
        self
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self.weights.iter().map(|m| m.norm_squared()).sum();
        let b: f64 = self.biases.iter().map(|v| v.norm_squared()).sum();
        (w + b).sqrt()
    }
}

/// `(1/n) Σ (y_i − f(x_i))²`.
pub fn empirical_risk(f: &FiniteNetwork, d: &Dataset) -> Result<f64> {
    risk_on(f, &d.xs, &d.ys)
}

pub fn risk_on(f: &FiniteNetwork, xs: &DMatrix<f64>, ys: &DVector<f64>) -> Result<f64> {
    check_sample(xs, ys)?;
    let pred = f.eval_batch(xs)?;
    Ok((pred - ys).norm_squared() / ys.len() as f64)
}

fn check_sample(xs: &DMatrix<f64>, ys: &DVector<f64>) -> Result<()> {
    if ys.is_empty() {
        return Err(Error::EmptySample);
    }
    if xs.nrows() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.nrows(), got: ys.len() });
    }
    Ok(())
}

/// Risk and its gradient by backpropagation.
pub fn risk_gradient(f: &FiniteNetwork, xs: &DMatrix<f64>, ys: &DVector<f64>) -> Result<(f64, Gradient)> {
    check_sample(xs, ys)?;
    if xs.ncols() != f.input_dim() {
        return Err(Error::DimensionMismatch { expected: f.input_dim(), got: xs.ncols() });
    }
    let n = ys.len();
    let scale = 1.0 / n as f64;
    let starts: Vec<usize> = (0..n).step_by(GRAD_CHUNK).collect();
    let (sse, grad) = starts
        .par_iter()
        .map(|&s| {
            let rows = GRAD_CHUNK.min(n - s);
            chunk_gradient(f, &xs.rows(s, rows).into_owned(), &ys.rows(s, rows).into_owned(), scale)
        })
        .reduce(|| (0.0, Gradient::zeros(f)), |(a, ga), (b, gb)| (a + b, ga.add(gb)));
    Ok((sse * scale, grad))
}

fn affine(inputs: &DMatrix<f64>, layer: &crate::netcore::Layer) -> DMatrix<f64> {
    let mut z = inputs * layer.weights.transpose();
    for mut row in z.row_iter_mut() {
        row += layer.bias.transpose();
    }
    z
}

/// Sum of squared residuals on one block and its share of the gradient.
fn chunk_gradient(f: &FiniteNetwork, xs: &DMatrix<f64>, ys: &DVector<f64>, scale: f64) -> (f64, Gradient) {
    let act = f.activation();
    let layers = f.layers();
    let depth = layers.len();
    // pre[ℓ] and post[ℓ] for the hidden layers; the last affine map is the output
    let mut pre = Vec::with_capacity(depth - 1);
    let mut post = Vec::with_capacity(depth - 1);
    let mut out = affine(xs, &layers[0]);
    for layer in &layers[1..] {
        let h = out.map(|v| act.apply(v));
        let next = affine(&h, layer);
        pre.push(out);
        post.push(h);
        out = next;
    }
    let residual = out.column(0) - ys;
    let sse = residual.norm_squared();
    let mut delta = DMatrix::from_column_slice(ys.len(), 1, (residual * (2.0 * scale)).as_slice());
    let mut grad = Gradient::zeros(f);
    for ell in (0..depth).rev() {
        let input = if ell == 0 { xs } else { &post[ell - 1] };
        grad.weights[ell] = delta.tr_mul(input);
        grad.biases[ell] = delta.row_sum().transpose();
        if ell > 0 {
            let mut back = &delta * &layers[ell].weights;
            for ((g, &z), &h) in back.iter_mut().zip(pre[ell - 1].iter()).zip(post[ell - 1].iter()) {
                *g *= act.derivative_from_output(z, h);
            }
            delta = back;
        }
    }
    (sse, grad)
}

/// Euclidean projection onto `{v : ‖v‖₁ ≤ radius}` by sort-based
/// thresholding. Points already inside come back unchanged; a non-positive
/// radius gives the zero vector.
pub fn l1_ball_project(row: &[f64], radius: f64) -> Vec<f64> {
    if radius <= 0.0 {
        return vec![0.0; row.len()];
    }
    let l1: f64 = row.iter().map(|v| v.abs()).sum();
    if l1 <= radius + PROJECTION_SLACK {
        return row.to_vec();
    }
    let mut u: Vec<f64> = row.iter().map(|v| v.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - radius) / (j + 1) as f64;
        if uj > t {
            theta = t;
        }
    }
    let mut out: Vec<f64> = row.iter().map(|v| v.signum() * (v.abs() - theta).max(0.0)).collect();
    // rounding can leave the sum an ulp or two above the radius
    let mut l1_out: f64 = out.iter().map(|v| v.abs()).sum();
    while l1_out > radius {
        let shrink = radius / l1_out * (1.0 - f64::EPSILON);
        out.iter_mut().for_each(|v| *v *= shrink);
        l1_out = out.iter().map(|v| v.abs()).sum();
    }
    out
}

/// Projects every weight row and clamps every bias so the network lies in F.
pub fn project_onto_class(net: &mut FiniteNetwork, budget: &NormBudget) {
    let r_bar = budget.r_bar();
    for layer in net.layers_mut() {
        for mut row in layer.weights.row_iter_mut() {
            let v: Vec<f64> = row.iter().copied().collect();
            for (dst, p) in row.iter_mut().zip(l1_ball_project(&v, r_bar)) {
                *dst = p;
            }
        }
        layer.bias.apply(|b| *b = b.clamp(-budget.r_b, budget.r_b));
    }
}

fn assert_feasible(net: &FiniteNetwork, budget: &NormBudget, epoch: usize) -> Result<()> {
    let r_bar = budget.r_bar();
    for (i, layer) in net.layers().iter().enumerate() {
        let w = inf_norm(&layer.weights);
        let b = max_norm(&layer.bias);
        if w > r_bar + FEASIBILITY_TOL || b > budget.r_b {
            return Err(Error::Malformed(format!(
                "epoch {epoch}: layer {} left the class (‖W‖∞ = {w}, ‖b‖max = {b})",
                i + 1
            )));
        }
    }
    Ok(())
}

fn step(net: &FiniteNetwork, grad: &Gradient, eta: f64, budget: &NormBudget) -> FiniteNetwork {
    let mut out = net.clone();
    for ((layer, gw), gb) in out.layers_mut().iter_mut().zip(&grad.weights).zip(&grad.biases) {
        layer.weights -= gw * eta;
        layer.bias.axpy(-eta, gb, 1.0);
    }
    project_onto_class(&mut out, budget);
    out
}

/// Starting point for `train`: the warm start (projected onto F) or a
/// random member of F drawn from the `INIT` stream.
pub fn initial_network(
    arch: &Architecture,
    budget: &NormBudget,
    cfg: &TrainConfig,
    warm_start: Option<&FiniteNetwork>,
) -> Result<FiniteNetwork> {
    match cfg.init {
        Init::FstarWarmstart => {
            let start = warm_start.ok_or_else(|| invalid("fstar_warmstart needs a starting network"))?;
            if start.widths() != arch.widths.as_slice() {
                return Err(invalid(format!(
                    "warm start widths {:?} differ from architecture {:?}",
                    start.widths(),
                    arch.widths
                )));
            }
            let mut net = start.clone();
            project_onto_class(&mut net, budget);
            Ok(net)
        }
        Init::RandomInF => {
            let mut rng = task_rng(cfg.seed, &[tag::INIT]);
            FiniteNetwork::random_in_class(&arch.widths, arch.activation, budget, 0.5, &mut rng)
        }
    }
}

/// Projected gradient descent on the empirical risk over F.
pub fn train(
    d: &Dataset,
    arch: &Architecture,
    budget: &NormBudget,
    cfg: &TrainConfig,
    warm_start: Option<&FiniteNetwork>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    budget.validate()?;
    check_sample(&d.xs, &d.ys)?;
    if arch.widths.first() != Some(&d.xs.ncols()) {
        return Err(Error::DimensionMismatch { expected: d.xs.ncols(), got: arch.widths[0] });
    }
    let mut net = initial_network(arch, budget, cfg, warm_start)?;
    match cfg.batch {
        Some(b) if b < d.ys.len() => train_minibatch(d, net, budget, cfg, b),
        _ => {
            let mut eta = cfg.step_size;
            let (mut risk, mut grad) = risk_gradient(&net, &d.xs, &d.ys)?;
            let mut history = vec![risk];
            let mut stop = StopReason::MaxEpochs;
            for epoch in 1..=cfg.max_epochs {
                let mut accepted = None;
                for _ in 0..=MAX_HALVINGS {
                    let cand = step(&net, &grad, eta, budget);
                    let (cand_risk, cand_grad) = risk_gradient(&cand, &d.xs, &d.ys)?;
                    if cand_risk <= risk {
                        accepted = Some((cand, cand_risk, cand_grad));
                        break;
                    }
                    eta *= 0.5;
                }
                let Some((cand, cand_risk, cand_grad)) = accepted else {
                    stop = StopReason::StepUnderflow;
                    break;
                };
                assert_feasible(&cand, budget, epoch)?;
                let improvement = (risk - cand_risk) / risk.max(f64::MIN_POSITIVE);
                net = cand;
                risk = cand_risk;
                grad = cand_grad;
                history.push(risk);
                eta *= cfg.step_decay;
                if improvement < cfg.tol {
                    stop = StopReason::Converged;
                    break;
                }
            }
            Ok(TrainOutcome { net, history, stop, final_step: eta })
        }
    }
}

/// Shuffled mini-batch steps; the step is halved after any epoch whose
/// full-data risk went up.
fn train_minibatch(
    d: &Dataset,
    mut net: FiniteNetwork,
    budget: &NormBudget,
    cfg: &TrainConfig,
    batch: usize,
) -> Result<TrainOutcome> {
    let n = d.ys.len();
    let mut rng = task_rng(cfg.seed, &[tag::BATCH]);
    let mut order: Vec<usize> = (0..n).collect();
    let initial = risk_on(&net, &d.xs, &d.ys)?;
    let limit = DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE);
    let mut history = vec![initial];
    let mut eta = cfg.step_size;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            let xs = d.xs.select_rows(idx);
            let ys = d.ys.select_rows(idx);
            let (_, grad) = risk_gradient(&net, &xs, &ys)?;
            net = step(&net, &grad, eta, budget);
        }
        assert_feasible(&net, budget, epoch)?;
        let risk = risk_on(&net, &d.xs, &d.ys)?;
        if !risk.is_finite() || risk > limit {
            return Err(Error::Diverged { epoch, risk, limit });
        }
        let prev = *history.last().unwrap();
        history.push(risk);
        if risk > prev {
            eta *= 0.5;
        } else if (prev - risk) / prev.max(f64::MIN_POSITIVE) < cfg.tol {
            stop = StopReason::Converged;
            break;
        }
        eta *= cfg.step_decay;
    }
    Ok(TrainOutcome { net, history, stop, final_step: eta })
}

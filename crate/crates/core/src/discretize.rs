//! Node sampling by ridge leverage, ridge fits of the sampled-feature
//! coefficients, and assembly of the finite approximant `f*` of a teacher.
//!
//! Layer `ℓ ≥ 2` of `f*` keeps `m_ℓ` nodes `v_j` of the teacher grid `T_ℓ`
//! with weights `w_j`. Row `i` of its weight matrix approximates the teacher
//! row `τ = v_i^{(ℓ+1)}`, `x ↦ Σ_v h_ℓ(τ,v) η(F_{ℓ−1}(x,v)) Q_ℓ(v)`, by
//! `Σ_j β_ij w_j η(F_{ℓ−1}(x,v_j))`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::delta1;
use crate::error::{invalid, Error, Result};
use crate::netcore::{inf_norm, Activation, FiniteNetwork, Layer, C0, C1};
use crate::seed::{tag, task_rng};
use crate::spectrum::feature_covariance;
use crate::teacher::TeacherNetwork;

fn check_width_args(n: f64, delta: f64) -> Result<()> {
    if !(n >= 0.0 && n.is_finite()) {
        return Err(invalid(format!("degree of freedom {n} must be finite and >= 0")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(invalid(format!("delta = {delta} not in (0, 1/2)")));
    }
    Ok(())
}

fn width_formula(n: f64, delta: f64, k: f64) -> usize {
    if n <= 0.0 {
        return 1;
    }
    let m = (5.0 * n * (k * n / delta).ln()).ceil();
    if m < 1.0 {
        1
    } else {
        m as usize
    }
}

/// `⌈5N·ln(32N/δ)⌉`, at least 1: the width that makes the per-layer
/// approximation guarantee hold.
pub fn min_width(n: f64, delta: f64) -> Result<usize> {
    check_width_args(n, delta)?;
    Ok(width_formula(n, delta, 32.0))
}

/// `⌈5N·ln(16N/δ)⌉`, the (smaller) width the node sampling itself needs.
pub fn min_width_sampling(n: f64, delta: f64) -> Result<usize> {
    check_width_args(n, delta)?;
    Ok(width_formula(n, delta, 16.0))
}

/// `(1 − 2δ)^{-1}`, the cap on `(1/m)·Σ w_j²`.
pub fn weight_cap(delta: f64) -> f64 {
    1.0 / (1.0 - 2.0 * delta)
}

/// How nodes are picked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// i.i.d. draws from the λ-ridge-leverage distribution.
    #[default]
    Leverage,
    /// Every node once, `w_v = √(M·Q(v))`.
    Exhaustive,
}

/// Nodes kept at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledNodes {
    pub layer: usize,
    /// 0-based indices into `T_ℓ`.
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    /// Set when the leverage vanished and nodes were drawn uniformly with unit weights.
    pub uniform_fallback: bool,
}

impl SampledNodes {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `(1/m)·Σ w_j²`.
    pub fn mean_sq_weight(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>() / self.weights.len() as f64
    }
}

/// Eigendecomposition of the layer feature covariance
/// `A = Q^{1/2} Φᵀ Φ Q^{1/2} / n`, reusable across `λ` and draws.
#[derive(Clone, Debug)]
pub struct LeverageBasis {
    pub layer: usize,
    q: DVector<f64>,
    eigenvalues: DVector<f64>,
    /// Squared eigenvector entries, `M × M`.
    vec_sq: DMatrix<f64>,
}

impl LeverageBasis {
    /// From activated teacher features `Φ` (`n × M`) and the layer measure.
    pub fn new(layer: usize, features: &DMatrix<f64>, q: &DVector<f64>) -> Result<Self> {
        if features.ncols() != q.len() {
            return Err(Error::DimensionMismatch { expected: q.len(), got: features.ncols() });
        }
        if features.nrows() == 0 {
            return Err(Error::EmptySample);
        }
        let eig = SymmetricEigen::new(feature_covariance(features, q));
        let eigenvalues = eig.eigenvalues.map(|v| v.max(0.0));
        let vec_sq = eig.eigenvectors.map(|v| v * v);
        Ok(Self { layer, q: q.clone(), eigenvalues, vec_sq })
    }

    pub fn for_teacher(t: &TeacherNetwork, ell: usize, xs: &DMatrix<f64>) -> Result<Self> {
        Self::new(ell, &t.features(xs, ell)?, t.measure(ell))
    }

    pub fn num_nodes(&self) -> usize {
        self.q.len()
    }

    /// Empirical eigenvalues `μ̂`, unsorted.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Ridge leverage `[A(A+λI)^{-1}]_vv` per node; sums to `N(λ)`.
    pub fn scores(&self, lambda: f64) -> Result<Vec<f64>> {
        if !(lambda > 0.0) {
            return Err(invalid(format!("lambda = {lambda} must be > 0")));
        }
        let shrink = self.eigenvalues.map(|mu| mu / (mu + lambda));
        Ok((&self.vec_sq * shrink).iter().map(|v| v.max(0.0)).collect())
    }

    /// `N(λ) = Σ μ̂/(μ̂ + λ)`.
    pub fn dof(&self, lambda: f64) -> Result<f64> {
        Ok(self.scores(lambda)?.iter().sum())
    }

    /// Draws `m` nodes from `q(v) = lev_v / N(λ)` with `w_v = √(Q(v)/q(v))`.
    pub fn sample<R: Rng + ?Sized>(&self, lambda: f64, m: usize, rng: &mut R) -> Result<SampledNodes> {
        if m == 0 {
            return Err(invalid("m must be >= 1"));
        }
        let lev = self.scores(lambda)?;
        let total: f64 = lev.iter().sum();
        let peak = lev.iter().cloned().fold(0.0, f64::max);
        if !(total > 0.0) || peak <= 1e-14 * total.max(1.0) || total < 1e-300 {
            let indices: Vec<usize> = (0..m).map(|_| rng.random_range(0..self.num_nodes())).collect();
            return Ok(SampledNodes {
                layer: self.layer,
                indices,
                weights: vec![1.0; m],
                lambda,
                uniform_fallback: true,
            });
        }
        let dist = WeightedIndex::new(&lev).map_err(|e| invalid(format!("leverage distribution: {e}")))?;
        let indices: Vec<usize> = (0..m).map(|_| dist.sample(rng)).collect();
        let weights = indices.iter().map(|&v| (self.q[v] * total / lev[v]).sqrt()).collect();
        Ok(SampledNodes { layer: self.layer, indices, weights, lambda, uniform_fallback: false })
    }
}

/// Every node of a layer, `w_v = √(M·Q(v))`.
pub fn exhaustive_nodes(q: &DVector<f64>, layer: usize, lambda: f64) -> SampledNodes {
    let m = q.len() as f64;
    SampledNodes {
        layer,
        indices: (0..q.len()).collect(),
        weights: q.iter().map(|&p| (m * p).sqrt()).collect(),
        lambda,
        uniform_fallback: false,
    }
}

/// Draws layer-`ℓ` nodes for a teacher from the seed stream `(NODES, ℓ)`.
pub fn sample_nodes(
    t: &TeacherNetwork,
    ell: usize,
    lambda: f64,
    m: usize,
    xs: &DMatrix<f64>,
    seed: u64,
) -> Result<SampledNodes> {
    t.check_layer(ell)?;
    let basis = LeverageBasis::for_teacher(t, ell, xs)?;
    basis.sample(lambda, m, &mut task_rng(seed, &[tag::NODES, ell as u64]))
}

/// Result of [`fit_beta`] for one or more targets.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaFit {
    /// `m × k`, one column per target.
    pub beta: DMatrix<f64>,
    /// Empirical squared `L2` error per target, after any rescale.
    pub errors: Vec<f64>,
    /// `‖β‖²` per target before any rescale.
    pub norms_sq: Vec<f64>,
    /// Targets whose coefficients were pulled back onto `‖β‖² ≤ c1·R²/m`.
    pub rescaled: Vec<bool>,
}

impl BetaFit {
    pub fn rescale_count(&self) -> usize {
        self.rescaled.iter().filter(|&&r| r).count()
    }
}

/// Scaled sampled features `Ψ_ij = w_j·Φ(x_i, v_j)`.
pub fn sampled_design(features: &DMatrix<f64>, nodes: &SampledNodes) -> Result<DMatrix<f64>> {
    if let Some(&bad) = nodes.indices.iter().find(|&&v| v >= features.ncols()) {
        return Err(invalid(format!("node {bad} out of range ({} nodes)", features.ncols())));
    }
    Ok(DMatrix::from_fn(features.nrows(), nodes.len(), |i, j| nodes.weights[j] * features[(i, nodes.indices[j])]))
}

/// Ridge fit `min_β (1/n)‖t − Ψβ‖² + λ·m·‖β‖²` for every column of
/// `targets`, followed by a pull-back onto `‖β‖² ≤ c1·R²/m`.
pub fn fit_beta(
    targets: &DMatrix<f64>,
    features: &DMatrix<f64>,
    nodes: &SampledNodes,
    lambda: f64,
    r: f64,
) -> Result<BetaFit> {
    if targets.nrows() != features.nrows() {
        return Err(Error::DimensionMismatch { expected: features.nrows(), got: targets.nrows() });
    }
    if targets.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    if nodes.is_empty() {
        return Err(invalid("no nodes to fit on"));
    }
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be > 0")));
    }
    let n = targets.nrows() as f64;
    let m = nodes.len();
    let psi = sampled_design(features, nodes)?;
    let mut gram = psi.tr_mul(&psi) / n;
    for j in 0..m {
        gram[(j, j)] += lambda * m as f64;
    }
    let rhs = psi.tr_mul(targets) / n;
    let chol = gram.cholesky().ok_or_else(|| invalid("ridge system not positive definite"))?;
    let mut beta = chol.solve(&rhs);

    let cap = C1 * r * r / m as f64;
    let mut norms_sq = Vec::with_capacity(targets.ncols());
    let mut rescaled = Vec::with_capacity(targets.ncols());
    for mut col in beta.column_iter_mut() {
        let nsq = col.norm_squared();
        norms_sq.push(nsq);
        if nsq > cap {
            col.scale_mut((cap / nsq).sqrt());
            rescaled.push(true);
        } else {
            rescaled.push(false);
        }
    }
    let resid = targets - &psi * &beta;
    let errors = resid.column_iter().map(|c| c.norm_squared() / n).collect();
    Ok(BetaFit { beta, errors, norms_sq, rescaled })
}

/// Monte-Carlo `‖f − f^o‖_{L2(P_X)}` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub rmse: f64,
    /// Delta-method standard error of `rmse`.
    pub std_err: f64,
    pub n: usize,
}

pub fn l2_px_error(f: &FiniteNetwork, t: &TeacherNetwork, xs: &DMatrix<f64>) -> Result<ErrorEstimate> {
    if xs.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    let a = f.eval_batch(xs)?;
    let b = t.eval_batch(xs)?;
    Ok(rmse_estimate(&a, &b))
}

/// Root-mean-square difference of two prediction vectors with its standard error.
pub fn rmse_estimate(a: &DVector<f64>, b: &DVector<f64>) -> ErrorEstimate {
    let n = a.len();
    let sq: Vec<f64> = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).collect();
    let mse = sq.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { sq.iter().map(|d| (d - mse) * (d - mse)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let rmse = mse.sqrt();
    let std_err = if rmse > 0.0 { (var / n as f64).sqrt() / (2.0 * rmse) } else { 0.0 };
    ErrorEstimate { rmse, std_err, n }
}

/// Settings for [`construct_fstar`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    /// `λ_2, …, λ_L`.
    pub lambdas: Vec<f64>,
    /// `m_2, …, m_L` (ignored in exhaustive mode).
    pub widths: Vec<usize>,
    pub delta: f64,
    #[serde(default)]
    pub mode: SampleMode,
}

/// What happened at one layer of the construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub lambda: f64,
    pub m: usize,
    /// Empirical `N_ℓ(λ_ℓ)` on the construction sample.
    pub dof: f64,
    /// `⌈5N·ln(32N/δ)⌉`.
    pub min_width: usize,
    /// `⌈5N·ln(16N/δ)⌉`.
    pub min_width_sampling: usize,
    pub mean_sq_weight: f64,
    pub weight_cap: f64,
    pub uniform_fallback: bool,
    /// Empirical squared error of the row fits feeding layer `ℓ`.
    pub row_error_mean: f64,
    pub row_error_max: f64,
    /// `c0·λ·R²`.
    pub row_error_bound: f64,
    pub beta_rescales: usize,
    /// Rows of `W^(ℓ)` scaled back onto `‖·‖₁ ≤ R̄`, for the layer fed by these nodes.
    pub row_rescales: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub seed: u64,
    pub layers: Vec<LayerReport>,
    /// Rows of `W^(1)` rescaled (zero for a valid teacher).
    pub first_layer_rescales: usize,
    pub delta1: f64,
    /// Filled in by callers that hold out an evaluation sample.
    #[serde(default)]
    pub l2_error: Option<ErrorEstimate>,
}

impl ConstructionReport {
    pub fn total_rescales(&self) -> usize {
        self.first_layer_rescales + self.layers.iter().map(|l| l.row_rescales).sum::<usize>()
    }
}

/// Scales rows of `w` with `‖row‖₁ > cap` onto the ball; returns how many.
fn clamp_rows(w: &mut DMatrix<f64>, cap: f64) -> usize {
    let mut count = 0;
    for mut row in w.row_iter_mut() {
        let l1 = row.iter().map(|v| v.abs()).sum::<f64>();
        if l1 > cap {
            row.scale_mut(cap / l1);
            count += 1;
        }
    }
    count
}

/// Assembles `f*` from a teacher: sampled nodes per layer, exact first layer,
/// ridge-fitted middle and output layers, teacher biases at the kept nodes.
pub fn construct_fstar(
    t: &TeacherNetwork,
    spec: &Construction,
    xs: &DMatrix<f64>,
    seed: u64,
) -> Result<(FiniteNetwork, ConstructionReport)> {
    let depth = t.depth();
    if spec.lambdas.len() + 1 != depth {
        return Err(invalid(format!("need {} lambdas for depth {depth}, got {}", depth - 1, spec.lambdas.len())));
    }
    if spec.mode == SampleMode::Leverage && spec.widths.len() + 1 != depth {
        return Err(invalid(format!("need {} widths for depth {depth}, got {}", depth - 1, spec.widths.len())));
    }
    if spec.widths.contains(&0) {
        return Err(invalid("widths must be >= 1"));
    }
    if !(spec.delta > 0.0 && spec.delta < 0.5) {
        return Err(invalid(format!("delta = {} not in (0, 1/2)", spec.delta)));
    }
    if depth > 1 && xs.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    let budget = *t.budget();
    let r_bar = budget.r_bar();
    let act: Activation = *t.activation();

    // activated teacher features per layer ℓ = 2..L
    let features: Vec<DMatrix<f64>> = if depth > 1 {
        let outs = t.layer_outputs_batch(xs)?;
        outs[..depth - 1].iter().map(|o| o.map(|v| act.apply(v))).collect()
    } else {
        Vec::new()
    };

    let sampled: Vec<(SampledNodes, f64)> = (2..=depth)
        .into_par_iter()
        .map(|ell| {
            let lambda = spec.lambdas[ell - 2];
            let phi = &features[ell - 2];
            let basis = LeverageBasis::new(ell, phi, t.measure(ell))?;
            let dof = basis.dof(lambda)?;
            let nodes = match spec.mode {
                SampleMode::Leverage => {
                    basis.sample(lambda, spec.widths[ell - 2], &mut task_rng(seed, &[tag::NODES, ell as u64]))?
                }
                SampleMode::Exhaustive => exhaustive_nodes(t.measure(ell), ell, lambda),
            };
            Ok((nodes, dof))
        })
        .collect::<Result<Vec<_>>>()?;

    // output nodes of layer ℓ (1-based ℓ, 1..=L): sampled nodes of ℓ+1, or the single output
    let out_nodes = |ell: usize| -> Vec<usize> {
        if ell == depth {
            vec![0]
        } else {
            sampled[ell - 1].0.indices.clone()
        }
    };

    let mut layers = Vec::with_capacity(depth);
    let first_rows = out_nodes(1);
    let h1 = t.weight(1);
    let q1 = t.measure(1);
    let mut w1 = DMatrix::from_fn(first_rows.len(), h1.ncols(), |i, j| h1[(first_rows[i], j)] * q1[j]);
    let first_layer_rescales = clamp_rows(&mut w1, r_bar);
    let b1 = DVector::from_fn(first_rows.len(), |i, _| t.bias(1)[first_rows[i]]);
    layers.push(Layer { weights: w1, bias: b1 });

    let mut reports = Vec::with_capacity(depth.saturating_sub(1));
    for ell in 2..=depth {
        let (nodes, dof) = &sampled[ell - 2];
        let lambda = spec.lambdas[ell - 2];
        let rows = out_nodes(ell);
        let phi = &features[ell - 2];
        let (mut w, errors, beta_rescales) = match spec.mode {
            SampleMode::Leverage => {
                let targets = t.row_targets(phi, ell, &rows)?;
                let fit = fit_beta(&targets, phi, nodes, lambda, budget.r)?;
                let w = DMatrix::from_fn(rows.len(), nodes.len(), |i, j| fit.beta[(j, i)] * nodes.weights[j]);
                let count = fit.rescale_count();
                (w, fit.errors, count)
            }
            SampleMode::Exhaustive => {
                let h = t.weight(ell);
                let q = t.measure(ell);
                let w = DMatrix::from_fn(rows.len(), h.ncols(), |i, j| h[(rows[i], j)] * q[j]);
                (w, vec![0.0; rows.len()], 0)
            }
        };
        let row_rescales = clamp_rows(&mut w, r_bar);
        let bias = DVector::from_fn(rows.len(), |i, _| t.bias(ell)[rows[i]]);
        layers.push(Layer { weights: w, bias });
        let m = nodes.len();
        reports.push(LayerReport {
            layer: ell,
            lambda,
            m,
            dof: *dof,
            min_width: min_width(*dof, spec.delta)?,
            min_width_sampling: min_width_sampling(*dof, spec.delta)?,
            mean_sq_weight: nodes.mean_sq_weight(),
            weight_cap: weight_cap(spec.delta),
            uniform_fallback: nodes.uniform_fallback,
            row_error_mean: errors.iter().sum::<f64>() / errors.len() as f64,
            row_error_max: errors.iter().cloned().fold(0.0, f64::max),
            row_error_bound: C0 * lambda * budget.r * budget.r,
            beta_rescales,
            row_rescales,
        });
    }

    let net = FiniteNetwork::new(layers, act)?;
    debug_assert!(net.layers().iter().all(|l| inf_norm(&l.weights) <= r_bar * (1.0 + 1e-12)));
    let report = ConstructionReport {
        seed,
        layers: reports,
        first_layer_rescales,
        delta1: delta1(&budget, depth, &spec.lambdas)?,
        l2_error: None,
    };
    Ok((net, report))
}

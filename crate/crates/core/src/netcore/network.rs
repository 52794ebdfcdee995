use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Activation, NormBudget};
use crate::error::{invalid, Error, Result};

/// Relative slack for norm-condition checks (row ℓ1 sums accumulate rounding).
pub const NORM_TOL: f64 = 1e-9;

/// Rows per rayon task in batch evaluation.
const BATCH_CHUNK: usize = 256;

/// One affine map `a ↦ W a + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weights: DMatrix::zeros(out_dim, in_dim), bias: DVector::zeros(out_dim) }
    }
}

/// `‖A‖_∞`: maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `‖b‖_max`.
pub fn max_norm(b: &DVector<f64>) -> f64 {
    b.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// A member of the finite class: `(W^(L)η(·) + b^(L)) ∘ ⋯ ∘ (W^(1)x + b^(1))`.
///
/// No activation follows the last layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct FiniteNetwork {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
}

/// Pre-activations `a^(1)(x), …, a^(L)(x)`; the last one is the output.
#[derive(Clone, Debug)]
pub struct Trace {
    pub preactivations: Vec<DVector<f64>>,
}

impl Trace {
    pub fn output(&self) -> f64 {
        self.preactivations.last().map(|a| a[0]).unwrap_or(0.0)
    }
}

/// Outcome of checking the class-F norm caps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormCheck {
    pub weight_norms: Vec<f64>,
    pub bias_norms: Vec<f64>,
    pub r_bar: f64,
    pub r_b: f64,
    pub ok: bool,
}

impl FiniteNetwork {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        let mut widths = vec![layers[0].weights.ncols()];
        for (i, layer) in layers.iter().enumerate() {
            let expected_in = *widths.last().unwrap();
            if layer.weights.ncols() != expected_in {
                return Err(Error::Malformed(format!(
                    "layer {} has {} columns, expected {expected_in}",
                    i + 1,
                    layer.weights.ncols()
                )));
            }
            if layer.bias.len() != layer.weights.nrows() {
                return Err(Error::Malformed(format!(
                    "layer {} bias length {} != rows {}",
                    i + 1,
                    layer.bias.len(),
                    layer.weights.nrows()
                )));
            }
            widths.push(layer.weights.nrows());
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::Malformed(format!("output width {} != 1", widths.last().unwrap())));
        }
        if widths.contains(&0) {
            return Err(Error::Malformed("zero-width layer".into()));
        }
        Ok(Self { widths, layers, activation })
    }

    /// All-zero network with widths `m_1, …, m_{L+1}` (`m_{L+1}` must be 1).
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("need at least input and output widths"));
        }
        let layers = widths.windows(2).map(|w| Layer::zeros(w[1], w[0])).collect();
        Self::new(layers, activation)
    }

    /// Random member of F: each weight row has ℓ1 norm uniform in
    /// `[lo·R̄, R̄]`, each bias uniform in `[−R_b, R_b]`.
    pub fn random_in_class<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        budget: &NormBudget,
        lo: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(widths, activation)?;
        let r_bar = budget.r_bar();
        for layer in &mut net.layers {
            for mut row in layer.weights.row_iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let l1: f64 = row.iter().map(|v| v.abs()).sum();
                let target = r_bar * (lo + (1.0 - lo) * rng.random::<f64>());
                if l1 > 0.0 {
                    row *= target / l1;
                }
            }
            for v in layer.bias.iter_mut() {
                *v = budget.r_b * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of affine layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.widths == other.widths
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_trace(x)?.output())
    }

    pub fn eval_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_dim(x.len())?;
        let mut pre = Vec::with_capacity(self.depth());
        let mut a = &self.layers[0].weights * DVector::from_column_slice(x) + &self.layers[0].bias;
        for layer in &self.layers[1..] {
            let h = a.map(|v| self.activation.apply(v));
            let next = &layer.weights * h + &layer.bias;
            pre.push(a);
            a = next;
        }
        pre.push(a);
        Ok(Trace { preactivations: pre })
    }

    /// Pre-activations for a batch; `xs` holds one input per row and entry
    /// `ℓ` of the result is the `n × m_{ℓ+1}` matrix of `a^(ℓ)`.
    pub fn forward_batch(&self, xs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_dim(xs.ncols())?;
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(self.depth());
        let mut a = affine_rows(xs, &self.layers[0]);
        for layer in &self.layers[1..] {
            let h = a.map(|v| self.activation.apply(v));
            let next = affine_rows(&h, layer);
            out.push(a);
            a = next;
        }
        out.push(a);
        Ok(out)
    }

    /// Outputs for every row of `xs`, evaluated in parallel chunks.
    pub fn eval_batch(&self, xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_dim(xs.ncols())?;
        let n = xs.nrows();
        let starts: Vec<usize> = (0..n).step_by(BATCH_CHUNK).collect();
        let parts: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&s| {
                let rows = BATCH_CHUNK.min(n - s);
                let block = xs.rows(s, rows).into_owned();
                let pre = self.forward_batch(&block).expect("dimension checked");
                pre.last().unwrap().column(0).iter().copied().collect()
            })
            .collect();
        Ok(DVector::from_iterator(n, parts.into_iter().flatten()))
    }

    pub fn weight_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| inf_norm(&l.weights)).collect()
    }

    pub fn bias_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| max_norm(&l.bias)).collect()
    }

    /// Checks `‖W^(ℓ)‖_∞ ≤ R̄` and `‖b^(ℓ)‖_max ≤ R_b` up to [`NORM_TOL`].
    pub fn check_norms(&self, budget: &NormBudget) -> NormCheck {
        let weight_norms = self.weight_norms();
        let bias_norms = self.bias_norms();
        let r_bar = budget.r_bar();
        let ok = weight_norms.iter().all(|&w| w <= r_bar * (1.0 + NORM_TOL))
            && bias_norms.iter().all(|&b| b <= budget.r_b * (1.0 + NORM_TOL));
        NormCheck { weight_norms, bias_norms, r_bar, r_b: budget.r_b, ok }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn affine_rows(inputs: &DMatrix<f64>, layer: &Layer) -> DMatrix<f64> {
    let mut z = inputs * layer.weights.transpose();
    for mut row in z.row_iter_mut() {
        row += layer.bias.transpose();
    }
    z
}

/// `max_i |f(x_i) − g(x_i)|`, a lower estimate of `‖f − g‖_∞`.
pub fn empirical_sup_distance(f: &FiniteNetwork, g: &FiniteNetwork, xs: &DMatrix<f64>) -> Result<f64> {
    if xs.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    if !f.same_architecture(g) {
        return Err(invalid("networks have different architectures"));
    }
    let a = f.eval_batch(xs)?;
    let b = g.eval_batch(xs)?;
    Ok(a.iter().zip(b.iter()).fold(0.0, |m, (u, v)| m.max((u - v).abs())))
}

/// Copy of `net` with every weight row moved by a vector of ℓ1 norm below
/// `eps` and every bias entry moved by less than `eps`.
pub fn perturb<R: Rng + ?Sized>(net: &FiniteNetwork, eps: f64, rng: &mut R) -> FiniteNetwork {
    let mut out = net.clone();
    for layer in &mut out.layers {
        let cols = layer.weights.ncols();
        for mut row in layer.weights.row_iter_mut() {
            let d: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
            let l1: f64 = d.iter().map(|v| v.abs()).sum();
            let size = eps * rng.random::<f64>();
            if l1 > 0.0 {
                for (v, dv) in row.iter_mut().zip(&d) {
                    *v += size * dv / l1;
                }
            }
        }
        for v in layer.bias.iter_mut() {
            *v += eps * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    #[serde(rename = "L")]
    depth: usize,
    widths: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerRepr>,
}

impl From<FiniteNetwork> for NetworkRepr {
    fn from(n: FiniteNetwork) -> Self {
        let layers = n
            .layers
            .iter()
            .map(|l| LayerRepr {
                w: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
                b: l.bias.iter().copied().collect(),
            })
            .collect();
        NetworkRepr { depth: n.depth(), widths: n.widths, activation: n.activation, layers }
    }
}

impl TryFrom<NetworkRepr> for FiniteNetwork {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        let mut layers = Vec::with_capacity(r.layers.len());
        for (i, l) in r.layers.into_iter().enumerate() {
            let rows = l.w.len();
            let cols = l.w.first().map_or(0, |row| row.len());
            if l.w.iter().any(|row| row.len() != cols) {
                return Err(Error::Malformed(format!("layer {} has ragged rows", i + 1)));
            }
            let weights = DMatrix::from_row_iterator(rows, cols, l.w.into_iter().flatten());
            layers.push(Layer { weights, bias: DVector::from_vec(l.b) });
        }
        let net = FiniteNetwork::new(layers, r.activation)?;
        if net.depth() != r.depth || net.widths != r.widths {
            return Err(Error::Malformed(format!(
                "header says L={} widths={:?}, layers give L={} widths={:?}",
                r.depth,
                r.widths,
                net.depth(),
                net.widths
            )));
        }
        Ok(net)
    }
}

use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{invalid, Result};

/// Constant in the per-row approximation error `c0·λ·R²`.
pub const C0: f64 = 4.0;
/// Constant in the coefficient ball `‖β‖² ≤ c1·R²/m`.
pub const C1: f64 = 4.0;

/// Norm caps shared by the teacher and the finite class F.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBudget {
    /// Cap on each weight-function row in `L2(Q)`.
    pub r: f64,
    /// Cap on every bias entry.
    pub r_b: f64,
    /// Input support bound, `‖x‖_max ≤ D_x`.
    pub d_x: f64,
    /// Failure probability of the node draw, in `(0, 1/2)`.
    pub delta: f64,
}

impl NormBudget {
    pub fn new(r: f64, r_b: f64, d_x: f64, delta: f64) -> Result<Self> {
        let b = Self { r, r_b, d_x, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(invalid(format!("R = {} must be finite and >= 0", self.r)));
        }
        if !(self.r_b >= 0.0 && self.r_b.is_finite()) {
            return Err(invalid(format!("R_b = {} must be finite and >= 0", self.r_b)));
        }
        if !(self.d_x > 0.0 && self.d_x.is_finite()) {
            return Err(invalid(format!("D_x = {} must be finite and > 0", self.d_x)));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(invalid(format!("delta = {} not in (0, 1/2)", self.delta)));
        }
        Ok(())
    }

    /// `c_δ = (1 − δ)^{-1}`.
    pub fn c_delta(&self) -> f64 {
        1.0 / (1.0 - self.delta)
    }

    /// `ĉ_δ = c1·c_δ`.
    pub fn c_hat(&self) -> f64 {
        C1 * self.c_delta()
    }

    /// `R̄ = √ĉ_δ·R`, the row-ℓ1 cap of class F.
    pub fn r_bar(&self) -> f64 {
        self.c_hat().sqrt() * self.r
    }

    /// Clips an input into `[−D_x, D_x]^d`.
    pub fn clip_input(&self, x: &mut [f64]) {
        for v in x {
            *v = v.clamp(-self.d_x, self.d_x);
        }
    }
}

/// Sup-norm envelopes for the teacher and for members of F.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupNormBounds {
    /// `R^L·D_x + Σ_ℓ R^{L−ℓ}(R_b + c_η)`.
    pub teacher: f64,
    /// `R̂_∞ = R̄^L·D_x + Σ_ℓ R̄^{L−ℓ}(c_η + R_b)`.
    pub network: f64,
}

fn geometric_tail(base: f64, depth: usize) -> f64 {
    // Σ_{ℓ=1}^{L} base^{L−ℓ}
    (0..depth).map(|k| base.powi(k as i32)).sum()
}

/// Uniform bounds on `|f^o(x)|` and `|f(x)|`, `f ∈ F`, over the input support.
pub fn sup_norm_bound(budget: &NormBudget, depth: usize, activation: &Activation) -> Result<SupNormBounds> {
    if depth == 0 {
        return Err(invalid("depth L must be >= 1"));
    }
    let c = activation.c_eta();
    let l = depth as i32;
    let r = budget.r;
    let rb = budget.r_bar();
    Ok(SupNormBounds {
        teacher: r.powi(l) * budget.d_x + geometric_tail(r, depth) * (budget.r_b + c),
        network: rb.powi(l) * budget.d_x + geometric_tail(rb, depth) * (c + budget.r_b),
    })
}

/// `Ĝ = L·R̄^{L−1}[D_x + L(c_η + R_b)] + Σ_ℓ R̄^{L−ℓ}`: the factor turning a
/// parameter perturbation of size ε into a sup-norm change of at most `ε·Ĝ`.
///
/// The recursion behind this constant only closes when `R̄ ≥ 1`; for smaller
/// `R̄` the true Lipschitz factor can exceed it (see the tests).
pub fn lip_diff_constant(budget: &NormBudget, depth: usize, activation: &Activation) -> Result<f64> {
    if depth == 0 {
        return Err(invalid("depth L must be >= 1"));
    }
    let l = depth as f64;
    let rb = budget.r_bar();
    let c = activation.c_eta();
    Ok(l * rb.powi(depth as i32 - 1) * (budget.d_x + l * (c + budget.r_b)) + geometric_tail(rb, depth))
}

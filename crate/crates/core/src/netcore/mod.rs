//! Activations, the finite network class F, and its sup-norm and
//! parameter-perturbation envelopes.

mod activation;
mod budget;
mod network;

pub use activation::{Activation, ActivationKind};
pub use budget::{lip_diff_constant, sup_norm_bound, NormBudget, SupNormBounds, C0, C1};
pub use network::{
    empirical_sup_distance, inf_norm, max_norm, perturb, FiniteNetwork, Layer, NormCheck, Trace, NORM_TOL,
};

/// Budget with every cap shrunk by `margin`, so that an ε-perturbation
/// (ε ≤ margin) of one of its members stays inside the original class.
pub fn shrunk_budget(budget: &NormBudget, margin: f64) -> NormBudget {
    let scale = budget.c_hat().sqrt();
    NormBudget {
        r: ((budget.r_bar() - margin).max(0.0)) / scale,
        r_b: (budget.r_b - margin).max(0.0),
        ..*budget
    }
}

/// Uniform draws from `[−D_x, D_x]^d`, one per row.
pub fn uniform_inputs<R: rand::Rng + ?Sized>(n: usize, d: usize, d_x: f64, rng: &mut R) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(n, d, |_, _| d_x * (2.0 * rng.random::<f64>() - 1.0))
}

//! Layer kernels `k_ℓ`, their empirical spectra, the degree of freedom
//! `N_ℓ(λ) = Σ_j μ_j / (μ_j + λ)`, and power-law decay fits `μ_j ≈ a·j^{-1/s}`.
//!
//! The integral operator `T_ℓ` is replaced by the Gram matrix over an
//! i.i.d. input sample divided by the sample size.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::teacher::TeacherNetwork;

/// Largest x-sample for an explicit Gram matrix.
pub const MAX_GRAM_SAMPLES: usize = 4096;
/// Eigenvalues below `EIGEN_FLOOR · μ̂_1` are treated as numerical zeros.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Minimum usable eigenvalues for a decay fit.
pub const MIN_FIT_POINTS: usize = 8;
/// Relative asymmetry accepted by [`spectrum_of`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Power-law fit `μ̂_j ≈ a·j^{-1/s}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub s: f64,
    /// Slope of `log μ̂_j` against `log j`.
    pub slope: f64,
    /// Number of eigenvalues used.
    pub used: usize,
    /// False when the fitted `s` falls outside `(0, 1)`; the value is still reported.
    pub s_in_range: bool,
}

/// Empirical eigenvalues of `T_ℓ`, sorted nonincreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer: usize,
    pub mu: Vec<f64>,
    pub n_x: usize,
    #[serde(default)]
    pub fitted: Option<DecayFit>,
}

impl LayerSpectrum {
    pub fn from_eigenvalues(layer: usize, mut mu: Vec<f64>, n_x: usize) -> Self {
        mu.sort_by(|a, b| b.total_cmp(a));
        for v in &mut mu {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Self { layer, mu, n_x, fitted: None }
    }

    pub fn top(&self) -> f64 {
        self.mu.first().copied().unwrap_or(0.0)
    }

    pub fn trace(&self) -> f64 {
        self.mu.iter().sum()
    }

    /// Count of eigenvalues above the numerical floor.
    pub fn rank(&self) -> usize {
        let floor = EIGEN_FLOOR * self.top();
        self.mu.iter().filter(|&&v| v > floor).count()
    }

    /// `μ̂_j` with 1-based `j` (0 past the end).
    pub fn mu_at(&self, j: usize) -> f64 {
        self.mu.get(j.saturating_sub(1)).copied().unwrap_or(0.0)
    }

    pub fn with_fit(mut self) -> Result<Self> {
        self.fitted = Some(fit_decay(&self)?);
        Ok(self)
    }
}

fn weighted_gram(phi: &DMatrix<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let n = phi.nrows();
    let scaled = DMatrix::from_fn(n, phi.ncols(), |i, j| phi[(i, j)] * q[j].sqrt());
    let st = scaled.transpose();
    // row blocks in parallel; each block is an independent product
    let block = 128;
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let parts: Vec<(usize, DMatrix<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let rows = block.min(n - s);
            (s, scaled.rows(s, rows) * &st)
        })
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (s, part) in parts {
        k.rows_mut(s, part.nrows()).copy_from(&part);
    }
    // exact symmetry
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `K_ij = Σ_τ η(F_{ℓ−1}(x_i,τ)) η(F_{ℓ−1}(x_j,τ)) Q_ℓ(τ)` for `2 ≤ ℓ ≤ L`.
pub fn layer_gram(t: &TeacherNetwork, ell: usize, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    t.check_layer(ell)?;
    if xs.nrows() < 2 {
        return Err(invalid("layer Gram needs at least 2 inputs"));
    }
    if xs.nrows() > MAX_GRAM_SAMPLES {
        return Err(invalid(format!("x-sample of {} exceeds the cap {MAX_GRAM_SAMPLES}", xs.nrows())));
    }
    let phi = t.features(xs, ell)?;
    Ok(weighted_gram(&phi, t.measure(ell)))
}

/// Largest entrywise asymmetry relative to the largest entry.
fn asymmetry(k: &DMatrix<f64>) -> f64 {
    let scale = k.amax().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for i in 0..k.nrows() {
        for j in 0..i {
            worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Eigenvalues of `K / n_x`, sorted descending, small negatives clipped to 0.
pub fn spectrum_of(k: &DMatrix<f64>, n_x: usize, layer: usize) -> Result<LayerSpectrum> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch { expected: k.nrows(), got: k.ncols() });
    }
    if n_x == 0 {
        return Err(invalid("n_x must be >= 1"));
    }
    let asym = asymmetry(k);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = SymmetricEigen::new(k / n_x as f64);
    let top = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -1e-8 * top.max(0.0) - 1e-10 {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(LayerSpectrum::from_eigenvalues(layer, eig.eigenvalues.iter().copied().collect(), n_x))
}

/// Spectrum of layer `ℓ` from the smaller of the two equivalent problems:
/// the `n × n` Gram matrix or the `M × M` feature covariance
/// `Q^{1/2} Φᵀ Φ Q^{1/2} / n`. Both have the same nonzero eigenvalues.
pub fn layer_spectrum(t: &TeacherNetwork, ell: usize, xs: &DMatrix<f64>) -> Result<LayerSpectrum> {
    t.check_layer(ell)?;
    let n = xs.nrows();
    if n < 2 {
        return Err(invalid("layer spectrum needs at least 2 inputs"));
    }
    let phi = t.features(xs, ell)?;
    let q = t.measure(ell);
    if n <= phi.ncols() {
        if n > MAX_GRAM_SAMPLES {
            return Err(invalid(format!("x-sample of {n} exceeds the cap {MAX_GRAM_SAMPLES}")));
        }
        return spectrum_of(&weighted_gram(&phi, q), n, ell);
    }
    let cov = feature_covariance(&phi, q);
    spectrum_of(&cov, 1, ell)
}

/// `A = Q^{1/2} Φᵀ Φ Q^{1/2} / n`, the `M × M` companion of `K / n`.
pub fn feature_covariance(phi: &DMatrix<f64>, q: &DVector<f64>) -> DMatrix<f64> {
    let n = phi.nrows() as f64;
    let scaled = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| phi[(i, j)] * (q[j] / n).sqrt());
    let st = scaled.transpose();
    weighted_gram(&st, &DVector::from_element(st.ncols(), 1.0))
}

/// `N(λ) = Σ_j μ̂_j / (μ̂_j + λ)`.
pub fn dof(spec: &LayerSpectrum, lambda: f64) -> Result<f64> {
    dof_of(&spec.mu, lambda)
}

/// Degree of freedom of a raw eigenvalue list.
pub fn dof_of(mu: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be > 0")));
    }
    Ok(mu.iter().map(|&m| m / (m + lambda)).sum())
}

/// Least-squares fit of `log μ̂_j` on `log j` over eigenvalues above the
/// floor; `a = exp(intercept)`, `s = −1/slope`.
///
/// The decay model is an upper envelope; this fits it as an equality.
pub fn fit_decay(spec: &LayerSpectrum) -> Result<DecayFit> {
    let floor = EIGEN_FLOOR * spec.top();
    let points: Vec<(f64, f64)> = spec
        .mu
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > floor && m > 0.0)
        .map(|(i, &m)| (((i + 1) as f64).ln(), m.ln()))
        .collect();
    fit_points(&points)
}

/// Same fit restricted to 1-based indices `lo..=hi`.
pub fn fit_decay_window(spec: &LayerSpectrum, lo: usize, hi: usize) -> Result<DecayFit> {
    let floor = EIGEN_FLOOR * spec.top();
    let points: Vec<(f64, f64)> = (lo.max(1)..=hi.min(spec.mu.len()))
        .map(|j| (j, spec.mu[j - 1]))
        .filter(|&(_, m)| m > floor && m > 0.0)
        .map(|(j, m)| ((j as f64).ln(), m.ln()))
        .collect();
    fit_points(&points)
}

fn fit_points(points: &[(f64, f64)]) -> Result<DecayFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewEigenvalues { usable: points.len(), needed: MIN_FIT_POINTS });
    }
    let (slope, intercept) = least_squares_line(points);
    let s = -1.0 / slope;
    Ok(DecayFit { a: intercept.exp(), s, slope, used: points.len(), s_in_range: s > 0.0 && s < 1.0 })
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn least_squares_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `(λ / a)^{-s}`, the degree of freedom implied by the decay model.
pub fn dof_from_decay(a: f64, s: f64, lambda: f64) -> Result<f64> {
    if !(a > 0.0) || !(lambda > 0.0) {
        return Err(invalid(format!("need a > 0 and lambda > 0 (a = {a}, lambda = {lambda})")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid(format!("decay exponent {s} not in (0, 1)")));
    }
    Ok((lambda / a).powf(-s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, NormBudget};
    use crate::seed::task_rng;
    use crate::teacher::{sample_teacher, InputLaw, TeacherConfig};
    use proptest::prelude::*;

    fn spec(mu: &[f64]) -> LayerSpectrum {
        LayerSpectrum::from_eigenvalues(2, mu.to_vec(), 2)
    }

    fn small_teacher(r: f64) -> TeacherNetwork {
        let cfg = TeacherConfig {
            depth: 3,
            input_dim: 2,
            resolutions: vec![40, 30],
            budget: NormBudget::new(r, 0.5, 1.0, 0.1).unwrap(),
            activation: Activation::relu(),
            decay: None,
        };
        sample_teacher(&cfg, 3).unwrap()
    }

    #[test]
    fn zero_relu_teacher_has_zero_gram() {
        let mut t = small_teacher(0.0);
        let zero = NormBudget::new(0.0, 0.0, 1.0, 0.1).unwrap();
        t = TeacherNetwork::new(
            (1..=3).map(|l| t.measure(l).clone()).collect(),
            (1..=3).map(|l| t.weight(l).clone()).collect(),
            (1..=3).map(|l| DVector::zeros(t.bias(l).len())).collect(),
            Activation::relu(),
            zero,
        )
        .unwrap();
        let xs = InputLaw::uniform(1.0).sample(10, 2, &mut task_rng(1, &[1]));
        assert_eq!(layer_gram(&t, 2, &xs).unwrap().amax(), 0.0);
    }

    #[test]
    fn gram_is_cauchy_schwarz_and_psd() {
        let t = small_teacher(1.5);
        let xs = InputLaw::uniform(1.0).sample(60, 2, &mut task_rng(2, &[1]));
        for ell in 2..=3 {
            let k = layer_gram(&t, ell, &xs).unwrap();
            for i in 0..60 {
                assert!(k[(i, i)] >= 0.0);
                for j in 0..60 {
                    assert!(k[(i, j)].abs() <= (k[(i, i)] * k[(j, j)]).sqrt() * (1.0 + 1e-12));
                }
            }
            let s = spectrum_of(&k, 60, ell).unwrap();
            let trace: f64 = k.diagonal().sum() / 60.0;
            assert!((s.trace() - trace).abs() < 1e-10 * trace.max(1.0));
            let min = SymmetricEigen::new(k.clone() / 60.0).eigenvalues.min();
            assert!(min >= -1e-8 * s.top());
        }
        assert!(matches!(layer_gram(&t, 1, &xs), Err(Error::LayerOutOfRange { .. })));
        assert!(matches!(layer_gram(&t, 4, &xs), Err(Error::LayerOutOfRange { .. })));
    }

    #[test]
    fn duplicate_inputs_give_rank_one_gram() {
        let t = small_teacher(1.5);
        let xs = DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 0.3, -0.4]);
        let k = layer_gram(&t, 3, &xs).unwrap();
        let s = spectrum_of(&k, 2, 3).unwrap();
        assert!((s.mu[0] - k[(0, 0)]).abs() < 1e-12);
        assert!(s.mu[1].abs() < 1e-12);
    }

    #[test]
    fn both_spectrum_routes_agree() {
        let t = small_teacher(1.5);
        let xs = InputLaw::uniform(1.0).sample(200, 2, &mut task_rng(3, &[1]));
        let big = layer_spectrum(&t, 2, &xs).unwrap(); // n > M: covariance route
        let k = layer_gram(&t, 2, &xs).unwrap();
        let direct = spectrum_of(&k, 200, 2).unwrap();
        for j in 0..40 {
            assert!((big.mu[j] - direct.mu[j]).abs() < 1e-10 * direct.top());
        }
    }

    #[test]
    fn spectrum_examples() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(spectrum_of(&k, 2, 2).unwrap().mu, vec![1.0, 1.0]);
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let s = spectrum_of(&k, 2, 2).unwrap();
        assert!((s.mu[0] - 0.75).abs() < 1e-15 && (s.mu[1] - 0.25).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(spectrum_of(&bad, 2, 2), Err(Error::NotSymmetric { .. })));
        let indefinite = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(spectrum_of(&indefinite, 2, 2), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn dof_examples() {
        assert!((dof(&spec(&[1.0, 1.0]), 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((dof(&spec(&[0.75, 0.25]), 0.25).unwrap() - 1.25).abs() < 1e-15);
        let s = spec(&[0.75, 0.25]);
        let big = 1e6 * s.top();
        assert!(dof(&s, big).unwrap() <= s.trace() / big);
        assert!(dof(&s, 0.0).is_err());
        assert!(dof(&s, -1.0).is_err());
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let mu: Vec<f64> = (1..=64).map(|j| (j as f64).powi(-2)).collect();
        let f = fit_decay(&spec(&mu)).unwrap();
        assert!((f.a - 1.0).abs() < 1e-10 && (f.s - 0.5).abs() < 1e-10);
        let mu: Vec<f64> = (1..=64).map(|j| 3.0 * (j as f64).powi(-4)).collect();
        let f = fit_decay(&spec(&mu)).unwrap();
        assert!((f.a - 3.0).abs() < 1e-9 && (f.s - 0.25).abs() < 1e-10);
        assert!(f.s_in_range);
    }

    #[test]
    fn fit_needs_enough_eigenvalues() {
        let mut mu = vec![1.0, 0.5, 0.2, 0.1, 0.05];
        mu.extend(std::iter::repeat_n(0.0, 30));
        assert!(matches!(
            fit_decay(&spec(&mu)),
            Err(Error::TooFewEigenvalues { usable: 5, needed: MIN_FIT_POINTS })
        ));
    }

    #[test]
    fn out_of_range_exponent_is_reported() {
        let mu: Vec<f64> = (1..=20).map(|j| (j as f64).powf(-0.5)).collect();
        let f = fit_decay(&spec(&mu)).unwrap();
        assert!((f.s - 2.0).abs() < 1e-9);
        assert!(!f.s_in_range);
    }

    #[test]
    fn decay_model_dof() {
        assert!((dof_from_decay(1.0, 0.5, 0.01).unwrap() - 10.0).abs() < 1e-12);
        assert!((dof_from_decay(2.5, 0.3, 2.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(dof_from_decay(1.0, 1.0, 0.1).is_err());
        assert!(dof_from_decay(0.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn dof_bounded_by_rank_and_trace() {
        let t = small_teacher(1.5);
        let xs = InputLaw::uniform(1.0).sample(80, 2, &mut task_rng(4, &[1]));
        let s = spectrum_of(&layer_gram(&t, 2, &xs).unwrap(), 80, 2).unwrap();
        for k in 0..30 {
            let lambda = 10f64.powf(-4.0 + 0.15 * k as f64);
            let n = dof(&s, lambda).unwrap();
            assert!(n <= s.rank() as f64 + 1e-9);
            assert!(n <= s.trace() / lambda + 1e-12);
        }
    }

    /// Cyclic Jacobi rotations; eigenvalues of a small symmetric matrix.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - sn * akq;
                        a[k][q] = sn * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - sn * aqk;
                        a[q][k] = sn * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn random_psd_matches_jacobi_oracle() {
        use rand::Rng;
        let mut rng = task_rng(17, &[2]);
        for _ in 0..20 {
            let b = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>() - 0.5);
            let k = &b * b.transpose();
            let s = spectrum_of(&k, 5, 2).unwrap();
            let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| k[(i, j)]).collect()).collect();
            let want = jacobi_eigenvalues(rows);
            for (j, w) in want.iter().enumerate() {
                assert!((s.mu[j] - w / 5.0).abs() < 1e-8, "{j}: {:?} vs {:?}", s.mu, want);
            }
            for lambda in [1e-3, 0.05, 1.0] {
                let oracle: f64 = want.iter().map(|w| (w / 5.0).max(0.0)).map(|m| m / (m + lambda)).sum();
                assert!((dof(&s, lambda).unwrap() - oracle).abs() < 1e-8);
            }
        }
    }

    /// One-hidden-layer tanh teacher calibrated to decay exponent 0.5.
    fn decay_teacher() -> &'static TeacherNetwork {
        static T: std::sync::OnceLock<TeacherNetwork> = std::sync::OnceLock::new();
        T.get_or_init(|| {
            let cfg = TeacherConfig {
                depth: 2,
                input_dim: 4,
                resolutions: vec![512],
                budget: NormBudget::new(1.0, 0.5, 40.0, 0.1).unwrap(),
                activation: Activation::tanh(),
                decay: Some(0.5),
            };
            sample_teacher(&cfg, 2).unwrap()
        })
    }

    #[test]
    fn calibrated_teacher_decay_on_fresh_sample() {
        let t = decay_teacher();
        let xs = InputLaw::uniform(40.0).sample(2000, 4, &mut task_rng(90, &[1]));
        let s = layer_spectrum(t, 2, &xs).unwrap();
        let fit = fit_decay(&s).unwrap();
        assert!((fit.s - 0.5).abs() <= 0.1, "fitted s = {}", fit.s);
        // the fitted model and the empirical dof agree within a factor 3
        let (lo, hi) = (s.mu_at(20), s.mu_at(2));
        for k in 0..=20 {
            let lambda = (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / 20.0).exp();
            let emp = dof(&s, lambda).unwrap();
            let model = dof_from_decay(fit.a, fit.s, lambda).unwrap();
            assert!(model / emp <= 3.0 && emp / model <= 3.0, "λ={lambda}: {emp} vs {model}");
        }
    }

    #[test]
    fn disjoint_samples_give_similar_dof() {
        let t = decay_teacher();
        let law = InputLaw::uniform(40.0);
        let a = layer_spectrum(t, 2, &law.sample(1500, 4, &mut task_rng(91, &[1]))).unwrap();
        let b = layer_spectrum(t, 2, &law.sample(1500, 4, &mut task_rng(92, &[1]))).unwrap();
        let lo = a.mu_at(10);
        for k in 0..=10 {
            let lambda = lo * 10f64.powf(0.3 * k as f64);
            let (na, nb) = (dof(&a, lambda).unwrap(), dof(&b, lambda).unwrap());
            assert!((na - nb).abs() < 0.25 * na, "λ={lambda}: {na} vs {nb}");
        }
    }

    proptest! {
        #[test]
        fn dof_strictly_decreasing(mu in proptest::collection::vec(1e-6f64..10.0, 1..20), l0 in 1e-4f64..1.0, r in 1.01f64..10.0) {
            let s = spec(&mu);
            prop_assert!(dof(&s, l0).unwrap() > dof(&s, l0 * r).unwrap());
        }
    }
}

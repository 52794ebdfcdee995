// Layer spectrum of a teacher, its power-law fit, and the degree of
// freedom with the width it demands along a `λ` grid.

use deepdof::discretize::min_width;
use deepdof::seed::{tag, task_rng};
use deepdof::spectrum::{dof, dof_from_decay, fit_decay, layer_spectrum};
use deepdof::teacher::{sample_teacher_calibrated, InputLaw, TeacherConfig};
use deepdof::{Activation, NormBudget};

pub fn run_example() -> deepdof::Result<()> {
    let cfg = TeacherConfig {
        depth: 2,
        input_dim: 4,
        resolutions: vec![256],
        budget: NormBudget::new(1.0, 0.5, 40.0, 0.1)?,
        activation: Activation::tanh(),
        decay: Some(0.5),
    };
    let (teacher, _) = sample_teacher_calibrated(&cfg, 3)?;
    let xs = InputLaw::uniform(cfg.budget.d_x).sample(800, 4, &mut task_rng(3, &[tag::XSAMPLE]));
    let spec = layer_spectrum(&teacher, 2, &xs)?;
    let fit = fit_decay(&spec)?;
    println!("top eigenvalues {:?}", spec.mu[..5].iter().map(|m| format!("{m:.2e}")).collect::<Vec<_>>());
    println!("fit μ_j ≈ {:.3}·j^(-1/{:.3}) over {} eigenvalues", fit.a, fit.s, fit.used);

    println!("{:>10} {:>10} {:>10} {:>8}", "lambda", "dof", "model", "width");
    let mut prev = 0.0;
    for k in 0..8 {
        let lam = 10f64.powf(-0.5 - 0.5 * k as f64);
        let n = dof(&spec, lam)?;
        assert!(n > prev);
        prev = n;
        println!("{lam:>10.2e} {n:>10.3} {:>10.3} {:>8}", dof_from_decay(fit.a, fit.s, lam)?, min_width(n, 0.1)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> deepdof::Result<()> {
    run_example()
}

// Turn a three-layer teacher into a finite network `f*` by leverage
// sampling, and compare its held-out error with the approximation bound.

use deepdof::discretize::{construct_fstar, l2_px_error, min_width, Construction, SampleMode};
use deepdof::seed::{tag, task_rng};
use deepdof::spectrum::{dof, layer_spectrum};
use deepdof::teacher::{sample_teacher, InputLaw, TeacherConfig};
use deepdof::{Activation, NormBudget};

pub fn run_example() -> deepdof::Result<()> {
    let budget = NormBudget::new(1.0, 0.5, 3.0, 0.1)?;
    let cfg = TeacherConfig {
        depth: 3,
        input_dim: 3,
        resolutions: vec![128, 96],
        budget,
        activation: Activation::sigmoid(),
        decay: None,
    };
    let teacher = sample_teacher(&cfg, 11)?;
    let law = InputLaw::uniform(budget.d_x);
    let xs = law.sample(600, 3, &mut task_rng(11, &[tag::XSAMPLE]));
    let hold = law.sample(2000, 3, &mut task_rng(11, &[tag::EVAL]));

    for lam in [0.1, 0.01] {
        let widths = (2..=3)
            .map(|ell| min_width(dof(&layer_spectrum(&teacher, ell, &xs)?, lam)?, 0.1))
            .collect::<deepdof::Result<Vec<_>>>()?;
        let spec = Construction { lambdas: vec![lam, lam], widths, delta: 0.1, mode: SampleMode::Leverage };
        let (fstar, report) = construct_fstar(&teacher, &spec, &xs, 5)?;
        let err = l2_px_error(&fstar, &teacher, &hold)?;
        assert!(fstar.check_norms(&budget).ok);
        println!(
            "λ = {lam}: widths {:?}, error {:.2e} ± {:.1e}, bound {:.3}",
            fstar.widths(),
            err.rmse,
            err.std_err,
            report.delta1
        );
        for layer in &report.layers {
            println!(
                "   layer {}: dof {:.2}, mean w² {:.3} (cap {:.3}), row fit {:.2e} (bound {:.2e})",
                layer.layer, layer.dof, layer.mean_sq_weight, layer.weight_cap, layer.row_error_max, layer.row_error_bound
            );
        }
    }

    // keeping every node reproduces the teacher exactly
    let all = Construction { lambdas: vec![0.1, 0.1], widths: vec![], delta: 0.1, mode: SampleMode::Exhaustive };
    let (full, _) = construct_fstar(&teacher, &all, &xs, 0)?;
    println!("exhaustive construction error {:.1e}", l2_px_error(&full, &teacher, &hold)?.rmse);
    Ok(())
}

#[allow(dead_code)]
fn main() -> deepdof::Result<()> {
    run_example()
}

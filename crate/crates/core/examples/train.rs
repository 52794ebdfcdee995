// Norm-constrained least squares over the class F: warm-started at the
// discretized teacher, and from a random member of F.

use deepdof::discretize::{construct_fstar, l2_px_error, Construction, SampleMode};
use deepdof::erm::{train, Architecture, Init, TrainConfig};
use deepdof::seed::{tag, task_rng};
use deepdof::teacher::{generate_dataset, sample_teacher, InputLaw, TeacherConfig};
use deepdof::{Activation, NormBudget};

pub fn run_example() -> deepdof::Result<()> {
    let budget = NormBudget::new(1.0, 0.5, 2.0, 0.1)?;
    let cfg = TeacherConfig {
        depth: 2,
        input_dim: 2,
        resolutions: vec![64],
        budget,
        activation: Activation::elu(1.0)?,
        decay: None,
    };
    let teacher = sample_teacher(&cfg, 21)?;
    let law = InputLaw::uniform(budget.d_x);
    let data = generate_dataset(&teacher, 400, 0.05, law, 21)?;
    let hold = law.sample(2000, 2, &mut task_rng(21, &[tag::EVAL]));

    let spec = Construction { lambdas: vec![0.01], widths: vec![24], delta: 0.1, mode: SampleMode::Leverage };
    let (fstar, _) = construct_fstar(&teacher, &spec, &data.xs, 21)?;
    let arch = Architecture { widths: fstar.widths().to_vec(), activation: *teacher.activation() };

    let warm = train(&data, &arch, &budget, &TrainConfig { max_epochs: 150, ..Default::default() }, Some(&fstar))?;
    let cold_cfg = TrainConfig { max_epochs: 150, init: Init::RandomInF, step_size: 0.5, seed: 3, ..Default::default() };
    let cold = train(&data, &arch, &budget, &cold_cfg, None)?;

    println!("f* error {:.3e}", l2_px_error(&fstar, &teacher, &hold)?.rmse);
    for (name, out) in [("warm start", &warm), ("random start", &cold)] {
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.net.check_norms(&budget).ok);
        println!(
            "{name}: risk {:.4e} -> {:.4e} in {} epochs ({:?}), error {:.3e}",
            out.history[0],
            out.final_risk(),
            out.epochs(),
            out.stop,
            l2_px_error(&out.net, &teacher, &hold)?.rmse
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> deepdof::Result<()> {
    run_example()
}

// Sample a teacher whose layer-2 spectrum decays like `j^{-2}` (s = 0.5),
// draw a noisy regression sample from it and round-trip both through disk.

use deepdof::seed::{derive_seed, tag};
use deepdof::teacher::{generate_dataset, sample_teacher_calibrated, Dataset, InputLaw, TeacherConfig, TeacherNetwork};
use deepdof::{Activation, NormBudget};

pub fn run_example() -> deepdof::Result<()> {
    let cfg = TeacherConfig {
        depth: 2,
        input_dim: 4,
        resolutions: vec![128],
        budget: NormBudget::new(1.0, 0.5, 40.0, 0.1)?,
        activation: Activation::tanh(),
        decay: Some(0.5),
    };
    let master = 7;
    let (teacher, calibration) = sample_teacher_calibrated(&cfg, derive_seed(master, &[tag::TEACHER]))?;
    if let Some(c) = calibration {
        println!("decay target {} achieved {:.3} (first-layer scale {:.3})", c.target, c.achieved, c.scale);
    }
    println!("widths {:?}, budget respected: {}", teacher.widths(), teacher.satisfies_budget());

    let law = InputLaw::uniform(cfg.budget.d_x);
    let data = generate_dataset(&teacher, 200, 0.1, law, derive_seed(master, &[tag::DATA]))?;
    let mean_y = data.ys.mean();
    println!("n = {}, mean response {mean_y:.4}", data.len());

    let dir = std::env::temp_dir().join(format!("deepdof-teacher-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    teacher.save(&dir.join("teacher.json"))?;
    data.save(&dir.join("data.csv"))?;
    let back = TeacherNetwork::load(&dir.join("teacher.json"))?;
    let again = Dataset::load(&dir.join("data.csv"))?;
    assert_eq!(back.eval_batch(&data.xs)?, teacher.eval_batch(&data.xs)?);
    assert_eq!(again.ys, data.ys);
    std::fs::remove_dir_all(&dir)?;
    println!("teacher and data survive a save/load round trip");
    Ok(())
}

#[allow(dead_code)]
fn main() -> deepdof::Result<()> {
    run_example()
}

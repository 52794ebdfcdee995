// Sweep the hidden width at fixed `n`: narrow networks are biased, wide
// ones chase the noise, and the two bound terms move in opposite directions.

use deepdof::experiment::{run_bias_variance_sweep, BiasVarianceConfig, ExperimentConfig};

pub fn run_example() -> deepdof::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.teacher.resolutions = vec![128];
    cfg.spectrum_samples = 500;
    cfg.eval_samples = 1000;
    cfg.seeds = 3;
    cfg.train.max_epochs = 30;
    cfg.bias_variance = BiasVarianceConfig { n: 256, widths: vec![2, 8, 32, 128] };

    let table = run_bias_variance_sweep(&cfg, 5)?;
    println!("{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}", "m", "lambda", "bias", "variance", "approx²", "complex²");
    for row in &table.rows {
        println!(
            "{:>5} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
            row.m,
            row.lambda,
            row.bias.unwrap_or(f64::NAN),
            row.variance_proxy.unwrap_or(f64::NAN),
            row.delta1_sq,
            row.delta2_sq.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> deepdof::Result<()> {
    run_example()
}

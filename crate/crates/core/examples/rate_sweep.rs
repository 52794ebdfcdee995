// A small rate sweep: plan widths for each `n`, discretize, train, and fit
// the slope of the median excess risk against `n`. Writes provenance-stamped
// CSV next to the JSON summary.

use deepdof::bounds::Regime;
use deepdof::experiment::{run_rate_sweep, write_csv_with_provenance, write_json_with_provenance, ExperimentConfig, Provenance};

pub fn run_example() -> deepdof::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.teacher.resolutions = vec![128];
    cfg.n_grid = vec![128, 256, 512, 1024];
    cfg.seeds = 5;
    cfg.spectrum_samples = 500;
    cfg.eval_samples = 1000;
    cfg.train.max_epochs = 20;
    cfg.compare_regime = Some(Regime::Loose);

    let seed = 1;
    let result = run_rate_sweep(&cfg, seed)?;
    for sweep in &result.sweeps {
        for p in &sweep.points {
            println!(
                "{} n = {:>4}: width {:?}, median error {:.3e} (f* {:.3e})",
                sweep.regime,
                p.n,
                p.plan.hidden_widths(),
                p.median_fhat_error.unwrap_or(f64::NAN),
                p.median_fstar_error.unwrap_or(f64::NAN)
            );
        }
        if let Some(s) = &sweep.slope {
            println!("fitted slope {:.3} ± {:.3}, predicted {:.3}", s.slope, s.std_err, sweep.predicted_exponent);
        }
    }
    if let Some(c) = &result.comparison {
        println!("at n = {}: tight {:?} vs loose {:?}", c.n, c.primary_median, c.other_median);
    }

    let dir = std::env::temp_dir().join(format!("deepdof-rate-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let prov = Provenance::new(&cfg, seed)?;
    write_json_with_provenance(&dir.join("rate_sweep.json"), &prov, &result)?;
    write_csv_with_provenance(&dir.join("rate_cells.csv"), &prov, &result.cells)?;
    println!("{}", prov.comment());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> deepdof::Result<()> {
    run_example()
}

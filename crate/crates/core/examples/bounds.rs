// Closed-form bound report for one architecture, and width plans in the
// two regimes for a spectrum decaying with `s = 0.5`.

use deepdof::bounds::{plan_widths, BoundInputs, BoundReport, Regime, SlackRange};
use deepdof::{Activation, NormBudget};

pub fn run_example() -> deepdof::Result<()> {
    let budget = NormBudget::new(1.0, 0.5, 1.0, 0.1)?;
    let report = BoundReport::compute(BoundInputs {
        budget,
        activation: Activation::tanh(),
        widths: vec![4, 64, 32, 1],
        lambdas: vec![0.02, 0.02],
        n: 4096,
        sigma: 0.1,
        r: 1.0,
        r_tilde: 2.0,
        slack_range: SlackRange::Statement,
        eps_grid: vec![1e-3, 1e-2, 1e-1],
    })?;
    println!("approximation {:.4} (loose {:.4})", report.delta1, report.delta1_loose);
    println!("complexity {:.4}, sup bound {:.3}, Lipschitz factor {:.3}", report.delta2, report.r_hat_inf, report.g_hat);
    for (eps, log_n) in &report.covering_log {
        println!("   log covering number at ε = {eps:.0e}: {log_n:.1}");
    }
    println!("excess-risk bracket {:.4e} (constant taken as 1)", report.thm2_rhs);

    for regime in Regime::ALL {
        println!("{regime} regime, predicted exponent {:.3}:", plan_widths(&[(1.0, 0.5)], 1024, 0.1, regime)?.predicted_rate_exponent);
        for n in [1024, 4096, 16384] {
            let plan = plan_widths(&[(1.0, 0.5)], n, 0.1, regime)?;
            let l = &plan.layers[0];
            println!("   n = {n:>5}: λ = {:.4}, dof {:.2}, width {} (min {}, consistency {})", l.lambda, l.dof, l.m, l.min_width, l.consistency_width);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> deepdof::Result<()> {
    run_example()
}

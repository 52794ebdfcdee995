use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use deepdof::bounds::{plan_widths, BoundInputs, BoundReport, Regime, SlackRange};
use deepdof::discretize::{construct_fstar, l2_px_error, min_width, Construction, SampleMode};
use deepdof::erm::{train, Architecture, Init, TrainConfig};
use deepdof::experiment::{
    run_bias_variance_sweep, run_rate_sweep, write_csv_with_provenance, write_json_with_provenance, ExperimentConfig,
    Provenance,
};
use deepdof::seed::{derive_seed, tag, task_rng};
use deepdof::spectrum::{dof, dof_from_decay, fit_decay, layer_spectrum};
use deepdof::teacher::{sample_teacher_calibrated, Dataset, TeacherNetwork};
use deepdof::{Activation, FiniteNetwork, NormBudget, Result};

/// Degree-of-freedom guided construction and training of deep networks.
#[derive(Parser)]
#[command(name = "deepdof", version)]
struct Cli {
    /// Experiment config (JSON); the built-in desk instance when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; falls back to the config's `out_dir`, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample (and calibrate) the teacher described by the config.
    GenTeacher,
    /// Layer spectra and dof(λ) curves of a teacher.
    DofCurve(DofCurveArgs),
    /// Build f* from a teacher by leverage sampling.
    Discretize(DiscretizeArgs),
    /// Norm-constrained least squares on a dataset.
    Train(TrainArgs),
    /// Evaluate every closed-form bound for one architecture.
    BoundsReport(BoundsArgs),
    /// Plan λ and widths from decay fits.
    Plan(PlanArgs),
    /// Error against n under planned widths.
    RateSweep,
    /// Bias and variance against width at fixed n.
    BvSweep,
}

#[derive(Args)]
struct TeacherSource {
    /// Teacher JSON; sampled from the config when omitted.
    #[arg(long)]
    teacher: Option<PathBuf>,
}

#[derive(Args)]
struct DofCurveArgs {
    #[command(flatten)]
    source: TeacherSource,
    /// Points on the log-spaced λ grid.
    #[arg(long, default_value_t = 25)]
    points: usize,
    #[arg(long, default_value_t = 1e-4)]
    lambda_min: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_max: f64,
}

#[derive(Args)]
struct DiscretizeArgs {
    #[command(flatten)]
    source: TeacherSource,
    /// `λ_2, …, λ_L`, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    /// `m_2, …, m_L`; defaults to the minimal widths for the given λ.
    #[arg(long, value_delimiter = ',')]
    widths: Vec<usize>,
    /// Keep every node (m_ℓ = M_ℓ).
    #[arg(long)]
    exhaustive: bool,
    /// Inputs used for leverage scores and ridge fits.
    #[arg(long, default_value_t = 2000)]
    x_samples: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV (`x_1,…,x_d,y`).
    #[arg(long)]
    data: PathBuf,
    /// `m_1, …, m_{L+1}`; taken from the warm start when omitted.
    #[arg(long, value_delimiter = ',')]
    widths: Vec<usize>,
    /// NormBudget JSON.
    #[arg(long)]
    budget: PathBuf,
    #[arg(long, value_enum, default_value = "fstar")]
    init: InitArg,
    /// Warm-start network JSON (required with `--init fstar`).
    #[arg(long)]
    fstar: Option<PathBuf>,
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InitArg {
    Fstar,
    Random,
}

#[derive(Args)]
struct BoundsArgs {
    /// NormBudget JSON; the config teacher's budget when omitted.
    #[arg(long)]
    budget: Option<PathBuf>,
    /// `m_1, …, m_{L+1}`.
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    /// `λ_2, …, λ_L`.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value_t = 2.0)]
    r_tilde: f64,
    /// Accept r̃ in (0, 1] instead of (1, 2].
    #[arg(long)]
    appendix_range: bool,
}

#[derive(Args)]
struct PlanArgs {
    /// Per-layer decay `a:s`, repeatable; fitted from the teacher when omitted.
    #[arg(long = "decay")]
    decays: Vec<String>,
    #[command(flatten)]
    source: TeacherSource,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = Regime::Tight)]
    regime: Regime,
}

struct Ctx {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn prov(&self) -> Result<Provenance> {
        Provenance::new(&self.cfg, self.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn teacher(&self, source: &TeacherSource) -> Result<TeacherNetwork> {
        match &source.teacher {
            Some(p) => TeacherNetwork::load(p),
            None => match &self.cfg.teacher_file {
                Some(p) => TeacherNetwork::load(p),
                None => Ok(sample_teacher_calibrated(&self.cfg.teacher, derive_seed(self.seed, &[tag::TEACHER]))?.0),
            },
        }
    }

    fn x_sample(&self, t: &TeacherNetwork, n: usize) -> nalgebra::DMatrix<f64> {
        self.cfg.input_law(t).sample(n, t.input_dim(), &mut task_rng(self.seed, &[tag::XSAMPLE]))
    }
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k < 2 {
        return vec![lo];
    }
    (0..k).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (k - 1) as f64).exp()).collect()
}

fn gen_teacher(ctx: &Ctx) -> Result<()> {
    let (t, cal) = sample_teacher_calibrated(&ctx.cfg.teacher, derive_seed(ctx.seed, &[tag::TEACHER]))?;
    t.save(&ctx.path("teacher.json"))?;
    write_json_with_provenance(&ctx.path("calibration.json"), &ctx.prov()?, &cal)?;
    println!("teacher: widths {:?}, max row norms {:?}", t.widths(), t.max_row_norms());
    if let Some(c) = cal {
        println!(
            "decay calibration: target {:.3}, achieved {:.3}, scale {:.4}{}",
            c.target,
            c.achieved,
            c.scale,
            if c.reachable { "" } else { " (target out of reach)" }
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumRow {
    layer: usize,
    j: usize,
    mu: f64,
}

#[derive(Serialize)]
struct DofRow {
    layer: usize,
    lambda: f64,
    dof: f64,
    dof_fitted: f64,
    min_width: usize,
}

fn dof_curve(ctx: &Ctx, a: &DofCurveArgs) -> Result<()> {
    let t = ctx.teacher(&a.source)?;
    let xs = ctx.x_sample(&t, ctx.cfg.spectrum_samples);
    let mut spec_rows = Vec::new();
    let mut dof_rows = Vec::new();
    for ell in 2..=t.depth() {
        let spec = layer_spectrum(&t, ell, &xs)?;
        let fit = fit_decay(&spec)?;
        println!("layer {ell}: μ1 = {:.4e}, fitted a = {:.4}, s = {:.4}", spec.top(), fit.a, fit.s);
        for (j, &mu) in spec.mu.iter().enumerate() {
            spec_rows.push(SpectrumRow { layer: ell, j: j + 1, mu });
        }
        for lam in log_grid(a.lambda_min, a.lambda_max, a.points) {
            let n = dof(&spec, lam)?;
            dof_rows.push(DofRow {
                layer: ell,
                lambda: lam,
                dof: n,
                dof_fitted: dof_from_decay(fit.a, fit.s, lam)?,
                min_width: min_width(n, ctx.cfg.delta)?,
            });
        }
    }
    let prov = ctx.prov()?;
    write_csv_with_provenance(&ctx.path("spectrum.csv"), &prov, &spec_rows)?;
    write_csv_with_provenance(&ctx.path("dof_curve.csv"), &prov, &dof_rows)?;
    Ok(())
}

fn discretize(ctx: &Ctx, a: &DiscretizeArgs) -> Result<()> {
    let t = ctx.teacher(&a.source)?;
    let xs = ctx.x_sample(&t, a.x_samples);
    let widths = if a.exhaustive || !a.widths.is_empty() {
        a.widths.clone()
    } else {
        (2..=t.depth())
            .zip(&a.lambdas)
            .map(|(ell, &lam)| min_width(dof(&layer_spectrum(&t, ell, &xs)?, lam)?, ctx.cfg.delta))
            .collect::<Result<Vec<_>>>()?
    };
    let mode = if a.exhaustive { SampleMode::Exhaustive } else { SampleMode::Leverage };
    let spec = Construction { lambdas: a.lambdas.clone(), widths, delta: ctx.cfg.delta, mode };
    let (f, mut report) = construct_fstar(&t, &spec, &xs, derive_seed(ctx.seed, &[tag::NODES]))?;
    let eval = ctx.cfg.input_law(&t).sample(ctx.cfg.eval_samples, t.input_dim(), &mut task_rng(ctx.seed, &[tag::EVAL]));
    report.l2_error = Some(l2_px_error(&f, &t, &eval)?);
    std::fs::write(ctx.path("fstar.json"), f.to_json()?)?;
    write_json_with_provenance(&ctx.path("construction.json"), &ctx.prov()?, &report)?;
    let err = report.l2_error.unwrap();
    println!(
        "f*: widths {:?}, ‖f*−f^o‖ = {:.4e} ± {:.1e}, δ̂₁ = {:.4e}, rescales {}",
        f.widths(),
        err.rmse,
        err.std_err,
        report.delta1,
        report.total_rescales()
    );
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    risk: f64,
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let budget: NormBudget = serde_json::from_str(&std::fs::read_to_string(&a.budget)?)?;
    let warm = a.fstar.as_deref().map(|p| -> Result<FiniteNetwork> { FiniteNetwork::from_json(&std::fs::read_to_string(p)?) }).transpose()?;
    let widths = match (&warm, a.widths.is_empty()) {
        (_, false) => a.widths.clone(),
        (Some(w), true) => w.widths().to_vec(),
        (None, true) => return Err(deepdof::Error::InvalidParameter("--widths is required without --fstar".into())),
    };
    let activation = warm.as_ref().map(|w| *w.activation()).unwrap_or(a.activation);
    let mut cfg = TrainConfig {
        init: match a.init {
            InitArg::Fstar => Init::FstarWarmstart,
            InitArg::Random => Init::RandomInF,
        },
        seed: ctx.seed,
        batch: a.batch,
        ..ctx.cfg.train.clone()
    };
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    if let Some(s) = a.step {
        cfg.step_size = s;
    }
    let out = train(&data, &Architecture { widths, activation }, &budget, &cfg, warm.as_ref())?;
    std::fs::write(ctx.path("fhat.json"), out.net.to_json()?)?;
    let rows: Vec<HistoryRow> = out.history.iter().enumerate().map(|(epoch, &risk)| HistoryRow { epoch, risk }).collect();
    write_csv_with_provenance(&ctx.path("history.csv"), &ctx.prov()?, &rows)?;
    println!(
        "risk {:.4e} -> {:.4e} after {} epochs ({:?})",
        out.history[0],
        out.final_risk(),
        out.epochs(),
        out.stop
    );
    Ok(())
}

fn bounds_report(ctx: &Ctx, a: &BoundsArgs) -> Result<()> {
    let budget = match &a.budget {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => ctx.cfg.teacher.budget,
    };
    let inputs = BoundInputs {
        budget,
        activation: a.activation,
        widths: a.widths.clone(),
        lambdas: a.lambdas.clone(),
        n: a.n,
        sigma: a.sigma,
        r: a.r,
        r_tilde: a.r_tilde,
        slack_range: if a.appendix_range { SlackRange::Appendix } else { SlackRange::Statement },
        eps_grid: deepdof::bounds::default_eps_grid(),
    };
    let report = BoundReport::compute(inputs)?;
    write_json_with_provenance(&ctx.path("bounds.json"), &ctx.prov()?, &report)?;
    println!(
        "δ̂₁ = {:.4e}, Δ̂₁ = {:.4e}, δ̂₂ = {:.4e}, Ĝ = {:.4e}, R̂∞ = {:.4e}, bound = {:.4e}",
        report.delta1, report.delta1_loose, report.delta2, report.g_hat, report.r_hat_inf, report.thm2_rhs
    );
    println!(
        "tail probabilities: statement {:.3e}, appendix {:.3e}",
        report.probabilities.statement, report.probabilities.appendix
    );
    Ok(())
}

fn parse_decay(s: &str) -> Result<(f64, f64)> {
    let bad = || deepdof::Error::InvalidParameter(format!("decay {s:?} is not of the form a:s"));
    let (a, e) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, e.trim().parse().map_err(|_| bad())?))
}

fn plan(ctx: &Ctx, a: &PlanArgs) -> Result<()> {
    let decays = if a.decays.is_empty() {
        let t = ctx.teacher(&a.source)?;
        let xs = ctx.x_sample(&t, ctx.cfg.spectrum_samples);
        (2..=t.depth())
            .map(|ell| fit_decay(&layer_spectrum(&t, ell, &xs)?).map(|f| (f.a, f.s)))
            .collect::<Result<Vec<_>>>()?
    } else {
        a.decays.iter().map(|s| parse_decay(s)).collect::<Result<Vec<_>>>()?
    };
    let plan = plan_widths(&decays, a.n, a.delta, a.regime)?;
    write_json_with_provenance(&ctx.path("plan.json"), &ctx.prov()?, &plan)?;
    for l in &plan.layers {
        println!(
            "layer {}: a = {:.4}, s = {:.4}, λ = {:.4e}, dof = {:.2}, m = {} (min {}, consistency {})",
            l.layer, l.a, l.s, l.lambda, l.dof, l.m, l.min_width, l.consistency_width
        );
    }
    println!("predicted exponent of the squared error: {:.4}", plan.predicted_rate_exponent);
    Ok(())
}

#[derive(Serialize)]
struct RatePointRow {
    regime: Regime,
    n: usize,
    lambda: f64,
    width: usize,
    median_fstar_error: Option<f64>,
    median_fhat_error: Option<f64>,
    failures: usize,
}

fn rate_sweep(ctx: &Ctx) -> Result<()> {
    let res = run_rate_sweep(&ctx.cfg, ctx.seed)?;
    let prov = ctx.prov()?;
    write_json_with_provenance(&ctx.path("rate_sweep.json"), &prov, &res)?;
    write_csv_with_provenance(&ctx.path("rate_cells.csv"), &prov, &res.cells)?;
    let rows: Vec<RatePointRow> = res
        .sweeps
        .iter()
        .flat_map(|s| {
            s.points.iter().map(move |p| RatePointRow {
                regime: s.regime,
                n: p.n,
                lambda: p.plan.layers[0].lambda,
                width: p.plan.layers[0].m,
                median_fstar_error: p.median_fstar_error,
                median_fhat_error: p.median_fhat_error,
                failures: p.failures,
            })
        })
        .collect();
    write_csv_with_provenance(&ctx.path("rate_points.csv"), &prov, &rows)?;
    for s in &res.sweeps {
        match s.slope {
            Some(f) => println!(
                "{}: slope {:.3} ± {:.3} (predicted {:.3})",
                s.regime, f.slope, f.std_err, s.predicted_exponent
            ),
            None => println!("{}: too few surviving points for a slope", s.regime),
        }
    }
    if let Some(c) = &res.comparison {
        println!(
            "n = {}: {} median {:?} vs {} median {:?}",
            c.n, c.primary, c.primary_median, c.other, c.other_median
        );
    }
    Ok(())
}

fn bv_sweep(ctx: &Ctx) -> Result<()> {
    let table = run_bias_variance_sweep(&ctx.cfg, ctx.seed)?;
    write_csv_with_provenance(&ctx.path("bias_variance.csv"), &ctx.prov()?, &table.rows)?;
    println!("{:>6} {:>11} {:>11} {:>11} {:>11} {:>11}", "m", "bias", "variance", "excess", "δ̂₁²", "δ̂₂²");
    let f = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
    for r in &table.rows {
        println!(
            "{:>6} {:>11} {:>11} {:>11} {:>11.3e} {:>11}",
            r.m,
            f(r.bias),
            f(r.variance_proxy),
            f(r.excess_risk),
            r.delta1_sq,
            f(r.delta2_sq)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| deepdof::Error::InvalidParameter(e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    let out = cli.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let ctx = Ctx { cfg, seed: cli.seed, out };
    match &cli.cmd {
        Cmd::GenTeacher => gen_teacher(&ctx),
        Cmd::DofCurve(a) => dof_curve(&ctx, a),
        Cmd::Discretize(a) => discretize(&ctx, a),
        Cmd::Train(a) => train_cmd(&ctx, a),
        Cmd::BoundsReport(a) => bounds_report(&ctx, a),
        Cmd::Plan(a) => plan(&ctx, a),
        Cmd::RateSweep => rate_sweep(&ctx),
        Cmd::BvSweep => bv_sweep(&ctx),
    }?;
    println!("outputs in {}", display(&ctx.out));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

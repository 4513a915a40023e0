//! Command-line harness: run experiments from config files, render
//! learning-rate heatmaps, print rate constants, and self-check invariants.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (for example an
//! f*-overestimate aborting a run), 2 on configuration or usage errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polyak_sgd::config::{self, ExperimentSpec, Scenario};
use polyak_sgd::harness::{
    self, good_init_scenario, heatmap_h, run_experiment, svg, AggregateCurve, Experiment, GridSpec,
};
use polyak_sgd::objective::{MiniBatchOracle, ProblemInstance, Sampling};
use polyak_sgd::optimizer::fmt_g17;
use polyak_sgd::theory::{self, Threshold};
use polyak_sgd::vecops::{norm, norm_sq};
use polyak_sgd::GradientSource;

#[derive(Parser)]
#[command(
    name = "polyak-sgd",
    version,
    about = "SGD with Polyak's learning rate"
)]
struct Cli {
    /// Output directory for CSV/SVG artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also render SVG figures next to the CSV files.
    #[arg(long, global = true)]
    svg: bool,
    /// Suppress progress output; errors still go to stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy in a config file and write aggregate curves.
    Run { config: PathBuf },
    /// Like `run`, plus a ranking by final mean excess loss.
    Compare { config: PathBuf },
    /// Render the learning-rate field of each policy on a 2-D grid.
    Heatmap { config: PathBuf },
    /// Print rate constants and bound curves for given problem constants.
    Bounds {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        ell: f64,
        /// Gradient-noise variance σ² at the start point.
        #[arg(long)]
        sigma2: f64,
        /// Gradient-norm ceiling M for the scheduled rate.
        #[arg(long = "M")]
        m: f64,
        #[arg(long)]
        q0: f64,
        #[arg(long, default_value_t = 1000)]
        kmax: u64,
    },
    /// Re-derive core invariants on freshly sampled problems.
    Selftest,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = dispatch(cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config } => cmd_run(&cli, config, false),
        Command::Compare { config } => cmd_run(&cli, config, true),
        Command::Heatmap { config } => cmd_heatmap(&cli, config),
        Command::Bounds {
            mu,
            ell,
            sigma2,
            m,
            q0,
            kmax,
        } => cmd_bounds(&cli, *mu, *ell, *sigma2, *m, *q0, *kmax),
        Command::Selftest => cmd_selftest(&cli),
    }
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, Failure> {
    config::load(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn out_dir(cli: &Cli, name: &str) -> Result<PathBuf, Failure> {
    let dir = cli.out.join(name);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn cmd_run(cli: &Cli, path: &Path, ranked: bool) -> Result<(), Failure> {
    let spec = load_spec(path)?;
    let dir = out_dir(cli, &spec.name)?;

    let mut summary = String::new();
    let curves = match spec.scenario {
        Some(Scenario::GoodInit { q0_small }) => {
            let report = good_init_scenario(
                &spec.problem,
                &spec.source,
                &spec.policies,
                q0_small,
                &spec.seeds,
                spec.run.max_iters,
            )
            .map_err(|e| Failure::runtime(e.to_string()))?;
            for entry in &report.entries {
                summary.push_str(&format!(
                    "good_init: {}, initial h = {}\n",
                    entry.label,
                    fmt_g17(entry.initial_h)
                ));
            }
            report.curves
        }
        None => {
            let experiment = Experiment {
                problem: spec.problem.clone(),
                source: spec.source.clone(),
                policies: spec.policies.clone(),
                seeds: spec.seeds.clone(),
                base_config: spec.run.clone(),
            };
            run_experiment(&experiment).map_err(|e| Failure::runtime(e.to_string()))?
        }
    };

    let mut first_error: Option<String> = None;
    for (label, curve) in &curves {
        let csv_path = dir.join(format!("{label}.csv"));
        harness::write_aggregate_csv(curve, &csv_path)
            .map_err(|e| Failure::runtime(e.to_string()))?;
        for (seed, err) in &curve.errors {
            let message = format!("policy '{label}', seed {seed}: {err}");
            if first_error.is_none() {
                first_error = Some(message.clone());
            }
            summary.push_str(&format!("error: {message}\n"));
        }
        summary.push_str(&summary_line(label, curve));
        summary.push('\n');
    }

    if ranked {
        let mut order: Vec<&(String, AggregateCurve)> = curves.iter().collect();
        order.sort_by(|a, b| {
            let fa = a.1.final_mean_f_excess().unwrap_or(f64::INFINITY);
            let fb = b.1.final_mean_f_excess().unwrap_or(f64::INFINITY);
            fa.total_cmp(&fb)
        });
        summary.push_str("ranking by final mean excess loss:\n");
        for (rank, (label, curve)) in order.iter().enumerate() {
            summary.push_str(&format!(
                "  {}. {label}, {}\n",
                rank + 1,
                fmt_g17(curve.final_mean_f_excess().unwrap_or(f64::NAN))
            ));
        }
    }

    std::fs::write(dir.join("summary.txt"), &summary)
        .map_err(|e| Failure::runtime(e.to_string()))?;
    if cli.svg {
        std::fs::write(dir.join("curves.svg"), svg::curves_svg(&curves))
            .map_err(|e| Failure::runtime(e.to_string()))?;
    }
    if !cli.quiet {
        print!("{summary}");
    }
    match first_error {
        Some(message) => Err(Failure::runtime(message)),
        None => Ok(()),
    }
}

/// `label, final mean q, bound at final k, pass/fail`. A policy passes when
/// every seed completed and (if a bound exists) the final mean q is within
/// three standard errors of it.
fn summary_line(label: &str, curve: &AggregateCurve) -> String {
    let q = curve.final_mean_q();
    let bound = curve.bound.as_ref().and_then(|b| b.last().copied());
    let pass = curve.errors.is_empty()
        && match (q, bound) {
            (Some(q), Some(b)) => q <= b + 3.0 * curve.se_q.last().copied().unwrap_or(0.0),
            (Some(q), None) => q.is_finite(),
            _ => false,
        };
    format!(
        "{label}, {}, {}, {}",
        q.map(fmt_g17).unwrap_or_else(|| "n/a".into()),
        bound.map(fmt_g17).unwrap_or_else(|| "n/a".into()),
        if pass { "pass" } else { "fail" }
    )
}

fn cmd_heatmap(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let spec = load_spec(path)?;
    if spec.problem.d() != 2 {
        return Err(Failure::config(format!(
            "heatmap needs a 2-D problem, got d = {}",
            spec.problem.d()
        )));
    }
    let dir = out_dir(cli, &spec.name)?;
    let grid = GridSpec {
        x_range: (-spec.range, spec.range),
        y_range: (-spec.range, spec.range),
        resolution: spec.resolution,
    };
    let oracle = match &spec.source {
        GradientSource::Full => None,
        GradientSource::MiniBatch(o) => Some(o),
    };
    for (label, policy) in &spec.policies {
        let field = heatmap_h(&spec.problem, policy, &grid, oracle)
            .map_err(|e| Failure::runtime(e.to_string()))?;
        harness::write_heatmap_csv(&field, &dir.join(format!("heatmap_{label}.csv")))
            .map_err(|e| Failure::runtime(e.to_string()))?;
        if cli.svg {
            let mut f_values = Vec::with_capacity(field.h.len());
            for &y in &field.ys {
                for &x in &field.xs {
                    let v = spec
                        .problem
                        .full_value(&[x, y])
                        .map_err(|e| Failure::runtime(e.to_string()))?;
                    f_values.push(v);
                }
            }
            std::fs::write(
                dir.join(format!("heatmap_{label}.svg")),
                svg::heatmap_svg(&field, &f_values, 8),
            )
            .map_err(|e| Failure::runtime(e.to_string()))?;
        }
        if !cli.quiet {
            println!("heatmap: {label} ({0} x {0} grid)", spec.resolution);
        }
    }
    Ok(())
}

fn cmd_bounds(
    cli: &Cli,
    mu: f64,
    ell: f64,
    sigma2: f64,
    m: f64,
    q0: f64,
    kmax: u64,
) -> Result<(), Failure> {
    let constants = theory::RateConstants::new(mu, ell, sigma2, m, q0)
        .map_err(|e| Failure::config(e.to_string()))?;
    let threshold =
        theory::comparison_threshold(m, mu, ell).map_err(|e| Failure::config(e.to_string()))?;
    let verdict = match threshold {
        Threshold::Unbounded => "polyak (every q0)",
        Threshold::Finite(t) if q0 <= t => "polyak",
        Threshold::Finite(_) => "scheduled",
    };

    let dir = out_dir(cli, "bounds")?;
    let ks: Vec<u64> = (0..=kmax).collect();
    let curve = |alpha: f64| -> Result<Vec<f64>, Failure> {
        ks.iter()
            .map(|&k| theory::sgd_bound(alpha, q0, k).map_err(|e| Failure::config(e.to_string())))
            .collect()
    };
    harness::write_bound_csv(
        &ks,
        &curve(constants.alpha_s)?,
        &dir.join("bound_scheduled.csv"),
    )
    .map_err(|e| Failure::runtime(e.to_string()))?;
    harness::write_bound_csv(
        &ks,
        &curve(constants.alpha_p)?,
        &dir.join("bound_polyak.csv"),
    )
    .map_err(|e| Failure::runtime(e.to_string()))?;

    if !cli.quiet {
        println!("alpha_s = {}", fmt_g17(constants.alpha_s));
        println!("alpha_p = {}", fmt_g17(constants.alpha_p));
        match threshold {
            Threshold::Finite(t) => println!("threshold = {}", fmt_g17(t)),
            Threshold::Unbounded => println!("threshold = unbounded"),
        }
        println!("faster constant at q0 = {}: {verdict}", fmt_g17(q0));
    }
    Ok(())
}

// ── selftest ─────────────────────────────────────────────────────────

type Check = (&'static str, fn() -> bool);

fn cmd_selftest(cli: &Cli) -> Result<(), Failure> {
    let checks: [Check; 5] = [
        ("finite-difference gradients", check_fd_gradients),
        ("convexity toolbox", check_toolbox),
        ("lemma constant matches closed form", check_lemma_constant),
        ("comparison predicate", check_comparison),
        ("mini-batch unbiasedness", check_unbiasedness),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let ok = check();
        if !ok {
            failed += 1;
        }
        if !cli.quiet || !ok {
            println!("selftest: {name} ... {}", if ok { "ok" } else { "FAIL" });
        }
    }
    if failed > 0 {
        return Err(Failure::runtime(format!(
            "{failed} selftest check(s) failed"
        )));
    }
    Ok(())
}

fn sample_problems(rng: &mut ChaCha8Rng) -> Vec<ProblemInstance> {
    let d = 3;
    let points = polyak_sgd::objective::data::gaussian_cloud(&[0.5; 3], 1.0, 40, rng.gen());
    let eigenvalues: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..5.0)).collect();
    let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (design, labels) = polyak_sgd::objective::data::logistic_cloud(30, d, rng.gen());
    vec![
        ProblemInstance::centroid(points).unwrap(),
        ProblemInstance::quadratic(eigenvalues, center, 0.3).unwrap(),
        ProblemInstance::logistic(design, labels, 0.1).unwrap(),
    ]
}

fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn check_fd_gradients() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for problem in sample_problems(&mut rng) {
        for _ in 0..20 {
            let x = random_point(&mut rng, problem.d());
            let g = problem.full_gradient(&x).unwrap();
            let eps = 1e-5;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += eps;
                xm[i] -= eps;
                let fd = (problem.full_value(&xp).unwrap() - problem.full_value(&xm).unwrap())
                    / (2.0 * eps);
                if (g[i] - fd).abs() > 1e-6 * (1.0 + g[i].abs()) {
                    return false;
                }
            }
        }
    }
    true
}

fn check_toolbox() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for problem in sample_problems(&mut rng) {
        for _ in 0..200 {
            let x = random_point(&mut rng, problem.d());
            let y = random_point(&mut rng, problem.d());
            match theory::verify_convex_toolbox(&problem, &x, &y) {
                Ok(report) if report.all_pass() => {}
                _ => return false,
            }
        }
    }
    true
}

fn check_lemma_constant() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let mu = rng.gen_range(0.1..5.0);
        let ell = mu * rng.gen_range(1.0..20.0);
        let sigma2 = rng.gen_range(0.0..4.0);
        let q0 = rng.gen_range(1e-3..10.0);
        let alpha = theory::alpha_polyak(mu, ell, sigma2, q0).unwrap();
        let c = theory::lemma_c(1.0 / q0, sigma2 / (2.0 * mu * ell), 1.0 - mu / ell).unwrap();
        if (alpha - c).abs() > 1e-12 * alpha.max(c) {
            return false;
        }
    }
    true
}

fn check_comparison() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let mu = rng.gen_range(0.1..5.0);
        let ell = mu * rng.gen_range(1.001..20.0);
        let sigma2 = rng.gen_range(0.0..4.0);
        let m = rng.gen_range(0.1..10.0);
        let q0 = rng.gen_range(1e-3..10.0);
        let alpha_p = theory::alpha_polyak(mu, ell, sigma2, q0).unwrap();
        let alpha_s = theory::alpha_scheduled(mu, sigma2, m).unwrap();
        let Ok(Threshold::Finite(t)) = theory::comparison_threshold(m, mu, ell) else {
            return false;
        };
        // Skip draws that land within rounding distance of the threshold.
        if (q0 - t).abs() <= 1e-9 * t.max(1.0) {
            continue;
        }
        if (alpha_p >= alpha_s) != (q0 <= t) {
            return false;
        }
    }
    true
}

fn check_unbiasedness() -> bool {
    let points = polyak_sgd::objective::data::gaussian_cloud(&[0.0, 0.0], 1.0, 8, 5);
    let problem = ProblemInstance::centroid(points).unwrap();
    let x = [0.7, -0.3];
    let full = problem.full_gradient(&x).unwrap();
    // The mean over all size-1 batches must equal the full gradient; the
    // Monte-Carlo mean over many seeded draws must approach it.
    let n = problem.n_samples();
    let mut mean = [0.0; 2];
    for i in 0..n {
        let g = problem.sample_gradient(i, &x);
        for (m, v) in mean.iter_mut().zip(&g) {
            *m += v / n as f64;
        }
    }
    if norm(&[mean[0] - full[0], mean[1] - full[1]]) > 1e-12 {
        return false;
    }
    let oracle = MiniBatchOracle::new(2, Sampling::WithoutReplacement, 99);
    let draws = 20_000u64;
    let mut mc = [0.0; 2];
    for k in 0..draws {
        let g = oracle.minibatch_gradient(&problem, &x, k).unwrap();
        for (m, v) in mc.iter_mut().zip(&g) {
            *m += v / draws as f64;
        }
    }
    let err = norm(&[mc[0] - full[0], mc[1] - full[1]]);
    // σ per coordinate shrinks like 1/√draws; 5 standard-error slack.
    let scale = norm_sq(&full).sqrt().max(1.0);
    err < 5.0 * scale / (draws as f64).sqrt() + 1e-3
}

//! Experiment orchestration: multi-seed averaged runs with bound overlays,
//! learning-rate heatmaps, the good-initialization scenario, and CSV export.
//!
//! (policy, seed) cells are independent; with the `parallel` feature (the
//! default) they execute on the rayon pool, and aggregation is a
//! deterministic fold in ascending seed order after all cells complete, so
//! results are identical to the sequential path.

pub mod svg;

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::objective::{MiniBatchOracle, ObjectiveError, ProblemInstance};
use crate::optimizer::{self, fmt_g17, GradientSource, RunConfig, RunError, Trajectory};
use crate::stepsize::{PolicyState, PolicyVariant, StepContext, StepPolicy};
use crate::theory::{self, TheoryError};
use crate::vecops::{norm, norm_sq};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("heatmaps require a 2-dimensional problem, got d = {0}")]
    NotPlanar(usize),
    #[error("experiment needs at least one seed")]
    NoSeeds,
    #[error("duplicate policy label '{0}'")]
    DuplicateLabel(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A multi-policy, multi-seed experiment on one problem.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: ProblemInstance,
    pub source: GradientSource,
    pub policies: Vec<(String, StepPolicy)>,
    pub seeds: Vec<u64>,
    /// Per-run settings; the seed field is replaced per cell.
    pub base_config: RunConfig,
}

/// Per-k statistics of `q_k` and `f_k - f*` across seeds.
#[derive(Debug, Clone)]
pub struct AggregateCurve {
    pub ks: Vec<u64>,
    pub mean_q: Vec<f64>,
    pub se_q: Vec<f64>,
    pub min_q: Vec<f64>,
    pub max_q: Vec<f64>,
    pub mean_f_excess: Vec<f64>,
    /// Theoretical bound values at `ks`, when the rate constants are known.
    pub bound: Option<Vec<f64>>,
    pub n_seeds: usize,
    /// Failed (seed, error) cells; aggregation proceeded without them.
    pub errors: Vec<(u64, RunError)>,
}

impl AggregateCurve {
    pub fn final_mean_q(&self) -> Option<f64> {
        self.mean_q.last().copied()
    }

    pub fn final_mean_f_excess(&self) -> Option<f64> {
        self.mean_f_excess.last().copied()
    }
}

fn aggregate(problem: &ProblemInstance, mut cells: Vec<(u64, Trajectory)>) -> AggregateCurve {
    // Ascending seed order makes the fold independent of completion order.
    cells.sort_by_key(|(seed, _)| *seed);
    let f_star = problem.f_star();
    let mut errors = Vec::new();
    let mut done: Vec<(u64, Trajectory)> = Vec::new();
    for (seed, t) in cells {
        match t.failed() {
            Some(e) => errors.push((seed, e.clone())),
            None => done.push((seed, t)),
        }
    }
    let ks: Vec<u64> = done
        .first()
        .map(|(_, t)| t.records.iter().map(|r| r.k).collect())
        .unwrap_or_default();
    // Identical configs yield identical record grids; anything else (an
    // early convergence on one seed) is aggregated over the common prefix.
    let min_len = done
        .iter()
        .map(|(_, t)| t.records.len())
        .min()
        .unwrap_or(0)
        .min(ks.len());
    let ks = ks[..min_len].to_vec();
    let n = done.len();
    let mut mean_q = vec![0.0; min_len];
    let mut se_q = vec![0.0; min_len];
    let mut min_q = vec![f64::INFINITY; min_len];
    let mut max_q = vec![f64::NEG_INFINITY; min_len];
    let mut mean_f = vec![0.0; min_len];
    for i in 0..min_len {
        let qs: Vec<f64> = done
            .iter()
            .map(|(_, t)| t.records[i].q.unwrap_or(f64::NAN))
            .collect();
        let fs: Vec<f64> = done.iter().map(|(_, t)| t.records[i].f - f_star).collect();
        let m = qs.iter().sum::<f64>() / n as f64;
        mean_q[i] = m;
        mean_f[i] = fs.iter().sum::<f64>() / n as f64;
        min_q[i] = qs.iter().cloned().fold(f64::INFINITY, f64::min);
        max_q[i] = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if n > 1 {
            let var = qs.iter().map(|q| (q - m) * (q - m)).sum::<f64>() / (n as f64 - 1.0);
            se_q[i] = (var / n as f64).sqrt();
        }
    }
    AggregateCurve {
        ks,
        mean_q,
        se_q,
        min_q,
        max_q,
        mean_f_excess: mean_f,
        bound: None,
        n_seeds: n,
        errors,
    }
}

fn run_cells(e: &Experiment, parallel: bool) -> Vec<(String, AggregateCurve)> {
    let cells: Vec<(usize, u64)> = (0..e.policies.len())
        .flat_map(|p| e.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let run_cell = |&(p, seed): &(usize, u64)| {
        let mut config = e.base_config.clone();
        config.seed = seed;
        (
            p,
            seed,
            optimizer::run(&e.problem, &e.source, &e.policies[p].1, &config),
        )
    };
    #[cfg(feature = "parallel")]
    let results: Vec<(usize, u64, Trajectory)> = if parallel {
        cells.par_iter().map(run_cell).collect()
    } else {
        cells.iter().map(run_cell).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(usize, u64, Trajectory)> = {
        let _ = parallel;
        cells.iter().map(run_cell).collect()
    };

    e.policies
        .iter()
        .enumerate()
        .map(|(p, (label, _))| {
            let mine: Vec<(u64, Trajectory)> = results
                .iter()
                .filter(|(pi, _, _)| *pi == p)
                .map(|(_, s, t)| (*s, t.clone()))
                .collect();
            (label.clone(), aggregate(&e.problem, mine))
        })
        .collect()
}

fn validate(e: &Experiment) -> Result<(), HarnessError> {
    if e.seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    for (i, (label, _)) in e.policies.iter().enumerate() {
        if e.policies[i + 1..].iter().any(|(other, _)| other == label) {
            return Err(HarnessError::DuplicateLabel(label.clone()));
        }
    }
    Ok(())
}

/// One trajectory per (policy, seed), aggregated per policy. Bound curves
/// are attached where the policy admits one (see [`policy_bound`]).
pub fn run_experiment(e: &Experiment) -> Result<Vec<(String, AggregateCurve)>, HarnessError> {
    validate(e)?;
    let mut curves = run_cells(e, true);
    for ((_, policy), (_, curve)) in e.policies.iter().zip(curves.iter_mut()) {
        curve.bound = policy_bound(&e.problem, &e.source, &e.base_config.x0, policy, &curve.ks);
    }
    Ok(curves)
}

/// Sequential twin of [`run_experiment`]; same results, no thread pool.
/// Exists as the fallback path and for the scaling benchmarks.
pub fn run_experiment_sequential(
    e: &Experiment,
) -> Result<Vec<(String, AggregateCurve)>, HarnessError> {
    validate(e)?;
    let mut curves = run_cells(e, false);
    for ((_, policy), (_, curve)) in e.policies.iter().zip(curves.iter_mut()) {
        curve.bound = policy_bound(&e.problem, &e.source, &e.base_config.x0, policy, &curve.ks);
    }
    Ok(curves)
}

/// Exact (or estimated, for Logistic) noise variance `E‖e‖²` at x:
/// the gap between the second moment and the squared full-gradient norm.
pub fn noise_variance_at(
    problem: &ProblemInstance,
    source: &GradientSource,
    x: &[f64],
) -> Result<f64, ObjectiveError> {
    match source {
        GradientSource::Full => Ok(0.0),
        GradientSource::MiniBatch(oracle) => {
            let sm = oracle.noise_second_moment(problem, x)?;
            let g = problem.full_gradient(x)?;
            Ok((sm.value - norm_sq(&g)).max(0.0))
        }
    }
}

/// The non-asymptotic bound curve matching a policy, evaluated at `ks`:
/// the scheduled SGD bound for `Scheduled`, the Polyak SGD bound for
/// `PolyakStochastic`, the deterministic linear rate for
/// `PolyakDeterministic` on full gradients; `None` otherwise.
pub fn policy_bound(
    problem: &ProblemInstance,
    source: &GradientSource,
    x0: &[f64],
    policy: &StepPolicy,
    ks: &[u64],
) -> Option<Vec<f64>> {
    let q0 = problem.q(x0)?;
    if q0 == 0.0 {
        return None;
    }
    match &policy.variant {
        PolicyVariant::Scheduled { alpha_s, .. } => Some(
            ks.iter()
                .map(|&k| theory::sgd_bound(*alpha_s, q0, k).ok())
                .collect::<Option<Vec<_>>>()?,
        ),
        PolicyVariant::PolyakStochastic { .. } => {
            let sigma2 = noise_variance_at(problem, source, x0).ok()?;
            let alpha_p = theory::alpha_polyak(problem.mu(), problem.ell(), sigma2, q0).ok()?;
            Some(
                ks.iter()
                    .map(|&k| theory::sgd_bound(alpha_p, q0, k).ok())
                    .collect::<Option<Vec<_>>>()?,
            )
        }
        PolicyVariant::PolyakDeterministic { .. } => match source {
            GradientSource::Full => Some(
                ks.iter()
                    .map(|&k| theory::agd_bound(problem.mu(), problem.ell(), q0, k).ok())
                    .collect::<Option<Vec<_>>>()?,
            ),
            GradientSource::MiniBatch(_) => None,
        },
        _ => None,
    }
}

// ── Heatmaps ─────────────────────────────────────────────────────────

/// Default grid: 101×101 over [-3, 3]².
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_range: (-3.0, 3.0),
            y_range: (-3.0, 3.0),
            resolution: 101,
        }
    }
}

impl GridSpec {
    pub fn xs(&self) -> Vec<f64> {
        linspace(self.x_range.0, self.x_range.1, self.resolution)
    }

    pub fn ys(&self) -> Vec<f64> {
        linspace(self.y_range.0, self.y_range.1, self.resolution)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `h` evaluated pointwise; index `[iy * resolution + ix]`. Singular points
/// (zero gradient at x*) hold NaN.
#[derive(Debug, Clone)]
pub struct HeatmapGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub h: Vec<f64>,
}

/// Evaluates the policy's learning rate on a 2-D grid, using the exact
/// second moment when the oracle provides one.
pub fn heatmap_h(
    problem: &ProblemInstance,
    policy: &StepPolicy,
    grid: &GridSpec,
    oracle: Option<&MiniBatchOracle>,
) -> Result<HeatmapGrid, HarnessError> {
    if problem.d() != 2 {
        return Err(HarnessError::NotPlanar(problem.d()));
    }
    let xs = grid.xs();
    let ys = grid.ys();
    let mut h = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let point = [x, y];
            let f_x = problem.full_value(&point)?;
            let g = problem.full_gradient(&point)?;
            let gsq = norm_sq(&g);
            let second_moment = match oracle {
                Some(o) => Some(o.noise_second_moment(problem, &point)?.value),
                None => Some(gsq),
            };
            let ctx = StepContext {
                k: 0,
                f_x: Some(f_x),
                grad_norm_sq: Some(gsq),
                second_moment,
            };
            let mut state = PolicyState::default();
            h.push(policy.compute_h(&mut state, &ctx).unwrap_or(f64::NAN));
        }
    }
    Ok(HeatmapGrid { xs, ys, h })
}

// ── Good-initialization scenario ─────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GoodInitEntry {
    pub label: String,
    /// The learning rate each policy emits at the (near-optimal) x0.
    pub initial_h: f64,
    pub mean_final_q: f64,
}

#[derive(Debug, Clone)]
pub struct GoodInitReport {
    pub q0_small: f64,
    pub entries: Vec<GoodInitEntry>,
    /// Full aggregate curves from the underlying experiment, for export.
    pub curves: Vec<(String, AggregateCurve)>,
}

/// Starts every policy at distance `√(2 q0_small)` from x* (direction drawn
/// from the first seed) and reports the initial learning rate and the mean
/// final q per policy.
pub fn good_init_scenario(
    problem: &ProblemInstance,
    source: &GradientSource,
    policies: &[(String, StepPolicy)],
    q0_small: f64,
    seeds: &[u64],
    max_iters: u64,
) -> Result<GoodInitReport, HarnessError> {
    use rand::{Rng, SeedableRng};
    let x_star = problem
        .x_star()
        .ok_or(HarnessError::Theory(TheoryError::MissingMinimizer))?
        .to_vec();
    let first_seed = *seeds.first().ok_or(HarnessError::NoSeeds)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(first_seed);
    let mut dir: Vec<f64> = (0..problem.d()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let len = norm(&dir).max(f64::MIN_POSITIVE);
    let radius = (2.0 * q0_small).sqrt();
    for v in &mut dir {
        *v *= radius / len;
    }
    let x0: Vec<f64> = x_star.iter().zip(&dir).map(|(a, b)| a + b).collect();

    let experiment = Experiment {
        problem: problem.clone(),
        source: source.clone(),
        policies: policies.to_vec(),
        seeds: seeds.to_vec(),
        base_config: RunConfig::new(max_iters, 0, x0.clone()),
    };
    let curves = run_experiment(&experiment)?;

    let f_x = problem.full_value(&x0)?;
    let g = problem.full_gradient(&x0)?;
    let gsq = norm_sq(&g);
    let mut entries = Vec::new();
    for ((label, policy), (_, curve)) in policies.iter().zip(&curves) {
        let second_moment = match source {
            GradientSource::Full => Some(gsq),
            GradientSource::MiniBatch(o) => Some(
                o.with_seed(first_seed)
                    .noise_second_moment(problem, &x0)?
                    .value,
            ),
        };
        let ctx = StepContext {
            k: 0,
            f_x: Some(f_x),
            grad_norm_sq: Some(gsq),
            second_moment,
        };
        let mut state = PolicyState::default();
        let initial_h = policy.compute_h(&mut state, &ctx).unwrap_or(f64::NAN);
        entries.push(GoodInitEntry {
            label: label.clone(),
            initial_h,
            mean_final_q: curve.final_mean_q().unwrap_or(f64::NAN),
        });
    }
    Ok(GoodInitReport {
        q0_small,
        entries,
        curves,
    })
}

// ── CSV export ───────────────────────────────────────────────────────

/// `k,mean_q,se_q,min_q,max_q,mean_f_excess[,bound]`; the bound column is
/// present only when constants are known. Bit-stable given identical inputs.
pub fn aggregate_to_csv(curve: &AggregateCurve) -> String {
    let mut out = String::new();
    let with_bound = curve.bound.is_some();
    out.push_str(if with_bound {
        "k,mean_q,se_q,min_q,max_q,mean_f_excess,bound\n"
    } else {
        "k,mean_q,se_q,min_q,max_q,mean_f_excess\n"
    });
    for i in 0..curve.ks.len() {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            curve.ks[i],
            fmt_g17(curve.mean_q[i]),
            fmt_g17(curve.se_q[i]),
            fmt_g17(curve.min_q[i]),
            fmt_g17(curve.max_q[i]),
            fmt_g17(curve.mean_f_excess[i]),
        );
        if let Some(bound) = &curve.bound {
            let _ = write!(out, ",{}", fmt_g17(bound[i]));
        }
        out.push('\n');
    }
    out
}

pub fn write_aggregate_csv(curve: &AggregateCurve, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, aggregate_to_csv(curve)).map_err(io_err(path))
}

/// Heatmap CSV `x,y,h`, one row per grid point (resolution² rows).
pub fn heatmap_to_csv(grid: &HeatmapGrid) -> String {
    let mut out = String::from("x,y,h\n");
    for (iy, &y) in grid.ys.iter().enumerate() {
        for (ix, &x) in grid.xs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_g17(x),
                fmt_g17(y),
                fmt_g17(grid.h[iy * grid.xs.len() + ix])
            );
        }
    }
    out
}

pub fn write_heatmap_csv(grid: &HeatmapGrid, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, heatmap_to_csv(grid)).map_err(io_err(path))
}

/// Bound curve CSV `k,bound` for overlay plotting.
pub fn bound_to_csv(ks: &[u64], bound: &[f64]) -> String {
    let mut out = String::from("k,bound\n");
    for (k, b) in ks.iter().zip(bound) {
        let _ = writeln!(out, "{k},{}", fmt_g17(*b));
    }
    out
}

pub fn write_bound_csv(ks: &[u64], bound: &[f64], path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, bound_to_csv(ks, bound)).map_err(io_err(path))
}

#[cfg(test)]
mod tests;

//! The iteration `x_{k+1} = x_k - h_k g_k` with full trajectory recording.
//!
//! `run` is reentrant: a single run is strictly sequential, but runs with
//! distinct configs share no mutable state and may execute concurrently.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::objective::{
    MiniBatchOracle, MomentMode, ObjectiveError, ProblemInstance, SecondMoment,
};
use crate::stepsize::{PolicyState, StepContext, StepError, StepPolicy};
use crate::vecops::{self, all_finite, norm, norm_sq};

#[derive(Debug, Error, Clone)]
pub enum RunError {
    #[error("policy failed at iteration {at}: {source}")]
    Policy { at: u64, source: StepError },
    #[error("objective failed at iteration {at}: {source}")]
    Objective { at: u64, source: ObjectiveError },
    #[error("non-finite iterate at iteration {at}")]
    NonFinite { at: u64 },
}

/// Where gradients come from: the exact gradient or a seeded mini-batch
/// oracle. The oracle's seed is replaced by [`RunConfig::seed`] at run start,
/// so one seed fully determines a run.
#[derive(Debug, Clone)]
pub enum GradientSource {
    Full,
    MiniBatch(MiniBatchOracle),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub max_iters: u64,
    pub seed: u64,
    pub record_stride: u64,
    /// Early-stop threshold on the gradient norm; 0 disables (the default,
    /// so experiments control the horizon explicitly).
    pub stop_grad_norm: f64,
    pub x0: Vec<f64>,
}

impl RunConfig {
    pub fn new(max_iters: u64, seed: u64, x0: Vec<f64>) -> Self {
        Self {
            max_iters,
            seed,
            record_stride: 1,
            stop_grad_norm: 0.0,
            x0,
        }
    }

    pub fn with_record_stride(mut self, stride: u64) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn with_stop_grad_norm(mut self, threshold: f64) -> Self {
        self.stop_grad_norm = threshold;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub k: u64,
    pub f: f64,
    /// `½‖x_k - x*‖²`, present when the problem knows its minimizer.
    pub q: Option<f64>,
    pub h: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub enum Terminal {
    MaxIters,
    Converged,
    /// The partial trajectory up to the failure is kept: diagnosing f*
    /// mistuning needs the history.
    Error(RunError),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub terminal: Terminal,
    /// `½‖x_0 - x*‖²` when x* is known; recorded at construction.
    pub q0: Option<f64>,
    pub final_x: Vec<f64>,
}

impl Trajectory {
    pub fn failed(&self) -> Option<&RunError> {
        match &self.terminal {
            Terminal::Error(e) => Some(e),
            _ => None,
        }
    }

    /// CSV with header `k,f,q,h,grad_norm`; q empty when x* is unknown.
    /// Numbers carry 17 significant digits for round-trip fidelity.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,f,q,h,grad_norm\n");
        for r in &self.records {
            let q = r.q.map(fmt_g17).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{q},{},{}",
                r.k,
                fmt_g17(r.f),
                fmt_g17(r.h),
                fmt_g17(r.grad_norm)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// 17 significant digits; round-trips f64 exactly.
pub fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One descent step `x - h·g`.
pub fn step(x: &[f64], h: f64, g: &[f64]) -> Result<Vec<f64>, RunError> {
    if x.len() != g.len() {
        return Err(RunError::Objective {
            at: 0,
            source: ObjectiveError::DimensionMismatch {
                expected: x.len(),
                got: g.len(),
            },
        });
    }
    // `h <= 0.0` alone would let NaN steps through.
    if h.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !all_finite(x) || !all_finite(g)
    {
        return Err(RunError::NonFinite { at: 0 });
    }
    let mut next = x.to_vec();
    vecops::axpy_in_place(&mut next, -h, g);
    Ok(next)
}

/// Runs the iteration for one (problem, gradient source, policy) triple.
/// Deterministic given `config.seed` and the inputs; records every
/// `record_stride`-th iterate plus the final one.
pub fn run(
    problem: &ProblemInstance,
    source: &GradientSource,
    policy: &StepPolicy,
    config: &RunConfig,
) -> Trajectory {
    let oracle = match source {
        GradientSource::Full => None,
        GradientSource::MiniBatch(o) => Some(o.with_seed(config.seed)),
    };
    let mut x = config.x0.clone();
    let q0 = problem.q(&x);
    let mut records = Vec::new();
    let mut state = PolicyState::default();
    let mut last_h: Option<f64> = None;

    let fail = |records: Vec<TrajectoryRecord>, x: Vec<f64>, e: RunError| Trajectory {
        records,
        terminal: Terminal::Error(e),
        q0,
        final_x: x,
    };

    let mut terminal = Terminal::MaxIters;
    let mut stop_k = config.max_iters;

    for k in 0..config.max_iters {
        if !all_finite(&x) {
            return fail(records, x, RunError::NonFinite { at: k });
        }
        let g = match &oracle {
            None => problem.full_gradient(&x),
            Some(o) => o.minibatch_gradient(problem, &x, k),
        };
        let g = match g {
            Ok(g) => g,
            Err(e) => return fail(records, x, RunError::Objective { at: k, source: e }),
        };
        let grad_norm = norm(&g);
        if config.stop_grad_norm > 0.0 && grad_norm <= config.stop_grad_norm {
            terminal = Terminal::Converged;
            stop_k = k;
            break;
        }
        let f_x = match problem.full_value(&x) {
            Ok(f) => f,
            Err(e) => return fail(records, x, RunError::Objective { at: k, source: e }),
        };
        let second_moment = if policy.needs_second_moment(k, &state) {
            let sm = match &oracle {
                Some(o) => o.noise_second_moment(problem, &x),
                // Full gradients carry no noise: E‖∇f‖² = ‖g‖².
                None => Ok(SecondMoment {
                    value: norm_sq(&g),
                    mode: MomentMode::Exact,
                }),
            };
            match sm {
                Ok(sm) => Some(sm.value),
                Err(e) => return fail(records, x, RunError::Objective { at: k, source: e }),
            }
        } else {
            None
        };
        let ctx = StepContext {
            k,
            f_x: Some(f_x),
            grad_norm_sq: Some(grad_norm * grad_norm),
            second_moment,
        };
        let h = match policy.compute_h(&mut state, &ctx) {
            Ok(h) => h,
            Err(StepError::Converged) => {
                terminal = Terminal::Converged;
                stop_k = k;
                break;
            }
            Err(e) => return fail(records, x, RunError::Policy { at: k, source: e }),
        };
        if h == 0.0 {
            // Zero numerator: the value gap is exhausted; a zero step is a
            // fixed point, so stop.
            terminal = Terminal::Converged;
            stop_k = k;
            break;
        }
        if k % config.record_stride == 0 {
            records.push(TrajectoryRecord {
                k,
                f: f_x,
                q: problem.q(&x),
                h,
                grad_norm,
            });
        }
        last_h = Some(h);
        x = match step(&x, h, &g) {
            Ok(next) => next,
            Err(RunError::NonFinite { .. }) => {
                return fail(records, x, RunError::NonFinite { at: k })
            }
            Err(e) => return fail(records, x, e),
        };
    }

    // Final iterate, unless it is already the last record or no step was
    // ever taken with a usable h.
    if let Some(h) = last_h {
        if records.last().map(|r| r.k) != Some(stop_k) {
            let f = problem.full_value(&x).unwrap_or(f64::NAN);
            let grad_norm = problem
                .full_gradient(&x)
                .map(|g| norm(&g))
                .unwrap_or(f64::NAN);
            records.push(TrajectoryRecord {
                k: stop_k,
                f,
                q: problem.q(&x),
                h,
                grad_norm,
            });
        }
    }

    Trajectory {
        records,
        terminal,
        q0,
        final_x: x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{data, Sampling};
    use crate::theory::agd_bound;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn centroid_cloud(n: usize, seed: u64) -> ProblemInstance {
        ProblemInstance::centroid(data::gaussian_cloud(&[0.5, -0.5], 1.0, n, seed)).unwrap()
    }

    #[test]
    fn step_hand_values() {
        assert_eq!(step(&[1.0, 1.0], 1.0, &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(step(&[2.0, 0.0], 0.5, &[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(step(&[3.0], 0.1, &[0.0]).unwrap(), vec![3.0]);
        assert!(step(&[1.0], 1.0, &[1.0, 2.0]).is_err());
        assert!(step(&[1.0], 1.0, &[f64::NAN]).is_err());
    }

    #[test]
    fn polyak_jumps_to_minimizer_when_mu_equals_ell() {
        let problem = centroid_cloud(50, 3);
        let policy = StepPolicy::polyak(problem.f_star());
        let config = RunConfig::new(5, 0, vec![4.0, -2.0]);
        let t = run(&problem, &GradientSource::Full, &policy, &config);
        // h = 1/mu = 1 lands on x*; q drops below 1e-20 after one step.
        let after = t.records.iter().find(|r| r.k == 1).expect("recorded");
        assert!(after.q.unwrap() <= 1e-20, "q_1 = {:?}", after.q);
    }

    #[test]
    fn polyak_linear_rate_on_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut eig: Vec<f64> = (0..8).map(|_| rng.gen_range(1.0..10.0)).collect();
        eig[0] = 1.0;
        eig[7] = 10.0;
        let problem = ProblemInstance::quadratic(eig, vec![0.0; 8], 0.0).unwrap();
        let x0: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let policy = StepPolicy::polyak(0.0);
        let config = RunConfig::new(200, 0, x0);
        let t = run(&problem, &GradientSource::Full, &policy, &config);
        let q0 = t.q0.unwrap();
        for r in &t.records {
            let bound = agd_bound(1.0, 10.0, q0, r.k).unwrap();
            assert!(
                r.q.unwrap() <= bound + 1e-12,
                "k={} q={:?} bound={bound}",
                r.k,
                r.q
            );
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_trajectories() {
        let problem = centroid_cloud(40, 5);
        let oracle = MiniBatchOracle::new(8, Sampling::WithoutReplacement, 0);
        let source = GradientSource::MiniBatch(oracle);
        let policy = StepPolicy::polyak_stochastic(problem.f_star(), 1)
            .with_caps(StepPolicy::default_splr_caps(problem.mu()));
        let config = RunConfig::new(100, 77, vec![2.0, 2.0]);
        let a = run(&problem, &source, &policy, &config);
        let b = run(&problem, &source, &policy, &config);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn f_star_overestimate_keeps_partial_trajectory() {
        let problem = centroid_cloud(30, 6);
        // f* guessed above the true minimum: the run must fail once f_k
        // drops below the guess, keeping the history. The h_min cap keeps
        // the steps large enough to cross the f* level set.
        let policy = StepPolicy::polyak(problem.f_star() + 0.5)
            .with_caps(crate::stepsize::Caps::new(0.5, 1.0).unwrap());
        let config = RunConfig::new(1000, 0, vec![5.0, 5.0]);
        let t = run(&problem, &GradientSource::Full, &policy, &config);
        match t.terminal {
            Terminal::Error(RunError::Policy {
                at,
                source: StepError::FStarOverestimate { .. },
            }) => {
                assert!(at > 0);
                assert!(!t.records.is_empty());
            }
            other => panic!("expected FStarOverestimate, got {other:?}"),
        }
    }

    #[test]
    fn stop_grad_norm_terminates_with_converged() {
        let problem = centroid_cloud(30, 8);
        let policy = StepPolicy::fixed(0.5);
        let config = RunConfig::new(10_000, 0, vec![3.0, 3.0]).with_stop_grad_norm(1e-8);
        let t = run(&problem, &GradientSource::Full, &policy, &config);
        assert!(matches!(t.terminal, Terminal::Converged));
        assert!(t.records.last().unwrap().grad_norm <= 1e-6);
    }

    #[test]
    fn record_stride_keeps_final_iterate() {
        let problem = centroid_cloud(30, 9);
        let policy = StepPolicy::fixed(0.1);
        let config = RunConfig::new(103, 0, vec![1.0, 1.0]).with_record_stride(10);
        let t = run(&problem, &GradientSource::Full, &policy, &config);
        let ks: Vec<u64> = t.records.iter().map(|r| r.k).collect();
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*ks.last().unwrap(), 103);
        assert!(ks.contains(&100));
        assert!(t.records.iter().all(|r| r.h > 0.0));
    }

    #[test]
    fn trajectory_f_never_below_f_star() {
        let problem = centroid_cloud(60, 10);
        let oracle = MiniBatchOracle::new(6, Sampling::WithoutReplacement, 0);
        let policy = StepPolicy::epoch_decay(0.6, 6.0, 20);
        let config = RunConfig::new(200, 3, vec![2.0, -2.0]);
        let t = run(
            &problem,
            &GradientSource::MiniBatch(oracle),
            &policy,
            &config,
        );
        for r in &t.records {
            assert!(r.f >= problem.f_star() - 1e-9);
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let problem = centroid_cloud(20, 11);
        let policy = StepPolicy::polyak(problem.f_star());
        let config = RunConfig::new(3, 0, vec![1.5, 0.5]);
        let t = run(&problem, &GradientSource::Full, &policy, &config);
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "k,f,q,h,grad_norm");
        for (line, r) in lines.zip(&t.records) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0].parse::<u64>().unwrap(), r.k);
            assert_eq!(cols[1].parse::<f64>().unwrap(), r.f);
            assert_eq!(cols[2].parse::<f64>().unwrap(), r.q.unwrap());
            assert_eq!(cols[3].parse::<f64>().unwrap(), r.h);
            assert_eq!(cols[4].parse::<f64>().unwrap(), r.grad_norm);
        }
    }

    #[test]
    fn per_step_contraction_in_expectation() {
        // Monte-Carlo check of E[q_{k+1}|x_k] <= (1 - mu h_k) q_k at a fixed
        // point, over 10^4 independent batches.
        let problem = centroid_cloud(50, 12);
        let x = vec![1.7, -0.9];
        let q = problem.q(&x).unwrap();
        let m = 5;
        let base = MiniBatchOracle::new(m, Sampling::WithoutReplacement, 0);
        let sm = base.noise_second_moment(&problem, &x).unwrap();
        let f_x = problem.full_value(&x).unwrap();
        let h = crate::stepsize::splr(f_x, problem.f_star(), sm.value).unwrap();
        let trials = 10_000u64;
        let mut qs = Vec::with_capacity(trials as usize);
        for t in 0..trials {
            let g = base.minibatch_gradient(&problem, &x, t).unwrap();
            let next = step(&x, h, &g).unwrap();
            qs.push(problem.q(&next).unwrap());
        }
        let mean = qs.iter().sum::<f64>() / trials as f64;
        let var = qs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (trials as f64 - 1.0);
        let se = (var / trials as f64).sqrt();
        let rhs = (1.0 - problem.mu() * h) * q;
        assert!(
            mean <= rhs + 3.0 * se,
            "mean {mean} vs bound {rhs} (se {se})"
        );
    }
}

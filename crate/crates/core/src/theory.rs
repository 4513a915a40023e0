//! Rate constants, non-asymptotic bound curves, the T-transformation
//! machinery, and the Polyak-vs-scheduled comparison predicate.
//!
//! The Polyak rate constant is derived from the one-step domination lemma:
//! with `r = 1 - μ/L`, `β = σ²/(2μL)`, and `b = q0⁻¹`,
//! `α_P = lemma_c(b, β, r) = 2μ²/(σ² + 2μ(L-μ)q0)`. This is the constant the
//! induction actually supports, and `lemma_c(q0⁻¹, β, r) == alpha_polyak(...)`
//! holds exactly by construction (a standing cross-check in the tests).

use thiserror::Error;

use crate::objective::ProblemInstance;
use crate::vecops::{dot, half_dist_sq, norm_sq, sub};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("problem does not know its minimizer")]
    MissingMinimizer,
}

/// `α_S = 2μ²/(σ² + M²)` where M bounds the full-gradient norms along the run.
pub fn alpha_scheduled(mu: f64, sigma2: f64, m: f64) -> Result<f64, TheoryError> {
    if mu <= 0.0 || m <= 0.0 || sigma2 < 0.0 {
        return Err(TheoryError::InvalidParameter(
            "alpha_scheduled requires mu, M > 0 and sigma2 >= 0",
        ));
    }
    Ok(2.0 * mu * mu / (sigma2 + m * m))
}

/// `α_P = 2μ²/(σ² + 2μ(L-μ)q0)`, the Polyak SGD rate constant.
pub fn alpha_polyak(mu: f64, ell: f64, sigma2: f64, q0: f64) -> Result<f64, TheoryError> {
    if mu <= 0.0 || ell < mu || sigma2 < 0.0 || q0 <= 0.0 {
        return Err(TheoryError::InvalidParameter(
            "alpha_polyak requires 0 < mu <= ell, sigma2 >= 0, q0 > 0",
        ));
    }
    let denom = sigma2 + 2.0 * mu * (ell - mu) * q0;
    if denom == 0.0 {
        return Err(TheoryError::InvalidParameter(
            "alpha_polyak undefined for sigma2 = 0 with mu = ell",
        ));
    }
    Ok(2.0 * mu * mu / denom)
}

/// Non-asymptotic SGD bound curve `k ↦ 1/(αk + q0⁻¹)`; equals q0 at k = 0.
pub fn sgd_bound(alpha: f64, q0: f64, k: u64) -> Result<f64, TheoryError> {
    if alpha <= 0.0 || q0 <= 0.0 {
        return Err(TheoryError::InvalidParameter(
            "sgd_bound requires alpha, q0 > 0",
        ));
    }
    Ok(1.0 / (alpha * k as f64 + 1.0 / q0))
}

/// Deterministic Polyak GD bound `q_k ≤ (1 - μ/L)^k q0`.
pub fn agd_bound(mu: f64, ell: f64, q0: f64, k: u64) -> Result<f64, TheoryError> {
    if mu <= 0.0 || ell < mu || q0 < 0.0 {
        return Err(TheoryError::InvalidParameter(
            "agd_bound requires 0 < mu <= ell, q0 >= 0",
        ));
    }
    Ok((1.0 - mu / ell).powi(k as i32) * q0)
}

/// Contraction parameters of the per-step estimate
/// `E[q_{k+1}|x_k] ≤ ((β + r q_k)/(β + q_k)) q_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionParams {
    pub r: f64,
    pub beta: f64,
}

impl ContractionParams {
    pub fn new(mu: f64, ell: f64, sigma2: f64) -> Result<Self, TheoryError> {
        if mu <= 0.0 || ell < mu || sigma2 < 0.0 {
            return Err(TheoryError::InvalidParameter(
                "contraction requires 0 < mu <= ell, sigma2 >= 0",
            ));
        }
        Ok(Self {
            r: 1.0 - mu / ell,
            beta: sigma2 / (2.0 * mu * ell),
        })
    }
}

/// `T(x) = ((β + rx)/(β + x))·x`; monotone increasing with T(0) = 0 and
/// T(x) < x for x > 0 when r < 1.
pub fn t_transform(x: f64, beta: f64, r: f64) -> Result<f64, TheoryError> {
    if beta <= 0.0 || !(0.0..1.0).contains(&r) || x < 0.0 {
        return Err(TheoryError::InvalidParameter(
            "t_transform requires beta > 0, r in [0,1), x >= 0",
        ));
    }
    Ok((beta + r * x) / (beta + x) * x)
}

/// `c = (1-r)/(β + r/b)`: the largest slope for which T dominates the
/// sequence `1/(ck + b)` step by step.
pub fn lemma_c(b: f64, beta: f64, r: f64) -> Result<f64, TheoryError> {
    if b <= 0.0 || beta <= 0.0 || !(0.0..1.0).contains(&r) {
        return Err(TheoryError::InvalidParameter(
            "lemma_c requires b, beta > 0, r in [0,1)",
        ));
    }
    Ok((1.0 - r) / (beta + r / b))
}

/// Upper bound for M along the iterate region: `‖∇f(x0)‖ + L√(2q0)`.
/// Conservative on purpose, so the scheduled baseline is not favored by a
/// loose gradient ceiling.
pub fn m_bound_estimate(grad0_norm: f64, ell: f64, q0: f64) -> f64 {
    grad0_norm + ell * (2.0 * q0).sqrt()
}

/// The q0 threshold below which the Polyak constant beats the scheduled one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    /// μ = L: the Polyak constant wins for every q0.
    Unbounded,
}

/// `α_P ≥ α_S  ⟺  q0 ≤ M²/(2μ(L-μ))`.
pub fn comparison_threshold(m: f64, mu: f64, ell: f64) -> Result<Threshold, TheoryError> {
    if mu <= 0.0 || ell < mu || m <= 0.0 {
        return Err(TheoryError::InvalidParameter(
            "comparison_threshold requires 0 < mu <= ell, M > 0",
        ));
    }
    if mu == ell {
        return Ok(Threshold::Unbounded);
    }
    Ok(Threshold::Finite(m * m / (2.0 * mu * (ell - mu))))
}

/// All rate constants for one experimental setup.
#[derive(Debug, Clone, Copy)]
pub struct RateConstants {
    pub alpha_s: f64,
    pub alpha_p: f64,
    pub m_bound: f64,
    pub sigma2: f64,
    pub mu: f64,
    pub ell: f64,
    pub q0: f64,
}

impl RateConstants {
    pub fn new(mu: f64, ell: f64, sigma2: f64, m_bound: f64, q0: f64) -> Result<Self, TheoryError> {
        Ok(Self {
            alpha_s: alpha_scheduled(mu, sigma2, m_bound)?,
            alpha_p: alpha_polyak(mu, ell, sigma2, q0)?,
            m_bound,
            sigma2,
            mu,
            ell,
            q0,
        })
    }
}

/// One checked inequality or identity with its slack (negative slack fails).
#[derive(Debug, Clone, Copy)]
pub struct ToolboxCheck {
    pub name: &'static str,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ToolboxReport {
    pub checks: [ToolboxCheck; 4],
}

impl ToolboxReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Evaluates the four textbook convex-function facts at (x, y):
/// `f(x) - f* ≥ μ q(x)`; strong-convexity at (x, x*); `2L(f(x)-f*) ≥ ‖∇f(x)‖²`;
/// and the exact q-identity
/// `q(x) - q(y) = (x-y)·(y-x*) + ½‖x-y‖²`.
pub fn verify_convex_toolbox(
    problem: &ProblemInstance,
    x: &[f64],
    y: &[f64],
) -> Result<ToolboxReport, TheoryError> {
    report_with_mu(problem, problem.mu(), x, y)
}

fn report_with_mu(
    problem: &ProblemInstance,
    mu: f64,
    x: &[f64],
    y: &[f64],
) -> Result<ToolboxReport, TheoryError> {
    let x_star = problem.x_star().ok_or(TheoryError::MissingMinimizer)?;
    let map_err = |_| TheoryError::InvalidParameter("dimension mismatch");
    let f_x = problem.full_value(x).map_err(map_err)?;
    let f_y = problem.full_value(y).map_err(map_err)?;
    let g_x = problem.full_gradient(x).map_err(map_err)?;
    let f_star = problem.f_star();
    let ell = problem.ell();
    let q_x = half_dist_sq(x, x_star);
    let q_y = half_dist_sq(y, x_star);

    let scale = 1.0f64.max(f_x.abs()).max(f_y.abs()).max(q_x).max(q_y);
    let ineq_tol = -1e-10 * scale;

    let s1 = (f_x - f_star) - mu * q_x;
    // f(x*) - (f(x) + g(x)·(x* - x)) ≥ (μ/2) q(x)
    let s2 = f_star - f_x - dot(&g_x, &sub(x_star, x)) - 0.5 * mu * q_x;
    let s3 = 2.0 * ell * (f_x - f_star) - norm_sq(&g_x);
    let diff = sub(x, y);
    let rhs = dot(&diff, &sub(y, x_star)) + 0.5 * norm_sq(&diff);
    let s4 = -((q_x - q_y) - rhs).abs();

    Ok(ToolboxReport {
        checks: [
            ToolboxCheck {
                name: "strong_convexity_gap",
                slack: s1,
                pass: s1 >= ineq_tol,
            },
            ToolboxCheck {
                name: "mu_convexity_at_minimizer",
                slack: s2,
                pass: s2 >= ineq_tol,
            },
            ToolboxCheck {
                name: "gradient_dominance",
                slack: s3,
                pass: s3 >= ineq_tol,
            },
            ToolboxCheck {
                name: "q_identity",
                slack: s4,
                pass: s4 >= -1e-10,
            },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::data;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_scheduled_hand_values() {
        assert!((alpha_scheduled(1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((alpha_scheduled(2.0, 0.0, 2.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(alpha_scheduled(1.0, 2.0, 1.0).unwrap() < alpha_scheduled(1.0, 1.0, 1.0).unwrap());
        assert!(alpha_scheduled(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn alpha_polyak_hand_values() {
        assert!((alpha_polyak(1.0, 2.0, 2.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        // mu = ell: second denominator term vanishes.
        assert!((alpha_polyak(1.0, 1.0, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        // shrinking q0 raises the constant when L > mu.
        assert!(
            alpha_polyak(1.0, 2.0, 1.0, 0.5).unwrap() > alpha_polyak(1.0, 2.0, 1.0, 1.0).unwrap()
        );
    }

    #[test]
    fn sgd_bound_base_case_and_decrease() {
        assert_eq!(sgd_bound(1.0, 1.0, 0).unwrap(), 1.0);
        assert!((sgd_bound(1.0, 1.0, 9).unwrap() - 0.1).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let a = rng.gen_range(0.01..10.0);
            let q0 = rng.gen_range(0.01..10.0);
            let k = rng.gen_range(0..10_000u64);
            assert!(sgd_bound(a, q0, k + 1).unwrap() < sgd_bound(a, q0, k).unwrap());
        }
    }

    #[test]
    fn agd_bound_hand_values_and_recurrence() {
        assert_eq!(agd_bound(1.0, 1.0, 1.0, 1).unwrap(), 0.0);
        assert!((agd_bound(1.0, 10.0, 1.0, 1).unwrap() - 0.9).abs() < 1e-15);
        assert!((agd_bound(1.0, 10.0, 1.0, 2).unwrap() - 0.81).abs() < 1e-15);
        for k in 0..50 {
            let a = agd_bound(1.0, 10.0, 1.0, k).unwrap();
            let b = agd_bound(1.0, 10.0, 1.0, k + 1).unwrap();
            // powi re-associates products, so allow a couple of ulps.
            assert!((b - 0.9 * a).abs() <= 1e-14 * a);
        }
    }

    #[test]
    fn t_transform_hand_values() {
        assert_eq!(t_transform(0.0, 1.0, 0.0).unwrap(), 0.0);
        assert!((t_transform(1.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = rng.gen_range(1e-6..10.0);
            let beta = rng.gen_range(1e-6..10.0);
            let r = rng.gen_range(0.0..1.0);
            assert!(t_transform(x, beta, r).unwrap() < x);
        }
    }

    #[test]
    fn lemma_c_collapses_when_r_is_zero() {
        assert!((lemma_c(7.3, 2.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        // b=1, beta=1, r=0 -> c=1; T(1) = 0.5 = 1/(c+b), tight at k=0.
        let c = lemma_c(1.0, 1.0, 0.0).unwrap();
        assert_eq!(c, 1.0);
        let t = t_transform(1.0, 1.0, 0.0).unwrap();
        assert!((t - 1.0 / (c + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn lemma_c_equals_alpha_polyak_at_b_inverse_q0() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let mu = rng.gen_range(0.1..5.0);
            let ell = mu + rng.gen_range(0.0..10.0);
            let sigma2 = rng.gen_range(1e-4..10.0);
            let q0 = rng.gen_range(0.01..10.0);
            let cp = ContractionParams::new(mu, ell, sigma2).unwrap();
            let c = lemma_c(1.0 / q0, cp.beta, cp.r).unwrap();
            let a = alpha_polyak(mu, ell, sigma2, q0).unwrap();
            assert!((c - a).abs() <= 1e-12 * a, "c={c} alpha={a}");
        }
    }

    #[test]
    fn comparison_threshold_hand_values_and_degenerate_case() {
        assert_eq!(
            comparison_threshold(1.0, 1.0, 2.0).unwrap(),
            Threshold::Finite(0.5)
        );
        assert_eq!(
            comparison_threshold(1.0, 1.0, 1.0).unwrap(),
            Threshold::Unbounded
        );
        assert!(comparison_threshold(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn comparison_predicate_matches_alpha_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mu = rng.gen_range(0.1..5.0);
            let ell = mu + rng.gen_range(1e-6..10.0);
            let sigma2 = rng.gen_range(0.0..10.0);
            let m = rng.gen_range(0.1..10.0);
            let q0 = rng.gen_range(0.01..10.0);
            let a_s = alpha_scheduled(mu, sigma2, m).unwrap();
            let a_p = alpha_polyak(mu, ell, sigma2, q0).unwrap();
            let Threshold::Finite(t) = comparison_threshold(m, mu, ell).unwrap() else {
                panic!("ell > mu here");
            };
            assert_eq!(a_p >= a_s, q0 <= t, "mu={mu} ell={ell} q0={q0} t={t}");
        }
        // Equality at the threshold, and strict loss past it.
        let (mu, ell, sigma2, m) = (1.3, 4.0, 0.7, 2.0);
        let Threshold::Finite(t) = comparison_threshold(m, mu, ell).unwrap() else {
            unreachable!()
        };
        let a_s = alpha_scheduled(mu, sigma2, m).unwrap();
        let a_p = alpha_polyak(mu, ell, sigma2, t).unwrap();
        assert!((a_p - a_s).abs() <= 1e-12 * a_s);
        assert!(alpha_polyak(mu, ell, sigma2, 2.0 * t).unwrap() < a_s);
    }

    #[test]
    fn polyak_induction_step_is_consistent() {
        // sgd_bound with alpha from alpha_polyak, pushed through T, never
        // exceeds the bound at k+1: exactly the induction step of the rate.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let mu = rng.gen_range(0.1..3.0);
            let ell = mu + rng.gen_range(0.0..5.0);
            let sigma2 = rng.gen_range(1e-4..5.0);
            let q0 = rng.gen_range(0.05..5.0);
            let cp = ContractionParams::new(mu, ell, sigma2).unwrap();
            let alpha = alpha_polyak(mu, ell, sigma2, q0).unwrap();
            for k in [0u64, 1, 2, 10, 100, 1000] {
                let bk = sgd_bound(alpha, q0, k).unwrap();
                let mapped = t_transform(bk, cp.beta, cp.r).unwrap();
                let next = sgd_bound(alpha, q0, k + 1).unwrap();
                assert!(
                    mapped <= next + 1e-12,
                    "k={k}: T(b_k)={mapped} > b_(k+1)={next}"
                );
            }
        }
    }

    #[test]
    fn toolbox_passes_on_valid_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let quad =
            ProblemInstance::quadratic(vec![1.0, 4.0, 9.0], vec![0.5, -1.0, 2.0], 1.0).unwrap();
        let centroid =
            ProblemInstance::centroid(data::gaussian_cloud(&[0.0, 0.0], 1.0, 20, 2)).unwrap();
        for problem in [quad, centroid] {
            for _ in 0..500 {
                let x: Vec<f64> = (0..problem.d()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..problem.d()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let report = verify_convex_toolbox(&problem, &x, &y).unwrap();
                assert!(report.all_pass(), "{:?}", report);
                let q_id = &report.checks[3];
                assert!(q_id.slack >= -1e-10);
            }
        }
    }

    #[test]
    fn corrupted_mu_is_caught_by_the_first_inequality() {
        let problem = ProblemInstance::quadratic(vec![1.0, 10.0], vec![0.0, 0.0], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut failed = false;
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let report = report_with_mu(&problem, 2.0 * problem.mu(), &x, &x).unwrap();
            if !report.checks[0].pass {
                failed = true;
                break;
            }
        }
        assert!(failed, "doubled mu should falsify the strong-convexity gap");
    }

    proptest! {
        #[test]
        fn lemma_domination_property(
            b in 1e-3f64..100.0,
            beta in 1e-6f64..10.0,
            r in 0.0f64..1.0,
            k in 0u64..1000,
        ) {
            prop_assume!(r < 1.0);
            let c = lemma_c(b, beta, r).unwrap();
            let x = 1.0 / (c * k as f64 + b);
            let t = t_transform(x, beta, r).unwrap();
            let next = 1.0 / (c * (k as f64 + 1.0) + b);
            prop_assert!(t <= next + 1e-12);
        }
    }
}

//! Strongly convex test problems with exact constants and gradient oracles.
//!
//! Every problem kind is a finite sum `f(x) = (1/N) Σ f_i(x)`, so stochastic
//! gradients are realized exclusively through mini-batch subsampling of the
//! per-sample gradients; no synthetic noise is injected anywhere.

mod oracle;

pub mod data;

pub use oracle::{MiniBatchOracle, MomentMode, Sampling, SecondMoment};

use thiserror::Error;

use crate::vecops::{self, half_dist_sq, norm_sq};

#[derive(Debug, Error, Clone)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch size {batch} exceeds sample count {n}")]
    BatchTooLarge { batch: usize, n: usize },
    #[error("invalid problem data: {0}")]
    InvalidData(String),
}

/// Centroid problem `f(x) = 1/(2N) Σ ‖x - x_i‖²` over a fixed point cloud.
///
/// Closed forms: `x* = mean(points)`, `μ = L = 1`,
/// `f* = 1/(2N) Σ ‖x* - x_i‖²`.
#[derive(Debug, Clone)]
pub struct CentroidData {
    points: Vec<Vec<f64>>,
    mean: Vec<f64>,
    /// `(1/N) Σ ‖x_i - mean‖²`, the trace of the population covariance.
    trace_cov: f64,
}

impl CentroidData {
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn trace_cov(&self) -> f64 {
        self.trace_cov
    }
}

/// Diagonal quadratic `f(x) = ½ Σ_j λ_j (x_j - c_j)² + offset`.
///
/// The per-sample decomposition treats each coordinate as one sample:
/// `f_j(x) = (d/2) λ_j (x_j - c_j)² + offset`, so the mean over j recovers f.
#[derive(Debug, Clone)]
pub struct QuadraticData {
    eigenvalues: Vec<f64>,
    center: Vec<f64>,
    offset: f64,
}

impl QuadraticData {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

/// L2-regularized logistic regression
/// `f(x) = (1/N) Σ log(1 + exp(-y_i a_i·x)) + (λ/2)‖x‖²`.
///
/// `μ = λ` and `L = λ + ‖A‖² / (4N)` with `‖A‖` the spectral norm of the
/// design matrix (power-iteration estimate). `f*` and `x*` are obtained
/// numerically at construction and cached with the instance.
#[derive(Debug, Clone)]
pub struct LogisticData {
    design: Vec<Vec<f64>>,
    labels: Vec<f64>,
    lambda: f64,
}

impl LogisticData {
    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

#[derive(Debug, Clone)]
pub enum ProblemKind {
    Centroid(CentroidData),
    Quadratic(QuadraticData),
    Logistic(LogisticData),
}

/// A differentiable objective with known μ, L, f*, and (when available) x*.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    d: usize,
    mu: f64,
    ell: f64,
    f_star: f64,
    x_star: Option<Vec<f64>>,
    kind: ProblemKind,
}

impl ProblemInstance {
    pub fn centroid(points: Vec<Vec<f64>>) -> Result<Self, ObjectiveError> {
        if points.is_empty() {
            return Err(ObjectiveError::InvalidData("empty point set".into()));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(ObjectiveError::InvalidData(
                "zero-dimensional points".into(),
            ));
        }
        for p in &points {
            if p.len() != d {
                return Err(ObjectiveError::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
        }
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in &points {
            vecops::axpy_in_place(&mut mean, 1.0 / n, p);
        }
        let trace_cov = points
            .iter()
            .map(|p| vecops::dist_sq(p, &mean))
            .sum::<f64>()
            / n;
        // f* = 1/(2N) Σ ‖x* - x_i‖² = trace_cov / 2
        let f_star = 0.5 * trace_cov;
        Ok(Self {
            d,
            mu: 1.0,
            ell: 1.0,
            f_star,
            x_star: Some(mean.clone()),
            kind: ProblemKind::Centroid(CentroidData {
                points,
                mean,
                trace_cov,
            }),
        })
    }

    pub fn quadratic(
        eigenvalues: Vec<f64>,
        center: Vec<f64>,
        offset: f64,
    ) -> Result<Self, ObjectiveError> {
        let d = eigenvalues.len();
        if d == 0 {
            return Err(ObjectiveError::InvalidData("empty spectrum".into()));
        }
        if center.len() != d {
            return Err(ObjectiveError::DimensionMismatch {
                expected: d,
                got: center.len(),
            });
        }
        if eigenvalues.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
            return Err(ObjectiveError::InvalidData(
                "eigenvalues must be positive and finite".into(),
            ));
        }
        let mu = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let ell = eigenvalues.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            d,
            mu,
            ell,
            f_star: offset,
            x_star: Some(center.clone()),
            kind: ProblemKind::Quadratic(QuadraticData {
                eigenvalues,
                center,
                offset,
            }),
        })
    }

    pub fn logistic(
        design: Vec<Vec<f64>>,
        labels: Vec<f64>,
        lambda: f64,
    ) -> Result<Self, ObjectiveError> {
        if design.is_empty() {
            return Err(ObjectiveError::InvalidData("empty design matrix".into()));
        }
        let d = design[0].len();
        if d == 0 {
            return Err(ObjectiveError::InvalidData("zero-dimensional rows".into()));
        }
        for row in &design {
            if row.len() != d {
                return Err(ObjectiveError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
        }
        if labels.len() != design.len() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: design.len(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(ObjectiveError::InvalidData("labels must be ±1".into()));
        }
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(ObjectiveError::InvalidData(
                "lambda must be positive".into(),
            ));
        }
        let n = design.len();
        let gram_norm = gram_spectral_norm(&design);
        let mu = lambda;
        let ell = lambda + gram_norm / (4.0 * n as f64);
        let mut instance = Self {
            d,
            mu,
            ell,
            f_star: f64::NAN,
            x_star: None,
            kind: ProblemKind::Logistic(LogisticData {
                design,
                labels,
                lambda,
            }),
        };
        let x_star = instance.solve_logistic_minimizer();
        instance.f_star = instance.full_value(&x_star)?;
        instance.x_star = Some(x_star);
        Ok(instance)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn x_star(&self) -> Option<&[f64]> {
        self.x_star.as_deref()
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    /// Number of terms in the finite-sum decomposition.
    pub fn n_samples(&self) -> usize {
        match &self.kind {
            ProblemKind::Centroid(c) => c.points.len(),
            ProblemKind::Quadratic(q) => q.eigenvalues.len(),
            ProblemKind::Logistic(l) => l.design.len(),
        }
    }

    /// `q(x) = ½‖x - x*‖²` when the minimizer is known.
    pub fn q(&self, x: &[f64]) -> Option<f64> {
        self.x_star.as_ref().map(|xs| half_dist_sq(x, xs))
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ObjectiveError> {
        if x.len() != self.d {
            return Err(ObjectiveError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn full_value(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            ProblemKind::Centroid(c) => {
                // 1/(2N) Σ ‖x - x_i‖² = ½‖x - x̄‖² + f*
                half_dist_sq(x, &c.mean) + self.f_star
            }
            ProblemKind::Quadratic(q) => {
                q.offset
                    + 0.5
                        * q.eigenvalues
                            .iter()
                            .zip(x.iter().zip(&q.center))
                            .map(|(&l, (&xi, &ci))| l * (xi - ci) * (xi - ci))
                            .sum::<f64>()
            }
            ProblemKind::Logistic(l) => {
                let n = l.design.len() as f64;
                let loss = l
                    .design
                    .iter()
                    .zip(&l.labels)
                    .map(|(a, &y)| log1p_exp(-y * vecops::dot(a, x)))
                    .sum::<f64>()
                    / n;
                loss + 0.5 * l.lambda * norm_sq(x)
            }
        })
    }

    pub fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            ProblemKind::Centroid(c) => vecops::sub(x, &c.mean),
            ProblemKind::Quadratic(q) => q
                .eigenvalues
                .iter()
                .zip(x.iter().zip(&q.center))
                .map(|(&l, (&xi, &ci))| l * (xi - ci))
                .collect(),
            ProblemKind::Logistic(l) => {
                let n = l.design.len() as f64;
                let mut g = x.to_vec();
                vecops::scale_in_place(&mut g, l.lambda);
                for (a, &y) in l.design.iter().zip(&l.labels) {
                    let s = sigmoid(-y * vecops::dot(a, x));
                    vecops::axpy_in_place(&mut g, -y * s / n, a);
                }
                g
            }
        })
    }

    /// Gradient of the i-th term of the finite-sum decomposition.
    pub fn sample_gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ProblemKind::Centroid(c) => vecops::sub(x, &c.points[i]),
            ProblemKind::Quadratic(q) => {
                let d = self.d as f64;
                let mut g = vec![0.0; self.d];
                g[i] = d * q.eigenvalues[i] * (x[i] - q.center[i]);
                g
            }
            ProblemKind::Logistic(l) => {
                let a = &l.design[i];
                let y = l.labels[i];
                let s = sigmoid(-y * vecops::dot(a, x));
                let mut g = x.to_vec();
                vecops::scale_in_place(&mut g, l.lambda);
                vecops::axpy_in_place(&mut g, -y * s, a);
                g
            }
        }
    }

    /// Gradient of the sub-objective built from the given sample indices
    /// (the mean of the per-sample gradients).
    pub fn batch_gradient(&self, indices: &[usize], x: &[f64]) -> Vec<f64> {
        match &self.kind {
            // x - mean of selected points, without materializing per-sample grads
            ProblemKind::Centroid(c) => {
                let m = indices.len() as f64;
                let mut g = x.to_vec();
                for &i in indices {
                    vecops::axpy_in_place(&mut g, -1.0 / m, &c.points[i]);
                }
                g
            }
            _ => {
                let m = indices.len() as f64;
                let mut g = vec![0.0; self.d];
                for &i in indices {
                    let gi = self.sample_gradient(i, x);
                    vecops::axpy_in_place(&mut g, 1.0 / m, &gi);
                }
                g
            }
        }
    }

    /// Trace of the population covariance of the per-sample gradients at x,
    /// `(1/N) Σ ‖∇f_i(x) - ∇f(x)‖²`. Closed form for Centroid and Quadratic.
    pub(crate) fn sample_gradient_cov_trace(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            ProblemKind::Centroid(c) => Some(c.trace_cov),
            ProblemKind::Quadratic(_) => {
                let g = self.full_gradient(x).ok()?;
                Some((self.d as f64 - 1.0) * norm_sq(&g))
            }
            ProblemKind::Logistic(_) => None,
        }
    }

    /// Minimizes the logistic objective: Polyak steps driven by the
    /// f_best - γ_k estimator for coarse progress, then fixed 1/L descent
    /// until the gradient norm drops below 1e-12.
    fn solve_logistic_minimizer(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        let mut f_best = f64::INFINITY;
        for k in 0..2_000u32 {
            let g = self.full_gradient(&x).expect("dimension is consistent");
            let gsq = norm_sq(&g);
            if gsq == 0.0 {
                break;
            }
            let f = self.full_value(&x).expect("dimension is consistent");
            f_best = f_best.min(f);
            let gamma = 1.0 / f64::from(k + 1).sqrt();
            let h = ((f - f_best + gamma) / gsq).min(1.0 / self.mu);
            vecops::axpy_in_place(&mut x, -h, &g);
        }
        let h = 1.0 / self.ell;
        for _ in 0..500_000u32 {
            let g = self.full_gradient(&x).expect("dimension is consistent");
            if norm_sq(&g) <= 1e-24 {
                break;
            }
            vecops::axpy_in_place(&mut x, -h, &g);
        }
        x
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))`, stable for large |t|.
fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Spectral norm of AᵀA by power iteration on the Gram operator.
fn gram_spectral_norm(design: &[Vec<f64>]) -> f64 {
    let d = design[0].len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        // w = Aᵀ(A v)
        let mut w = vec![0.0; d];
        for row in design {
            let proj = vecops::dot(row, &v);
            vecops::axpy_in_place(&mut w, proj, row);
        }
        let norm = vecops::norm(&w);
        if norm == 0.0 {
            return 0.0;
        }
        let next = vecops::dot(&v, &w);
        vecops::scale_in_place(&mut w, 1.0 / norm);
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            return next;
        }
        lambda = next;
        v = w;
    }
    lambda
}

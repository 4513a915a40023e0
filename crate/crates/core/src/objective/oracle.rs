//! Seeded mini-batch gradient oracle.
//!
//! Batch derivation is a pure function of `(seed, step_index)`: each step
//! seeds a fresh ChaCha8 stream, so runs are reproducible across threads and
//! identical seeds yield identical batch sequences. The oracle itself carries
//! no mutable state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ObjectiveError, ProblemInstance};
use crate::vecops::norm_sq;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    WithReplacement,
    /// Default: a fresh size-M subset each step (no across-epoch shuffling).
    WithoutReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMode {
    Exact,
    Estimated,
}

/// `E‖∇_mb f(x)‖²` together with how it was obtained.
#[derive(Debug, Clone, Copy)]
pub struct SecondMoment {
    pub value: f64,
    pub mode: MomentMode,
}

#[derive(Debug, Clone, Copy)]
pub struct MiniBatchOracle {
    batch_size: usize,
    sampling: Sampling,
    seed: u64,
    /// Number of sampled batches used when the second moment has no closed
    /// form (Logistic).
    estimate_k: usize,
}

/// Stream offset separating second-moment estimation draws from step draws.
/// Step indices are assumed < 2^63.
const ESTIMATE_STREAM_BASE: u64 = 1 << 63;

impl MiniBatchOracle {
    pub fn new(batch_size: usize, sampling: Sampling, seed: u64) -> Self {
        Self {
            batch_size,
            sampling,
            seed,
            estimate_k: 64,
        }
    }

    pub fn with_estimate_k(mut self, estimate_k: usize) -> Self {
        self.estimate_k = estimate_k.max(1);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn estimate_k(&self) -> usize {
        self.estimate_k
    }

    fn stream_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn check(&self, problem: &ProblemInstance, x: &[f64]) -> Result<(), ObjectiveError> {
        let n = problem.n_samples();
        if self.batch_size == 0 || self.batch_size > n {
            return Err(ObjectiveError::BatchTooLarge {
                batch: self.batch_size,
                n,
            });
        }
        if x.len() != problem.d() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: problem.d(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// The sample indices drawn at `step_index`.
    pub fn batch_indices(&self, n: usize, step_index: u64) -> Vec<usize> {
        let mut rng = self.stream_rng(step_index);
        self.draw(&mut rng, n)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        match self.sampling {
            Sampling::WithoutReplacement => {
                rand::seq::index::sample(rng, n, self.batch_size).into_vec()
            }
            Sampling::WithReplacement => {
                (0..self.batch_size).map(|_| rng.gen_range(0..n)).collect()
            }
        }
    }

    /// Gradient of the sampled sub-objective at `x`; deterministic given
    /// `(seed, step_index)`.
    pub fn minibatch_gradient(
        &self,
        problem: &ProblemInstance,
        x: &[f64],
        step_index: u64,
    ) -> Result<Vec<f64>, ObjectiveError> {
        self.check(problem, x)?;
        let n = problem.n_samples();
        if self.batch_size == n && self.sampling == Sampling::WithoutReplacement {
            return problem.full_gradient(x);
        }
        let indices = self.batch_indices(n, step_index);
        Ok(problem.batch_gradient(&indices, x))
    }

    /// `E‖∇_mb f(x)‖²` over the batch distribution.
    ///
    /// Exact (from the per-sample gradient covariance and the sampling mode)
    /// for Centroid and Quadratic; estimated by averaging `estimate_k`
    /// sampled batch gradients for Logistic.
    pub fn noise_second_moment(
        &self,
        problem: &ProblemInstance,
        x: &[f64],
    ) -> Result<SecondMoment, ObjectiveError> {
        self.check(problem, x)?;
        let n = problem.n_samples();
        let m = self.batch_size;
        if m == n && self.sampling == Sampling::WithoutReplacement {
            let g = problem.full_gradient(x)?;
            return Ok(SecondMoment {
                value: norm_sq(&g),
                mode: MomentMode::Exact,
            });
        }
        if let Some(trace) = problem.sample_gradient_cov_trace(x) {
            let g = problem.full_gradient(x)?;
            let correction = match self.sampling {
                Sampling::WithReplacement => 1.0,
                Sampling::WithoutReplacement => (n - m) as f64 / (n as f64 - 1.0),
            };
            let sigma2 = trace / m as f64 * correction;
            return Ok(SecondMoment {
                value: norm_sq(&g) + sigma2,
                mode: MomentMode::Exact,
            });
        }
        let mut acc = 0.0;
        for j in 0..self.estimate_k {
            let mut rng = self.stream_rng(ESTIMATE_STREAM_BASE + j as u64);
            let indices = self.draw(&mut rng, n);
            acc += norm_sq(&problem.batch_gradient(&indices, x));
        }
        Ok(SecondMoment {
            value: acc / self.estimate_k as f64,
            mode: MomentMode::Estimated,
        })
    }
}

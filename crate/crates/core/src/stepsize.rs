//! Learning-rate policies.
//!
//! Implements every policy under study: fixed, epoch decay, the optimal
//! O(1/k) schedule (SLR), the deterministic Polyak rate
//! `h(x) = 2(f(x) - f*)/‖∇f(x)‖²` (PLR), its stochastic counterpart with the
//! second moment `E‖∇_mb f(x)‖²` in the denominator (SPLR), and the
//! f*-estimating variant driven by `f_best - γ_k`. Emitted rates are
//! optionally clamped to `[h_min, h_max]`; capping is applied last.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    /// Zero gradient (or zero second moment at the optimum): the caller
    /// should stop rather than divide by zero.
    #[error("gradient vanished; iterate has converged")]
    Converged,
    /// `f(x) < f*` diagnoses a mis-set f* guess. Hard error by design:
    /// silent clamping would mask the mistuning.
    #[error("observed f(x) = {f_x} below the supplied f* = {f_star}; f* is overestimated")]
    FStarOverestimate { f_x: f64, f_star: f64 },
    #[error("second moment must be positive, got {0}")]
    NonpositiveSecondMoment(f64),
    #[error("policy requires missing context: {0}")]
    MissingContext(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Learning-rate caps `0 < h_min ≤ h_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Caps {
    pub h_min: f64,
    pub h_max: f64,
}

impl Caps {
    pub fn new(h_min: f64, h_max: f64) -> Result<Self, StepError> {
        if !(h_min > 0.0 && h_min <= h_max && h_max.is_finite()) {
            return Err(StepError::InvalidParameter(
                "caps require 0 < h_min <= h_max",
            ));
        }
        Ok(Self { h_min, h_max })
    }

    pub fn apply(&self, h: f64) -> f64 {
        h.clamp(self.h_min, self.h_max)
    }
}

/// Running-minimum state for the f*-estimating Polyak policy. Owned by
/// exactly one run; value-copyable so runs never share it.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorState {
    pub f_best: f64,
    pub k: u64,
}

impl Default for EstimatorState {
    fn default() -> Self {
        Self {
            f_best: f64::INFINITY,
            k: 0,
        }
    }
}

/// Mutable per-run state: the estimator and the cached SPLR denominator
/// between second-moment refreshes.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyState {
    pub estimator: EstimatorState,
    pub cached_second_moment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyVariant {
    Fixed {
        h0: f64,
    },
    /// `h = h0 / factor^(k / period)`.
    EpochDecay {
        h0: f64,
        factor: f64,
        period: u64,
    },
    /// The optimal schedule `h_k = 1/(μ(k + q0⁻¹ α_S⁻¹))`.
    Scheduled {
        mu: f64,
        q0: f64,
        alpha_s: f64,
    },
    PolyakDeterministic {
        f_star: f64,
    },
    /// SPLR; the second moment is re-queried every `refresh_period` steps
    /// and the cached denominator reused in between.
    PolyakStochastic {
        f_star: f64,
        refresh_period: u64,
    },
    /// Polyak with `f*` replaced by `f_best - γ_k`, `γ_k = γ0/(k+1)^p`.
    PolyakEstimated {
        gamma0: f64,
        gamma_p: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPolicy {
    pub variant: PolicyVariant,
    pub caps: Option<Caps>,
}

/// Everything a policy may need at one iteration. Fields not required by the
/// active variant may be left `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepContext {
    pub k: u64,
    pub f_x: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    pub second_moment: Option<f64>,
}

// ── Per-policy formulas ──────────────────────────────────────────────

/// Deterministic Polyak rate `2(f(x) - f*)/‖∇f(x)‖²` (uncapped).
pub fn plr(f_x: f64, f_star: f64, grad_norm_sq: f64) -> Result<f64, StepError> {
    if grad_norm_sq <= 0.0 {
        return Err(StepError::Converged);
    }
    if f_x < f_star {
        return Err(StepError::FStarOverestimate { f_x, f_star });
    }
    Ok(2.0 * (f_x - f_star) / grad_norm_sq)
}

/// Optimal schedule `h_k = 1/(μ(k + q0⁻¹ α_S⁻¹))`.
pub fn slr(mu: f64, q0: f64, alpha_s: f64, k: u64) -> Result<f64, StepError> {
    if mu <= 0.0 || q0 <= 0.0 || alpha_s <= 0.0 {
        return Err(StepError::InvalidParameter(
            "slr requires mu, q0, alpha_s > 0",
        ));
    }
    Ok(1.0 / (mu * (k as f64 + 1.0 / (q0 * alpha_s))))
}

/// Stochastic Polyak rate `2(f(x) - f*)/E‖∇_mb f(x)‖²` (uncapped).
/// Reduces exactly to [`plr`] when the noise variance is zero.
pub fn splr(f_x: f64, f_star: f64, second_moment: f64) -> Result<f64, StepError> {
    if second_moment < 0.0 {
        return Err(StepError::NonpositiveSecondMoment(second_moment));
    }
    if second_moment == 0.0 {
        return Err(StepError::Converged);
    }
    if f_x < f_star {
        return Err(StepError::FStarOverestimate { f_x, f_star });
    }
    Ok(2.0 * (f_x - f_star) / second_moment)
}

/// `γ_k = γ0/(k+1)^p`: positive, vanishing, divergent sum for p ≤ 1.
pub fn gamma_schedule(gamma0: f64, p: f64, k: u64) -> f64 {
    gamma0 / (k as f64 + 1.0).powf(p)
}

/// One step of the f*-estimating Polyak rate
/// `h = (f(x_k) - f_best + γ_k)/‖∇f(x_k)‖²`. Updates `f_best` and advances k.
pub fn estimated_polyak(
    f_x: f64,
    state: &mut EstimatorState,
    grad_norm_sq: f64,
    gamma0: f64,
    gamma_p: f64,
) -> Result<f64, StepError> {
    if grad_norm_sq <= 0.0 {
        return Err(StepError::Converged);
    }
    state.f_best = state.f_best.min(f_x);
    let gamma = gamma_schedule(gamma0, gamma_p, state.k);
    let h = (f_x - state.f_best + gamma) / grad_norm_sq;
    state.k += 1;
    Ok(h)
}

impl StepPolicy {
    pub fn new(variant: PolicyVariant) -> Self {
        Self {
            variant,
            caps: None,
        }
    }

    pub fn fixed(h0: f64) -> Self {
        Self::new(PolicyVariant::Fixed { h0 })
    }

    pub fn epoch_decay(h0: f64, factor: f64, period: u64) -> Self {
        Self::new(PolicyVariant::EpochDecay { h0, factor, period })
    }

    pub fn scheduled(mu: f64, q0: f64, alpha_s: f64) -> Self {
        Self::new(PolicyVariant::Scheduled { mu, q0, alpha_s })
    }

    pub fn polyak(f_star: f64) -> Self {
        Self::new(PolicyVariant::PolyakDeterministic { f_star })
    }

    pub fn polyak_stochastic(f_star: f64, refresh_period: u64) -> Self {
        Self::new(PolicyVariant::PolyakStochastic {
            f_star,
            refresh_period: refresh_period.max(1),
        })
    }

    /// Default γ schedule: γ0 = 1, p = ½.
    pub fn polyak_estimated(gamma0: f64, gamma_p: f64) -> Self {
        Self::new(PolicyVariant::PolyakEstimated { gamma0, gamma_p })
    }

    pub fn with_caps(mut self, caps: Caps) -> Self {
        self.caps = Some(caps);
        self
    }

    /// Default SPLR caps: `h_min = 1e-8`, `h_max = 1/μ` (the provable ceiling
    /// of the deterministic rate).
    pub fn default_splr_caps(mu: f64) -> Caps {
        let h_max = if mu > 0.0 { 1.0 / mu } else { 10.0 };
        Caps { h_min: 1e-8, h_max }
    }

    /// True when the optimizer must supply a fresh second moment at step k.
    pub fn needs_second_moment(&self, k: u64, state: &PolicyState) -> bool {
        match self.variant {
            PolicyVariant::PolyakStochastic { refresh_period, .. } => {
                state.cached_second_moment.is_none() || k.is_multiple_of(refresh_period)
            }
            _ => false,
        }
    }

    /// Dispatches to the variant formula and applies caps last.
    pub fn compute_h(&self, state: &mut PolicyState, ctx: &StepContext) -> Result<f64, StepError> {
        let raw = match &self.variant {
            PolicyVariant::Fixed { h0 } => *h0,
            PolicyVariant::EpochDecay { h0, factor, period } => {
                let decays = (ctx.k / (*period).max(1)) as i32;
                h0 / factor.powi(decays)
            }
            PolicyVariant::Scheduled { mu, q0, alpha_s } => slr(*mu, *q0, *alpha_s, ctx.k)?,
            PolicyVariant::PolyakDeterministic { f_star } => {
                let f_x = ctx.f_x.ok_or(StepError::MissingContext("f_x"))?;
                let gsq = ctx
                    .grad_norm_sq
                    .ok_or(StepError::MissingContext("grad_norm_sq"))?;
                plr(f_x, *f_star, gsq)?
            }
            PolicyVariant::PolyakStochastic {
                f_star,
                refresh_period,
            } => {
                let f_x = ctx.f_x.ok_or(StepError::MissingContext("f_x"))?;
                let refresh =
                    state.cached_second_moment.is_none() || ctx.k.is_multiple_of(*refresh_period);
                let sm = if refresh {
                    let sm = ctx
                        .second_moment
                        .ok_or(StepError::MissingContext("second_moment"))?;
                    state.cached_second_moment = Some(sm);
                    sm
                } else {
                    state
                        .cached_second_moment
                        .expect("cache is filled on first use")
                };
                splr(f_x, *f_star, sm)?
            }
            PolicyVariant::PolyakEstimated { gamma0, gamma_p } => {
                let f_x = ctx.f_x.ok_or(StepError::MissingContext("f_x"))?;
                let gsq = ctx
                    .grad_norm_sq
                    .ok_or(StepError::MissingContext("grad_norm_sq"))?;
                estimated_polyak(f_x, &mut state.estimator, gsq, *gamma0, *gamma_p)?
            }
        };
        Ok(match self.caps {
            Some(caps) => caps.apply(raw),
            None => raw,
        })
    }
}

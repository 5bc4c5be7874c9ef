//! Proximal operator of the log-sum penalty `λ log(|z| + ε)` and the
//! soft-threshold baseline.
//!
//! For a scalar input `x` the log-sum thresholding function is
//!
//! ```text
//! S(x) = argmin_z  (z - x)^2 / 2 + λ log(|z| + ε)
//! ```
//!
//! The objective has at most two local minima, `0` and `sign(x) r₊(|x|)`.
//! When `ε ≥ √λ` the problem is convex and `S` is continuous with a kink at
//! `|x| = λ/ε`; otherwise `S` jumps from `0` to `r₊(x_c)` at the switching
//! point `x_c`.

use crate::error::{Error, Result};

/// Half-width of the band around `x_c` in which [`ProxResult::at_jump`] is set.
pub const JUMP_BAND: f64 = 1e-10;

const JUMP_BISECTION_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Convex,
    Nonconvex,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Convex => "CONVEX",
            Regime::Nonconvex => "NONCONVEX",
        }
    }
}

/// Regularization pair `(λ, ε)` for one thresholding call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumParams {
    lambda: f64,
    epsilon: f64,
}

impl LogSumParams {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and positive, got {epsilon}"
            )));
        }
        Ok(Self { lambda, epsilon })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn regime(&self) -> Regime {
        if self.epsilon >= self.lambda.sqrt() {
            Regime::Convex
        } else {
            Regime::Nonconvex
        }
    }

    /// Scalar objective `(z - x)^2 / 2 + λ log(|z| + ε)`.
    pub fn objective(&self, x: f64, z: f64) -> f64 {
        0.5 * (z - x) * (z - x) + self.lambda * (z.abs() + self.epsilon).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxResult {
    pub value: f64,
    pub derivative: f64,
    pub at_jump: bool,
}

/// Positive stationary point of the scalar objective for `x > 0`.
///
/// Uses the product of the roots of `z^2 + (ε - x) z + (λ - xε) = 0` when
/// `x < ε` so the result keeps full relative precision.
pub fn r_plus(x: f64, p: &LogSumParams) -> Result<f64> {
    let (lambda, eps) = (p.lambda, p.epsilon);
    let half_sum = 0.5 * (x + eps);
    let disc = half_sum * half_sum - lambda;
    if disc < 0.0 || disc.is_nan() {
        return Err(Error::Domain(format!(
            "negative discriminant (x+ε)²/4 - λ = {disc} at x={x}, λ={lambda}, ε={eps}"
        )));
    }
    Ok(r_plus_unchecked(x, lambda, eps, disc.sqrt()))
}

#[inline]
fn r_plus_unchecked(x: f64, lambda: f64, eps: f64, sqrt_disc: f64) -> f64 {
    let half_diff = 0.5 * (x - eps);
    if half_diff >= 0.0 {
        half_diff + sqrt_disc
    } else {
        (x * eps - lambda) / (sqrt_disc - half_diff)
    }
}

/// `c(x) = φ_x(r₊(x)) - φ_x(0)`, written so that the `λ log ε` terms cancel
/// analytically.
fn jump_gap(x: f64, lambda: f64, eps: f64) -> f64 {
    let half_sum = 0.5 * (x + eps);
    let disc = (half_sum * half_sum - lambda).max(0.0);
    let r = r_plus_unchecked(x, lambda, eps, disc.sqrt());
    0.5 * r * r - r * x + lambda * (r / eps).ln_1p()
}

/// Switching point `x_c` of the nonconvex thresholding function, found by
/// bisection on `[2√λ - ε, λ/ε]`.
pub fn jump_threshold(p: &LogSumParams) -> Result<f64> {
    if p.regime() == Regime::Convex {
        return Err(Error::Regime {
            lambda: p.lambda,
            epsilon: p.epsilon,
        });
    }
    let (lambda, eps) = (p.lambda, p.epsilon);
    let mut lo = 2.0 * lambda.sqrt() - eps;
    let mut hi = lambda / eps;
    if hi < lo {
        // rounding at the regime boundary
        return Ok(lo);
    }
    if jump_gap(lo, lambda, eps) <= 0.0 {
        return Ok(lo);
    }
    if jump_gap(hi, lambda, eps) >= 0.0 {
        return Ok(hi);
    }
    for _ in 0..JUMP_BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let c = jump_gap(mid, lambda, eps);
        if c == 0.0 {
            return Ok(mid);
        }
        if c > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Log-sum thresholding with the switching point precomputed, for applying
/// one `(λ, ε)` pair to many inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumProx {
    params: LogSumParams,
    regime: Regime,
    cutoff: f64,
}

impl LogSumProx {
    pub fn new(params: LogSumParams) -> Self {
        let regime = params.regime();
        let cutoff = match regime {
            Regime::Convex if params.lambda == 0.0 => 0.0,
            Regime::Convex => params.lambda / params.epsilon,
            // jump_threshold only fails in the convex regime
            Regime::Nonconvex => jump_threshold(&params).unwrap_or(params.lambda / params.epsilon),
        };
        Self {
            params,
            regime,
            cutoff,
        }
    }

    pub fn params(&self) -> &LogSumParams {
        &self.params
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Input magnitude at or below which the output is zero.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn apply(&self, x: f64) -> ProxResult {
        let (lambda, eps) = (self.params.lambda, self.params.epsilon);
        if lambda == 0.0 {
            return ProxResult {
                value: x,
                derivative: 1.0,
                at_jump: false,
            };
        }
        let ax = x.abs();
        let at_jump = self.regime == Regime::Nonconvex && (ax - self.cutoff).abs() <= JUMP_BAND;
        if !(ax > self.cutoff) {
            return ProxResult {
                value: 0.0,
                derivative: 0.0,
                at_jump,
            };
        }
        let half_sum = 0.5 * (ax + eps);
        let disc = (half_sum * half_sum - lambda).max(0.0);
        let z = r_plus_unchecked(ax, lambda, eps, disc.sqrt());
        if z == 0.0 {
            return ProxResult {
                value: 0.0,
                derivative: 0.0,
                at_jump,
            };
        }
        ProxResult {
            value: z.copysign(x),
            derivative: logsum_derivative(z, lambda, eps),
            at_jump,
        }
    }
}

#[inline]
fn logsum_derivative(z_abs: f64, lambda: f64, eps: f64) -> f64 {
    let s = z_abs + eps;
    let s2 = s * s;
    s2 / (s2 - lambda)
}

/// `S(x; λR)` and `S'(x; λR)` for a single input.
pub fn threshold(x: f64, p: &LogSumParams) -> ProxResult {
    LogSumProx::new(*p).apply(x)
}

/// Soft threshold `sign(x) max(|x| - θ, 0)` and its derivative.
pub fn soft_threshold(x: f64, theta: f64) -> (f64, f64) {
    debug_assert!(theta >= 0.0);
    let ax = x.abs();
    if ax > theta {
        ((ax - theta).copysign(x), 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Scalar separable denoiser used by AMP and state evolution.
///
/// Each variant is odd, zero on `[-cutoff, cutoff]`, and strictly increasing
/// above the cutoff, so its nonzero branch can be parametrized by the output
/// magnitude `z ≥ output_floor()` through [`Denoiser::input_at`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Denoiser {
    Identity,
    LogSum(LogSumProx),
    Soft { theta: f64 },
}

impl Denoiser {
    pub fn cutoff(&self) -> f64 {
        match self {
            Denoiser::Identity => 0.0,
            Denoiser::LogSum(p) => p.cutoff(),
            Denoiser::Soft { theta } => *theta,
        }
    }

    /// `(S(x), S'(x))`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            Denoiser::Identity => (x, 1.0),
            Denoiser::LogSum(p) => {
                let r = p.apply(x);
                (r.value, r.derivative)
            }
            Denoiser::Soft { theta } => soft_threshold(x, *theta),
        }
    }

    /// Smallest nonzero output magnitude (the jump height for nonconvex log-sum).
    pub fn output_floor(&self) -> f64 {
        match self {
            Denoiser::LogSum(p) if p.regime() == Regime::Nonconvex => {
                let lp = p.params();
                let half_sum = 0.5 * (p.cutoff() + lp.epsilon);
                let disc = (half_sum * half_sum - lp.lambda).max(0.0);
                r_plus_unchecked(p.cutoff(), lp.lambda, lp.epsilon, disc.sqrt())
            }
            _ => 0.0,
        }
    }

    /// Input that maps to output magnitude `z` on the nonzero branch.
    #[inline]
    pub fn input_at(&self, z: f64) -> f64 {
        match self {
            Denoiser::Identity => z,
            Denoiser::LogSum(p) => z + p.params().lambda / (z + p.params().epsilon),
            Denoiser::Soft { theta } => z + theta,
        }
    }

    /// `input_at(z) - z`, evaluated without cancellation.
    #[inline]
    pub fn input_offset(&self, z: f64) -> f64 {
        match self {
            Denoiser::Identity => 0.0,
            Denoiser::LogSum(p) => p.params().lambda / (z + p.params().epsilon),
            Denoiser::Soft { theta } => *theta,
        }
    }

    /// `dx/dz` along the nonzero branch; the reciprocal of `S'`.
    #[inline]
    pub fn input_slope(&self, z: f64) -> f64 {
        match self {
            Denoiser::LogSum(p) => {
                let s = z + p.params().epsilon;
                1.0 - p.params().lambda / (s * s)
            }
            _ => 1.0,
        }
    }

    /// Output magnitude for input magnitude `x` above the cutoff.
    pub fn output_at(&self, x: f64) -> f64 {
        self.eval(x.abs()).0
    }

    /// Smoothing parameter in use, if the denoiser is a log-sum prox.
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Denoiser::LogSum(p) => Some(p.params().epsilon()),
            _ => None,
        }
    }
}

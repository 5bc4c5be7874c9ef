//! Zero-temperature replica-symmetric analysis: local stability of perfect
//! reconstruction, the critical rate `α_c(ρ, ε)`, order parameters at generic
//! fixed points, and the de Almeida–Thouless check.
//!
//! Near perfect reconstruction everything depends on `u = ε²χ̂` through
//!
//! ```text
//! F(u)  = [2(1-ρ)((u+1)H(1/√u) - √u φ(1/√u)) + ρ(u + ε² G(ε))] / α
//! F'(u) = [2(1-ρ)H(1/√u) + ρ] / α
//! ```
//!
//! with `G(ε) = E_ξ (|ξ| + ε)⁻²`. Since `F'` increases with `u`, `g = F - u`
//! is convex, positive at both ends, and has a root only when its minimum
//! (where `F' = 1`) is negative. The smaller root is the stable one.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fmt::float;
use crate::prox::{Denoiser, LogSumParams, LogSumProx};
pub use crate::quad::ccdf;
use crate::quad::{integrate_scalar, std_normal_pdf, Tolerance};
use crate::se::{moments, squared_derivative, Quadrature};

/// Lower end of the `u` search interval.
pub const U_LO: f64 = 1e-14;

const BISECTION_MAX_ITERS: usize = 300;

/// `E_ξ (|ξ| + ε)⁻²` by adaptive quadrature of `2∫₀^∞ φ(ξ)(ξ+ε)⁻² dξ`.
pub fn gaussian_inverse_square(epsilon: f64) -> f64 {
    let mut pts = vec![0.0];
    for k in -12..=0 {
        let p = epsilon * 10f64.powi(k);
        if p < 40.0 {
            pts.push(p);
        }
    }
    pts.extend([1.0, 2.0, 4.0, 8.0, 16.0, 40.0]);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let tol = Tolerance {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        max_intervals: 4000,
    };
    let (v, _) = integrate_scalar(
        |x| {
            let d = x + epsilon;
            std_normal_pdf(x) / (d * d)
        },
        &pts,
        &tol,
    );
    2.0 * v
}

/// `F(u)` and `F'(u)` for fixed `(α, ρ, ε)`, with `G(ε)` cached.
#[derive(Debug, Clone, Copy)]
pub struct StabilityMap {
    alpha: f64,
    rho: f64,
    epsilon: f64,
    g_eps: f64,
}

impl StabilityMap {
    pub fn new(alpha: f64, rho: f64, epsilon: f64) -> Result<Self> {
        check_rho_eps(rho, epsilon)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(Self {
            alpha,
            rho,
            epsilon,
            g_eps: gaussian_inverse_square(epsilon),
        })
    }

    fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha, ..*self }
    }

    pub fn f(&self, u: f64) -> f64 {
        let a = 1.0 / u.sqrt();
        let zero = 2.0 * (1.0 - self.rho) * ((u + 1.0) * ccdf(a) - u.sqrt() * std_normal_pdf(a));
        let signal = self.rho * (u + self.epsilon * self.epsilon * self.g_eps);
        (zero + signal) / self.alpha
    }

    pub fn f_prime(&self, u: f64) -> f64 {
        (2.0 * (1.0 - self.rho) * ccdf(1.0 / u.sqrt()) + self.rho) / self.alpha
    }

    pub fn g(&self, u: f64) -> f64 {
        self.f(u) - u
    }

    /// Where `F'(u) = 1`, the minimizer of `g`. `None` when `α ≤ ρ` (F' < 1
    /// nowhere) or `α ≥ 1` (F' < 1 everywhere).
    pub fn minimizer(&self) -> Option<f64> {
        let target = (self.alpha - self.rho) / (2.0 * (1.0 - self.rho));
        if !(target > 0.0 && target < 0.5) {
            return None;
        }
        // H is decreasing; solve H(a) = target for a > 0
        let (mut lo, mut hi) = (0.0f64, 40.0f64);
        for _ in 0..BISECTION_MAX_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if ccdf(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        Some(1.0 / (a * a))
    }
}

fn check_rho_eps(rho: f64, epsilon: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

fn bisect_root<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo_positive = f(lo) > 0.0;
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == f_lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiHatRoot {
    /// `u* = ε²χ̂*`
    pub u_star: f64,
    pub chi_hat: f64,
    pub f_prime: f64,
    /// `|F'(u*)| < 1`
    pub stable: bool,
}

/// Solves `u = F(u)` for the smallest root. `None` means no root exists, i.e.
/// perfect reconstruction is not locally stable at this `α`.
pub fn chi_hat_selfconsistent(alpha: f64, rho: f64, epsilon: f64) -> Result<Option<ChiHatRoot>> {
    let map = StabilityMap::new(alpha, rho, epsilon)?;
    Ok(solve_u(&map))
}

fn solve_u(map: &StabilityMap) -> Option<ChiHatRoot> {
    let u_m = map.minimizer()?;
    if !(map.g(u_m) < 0.0) {
        return None;
    }
    let u_star = if map.g(U_LO) <= 0.0 {
        U_LO
    } else {
        bisect_root(|u| map.g(u), U_LO, u_m)
    };
    let f_prime = map.f_prime(u_star);
    Some(ChiHatRoot {
        u_star,
        chi_hat: u_star / (map.epsilon * map.epsilon),
        f_prime,
        stable: f_prime.abs() < 1.0,
    })
}

/// Smallest `α` at which perfect reconstruction is locally stable for fixed
/// `ε`: the rate where the minimum of `F(u) - u` touches zero. Equivalently
/// `α_c = ρ + 2(1-ρ)H(1/√u*)` with `F'(u*) = 1`.
pub fn alpha_c(rho: f64, epsilon: f64) -> Result<f64> {
    let base = StabilityMap::new(0.5 * (1.0 + rho), rho, epsilon)?;
    let min_g = |alpha: f64| {
        let m = base.with_alpha(alpha);
        match m.minimizer() {
            Some(u) => m.g(u),
            None => f64::INFINITY,
        }
    };
    // min g decreases in α
    let (mut lo, mut hi) = (rho, 1.0 - 1e-12);
    if !(min_g(hi) < 0.0) {
        return Err(Error::NoBracket(format!(
            "perfect reconstruction is not locally stable for any alpha < 1 at rho={rho}, epsilon={epsilon}"
        )));
    }
    for _ in 0..BISECTION_MAX_ITERS {
        let probe = 0.5 * (lo + hi);
        if probe <= lo || probe >= hi {
            break;
        }
        if min_g(probe) < 0.0 {
            hi = probe;
        } else {
            lo = probe;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `u*` at the critical rate, where the two roots of `u = F(u)` merge.
pub fn critical_u(rho: f64, epsilon: f64) -> Result<(f64, f64)> {
    let a = alpha_c(rho, epsilon)?;
    let map = StabilityMap::new(a, rho, epsilon)?;
    let u = map
        .minimizer()
        .ok_or_else(|| Error::NoBracket("alpha_c outside (rho, 1)".into()))?;
    Ok((a, u))
}

/// Replica-symmetric order parameters evaluated once at `(mse, χ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsFixedPoint {
    pub q_big: f64,
    pub m: f64,
    /// Input `χ`; `q_hat · chi = α` holds by construction.
    pub chi: f64,
    pub q_hat: f64,
    pub chi_hat: f64,
    /// `Q - 2m + ρ`
    pub mse: f64,
    /// Right-hand side of the `χ` equation.
    pub chi_rhs: f64,
}

impl RsFixedPoint {
    /// `[mse_out - mse_in, χ_out - χ_in]`; zero at a genuine fixed point.
    pub fn residuals(&self, mse_in: f64) -> [f64; 2] {
        [self.mse - mse_in, self.chi_rhs - self.chi]
    }
}

fn logsum_denoiser(lambda: f64, epsilon: f64) -> Result<Denoiser> {
    if lambda == 0.0 {
        return Ok(Denoiser::Identity);
    }
    Ok(Denoiser::LogSum(LogSumProx::new(LogSumParams::new(lambda, epsilon)?)))
}

/// Evaluates `Q = E S²`, `m = E x⁰S`, `χ = E ξS / √χ̂` with
/// `x* = S(x⁰ + sqrt(mse/α) ξ; R/Q̂)`, `Q̂ = α/χ`, `χ̂ = α mse/χ²`.
pub fn rs_order_parameters(
    mse: f64,
    chi: f64,
    alpha: f64,
    rho: f64,
    epsilon: f64,
    quad: &Quadrature,
) -> Result<RsFixedPoint> {
    check_rho_eps(rho, epsilon)?;
    if !(mse >= 0.0 && chi >= 0.0 && mse.is_finite() && chi.is_finite()) {
        return Err(Error::InvalidParameter("mse and chi must be finite and nonnegative".into()));
    }
    let lambda = chi / alpha;
    let den = logsum_denoiser(lambda, epsilon)?;
    let sigma = (mse / alpha).sqrt();
    let mo = moments(&den, sigma, rho, quad);
    let chi_hat = if chi > 0.0 { alpha * mse / (chi * chi) } else { f64::INFINITY };
    let chi_rhs = if mse > 0.0 && chi > 0.0 {
        mo.xi_s * chi / (alpha * mse).sqrt()
    } else {
        // σ → 0: E ξS / √χ̂ → (χ/α) E S'
        lambda * mo.d
    };
    Ok(RsFixedPoint {
        q_big: mo.q,
        m: mo.m,
        chi,
        q_hat: if chi > 0.0 { alpha / chi } else { f64::INFINITY },
        chi_hat,
        mse: mo.q - 2.0 * mo.m + rho,
        chi_rhs,
    })
}

/// Right-hand side of the dAT condition, `E S'(x⁰ + (√χ̂/Q̂)ξ; R/Q̂)²`.
pub fn dat_expectation(fp: &RsFixedPoint, _alpha: f64, rho: f64, epsilon: f64, quad: &Quadrature) -> Result<f64> {
    check_rho_eps(rho, epsilon)?;
    let den = logsum_denoiser(1.0 / fp.q_hat, epsilon)?;
    // √χ̂/Q̂ = sqrt(mse/α)
    let sigma = if fp.q_hat.is_finite() {
        fp.chi_hat.sqrt() / fp.q_hat
    } else {
        0.0
    };
    Ok(squared_derivative(&den, sigma, rho, quad))
}

pub fn dat_stable(fp: &RsFixedPoint, alpha: f64, rho: f64, epsilon: f64, quad: &Quadrature) -> Result<bool> {
    Ok(alpha > dat_expectation(fp, alpha, rho, epsilon, quad)?)
}

/// `Q̂` used to emulate the perfect-reconstruction limit: `λ/ε² = 10⁻¹⁰`.
fn limit_q_hat(epsilon: f64) -> f64 {
    1e10 / (epsilon * epsilon)
}

/// dAT right-hand side approaching perfect reconstruction along fixed
/// `u = ε²χ̂` (`Q̂ → ∞`). Tends to `ρ + 2(1-ρ)H(1/√u)`.
pub fn dat_expectation_perfect_limit(u: f64, alpha: f64, rho: f64, epsilon: f64, quad: &Quadrature) -> Result<f64> {
    let q_hat = limit_q_hat(epsilon);
    let chi_hat = u / (epsilon * epsilon);
    let chi = alpha / q_hat;
    let fp = RsFixedPoint {
        q_big: rho,
        m: rho,
        chi,
        q_hat,
        chi_hat,
        mse: 0.0,
        chi_rhs: 0.0,
    };
    dat_expectation(&fp, alpha, rho, epsilon, quad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub alpha: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// `None` when `u = F(u)` has no root at this `α`.
    pub chi_hat_star: Option<f64>,
    pub u_star: Option<f64>,
    pub f_prime: Option<f64>,
    pub alpha_c: f64,
    pub fixed_point_stable: bool,
    /// dAT right-hand side at the perfect-reconstruction limit.
    pub dat_rhs: Option<f64>,
    pub dat_stable: bool,
}

pub fn stability_report(alpha: f64, rho: f64, epsilon: f64, quad: &Quadrature) -> Result<StabilityReport> {
    let map = StabilityMap::new(alpha, rho, epsilon)?;
    let root = solve_u(&map);
    let a_c = alpha_c(rho, epsilon)?;
    let dat_rhs = match root {
        Some(r) => Some(dat_expectation_perfect_limit(r.u_star, alpha, rho, epsilon, quad)?),
        None => None,
    };
    Ok(StabilityReport {
        alpha,
        rho,
        epsilon,
        chi_hat_star: root.map(|r| r.chi_hat),
        u_star: root.map(|r| r.u_star),
        f_prime: root.map(|r| r.f_prime),
        alpha_c: a_c,
        fixed_point_stable: root.is_some_and(|r| r.stable),
        dat_rhs,
        dat_stable: dat_rhs.is_some_and(|d| alpha > d),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryMethod {
    SeAdaptive,
    SeL1,
    AnalyticFixedEps,
    ItLimit,
}

impl BoundaryMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryMethod::AnalyticFixedEps => "analytic_fixed_eps",
            BoundaryMethod::SeAdaptive => "se_adaptive",
            BoundaryMethod::SeL1 => "se_l1",
            BoundaryMethod::ItLimit => "it_limit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "analytic_fixed_eps" | "analytic" => Some(BoundaryMethod::AnalyticFixedEps),
            "se_adaptive" | "adaptive" => Some(BoundaryMethod::SeAdaptive),
            "se_l1" | "l1" => Some(BoundaryMethod::SeL1),
            "it_limit" | "it" => Some(BoundaryMethod::ItLimit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryRow {
    pub rho: f64,
    pub alpha_c: f64,
    pub epsilon: Option<f64>,
    pub method: BoundaryMethod,
    pub saturated: bool,
}

fn eps_cell(e: Option<f64>) -> String {
    e.map(float).unwrap_or_default()
}

/// `rho,alpha_c,epsilon,method`.
pub fn write_boundary_csv<W: Write>(rows: &[BoundaryRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "rho,alpha_c,epsilon,method")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", float(r.rho), float(r.alpha_c), eps_cell(r.epsilon), r.method.as_str())?;
    }
    Ok(())
}

/// `rho,alpha_c,method,epsilon,saturated`.
pub fn write_phase_csv<W: Write>(rows: &[BoundaryRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "rho,alpha_c,method,epsilon,saturated")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            float(r.rho),
            float(r.alpha_c),
            r.method.as_str(),
            eps_cell(r.epsilon),
            r.saturated
        )?;
    }
    Ok(())
}

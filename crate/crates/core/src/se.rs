//! State evolution: the deterministic `(MSE, χ)` recursion that tracks AMP in
//! the large-system limit.
//!
//! Expectations over `x⁰` and `ξ` are reduced to one-dimensional integrals over
//! the effective field `h = x⁰ + σξ`, `σ² = MSE/α`. Given `h`, the signal
//! component is Gaussian, so the `x⁰` average is exact:
//!
//! * `x⁰ = 0` branch: `h ~ N(0, σ²)`.
//! * `x⁰ ~ N(0, 1)` branch: `h ~ N(0, s²)` with `s² = 1 + σ²`, and
//!   `x⁰ | h ~ N(h/s², σ²/s²)`.
//!
//! On `|h|` above the denoiser cutoff the integrals are taken in the output
//! magnitude `z` with `h = h(z)`, so that `S'(h) dh = dz`. That keeps the
//! derivative moment finite and smooth even where `S'` blows up at the edge of
//! the convex regime.

use std::io::Write;

use libm::erf;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::amp::{Monitor, RunReport, Schedule, StoppingRule, TrajectoryPoint};
use crate::error::{Error, Result};
use crate::fmt::float;
use crate::prox::Denoiser;
use crate::quad::{integrate, normal_pdf, std_normal_pdf, GaussHermite, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeState {
    pub mse: f64,
    pub chi: f64,
    pub t: usize,
    pub flagged: bool,
}

impl SeState {
    pub fn new(mse: f64, chi: f64) -> Self {
        Self {
            mse,
            chi,
            t: 0,
            flagged: false,
        }
    }

    /// `(ρ, 1)`: the state of AMP started from `x̂ = 0`, `χ = 1`.
    pub fn uninformed(rho: f64) -> Self {
        Self::new(rho, 1.0)
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0)
    }

    fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.chi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    /// Gauss–Hermite nodes for the outer `x⁰` average of the nested route.
    pub hermite_nodes: usize,
    pub xi_abs_tol: f64,
    pub xi_rel_tol: f64,
    /// Half-width of the integration window in units of the field's standard
    /// deviation.
    pub xi_cutoff: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            hermite_nodes: 101,
            xi_abs_tol: 1e-12,
            xi_rel_tol: 1e-11,
            xi_cutoff: 10.0,
            max_intervals: 2000,
        }
    }
}

impl Quadrature {
    /// Twice the resolution: `2n + 1` nodes and halved tolerances.
    pub fn refined(&self) -> Self {
        Self {
            hermite_nodes: 2 * self.hermite_nodes + 1,
            xi_abs_tol: 0.5 * self.xi_abs_tol,
            xi_rel_tol: 0.5 * self.xi_rel_tol,
            xi_cutoff: self.xi_cutoff,
            max_intervals: 2 * self.max_intervals,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hermite_nodes % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "hermite_nodes must be odd, got {}",
                self.hermite_nodes
            )));
        }
        if !(self.xi_abs_tol > 0.0 && self.xi_rel_tol > 0.0 && self.xi_cutoff > 0.0) {
            return Err(Error::InvalidParameter("quadrature tolerances and cutoff must be positive".into()));
        }
        if self.max_intervals == 0 {
            return Err(Error::InvalidParameter("max_intervals must be positive".into()));
        }
        Ok(())
    }

    /// Absolute tolerance scaled with the field variance so that small
    /// MSE values keep their relative accuracy.
    fn tolerance(&self, sigma: f64) -> Tolerance {
        Tolerance {
            abs_tol: self.xi_abs_tol * (sigma * sigma).min(1.0),
            rel_tol: self.xi_rel_tol,
            max_intervals: self.max_intervals,
        }
    }
}

/// Which part of the Bernoulli–Gaussian mixture an average is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `x⁰ = 0`.
    Zero,
    /// `x⁰ ~ N(0, 1)`.
    Signal,
}

/// Averages of the denoiser output over `ξ` and `x⁰`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    /// `E (S - x⁰)²`
    pub mse: f64,
    /// `E S²`
    pub q: f64,
    /// `E x⁰ S`
    pub m: f64,
    /// `E S'`
    pub d: f64,
    /// `E ξ S`
    pub xi_s: f64,
    pub converged: bool,
}

impl Moments {
    fn mix(zero: Moments, signal: Moments, rho: f64) -> Moments {
        let w0 = 1.0 - rho;
        Moments {
            mse: w0 * zero.mse + rho * signal.mse,
            q: w0 * zero.q + rho * signal.q,
            m: w0 * zero.m + rho * signal.m,
            d: w0 * zero.d + rho * signal.d,
            xi_s: w0 * zero.xi_s + rho * signal.xi_s,
            converged: zero.converged && signal.converged,
        }
    }
}

fn field_scale(sigma: f64, branch: Branch) -> f64 {
    match branch {
        Branch::Zero => sigma,
        Branch::Signal => (1.0 + sigma * sigma).sqrt(),
    }
}

/// Breakpoints in `z` from the output floor up to the window edge.
fn z_points(den: &Denoiser, s: f64, top: f64) -> Vec<f64> {
    let z0 = den.output_floor();
    let mut pts = vec![z0, top];
    let mut scales = vec![s];
    if let Some(eps) = den.epsilon() {
        scales.push(eps);
    }
    for scale in scales {
        for k in [-12, -9, -6, -4, -3, -2, -1, 0] {
            let p = z0 + scale * 10f64.powi(k);
            if p > z0 && p < top {
                pts.push(p);
            }
        }
        for mult in [2.0, 4.0] {
            let p = z0 + scale * mult;
            if p < top {
                pts.push(p);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Moments over one branch for noise level `σ = sqrt(MSE/α)`.
pub fn branch_moments(den: &Denoiser, sigma: f64, branch: Branch, quad: &Quadrature) -> Moments {
    let s2 = match branch {
        Branch::Zero => sigma * sigma,
        Branch::Signal => 1.0 + sigma * sigma,
    };
    if s2 == 0.0 {
        return Moments {
            d: den.eval(0.0).1,
            converged: true,
            ..Default::default()
        };
    }
    let s = s2.sqrt();
    let (mean_coef, cond_var) = match branch {
        Branch::Zero => (0.0, 0.0),
        Branch::Signal => (1.0 / s2, sigma * sigma / s2),
    };

    // |h| <= cutoff: S = 0 and only the signal branch carries error.
    let c = den.cutoff();
    let mut mse = 0.0;
    if branch == Branch::Signal && c > 0.0 {
        let a = c / s;
        let p0 = erf(a / std::f64::consts::SQRT_2);
        let p2 = p0 - 2.0 * a * std_normal_pdf(a);
        mse += (p2 + sigma * sigma * p0) / s2;
    }

    let top = quad.xi_cutoff * s;
    if c >= top {
        return Moments {
            mse,
            converged: true,
            ..Default::default()
        };
    }
    let pts = z_points(den, s, top);
    let r = integrate(
        |z: f64| {
            let g = den.input_offset(z);
            let h = z + g;
            let w = normal_pdf(h, s);
            let wh = w * den.input_slope(z);
            let dev = match branch {
                Branch::Zero => z,
                // z - h/s² rearranged to avoid cancellation as σ → 0
                Branch::Signal => (z * sigma * sigma - g) / s2,
            };
            [
                (dev * dev + cond_var) * wh,
                z * z * wh,
                mean_coef * h * z * wh,
                w,
                h * z * wh,
            ]
        },
        &pts,
        &quad.tolerance(sigma),
    );
    let [i_mse, i_q, i_m, i_d, i_hs] = r.value;
    Moments {
        mse: mse + 2.0 * i_mse,
        q: 2.0 * i_q,
        m: 2.0 * i_m,
        d: 2.0 * i_d,
        // E[ξ | h] = σ h / s² on both branches
        xi_s: 2.0 * i_hs * sigma / s2,
        converged: r.converged,
    }
}

/// Mixture moments `(1-ρ)·zero + ρ·signal`.
pub fn moments(den: &Denoiser, sigma: f64, rho: f64, quad: &Quadrature) -> Moments {
    Moments::mix(
        branch_moments(den, sigma, Branch::Zero, quad),
        branch_moments(den, sigma, Branch::Signal, quad),
        rho,
    )
}

/// `E S'(h)²` over the mixture; infinite when `S'` has a non-integrable
/// singularity (log-sum exactly at `ε = sqrt(λ)`).
pub fn squared_derivative(den: &Denoiser, sigma: f64, rho: f64, quad: &Quadrature) -> f64 {
    let branch = |b: Branch| -> f64 {
        let s = field_scale(sigma, b);
        if s == 0.0 {
            let d = den.eval(0.0).1;
            return d * d;
        }
        let top = quad.xi_cutoff * s;
        if den.cutoff() >= top {
            return 0.0;
        }
        if den.input_slope(den.output_floor()) <= 0.0 {
            return f64::INFINITY;
        }
        let pts = z_points(den, s, top);
        let r = integrate(
            |z: f64| [normal_pdf(den.input_at(z), s) / den.input_slope(z)],
            &pts,
            &quad.tolerance(sigma),
        );
        2.0 * r.value[0]
    };
    (1.0 - rho) * branch(Branch::Zero) + rho * branch(Branch::Signal)
}

fn validate_rates(alpha: f64, rho: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

fn flagged(state: &SeState) -> SeState {
    SeState {
        t: state.t + 1,
        flagged: true,
        ..*state
    }
}

/// One step of the recursion together with the moments that produced it.
pub fn se_map(state: &SeState, alpha: f64, rho: f64, schedule: &Schedule, quad: &Quadrature) -> (SeState, Moments) {
    if state.flagged || !state.is_finite() || state.mse < 0.0 || state.chi < 0.0 {
        return (flagged(state), Moments::default());
    }
    if state.mse == 0.0 && state.chi == 0.0 {
        let next = SeState {
            t: state.t + 1,
            ..*state
        };
        return (next, Moments::default());
    }
    let lambda = state.chi / alpha;
    let den = match schedule.denoiser(lambda) {
        Ok(d) => d,
        Err(_) => return (flagged(state), Moments::default()),
    };
    let sigma = (state.mse / alpha).sqrt();
    let mo = moments(&den, sigma, rho, quad);
    let next = SeState {
        mse: mo.mse,
        chi: lambda * mo.d,
        t: state.t + 1,
        flagged: false,
    };
    if next.is_finite() {
        (next, mo)
    } else {
        (flagged(state), mo)
    }
}

/// One step `(MSE, χ) ↦ (MSE', χ')`. Invalid steps (adaptive `ε ≤ 0`,
/// non-finite values) return a flagged state.
pub fn se_step(state: &SeState, alpha: f64, rho: f64, schedule: &Schedule, quad: &Quadrature) -> SeState {
    se_map(state, alpha, rho, schedule, quad).0
}

/// The same step computed the direct way: Gauss–Hermite over `x⁰` and an
/// adaptive `ξ` integral split at the denoiser breakpoints. Slower and less
/// accurate for small `σ`; kept as an independent cross-check.
pub fn se_step_nested(state: &SeState, alpha: f64, rho: f64, schedule: &Schedule, quad: &Quadrature) -> SeState {
    if state.flagged || !state.is_finite() {
        return flagged(state);
    }
    if state.mse == 0.0 && state.chi == 0.0 {
        return SeState {
            t: state.t + 1,
            ..*state
        };
    }
    let lambda = state.chi / alpha;
    let den = match schedule.denoiser(lambda) {
        Ok(d) => d,
        Err(_) => return flagged(state),
    };
    let sigma = (state.mse / alpha).sqrt();
    let l = quad.xi_cutoff;
    let c = den.cutoff();
    let tol = Tolerance {
        abs_tol: quad.xi_abs_tol,
        rel_tol: quad.xi_rel_tol,
        max_intervals: quad.max_intervals,
    };
    let inner = |x0: f64| -> [f64; 2] {
        if sigma == 0.0 {
            let (v, d) = den.eval(x0);
            return [(v - x0) * (v - x0), d];
        }
        let mut pts = vec![-l, l];
        for b in [-c, c] {
            let p = (b - x0) / sigma;
            if p > -l && p < l {
                pts.push(p);
            }
        }
        pts.sort_by(f64::total_cmp);
        integrate(
            |xi: f64| {
                let (v, d) = den.eval(x0 + sigma * xi);
                let w = std_normal_pdf(xi);
                [(v - x0) * (v - x0) * w, d * w]
            },
            &pts,
            &tol,
        )
        .value
    };
    let gh = GaussHermite::new(quad.hermite_nodes);
    let zero = inner(0.0);
    let (mut mse_s, mut d_s) = (0.0, 0.0);
    for (&x, &w) in gh.nodes.iter().zip(&gh.weights) {
        let v = inner(x);
        mse_s += w * v[0];
        d_s += w * v[1];
    }
    let mse = (1.0 - rho) * zero[0] + rho * mse_s;
    let d = (1.0 - rho) * zero[1] + rho * d_s;
    SeState {
        mse,
        chi: lambda * d,
        t: state.t + 1,
        flagged: !(mse.is_finite() && d.is_finite()),
    }
}

/// Iterates [`se_step`] from `init` under `stop`.
pub fn se_run(
    alpha: f64,
    rho: f64,
    schedule: &Schedule,
    init: SeState,
    stop: &StoppingRule,
    quad: &Quadrature,
) -> Result<RunReport> {
    validate_rates(alpha, rho)?;
    schedule.validate()?;
    stop.validate()?;
    quad.validate()?;
    let mut monitor = Monitor::new(*stop);
    let mut state = init;
    let mut trajectory = Vec::new();
    loop {
        trajectory.push(TrajectoryPoint::new(state.t, state.mse, state.chi, alpha, schedule));
        if let Some(status) = monitor.observe(state.t, state.mse, state.flagged) {
            return Ok(RunReport {
                trajectory,
                status,
                iterations: state.t,
                k_clamped: 0,
            });
        }
        state = se_step(&state, alpha, rho, schedule, quad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNode {
    pub mse: f64,
    pub chi: f64,
    pub d_mse: f64,
    pub d_chi: f64,
    pub magnitude: f64,
}

/// `n` points log-spaced over `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// 40 × 40 log-spaced nodes over `[10⁻⁶, 1] × [10⁻⁶, 2]`.
pub fn default_grid() -> (Vec<f64>, Vec<f64>) {
    (log_space(1e-6, 1.0, 40), log_space(1e-6, 2.0, 40))
}

/// One-step displacement at every `(mse, chi)` grid node, followed by the
/// origin. Nodes are ordered by MSE, then χ.
pub fn vector_field(
    alpha: f64,
    rho: f64,
    schedule: &Schedule,
    mse_values: &[f64],
    chi_values: &[f64],
    quad: &Quadrature,
) -> Result<Vec<FieldNode>> {
    validate_rates(alpha, rho)?;
    schedule.validate()?;
    quad.validate()?;
    if mse_values.iter().chain(chi_values).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("grid values must be positive".into()));
    }
    let mut nodes: Vec<(f64, f64)> = mse_values
        .iter()
        .flat_map(|&m| chi_values.iter().map(move |&c| (m, c)))
        .collect();
    nodes.push((0.0, 0.0));
    Ok(nodes
        .par_iter()
        .map(|&(mse, chi)| {
            let next = se_step(&SeState::new(mse, chi), alpha, rho, schedule, quad);
            let (d_mse, d_chi) = if next.flagged {
                (f64::NAN, f64::NAN)
            } else {
                (next.mse - mse, next.chi - chi)
            };
            FieldNode {
                mse,
                chi,
                d_mse,
                d_chi,
                magnitude: d_mse.hypot(d_chi),
            }
        })
        .collect())
}

pub fn write_field_csv<W: Write>(nodes: &[FieldNode], mut w: W) -> std::io::Result<()> {
    writeln!(w, "mse,chi,d_mse,d_chi,magnitude")?;
    for n in nodes {
        writeln!(
            w,
            "{},{},{},{},{}",
            float(n.mse),
            float(n.chi),
            float(n.d_mse),
            float(n.d_chi),
            float(n.magnitude)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Both `|ΔMSE|` and `|Δχ|` below this ends the iteration.
    pub step_tol: f64,
    pub t_max: usize,
    /// Max-norm distance under which two end points are the same.
    pub dedup_tol: f64,
    /// End points with `max(MSE, χ)` below this are the origin.
    pub origin_snap: f64,
    /// Below this the state counts as having collapsed onto the origin.
    pub origin_floor: f64,
    pub mse_diverge: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            step_tol: 1e-10,
            t_max: 10_000,
            dedup_tol: 1e-6,
            origin_snap: 1e-6,
            origin_floor: 1e-14,
            mse_diverge: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub mse: f64,
    pub chi: f64,
    /// Reached by iteration from at least one init other than itself.
    pub stable: bool,
    /// Indices into the init list.
    pub reached_from: Vec<usize>,
}

impl FixedPoint {
    pub fn is_origin(&self) -> bool {
        self.mse == 0.0 && self.chi == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitOutcome {
    /// Index into the fixed-point list.
    FixedPoint(usize),
    Diverged,
    Unconverged { mse: f64, chi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub inits: Vec<SeState>,
    pub points: Vec<FixedPoint>,
    pub outcomes: Vec<InitOutcome>,
}

impl FixedPointReport {
    pub fn stable_points(&self) -> impl Iterator<Item = &FixedPoint> {
        self.points.iter().filter(|p| p.stable)
    }

    pub fn origin_index(&self) -> Option<usize> {
        self.points.iter().position(FixedPoint::is_origin)
    }

    /// True when init `i` ended on the origin.
    pub fn reaches_origin(&self, i: usize) -> bool {
        matches!(self.outcomes[i], InitOutcome::FixedPoint(k) if self.points[k].is_origin())
    }

    /// `mse,chi,stable,reached_from`; `reached_from` lists the init states as
    /// `mse:chi` pairs separated by `;`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mse,chi,stable,reached_from")?;
        for p in &self.points {
            let from: Vec<String> = p
                .reached_from
                .iter()
                .map(|&i| format!("{}:{}", float(self.inits[i].mse), float(self.inits[i].chi)))
                .collect();
            writeln!(w, "{},{},{},{}", float(p.mse), float(p.chi), p.stable, from.join(";"))?;
        }
        Ok(())
    }
}

enum Walk {
    Settled { mse: f64, chi: f64 },
    Diverged,
    Unconverged { mse: f64, chi: f64 },
}

fn walk(init: &SeState, alpha: f64, rho: f64, schedule: &Schedule, quad: &Quadrature, opts: &FixedPointOptions) -> Walk {
    let mut s = *init;
    for _ in 0..opts.t_max {
        if s.mse.max(s.chi) < opts.origin_floor {
            return Walk::Settled { mse: 0.0, chi: 0.0 };
        }
        let next = se_step(&s, alpha, rho, schedule, quad);
        if next.flagged || next.mse > opts.mse_diverge {
            return Walk::Diverged;
        }
        let dm = (next.mse - s.mse).abs();
        let dc = (next.chi - s.chi).abs();
        s = next;
        // near the origin the absolute step test is meaningless; keep going
        // until the state collapses or escapes
        if dm < opts.step_tol && dc < opts.step_tol && s.mse.max(s.chi) >= opts.origin_snap {
            return Walk::Settled { mse: s.mse, chi: s.chi };
        }
    }
    Walk::Unconverged { mse: s.mse, chi: s.chi }
}

/// Iterates from every init until the state settles, then merges end points
/// closer than `dedup_tol`. End points near the origin are snapped to it.
pub fn stable_fixed_points(
    alpha: f64,
    rho: f64,
    schedule: &Schedule,
    quad: &Quadrature,
    inits: &[SeState],
    opts: &FixedPointOptions,
) -> Result<FixedPointReport> {
    validate_rates(alpha, rho)?;
    schedule.validate()?;
    quad.validate()?;
    if inits.is_empty() {
        return Err(Error::InvalidParameter("at least one init is required".into()));
    }
    let walks: Vec<Walk> = inits
        .par_iter()
        .map(|s| walk(s, alpha, rho, schedule, quad, opts))
        .collect();
    let mut points: Vec<FixedPoint> = Vec::new();
    let mut outcomes = Vec::with_capacity(inits.len());
    for (i, w) in walks.into_iter().enumerate() {
        let outcome = match w {
            Walk::Settled { mut mse, mut chi } => {
                if mse.max(chi) < opts.origin_snap {
                    mse = 0.0;
                    chi = 0.0;
                }
                let found = points
                    .iter()
                    .position(|p| (p.mse - mse).abs().max((p.chi - chi).abs()) <= opts.dedup_tol);
                let k = match found {
                    Some(k) => k,
                    None => {
                        points.push(FixedPoint {
                            mse,
                            chi,
                            stable: false,
                            reached_from: Vec::new(),
                        });
                        points.len() - 1
                    }
                };
                points[k].reached_from.push(i);
                // an init sitting exactly on the point says nothing about stability
                points[k].stable |= (inits[i].mse, inits[i].chi) != (mse, chi);
                InitOutcome::FixedPoint(k)
            }
            Walk::Diverged => InitOutcome::Diverged,
            Walk::Unconverged { mse, chi } => InitOutcome::Unconverged { mse, chi },
        };
        outcomes.push(outcome);
    }
    Ok(FixedPointReport {
        inits: inits.to_vec(),
        points,
        outcomes,
    })
}

/// Monte-Carlo estimate of one step, returning `(MSE', χ')` and their
/// standard errors. Used to validate the quadrature.
pub fn se_step_monte_carlo(
    state: &SeState,
    alpha: f64,
    rho: f64,
    schedule: &Schedule,
    samples: usize,
    seed: u64,
) -> Result<([f64; 2], [f64; 2])> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let lambda = state.chi / alpha;
    let den = schedule.denoiser(lambda)?;
    let sigma = (state.mse / alpha).sqrt();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2, mut d1, mut d2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let active = rng.gen::<f64>() < rho;
        let g: f64 = rng.sample(StandardNormal);
        let xi: f64 = rng.sample(StandardNormal);
        let x0 = if active { g } else { 0.0 };
        let (v, d) = den.eval(x0 + sigma * xi);
        let e = (v - x0) * (v - x0);
        let c = lambda * d;
        s1 += e;
        s2 += e * e;
        d1 += c;
        d2 += c * c;
    }
    let n = samples as f64;
    let se = |a: f64, b: f64| ((b / n - (a / n).powi(2)) / (n - 1.0)).max(0.0).sqrt();
    Ok(([s1 / n, d1 / n], [se(s1, s2), se(d1, d2)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amp::Status;
    use crate::quad::integrate_scalar;

    fn q() -> Quadrature {
        Quadrature::default()
    }

    #[test]
    fn origin_is_fixed() {
        for sched in [Schedule::Fixed { epsilon: 1.0 }, Schedule::Adaptive { delta_epsilon: 0.0 }] {
            let s = se_step(&SeState::origin(), 0.5, 0.2, &sched, &q());
            assert_eq!((s.mse, s.chi, s.flagged), (0.0, 0.0, false));
        }
    }

    #[test]
    fn matches_monte_carlo() {
        let state = SeState::new(0.2, 1.0);
        let sched = Schedule::Adaptive { delta_epsilon: 0.0 };
        let s = se_step(&state, 0.5, 0.2, &sched, &q());
        let (mean, se) = se_step_monte_carlo(&state, 0.5, 0.2, &sched, 10_000_000, 12345).unwrap();
        assert!((s.mse - mean[0]).abs() < 3.0 * se[0], "{} {} {}", s.mse, mean[0], se[0]);
        assert!((s.chi - mean[1]).abs() < 3.0 * se[1], "{} {} {}", s.chi, mean[1], se[1]);
    }

    #[test]
    fn matches_nested_quadrature() {
        let cases = [
            (SeState::new(0.2, 1.0), Schedule::Fixed { epsilon: 2.0 }),
            (SeState::new(0.1, 0.3), Schedule::Fixed { epsilon: 0.5 }),
            (SeState::new(0.05, 0.2), Schedule::Adaptive { delta_epsilon: 0.3 }),
            (SeState::new(0.3, 0.8), Schedule::SoftThreshold),
        ];
        for (state, sched) in cases {
            let a = se_step(&state, 0.5, 0.2, &sched, &q());
            let b = se_step_nested(&state, 0.5, 0.2, &sched, &q());
            assert!((a.mse - b.mse).abs() < 1e-7 * a.mse, "{sched:?} {} {}", a.mse, b.mse);
            assert!((a.chi - b.chi).abs() < 1e-7 * a.chi, "{sched:?} {} {}", a.chi, b.chi);
        }
    }

    #[test]
    fn zero_branch_is_output_power() {
        let quad = q();
        for (lambda, eps, sigma) in [(2.0, 1.0, 0.6), (0.5, 1.0, 0.3), (4.0, 0.5, 2.0)] {
            let den = Schedule::Fixed { epsilon: eps }.denoiser(lambda).unwrap();
            let b = branch_moments(&den, sigma, Branch::Zero, &quad);
            let c = den.cutoff() / sigma;
            let tol = Tolerance {
                abs_tol: 1e-14,
                rel_tol: 1e-12,
                max_intervals: 4000,
            };
            let (direct, _) = integrate_scalar(
                |xi| {
                    let v = den.eval(sigma * xi).0;
                    v * v * std_normal_pdf(xi)
                },
                &[c, 12.0],
                &tol,
            );
            assert!((b.mse - 2.0 * direct).abs() < 1e-10 * b.mse.max(1e-300), "{} {}", b.mse, 2.0 * direct);
            assert_eq!(b.mse, b.q);
            assert_eq!(b.m, 0.0);
        }
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let coarse = q();
        let fine = coarse.refined();
        assert_eq!(fine.hermite_nodes % 2, 1);
        let mses = log_space(1e-6, 0.5, 5);
        let chis = [1e-4, 0.05, 0.5, 1.5];
        let sched = Schedule::Adaptive { delta_epsilon: 0.0 };
        for &m in &mses {
            for &c in &chis {
                let s = SeState::new(m, c);
                let a = se_step(&s, 0.5, 0.2, &sched, &coarse);
                let b = se_step(&s, 0.5, 0.2, &sched, &fine);
                assert!((a.mse - b.mse).abs() <= 1e-8 * b.mse, "{m} {c}: {} {}", a.mse, b.mse);
                assert!((a.chi - b.chi).abs() <= 1e-8 * b.chi, "{m} {c}: {} {}", a.chi, b.chi);
            }
        }
    }

    #[test]
    fn stein_identity_in_convex_regime() {
        // continuous S: E ξ S = σ E S'
        let den = Schedule::Fixed { epsilon: 2.0 }.denoiser(1.5).unwrap();
        let sigma = 0.7;
        let mo = moments(&den, sigma, 0.3, &q());
        assert!((mo.xi_s - sigma * mo.d).abs() < 1e-10);
        assert!((mo.mse - (mo.q - 2.0 * mo.m + 0.3)).abs() < 1e-10);
    }

    #[test]
    fn identity_denoiser_moments() {
        let mo = moments(&Denoiser::Identity, 0.5, 0.2, &q());
        assert!((mo.mse - 0.25).abs() < 1e-11);
        assert!((mo.d - 1.0).abs() < 1e-11);
        assert!((mo.q - 0.45).abs() < 1e-11);
        assert!((mo.m - 0.2).abs() < 1e-11);
    }

    #[test]
    fn fixed_eps_two_converges() {
        let r = se_run(
            0.5,
            0.2,
            &Schedule::Fixed { epsilon: 2.0 },
            SeState::uninformed(0.2),
            &StoppingRule::se(),
            &q(),
        )
        .unwrap();
        assert_eq!(r.status, Status::Converged);
        assert!(r.trajectory.windows(2).all(|w| w[1].mse < w[0].mse));
    }

    #[test]
    fn phase_points_run_outcomes() {
        let sched = Schedule::Adaptive { delta_epsilon: 0.0 };
        let stop = StoppingRule::se();
        let easy = se_run(0.6, 0.2, &sched, SeState::uninformed(0.2), &stop, &q()).unwrap();
        assert_eq!(easy.status, Status::Converged);
        let hard = se_run(0.38, 0.2, &sched, SeState::uninformed(0.2), &stop, &q()).unwrap();
        assert_eq!(hard.status, Status::MaxIters);
        assert!(hard.final_mse() > 1e-3);
        // below the information-theoretic line the uninformed run neither
        // reconstructs nor blows up: it settles on a finite-error point
        let imp = se_run(0.16, 0.2, &sched, SeState::uninformed(0.2), &stop, &q()).unwrap();
        assert_eq!(imp.status, Status::MaxIters);
        assert!(imp.final_mse() > 0.2);
        let far = se_run(0.16, 0.2, &sched, SeState::new(1.0, 0.01), &stop, &q()).unwrap();
        assert_eq!(far.status, Status::Diverged);
    }

    #[test]
    fn fixed_points_in_easy_and_hard_phase() {
        let sched = Schedule::Adaptive { delta_epsilon: 0.0 };
        let inits = [SeState::uninformed(0.2), SeState::new(1e-6, 1e-6)];
        let opts = FixedPointOptions::default();
        let easy = stable_fixed_points(0.6, 0.2, &sched, &q(), &inits, &opts).unwrap();
        assert_eq!(easy.stable_points().count(), 1);
        assert!(easy.points[0].is_origin());

        let hard = stable_fixed_points(0.38, 0.2, &sched, &q(), &inits, &opts).unwrap();
        assert_eq!(hard.stable_points().count(), 2, "{hard:?}");
        assert!(hard.reaches_origin(1));
        assert!(!hard.reaches_origin(0));

        let inits = [SeState::uninformed(0.2), SeState::new(1e-8, 1e-8), SeState::origin()];
        let imp = stable_fixed_points(0.16, 0.2, &sched, &q(), &inits, &opts).unwrap();
        let origin = &imp.points[imp.origin_index().unwrap()];
        assert!(!origin.stable);
        assert_eq!(origin.reached_from, vec![2]);
        assert!(!imp.reaches_origin(1));
        let trap: Vec<_> = imp.stable_points().collect();
        assert_eq!(trap.len(), 1, "{imp:?}");
        assert!((trap[0].mse - 0.2811587).abs() < 1e-6);
    }

    #[test]
    fn vector_field_layout() {
        let sched = Schedule::Adaptive { delta_epsilon: 0.0 };
        let f = vector_field(0.6, 0.2, &sched, &[0.1, 0.2], &[0.5, 1.0, 1.5], &q()).unwrap();
        assert_eq!(f.len(), 7);
        let last = f.last().unwrap();
        assert_eq!((last.mse, last.chi, last.d_mse, last.d_chi), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((f[1].mse, f[1].chi), (0.1, 1.0));
        let s = se_step(&SeState::new(0.2, 1.5), 0.6, 0.2, &sched, &q());
        assert_eq!(f[5].d_mse, s.mse - 0.2);
        assert!(vector_field(0.6, 0.2, &sched, &[0.0], &[1.0], &q()).is_err());
    }
}

//! Phase diagram construction: reconstruction boundaries per `ρ`, phase
//! labels from state-evolution fixed points, and the AMP convergence-time
//! benchmark.

use std::io::Write;

use log::{debug, warn};
use rayon::prelude::*;

use crate::amp::{run, AmpState, Schedule, Stall, Status, StoppingRule};
use crate::error::{Error, Result};
use crate::fmt::float;
use crate::model::{generate, ProblemSpec, DEFAULT_MEMORY_BUDGET};
pub use crate::replica::{BoundaryMethod, BoundaryRow};
use crate::replica::alpha_c;
use crate::se::{se_run, se_step, stable_fixed_points, FixedPointOptions, Quadrature, SeState};

/// Bisection depth cap for boundary searches.
pub const MAX_BISECTION_DEPTH: usize = 40;

/// Number of interior rates re-evaluated after each bisection.
pub const AUDIT_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryQuery {
    pub rho_grid: Vec<f64>,
    pub method: BoundaryMethod,
    /// Required for the analytic fixed-`ε` method.
    pub epsilon: Option<f64>,
    pub alpha_tolerance: f64,
    pub quad: Quadrature,
    pub stop: StoppingRule,
}

impl BoundaryQuery {
    pub fn new(rho_grid: Vec<f64>, method: BoundaryMethod) -> Self {
        Self {
            rho_grid,
            method,
            epsilon: None,
            alpha_tolerance: 1e-3,
            quad: Quadrature::default(),
            stop: StoppingRule::se(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho_grid.is_empty() {
            return Err(Error::InvalidParameter("rho grid is empty".into()));
        }
        if self.rho_grid.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::InvalidParameter("rho grid values must lie in (0, 1)".into()));
        }
        if self.rho_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("rho grid must be strictly ascending".into()));
        }
        if !(self.alpha_tolerance > 0.0) {
            return Err(Error::InvalidParameter("alpha tolerance must be positive".into()));
        }
        if self.method == BoundaryMethod::AnalyticFixedEps {
            match self.epsilon {
                Some(e) if e > 0.0 => {}
                _ => {
                    return Err(Error::InvalidParameter(
                        "the analytic fixed-epsilon method needs a positive epsilon".into(),
                    ))
                }
            }
        }
        self.quad.validate()?;
        self.stop.validate()
    }

    fn schedule(&self) -> Option<Schedule> {
        match self.method {
            BoundaryMethod::SeAdaptive => Some(Schedule::Adaptive { delta_epsilon: 0.0 }),
            BoundaryMethod::SeL1 => Some(Schedule::SoftThreshold),
            _ => None,
        }
    }
}

/// Outcome of bisecting a monotone success predicate on `α ∈ (lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    /// Smallest rate known to succeed.
    pub alpha: f64,
    /// Largest rate known to fail.
    pub below: f64,
    pub saturated: bool,
    pub depth: usize,
    /// Audit rates that contradict a single threshold.
    pub audit_violations: Vec<f64>,
}

/// Finds the smallest `α` in `(lo, hi]` where `success` holds, assuming a
/// single threshold, then audits that assumption at interior rates.
pub fn bisect_threshold<F: Fn(f64) -> bool + Sync>(success: F, lo: f64, hi: f64, tol: f64) -> Result<Bisection> {
    if success(lo) {
        warn!("success predicate already holds at the lower bracket {lo}");
        return Ok(Bisection {
            alpha: lo,
            below: lo,
            saturated: true,
            depth: 0,
            audit_violations: Vec::new(),
        });
    }
    let first = (lo + tol).min(hi);
    if success(first) {
        return Ok(Bisection {
            alpha: first,
            below: lo,
            saturated: true,
            depth: 0,
            audit_violations: Vec::new(),
        });
    }
    if !success(hi) {
        return Err(Error::NoBracket(format!("success predicate fails at the upper bracket {hi}")));
    }
    let (mut a, mut b) = (first, hi);
    let mut depth = 0;
    while b - a > tol && depth < MAX_BISECTION_DEPTH {
        let mid = 0.5 * (a + b);
        if success(mid) {
            b = mid;
        } else {
            a = mid;
        }
        depth += 1;
    }
    let probes: Vec<f64> = (1..=AUDIT_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (AUDIT_POINTS + 1) as f64)
        .collect();
    let verdicts: Vec<bool> = probes.par_iter().map(|&x| success(x)).collect();
    let mut audit_violations = Vec::new();
    for (&x, &ok) in probes.iter().zip(&verdicts) {
        let expected = x >= b;
        if (x <= a || x >= b) && ok != expected {
            warn!("threshold audit: predicate is {ok} at alpha={x}, outside the bracket [{a}, {b}]");
            audit_violations.push(x);
        }
    }
    Ok(Bisection {
        alpha: b,
        below: a,
        saturated: false,
        depth,
        audit_violations,
    })
}

/// Success predicate of the boundary search: state evolution from `(ρ, 1)`
/// ends with MSE below the success threshold.
pub fn se_succeeds(alpha: f64, rho: f64, schedule: &Schedule, stop: &StoppingRule, quad: &Quadrature) -> Result<bool> {
    let r = se_run(alpha, rho, schedule, SeState::uninformed(rho), stop, quad)?;
    Ok(r.succeeded(stop))
}

/// One boundary row per `ρ` in the query, evaluated in parallel and
/// returned in grid order.
pub fn boundary(query: &BoundaryQuery) -> Result<Vec<BoundaryRow>> {
    query.validate()?;
    query
        .rho_grid
        .par_iter()
        .map(|&rho| boundary_at(query, rho))
        .collect()
}

fn boundary_at(query: &BoundaryQuery, rho: f64) -> Result<BoundaryRow> {
    let row = |alpha_c: f64, saturated: bool| BoundaryRow {
        rho,
        alpha_c,
        epsilon: query.epsilon.filter(|_| query.method == BoundaryMethod::AnalyticFixedEps),
        method: query.method,
        saturated,
    };
    match query.method {
        BoundaryMethod::ItLimit => Ok(row(rho, false)),
        BoundaryMethod::AnalyticFixedEps => Ok(row(alpha_c(rho, query.epsilon.unwrap_or(1.0))?, false)),
        BoundaryMethod::SeAdaptive | BoundaryMethod::SeL1 => {
            let schedule = query.schedule().expect("SE method");
            let success = |a: f64| se_succeeds(a, rho, &schedule, &query.stop, &query.quad).unwrap_or(false);
            let b = bisect_threshold(success, rho, 1.0, query.alpha_tolerance)?;
            debug!(
                "rho={rho} method={} alpha in ({}, {}] after {} steps",
                query.method.as_str(),
                b.below,
                b.alpha,
                b.depth
            );
            Ok(row(b.alpha, b.saturated))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Easy,
    Hard,
    Impossible,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Easy => "EASY",
            Phase::Hard => "HARD",
            Phase::Impossible => "IMPOSSIBLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLabel {
    pub label: Phase,
    /// Stable fixed points found from the two probes, as `(mse, χ)`.
    pub fixed_points: Vec<(f64, f64)>,
}

/// The informed probe used to test whether the origin attracts.
pub const INFORMED_INIT: (f64, f64) = (1e-8, 1e-8);

/// Labels `(α, ρ)` from where state evolution goes when started uninformed
/// at `(ρ, 1)` and informed at `(10⁻⁸, 10⁻⁸)`.
pub fn classify(alpha: f64, rho: f64, schedule: &Schedule, quad: &Quadrature) -> Result<PhaseLabel> {
    let inits = [SeState::uninformed(rho), SeState::new(INFORMED_INIT.0, INFORMED_INIT.1)];
    let report = stable_fixed_points(alpha, rho, schedule, quad, &inits, &FixedPointOptions::default())?;
    let label = if report.reaches_origin(0) {
        Phase::Easy
    } else if report.reaches_origin(1) {
        Phase::Hard
    } else {
        Phase::Impossible
    };
    Ok(PhaseLabel {
        label,
        fixed_points: report.stable_points().map(|p| (p.mse, p.chi)).collect(),
    })
}

/// Settings for [`origin_attracting`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginProbe {
    pub mse0: f64,
    /// Success once MSE has shrunk by this factor.
    pub shrink: f64,
    /// Failure once MSE has grown by this factor.
    pub grow: f64,
    pub t_max: usize,
}

impl Default for OriginProbe {
    fn default() -> Self {
        Self {
            mse0: 1e-12,
            shrink: 1e-6,
            grow: 1e3,
            t_max: 20_000,
        }
    }
}

/// Starting `χ` for the probe. For fixed `ε` it puts `u = ε²χ̂ = ε²α·MSE/χ²`
/// at one, inside the basin of the stable branch of the `u` dynamics.
fn probe_chi(alpha: f64, mse0: f64, schedule: &Schedule) -> f64 {
    match *schedule {
        Schedule::Fixed { epsilon } => epsilon * (alpha * mse0).sqrt(),
        _ => mse0,
    }
}

/// Whether state evolution started next to the origin falls into it.
pub fn origin_attracting(alpha: f64, rho: f64, schedule: &Schedule, quad: &Quadrature, probe: &OriginProbe) -> bool {
    let mut s = SeState::new(probe.mse0, probe_chi(alpha, probe.mse0, schedule));
    for _ in 0..probe.t_max {
        s = se_step(&s, alpha, rho, schedule, quad);
        if s.flagged || s.mse > probe.mse0 * probe.grow {
            return false;
        }
        if s.mse < probe.mse0 * probe.shrink {
            return true;
        }
    }
    false
}

/// Smallest `α` at which the origin attracts nearby state-evolution
/// trajectories, by bisection on `(ρ, 1)`.
pub fn origin_stability_threshold(
    rho: f64,
    schedule: &Schedule,
    quad: &Quadrature,
    probe: &OriginProbe,
    tol: f64,
) -> Result<Bisection> {
    bisect_threshold(|a| origin_attracting(a, rho, schedule, quad, probe), rho, 1.0, tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchDenoiser {
    LogSumAdaptive { delta_epsilon: f64 },
    L1,
}

impl BenchDenoiser {
    pub fn schedule(&self) -> Schedule {
        match *self {
            BenchDenoiser::LogSumAdaptive { delta_epsilon } => Schedule::Adaptive { delta_epsilon },
            BenchDenoiser::L1 => Schedule::SoftThreshold,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BenchDenoiser::LogSumAdaptive { delta_epsilon } if delta_epsilon == 0.0 => "logsum_adaptive".into(),
            BenchDenoiser::LogSumAdaptive { delta_epsilon } => format!("logsum_adaptive(delta_epsilon={delta_epsilon})"),
            BenchDenoiser::L1 => "l1".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub rho: f64,
    pub alpha_grid: Vec<f64>,
    pub n: usize,
    pub seeds: usize,
    /// Instance `i` uses seed `base_seed ^ i`.
    pub base_seed: u64,
    pub denoisers: Vec<BenchDenoiser>,
    pub stop: StoppingRule,
    pub memory_budget: u64,
}

impl BenchConfig {
    /// Desk-scale defaults: `N = 2000`, 10 seeds, `ρ = 0.4`.
    pub fn desk(alpha_grid: Vec<f64>) -> Self {
        Self {
            rho: 0.4,
            alpha_grid,
            n: 2000,
            seeds: 10,
            base_seed: 0,
            denoisers: vec![BenchDenoiser::LogSumAdaptive { delta_epsilon: 0.0 }, BenchDenoiser::L1],
            stop: StoppingRule {
                stall: Some(Stall {
                    window: 2000,
                    min_relative_decrease: 1e-3,
                }),
                ..StoppingRule::amp()
            },
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds < 2 {
            return Err(Error::InvalidParameter("the benchmark needs at least two seeds".into()));
        }
        if self.alpha_grid.is_empty() || self.denoisers.is_empty() {
            return Err(Error::InvalidParameter("alpha grid and denoiser list must be nonempty".into()));
        }
        for &a in &self.alpha_grid {
            ProblemSpec::new(self.n, a, self.rho, 0)?;
        }
        self.stop.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub alpha: f64,
    pub denoiser: String,
    /// Mean iterations to convergence over converged runs; NaN if none.
    pub mean_tau: f64,
    /// Standard error of `mean_tau`; NaN with fewer than two converged runs.
    pub stderr: f64,
    pub n_converged: usize,
    pub n_failed: usize,
    pub taus: Vec<Option<usize>>,
}

fn summarize(alpha: f64, denoiser: String, taus: Vec<Option<usize>>) -> BenchRow {
    let ok: Vec<f64> = taus.iter().flatten().map(|&t| t as f64).collect();
    let k = ok.len();
    let mean = if k > 0 { ok.iter().sum::<f64>() / k as f64 } else { f64::NAN };
    let stderr = if k > 1 {
        let var = ok.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        f64::NAN
    };
    BenchRow {
        alpha,
        denoiser,
        mean_tau: mean,
        stderr,
        n_converged: k,
        n_failed: taus.len() - k,
        taus,
    }
}

/// Runs AMP from `x̂ = 0` on `seeds` instances per rate for every denoiser.
/// Each instance is shared by all denoisers. Rows are ordered by rate, then
/// by the denoiser list.
pub fn convergence_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = (0..cfg.alpha_grid.len())
        .flat_map(|a| (0..cfg.seeds as u64).map(move |s| (a, s)))
        .collect();
    let results: Vec<Result<Vec<Option<usize>>>> = jobs
        .par_iter()
        .map(|&(ai, index)| {
            let spec = ProblemSpec::new(cfg.n, cfg.alpha_grid[ai], cfg.rho, cfg.base_seed)?.instance(index);
            let budget_spec = spec.bytes_required();
            if budget_spec > cfg.memory_budget {
                return Err(Error::Capacity {
                    requested: budget_spec,
                    budget: cfg.memory_budget,
                });
            }
            let inst = generate(&spec)?;
            cfg.denoisers
                .iter()
                .map(|d| {
                    let r = run(&inst, &d.schedule(), AmpState::initial(&inst), &cfg.stop)?;
                    debug!(
                        "alpha={} seed={} {}: {} after {}",
                        spec.alpha,
                        spec.seed,
                        d.label(),
                        r.status.as_str(),
                        r.iterations
                    );
                    Ok((r.status == Status::Converged).then_some(r.iterations))
                })
                .collect()
        })
        .collect();
    let mut per_job = Vec::with_capacity(results.len());
    for r in results {
        per_job.push(r?);
    }
    let mut rows = Vec::new();
    for (ai, &alpha) in cfg.alpha_grid.iter().enumerate() {
        for (di, d) in cfg.denoisers.iter().enumerate() {
            let taus: Vec<Option<usize>> = jobs
                .iter()
                .zip(&per_job)
                .filter(|((a, _), _)| *a == ai)
                .map(|(_, t)| t[di])
                .collect();
            rows.push(summarize(alpha, d.label(), taus));
        }
    }
    Ok(rows)
}

/// `alpha,denoiser,mean_tau,stderr,n_converged,n_failed`.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "alpha,denoiser,mean_tau,stderr,n_converged,n_failed")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            float(r.alpha),
            r.denoiser,
            float(r.mean_tau),
            float(r.stderr),
            r.n_converged,
            r.n_failed
        )?;
    }
    Ok(())
}

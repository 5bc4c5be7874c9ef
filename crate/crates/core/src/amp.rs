//! Approximate message passing with a separable thresholding denoiser.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fmt::float;
use crate::model::{mse, ProblemInstance};
use crate::prox::{soft_threshold, Denoiser, LogSumParams, LogSumProx};

/// How the smoothing parameter of the log-sum denoiser is chosen each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Constant `ε`.
    Fixed { epsilon: f64 },
    /// `ε[t] = sqrt(λ[t]) + Δε`; any real `Δε` is accepted.
    Adaptive { delta_epsilon: f64 },
    /// ℓ1 baseline: soft threshold at `λ[t]`.
    SoftThreshold,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Fixed { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => Err(
                Error::InvalidParameter(format!("fixed epsilon must be positive, got {epsilon}")),
            ),
            Schedule::Adaptive { delta_epsilon } if !delta_epsilon.is_finite() => Err(
                Error::InvalidParameter(format!("delta_epsilon must be finite, got {delta_epsilon}")),
            ),
            _ => Ok(()),
        }
    }

    /// `ε` used at threshold level `λ`; NaN for the soft threshold.
    pub fn epsilon_at(&self, lambda: f64) -> f64 {
        match *self {
            Schedule::Fixed { epsilon } => epsilon,
            Schedule::Adaptive { delta_epsilon } => lambda.max(0.0).sqrt() + delta_epsilon,
            Schedule::SoftThreshold => f64::NAN,
        }
    }

    /// Denoiser `S(·; λR)` for this step. Fails when the adaptive offset
    /// drives `ε` to zero or below.
    pub fn denoiser(&self, lambda: f64) -> Result<Denoiser> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("threshold level {lambda} is not a finite nonnegative number")));
        }
        if lambda == 0.0 {
            return Ok(Denoiser::Identity);
        }
        match *self {
            Schedule::SoftThreshold => Ok(Denoiser::Soft { theta: lambda }),
            _ => {
                let eps = self.epsilon_at(lambda);
                let params = LogSumParams::new(lambda, eps)?;
                Ok(Denoiser::LogSum(LogSumProx::new(params)))
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Schedule::Fixed { epsilon } => format!("fixed(epsilon={epsilon})"),
            Schedule::Adaptive { delta_epsilon } => format!("adaptive(delta_epsilon={delta_epsilon})"),
            Schedule::SoftThreshold => "l1".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub x_hat: Vec<f64>,
    pub z: Vec<f64>,
    pub chi: f64,
    pub t: usize,
    pub diverged: bool,
}

impl AmpState {
    /// `x̂ = 0`, `z = y`, `χ = 1`.
    pub fn initial(instance: &ProblemInstance) -> Self {
        Self {
            x_hat: vec![0.0; instance.n()],
            z: instance.y.clone(),
            chi: 1.0,
            t: 0,
            diverged: false,
        }
    }

    fn is_finite(&self) -> bool {
        self.chi.is_finite() && self.x_hat.iter().chain(&self.z).all(|v| v.is_finite())
    }
}

/// Largest Onsager factor `k` applied; keeps diverging trajectories finite.
pub const DEFAULT_K_MAX: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stall {
    pub window: usize,
    pub min_relative_decrease: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub mse_converge: f64,
    pub mse_diverge: f64,
    pub t_max: usize,
    /// Final MSE below which a run counts as a successful reconstruction.
    pub success_mse: f64,
    /// Give up once the MSE has not dropped by the given fraction over a
    /// whole window.
    pub stall: Option<Stall>,
    pub k_max: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self::amp()
    }
}

impl StoppingRule {
    pub fn amp() -> Self {
        Self {
            mse_converge: 1e-10,
            mse_diverge: 1e4,
            t_max: 50_000,
            success_mse: 1e-10,
            stall: None,
            k_max: DEFAULT_K_MAX,
        }
    }

    pub fn se() -> Self {
        Self {
            mse_converge: 1e-4,
            mse_diverge: 1e4,
            t_max: 1000,
            success_mse: 1e-3,
            stall: None,
            k_max: DEFAULT_K_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mse_converge > 0.0 && self.mse_diverge > self.mse_converge) {
            return Err(Error::InvalidParameter(
                "stopping thresholds must satisfy 0 < mse_converge < mse_diverge".into(),
            ));
        }
        if !(self.k_max > 0.0) {
            return Err(Error::InvalidParameter("k_max must be positive".into()));
        }
        if let Some(s) = self.stall {
            if s.window == 0 || !(s.min_relative_decrease >= 0.0 && s.min_relative_decrease < 1.0) {
                return Err(Error::InvalidParameter("stall window must be positive and its decrease in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
    Diverged,
    Stalled,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "CONVERGED",
            Status::MaxIters => "MAX_ITERS",
            Status::Diverged => "DIVERGED",
            Status::Stalled => "STALLED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub mse: f64,
    pub chi: f64,
    /// `χ / χ_c` with `χ_c = ε²α`; above one the next step is nonconvex.
    pub chi_over_chi_c: f64,
    pub epsilon_t: f64,
}

impl TrajectoryPoint {
    pub fn new(t: usize, mse: f64, chi: f64, alpha: f64, schedule: &Schedule) -> Self {
        let epsilon_t = schedule.epsilon_at(chi / alpha);
        Self {
            t,
            mse,
            chi,
            chi_over_chi_c: chi / (epsilon_t * epsilon_t * alpha),
            epsilon_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub trajectory: Vec<TrajectoryPoint>,
    pub status: Status,
    pub iterations: usize,
    /// Steps at which the Onsager factor hit `k_max`.
    pub k_clamped: usize,
}

impl RunReport {
    pub fn final_point(&self) -> &TrajectoryPoint {
        self.trajectory.last().expect("trajectory holds the initial point")
    }

    pub fn final_mse(&self) -> f64 {
        self.final_point().mse
    }

    pub fn succeeded(&self, rule: &StoppingRule) -> bool {
        self.status == Status::Converged
            || (self.status != Status::Diverged && self.final_mse() < rule.success_mse)
    }

    /// `t,mse,chi,chi_over_chi_c,epsilon_t`.
    pub fn write_amp_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mse,chi,chi_over_chi_c,epsilon_t")?;
        for p in &self.trajectory {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.t,
                float(p.mse),
                float(p.chi),
                float(p.chi_over_chi_c),
                float(p.epsilon_t)
            )?;
        }
        Ok(())
    }

    /// `t,mse,chi,epsilon_t,status`; the status column is `RUNNING` until the
    /// last row.
    pub fn write_se_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mse,chi,epsilon_t,status")?;
        let last = self.trajectory.len().saturating_sub(1);
        for (i, p) in self.trajectory.iter().enumerate() {
            let status = if i == last { self.status.as_str() } else { "RUNNING" };
            writeln!(w, "{},{},{},{},{}", p.t, float(p.mse), float(p.chi), float(p.epsilon_t), status)?;
        }
        Ok(())
    }
}

/// Tracks the stopping conditions shared by AMP and state evolution runs.
pub(crate) struct Monitor {
    rule: StoppingRule,
    history: Vec<f64>,
}

impl Monitor {
    pub(crate) fn new(rule: StoppingRule) -> Self {
        Self { rule, history: Vec::new() }
    }

    /// Status after observing `mse` at iteration `t`, or `None` to continue.
    pub(crate) fn observe(&mut self, t: usize, mse: f64, flagged: bool) -> Option<Status> {
        if flagged || !mse.is_finite() || mse > self.rule.mse_diverge {
            return Some(Status::Diverged);
        }
        if mse < self.rule.mse_converge {
            return Some(Status::Converged);
        }
        if t >= self.rule.t_max {
            return Some(Status::MaxIters);
        }
        if let Some(stall) = self.rule.stall {
            self.history.push(mse);
            let len = self.history.len();
            if len > stall.window {
                let before = self.history[len - 1 - stall.window];
                if mse > before * (1.0 - stall.min_relative_decrease) {
                    return Some(Status::Stalled);
                }
            }
        }
        None
    }
}

/// Component-wise soft threshold at `λ` and the mean of its derivative.
pub fn soft_amp_denoiser(h: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let mut values = Vec::with_capacity(h.len());
    let mut d = 0.0;
    for &x in h {
        let (v, dv) = soft_threshold(x, lambda);
        values.push(v);
        d += dv;
    }
    let mean = if h.is_empty() { 0.0 } else { d / h.len() as f64 };
    (values, mean)
}

/// One AMP sweep; the returned flag is true when `k` was clamped.
fn step(state: &AmpState, instance: &ProblemInstance, schedule: &Schedule, k_max: f64) -> (AmpState, bool) {
    let (n, m) = (instance.n(), instance.m());
    let alpha = instance.alpha();
    let flagged = |mut s: AmpState| {
        s.t += 1;
        s.diverged = true;
        (s, false)
    };
    if state.diverged {
        return flagged(state.clone());
    }
    let lambda = state.chi / alpha;
    let denoiser = match schedule.denoiser(lambda) {
        Ok(d) => d,
        Err(_) => return flagged(state.clone()),
    };

    let mut h = vec![0.0; n];
    instance.a.mul_vec_t(&state.z, &mut h);
    let scale = n as f64 / m as f64;
    let mut x_hat = vec![0.0; n];
    let mut sum_d = 0.0;
    for i in 0..n {
        let hi = state.x_hat[i] + scale * h[i];
        let (v, d) = denoiser.eval(hi);
        x_hat[i] = v;
        sum_d += d;
    }
    let mut k = sum_d / (alpha * n as f64);
    let clamped = k > k_max;
    if clamped {
        k = k_max;
    }

    let mut z = vec![0.0; m];
    instance.a.mul_vec(&x_hat, &mut z);
    for mu in 0..m {
        z[mu] = instance.y[mu] - z[mu] + state.z[mu] * k;
    }
    let mut next = AmpState {
        x_hat,
        z,
        chi: state.chi * k,
        t: state.t + 1,
        diverged: false,
    };
    // k = 0 (every component thresholded) leaves chi = 0, from which the
    // recursion degenerates into an unthresholded iteration. chi = 0 is only
    // admissible at an exact fit.
    let collapsed = !(next.chi > 0.0) && next.z.iter().any(|v| *v != 0.0);
    next.diverged = !next.is_finite() || collapsed;
    (next, clamped)
}

/// One AMP sweep in the order `h`, `λ`, `k`, `x̂`, `z`, `χ`. Non-finite
/// results, a collapse of `χ` to zero, or an adaptive `ε ≤ 0` come back as a
/// state flagged diverged.
pub fn amp_step(state: &AmpState, instance: &ProblemInstance, schedule: &Schedule) -> AmpState {
    step(state, instance, schedule, DEFAULT_K_MAX).0
}

/// Iterates [`amp_step`] from `init`, recording every iteration.
pub fn run(instance: &ProblemInstance, schedule: &Schedule, init: AmpState, stop: &StoppingRule) -> Result<RunReport> {
    schedule.validate()?;
    stop.validate()?;
    if init.x_hat.len() != instance.n() {
        return Err(Error::Shape { expected: instance.n(), actual: init.x_hat.len() });
    }
    if init.z.len() != instance.m() {
        return Err(Error::Shape { expected: instance.m(), actual: init.z.len() });
    }
    let alpha = instance.alpha();
    let mut monitor = Monitor::new(*stop);
    let mut state = init;
    let mut k_clamped = 0;
    let mut trajectory = Vec::new();
    loop {
        let err = mse(&state.x_hat, &instance.x0)?;
        trajectory.push(TrajectoryPoint::new(state.t, err, state.chi, alpha, schedule));
        if let Some(status) = monitor.observe(state.t, err, state.diverged) {
            return Ok(RunReport {
                trajectory,
                status,
                iterations: state.t,
                k_clamped,
            });
        }
        let (next, clamped) = step(&state, instance, schedule, stop.k_max);
        k_clamped += clamped as usize;
        state = next;
    }
}

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Set `LOGSUM_AMP_LONG=1` for the informational
//! benchmark at `N = 10⁴`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use logsum_amp::amp::{self, AmpState, RunReport, Schedule, Status, StoppingRule};
use logsum_amp::model::{generate, ProblemSpec};
use logsum_amp::phase::{
    self, classify, convergence_bench, origin_stability_threshold, BenchConfig, BoundaryQuery, OriginProbe, Phase,
    PhaseLabel,
};
use logsum_amp::prox::{LogSumParams, LogSumProx, Regime};
use logsum_amp::replica::{self, alpha_c, critical_u, BoundaryMethod};
use logsum_amp::se::{se_run, Quadrature, SeState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHA: f64 = 0.5;
const RHO: f64 = 0.2;
const N_LARGE: usize = 10_000;
const SEEDS: u64 = 10;
const FIXED_CONVERGENT: [f64; 3] = [1.0, 2.0, 4.0];
const FIXED_DIVERGENT: [f64; 2] = [0.25, 0.5];
const DELTAS: [f64; 3] = [0.0, 0.3, 1.0];
const DELTA_NEG: f64 = -0.1;
const RHOS: [f64; 3] = [0.1, 0.2, 0.4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "{} criterion {id} ({title}): {} [{:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
    o.pass
}

// ---------------------------------------------------------------- prox

/// Scalar objective, written out here so the oracle shares no code with the
/// closed form.
fn objective(x: f64, z: f64, lambda: f64, eps: f64) -> f64 {
    0.5 * (z - x) * (z - x) + lambda * (z.abs() / eps).ln_1p()
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimizer by brute force: a 4000-cell grid on `[0, |x|]`, then golden
/// section inside the neighbourhood of every local grid minimum.
fn grid_oracle(x: f64, lambda: f64, eps: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 {
        return 0.0;
    }
    let g = 4000;
    let f = |z: f64| objective(a, z, lambda, eps);
    let zs: Vec<f64> = (0..=g).map(|i| a * i as f64 / g as f64).collect();
    let fs: Vec<f64> = zs.iter().map(|&z| f(z)).collect();
    let mut best = (fs[0], 0.0);
    for i in 0..=g {
        let left = i == 0 || fs[i] <= fs[i - 1];
        let right = i == g || fs[i] <= fs[i + 1];
        if left && right {
            let lo = zs[i.saturating_sub(1)];
            let hi = zs[(i + 1).min(g)];
            let z = golden_min(f, lo, hi);
            for cand in [z, zs[i]] {
                let v = f(cand);
                if v < best.0 {
                    best = (v, cand);
                }
            }
        }
    }
    best.1.copysign(x)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen::<f64>() * (hi / lo).ln()).exp() * lo
}

fn random_prox(rng: &mut ChaCha8Rng) -> (f64, LogSumProx) {
    let x = rng.gen_range(-10.0..10.0);
    let lambda = log_uniform(rng, 1e-2, 10.0);
    let eps = log_uniform(rng, 1e-2, 10.0);
    (x, LogSumProx::new(LogSumParams::new(lambda, eps).unwrap()))
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut checked, mut banded, mut nonconvex) = (0.0f64, 0, 0, 0);
    let t = Instant::now();
    for _ in 0..10_000 {
        let (x, p) = random_prox(&mut rng);
        if p.regime() == Regime::Nonconvex {
            nonconvex += 1;
            if (x.abs() - p.cutoff()).abs() < 1e-3 {
                banded += 1;
                continue;
            }
        }
        let lp = p.params();
        let err = (p.apply(x).value - grid_oracle(x, lp.lambda(), lp.epsilon())).abs();
        worst = worst.max(err);
        checked += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 60.0,
        format!("max |S - oracle| = {worst:.2e} over {checked} triples ({nonconvex} nonconvex, {banded} inside the jump band), {secs:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..10_000 {
        let (x, p) = random_prox(&mut rng);
        if (x.abs() - p.cutoff()).abs() < 1e-3 {
            continue;
        }
        let fd = (p.apply(x + h).value - p.apply(x - h).value) / (2.0 * h);
        worst = worst.max((fd - p.apply(x).derivative).abs());
        checked += 1;
    }
    let fd_ok = worst <= 1e-4;

    let mut monotone = 0;
    let pairs = 200;
    for _ in 0..pairs {
        let lambda = log_uniform(&mut rng, 0.1, 10.0);
        let eps = lambda.sqrt() * rng.gen_range(0.05..0.95);
        let p = LogSumProx::new(LogSumParams::new(lambda, eps).unwrap());
        let xc = p.cutoff();
        let d: Vec<f64> = (2..=8).map(|k| p.apply(xc + 10f64.powi(-k)).derivative).collect();
        if d.windows(2).all(|w| w[1] > w[0]) {
            monotone += 1;
        }
    }
    outcome(
        fd_ok && monotone == pairs,
        format!(
            "max |FD - S'| = {worst:.2e} over {checked} points; S'(x_c + 10^-k) increasing over k = 2..8 for {monotone}/{pairs} nonconvex pairs"
        ),
    )
}

// ---------------------------------------------------------------- SE suite

/// Every state-evolution number the criteria use, computed at one
/// quadrature resolution.
struct SeSuite {
    /// MSE for `t = 0..=30`, per convergent fixed `ε`.
    fixed_curves: Vec<Vec<f64>>,
    adaptive: Vec<RunReport>,
    adaptive_neg: RunReport,
    labels: Vec<PhaseLabel>,
    /// `(ρ, α_adaptive, α_ℓ1)`.
    boundaries: Vec<(f64, f64, f64, bool)>,
    /// `(ε, ρ, threshold)`.
    thresholds: Vec<(f64, f64, f64)>,
}

const PHASE_POINTS: [(f64, Phase); 3] = [(0.6, Phase::Easy), (0.38, Phase::Hard), (0.16, Phase::Impossible)];

fn se_suite(quad: &Quadrature) -> SeSuite {
    let init = SeState::uninformed(RHO);
    let to_30 = StoppingRule {
        mse_converge: 1e-300,
        t_max: 30,
        ..StoppingRule::se()
    };
    let fixed_curves = FIXED_CONVERGENT
        .iter()
        .map(|&epsilon| {
            let r = se_run(ALPHA, RHO, &Schedule::Fixed { epsilon }, init, &to_30, quad).unwrap();
            r.trajectory.iter().map(|p| p.mse).collect()
        })
        .collect();
    let adaptive = DELTAS
        .iter()
        .map(|&delta_epsilon| {
            se_run(ALPHA, RHO, &Schedule::Adaptive { delta_epsilon }, init, &StoppingRule::se(), quad).unwrap()
        })
        .collect();
    let adaptive_neg = se_run(
        ALPHA,
        RHO,
        &Schedule::Adaptive {
            delta_epsilon: DELTA_NEG,
        },
        init,
        &StoppingRule::se(),
        quad,
    )
    .unwrap();
    let labels = PHASE_POINTS
        .iter()
        .map(|&(a, _)| classify(a, RHO, &Schedule::Adaptive { delta_epsilon: 0.0 }, quad).unwrap())
        .collect();
    let bound = |m| {
        phase::boundary(&BoundaryQuery {
            quad: *quad,
            ..BoundaryQuery::new(RHOS.to_vec(), m)
        })
        .unwrap()
    };
    let ad = bound(BoundaryMethod::SeAdaptive);
    let l1 = bound(BoundaryMethod::SeL1);
    let boundaries = ad
        .iter()
        .zip(&l1)
        .map(|(a, l)| (a.rho, a.alpha_c, l.alpha_c, a.saturated || l.saturated))
        .collect();
    let mut thresholds = Vec::new();
    for eps in [0.1, 1.0] {
        for rho in RHOS {
            let b = origin_stability_threshold(rho, &Schedule::Fixed { epsilon: eps }, quad, &OriginProbe::default(), 1e-4)
                .unwrap();
            thresholds.push((eps, rho, 0.5 * (b.below + b.alpha)));
        }
    }
    SeSuite {
        fixed_curves,
        adaptive,
        adaptive_neg,
        labels,
        boundaries,
        thresholds,
    }
}

impl SeSuite {
    fn numbers(&self) -> Vec<(String, f64)> {
        let mut v = Vec::new();
        for (e, c) in FIXED_CONVERGENT.iter().zip(&self.fixed_curves) {
            for (t, m) in c.iter().enumerate() {
                v.push((format!("fixed eps={e} mse[{t}]"), *m));
            }
        }
        for (d, r) in DELTAS.iter().zip(&self.adaptive) {
            v.push((format!("adaptive d={d} iterations"), r.iterations as f64));
            for p in &r.trajectory {
                v.push((format!("adaptive d={d} mse[{}]", p.t), p.mse));
                v.push((format!("adaptive d={d} chi[{}]", p.t), p.chi));
            }
        }
        v.push(("adaptive d=-0.1 converged".into(), (self.adaptive_neg.status == Status::Converged) as u8 as f64));
        for ((a, _), l) in PHASE_POINTS.iter().zip(&self.labels) {
            for (k, (m, c)) in l.fixed_points.iter().enumerate() {
                v.push((format!("alpha={a} fixed point {k} mse"), *m));
                v.push((format!("alpha={a} fixed point {k} chi"), *c));
            }
        }
        for (rho, ad, l1, _) in &self.boundaries {
            v.push((format!("rho={rho} alpha_adaptive"), *ad));
            v.push((format!("rho={rho} alpha_l1"), *l1));
        }
        for (e, rho, t) in &self.thresholds {
            v.push((format!("eps={e} rho={rho} SE threshold"), *t));
        }
        v
    }
}

// ---------------------------------------------------------------- AMP at N = 10⁴

struct AmpRuns {
    /// Per seed, per convergent fixed `ε`.
    fixed: Vec<Vec<RunReport>>,
    divergent: Vec<Vec<RunReport>>,
    adaptive: Vec<Vec<RunReport>>,
    adaptive_neg: Vec<RunReport>,
}

fn amp_runs() -> AmpRuns {
    let stop = StoppingRule {
        mse_converge: 1e-4,
        success_mse: 1e-4,
        t_max: 2000,
        ..StoppingRule::amp()
    };
    let mut runs = AmpRuns {
        fixed: Vec::new(),
        divergent: Vec::new(),
        adaptive: Vec::new(),
        adaptive_neg: Vec::new(),
    };
    // One instance in memory at a time: A alone is 400 MB.
    for s in 0..SEEDS {
        let inst = generate(&ProblemSpec::new(N_LARGE, ALPHA, RHO, 2024).unwrap().instance(s)).unwrap();
        let go = |sched: Schedule| amp::run(&inst, &sched, AmpState::initial(&inst), &stop).unwrap();
        runs.fixed.push(FIXED_CONVERGENT.iter().map(|&e| go(Schedule::Fixed { epsilon: e })).collect());
        runs.divergent.push(FIXED_DIVERGENT.iter().map(|&e| go(Schedule::Fixed { epsilon: e })).collect());
        runs.adaptive.push(DELTAS.iter().map(|&d| go(Schedule::Adaptive { delta_epsilon: d })).collect());
        runs.adaptive_neg.push(go(Schedule::Adaptive { delta_epsilon: DELTA_NEG }));
    }
    runs
}

fn criterion_3(se: &SeSuite, amp: &AmpRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, &eps) in FIXED_CONVERGENT.iter().enumerate() {
        let converged = amp.fixed.iter().filter(|r| r[k].status == Status::Converged).count();
        let curve = &se.fixed_curves[k];
        let mut gap = 0.0f64;
        let mut covered = true;
        for t in 0..=30 {
            let vals: Vec<f64> = amp.fixed.iter().filter_map(|r| r[k].trajectory.get(t).map(|p| p.mse)).collect();
            if vals.len() != SEEDS as usize || t >= curve.len() {
                covered = false;
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            gap = gap.max((mean - curve[t]).abs());
        }
        ok &= converged == SEEDS as usize && covered && gap <= 0.02;
        parts.push(format!("eps={eps}: {converged}/{SEEDS} below 1e-4, max |mean AMP - SE| over t<=30 = {gap:.4}"));
    }
    for (k, &eps) in FIXED_DIVERGENT.iter().enumerate() {
        let mut good = 0;
        for r in amp.divergent.iter().map(|r| &r[k]) {
            let cross = r.trajectory.iter().position(|p| p.chi_over_chi_c > 1.0);
            let blow = r.trajectory.iter().position(|p| p.mse > 1e4);
            if let (Some(c), Some(b)) = (cross, blow) {
                if c <= b {
                    good += 1;
                }
            }
        }
        ok &= good == SEEDS as usize;
        parts.push(format!("eps={eps}: chi > chi_c then MSE > 1e4 in {good}/{SEEDS}"));
    }
    outcome(ok, parts.join("; "))
}

fn monotone(r: &RunReport) -> bool {
    r.trajectory.windows(2).all(|w| w[1].mse <= w[0].mse)
}

fn criterion_4(se: &SeSuite, amp: &AmpRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut se_iters = Vec::new();
    let mut amp_iters = Vec::new();
    for (k, &d) in DELTAS.iter().enumerate() {
        let r = &se.adaptive[k];
        let amp_conv = amp.adaptive.iter().filter(|a| a[k].status == Status::Converged).count();
        let mean = amp.adaptive.iter().map(|a| a[k].iterations as f64).sum::<f64>() / SEEDS as f64;
        ok &= r.status == Status::Converged && monotone(r) && amp_conv == SEEDS as usize;
        se_iters.push(r.iterations);
        amp_iters.push(mean);
        parts.push(format!(
            "d={d}: SE {} in {} (monotone {}), AMP {amp_conv}/{SEEDS} in {mean:.1} mean",
            r.status.as_str(),
            r.iterations,
            monotone(r)
        ));
    }
    let ordered = se_iters.windows(2).all(|w| w[0] < w[1]) && amp_iters.windows(2).all(|w| w[0] < w[1]);
    ok &= ordered;
    let amp_div = amp.adaptive_neg.iter().filter(|r| r.status == Status::Diverged).count();
    let neg = &se.adaptive_neg;
    let se_peak = neg.trajectory.iter().map(|p| p.mse).fold(0.0, f64::max);
    let se_fails = neg.status != Status::Converged && se_peak > RHO;
    ok &= amp_div == SEEDS as usize && se_fails;
    parts.push(format!("ordered by d: {ordered}"));
    parts.push(format!(
        "d=-0.1: AMP DIVERGED {amp_div}/{SEEDS}, SE {} with peak MSE {se_peak:.3}",
        neg.status.as_str()
    ));
    outcome(ok, parts.join("; "))
}

fn criterion_5(se: &SeSuite, secs: f64) -> Outcome {
    let mut ok = secs < 300.0;
    let mut parts = Vec::new();
    for ((a, want), l) in PHASE_POINTS.iter().zip(&se.labels) {
        let count_ok = *want != Phase::Hard || l.fixed_points.len() == 2;
        ok &= l.label == *want && count_ok;
        parts.push(format!("alpha={a}: {} with {} stable points", l.label.as_str(), l.fixed_points.len()));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_6(se: &SeSuite) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(rho, ad, l1, saturated) in &se.boundaries {
        let analytic: Vec<f64> = [1e-2, 1e-1, 1.0].iter().map(|&e| alpha_c(rho, e).unwrap()).collect();
        let good = !saturated
            && ad - rho > 1e-3
            && l1 - ad > 1e-3
            && analytic.windows(2).all(|w| w[0] < w[1]);
        ok &= good;
        parts.push(format!(
            "rho={rho}: adaptive {ad:.4} < l1 {l1:.4}, analytic {:.4} < {:.4} < {:.4}",
            analytic[0], analytic[1], analytic[2]
        ));
    }
    let tiny = alpha_c(0.2, 1e-4).unwrap();
    ok &= tiny > 0.2 && tiny - 0.2 < 0.01;
    parts.push(format!("alpha_c(0.2, 1e-4) - 0.2 = {:.2e}", tiny - 0.2));
    outcome(ok, parts.join("; "))
}

fn criterion_7(se: &SeSuite) -> Outcome {
    let quad = Quadrature::default();
    let (mut worst, mut worst_dat) = (0.0f64, 0.0f64);
    for &(eps, rho, threshold) in &se.thresholds {
        let (a, u) = critical_u(rho, eps).unwrap();
        worst = worst.max((threshold - a).abs());
        let dat = replica::dat_expectation_perfect_limit(u, a, rho, eps, &quad).unwrap();
        worst_dat = worst_dat.max((dat - a).abs());
    }
    outcome(
        worst <= 2e-3 && worst_dat <= 1e-6,
        format!("max |SE threshold - alpha_c| = {worst:.2e}, max |dAT - alpha_c| = {worst_dat:.2e} over 6 (eps, rho) pairs"),
    )
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let rows = convergence_bench(&BenchConfig::desk(vec![0.5, 0.8, 0.9, 1.0])).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let mut ok = secs < 900.0;
    let mut parts = Vec::new();
    for pair in rows.chunks(2) {
        let (log, l1) = (&pair[0], &pair[1]);
        if log.alpha == 0.5 {
            ok &= log.n_converged == 0 && l1.n_converged == 0;
            parts.push(format!("alpha=0.5: converged {} / {}", log.n_converged, l1.n_converged));
        } else {
            // Failed runs have infinite tau, so the l1 mean over converged
            // runs is a lower bound.
            let l1_mean = if l1.n_converged == 0 { f64::INFINITY } else { l1.mean_tau };
            ok &= log.n_converged == 10 && log.mean_tau <= l1_mean / 3.0;
            parts.push(format!(
                "alpha={}: tau {:.1} vs l1 {:.1} ({} l1 failures)",
                log.alpha, log.mean_tau, l1.mean_tau, l1.n_failed
            ));
        }
    }
    parts.push(format!("N=2000, {secs:.0}s"));
    outcome(ok, parts.join("; "))
}

fn long_benchmark() {
    let cfg = BenchConfig {
        n: 10_000,
        stop: StoppingRule::amp(),
        ..BenchConfig::desk(vec![0.8, 0.9, 1.0])
    };
    // One worker keeps a single 800 MB instance in memory.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let rows = pool.install(|| convergence_bench(&cfg)).unwrap();
    for pair in rows.chunks(2) {
        println!(
            "INFO criterion 8 at N=10000, alpha={}: tau log-sum {:.1}, l1 {:.1} ({} failed), ratio {:.1}",
            pair[0].alpha,
            pair[0].mean_tau,
            pair[1].mean_tau,
            pair[1].n_failed,
            pair[1].mean_tau / pair[0].mean_tau
        );
    }
}

fn criterion_9(base: &SeSuite) -> Outcome {
    let refined = se_suite(&Quadrature::default().refined());
    let (a, b) = (base.numbers(), refined.numbers());
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.0 != y.0) {
        return outcome(false, "refined run produced a different set of numbers".into());
    }
    let mut worst = (0.0f64, String::new());
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        let rel = if x == y { 0.0 } else { (x - y).abs() / x.abs().max(y.abs()) };
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    outcome(
        worst.0 < 1e-6,
        format!("{} SE numbers, max relative change {:.2e} ({})", a.len(), worst.0, worst.1),
    )
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let mut results = Vec::new();
    results.push(report(1, "prox oracle", criterion_1));
    results.push(report(2, "derivative suite", criterion_2));

    let t = Instant::now();
    let se = se_suite(&Quadrature::default());
    let se_secs = t.elapsed().as_secs_f64();
    let amp = amp_runs();

    results.push(report(3, "fixed epsilon trajectories", || criterion_3(&se, &amp)));
    results.push(report(4, "adaptive trajectories", || criterion_4(&se, &amp)));
    results.push(report(5, "phase labels", || criterion_5(&se, se_secs)));
    results.push(report(6, "boundary ordering", || criterion_6(&se)));
    results.push(report(7, "replica and SE agree", || criterion_7(&se)));
    results.push(report(8, "convergence time", criterion_8));
    if std::env::var("LOGSUM_AMP_LONG").is_ok_and(|v| v == "1") {
        long_benchmark();
    }
    results.push(report(9, "quadrature robustness", || criterion_9(&se)));

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

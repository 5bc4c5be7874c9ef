//! One function per subcommand. Each resolves its parameters through
//! [`Config`], computes, and returns the full output so nothing is written
//! when a later step fails.

use logsum_amp::amp::{self, AmpState, Schedule, Stall, Status, StoppingRule};
use logsum_amp::model::{self, ProblemSpec, DEFAULT_MEMORY_BUDGET};
use logsum_amp::phase::{self, BenchConfig, BenchDenoiser, BoundaryQuery};
use logsum_amp::prox::{LogSumParams, LogSumProx};
use logsum_amp::replica::{self, BoundaryMethod, BoundaryRow};
use logsum_amp::se::{self, FixedPointOptions, Quadrature, SeState};
use logsum_amp::{fmt::float, Error};
use serde_json::{json, Map, Value};

use crate::config::{Config, FloatList, NameList};
use crate::error::CliError;
use crate::{
    AmpRunArgs, BenchArgs, Command, PhaseBoundaryArgs, Product, ProxEvalArgs, QuadArgs, ReplicaArgs, ScheduleArgs,
    SeFieldArgs, SeRunArgs, StopArgs,
};

/// Largest `prox-eval` table.
const MAX_GRID_POINTS: i64 = 10_000_000;

pub fn dispatch(command: &Command, cfg: &mut Config) -> Result<Product, CliError> {
    let name = command.name();
    match command {
        Command::ProxEval(a) => prox_eval(a, cfg, name),
        Command::AmpRun(a) => amp_run(a, cfg, name),
        Command::SeRun(a) => se_run(a, cfg, name),
        Command::SeField(a) => se_field(a, cfg, name),
        Command::PhaseBoundary(a) => phase_boundary(a, cfg, name),
        Command::Bench(a) => bench(a, cfg, name),
        Command::ReplicaAlphac(a) => replica_alphac(a, cfg, name),
    }
}

fn csv(cfg: &Config, name: &str, body: Vec<u8>) -> Vec<u8> {
    let mut out = cfg.header(name).into_bytes();
    out.extend(body);
    out
}

fn table<F>(write: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn schedule(cfg: &mut Config, a: &ScheduleArgs, default: &str) -> Result<Schedule, CliError> {
    let kind = cfg.get("denoiser", a.denoiser.clone(), default.to_string())?;
    let epsilon = cfg.get("epsilon", a.epsilon, 1.0)?;
    let delta_epsilon = cfg.get("delta_epsilon", a.delta_epsilon, 0.0)?;
    let s = match kind.as_str() {
        "fixed" => Schedule::Fixed { epsilon },
        "adaptive" => Schedule::Adaptive { delta_epsilon },
        "l1" => Schedule::SoftThreshold,
        other => {
            return Err(CliError::Usage(format!(
                "unknown denoiser {other:?}; expected fixed, adaptive or l1"
            )))
        }
    };
    s.validate()?;
    Ok(s)
}

fn stopping(cfg: &mut Config, a: &StopArgs, base: StoppingRule) -> Result<StoppingRule, CliError> {
    let default_window = base.stall.map_or(0, |s| s.window);
    let default_rel = base.stall.map_or(1e-3, |s| s.min_relative_decrease);
    let rule = StoppingRule {
        t_max: cfg.get("t_max", a.t_max, base.t_max)?,
        mse_converge: cfg.get("mse_converge", a.mse_converge, base.mse_converge)?,
        mse_diverge: cfg.get("mse_diverge", a.mse_diverge, base.mse_diverge)?,
        success_mse: cfg.get("success_mse", a.success_mse, base.success_mse)?,
        k_max: cfg.get("k_max", a.k_max, base.k_max)?,
        stall: {
            let window = cfg.get("stall_window", a.stall_window, default_window)?;
            let rel = cfg.get("stall_rel", a.stall_rel, default_rel)?;
            (window > 0).then_some(Stall {
                window,
                min_relative_decrease: rel,
            })
        },
    };
    rule.validate()?;
    Ok(rule)
}

fn quadrature(cfg: &mut Config, a: &QuadArgs) -> Result<Quadrature, CliError> {
    let d = Quadrature::default();
    let q = Quadrature {
        hermite_nodes: cfg.get("hermite_nodes", a.hermite_nodes, d.hermite_nodes)?,
        xi_abs_tol: cfg.get("xi_abs_tol", a.xi_abs_tol, d.xi_abs_tol)?,
        xi_rel_tol: cfg.get("xi_rel_tol", a.xi_rel_tol, d.xi_rel_tol)?,
        xi_cutoff: cfg.get("xi_cutoff", a.xi_cutoff, d.xi_cutoff)?,
        max_intervals: cfg.get("max_intervals", a.max_intervals, d.max_intervals)?,
    };
    q.validate()?;
    Ok(q)
}

/// Index of `x / step`, which must sit on the step lattice.
fn lattice_index(x: f64, step: f64, key: &str) -> Result<i64, CliError> {
    let r = x / step;
    let k = r.round();
    if !k.is_finite() || (r - k).abs() > 1e-6 {
        return Err(CliError::Usage(format!("{key}={x} is not a multiple of x_step={step}")));
    }
    Ok(k as i64)
}

fn prox_eval(a: &ProxEvalArgs, cfg: &mut Config, name: &str) -> Result<Product, CliError> {
    let lambda = cfg.get("lambda", a.lambda, 4.0)?;
    let root = lambda.max(0.0).sqrt();
    let fig_set = FloatList([0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|f| f * root).collect());
    let epsilons = cfg.get("epsilons", a.epsilons.clone(), fig_set)?;
    let x_min = cfg.get("x_min", a.x_min, -10.0)?;
    let x_max = cfg.get("x_max", a.x_max, 10.0)?;
    let x_step = cfg.get("x_step", a.x_step, 1e-2)?;
    cfg.finish()?;

    if !(x_step > 0.0 && x_step.is_finite()) {
        return Err(CliError::Usage(format!("x_step must be positive, got {x_step}")));
    }
    if !(x_max >= x_min) {
        return Err(CliError::Usage(format!("empty grid: x_min={x_min} > x_max={x_max}")));
    }
    let k_lo = lattice_index(x_min, x_step, "x_min")?;
    let k_hi = lattice_index(x_max, x_step, "x_max")?;
    if (k_hi - k_lo + 1).saturating_mul(epsilons.0.len() as i64) > MAX_GRID_POINTS {
        return Err(CliError::Usage("grid too large".into()));
    }
    let proxes = epsilons
        .0
        .iter()
        .map(|&e| LogSumParams::new(lambda, e).map(LogSumProx::new))
        .collect::<Result<Vec<_>, Error>>()?;

    // x = k * step keeps the column exactly symmetric about zero.
    let body = table(|w| {
        use std::io::Write;
        writeln!(w, "x,epsilon,S,S_prime,regime")?;
        for p in &proxes {
            let regime = p.regime().as_str();
            for k in k_lo..=k_hi {
                let x = k as f64 * x_step;
                let r = p.apply(x);
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    float(x),
                    float(p.params().epsilon()),
                    float(r.value),
                    float(r.derivative),
                    regime
                )?;
            }
        }
        Ok(())
    })?;
    Ok(Product {
        extension: "csv",
        data: csv(cfg, name, body),
        companion: None,
        failure: None,
    })
}

fn convergence_failure(status: Status, required: bool) -> Option<CliError> {
    (required && status != Status::Converged)
        .then(|| CliError::Numerical(format!("run ended {} where convergence was required", status.as_str())))
}

fn amp_run(a: &AmpRunArgs, cfg: &mut Config, name: &str) -> Result<Product, CliError> {
    let alpha = cfg.get("alpha", a.alpha, 0.5)?;
    let rho = cfg.get("rho", a.rho, 0.2)?;
    let n = cfg.get("n", a.n, 10_000)?;
    let seed = cfg.get("seed", a.seed, 0)?;
    let budget = cfg.get("memory_budget", a.memory_budget, DEFAULT_MEMORY_BUDGET)?;
    let required = cfg.get("require_converged", a.require_converged, false)?;
    let sched = schedule(cfg, &a.schedule, "adaptive")?;
    let stop = stopping(cfg, &a.stop, StoppingRule::amp())?;
    cfg.finish()?;

    let spec = ProblemSpec::new(n, alpha, rho, seed)?;
    let inst = model::generate_with_budget(&spec, budget)?;
    let report = amp::run(&inst, &sched, AmpState::initial(&inst), &stop)?;
    log::info!("{} after {} iterations", report.status.as_str(), report.iterations);
    let body = table(|w| report.write_amp_csv(w))?;
    Ok(Product {
        extension: "csv",
        data: csv(cfg, name, body),
        companion: None,
        failure: convergence_failure(report.status, required),
    })
}

fn se_run(a: &SeRunArgs, cfg: &mut Config, name: &str) -> Result<Product, CliError> {
    let alpha = cfg.get("alpha", a.alpha, 0.5)?;
    let rho = cfg.get("rho", a.rho, 0.2)?;
    let mse0 = cfg.get("mse0", a.mse0, rho)?;
    let chi0 = cfg.get("chi0", a.chi0, 1.0)?;
    let required = cfg.get("require_converged", a.require_converged, false)?;
    let sched = schedule(cfg, &a.schedule, "adaptive")?;
    let stop = stopping(cfg, &a.stop, StoppingRule::se())?;
    let quad = quadrature(cfg, &a.quad)?;
    cfg.finish()?;

    if !(mse0 >= 0.0 && chi0 >= 0.0 && mse0.is_finite() && chi0.is_finite()) {
        return Err(CliError::Usage("mse0 and chi0 must be finite and nonnegative".into()));
    }
    let report = se::se_run(alpha, rho, &sched, SeState::new(mse0, chi0), &stop, &quad)?;
    log::info!("{} after {} iterations", report.status.as_str(), report.iterations);
    let body = table(|w| report.write_se_csv(w))?;
    Ok(Product {
        extension: "csv",
        data: csv(cfg, name, body),
        companion: None,
        failure: convergence_failure(report.status, required),
    })
}

fn se_field(a: &SeFieldArgs, cfg: &mut Config, name: &str) -> Result<Product, CliError> {
    let alpha = cfg.get("alpha", a.alpha, 0.38)?;
    let rho = cfg.get("rho", a.rho, 0.2)?;
    let mse_min = cfg.get("mse_min", a.mse_min, 1e-6)?;
    let mse_max = cfg.get("mse_max", a.mse_max, 1.0)?;
    let chi_min = cfg.get("chi_min", a.chi_min, 1e-6)?;
    let chi_max = cfg.get("chi_max", a.chi_max, 2.0)?;
    let grid = cfg.get("grid", a.grid, 40)?;
    let init_grid = cfg.get("init_grid", a.init_grid, 4)?;
    let sched = schedule(cfg, &a.schedule, "adaptive")?;
    let quad = quadrature(cfg, &a.quad)?;
    cfg.finish()?;

    if !(mse_min > 0.0 && mse_max > mse_min && chi_min > 0.0 && chi_max > chi_min) {
        return Err(CliError::Usage("grid bounds must satisfy 0 < min < max".into()));
    }
    if grid < 2 {
        return Err(CliError::Usage("grid needs at least two points per axis".into()));
    }
    let mse_values = se::log_space(mse_min, mse_max, grid);
    let chi_values = se::log_space(chi_min, chi_max, grid);
    let nodes = se::vector_field(alpha, rho, &sched, &mse_values, &chi_values, &quad)?;

    let mut inits = vec![
        SeState::uninformed(rho),
        SeState::new(phase::INFORMED_INIT.0, phase::INFORMED_INIT.1),
    ];
    let mi = se::log_space(mse_min, mse_max, init_grid);
    let ci = se::log_space(chi_min, chi_max, init_grid);
    inits.extend(mi.iter().flat_map(|&m| ci.iter().map(move |&c| SeState::new(m, c))));
    let report = se::stable_fixed_points(alpha, rho, &sched, &quad, &inits, &FixedPointOptions::default())?;

    let field = table(|w| se::write_field_csv(&nodes, w))?;
    let points = table(|w| report.write_csv(w))?;
    Ok(Product {
        extension: "csv",
        data: csv(cfg, name, field),
        companion: Some(csv(cfg, name, points)),
        failure: None,
    })
}

fn default_rho_grid() -> FloatList {
    FloatList((1..20).map(|i| i as f64 / 20.0).collect())
}

fn phase_boundary(a: &PhaseBoundaryArgs, cfg: &mut Config, name: &str) -> Result<Product, CliError> {
    let all = NameList(vec!["it".into(), "adaptive".into(), "l1".into(), "analytic".into()]);
    let methods = cfg.get("method", a.method.clone(), all)?;
    let rho_grid = cfg.get("rho_grid", a.rho_grid.clone(), default_rho_grid())?;
    let epsilons = cfg.get("epsilons", a.epsilons.clone(), FloatList(vec![1e-2, 1e-1, 1.0]))?;
    let tol = cfg.get("alpha_tolerance", a.alpha_tolerance, 1e-3)?;
    let stop = stopping(cfg, &a.stop, StoppingRule::se())?;
    let quad = quadrature(cfg, &a.quad)?;
    cfg.finish()?;

    let methods = methods
        .0
        .iter()
        .map(|m| {
            BoundaryMethod::parse(m)
                .ok_or_else(|| CliError::Usage(format!("unknown method {m:?}; expected it, adaptive, l1 or analytic")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut queries = Vec::new();
    for m in methods {
        let base = BoundaryQuery {
            alpha_tolerance: tol,
            quad,
            stop,
            ..BoundaryQuery::new(rho_grid.0.clone(), m)
        };
        if m == BoundaryMethod::AnalyticFixedEps {
            queries.extend(epsilons.0.iter().map(|&e| BoundaryQuery {
                epsilon: Some(e),
                ..base.clone()
            }));
        } else {
            queries.push(base);
        }
    }
    let mut rows: Vec<BoundaryRow> = Vec::new();
    for q in &queries {
        rows.extend(phase::boundary(q)?);
    }
    let body = table(|w| replica::write_phase_csv(&rows, w))?;
    Ok(Product {
        extension: "csv",
        data: csv(cfg, name, body),
        companion: None,
        failure: None,
    })
}

fn bench(a: &BenchArgs, cfg: &mut Config, name: &str) -> Result<Product, CliError> {
    let scale = cfg.get("scale", a.scale.clone(), "desk".to_string())?;
    let (n_default, window_default) = match scale.as_str() {
        "desk" => (2000, 2000),
        "full" => (10_000, 0),
        other => return Err(CliError::Usage(format!("unknown scale {other:?}; expected desk or full"))),
    };
    let rho = cfg.get("rho", a.rho, 0.4)?;
    let alphas = cfg.get("alphas", a.alphas.clone(), FloatList(vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]))?;
    let n = cfg.get("n", a.n, n_default)?;
    let seeds = cfg.get("seeds", a.seeds, 10)?;
    let base_seed = cfg.get("base_seed", a.base_seed, 0)?;
    let names = cfg.get("denoisers", a.denoisers.clone(), NameList(vec!["adaptive".into(), "l1".into()]))?;
    let delta_epsilon = cfg.get("delta_epsilon", a.delta_epsilon, 0.0)?;
    let memory_budget = cfg.get("memory_budget", a.memory_budget, DEFAULT_MEMORY_BUDGET)?;
    let base_stop = StoppingRule {
        stall: (window_default > 0).then_some(Stall {
            window: window_default,
            min_relative_decrease: 1e-3,
        }),
        ..StoppingRule::amp()
    };
    let stop = stopping(cfg, &a.stop, base_stop)?;
    cfg.finish()?;

    let denoisers = names
        .0
        .iter()
        .map(|d| match d.as_str() {
            "adaptive" => Ok(BenchDenoiser::LogSumAdaptive { delta_epsilon }),
            "l1" => Ok(BenchDenoiser::L1),
            other => Err(CliError::Usage(format!("unknown denoiser {other:?}; expected adaptive or l1"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bench = BenchConfig {
        rho,
        alpha_grid: alphas.0,
        n,
        seeds,
        base_seed,
        denoisers,
        stop,
        memory_budget,
    };
    let rows = phase::convergence_bench(&bench)?;
    let body = table(|w| phase::write_bench_csv(&rows, w))?;
    Ok(Product {
        extension: "csv",
        data: csv(cfg, name, body),
        companion: None,
        failure: None,
    })
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn replica_alphac(a: &ReplicaArgs, cfg: &mut Config, name: &str) -> Result<Product, CliError> {
    let rho = cfg.get("rho", a.rho, 0.2)?;
    let epsilon = cfg.get("epsilon", a.epsilon, 1.0)?;
    let alpha = cfg.get_opt("alpha", a.alpha)?;
    let quad = quadrature(cfg, &a.quad)?;
    cfg.finish()?;

    let (alpha_c, u_c) = replica::critical_u(rho, epsilon)?;
    let dat = replica::dat_expectation_perfect_limit(u_c, alpha_c, rho, epsilon, &quad)?;
    let stability = match alpha {
        Some(al) => {
            let r = replica::stability_report(al, rho, epsilon, &quad)?;
            json!({
                "alpha": r.alpha,
                "chi_hat_star": opt(r.chi_hat_star),
                "u_star": opt(r.u_star),
                "f_prime": opt(r.f_prime),
                "fixed_point_stable": r.fixed_point_stable,
                "dat_rhs": opt(r.dat_rhs),
                "dat_stable": r.dat_stable,
            })
        }
        None => Value::Null,
    };
    let config: Map<String, Value> = cfg
        .entries()
        .iter()
        .map(|(k, v)| (k.clone(), Value::String(v.clone())))
        .collect();
    let doc = json!({
        "command": name,
        "build": crate::config::BUILD_ID,
        "config": config,
        "rho": rho,
        "epsilon": epsilon,
        "alpha_c": alpha_c,
        "u_c": u_c,
        "dat_perfect_limit": dat,
        "stability": stability,
    });
    let mut data = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    data.push(b'\n');
    Ok(Product {
        extension: "json",
        data,
        companion: None,
        failure: None,
    })
}

//! Experiment runner: builds the configured problem, fans runs out over
//! seeds, and writes traces, seed aggregates, bound curves and sweep tables.
//!
//! Outputs (all under the configured output directory):
//! - `trace_seed<seed>.csv` — per-iteration records, one file per seed
//! - `aggregate.csv` — mean/stddev across seeds per logged iteration
//! - `bounds.csv` — predicted bound curves in the trace schema (`series=bound`)
//! - `message_log_seed<seed>.jsonl` — simulator message log (opt-in)
//! - `sweep.csv` — one row per sweep grid cell
//!
//! Given identical config and seeds the trace files are byte-identical;
//! wall-clock timing is only recorded with `run.timing = true`.

use std::fmt::Write as _;
use std::path::Path;

use crate::bounds;
use crate::config::{ExperimentConfig, PolicyName, ProblemSpec, SolverKind, X0Spec};
use crate::distsim::{self, CommStats, SimConfig, SimRecord};
use crate::error::{Error, Result};
use crate::gem::{self, RunOptions, StepSchedule};
use crate::geometry::Geometry;
use crate::problems::{self, ProblemInstance};
use crate::rgem::{self, InitMode, RgemPolicy};
use crate::rng;
use crate::trace::RunTrace;
use crate::vector::Vector;

pub const TRACE_SCHEMA: &str = "gradex.trace.v1";
const TRACE_HEADER: &str =
    "series,seed,iteration,psi_gap,p_to_opt,q_gap,exact_grads,stochastic_samples,comm_rounds,retries,wall_ns";

/// Builds the configured problem and its geometry.
pub fn build_problem(spec: &ProblemSpec) -> Result<(ProblemInstance, Geometry)> {
    match spec {
        ProblemSpec::Quadratic {
            m,
            n,
            mu,
            lmin,
            lmax,
            seed,
        } => {
            let mut prng = rng::problem_rng(*seed);
            let p = problems::make_quadratic(
                *m,
                *n,
                *mu,
                problems::SpectrumSpec::new(*lmin, *lmax)?,
                &mut prng,
            )?;
            Ok((p, Geometry::euclidean(*n)))
        }
        ProblemSpec::Logistic {
            dataset,
            m,
            lambda,
            partition,
            format,
            shuffle_seed,
            reference_tol,
        } => {
            let mut shuffle = shuffle_seed.map(rng::problem_rng);
            let ds =
                problems::load_and_partition(dataset, *m, *partition, *format, shuffle.as_mut())?;
            let geom = Geometry::euclidean(ds.dim);
            let mut p = problems::make_logistic(&ds, *lambda)?;
            if let Some(tol) = reference_tol {
                let (x_star, psi_star) = problems::reference_solve(&p, &geom, *tol, 2_000_000)?;
                p.set_optimum(problems::Optimum { x_star, psi_star });
            }
            Ok((p, geom))
        }
        ProblemSpec::SymmetricLogistic {
            m,
            n,
            pairs,
            lambda,
            seed,
        } => {
            let mut prng = rng::problem_rng(*seed);
            let p = problems::make_symmetric_logistic(*m, *n, *pairs, *lambda, &mut prng)?;
            Ok((p, Geometry::euclidean(*n)))
        }
    }
}

fn start_point(spec: X0Spec, n: usize) -> Vector {
    match spec {
        X0Spec::Zeros => Vector::zeros(n),
        X0Spec::Ones => Vector::constant(n, 1.0),
        X0Spec::Constant(v) => Vector::constant(n, v),
    }
}

fn attach_noise_if_needed(cfg: &ExperimentConfig, p: ProblemInstance) -> ProblemInstance {
    let needs = matches!(cfg.solver.kind, SolverKind::RgemStochastic)
        || (cfg.solver.kind == SolverKind::Simulate
            && cfg.solver.mode == distsim::SimMode::Stochastic);
    if needs && !p.has_stochastic() {
        return p.with_additive_noise(cfg.solver.sigma);
    }
    p
}

struct RunArtifacts {
    seed: u64,
    trace: RunTrace,
    comm: Option<CommStats>,
    log: Vec<SimRecord>,
}

fn execute_seed(
    cfg: &ExperimentConfig,
    problem: &ProblemInstance,
    geom: &Geometry,
    seed: u64,
) -> Result<RunArtifacts> {
    let n = problem.dim();
    let x0 = start_point(cfg.run.x0, n);
    let opts = RunOptions {
        trace_every: cfg.run.trace_every,
        audit: cfg.run.audit,
        record_walltime: cfg.run.timing,
    };
    let mut geom = geom.clone();
    match cfg.solver.kind {
        SolverKind::Gem => {
            let schedule = gem_schedule(cfg.solver.policy, problem)?;
            let out = gem::gem_run(problem, &mut geom, &schedule, &x0, cfg.solver.k, &opts)?;
            Ok(RunArtifacts {
                seed,
                trace: out.trace,
                comm: None,
                log: vec![],
            })
        }
        SolverKind::Rgem => {
            let policy = rgem_policy(cfg.solver.policy, problem)?;
            let out = rgem::rgem_run(problem, &mut geom, &policy, &x0, cfg.solver.k, seed, &opts)?;
            Ok(RunArtifacts {
                seed,
                trace: out.trace,
                comm: None,
                log: vec![],
            })
        }
        SolverKind::RgemStochastic => {
            let policy = rgem_policy(cfg.solver.policy, problem)?;
            let out = rgem::rgem_stochastic_run(
                problem,
                &mut geom,
                &policy,
                &x0,
                cfg.solver.k,
                seed,
                &opts,
            )?;
            Ok(RunArtifacts {
                seed,
                trace: out.trace,
                comm: None,
                log: vec![],
            })
        }
        SolverKind::Simulate => {
            let policy = rgem_policy(cfg.solver.policy, problem)?;
            let sim_cfg = SimConfig {
                responsiveness: cfg.solver.responsiveness.expand(problem.m())?,
                mode: cfg.solver.mode,
                retry_cap: cfg.solver.retry_cap,
                persist_gradients: cfg.solver.persist_gradients,
                reselect: cfg.solver.reselect,
                keep_event_log: cfg.output.message_log,
            };
            let out = distsim::simulate(
                problem,
                &mut geom,
                &policy,
                &x0,
                cfg.solver.k,
                &sim_cfg,
                seed,
                &opts,
            )?;
            Ok(RunArtifacts {
                seed,
                trace: out.trace,
                comm: Some(out.comm),
                log: out.log,
            })
        }
    }
}

fn gem_schedule(policy: PolicyName, problem: &ProblemInstance) -> Result<StepSchedule> {
    match policy {
        PolicyName::StronglyConvex => StepSchedule::strongly_convex(problem.lf(), problem.mu()),
        PolicyName::SmoothA => StepSchedule::smooth_a(problem.lf()),
        PolicyName::SmoothB => StepSchedule::smooth_b(problem.lf()),
        _ => Err(Error::Config("gem needs a deterministic policy".into())),
    }
}

fn rgem_policy(policy: PolicyName, problem: &ProblemInstance) -> Result<RgemPolicy> {
    let init = match policy {
        PolicyName::ZeroInit => InitMode::ZeroInit,
        PolicyName::ExactInit => InitMode::ExactInit,
        _ => {
            return Err(Error::Config(
                "randomized solvers need zero_init | exact_init".into(),
            ))
        }
    };
    RgemPolicy::for_problem(problem, init)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn trace_csv(seed: u64, trace: &RunTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# schema={TRACE_SCHEMA}");
    let _ = writeln!(s, "{TRACE_HEADER}");
    for r in trace.records() {
        let _ = writeln!(
            s,
            "run,{seed},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt_opt(r.psi_gap),
            fmt_opt(r.p_to_opt),
            fmt_opt(r.q_gap),
            r.exact_grads,
            r.stochastic_samples,
            r.comm_rounds,
            r.retries,
            r.wall_ns,
        );
    }
    s
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate_csv(runs: &[RunArtifacts]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# schema=gradex.aggregate.v1");
    let _ = writeln!(
        s,
        "iteration,seeds,psi_gap_mean,psi_gap_std,p_to_opt_mean,p_to_opt_std,q_gap_mean,q_gap_std"
    );
    let base = &runs[0].trace;
    for (idx, rec) in base.records().iter().enumerate() {
        let col = |f: &dyn Fn(&crate::trace::TraceRecord) -> Option<f64>| -> (String, String) {
            let vals: Option<Vec<f64>> = runs.iter().map(|r| f(&r.trace.records()[idx])).collect();
            match vals {
                Some(v) => {
                    let (m, sd) = mean_std(&v);
                    (format!("{m}"), format!("{sd}"))
                }
                None => (String::new(), String::new()),
            }
        };
        let (pg_m, pg_s) = col(&|r| r.psi_gap);
        let (p_m, p_s) = col(&|r| r.p_to_opt);
        let (q_m, q_s) = col(&|r| r.q_gap);
        let _ = writeln!(
            s,
            "{},{},{pg_m},{pg_s},{p_m},{p_s},{q_m},{q_s}",
            rec.iteration,
            runs.len()
        );
    }
    s
}

/// Bound curves in the trace schema. Empty when the problem has no optimum.
fn bounds_csv(
    cfg: &ExperimentConfig,
    problem: &ProblemInstance,
    geom: &Geometry,
) -> Result<Option<String>> {
    if problem.optimum().is_none() {
        return Ok(None);
    }
    let x0 = start_point(cfg.run.x0, problem.dim());
    let k = cfg.solver.k;
    let mut s = String::new();
    let _ = writeln!(s, "# schema={TRACE_SCHEMA}");
    let _ = writeln!(s, "{TRACE_HEADER}");
    let mut push_row = |iter: usize, psi: Option<f64>, p: Option<f64>| {
        let _ = writeln!(
            s,
            "bound,,{iter},{},{},,0,0,0,0,0",
            fmt_opt(psi),
            fmt_opt(p)
        );
    };
    match cfg.solver.kind {
        SolverKind::Gem => {
            let opt = problem.optimum().expect("checked above");
            let p0 = geom.bregman_distance(&x0, &opt.x_star)?;
            match cfg.solver.policy {
                PolicyName::StronglyConvex => {
                    let sched = gem_schedule(cfg.solver.policy, problem)?;
                    let alpha = sched.alpha(1);
                    let gap0 = problem.psi_gap(geom, &x0).expect("optimum known");
                    for t in 0..=k {
                        let psi =
                            bounds::gem_strongly_convex_bound(alpha, problem.mu(), p0, gap0, t);
                        let p = 2.0
                            * bounds::geometric(1.0 - alpha, t as f64)
                            * (p0 + gap0 / problem.mu());
                        push_row(t, Some(psi), Some(p));
                    }
                }
                PolicyName::SmoothA => {
                    let fgap0 = problem.f_value(&x0) - problem.f_value(&opt.x_star);
                    for t in 1..=k {
                        push_row(
                            t,
                            Some(bounds::gem_smooth_a_bound(problem.lf(), p0, fgap0, t)),
                            None,
                        );
                    }
                }
                PolicyName::SmoothB => {
                    for t in 1..=k {
                        push_row(
                            t,
                            Some(bounds::gem_smooth_b_bound(problem.lf(), p0, t)),
                            None,
                        );
                    }
                }
                _ => unreachable!("validated"),
            }
        }
        SolverKind::Rgem | SolverKind::Simulate
            if cfg.solver.mode == distsim::SimMode::Deterministic
                || cfg.solver.kind == SolverKind::Rgem =>
        {
            let policy = rgem_policy(cfg.solver.policy, problem)?;
            let rep = bounds::deterministic_bounds(problem, geom, &x0, &policy, k, cfg.run.eps)?;
            for t in 0..=k {
                push_row(t, Some(rep.psi_curve[t].1), Some(rep.p_curve[t].1));
            }
        }
        _ => {
            let policy = rgem_policy(cfg.solver.policy, problem)?;
            let rep = bounds::stochastic_bounds(
                problem,
                geom,
                &x0,
                &policy,
                cfg.solver.sigma * cfg.solver.sigma,
                k,
            )?;
            for t in 0..=k {
                push_row(t, Some(rep.psi_curve[t].1), Some(rep.p_curve[t].1));
            }
        }
    }
    Ok(Some(s))
}

fn run_all_seeds(
    cfg: &ExperimentConfig,
    problem: &ProblemInstance,
    geom: &Geometry,
) -> Result<Vec<RunArtifacts>> {
    let seeds = &cfg.run.seeds;
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1);
    let workers = workers.min(seeds.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<RunArtifacts>>>> =
        seeds.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= seeds.len() {
                    break;
                }
                let res = execute_seed(cfg, problem, geom, seeds[idx]);
                *slots[idx].lock().expect("no poisoned slot") = Some(res);
            });
        }
    });
    let mut out = Vec::with_capacity(seeds.len());
    for slot in slots {
        let res = slot
            .into_inner()
            .expect("no poisoned slot")
            .expect("worker filled the slot");
        out.push(res?);
    }
    Ok(out)
}

/// `run` subcommand: one trace file per seed, plus the aggregate and the
/// matching bound curves. Deterministic given the seed list.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let (problem, geom) = build_problem(&cfg.problem)?;
    let problem = attach_noise_if_needed(cfg, problem);
    let runs = run_all_seeds(cfg, &problem, &geom)?;

    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    for run in &runs {
        let path = dir.join(format!("trace_seed{}.csv", run.seed));
        std::fs::write(&path, trace_csv(run.seed, &run.trace))?;
        if !run.log.is_empty() {
            let mut f =
                std::fs::File::create(dir.join(format!("message_log_seed{}.jsonl", run.seed)))?;
            distsim::export_message_log(&run.log, &mut f)?;
        }
    }
    std::fs::write(dir.join("aggregate.csv"), aggregate_csv(&runs))?;
    if let Some(csv) = bounds_csv(cfg, &problem, &geom)? {
        std::fs::write(dir.join("bounds.csv"), csv)?;
    }

    for run in &runs {
        let last = run.trace.last();
        println!(
            "seed {:>4}: k={} psi_gap={} p={} {}",
            run.seed,
            last.map(|r| r.iteration).unwrap_or(0),
            last.and_then(|r| r.psi_gap)
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "-".into()),
            last.and_then(|r| r.p_to_opt)
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "-".into()),
            run.comm
                .as_ref()
                .map(|c| format!(
                    "rounds={} retries={} bytes={}",
                    c.successful_rounds,
                    c.retries,
                    c.payload_bytes()
                ))
                .unwrap_or_default(),
        );
    }
    println!("wrote {} trace file(s) to {}", runs.len(), dir.display());
    Ok(())
}

/// `bounds` subcommand: report the policy constants and write the curves.
pub fn cmd_bounds(cfg: &ExperimentConfig) -> Result<()> {
    let (problem, geom) = build_problem(&cfg.problem)?;
    let problem = attach_noise_if_needed(cfg, problem);
    let x0 = start_point(cfg.run.x0, problem.dim());
    match cfg.solver.kind {
        SolverKind::Gem => {
            let sched = gem_schedule(cfg.solver.policy, &problem)?;
            println!(
                "policy={} Lf={} mu={} alpha(1)={} eta(1)={} tau(1)={}",
                sched.name(),
                problem.lf(),
                problem.mu(),
                sched.alpha(1),
                sched.eta(1),
                sched.tau(1)
            );
        }
        _ => {
            let policy = rgem_policy(cfg.solver.policy, &problem)?;
            let rep = if cfg.solver.sigma > 0.0 {
                bounds::stochastic_bounds(
                    &problem,
                    &geom,
                    &x0,
                    &policy,
                    cfg.solver.sigma * cfg.solver.sigma,
                    cfg.solver.k,
                )?
            } else {
                bounds::deterministic_bounds(
                    &problem,
                    &geom,
                    &x0,
                    &policy,
                    cfg.solver.k,
                    cfg.run.eps,
                )?
            };
            println!(
                "m={} cond={:.6} alpha={:.12} delta={:.6e} k_eps={} batch_bound={}",
                rep.m,
                rep.cond,
                rep.alpha,
                rep.delta,
                rep.k_eps
                    .map(|v| format!("{v:.1}"))
                    .unwrap_or_else(|| "-".into()),
                rep.batch_total_bound
                    .map(|v| format!("{v:.1}"))
                    .unwrap_or_else(|| "-".into()),
            );
        }
    }
    std::fs::create_dir_all(&cfg.output.dir)?;
    if let Some(csv) = bounds_csv(cfg, &problem, &geom)? {
        std::fs::write(cfg.output.dir.join("bounds.csv"), csv)?;
        println!("wrote {}", cfg.output.dir.join("bounds.csv").display());
    } else {
        println!("no optimum available; no curves written");
    }
    Ok(())
}

/// `sweep` subcommand: the communication-complexity table over the grid,
/// plus fixed-horizon stochastic bound checks for any listed noise levels.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep command needs sweep.* keys".into()))?;
    let mut csv = String::from("m,cond,sigma,eps,predicted,measured,samples,pass\n");
    let mut all_pass = true;

    let probe_cfg = distsim::ProbeConfig {
        n: sweep.n,
        mu: 1.0,
        eps: sweep.eps,
        seeds: sweep.seeds.clone(),
        budget_factor: sweep.budget_factor,
    };
    let rows = distsim::comm_complexity_probe(&sweep.m, &sweep.cond, &probe_cfg)?;
    for r in &rows {
        all_pass &= r.pass;
        let _ = writeln!(
            csv,
            "{},{},0,{},{:.1},{},0,{}",
            r.m,
            r.cond,
            r.eps,
            r.predicted,
            r.measured
                .map(|v| v.to_string())
                .unwrap_or_else(|| "none".into()),
            r.pass
        );
        println!(
            "m={:<3} cond={:<8} predicted={:<10.1} measured={:<8} pass={}",
            r.m,
            r.cond,
            r.predicted,
            r.measured
                .map(|v| v.to_string())
                .unwrap_or_else(|| "none".into()),
            r.pass
        );
    }

    for &sigma in &sweep.sigma {
        for &m in &sweep.m {
            for &cond in &sweep.cond {
                let (pass, samples, bound, mean_p) =
                    stochastic_cell(m, cond, sigma, sweep.k, &sweep.seeds)?;
                all_pass &= pass;
                let _ = writeln!(
                    csv,
                    "{m},{cond},{sigma},{},{bound:.3e},{},{samples},{pass}",
                    sweep.eps, sweep.k
                );
                println!(
                    "m={m:<3} cond={cond:<8} sigma={sigma:<6} k={} meanP={mean_p:.3e} bound={bound:.3e} pass={pass}",
                    sweep.k
                );
            }
        }
    }

    std::fs::create_dir_all(&cfg.output.dir)?;
    std::fs::write(cfg.output.dir.join("sweep.csv"), csv)?;
    println!("wrote {}", cfg.output.dir.join("sweep.csv").display());
    if !all_pass {
        return Err(Error::Budget("one or more sweep cells failed".into()));
    }
    Ok(())
}

fn stochastic_cell(
    m: usize,
    cond: f64,
    sigma: f64,
    k: usize,
    seeds: &[u64],
) -> Result<(bool, u64, f64, f64)> {
    let mu = 1.0;
    let mut prng = rng::problem_rng(0xBEEF ^ (m as u64) << 8 ^ cond as u64);
    let problem = problems::make_quadratic(
        m,
        20,
        mu,
        problems::SpectrumSpec::new(cond * mu / 10.0, cond * mu)?,
        &mut prng,
    )?
    .with_additive_noise(sigma);
    let geom = Geometry::euclidean(20);
    let policy = RgemPolicy::for_problem(&problem, InitMode::ZeroInit)?;
    let x0 = Vector::zeros(20);
    let rep = bounds::stochastic_bounds(&problem, &geom, &x0, &policy, sigma * sigma, k)?;
    let bound = rep.p_curve[k].1;
    let mut total_samples = 0u64;
    let mut acc = 0.0;
    for &seed in seeds {
        let mut g = geom.clone();
        let out = rgem::rgem_stochastic_run(
            &problem,
            &mut g,
            &policy,
            &x0,
            k,
            seed,
            &RunOptions {
                trace_every: 0,
                ..Default::default()
            },
        )?;
        total_samples += out.stochastic_samples;
        acc += g.bregman_distance(&out.x_last, &problem.optimum().expect("analytic").x_star)?;
    }
    let mean_p = acc / seeds.len() as f64;
    Ok((mean_p <= bound * 1.05, total_samples, bound, mean_p))
}

/// `validate` subcommand: schema check only.
pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<()> {
    // construction already validated the schema; report the resolved shape
    println!(
        "config OK: {:?} solver, k={}, {} seed(s), out={}",
        cfg.solver.kind,
        cfg.solver.k,
        cfg.run.seeds.len(),
        cfg.output.dir.display()
    );
    Ok(())
}

/// Maps an error to the process exit code (2 config/parse, 1 runtime).
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

/// Reads a config file (optional) and applies overrides.
pub fn load_from_path(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    crate::config::load_config(&text, sets)
}

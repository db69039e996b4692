//! End-to-end runner checks: determinism of trace files, bound/trace
//! comparisons, sweep output, exit codes and output-dir resolution.

use std::path::PathBuf;
use std::process::Command;

use gradex::cli::{cmd_bounds, cmd_run, cmd_sweep};
use gradex::config::load_config;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gradex_cli_{}_{}", std::process::id(), name));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read(path: &PathBuf) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Parses a trace-schema CSV into (series, iteration, psi_gap, p_to_opt) rows.
fn parse_trace(text: &str) -> Vec<(String, usize, Option<f64>, Option<f64>)> {
    text.lines()
        .skip(2)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].to_string(),
                f[2].parse().unwrap(),
                f[3].parse().ok(),
                f[4].parse().ok(),
            )
        })
        .collect()
}

const QUAD_RGEM: &str = "\
problem.family = quadratic
problem.m = 6
problem.n = 12
problem.mu = 1.0
problem.cond = 30
problem.seed = 5
solver.kind = rgem
solver.policy = zero_init
solver.k = 120
run.seeds = 0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19
run.x0 = value:0.4
run.trace_every = 10
";

#[test]
fn rerun_is_byte_identical() {
    let d1 = scratch("det1");
    let d2 = scratch("det2");
    let cfg1 = load_config(QUAD_RGEM, &[format!("output.dir={}", d1.display())]).unwrap();
    let cfg2 = load_config(QUAD_RGEM, &[format!("output.dir={}", d2.display())]).unwrap();
    cmd_run(&cfg1).unwrap();
    cmd_run(&cfg2).unwrap();
    for name in [
        "trace_seed0.csv",
        "trace_seed19.csv",
        "aggregate.csv",
        "bounds.csv",
    ] {
        let a = read(&d1.join(name));
        let b = read(&d2.join(name));
        assert_eq!(a, b, "{name} differs between identical runs");
        assert!(!a.is_empty());
    }
    // default timing off: wall_ns column is all zeros
    let trace = read(&d1.join("trace_seed0.csv"));
    for line in trace.lines().skip(2) {
        assert!(line.ends_with(",0"), "unexpected wall time in {line}");
    }
}

#[test]
fn aggregate_mean_stays_under_bound_curve() {
    let dir = scratch("agg");
    let cfg = load_config(QUAD_RGEM, &[format!("output.dir={}", dir.display())]).unwrap();
    cmd_run(&cfg).unwrap();
    let bounds = parse_trace(&read(&dir.join("bounds.csv")));
    let agg = read(&dir.join("aggregate.csv"));
    for line in agg.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let iter: usize = f[0].parse().unwrap();
        let p_mean: f64 = f[4].parse().unwrap();
        let bound = bounds
            .iter()
            .find(|(series, k, _, _)| series == "bound" && *k == iter)
            .and_then(|(_, _, _, p)| *p)
            .unwrap();
        assert!(
            p_mean <= bound * 1.05,
            "iteration {iter}: mean P {p_mean:.3e} above bound {bound:.3e}"
        );
    }
}

#[test]
fn gem_trace_respects_linear_rate_curve() {
    let text = "\
problem.family = quadratic
problem.m = 1
problem.n = 10
problem.mu = 1.0
problem.cond = 20
solver.kind = gem
solver.policy = strongly_convex
solver.k = 50
run.seeds = 0
run.x0 = ones
";
    let dir = scratch("gem");
    let cfg = load_config(text, &[format!("output.dir={}", dir.display())]).unwrap();
    cmd_run(&cfg).unwrap();
    let trace = parse_trace(&read(&dir.join("trace_seed0.csv")));
    let bounds = parse_trace(&read(&dir.join("bounds.csv")));
    assert_eq!(trace.len(), 50);
    for (series, iter, psi, _) in &trace {
        assert_eq!(series, "run");
        let bound = bounds
            .iter()
            .find(|(s, k, _, _)| s == "bound" && k == iter)
            .and_then(|(_, _, b, _)| *b)
            .unwrap();
        assert!(psi.unwrap() <= bound * (1.0 + 1e-9), "k={iter}");
    }
}

#[test]
fn simulate_run_writes_message_log() {
    let text = "\
problem.family = quadratic
problem.m = 4
problem.n = 8
problem.mu = 1.0
problem.cond = 25
solver.kind = simulate
solver.policy = zero_init
solver.k = 30
run.seeds = 7
output.message_log = true
";
    let dir = scratch("sim");
    let cfg = load_config(text, &[format!("output.dir={}", dir.display())]).unwrap();
    cmd_run(&cfg).unwrap();
    let log = read(&dir.join("message_log_seed7.jsonl"));
    // fully responsive: signal + download + upload per round
    assert_eq!(log.lines().count(), 3 * 30);
    assert!(log
        .lines()
        .all(|l| l.starts_with("{\"round\":") && l.ends_with('}')));
    // trace carries communication counters
    let trace = read(&dir.join("trace_seed7.csv"));
    let last = trace.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    assert_eq!(fields[8].parse::<u64>().unwrap(), 30, "comm_rounds column");
}

#[test]
fn sweep_single_cell_reduces_to_probe() {
    let text = "\
problem.family = quadratic
problem.cond = 10
solver.kind = rgem
solver.policy = zero_init
solver.k = 10
sweep.m = 2
sweep.cond = 50
sweep.eps = 1e-4
sweep.n = 8
sweep.seeds = 0,1,2
";
    let dir = scratch("sweep");
    let cfg = load_config(text, &[format!("output.dir={}", dir.display())]).unwrap();
    cmd_sweep(&cfg).unwrap();
    let csv = read(&dir.join("sweep.csv"));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2, "header plus one cell");
    assert!(rows[1].starts_with("2,50,"));
    assert!(rows[1].ends_with("true"));
}

#[test]
fn bounds_command_writes_curves() {
    let dir = scratch("bounds");
    let cfg = load_config(
        QUAD_RGEM,
        &[
            format!("output.dir={}", dir.display()),
            "run.eps=1e-6".into(),
        ],
    )
    .unwrap();
    cmd_bounds(&cfg).unwrap();
    let bounds = parse_trace(&read(&dir.join("bounds.csv")));
    assert_eq!(bounds.len(), 121, "k = 0..=120");
    assert!(bounds
        .windows(2)
        .all(|w| w[0].2.unwrap() >= w[1].2.unwrap()));
}

#[test]
fn timing_flag_records_wall_time() {
    let dir = scratch("timing");
    let cfg = load_config(
        QUAD_RGEM,
        &[
            format!("output.dir={}", dir.display()),
            "run.timing=true".into(),
            "run.seeds=3".into(),
        ],
    )
    .unwrap();
    cmd_run(&cfg).unwrap();
    let trace = read(&dir.join("trace_seed3.csv"));
    let last = trace.lines().last().unwrap();
    let wall: u128 = last.split(',').next_back().unwrap().parse().unwrap();
    assert!(wall > 0);
}

#[test]
fn logistic_dataset_run_with_reference_optimum() {
    let dir = scratch("logistic");
    std::fs::create_dir_all(&dir).unwrap();
    // small two-feature dataset, both label conventions exercised via 0/1
    let data = dir.join("toy.txt");
    let mut text = String::new();
    for i in 0..24 {
        let a = 0.2 + 0.05 * (i % 7) as f64;
        let b = -0.4 + 0.07 * (i % 5) as f64;
        let label = if i % 2 == 0 { 1 } else { 0 };
        text.push_str(&format!("{label} 1:{a} 2:{b}\n"));
    }
    std::fs::write(&data, text).unwrap();

    let cfg_text = format!(
        "\
problem.family = logistic
problem.dataset = {}
problem.m = 3
problem.lambda = 0.2
problem.partition = round_robin
problem.reference_tol = 1e-12
solver.kind = rgem
solver.policy = exact_init
solver.k = 60
run.seeds = 0,1,2,3
run.x0 = ones
run.trace_every = 10
output.dir = {}
",
        data.display(),
        dir.join("out").display()
    );
    let cfg = load_config(&cfg_text, &[]).unwrap();
    cmd_run(&cfg).unwrap();

    // the certified reference optimum makes gap columns available, and the
    // seed-mean distance respects the predicted curve
    let agg = read(&dir.join("out/aggregate.csv"));
    let bounds = parse_trace(&read(&dir.join("out/bounds.csv")));
    let mut rows = 0;
    for line in agg.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let iter: usize = f[0].parse().unwrap();
        let psi_mean: f64 = f[2].parse().unwrap();
        let p_mean: f64 = f[4].parse().unwrap();
        assert!(psi_mean >= -1e-10, "gap vs certified psi* at k={iter}");
        let bound = bounds
            .iter()
            .find(|(s, k, _, _)| s == "bound" && *k == iter)
            .and_then(|(_, _, _, p)| *p)
            .unwrap();
        assert!(p_mean <= bound * 1.05, "k={iter}: {p_mean:.3e} > {bound:.3e}");
        rows += 1;
    }
    assert_eq!(rows, 6);
}

#[test]
fn stochastic_run_traces_sample_counters() {
    let text = "\
problem.family = quadratic
problem.m = 4
problem.n = 8
problem.mu = 1.0
problem.cond = 15
solver.kind = rgem_stochastic
solver.policy = zero_init
solver.k = 60
solver.sigma = 0.5
run.seeds = 0,1
run.trace_every = 20
";
    let dir = scratch("stoch");
    let cfg = load_config(text, &[format!("output.dir={}", dir.display())]).unwrap();
    cmd_run(&cfg).unwrap();
    let trace = read(&dir.join("trace_seed0.csv"));
    let samples: Vec<u64> = trace
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(7).unwrap().parse().unwrap())
        .collect();
    assert_eq!(samples.len(), 3);
    assert!(samples.windows(2).all(|w| w[0] < w[1]), "batch draws accumulate");
    // the bound file reflects the noise term (stochastic curves present)
    let bounds = read(&dir.join("bounds.csv"));
    assert!(bounds.lines().count() > 60);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_gradex");
    let dir = scratch("exit");
    std::fs::create_dir_all(&dir).unwrap();

    // valid config validates with exit 0
    let good = dir.join("good.cfg");
    std::fs::write(&good, QUAD_RGEM).unwrap();
    let st = Command::new(bin)
        .args(["validate", "--config"])
        .arg(&good)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    // unknown key: config error, exit 2
    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, format!("{QUAD_RGEM}solver.turbo = yes\n")).unwrap();
    let out = Command::new(bin)
        .args(["validate", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("solver.turbo"),
        "diagnostic names the offending key"
    );

    // unknown subcommand: exit 2
    let st = Command::new(bin).arg("explode").status().unwrap();
    assert_eq!(st.code(), Some(2));

    // livelock is a run failure: exit 1
    let dead = dir.join("dead.cfg");
    std::fs::write(
        &dead,
        format!(
            "{QUAD_RGEM}solver.kind = simulate\nsolver.responsiveness = 0.0\nsolver.retry_cap = 20\noutput.dir = {}\n",
            dir.join("dead_out").display()
        ),
    )
    .unwrap();
    let st = Command::new(bin)
        .args(["run", "--config"])
        .arg(&dead)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = scratch("envdir");
    std::env::set_var(gradex::config::OUTPUT_DIR_ENV, &dir);
    let cfg_text = QUAD_RGEM
        .lines()
        .filter(|l| !l.starts_with("output.dir"))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = load_config(&cfg_text, &[]).unwrap();
    std::env::remove_var(gradex::config::OUTPUT_DIR_ENV);
    assert_eq!(cfg.output.dir, dir);
}

//! Discrete-event simulation of the randomized solver as a server/agent
//! message protocol.
//!
//! The server owns the iterate, the running aggregate `g` and the ergodic
//! accumulators. Each logical round it performs the prox step, then signals a
//! uniformly drawn agent; a responsive agent downloads the current iterate,
//! refreshes its local pair `(xu_i, y_i)` and uploads only the gradient
//! change `dy = y_i^new - y_i^old`, which the server folds into `g`. If the
//! agent does not respond the server re-draws and re-signals without touching
//! the iterate, so a round advances only on a successful upload. With every
//! agent responsive the simulated sample path is bit-identical to the
//! in-process solver under the same seed.
//!
//! No message ever carries an agent's local search point or raw data; the
//! only payloads are iterate downloads and delta uploads.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bounds;
use crate::error::{Error, Result};
use crate::gem::{GapProbe, RunOptions, PROX_AUDIT_TOL};
use crate::geometry::Geometry;
use crate::oracles::CounterLedger;
use crate::problems::{make_quadratic, ProblemInstance, SpectrumSpec};
use crate::rgem::{batch_size, InitMode, RgemPolicy};
use crate::rng;
use crate::steps::{self, ErgodicAverage};
use crate::trace::{RunTrace, TraceRecord};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeId {
    Server,
    Agent(usize),
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::Server => write!(f, "server"),
            NodeId::Agent(i) => write!(f, "agent:{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Signal,
    IterateDownload,
    DeltaUpload,
    NoResponse,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::Signal => "signal",
            MessageKind::IterateDownload => "iterate_download",
            MessageKind::DeltaUpload => "delta_upload",
            MessageKind::NoResponse => "no_response",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Empty,
    Iterate(Vector),
    Delta(Vector),
}

impl Payload {
    /// Scalars on the wire: iterates ship dense, deltas ship their nonzeros.
    pub fn len(&self) -> usize {
        match self {
            Payload::Empty => 0,
            Payload::Iterate(v) => v.len(),
            Payload::Delta(v) => nnz(v) as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct LoggedMessage {
    pub round: usize,
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: Payload,
}

/// Full event log entry: either a server prox computation or a message.
#[derive(Debug, Clone)]
pub enum SimRecord {
    Prox { round: usize, iterate: Vector },
    Message(LoggedMessage),
}

/// Communication accounting. `attempted_contacts = successful_rounds + retries`
/// over the iteration loop; the one-time exact-initialization exchanges are
/// counted separately.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommStats {
    pub attempted_contacts: u64,
    pub successful_rounds: u64,
    pub retries: u64,
    pub init_rounds: u64,
    pub payload_scalars_down: u64,
    pub payload_scalars_up: u64,
}

impl CommStats {
    /// Bytes-equivalent payload volume (8 bytes per scalar).
    pub fn payload_bytes(&self) -> u64 {
        8 * (self.payload_scalars_down + self.payload_scalars_up)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Deterministic,
    Stochastic,
}

/// On a non-response, either re-draw uniformly (the protocol reading used
/// throughout) or keep contacting the same agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReselectRule {
    FreshDraw,
    SameAgent,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Per-agent response probability p_i in (0, 1].
    pub responsiveness: Vec<f64>,
    pub mode: SimMode,
    /// Attempts allowed within one round before declaring livelock.
    pub retry_cap: usize,
    /// Agents keep their last gradient (less compute); otherwise they
    /// recompute it on demand from the stored search point.
    pub persist_gradients: bool,
    pub reselect: ReselectRule,
    /// Record the full event log (payload vectors included).
    pub keep_event_log: bool,
}

impl SimConfig {
    pub fn fully_responsive(m: usize, mode: SimMode) -> Self {
        Self {
            responsiveness: vec![1.0; m],
            mode,
            retry_cap: 10_000,
            persist_gradients: true,
            reselect: ReselectRule::FreshDraw,
            keep_event_log: false,
        }
    }
}

#[derive(Debug)]
pub struct SimOutput {
    pub x_last: Vector,
    pub x_out: Vector,
    pub trace: RunTrace,
    pub comm: CommStats,
    pub log: Vec<SimRecord>,
    pub exact_grads: u64,
    pub stochastic_samples: u64,
}

struct AgentNode {
    x_under: Vector,
    y_last: Option<Vector>,
    updated: bool,
}

fn nnz(v: &Vector) -> u64 {
    v.iter().filter(|&&x| x != 0.0).count() as u64
}

/// Runs the protocol for `k` successful rounds. With `p_i = 1` for all
/// agents the produced iterates equal the in-process solver's bit for bit.
pub fn simulate(
    problem: &ProblemInstance,
    geom: &mut Geometry,
    policy: &RgemPolicy,
    x0: &Vector,
    k: usize,
    cfg: &SimConfig,
    seed: u64,
    opts: &RunOptions,
) -> Result<SimOutput> {
    let m = problem.m();
    if cfg.responsiveness.len() != m {
        return Err(Error::Config(
            "need one responsiveness value per agent".into(),
        ));
    }
    if cfg.responsiveness.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config("responsiveness must lie in [0, 1]".into()));
    }
    if cfg.mode == SimMode::Stochastic {
        if !problem.has_stochastic() {
            return Err(Error::Config(
                "stochastic mode needs stochastic oracles".into(),
            ));
        }
        if !cfg.persist_gradients {
            return Err(Error::Config(
                "stochastic agents must persist gradients (samples cannot be replayed)".into(),
            ));
        }
    }
    if k == 0 {
        return Err(Error::Config("need k >= 1".into()));
    }
    if policy.m != m {
        return Err(Error::Config(
            "policy/problem component count mismatch".into(),
        ));
    }
    if problem.mu() <= 0.0 || !geom.is_euclidean() {
        return Err(Error::Config(
            "the randomized protocol requires mu > 0 on the Euclidean geometry".into(),
        ));
    }
    if !geom.contains(x0) {
        return Err(Error::Infeasible(
            "start point outside the feasible set".into(),
        ));
    }
    geom.prepare_start(x0)?;

    let started = Instant::now();
    let n = problem.dim();
    let mu = problem.mu();
    let ledger = CounterLedger::new(m);
    let probe = GapProbe::new(problem);
    let mut trace = RunTrace::new();
    let mut log: Vec<SimRecord> = Vec::new();
    let mut comm = CommStats::default();

    let mut selector = rng::selection_rng(seed);
    let mut responder = rng::responsiveness_rng(seed);
    let mut oracle_rngs: Vec<ChaCha8Rng> = (0..m).map(|i| rng::oracle_rng(seed, i)).collect();

    let mut agents: Vec<AgentNode> = (0..m)
        .map(|_| AgentNode {
            x_under: x0.clone(),
            y_last: None,
            updated: false,
        })
        .collect();

    // Server aggregate. The one-time exact initialization is a full
    // synchronization round: every agent downloads x0 and uploads its
    // gradient once.
    let mut g = match policy.init {
        InitMode::ZeroInit => {
            for a in agents.iter_mut() {
                a.y_last = Some(Vector::zeros(n));
            }
            Vector::zeros(n)
        }
        InitMode::ExactInit => {
            let mut ys = Vec::with_capacity(m);
            for (i, a) in agents.iter_mut().enumerate() {
                let y = problem.component(i).grad(x0, &ledger);
                comm.init_rounds += 1;
                comm.payload_scalars_down += n as u64;
                comm.payload_scalars_up += nnz(&y);
                if cfg.keep_event_log {
                    log.push(SimRecord::Message(LoggedMessage {
                        round: 0,
                        kind: MessageKind::IterateDownload,
                        from: NodeId::Server,
                        to: NodeId::Agent(i),
                        payload: Payload::Iterate(x0.clone()),
                    }));
                    log.push(SimRecord::Message(LoggedMessage {
                        round: 0,
                        kind: MessageKind::DeltaUpload,
                        from: NodeId::Agent(i),
                        to: NodeId::Server,
                        payload: Payload::Delta(y.clone()),
                    }));
                }
                a.y_last = Some(y.clone());
                a.updated = true;
                ys.push(y);
            }
            steps::mean_of(&ys)
        }
    };

    let mut x = x0.clone();
    let mut delta_y = Vector::zeros(n);
    let mut ergodic = ErgodicAverage::new(n);

    for t in 1..=k {
        let prox_in = steps::extrapolate(&g, &delta_y, policy.alpha);
        let x_new = geom.prox_map(&prox_in, &x, mu, policy.eta)?;
        if opts.audit {
            let res = geom.normal_cone_residual(&prox_in, &x, &x_new, mu, policy.eta)?;
            if res > PROX_AUDIT_TOL {
                return Err(Error::Audit(format!(
                    "prox optimality residual {res:.3e} at round {t}"
                )));
            }
        }
        ergodic.push(policy.theta_ratio(), &x_new);
        if cfg.keep_event_log {
            log.push(SimRecord::Prox {
                round: t,
                iterate: x_new.clone(),
            });
        }

        // contact loop: the iterate does not advance until an upload lands
        let mut attempts = 0usize;
        let mut agent_id = rng::draw_agent(&mut selector, m);
        let chosen = loop {
            attempts += 1;
            comm.attempted_contacts += 1;
            if cfg.keep_event_log {
                log.push(SimRecord::Message(LoggedMessage {
                    round: t,
                    kind: MessageKind::Signal,
                    from: NodeId::Server,
                    to: NodeId::Agent(agent_id),
                    payload: Payload::Empty,
                }));
            }
            let roll: f64 = responder.gen();
            if roll < cfg.responsiveness[agent_id] {
                break agent_id;
            }
            comm.retries += 1;
            if cfg.keep_event_log {
                log.push(SimRecord::Message(LoggedMessage {
                    round: t,
                    kind: MessageKind::NoResponse,
                    from: NodeId::Agent(agent_id),
                    to: NodeId::Server,
                    payload: Payload::Empty,
                }));
            }
            if attempts >= cfg.retry_cap {
                return Err(Error::Livelock { attempts, round: t });
            }
            if cfg.reselect == ReselectRule::FreshDraw {
                agent_id = rng::draw_agent(&mut selector, m);
            }
        };

        comm.payload_scalars_down += n as u64;
        if cfg.keep_event_log {
            log.push(SimRecord::Message(LoggedMessage {
                round: t,
                kind: MessageKind::IterateDownload,
                from: NodeId::Server,
                to: NodeId::Agent(chosen),
                payload: Payload::Iterate(x_new.clone()),
            }));
        }

        // activated agent: refresh the local pair, upload the change
        let agent = &mut agents[chosen];
        let y_prev = if cfg.persist_gradients {
            agent.y_last.clone().expect("persisted gradient present")
        } else if agent.updated {
            // recompute the last uploaded gradient from the stored point
            problem.component(chosen).grad(&agent.x_under, &ledger)
        } else {
            Vector::zeros(n)
        };
        agent.x_under = steps::underline(&x_new, &agent.x_under, policy.tau);
        let y_new = match cfg.mode {
            SimMode::Deterministic => problem.component(chosen).grad(&agent.x_under, &ledger),
            SimMode::Stochastic => {
                let b = batch_size(k, policy, t);
                problem.stochastic_oracle(chosen)?.sfo_batch(
                    &agent.x_under,
                    b,
                    &mut oracle_rngs[chosen],
                    &ledger,
                )?
            }
        };
        let dy = y_new.sub(&y_prev);
        if cfg.persist_gradients {
            agent.y_last = Some(y_new);
        } else {
            agent.y_last = None;
        }
        agent.updated = true;

        comm.payload_scalars_up += nnz(&dy);
        if cfg.keep_event_log {
            log.push(SimRecord::Message(LoggedMessage {
                round: t,
                kind: MessageKind::DeltaUpload,
                from: NodeId::Agent(chosen),
                to: NodeId::Server,
                payload: Payload::Delta(dy.clone()),
            }));
        }

        steps::apply_delta(&mut g, &dy, m);
        delta_y = dy;
        comm.successful_rounds += 1;
        x = x_new;

        if opts.trace_every > 0 && (t % opts.trace_every == 0 || t == k) {
            let xbar = ergodic.average();
            trace.push(TraceRecord {
                iteration: t,
                psi_gap: problem.psi_gap(geom, &xbar),
                p_to_opt: probe.p_to_opt(problem, geom, &x),
                q_gap: probe.q_gap(problem, geom, &xbar),
                exact_grads: ledger.exact_gradient_evals(),
                stochastic_samples: ledger.stochastic_samples(),
                comm_rounds: comm.successful_rounds,
                retries: comm.retries,
                wall_ns: if opts.record_walltime {
                    started.elapsed().as_nanos()
                } else {
                    0
                },
            });
        }
    }

    Ok(SimOutput {
        x_last: x,
        x_out: ergodic.average(),
        trace,
        comm,
        log,
        exact_grads: ledger.exact_gradient_evals(),
        stochastic_samples: ledger.stochastic_samples(),
    })
}

/// Writes the message log as line-delimited records
/// `{round, kind, from, to, payload_size}` (prox events are not messages and
/// are skipped).
pub fn export_message_log<W: Write>(log: &[SimRecord], out: &mut W) -> Result<()> {
    for rec in log {
        if let SimRecord::Message(msg) = rec {
            writeln!(
                out,
                "{{\"round\":{},\"kind\":\"{}\",\"from\":\"{}\",\"to\":\"{}\",\"payload_size\":{}}}",
                msg.round,
                msg.kind.as_str(),
                msg.from,
                msg.to,
                msg.payload.len()
            )?;
        }
    }
    Ok(())
}

/// One cell of the communication-complexity table.
#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub m: usize,
    pub cond: f64,
    pub eps: f64,
    /// Predicted rounds to an eps-solution.
    pub predicted: f64,
    /// First round where the seed-mean P(x^t, x*) fell below eps.
    pub measured: Option<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub n: usize,
    pub mu: f64,
    pub eps: f64,
    pub seeds: Vec<u64>,
    /// Horizon multiplier applied when the predicted budget does not converge.
    pub budget_factor: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n: 20,
            mu: 1.0,
            eps: 1e-6,
            seeds: (0..5).collect(),
            budget_factor: 10.0,
        }
    }
}

/// Runs the simulator over a grid of component counts and condition numbers
/// and compares the measured rounds-to-eps against the predicted count. Every
/// row must report `measured <= predicted`; non-convergence within
/// `budget_factor`x the prediction is reported as a failed row.
pub fn comm_complexity_probe(
    m_list: &[usize],
    cond_list: &[f64],
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeRow>> {
    let mut rows = Vec::new();
    for &m in m_list {
        for &cond in cond_list {
            let mut prng = rng::problem_rng(0xC0FFEE ^ (m as u64) << 16 ^ cond as u64);
            let lmax = cond * cfg.mu;
            let problem = make_quadratic(
                m,
                cfg.n,
                cfg.mu,
                SpectrumSpec::new(lmax / 10.0, lmax)?,
                &mut prng,
            )?;
            let geom = Geometry::euclidean(cfg.n);
            let policy = RgemPolicy::for_problem(&problem, InitMode::ZeroInit)?;
            // start at unit distance from the optimum so crossings measure the
            // rate rather than how close the random instance's x* happens to
            // sit to the origin
            let mut dir = Vector::from_fn(cfg.n, |_| prng.gen_range(-1.0..1.0));
            dir.scale(1.0 / dir.norm2());
            let x0 = problem
                .optimum()
                .expect("analytic optimum")
                .x_star
                .add(&dir);
            let report =
                bounds::deterministic_bounds(&problem, &geom, &x0, &policy, 0, Some(cfg.eps))?;
            let predicted = report.k_eps.expect("eps was supplied");
            let horizon = predicted.ceil().max(1.0) as usize;
            let mut measured = first_crossing(&problem, &geom, &policy, &x0, horizon, cfg)?;
            if measured.is_none() {
                let extended = (predicted * cfg.budget_factor).ceil() as usize;
                measured = first_crossing(&problem, &geom, &policy, &x0, extended, cfg)?;
            }
            let pass = measured.map(|k| (k as f64) <= predicted).unwrap_or(false);
            rows.push(ProbeRow {
                m,
                cond,
                eps: cfg.eps,
                predicted,
                measured,
                pass,
            });
        }
    }
    Ok(rows)
}

fn first_crossing(
    problem: &ProblemInstance,
    geom: &Geometry,
    policy: &RgemPolicy,
    x0: &Vector,
    horizon: usize,
    cfg: &ProbeConfig,
) -> Result<Option<usize>> {
    let sim_cfg = SimConfig::fully_responsive(problem.m(), SimMode::Deterministic);
    let opts = RunOptions {
        trace_every: 1,
        ..Default::default()
    };
    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut g = geom.clone();
        let out = simulate(problem, &mut g, policy, x0, horizon, &sim_cfg, seed, &opts)?;
        curves.push(
            out.trace
                .records()
                .iter()
                .map(|r| r.p_to_opt.expect("optimum known"))
                .collect(),
        );
    }
    let seeds = cfg.seeds.len() as f64;
    for t in 0..horizon {
        let mean: f64 = curves.iter().map(|c| c[t]).sum::<f64>() / seeds;
        if mean <= cfg.eps {
            return Ok(Some(t + 1));
        }
    }
    Ok(None)
}

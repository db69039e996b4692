//! Randomized gradient extrapolation for strongly convex finite sums.
//!
//! Per iteration the solver draws one component uniformly, refreshes only
//! that component's search point and gradient, and keeps the running
//! aggregate `g^t = (1/m) sum_i y_i^t` up to date recursively:
//!
//! ```text
//!     prox input:  g^{t-1} + (alpha_t / m) * (y^{t-1}_{i_{t-1}} - y^{t-2}_{i_{t-1}})
//!     x^t        = prox(.., x^{t-1}, mu, eta)
//!     xu_i^t     = (x^t + tau xu_i^{t-1}) / (1 + tau)      (i = i_t only)
//!     y_i^t      = grad f_i(xu_i^t)                        (i = i_t only)
//!     g^t        = g^{t-1} + (y^t_{i_t} - y^{t-1}_{i_t}) / m
//! ```
//!
//! Gradients start at zero (`y^{-1} = y^0 = 0`) — no exact gradient is
//! evaluated at the start point — unless the one-time exact initialization is
//! requested. The output solution is the theta-weighted ergodic average of
//! the prox iterates with theta_t = alpha^{-t}.
//!
//! The stochastic mode replaces the component gradient by the average of
//! `B_t = ceil(k (1-alpha)^2 alpha^{-t})` oracle samples, which requires the
//! iteration limit `k` up front and an inner-product norm.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gem::{GapProbe, RunOptions, SolverOutput, PROX_AUDIT_TOL};
use crate::geometry::Geometry;
use crate::oracles::CounterLedger;
use crate::problems::ProblemInstance;
use crate::rng;
use crate::steps::{self, ErgodicAverage};
use crate::trace::{RunTrace, TraceRecord};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// y^0 = 0; no gradient work before the first iteration.
    ZeroInit,
    /// y_i^0 = grad f_i(x^0): m evaluations up front, faster constant.
    ExactInit,
}

/// Constant step-size policy for the randomized solver:
/// tau = 1/(m(1-alpha)) - 1, eta = alpha mu / (1-alpha), alpha_t = m alpha,
/// theta_t = alpha^{-t}.
#[derive(Debug, Clone)]
pub struct RgemPolicy {
    pub m: usize,
    pub alpha: f64,
    /// 1 - alpha, kept at full precision (alpha is close to 1).
    pub one_minus_alpha: f64,
    pub tau: f64,
    pub eta: f64,
    pub init: InitMode,
}

impl RgemPolicy {
    /// Derives the constant policy from the component count, max component
    /// smoothness and strong convexity weight:
    ///
    /// - zero init:  alpha = 1 - 1/(m + sqrt(m^2 + 16 m Lhat/mu))
    /// - exact init: alpha = 1 - 2/(m + sqrt(m^2 +  8 m Lhat/mu))
    pub fn derive(m: usize, lhat: f64, mu: f64, init: InitMode) -> Result<Self> {
        if mu <= 0.0 {
            return Err(Error::Policy(
                "the randomized policy requires mu > 0".into(),
            ));
        }
        if m == 0 {
            return Err(Error::Policy("need at least one component".into()));
        }
        if lhat < 0.0 {
            return Err(Error::Policy("Lhat must be nonnegative".into()));
        }
        let mf = m as f64;
        let c = lhat / mu;
        let beta = match init {
            InitMode::ZeroInit => 1.0 / (mf + (mf * mf + 16.0 * mf * c).sqrt()),
            InitMode::ExactInit => 2.0 / (mf + (mf * mf + 8.0 * mf * c).sqrt()),
        };
        let alpha = 1.0 - beta;
        let tau = 1.0 / (mf * beta) - 1.0;
        let eta = alpha * mu / beta;
        Ok(Self {
            m,
            alpha,
            one_minus_alpha: beta,
            tau,
            eta,
            init,
        })
    }

    pub fn for_problem(problem: &ProblemInstance, init: InitMode) -> Result<Self> {
        Self::derive(problem.m(), problem.lhat(), problem.mu(), init)
    }

    /// Extrapolation weight alpha_t = m * alpha.
    pub fn alpha_t(&self) -> f64 {
        self.m as f64 * self.alpha
    }

    /// theta_{t-1} / theta_t for the ergodic weights theta_t = alpha^{-t}.
    pub fn theta_ratio(&self) -> f64 {
        self.alpha
    }
}

/// Mini-batch size B_t = ceil(k (1-alpha)^2 alpha^{-t}).
pub fn batch_size(k: usize, policy: &RgemPolicy, t: usize) -> usize {
    let raw =
        k as f64 * policy.one_minus_alpha * policy.one_minus_alpha * policy.alpha.powi(-(t as i32));
    raw.ceil().max(1.0) as usize
}

/// Q(xbar, x*) = <grad f(x*), xbar - x*> + mu w(xbar) - mu w(x*); nonnegative
/// for feasible xbar by optimality of x*.
pub fn q_gap(problem: &ProblemInstance, geom: &Geometry, xbar: &Vector) -> Result<f64> {
    let opt = problem
        .optimum()
        .ok_or_else(|| Error::Unavailable("q_gap needs a known optimum".into()))?;
    let g = problem.full_gradient_unmetered(&opt.x_star);
    Ok(g.dot(&xbar.sub(&opt.x_star))
        + problem.mu() * (geom.dgf_value(xbar) - geom.dgf_value(&opt.x_star)))
}

enum YUpdate<'a> {
    Exact,
    Stochastic {
        k: usize,
        rngs: &'a mut [ChaCha8Rng],
    },
}

fn validate(
    problem: &ProblemInstance,
    geom: &Geometry,
    policy: &RgemPolicy,
    x0: &Vector,
    k: usize,
) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("need k >= 1".into()));
    }
    if policy.m != problem.m() {
        return Err(Error::Config(format!(
            "policy derived for m = {} but the problem has m = {}",
            policy.m,
            problem.m()
        )));
    }
    if problem.mu() <= 0.0 {
        return Err(Error::Config(
            "the randomized solver requires mu > 0".into(),
        ));
    }
    if !geom.is_euclidean() {
        return Err(Error::Config(
            "mu > 0 runs are restricted to the inner-product (Euclidean) geometry".into(),
        ));
    }
    if problem.dim() != geom.dim() || x0.len() != geom.dim() {
        return Err(Error::Config(
            "problem/geometry/start dimensions disagree".into(),
        ));
    }
    if !geom.contains(x0) {
        return Err(Error::Infeasible(
            "start point outside the feasible set".into(),
        ));
    }
    Ok(())
}

fn run_inner(
    problem: &ProblemInstance,
    geom: &mut Geometry,
    policy: &RgemPolicy,
    x0: &Vector,
    k: usize,
    seed: u64,
    opts: &RunOptions,
    mut y_update: YUpdate<'_>,
) -> Result<SolverOutput> {
    validate(problem, geom, policy, x0, k)?;
    geom.prepare_start(x0)?;

    let started = Instant::now();
    let m = problem.m();
    let n = problem.dim();
    let mu = problem.mu();
    let ledger = CounterLedger::new(m);
    let probe = GapProbe::new(problem);
    let mut trace = RunTrace::new();

    let mut x = x0.clone();
    let mut x_under: Vec<Vector> = vec![x0.clone(); m];
    let mut y: Vec<Vector> = match policy.init {
        InitMode::ZeroInit => vec![Vector::zeros(n); m],
        InitMode::ExactInit => problem
            .components()
            .iter()
            .map(|c| c.grad(x0, &ledger))
            .collect(),
    };
    let mut g = match policy.init {
        InitMode::ZeroInit => Vector::zeros(n),
        InitMode::ExactInit => steps::mean_of(&y),
    };
    let mut delta_y = Vector::zeros(n);
    let mut ergodic = ErgodicAverage::new(n);
    let mut selector = rng::selection_rng(seed);

    for t in 1..=k {
        let i = rng::draw_agent(&mut selector, m);
        // alpha_t / m = alpha, applied to the previous iteration's delta
        let prox_in = steps::extrapolate(&g, &delta_y, policy.alpha);
        let x_new = geom.prox_map(&prox_in, &x, mu, policy.eta)?;
        if opts.audit {
            let res = geom.normal_cone_residual(&prox_in, &x, &x_new, mu, policy.eta)?;
            if res > PROX_AUDIT_TOL {
                return Err(Error::Audit(format!(
                    "prox optimality residual {res:.3e} at iteration {t}"
                )));
            }
            if !geom.contains(&x_new) {
                return Err(Error::Audit(format!(
                    "iterate left the feasible set at {t}"
                )));
            }
        }
        x_under[i] = steps::underline(&x_new, &x_under[i], policy.tau);
        let y_new = match &mut y_update {
            YUpdate::Exact => problem.component(i).grad(&x_under[i], &ledger),
            YUpdate::Stochastic { k, rngs } => {
                let b = batch_size(*k, policy, t);
                problem
                    .stochastic_oracle(i)?
                    .sfo_batch(&x_under[i], b, &mut rngs[i], &ledger)?
            }
        };
        delta_y = y_new.sub(&y[i]);
        steps::apply_delta(&mut g, &delta_y, m);
        y[i] = y_new;
        ergodic.push(policy.theta_ratio(), &x_new);
        x = x_new;

        if opts.audit {
            let mean = steps::mean_of(&y);
            let err = mean.sub(&g).norm_inf();
            if err > 1e-12 * (1.0 + g.norm_inf()) {
                return Err(Error::Audit(format!(
                    "recursive aggregate drifted by {err:.3e} at iteration {t}"
                )));
            }
        }

        if opts.trace_every > 0 && (t % opts.trace_every == 0 || t == k) {
            let xbar = ergodic.average();
            trace.push(TraceRecord {
                iteration: t,
                psi_gap: problem.psi_gap(geom, &xbar),
                p_to_opt: probe.p_to_opt(problem, geom, &x),
                q_gap: probe.q_gap(problem, geom, &xbar),
                exact_grads: ledger.exact_gradient_evals(),
                stochastic_samples: ledger.stochastic_samples(),
                comm_rounds: 0,
                retries: 0,
                wall_ns: if opts.record_walltime {
                    started.elapsed().as_nanos()
                } else {
                    0
                },
            });
        }
    }

    Ok(SolverOutput {
        x_last: x,
        x_out: ergodic.average(),
        trace,
        exact_grads: ledger.exact_gradient_evals(),
        stochastic_samples: ledger.stochastic_samples(),
    })
}

/// Randomized run with exact component gradients.
pub fn rgem_run(
    problem: &ProblemInstance,
    geom: &mut Geometry,
    policy: &RgemPolicy,
    x0: &Vector,
    k: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<SolverOutput> {
    run_inner(problem, geom, policy, x0, k, seed, opts, YUpdate::Exact)
}

/// Randomized run that queries the stochastic first-order oracles with the
/// horizon-dependent batch schedule. `k` must match the intended horizon.
pub fn rgem_stochastic_run(
    problem: &ProblemInstance,
    geom: &mut Geometry,
    policy: &RgemPolicy,
    x0: &Vector,
    k: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<SolverOutput> {
    if !problem.has_stochastic() {
        return Err(Error::Config(
            "problem has no stochastic oracles attached".into(),
        ));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..problem.m()).map(|i| rng::oracle_rng(seed, i)).collect();
    run_inner(
        problem,
        geom,
        policy,
        x0,
        k,
        seed,
        opts,
        YUpdate::Stochastic { k, rngs: &mut rngs },
    )
}

//! Gradient extrapolation method for minimizing f(x) + mu w(x) over X.
//!
//! Each iteration extrapolates in the dual (gradient) space and takes one
//! prox step:
//!
//! ```text
//!     gt~  = g^{t-1} + alpha_t (g^{t-1} - g^{t-2})
//!     x^t  = prox(gt~, x^{t-1}, mu, eta_t)
//!     xu^t = (x^t + tau_t xu^{t-1}) / (1 + tau_t)
//!     g^t  = grad f(xu^t)
//! ```
//!
//! started from `xu^0 = x^0` and `g^{-1} = g^0 = grad f(x^0)` (one full
//! gradient, charged to the ledger). The output solution is `xu^k`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::oracles::CounterLedger;
use crate::problems::ProblemInstance;
use crate::steps;
use crate::trace::{RunTrace, TraceRecord};
use crate::vector::Vector;

/// Residual tolerance for the optional prox optimality audit.
pub(crate) const PROX_AUDIT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
enum Policy {
    /// Constant steps for mu > 0: tau = sqrt(2 Lf / mu), eta = sqrt(2 Lf mu),
    /// alpha = tau / (1 + tau). Ergodic weights alpha^{-t}.
    StronglyConvex { tau: f64, eta: f64, alpha: f64 },
    /// mu = 0: tau_t = t/2, eta_t = 4 Lf / t, alpha_t = t/(t+1), theta_t = t+1.
    SmoothA { lf: f64 },
    /// mu = 0: tau_t = (t-1)/2, eta_t = 6 Lf / t, alpha_t = (t-1)/t, theta_t = t.
    SmoothB { lf: f64 },
    /// Explicit constant overrides (used e.g. to replay the randomized
    /// method's constants through the deterministic recursion).
    Custom {
        alpha: f64,
        eta: f64,
        tau: f64,
        theta_ratio: f64,
    },
}

/// Step-size sequences {alpha_t, eta_t, tau_t, theta_t} under a named policy.
#[derive(Debug, Clone)]
pub struct StepSchedule {
    policy: Policy,
}

impl StepSchedule {
    pub fn strongly_convex(lf: f64, mu: f64) -> Result<Self> {
        if mu <= 0.0 {
            return Err(Error::Policy("strongly convex policy needs mu > 0".into()));
        }
        if lf <= 0.0 {
            return Err(Error::Policy("strongly convex policy needs Lf > 0".into()));
        }
        let tau = (2.0 * lf / mu).sqrt();
        let eta = (2.0 * lf * mu).sqrt();
        let alpha = tau / (1.0 + tau);
        Ok(Self {
            policy: Policy::StronglyConvex { tau, eta, alpha },
        })
    }

    pub fn smooth_a(lf: f64) -> Result<Self> {
        if lf <= 0.0 {
            return Err(Error::Policy("smooth policy needs Lf > 0".into()));
        }
        Ok(Self {
            policy: Policy::SmoothA { lf },
        })
    }

    pub fn smooth_b(lf: f64) -> Result<Self> {
        if lf <= 0.0 {
            return Err(Error::Policy("smooth policy needs Lf > 0".into()));
        }
        Ok(Self {
            policy: Policy::SmoothB { lf },
        })
    }

    pub fn custom(alpha: f64, eta: f64, tau: f64, theta_ratio: f64) -> Result<Self> {
        if eta <= 0.0 || alpha < 0.0 || tau < 0.0 {
            return Err(Error::Policy(
                "custom schedule needs eta > 0, alpha, tau >= 0".into(),
            ));
        }
        Ok(Self {
            policy: Policy::Custom {
                alpha,
                eta,
                tau,
                theta_ratio,
            },
        })
    }

    pub fn name(&self) -> &'static str {
        match self.policy {
            Policy::StronglyConvex { .. } => "strongly_convex",
            Policy::SmoothA { .. } => "smooth_a",
            Policy::SmoothB { .. } => "smooth_b",
            Policy::Custom { .. } => "custom",
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        let tf = t as f64;
        match self.policy {
            Policy::StronglyConvex { alpha, .. } => alpha,
            Policy::SmoothA { .. } => tf / (tf + 1.0),
            Policy::SmoothB { .. } => (tf - 1.0) / tf,
            Policy::Custom { alpha, .. } => alpha,
        }
    }

    pub fn eta(&self, t: usize) -> f64 {
        let tf = t as f64;
        match self.policy {
            Policy::StronglyConvex { eta, .. } => eta,
            Policy::SmoothA { lf } => 4.0 * lf / tf,
            Policy::SmoothB { lf } => 6.0 * lf / tf,
            Policy::Custom { eta, .. } => eta,
        }
    }

    pub fn tau(&self, t: usize) -> f64 {
        let tf = t as f64;
        match self.policy {
            Policy::StronglyConvex { tau, .. } => tau,
            Policy::SmoothA { .. } => tf / 2.0,
            Policy::SmoothB { .. } => (tf - 1.0) / 2.0,
            Policy::Custom { tau, .. } => tau,
        }
    }

    /// Ergodic weight theta_t of the policy's analysis.
    pub fn theta(&self, t: usize) -> f64 {
        let tf = t as f64;
        match self.policy {
            Policy::StronglyConvex { alpha, .. } => alpha.powi(-(t as i32)),
            Policy::SmoothA { .. } => tf + 1.0,
            Policy::SmoothB { .. } => tf,
            Policy::Custom { theta_ratio, .. } => theta_ratio.powi(-(t as i32)),
        }
    }

    /// theta_{t-1} / theta_t, the streaming-average ratio.
    pub fn theta_ratio(&self, t: usize) -> f64 {
        let tf = t as f64;
        match self.policy {
            Policy::StronglyConvex { alpha, .. } => alpha,
            Policy::SmoothA { .. } => tf / (tf + 1.0),
            Policy::SmoothB { .. } => (tf - 1.0).max(0.0) / tf,
            Policy::Custom { theta_ratio, .. } => theta_ratio,
        }
    }

    pub fn requires_strong_convexity(&self) -> bool {
        matches!(self.policy, Policy::StronglyConvex { .. })
    }
}

/// Options shared by the solver entry points.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Log every `trace_every`-th iteration (0 disables tracing; the final
    /// iteration is always logged when tracing is on).
    pub trace_every: usize,
    /// Run the per-iteration self-checks (prox optimality residual,
    /// feasibility, aggregation exactness for the randomized solvers).
    pub audit: bool,
    /// Measure wall time into the trace (off keeps trace files byte-stable).
    pub record_walltime: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            trace_every: 1,
            audit: false,
            record_walltime: false,
        }
    }
}

/// Result of one solver run.
#[derive(Debug)]
pub struct SolverOutput {
    /// Last prox iterate x^k.
    pub x_last: Vector,
    /// Output solution (xu^k for GEM, the ergodic average for RGEM).
    pub x_out: Vector,
    pub trace: RunTrace,
    pub exact_grads: u64,
    pub stochastic_samples: u64,
}

pub(crate) struct GapProbe {
    grad_at_opt: Option<Vector>,
}

impl GapProbe {
    pub(crate) fn new(problem: &ProblemInstance) -> Self {
        let grad_at_opt = problem
            .optimum()
            .map(|o| problem.full_gradient_unmetered(&o.x_star));
        Self { grad_at_opt }
    }

    /// Q(xbar, x*) = <grad f(x*), xbar - x*> + mu w(xbar) - mu w(x*)
    pub(crate) fn q_gap(
        &self,
        problem: &ProblemInstance,
        geom: &Geometry,
        xbar: &Vector,
    ) -> Option<f64> {
        let opt = problem.optimum()?;
        let g = self.grad_at_opt.as_ref()?;
        Some(
            g.dot(&xbar.sub(&opt.x_star))
                + problem.mu() * (geom.dgf_value(xbar) - geom.dgf_value(&opt.x_star)),
        )
    }

    pub(crate) fn p_to_opt(
        &self,
        problem: &ProblemInstance,
        geom: &Geometry,
        x: &Vector,
    ) -> Option<f64> {
        let opt = problem.optimum()?;
        if let Some(p) = geom.bregman_selected(&opt.x_star) {
            return Some(p);
        }
        geom.bregman_distance(x, &opt.x_star).ok()
    }
}

/// Runs GEM for `k` iterations from `x0`. Returns the last iterate, the
/// output solution `xu^k` and the per-iteration trace.
pub fn gem_run(
    problem: &ProblemInstance,
    geom: &mut Geometry,
    schedule: &StepSchedule,
    x0: &Vector,
    k: usize,
    opts: &RunOptions,
) -> Result<SolverOutput> {
    if k == 0 {
        return Err(Error::Config("gem_run needs k >= 1".into()));
    }
    if problem.dim() != geom.dim() || x0.len() != geom.dim() {
        return Err(Error::Config(
            "problem/geometry/start dimensions disagree".into(),
        ));
    }
    if problem.mu() > 0.0 && !geom.is_euclidean() {
        return Err(Error::Config(
            "mu > 0 requires the inner-product (Euclidean) distance generator".into(),
        ));
    }
    if schedule.requires_strong_convexity() && problem.mu() <= 0.0 {
        return Err(Error::Config(
            "strongly convex schedule on a mu = 0 problem".into(),
        ));
    }
    geom.prepare_start(x0)?;

    let started = Instant::now();
    let mu = problem.mu();
    let ledger = CounterLedger::new(problem.m());
    let probe = GapProbe::new(problem);
    let mut trace = RunTrace::new();

    let mut x = x0.clone();
    let mut x_under = x0.clone();
    let mut g = problem.full_gradient(x0, &ledger);
    let mut g_prev = g.clone(); // g^{t-2}

    for t in 1..=k {
        let alpha_t = schedule.alpha(t);
        let eta_t = schedule.eta(t);
        let tau_t = schedule.tau(t);

        let delta = g.sub(&g_prev);
        let g_tilde = steps::extrapolate(&g, &delta, alpha_t);
        let x_new = geom.prox_map(&g_tilde, &x, mu, eta_t)?;
        if opts.audit {
            let res = geom.normal_cone_residual(&g_tilde, &x, &x_new, mu, eta_t)?;
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
        x_under = steps::underline(&x_new, &x_under, tau_t);
        g_prev = std::mem::replace(&mut g, problem.full_gradient(&x_under, &ledger));
        x = x_new;

        if opts.trace_every > 0 && (t % opts.trace_every == 0 || t == k) {
            trace.push(TraceRecord {
                iteration: t,
                psi_gap: problem.psi_gap(geom, &x_under),
                p_to_opt: probe.p_to_opt(problem, geom, &x),
                q_gap: probe.q_gap(problem, geom, &x_under),
                exact_grads: ledger.exact_gradient_evals(),
                stochastic_samples: 0,
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
        x_out: x_under,
        trace,
        exact_grads: ledger.exact_gradient_evals(),
        stochastic_samples: 0,
    })
}

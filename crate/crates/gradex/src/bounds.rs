//! Closed-form convergence and complexity predictions.
//!
//! For the strongly convex randomized solver with rate `alpha`, the scale
//! constant is
//!
//! ```text
//!     Delta = mu P(x0, x*) + psi(x0) - psi*  [ + sigma0^2/(m mu) ]   (zero init)
//!     Delta = ...                            [ + (sigma0^2/m + 5 sigma^2)/mu ]  (stochastic)
//! ```
//!
//! and the predicted curves are `2 Delta alpha^k / mu` for `P(x^k, x*)` and
//! `6 max{m, Lhat/mu} Delta alpha^{k/2}` for the objective gap. Powers of
//! `alpha` are evaluated in the log domain from the exactly known `1 - alpha`
//! (`exp(k ln1p(-(1-alpha)))`), which keeps the constant-factor audits honest
//! for large `k` where naive repeated multiplication of `alpha ~ 1` loses
//! digits.

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::problems::ProblemInstance;
use crate::rgem::{batch_size, InitMode, RgemPolicy};
use crate::vector::Vector;

/// alpha^k computed as exp(k * ln(1 - beta)) from beta = 1 - alpha.
/// Accurate for alpha near 1 and fractional k.
pub fn geometric(one_minus_alpha: f64, k: f64) -> f64 {
    (k * (-one_minus_alpha).ln_1p()).exp()
}

/// Report of every constant and bound curve a run can be checked against.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub alpha: f64,
    pub one_minus_alpha: f64,
    pub m: usize,
    /// C = Lhat / mu
    pub cond: f64,
    /// Scale constant Delta (with the initialization/noise terms that apply).
    pub delta: f64,
    /// Predicted iterations to an eps-solution, when eps was supplied.
    pub k_eps: Option<f64>,
    /// (k, bound on P(x^k, x*))
    pub p_curve: Vec<(usize, f64)>,
    /// (k, bound on psi(xbar^k) - psi*)
    pub psi_curve: Vec<(usize, f64)>,
    /// Closed-form bound on the total stochastic sample count (stochastic runs).
    pub batch_total_bound: Option<f64>,
    /// The realized batch schedule B_1..B_k (stochastic runs).
    pub batch_schedule: Option<Vec<u64>>,
}

impl BoundReport {
    pub fn p_bound_at(&self, k: usize) -> f64 {
        bound_p(self.delta, self.m, self.cond, self.one_minus_alpha, k).1
    }

    pub fn psi_bound_at(&self, k: usize) -> f64 {
        bound_p(self.delta, self.m, self.cond, self.one_minus_alpha, k).2
    }
}

fn bound_p(delta: f64, m: usize, cond: f64, beta: f64, k: usize) -> (usize, f64, f64) {
    let big = 6.0 * (m as f64).max(cond) * delta;
    let p = 2.0 * delta * geometric(beta, k as f64);
    let psi = big * geometric(beta, k as f64 / 2.0);
    (k, p, psi)
}

fn base_gaps(problem: &ProblemInstance, geom: &Geometry, x0: &Vector) -> Result<(f64, f64, f64)> {
    let opt = problem
        .optimum()
        .ok_or_else(|| Error::Unavailable("bound evaluation needs a known optimum".into()))?;
    let p0 = geom.bregman_distance(x0, &opt.x_star)?;
    let gap0 = problem
        .psi_gap(geom, x0)
        .ok_or_else(|| Error::Unavailable("bound evaluation needs psi*".into()))?;
    let sigma0_sq = problem.sigma0_sq(geom, x0);
    Ok((p0, gap0, sigma0_sq))
}

/// Constants and curves of the deterministic randomized run. With zero
/// initialization Delta carries the `sigma0^2/(m mu)` term; the one-time
/// exact initialization drops it.
pub fn deterministic_bounds(
    problem: &ProblemInstance,
    geom: &Geometry,
    x0: &Vector,
    policy: &RgemPolicy,
    k_max: usize,
    eps: Option<f64>,
) -> Result<BoundReport> {
    let (p0, gap0, sigma0_sq) = base_gaps(problem, geom, x0)?;
    let mu = problem.mu();
    let m = problem.m();
    let cond = problem.lhat() / mu;
    let delta = mu * p0
        + gap0
        + match policy.init {
            InitMode::ZeroInit => sigma0_sq / (m as f64 * mu),
            InitMode::ExactInit => 0.0,
        };
    let mut p_curve = Vec::with_capacity(k_max + 1);
    let mut psi_curve = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let (k, p, psi) = bound_p(delta, m, cond, policy.one_minus_alpha, k);
        p_curve.push((k, p / mu));
        psi_curve.push((k, psi));
    }
    let k_eps = eps.map(|e| match policy.init {
        InitMode::ZeroInit => k_epsilon(m, cond, delta, e),
        InitMode::ExactInit => k_epsilon_exact_init(m, cond, delta, e),
    });
    Ok(BoundReport {
        alpha: policy.alpha,
        one_minus_alpha: policy.one_minus_alpha,
        m,
        cond,
        delta,
        k_eps,
        p_curve,
        psi_curve,
        batch_total_bound: None,
        batch_schedule: None,
    })
}

/// Constants, curves and the sample-count bound of the stochastic run with
/// oracle variance `sigma^2` and horizon `k`.
pub fn stochastic_bounds(
    problem: &ProblemInstance,
    geom: &Geometry,
    x0: &Vector,
    policy: &RgemPolicy,
    sigma_sq: f64,
    k: usize,
) -> Result<BoundReport> {
    let (p0, gap0, sigma0_sq) = base_gaps(problem, geom, x0)?;
    let mu = problem.mu();
    let m = problem.m();
    let cond = problem.lhat() / mu;
    let delta = mu * p0 + gap0 + (sigma0_sq / m as f64 + 5.0 * sigma_sq) / mu;
    let mut p_curve = Vec::with_capacity(k + 1);
    let mut psi_curve = Vec::with_capacity(k + 1);
    for t in 0..=k {
        let (t, p, psi) = bound_p(delta, m, cond, policy.one_minus_alpha, t);
        p_curve.push((t, p / mu));
        psi_curve.push((t, psi));
    }
    let schedule: Vec<u64> = (1..=k).map(|t| batch_size(k, policy, t) as u64).collect();
    Ok(BoundReport {
        alpha: policy.alpha,
        one_minus_alpha: policy.one_minus_alpha,
        m,
        cond,
        delta,
        k_eps: None,
        p_curve,
        psi_curve,
        batch_total_bound: Some(batch_total_bound(k, policy)),
        batch_schedule: Some(schedule),
    })
}

/// Predicted component-gradient evaluations to reach a stochastic
/// eps-solution with zero initialization:
/// `2 (m + sqrt(m^2 + 16 m C)) ln(6 max{m, C} Delta / eps)`.
pub fn k_epsilon(m: usize, cond: f64, delta: f64, eps: f64) -> f64 {
    let mf = m as f64;
    let lead = 2.0 * (mf + (mf * mf + 16.0 * mf * cond).sqrt());
    (lead * (6.0 * mf.max(cond) * delta / eps).ln()).max(0.0)
}

/// Same count under the one-time exact initialization:
/// `(m + sqrt(m^2 + 8 m C)) ln(6 max{m, C} Delta00 / eps) + m`.
pub fn k_epsilon_exact_init(m: usize, cond: f64, delta00: f64, eps: f64) -> f64 {
    let mf = m as f64;
    let lead = mf + (mf * mf + 8.0 * mf * cond).sqrt();
    (lead * (6.0 * mf.max(cond) * delta00 / eps).ln()).max(0.0) + mf
}

/// Closed-form bound on the total mini-batch draw:
/// `sum_t B_t <= k (1-alpha)(alpha^{-k} - 1) + k`.
pub fn batch_total_bound(k: usize, policy: &RgemPolicy) -> f64 {
    let kf = k as f64;
    let beta = policy.one_minus_alpha;
    kf * beta * (geometric(beta, -kf) - 1.0) + kf
}

/// Deterministic linear-rate curve of the extrapolation method with the
/// strongly convex constant policy: `alpha^k (mu P0 + gap0)`.
pub fn gem_strongly_convex_bound(alpha: f64, mu: f64, p0: f64, gap0: f64, k: usize) -> f64 {
    geometric(1.0 - alpha, k as f64) * (mu * p0 + gap0)
}

/// Smooth-case curve of the `t/2` policy:
/// `2 [f(x0) - f* + 8 Lf P0] / ((k+1)(k+2))`.
pub fn gem_smooth_a_bound(lf: f64, p0: f64, f_gap0: f64, k: usize) -> f64 {
    let kf = k as f64;
    2.0 * (f_gap0 + 8.0 * lf * p0) / ((kf + 1.0) * (kf + 2.0))
}

/// Smooth-case curve of the `(t-1)/2` policy: `12 Lf P0 / (k(k+1))`.
pub fn gem_smooth_b_bound(lf: f64, p0: f64, k: usize) -> f64 {
    let kf = k as f64;
    12.0 * lf * p0 / (kf * (kf + 1.0))
}

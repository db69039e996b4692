//! Feasible sets, distance-generating functions and prox-mappings.
//!
//! A geometry pairs a closed convex feasible set `X` with a distance
//! generating function `w` that is strongly convex with modulus 1 for the
//! set's norm. The induced (generalized) Bregman distance is
//!
//! ```text
//!     P(x0, x) = w(x) - w(x0) - <w'(x0), x - x0>,
//! ```
//!
//! and every solver step is one prox-mapping
//!
//! ```text
//!     prox(g, x0, mu, eta) = argmin_{x in X} <g, x> + mu w(x) + eta P(x0, x).
//! ```
//!
//! When `X` has boundary, the subgradient `w'` used for the next `P` is not
//! the analytic gradient but the selection that makes the stationarity
//! equation `g + (mu+eta) w'(x1) - eta w'(x0) = 0` hold exactly, i.e.
//! `w'(x1) = (eta w'(x0) - g) / (mu+eta)`. The geometry stores that selection
//! after each prox call and reuses it when the next call starts from the
//! point it produced, so a solver run maintains the recursion automatically.
//!
//! Supported pairings: half squared Euclidean norm on any of the supported
//! sets (norm `l2`, self-dual) and negative entropy on the probability
//! simplex (norm `l1`, dual `l_inf`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vector::Vector;

/// Membership slack for the feasible-set predicates.
const FEAS_TOL: f64 = 1e-12;

/// A coordinate counts as active (sitting on its bound) below this slack.
const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub enum FeasibleSet {
    Unconstrained { dim: usize },
    Box { lower: Vector, upper: Vector },
    Ball { center: Vector, radius: f64 },
    Simplex { dim: usize },
}

impl FeasibleSet {
    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Unconstrained { dim } | FeasibleSet::Simplex { dim } => *dim,
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Ball { center, .. } => center.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceGenerator {
    /// w(x) = (1/2)||x||_2^2
    HalfSquaredEuclidean,
    /// w(x) = sum_j x_j ln x_j on the simplex
    NegativeEntropy,
}

/// A (point, subgradient-of-w) pair produced by the selection recursion.
#[derive(Debug, Clone)]
struct Selection {
    point: Vector,
    subgrad: Vector,
}

#[derive(Debug, Clone)]
pub struct Geometry {
    set: FeasibleSet,
    dgf: DistanceGenerator,
    /// Selection at the most recent prox output.
    current: Option<Selection>,
    /// Selection that served as reference in the most recent prox call.
    previous: Option<Selection>,
}

impl Geometry {
    pub fn new(set: FeasibleSet, dgf: DistanceGenerator) -> Result<Self> {
        if dgf == DistanceGenerator::NegativeEntropy && !matches!(set, FeasibleSet::Simplex { .. })
        {
            return Err(Error::Config(
                "negative-entropy distance generator requires the simplex feasible set".into(),
            ));
        }
        match &set {
            FeasibleSet::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.iter().zip(upper.iter()).any(|(l, u)| l > u)
                {
                    return Err(Error::Config(
                        "box bounds must satisfy lower <= upper".into(),
                    ));
                }
            }
            FeasibleSet::Ball { radius, .. } if *radius <= 0.0 => {
                return Err(Error::Config("ball radius must be positive".into()));
            }
            _ => {}
        }
        Ok(Self {
            set,
            dgf,
            current: None,
            previous: None,
        })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(
            FeasibleSet::Unconstrained { dim },
            DistanceGenerator::HalfSquaredEuclidean,
        )
        .expect("unconstrained Euclidean geometry is always valid")
    }

    pub fn entropy_simplex(dim: usize) -> Self {
        Self::new(
            FeasibleSet::Simplex { dim },
            DistanceGenerator::NegativeEntropy,
        )
        .expect("entropy on the simplex is always valid")
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn dgf(&self) -> DistanceGenerator {
        self.dgf
    }

    pub fn is_euclidean(&self) -> bool {
        self.dgf == DistanceGenerator::HalfSquaredEuclidean
    }

    /// Feasible-set membership, exact up to a 1e-12 slack.
    pub fn contains(&self, x: &Vector) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match &self.set {
            FeasibleSet::Unconstrained { .. } => true,
            FeasibleSet::Box { lower, upper } => x.iter().enumerate().all(|(j, &v)| {
                let sl = FEAS_TOL * (1.0 + lower[j].abs());
                let su = FEAS_TOL * (1.0 + upper[j].abs());
                v >= lower[j] - sl && v <= upper[j] + su
            }),
            FeasibleSet::Ball { center, radius } => {
                x.dist2(center) <= radius * (1.0 + FEAS_TOL) + FEAS_TOL
            }
            FeasibleSet::Simplex { dim } => {
                x.iter().all(|&v| v >= -FEAS_TOL)
                    && (x.sum() - 1.0).abs() <= FEAS_TOL * (*dim as f64).max(4.0)
            }
        }
    }

    /// Norm the distance generator is strongly convex for.
    pub fn norm(&self, v: &Vector) -> f64 {
        match self.dgf {
            DistanceGenerator::HalfSquaredEuclidean => v.norm2(),
            DistanceGenerator::NegativeEntropy => v.norm1(),
        }
    }

    /// Conjugate norm (gradients live here).
    pub fn dual_norm(&self, v: &Vector) -> f64 {
        match self.dgf {
            DistanceGenerator::HalfSquaredEuclidean => v.norm2(),
            DistanceGenerator::NegativeEntropy => v.norm_inf(),
        }
    }

    pub fn dgf_value(&self, x: &Vector) -> f64 {
        match self.dgf {
            DistanceGenerator::HalfSquaredEuclidean => 0.5 * x.norm2_sq(),
            DistanceGenerator::NegativeEntropy => x
                .iter()
                .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
                .sum(),
        }
    }

    /// Analytic gradient of the distance generator.
    pub fn dgf_gradient(&self, x: &Vector) -> Result<Vector> {
        match self.dgf {
            DistanceGenerator::HalfSquaredEuclidean => Ok(x.clone()),
            DistanceGenerator::NegativeEntropy => {
                if x.iter().any(|&v| v <= 0.0) {
                    return Err(Error::Domain(
                        "entropy gradient needs strictly positive coordinates".into(),
                    ));
                }
                Ok(Vector::from_fn(x.len(), |j| x[j].ln() + 1.0))
            }
        }
    }

    /// Prox-function value `P(x0, x)` with the analytic subgradient at `x0`:
    /// half squared distance for the Euclidean generator, `KL(x || x0)` for
    /// entropy on the simplex.
    pub fn bregman_distance(&self, x0: &Vector, x: &Vector) -> Result<f64> {
        if !self.contains(x0) || !self.contains(x) {
            return Err(Error::Infeasible(
                "bregman_distance needs feasible arguments".into(),
            ));
        }
        match self.dgf {
            DistanceGenerator::HalfSquaredEuclidean => Ok(0.5 * x.sub(x0).norm2_sq()),
            DistanceGenerator::NegativeEntropy => {
                if x0.iter().any(|&v| v <= 0.0) {
                    if x.iter()
                        .zip(x0.iter())
                        .any(|(&xi, &ri)| ri <= 0.0 && xi > 0.0)
                    {
                        return Err(Error::Domain(
                            "KL divergence undefined: mass where the reference is zero".into(),
                        ));
                    }
                    return Err(Error::Domain(
                        "entropy reference point must be strictly positive".into(),
                    ));
                }
                let mut kl = 0.0;
                for (xi, ri) in x.iter().zip(x0.iter()) {
                    if *xi > 0.0 {
                        kl += xi * (xi / ri).ln();
                    }
                }
                Ok(kl.max(0.0))
            }
        }
    }

    /// `P(x_cur, x)` using the stored subgradient selection at the most
    /// recent prox output, or `None` when no selection is held.
    pub fn bregman_selected(&self, x: &Vector) -> Option<f64> {
        let sel = self.current.as_ref()?;
        let p =
            self.dgf_value(x) - self.dgf_value(&sel.point) - sel.subgrad.dot(&x.sub(&sel.point));
        Some(p)
    }

    pub fn stored_subgradient(&self) -> Option<&Vector> {
        self.current.as_ref().map(|s| &s.subgrad)
    }

    /// Initializes the selection recursion at a run's start point with the
    /// analytic gradient of `w`.
    pub fn prepare_start(&mut self, x0: &Vector) -> Result<()> {
        if !self.contains(x0) {
            return Err(Error::Infeasible(
                "start point outside the feasible set".into(),
            ));
        }
        let g = self.dgf_gradient(x0)?;
        self.current = Some(Selection {
            point: x0.clone(),
            subgrad: g,
        });
        self.previous = None;
        Ok(())
    }

    fn reference_subgradient(&self, x0: &Vector) -> Result<Vector> {
        if let Some(cur) = &self.current {
            if cur.point == *x0 {
                return Ok(cur.subgrad.clone());
            }
        }
        if let Some(prev) = &self.previous {
            if prev.point == *x0 {
                return Ok(prev.subgrad.clone());
            }
        }
        self.dgf_gradient(x0)
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, z: &Vector) -> Vector {
        match &self.set {
            FeasibleSet::Unconstrained { .. } => z.clone(),
            FeasibleSet::Box { lower, upper } => {
                Vector::from_fn(z.len(), |j| z[j].clamp(lower[j], upper[j]))
            }
            FeasibleSet::Ball { center, radius } => {
                let d = z.sub(center);
                let nd = d.norm2();
                if nd <= *radius {
                    z.clone()
                } else {
                    let mut out = center.clone();
                    out.add_scaled(radius / nd, &d);
                    out
                }
            }
            FeasibleSet::Simplex { .. } => project_simplex(z),
        }
    }

    /// Solves `argmin_{x in X} <g, x> + mu w(x) + eta P(x0, x)` and records
    /// the subgradient selection `(eta w'(x0) - g) / (mu + eta)` at the
    /// output for the next call.
    pub fn prox_map(&mut self, g: &Vector, x0: &Vector, mu: f64, eta: f64) -> Result<Vector> {
        if eta <= 0.0 {
            return Err(Error::Domain("prox_map requires eta > 0".into()));
        }
        if mu < 0.0 {
            return Err(Error::Domain("prox_map requires mu >= 0".into()));
        }
        if !self.contains(x0) {
            return Err(Error::Infeasible(
                "prox reference point outside the feasible set".into(),
            ));
        }
        if g.len() != self.dim() {
            return Err(Error::Config(
                "gradient dimension mismatch in prox_map".into(),
            ));
        }
        let w0 = self.reference_subgradient(x0)?;
        // stationarity target: w'(x1) = (eta w0 - g) / (mu + eta)
        let target = Vector::from_fn(g.len(), |j| (eta * w0[j] - g[j]) / (mu + eta));
        let x1 = match self.dgf {
            DistanceGenerator::HalfSquaredEuclidean => self.project(&target),
            DistanceGenerator::NegativeEntropy => {
                // x1_j proportional to exp(target_j), normalized over the simplex
                let mx = target.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let mut e = Vector::from_fn(target.len(), |j| (target[j] - mx).exp());
                let z = e.sum();
                e.scale(1.0 / z);
                e
            }
        };
        self.previous = Some(Selection {
            point: x0.clone(),
            subgrad: w0,
        });
        self.current = Some(Selection {
            point: x1.clone(),
            subgrad: target,
        });
        Ok(x1)
    }

    /// Violation of the prox-mapping's first-order optimality at `x1`:
    /// with `r = g + (mu+eta) w'(x1) - eta w'(x0)` (analytic `w'` at `x1`),
    /// returns the norm of the projection of `-r` onto the tangent cone of
    /// `X` at `x1` — the largest normalized slope `<-r, d>/||d||` over every
    /// feasible direction `d`. Exact prox outputs score ~0.
    pub fn normal_cone_residual(
        &self,
        g: &Vector,
        x0: &Vector,
        x1: &Vector,
        mu: f64,
        eta: f64,
    ) -> Result<f64> {
        let w0 = self.reference_subgradient(x0)?;
        let w1 = self.dgf_gradient(x1)?;
        let v = Vector::from_fn(g.len(), |j| -(g[j] + (mu + eta) * w1[j] - eta * w0[j]));
        Ok(self.tangent_cone_projection_norm(x1, &v))
    }

    fn tangent_cone_projection_norm(&self, x: &Vector, v: &Vector) -> f64 {
        match &self.set {
            FeasibleSet::Unconstrained { .. } => v.norm2(),
            FeasibleSet::Box { lower, upper } => {
                let mut s = 0.0;
                for j in 0..v.len() {
                    let span = 1.0 + lower[j].abs().max(upper[j].abs());
                    let at_lo = (x[j] - lower[j]).abs() <= ACTIVE_TOL * span;
                    let at_hi = (upper[j] - x[j]).abs() <= ACTIVE_TOL * span;
                    let mut d = v[j];
                    if at_lo {
                        d = d.max(0.0);
                    }
                    if at_hi {
                        d = d.min(0.0);
                    }
                    if at_lo && at_hi {
                        d = 0.0;
                    }
                    s += d * d;
                }
                s.sqrt()
            }
            FeasibleSet::Ball { center, radius } => {
                let u = x.sub(center);
                let nu = u.norm2();
                if nu < radius * (1.0 - ACTIVE_TOL) {
                    return v.norm2();
                }
                let unit = u.scaled(1.0 / nu);
                let along = v.dot(&unit).max(0.0);
                let mut tang = v.clone();
                tang.add_scaled(-along, &unit);
                tang.norm2()
            }
            FeasibleSet::Simplex { .. } => {
                // cone {d : sum d = 0, d_j >= 0 on the active set}; the
                // projection solves d_j(lam) = v_j - lam (free) and
                // max(v_j - lam, 0) (active), with lam from sum d(lam) = 0.
                let active: Vec<bool> = x.iter().map(|&xi| xi <= ACTIVE_TOL).collect();
                let eval = |lam: f64| -> f64 {
                    let mut s = 0.0;
                    for j in 0..v.len() {
                        let d = v[j] - lam;
                        s += if active[j] { d.max(0.0) } else { d };
                    }
                    s
                };
                let mut lo = v.iter().fold(f64::INFINITY, |m, &a| m.min(a)) - 1.0;
                let mut hi = v.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a)) + 1.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if eval(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let lam = 0.5 * (lo + hi);
                let mut s = 0.0;
                for j in 0..v.len() {
                    let mut d = v[j] - lam;
                    if active[j] {
                        d = d.max(0.0);
                    }
                    s += d * d;
                }
                s.sqrt()
            }
        }
    }

    /// Uniform-ish random feasible point (for property tests and audits).
    pub fn sample_feasible(&self, rng: &mut ChaCha8Rng) -> Vector {
        match &self.set {
            FeasibleSet::Unconstrained { dim } => {
                Vector::from_fn(*dim, |_| rng.gen_range(-2.0..2.0))
            }
            FeasibleSet::Box { lower, upper } => Vector::from_fn(lower.len(), |j| {
                if upper[j] > lower[j] {
                    rng.gen_range(lower[j]..upper[j])
                } else {
                    lower[j]
                }
            }),
            FeasibleSet::Ball { center, radius } => {
                let mut d = Vector::from_fn(center.len(), |_| rng.gen_range(-1.0..1.0));
                let nd = d.norm2().max(1e-12);
                let r = *radius * rng.gen_range(0.0f64..1.0).powf(1.0 / center.len() as f64);
                d.scale(r / nd);
                let mut out = center.clone();
                out.add_scaled(1.0, &d);
                out
            }
            FeasibleSet::Simplex { dim } => {
                // normalized exponentials give a Dirichlet(1) sample
                let mut e = Vector::from_fn(*dim, |_| {
                    let u: f64 = rng.gen_range(1e-12..1.0);
                    -u.ln()
                });
                let s = e.sum();
                e.scale(1.0 / s);
                e
            }
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
fn project_simplex(z: &Vector) -> Vector {
    let n = z.len();
    let mut sorted: Vec<f64> = z.as_slice().to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
            rho = i + 1;
        }
    }
    debug_assert!(rho > 0);
    Vector::from_fn(n, |j| (z[j] - theta).max(0.0))
}

//! First-order oracles for the component functions, with call accounting.
//!
//! A [`ComponentOracle`] wraps one smooth convex `f_i` together with its
//! Lipschitz constant `L_i` (measured in the geometry's dual norm). A
//! [`StochasticOracle`] adds an unbiased gradient sampler with a declared
//! variance bound; batches average samples so the batch-mean variance is
//! `sigma^2 / B`. Counters live in a per-run [`CounterLedger`] so replicas
//! can share the (immutable) problem data.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::problems::ProblemInstance;
use crate::vector::Vector;

/// One smooth convex component function.
pub trait Component: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
}

/// Exact first-order oracle for one component.
#[derive(Clone)]
pub struct ComponentOracle {
    pub index: usize,
    /// Gradient Lipschitz constant over the feasible set (dual-norm units).
    pub lipschitz: f64,
    inner: Arc<dyn Component>,
}

impl ComponentOracle {
    pub fn new(index: usize, lipschitz: f64, inner: Arc<dyn Component>) -> Self {
        Self {
            index,
            lipschitz,
            inner,
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        self.inner.value(x)
    }

    /// Gradient evaluation, counted against the ledger.
    pub fn grad(&self, x: &Vector, ledger: &CounterLedger) -> Vector {
        ledger.count_exact(self.index);
        self.inner.gradient(x)
    }

    /// Diagnostics-only gradient: same value, no budget charge.
    pub fn grad_unmetered(&self, x: &Vector) -> Vector {
        self.inner.gradient(x)
    }

    /// Shared handle to the underlying component function.
    pub fn component_fn(&self) -> Arc<dyn Component> {
        Arc::clone(&self.inner)
    }
}

impl std::fmt::Debug for ComponentOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComponentOracle")
            .field("index", &self.index)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Unbiased stochastic gradient source for one component.
pub trait GradientSampler: Send + Sync {
    fn sample(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Vector;
}

/// Exact gradient plus zero-mean Gaussian noise with per-coordinate variance
/// `sigma^2 / n`, so the total second moment of the noise is `sigma^2`.
pub struct AdditiveGaussian {
    base: Arc<dyn Component>,
    sigma: f64,
}

impl AdditiveGaussian {
    pub fn new(base: Arc<dyn Component>, sigma: f64) -> Self {
        Self { base, sigma }
    }
}

impl GradientSampler for AdditiveGaussian {
    fn sample(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        let mut g = self.base.gradient(x);
        if self.sigma > 0.0 {
            let per_coord = self.sigma / (x.len() as f64).sqrt();
            for v in g.as_mut_slice() {
                let z: f64 = StandardNormal.sample(rng);
                *v += per_coord * z;
            }
        }
        g
    }
}

/// Stochastic first-order oracle: sampler plus its variance bound.
pub struct StochasticOracle {
    pub index: usize,
    /// Declared bound on E ||G(x, xi) - grad f_i(x)||_*^2.
    pub variance_bound: f64,
    sampler: Arc<dyn GradientSampler>,
}

impl StochasticOracle {
    pub fn new(index: usize, variance_bound: f64, sampler: Arc<dyn GradientSampler>) -> Self {
        Self {
            index,
            variance_bound,
            sampler,
        }
    }

    pub fn sample_one(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        self.sampler.sample(x, rng)
    }

    /// Average of `batch` fresh samples at `x`, counted against the ledger.
    /// The incremental mean keeps the degenerate cases (zero noise, a
    /// single-datum population) bit-exact.
    pub fn sfo_batch(
        &self,
        x: &Vector,
        batch: usize,
        rng: &mut ChaCha8Rng,
        ledger: &CounterLedger,
    ) -> Result<Vector> {
        if batch == 0 {
            return Err(Error::Domain(
                "sfo_batch needs a batch size of at least 1".into(),
            ));
        }
        ledger.count_stochastic(self.index, batch as u64);
        let mut mean = self.sampler.sample(x, rng);
        for j in 2..=batch {
            let s = self.sampler.sample(x, rng);
            let w = 1.0 / j as f64;
            for (m, v) in mean.as_mut_slice().iter_mut().zip(s.iter()) {
                *m += (v - *m) * w;
            }
        }
        Ok(mean)
    }
}

impl std::fmt::Debug for StochasticOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StochasticOracle")
            .field("index", &self.index)
            .field("variance_bound", &self.variance_bound)
            .finish()
    }
}

/// Monotone call counters: exact component-gradient evaluations and
/// stochastic samples, total and per component. One ledger per run.
#[derive(Debug)]
pub struct CounterLedger {
    exact: AtomicU64,
    stochastic: AtomicU64,
    per_component: Vec<AtomicU64>,
}

impl CounterLedger {
    pub fn new(m: usize) -> Self {
        Self {
            exact: AtomicU64::new(0),
            stochastic: AtomicU64::new(0),
            per_component: (0..m).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn count_exact(&self, component: usize) {
        self.exact.fetch_add(1, Ordering::Relaxed);
        self.per_component[component].fetch_add(1, Ordering::Relaxed);
    }

    pub fn count_stochastic(&self, component: usize, samples: u64) {
        self.stochastic.fetch_add(samples, Ordering::Relaxed);
        self.per_component[component].fetch_add(samples, Ordering::Relaxed);
    }

    pub fn exact_gradient_evals(&self) -> u64 {
        self.exact.load(Ordering::Relaxed)
    }

    pub fn stochastic_samples(&self) -> u64 {
        self.stochastic.load(Ordering::Relaxed)
    }

    pub fn component_calls(&self, i: usize) -> u64 {
        self.per_component[i].load(Ordering::Relaxed)
    }
}

/// Exact value of `(1/m) sum_i ||grad f_i(x0)||_*^2`, the squared initial
/// gradient scale the zero-initialization analysis depends on. Diagnostics
/// only: does not touch any run ledger.
pub fn estimate_sigma0(problem: &ProblemInstance, geom: &Geometry, x0: &Vector) -> f64 {
    let m = problem.m();
    let mut acc = 0.0;
    for comp in problem.components() {
        let g = comp.grad_unmetered(x0);
        let d = geom.dual_norm(&g);
        acc += d * d;
    }
    acc / m as f64
}

/// Checks the declared Lipschitz constant of one component on `pairs`
/// random feasible pairs: `||grad f(a) - grad f(b)||_* <= L ||a - b||`
/// up to 1e-9 relative slack.
pub fn lipschitz_audit(
    oracle: &ComponentOracle,
    geom: &Geometry,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for _ in 0..pairs {
        let a = geom.sample_feasible(rng);
        let b = geom.sample_feasible(rng);
        let dg = oracle.grad_unmetered(&a).sub(&oracle.grad_unmetered(&b));
        let lhs = geom.dual_norm(&dg);
        let rhs = oracle.lipschitz * geom.norm(&a.sub(&b));
        if lhs > rhs * (1.0 + 1e-9) + 1e-15 {
            return Err(Error::Audit(format!(
                "component {}: gradient variation {lhs:.3e} exceeds L*dist {rhs:.3e}",
                oracle.index
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::problems::{LogisticComponent, QuadraticComponent};
    use crate::rng::oracle_rng;

    fn half_sq_norm(n: usize) -> ComponentOracle {
        let q = Matrix::identity(n);
        ComponentOracle::new(
            0,
            1.0,
            Arc::new(QuadraticComponent::new(Arc::new(q), Vector::zeros(n))),
        )
    }

    #[test]
    fn quadratic_gradient_is_identity_map() {
        let oracle = half_sq_norm(2);
        let ledger = CounterLedger::new(1);
        let g = oracle.grad(&Vector::new(vec![1.0, 2.0]).unwrap(), &ledger);
        assert_eq!(g.as_slice(), &[1.0, 2.0]);
        assert_eq!(ledger.exact_gradient_evals(), 1);
        assert_eq!(ledger.component_calls(0), 1);
    }

    #[test]
    fn logistic_single_datum_gradient_at_zero() {
        let comp = LogisticComponent::new(vec![Vector::new(vec![1.0, 0.0]).unwrap()], vec![1.0]);
        let g = comp.gradient(&Vector::zeros(2));
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
        assert!((comp.value(&Vector::zeros(2)) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shifted_quadratic_vanishes_at_minimizer() {
        // f(x) = 0.5 ||x - c||^2 has gradient 0 at c
        let n = 3;
        let c = Vector::new(vec![0.3, -0.7, 1.1]).unwrap();
        let q = Matrix::identity(n);
        let comp = QuadraticComponent::new(Arc::new(q), c.scaled(-1.0));
        let g = comp.gradient(&c);
        assert!(g.norm2() < 1e-15);
    }

    #[test]
    fn zero_noise_sfo_is_exact() {
        let base = half_sq_norm(2);
        let sfo = StochasticOracle::new(
            0,
            0.0,
            Arc::new(AdditiveGaussian::new(
                Arc::new(QuadraticComponent::new(
                    Arc::new(Matrix::identity(2)),
                    Vector::zeros(2),
                )),
                0.0,
            )),
        );
        let ledger = CounterLedger::new(1);
        let x = Vector::new(vec![0.4, -0.9]).unwrap();
        let mut rng = oracle_rng(1, 0);
        let avg = sfo.sfo_batch(&x, 7, &mut rng, &ledger).unwrap();
        assert_eq!(avg, base.grad_unmetered(&x));
        assert_eq!(ledger.stochastic_samples(), 7);
    }

    #[test]
    fn batch_mean_concentrates() {
        // ||mean - grad|| <= 4 sigma / sqrt(B) at a fixed seed
        let sigma = 2.0;
        let n = 4;
        let base: Arc<dyn Component> = Arc::new(QuadraticComponent::new(
            Arc::new(Matrix::identity(n)),
            Vector::zeros(n),
        ));
        let sfo = StochasticOracle::new(
            0,
            sigma * sigma,
            Arc::new(AdditiveGaussian::new(base.clone(), sigma)),
        );
        let ledger = CounterLedger::new(1);
        let x = Vector::constant(n, 1.0);
        let mut rng = oracle_rng(77, 0);
        let b = 100_000;
        let avg = sfo.sfo_batch(&x, b, &mut rng, &ledger).unwrap();
        let err = avg.sub(&base.gradient(&x)).norm2();
        assert!(err <= 4.0 * sigma / (b as f64).sqrt(), "err = {err}");
    }

    #[test]
    fn unbiasedness_per_coordinate() {
        let sigma = 1.5;
        let n = 3;
        let base: Arc<dyn Component> = Arc::new(QuadraticComponent::new(
            Arc::new(Matrix::identity(n)),
            Vector::zeros(n),
        ));
        let sampler = AdditiveGaussian::new(base.clone(), sigma);
        let x = Vector::new(vec![0.2, -0.4, 0.6]).unwrap();
        let mut rng = oracle_rng(5, 0);
        let reps = 10_000;
        let mut mean = Vector::zeros(n);
        for _ in 0..reps {
            mean.add_scaled(1.0 / reps as f64, &sampler.sample(&x, &mut rng));
        }
        let exact = base.gradient(&x);
        let tol = 5.0 * sigma / (reps as f64).sqrt();
        for j in 0..n {
            assert!((mean[j] - exact[j]).abs() <= tol);
        }
    }

    #[test]
    fn empirical_variance_within_bound() {
        let sigma = 1.5;
        let n = 6;
        let base: Arc<dyn Component> = Arc::new(QuadraticComponent::new(
            Arc::new(Matrix::identity(n)),
            Vector::zeros(n),
        ));
        let sampler = AdditiveGaussian::new(base.clone(), sigma);
        let x = Vector::constant(n, 0.5);
        let exact = base.gradient(&x);
        let mut rng = oracle_rng(19, 0);
        let reps = 20_000;
        let mut second_moment = 0.0;
        for _ in 0..reps {
            let s = sampler.sample(&x, &mut rng);
            second_moment += s.sub(&exact).norm2_sq();
        }
        second_moment /= reps as f64;
        // statistical tolerance: chi-square mean sigma^2, sd ~ sigma^2 sqrt(2/(n reps))
        let slack = 6.0 * sigma * sigma * (2.0 / (n as f64 * reps as f64)).sqrt();
        assert!(second_moment <= sigma * sigma + slack, "{second_moment}");
    }

    #[test]
    fn sigma0_examples() {
        use crate::problems::quadratic_from_diagonals;
        let geom = Geometry::euclidean(2);
        // all components minimized at x0 = 0
        let p = quadratic_from_diagonals(
            &[vec![1.0, 2.0], vec![3.0, 1.0]],
            &[vec![0.0; 2], vec![0.0; 2]],
            1.0,
        )
        .unwrap();
        assert_eq!(estimate_sigma0(&p, &geom, &Vector::zeros(2)), 0.0);
        // gradients (1,0) and (0,1) at x0: (1 + 1)/2 = 1
        let p = quadratic_from_diagonals(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            1.0,
        )
        .unwrap();
        let s = estimate_sigma0(&p, &geom, &Vector::zeros(2));
        assert!((s - 1.0).abs() < 1e-12);
        // scaling every component by c scales the result by c^2
        let scaled = quadratic_from_diagonals(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[vec![3.0, 0.0], vec![0.0, 3.0]],
            1.0,
        )
        .unwrap();
        let s3 = estimate_sigma0(&scaled, &geom, &Vector::zeros(2));
        assert!((s3 - 9.0 * s).abs() < 1e-12);
    }

    #[test]
    fn single_datum_subsampling_is_exact() {
        use crate::problems::{make_logistic, partition_text, with_subsampling};
        use crate::problems::{DataFormat, PartitionScheme};
        let ds = partition_text(
            "1 1:0.8 2:-0.4\n",
            1,
            PartitionScheme::RoundRobin,
            DataFormat::SparseText,
            None,
        )
        .unwrap();
        let p = with_subsampling(make_logistic(&ds, 0.0).unwrap(), &ds);
        let x = Vector::new(vec![0.3, 0.2]).unwrap();
        let exact = p.component(0).grad_unmetered(&x);
        let ledger = CounterLedger::new(1);
        let mut rng = oracle_rng(4, 0);
        for b in [1usize, 3, 17] {
            let avg = p
                .stochastic_oracle(0)
                .unwrap()
                .sfo_batch(&x, b, &mut rng, &ledger)
                .unwrap();
            assert_eq!(avg, exact, "degenerate population, batch {b}");
        }
    }

    #[test]
    fn lipschitz_audit_accepts_declared_constant() {
        let geom = Geometry::euclidean(3);
        let mut rng = oracle_rng(3, 9);
        let d = Matrix::from_diag(&[0.5, 1.5, 3.0]);
        let oracle = ComponentOracle::new(
            0,
            3.0,
            Arc::new(QuadraticComponent::new(Arc::new(d), Vector::zeros(3))),
        );
        lipschitz_audit(&oracle, &geom, 200, &mut rng).unwrap();
        // understated constant gets caught
        let lying = ComponentOracle::new(
            0,
            1.0,
            Arc::new(QuadraticComponent::new(
                Arc::new(Matrix::from_diag(&[0.5, 1.5, 3.0])),
                Vector::zeros(3),
            )),
        );
        assert!(lipschitz_audit(&lying, &geom, 200, &mut rng).is_err());
    }
}

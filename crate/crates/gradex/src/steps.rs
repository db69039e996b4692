//! Shared step arithmetic. The in-process solvers and the protocol simulator
//! both call these kernels so that, given the same seed, their floating-point
//! sample paths agree bit for bit.

use crate::vector::Vector;

/// g + alpha * delta, the dual-space extrapolation.
pub(crate) fn extrapolate(g: &Vector, delta: &Vector, alpha: f64) -> Vector {
    Vector::from_fn(g.len(), |i| g[i] + alpha * delta[i])
}

/// (x + tau * prev) / (1 + tau), the local search-point update.
pub(crate) fn underline(x: &Vector, prev: &Vector, tau: f64) -> Vector {
    let denom = 1.0 + tau;
    Vector::from_fn(x.len(), |i| (x[i] + tau * prev[i]) / denom)
}

/// g += delta / m, the server-side aggregate refresh.
pub(crate) fn apply_delta(g: &mut Vector, delta: &Vector, m: usize) {
    let mf = m as f64;
    for (gi, di) in g.as_mut_slice().iter_mut().zip(delta.iter()) {
        *gi += di / mf;
    }
}

/// (1/m) * sum of the given vectors.
pub(crate) fn mean_of(vs: &[Vector]) -> Vector {
    let n = vs[0].len();
    let mf = vs.len() as f64;
    let mut out = Vector::zeros(n);
    for v in vs {
        out.add_scaled(1.0, v);
    }
    out.scale(1.0 / mf);
    out
}

/// Streaming theta-weighted average normalized by the most recent weight, so
/// that no intermediate quantity grows like `alpha^{-t}`. With weight ratios
/// r_t = theta_{t-1}/theta_t the running pair is
///     S_t = S_{t-1} * r_t + x^t,   W_t = W_{t-1} * r_t + 1,
/// and the average is S_t / W_t.
#[derive(Debug, Clone)]
pub(crate) struct ErgodicAverage {
    sum: Vector,
    weight: f64,
    started: bool,
}

impl ErgodicAverage {
    pub fn new(n: usize) -> Self {
        Self {
            sum: Vector::zeros(n),
            weight: 0.0,
            started: false,
        }
    }

    pub fn push(&mut self, ratio: f64, x: &Vector) {
        if !self.started {
            self.sum = x.clone();
            self.weight = 1.0;
            self.started = true;
        } else {
            self.sum.scale(ratio);
            self.sum.add_scaled(1.0, x);
            self.weight = self.weight * ratio + 1.0;
        }
    }

    pub fn average(&self) -> Vector {
        assert!(self.started, "ergodic average queried before any iterate");
        self.sum.scaled(1.0 / self.weight)
    }
}

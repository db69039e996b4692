//! Minimal dense linear algebra for desk-scale benchmark construction:
//! symmetric matvec, Cholesky solves and power iteration. Not exported.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::vector::Vector;

#[derive(Debug, Clone)]
pub(crate) struct Matrix {
    pub n: usize,
    /// Row-major storage.
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[cfg(test)]
    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matvec(&self, x: &Vector) -> Vector {
        debug_assert_eq!(self.n, x.len());
        Vector::from_fn(self.n, |i| {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            row.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
        })
    }

    /// self <- self + a * I
    pub fn add_diag(&mut self, a: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += a;
        }
    }

    /// self <- self + a * other
    pub fn add_scaled(&mut self, a: f64, other: &Matrix) {
        debug_assert_eq!(self.n, other.n);
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    /// C = Aᵀ * B
    pub fn at_mul(a: &Matrix, b: &Matrix) -> Matrix {
        let n = a.n;
        let mut c = Matrix::zeros(n);
        for k in 0..n {
            for i in 0..n {
                let aki = a.at(k, i);
                if aki == 0.0 {
                    continue;
                }
                for j in 0..n {
                    c.data[i * n + j] += aki * b.at(k, j);
                }
            }
        }
        c
    }

    /// C = A * B
    #[cfg(test)]
    pub fn mul(a: &Matrix, b: &Matrix) -> Matrix {
        let n = a.n;
        let mut c = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = a.at(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    c.data[i * n + j] += aik * b.at(k, j);
                }
            }
        }
        c
    }

    /// Solves `self * x = rhs` for symmetric positive definite `self` via
    /// Cholesky with one step of iterative refinement.
    pub fn cholesky_solve(&self, rhs: &Vector) -> Option<Vector> {
        let chol = self.cholesky()?;
        let mut x = chol.solve(rhs);
        // refinement: r = rhs - A x, x += A⁻¹ r
        let mut r = rhs.clone();
        r.add_scaled(-1.0, &self.matvec(&x));
        let dx = chol.solve(&r);
        x.add_scaled(1.0, &dx);
        Some(x)
    }

    fn cholesky(&self) -> Option<Cholesky> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.at(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    /// Largest-eigenvalue estimate by power iteration with Rayleigh quotient.
    pub fn power_iteration_lambda_max(&self, iters: usize, rng: &mut ChaCha8Rng) -> f64 {
        let n = self.n;
        let mut v = Vector::from_fn(n, |_| rng.gen_range(-1.0..1.0));
        let nv = v.norm2();
        if nv == 0.0 {
            return 0.0;
        }
        v.scale(1.0 / nv);
        let mut lambda = 0.0;
        for _ in 0..iters {
            let w = self.matvec(&v);
            let nw = w.norm2();
            if nw == 0.0 {
                return 0.0;
            }
            lambda = v.dot(&w);
            v = w;
            v.scale(1.0 / nw);
        }
        lambda
    }
}

struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn solve(&self, rhs: &Vector) -> Vector {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = rhs[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        Vector::new(x).expect("cholesky solve produced non-finite entries")
    }
}

/// Random orthogonal matrix assembled from Givens rotations.
pub(crate) fn random_rotation(n: usize, sweeps: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut r = Matrix::identity(n);
    if n < 2 {
        return r;
    }
    for _ in 0..sweeps * n {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        for col in 0..n {
            let a = r.at(i, col);
            let b = r.at(j, col);
            r.set(i, col, c * a - s * b);
            r.set(j, col, s * a + c * b);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::problem_rng;

    #[test]
    fn cholesky_solves_spd_system() {
        // A = [[4,1],[1,3]], b = (1, 2) -> x = (1/11, 7/11)
        let mut a = Matrix::zeros(2);
        a.set(0, 0, 4.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 3.0);
        let x = a
            .cholesky_solve(&Vector::new(vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = problem_rng(11);
        let r = random_rotation(8, 4, &mut rng);
        let rtr = Matrix::at_mul(&r, &r);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((rtr.at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let mut rng = problem_rng(5);
        let rot = random_rotation(6, 4, &mut rng);
        let d = Matrix::from_diag(&[0.5, 1.0, 2.0, 3.0, 4.0, 9.0]);
        let q = Matrix::mul(&Matrix::at_mul(&rot, &d), &rot);
        let lam = q.power_iteration_lambda_max(600, &mut rng);
        assert!((lam - 9.0).abs() < 1e-8, "lambda = {lam}");
    }
}

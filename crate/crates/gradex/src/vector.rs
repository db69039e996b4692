//! Dense fixed-dimension vectors. Entries are checked to be finite on
//! construction; solver state never stores NaN or infinities.

use std::ops::Index;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    coords: Vec<f64>,
}

impl Vector {
    /// Wraps a coordinate vector, rejecting NaN/infinite entries.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("vector entries must be finite".into()));
        }
        Ok(Self { coords })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            coords: vec![0.0; n],
        }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        debug_assert!(value.is_finite());
        Self {
            coords: vec![value; n],
        }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        let coords: Vec<f64> = (0..n).map(f).collect();
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Self { coords }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        Self::new(s.to_vec())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.coords.iter()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm2_sq(&self) -> f64 {
        self.coords.iter().map(|a| a * a).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.norm2_sq().sqrt()
    }

    pub fn norm1(&self) -> f64 {
        self.coords.iter().map(|a| a.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.coords.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.coords.iter().sum()
    }

    /// self += a * x
    pub fn add_scaled(&mut self, a: f64, x: &Vector) {
        debug_assert_eq!(self.len(), x.len());
        for (s, v) in self.coords.iter_mut().zip(&x.coords) {
            *s += a * v;
        }
    }

    /// self *= a
    pub fn scale(&mut self, a: f64) {
        for s in self.coords.iter_mut() {
            *s *= a;
        }
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector::from_fn(self.len(), |i| self.coords[i] - other.coords[i])
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector::from_fn(self.len(), |i| self.coords[i] + other.coords[i])
    }

    pub fn scaled(&self, a: f64) -> Vector {
        Vector::from_fn(self.len(), |i| a * self.coords[i])
    }

    pub fn dist2(&self, other: &Vector) -> f64 {
        self.sub(other).norm2()
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0.0)
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

impl<'a> IntoIterator for &'a Vector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;
    fn into_iter(self) -> Self::IntoIter {
        self.coords.iter()
    }
}

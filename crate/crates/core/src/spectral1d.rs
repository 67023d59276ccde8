//! Gauss–Legendre collocation on the moment interval `[-1, 1]`.
//!
//! Nodes are interior Gauss points, so quantities that are only removable
//! singularities at the poles (e.g. `F'/phi0`) are never evaluated at `y = ±1`.
//! Differentiation uses the barycentric formula on the same nodes.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smallest grid accepted by [`Grid::new`].
pub const MIN_NODES: usize = 8;

/// Default collocation size.
pub const DEFAULT_NODES: usize = 128;

/// Collocation grid: nodes, quadrature weights, barycentric weights and the
/// dense differentiation matrix.
#[derive(Debug, Clone)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    bary: Vec<f64>,
    diff: DMatrix<f64>,
}

/// Nodal values on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: vec![c; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max - min` over the nodes.
    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn shifted(&self, c: f64) -> Field {
        self.map(|v| v + c)
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map(|v| v * s)
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Legendre polynomial `P_k(x)` and its derivative, by the three-term recurrence.
pub fn legendre(k: usize, x: f64) -> (f64, f64) {
    if k == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=k {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let kf = k as f64;
    // derivative from P_k and P_{k-1}; only used away from x = ±1
    let dp = kf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let theta = PI * (i as f64 + 0.75) / (nf + 0.5);
        let mut x = (theta.cos())
            * (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf) - 1.0 / (384.0 * nf.powi(4)) * (39.0 - 28.0 / theta.sin().powi(2)));
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // ascending order: largest root goes last
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

impl Grid {
    /// Builds an `n`-point Gauss–Legendre grid; `n` must be at least [`MIN_NODES`].
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::Config(format!(
                "grid size {n} is below the minimum of {MIN_NODES}"
            )));
        }
        Ok(Self::new_unchecked(n))
    }

    /// Same as [`Grid::new`] without the size gate. Meant for small-rule tests.
    pub fn new_unchecked(n: usize) -> Self {
        assert!(n >= 1, "grid needs at least one node");
        let (nodes, weights) = gauss_legendre(n);
        // barycentric weights for Gauss–Legendre points, up to a common factor
        let bary: Vec<f64> = nodes
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(j, (&x, &w))| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                s * ((1.0 - x * x) * w).sqrt()
            })
            .collect();
        let mut diff = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                if i != j {
                    let v = bary[j] / bary[i] / (nodes[i] - nodes[j]);
                    diff[(i, j)] = v;
                    row_sum += v;
                }
            }
            diff[(i, i)] = -row_sum;
        }
        Self {
            nodes,
            weights,
            bary,
            diff,
        }
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.len() != self.size() {
            return Err(Error::GridMismatch {
                expected: self.size(),
                found: f.len(),
            });
        }
        Ok(())
    }

    /// Samples `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.nodes.iter().map(|&x| f(x)).collect())
    }

    /// Nodal derivative of the interpolant.
    pub fn differentiate(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        Ok(self.differentiate_slice(f.values()))
    }

    pub(crate) fn differentiate_slice(&self, v: &[f64]) -> Field {
        let n = self.size();
        let mut out = vec![0.0; n];
        // differences against the diagonal value keep constants in the kernel exactly
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, vj) in v.iter().enumerate() {
                if j != i {
                    s += self.diff[(i, j)] * (vj - v[i]);
                }
            }
            *o = s;
        }
        Field::new(out)
    }

    /// Gauss quadrature `sum_i w_i f_i`.
    pub fn integrate(&self, f: &Field) -> Result<f64> {
        self.check(f)?;
        Ok(self.integrate_slice(f.values()))
    }

    pub(crate) fn integrate_slice(&self, v: &[f64]) -> f64 {
        self.weights.iter().zip(v).map(|(w, f)| w * f).sum()
    }

    /// Quadrature of a pointwise product.
    pub fn integrate_product(&self, f: &Field, g: &Field) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        Ok(self
            .weights
            .iter()
            .zip(f.values())
            .zip(g.values())
            .map(|((w, a), b)| w * a * b)
            .sum())
    }

    /// Evaluates the interpolant of `f` at an arbitrary point of `[-1, 1]`
    /// (second barycentric form).
    pub fn interpolate(&self, f: &Field, x: f64) -> Result<f64> {
        self.check(f)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&xj, &bj), &fj) in self.nodes.iter().zip(&self.bary).zip(f.values()) {
            let d = x - xj;
            if d == 0.0 {
                return Ok(fj);
            }
            let c = bj / d;
            num += c * fj;
            den += c;
        }
        Ok(num / den)
    }

    /// Legendre coefficients of the interpolant, `f = sum_k c_k P_k`.
    pub fn to_legendre(&self, f: &Field) -> Result<Vec<f64>> {
        self.check(f)?;
        let n = self.size();
        let mut coeffs = vec![0.0; n];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let norm = (2 * k + 1) as f64 / 2.0;
            let s: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .zip(f.values())
                .map(|((&x, &w), &v)| w * v * legendre(k, x).0)
                .sum();
            *c = norm * s;
        }
        Ok(coeffs)
    }

    /// Nodal values of `sum_k c_k P_k`. Extra coefficients beyond the grid
    /// size are still evaluated exactly at the nodes.
    pub fn from_legendre(&self, coeffs: &[f64]) -> Field {
        self.sample(|x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| if c == 0.0 { 0.0 } else { c * legendre(k, x).0 })
                .sum()
        })
    }

    /// Mean with respect to `dy / 2`.
    pub fn mean(&self, f: &Field) -> Result<f64> {
        Ok(self.integrate(f)? / 2.0)
    }
}

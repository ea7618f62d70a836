//! Dense square-matrix plumbing shared by the analysis modules.
//!
//! Everything here is plain row-major `f64` with deterministic loop order, so
//! repeated runs produce bit-identical results on any platform.

use serde::{Deserialize, Serialize};

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    size: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size);
        for i in 0..size {
            m.data[i * size + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let size = rows.len();
        let mut data = Vec::with_capacity(size * size);
        for row in rows {
            assert_eq!(row.len(), size, "rows must form a square matrix");
            data.extend_from_slice(row);
        }
        Self { size, data }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.size + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[x * self.size + y] = v;
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.size..(x + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.size)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    /// `self * other`, fresh allocation.
    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.size, other.size);
        let mut out = SquareMatrix::zeros(self.size);
        self.mul_into(other, &mut out);
        out
    }

    /// `out = self * other`. `out` must not alias either operand.
    pub fn mul_into(&self, other: &SquareMatrix, out: &mut SquareMatrix) {
        let n = self.size;
        assert_eq!(other.size, n);
        assert_eq!(out.size, n);
        out.data.fill(0.0);
        for i in 0..n {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
    }

    /// Row vector times matrix: `out = v * self`.
    pub fn vec_mul_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.size;
        assert_eq!(v.len(), n);
        assert_eq!(out.len(), n);
        out.fill(0.0);
        for (k, &a) in v.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.data[k * n..(k + 1) * n];
            for (o, &b) in out.iter_mut().zip(row) {
                *o += a * b;
            }
        }
    }

    /// Row vector times matrix with Neumaier-compensated accumulation,
    /// for long mixed-sign sweeps.
    pub fn vec_mul_into_compensated(&self, v: &[f64], out: &mut [f64]) {
        let n = self.size;
        assert_eq!(v.len(), n);
        assert_eq!(out.len(), n);
        for (y, o) in out.iter_mut().enumerate() {
            let mut acc = Accumulator::new();
            for (k, &a) in v.iter().enumerate() {
                if a != 0.0 {
                    acc.add(a * self.data[k * n + y]);
                }
            }
            *o = acc.total();
        }
    }

    /// Matrix times column vector: `out = self * v`.
    pub fn mat_vec_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.size;
        assert_eq!(v.len(), n);
        assert_eq!(out.len(), n);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * n..(i + 1) * n];
            *o = dot(row, v);
        }
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        assert_eq!(self.size, other.size);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> SquareMatrix {
        let n = self.size;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    pub fn approx_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Accumulator::new();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `1e-13 * scale`.
pub fn solve_linear(a: &SquareMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.size();
    assert_eq!(b.len(), n);
    let mut m = a.data.clone();
    let mut rhs = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(1.0);
    let tol = 1e-13 * scale;

    for col in 0..n {
        let mut pivot = col;
        let mut best = m[col * n + col].abs();
        for r in col + 1..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best <= tol {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                m.swap(col * n + c, pivot * n + c);
            }
            rhs.swap(col, pivot);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let factor = m[r * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[r * n + c] -= factor * m[col * n + c];
            }
            rhs[r] -= factor * rhs[col];
        }
    }

    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = Accumulator::new();
        acc.add(rhs[row]);
        for c in row + 1..n {
            acc.add(-m[row * n + c] * x[c]);
        }
        x[row] = acc.total() / m[row * n + row];
    }
    Some(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// returned in descending order. Intended for the modest sizes the
/// correlation computations need; converges to near machine precision.
pub fn symmetric_eigenvalues(m: &SquareMatrix) -> Vec<f64> {
    let n = m.size();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![m.get(0, 0)];
    }
    let mut a = m.data.clone();
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let tol = 1e-15 * frob;

    for _sweep in 0..64 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(a[i * n + j].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eigs: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eigs.sort_by(|x, y| y.total_cmp(x));
    eigs
}

pub fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

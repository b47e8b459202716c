//! Dense row-major matrices, vectors, activations and seeded initialization.
//!
//! Everything is `f64`. Vectors are treated as row vectors, so an affine map
//! reads `x·U + h·W + b` with `U` shaped `input × out`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator used for every seeded draw in the crate.
///
/// ChaCha8 has a fixed, platform-independent output stream for a given
/// `u64` seed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, alpha: f64) -> Vector {
        self.map(|v| alpha * v)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row vector times matrix: `x · self`.
    pub fn left_mul(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "vector-matrix product",
                expected: self.rows,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        self.accumulate_left_mul(x, &mut out);
        Ok(Vector(out))
    }

    /// `out += x · self`, dimensions assumed checked by the caller.
    pub(crate) fn accumulate_left_mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xr * w;
            }
        }
    }

    /// `out += self · d` (matrix times column vector, i.e. `d · selfᵀ`).
    pub(crate) fn accumulate_mul_transpose(&self, d: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(d).map(|(w, dv)| w * dv).sum::<f64>();
        }
    }

    /// `self += aᵀ · b` (outer product accumulation).
    pub(crate) fn accumulate_outer(&mut self, a: &[f64], b: &[f64]) {
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &bv) in row.iter_mut().zip(b) {
                *w += ar * bv;
            }
        }
    }
}

/// Returns `x·U + h·W + b`.
pub fn affine(x: &Vector, u: &Matrix, h: &Vector, w: &Matrix, b: &Vector) -> Result<Vector> {
    if u.cols() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "affine input weights",
            expected: b.len(),
            found: u.cols(),
        });
    }
    if w.cols() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "affine recurrent weights",
            expected: b.len(),
            found: w.cols(),
        });
    }
    if x.len() != u.rows() {
        return Err(Error::DimensionMismatch {
            context: "affine input",
            expected: u.rows(),
            found: x.len(),
        });
    }
    if h.len() != w.rows() {
        return Err(Error::DimensionMismatch {
            context: "affine hidden",
            expected: w.rows(),
            found: h.len(),
        });
    }
    let mut out = b.0.clone();
    u.accumulate_left_mul(x.as_slice(), &mut out);
    w.accumulate_left_mul(h.as_slice(), &mut out);
    Ok(Vector(out))
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    // Split on sign so exp never overflows.
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &Vector) -> Vector {
    v.map(sigmoid_scalar)
}

pub fn tanh_act(v: &Vector) -> Vector {
    v.map(f64::tanh)
}

/// Glorot-uniform matrix: entries i.i.d. on `[-s, s]`, `s = sqrt(6 / (rows + cols))`.
pub fn init_params(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    init_params_with(rows, cols, &mut rng)
}

pub(crate) fn init_params_with(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-s..=s)).collect();
    Matrix { rows, cols, data }
}

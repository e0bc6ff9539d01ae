//! Skew-symmetric dense linear algebra.
//!
//! Pfaffians are computed by Parlett–Reid elimination with partial pivoting;
//! a perfect-matching expansion is kept as an oracle for small dimensions.

use crate::error::{Error, Result};

/// Absolute tolerance on `m[i][j] + m[j][i]` accepted at construction.
pub const ANTISYMMETRY_TOL: f64 = 1e-12;
/// Pivots smaller than this in magnitude make the Pfaffian exactly zero.
pub const PIVOT_FLOOR: f64 = 1e-300;
/// Largest dimension accepted by [`pfaffian_bruteforce`].
pub const BRUTEFORCE_MAX_DIM: usize = 12;

/// Real antisymmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SkewMatrix {
    /// Validates antisymmetry and stores `(m - mᵀ)/2`.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("skew matrix must have positive dimension".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries for dimension {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite entry at ({}, {})",
                pos / dim,
                pos % dim
            )));
        }
        let mut data = entries;
        for i in 0..dim {
            for j in i..dim {
                let upper = data[i * dim + j];
                let lower = data[j * dim + i];
                if (upper + lower).abs() > ANTISYMMETRY_TOL {
                    return Err(Error::Validation(format!(
                        "entries ({i}, {j}) = {upper:e} and ({j}, {i}) = {lower:e} are not antisymmetric"
                    )));
                }
                let v = 0.5 * (upper - lower);
                data[i * dim + j] = v;
                data[j * dim + i] = -v;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(f(i, j));
            }
        }
        Self::new(dim, entries)
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(dim, vec![0.0; dim * dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    fn require_even(&self) -> Result<()> {
        if self.dim % 2 != 0 {
            return Err(Error::Dimension(format!(
                "Pfaffian requires even dimension, got {}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// Row/column permutation applied during tridiagonalization.
///
/// Row `i` of the permuted matrix is row `perm[i]` of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Permutation {
    pub perm: Vec<usize>,
    pub sign: f64,
}

impl Permutation {
    fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            sign: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

fn swap_rows_cols(a: &mut [f64], n: usize, p: usize, q: usize) {
    for c in 0..n {
        a.swap(p * n + c, q * n + c);
    }
    for r in 0..n {
        a.swap(r * n + p, r * n + q);
    }
}

fn pivot_row(a: &[f64], n: usize, k: usize) -> usize {
    let mut best = k + 1;
    let mut best_abs = a[(k + 1) * n + k].abs();
    for r in k + 2..n {
        let v = a[r * n + k].abs();
        if v > best_abs {
            best = r;
            best_abs = v;
        }
    }
    best
}

/// Pfaffian via Parlett–Reid with partial pivoting.
///
/// Only every other column is eliminated; the Pfaffian accumulates the
/// superdiagonal pivots of the implied tridiagonal form.
pub fn pfaffian(m: &SkewMatrix) -> Result<f64> {
    m.require_even()?;
    let n = m.dim;
    let mut a = m.data.clone();
    let mut pf = 1.0;
    let mut k = 0;
    while k + 1 < n {
        let kp = pivot_row(&a, n, k);
        if kp != k + 1 {
            swap_rows_cols(&mut a, n, k + 1, kp);
            pf = -pf;
        }
        let piv = a[k * n + k + 1];
        if piv.abs() < PIVOT_FLOOR {
            return Ok(0.0);
        }
        pf *= piv;
        if k + 2 < n {
            let tau: Vec<f64> = (k + 2..n).map(|c| a[k * n + c] / piv).collect();
            let col: Vec<f64> = (k + 2..n).map(|r| a[r * n + k + 1]).collect();
            for (ri, r) in (k + 2..n).enumerate() {
                for (ci, c) in (k + 2..n).enumerate() {
                    a[r * n + c] += tau[ri] * col[ci] - col[ri] * tau[ci];
                }
            }
        }
        k += 2;
    }
    Ok(pf)
}

/// Full Parlett–Reid reduction `P m Pᵀ = L T Lᵀ` with `L` unit lower triangular.
///
/// Returns the skew-tridiagonal `T` and the permutation; see
/// [`pfaffian_from_tridiagonal`].
pub fn skew_tridiagonalize(m: &SkewMatrix) -> Result<(SkewMatrix, Permutation)> {
    m.require_even()?;
    let n = m.dim;
    let mut a = m.data.clone();
    let mut perm = Permutation::identity(n);
    for k in 0..n.saturating_sub(2) {
        let kp = pivot_row(&a, n, k);
        if kp != k + 1 {
            swap_rows_cols(&mut a, n, k + 1, kp);
            perm.perm.swap(k + 1, kp);
            perm.sign = -perm.sign;
        }
        let piv = a[(k + 1) * n + k];
        if piv.abs() < PIVOT_FLOOR {
            continue;
        }
        let tau: Vec<f64> = (k + 2..n).map(|r| a[r * n + k] / piv).collect();
        if tau.iter().all(|&t| t == 0.0) {
            continue;
        }
        let col: Vec<f64> = (k + 2..n).map(|r| a[r * n + k + 1]).collect();
        for (ri, r) in (k + 2..n).enumerate() {
            for (ci, c) in (k + 2..n).enumerate() {
                a[r * n + c] += tau[ri] * col[ci] - col[ri] * tau[ci];
            }
            a[r * n + k] = 0.0;
            a[k * n + r] = 0.0;
        }
    }
    // the trailing block is exactly tridiagonal; clear rounding residue elsewhere
    for r in 0..n {
        for c in 0..n {
            if r.abs_diff(c) > 1 {
                a[r * n + c] = 0.0;
            }
        }
    }
    Ok((SkewMatrix { dim: n, data: a }, perm))
}

/// Pfaffian of the original matrix from its tridiagonal form.
pub fn pfaffian_from_tridiagonal(t: &SkewMatrix, perm: &Permutation) -> Result<f64> {
    t.require_even()?;
    let prod: f64 = (0..t.dim / 2).map(|i| t.get(2 * i, 2 * i + 1)).product();
    Ok(perm.sign * prod)
}

/// Pfaffian as a signed sum over perfect matchings (expansion along the first row).
pub fn pfaffian_bruteforce(m: &SkewMatrix) -> Result<f64> {
    if m.dim > BRUTEFORCE_MAX_DIM {
        return Err(Error::Size(format!(
            "brute-force Pfaffian limited to dimension {BRUTEFORCE_MAX_DIM}, got {}",
            m.dim
        )));
    }
    m.require_even()?;
    let idx: Vec<usize> = (0..m.dim).collect();
    Ok(matching_sum(m, &idx))
}

fn matching_sum(m: &SkewMatrix, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx[0];
    let mut total = 0.0;
    for pos in 1..idx.len() {
        let a = m.get(first, idx[pos]);
        if a == 0.0 {
            continue;
        }
        let rest: Vec<usize> = idx[1..]
            .iter()
            .enumerate()
            .filter(|&(p, _)| p + 1 != pos)
            .map(|(_, &v)| v)
            .collect();
        let sign = if pos % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * a * matching_sum(m, &rest);
    }
    total
}

/// Determinant of a general row-major `n×n` matrix by LU with partial pivoting.
pub fn lu_determinant(n: usize, entries: &[f64]) -> Result<f64> {
    if entries.len() != n * n {
        return Err(Error::Dimension(format!(
            "expected {} entries, got {}",
            n * n,
            entries.len()
        )));
    }
    let mut a = entries.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let mut p = k;
        for r in k + 1..n {
            if a[r * n + k].abs() > a[p * n + k].abs() {
                p = r;
            }
        }
        if a[p * n + k] == 0.0 {
            return Ok(0.0);
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            det = -det;
        }
        let piv = a[k * n + k];
        det *= piv;
        for r in k + 1..n {
            let f = a[r * n + k] / piv;
            if f != 0.0 {
                for c in k + 1..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
            }
        }
    }
    Ok(det)
}

pub fn determinant(m: &SkewMatrix) -> Result<f64> {
    lu_determinant(m.dim, &m.data)
}

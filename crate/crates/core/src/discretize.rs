//! Quadrature grids and weight-symmetrized discretizations of integral operators.
//!
//! An operator with kernel `k` on a grid `(x_i, w_i)` is stored as the matrix
//! `√w_i k(x_i, x_j) √w_j`, so products, traces and adjoints of the matrices
//! approximate those of the operators on L².

use crate::error::{Error, Result};
use crate::kernels::MatrixKernel;
use crate::quadrature::gauss_legendre;
use faer::{Mat, Side};
use rayon::prelude::*;
use std::sync::{Arc, OnceLock};

pub const PANEL_NODES: usize = 8;
/// Nodes per unit length used when no density is given.
pub const DEFAULT_DENSITY: f64 = 16.0;
pub const MIN_NODES: usize = 256;
/// Largest matrix dimension accepted by the SVD-based routines.
pub const MAX_SVD_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    GaussLegendre,
    /// Open rule: nodes at cell midpoints, equal weights.
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Panel {
    start: usize,
    a: f64,
    b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    interval: (f64, f64),
    segments: Vec<(f64, f64)>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    scheme: Scheme,
    panels: Vec<Panel>,
}

struct Reference {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `partial[i][j] = ∫_{-1}^{t_i} ℓ_j(t) dt` for the Lagrange basis ℓ_j.
    partial: Vec<Vec<f64>>,
}

fn reference_panel() -> &'static Reference {
    static REF: OnceLock<Reference> = OnceLock::new();
    REF.get_or_init(|| {
        let (t, w) = gauss_legendre(PANEL_NODES);
        let lagrange = |j: usize, s: f64| -> f64 {
            t.iter()
                .enumerate()
                .filter(|&(m, _)| m != j)
                .map(|(_, &tm)| (s - tm) / (t[j] - tm))
                .product()
        };
        let partial = t
            .iter()
            .map(|&ti| {
                let half = 0.5 * (ti + 1.0);
                (0..PANEL_NODES)
                    .map(|j| {
                        t.iter()
                            .zip(&w)
                            .map(|(&u, &wu)| half * wu * lagrange(j, -1.0 + half * (u + 1.0)))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Reference {
            nodes: t,
            weights: w,
            partial,
        }
    })
}

impl Grid {
    /// `n_points` nodes on `(a, b)`; Gauss–Legendre rounds up to whole 8-node panels.
    pub fn new(interval: (f64, f64), n_points: usize, scheme: Scheme) -> Result<Self> {
        let (a, b) = interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Validation(format!("degenerate interval ({a}, {b})")));
        }
        if n_points < 2 {
            return Err(Error::Validation(format!("need at least 2 nodes, got {n_points}")));
        }
        match scheme {
            Scheme::GaussLegendre => {
                Self::gauss_segments(&[(a, b)], &[n_points.div_ceil(PANEL_NODES)])
            }
            Scheme::Trapezoid => {
                let h = (b - a) / n_points as f64;
                let nodes = (0..n_points).map(|i| a + (i as f64 + 0.5) * h).collect();
                Ok(Self {
                    interval,
                    segments: vec![interval],
                    nodes,
                    weights: vec![h; n_points],
                    scheme,
                    panels: Vec::new(),
                })
            }
        }
    }

    /// Gauss–Legendre grid with `density` nodes per unit length and at least [`MIN_NODES`].
    pub fn with_density(a: f64, b: f64, density: f64) -> Result<Self> {
        if !(density > 0.0) {
            return Err(Error::Validation(format!("grid density must be positive, got {density}")));
        }
        let n = ((b - a) * density).ceil().max(MIN_NODES as f64) as usize;
        Self::new((a, b), n, Scheme::GaussLegendre)
    }

    /// Gauss–Legendre grid on a union of disjoint ordered segments.
    ///
    /// Panel boundaries fall on every segment endpoint.
    pub fn on_segments(segments: &[(f64, f64)], density: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Validation("no segments given".into()));
        }
        if !(density > 0.0) {
            return Err(Error::Validation(format!("grid density must be positive, got {density}")));
        }
        let panels: Vec<usize> = segments
            .iter()
            .map(|&(a, b)| (((b - a) * density) / PANEL_NODES as f64).ceil().max(1.0) as usize)
            .collect();
        Self::gauss_segments(segments, &panels)
    }

    fn gauss_segments(segments: &[(f64, f64)], panel_counts: &[usize]) -> Result<Self> {
        for (k, &(a, b)) in segments.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::Validation(format!("degenerate interval ({a}, {b})")));
            }
            if k > 0 && a < segments[k - 1].1 {
                return Err(Error::Validation("segments must be ordered and disjoint".into()));
            }
        }
        let r = reference_panel();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut panels = Vec::new();
        for (&(a, b), &np) in segments.iter().zip(panel_counts) {
            let h = (b - a) / np as f64;
            for p in 0..np {
                let pa = a + p as f64 * h;
                let pb = if p + 1 == np { b } else { a + (p + 1) as f64 * h };
                let half = 0.5 * (pb - pa);
                let mid = 0.5 * (pa + pb);
                panels.push(Panel {
                    start: nodes.len(),
                    a: pa,
                    b: pb,
                });
                for (t, w) in r.nodes.iter().zip(&r.weights) {
                    nodes.push(mid + half * t);
                    weights.push(half * w);
                }
            }
        }
        Ok(Self {
            interval: (segments[0].0, segments[segments.len() - 1].1),
            segments: segments.to_vec(),
            nodes,
            weights,
            scheme: Scheme::GaussLegendre,
            panels,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// `√w_i f(x_i)`: a function of one variable in the symmetrized coordinates.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w.sqrt() * f(x))
            .collect()
    }

    /// Matrix `M` with `Σ_j M_ij φ(x_j) ≈ ∫ sgn(x_i − y) φ(y) dy`.
    ///
    /// Gauss–Legendre grids integrate the jump exactly against the panel's
    /// interpolating polynomial; the open rule uses the plain node values.
    fn sgn_weights(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        match self.scheme {
            Scheme::Trapezoid => (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| crate::special::sgn(self.nodes[i] - self.nodes[j]) * self.weights[j])
                        .collect()
                })
                .collect(),
            Scheme::GaussLegendre => {
                let r = reference_panel();
                let panel_of: Vec<usize> = self
                    .panels
                    .iter()
                    .enumerate()
                    .flat_map(|(p, _)| std::iter::repeat_n(p, PANEL_NODES))
                    .collect();
                (0..n)
                    .map(|i| {
                        let pi = panel_of[i];
                        (0..n)
                            .map(|j| {
                                let pj = panel_of[j];
                                if pj < pi {
                                    self.weights[j]
                                } else if pj > pi {
                                    -self.weights[j]
                                } else {
                                    let p = &self.panels[pi];
                                    let li = i - p.start;
                                    let lj = j - p.start;
                                    (p.b - p.a) * r.partial[li][lj] - self.weights[j]
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// Step function `Σ λ_i χ_(a_i, b_i)` with ordered, non-overlapping pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pieces: Vec<(f64, f64, f64)>,
}

impl StepFunction {
    pub fn new(pieces: Vec<(f64, f64, f64)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Validation("step function needs at least one piece".into()));
        }
        for (k, &(l, a, b)) in pieces.iter().enumerate() {
            if !(l.is_finite() && a.is_finite() && b.is_finite()) {
                return Err(Error::Validation(format!("piece {k} is not finite")));
            }
            if l == 0.0 {
                return Err(Error::Validation(format!("piece {k} has zero height")));
            }
            if a >= b {
                return Err(Error::Validation(format!("piece {k} has empty interval ({a}, {b})")));
            }
            if k > 0 && a < pieces[k - 1].2 {
                return Err(Error::Validation(format!(
                    "piece {k} overlaps or precedes piece {}",
                    k - 1
                )));
            }
        }
        Ok(Self { pieces })
    }

    /// χ_(a, b).
    pub fn indicator(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![(1.0, a, b)])
    }

    /// `(λ, a, b)` triples in order.
    pub fn pieces(&self) -> &[(f64, f64, f64)] {
        &self.pieces
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.pieces
            .iter()
            .find(|&&(_, a, b)| x > a && x < b)
            .map_or(0.0, |p| p.0)
    }

    /// φ_L(x) = φ(x / L), as a step function with endpoints multiplied by `L`.
    pub fn scaled(&self, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::Validation(format!("scale must be positive, got {l}")));
        }
        Ok(Self {
            pieces: self.pieces.iter().map(|&(h, a, b)| (h, a * l, b * l)).collect(),
        })
    }

    pub fn times(&self, c: f64) -> Result<Self> {
        Self::new(self.pieces.iter().map(|&(h, a, b)| (c * h, a, b)).collect())
    }

    /// Merged supporting intervals: touching pieces are joined.
    pub fn support(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(_, a, b) in &self.pieces {
            match out.last_mut() {
                Some(last) if last.1 == a => last.1 = b,
                _ => out.push((a, b)),
            }
        }
        out
    }

    /// Distinct breakpoints `a_i`, `b_i`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pieces.iter().flat_map(|&(_, a, b)| [a, b]).collect();
        v.dedup();
        v
    }

    pub fn is_indicator_of(&self, a: f64, b: f64) -> bool {
        self.support() == vec![(a, b)] && self.pieces.iter().all(|p| p.0 == 1.0)
    }
}

/// Integral operator on a grid in the weight-symmetrized representation.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Arc<Grid>,
    matrix: Mat<f64>,
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

fn grid_mismatch() -> Error {
    Error::Validation("operators live on different grids".into())
}

fn assemble(n: usize, entry: impl Fn(usize, usize) -> f64 + Sync) -> Mat<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| entry(i, j)).collect())
        .collect();
    Mat::from_fn(n, n, |i, j| rows[i][j])
}

/// Discretizes a continuous kernel `k(x, y)`.
pub fn discretize_kernel(k: impl Fn(f64, f64) -> f64 + Sync, grid: &Arc<Grid>) -> DiscreteOperator {
    discretize_kernel_with_jump(k, 0.0, grid)
}

/// Discretizes `k(x, y) + jump·sgn(x − y)` with `k` continuous.
pub fn discretize_kernel_with_jump(
    k: impl Fn(f64, f64) -> f64 + Sync,
    jump: f64,
    grid: &Arc<Grid>,
) -> DiscreteOperator {
    let x = grid.nodes();
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let n = grid.len();
    let sgn = if jump != 0.0 { Some(grid.sgn_weights()) } else { None };
    let matrix = assemble(n, |i, j| {
        let mut v = (sw[i] * sw[j]) * k(x[i], x[j]);
        if let Some(m) = &sgn {
            v += jump * sw[i] * m[i][j] / sw[j];
        }
        v
    });
    DiscreteOperator {
        grid: Arc::clone(grid),
        matrix,
    }
}

/// Multiplication by χ_(a, b): diagonal 0/1 selecting nodes inside the open interval.
pub fn chi_projection(piece: (f64, f64), grid: &Arc<Grid>) -> DiscreteOperator {
    let x = grid.nodes();
    let matrix = Mat::from_fn(grid.len(), grid.len(), |i, j| {
        if i == j && x[i] > piece.0 && x[i] < piece.1 {
            1.0
        } else {
            0.0
        }
    });
    DiscreteOperator {
        grid: Arc::clone(grid),
        matrix,
    }
}

/// Multiplication by `f`.
pub fn multiplication(f: impl Fn(f64) -> f64, grid: &Arc<Grid>) -> DiscreteOperator {
    let x = grid.nodes();
    let n = grid.len();
    let mut matrix = Mat::zeros(n, n);
    for i in 0..n {
        matrix[(i, i)] = f(x[i]);
    }
    DiscreteOperator {
        grid: Arc::clone(grid),
        matrix,
    }
}

impl DiscreteOperator {
    pub fn from_matrix(grid: &Arc<Grid>, matrix: Mat<f64>) -> Result<Self> {
        if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "matrix is {}×{}, grid has {} nodes",
                matrix.nrows(),
                matrix.ncols(),
                grid.len()
            )));
        }
        Ok(Self {
            grid: Arc::clone(grid),
            matrix,
        })
    }

    pub fn zero(grid: &Arc<Grid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            matrix: Mat::zeros(grid.len(), grid.len()),
        }
    }

    pub fn identity(grid: &Arc<Grid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            matrix: Mat::identity(grid.len(), grid.len()),
        }
    }

    /// Σ_i u_i ⊗ v_i from symmetrized samples (see [`Grid::sample`]).
    pub fn from_outer_products(grid: &Arc<Grid>, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let n = grid.len();
        if pairs.iter().any(|(u, v)| u.len() != n || v.len() != n) {
            return Err(Error::Dimension("factor length does not match grid".into()));
        }
        let matrix = assemble(n, |i, j| pairs.iter().map(|(u, v)| u[i] * v[j]).sum());
        Ok(Self {
            grid: Arc::clone(grid),
            matrix,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Kernel value at `(x_i, x_j)`, undoing the weight symmetrization.
    pub fn kernel_at(&self, i: usize, j: usize) -> f64 {
        let w = self.grid.weights();
        self.matrix[(i, j)] / (w[i] * w[j]).sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    pub fn product(&self, other: &Self) -> Result<Self> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(grid_mismatch());
        }
        Ok(Self {
            grid: Arc::clone(&self.grid),
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn adjoint(&self) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            matrix: self.matrix.transpose().to_owned(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, sign: f64) -> Result<Self> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(grid_mismatch());
        }
        let matrix = Mat::from_fn(self.dim(), self.dim(), |i, j| {
            self.matrix[(i, j)] + sign * other.matrix[(i, j)]
        });
        Ok(Self {
            grid: Arc::clone(&self.grid),
            matrix,
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            matrix: Mat::from_fn(self.dim(), self.dim(), |i, j| c * self.matrix[(i, j)]),
        }
    }

    /// Matrix–vector product in symmetrized coordinates.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for (j, &vj) in v.iter().enumerate().take(n) {
            if vj == 0.0 {
                continue;
            }
            let col = self.matrix.col_as_slice(j);
            for (o, &c) in out.iter_mut().zip(col) {
                *o += c * vj;
            }
        }
        out
    }

    /// Tr(self · other) without forming the product.
    pub fn trace_of_product(&self, other: &Self) -> Result<f64> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(grid_mismatch());
        }
        Ok(trace_of_product(&self.matrix, &other.matrix))
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .flat_map(|j| self.matrix.col_as_slice(j).iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Max over nodes of |kernel(self) − kernel(other)|.
    pub fn max_abs_kernel_diff(&self, other: &Self) -> Result<f64> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(grid_mismatch());
        }
        let n = self.dim();
        let mut m: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                m = m.max((self.kernel_at(i, j) - other.kernel_at(i, j)).abs());
            }
        }
        Ok(m)
    }

    pub fn singular_values(&self) -> Result<Vec<f64>> {
        singular_values(&self.matrix)
    }

    pub fn trace_norm(&self) -> Result<f64> {
        Ok(self.singular_values()?.iter().sum())
    }

    /// Eigenvalues ascending; the matrix must be symmetric to 1e-12 relative.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for j in 0..n {
            for i in j + 1..n {
                if (self.matrix[(i, j)] - self.matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Validation(format!(
                        "operator is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        self.matrix
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Numerical(format!("symmetric eigensolver failed: {e:?}")))
    }
}

pub fn op_trace(op: &DiscreteOperator) -> f64 {
    op.trace()
}

pub fn op_product(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<DiscreteOperator> {
    a.product(b)
}

pub fn op_adjoint(a: &DiscreteOperator) -> DiscreteOperator {
    a.adjoint()
}

pub fn trace_norm(op: &DiscreteOperator) -> Result<f64> {
    op.trace_norm()
}

fn singular_values(m: &Mat<f64>) -> Result<Vec<f64>> {
    let n = m.nrows().max(m.ncols());
    if n > MAX_SVD_DIM {
        return Err(Error::Size(format!(
            "SVD limited to {MAX_SVD_DIM}×{MAX_SVD_DIM}, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    m.singular_values().map_err(|e| {
        let non_finite = (0..m.ncols())
            .flat_map(|j| m.col_as_slice(j).iter())
            .filter(|v| !v.is_finite())
            .count();
        Error::Numerical(format!(
            "SVD failed ({e:?}); {}×{} matrix, Frobenius norm {:e}, {non_finite} non-finite entries",
            m.nrows(),
            m.ncols(),
            m.norm_l2()
        ))
    })
}

pub(crate) fn trace_of_product(x: &Mat<f64>, y: &Mat<f64>) -> f64 {
    // Σ_i Σ_j x_ij y_ji, read column-wise from x and row-wise from y
    let n = x.nrows();
    (0..n)
        .map(|j| {
            let xc = x.col_as_slice(j);
            (0..n).map(|i| xc[i] * y[(j, i)]).sum::<f64>()
        })
        .sum()
}

/// Block traces `W[r][c] = Σ_i (x·y)[r·n+i, c·n+i]` of a product of 2n×2n matrices.
fn block_trace_of_product(x: &Mat<f64>, y: &Mat<f64>, n: usize) -> [[f64; 2]; 2] {
    let mut w = [[0.0; 2]; 2];
    let m = 2 * n;
    for (r, row) in w.iter_mut().enumerate() {
        for (c, out) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..m {
                let xc = x.col_as_slice(j);
                for i in 0..n {
                    s += xc[r * n + i] * y[(j, c * n + i)];
                }
            }
            *out = s;
        }
    }
    w
}

/// λ·[[A, D], [B, A†]] on two copies of a grid.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    grid: Arc<Grid>,
    lambda: f64,
    matrix: Mat<f64>,
}

pub fn block_operator(
    a: &DiscreteOperator,
    d: &DiscreteOperator,
    b: &DiscreteOperator,
    a_dag: &DiscreteOperator,
    lambda: f64,
) -> Result<BlockOperator> {
    for op in [d, b, a_dag] {
        if !same_grid(&a.grid, &op.grid) {
            return Err(grid_mismatch());
        }
    }
    let n = a.dim();
    let blocks = [[&a.matrix, &d.matrix], [&b.matrix, &a_dag.matrix]];
    let matrix = Mat::from_fn(2 * n, 2 * n, |i, j| {
        lambda * blocks[i / n][j / n][(i % n, j % n)]
    });
    Ok(BlockOperator {
        grid: Arc::clone(&a.grid),
        lambda,
        matrix,
    })
}

/// Matrix powers needed to read off Tr(Mᵏ) for k ≤ 8 with few products.
struct Powers {
    p: Vec<Option<Mat<f64>>>,
}

impl Powers {
    fn new(m: &Mat<f64>, k_max: usize) -> Self {
        let mut p: Vec<Option<Mat<f64>>> = vec![None; 5];
        if k_max >= 2 {
            p[2] = Some(m * m);
        }
        if k_max >= 5 {
            let p2 = p[2].as_ref().unwrap();
            p[4] = Some(p2 * p2);
        }
        if k_max >= 7 {
            p[3] = Some(p[2].as_ref().unwrap() * m);
        }
        Self { p }
    }

    fn get<'a>(&'a self, m: &'a Mat<f64>, e: usize) -> &'a Mat<f64> {
        if e == 1 {
            m
        } else {
            self.p[e].as_ref().expect("power was not precomputed")
        }
    }

    /// Splits k into exponents whose powers are available.
    fn split(k: usize) -> (usize, usize) {
        match k {
            2 => (1, 1),
            3 => (2, 1),
            4 => (2, 2),
            5 => (4, 1),
            6 => (4, 2),
            7 => (4, 3),
            8 => (4, 4),
            _ => unreachable!(),
        }
    }
}

pub const MAX_POWER: usize = 8;

impl BlockOperator {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    fn check_power(k: usize) -> Result<()> {
        if k == 0 || k > MAX_POWER {
            return Err(Error::Validation(format!("power must be in 1..={MAX_POWER}, got {k}")));
        }
        Ok(())
    }

    /// Tr(𝒦ᵏ) for k = 1..=k_max.
    pub fn power_traces(&self, k_max: usize) -> Result<Vec<f64>> {
        Self::check_power(k_max)?;
        let m = &self.matrix;
        let pw = Powers::new(m, k_max);
        let mut out = vec![(0..m.nrows()).map(|i| m[(i, i)]).sum()];
        for k in 2..=k_max {
            let (a, b) = Powers::split(k);
            out.push(trace_of_product(pw.get(m, a), pw.get(m, b)));
        }
        Ok(out)
    }

    /// W_k: the 2×2 matrix of block traces of 𝒦ᵏ, for k = 1..=k_max.
    pub fn block_traces(&self, k_max: usize) -> Result<Vec<[[f64; 2]; 2]>> {
        Self::check_power(k_max)?;
        let m = &self.matrix;
        let n = m.nrows() / 2;
        let pw = Powers::new(m, k_max);
        let mut w1 = [[0.0; 2]; 2];
        for (r, row) in w1.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..n).map(|i| m[(r * n + i, c * n + i)]).sum();
            }
        }
        let mut out = vec![w1];
        for k in 2..=k_max {
            let (a, b) = Powers::split(k);
            out.push(block_trace_of_product(pw.get(m, a), pw.get(m, b), n));
        }
        Ok(out)
    }
}

/// The discretized blocks of a sine kernel on a grid.
#[derive(Debug, Clone)]
pub struct KernelOperators {
    pub grid: Arc<Grid>,
    pub lambda: f64,
    pub a: DiscreteOperator,
    pub d: DiscreteOperator,
    pub b: DiscreteOperator,
    pub a_dag: DiscreteOperator,
}

impl KernelOperators {
    pub fn assemble(kernel: &MatrixKernel, grid: &Arc<Grid>) -> Self {
        let a = discretize_kernel(|x, y| kernel.a(x, y), grid);
        let d = discretize_kernel(|x, y| kernel.d(x, y), grid);
        let b = discretize_kernel_with_jump(|x, y| kernel.b_smooth(x, y), kernel.b_jump(), grid);
        let a_dag = a.adjoint();
        Self {
            grid: Arc::clone(grid),
            lambda: kernel.lambda(),
            a,
            d,
            b,
            a_dag,
        }
    }

    /// Operators on `(−L, L)` at `density` nodes per unit length.
    pub fn on_window(kernel: &MatrixKernel, l: f64, density: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::Validation(format!("L must be positive, got {l}")));
        }
        let grid = Arc::new(Grid::with_density(-l, l, density)?);
        Ok(Self::assemble(kernel, &grid))
    }

    pub fn block(&self) -> Result<BlockOperator> {
        block_operator(&self.a, &self.d, &self.b, &self.a_dag, self.lambda)
    }
}

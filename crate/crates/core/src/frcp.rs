//! Finite-rank commutator property of the sine kernels.
//!
//! With `A, A†, B, D` the blocks of `K` restricted to `I_L = (−L, L)`,
//! the kernels have FRCP when
//!
//! ```text
//! A†B − BA            = Σ f_i ⊗ g_i
//! DB − (αA² + βA)     = Σ h_i ⊗ e_i
//! ```
//!
//! where `(f ⊗ g)(x, y) = f(x) g(y)`. This module holds the closed-form
//! factors, compares them against the discretized operators, and scans the
//! inner products whose growth controls the central limit theorem.

use crate::discretize::{chi_projection, DiscreteOperator, Grid, KernelOperators, StepFunction};
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, MatrixKernel};
use crate::special::{sinc_s, sine_integral_is};
use std::fmt;
use std::sync::Arc;

/// Singular-value ratio below which trailing directions count as zero.
pub const RANK_RATIO_TOL: f64 = 1e-6;
/// Largest singular value below which an operator is treated as zero.
pub const ZERO_OPERATOR_TOL: f64 = 1e-12;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// One rank-one term `left ⊗ right`, i.e. the kernel `left(x)·right(y)`.
#[derive(Clone)]
pub struct FactorPair {
    pub left: ScalarFn,
    pub right: ScalarFn,
}

impl FactorPair {
    pub fn new(
        left: impl Fn(f64) -> f64 + Send + Sync + 'static,
        right: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            left: scalar(left),
            right: scalar(right),
        }
    }

    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        (self.left)(x) * (self.right)(y)
    }
}

impl fmt::Debug for FactorPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FactorPair(..)")
    }
}

/// The data `{N, f⁽ⁱ⁾, g⁽ⁱ⁾, h⁽ⁱ⁾, e⁽ⁱ⁾, α, β}` at a fixed scale `L`.
#[derive(Debug, Clone)]
pub struct FrcpData {
    pub l: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Pairs `(f_i, g_i)`.
    pub commutator: Vec<FactorPair>,
    /// Pairs `(h_i, e_i)`.
    pub defect: Vec<FactorPair>,
}

impl FrcpData {
    pub fn new(
        l: f64,
        lambda: f64,
        alpha: f64,
        beta: f64,
        commutator: Vec<FactorPair>,
        defect: Vec<FactorPair>,
    ) -> Result<Self> {
        let required = if lambda == 0.5 {
            1.0
        } else if lambda == 1.0 {
            0.0
        } else {
            return Err(Error::Validation(format!("λ must be 1/2 or 1, got {lambda}")));
        };
        if alpha + beta != required {
            return Err(Error::Validation(format!(
                "α + β = {} but λ = {lambda} requires {required}",
                alpha + beta
            )));
        }
        if commutator.len() != defect.len() {
            return Err(Error::Validation("factor lists must have equal length N".into()));
        }
        Ok(Self {
            l,
            lambda,
            alpha,
            beta,
            commutator,
            defect,
        })
    }

    /// N.
    pub fn rank_bound(&self) -> usize {
        self.commutator.len()
    }

    pub fn commutator_kernel(&self, x: f64, y: f64) -> f64 {
        self.commutator.iter().map(|p| p.kernel(x, y)).sum()
    }

    pub fn defect_kernel(&self, x: f64, y: f64) -> f64 {
        self.defect.iter().map(|p| p.kernel(x, y)).sum()
    }
}

fn check_scale(l: f64) -> Result<()> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Validation(format!("L must be positive, got {l}")));
    }
    Ok(())
}

/// Sine₄: N = 2, (α, β) = (1, 0).
pub fn sine4_frcp(l: f64) -> Result<FrcpData> {
    check_scale(l)?;
    let commutator = vec![
        FactorPair::new(move |x| sine_integral_is(l - x), move |y| sine_integral_is(l - y)),
        FactorPair::new(move |x| -sine_integral_is(l + x), move |y| sine_integral_is(l + y)),
    ];
    let defect = vec![
        FactorPair::new(move |x| -sinc_s(l - x), move |y| sine_integral_is(l - y)),
        FactorPair::new(move |x| -sinc_s(l + x), move |y| sine_integral_is(l + y)),
    ];
    FrcpData::new(l, 0.5, 1.0, 0.0, commutator, defect)
}

/// Sine₁: N = 4, (α, β) = (1, −1).
pub fn sine1_frcp(l: f64) -> Result<FrcpData> {
    check_scale(l)?;
    let odd_part = move |x: f64| 0.5 * (sine_integral_is(l + x) - sine_integral_is(l - x));
    let commutator = vec![
        FactorPair::new(move |x| sine_integral_is(l - x), move |y| sine_integral_is(l - y)),
        FactorPair::new(move |x| -sine_integral_is(l + x), move |y| sine_integral_is(l + y)),
        FactorPair::new(odd_part, |_| 1.0),
        FactorPair::new(|_| 1.0, odd_part),
    ];
    let defect = vec![
        FactorPair::new(move |x| -sinc_s(l - x), move |y| sine_integral_is(l - y)),
        FactorPair::new(move |x| -sinc_s(l + x), move |y| sine_integral_is(l + y)),
        FactorPair::new(move |x| 0.5 * (sinc_s(l - x) + sinc_s(l + x)), |_| 1.0),
        FactorPair::new(|_| 0.0, |_| 0.0),
    ];
    FrcpData::new(l, 1.0, 1.0, -1.0, commutator, defect)
}

pub fn frcp_data(kernel: &MatrixKernel, l: f64) -> Result<FrcpData> {
    match kernel.kind {
        KernelKind::Sine4 => sine4_frcp(l),
        KernelKind::Sine1 => sine1_frcp(l),
    }
}

/// Discretized `A†B − BA`.
pub fn discrete_commutator(ops: &KernelOperators) -> Result<DiscreteOperator> {
    ops.a_dag.product(&ops.b)?.sub(&ops.b.product(&ops.a)?)
}

/// Discretized `DB − (αA² + βA)`.
pub fn discrete_defect(ops: &KernelOperators, alpha: f64, beta: f64) -> Result<DiscreteOperator> {
    let a2 = ops.a.product(&ops.a)?;
    let poly = a2.scale(alpha).add(&ops.a.scale(beta))?;
    ops.d.product(&ops.b)?.sub(&poly)
}

/// Closed-form `Σ left ⊗ right` on a grid.
pub fn factor_operator(pairs: &[FactorPair], grid: &Arc<Grid>) -> Result<DiscreteOperator> {
    let sampled: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|p| (grid.sample(&*p.left), grid.sample(&*p.right)))
        .collect();
    DiscreteOperator::from_outer_products(grid, &sampled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    pub declared_rank: usize,
    /// σ_{r+1}/σ₁, or 0 when fewer than r+1 singular values exist or the operator is zero.
    pub ratio: f64,
    /// Number of singular values above `RANK_RATIO_TOL·σ₁`.
    pub numerical_rank: usize,
    /// Max-abs kernel difference against a closed form, when one was supplied.
    pub residual: Option<f64>,
    pub passed: bool,
}

pub fn rank_check(op: &DiscreteOperator, declared_rank: usize) -> Result<RankReport> {
    let sv = op.singular_values()?;
    let s1 = sv.first().copied().unwrap_or(0.0);
    let (ratio, numerical_rank, passed) = if s1 <= ZERO_OPERATOR_TOL {
        (0.0, 0, true)
    } else {
        let ratio = sv.get(declared_rank).map_or(0.0, |s| s / s1);
        let rank = sv.iter().take_while(|&&s| s / s1 > RANK_RATIO_TOL).count();
        (ratio, rank, declared_rank > 0 && ratio <= RANK_RATIO_TOL)
    };
    Ok(RankReport {
        singular_values: sv,
        declared_rank,
        ratio,
        numerical_rank,
        residual: None,
        passed,
    })
}

/// Rank and closed-form checks of both identities at one scale.
#[derive(Debug, Clone)]
pub struct FrcpVerification {
    pub kind: KernelKind,
    pub l: f64,
    pub nodes: usize,
    pub commutator: RankReport,
    pub defect: RankReport,
}

impl FrcpVerification {
    pub fn max_residual(&self) -> f64 {
        let c = self.commutator.residual.unwrap_or(f64::NAN);
        let d = self.defect.residual.unwrap_or(f64::NAN);
        c.max(d)
    }
}

/// Discretizes both identities on `(−L, L)` with `n_nodes` Gauss–Legendre nodes.
pub fn verify_frcp(kernel: &MatrixKernel, l: f64, n_nodes: usize) -> Result<FrcpVerification> {
    let data = frcp_data(kernel, l)?;
    let grid = Arc::new(Grid::new((-l, l), n_nodes, crate::discretize::Scheme::GaussLegendre)?);
    let ops = KernelOperators::assemble(kernel, &grid);
    verify_on(kernel.kind, &ops, &data)
}

pub fn verify_on(kind: KernelKind, ops: &KernelOperators, data: &FrcpData) -> Result<FrcpVerification> {
    let comm = discrete_commutator(ops)?;
    let defect = discrete_defect(ops, data.alpha, data.beta)?;
    let comm_closed = factor_operator(&data.commutator, &ops.grid)?;
    let defect_closed = factor_operator(&data.defect, &ops.grid)?;
    let n = data.rank_bound();
    let mut c = rank_check(&comm, n)?;
    c.residual = Some(comm.max_abs_kernel_diff(&comm_closed)?);
    let mut d = rank_check(&defect, n)?;
    d.residual = Some(defect.max_abs_kernel_diff(&defect_closed)?);
    Ok(FrcpVerification {
        kind,
        l: data.l,
        nodes: ops.grid.len(),
        commutator: c,
        defect: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerProductFamily {
    /// ⟨D A†ᵐ f_i, Aⁿ g_j⟩
    DfG,
    /// ⟨D A†ᵐ f_i, Aⁿ e_j⟩
    DfE,
    /// ⟨h_i, Aⁿ g_j⟩
    HG,
    /// ⟨h_i, Aⁿ e_j⟩
    HE,
}

impl InnerProductFamily {
    pub const ALL: [InnerProductFamily; 4] = [Self::DfG, Self::DfE, Self::HG, Self::HE];

    pub fn label(&self) -> &'static str {
        match self {
            Self::DfG => "<D A'^m f_i, A^n g_j>",
            Self::DfE => "<D A'^m f_i, A^n e_j>",
            Self::HG => "<h_i, A^n g_j>",
            Self::HE => "<h_i, A^n e_j>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerProduct {
    pub family: InnerProductFamily,
    pub m: usize,
    pub n: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ConditionTable {
    pub l: f64,
    pub entries: Vec<InnerProduct>,
}

impl ConditionTable {
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.value.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_family(&self, family: InnerProductFamily) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.family == family)
            .map(|e| e.value.abs())
            .fold(0.0, f64::max)
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `[v, Mv, M²v, …, Mᵏv]` in symmetrized coordinates.
fn krylov(op: &DiscreteOperator, v: Vec<f64>, k: usize) -> Vec<Vec<f64>> {
    let mut out = vec![v];
    for _ in 0..k {
        let next = op.apply(out.last().unwrap());
        out.push(next);
    }
    out
}

/// All four families for `0 ≤ m ≤ m_max`, `0 ≤ n ≤ n_max`, `1 ≤ i, j ≤ N`
/// on already assembled operators.
pub fn condition_iv_table(
    ops: &KernelOperators,
    data: &FrcpData,
    m_max: usize,
    n_max: usize,
) -> Result<ConditionTable> {
    if m_max > 3 || n_max > 3 {
        return Err(Error::Validation("m_max and n_max are capped at 3".into()));
    }
    let grid = &ops.grid;
    let sample = |f: &ScalarFn| grid.sample(&**f);
    // D A†ᵐ f_i
    let left: Vec<Vec<Vec<f64>>> = data
        .commutator
        .iter()
        .map(|p| {
            krylov(&ops.a_dag, sample(&p.left), m_max)
                .iter()
                .map(|v| ops.d.apply(v))
                .collect()
        })
        .collect();
    let a_g: Vec<Vec<Vec<f64>>> = data
        .commutator
        .iter()
        .map(|p| krylov(&ops.a, sample(&p.right), n_max))
        .collect();
    let a_e: Vec<Vec<Vec<f64>>> = data
        .defect
        .iter()
        .map(|p| krylov(&ops.a, sample(&p.right), n_max))
        .collect();
    let h: Vec<Vec<f64>> = data.defect.iter().map(|p| sample(&p.left)).collect();

    let big_n = data.rank_bound();
    let mut entries = Vec::new();
    for i in 0..big_n {
        for j in 0..big_n {
            for n in 0..=n_max {
                for m in 0..=m_max {
                    entries.push(InnerProduct {
                        family: InnerProductFamily::DfG,
                        m,
                        n,
                        i: i + 1,
                        j: j + 1,
                        value: dot(&left[i][m], &a_g[j][n]),
                    });
                    entries.push(InnerProduct {
                        family: InnerProductFamily::DfE,
                        m,
                        n,
                        i: i + 1,
                        j: j + 1,
                        value: dot(&left[i][m], &a_e[j][n]),
                    });
                }
                entries.push(InnerProduct {
                    family: InnerProductFamily::HG,
                    m: 0,
                    n,
                    i: i + 1,
                    j: j + 1,
                    value: dot(&h[i], &a_g[j][n]),
                });
                entries.push(InnerProduct {
                    family: InnerProductFamily::HE,
                    m: 0,
                    n,
                    i: i + 1,
                    j: j + 1,
                    value: dot(&h[i], &a_e[j][n]),
                });
            }
        }
    }
    Ok(ConditionTable { l: data.l, entries })
}

/// Condition tables across scales, each on its own `(−L, L)` grid.
pub fn condition_iv_scan(
    kernel: &MatrixKernel,
    ls: &[f64],
    m_max: usize,
    n_max: usize,
    density: f64,
) -> Result<Vec<ConditionTable>> {
    use rayon::prelude::*;
    ls.par_iter()
        .map(|&l| {
            let ops = KernelOperators::on_window(kernel, l, density)?;
            let data = frcp_data(kernel, l)?;
            condition_iv_table(&ops, &data, m_max, n_max)
        })
        .collect()
}

/// Factors of `Aχ_iB − Bχ_iA` and `Dχ_iB − Aχ_iA` for one scaled piece `(a, b)` (Sine₄).
pub fn step_piece_frcp(kernel: &MatrixKernel, a: f64, b: f64) -> Result<(Vec<FactorPair>, Vec<FactorPair>)> {
    if kernel.kind != KernelKind::Sine4 {
        return Err(Error::Unsupported(format!(
            "per-piece commutators of {} are not finite rank",
            kernel.kind
        )));
    }
    let commutator = vec![
        FactorPair::new(move |x| sine_integral_is(x - b), move |y| sine_integral_is(y - b)),
        FactorPair::new(move |x| -sine_integral_is(x - a), move |y| sine_integral_is(y - a)),
    ];
    let defect = vec![
        FactorPair::new(move |x| sinc_s(x - b), move |y| sine_integral_is(y - b)),
        FactorPair::new(move |x| -sinc_s(x - a), move |y| sine_integral_is(y - a)),
    ];
    Ok((commutator, defect))
}

/// Grid on the hull of the scaled support, with panel edges at every breakpoint.
pub fn step_grid(step: &StepFunction, density: f64) -> Result<Arc<Grid>> {
    let mut cuts = step.breakpoints();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let segments: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    Ok(Arc::new(Grid::on_segments(&segments, density)?))
}

/// Residuals of the per-piece identities on a scaled step function.
pub fn verify_step_frcp(kernel: &MatrixKernel, step_l: &StepFunction, density: f64) -> Result<Vec<f64>> {
    let grid = step_grid(step_l, density)?;
    let ops = KernelOperators::assemble(kernel, &grid);
    let mut out = Vec::new();
    for &(_, a, b) in step_l.pieces() {
        let (comm, defect) = step_piece_frcp(kernel, a, b)?;
        let chi = chi_projection((a, b), &grid);
        let lhs_c = ops.a.product(&chi)?.product(&ops.b)?.sub(&ops.b.product(&chi)?.product(&ops.a)?)?;
        let lhs_d = ops.d.product(&chi)?.product(&ops.b)?.sub(&ops.a.product(&chi)?.product(&ops.a)?)?;
        out.push(lhs_c.max_abs_kernel_diff(&factor_operator(&comm, &grid)?)?);
        out.push(lhs_d.max_abs_kernel_diff(&factor_operator(&defect, &grid)?)?);
    }
    Ok(out)
}

/// Sandwiched inner products for one scaled step function.
#[derive(Debug, Clone)]
pub struct StepConditionTable {
    pub l: f64,
    /// Max-abs per family over all index words considered.
    pub family_max: [(InnerProductFamily, f64); 4],
    pub evaluated: usize,
}

impl StepConditionTable {
    pub fn max_abs(&self) -> f64 {
        self.family_max.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

fn words(pieces: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|w| {
                (0..pieces).map(move |p| {
                    let mut v = w.clone();
                    v.push(p);
                    v
                })
            })
            .collect();
    }
    out
}

/// Inner products with projection insertions, over all left words of
/// length 2..=3 and right words of length 1..=3.
pub fn condition_scan_step(
    kernel: &MatrixKernel,
    step: &StepFunction,
    ls: &[f64],
    density: f64,
) -> Result<Vec<StepConditionTable>> {
    use rayon::prelude::*;
    let n_pieces = step.pieces().len();
    if n_pieces > 4 {
        return Err(Error::Validation("at most 4 pieces are scanned".into()));
    }
    ls.par_iter()
        .map(|&l| {
            let step_l = step.scaled(l)?;
            let grid = step_grid(&step_l, density)?;
            let ops = KernelOperators::assemble(kernel, &grid);
            let chis: Vec<DiscreteOperator> =
                step_l.pieces().iter().map(|&(_, a, b)| chi_projection((a, b), &grid)).collect();
            let proj = |p: usize, v: &[f64]| chis[p].apply(v);
            let mut fs = Vec::new();
            let mut gs = Vec::new();
            let mut hs = Vec::new();
            let mut es = Vec::new();
            for &(_, a, b) in step_l.pieces() {
                let (comm, defect) = step_piece_frcp(kernel, a, b)?;
                for p in &comm {
                    fs.push(grid.sample(&*p.left));
                    gs.push(grid.sample(&*p.right));
                }
                for p in &defect {
                    hs.push(grid.sample(&*p.left));
                    es.push(grid.sample(&*p.right));
                }
            }
            // χ_{i1} D χ_{i2} A† χ_{i3} ⋯ A† χ_{im} f
            let mut lefts = Vec::new();
            for m in 2..=3 {
                for w in words(n_pieces, m) {
                    for f in &fs {
                        let mut v = proj(w[m - 1], f);
                        for t in (1..m - 1).rev() {
                            v = proj(w[t], &ops.a_dag.apply(&v));
                        }
                        v = proj(w[0], &ops.d.apply(&v));
                        lefts.push(v);
                    }
                }
            }
            // χ_{j1} A χ_{j2} ⋯ A χ_{jm'} g
            let rights = |targets: &[Vec<f64>]| -> Vec<Vec<f64>> {
                let mut out = Vec::new();
                for m in 1..=3 {
                    for w in words(n_pieces, m) {
                        for g in targets {
                            let mut v = proj(w[m - 1], g);
                            for t in (0..m - 1).rev() {
                                v = proj(w[t], &ops.a.apply(&v));
                            }
                            out.push(v);
                        }
                    }
                }
                out
            };
            let rg = rights(&gs);
            let re = rights(&es);
            let hl: Vec<Vec<f64>> = (0..n_pieces)
                .flat_map(|p| hs.iter().map(move |h| (p, h)))
                .map(|(p, h)| proj(p, h))
                .collect();
            let max_over = |ls: &[Vec<f64>], rs: &[Vec<f64>]| {
                let mut m: f64 = 0.0;
                for u in ls {
                    for v in rs {
                        m = m.max(dot(u, v).abs());
                    }
                }
                m
            };
            let family_max = [
                (InnerProductFamily::DfG, max_over(&lefts, &rg)),
                (InnerProductFamily::DfE, max_over(&lefts, &re)),
                (InnerProductFamily::HG, max_over(&hl, &rg)),
                (InnerProductFamily::HE, max_over(&hl, &re)),
            ];
            let evaluated = (lefts.len() + hl.len()) * (rg.len() + re.len());
            Ok(StepConditionTable {
                l,
                family_max,
                evaluated,
            })
        })
        .collect()
}

/// ‖χ_i A χ_j A χ_i‖₁ for every ordered pair of distinct pieces of a scaled step function.
pub fn cross_trace_norms(
    kernel: &MatrixKernel,
    step_l: &StepFunction,
    density: f64,
) -> Result<Vec<((usize, usize), f64)>> {
    let grid = step_grid(step_l, density)?;
    let a = crate::discretize::discretize_kernel(|x, y| kernel.a(x, y), &grid);
    let chis: Vec<DiscreteOperator> =
        step_l.pieces().iter().map(|&(_, lo, hi)| chi_projection((lo, hi), &grid)).collect();
    let mut out = Vec::new();
    for i in 0..chis.len() {
        for j in 0..chis.len() {
            if i == j {
                continue;
            }
            let op = chis[i].product(&a)?.product(&chis[j])?.product(&a)?.product(&chis[i])?;
            out.push(((i, j), op.trace_norm()?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Scheme;
    use crate::quadrature::integrate;

    fn ops(kernel: MatrixKernel, l: f64, n: usize) -> KernelOperators {
        let grid = Arc::new(Grid::new((-l, l), n, Scheme::GaussLegendre).unwrap());
        KernelOperators::assemble(&kernel, &grid)
    }

    #[test]
    fn constraint_on_alpha_beta() {
        let d4 = sine4_frcp(3.0).unwrap();
        assert_eq!((d4.alpha + d4.beta, d4.lambda, d4.rank_bound()), (1.0, 0.5, 2));
        let d1 = sine1_frcp(3.0).unwrap();
        assert_eq!((d1.alpha + d1.beta, d1.lambda, d1.rank_bound()), (0.0, 1.0, 4));
        assert!(FrcpData::new(1.0, 1.0, 1.0, 1.0, vec![], vec![]).is_err());
        assert!(FrcpData::new(1.0, 0.5, 1.0, 0.0, vec![], vec![]).is_ok());
        assert!(sine4_frcp(0.0).is_err());
    }

    #[test]
    fn commutator_vanishes_at_origin() {
        for l in [1.0, 7.5, 40.0] {
            let d = sine4_frcp(l).unwrap();
            assert_eq!(d.commutator_kernel(0.0, 0.0), 0.0);
            let x = 0.3 * l;
            let expected = sine_integral_is(l - x).powi(2) - sine_integral_is(l + x).powi(2);
            assert!((d.commutator_kernel(x, x) - expected).abs() < 1e-15);
        }
    }

    /// Direct quadrature of ∫ k₁(x, z) k₂(z, y) dz with a break at the jump.
    fn compose(k1: impl Fn(f64, f64) -> f64, k2: impl Fn(f64, f64) -> f64, l: f64, x: f64, y: f64) -> f64 {
        let f = |z: f64| k1(x, z) * k2(z, y);
        let cut = y.clamp(-l, l);
        integrate(&f, -l, cut, 1e-12) + integrate(&f, cut, l, 1e-12)
    }

    #[test]
    fn closed_forms_match_pointwise_quadrature() {
        let l = 3.0;
        for kernel in [MatrixKernel::sine4(), MatrixKernel::sine1()] {
            let data = frcp_data(&kernel, l).unwrap();
            for (x, y) in [(0.4, -1.1), (-2.5, 2.9), (1.7, 1.2)] {
                let ab = compose(|s, t| kernel.a(s, t), |s, t| kernel.b(s, t), l, x, y);
                let ba = compose(|s, t| kernel.b(s, t), |s, t| kernel.a(s, t), l, x, y);
                assert!((ab - ba - data.commutator_kernel(x, y)).abs() < 1e-9, "{kernel:?} {x} {y}");
                let db = compose(|s, t| kernel.d(s, t), |s, t| kernel.b(s, t), l, x, y);
                let aa = compose(|s, t| kernel.a(s, t), |s, t| kernel.a(s, t), l, x, y);
                let lhs = db - data.alpha * aa - data.beta * kernel.a(x, y);
                assert!((lhs - data.defect_kernel(x, y)).abs() < 1e-9, "{kernel:?} {x} {y}");
            }
        }
    }

    #[test]
    fn discrete_identities_have_declared_rank() {
        for kernel in [MatrixKernel::sine4(), MatrixKernel::sine1()] {
            let v = verify_frcp(&kernel, 10.0, 512).unwrap();
            assert!(v.commutator.passed, "{:?}", &v.commutator.singular_values[..6]);
            assert!(v.defect.passed, "{:?}", &v.defect.singular_values[..6]);
            assert!(v.max_residual() < 1e-5, "{kernel:?} {}", v.max_residual());
        }
    }

    #[test]
    fn residuals_shrink_under_refinement() {
        let kernel = MatrixKernel::sine1();
        let coarse = verify_frcp(&kernel, 10.0, 96).unwrap().max_residual();
        let fine = verify_frcp(&kernel, 10.0, 192).unwrap().max_residual();
        assert!(fine * 1.5 <= coarse, "{coarse} {fine}");
    }

    #[test]
    fn rank_check_cases() {
        let grid = Arc::new(Grid::new((0.0, 1.0), 64, Scheme::GaussLegendre).unwrap());
        let u = grid.sample(|x| x);
        let v = grid.sample(|x| 1.0 - x * x);
        let op = DiscreteOperator::from_outer_products(&grid, &[(u, v)]).unwrap();
        assert!(rank_check(&op, 1).unwrap().passed);
        assert!(!rank_check(&op, 0).unwrap().passed);
        let zero = rank_check(&DiscreteOperator::zero(&grid), 0).unwrap();
        assert!(zero.passed && zero.numerical_rank == 0);
    }

    #[test]
    fn odd_integrand_vanishes() {
        // ⟨D χ, χ⟩ = ∫∫ S′(x − y) = 0
        let o = ops(MatrixKernel::sine4(), 12.0, 256);
        let chi = o.grid.sample(|_| 1.0);
        assert!(dot(&o.d.apply(&chi), &chi).abs() < 1e-10);
    }

    #[test]
    fn condition_table_shape_and_negative_control() {
        let l = 8.0;
        let o = ops(MatrixKernel::sine4(), l, 256);
        let data = sine4_frcp(l).unwrap();
        let t = condition_iv_table(&o, &data, 2, 3).unwrap();
        // N² pairs × (2·(m+1)(n+1) + 2·(n+1))
        assert_eq!(t.entries.len(), 4 * (2 * 3 * 4 + 2 * 4));
        assert!(t.max_abs() < 5.0);
        // D = identity, f = g = χ: ⟨χ, χ⟩ = 2L
        let surrogate = KernelOperators {
            d: DiscreteOperator::identity(&o.grid),
            ..o.clone()
        };
        let chi = FrcpData::new(
            l,
            0.5,
            1.0,
            0.0,
            vec![FactorPair::new(|_| 1.0, |_| 1.0)],
            vec![FactorPair::new(|_| 0.0, |_| 0.0)],
        )
        .unwrap();
        let t = condition_iv_table(&surrogate, &chi, 0, 0).unwrap();
        let v = t.entries.iter().find(|e| e.family == InnerProductFamily::DfG).unwrap().value;
        assert!((v - 2.0 * l).abs() < 1e-10);
        assert!(condition_iv_table(&o, &data, 4, 0).is_err());
    }

    #[test]
    fn step_identities() {
        let step = StepFunction::new(vec![(1.0, 0.0, 1.0), (-1.0, 1.0, 2.0)]).unwrap().scaled(5.0).unwrap();
        let res = verify_step_frcp(&MatrixKernel::sine4(), &step, 24.0).unwrap();
        assert_eq!(res.len(), 4);
        assert!(res.iter().all(|&r| r < 1e-6), "{res:?}");
        assert!(matches!(
            verify_step_frcp(&MatrixKernel::sine1(), &step, 24.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn single_piece_reduces_to_count_factors() {
        let l = 6.0;
        let kernel = MatrixKernel::sine4();
        let whole = StepFunction::indicator(-1.0, 1.0).unwrap();
        let (comm, defect) = step_piece_frcp(&kernel, -l, l).unwrap();
        let data = sine4_frcp(l).unwrap();
        for (x, y) in [(0.3, -2.0), (5.5, 1.0)] {
            let c: f64 = comm.iter().map(|p| p.kernel(x, y)).sum();
            let d: f64 = defect.iter().map(|p| p.kernel(x, y)).sum();
            assert!((c - data.commutator_kernel(x, y)).abs() < 1e-14);
            assert!((d - data.defect_kernel(x, y)).abs() < 1e-14);
        }
        let step_t = &condition_scan_step(&kernel, &whole, &[l], 16.0).unwrap()[0];
        let o = KernelOperators::assemble(&kernel, &step_grid(&whole.scaled(l).unwrap(), 16.0).unwrap());
        let count_t = condition_iv_table(&o, &data, 1, 2).unwrap();
        for fam in InnerProductFamily::ALL {
            let s = step_t.family_max.iter().find(|p| p.0 == fam).unwrap().1;
            let c = count_t.max_abs_family(fam);
            assert!((s - c).abs() < 1e-10 * c.max(1.0), "{fam:?} {s} {c}");
        }
    }

    #[test]
    fn cross_norm_matches_double_integral() {
        let kernel = MatrixKernel::sine4();
        let step = StepFunction::new(vec![(1.0, 0.0, 1.0), (1.0, 2.0, 3.0)]).unwrap().scaled(3.0).unwrap();
        let norms = cross_trace_norms(&kernel, &step, 24.0).unwrap();
        assert_eq!(norms.len(), 2);
        let inner = |x: f64| integrate(|y: f64| sinc_s(x - y).powi(2), 6.0, 9.0, 1e-13);
        let oracle = integrate(inner, 0.0, 3.0, 1e-12);
        for (_, v) in norms {
            assert!((v - oracle).abs() < 1e-8 * oracle, "{v} {oracle}");
        }
    }
}

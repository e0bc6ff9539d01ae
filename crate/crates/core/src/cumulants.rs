//! Cumulants of counting and step-function statistics.
//!
//! For the count `#_X`, the cumulants are combinations of
//! `V_k = ½ Tr(𝒦ᵏ)`:
//!
//! ```text
//! c_n = Σ_{k=1}^{n} (−1)^{k−1} (k−1)! v(n,k) V_k
//!     = Σ_{k=2}^{n} (−1)^{k−1} (k−1)! v(n−1,k−1) (V_k − V_{k−1})      (n ≥ 2)
//! ```
//!
//! with `v(n,k)` the Stirling numbers of the second kind. For a step function
//! `f` the same sum runs over compositions `l₁+…+l_k = n` of traces of
//! `F^{l₁}𝒦 ⋯ F^{l_k}𝒦`.

use crate::discretize::{DiscreteOperator, Grid, KernelOperators, StepFunction, MAX_POWER};
use crate::error::{Error, Result};
use crate::frcp::{frcp_data, FrcpData};
use crate::kernels::MatrixKernel;
use crate::quadrature::integrate_split;
use faer::Mat;
use std::sync::Arc;

pub const MAX_STIRLING: usize = 30;
pub const MAX_COUNT_ORDER: usize = 8;
pub const MAX_LINEAR_ORDER: usize = 6;
pub const DEFAULT_ORDER: usize = 5;
/// Agreement required between the two forms of the count cumulant.
pub const TWO_FORM_TOL: f64 = 1e-8;
/// Absolute tolerance of the one-dimensional variance integral.
const VARIANCE_ABS_TOL: f64 = 1e-11;

/// v(n, k), exact.
pub fn stirling_v(n: usize, k: usize) -> Result<u128> {
    if n > MAX_STIRLING || k > n {
        return Err(Error::Validation(format!(
            "v(n, k) needs 0 ≤ k ≤ n ≤ {MAX_STIRLING}, got ({n}, {k})"
        )));
    }
    if n == 0 || k == 0 {
        return Ok(0);
    }
    let mut row = vec![0u128; n + 1];
    row[1] = 1;
    for m in 2..=n {
        for j in (1..=m.min(n)).rev() {
            let stay = (j as u128)
                .checked_mul(row[j])
                .and_then(|v| v.checked_add(row[j - 1]))
                .ok_or_else(|| Error::Numerical(format!("v({m}, {j}) overflows")))?;
            row[j] = stay;
        }
    }
    Ok(row[k])
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// V_k = ½ Tr(𝒦ᵏ) for k = 1..=k_max on assembled operators.
pub fn v_k_from_operators(ops: &KernelOperators, k_max: usize) -> Result<Vec<f64>> {
    let traces = ops.block()?.power_traces(k_max)?;
    Ok(traces.into_iter().map(|t| 0.5 * t).collect())
}

/// V_k on `(−L, L)` at `density` nodes per unit length.
pub fn v_k_traces(kernel: &MatrixKernel, l: f64, density: f64, k_max: usize) -> Result<Vec<f64>> {
    if k_max == 0 || k_max > MAX_POWER {
        return Err(Error::Validation(format!("k_max must be in 1..={MAX_POWER}, got {k_max}")));
    }
    let ops = KernelOperators::on_window(kernel, l, density)?;
    v_k_from_operators(&ops, k_max)
}

/// Both forms of the count cumulants from V_1..V_n.
///
/// The forms differ only in the order of floating-point operations, so the
/// comparison allows for the rounding of the largest partial term as well as
/// the relative tolerance.
pub fn cumulants_from_v(v: &[f64]) -> Result<Vec<f64>> {
    let n_max = v.len();
    if n_max == 0 || n_max > MAX_COUNT_ORDER {
        return Err(Error::Validation(format!("n_max must be in 1..={MAX_COUNT_ORDER}")));
    }
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut direct = 0.0;
        let mut scale: f64 = 0.0;
        for k in 1..=n {
            let w = sign(k) * factorial(k - 1) * stirling_v(n, k)? as f64;
            direct += w * v[k - 1];
            scale = scale.max((w * v[k - 1]).abs());
        }
        if n >= 2 {
            let mut tele = 0.0;
            for k in 2..=n {
                let w = sign(k) * factorial(k - 1) * stirling_v(n - 1, k - 1)? as f64;
                tele += w * (v[k - 1] - v[k - 2]);
                scale = scale.max((w * v[k - 1]).abs());
            }
            let tol = TWO_FORM_TOL * direct.abs() + 64.0 * f64::EPSILON * scale;
            if (direct - tele).abs() > tol {
                return Err(Error::Consistency(format!(
                    "c_{n}: direct {direct} and telescoped {tele} forms disagree"
                )));
            }
        }
        out.push(direct);
    }
    Ok(out)
}

fn sign(k: usize) -> f64 {
    if k % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CumulantReport {
    pub l: f64,
    pub expectation: f64,
    pub variance: f64,
    pub v_k: Vec<f64>,
    pub c_n: Vec<f64>,
    /// c_n / variance^{n/2}.
    pub normalized: Vec<f64>,
}

impl CumulantReport {
    fn new(l: f64, expectation: f64, variance: f64, v_k: Vec<f64>, c_n: Vec<f64>) -> Self {
        let normalized = c_n
            .iter()
            .enumerate()
            .map(|(i, c)| c / variance.powf(0.5 * (i + 1) as f64))
            .collect();
        Self {
            l,
            expectation,
            variance,
            v_k,
            c_n,
            normalized,
        }
    }

    /// |c₁ − E| / |E|.
    pub fn mean_mismatch(&self) -> f64 {
        (self.c_n[0] - self.expectation).abs() / self.expectation.abs()
    }

    /// |c₂ − Var| / Var, when c₂ was computed.
    pub fn variance_mismatch(&self) -> Option<f64> {
        self.c_n.get(1).map(|c| (c - self.variance).abs() / self.variance.abs())
    }
}

/// Count cumulants on `(−L, L)`; expectation and variance come from the
/// independent one-dimensional integrals.
pub fn cumulant_counts(kernel: &MatrixKernel, l: f64, density: f64, n_max: usize) -> Result<CumulantReport> {
    let v = v_k_traces(kernel, l, density, n_max)?;
    let c = cumulants_from_v(&v)?;
    let (e, var) = expectation_variance(kernel, &StepFunction::indicator(-1.0, 1.0)?, l)?;
    Ok(CumulantReport::new(l, e, var, v, c))
}

/// ∫ g(u)·|I ∩ (J + u)| du over the u for which the overlap is non-empty.
pub fn overlap_integral(g: impl Fn(f64) -> f64, (a1, b1): (f64, f64), (a2, b2): (f64, f64)) -> f64 {
    let lo = a1 - b2;
    let hi = b1 - a2;
    let overlap = |u: f64| (b1.min(b2 + u) - a1.max(a2 + u)).max(0.0);
    let breaks = [a1 - a2, b1 - b2, 0.0];
    integrate_split(|u| g(u) * overlap(u), lo, hi, &breaks, 1.0, VARIANCE_ABS_TOL)
}

/// E and Var of `Σ f(x_i / L)`.
///
/// `Var = ∫ f_L² λ − ∫∫ f_L(x) f_L(y) det K(x, y)`; since `det K` depends on
/// `x − y` only, each pair of pieces reduces to a one-dimensional integral.
pub fn expectation_variance(kernel: &MatrixKernel, f: &StepFunction, l: f64) -> Result<(f64, f64)> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Validation(format!("L must be positive, got {l}")));
    }
    let f_l = f.scaled(l)?;
    let rho = kernel.intensity();
    let pieces = f_l.pieces();
    let e = rho * pieces.iter().map(|&(c, a, b)| c * (b - a)).sum::<f64>();
    let diag = rho * pieces.iter().map(|&(c, a, b)| c * c * (b - a)).sum::<f64>();
    let g = |u: f64| kernel.det(u, 0.0);
    let mut two_point = 0.0;
    for (i, &(ci, ai, bi)) in pieces.iter().enumerate() {
        for &(cj, aj, bj) in &pieces[i..] {
            let factor = if (ai, bi) == (aj, bj) { 1.0 } else { 2.0 };
            two_point += factor * ci * cj * overlap_integral(g, (ai, bi), (aj, bj));
        }
    }
    Ok((e, diag - two_point))
}

/// Composition weight ½(−1)^{k−1} n!/(l₁!⋯l_k!)/k.
fn composition_weight(parts: &[usize]) -> f64 {
    let n: usize = parts.iter().sum();
    let k = parts.len();
    let multinomial = factorial(n) / parts.iter().map(|&l| factorial(l)).product::<f64>();
    0.5 * sign(k) * multinomial / k as f64
}

/// Grid on the scaled support with panel edges at every breakpoint.
fn support_grid(f_l: &StepFunction, density: f64) -> Result<Arc<Grid>> {
    let breaks = f_l.breakpoints();
    let mut segments = Vec::new();
    for (a, b) in f_l.support() {
        let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b).collect();
        cuts.insert(0, a);
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        segments.extend(cuts.windows(2).map(|w| (w[0], w[1])));
    }
    Ok(Arc::new(Grid::on_segments(&segments, density)?))
}

/// Cumulants of `Σ f(x_i / L)` through the composition sum.
pub fn cumulant_linear_stat(
    kernel: &MatrixKernel,
    f: &StepFunction,
    l: f64,
    density: f64,
    n_max: usize,
) -> Result<CumulantReport> {
    if n_max == 0 || n_max > MAX_LINEAR_ORDER {
        return Err(Error::Validation(format!(
            "n_max must be in 1..={MAX_LINEAR_ORDER}, got {n_max}"
        )));
    }
    let f_l = f.scaled(l)?;
    let grid = support_grid(&f_l, density)?;
    let ops = KernelOperators::assemble(kernel, &grid);
    let m = ops.block()?.matrix().clone();
    let fx: Vec<f64> = grid.nodes().iter().map(|&x| f_l.eval(x)).collect();
    let dim = grid.len();
    // G_l = F^l 𝒦
    let g: Vec<Mat<f64>> = (0..=n_max)
        .map(|p| {
            let scale: Vec<f64> = fx.iter().map(|v| v.powi(p as i32)).collect();
            Mat::from_fn(2 * dim, 2 * dim, |i, j| scale[i % dim] * m[(i, j)])
        })
        .collect();
    let mut c = vec![0.0; n_max];
    let mut parts = Vec::new();
    compositions(&g, None, 0, n_max, &mut parts, &mut c);
    let (e, var) = expectation_variance(kernel, f, l)?;
    Ok(CumulantReport::new(l, e, var, Vec::new(), c))
}

/// Depth-first over prefixes; `prefix` is the product of the G's chosen so far.
fn compositions(
    g: &[Mat<f64>],
    prefix: Option<&Mat<f64>>,
    sum: usize,
    n_max: usize,
    parts: &mut Vec<usize>,
    c: &mut [f64],
) {
    for last in 1..=(n_max - sum) {
        parts.push(last);
        let tr = match prefix {
            None => (0..g[last].nrows()).map(|i| g[last][(i, i)]).sum(),
            Some(p) => crate::discretize::trace_of_product(p, &g[last]),
        };
        c[sum + last - 1] += composition_weight(parts) * tr;
        parts.pop();
    }
    for next in 1..(n_max - sum) {
        parts.push(next);
        let prod = match prefix {
            None => g[next].clone(),
            Some(p) => p * &g[next],
        };
        compositions(g, Some(&prod), sum + next, n_max, parts, c);
        parts.pop();
    }
}

/// c_n / Var^{n/2} for n = 3..=n_max.
pub fn clt_diagnostic(report: &CumulantReport) -> Result<Vec<(usize, f64)>> {
    if !(report.variance > 0.0) {
        return Err(Error::Validation(format!(
            "variance must be positive, got {}",
            report.variance
        )));
    }
    Ok(report
        .c_n
        .iter()
        .enumerate()
        .skip(2)
        .map(|(i, c)| (i + 1, c / report.variance.powf(0.5 * (i + 1) as f64)))
        .collect())
}

/// Coefficient of `log L` in `Var(Σ φ(x_i/L))`: `base·[Σλ_i² − Σ_{b_i = a_j} λ_iλ_j]`
/// with base `1/(2π²)` for Sine₄ and `2/π²` for Sine₁.
pub fn variance_log_coefficient(kernel: &MatrixKernel, f: &StepFunction) -> f64 {
    let base = match kernel.kind {
        crate::kernels::KernelKind::Sine4 => 0.5,
        crate::kernels::KernelKind::Sine1 => 2.0,
    } / (std::f64::consts::PI * std::f64::consts::PI);
    let p = f.pieces();
    let squares: f64 = p.iter().map(|&(c, _, _)| c * c).sum();
    let touching: f64 = p.windows(2).filter(|w| w[0].2 == w[1].1).map(|w| w[0].0 * w[1].0).sum();
    base * (squares - touching)
}

/// Least-squares slope of `values` against `ln L`.
pub fn log_slope(ls: &[f64], values: &[f64]) -> Result<f64> {
    if ls.len() != values.len() || ls.len() < 2 {
        return Err(Error::Validation("slope fit needs at least two (L, value) pairs".into()));
    }
    if ls.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Validation("slope fit needs positive L".into()));
    }
    let x: Vec<f64> = ls.iter().map(|l| l.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = values.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation("slope fit needs distinct L".into()));
    }
    let sxy: f64 = x.iter().zip(values).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// `‖A_L − A_L²‖₁` set against the count variance across L.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectGrowth {
    pub ls: Vec<f64>,
    pub trace_norms: Vec<f64>,
    pub variances: Vec<f64>,
    /// Slope of the trace norm against `ln L`.
    pub log_slope: f64,
    /// Fitted `p` in `‖A_L − A_L²‖₁ ∝ Var^p`.
    pub exponent: f64,
}

/// `A − A²` is a function of the symmetric `A`, so its trace norm is
/// `Σ |μ − μ²|` over the eigenvalues of `A`.
pub fn projection_defect(ops: &KernelOperators) -> Result<f64> {
    let ev = ops.a.symmetric_eigenvalues()?;
    Ok(ev.iter().map(|m| (m - m * m).abs()).sum())
}

pub fn projection_defect_growth(kernel: &MatrixKernel, ls: &[f64], density: f64) -> Result<DefectGrowth> {
    let count = StepFunction::indicator(-1.0, 1.0)?;
    let mut trace_norms = Vec::with_capacity(ls.len());
    let mut variances = Vec::with_capacity(ls.len());
    for &l in ls {
        trace_norms.push(projection_defect(&KernelOperators::on_window(kernel, l, density)?)?);
        variances.push(expectation_variance(kernel, &count, l)?.1);
    }
    let log_slope_norm = log_slope(ls, &trace_norms)?;
    if variances.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numerical("variance must be positive for the exponent fit".into()));
    }
    let log_norms: Vec<f64> = trace_norms.iter().map(|t| t.ln()).collect();
    let exponent = log_slope(&variances, &log_norms)?;
    Ok(DefectGrowth {
        ls: ls.to_vec(),
        trace_norms,
        variances,
        log_slope: log_slope_norm,
        exponent,
    })
}

/// Left and right sides of the decomposition of `½Tr(𝒦ᵏ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDecomposition {
    pub k: usize,
    pub lhs: f64,
    /// λ Tr(Aᵏ).
    pub leading: f64,
    /// Tr((A − A²) p_k(A)).
    pub polynomial: f64,
    /// Sum of the traces that contain at least one rank-one factor.
    pub rank_terms: f64,
    pub residual: f64,
}

impl TraceDecomposition {
    pub fn rhs(&self) -> f64 {
        self.leading + self.polynomial + self.rank_terms
    }
}

/// Coefficients (ascending) of `P(t) = λᵏ Σ_m C(k,2m) t^{k−2m} (αt² + βt)^m`.
fn pure_polynomial(k: usize, lambda: f64, alpha: f64, beta: f64) -> Vec<f64> {
    let mut p = vec![0.0; k + 1];
    for m in 0..=k / 2 {
        let binom = factorial(k) / (factorial(2 * m) * factorial(k - 2 * m));
        // t^{k−2m} · t^m · (αt + β)^m
        for j in 0..=m {
            let c = factorial(m) / (factorial(j) * factorial(m - j));
            let coef = c * alpha.powi(j as i32) * beta.powi((m - j) as i32);
            p[k - 2 * m + m + j] += lambda.powi(k as i32) * binom * coef;
        }
    }
    p
}

/// `p_k` with `P(t) − λtᵏ = (t − t²) p_k(t)`.
pub fn correction_polynomial(k: usize, lambda: f64, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    let mut q = pure_polynomial(k, lambda, alpha, beta);
    q[k] -= lambda;
    if q[0].abs() > 1e-14 {
        return Err(Error::Consistency(format!("P(0) − 0 = {} ≠ 0", q[0])));
    }
    // divide by t, then by (1 − t)
    let q: Vec<f64> = q[1..].to_vec();
    let deg = q.len() - 1;
    let mut r = vec![0.0; deg];
    let mut carry = 0.0;
    for i in 0..deg {
        carry += q[i];
        r[i] = carry;
    }
    let remainder = carry + q[deg];
    if remainder.abs() > 1e-12 {
        return Err(Error::Consistency(format!(
            "(t − t²) does not divide P(t) − λtᵏ (remainder {remainder}); α + β violates the λ constraint"
        )));
    }
    Ok(r)
}

fn eval_poly(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &x| acc * t + x)
}

#[derive(Clone)]
enum Factor {
    A,
    ADag,
    D,
    /// αA² + βA
    Q,
    /// u ⊗ v, sampled
    Rank(usize),
}

struct RankVectors {
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Expands one excursion `D A†ᵐ B` into its rank-one alternatives.
fn excursion_options(m: usize, n_comm: usize, n_defect: usize) -> Vec<Vec<Factor>> {
    let mut out = Vec::new();
    // E Aᵐ
    for i in 0..n_defect {
        let mut w = vec![Factor::Rank(n_comm + i)];
        w.extend(std::iter::repeat_n(Factor::A, m));
        out.push(w);
    }
    // D A†^{m−j} C A^{j−1}
    for j in 1..=m {
        for i in 0..n_comm {
            let mut w = vec![Factor::D];
            w.extend(std::iter::repeat_n(Factor::ADag, m - j));
            w.push(Factor::Rank(i));
            w.extend(std::iter::repeat_n(Factor::A, j - 1));
            out.push(w);
        }
    }
    out
}

fn apply_factor(ops: &KernelOperators, alpha: f64, beta: f64, f: &Factor, x: &[f64]) -> Vec<f64> {
    match f {
        Factor::A => ops.a.apply(x),
        Factor::ADag => ops.a_dag.apply(x),
        Factor::D => ops.d.apply(x),
        Factor::Q => {
            let ax = ops.a.apply(x);
            let aax = ops.a.apply(&ax);
            aax.iter().zip(&ax).map(|(p, q)| alpha * p + beta * q).collect()
        }
        Factor::Rank(_) => unreachable!("rank factors are split out before application"),
    }
}

/// Tr of a cyclic product containing at least one rank-one factor.
fn cyclic_rank_trace(ops: &KernelOperators, alpha: f64, beta: f64, word: &[Factor], rv: &RankVectors) -> f64 {
    let start = word.iter().position(|f| matches!(f, Factor::Rank(_))).unwrap();
    let rotated: Vec<Factor> = word[start..].iter().chain(&word[..start]).cloned().collect();
    let ranks: Vec<usize> = rotated
        .iter()
        .enumerate()
        .filter(|(_, f)| matches!(f, Factor::Rank(_)))
        .map(|(p, _)| p)
        .collect();
    let idx = |p: usize| match rotated[p] {
        Factor::Rank(i) => i,
        _ => unreachable!(),
    };
    let mut product = 1.0;
    for (t, &p) in ranks.iter().enumerate() {
        let next = ranks.get(t + 1).copied().unwrap_or(rotated.len());
        // ⟨v_p, X u_next⟩ with X the factors strictly between
        let target = ranks.get(t + 1).map_or(idx(ranks[0]), |&q| idx(q));
        let mut x = rv.u[target].clone();
        for f in rotated[p + 1..next].iter().rev() {
            x = apply_factor(ops, alpha, beta, f, &x);
        }
        product *= rv.v[idx(p)].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    }
    product
}

/// Decomposition of `½Tr(𝒦ᵏ)` on assembled operators with given FRCP data.
pub fn trace_decomposition(ops: &KernelOperators, data: &FrcpData, k: usize) -> Result<TraceDecomposition> {
    if !(2..=MAX_POWER).contains(&k) {
        return Err(Error::Validation(format!("k must be in 2..={MAX_POWER}, got {k}")));
    }
    let lambda = ops.lambda;
    let lhs = 0.5 * ops.block()?.power_traces(k)?[k - 1];

    let mu = ops.a.symmetric_eigenvalues()?;
    let p_k = correction_polynomial(k, lambda, data.alpha, data.beta)?;
    let leading = lambda * mu.iter().map(|m| m.powi(k as i32)).sum::<f64>();
    let polynomial = mu.iter().map(|&m| (m - m * m) * eval_poly(&p_k, m)).sum::<f64>();

    let grid = &ops.grid;
    let mut rv = RankVectors { u: Vec::new(), v: Vec::new() };
    for p in data.commutator.iter().chain(&data.defect) {
        rv.u.push(grid.sample(&*p.left));
        rv.v.push(grid.sample(&*p.right));
    }
    let n_comm = data.commutator.len();
    let n_defect = data.defect.len();

    // Words start in block 1; choose 2e of the k steps as block changes.
    let mut rank_terms = 0.0;
    for mask in 0u32..(1 << k) {
        let switches = mask.count_ones() as usize;
        if switches == 0 || switches % 2 == 1 {
            continue;
        }
        // segments: runs of A in block 1 and excursions D A†ᵐ B
        let mut pieces: Vec<Vec<Vec<Factor>>> = Vec::new();
        let mut inside = false;
        let mut run = 0usize;
        for step in 0..k {
            let switch = mask & (1 << step) != 0;
            match (inside, switch) {
                (false, false) => pieces.push(vec![vec![Factor::A]]),
                (false, true) => {
                    inside = true;
                    run = 0;
                }
                (true, false) => run += 1,
                (true, true) => {
                    inside = false;
                    let mut opts = vec![{
                        let mut w = vec![Factor::Q];
                        w.extend(std::iter::repeat_n(Factor::A, run));
                        w
                    }];
                    opts.extend(excursion_options(run, n_comm, n_defect));
                    pieces.push(opts);
                }
            }
        }
        // all choices except the all-pure one
        let sizes: Vec<usize> = pieces.iter().map(|p| p.len()).collect();
        let mut choice = vec![0usize; pieces.len()];
        loop {
            if choice.iter().any(|&c| c > 0) {
                let word: Vec<Factor> = pieces
                    .iter()
                    .zip(&choice)
                    .flat_map(|(p, &c)| p[c].iter().cloned())
                    .collect();
                rank_terms += cyclic_rank_trace(ops, data.alpha, data.beta, &word, &rv);
            }
            let mut pos = 0;
            while pos < choice.len() {
                choice[pos] += 1;
                if choice[pos] < sizes[pos] {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
            if pos == choice.len() {
                break;
            }
        }
    }
    rank_terms *= lambda.powi(k as i32);
    let rhs = leading + polynomial + rank_terms;
    Ok(TraceDecomposition {
        k,
        lhs,
        leading,
        polynomial,
        rank_terms,
        residual: (lhs - rhs).abs() / lhs.abs(),
    })
}

/// Decomposition check on `(−L, L)` with the kernel's registered FRCP data.
pub fn trace_decomposition_check(
    kernel: &MatrixKernel,
    l: f64,
    k: usize,
    density: f64,
) -> Result<TraceDecomposition> {
    let data = frcp_data(kernel, l)?;
    let ops = KernelOperators::on_window(kernel, l, density)?;
    trace_decomposition(&ops, &data, k)
}

/// Multiplication by `f` on the grid of `ops`, for callers composing their own chains.
pub fn step_multiplication(f_l: &StepFunction, grid: &Arc<Grid>) -> DiscreteOperator {
    crate::discretize::multiplication(|x| f_l.eval(x), grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Scheme;
    use crate::frcp::FactorPair;
    use crate::quadrature::integrate;
    use proptest::prelude::*;

    /// Σ over compositions of n into k parts of n!/(l₁!⋯l_k!) / k!.
    fn v_bruteforce(n: usize, k: usize) -> f64 {
        fn rec(rem: usize, parts: usize, acc: &mut Vec<usize>, out: &mut f64) {
            if parts == 0 {
                if rem == 0 {
                    *out += 1.0 / acc.iter().map(|&l| factorial(l)).product::<f64>();
                }
                return;
            }
            for l in 1..=rem {
                acc.push(l);
                rec(rem - l, parts - 1, acc, out);
                acc.pop();
            }
        }
        let mut s = 0.0;
        rec(n, k, &mut Vec::new(), &mut s);
        s * factorial(n) / factorial(k)
    }

    #[test]
    fn stirling_values() {
        assert_eq!(stirling_v(3, 2).unwrap(), 3);
        assert_eq!(stirling_v(4, 2).unwrap(), 7);
        assert_eq!(stirling_v(0, 0).unwrap(), 0);
        assert_eq!(stirling_v(5, 0).unwrap(), 0);
        for n in 1..=MAX_STIRLING {
            assert_eq!(stirling_v(n, 1).unwrap(), 1);
            assert_eq!(stirling_v(n, n).unwrap(), 1);
        }
        assert_eq!(stirling_v(30, 15).unwrap(), 12_879_868_072_770_626_040_000);
        assert_eq!(stirling_v(30, 2).unwrap(), (1 << 29) - 1);
        assert!(stirling_v(31, 2).is_err());
        assert!(stirling_v(3, 4).is_err());
        for n in 1..=8 {
            for k in 1..=n {
                assert_eq!(stirling_v(n, k).unwrap() as f64, v_bruteforce(n, k).round(), "v({n},{k})");
            }
        }
    }

    #[test]
    fn count_cumulants_low_order() {
        let v = [3.0, 2.5, 2.25, 2.0];
        let c = cumulants_from_v(&v).unwrap();
        assert_eq!(c[0], 3.0);
        assert!((c[1] - 0.5).abs() < 1e-15);
        // c₃ = V₁ − 3V₂ + 2V₃
        assert!((c[2] - (3.0 - 7.5 + 4.5)).abs() < 1e-14);
    }

    #[test]
    fn v1_is_the_expectation() {
        let v4 = v_k_traces(&MatrixKernel::sine4(), 5.0, 16.0, 2).unwrap();
        let v1 = v_k_traces(&MatrixKernel::sine1(), 5.0, 16.0, 2).unwrap();
        assert!((v4[0] - 5.0).abs() < 1e-10);
        assert!((v1[0] - 10.0).abs() < 1e-10);
    }

    #[test]
    fn synthetic_block_diagonal() {
        let grid = Arc::new(Grid::new((-3.0, 3.0), 128, Scheme::GaussLegendre).unwrap());
        let real = KernelOperators::assemble(&MatrixKernel::sine4(), &grid);
        let ops = KernelOperators {
            lambda: 1.0,
            d: DiscreteOperator::zero(&grid),
            b: DiscreteOperator::zero(&grid),
            ..real
        };
        let v = v_k_from_operators(&ops, 4).unwrap();
        let mut p = ops.a.clone();
        for k in 1..=4 {
            assert!((v[k - 1] - p.trace()).abs() < 1e-10 * p.trace());
            p = p.product(&ops.a).unwrap();
        }
        let none = FrcpData::new(3.0, 1.0, 0.0, 0.0, vec![], vec![]).unwrap();
        for k in 2..=4 {
            let t = trace_decomposition(&ops, &none, k).unwrap();
            assert!(t.residual < 1e-12, "{t:?}");
            assert_eq!(t.rank_terms, 0.0);
        }
    }

    #[test]
    fn correction_polynomials() {
        // λ = ½, (α,β) = (1,0): P = ¼(t² + t²) = ½t² ⇒ p₂ = 0
        assert!(correction_polynomial(2, 0.5, 1.0, 0.0).unwrap().iter().all(|c| c.abs() < 1e-15));
        // λ = 1, (α,β) = (1,−1), k = 2: P = t² + t² − t = 2t² − t, P − t² = t² − t ⇒ p₂ = −1
        let p = correction_polynomial(2, 1.0, 1.0, -1.0).unwrap();
        assert!((p[0] + 1.0).abs() < 1e-15);
        assert!(correction_polynomial(3, 1.0, 1.0, 1.0).is_err());
        for k in 2..=6 {
            for t in [0.2, 0.7, 1.3] {
                let p = correction_polynomial(k, 0.5, 1.0, 0.0).unwrap();
                let full = eval_poly(&pure_polynomial(k, 0.5, 1.0, 0.0), t);
                assert!((full - 0.5 * t.powi(k as i32) - (t - t * t) * eval_poly(&p, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decomposition_closes_for_both_kernels() {
        for kernel in [MatrixKernel::sine4(), MatrixKernel::sine1()] {
            for k in 2..=4 {
                let t = trace_decomposition_check(&kernel, 6.0, k, 24.0).unwrap();
                assert!(t.residual < 1e-6, "{kernel:?} k={k} {t:?}");
            }
        }
    }

    #[test]
    fn rank_trace_with_explicit_operators() {
        // Tr(A (u⊗v) D (u⊗v)) = ⟨v, A... ⟩ checked against dense products
        let grid = Arc::new(Grid::new((-2.0, 2.0), 64, Scheme::GaussLegendre).unwrap());
        let ops = KernelOperators::assemble(&MatrixKernel::sine1(), &grid);
        let u = grid.sample(|x| x.cos());
        let v = grid.sample(|x| 1.0 + x);
        let r = DiscreteOperator::from_outer_products(&grid, &[(u.clone(), v.clone())]).unwrap();
        let dense = ops.a.product(&r).unwrap().product(&ops.d).unwrap().product(&r).unwrap().trace();
        let rv = RankVectors { u: vec![u], v: vec![v] };
        let word = [Factor::A, Factor::Rank(0), Factor::D, Factor::Rank(0)];
        let fast = cyclic_rank_trace(&ops, 1.0, -1.0, &word, &rv);
        assert!((dense - fast).abs() < 1e-12 * dense.abs().max(1.0), "{dense} {fast}");
    }

    #[test]
    fn variance_reduction_matches_double_integral() {
        let kernel = MatrixKernel::sine4();
        let l = 3.0;
        let (e, var) = expectation_variance(&kernel, &StepFunction::indicator(-1.0, 1.0).unwrap(), l).unwrap();
        assert!((e - l).abs() < 1e-14);
        let inner = |x: f64| integrate(|y: f64| kernel.det(x, y), -l, l, 1e-13);
        let two = integrate(inner, -l, l, 1e-12);
        assert!((var - (l - two)).abs() < 1e-9, "{var} {}", l - two);
    }

    #[test]
    fn touching_pieces_equal_their_union() {
        let kernel = MatrixKernel::sine4();
        let split = StepFunction::new(vec![(1.0, 0.0, 1.0), (1.0, 1.0, 2.0)]).unwrap();
        let whole = StepFunction::indicator(0.0, 2.0).unwrap();
        for l in [5.0, 40.0] {
            let (e1, v1) = expectation_variance(&kernel, &split, l).unwrap();
            let (e2, v2) = expectation_variance(&kernel, &whole, l).unwrap();
            assert!((e1 - e2).abs() < 1e-12 * e2);
            assert!((v1 - v2).abs() < 1e-8 * v2, "{v1} {v2}");
        }
        let phi = StepFunction::new(vec![(2.0, 0.0, 1.0), (-1.0, 3.0, 4.0)]).unwrap();
        let (e, _) = expectation_variance(&kernel, &phi, 10.0).unwrap();
        assert!((e - 0.5 * (2.0 - 1.0) * 10.0).abs() < 1e-12);
    }

    #[test]
    fn report_consistency_for_counts() {
        for kernel in [MatrixKernel::sine4(), MatrixKernel::sine1()] {
            let r = cumulant_counts(&kernel, 8.0, 16.0, 4).unwrap();
            assert!(r.mean_mismatch() < 1e-8, "{r:?}");
            assert!(r.variance_mismatch().unwrap() < 1e-6, "{r:?}");
            let d = clt_diagnostic(&r).unwrap();
            assert_eq!(d.iter().map(|p| p.0).collect::<Vec<_>>(), vec![3, 4]);
        }
    }

    #[test]
    fn composition_path_reproduces_counts() {
        for kernel in [MatrixKernel::sine4(), MatrixKernel::sine1()] {
            let l = 4.0;
            let lin = cumulant_linear_stat(&kernel, &StepFunction::indicator(-1.0, 1.0).unwrap(), l, 16.0, 5).unwrap();
            let cnt = cumulant_counts(&kernel, l, 16.0, 5).unwrap();
            for (a, b) in lin.c_n.iter().zip(&cnt.c_n) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3), "{a} {b}");
            }
        }
    }

    #[test]
    fn log_coefficients() {
        let pi2 = std::f64::consts::PI.powi(2);
        let count = StepFunction::indicator(-1.0, 1.0).unwrap();
        assert!((variance_log_coefficient(&MatrixKernel::sine4(), &count) - 0.5 / pi2).abs() < 1e-15);
        assert!((variance_log_coefficient(&MatrixKernel::sine1(), &count) - 2.0 / pi2).abs() < 1e-15);
        let touching = StepFunction::new(vec![(1.0, 0.0, 1.0), (-1.0, 1.0, 2.0)]).unwrap();
        assert!((variance_log_coefficient(&MatrixKernel::sine4(), &touching) - 1.5 / pi2).abs() < 1e-15);
        let apart = StepFunction::new(vec![(1.0, 0.0, 1.0), (1.0, 2.0, 3.0)]).unwrap();
        assert!((variance_log_coefficient(&MatrixKernel::sine4(), &apart) - 1.0 / pi2).abs() < 1e-15);
    }

    #[test]
    fn slope_of_exact_logarithm() {
        let ls = [2.0, 8.0, 32.0];
        let ys: Vec<f64> = ls.iter().map(|l: &f64| 0.25 * l.ln() - 3.0).collect();
        assert!((log_slope(&ls, &ys).unwrap() - 0.25).abs() < 1e-14);
        assert!(log_slope(&[1.0], &[1.0]).is_err());
        assert!(log_slope(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn projection_defect_matches_explicit_trace_norm() {
        let ops = KernelOperators::on_window(&MatrixKernel::sine4(), 3.0, 16.0).unwrap();
        let explicit = ops.a.sub(&ops.a.product(&ops.a).unwrap()).unwrap().trace_norm().unwrap();
        let fast = projection_defect(&ops).unwrap();
        assert!((explicit - fast).abs() <= 1e-10 * explicit, "{explicit} {fast}");
    }

    #[test]
    fn projection_defect_grows_like_log() {
        let pi2 = std::f64::consts::PI.powi(2);
        let g = projection_defect_growth(&MatrixKernel::sine4(), &[10.0, 20.0, 40.0, 80.0], 16.0).unwrap();
        assert!((g.log_slope * pi2 - 1.0).abs() <= 0.2, "{g:?}");
        // both sides are c·log L + O(1) with different offsets, so the local
        // exponent approaches 1 from above; the O(Var) bound uses the ratio of
        // the log coefficients, (1/π²)/(1/(2π²)) = 2
        for (t, v) in g.trace_norms.iter().zip(&g.variances) {
            assert!(*t <= 2.0 * v, "{g:?}");
        }
        let local: Vec<f64> = (1..4)
            .map(|i| (g.trace_norms[i] / g.trace_norms[i - 1]).ln() / (g.variances[i] / g.variances[i - 1]).ln())
            .collect();
        assert!(local.windows(2).all(|w| w[1] < w[0]), "{local:?}");
        assert!(g.exponent > 0.0, "{g:?}");
    }

    #[test]
    fn gaussian_diagnostic_is_zero() {
        let r = CumulantReport::new(1.0, 2.0, 4.0, vec![], vec![2.0, 4.0, 0.0, 0.0]);
        assert!(clt_diagnostic(&r).unwrap().iter().all(|p| p.1 == 0.0));
        let bad = CumulantReport::new(1.0, 2.0, 0.0, vec![], vec![2.0, 0.0, 0.0]);
        assert!(clt_diagnostic(&bad).is_err());
    }

    #[test]
    fn order_guards() {
        assert!(v_k_traces(&MatrixKernel::sine4(), 2.0, 16.0, 9).is_err());
        let f = StepFunction::indicator(0.0, 1.0).unwrap();
        assert!(cumulant_linear_stat(&MatrixKernel::sine4(), &f, 2.0, 16.0, 7).is_err());
        assert!(cumulants_from_v(&[0.0; 9]).is_err());
    }

    #[test]
    fn decomposition_reports_unregistered_data() {
        let grid = Arc::new(Grid::new((-1.0, 1.0), 32, Scheme::GaussLegendre).unwrap());
        let ops = KernelOperators::assemble(&MatrixKernel::sine4(), &grid);
        // wrong α, β for λ = ½ cannot be built at all
        assert!(FrcpData::new(1.0, 0.5, 1.0, 1.0, vec![FactorPair::new(|_| 0.0, |_| 0.0)], vec![FactorPair::new(|_| 0.0, |_| 0.0)]).is_err());
        assert!(trace_decomposition(&ops, &crate::frcp::sine4_frcp(1.0).unwrap(), 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn homogeneity(c in prop::sample::select(vec![2.0f64, -0.5, 4.0, -1.0])) {
            let kernel = MatrixKernel::sine4();
            let f = StepFunction::new(vec![(1.0, -1.0, 0.0), (-0.5, 0.0, 1.0)]).unwrap();
            let base = cumulant_linear_stat(&kernel, &f, 3.0, 16.0, 4).unwrap();
            let scaled = cumulant_linear_stat(&kernel, &f.times(c).unwrap(), 3.0, 16.0, 4).unwrap();
            for (n, (a, b)) in base.c_n.iter().zip(&scaled.c_n).enumerate() {
                let expect = a * c.powi(n as i32 + 1);
                prop_assert!((b - expect).abs() <= 1e-12 * expect.abs().max(1e-300), "n={} {} {}", n + 1, b, expect);
            }
        }

        #[test]
        fn two_forms_agree(v in prop::collection::vec(0.0f64..50.0, 1..=8)) {
            prop_assert!(cumulants_from_v(&v).is_ok());
        }
    }
}

//! Sine₁ and Sine₄ matrix kernels and their Pfaffian correlation functions.
//!
//! Both kernels have the block form
//! `K(x,y) = λ [[a(x,y), d(x,y)], [b(x,y), a(y,x)]]` with `a = S(x−y)`,
//! `d = S′(x−y)` and `b = IS(x−y)` (Sine₄) or `IS(x−y) − ½sgn(x−y)` (Sine₁).
//! Correlation functions are `ρ_k = Pf[Z·K(x_i,x_j)]` with `Z = [[0,1],[−1,0]]`.

use crate::error::{Error, Result};
use crate::quadrature::integrate_split;
use crate::skewlin::{pfaffian, SkewMatrix};
use crate::special::{sgn, sinc_s, sinc_s_prime, sine_integral_is};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Sine1,
    Sine4,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Sine1 => "sine1",
            KernelKind::Sine4 => "sine4",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine1" => Ok(KernelKind::Sine1),
            "sine4" => Ok(KernelKind::Sine4),
            other => Err(Error::Validation(format!(
                "unknown kernel '{other}' (expected sine1 or sine4)"
            ))),
        }
    }
}

/// 2×2 block kernel, row-major: `[[K11, K12], [K21, K22]]`.
pub type Block = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixKernel {
    pub kind: KernelKind,
}

impl MatrixKernel {
    pub fn new(kind: KernelKind) -> Self {
        Self { kind }
    }

    pub fn sine1() -> Self {
        Self::new(KernelKind::Sine1)
    }

    pub fn sine4() -> Self {
        Self::new(KernelKind::Sine4)
    }

    pub fn lambda(&self) -> f64 {
        match self.kind {
            KernelKind::Sine1 => 1.0,
            KernelKind::Sine4 => 0.5,
        }
    }

    /// Coefficient `c` of the `c·sgn(x−y)` term in `b`.
    pub fn b_jump(&self) -> f64 {
        match self.kind {
            KernelKind::Sine1 => -0.5,
            KernelKind::Sine4 => 0.0,
        }
    }

    pub fn a(&self, x: f64, y: f64) -> f64 {
        sinc_s(x - y)
    }

    pub fn d(&self, x: f64, y: f64) -> f64 {
        sinc_s_prime(x - y)
    }

    /// Continuous part of `b`.
    pub fn b_smooth(&self, x: f64, y: f64) -> f64 {
        sine_integral_is(x - y)
    }

    pub fn b(&self, x: f64, y: f64) -> f64 {
        self.b_smooth(x, y) + self.b_jump() * sgn(x - y)
    }

    /// K(x, y), prefactor included.
    pub fn eval(&self, x: f64, y: f64) -> Block {
        let l = self.lambda();
        let s = l * self.a(x, y);
        [[s, l * self.d(x, y)], [l * self.b(x, y), s]]
    }

    /// 𝕂(x, y) = Z·K(x, y).
    pub fn eval_pfaffian(&self, x: f64, y: f64) -> Block {
        let k = self.eval(x, y);
        [[k[1][0], k[1][1]], [-k[0][0], -k[0][1]]]
    }

    /// det K(x, y), the integrand of the two-point correction to the variance.
    pub fn det(&self, x: f64, y: f64) -> f64 {
        let k = self.eval(x, y);
        k[0][0] * k[1][1] - k[0][1] * k[1][0]
    }

    /// One-point function λ·a(x, x).
    pub fn intensity(&self) -> f64 {
        self.lambda() * sinc_s(0.0)
    }
}

pub fn eval_kernel(kernel: &MatrixKernel, x: f64, y: f64) -> Block {
    kernel.eval(x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRequest {
    pub points: Vec<f64>,
    pub kernel: MatrixKernel,
}

impl CorrelationRequest {
    pub fn new(kernel: MatrixKernel, points: Vec<f64>) -> Self {
        Self { points, kernel }
    }

    /// Coinciding points make ρ_k vanish; they are allowed but reported here.
    pub fn has_duplicates(&self) -> bool {
        let mut p = self.points.clone();
        p.sort_by(f64::total_cmp);
        p.windows(2).any(|w| w[0] == w[1])
    }
}

/// ρ_k(x_1, …, x_k) = Pf[𝕂(x_i, x_j)].
pub fn correlation(req: &CorrelationRequest) -> Result<f64> {
    let k = req.points.len();
    if k == 0 {
        return Err(Error::Validation("correlation needs at least one point".into()));
    }
    if req.points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Validation("points must be finite".into()));
    }
    let n = 2 * k;
    let mut entries = vec![0.0; n * n];
    for (i, &xi) in req.points.iter().enumerate() {
        for (j, &xj) in req.points.iter().enumerate() {
            let blk = req.kernel.eval_pfaffian(xi, xj);
            for r in 0..2 {
                for c in 0..2 {
                    entries[(2 * i + r) * n + 2 * j + c] = blk[r][c];
                }
            }
        }
    }
    let m = SkewMatrix::new(n, entries).map_err(|e| {
        Error::Consistency(format!("kernel matrix failed antisymmetry check: {e}"))
    })?;
    pfaffian(&m)
}

/// ‖(IS − ½)χ_(0,T)‖²_{L²}.
pub fn is_defect_norm_sq(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let g = |x: f64| {
        let v = sine_integral_is(x) - 0.5;
        v * v
    };
    integrate_split(g, 0.0, t, &[], 1.0, 1e-13 * t.max(1.0))
}

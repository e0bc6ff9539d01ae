//! Monte Carlo check of the central limit behaviour with tridiagonal
//! β-ensembles (β = 1 for Sine₁, β = 4 for Sine₄).
//!
//! The model has diagonal `N(0, 2/β)` and off-diagonal `χ_{β(n−k)}/√β`, so
//! the spectrum fills `[−2√n, 2√n]` with density `√n/π` at the origin.
//! Eigenvalues near zero are rescaled to the target intensity (½ for β = 4,
//! 1 for β = 1) before counting.

use crate::discretize::StepFunction;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

pub const MIN_MATRIX_SIZE: usize = 200;
pub const MIN_SAMPLES: usize = 100;
/// The unfolded window may cover at most this fraction of the spectrum width.
pub const BULK_FRACTION: f64 = 0.1;
const QL_MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub beta: u8,
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub l: f64,
    pub step: Option<StepFunction>,
}

impl EnsembleConfig {
    pub fn new(beta: u8, n: usize, samples: usize, seed: u64, l: f64) -> Result<Self> {
        let c = Self {
            beta,
            n,
            samples,
            seed,
            l,
            step: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_step(mut self, step: StepFunction) -> Result<Self> {
        self.step = Some(step);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if self.n < MIN_MATRIX_SIZE {
            return Err(Error::Validation(format!(
                "matrix size must be at least {MIN_MATRIX_SIZE}, got {}",
                self.n
            )));
        }
        if self.samples < MIN_SAMPLES {
            return Err(Error::Validation(format!(
                "need at least {MIN_SAMPLES} samples, got {}",
                self.samples
            )));
        }
        if !(self.l >= 1.0 && self.l.is_finite()) {
            return Err(Error::Validation(format!("L must be at least 1, got {}", self.l)));
        }
        bulk_guard(self.beta, self.n, self.l, self.step.as_ref())
    }
}

fn check_beta(beta: u8) -> Result<()> {
    if beta == 1 || beta == 4 {
        Ok(())
    } else {
        Err(Error::Validation(format!("β must be 1 or 4, got {beta}")))
    }
}

/// Target intensity of the limiting process.
pub fn target_intensity(beta: u8) -> f64 {
    if beta == 4 {
        0.5
    } else {
        1.0
    }
}

/// Semicircle density at the origin for size `n`.
pub fn bulk_density(n: usize) -> f64 {
    (n as f64).sqrt() / PI
}

/// Raw eigenvalue `x` ↦ unfolded coordinate with the target intensity.
fn unfold_scale(beta: u8, n: usize) -> f64 {
    bulk_density(n) / target_intensity(beta)
}

fn window_half_width(beta: u8, n: usize, l: f64, step: Option<&StepFunction>) -> f64 {
    let reach = step.map_or(1.0, |s| {
        s.pieces()
            .iter()
            .map(|&(_, a, b)| a.abs().max(b.abs()))
            .fold(0.0, f64::max)
    });
    reach * l / unfold_scale(beta, n)
}

fn bulk_guard(beta: u8, n: usize, l: f64, step: Option<&StepFunction>) -> Result<()> {
    let h = window_half_width(beta, n, l, step);
    let width = 4.0 * (n as f64).sqrt();
    if 2.0 * h > BULK_FRACTION * width {
        return Err(Error::Validation(format!(
            "window of half-width {h:.3} exceeds {}% of the spectrum width {width:.3}",
            100.0 * BULK_FRACTION
        )));
    }
    Ok(())
}

/// Symmetric tridiagonal matrix: `diag` of length n, `off` of length n − 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

pub fn sample_tridiagonal<R: Rng + ?Sized>(beta: u8, n: usize, rng: &mut R) -> Result<Tridiagonal> {
    check_beta(beta)?;
    if n == 0 {
        return Err(Error::Validation("matrix size must be positive".into()));
    }
    let b = beta as f64;
    let diag_scale = (2.0 / b).sqrt();
    let diag = (0..n)
        .map(|_| diag_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut off = Vec::with_capacity(n - 1);
    for k in 1..n {
        let chi = ChiSquared::new(b * (n - k) as f64)
            .map_err(|e| Error::Numerical(format!("χ² parameter: {e}")))?;
        off.push((chi.sample(rng) / b).sqrt());
    }
    Ok(Tridiagonal { diag, off })
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence).
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        for i in 0..self.diag.len() {
            if i > 0 {
                let denom = if q == 0.0 { f64::EPSILON * self.off[i - 1].abs().max(1.0) } else { q };
                q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / denom;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// All eigenvalues, ascending, by implicit-shift QL.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let n = self.diag.len();
        let mut d = self.diag.clone();
        let mut e = self.off.clone();
        e.push(0.0);
        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                iter += 1;
                if iter > QL_MAX_SWEEPS {
                    return Err(Error::Numerical(format!(
                        "QL iteration did not converge for eigenvalue {l} after {QL_MAX_SWEEPS} sweeps (|e| = {:e})",
                        e[l].abs()
                    )));
                }
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                g = d[m] - d[l] + e[l] / (g + r.copysign(g));
                let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
                let mut i = m;
                let mut underflow = false;
                while i > l {
                    i -= 1;
                    let f = s * e[i];
                    let b = c * e[i];
                    r = f.hypot(g);
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                }
                if underflow {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
        d.sort_by(f64::total_cmp);
        Ok(d)
    }
}

/// Eigenvalues of one tridiagonal β-ensemble matrix, ascending.
pub fn sample_spectrum<R: Rng + ?Sized>(config: &EnsembleConfig, rng: &mut R) -> Result<Vec<f64>> {
    config.validate()?;
    sample_tridiagonal(config.beta, config.n, rng)?.eigenvalues()
}

/// `#(−L, L)` or `Σ φ(x_i / L)` after unfolding a sorted spectrum.
pub fn unfold_bulk(eigenvalues: &[f64], beta: u8, l: f64, step: Option<&StepFunction>) -> Result<f64> {
    check_beta(beta)?;
    if l == 0.0 {
        return Ok(0.0);
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Validation(format!("L must be non-negative, got {l}")));
    }
    let n = eigenvalues.len();
    bulk_guard(beta, n, l, step)?;
    let below = |t: f64| eigenvalues.partition_point(|&x| x < t) as f64;
    Ok(statistic(below, beta, n, l, step))
}

/// Shared by the sorted-list and Sturm paths: `below(x)` counts raw
/// eigenvalues under `x`.
fn statistic(below: impl Fn(f64) -> f64, beta: u8, n: usize, l: f64, step: Option<&StepFunction>) -> f64 {
    let scale = unfold_scale(beta, n);
    let raw = |t: f64| t * l / scale;
    match step {
        None => below(raw(1.0)) - below(raw(-1.0)),
        Some(s) => s
            .pieces()
            .iter()
            .map(|&(c, a, b)| c * (below(raw(b)) - below(raw(a))))
            .sum(),
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountSample {
    pub l: f64,
    pub values: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    /// Third and fourth k-statistics.
    pub k3: f64,
    pub k4: f64,
    /// Kolmogorov–Smirnov distance of the standardized values to N(0, 1).
    pub ks: f64,
    /// Same distance with the normal law evaluated at half-integers, for
    /// integer-valued statistics; `None` otherwise.
    pub ks_lattice: Option<f64>,
}

impl CountSample {
    pub fn from_values(l: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 4 {
            return Err(Error::Validation("need at least 4 values".into()));
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
        for v in &values {
            let d = v - mean;
            let d2 = d * d;
            s2 += d2;
            s3 += d2 * d;
            s4 += d2 * d2;
        }
        let variance = s2 / (nf - 1.0);
        let k3 = nf * s3 / ((nf - 1.0) * (nf - 2.0));
        let k4 = nf * ((nf + 1.0) * s4 - 3.0 * (nf - 1.0) * s2 * s2 / nf)
            / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0));
        let (ks, ks_lattice) = if variance > 0.0 {
            ks_distances(&values, mean, variance.sqrt())?
        } else {
            (1.0, None)
        };
        Ok(Self {
            l,
            values,
            mean,
            variance,
            k3,
            k4,
            ks,
            ks_lattice,
        })
    }

    pub fn standard_error_mean(&self) -> f64 {
        (self.variance / self.values.len() as f64).sqrt()
    }

    /// k₃ / k₂^{3/2}.
    pub fn skewness(&self) -> f64 {
        self.k3 / self.variance.powf(1.5)
    }

    /// k₄ / k₂².
    pub fn excess_kurtosis(&self) -> f64 {
        self.k4 / (self.variance * self.variance)
    }

    /// Large-sample standard errors of skewness and excess kurtosis under normality.
    pub fn shape_standard_errors(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        ((6.0 / n).sqrt(), (24.0 / n).sqrt())
    }
}

fn ks_distances(values: &[f64], mean: f64, sd: f64) -> Result<(f64, Option<f64>)> {
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let integer = v.iter().all(|x| x.fract() == 0.0);
    let mut ks: f64 = 0.0;
    let mut lattice: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        let phi = normal.cdf((v[i] - mean) / sd);
        ks = ks.max((i as f64 / n - phi).abs()).max((j as f64 / n - phi).abs());
        if integer {
            let upper = normal.cdf((v[i] + 0.5 - mean) / sd);
            lattice = lattice.max((j as f64 / n - upper).abs());
            let lower = normal.cdf((v[i] - 0.5 - mean) / sd);
            lattice = lattice.max((i as f64 / n - lower).abs());
        }
        i = j;
    }
    Ok((ks, integer.then_some(lattice)))
}

/// Samples every matrix once and evaluates the statistic at each `L`.
///
/// Sample `i` uses the ChaCha stream `(seed, i)`, so results do not depend
/// on scheduling and the same matrices are reused across `L`.
pub fn fluctuation_scan(base: &EnsembleConfig, ls: &[f64]) -> Result<Vec<CountSample>> {
    for &l in ls {
        EnsembleConfig { l, ..base.clone() }.validate()?;
    }
    let step = base.step.as_ref();
    let rows: Vec<Vec<f64>> = (0..base.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(base.seed, i);
            let t = sample_tridiagonal(base.beta, base.n, &mut rng)?;
            Ok(ls
                .iter()
                .map(|&l| statistic(|x| t.count_below(x) as f64, base.beta, base.n, l, step))
                .collect())
        })
        .collect::<Result<_>>()?;
    ls.iter()
        .enumerate()
        .map(|(j, &l)| CountSample::from_values(l, rows.iter().map(|r| r[j]).collect()))
        .collect()
}

pub fn fluctuation_report(config: &EnsembleConfig) -> Result<CountSample> {
    config.validate()?;
    Ok(fluctuation_scan(config, &[config.l])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    #[test]
    fn config_validation() {
        assert!(EnsembleConfig::new(4, 2000, 1000, 1, 8.0).is_ok());
        assert!(EnsembleConfig::new(2, 2000, 1000, 1, 8.0).is_err());
        assert!(EnsembleConfig::new(1, 100, 1000, 1, 8.0).is_err());
        assert!(EnsembleConfig::new(1, 2000, 10, 1, 8.0).is_err());
        assert!(EnsembleConfig::new(1, 2000, 1000, 1, 0.5).is_err());
        // β = 1, n = 2000: window 2L/ρ(0) must stay below 0.4√n
        assert!(EnsembleConfig::new(1, 2000, 1000, 1, 200.0).is_err());
        let wide = StepFunction::new(vec![(1.0, 0.0, 1.0), (1.0, 2.0, 8.0)]).unwrap();
        assert!(EnsembleConfig::new(1, 2000, 1000, 1, 32.0).unwrap().with_step(wide).is_err());
    }

    #[test]
    fn two_by_two_closed_form() {
        let mut rng = sample_rng(7, 0);
        for beta in [1u8, 4] {
            let t = sample_tridiagonal(beta, 2, &mut rng).unwrap();
            let (a, c, b) = (t.diag[0], t.diag[1], t.off[0]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let ev = t.eigenvalues().unwrap();
            assert!((ev[0] - (mid - rad)).abs() < 1e-13);
            assert!((ev[1] - (mid + rad)).abs() < 1e-13);
        }
    }

    #[test]
    fn ql_matches_sturm_counts() {
        let mut rng = sample_rng(3, 1);
        let t = sample_tridiagonal(4, 300, &mut rng).unwrap();
        let ev = t.eigenvalues().unwrap();
        assert_eq!(ev.len(), 300);
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        for x in [-30.0, -3.3, 0.0, 1.7, 12.0, 40.0] {
            assert_eq!(t.count_below(x), ev.partition_point(|&e| e < x), "x={x}");
        }
        let trace: f64 = t.diag.iter().sum();
        assert!((ev.iter().sum::<f64>() - trace).abs() < 1e-9);
    }

    #[test]
    fn semicircle_mass() {
        let n = 2000;
        let ev = sample_tridiagonal(1, n, &mut sample_rng(11, 0)).unwrap().eigenvalues().unwrap();
        let r = (n as f64).sqrt();
        let frac = ev.iter().filter(|&&x| x.abs() <= r).count() as f64 / n as f64;
        let oracle = integrate(|s: f64| 2.0 / PI * (1.0 - s * s).sqrt(), -0.5, 0.5, 1e-13);
        assert!((oracle - 0.6090).abs() < 1e-4);
        assert!((frac - oracle).abs() < 0.02, "{frac} {oracle}");
    }

    #[test]
    fn unfold_edge_cases() {
        let ev = sample_tridiagonal(4, 400, &mut sample_rng(5, 0)).unwrap().eigenvalues().unwrap();
        assert_eq!(unfold_bulk(&ev, 4, 0.0, None).unwrap(), 0.0);
        assert!(unfold_bulk(&ev, 4, 1e3, None).is_err());
        let c = unfold_bulk(&ev, 4, 5.0, None).unwrap();
        assert!(c >= 0.0 && c.fract() == 0.0);
        let half = StepFunction::new(vec![(1.0, -1.0, 0.0), (1.0, 0.0, 1.0)]).unwrap();
        assert_eq!(unfold_bulk(&ev, 4, 5.0, Some(&half)).unwrap(), c);
    }

    #[test]
    fn k_statistics_against_closed_form() {
        let v = vec![1.0, 2.0, 4.0, 8.0, 16.0];
        let s = CountSample::from_values(1.0, v.clone()).unwrap();
        let mean = 6.2;
        let d: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let m2 = d.iter().map(|x| x * x).sum::<f64>() / 5.0;
        let m3 = d.iter().map(|x| x.powi(3)).sum::<f64>() / 5.0;
        let m4 = d.iter().map(|x| x.powi(4)).sum::<f64>() / 5.0;
        let n = 5.0;
        let k3 = n * n * m3 / ((n - 1.0) * (n - 2.0));
        let k4 = n * n * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 * m2) / ((n - 1.0) * (n - 2.0) * (n - 3.0));
        assert!((s.mean - mean).abs() < 1e-14);
        assert!((s.variance - n * m2 / (n - 1.0)).abs() < 1e-12);
        assert!((s.k3 - k3).abs() < 1e-10);
        assert!((s.k4 - k4).abs() < 1e-9);
        assert!(s.ks >= 0.0 && s.ks <= 1.0);
    }

    #[test]
    fn ks_of_normal_quantiles_is_small() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 2000;
        let v: Vec<f64> = (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
        let s = CountSample::from_values(1.0, v).unwrap();
        assert!(s.ks < 2.0 / n as f64 + 1e-3, "{}", s.ks);
        assert!(s.ks_lattice.is_none());
    }

    #[test]
    fn reproducible_and_schedule_independent() {
        let cfg = EnsembleConfig::new(1, 200, 100, 42, 2.0).unwrap();
        let a = fluctuation_report(&cfg).unwrap();
        let b = fluctuation_report(&cfg).unwrap();
        assert_eq!(a, b);
        let scan = fluctuation_scan(&cfg, &[1.0, 2.0]).unwrap();
        assert_eq!(scan[1], a);
        let other = fluctuation_report(&EnsembleConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.values, other.values);
    }

    #[test]
    fn mean_counts_near_target() {
        for (beta, expect) in [(4u8, 4.0), (1u8, 8.0)] {
            let cfg = EnsembleConfig::new(beta, 400, 400, 9, 4.0).unwrap();
            let s = fluctuation_report(&cfg).unwrap();
            assert!((s.mean - expect).abs() < 4.0 * s.standard_error_mean() + 0.05, "{beta} {}", s.mean);
        }
    }
}

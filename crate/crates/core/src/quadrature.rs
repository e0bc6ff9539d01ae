//! Gauss–Legendre rules and a small adaptive integrator.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

struct Pair {
    low: (Vec<f64>, Vec<f64>),
    high: (Vec<f64>, Vec<f64>),
}

fn adaptive_rules() -> &'static Pair {
    static RULES: OnceLock<Pair> = OnceLock::new();
    RULES.get_or_init(|| Pair {
        low: gauss_legendre(12),
        high: gauss_legendre(24),
    })
}

fn apply(rule: &(Vec<f64>, Vec<f64>), f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(t, w)| w * f(c + h * t))
        .sum::<f64>()
        * h
}

/// Adaptive bisection driven by a 12/24-point Gauss–Legendre error estimate.
///
/// `abs_tol` is distributed over subintervals proportionally to their length.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let rules = adaptive_rules();
    let total_len = (b - a).abs();
    let mut stack = vec![(a, b, 0usize)];
    let mut sum = 0.0;
    let mut comp = 0.0;
    while let Some((lo, hi, depth)) = stack.pop() {
        let coarse = apply(&rules.low, &f, lo, hi);
        let fine = apply(&rules.high, &f, lo, hi);
        let budget = abs_tol * (hi - lo).abs() / total_len;
        if (fine - coarse).abs() <= budget.max(1e-15 * fine.abs()) || depth >= 48 {
            // Kahan summation keeps many small pieces from drifting
            let y = fine - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    sum
}

/// Integrates over `[a, b]` after splitting at the given interior breakpoints
/// and into pieces no longer than `max_piece`.
pub fn integrate_split(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    max_piece: f64,
    abs_tol: f64,
) -> f64 {
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&p| p > a && p < b)
        .collect();
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let total = b - a;
    let mut sum = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let pieces = ((hi - lo) / max_piece).ceil().max(1.0) as usize;
        let step = (hi - lo) / pieces as f64;
        for p in 0..pieces {
            let l = lo + p as f64 * step;
            let r = if p + 1 == pieces { hi } else { l + step };
            sum += integrate(&f, l, r, abs_tol * (r - l) / total);
        }
    }
    sum
}

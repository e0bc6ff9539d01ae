//! The sine kernel `S(x) = sin(πx)/(πx)`, its derivative and its primitive `IS`.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

/// Below this value of |πx| the Taylor expansions are used for S and S′.
const TAYLOR_CUTOFF: f64 = 0.5;
/// Si(z) is summed from its power series up to this |z|, and from the
/// continued fraction for E₁(iz) beyond it.
const SI_SERIES_CUTOFF: f64 = 4.0;

pub fn sinc_s(x: f64) -> f64 {
    let z = PI * x;
    if z.abs() < TAYLOR_CUTOFF {
        // Σ (-1)^k z^{2k} / (2k+1)!
        let z2 = z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..10 {
            term *= -z2 / ((2 * k) as f64 * (2 * k + 1) as f64);
            sum += term;
        }
        sum
    } else {
        z.sin() / z
    }
}

pub fn sinc_s_prime(x: f64) -> f64 {
    let z = PI * x;
    if z.abs() < TAYLOR_CUTOFF {
        // π Σ_{k≥1} (-1)^k 2k z^{2k-1} / (2k+1)!
        let z2 = z * z;
        let mut term = -z / 6.0;
        let mut sum = 2.0 * term;
        for k in 2..10 {
            term *= -z2 / ((2 * k) as f64 * (2 * k + 1) as f64);
            sum += (2 * k) as f64 * term;
        }
        PI * sum
    } else {
        PI * (z * z.cos() - z.sin()) / (z * z)
    }
}

/// Sine integral Si(z) = ∫₀^z sin(t)/t dt.
pub fn sine_integral(z: f64) -> f64 {
    let t = z.abs();
    let v = if t == 0.0 {
        0.0
    } else if t <= SI_SERIES_CUTOFF {
        si_series(t)
    } else {
        si_continued_fraction(t)
    };
    v.copysign(z)
}

fn si_series(t: f64) -> f64 {
    let t2 = t * t;
    let mut term = t; // (-1)^k t^{2k+1} / (2k+1)!
    let mut sum = t;
    for k in 1..40 {
        term *= -t2 / ((2 * k) as f64 * (2 * k + 1) as f64);
        let add = term / (2 * k + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Modified Lentz evaluation of E₁(it); Si(t) = π/2 + Im E₁(it).
fn si_continued_fraction(t: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = Complex64::new(1.0, t);
    let mut c = Complex64::new(1.0 / TINY, 0.0);
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 2..1000 {
        let a = -(((i - 1) * (i - 1)) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del.re - 1.0).abs() + del.im.abs() < 1e-16 {
            break;
        }
    }
    let e1 = Complex64::new(t.cos(), -t.sin()) * h;
    FRAC_PI_2 + e1.im
}

/// IS(x) = ∫₀^x S = Si(πx)/π.
pub fn sine_integral_is(x: f64) -> f64 {
    sine_integral(PI * x) / PI
}

pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
            }
        }
        // split into unit pieces so the error control sees every oscillation
        let pieces = ((b - a).ceil() as usize).max(1);
        let h = (b - a) / pieces as f64;
        (0..pieces)
            .map(|p| {
                let lo = a + p as f64 * h;
                let hi = lo + h;
                let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
                let whole = h / 6.0 * (fa + 4.0 * fm + fb);
                rec(f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
            })
            .sum()
    }

    fn sinc_plain(x: f64) -> f64 {
        if x == 0.0 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        }
    }

    #[test]
    fn sinc_values() {
        assert_eq!(sinc_s(0.0), 1.0);
        assert!((sinc_s(0.5) - 2.0 / PI).abs() < 1e-15);
        for n in [1.0, 2.0, -3.0, 17.0] {
            assert!(sinc_s(n).abs() < 1e-15);
        }
        for x in [1e-9, 1e-4, 0.1, 0.159, 0.16, 0.7] {
            assert_eq!(sinc_s(x), sinc_s(-x));
            assert!((sinc_s(x) - sinc_plain(x)).abs() < 2e-16 / (PI * x).max(1e-3), "{x}");
        }
    }

    #[test]
    fn sinc_derivative_values() {
        assert_eq!(sinc_s_prime(0.0), 0.0);
        assert!((sinc_s_prime(0.5) + 4.0 / PI).abs() < 1e-15);
        let h = 1e-6;
        for x in [0.5, 0.05, 0.159, 0.16, 1.3, -2.7, 40.25] {
            let fd = (sinc_plain(x + h) - sinc_plain(x - h)) / (2.0 * h);
            assert!((sinc_s_prime(x) - fd).abs() < 1e-8, "{x}");
            assert_eq!(sinc_s_prime(-x), -sinc_s_prime(x));
        }
        // cutoff continuity
        let c = TAYLOR_CUTOFF / PI;
        assert!((sinc_s_prime(c * (1.0 - 1e-15)) - sinc_s_prime(c * (1.0 + 1e-15))).abs() < 1e-14);
    }

    #[test]
    fn sine_integral_against_quadrature() {
        for x in [0.1, 1.0, 5.0, 50.0, 500.0] {
            let oracle = simpson_adaptive(&sinc_plain, 0.0, x, 1e-13);
            let v = sine_integral_is(x);
            assert!(((v - oracle) / oracle).abs() < 1e-10, "x={x} {v} {oracle}");
            assert_eq!(sine_integral_is(-x), -v);
        }
    }

    #[test]
    fn sine_integral_reference_values() {
        // Si(π), Si(4), Si(10), Si(100) to 16 digits
        let cases = [
            (PI, 1.851_937_051_982_466_2),
            (4.0, 1.758_203_138_949_053),
            (10.0, 1.658_347_594_218_874),
            (100.0, 1.562_225_466_889_056_3),
        ];
        for (z, v) in cases {
            assert!(((sine_integral(z) - v) / v).abs() < 1e-13, "z={z} {}", sine_integral(z));
        }
        for z in [3.0, SI_SERIES_CUTOFF, 5.0] {
            assert!((si_series(z) - si_continued_fraction(z)).abs() < 1e-14, "z={z}");
        }
    }

    #[test]
    fn sine_integral_limit_is_half() {
        assert_eq!(sine_integral_is(0.0), 0.0);
        for x in [1e4, 1e6, 1e9] {
            assert!((sine_integral_is(x) - 0.5).abs() < 1.0 / (PI * PI * x) + 1e-15);
        }
    }
}

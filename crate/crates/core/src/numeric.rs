//! Small numeric kernels shared across modules: normal and Erlang densities,
//! log-space summation, quadrature and monotone root bracketing.

use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Normal density with the given mean and variance.
pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    (-0.5 * z * z / variance - 0.5 * variance.ln() - LN_SQRT_2PI).exp()
}

/// `P(X <= x)` for a normal variable.
pub fn normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (variance.sqrt() * SQRT_2))
}

/// `P(X > x)` for a normal variable, accurate in the upper tail.
pub fn normal_ccdf(x: f64, mean: f64, variance: f64) -> f64 {
    0.5 * libm::erfc((x - mean) / (variance.sqrt() * SQRT_2))
}

/// Erlang density of order `k` (sum of `k` exponentials with rate `rate`).
pub fn erlang_pdf(t: f64, k: u32, rate: f64) -> f64 {
    if t < 0.0 || k == 0 {
        return 0.0;
    }
    if k == 1 {
        return rate * (-rate * t).exp();
    }
    if t == 0.0 {
        return 0.0;
    }
    let k = f64::from(k);
    (k * rate.ln() + (k - 1.0) * t.ln() - rate * t - ln_gamma(k)).exp()
}

/// `P(Erlang(k, rate) > t)` via the Poisson identity.
pub fn erlang_ccdf(t: f64, k: u32, rate: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let x = rate * t;
    let mut term = (-x).exp();
    let mut sum = term;
    for i in 1..k {
        term *= x / f64::from(i);
        sum += term;
    }
    sum.min(1.0)
}

/// `ln Σ exp(v)` over the finite entries, summing from the smallest term up.
/// Returns `-inf` when every entry is `-inf` (or the slice is empty).
pub fn log_sum_exp(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let Some(&max) = values.last() else {
        return f64::NEG_INFINITY;
    };
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Bisection for a root of a monotone function on `[lo, hi]`.
///
/// `f(lo)` and `f(hi)` must have opposite signs (or one of them be zero).
/// Stops when the bracket is narrower than `tol`.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_steps: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::InvalidArgument(format!(
            "root is not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        )));
    }
    let lo_negative = f_lo < 0.0;
    for _ in 0..max_steps {
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if (v < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if hi - lo <= tol {
        Ok(0.5 * (lo + hi))
    } else {
        Err(Error::NoConvergence { steps: max_steps })
    }
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
///
/// The interval is pre-split into `panels` pieces so narrow features are
/// not skipped by the first coarse estimate.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64, panels: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return 0.0;
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = if i + 1 == panels { b } else { lo + width };
            let mid = 0.5 * (lo + hi);
            let (f_lo, f_mid, f_hi) = (f(lo), f(mid), f(hi));
            let whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi);
            simpson_step(f, lo, hi, f_lo, f_mid, f_hi, whole, panel_tol, 40)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Composite Simpson on `initial_points` (odd) nodes, doubling the panel
/// count until two successive estimates differ by less than `tol`.
///
/// Previous nodes are reused, so each doubling only evaluates the new
/// midpoints. Gives up refining after `max_doublings` and returns the last
/// estimate.
pub fn doubling_simpson<F>(
    f: &F,
    a: f64,
    b: f64,
    initial_points: usize,
    tol: f64,
    max_doublings: u32,
) -> f64
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return 0.0;
    }
    let mut intervals = (initial_points.max(3) - 1).next_multiple_of(2);
    let mut h = (b - a) / intervals as f64;
    // Trapezoid sums: endpoints and interior nodes kept separately.
    let ends = f(a) + f(b);
    let mut interior: f64 = (1..intervals).map(|i| f(a + i as f64 * h)).sum();
    let mut trap = h * (0.5 * ends + interior);
    // Simpson from the trapezoid at half resolution.
    let half_trap = 2.0
        * h
        * (0.5 * ends
            + (1..intervals / 2)
                .map(|i| f(a + 2.0 * i as f64 * h))
                .sum::<f64>());
    let mut simpson = (4.0 * trap - half_trap) / 3.0;
    for _ in 0..max_doublings {
        let new_nodes: f64 = (0..intervals).map(|i| f(a + (i as f64 + 0.5) * h)).sum();
        interior += new_nodes;
        intervals *= 2;
        h *= 0.5;
        let next_trap = h * (0.5 * ends + interior);
        let next_simpson = (4.0 * next_trap - trap) / 3.0;
        let change = (next_simpson - simpson).abs();
        trap = next_trap;
        simpson = next_simpson;
        if change < tol {
            break;
        }
    }
    simpson
}

/// Shortest decimal rendering of `x` with at most `digits` significant
/// digits, like C's `%.{digits}g`.
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

//! Utilization estimates from independent binary probes.
//!
//! With `n` probes of which `y` saw a packet, the likelihood of `U` is
//! binomial, its maximizer is `y / n`, and the exact confidence limits are the
//! roots of the two binomial tail equations. Tail sums are evaluated in log
//! space so the root search stays well behaved at large `n`, where the tails
//! drop from 1 to 0 over a very short range of `U`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::invalid;
use crate::numeric::{bisect, log_sum_exp};
use crate::{Error, Result};

/// Absolute tolerance on `U` for the confidence-limit root search.
pub const BOUND_TOLERANCE: f64 = 1e-10;
/// Step budget for the confidence-limit root search.
pub const BOUND_MAX_STEPS: usize = 200;

/// Probe counts: `n` probes, `y` of which observed a packet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    n: u64,
    y: u64,
}

impl SampleCounts {
    pub fn new(y: u64, n: u64) -> Result<Self> {
        if y > n {
            return Err(invalid(format!("y = {y} exceeds n = {n}")));
        }
        Ok(Self { n, y })
    }

    /// Counts from per-probe occupancy indicators.
    pub fn from_indicators<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let (mut n, mut y) = (0, 0);
        for b in bits {
            n += 1;
            y += u64::from(b);
        }
        Self { n, y }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn y(&self) -> u64 {
        self.y
    }

    pub fn fraction(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(self.y as f64 / self.n as f64)
    }
}

/// Exact binomial confidence limits at reliability `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub gamma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Strict containment, matching `Pr(U_l < U < U_u) >= gamma`.
    pub fn contains(&self, u: f64) -> bool {
        self.lower < u && u < self.upper
    }
}

/// Variance of `Û` and its derivative with respect to `U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub var_abs: f64,
    /// `VAR(Û/U)`; absent when `U = 0`.
    pub var_rel: Option<f64>,
    /// `d VAR(Û) / dU`.
    pub sensitivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub u_hat: f64,
    pub n: u64,
    pub y: u64,
    pub var_abs: f64,
    pub var_rel: Option<f64>,
    pub sensitivity: f64,
    pub ci: Option<ConfidenceInterval>,
}

/// Busy-time estimate over an observation horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusyTimeStats {
    pub horizon_t: f64,
    pub tp_hat: f64,
    /// Plug-in variance `T̂p (T - T̂p) / n`.
    pub var_tp: f64,
    pub rel_var_tp: Option<f64>,
    pub mean_packet: Option<f64>,
    pub mean_gap: Option<f64>,
    /// Model-based relative variance `t̄b / (t̄p n)`.
    pub model_rel_var: Option<f64>,
    pub n_packets: Option<u64>,
    pub u_mc: Option<f64>,
}

impl BusyTimeStats {
    /// Attach the true busy time and packet count of the observed trace.
    pub fn with_trace_truth(mut self, busy_tp: f64, n_packets: u64) -> Self {
        self.u_mc = Some(busy_tp / self.horizon_t);
        self.n_packets = Some(n_packets);
        self
    }
}

fn check_probability(u: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid(format!("probability {u} outside [0, 1]")));
    }
    Ok(())
}

/// Log of the binomial term `C(n, i) u^i (1 - u)^(n - i)`.
fn ln_binomial_term(n: u64, i: u64, u: f64) -> f64 {
    let ln_c = ln_binomial(n, i);
    let a = if i == 0 { 0.0 } else { i as f64 * u.ln() };
    let b = if i == n {
        0.0
    } else {
        (n - i) as f64 * (-u).ln_1p()
    };
    ln_c + a + b
}

/// Probability of seeing exactly `y` busy probes out of `n` when the channel
/// utilization is `u`.
pub fn sample_likelihood(counts: SampleCounts, u: f64) -> Result<f64> {
    check_probability(u)?;
    Ok(ln_binomial_term(counts.n, counts.y, u).exp())
}

/// Maximum-likelihood utilization `y / n`.
pub fn mle_u(counts: SampleCounts) -> Result<f64> {
    counts.fraction()
}

pub fn variance_u(u: f64, n: u64) -> Result<VarianceSummary> {
    check_probability(u)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let n = n as f64;
    Ok(VarianceSummary {
        var_abs: u * (1.0 - u) / n,
        var_rel: (u > 0.0).then(|| (1.0 / u - 1.0) / n),
        sensitivity: (1.0 - 2.0 * u) / n,
    })
}

/// Estimate, variances and (optionally) confidence limits in one record.
pub fn summarize(counts: SampleCounts, gamma: Option<f64>) -> Result<EstimateSummary> {
    let u_hat = mle_u(counts)?;
    let var = variance_u(u_hat, counts.n)?;
    let ci = gamma.map(|g| confidence_bounds(counts, g)).transpose()?;
    Ok(EstimateSummary {
        u_hat,
        n: counts.n,
        y: counts.y,
        var_abs: var.var_abs,
        var_rel: var.var_rel,
        sensitivity: var.sensitivity,
        ci,
    })
}

/// Busy time `T̂p = T y / n` with its plug-in variance. When the model's mean
/// packet and gap durations are supplied, the model-based relative variance
/// is reported as well.
pub fn busy_time_stats(
    counts: SampleCounts,
    horizon_t: f64,
    model_means: Option<(f64, f64)>,
) -> Result<BusyTimeStats> {
    if !(horizon_t > 0.0 && horizon_t.is_finite()) {
        return Err(invalid(format!(
            "horizon must be positive, got {horizon_t}"
        )));
    }
    let u_hat = mle_u(counts)?;
    let n = counts.n as f64;
    let tp_hat = horizon_t * u_hat;
    let var_tp = tp_hat * (horizon_t - tp_hat) / n;
    let rel_var_tp = (tp_hat > 0.0).then(|| (horizon_t / tp_hat - 1.0) / n);
    let (mean_packet, mean_gap, model_rel_var) = match model_means {
        Some((tp, tb)) => {
            if !(tp > 0.0 && tb >= 0.0) {
                return Err(invalid("model means must be positive"));
            }
            (Some(tp), Some(tb), Some(tb / (tp * n)))
        }
        None => (None, None, None),
    };
    Ok(BusyTimeStats {
        horizon_t,
        tp_hat,
        var_tp: var_tp.max(0.0),
        rel_var_tp,
        mean_packet,
        mean_gap,
        model_rel_var,
        n_packets: None,
        u_mc: None,
    })
}

/// Gap rate estimate `λ̂ = (y/n) / (t̄p (1 - y/n))`.
pub fn rate_estimate(counts: SampleCounts, mean_packet: f64) -> Result<f64> {
    if !(mean_packet > 0.0) {
        return Err(invalid(format!(
            "mean packet length must be positive, got {mean_packet}"
        )));
    }
    let u = mle_u(counts)?;
    if counts.y == counts.n {
        return Err(Error::Saturated);
    }
    Ok(u / (mean_packet * (1.0 - u)))
}

/// `P(X <= y)` for `X ~ Bin(n, u)`.
pub fn lower_tail(n: u64, y: u64, u: f64) -> f64 {
    if u <= 0.0 {
        return 1.0;
    }
    if u >= 1.0 {
        return if y >= n { 1.0 } else { 0.0 };
    }
    let mut terms: Vec<f64> = (0..=y.min(n)).map(|i| ln_binomial_term(n, i, u)).collect();
    log_sum_exp(&mut terms).exp().min(1.0)
}

/// `P(X >= y)` for `X ~ Bin(n, u)`.
pub fn upper_tail(n: u64, y: u64, u: f64) -> f64 {
    if y == 0 {
        return 1.0;
    }
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let mut terms: Vec<f64> = (y..=n).map(|i| ln_binomial_term(n, i, u)).collect();
    log_sum_exp(&mut terms).exp().min(1.0)
}

/// Exact binomial confidence limits at reliability `gamma`.
///
/// The upper limit solves `(1-γ)/2 = P(X <= y; U)`, the lower limit solves
/// `(1-γ)/2 = P(X >= y; U)`. Both tails are strictly monotone in `U`, so a
/// bracketed bisection on `[0, 1]` always converges. `y = 0` pins the lower
/// limit to 0 and `y = n` pins the upper limit to 1.
pub fn confidence_bounds(counts: SampleCounts, gamma: f64) -> Result<ConfidenceInterval> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!(
            "reliability must lie in (0, 1), got {gamma}"
        )));
    }
    if counts.n == 0 {
        return Err(Error::EmptySample);
    }
    let (n, y) = (counts.n, counts.y);
    let alpha = 0.5 * (1.0 - gamma);
    let upper = if y == n {
        1.0
    } else {
        bisect(
            |u| lower_tail(n, y, u) - alpha,
            0.0,
            1.0,
            BOUND_TOLERANCE,
            BOUND_MAX_STEPS,
        )?
    };
    let lower = if y == 0 {
        0.0
    } else {
        bisect(
            |u| upper_tail(n, y, u) - alpha,
            0.0,
            1.0,
            BOUND_TOLERANCE,
            BOUND_MAX_STEPS,
        )?
    };
    Ok(ConfidenceInterval {
        gamma,
        lower,
        upper,
    })
}

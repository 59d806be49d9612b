//! Densities of alternating sums of packet lengths and gaps.
//!
//! `bf1(n, ·)` is the density of `n` packet lengths plus `n` gaps: the time
//! from a packet start to the start of the `(n+1)`-th packet. `bf2(n, ·)` adds
//! one more gap: the time from a gap start to the end of the `(n+1)`-th gap.
//! Three evaluators are provided: quadrature of the normal ⊗ Erlang closed
//! form, a moment-matched normal, and repeated discrete convolution on a grid.

use serde::{Deserialize, Serialize};

use crate::models::{DensityTable, GapModel, LengthModel, Moments, SourceModel};
use crate::numeric::{adaptive_simpson, bisect, erlang_ccdf, erlang_pdf, normal_pdf};
use crate::{Error, Result};

/// Absolute tolerance of the closed-form quadrature.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-8;
/// Grid points per resolution scale for default grids.
pub const DEFAULT_POINTS_PER_SCALE: f64 = 50.0;
/// Minimum grid points per resolution scale accepted by [`bf_grid`].
pub const MIN_POINTS_PER_SCALE: f64 = 20.0;
/// Tail mass left beyond the end of a default grid.
pub const DEFAULT_TAIL_MASS: f64 = 1e-9;

/// Which alternating sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BfKind {
    /// `n` lengths and `n` gaps (probe sequence starting at a packet).
    Bf1,
    /// `n` lengths and `n + 1` gaps (probe sequence starting at a gap).
    Bf2,
}

impl BfKind {
    pub fn gap_count(self, n: u32) -> u32 {
        match self {
            BfKind::Bf1 => n,
            BfKind::Bf2 => n + 1,
        }
    }
}

fn check_n(n: u32) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "segment count n must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Parameters of the normal ⊗ Erlang closed form, when the model has one.
fn closed_form_params(model: &SourceModel) -> Option<(f64, f64, f64)> {
    match (&model.length, &model.gap) {
        (LengthModel::Normal { mean, variance }, GapModel::Exponential { rate })
            if !model.length.is_truncated() =>
        {
            Some((*mean, *variance, *rate))
        }
        _ => None,
    }
}

/// Whether [`bf_closed_form`] applies to this model.
pub fn has_closed_form(model: &SourceModel) -> bool {
    closed_form_params(model).is_some()
}

/// `∫₀^y nor(z; nM, nV) · Erlang(k, λ)(y - z) dz` with `k = n` for `bf1` and
/// `k = n + 1` for `bf2`.
///
/// Only defined for normal lengths with exponential gaps; other models get
/// [`Error::NotApplicable`] and should use [`bf_grid`].
pub fn bf_closed_form(kind: BfKind, n: u32, model: &SourceModel, y: f64) -> Result<f64> {
    check_n(n)?;
    let (mean, variance, rate) = closed_form_params(model).ok_or(Error::NotApplicable(
        "closed form needs normal lengths and exponential gaps",
    ))?;
    Ok(closed_form_value(kind, n, mean, variance, rate, y))
}

pub(crate) fn closed_form_value(
    kind: BfKind,
    n: u32,
    mean: f64,
    variance: f64,
    rate: f64,
    y: f64,
) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let k = kind.gap_count(n);
    let mu = f64::from(n) * mean;
    let var = f64::from(n) * variance;
    let sd = var.sqrt();
    // The normal factor is negligible (< 1e-31) beyond 12 sd.
    let lo = (mu - 12.0 * sd).max(0.0);
    let hi = (mu + 12.0 * sd).min(y);
    if hi <= lo {
        return 0.0;
    }
    let integrand = |z: f64| normal_pdf(z, mu, var) * erlang_pdf(y - z, k, rate);
    adaptive_simpson(&integrand, lo, hi, CLOSED_FORM_TOLERANCE, 8).max(0.0)
}

/// Mean and variance of the alternating sum.
pub fn bf_moments(kind: BfKind, n: u32, moments: &Moments) -> (f64, f64) {
    let n_len = f64::from(n);
    let n_gap = f64::from(kind.gap_count(n));
    (
        n_len * moments.length_mean + n_gap * moments.gap_mean,
        n_len * moments.length_var + n_gap * moments.gap_var,
    )
}

/// Moment-matched normal density for the alternating sum.
pub fn bf_normal_approx(kind: BfKind, n: u32, moments: &Moments, y: f64) -> f64 {
    let (mean, var) = bf_moments(kind, n, moments);
    normal_pdf(y, mean, var)
}

/// Grid for [`bf_grid`]: points at `0, step, 2 step, ..., end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub step: f64,
    pub end: f64,
}

impl GridSpec {
    /// Step resolving both factor scales, support out to the `1 - 1e-9`
    /// quantile of the sum.
    pub fn default_for(kind: BfKind, n: u32, model: &SourceModel) -> Self {
        let step = default_step(model);
        let end = support_quantile(kind, n, model, DEFAULT_TAIL_MASS);
        Self { step, end }
    }

    pub fn len(&self) -> usize {
        (self.end / self.step).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub(crate) fn default_step(model: &SourceModel) -> f64 {
    model
        .length
        .resolution_scale()
        .min(model.gap.resolution_scale())
        / DEFAULT_POINTS_PER_SCALE
}

/// Upper point beyond which the alternating sum has at most `tail` mass
/// (split evenly between the length part and the gap part).
pub fn support_quantile(kind: BfKind, n: u32, model: &SourceModel, tail: f64) -> f64 {
    let n_len = f64::from(n);
    let gaps = kind.gap_count(n);
    let length_part = match &model.length {
        LengthModel::Normal { .. } => {
            // Φ(-6.2) ≈ 2.8e-10.
            n_len * model.length.mean() + 6.2 * (n_len * model.length.variance()).sqrt()
        }
        LengthModel::Discrete { atoms } => n_len * atoms.iter().map(|a| a.l).fold(0.0, f64::max),
    };
    let gap_part = match &model.gap {
        GapModel::Exponential { rate } => {
            let target = 0.5 * tail;
            let mut hi = (f64::from(gaps) + 10.0) / rate;
            while erlang_ccdf(hi, gaps, *rate) > target {
                hi *= 2.0;
            }
            bisect(
                |t| erlang_ccdf(t, gaps, *rate) - target,
                0.0,
                hi,
                1e-9 * hi,
                200,
            )
            .unwrap_or(hi)
        }
        GapModel::Tabulated { .. } => f64::from(gaps) * model.gap.support_end(),
    };
    length_part + gap_part
}

enum LengthKernel {
    Sampled(Vec<f64>),
    /// `(probability, shift in grid cells)`.
    Atoms(Vec<(f64, f64)>),
}

/// Repeated convolution on a grid starting at zero: begins with the gap
/// density, then alternately convolves with the length and gap densities.
///
/// Since every factor lives on `[0, ∞)`, truncating the grid at any end point
/// leaves the values on the grid exact up to discretization error.
pub(crate) struct CycleChain {
    step: f64,
    length: LengthKernel,
    gap: Vec<f64>,
    current: Vec<f64>,
}

impl CycleChain {
    pub(crate) fn new(model: &SourceModel, step: f64, points: usize) -> Self {
        let xs = (0..points).map(|i| i as f64 * step);
        let gap: Vec<f64> = xs.clone().map(|x| model.gap.pdf(x)).collect();
        let length = match &model.length {
            LengthModel::Normal { .. } => LengthKernel::Sampled(
                xs.map(|x| {
                    if x > 0.0 {
                        model.length.likelihood(x)
                    } else {
                        0.0
                    }
                })
                .collect(),
            ),
            LengthModel::Discrete { atoms } => LengthKernel::Atoms(
                atoms
                    .iter()
                    .map(|a| {
                        let s = a.l / step;
                        let snapped = if (s - s.round()).abs() < 1e-9 * s.max(1.0) {
                            s.round()
                        } else {
                            s
                        };
                        (a.p, snapped)
                    })
                    .collect(),
            ),
        };
        Self {
            step,
            current: gap.clone(),
            length,
            gap,
        }
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.current
    }

    pub(crate) fn step(&self) -> f64 {
        self.step
    }

    pub(crate) fn apply_length(&mut self) {
        self.current = match &self.length {
            LengthKernel::Sampled(kernel) => trapezoid_convolve(&self.current, kernel, self.step),
            LengthKernel::Atoms(atoms) => shift_mix(&self.current, atoms),
        };
    }

    pub(crate) fn apply_gap(&mut self) {
        self.current = trapezoid_convolve(&self.current, &self.gap, self.step);
    }

    fn into_table(self) -> DensityTable {
        DensityTable::new(self.step, 0.0, self.current)
    }
}

/// `(a ⊗ b)(x_m)` by the trapezoid rule on `[0, x_m]`.
fn trapezoid_convolve(a: &[f64], b: &[f64], step: f64) -> Vec<f64> {
    let n = a.len().min(b.len());
    (0..n)
        .map(|m| {
            if m == 0 {
                return 0.0;
            }
            let full: f64 = a[..=m]
                .iter()
                .zip(b[..=m].iter().rev())
                .map(|(x, y)| x * y)
                .sum();
            step * (full - 0.5 * (a[0] * b[m] + a[m] * b[0]))
        })
        .collect()
}

/// `Σ p · a(x - shift)` with linear interpolation between grid cells.
/// The jump a shift creates at an exact grid point takes the midpoint value,
/// which keeps trapezoid sums over the result unbiased.
fn shift_mix(a: &[f64], atoms: &[(f64, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for &(p, shift) in atoms {
        let whole = shift.floor();
        let frac = shift - whole;
        let whole = whole as usize;
        for (m, slot) in out.iter_mut().enumerate().skip(whole) {
            let i = m - whole;
            // a(x_i - frac): between a[i - 1] and a[i].
            let hi = a[i];
            let lo = if i > 0 { a[i - 1] } else { 0.0 };
            if i == 0 && frac == 0.0 {
                *slot += 0.5 * p * hi;
                continue;
            }
            *slot += p * (hi * (1.0 - frac) + lo * frac);
        }
    }
    out
}

/// Output of [`bf_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConvolution {
    /// Renormalized density.
    pub table: DensityTable,
    /// `|1 - mass|` of the raw convolution before renormalization.
    pub mass_error: f64,
}

/// Alternating sum density by repeated discrete convolution. Discrete length
/// factors are applied as exact shifts of the running density.
pub fn bf_grid(
    kind: BfKind,
    n: u32,
    model: &SourceModel,
    grid: &GridSpec,
) -> Result<GridConvolution> {
    check_n(n)?;
    if !(grid.step > 0.0 && grid.end > grid.step) {
        return Err(Error::InvalidArgument(format!("bad grid {grid:?}")));
    }
    let length_scale = model.length.resolution_scale();
    let gap_scale = model.gap.resolution_scale();
    if grid.step * MIN_POINTS_PER_SCALE > length_scale.min(gap_scale) * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!(
            "step {} leaves fewer than {MIN_POINTS_PER_SCALE} points per scale (length {length_scale}, gap {gap_scale})",
            grid.step
        )));
    }
    let mut chain = CycleChain::new(model, grid.step, grid.len());
    for i in 0..n {
        chain.apply_length();
        if i + 1 < n || kind == BfKind::Bf2 {
            chain.apply_gap();
        }
    }
    let mut table = chain.into_table();
    let mass = table.normalize();
    Ok(GridConvolution {
        table,
        mass_error: (1.0 - mass).abs(),
    })
}

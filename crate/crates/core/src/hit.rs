//! Probability that a probe lands in a packet a fixed distance after a
//! boundary, and the smallest probe spacing at which that probability has
//! settled to the stationary utilization.
//!
//! From a packet start, a probe `H` later is in a packet if the first packet
//! is longer than `H`, or if some number `n ≥ 1` of full (packet, gap) cycles
//! end at `y ≤ H` and the next packet covers `H - y`:
//!
//! ```text
//! s1(H) = QF(H) + Σₙ ∫₀^H QF(H - y) bf1(n, y) dy
//! s2(H) = ∫₀^H QF(H - y) b(y) dy + Σₙ ∫₀^H QF(H - y) bf2(n, y) dy
//! ```
//!
//! where `QF(z) = P(length > z)`. Both tend to `U = E[l] / (E[l] + E[τ])`.

use serde::{Deserialize, Serialize};

use crate::convolution::{bf_moments, closed_form_value, default_step, BfKind, CycleChain};
use crate::models::{GapModel, LengthModel, Moments, SourceModel};
use crate::numeric::{doubling_simpson, normal_cdf, normal_pdf};
use crate::{Error, Result};

/// Where the previous probe sat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    PacketStart,
    GapStart,
    /// `(s1 + s2) / 2`.
    Average,
}

/// Series and quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitOptions {
    /// Hard cap on the number of cycle terms.
    pub n_max: u32,
    /// A term below this ends the series (once its cycle sum has passed `H`).
    pub tail_tol: f64,
    /// Terms up to this `n` use exact cycle densities, later ones the normal approximation.
    pub exact_terms: u32,
    /// Initial Simpson nodes per term.
    pub quad_points: usize,
    /// Simpson doubling stops once successive estimates differ by less than this.
    pub quad_tol: f64,
}

impl Default for HitOptions {
    fn default() -> Self {
        Self {
            n_max: 64,
            tail_tol: 1e-6,
            exact_terms: 6,
            quad_points: 401,
            quad_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HitQuery<'a> {
    pub model: &'a SourceModel,
    pub spacing: f64,
    pub start: Start,
    pub options: HitOptions,
}

impl<'a> HitQuery<'a> {
    pub fn new(model: &'a SourceModel, spacing: f64, start: Start) -> Self {
        Self {
            model,
            spacing,
            start,
            options: HitOptions::default(),
        }
    }
}

/// Both boundary-start probabilities at one spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitValues {
    pub s1: f64,
    pub s2: f64,
    /// Number of cycle terms summed for `s1` and `s2`.
    pub terms: (u32, u32),
}

impl HitValues {
    pub fn combined(&self) -> f64 {
        0.5 * (self.s1 + self.s2)
    }

    pub fn get(&self, start: Start) -> f64 {
        match start {
            Start::PacketStart => self.s1,
            Start::GapStart => self.s2,
            Start::Average => self.combined(),
        }
    }
}

/// Stationary busy fraction `E[l] / (E[l] + E[τ])`.
pub fn ideal_u(model: &SourceModel) -> f64 {
    let m = model.moments();
    m.length_mean / (m.length_mean + m.gap_mean)
}

pub fn hit_probability(query: &HitQuery<'_>) -> Result<f64> {
    Ok(hit_values(query.model, query.spacing, &query.options)?.get(query.start))
}

/// `s1(H)` and `s2(H)` together.
pub fn hit_values(model: &SourceModel, spacing: f64, options: &HitOptions) -> Result<HitValues> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    if options.n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let ctx = SeriesContext {
        model,
        moments: model.moments(),
        h: spacing,
        options,
    };
    match (&model.length, &model.gap) {
        (LengthModel::Normal { mean, variance }, GapModel::Exponential { rate })
            if !model.length.is_truncated() =>
        {
            ctx.closed_form_series(*mean, *variance, *rate)
        }
        _ => ctx.grid_series(),
    }
}

struct SeriesContext<'a> {
    model: &'a SourceModel,
    moments: Moments,
    h: f64,
    options: &'a HitOptions,
}

/// Running sum of one series with the truncation rule.
struct Series {
    sum: f64,
    terms: u32,
    last: f64,
    done: bool,
}

impl Series {
    fn new(first: f64) -> Self {
        Self {
            sum: first,
            terms: 0,
            last: first,
            done: false,
        }
    }

    /// Adds term `n`; the series ends at the first small term whose cycle
    /// sum is already centred past `H` (earlier terms can be tiny simply
    /// because `n` cycles cannot fit in `H` yet).
    fn push(&mut self, n: u32, term: f64, cycle_mean: f64, h: f64, tol: f64) {
        self.sum += term;
        self.terms = n;
        self.last = term;
        if term.abs() < tol && cycle_mean >= h {
            self.done = true;
        }
    }

    fn finish(&self, n_max: u32) -> Result<f64> {
        if self.done {
            Ok(self.sum)
        } else {
            Err(Error::SeriesDiverged {
                terms: n_max as usize,
                partial_sum: self.sum,
                last_increment: self.last,
            })
        }
    }
}

impl SeriesContext<'_> {
    fn length(&self) -> &LengthModel {
        &self.model.length
    }

    /// Smallest `y` at which `QF(H - y)` is non-negligible.
    fn qf_window_start(&self) -> f64 {
        match self.length() {
            LengthModel::Normal { mean, variance } => self.h - (mean + 12.0 * variance.sqrt()),
            LengthModel::Discrete { atoms } => {
                self.h - atoms.iter().map(|a| a.l).fold(0.0, f64::max)
            }
        }
        .max(0.0)
    }

    fn integrate(&self, f: impl Fn(f64) -> f64, lo: f64) -> f64 {
        let lo = lo.max(self.qf_window_start());
        if lo >= self.h {
            return 0.0;
        }
        doubling_simpson(
            &f,
            lo,
            self.h,
            self.options.quad_points,
            self.options.quad_tol,
            7,
        )
    }

    /// `∫₀^H QF(H - y) nor(y; mean, var) dy`.
    fn normal_term(&self, mean: f64, var: f64) -> f64 {
        let sd = var.sqrt();
        match self.length() {
            LengthModel::Discrete { atoms } => atoms
                .iter()
                .map(|a| {
                    let lo = (self.h - a.l).max(0.0);
                    a.p * (normal_cdf(self.h, mean, var) - normal_cdf(lo, mean, var)).max(0.0)
                })
                .sum(),
            LengthModel::Normal { .. } => {
                let lo = (mean - 12.0 * sd).max(0.0);
                let hi = mean + 12.0 * sd;
                if lo >= self.h {
                    return 0.0;
                }
                let f = |y: f64| {
                    if y > hi {
                        0.0
                    } else {
                        self.length().ccdf(self.h - y) * normal_pdf(y, mean, var)
                    }
                };
                self.integrate(f, lo)
            }
        }
    }

    fn approx_term(&self, kind: BfKind, n: u32) -> f64 {
        let (mean, var) = bf_moments(kind, n, &self.moments);
        self.normal_term(mean, var)
    }

    fn cycle_mean(&self, kind: BfKind, n: u32) -> f64 {
        bf_moments(kind, n, &self.moments).0
    }

    fn closed_form_series(&self, mean: f64, variance: f64, rate: f64) -> Result<HitValues> {
        let qf = |y: f64| self.length().ccdf(self.h - y);
        let opts = self.options;
        let mut s1 = Series::new(qf(0.0));
        let first_gap = self.integrate(|y| qf(y) * rate * (-rate * y).exp(), 0.0);
        let mut s2 = Series::new(first_gap);
        for n in 1..=opts.n_max {
            for (kind, series) in [(BfKind::Bf1, &mut s1), (BfKind::Bf2, &mut s2)] {
                if series.done {
                    continue;
                }
                let term = if n <= opts.exact_terms {
                    let sum_lo = f64::from(n) * mean - 12.0 * (f64::from(n) * variance).sqrt();
                    self.integrate(
                        |y| qf(y) * closed_form_value(kind, n, mean, variance, rate, y),
                        sum_lo,
                    )
                } else {
                    self.approx_term(kind, n)
                };
                series.push(n, term, self.cycle_mean(kind, n), self.h, opts.tail_tol);
            }
            if s1.done && s2.done {
                break;
            }
        }
        Ok(HitValues {
            s1: s1.finish(opts.n_max)?,
            s2: s2.finish(opts.n_max)?,
            terms: (s1.terms, s2.terms),
        })
    }

    /// `∫₀^H QF(H - y) g(y) dy` for `g` tabulated on `[0, H]`.
    fn grid_term(&self, values: &[f64], step: f64) -> f64 {
        let last = values.len() - 1;
        match self.length() {
            LengthModel::Discrete { atoms } => {
                let mut cum = Vec::with_capacity(values.len());
                let mut acc = 0.0;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        acc += 0.5 * step * (values[i - 1] + v);
                    }
                    cum.push(acc);
                }
                let cum_at = |x: f64| {
                    let pos = x / step;
                    let i = (pos.floor() as usize).min(last);
                    if i == last {
                        return cum[last];
                    }
                    let frac = pos - i as f64;
                    // Integral of the linear interpolant up to x.
                    let v_x = values[i] * (1.0 - frac) + values[i + 1] * frac;
                    cum[i] + 0.5 * frac * step * (values[i] + v_x)
                };
                atoms
                    .iter()
                    .map(|a| a.p * (cum[last] - cum_at((self.h - a.l).max(0.0))))
                    .sum()
            }
            LengthModel::Normal { .. } => {
                let w = |i: usize| if i == 0 || i == last { 0.5 } else { 1.0 };
                step * values
                    .iter()
                    .enumerate()
                    .map(|(i, g)| w(i) * g * self.length().ccdf(self.h - i as f64 * step))
                    .sum::<f64>()
            }
        }
    }

    fn grid_series(&self) -> Result<HitValues> {
        let opts = self.options;
        let cells = ((self.h / default_step(self.model)).ceil() as usize).max(400);
        let step = self.h / cells as f64;
        let mut chain = CycleChain::new(self.model, step, cells + 1);
        let mut s1 = Series::new(self.length().ccdf(self.h));
        let mut s2 = Series::new(self.grid_term(chain.values(), chain.step()));
        for n in 1..=opts.n_max {
            let exact = n <= opts.exact_terms;
            if exact {
                chain.apply_length();
            }
            if !s1.done {
                let term = if exact {
                    self.grid_term(chain.values(), step)
                } else {
                    self.approx_term(BfKind::Bf1, n)
                };
                s1.push(
                    n,
                    term,
                    self.cycle_mean(BfKind::Bf1, n),
                    self.h,
                    opts.tail_tol,
                );
            }
            if exact {
                chain.apply_gap();
            }
            if !s2.done {
                let term = if exact {
                    self.grid_term(chain.values(), step)
                } else {
                    self.approx_term(BfKind::Bf2, n)
                };
                s2.push(
                    n,
                    term,
                    self.cycle_mean(BfKind::Bf2, n),
                    self.h,
                    opts.tail_tol,
                );
            }
            if s1.done && s2.done {
                break;
            }
        }
        Ok(HitValues {
            s1: s1.finish(opts.n_max)?,
            s2: s2.finish(opts.n_max)?,
            terms: (s1.terms, s2.terms),
        })
    }
}

/// One failed row of a [`HitCurve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub index: usize,
    pub message: String,
}

/// `s1`, `s2` and their average tabulated over spacings. Failed rows hold NaN
/// and are listed in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitCurve {
    pub spacings: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub combined: Vec<f64>,
    pub ideal_u: f64,
    pub failures: Vec<RowFailure>,
}

impl HitCurve {
    pub fn len(&self) -> usize {
        self.spacings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spacings.is_empty()
    }
}

fn check_grid(spacings: &[f64]) -> Result<()> {
    if spacings.is_empty() {
        return Err(Error::InvalidArgument("spacing grid is empty".into()));
    }
    if spacings.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidArgument("spacings must be positive".into()));
    }
    if spacings.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "spacings must be strictly ascending".into(),
        ));
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn evaluate_rows(
    model: &SourceModel,
    spacings: &[f64],
    options: &HitOptions,
) -> Vec<Result<HitValues>> {
    use rayon::prelude::*;
    spacings
        .par_iter()
        .map(|h| hit_values(model, *h, options))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_rows(
    model: &SourceModel,
    spacings: &[f64],
    options: &HitOptions,
) -> Vec<Result<HitValues>> {
    spacings
        .iter()
        .map(|h| hit_values(model, *h, options))
        .collect()
}

pub fn hit_curve(model: &SourceModel, spacings: &[f64], options: &HitOptions) -> Result<HitCurve> {
    check_grid(spacings)?;
    let rows = evaluate_rows(model, spacings, options);
    let mut curve = HitCurve {
        spacings: spacings.to_vec(),
        s1: Vec::with_capacity(rows.len()),
        s2: Vec::with_capacity(rows.len()),
        combined: Vec::with_capacity(rows.len()),
        ideal_u: ideal_u(model),
        failures: Vec::new(),
    };
    for (index, row) in rows.into_iter().enumerate() {
        match row {
            Ok(v) => {
                curve.s1.push(v.s1);
                curve.s2.push(v.s2);
                curve.combined.push(v.combined());
            }
            Err(e) => {
                curve.s1.push(f64::NAN);
                curve.s2.push(f64::NAN);
                curve.combined.push(f64::NAN);
                curve.failures.push(RowFailure {
                    index,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(curve)
}

/// How the spacing solver picks among grid points meeting the tolerance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingRule {
    /// Smallest grid spacing from which every larger grid spacing also meets
    /// the tolerance. Ignores early spacings where the averaged curve merely
    /// crosses `U` while consecutive probes are still strongly correlated.
    #[default]
    Settled,
    /// Smallest grid spacing meeting the tolerance.
    FirstCrossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacingResult {
    pub h_star: f64,
    /// Grid index of `h_star`.
    pub index: usize,
    /// `|P(h_star) - U|` with `P` the averaged hit probability.
    pub achieved_gap: f64,
    pub k_used: f64,
    /// Grid points evaluated.
    pub scanned: usize,
}

/// Smallest probe spacing on `grid` whose averaged hit probability is within
/// `k` of the ideal utilization, per `rule`. `k = 0` instead returns the grid
/// point with the smallest gap (first one on ties).
pub fn solve_min_spacing(
    model: &SourceModel,
    k: f64,
    grid: &[f64],
    rule: SpacingRule,
    options: &HitOptions,
) -> Result<SpacingResult> {
    check_grid(grid)?;
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be nonnegative, got {k}"
        )));
    }
    let target = ideal_u(model);
    let gap_at =
        |h: f64| -> Result<f64> { Ok((hit_values(model, h, options)?.combined() - target).abs()) };
    let mut best: Option<(usize, f64)> = None;
    let mut track = |i: usize, gap: f64| {
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((i, gap));
        }
    };
    let result = |index: usize, gap: f64, scanned: usize| SpacingResult {
        h_star: grid[index],
        index,
        achieved_gap: gap,
        k_used: k,
        scanned,
    };

    if k == 0.0 {
        for (i, h) in grid.iter().enumerate() {
            track(i, gap_at(*h)?);
        }
        let (i, g) = best.expect("grid is nonempty");
        return Ok(result(i, g, grid.len()));
    }

    match rule {
        SpacingRule::FirstCrossing => {
            for (i, h) in grid.iter().enumerate() {
                let gap = gap_at(*h)?;
                if gap < k {
                    return Ok(result(i, gap, i + 1));
                }
                track(i, gap);
            }
        }
        SpacingRule::Settled => {
            let mut settled: Option<(usize, f64)> = None;
            let mut scanned = 0;
            for (i, h) in grid.iter().enumerate().rev() {
                let gap = gap_at(*h)?;
                scanned += 1;
                track(i, gap);
                if gap >= k {
                    break;
                }
                settled = Some((i, gap));
            }
            if let Some((i, gap)) = settled {
                return Ok(result(i, gap, scanned));
            }
        }
    }
    let (i, g) = best.expect("grid is nonempty");
    Err(Error::NoSpacing {
        best_h: grid[i],
        best_gap: g,
    })
}

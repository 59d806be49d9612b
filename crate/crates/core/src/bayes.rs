//! Grid-based Bayesian refinement of source parameters from probe
//! observations, steering the probe spacing as the estimate sharpens.
//!
//! Each round takes the maximum a posteriori (MAP) cell, solves the minimum
//! independent spacing for it, moves the current spacing part way towards
//! that target, takes one probe and multiplies every cell by the probe's
//! likelihood `U^s (1 - U)^(1-s) f(l)^s`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::estimator::{summarize, EstimateSummary, SampleCounts};
use crate::hit::{ideal_u, solve_min_spacing, HitOptions, SpacingRule};
use crate::models::{GapModel, LengthModel, SourceModel};
use crate::{Error, Result};

/// Tolerance on `Σ mass = 1`.
pub const MASS_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_DAMPING: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_EPS: f64 = 0.02;

/// Evenly spaced parameter values `lower + r (upper - lower) / count` for
/// `r = 0..count`. The upper bound itself is never a grid value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: u32,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, count: u32) -> Result<Self> {
        let a = Self {
            lower,
            upper,
            count,
        };
        a.validate()?;
        Ok(a)
    }

    /// A single value.
    pub fn fixed(value: f64) -> Self {
        Self {
            lower: value,
            upper: value + value.abs().max(1.0),
            count: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(invalid(format!(
                "axis needs lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if self.count == 0 {
            return Err(invalid("axis needs at least one value"));
        }
        Ok(())
    }

    pub fn value(&self, r: u32) -> f64 {
        self.lower + f64::from(r) * (self.upper - self.lower) / f64::from(self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LengthFamily {
    Normal {
        mean: Axis,
        variance: Axis,
    },
    /// Same length law in every cell.
    Fixed {
        model: LengthModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GapFamily {
    Exponential { rate: Axis },
    Fixed { model: GapModel },
}

/// Cartesian grid over length parameters then gap parameters. Flat cell
/// indices run with the first axis most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterGrid {
    pub length: LengthFamily,
    pub gap: GapFamily,
}

impl ParameterGrid {
    pub fn axes(&self) -> Vec<(&'static str, Axis)> {
        let mut out = Vec::new();
        if let LengthFamily::Normal { mean, variance } = &self.length {
            out.push(("mean", *mean));
            out.push(("variance", *variance));
        }
        if let GapFamily::Exponential { rate } = &self.gap {
            out.push(("rate", *rate));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (_, a) in self.axes() {
            a.validate()?;
        }
        if let LengthFamily::Fixed { model } = &self.length {
            model.validate()?;
        }
        if let GapFamily::Fixed { model } = &self.gap {
            model.validate()?;
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.axes().iter().map(|(_, a)| a.count as usize).product()
    }

    /// Axis positions of a flat index.
    pub fn position(&self, mut index: usize) -> Vec<u32> {
        let axes = self.axes();
        let mut pos = vec![0; axes.len()];
        for (slot, (_, a)) in pos.iter_mut().zip(&axes).rev() {
            *slot = (index % a.count as usize) as u32;
            index /= a.count as usize;
        }
        pos
    }

    /// `(name, value)` for each axis at a cell.
    pub fn parameters(&self, index: usize) -> Vec<(&'static str, f64)> {
        self.axes()
            .iter()
            .zip(self.position(index))
            .map(|((name, a), r)| (*name, a.value(r)))
            .collect()
    }

    pub fn cell_model(&self, index: usize) -> Result<SourceModel> {
        let params = self.parameters(index);
        let get = |key: &str| {
            params
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, v)| *v)
                .expect("axis present")
        };
        let length = match &self.length {
            LengthFamily::Normal { .. } => LengthModel::normal(get("mean"), get("variance"))?,
            LengthFamily::Fixed { model } => model.clone(),
        };
        let gap = match &self.gap {
            GapFamily::Exponential { .. } => GapModel::exponential(get("rate"))?,
            GapFamily::Fixed { model } => model.clone(),
        };
        SourceModel::new(length, gap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    Uniform,
    Explicit(Vec<f64>),
}

/// One probe: `Busy` carries the observed packet length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "s", rename_all = "lowercase")]
pub enum Observation {
    Idle,
    Busy { length: f64 },
}

impl Observation {
    pub fn occupied(&self) -> bool {
        matches!(self, Observation::Busy { .. })
    }
}

/// Supplies one observation taken `spacing` after the previous one.
pub trait ObservationSource {
    fn next_observation(&mut self, spacing: f64) -> Result<Observation>;
}

impl<F: FnMut(f64) -> Result<Observation>> ObservationSource for F {
    fn next_observation(&mut self, spacing: f64) -> Result<Observation> {
        self(spacing)
    }
}

#[derive(Debug, Clone)]
struct Cell {
    model: SourceModel,
    u: f64,
}

/// Posterior over the grid plus the spacing loop's bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Snapshot", into = "Snapshot")]
pub struct BayesState {
    grid: ParameterGrid,
    mass: Vec<f64>,
    iteration: u64,
    current_h: Option<f64>,
    h_history: Vec<(u64, f64)>,
    u_history: Vec<f64>,
    counts: SampleCounts,
    damping: f64,
    cells: Vec<Option<CellCache>>,
}

#[derive(Debug, Clone)]
struct CellCache(Cell);

impl PartialEq for CellCache {
    fn eq(&self, other: &Self) -> bool {
        self.0.model == other.0.model
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    grid: ParameterGrid,
    mass: Vec<f64>,
    iteration: u64,
    current_h: Option<f64>,
    h_history: Vec<(u64, f64)>,
    u_history: Vec<f64>,
    n: u64,
    y: u64,
    damping: f64,
}

impl From<BayesState> for Snapshot {
    fn from(s: BayesState) -> Self {
        Self {
            n: s.counts.n(),
            y: s.counts.y(),
            grid: s.grid,
            mass: s.mass,
            iteration: s.iteration,
            current_h: s.current_h,
            h_history: s.h_history,
            u_history: s.u_history,
            damping: s.damping,
        }
    }
}

impl TryFrom<Snapshot> for BayesState {
    type Error = Error;

    fn try_from(s: Snapshot) -> Result<Self> {
        let mut state = build_state(s.grid, Prior::Explicit(s.mass.clone()))?;
        // Keep the stored mass verbatim rather than the renormalized copy.
        if (s.mass.iter().sum::<f64>() - 1.0).abs() > MASS_TOLERANCE {
            return Err(invalid("snapshot mass does not sum to one"));
        }
        state.mass = s.mass;
        state.iteration = s.iteration;
        state.current_h = s.current_h;
        state.h_history = s.h_history;
        state.u_history = s.u_history;
        state.counts = SampleCounts::new(s.y, s.n)?;
        state.set_damping(s.damping)?;
        if state.current_h.is_some_and(|h| !(h > 0.0)) {
            return Err(invalid("snapshot spacing must be positive"));
        }
        Ok(state)
    }
}

pub fn build_state(grid: ParameterGrid, prior: Prior) -> Result<BayesState> {
    grid.validate()?;
    let count = grid.cell_count();
    let cells: Vec<Option<CellCache>> = (0..count)
        .map(|i| {
            grid.cell_model(i).ok().map(|model| {
                CellCache(Cell {
                    u: ideal_u(&model),
                    model,
                })
            })
        })
        .collect();
    let mut mass = match prior {
        Prior::Uniform => vec![1.0; count],
        Prior::Explicit(m) => {
            if m.len() != count {
                return Err(invalid(format!(
                    "prior has {} entries for {count} cells",
                    m.len()
                )));
            }
            if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid("prior mass must be finite and nonnegative"));
            }
            m
        }
    };
    for (m, c) in mass.iter_mut().zip(&cells) {
        if c.is_none() {
            *m = 0.0;
        }
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(invalid("prior mass cannot be normalized"));
    }
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(BayesState {
        grid,
        mass,
        iteration: 0,
        current_h: None,
        h_history: Vec::new(),
        u_history: Vec::new(),
        counts: SampleCounts::default(),
        damping: DEFAULT_DAMPING,
        cells,
    })
}

/// MAP cell and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEstimate {
    pub index: usize,
    pub parameters: Vec<(String, f64)>,
    pub mass: f64,
    pub model: SourceModel,
}

impl BayesState {
    pub fn grid(&self) -> &ParameterGrid {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn current_h(&self) -> Option<f64> {
        self.current_h
    }

    pub fn h_history(&self) -> &[(u64, f64)] {
        &self.h_history
    }

    pub fn u_history(&self) -> &[f64] {
        &self.u_history
    }

    /// Occupancy counts over every observation so far.
    pub fn counts(&self) -> SampleCounts {
        self.counts
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn set_damping(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(format!("damping must be in (0, 1], got {alpha}")));
        }
        self.damping = alpha;
        Ok(())
    }

    /// `|Σ mass - 1|`.
    pub fn normalization_error(&self) -> f64 {
        (self.mass.iter().sum::<f64>() - 1.0).abs()
    }

    /// Largest-mass cell, smallest index on ties.
    pub fn map_index(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.mass.iter().enumerate() {
            if *m > self.mass[best] {
                best = i;
            }
        }
        best
    }

    pub fn map_estimate(&self) -> Result<MapEstimate> {
        let index = self.map_index();
        let model = match &self.cells[index] {
            Some(c) => c.0.model.clone(),
            None => self.grid.cell_model(index)?,
        };
        Ok(MapEstimate {
            index,
            parameters: self
                .grid
                .parameters(index)
                .into_iter()
                .map(|(n, v)| (n.to_string(), v))
                .collect(),
            mass: self.mass[index],
            model,
        })
    }

    fn log_likelihood(cell: &Cell, obs: &Observation) -> f64 {
        match obs {
            Observation::Idle => (1.0 - cell.u).ln(),
            Observation::Busy { length } => {
                cell.u.ln() + cell.model.length.likelihood(*length).ln()
            }
        }
    }

    /// Multiplies every cell by the observation's likelihood and
    /// renormalizes. Leaves the state untouched if no cell can explain the
    /// observation.
    pub fn posterior_update(&mut self, obs: &Observation) -> Result<()> {
        if let Observation::Busy { length } = obs {
            if !(*length > 0.0 && length.is_finite()) {
                return Err(invalid(format!(
                    "observed length must be positive, got {length}"
                )));
            }
        }
        let logs: Vec<f64> = self
            .mass
            .iter()
            .zip(&self.cells)
            .map(|(m, c)| match c {
                Some(c) if *m > 0.0 => m.ln() + Self::log_likelihood(&c.0, obs),
                _ => f64::NEG_INFINITY,
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::ModelMismatch(format!(
                "observation {obs:?} has zero likelihood in every cell"
            )));
        }
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        self.mass = weights.into_iter().map(|w| w / total).collect();
        self.iteration += 1;
        let (y, n) = (
            self.counts.y() + u64::from(obs.occupied()),
            self.counts.n() + 1,
        );
        self.counts = SampleCounts::new(y, n)?;
        Ok(())
    }

    /// Moves `current_h` towards `target` by the damping factor (all the way
    /// on the first call) and records it.
    pub fn steer_spacing(&mut self, target: f64) -> Result<f64> {
        if !(target > 0.0 && target.is_finite()) {
            return Err(invalid(format!(
                "target spacing must be positive, got {target}"
            )));
        }
        let h = match self.current_h {
            None => target,
            Some(h) => h + self.damping * (target - h),
        };
        self.current_h = Some(h);
        self.h_history.push((self.iteration, h));
        Ok(h)
    }

    /// Solves the spacing for the MAP cell and steers towards it.
    pub fn spacing_for_map(&mut self, policy: &mut SpacingPolicy) -> Result<f64> {
        let index = self.map_index();
        let target = policy.target(&self.grid, index)?;
        self.steer_spacing(target)
    }

    /// Appends the running `Û = y / n` to the checkpoint history.
    pub fn checkpoint(&mut self) -> Result<f64> {
        let u = self.counts.fraction()?;
        self.u_history.push(u);
        Ok(u)
    }

    pub fn check_h_ind(&self, window: usize, eps: f64) -> Result<Stability> {
        check_stability(&self.u_history, window, eps)
    }
}

/// Minimum-spacing settings for the MAP cell, memoized per cell.
///
/// A cell whose curve never settles within `k` on the grid (slowly mixing
/// hypotheses, usually visited only early in a run) gets the largest grid
/// spacing when `fallback` is set, instead of stopping the loop.
#[derive(Debug, Clone)]
pub struct SpacingPolicy {
    pub k: f64,
    pub grid: Vec<f64>,
    pub rule: SpacingRule,
    pub options: HitOptions,
    pub fallback: bool,
    cache: HashMap<usize, f64>,
}

impl SpacingPolicy {
    pub fn new(k: f64, grid: Vec<f64>) -> Self {
        Self {
            k,
            grid,
            rule: SpacingRule::default(),
            options: HitOptions::default(),
            fallback: true,
            cache: HashMap::new(),
        }
    }

    pub fn target(&mut self, grid: &ParameterGrid, index: usize) -> Result<f64> {
        if let Some(h) = self.cache.get(&index) {
            return Ok(*h);
        }
        let model = grid.cell_model(index)?;
        let h = match solve_min_spacing(&model, self.k, &self.grid, self.rule, &self.options) {
            Ok(r) => r.h_star,
            Err(Error::NoSpacing { .. }) if self.fallback => {
                self.grid.iter().copied().fold(f64::MIN, f64::max)
            }
            Err(e) => return Err(e),
        };
        self.cache.insert(index, h);
        Ok(h)
    }

    /// Number of cells solved so far.
    pub fn solved(&self) -> usize {
        self.cache.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    NotStable,
    InsufficientData,
}

/// Stable when the last `window` checkpoints all lie within relative
/// distance `eps` of their mean.
pub fn check_stability(history: &[f64], window: usize, eps: f64) -> Result<Stability> {
    if window < 2 {
        return Err(invalid("stability window must be at least 2"));
    }
    if history.len() < window {
        return Ok(Stability::InsufficientData);
    }
    let tail = &history[history.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    let worst = tail.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let stable = if mean == 0.0 {
        worst == 0.0
    } else {
        worst / mean.abs() < eps
    };
    Ok(if stable {
        Stability::Stable
    } else {
        Stability::NotStable
    })
}

/// Loop settings. `eps = 0` never declares stability, so the loop runs for
/// exactly `max_iter` observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub window: usize,
    pub eps: f64,
    pub max_iter: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            eps: DEFAULT_EPS,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub stability: Stability,
    /// Spacing at which the estimate settled.
    pub h_ind: Option<f64>,
    /// Estimate over every occupancy bit collected; `None` without data.
    pub summary: Option<EstimateSummary>,
    pub observations: u64,
}

/// Runs the spacing/observe/update loop on `state`.
pub fn run<S: ObservationSource + ?Sized>(
    state: &mut BayesState,
    source: &mut S,
    policy: &mut SpacingPolicy,
    settings: &RunSettings,
    gamma: f64,
) -> Result<RunOutcome> {
    if settings.window < 2 {
        return Err(invalid("stability window must be at least 2"));
    }
    let mut stability = Stability::NotStable;
    let mut h_ind = None;
    let mut taken = 0;
    while taken < settings.max_iter {
        let h = state.spacing_for_map(policy)?;
        let obs = source.next_observation(h)?;
        state.posterior_update(&obs)?;
        taken += 1;
        if state.counts.n().is_multiple_of(settings.window as u64) {
            state.checkpoint()?;
            if settings.eps > 0.0
                && state.check_h_ind(settings.window, settings.eps)? == Stability::Stable
            {
                stability = Stability::Stable;
                h_ind = Some(h);
                break;
            }
        }
    }
    let summary = if state.counts.n() > 0 {
        Some(summarize(state.counts, Some(gamma))?)
    } else {
        None
    };
    Ok(RunOutcome {
        stability,
        h_ind,
        summary,
        observations: taken,
    })
}

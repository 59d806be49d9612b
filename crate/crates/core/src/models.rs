//! Packet-length and gap densities of an on/off source.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::numeric::{normal_ccdf, normal_cdf, normal_pdf};
use crate::{Error, Result};

/// Negative-length mass above which a normal length model is rejected.
pub const MAX_NEGATIVE_MASS: f64 = 1e-6;
/// Negative-length mass above which the normal is truncated at zero and renormalized.
pub const TRUNCATION_THRESHOLD: f64 = 1e-12;
/// Tolerance on the total mass of a tabulated gap density.
pub const TABULATED_MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    /// Probability of this length.
    pub p: f64,
    /// Packet length.
    pub l: f64,
}

/// Packet-length distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LengthModel {
    /// Normal with the given mean and variance, truncated to positive lengths.
    Normal { mean: f64, variance: f64 },
    /// Finitely many packet lengths.
    Discrete { atoms: Vec<Atom> },
}

/// Idle-gap distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GapModel {
    Exponential {
        rate: f64,
    },
    /// Density samples at `0, step, 2 step, ...`, linearly interpolated and
    /// zero past the last sample.
    Tabulated {
        step: f64,
        values: Vec<f64>,
    },
}

/// Alternating renewal source: a gap, a packet, a gap, a packet, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawSourceModel")]
pub struct SourceModel {
    pub length: LengthModel,
    pub gap: GapModel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSourceModel {
    length: LengthModel,
    gap: GapModel,
}

impl TryFrom<RawSourceModel> for SourceModel {
    type Error = Error;

    fn try_from(raw: RawSourceModel) -> Result<Self> {
        SourceModel::new(raw.length, raw.gap)
    }
}

/// First two moments of the length and gap distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub length_mean: f64,
    pub length_var: f64,
    pub gap_mean: f64,
    pub gap_var: f64,
}

impl Moments {
    pub fn cycle_mean(&self) -> f64 {
        self.length_mean + self.gap_mean
    }

    pub fn cycle_var(&self) -> f64 {
        self.length_var + self.gap_var
    }
}

impl LengthModel {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        let m = LengthModel::Normal { mean, variance };
        m.validate()?;
        Ok(m)
    }

    pub fn discrete(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let m = LengthModel::Discrete {
            atoms: atoms.into_iter().map(|(p, l)| Atom { p, l }).collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LengthModel::Normal { mean, variance } => {
                if !(mean.is_finite() && variance.is_finite() && *mean > 0.0 && *variance > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "normal length needs mean > 0 and variance > 0, got ({mean}, {variance})"
                    )));
                }
                let neg = self.negative_mass();
                if neg >= MAX_NEGATIVE_MASS {
                    return Err(Error::InvalidModel(format!(
                        "normal length puts mass {neg:.3e} on negative lengths"
                    )));
                }
            }
            LengthModel::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidModel(
                        "discrete length needs at least one atom".into(),
                    ));
                }
                if atoms
                    .iter()
                    .any(|a| !(a.p > 0.0 && a.l > 0.0 && a.l.is_finite()))
                {
                    return Err(Error::InvalidModel(
                        "discrete atoms need p > 0 and l > 0".into(),
                    ));
                }
                let total: f64 = atoms.iter().map(|a| a.p).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidModel(format!(
                        "discrete atom probabilities sum to {total}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mass the untruncated normal puts below zero (0 for discrete lengths).
    pub fn negative_mass(&self) -> f64 {
        match self {
            LengthModel::Normal { mean, variance } => normal_cdf(0.0, *mean, *variance),
            LengthModel::Discrete { .. } => 0.0,
        }
    }

    /// Whether the normal is truncated at zero and renormalized.
    pub fn is_truncated(&self) -> bool {
        self.negative_mass() > TRUNCATION_THRESHOLD
    }

    fn normalizer(&self) -> f64 {
        if self.is_truncated() {
            1.0 - self.negative_mass()
        } else {
            1.0
        }
    }

    /// Density of a normal length; probability of an exactly matching atom
    /// for discrete lengths.
    pub fn likelihood(&self, l: f64) -> f64 {
        match self {
            LengthModel::Normal { mean, variance } => {
                if l <= 0.0 && self.is_truncated() {
                    0.0
                } else {
                    normal_pdf(l, *mean, *variance) / self.normalizer()
                }
            }
            LengthModel::Discrete { atoms } => atoms
                .iter()
                .filter(|a| (a.l - l).abs() <= 1e-9 * a.l.max(1.0))
                .map(|a| a.p)
                .sum(),
        }
    }

    /// `P(length > z)`.
    pub fn ccdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 1.0;
        }
        match self {
            LengthModel::Normal { mean, variance } => {
                (normal_ccdf(z, *mean, *variance) / self.normalizer()).min(1.0)
            }
            LengthModel::Discrete { atoms } => atoms.iter().filter(|a| a.l > z).map(|a| a.p).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            LengthModel::Normal { mean, variance } => {
                if self.is_truncated() {
                    let sd = variance.sqrt();
                    let alpha = -mean / sd;
                    let hazard = normal_pdf(alpha, 0.0, 1.0) / (1.0 - normal_cdf(alpha, 0.0, 1.0));
                    mean + sd * hazard
                } else {
                    *mean
                }
            }
            LengthModel::Discrete { atoms } => atoms.iter().map(|a| a.p * a.l).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            LengthModel::Normal { mean, variance } => {
                if self.is_truncated() {
                    let sd = variance.sqrt();
                    let alpha = -mean / sd;
                    let hazard = normal_pdf(alpha, 0.0, 1.0) / (1.0 - normal_cdf(alpha, 0.0, 1.0));
                    variance * (1.0 + alpha * hazard - hazard * hazard)
                } else {
                    *variance
                }
            }
            LengthModel::Discrete { atoms } => {
                let m = self.mean();
                atoms.iter().map(|a| a.p * (a.l - m).powi(2)).sum()
            }
        }
    }

    /// Smallest length scale the model varies over: the standard deviation
    /// of a normal, the closest atom spacing (or the single atom) otherwise.
    pub fn resolution_scale(&self) -> f64 {
        match self {
            LengthModel::Normal { variance, .. } => variance.sqrt(),
            LengthModel::Discrete { atoms } => {
                let mut ls: Vec<f64> = atoms.iter().map(|a| a.l).collect();
                ls.sort_by(f64::total_cmp);
                let min_gap = ls
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .filter(|d| *d > 0.0)
                    .fold(f64::INFINITY, f64::min);
                min_gap.min(ls[0])
            }
        }
    }

    /// Draw a length; negative normal draws are redrawn.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LengthModel::Normal { mean, variance } => {
                let dist = Normal::new(*mean, variance.sqrt()).expect("validated normal");
                loop {
                    let l = dist.sample(rng);
                    if l > 0.0 {
                        return l;
                    }
                }
            }
            LengthModel::Discrete { atoms } => {
                let mut u: f64 = rng.random();
                for a in atoms {
                    if u < a.p {
                        return a.l;
                    }
                    u -= a.p;
                }
                atoms[atoms.len() - 1].l
            }
        }
    }
}

/// Exact integrals over one linear piece `[a, b]` with end values `fa`, `fb`:
/// returns `(∫f, ∫t f, ∫t² f)`.
fn linear_piece_moments(a: f64, b: f64, fa: f64, fb: f64) -> (f64, f64, f64) {
    let h = b - a;
    let m0 = h * (fa + fb) / 2.0;
    let m1 = h / 6.0 * (fa * (2.0 * a + b) + fb * (a + 2.0 * b));
    let m2 = h / 12.0
        * (fa * (3.0 * a * a + 2.0 * a * b + b * b) + fb * (a * a + 2.0 * a * b + 3.0 * b * b));
    (m0, m1, m2)
}

impl GapModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        let m = GapModel::Exponential { rate };
        m.validate()?;
        Ok(m)
    }

    pub fn tabulated(step: f64, values: Vec<f64>) -> Result<Self> {
        let m = GapModel::Tabulated { step, values };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GapModel::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "gap rate must be positive, got {rate}"
                    )));
                }
            }
            GapModel::Tabulated { step, values } => {
                if !(step.is_finite() && *step > 0.0) {
                    return Err(Error::InvalidModel(
                        "tabulated gap step must be positive".into(),
                    ));
                }
                if values.len() < 2 {
                    return Err(Error::InvalidModel(
                        "tabulated gap needs at least two samples".into(),
                    ));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidModel(
                        "tabulated gap density must be nonnegative".into(),
                    ));
                }
                let mass = self.raw_moments().0;
                if (mass - 1.0).abs() > TABULATED_MASS_TOLERANCE {
                    return Err(Error::InvalidModel(format!(
                        "tabulated gap density integrates to {mass}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    fn raw_moments(&self) -> (f64, f64, f64) {
        match self {
            GapModel::Exponential { rate } => (1.0, 1.0 / rate, 2.0 / (rate * rate)),
            GapModel::Tabulated { step, values } => values
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let a = i as f64 * step;
                    linear_piece_moments(a, a + step, w[0], w[1])
                })
                .fold((0.0, 0.0, 0.0), |acc, m| {
                    (acc.0 + m.0, acc.1 + m.1, acc.2 + m.2)
                }),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            GapModel::Exponential { rate } => rate * (-rate * t).exp(),
            GapModel::Tabulated { step, values } => {
                let x = t / step;
                let i = x.floor() as usize;
                if i + 1 >= values.len() {
                    return if i + 1 == values.len() && x == i as f64 {
                        values[i]
                    } else {
                        0.0
                    };
                }
                let frac = x - i as f64;
                values[i] * (1.0 - frac) + values[i + 1] * frac
            }
        }
    }

    pub fn mean(&self) -> f64 {
        let (m0, m1, _) = self.raw_moments();
        m1 / m0
    }

    pub fn variance(&self) -> f64 {
        let (m0, m1, m2) = self.raw_moments();
        let mean = m1 / m0;
        m2 / m0 - mean * mean
    }

    /// Upper end of the support (infinite for exponential gaps).
    pub fn support_end(&self) -> f64 {
        match self {
            GapModel::Exponential { .. } => f64::INFINITY,
            GapModel::Tabulated { step, values } => step * (values.len() - 1) as f64,
        }
    }

    /// Time scale the density varies over.
    pub fn resolution_scale(&self) -> f64 {
        match self {
            GapModel::Exponential { rate } => 1.0 / rate,
            GapModel::Tabulated { step, .. } => self.variance().sqrt().max(*step),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            GapModel::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            GapModel::Tabulated { step, values } => {
                let total = self.raw_moments().0;
                let mut target: f64 = rng.random::<f64>() * total;
                for (i, w) in values.windows(2).enumerate() {
                    let piece = step * (w[0] + w[1]) / 2.0;
                    if target < piece || i + 2 == values.len() {
                        let target = target.min(piece);
                        // Solve fa x + (fb - fa) x² / (2 step) = target on [0, step].
                        let slope = (w[1] - w[0]) / step;
                        let x = if slope.abs() < 1e-14 {
                            if w[0] > 0.0 {
                                target / w[0]
                            } else {
                                0.5 * step
                            }
                        } else {
                            let disc = (w[0] * w[0] + 2.0 * slope * target).max(0.0);
                            (disc.sqrt() - w[0]) / slope
                        };
                        return i as f64 * step + x.clamp(0.0, *step);
                    }
                    target -= piece;
                }
                self.support_end()
            }
        }
    }
}

impl SourceModel {
    pub fn new(length: LengthModel, gap: GapModel) -> Result<Self> {
        length.validate()?;
        gap.validate()?;
        Ok(Self { length, gap })
    }

    /// Normal lengths with exponential gaps.
    pub fn normal_exponential(mean: f64, variance: f64, rate: f64) -> Result<Self> {
        Self::new(
            LengthModel::normal(mean, variance)?,
            GapModel::exponential(rate)?,
        )
    }

    pub fn moments(&self) -> Moments {
        Moments {
            length_mean: self.length.mean(),
            length_var: self.length.variance(),
            gap_mean: self.gap.mean(),
            gap_var: self.gap.variance(),
        }
    }
}

/// Free-function form of [`SourceModel::moments`].
pub fn moments(model: &SourceModel) -> Moments {
    model.moments()
}

/// `P(length > z)`.
pub fn ccdf_length(model: &LengthModel, z: f64) -> f64 {
    model.ccdf(z)
}

/// Density sampled on the grid `start + i * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub step: f64,
    pub start: f64,
    pub values: Vec<f64>,
}

impl DensityTable {
    pub fn new(step: f64, start: f64, values: Vec<f64>) -> Self {
        Self {
            step,
            start,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    /// Last grid abscissa.
    pub fn end(&self) -> f64 {
        self.x(self.values.len().saturating_sub(1))
    }

    /// Linear interpolation, zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let pos = (x - self.start) / self.step;
        if pos < 0.0 || self.values.is_empty() {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return if i + 1 == self.values.len() && pos == i as f64 {
                self.values[i]
            } else {
                0.0
            };
        }
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    fn trapezoid_weighted(&self, g: impl Fn(f64) -> f64) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let inner: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * g(self.x(i)))
            .sum();
        let ends = 0.5 * (self.values[0] * g(self.x(0)) + self.values[n - 1] * g(self.x(n - 1)));
        self.step * (inner - ends)
    }

    /// Trapezoid integral of the table.
    pub fn integral(&self) -> f64 {
        self.trapezoid_weighted(|_| 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.trapezoid_weighted(|x| x) / self.integral()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.trapezoid_weighted(|x| (x - m) * (x - m)) / self.integral()
    }

    /// Running trapezoid integral; entry `i` integrates up to `x(i)`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.values.len());
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                acc += 0.5 * self.step * (self.values[i - 1] + v);
            }
            out.push(acc);
        }
        out
    }

    /// Largest absolute difference to `f` over the grid points.
    pub fn sup_distance<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - f(self.x(i))).abs())
            .fold(0.0, f64::max)
    }

    /// Total-variation distance `½∫|p - f|` to `f` over the grid.
    pub fn tv_distance<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let diffs = DensityTable::new(
            self.step,
            self.start,
            self.values
                .iter()
                .enumerate()
                .map(|(i, v)| (v - f(self.x(i))).abs())
                .collect(),
        );
        0.5 * diffs.integral()
    }

    /// Scale values so the table integrates to one; returns the mass before scaling.
    pub fn normalize(&mut self) -> f64 {
        let mass = self.integral();
        if mass > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= mass);
        }
        mass
    }
}

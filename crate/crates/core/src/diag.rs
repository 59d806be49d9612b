//! Lag-1 independence diagnostics for a binary probe sequence.
//!
//! Bits use the convention `0` = packet observed, `1` = no packet. For
//! independent probes the conditional frequencies match the marginals
//! (`P(1) ≈ P(1|0) ≈ P(1|1)`) and consecutive pairs match products of
//! marginals (`P(x ∩ y) ≈ P(x) P(y)`).

use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::estimator::{confidence_bounds, ConfidenceInterval, SampleCounts};
use crate::sim::SampleRecord;
use crate::Result;

/// Intervals at least this wide make a relation too uncertain to decide.
pub const DECISIVE_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinarySequence {
    bits: Vec<u8>,
}

impl BinarySequence {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(i) = bits.iter().position(|b| *b > 1) {
            return Err(invalid(format!("bit {i} is {}, expected 0 or 1", bits[i])));
        }
        Ok(Self { bits })
    }

    /// Occupied probes become `0`, empty ones `1`.
    pub fn from_occupancy<I: IntoIterator<Item = bool>>(occupied: I) -> Self {
        Self {
            bits: occupied.into_iter().map(|o| u8::from(!o)).collect(),
        }
    }

    pub fn from_records(records: &[SampleRecord]) -> Self {
        Self::from_occupancy(records.iter().map(|r| r.occupied))
    }

    /// Parses `"1 1 0 0"`, `"1100"` or `"1,1,0,0"`.
    pub fn parse(text: &str) -> Result<Self> {
        let bits = text
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(invalid(format!(
                    "unexpected character '{other}' in bit sequence"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Raw numerators and denominators behind every frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub n: u64,
    pub ones: u64,
    pub zeros: u64,
    /// Symbol counts among the first `n - 1` positions.
    pub lead_ones: u64,
    pub lead_zeros: u64,
    /// `pair_xy`: positions `i` with `bit[i] = x` and `bit[i + 1] = y`.
    pub pair_11: u64,
    pub pair_10: u64,
    pub pair_01: u64,
    pub pair_00: u64,
}

impl PairCounts {
    pub fn pairs(&self) -> u64 {
        self.n - 1
    }
}

/// Conditionals divided by total symbol counts rather than transition
/// counts. Kept for comparison with hand-tallied tables; these need not sum
/// to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalCountConditionals {
    pub p1_given_0: f64,
    pub p1_given_1: f64,
    pub p0_given_0: f64,
    pub p0_given_1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Independent,
    Dependent,
    Inconclusive,
}

/// `p_a_given_b` is the frequency of `a` right after `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub p1: f64,
    pub p0: f64,
    pub p1_given_0: f64,
    pub p1_given_1: f64,
    pub p0_given_0: f64,
    pub p0_given_1: f64,
    pub j11: f64,
    pub j10: f64,
    pub j01: f64,
    pub j00: f64,
    pub total_count_conditionals: TotalCountConditionals,
    pub counts: PairCounts,
    pub verdict: Option<Verdict>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn pair_statistics(seq: &BinarySequence) -> Result<DiagnosticsReport> {
    let bits = seq.bits();
    if bits.len() < 2 {
        return Err(invalid("pair statistics need at least two bits"));
    }
    let n = bits.len() as u64;
    let ones = bits.iter().filter(|b| **b == 1).count() as u64;
    let mut pairs = [[0u64; 2]; 2];
    for w in bits.windows(2) {
        pairs[w[0] as usize][w[1] as usize] += 1;
    }
    let lead_ones = pairs[1][0] + pairs[1][1];
    let counts = PairCounts {
        n,
        ones,
        zeros: n - ones,
        lead_ones,
        lead_zeros: (n - 1) - lead_ones,
        pair_11: pairs[1][1],
        pair_10: pairs[1][0],
        pair_01: pairs[0][1],
        pair_00: pairs[0][0],
    };
    let c = &counts;
    Ok(DiagnosticsReport {
        p1: ratio(c.ones, n),
        p0: ratio(c.zeros, n),
        p1_given_0: ratio(c.pair_01, c.lead_zeros),
        p1_given_1: ratio(c.pair_11, c.lead_ones),
        p0_given_0: ratio(c.pair_00, c.lead_zeros),
        p0_given_1: ratio(c.pair_10, c.lead_ones),
        j11: ratio(c.pair_11, n - 1),
        j10: ratio(c.pair_10, n - 1),
        j01: ratio(c.pair_01, n - 1),
        j00: ratio(c.pair_00, n - 1),
        total_count_conditionals: TotalCountConditionals {
            p1_given_0: ratio(c.pair_01, c.zeros),
            p1_given_1: ratio(c.pair_11, c.ones),
            p0_given_0: ratio(c.pair_00, c.zeros),
            p0_given_1: ratio(c.pair_10, c.ones),
        },
        counts,
        verdict: None,
    })
}

/// One compared pair of intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub name: String,
    pub left: (f64, f64),
    pub right: (f64, f64),
    pub violated: bool,
}

impl RelationCheck {
    fn decisive(&self) -> bool {
        self.left.1 - self.left.0 < DECISIVE_WIDTH && self.right.1 - self.right.0 < DECISIVE_WIDTH
    }
}

fn interval(num: u64, den: u64, gamma: f64) -> Result<Option<ConfidenceInterval>> {
    if den == 0 {
        return Ok(None);
    }
    Ok(Some(confidence_bounds(
        SampleCounts::new(num, den)?,
        gamma,
    )?))
}

/// Every relation with a nonempty denominator: conditionals against
/// marginals and joints against products of marginals (the product side
/// uses products of the marginal bounds).
pub fn relation_checks(
    report: &DiagnosticsReport,
    gamma: f64,
    slack: f64,
) -> Result<Vec<RelationCheck>> {
    if !(slack >= 0.0) {
        return Err(invalid(format!("slack must be nonnegative, got {slack}")));
    }
    let c = &report.counts;
    let marginal1 = interval(c.ones, c.n, gamma)?.expect("n >= 2");
    let marginal0 = interval(c.zeros, c.n, gamma)?.expect("n >= 2");
    let bounds = |ci: &ConfidenceInterval| (ci.lower, ci.upper);
    let m = |bit: u8| {
        if bit == 1 {
            bounds(&marginal1)
        } else {
            bounds(&marginal0)
        }
    };

    let mut checks = Vec::new();
    let mut push = |name: String, left: Option<(f64, f64)>, right: (f64, f64)| {
        if let Some(left) = left {
            let violated = left.1 + slack < right.0 - slack || right.1 + slack < left.0 - slack;
            checks.push(RelationCheck {
                name,
                left,
                right,
                violated,
            });
        }
    };
    for (a, b, num, den) in [
        (1, 0, c.pair_01, c.lead_zeros),
        (1, 1, c.pair_11, c.lead_ones),
        (0, 0, c.pair_00, c.lead_zeros),
        (0, 1, c.pair_10, c.lead_ones),
    ] {
        push(
            format!("P({a}|{b}) vs P({a})"),
            interval(num, den, gamma)?.as_ref().map(bounds),
            m(a),
        );
    }
    for (x, y, num) in [
        (1, 1, c.pair_11),
        (1, 0, c.pair_10),
        (0, 1, c.pair_01),
        (0, 0, c.pair_00),
    ] {
        let (mx, my) = (m(x), m(y));
        push(
            format!("P({x}∩{y}) vs P({x})P({y})"),
            interval(num, c.n - 1, gamma)?.as_ref().map(bounds),
            (mx.0 * my.0, mx.1 * my.1),
        );
    }
    Ok(checks)
}

/// Independent when no relation is violated and every compared interval is
/// narrower than [`DECISIVE_WIDTH`]; dependent when some violated relation
/// has both intervals that narrow; otherwise inconclusive.
pub fn independence_verdict(report: &DiagnosticsReport, gamma: f64, slack: f64) -> Result<Verdict> {
    let checks = relation_checks(report, gamma, slack)?;
    if checks.iter().any(|c| c.violated && c.decisive()) {
        return Ok(Verdict::Dependent);
    }
    if checks.iter().all(|c| !c.violated && c.decisive()) {
        return Ok(Verdict::Independent);
    }
    Ok(Verdict::Inconclusive)
}

/// Statistics plus verdict in one call.
pub fn diagnose(seq: &BinarySequence, gamma: f64, slack: f64) -> Result<DiagnosticsReport> {
    let mut report = pair_statistics(seq)?;
    report.verdict = Some(independence_verdict(&report, gamma, slack)?);
    Ok(report)
}

/// Lag-1 sample autocorrelation; `None` for constant or too-short input.
pub fn lag1_autocorrelation(bits: &[u8]) -> Option<f64> {
    if bits.len() < 3 {
        return None;
    }
    let x: Vec<f64> = bits.iter().map(|b| f64::from(*b)).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if var == 0.0 {
        return None;
    }
    let cov: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    Some(cov / var)
}

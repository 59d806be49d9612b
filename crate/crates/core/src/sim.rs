//! Synthetic on/off traffic, probe sampling and Monte Carlo hit estimates.
//!
//! Traces alternate gap, packet, gap, packet, ... starting with a gap at time
//! zero. A probe exactly on a boundary belongs to the segment that starts
//! there, and a probe at the very end of a trace sees no packet.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{Observation, ObservationSource};
use crate::error::invalid;
use crate::hit::Start;
use crate::models::SourceModel;
use crate::numeric::format_significant;
use crate::{Error, Result};

/// RNG address: a master seed plus a stream id. Equal seeds give
/// bitwise-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub master: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(master: u64) -> Self {
        Self { master, stream: 0 }
    }

    pub fn with_stream(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }

    /// Independent sub-stream `i`, used to split work into units whose
    /// results do not depend on scheduling.
    pub fn child(&self, i: u64) -> Self {
        Self {
            master: self.master ^ splitmix(self.stream.wrapping_add(1)),
            stream: i,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    sum: f64,
    carry: f64,
}

impl Accumulator {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub gap: f64,
    pub packet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct TrafficTrace {
    segments: Vec<Segment>,
    total_t: f64,
    busy_tp: f64,
    /// Boundary times: `2i` ends gap `i`, `2i + 1` ends packet `i`.
    boundaries: Vec<f64>,
}

impl TryFrom<Vec<Segment>> for TrafficTrace {
    type Error = Error;

    fn try_from(segments: Vec<Segment>) -> Result<Self> {
        Self::from_segments(segments)
    }
}

impl From<TrafficTrace> for Vec<Segment> {
    fn from(t: TrafficTrace) -> Self {
        t.segments
    }
}

impl TrafficTrace {
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("trace needs at least one segment"));
        }
        let mut clock = Accumulator::default();
        let mut busy = Accumulator::default();
        let mut idle = Accumulator::default();
        let mut boundaries = Vec::with_capacity(2 * segments.len());
        for (i, s) in segments.iter().enumerate() {
            if !(s.gap > 0.0 && s.packet > 0.0 && s.gap.is_finite() && s.packet.is_finite()) {
                return Err(invalid(format!("segment {i} has a non-positive duration")));
            }
            clock.add(s.gap);
            boundaries.push(clock.value());
            clock.add(s.packet);
            boundaries.push(clock.value());
            busy.add(s.packet);
            idle.add(s.gap);
        }
        let busy_tp = busy.value();
        Ok(Self {
            segments,
            total_t: busy_tp + idle.value(),
            busy_tp,
            boundaries,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_t(&self) -> f64 {
        self.total_t
    }

    pub fn busy_tp(&self) -> f64 {
        self.busy_tp
    }

    pub fn idle_time(&self) -> f64 {
        self.total_t - self.busy_tp
    }

    pub fn n_packets(&self) -> u64 {
        self.segments.len() as u64
    }

    /// `busy_tp / total_t`.
    pub fn utilization(&self) -> f64 {
        self.busy_tp / self.total_t
    }

    /// Probe result at time `t`.
    pub fn probe(&self, t: f64) -> Result<SampleRecord> {
        if !(0.0..=self.total_t).contains(&t) {
            return Err(Error::ProbeOutOfRange {
                t,
                total: self.total_t,
            });
        }
        let idx = self.boundaries.partition_point(|b| *b <= t);
        let in_packet = idx % 2 == 1 && idx < self.boundaries.len();
        Ok(SampleRecord {
            t,
            occupied: in_packet,
            length: in_packet.then(|| self.segments[idx / 2].packet),
        })
    }

    /// CSV with a `gap,packet` header and 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "gap,packet")?;
        for s in &self.segments {
            writeln!(
                out,
                "{},{}",
                format_significant(s.gap, 12),
                format_significant(s.packet, 12)
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| invalid("empty trace file"))?
            .map_err(|e| invalid(e.to_string()))?;
        if header.trim() != "gap,packet" {
            return Err(invalid(format!(
                "expected header 'gap,packet', got '{}'",
                header.trim()
            )));
        }
        let mut segments = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| invalid(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = i + 2;
            let (gap, packet) = line
                .split_once(',')
                .ok_or_else(|| invalid(format!("line {row}: expected two columns")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("line {row}: bad number '{}'", s.trim())))
            };
            segments.push(Segment {
                gap: parse(gap)?,
                packet: parse(packet)?,
            });
        }
        Self::from_segments(segments)
    }
}

/// One probe. `length` is the containing packet's duration when occupied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: f64,
    pub occupied: bool,
    pub length: Option<f64>,
}

impl SampleRecord {
    pub fn observation(&self) -> Observation {
        match self.length {
            Some(length) => Observation::Busy { length },
            None => Observation::Idle,
        }
    }
}

pub fn generate_trace(model: &SourceModel, n_packets: u64, seed: Seed) -> Result<TrafficTrace> {
    if n_packets == 0 {
        return Err(invalid("n_packets must be at least 1"));
    }
    let mut rng = seed.rng();
    let segments = (0..n_packets)
        .map(|_| {
            let gap = positive(|| model.gap.sample(&mut rng));
            let packet = positive(|| model.length.sample(&mut rng));
            Segment { gap, packet }
        })
        .collect();
    TrafficTrace::from_segments(segments)
}

/// Zero-length draws (possible for discrete or tabulated laws at the edge)
/// would break segment ordering; redraw them.
fn positive(mut draw: impl FnMut() -> f64) -> f64 {
    loop {
        let v = draw();
        if v > 0.0 {
            return v;
        }
    }
}

/// Probes at `phase + i·spacing` for `i < n`.
pub fn sample_at_spacing(
    trace: &TrafficTrace,
    spacing: f64,
    n: u64,
    phase: f64,
) -> Result<Vec<SampleRecord>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if !(spacing > 0.0) || !(phase >= 0.0) {
        return Err(invalid("spacing must be positive and phase nonnegative"));
    }
    let last = phase + (n - 1) as f64 * spacing;
    if last > trace.total_t {
        return Err(Error::ProbeOutOfRange {
            t: last,
            total: trace.total_t,
        });
    }
    (0..n)
        .map(|i| trace.probe(phase + i as f64 * spacing))
        .collect()
}

/// `n` probes at i.i.d. uniform times on `[0, total_t]`, in draw order.
pub fn sample_uniform_random(
    trace: &TrafficTrace,
    n: u64,
    seed: Seed,
) -> Result<Vec<SampleRecord>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let mut rng = seed.rng();
    (0..n)
        .map(|_| trace.probe(rng.random::<f64>() * trace.total_t))
        .collect()
}

/// Trials per independently seeded unit of Monte Carlo work.
pub const TRIAL_CHUNK: u64 = 1024;

fn boundary_trial<R: Rng>(
    model: &SourceModel,
    spacing: f64,
    from_packet: bool,
    rng: &mut R,
) -> bool {
    let mut end = 0.0;
    let mut packet = from_packet;
    loop {
        end += if packet {
            positive(|| model.length.sample(rng))
        } else {
            positive(|| model.gap.sample(rng))
        };
        if end > spacing {
            return packet;
        }
        packet = !packet;
    }
}

fn count_hits(
    model: &SourceModel,
    spacing: f64,
    from_packet: bool,
    trials: u64,
    seed: Seed,
) -> u64 {
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let chunk = |c: u64| {
        let mut rng = seed.child(c).rng();
        let size = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
        (0..size)
            .filter(|_| boundary_trial(model, spacing, from_packet, &mut rng))
            .count() as u64
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..chunks).into_par_iter().map(chunk).sum()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..chunks).map(chunk).sum()
    }
}

/// Fraction of `trials` fresh boundary-started streams in which the point at
/// distance `spacing` lies in a packet. `Average` runs `trials` from each
/// boundary type and averages.
pub fn empirical_hit_probability(
    model: &SourceModel,
    spacing: f64,
    start: Start,
    trials: u64,
    seed: Seed,
) -> Result<f64> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if !(spacing >= 0.0 && spacing.is_finite()) {
        return Err(invalid(format!(
            "spacing must be nonnegative, got {spacing}"
        )));
    }
    let fraction = |from_packet: bool, seed: Seed| {
        count_hits(model, spacing, from_packet, trials, seed) as f64 / trials as f64
    };
    Ok(match start {
        Start::PacketStart => fraction(true, seed),
        Start::GapStart => fraction(false, seed),
        Start::Average => 0.5 * (fraction(true, seed.child(0)) + fraction(false, seed.child(1))),
    })
}

/// Endless probe stream over a lazily generated trace. The trace starts with
/// a gap; probes begin after `burn_in` time units.
#[derive(Debug, Clone)]
pub struct ProbeStream {
    model: SourceModel,
    rng: ChaCha8Rng,
    /// Current probe time and the segment containing it.
    t: f64,
    seg_end: f64,
    in_packet: bool,
    seg_len: f64,
    started: bool,
    burn_in: f64,
}

impl ProbeStream {
    pub fn new(model: SourceModel, seed: Seed, burn_in: f64) -> Self {
        let mut rng = seed.rng();
        let first = positive(|| model.gap.sample(&mut rng));
        Self {
            model,
            rng,
            t: 0.0,
            seg_end: first,
            in_packet: false,
            seg_len: first,
            started: false,
            burn_in: burn_in.max(0.0),
        }
    }

    /// Advances by `spacing` (the first call jumps to `burn_in`) and probes.
    pub fn next_record(&mut self, spacing: f64) -> Result<SampleRecord> {
        if !self.started {
            self.started = true;
            self.t = self.burn_in;
        } else {
            if !(spacing > 0.0 && spacing.is_finite()) {
                return Err(invalid(format!("spacing must be positive, got {spacing}")));
            }
            self.t += spacing;
        }
        while self.seg_end <= self.t {
            self.in_packet = !self.in_packet;
            self.seg_len = if self.in_packet {
                positive(|| self.model.length.sample(&mut self.rng))
            } else {
                positive(|| self.model.gap.sample(&mut self.rng))
            };
            self.seg_end += self.seg_len;
        }
        Ok(SampleRecord {
            t: self.t,
            occupied: self.in_packet,
            length: self.in_packet.then_some(self.seg_len),
        })
    }
}

impl ObservationSource for ProbeStream {
    fn next_observation(&mut self, spacing: f64) -> Result<Observation> {
        Ok(self.next_record(spacing)?.observation())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GapModel, LengthModel};

    fn fig13() -> SourceModel {
        SourceModel::normal_exponential(3.0, 0.1, 1.0).unwrap()
    }

    fn trace(pairs: &[(f64, f64)]) -> TrafficTrace {
        TrafficTrace::from_segments(
            pairs
                .iter()
                .map(|&(gap, packet)| Segment { gap, packet })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn traces_are_deterministic() {
        let a = generate_trace(&fig13(), 100, Seed::new(9)).unwrap();
        let b = generate_trace(&fig13(), 100, Seed::new(9)).unwrap();
        let c = generate_trace(&fig13(), 100, Seed::with_stream(9, 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let one = generate_trace(&fig13(), 1, Seed::new(1)).unwrap();
        assert_eq!(one.segments().len(), 1);
        assert!(generate_trace(&fig13(), 0, Seed::new(1)).is_err());
    }

    #[test]
    fn long_trace_utilization() {
        let t = generate_trace(&fig13(), 100_000, Seed::new(3)).unwrap();
        assert!((t.utilization() - 0.75).abs() < 0.01, "{}", t.utilization());
        assert_eq!(t.busy_tp() + t.idle_time(), t.total_t());
    }

    #[test]
    fn bookkeeping_does_not_drift() {
        let t = generate_trace(&fig13(), 1_000_000, Seed::new(4)).unwrap();
        let busy: f64 = t.segments().iter().map(|s| s.packet).sum();
        let idle: f64 = t.segments().iter().map(|s| s.gap).sum();
        assert!(((busy + idle) - t.total_t()).abs() / t.total_t() < 1e-9);
        let last = *t.boundaries.last().unwrap();
        assert!((last - t.total_t()).abs() / t.total_t() < 1e-12);
    }

    #[test]
    fn probe_lookup_and_boundaries() {
        let t = trace(&[(1.0, 2.0), (0.5, 4.0)]);
        assert!(!t.probe(0.0).unwrap().occupied);
        let r = t.probe(1.0).unwrap();
        assert!(r.occupied && r.length == Some(2.0));
        assert!(!t.probe(3.0).unwrap().occupied);
        assert_eq!(t.probe(4.0).unwrap().length, Some(4.0));
        assert_eq!(t.probe(5.5).unwrap().length, Some(4.0));
        assert!(!t.probe(7.5).unwrap().occupied);
        assert!(t.probe(7.6).is_err());
    }

    #[test]
    fn spacing_sampler_edges() {
        let t = trace(&[(1.0, 2.0), (0.5, 4.0)]);
        assert!(sample_at_spacing(&t, 1.0, 0, 0.0).unwrap().is_empty());
        let one = sample_at_spacing(&t, 100.0, 1, 2.0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].occupied);
        let r = sample_at_spacing(&t, 1.5, 5, 0.5).unwrap();
        let bits: Vec<bool> = r.iter().map(|s| s.occupied).collect();
        // 3.5 is the start of the second packet.
        assert_eq!(bits, [false, true, true, true, true]);
        assert!(matches!(
            sample_at_spacing(&t, 2.0, 5, 0.0),
            Err(Error::ProbeOutOfRange { .. })
        ));
    }

    #[test]
    fn uniform_probes_track_utilization() {
        let t = generate_trace(&fig13(), 20_000, Seed::new(5)).unwrap();
        let r = sample_uniform_random(&t, 100_000, Seed::new(6)).unwrap();
        let u = r.iter().filter(|s| s.occupied).count() as f64 / r.len() as f64;
        assert!((u - t.utilization()).abs() < 0.005);
        let saturated = trace(&[(1e-9, 1000.0)]);
        let r = sample_uniform_random(&saturated, 1000, Seed::new(1)).unwrap();
        assert!(r.iter().filter(|s| s.occupied).count() >= 999);
    }

    #[test]
    fn empirical_hits() {
        let m = fig13();
        assert_eq!(
            empirical_hit_probability(&m, 1e-12, Start::PacketStart, 1000, Seed::new(1)).unwrap(),
            1.0
        );
        let p = empirical_hit_probability(&m, 1.0, Start::GapStart, 100_000, Seed::new(2)).unwrap();
        assert!((p - (1.0 - (-1.0_f64).exp())).abs() < 0.005, "{p}");
        let a = empirical_hit_probability(&m, 3.0, Start::Average, 5000, Seed::new(3)).unwrap();
        let b = empirical_hit_probability(&m, 3.0, Start::Average, 5000, Seed::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let t = generate_trace(&fig13(), 50, Seed::new(8)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("gap,packet\n"));
        let back = TrafficTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.segments().len(), 50);
        for (a, b) in t.segments().iter().zip(back.segments()) {
            assert!((a.gap - b.gap).abs() <= 1e-11 * a.gap);
            assert!((a.packet - b.packet).abs() <= 1e-11 * a.packet);
        }
        assert!(TrafficTrace::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(TrafficTrace::read_csv("gap,packet\n1,-2\n".as_bytes()).is_err());
    }

    #[test]
    fn probe_stream_matches_trace_statistics() {
        let m = SourceModel::new(
            LengthModel::discrete([(1.0, 2.0)]).unwrap(),
            GapModel::exponential(0.5).unwrap(),
        )
        .unwrap();
        let mut s = ProbeStream::new(m.clone(), Seed::new(11), 100.0);
        let n = 50_000;
        let mut busy = 0;
        for _ in 0..n {
            let r = s.next_record(7.3).unwrap();
            if r.occupied {
                assert_eq!(r.length, Some(2.0));
                busy += 1;
            }
        }
        let u = f64::from(busy) / f64::from(n);
        assert!((u - 0.5).abs() < 0.01, "{u}");
        let mut again = ProbeStream::new(m, Seed::new(11), 100.0);
        let mut first = ProbeStream::new(again.model.clone(), Seed::new(11), 100.0);
        assert_eq!(
            again.next_record(1.0).unwrap(),
            first.next_record(1.0).unwrap()
        );
    }
}

//! Browser bindings. Every exported function takes plain numbers and returns
//! a JSON string for the page to plot; errors become JavaScript exceptions.

use binprobe_core::diag::{diagnose, lag1_autocorrelation, BinarySequence, DiagnosticsReport};
use binprobe_core::estimator::{sample_likelihood, summarize, EstimateSummary, SampleCounts};
use binprobe_core::hit::{
    hit_curve, ideal_u, solve_min_spacing, HitCurve, HitOptions, SpacingRule,
};
use binprobe_core::models::SourceModel;
use binprobe_core::sim::{generate_trace, sample_at_spacing, Seed};
use binprobe_core::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Coarser quadrature than the library default. Curves move by ~1e-7 and
/// render about ten times faster.
fn preview_options() -> HitOptions {
    HitOptions {
        quad_points: 51,
        quad_tol: 1e-4,
        ..HitOptions::default()
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct CurveView {
    pub curve: HitCurve,
    /// `None` when no grid spacing meets `k`.
    pub h_star: Option<f64>,
}

pub fn curve_view(
    mean: f64,
    variance: f64,
    rate: f64,
    h_max: f64,
    points: usize,
    k: f64,
) -> Result<CurveView> {
    let model = SourceModel::normal_exponential(mean, variance, rate)?;
    let points = points.clamp(2, 200);
    let spacings: Vec<f64> = (1..=points)
        .map(|i| h_max * i as f64 / points as f64)
        .collect();
    let opts = preview_options();
    let curve = hit_curve(&model, &spacings, &opts)?;
    let h_star = solve_min_spacing(&model, k, &spacings, SpacingRule::Settled, &opts)
        .ok()
        .map(|r| r.h_star);
    Ok(CurveView { curve, h_star })
}

/// Hit probabilities from packet and gap starts over `points` spacings up to
/// `h_max`, with the smallest settled spacing for tolerance `k`.
#[wasm_bindgen]
pub fn hit_curve_json(
    mean: f64,
    variance: f64,
    rate: f64,
    h_max: f64,
    points: usize,
    k: f64,
) -> std::result::Result<String, JsError> {
    to_js(curve_view(mean, variance, rate, h_max, points, k))
}

#[derive(Debug, Serialize)]
pub struct EstimateView {
    pub summary: EstimateSummary,
    pub u: Vec<f64>,
    /// Likelihood scaled to a peak of 1.
    pub likelihood: Vec<f64>,
}

pub fn estimate_view(y: u64, n: u64, gamma: f64) -> Result<EstimateView> {
    let counts = SampleCounts::new(y, n)?;
    let summary = summarize(counts, Some(gamma))?;
    let u: Vec<f64> = (0..=200).map(|i| f64::from(i) / 200.0).collect();
    let raw = u
        .iter()
        .map(|&x| sample_likelihood(counts, x))
        .collect::<Result<Vec<f64>>>()?;
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let likelihood = raw
        .iter()
        .map(|l| if peak > 0.0 { l / peak } else { 0.0 })
        .collect();
    Ok(EstimateView {
        summary,
        u,
        likelihood,
    })
}

/// Utilization estimate, exact confidence interval and likelihood curve.
#[wasm_bindgen]
pub fn estimate_json(y: u32, n: u32, gamma: f64) -> std::result::Result<String, JsError> {
    to_js(estimate_view(u64::from(y), u64::from(n), gamma))
}

#[derive(Debug, Serialize)]
pub struct ProbeView {
    pub ideal_u: f64,
    pub trace_u: f64,
    /// Occupancy per probe, 1 = packet seen.
    pub occupied: Vec<u8>,
    pub estimate: EstimateSummary,
    pub rho: Option<f64>,
    pub report: DiagnosticsReport,
}

pub fn probe_view(
    mean: f64,
    variance: f64,
    rate: f64,
    spacing: f64,
    probes: u32,
    seed: u64,
) -> Result<ProbeView> {
    let model = SourceModel::normal_exponential(mean, variance, rate)?;
    let probes = u64::from(probes.clamp(3, 20_000));
    let cycle = model.moments().cycle_mean();
    let packets = ((spacing * probes as f64 + cycle) / cycle * 1.3) as u64 + 50;
    let trace = generate_trace(&model, packets, Seed::new(seed))?;
    let samples = sample_at_spacing(&trace, spacing, probes, cycle)?;
    let occupied: Vec<u8> = samples.iter().map(|s| u8::from(s.occupied)).collect();
    let estimate = summarize(
        SampleCounts::from_indicators(samples.iter().map(|s| s.occupied)),
        Some(0.95),
    )?;
    let seq = BinarySequence::from_records(&samples);
    Ok(ProbeView {
        ideal_u: ideal_u(&model),
        trace_u: trace.utilization(),
        rho: lag1_autocorrelation(seq.bits()),
        report: diagnose(&seq, 0.95, 0.02)?,
        occupied,
        estimate,
    })
}

/// Probes a simulated trace at a fixed spacing and runs the independence
/// diagnostics on the resulting bits.
#[wasm_bindgen]
pub fn probe_json(
    mean: f64,
    variance: f64,
    rate: f64,
    spacing: f64,
    probes: u32,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(probe_view(
        mean,
        variance,
        rate,
        spacing,
        probes,
        u64::from(seed),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_for_default_model() {
        let v = curve_view(3.0, 0.1, 1.0, 20.0, 40, 0.02).unwrap();
        assert_eq!(v.curve.spacings.len(), 40);
        assert_eq!(v.curve.ideal_u, 0.75);
        assert_eq!(v.h_star, Some(11.5));
        assert!(curve_view(3.0, 0.1, -1.0, 20.0, 40, 0.02).is_err());
    }

    #[test]
    fn likelihood_peaks_at_estimate() {
        let v = estimate_view(5, 10, 0.95).unwrap();
        let top = v.likelihood.iter().position(|&l| l == 1.0).unwrap();
        assert_eq!(v.u[top], 0.5);
        assert!((v.summary.ci.unwrap().lower - 0.187086).abs() < 1e-6);
        assert!(estimate_view(11, 10, 0.95).is_err());
    }

    #[test]
    fn probes_are_reproducible() {
        let a = probe_view(3.0, 0.1, 1.0, 11.5, 500, 4).unwrap();
        let b = probe_view(3.0, 0.1, 1.0, 11.5, 500, 4).unwrap();
        assert_eq!(a.occupied, b.occupied);
        assert_eq!(a.occupied.len(), 500);
        assert!(a.report.verdict.is_some());
    }
}

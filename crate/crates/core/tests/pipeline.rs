use binprobe_core::diag::{diagnose, BinarySequence, Verdict};
use binprobe_core::estimator::{mle_u, rate_estimate, summarize, SampleCounts};
use binprobe_core::hit::{
    hit_probability, hit_values, ideal_u, solve_min_spacing, HitOptions, HitQuery, SpacingRule,
    Start,
};
use binprobe_core::models::{GapModel, LengthModel, SourceModel};
use binprobe_core::sim::{
    empirical_hit_probability, generate_trace, sample_at_spacing, sample_uniform_random, Seed,
};
use rand::Rng;

fn fig13() -> SourceModel {
    SourceModel::normal_exponential(3.0, 0.1, 1.0).unwrap()
}

fn fig7() -> SourceModel {
    SourceModel::normal_exponential(3.0, 0.1, 0.1).unwrap()
}

fn spacing_grid() -> Vec<f64> {
    (1..=40).map(|i| 0.5 * f64::from(i)).collect()
}

#[test]
fn estimator_is_unbiased() {
    let mut rng = Seed::new(1).rng();
    let (u, n, reps) = (0.3, 40u64, 10_000);
    let total: f64 = (0..reps)
        .map(|_| {
            let y = (0..n).filter(|_| rng.random::<f64>() < u).count() as u64;
            mle_u(SampleCounts::new(y, n).unwrap()).unwrap()
        })
        .sum();
    let bias = total / f64::from(reps) - u;
    let bound = 3.0 * (u * (1.0 - u) / (n as f64 * f64::from(reps))).sqrt();
    assert!(bias.abs() <= bound, "bias {bias} vs {bound}");
}

#[test]
fn uniform_probes_recover_rate() {
    let model = fig7();
    let trace = generate_trace(&model, 20_000, Seed::with_stream(2, 0)).unwrap();
    let samples = sample_uniform_random(&trace, 50_000, Seed::with_stream(2, 1)).unwrap();
    let counts = SampleCounts::from_indicators(samples.iter().map(|s| s.occupied));
    let s = summarize(counts, Some(0.95)).unwrap();
    assert!(s.ci.unwrap().contains(trace.utilization()));
    let lambda = rate_estimate(counts, 3.0).unwrap();
    assert!((lambda - 0.1).abs() < 0.005, "{lambda}");
}

fn assert_matches_simulation(model: &SourceModel, spacings: &[f64], tol: f64) {
    let opts = HitOptions::default();
    for (i, &h) in spacings.iter().enumerate() {
        let theory = hit_values(model, h, &opts).unwrap();
        let seed = i as u64;
        let s1 = empirical_hit_probability(
            model,
            h,
            Start::PacketStart,
            20_000,
            Seed::with_stream(seed, 0),
        )
        .unwrap();
        let s2 = empirical_hit_probability(
            model,
            h,
            Start::GapStart,
            20_000,
            Seed::with_stream(seed, 1),
        )
        .unwrap();
        assert!(
            (theory.s1 - s1).abs() <= tol,
            "H={h}: s1 {} vs {s1}",
            theory.s1
        );
        assert!(
            (theory.s2 - s2).abs() <= tol,
            "H={h}: s2 {} vs {s2}",
            theory.s2
        );
    }
}

#[test]
fn fig7_theory_matches_simulation() {
    assert_matches_simulation(&fig7(), &[1.0, 3.0, 5.0, 8.0, 10.0, 20.0], 0.03);
}

// Discrete lengths and a uniform tabulated gap go through the grid path.
#[test]
fn grid_model_matches_simulation() {
    let model = SourceModel::new(
        LengthModel::discrete([(0.5, 1.0), (0.5, 2.0)]).unwrap(),
        GapModel::tabulated(0.01, vec![1.0 / 1.5; 151]).unwrap(),
    )
    .unwrap();
    assert!((ideal_u(&model) - 1.5 / 2.25).abs() < 1e-3);
    assert_matches_simulation(&model, &[0.7, 1.5, 2.2, 4.0], 0.03);
}

#[test]
fn average_start_is_the_mean_of_both() {
    let model = fig13();
    let q = |start| HitQuery::new(&model, 2.5, start);
    let s1 = hit_probability(&q(Start::PacketStart)).unwrap();
    let s2 = hit_probability(&q(Start::GapStart)).unwrap();
    let avg = hit_probability(&q(Start::Average)).unwrap();
    assert!((avg - 0.5 * (s1 + s2)).abs() < 1e-15);
}

#[test]
fn solved_spacing_passes_diagnostics() {
    let model = fig13();
    let h = solve_min_spacing(
        &model,
        0.02,
        &spacing_grid(),
        SpacingRule::Settled,
        &HitOptions::default(),
    )
    .unwrap()
    .h_star;
    let trace = generate_trace(&model, 20_000, Seed::new(9)).unwrap();
    let samples = sample_at_spacing(&trace, h, 5000, 10.0).unwrap();
    let seq = BinarySequence::from_records(&samples);
    let report = diagnose(&seq, 0.95, 0.02).unwrap();
    assert_eq!(report.verdict, Some(Verdict::Independent));
}

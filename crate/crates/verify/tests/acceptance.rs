//! Acceptance suite. Every criterion runs, prints one PASS/FAIL line with
//! its measurements, and the test fails at the end if any criterion did.
//!
//! Run with `cargo test -p binprobe-verify --test acceptance -- --nocapture`
//! to see the report. Command-line criteria run the CLI in-process.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use binprobe_core::bayes::ObservationSource;
use binprobe_core::bayes::{
    build_state, Axis, GapFamily, LengthFamily, ParameterGrid, Prior, SpacingPolicy,
};
use binprobe_core::convolution::{
    bf_closed_form, bf_grid, bf_normal_approx, support_quantile, BfKind, GridSpec,
};
use binprobe_core::diag::{
    diagnose, lag1_autocorrelation, pair_statistics, BinarySequence, Verdict,
};
use binprobe_core::estimator::{confidence_bounds, mle_u, rate_estimate, variance_u, SampleCounts};
use binprobe_core::hit::{hit_curve, ideal_u, solve_min_spacing, HitOptions, SpacingRule};
use binprobe_core::models::{DensityTable, SourceModel};
use binprobe_core::sim::{
    generate_trace, sample_at_spacing, sample_uniform_random, ProbeStream, Seed,
};
use binprobe_core::Error;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fig13() -> SourceModel {
    SourceModel::normal_exponential(3.0, 0.1, 1.0).unwrap()
}

/// Runs the command line in-process and returns its exit code and output.
fn binprobe(args: &[&str]) -> (u8, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out");
    let mut argv = vec!["binprobe"];
    argv.extend(args);
    argv.extend(["--out", path.to_str().unwrap()]);
    let code = binprobe::main_with_args(argv);
    (code, std::fs::read_to_string(&path).unwrap_or_default())
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() <= limit_s
}

fn criterion_1() -> Outcome {
    let cfg = configs().join("fig13.json");
    let (code, stdout) = binprobe(&["ideal-u", "--config", cfg.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let cli_u = v["ideal_u"].as_f64().unwrap();
    let model = fig13();
    let start = Instant::now();
    let u = ideal_u(&model);
    let elapsed = start.elapsed();
    let pass = code == 0
        && (cli_u - 0.75).abs() <= 1e-12
        && (u - 0.75).abs() <= 1e-12
        && elapsed < Duration::from_millis(1);
    outcome(
        pass,
        format!("cli ideal_u = {cli_u}, library {u} in {elapsed:?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for name in ["fig7.json", "fig13.json"] {
        let cfg = configs().join(name);
        let (code, stdout) = binprobe(&[
            "curves",
            "--config",
            cfg.to_str().unwrap(),
            "--h",
            "1:10:1",
            "--sim-trials",
            "10000",
            "--seed",
            "7",
        ]);
        assert_eq!(code, 0);
        let mut lines = stdout.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
        let mut model_worst: f64 = 0.0;
        let mut rows = 0;
        for line in lines {
            let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            model_worst = model_worst
                .max((f[col("s1")] - f[col("s1_sim")]).abs())
                .max((f[col("s2")] - f[col("s2_sim")]).abs());
            rows += 1;
        }
        assert_eq!(rows, 10);
        parts.push(format!("{name}: max |theory - sim| = {model_worst:.4}"));
        worst = worst.max(model_worst);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 0.03 && within(elapsed, 60.0),
        format!("{} ({elapsed:.1?})", parts.join(", ")),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let n = 100u64;
    let experiments = 100_000;
    let mut parts = Vec::new();
    let mut pass = true;
    for (i, u) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        let mut rng = Seed::with_stream(3, i as u64).rng();
        let estimates: Vec<f64> = (0..experiments)
            .map(|_| (0..n).filter(|_| rng.random::<f64>() < u).count() as f64 / n as f64)
            .collect();
        let mean = estimates.iter().sum::<f64>() / experiments as f64;
        let var = estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (experiments - 1) as f64;
        let theory = variance_u(u, n).unwrap().var_abs;
        let rel = (var - theory).abs() / theory;
        pass &= rel <= 0.05;
        parts.push(format!("U={u}: rel err {rel:.4}"));
    }
    let elapsed = start.elapsed();
    outcome(
        pass && within(elapsed, 10.0),
        format!("{} ({elapsed:.1?})", parts.join(", ")),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (n, u, trials) = (50u64, 0.3, 10_000);
    let mut rng = Seed::new(4).rng();
    let mut covered = 0;
    for _ in 0..trials {
        let y = (0..n).filter(|_| rng.random::<f64>() < u).count() as u64;
        if confidence_bounds(SampleCounts::new(y, n).unwrap(), 0.95)
            .unwrap()
            .contains(u)
        {
            covered += 1;
        }
    }
    let coverage = f64::from(covered) / f64::from(trials);
    let mut endpoint_err: f64 = 0.0;
    for n in [1u64, 10, 50, 1000] {
        let edge = 0.025_f64.powf(1.0 / n as f64);
        let zero = confidence_bounds(SampleCounts::new(0, n).unwrap(), 0.95).unwrap();
        let full = confidence_bounds(SampleCounts::new(n, n).unwrap(), 0.95).unwrap();
        endpoint_err = endpoint_err
            .max(zero.lower.abs())
            .max((zero.upper - (1.0 - edge)).abs())
            .max((full.lower - edge).abs())
            .max((full.upper - 1.0).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        coverage >= 0.94 && endpoint_err <= 1e-9 && within(elapsed, 10.0),
        format!("coverage {coverage:.4}, endpoint err {endpoint_err:.2e} ({elapsed:.1?})"),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let model = fig13();
    let trace = generate_trace(&model, 100_000, Seed::with_stream(5, 0)).unwrap();
    let samples = sample_uniform_random(&trace, 100_000, Seed::with_stream(5, 1)).unwrap();
    let counts = SampleCounts::from_indicators(samples.iter().map(|s| s.occupied));
    let lambda = rate_estimate(counts, model.moments().length_mean).unwrap();
    let rel = (lambda - 1.0).abs();
    let elapsed = start.elapsed();
    outcome(
        rel <= 0.05 && within(elapsed, 10.0),
        format!("lambda_hat = {lambda:.4} ({elapsed:.1?})"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let trace = generate_trace(&fig13(), 10_000, Seed::with_stream(6, 0)).unwrap();
    let (t, tp) = (trace.total_t(), trace.busy_tp());
    let n = 100u64;
    let reps = 10_000u64;
    let estimates: Vec<f64> = (0..reps)
        .map(|r| {
            let s = sample_uniform_random(&trace, n, Seed::with_stream(6, r + 1)).unwrap();
            t * s.iter().filter(|x| x.occupied).count() as f64 / n as f64
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let var = estimates
        .iter()
        .map(|e| (e - mean) * (e - mean))
        .sum::<f64>()
        / (reps - 1) as f64;
    let theory = tp * (t - tp) / n as f64;
    let rel = (var - theory).abs() / theory;
    let elapsed = start.elapsed();
    outcome(
        rel <= 0.05 && within(elapsed, 10.0),
        format!("rel err {rel:.4} ({elapsed:.1?})"),
    )
}

/// Exhaustive reading of the solver contract: the smallest grid index from
/// which every remaining grid point is within `k`.
fn settled_oracle(gaps: &[f64], k: f64) -> Option<usize> {
    let mut answer = None;
    for i in (0..gaps.len()).rev() {
        if gaps[i] < k {
            answer = Some(i);
        } else {
            break;
        }
    }
    answer
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = Seed::new(7).rng();
    let opts = HitOptions::default();
    let mut mismatches = Vec::new();
    let mut found = 0;
    for instance in 0..20 {
        let mean = rng.random_range(1.0..5.0);
        // Keep the normal length well clear of negative values.
        let variance = rng.random_range(0.05..0.5_f64).min(mean * mean / 25.0);
        let rate = rng.random_range(0.3..2.0);
        let model = SourceModel::normal_exponential(mean, variance, rate).unwrap();
        let k = rng.random_range(0.005..0.08);
        let first = rng.random_range(0.2..2.0);
        let step = rng.random_range(0.3..1.2);
        let len = rng.random_range(8..16);
        let grid: Vec<f64> = (0..len).map(|i| first + i as f64 * step).collect();
        let u = ideal_u(&model);
        let curve = hit_curve(&model, &grid, &opts).unwrap();
        let gaps: Vec<f64> = curve.combined.iter().map(|p| (p - u).abs()).collect();
        let expected = settled_oracle(&gaps, k);
        let got = match solve_min_spacing(&model, k, &grid, SpacingRule::Settled, &opts) {
            Ok(r) => Some(r.index),
            Err(Error::NoSpacing { .. }) => None,
            Err(e) => panic!("instance {instance}: {e}"),
        };
        found += usize::from(expected.is_some());
        if got != expected {
            mismatches.push(format!("#{instance}: {got:?} vs {expected:?}"));
        }
        let first_expected = gaps.iter().position(|g| *g < k);
        let first_got = solve_min_spacing(&model, k, &grid, SpacingRule::FirstCrossing, &opts)
            .ok()
            .map(|r| r.index);
        if first_got != first_expected {
            mismatches.push(format!(
                "#{instance} first-crossing: {first_got:?} vs {first_expected:?}"
            ));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches.is_empty() && within(elapsed, 30.0),
        format!("20 instances ({found} solvable), mismatches: {mismatches:?} ({elapsed:.1?})"),
    )
}

fn closed_form_table(kind: BfKind, n: u32, model: &SourceModel, step: f64) -> DensityTable {
    let end = support_quantile(kind, n, model, 1e-9);
    let points = (end / step).ceil() as usize + 1;
    let values = (0..points)
        .map(|i| bf_closed_form(kind, n, model, i as f64 * step).unwrap())
        .collect();
    DensityTable::new(step, 0.0, values)
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let model = fig13();
    let mut sup: f64 = 0.0;
    for n in 1..=3 {
        for kind in [BfKind::Bf1, BfKind::Bf2] {
            let grid = GridSpec::default_for(kind, n, &model);
            let table = bf_grid(kind, n, &model, &grid).unwrap().table;
            sup = sup.max(table.sup_distance(|y| bf_closed_form(kind, n, &model, y).unwrap()));
        }
    }
    let moments = model.moments();
    let tv = |n: u32| {
        closed_form_table(BfKind::Bf1, n, &model, 0.01)
            .tv_distance(|y| bf_normal_approx(BfKind::Bf1, n, &moments, y))
    };
    let (tv7, tv12) = (tv(7), tv(12));
    let elapsed = start.elapsed();
    outcome(
        sup <= 1e-3 && tv7 <= 0.05 && tv12 < tv7 && within(elapsed, 30.0),
        format!("sup-norm {sup:.2e}, TV(n=7) = {tv7:.4} (limit 0.05), TV(n=12) = {tv12:.4} ({elapsed:.1?})"),
    )
}

fn criterion_9() -> Outcome {
    let seq = BinarySequence::parse("1 1 0 0 0 1 0 0 0 1 0 0 1 0 0").unwrap();
    let r = pair_statistics(&seq).unwrap();
    let pass = r.p1 == 5.0 / 15.0 && r.j00 == 6.0 / 14.0 && r.j01 == 3.0 / 14.0;
    outcome(
        pass,
        format!("p1 = {}, j00 = {}, j01 = {}", r.p1, r.j00, r.j01),
    )
}

fn spacing_grid() -> Vec<f64> {
    (1..=40).map(|i| 0.5 * f64::from(i)).collect()
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let model = fig13();
    let h_star = solve_min_spacing(
        &model,
        0.02,
        &spacing_grid(),
        SpacingRule::Settled,
        &HitOptions::default(),
    )
    .unwrap()
    .h_star;
    let run = |h: f64, stream: u64| {
        let (mut independent, mut dependent, mut small_rho, mut rho_sum) = (0, 0, 0, 0.0);
        for seed in 0..100 {
            let mut probes = ProbeStream::new(model.clone(), Seed::with_stream(seed, stream), 50.0);
            let occupied: Vec<bool> = (0..5000)
                .map(|_| probes.next_record(h).unwrap().occupied)
                .collect();
            let seq = BinarySequence::from_occupancy(occupied);
            let rho = lag1_autocorrelation(seq.bits()).unwrap();
            rho_sum += rho;
            let verdict = diagnose(&seq, 0.95, 0.02).unwrap().verdict.unwrap();
            independent += u32::from(verdict == Verdict::Independent && rho.abs() < 0.05);
            dependent += u32::from(verdict == Verdict::Dependent);
            small_rho += u32::from(rho.abs() < 0.05);
        }
        (independent, dependent, small_rho, rho_sum / 100.0)
    };
    let (ind, _, small, rho_at) = run(h_star, 1);
    let (_, dep, _, rho_tenth) = run(h_star / 10.0, 2);
    let elapsed = start.elapsed();
    outcome(
        ind >= 90 && dep >= 90 && within(elapsed, 120.0),
        format!(
            "H* = {h_star}: independent & |rho|<0.05 in {ind}/100 (|rho|<0.05 in {small}, mean rho {rho_at:.3}); \
             H*/10: dependent in {dep}/100 (mean rho {rho_tenth:.3}) ({elapsed:.1?})"
        ),
    )
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let truth = fig13();
    let grid = ParameterGrid {
        length: LengthFamily::Normal {
            mean: Axis::new(2.0, 5.0, 3).unwrap(),
            variance: Axis::fixed(0.1),
        },
        gap: GapFamily::Exponential {
            rate: Axis::new(0.5, 2.0, 3).unwrap(),
        },
    };
    let true_cell = (0..grid.cell_count())
        .find(|i| grid.cell_model(*i).unwrap() == truth)
        .unwrap();
    let mut policy = SpacingPolicy::new(0.02, spacing_grid());
    let mut hits = 0;
    let mut worst_norm: f64 = 0.0;
    for seed in 0..100 {
        let mut state = build_state(grid.clone(), Prior::Uniform).unwrap();
        let mut source = ProbeStream::new(truth.clone(), Seed::with_stream(seed, 11), 50.0);
        for _ in 0..2000 {
            let h = state.spacing_for_map(&mut policy).unwrap();
            let obs = source.next_observation(h).unwrap();
            state.posterior_update(&obs).unwrap();
            worst_norm = worst_norm.max(state.normalization_error());
        }
        hits += u32::from(state.map_index() == true_cell);
    }
    let elapsed = start.elapsed();
    outcome(
        hits >= 80 && worst_norm < 1e-9 && within(elapsed, 120.0),
        format!(
            "MAP on true cell in {hits}/100, worst |sum - 1| = {worst_norm:.1e} ({elapsed:.1?})"
        ),
    )
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let fig13 = configs().join("fig13.json");
    let bayes = configs().join("bayes_fig13.json");
    let (fig13, bayes) = (fig13.to_str().unwrap(), bayes.to_str().unwrap());
    let runs: Vec<(&str, Vec<&str>)> = vec![
        (
            "curves",
            vec![
                "curves",
                "--config",
                fig13,
                "--h",
                "1:6:1",
                "--sim-trials",
                "2000",
                "--seed",
                "12",
            ],
        ),
        (
            "simulate",
            vec![
                "simulate",
                "--config",
                fig13,
                "--packets",
                "2000",
                "--uniform",
                "500",
                "--seed",
                "12",
                "--format",
                "csv",
            ],
        ),
        (
            "simulate-json",
            vec![
                "simulate",
                "--config",
                fig13,
                "--packets",
                "500",
                "--spacing",
                "11.5",
                "--probes",
                "100",
                "--seed",
                "3",
            ],
        ),
        (
            "bayes",
            vec![
                "bayes",
                "--config",
                bayes,
                "--observations",
                "300",
                "--eps",
                "0",
                "--seed",
                "12",
            ],
        ),
        (
            "estimate",
            vec!["estimate", "--y", "30", "--n", "100", "--gamma", "0.99"],
        ),
        (
            "diagnose",
            vec![
                "diagnose",
                "--bits",
                "1 1 0 0 0 1 0 0 0 1 0 0 1 0 0",
                "--format",
                "csv",
            ],
        ),
        (
            "solve-spacing",
            vec![
                "solve-spacing",
                "--config",
                fig13,
                "--k",
                "0.02",
                "--h-grid",
                "0.5:20:0.5",
            ],
        ),
    ];
    let mut differing = Vec::new();
    for (name, args) in &runs {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let path = dir.path().join(format!("{name}-{attempt}.out"));
            let mut full = vec!["binprobe"];
            full.extend(args.iter().copied());
            full.extend(["--out", path.to_str().unwrap()]);
            assert_eq!(binprobe::main_with_args(full), 0, "{name}");
            outputs.push(std::fs::read(&path).unwrap());
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            differing.push(*name);
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{} seeded commands run twice, differing: {differing:?}",
            runs.len()
        ),
    )
}

// Supplementary invariants whose thresholds sit close to what the model allows.

fn closure_invariant() -> Outcome {
    let start = Instant::now();
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
    let u = ideal_u(&model);
    let n = 2000u64;
    let packets = (n as f64 * h / 4.0 * 1.2) as u64 + 100;
    let ci = confidence_bounds(
        SampleCounts::new((u * n as f64).round() as u64, n).unwrap(),
        0.99,
    )
    .unwrap();
    let mut inside = 0;
    for seed in 0..100 {
        let trace = generate_trace(&model, packets, Seed::new(seed)).unwrap();
        let samples = sample_at_spacing(&trace, h, n, 50.0).unwrap();
        let u_hat = mle_u(SampleCounts::from_indicators(
            samples.iter().map(|s| s.occupied),
        ))
        .unwrap();
        inside += u32::from(ci.contains(u_hat));
    }
    let elapsed = start.elapsed();
    outcome(
        inside >= 99,
        format!(
            "U_hat at H* = {h} inside the 0.99 interval of U in {inside}/100 runs ({elapsed:.1?})"
        ),
    )
}

fn correlation_invariant() -> Outcome {
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
    let trace = generate_trace(&model, 20_000, Seed::new(10)).unwrap();
    let rho = |spacing: f64| {
        let samples = sample_at_spacing(&trace, spacing, 5000, 10.0).unwrap();
        lag1_autocorrelation(BinarySequence::from_records(&samples).bits()).unwrap()
    };
    let (at, tenth) = (rho(h), rho(h / 10.0));
    outcome(
        at.abs() < 0.05 && tenth.abs() > 0.2,
        format!("lag-1 rho = {at:.4} at H* (limit 0.05), {tenth:.4} at H*/10 (needs > 0.2)"),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn report(label: &str, checks: &[Check], failed: &mut Vec<String>) {
    for (i, (name, check)) in checks.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{label} {:>2} [{tag}] {name}: {}", i + 1, result.detail);
        if !result.pass {
            failed.push(format!("{label} {}", i + 1));
        }
    }
}

#[test]
fn acceptance() {
    let criteria: [Check; 12] = [
        ("ideal utilization", criterion_1),
        ("theory vs simulation curves", criterion_2),
        ("estimator variance law", criterion_3),
        ("confidence coverage and endpoints", criterion_4),
        ("rate estimate consistency", criterion_5),
        ("busy-time variance", criterion_6),
        ("solver minimality", criterion_7),
        ("convolution cross-check", criterion_8),
        ("diagnostics worked example", criterion_9),
        ("independence payoff", criterion_10),
        ("Bayes concentration", criterion_11),
        ("determinism", criterion_12),
    ];
    let invariants: [Check; 2] = [
        ("estimator pipeline closure", closure_invariant),
        ("lag-1 correlation at H* and H*/10", correlation_invariant),
    ];
    let mut failed = Vec::new();
    report("criterion", &criteria, &mut failed);
    report("invariant", &invariants, &mut failed);
    assert!(failed.is_empty(), "failing: {failed:?}");
}

use std::io::BufReader;
use std::path::{Path, PathBuf};

use binprobe_core::bayes::{
    self, build_state, BayesState, MapEstimate, RunOutcome, RunSettings, SpacingPolicy,
};
use binprobe_core::diag::{diagnose as diagnose_sequence, BinarySequence, DiagnosticsReport};
use binprobe_core::estimator::{
    busy_time_stats, rate_estimate, summarize, BusyTimeStats, EstimateSummary, SampleCounts,
};
use binprobe_core::hit::{
    self, hit_curve, solve_min_spacing, HitCurve, HitOptions, SpacingResult, SpacingRule, Start,
};
use binprobe_core::sim::{
    empirical_hit_probability, generate_trace, sample_at_spacing, sample_uniform_random,
    ProbeStream, SampleRecord, Seed, TrafficTrace,
};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::parse_grid;
use crate::output::{emit, int, num, opt, Table};
use crate::{CliError, Context};

const DEFAULT_GAMMA: f64 = 0.95;

fn counts(y: u64, n: u64) -> Result<SampleCounts, CliError> {
    Ok(SampleCounts::new(y, n)?)
}

fn out(ctx: &Context) -> Option<&Path> {
    ctx.out.as_deref()
}

fn summary_table(s: &EstimateSummary) -> Table {
    let mut t = Table::new([
        "u_hat",
        "n",
        "y",
        "var_abs",
        "var_rel",
        "sensitivity",
        "gamma",
        "ci_lower",
        "ci_upper",
    ]);
    t.push(vec![
        num(s.u_hat),
        int(s.n),
        int(s.y),
        num(s.var_abs),
        opt(s.var_rel),
        num(s.sensitivity),
        opt(s.ci.map(|c| c.gamma)),
        opt(s.ci.map(|c| c.lower)),
        opt(s.ci.map(|c| c.upper)),
    ]);
    t
}

pub fn estimate(ctx: &Context, y: u64, n: u64, gamma: Option<f64>) -> Result<(), CliError> {
    let s = summarize(counts(y, n)?, ctx.gamma(gamma))?;
    emit(ctx.format, out(ctx), &s, || summary_table(&s))
}

fn busy_table(s: &BusyTimeStats) -> Table {
    let mut t = Table::new([
        "horizon_t",
        "tp_hat",
        "var_tp",
        "rel_var_tp",
        "mean_packet",
        "mean_gap",
        "model_rel_var",
        "n_packets",
        "u_mc",
    ]);
    t.push(vec![
        num(s.horizon_t),
        num(s.tp_hat),
        num(s.var_tp),
        opt(s.rel_var_tp),
        opt(s.mean_packet),
        opt(s.mean_gap),
        opt(s.model_rel_var),
        s.n_packets.map(int).unwrap_or_default(),
        opt(s.u_mc),
    ]);
    t
}

pub fn busy_time(ctx: &Context, y: u64, n: u64, horizon: f64) -> Result<(), CliError> {
    let means = ctx.config.model.as_ref().map(|m| {
        let mo = m.moments();
        (mo.length_mean, mo.gap_mean)
    });
    let s = busy_time_stats(counts(y, n)?, horizon, means)?;
    emit(ctx.format, out(ctx), &s, || busy_table(&s))
}

#[derive(Debug, Serialize, Deserialize)]
struct RateReport {
    lambda_hat: f64,
    mean_packet: f64,
    n: u64,
    y: u64,
}

pub fn rate(ctx: &Context, y: u64, n: u64, mean_packet: Option<f64>) -> Result<(), CliError> {
    let mean_packet = match mean_packet {
        Some(m) => m,
        None => ctx.config.model()?.moments().length_mean,
    };
    let r = RateReport {
        lambda_hat: rate_estimate(counts(y, n)?, mean_packet)?,
        mean_packet,
        n,
        y,
    };
    emit(ctx.format, out(ctx), &r, || {
        let mut t = Table::new(["lambda_hat", "mean_packet", "n", "y"]);
        t.push(vec![num(r.lambda_hat), num(r.mean_packet), int(n), int(y)]);
        t
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct IdealReport {
    ideal_u: f64,
    length_mean: f64,
    gap_mean: f64,
}

pub fn ideal_u(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.config.model()?;
    let m = model.moments();
    let r = IdealReport {
        ideal_u: hit::ideal_u(model),
        length_mean: m.length_mean,
        gap_mean: m.gap_mean,
    };
    emit(ctx.format, out(ctx), &r, || {
        let mut t = Table::new(["ideal_u", "length_mean", "gap_mean"]);
        t.push(vec![num(r.ideal_u), num(r.length_mean), num(r.gap_mean)]);
        t
    })
}

fn grid_from(ctx: &Context, flag: Option<&str>) -> Result<Vec<f64>, CliError> {
    let text = flag.or(ctx.config.h_grid.as_deref()).ok_or_else(|| {
        CliError::usage("a spacing grid is required (--h / --h-grid or \"h_grid\" in the config)")
    })?;
    parse_grid(text)
}

#[derive(Debug, Serialize, Deserialize)]
struct Simulated {
    trials: u64,
    seed: u64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurvesReport {
    curve: HitCurve,
    simulated: Option<Simulated>,
}

/// Per-row simulation streams: `2i` for packet starts, `2i + 1` for gap starts.
fn simulate_rows(
    model: &binprobe_core::models::SourceModel,
    spacings: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Simulated, CliError> {
    let mut s1 = Vec::with_capacity(spacings.len());
    let mut s2 = Vec::with_capacity(spacings.len());
    for (i, h) in spacings.iter().enumerate() {
        let stream = 2 * i as u64;
        s1.push(empirical_hit_probability(
            model,
            *h,
            Start::PacketStart,
            trials,
            Seed::with_stream(seed, stream),
        )?);
        s2.push(empirical_hit_probability(
            model,
            *h,
            Start::GapStart,
            trials,
            Seed::with_stream(seed, stream + 1),
        )?);
    }
    Ok(Simulated {
        trials,
        seed,
        s1,
        s2,
    })
}

pub fn curves(ctx: &Context, h: Option<&str>, sim_trials: u64) -> Result<(), CliError> {
    let model = ctx.config.model()?;
    let spacings = grid_from(ctx, h)?;
    let curve = hit_curve(model, &spacings, &HitOptions::default())?;
    for f in &curve.failures {
        eprintln!(
            "warning: row {} (H = {}): {}",
            f.index, spacings[f.index], f.message
        );
    }
    let simulated = if sim_trials > 0 {
        Some(simulate_rows(model, &spacings, sim_trials, ctx.seed)?)
    } else {
        None
    };
    let report = CurvesReport { curve, simulated };
    emit(ctx.format, out(ctx), &report, || {
        let c = &report.curve;
        let mut header = vec!["H", "s1", "s2", "combined", "ideal_u"];
        if report.simulated.is_some() {
            header.extend(["s1_sim", "s2_sim"]);
        }
        let mut t = Table::new(header);
        for i in 0..c.len() {
            let mut row = vec![
                num(c.spacings[i]),
                num(c.s1[i]),
                num(c.s2[i]),
                num(c.combined[i]),
                num(c.ideal_u),
            ];
            if let Some(s) = &report.simulated {
                row.extend([num(s.s1[i]), num(s.s2[i])]);
            }
            t.push(row);
        }
        t
    })
}

fn spacing_table(r: &SpacingResult) -> Table {
    let mut t = Table::new(["h_star", "index", "achieved_gap", "k_used", "scanned"]);
    t.push(vec![
        num(r.h_star),
        int(r.index as u64),
        num(r.achieved_gap),
        num(r.k_used),
        int(r.scanned as u64),
    ]);
    t
}

pub fn solve_spacing(
    ctx: &Context,
    k: Option<f64>,
    h_grid: Option<&str>,
    rule: SpacingRule,
) -> Result<(), CliError> {
    let model = ctx.config.model()?;
    let k = k
        .or(ctx.config.k)
        .ok_or_else(|| CliError::usage("--k is required"))?;
    let grid = grid_from(ctx, h_grid)?;
    let r = solve_min_spacing(model, k, &grid, rule, &HitOptions::default())?;
    emit(ctx.format, out(ctx), &r, || spacing_table(&r))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Packets in a generated trace.
    #[arg(long, default_value_t = 10_000)]
    packets: u64,
    /// Load the trace from a `gap,packet` CSV instead of generating it.
    #[arg(long)]
    trace_in: Option<PathBuf>,
    /// Also write the trace as `gap,packet` CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Fixed probe spacing (with --probes).
    #[arg(long, requires = "probes")]
    spacing: Option<f64>,
    /// Number of fixed-spacing probes.
    #[arg(long, requires = "spacing")]
    probes: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    phase: f64,
    /// Number of uniform-random probes instead of fixed spacing.
    #[arg(long, conflicts_with_all = ["spacing", "probes"])]
    uniform: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceSummary {
    total_t: f64,
    busy_tp: f64,
    n_packets: u64,
    utilization: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulateReport {
    seed: u64,
    trace: TraceSummary,
    estimate: Option<EstimateSummary>,
    busy_time: Option<BusyTimeStats>,
    samples: Vec<SampleRecord>,
}

/// Trace stream 0 and probe stream 1 of the master seed.
pub fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), CliError> {
    let trace = match &args.trace_in {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))?;
            TrafficTrace::read_csv(BufReader::new(file))?
        }
        None => generate_trace(
            ctx.config.model()?,
            args.packets,
            Seed::with_stream(ctx.seed, 0),
        )?,
    };
    if let Some(path) = &args.trace_out {
        let mut buf = Vec::new();
        trace
            .write_csv(&mut buf)
            .map_err(|e| CliError::usage(e.to_string()))?;
        std::fs::write(path, buf)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let samples = match (args.spacing, args.probes, args.uniform) {
        (Some(h), Some(n), None) => sample_at_spacing(&trace, h, n, args.phase)?,
        (None, None, Some(n)) => sample_uniform_random(&trace, n, Seed::with_stream(ctx.seed, 1))?,
        _ => Vec::new(),
    };
    let (estimate, busy_time) = if samples.is_empty() {
        (None, None)
    } else {
        let c = SampleCounts::from_indicators(samples.iter().map(|s| s.occupied));
        let mo = ctx.config.model.as_ref().map(|m| {
            let mo = m.moments();
            (mo.length_mean, mo.gap_mean)
        });
        (
            Some(summarize(
                c,
                Some(ctx.gamma(args.gamma).unwrap_or(DEFAULT_GAMMA)),
            )?),
            Some(
                busy_time_stats(c, trace.total_t(), mo)?
                    .with_trace_truth(trace.busy_tp(), trace.n_packets()),
            ),
        )
    };
    let report = SimulateReport {
        seed: ctx.seed,
        trace: TraceSummary {
            total_t: trace.total_t(),
            busy_tp: trace.busy_tp(),
            n_packets: trace.n_packets(),
            utilization: trace.utilization(),
        },
        estimate,
        busy_time,
        samples,
    };
    emit(ctx.format, out(ctx), &report, || {
        if report.samples.is_empty() {
            let mut t = Table::new(["total_t", "busy_tp", "n_packets", "utilization"]);
            let tr = &report.trace;
            t.push(vec![
                num(tr.total_t),
                num(tr.busy_tp),
                int(tr.n_packets),
                num(tr.utilization),
            ]);
            return t;
        }
        let mut t = Table::new(["t", "occupied", "length"]);
        for s in &report.samples {
            t.push(vec![num(s.t), int(u64::from(s.occupied)), opt(s.length)]);
        }
        t
    })
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    /// Maximum observations to take.
    #[arg(long)]
    observations: Option<u64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    h_grid: Option<String>,
    /// Checkpoint window; also the stability window.
    #[arg(long)]
    window: Option<usize>,
    /// Relative stability tolerance; 0 runs all observations.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Time before the first probe in the simulated source.
    #[arg(long, default_value_t = 100.0)]
    burn_in: f64,
    /// Resume from a saved state.
    #[arg(long)]
    snapshot_in: Option<PathBuf>,
    /// Save the final state.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BayesReport {
    seed: u64,
    outcome: RunOutcome,
    map: MapEstimate,
    iteration: u64,
    current_h: Option<f64>,
    mass: Vec<f64>,
    normalization_error: f64,
    /// Checkpoints use every observation, including ones taken before the
    /// latest spacing change.
    u_history: Vec<f64>,
}

/// Observations come from a simulated source driven by the configured model.
pub fn bayes(ctx: &Context, args: &BayesArgs) -> Result<(), CliError> {
    let truth = ctx.config.model()?.clone();
    let cfg = ctx.config.bayes.as_ref();
    let mut state: BayesState = match &args.snapshot_in {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("snapshot {}: {e}", path.display())))?
        }
        None => {
            let cfg = cfg.ok_or_else(|| {
                CliError::usage("a \"bayes\" section with a grid is required in the config")
            })?;
            build_state(cfg.grid.clone(), cfg.prior.clone())?
        }
    };
    let mut settings = cfg.and_then(|c| c.settings).unwrap_or_default();
    if let Some(n) = args.observations {
        settings.max_iter = n;
    }
    if let Some(w) = args.window {
        settings.window = w;
    }
    if let Some(e) = args.eps {
        settings.eps = e;
    }
    let settings: RunSettings = settings;
    let k = args
        .k
        .or(ctx.config.k)
        .ok_or_else(|| CliError::usage("--k is required"))?;
    let grid = grid_from(ctx, args.h_grid.as_deref())?;
    let mut policy = SpacingPolicy::new(k, grid);
    let mut source = ProbeStream::new(truth, Seed::with_stream(ctx.seed, 0), args.burn_in);
    let gamma = ctx.gamma(args.gamma).unwrap_or(DEFAULT_GAMMA);
    let outcome = bayes::run(&mut state, &mut source, &mut policy, &settings, gamma)?;
    if let Some(path) = &args.snapshot_out {
        let text =
            serde_json::to_string_pretty(&state).map_err(|e| CliError::usage(e.to_string()))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let report = BayesReport {
        seed: ctx.seed,
        map: state.map_estimate()?,
        iteration: state.iteration(),
        current_h: state.current_h(),
        mass: state.mass().to_vec(),
        normalization_error: state.normalization_error(),
        u_history: state.u_history().to_vec(),
        outcome,
    };
    emit(ctx.format, out(ctx), &report, || {
        let axes = state.grid().axes();
        let mut header = vec!["cell".to_string()];
        header.extend(axes.iter().map(|(name, _)| name.to_string()));
        header.push("mass".into());
        let mut t = Table::new(header);
        for (i, m) in state.mass().iter().enumerate() {
            let mut row = vec![int(i as u64)];
            row.extend(state.grid().parameters(i).iter().map(|(_, v)| num(*v)));
            row.push(num(*m));
            t.push(row);
        }
        t
    })
}

fn read_sequence(path: &Path) -> Result<BinarySequence, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if let Some(header) = lines.next() {
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if let Some(col) = columns.iter().position(|c| *c == "occupied") {
            let occupied = lines
                .filter(|l| !l.trim().is_empty())
                .map(|l| match l.split(',').nth(col).map(str::trim) {
                    Some("1") => Ok(true),
                    Some("0") => Ok(false),
                    other => Err(CliError::usage(format!("bad occupied value {other:?}"))),
                })
                .collect::<Result<Vec<bool>, _>>()?;
            return Ok(BinarySequence::from_occupancy(occupied));
        }
    }
    Ok(BinarySequence::parse(&text)?)
}

fn report_table(r: &DiagnosticsReport) -> Table {
    let mut t = Table::new([
        "n",
        "p1",
        "p0",
        "p1_given_0",
        "p1_given_1",
        "p0_given_0",
        "p0_given_1",
        "j11",
        "j10",
        "j01",
        "j00",
        "verdict",
    ]);
    let verdict = match r.verdict {
        Some(v) => serde_json::to_value(v)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        None => String::new(),
    };
    t.push(vec![
        int(r.counts.n),
        num(r.p1),
        num(r.p0),
        num(r.p1_given_0),
        num(r.p1_given_1),
        num(r.p0_given_0),
        num(r.p0_given_1),
        num(r.j11),
        num(r.j10),
        num(r.j01),
        num(r.j00),
        verdict,
    ]);
    t
}

pub fn diagnose(
    ctx: &Context,
    bits: Option<&str>,
    input: Option<&Path>,
    gamma: Option<f64>,
    slack: f64,
) -> Result<(), CliError> {
    let seq = match (bits, input) {
        (Some(b), _) => BinarySequence::parse(b)?,
        (None, Some(path)) => read_sequence(path)?,
        (None, None) => return Err(CliError::usage("pass --bits or --input")),
    };
    let report = diagnose_sequence(&seq, ctx.gamma(gamma).unwrap_or(DEFAULT_GAMMA), slack)?;
    emit(ctx.format, out(ctx), &report, || report_table(&report))
}

use binprobe_core::bayes::{
    build_state, run, Axis, BayesState, GapFamily, LengthFamily, ObservationSource, ParameterGrid,
    Prior, RunSettings, SpacingPolicy, Stability,
};
use binprobe_core::sim::{ProbeStream, Seed};

fn grid() -> ParameterGrid {
    ParameterGrid {
        length: LengthFamily::Normal {
            mean: Axis::new(2.0, 5.0, 3).unwrap(),
            variance: Axis::fixed(0.1),
        },
        gap: GapFamily::Exponential {
            rate: Axis::new(0.5, 2.0, 3).unwrap(),
        },
    }
}

fn spacing_grid() -> Vec<f64> {
    (1..=40).map(|i| 0.5 * f64::from(i)).collect()
}

/// Coarser grid for loops whose MAP cell wanders early on; every new MAP
/// cell costs a full curve.
fn coarse_grid() -> Vec<f64> {
    (1..=10).map(|i| 2.0 * f64::from(i)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

// Data drawn from one cell at that cell's solved spacing pulls mass onto it.
#[test]
fn posterior_concentrates_on_generating_cell() {
    let grid = grid();
    let mut policy = SpacingPolicy::new(0.02, spacing_grid());
    for cell in [0, 4, 8] {
        let model = grid.cell_model(cell).unwrap();
        let h = policy.target(&grid, cell).unwrap();
        let (mut early, mut late) = (Vec::new(), Vec::new());
        for seed in 0..100 {
            let mut state = build_state(grid.clone(), Prior::Uniform).unwrap();
            let mut source =
                ProbeStream::new(model.clone(), Seed::with_stream(seed, cell as u64), 50.0);
            for i in 1..=2000 {
                let obs = source.next_observation(h).unwrap();
                state.posterior_update(&obs).unwrap();
                if i == 100 {
                    early.push(state.mass()[cell]);
                }
            }
            late.push(state.mass()[cell]);
        }
        let (early, late) = (median(early), median(late));
        assert!(late > early, "cell {cell}: median mass {early} -> {late}");
        assert!(late > 0.9, "cell {cell}: {late}");
    }
}

// Stopping, saving and resuming gives the same posterior as one long run.
#[test]
fn snapshot_resume_is_seamless() {
    let truth = grid().cell_model(4).unwrap();
    let settings = |n| RunSettings {
        max_iter: n,
        eps: 0.0,
        ..RunSettings::default()
    };

    let mut whole = build_state(grid(), Prior::Uniform).unwrap();
    let mut source = ProbeStream::new(truth.clone(), Seed::new(3), 20.0);
    let mut policy = SpacingPolicy::new(0.02, coarse_grid());
    run(&mut whole, &mut source, &mut policy, &settings(300), 0.95).unwrap();

    let mut split = build_state(grid(), Prior::Uniform).unwrap();
    let mut source = ProbeStream::new(truth, Seed::new(3), 20.0);
    let mut policy = SpacingPolicy::new(0.02, coarse_grid());
    run(&mut split, &mut source, &mut policy, &settings(120), 0.95).unwrap();
    let text = serde_json::to_string(&split).unwrap();
    let mut split: BayesState = serde_json::from_str(&text).unwrap();
    run(&mut split, &mut source, &mut policy, &settings(180), 0.95).unwrap();

    assert_eq!(split.iteration(), 300);
    assert_eq!(split.mass(), whole.mass());
    assert_eq!(split.h_history(), whole.h_history());
    assert_eq!(split.u_history(), whole.u_history());
}

#[test]
fn loop_stops_once_estimates_settle() {
    let truth = grid().cell_model(4).unwrap();
    let mut state = build_state(grid(), Prior::Uniform).unwrap();
    let mut source = ProbeStream::new(truth, Seed::new(5), 20.0);
    let mut policy = SpacingPolicy::new(0.02, coarse_grid());
    let settings = RunSettings {
        eps: 0.05,
        ..RunSettings::default()
    };
    let out = run(&mut state, &mut source, &mut policy, &settings, 0.95).unwrap();
    assert_eq!(out.stability, Stability::Stable);
    assert!(out.observations < settings.max_iter);
    // Damping may still be walking current_h towards the MAP target.
    assert_eq!(out.h_ind, state.current_h());
    assert_eq!(out.observations, state.iteration());
    let ci = out.summary.unwrap().ci.unwrap();
    assert!(ci.contains(0.75), "{ci:?}");
}

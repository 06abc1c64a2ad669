//! The step image with parameters small enough for the insertion loop to act:
//! the smoothing length √α = 0.1 exceeds the ball radius, so the expansion is
//! in its regime of validity and every accepted ball lowers the energy.

use topoms::at::threshold_edges;
use topoms::fem::{assemble, default_max_iter, solve_cg};
use topoms::oracle::descent_audit;
use topoms::{run, run_at, synthetic, AtConfig, StopReason, TopoConfig};

const EPS_AT: f64 = 0.01;

fn config() -> TopoConfig {
    let mut cfg = TopoConfig::new(0.01, 0.002, 0.02);
    cfg.kappa = 0.01;
    cfg.batch_size = 1;
    cfg
}

#[test]
fn insertion_loop_traces_the_step() {
    let grid = synthetic::step(128, 128).unwrap();
    let cfg = config();
    let res = run(&grid, &cfg).unwrap();
    let h = grid.h();

    assert_eq!(res.stopped_by, StopReason::Threshold);
    assert!(descent_audit(&res.trace));
    for w in res.trace.records.windows(2) {
        assert!(w[1].energy.total < w[0].energy.total);
        assert_eq!(w[1].ball_count, w[0].ball_count + 1);
        assert!(w[1].predicted_delta_j.iter().all(|&d| d <= 0.0));
    }

    // every center hugs the line and the line is fully reached
    for c in res.cover.centers() {
        assert!((c.x - 0.5).abs() <= cfg.epsilon + h, "center {c:?}");
    }
    for k in 0..grid.cell_count() {
        let c = grid.cell_center_of(k);
        if (c.x - 0.5).abs() <= 0.5 * h + 1e-12 {
            assert!(res.cover.centers().iter().any(|p| p.dist(&c) <= cfg.epsilon));
        }
    }
    let len = res.cover.length_estimate();
    assert!((0.8..=3.0).contains(&len), "length {len}");

    // the returned fields are consistent with the final cover
    assert_eq!(res.v, res.cover.indicator_field(&grid));
    let system = assemble(&grid, &res.v, cfg.alpha).unwrap();
    let (u, _) = solve_cg(&system, 1e-12, 10 * default_max_iter(grid.node_count()), None);
    let dev = u
        .values()
        .iter()
        .zip(res.u.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-6, "{dev}");
}

#[test]
fn batches_stay_separated_and_cover_the_line() {
    let grid = synthetic::step(128, 128).unwrap();
    let mut cfg = config();
    cfg.batch_size = 8;
    let res = run(&grid, &cfg).unwrap();
    assert!(descent_audit(&res.trace));
    for r in &res.trace.records {
        for (a, pa) in r.centers.iter().enumerate() {
            for pb in &r.centers[a + 1..] {
                assert!(pa.dist(pb) >= cfg.separation);
            }
        }
    }
    assert!(res.trace.records.len() < 20);
}

#[test]
fn baseline_and_cover_agree_on_the_edge() {
    let grid = synthetic::step(128, 128).unwrap();
    let cfg = config();
    let topo = run(&grid, &cfg).unwrap();
    let mut at_cfg = AtConfig::new(cfg.alpha, cfg.beta, EPS_AT);
    at_cfg.outer_iters = 10;
    let at = run_at(&grid, &at_cfg).unwrap();
    assert!(at.trace.is_monotone());
    let edges = threshold_edges(&at.v, &grid, 0.8).unwrap();
    let (mut inter, mut union) = (0usize, 0usize);
    for (&e, &v) in edges.values().iter().zip(topo.v.values()) {
        let (a, b) = (e == 1.0, v == cfg.kappa);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    let jaccard = inter as f64 / union as f64;
    assert!(jaccard >= 0.3, "jaccard {jaccard}, {inter}/{union}");
}

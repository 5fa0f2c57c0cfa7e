//! End-to-end use of the public API: solve, export, re-import, optimize.

use std::f64::consts::PI;
use std::fs::File;

use kforq_core::{
    read_trajectory_csv, write_trajectory_csv, ControlWindow, CostParams, Domain1D, ForwardSolver,
    ModelParams, Observer, OptimOptions, OptimStatus, TimeGrid, TrackingProblem,
};

fn solver(n: usize, steps: usize) -> ForwardSolver {
    ForwardSolver::new(
        Domain1D::new(1.0, n).unwrap(),
        TimeGrid::new(0.5, steps).unwrap(),
        ModelParams::new(0.1, 1.0).unwrap(),
    )
}

#[test]
fn trajectory_file_round_trip_is_bit_exact() {
    let s = solver(17, 12);
    let y0 = s.domain().sample(|x| 0.3 * (PI * x).sin().powi(3));
    let w = ControlWindow::full(*s.domain(), *s.time());
    let c = w.extend(&w.sample(|t, x| t * (2.0 * PI * x).sin()));
    let traj = s.solve(&y0, &c).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    write_trajectory_csv(
        File::create(&path).unwrap(),
        s.domain(),
        s.time(),
        &traj,
        "cafe",
    )
    .unwrap();
    let back = read_trajectory_csv(File::open(&path).unwrap()).unwrap();

    assert_eq!(back.config_hash.as_deref(), Some("cafe"));
    assert_eq!(back.times.len(), 13);
    assert_eq!(back.nodes.len(), 17);
    for (a, b) in back.y.frames().iter().zip(traj.y.frames()) {
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    for (a, b) in back.u.frames().iter().zip(&traj.velocity) {
        assert!(a
            .iter()
            .zip(b.u.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn optimizer_recovers_reachable_target() {
    let s = solver(15, 20);
    let dom = *s.domain();
    let tg = *s.time();
    let w = ControlWindow::new(dom, tg, (0.2, 0.8), (0.05, 0.45)).unwrap();
    let y0 = dom.sample(|x| 0.5 * (PI * x).sin());
    let omega_true = w.sample(|t, x| t * (PI * x).sin());
    let z = s.solve(&y0, &w.extend(&omega_true)).unwrap().y;
    let cost = CostParams::new(1e-6, z, Observer::IdentityL2H).unwrap();
    let p = TrackingProblem::new(s, w.clone(), y0, cost).unwrap();

    let opts = OptimOptions {
        tol_g: 1e-10,
        ..OptimOptions::default()
    };
    let st = kforq_core::optimize(&p, &w.zeros(), &opts).unwrap();
    assert_eq!(st.status, OptimStatus::Converged);
    let first = st.history.first().unwrap().cost;
    let last = st.history.last().unwrap().cost;
    assert!(last < 1e-3 * first, "cost {first} -> {last}");
    // costs along accepted steps never increase
    assert!(st.history.windows(2).all(|h| h[1].cost <= h[0].cost));
}

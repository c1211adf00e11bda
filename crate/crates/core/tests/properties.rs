//! Whole-run and solver properties over randomized inputs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use swarm_dmpc::harness::{check_discrete_collisions, check_theorem_oracles, run, Scenario};
use swarm_dmpc::netsim::JamWindow;
use swarm_dmpc::qp::{kkt_residuals, solve, QuadraticProgram, SolveStatus};
use swarm_dmpc::trigger::TriggerKind;

fn trigger() -> impl Strategy<Value = TriggerKind> {
    prop_oneof![Just(TriggerKind::Rr), Just(TriggerKind::Dt), Just(TriggerKind::Ht)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn lossy_runs_stay_safe(
        seed in 0u64..10_000,
        n in 3usize..8,
        m in 1usize..4,
        loss in 0.0f64..0.5,
        trig in trigger(),
        jam_start in 0i64..30,
        jam_len in 0i64..10,
        circle in any::<bool>(),
    ) {
        prop_assume!(m <= n);
        let name = if circle { "circle-exchange" } else { "random-targets" };
        let mut s = Scenario::builtin(name, n, m, seed).unwrap();
        s.rounds = 50;
        s.loss_prob = loss;
        s.trigger = trig;
        s.jams = vec![JamWindow { start: jam_start, end: jam_start + jam_len, nodes: vec![n, (seed as usize) % n] }];
        let trace = run(&s).unwrap();
        prop_assert!(trace.fatal.is_none(), "{:?}", trace.fatal);
        let opt = &s.optimization;
        prop_assert!(check_discrete_collisions(&trace, &opt.theta, opt.d_hat_min, opt.t_c).is_empty());
        let report = check_theorem_oracles(&trace);
        prop_assert!(report.is_clean(), "{:?}", report);
    }
}

fn program(
    n: usize,
    entries: &[f64],
    q: &[f64],
    rows: &[f64],
    slack: &[f64],
) -> QuadraticProgram {
    let a = DMatrix::from_column_slice(n, n, &entries[..n * n]);
    let p = a.transpose() * &a + DMatrix::identity(n, n) * 1e-2;
    let m = slack.len();
    let g = DMatrix::from_row_slice(m, n, &rows[..m * n]);
    // the origin is feasible by construction
    let h = DVector::from_column_slice(slack);
    QuadraticProgram::new(p, DVector::from_column_slice(&q[..n]))
        .with_inequalities(g, h)
        .with_bounds(DVector::from_element(n, -3.0), DVector::from_element(n, 3.0))
}

proptest! {
    #[test]
    fn solver_meets_kkt_and_beats_feasible_points(
        n in 1usize..8,
        entries in prop::collection::vec(-1.0f64..1.0, 64),
        q in prop::collection::vec(-5.0f64..5.0, 8),
        rows in prop::collection::vec(-1.0f64..1.0, 8 * 12),
        slack in prop::collection::vec(0.0f64..1.0, 0..12),
        probe in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let qp = program(n, &entries, &q, &rows, &slack);
        let sol = solve(&qp, 1e-10);
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        prop_assert!(kkt_residuals(&qp, &sol).max() < 1e-6);
        // any feasible point is no better than the solution
        let origin = DVector::zeros(n);
        prop_assert!(sol.objective <= qp.objective(&origin) + 1e-9);
        let x = DVector::from_column_slice(&probe[..n]) * 0.01;
        if qp.max_violation(&x) == 0.0 {
            prop_assert!(sol.objective <= qp.objective(&x) + 1e-9);
        }
    }
}

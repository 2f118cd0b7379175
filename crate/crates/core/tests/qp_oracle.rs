mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::cases::random_case;
use support::oracle::solve_by_enumeration;
use swarm_dmpc::qp::{kkt_check, solve, CsrMatrix, QpProblem, QpSettings, QpSolver, QpStatus};

#[test]
fn six_variable_problem_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let case = random_case(&mut rng, 6, 2, 3, 0);
    let oracle = solve_by_enumeration(&case.dense, 1e-9).unwrap();
    let sol = solve(&case.problem, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Solved);
    for i in 0..6 {
        assert!((sol.x[i] - oracle.x[i]).abs() <= 1e-6, "x[{i}]");
    }
}

#[test]
fn two_hundred_random_problems_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_x: f64 = 0.0;
    let mut worst_obj: f64 = 0.0;
    for trial in 0..200 {
        let n = rng.gen_range(2..=12);
        let m_total = rng.gen_range(0..=8usize);
        let m_eq = rng.gen_range(0..=m_total.min(n - 1).min(3));
        let n_bounds = rng.gen_range(0..=(m_total - m_eq).min(n));
        let m_in = m_total - m_eq - n_bounds;
        let case = random_case(&mut rng, n, m_eq, m_in, n_bounds);
        let oracle = solve_by_enumeration(&case.dense, 1e-9).expect("feasible by construction");
        let sol = solve(&case.problem, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "trial {trial}");
        let dx = sol.x.iter().zip(oracle.x.iter()).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        let dobj = (sol.objective - oracle.objective).abs();
        worst_x = worst_x.max(dx);
        worst_obj = worst_obj.max(dobj);
        assert!(dx <= 1e-5, "trial {trial}: x deviation {dx:e}");
        assert!(dobj <= 1e-7, "trial {trial}: objective deviation {dobj:e}");
        assert!(sol.primal_residual <= 1e-6 && sol.dual_residual >= 0.0);
    }
    println!("worst x deviation {worst_x:e}, worst objective deviation {worst_obj:e}");
}

#[test]
fn warm_and_cold_starts_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let case = random_case(&mut rng, 8, 2, 4, 2);
        let cold = solve(&case.problem, &QpSettings::default()).unwrap();
        let perturbed: Vec<f64> = cold.x.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        let warm_settings = QpSettings { warm_start: Some(perturbed), ..QpSettings::default() };
        let warm = solve(&case.problem, &warm_settings).unwrap();
        assert!(warm.is_solved());
        for (a, b) in cold.x.iter().zip(&warm.x) {
            assert!((a - b).abs() <= 1e-5);
        }
        // Re-solving from the stored iterate reaches the same point.
        let mut ws = QpSolver::new(&case.problem, QpSettings::default()).unwrap();
        let first = ws.solve();
        let again = ws.solve();
        for (a, b) in first.x.iter().zip(&again.x) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn solved_residuals_respect_declared_tolerances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let case = random_case(&mut rng, 10, 3, 4, 1);
        let s = QpSettings::default();
        let sol = solve(&case.problem, &s).unwrap();
        assert!(sol.is_solved());
        let report = kkt_check(&case.problem, &sol.x, Some(&sol.stacked_duals()), 1e-6).unwrap();
        assert!(report.primal <= s.eps_abs, "{report:?}");
        assert!(sol.primal_residual <= s.eps_abs);
        assert!(sol.dual_residual <= s.eps_abs + s.eps_rel * 100.0);
    }
}

#[test]
fn kkt_check_examples() {
    // Exact unconstrained optimum.
    let p = QpProblem::new(CsrMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 2.0]], 2), vec![-2.0, -4.0]).unwrap();
    let r = kkt_check(&p, &[1.0, 2.0], None, 1e-9).unwrap();
    assert!(r.primal <= 1e-12 && r.dual <= 1e-12 && r.complementarity <= 1e-12);
    let r = kkt_check(&p, &[1.001, 2.0], None, 1e-9).unwrap();
    assert!(r.dual > 1e-6);
    // Feasible but not optimal for a bounded problem.
    let b = p.clone().with_bounds(vec![0.0, 0.0], vec![3.0, 3.0]).unwrap();
    let r = kkt_check(&b, &[0.5, 0.5], None, 1e-9).unwrap();
    assert!(r.primal <= 1e-12);
    assert!(r.dual > 0.0);
}

#[test]
fn single_precision_agrees_with_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let case = random_case(&mut rng, 5, 1, 2, 0);
    let dump = case.problem.to_dump();
    let cast = |m: &Vec<Vec<f64>>| -> Vec<Vec<f32>> { m.iter().map(|r| r.iter().map(|v| *v as f32).collect()).collect() };
    let n = dump.n;
    let p32 = QpProblem::new(CsrMatrix::from_dense(&cast(&dump.h), n), dump.f.iter().map(|v| *v as f32).collect())
        .unwrap()
        .with_equalities(CsrMatrix::from_dense(&cast(&dump.a_eq), n), dump.b_eq.iter().map(|v| *v as f32).collect())
        .unwrap()
        .with_inequalities(CsrMatrix::from_dense(&cast(&dump.a_in), n), dump.b_in.iter().map(|v| *v as f32).collect())
        .unwrap();
    let s32 = QpSettings::<f32> { eps_abs: 1e-4, eps_rel: 1e-4, ..Default::default() };
    let x32 = solve(&p32, &s32).unwrap().x;
    let x64 = solve(&case.problem, &QpSettings::default()).unwrap().x;
    for (a, b) in x32.iter().zip(&x64) {
        assert!((*a as f64 - b).abs() < 1e-2);
    }
}

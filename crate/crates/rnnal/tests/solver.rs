//! End-to-end solves checked against closed forms, enumeration and the
//! dense reference solver.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rnnal::oracle::{brute_force_mbqp, dense_dnn_solve};
use rnnal::problem::{build_theta, gen_biq, gen_qkp};
use rnnal::{build_dnn, solve, MbqpProblem, SolveStatus, SolverOptions};

fn solved(p: &MbqpProblem) -> rnnal::SolveReport {
    let report = solve(&build_dnn(p).unwrap(), &SolverOptions::default()).unwrap();
    assert_eq!(report.status, SolveStatus::Converged, "{}", p.name);
    assert!(report.rmax() <= 1e-6);
    report
}

#[test]
fn five_cycle_theta_plus_is_sqrt_five() {
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)];
    let report = solved(&build_theta(5, &edges).unwrap());
    assert!(rel_gap(report.obj, -5f64.sqrt()) <= 1e-5, "obj {}", report.obj);
}

#[test]
fn two_variable_instance_matches_enumeration() {
    // min x₁² − 3x₁x₂ + x₂² + 2(−0.5x₁ + 0.25x₂) over {0,1}²: the best
    // point is (1, 1) with value −1.5, and the relaxation is tight.
    let p = MbqpProblem {
        name: "two".into(),
        q: DMatrix::from_row_slice(2, 2, &[1.0, -1.5, -1.5, 1.0]),
        c: DVector::from_vec(vec![-0.5, 0.25]),
        a: DMatrix::zeros(0, 2),
        b: DVector::zeros(0),
        binary: vec![0, 1],
        edges: vec![],
    };
    let (x, best) = brute_force_mbqp(&p).unwrap();
    assert_eq!(x.as_slice(), &[1.0, 1.0]);
    assert!((best + 1.5).abs() < 1e-15);
    let report = solved(&p);
    assert!(report.obj <= best + 1e-6);
    assert!(rel_gap(report.obj, best) <= 1e-5);
}

#[test]
fn relaxation_bounds_the_binary_optimum() {
    for seed in 0..4 {
        let p = gen_biq(12, 0.6, 500 + seed);
        let (_, best) = brute_force_mbqp(&p).unwrap();
        let report = solved(&p);
        assert!(report.obj <= best + 1e-4 * (1.0 + best.abs()), "{}: {} > {best}", p.name, report.obj);
    }
}

#[test]
fn agrees_with_the_dense_reference_on_constrained_instances() {
    for seed in 0..3 {
        let p = gen_qkp(12, 0.5, 600 + seed);
        let model = build_dnn(&p).unwrap();
        let oracle = dense_dnn_solve(&model, 1e-8).unwrap().obj;
        let report = solved(&p);
        assert!(rel_gap(report.obj, oracle) <= 1e-4, "{}: {} vs {oracle}", p.name, report.obj);
    }
}

#[test]
fn objective_scales_with_the_cost() {
    let p = gen_biq(14, 0.5, 700);
    let mut scaled = p.clone();
    scaled.q *= 10.0;
    scaled.c *= 10.0;
    let (a, b) = (solved(&p).obj, solved(&scaled).obj);
    assert!(rel_gap(b, 10.0 * a) <= 1e-4, "{b} vs 10 × {a}");
}

#[test]
fn identical_options_give_identical_runs() {
    let model = build_dnn(&gen_qkp(15, 0.5, 800)).unwrap();
    let opts = SolverOptions::default();
    let (a, b) = (solve(&model, &opts).unwrap(), solve(&model, &opts).unwrap());
    assert_eq!(a.obj.to_bits(), b.obj.to_bits());
    assert_eq!(a.outer_iters, b.outer_iters);
    assert_eq!(a.inner_iters_total, b.inner_iters_total);
    assert_eq!(a.rank, b.rank);
}

#[test]
fn rank_adapts_from_any_start() {
    let model = build_dnn(&gen_biq(20, 0.5, 900)).unwrap();
    let ranks: Vec<usize> = [1usize, 4, 20]
        .into_iter()
        .map(|r0| {
            let r = solve(&model, &SolverOptions { rank0: Some(r0), ..SolverOptions::default() }).unwrap();
            assert_eq!(r.status, SolveStatus::Converged);
            r.rank
        })
        .collect();
    let spread = ranks.iter().max().unwrap() - ranks.iter().min().unwrap();
    assert!(spread <= 3, "final ranks {ranks:?}");
}

#[test]
fn invalid_options_are_rejected() {
    let model = build_dnn(&gen_biq(6, 0.5, 1)).unwrap();
    let bad = SolverOptions { tol: -1.0, ..SolverOptions::default() };
    assert!(solve(&model, &bad).is_err());
}

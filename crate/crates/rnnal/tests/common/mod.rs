//! Instance sets and helpers shared by the integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rnnal::problem::{build_theta, gen_biq, gen_dqkp, gen_qkp, gen_random_graph, instance_rng, MbqpProblem};
use rnnal::variety::{feasible_init, FactorPoint};
use rnnal::{build_dnn, DnnModel};

/// The pure-binary instances of the oracle-equivalence check: eight BIQ
/// with `n ∈ [10, 30]`, six θ₊ on random graphs with `n ≤ 30` and six DQKP
/// with the knapsack row removed.
pub fn oracle_instances() -> Vec<MbqpProblem> {
    let mut out = Vec::new();
    for (k, n) in [10usize, 12, 14, 16, 20, 24, 28, 30].into_iter().enumerate() {
        let density = [0.1, 0.5, 1.0][k % 3];
        out.push(gen_biq(n, density, 100 + k as u64));
    }
    for (k, n) in [8usize, 12, 16, 20, 25, 30].into_iter().enumerate() {
        let p = [0.2, 0.4, 0.6][k % 3];
        let seed = 200 + k as u64;
        let mut inst = build_theta(n, &gen_random_graph(n, p, seed)).expect("theta instance");
        inst.name = format!("theta-n{n}-s{seed}");
        out.push(inst);
    }
    for (k, n) in [10usize, 14, 16, 20, 25, 30].into_iter().enumerate() {
        let d = [0.25, 0.5, 1.0][k % 3];
        let mut inst = gen_dqkp(n, d, 300 + k as u64).expect("dqkp instance").without_linear_constraints();
        inst.name = format!("dqkp-free-n{n}-s{}", 300 + k);
        out.push(inst);
    }
    out
}

/// Small models covering the four structural cases of the variety:
/// unconstrained binary, equality-constrained binary, equality-constrained
/// with continuous variables, and complementarity pairs.
pub fn geometry_models() -> Vec<DnnModel> {
    let mut models = vec![
        build_dnn(&gen_biq(8, 0.5, 11)).unwrap(),
        build_dnn(&gen_qkp(9, 0.5, 12)).unwrap(),
        build_dnn(&build_theta(7, &gen_random_graph(7, 0.4, 13)).unwrap()).unwrap(),
    ];
    let mut mixed = gen_qkp(8, 0.5, 14);
    mixed.binary.retain(|&i| i % 2 == 0);
    models.push(build_dnn(&mixed).unwrap());
    models.push(build_dnn(&gen_dqkp(10, 0.5, 15).unwrap()).unwrap());
    models
}

/// A random feasible factor of rank `r`.
pub fn random_point(model: &DnnModel, r: usize, seed: u64) -> FactorPoint {
    feasible_init(model, r, seed).expect("feasible start")
}

/// Gaussian `rows × cols` matrix.
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = instance_rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Random symmetric `dim × dim` matrix.
pub fn random_symmetric(dim: usize, seed: u64) -> DMatrix<f64> {
    let g = gaussian(dim, dim, seed);
    (&g + g.transpose()) * 0.5
}

/// `|a − b| / (1 + |b|)`.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// Largest affine or sphere residual after retracting random tangent steps
/// of norm between `0.01 ‖R‖` and `0.3 ‖R‖` from random feasible points.
/// Panics if a retraction fails.
pub fn retraction_feasibility(model: &DnnModel, samples: usize, seed: u64) -> f64 {
    use rnnal::variety::{retract, tangent_project};
    let mut worst = 0.0f64;
    for k in 0..samples as u64 {
        let rank = 2 + (k % 3) as usize;
        let r = random_point(model, rank, seed + k);
        let v = gaussian(model.n(), rank, seed + 1000 + k);
        let tangent = tangent_project(model, r.matrix(), &v).unwrap().tangent.into_matrix();
        let scale = r.matrix().norm() / tangent.norm().max(f64::MIN_POSITIVE) * (0.01 + 0.29 * (k % 7) as f64 / 6.0);
        let h = rnnal::variety::TangentVector::new(tangent * scale);
        let next = retract(model, &r, &h).unwrap();
        let (affine, sphere) = next.residuals(model);
        worst = worst.max(affine).max(sphere);
    }
    worst
}

/// Largest of `‖P(P V) − P V‖`, `|⟨P U, V⟩ − ⟨U, P V⟩|` and `‖h_R(P V)‖`
/// for unit `U`, `V` at random points.
pub fn tangent_projection_errors(model: &DnnModel, samples: usize, seed: u64) -> (f64, f64, f64) {
    use rnnal::variety::{normal_map, tangent_project};
    let (mut idem, mut adj, mut normal) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..samples as u64 {
        let rank = 2 + (k % 3) as usize;
        let r = random_point(model, rank, seed + k);
        let u = gaussian(model.n(), rank, seed + 2000 + k).normalize();
        let v = gaussian(model.n(), rank, seed + 3000 + k).normalize();
        let pu = tangent_project(model, r.matrix(), &u).unwrap().tangent.into_matrix();
        let pv = tangent_project(model, r.matrix(), &v).unwrap().tangent.into_matrix();
        let ppv = tangent_project(model, r.matrix(), &pv).unwrap().tangent.into_matrix();
        idem = idem.max((&ppv - &pv).norm());
        adj = adj.max((pu.dot(&v) - u.dot(&pv)).abs());
        let (d1, d2) = normal_map(model, r.matrix(), &pv);
        normal = normal.max((d1.norm_squared() + d2.norm_squared()).sqrt());
    }
    (idem, adj, normal)
}

/// Largest entry of `M − (H_μμ − H_μλ H_λλ⁻¹ H_λμ)` where `H` is the dense
/// matrix of `h_R h_R*` assembled column by column, relative to `1 + ‖M‖`.
pub fn schur_discrepancy(model: &DnnModel, r: &FactorPoint) -> f64 {
    use nalgebra::DVector;
    use rnnal::variety::{normal_adjoint, normal_map, schur_matrix};
    let (m, rank, nb) = (model.m(), r.rank(), model.binary().len());
    let dim = m * rank + nb;
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        let lambda = DMatrix::from_column_slice(m, rank, &e.as_slice()[..m * rank]);
        let mu = DVector::from_column_slice(&e.as_slice()[m * rank..]);
        let (d1, d2) = normal_map(model, r.matrix(), &normal_adjoint(model, r.matrix(), &lambda, &mu));
        for (i, v) in d1.iter().chain(d2.iter()).enumerate() {
            h[(i, j)] = *v;
        }
    }
    let k = m * rank;
    let h_ll = h.view((0, 0), (k, k)).into_owned();
    let h_lm = h.view((0, k), (k, nb)).into_owned();
    let h_mm = h.view((k, k), (nb, nb)).into_owned();
    let dense = if k > 0 {
        let chol = h_ll.cholesky().expect("A Aᵀ ⊗ I is positive definite");
        &h_mm - h_lm.transpose() * chol.solve(&h_lm)
    } else {
        h_mm
    };
    let schur = schur_matrix(model, r.matrix());
    (&schur - &dense).amax() / (1.0 + schur.norm())
}

/// Largest relative increase along a Weiszfeld/Newton objective trace,
/// converged or not.
pub fn weiszfeld_worst_increase(model: &DnnModel, v: &DMatrix<f64>) -> f64 {
    let report = rnnal::variety::weiszfeld_run(model, v, rnnal::variety::WEISZFELD_MAX_ITER).expect("Weiszfeld runs");
    report
        .objective_trace
        .windows(2)
        .map(|w| (w[1] - w[0]) / (1.0 + w[0].abs()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Models with linear constraints and binary rows, for the Weiszfeld dual.
pub fn weiszfeld_models() -> Vec<DnnModel> {
    let mut mixed = gen_qkp(10, 0.5, 21);
    mixed.binary.retain(|&i| i % 3 != 0);
    vec![
        build_dnn(&gen_qkp(10, 0.5, 22)).unwrap(),
        build_dnn(&gen_dqkp(12, 0.5, 23).unwrap()).unwrap(),
        build_dnn(&mixed).unwrap(),
        build_dnn(&rnnal::add_slacks(&gen_qkp(8, 0.3, 24))).unwrap(),
    ]
}

/// An instance with `m` random equality rows with coefficients in `1..=3`
/// whose right-hand side is `A x₀` for a random binary `x₀`.
pub fn planted_binary(n: usize, m: usize, seed: u64) -> MbqpProblem {
    use nalgebra::DVector;
    let mut rng = instance_rng(seed);
    let x0 = DVector::from_fn(n, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(1..=3) as f64);
    let b = &a * &x0;
    let mut p = gen_biq(n, 0.5, seed);
    p.a = a;
    p.b = b;
    p.name = format!("planted-n{n}-m{m}-s{seed}");
    p
}

/// All binary solutions of `A x = b` (exact integer data, `n ≤ 20`).
pub fn binary_solutions(p: &MbqpProblem) -> Vec<nalgebra::DVector<f64>> {
    use nalgebra::DVector;
    let n = p.n();
    (0u32..1 << n)
        .map(|bits| DVector::from_fn(n, |i, _| f64::from((bits >> i) & 1)))
        .filter(|x| (&p.a * x - &p.b).amax() == 0.0)
        .collect()
}

/// An exactly feasible factor `R` of rank `k` with `R̂R̂ᵀ = Σ_j w_j x̂_j x̂_jᵀ`
/// for `k` of the given binary solutions and random weights: the columns
/// `√w_j x̂_j` are rotated by a Householder reflection that maps their first
/// row onto `e₁`.
pub fn binary_mixture_point(solutions: &[nalgebra::DVector<f64>], k: usize, seed: u64) -> DMatrix<f64> {
    use nalgebra::DVector;
    let mut rng = instance_rng(seed);
    let n = solutions[0].len();
    let picks: Vec<usize> = rand::seq::index::sample(&mut rng, solutions.len(), k).into_vec();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut hat = DMatrix::zeros(n + 1, k);
    for (j, &pick) in picks.iter().enumerate() {
        let root = (raw[j] / total).sqrt();
        hat[(0, j)] = root;
        for i in 0..n {
            hat[(i + 1, j)] = root * solutions[pick][i];
        }
    }
    // Householder reflection H with (first row of hat) H = e₁ᵀ.
    let first = DVector::from_iterator(k, hat.row(0).iter().copied());
    let mut v = first.clone();
    v[0] -= 1.0;
    let rotated = if v.norm() > 0.0 {
        let v = v.normalize();
        &hat - (&hat * &v) * v.transpose() * 2.0
    } else {
        hat
    };
    rotated.rows(1, n).into_owned()
}

/// A random QAP of order `p` with integer flows and distances in `[0, 9]`.
pub fn random_qap(p: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = instance_rng(seed);
    let mut sym = || {
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in i + 1..p {
                let v = rng.random_range(0..10) as f64;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    };
    let w = sym();
    let d = sym();
    (w, d)
}

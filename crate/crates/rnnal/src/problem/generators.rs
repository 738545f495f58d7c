//! Benchmark instance builders and seeded random generators.
//!
//! All generators draw from ChaCha20 seeded with `seed`, so an instance is a
//! pure function of its dimensions and seed on every platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::MbqpProblem;
use crate::error::{Result, RnnalError};

/// The counter-based generator behind every random instance.
pub fn instance_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Random binary quadratic program in the ORLIB style.
///
/// Each upper-triangular entry (diagonal included) is present with
/// probability `density` and then uniform among the integers `[-100, 100]`.
/// As in ORLIB the generated matrix is a maximization profit, so the stored
/// minimization cost is its negation; the linear term lives on the diagonal.
pub fn gen_biq(n: usize, density: f64, seed: u64) -> MbqpProblem {
    let mut rng = instance_rng(seed);
    let mut q = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            if rng.random::<f64>() < density {
                let v = -(rng.random_range(-100i32..=100) as f64);
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
    }
    MbqpProblem {
        name: format!("biq-n{n}-s{seed}"),
        q,
        c: DVector::zeros(n),
        a: DMatrix::zeros(0, n),
        b: DVector::zeros(0),
        binary: (0..n).collect(),
        edges: vec![],
    }
}

/// Symmetric profit matrix with integer entries in `[1, 100]` present with
/// probability `p`, and integer weights in `[1, 50]`.
fn qkp_data(n: usize, p: f64, rng: &mut ChaCha20Rng) -> (DMatrix<f64>, DVector<f64>) {
    let mut profit = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            if rng.random::<f64>() < p {
                let v = rng.random_range(1i32..=100) as f64;
                profit[(i, j)] = v;
                profit[(j, i)] = v;
            }
        }
    }
    let weights = DVector::from_fn(n, |_, _| rng.random_range(1i32..=50) as f64);
    (profit, weights)
}

/// Quadratic knapsack instance with capacity `0.9 · eᵀ a`, written as the
/// equality-constrained minimization of `−xᵀ Q x`.
pub fn gen_qkp(n: usize, p: f64, seed: u64) -> MbqpProblem {
    let mut rng = instance_rng(seed);
    let (profit, weights) = qkp_data(n, p, &mut rng);
    let capacity = 0.9 * weights.sum();
    MbqpProblem {
        name: format!("qkp-n{n}-p{p}-s{seed}"),
        q: -profit,
        c: DVector::zeros(n),
        a: DMatrix::from_row_slice(1, n, weights.as_slice()),
        b: DVector::from_element(1, capacity),
        binary: (0..n).collect(),
        edges: vec![],
    }
}

/// Disjunctive quadratic knapsack instance.
///
/// Profits and weights follow [`gen_qkp`] with `p = 0.9`; `E` is a uniformly
/// random simple graph with `⌊d n⌋` edges and the capacity is
/// `eᵀ a / Δ(G)` (`Δ` the maximum degree, taken as 1 for an empty graph).
pub fn gen_dqkp(n: usize, d: f64, seed: u64) -> Result<MbqpProblem> {
    let target = (d * n as f64).floor() as usize;
    if n < 2 && target > 0 || target > n * n.saturating_sub(1) / 2 {
        return Err(RnnalError::InvalidProblem(format!(
            "cannot place {target} edges on {n} vertices"
        )));
    }
    let mut rng = instance_rng(seed);
    let (profit, weights) = qkp_data(n, 0.9, &mut rng);
    let mut edges = std::collections::BTreeSet::new();
    while edges.len() < target {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    let mut degree = vec![0usize; n];
    for &(i, j) in &edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let max_degree = degree.iter().copied().max().unwrap_or(0).max(1);
    let capacity = weights.sum() / max_degree as f64;
    Ok(MbqpProblem {
        name: format!("dqkp-n{n}-d{d}-s{seed}"),
        q: -profit,
        c: DVector::zeros(n),
        a: DMatrix::from_row_slice(1, n, weights.as_slice()),
        b: DVector::from_element(1, capacity),
        binary: (0..n).collect(),
        edges: edges.into_iter().collect(),
    })
}

/// Quadratic assignment `min tr(W Π D Πᵀ)` over permutation matrices `Π`.
///
/// Variables are `x = vec(Π)` (column-major), `Q = D ⊗ W` and the assignment
/// constraints are `(e ⊗ I, I ⊗ e)ᵀ x = e`. Those `2p` rows have rank
/// `2p − 1`; the direct form drops the last row so that `A` has full row
/// rank, while the slack form relaxes all `2p` rows (the identity blocks make
/// the relaxed matrix full rank).
pub fn build_qap(w: &DMatrix<f64>, d: &DMatrix<f64>, use_slacks: bool) -> Result<MbqpProblem> {
    let p = w.nrows();
    if w.shape() != (p, p) || d.shape() != (p, p) {
        return Err(RnnalError::InvalidProblem("QAP matrices must be square and equal-sized".into()));
    }
    for (name, mat) in [("W", w), ("D", d)] {
        if (mat - mat.transpose()).amax() > 1e-12 * mat.amax().max(1.0) {
            return Err(RnnalError::InvalidProblem(format!("QAP matrix {name} is not symmetric")));
        }
    }
    let n = p * p;
    let q = d.kronecker(w);
    let mut a = DMatrix::zeros(2 * p, n);
    for col in 0..p {
        for row in 0..p {
            let var = row + p * col;
            a[(row, var)] = 1.0;
            a[(p + col, var)] = 1.0;
        }
    }
    let full = MbqpProblem {
        name: format!("qap-p{p}"),
        q,
        c: DVector::zeros(n),
        a,
        b: DVector::from_element(2 * p, 1.0),
        binary: (0..n).collect(),
        edges: vec![],
    };
    if use_slacks {
        Ok(super::add_slacks(&full))
    } else {
        let m = 2 * p - 1;
        Ok(MbqpProblem {
            a: full.a.rows(0, m).into_owned(),
            b: full.b.rows(0, m).into_owned(),
            ..full
        })
    }
}

/// The θ₊ relaxation of the maximum stable set problem: `Q = −I`, `E` the
/// graph edges, every variable binary, no linear constraints.
pub fn build_theta(n: usize, edges: &[(usize, usize)]) -> Result<MbqpProblem> {
    let mut normalized = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        if i == j || i >= n || j >= n {
            return Err(RnnalError::InvalidProblem(format!("invalid edge ({i}, {j}) for n = {n}")));
        }
        normalized.push((i.min(j), i.max(j)));
    }
    normalized.sort_unstable();
    if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
        return Err(RnnalError::DuplicateEdge(w[0].0, w[0].1));
    }
    Ok(MbqpProblem {
        name: format!("theta-n{n}-e{}", normalized.len()),
        q: -DMatrix::identity(n, n),
        c: DVector::zeros(n),
        a: DMatrix::zeros(0, n),
        b: DVector::zeros(0),
        binary: (0..n).collect(),
        edges: normalized,
    })
}

/// Erdős–Rényi graph on `n` vertices: each pair `(i, j)`, `i < j`, is an
/// edge with probability `p`. Edges are returned sorted.
pub fn gen_random_graph(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = instance_rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Gromov–Wasserstein instance `min −⟨D_X Π D_Y, Π⟩` over couplings of the
/// marginals `a` (length `l`) and `b` (length `k`).
///
/// `x = vec(Π)`, `Q = −D_Y ⊗ D_X` and the marginal constraints are
/// `(e_k ⊗ I_l, I_k ⊗ e_l)ᵀ x = (a; b)` with the last row removed (it is
/// implied by the others). No variable is binary.
pub fn build_gwd(
    dx: &DMatrix<f64>,
    dy: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<MbqpProblem> {
    let (l, k) = (dx.nrows(), dy.nrows());
    if dx.shape() != (l, l) || dy.shape() != (k, k) || a.len() != l || b.len() != k {
        return Err(RnnalError::InvalidProblem("GWD dimensions are inconsistent".into()));
    }
    for (name, v) in [("a", a), ("b", b)] {
        if v.iter().any(|x| !(*x >= 0.0)) || (v.sum() - 1.0).abs() > 1e-10 {
            return Err(RnnalError::InvalidMarginals(format!(
                "{name} must be a nonnegative vector summing to 1 (sum = {})",
                v.sum()
            )));
        }
    }
    let n = l * k;
    let m = l + k - 1;
    let mut amat = DMatrix::zeros(m, n);
    for col in 0..k {
        for row in 0..l {
            let var = row + l * col;
            amat[(row, var)] = 1.0;
            if l + col < m {
                amat[(l + col, var)] = 1.0;
            }
        }
    }
    let mut rhs = DVector::zeros(m);
    rhs.rows_mut(0, l).copy_from(a);
    rhs.rows_mut(l, k - 1).copy_from(&b.rows(0, k - 1));
    Ok(MbqpProblem {
        name: format!("gwd-l{l}-k{k}"),
        q: -dy.kronecker(dx),
        c: DVector::zeros(n),
        a: amat,
        b: rhs,
        binary: vec![],
        edges: vec![],
    })
}

/// Random shape-correspondence GWD instance: `l` Gaussian points in ℝ³ and
/// a jittered, rotated copy (or an independent cloud when `k ≠ l`), with
/// Euclidean distance matrices and uniform marginals.
pub fn gen_gwd(l: usize, k: usize, seed: u64) -> Result<MbqpProblem> {
    let mut rng = instance_rng(seed);
    let mut gauss = |rows: usize| DMatrix::<f64>::from_fn(rows, 3, |_, _| rng.sample(StandardNormal));
    let source = gauss(l);
    let target = if k == l {
        let (s, c) = (0.6f64.sin(), 0.6f64.cos());
        let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        &source * rot + gauss(l) * 0.05
    } else {
        gauss(k)
    };
    let distances = |pts: &DMatrix<f64>| {
        DMatrix::from_fn(pts.nrows(), pts.nrows(), |i, j| (pts.row(i) - pts.row(j)).norm())
    };
    let mut p = build_gwd(
        &distances(&source),
        &distances(&target),
        &DVector::from_element(l, 1.0 / l as f64),
        &DVector::from_element(k, 1.0 / k as f64),
    )?;
    p.name = format!("gwd-l{l}-k{k}-s{seed}");
    Ok(p)
}

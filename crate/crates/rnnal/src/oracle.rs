//! Independent reference solvers for tiny instances.
//!
//! [`dense_dnn_solve`] solves the DNN relaxation with a two-block splitting
//! method on the full `(n+1) × (n+1)` matrix: one block is the affine set,
//! the other the pair (PSD cone, polyhedral cone). It builds its own dense
//! description of the lifted constraints from the raw instance and shares no
//! code with the factorized solver. [`brute_force_mbqp`] enumerates binary
//! points.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, RnnalError};
use crate::problem::{DnnModel, MbqpProblem};

/// Largest `n` accepted by [`dense_dnn_solve`].
pub const ORACLE_MAX_N: usize = 80;
/// Largest `n` accepted by [`brute_force_mbqp`].
pub const BRUTE_FORCE_MAX_N: usize = 22;
/// Iteration cap of the splitting method.
pub const ORACLE_MAX_ITER: usize = 200_000;

/// Result of [`dense_dnn_solve`].
#[derive(Clone, Debug)]
pub struct OracleResult {
    /// `⟨C, Y⟩`.
    pub obj: f64,
    /// The PSD iterate.
    pub y_matrix: Option<DMatrix<f64>>,
    /// Iterations used.
    pub iterations: usize,
    /// Final `max(primal, dual)` residual.
    pub residual: f64,
}

/// Dense constraint list `⟨G_i, Y⟩ = d_i` of the lifted relaxation, built
/// from the raw instance.
fn lifted_constraints(p: &MbqpProblem) -> (Vec<DMatrix<f64>>, Vec<f64>) {
    let (n, m) = (p.n(), p.m());
    let dim = n + 1;
    let mut mats = Vec::new();
    let mut rhs = Vec::new();
    let sym = |i: usize, j: usize, v: f64, g: &mut DMatrix<f64>| {
        if i == j {
            g[(i, i)] += v;
        } else {
            g[(i, j)] += 0.5 * v;
            g[(j, i)] += 0.5 * v;
        }
    };
    // Y₁₁ = 1
    let mut g = DMatrix::zeros(dim, dim);
    g[(0, 0)] = 1.0;
    mats.push(g);
    rhs.push(1.0);
    // Σ_j a_ij x_j = b_i
    for i in 0..m {
        let mut g = DMatrix::zeros(dim, dim);
        for j in 0..n {
            sym(0, j + 1, p.a[(i, j)], &mut g);
        }
        mats.push(g);
        rhs.push(p.b[i]);
    }
    // Σ_j a_ij X_jk − b_i x_k = 0
    for k in 0..n {
        for i in 0..m {
            let mut g = DMatrix::zeros(dim, dim);
            for j in 0..n {
                sym(j + 1, k + 1, p.a[(i, j)], &mut g);
            }
            sym(0, k + 1, -p.b[i], &mut g);
            mats.push(g);
            rhs.push(0.0);
        }
    }
    // X_ii − x_i = 0
    for &i in &p.binary {
        let mut g = DMatrix::zeros(dim, dim);
        g[(i + 1, i + 1)] = 1.0;
        sym(0, i + 1, -1.0, &mut g);
        mats.push(g);
        rhs.push(0.0);
    }
    (mats, rhs)
}

/// Orthogonal projector onto `{Y : ⟨G_i, Y⟩ = d_i}` built from a
/// pseudo-inverse of the Gram matrix (the constraint list may be redundant).
struct AffineProjector {
    mats: Vec<DMatrix<f64>>,
    rhs: DVector<f64>,
    gram_pinv: DMatrix<f64>,
}

impl AffineProjector {
    fn new(p: &MbqpProblem) -> Self {
        let (mats, rhs) = lifted_constraints(p);
        let k = mats.len();
        let gram = DMatrix::from_fn(k, k, |i, j| mats[i].dot(&mats[j]));
        let eig = SymmetricEigen::new(gram);
        let cutoff = 1e-10 * eig.eigenvalues.amax().max(1.0);
        let inv = eig.eigenvalues.map(|v| if v > cutoff { 1.0 / v } else { 0.0 });
        let gram_pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        Self { mats, rhs: DVector::from_vec(rhs), gram_pinv }
    }

    fn residual(&self, y: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.mats.len(), |i, _| self.mats[i].dot(y) - self.rhs[i])
    }

    fn project(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let coef = &self.gram_pinv * self.residual(y);
        let mut out = y.clone();
        for (g, c) in self.mats.iter().zip(coef.iter()) {
            out -= g * *c;
        }
        out
    }
}

fn project_psd(y: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (y + y.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let pos = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&pos) * eig.eigenvectors.transpose()
}

fn project_polyhedral(y: &DMatrix<f64>, zero: &[(usize, usize)]) -> DMatrix<f64> {
    let mut out = y.map(|v| v.max(0.0));
    for &(i, j) in zero {
        out[(i + 1, j + 1)] = 0.0;
        out[(j + 1, i + 1)] = 0.0;
    }
    out
}

/// Solves `min ⟨C, Y⟩` over `{Y : 𝒜(Y) = d} ∩ 𝕊₊ ∩ 𝒫` by alternating
/// direction splitting with residual balancing, to relative primal and dual
/// residuals below `tol`.
pub fn dense_dnn_solve(model: &DnnModel, tol: f64) -> Result<OracleResult> {
    let p = model.problem();
    let n = p.n();
    if n > ORACLE_MAX_N {
        return Err(RnnalError::TooLarge { n, cap: ORACLE_MAX_N });
    }
    let dim = n + 1;
    let mut cost = DMatrix::zeros(dim, dim);
    cost.view_mut((1, 1), (n, n)).copy_from(&p.q);
    for i in 0..n {
        cost[(0, i + 1)] = p.c[i];
        cost[(i + 1, 0)] = p.c[i];
    }
    let scale = cost.norm().max(1.0);
    let c = &cost / scale;
    let affine = AffineProjector::new(p);
    let mut rho = 1.0;
    let mut x = DMatrix::zeros(dim, dim);
    let mut y = DMatrix::zeros(dim, dim);
    let mut z = DMatrix::zeros(dim, dim);
    let mut u1: DMatrix<f64> = DMatrix::zeros(dim, dim);
    let mut u2: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for it in 1..=ORACLE_MAX_ITER {
        let target = (&y - &u1 + &z - &u2) * 0.5 - &c * (0.5 / rho);
        x = affine.project(&target);
        let y_old = y.clone();
        let z_old = z.clone();
        y = project_psd(&(&x + &u1));
        z = project_polyhedral(&(&x + &u2), &p.edges);
        let r1 = &x - &y;
        let r2 = &x - &z;
        u1 += &r1;
        u2 += &r2;
        if it % 10 == 0 {
            let primal = (r1.norm_squared() + r2.norm_squared()).sqrt() / (1.0 + x.norm());
            let dual = rho * ((&y - &y_old) + (&z - &z_old)).norm() / (1.0 + c.norm());
            let affine_res = affine.residual(&y).norm() / (1.0 + affine.rhs.norm());
            let residual = primal.max(dual).max(affine_res);
            if residual <= tol {
                return Ok(OracleResult { obj: cost.dot(&y), y_matrix: Some(y), iterations: it, residual });
            }
            if it % 50 == 0 {
                if primal > 10.0 * dual {
                    rho *= 2.0;
                    u1 /= 2.0;
                    u2 /= 2.0;
                } else if dual > 10.0 * primal {
                    rho /= 2.0;
                    u1 *= 2.0;
                    u2 *= 2.0;
                }
            }
        }
    }
    let primal = ((&x - &y).norm_squared() + (&x - &z).norm_squared()).sqrt() / (1.0 + x.norm());
    Err(RnnalError::NoConvergence { iterations: ORACLE_MAX_ITER, residual: primal })
}

/// Exact minimum of a pure-binary instance by Gray-code enumeration of
/// `{0,1}ⁿ`, filtered by `A x = b` (to `1e-9` relative) and the
/// incompatible pairs.
pub fn brute_force_mbqp(p: &MbqpProblem) -> Result<(DVector<f64>, f64)> {
    let n = p.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(RnnalError::TooLarge { n, cap: BRUTE_FORCE_MAX_N });
    }
    if p.binary.len() != n {
        return Err(RnnalError::InvalidProblem("brute force needs every variable binary".into()));
    }
    let m = p.m();
    let feas_tol = 1e-9 * (1.0 + p.b.amax());
    let mut neighbours = vec![Vec::new(); n];
    for &(i, j) in &p.edges {
        neighbours[i].push(j);
        neighbours[j].push(i);
    }
    let mut x = vec![0.0f64; n];
    let mut qx = DVector::<f64>::zeros(n);
    let mut ax = DVector::<f64>::zeros(m);
    let mut value = 0.0;
    let mut violated = 0usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |x: &[f64], value: f64, ax: &DVector<f64>, violated: usize, best: &mut Option<(Vec<f64>, f64)>| {
        if violated == 0 && (ax - &p.b).amax() <= feas_tol && best.as_ref().is_none_or(|(_, v)| value < *v) {
            *best = Some((x.to_vec(), value));
        }
    };
    consider(&x, value, &ax, violated, &mut best);
    for step in 1u64..(1u64 << n) {
        let j = step.trailing_zeros() as usize;
        let delta = if x[j] == 0.0 { 1.0 } else { -1.0 };
        value += delta * delta * p.q[(j, j)] + 2.0 * delta * qx[j] + 2.0 * delta * p.c[j];
        for i in 0..n {
            qx[i] += delta * p.q[(i, j)];
        }
        for i in 0..m {
            ax[i] += delta * p.a[(i, j)];
        }
        for &k in &neighbours[j] {
            if x[k] == 1.0 {
                if delta > 0.0 {
                    violated += 1;
                } else {
                    violated -= 1;
                }
            }
        }
        x[j] += delta;
        consider(&x, value, &ax, violated, &mut best);
    }
    let (x, _) = best.ok_or(RnnalError::Infeasible)?;
    let x = DVector::from_vec(x);
    let exact = p.objective(&x);
    Ok((x, exact))
}

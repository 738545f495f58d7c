//! Dual certificates, the spectrum of the dual slack, saddle escape and
//! rank adaptation.
//!
//! Given a stationary factor `R` with normal multipliers `(λ, μ)`, put
//!
//! ```text
//!   L = Q − Diag(μ̃) − W₂₂,   q = 2c + μ̃ − 2W₂₁,
//!   λ₁ = (A†)ᵀ (q + L A†b),   λ₂ = (A†)ᵀ L (2I − A†A),
//!   α  = −(J_A x)ᵀ L (J_A x) − W₁₁,
//!   S  = C − 𝒜*(λ₁, λ₂, μ, α) − W,
//! ```
//!
//! with `x = R e₁`, `μ̃` the scatter of `μ` into `ℝⁿ` and `J_A = I − A†A`.
//! At an exact stationary point `S = Nᵀ L N` with `N = J_A [−x, I]`, so the
//! smallest eigenvalue of `S` decides global optimality of the subproblem,
//! and a negative eigenvector `v` yields the descent direction `N v` in one
//! extra column.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Result, RnnalError};
use crate::linops::ja_apply;
use crate::problem::{AffineDual, DnnModel};
use crate::subsolver::SubproblemContext;
use crate::variety::{metric_project, retract, FactorPoint, TangentVector};

/// Armijo parameter of the escape line search.
pub const ESCAPE_ARMIJO: f64 = 1e-4;
/// Maximum halvings of the escape step.
pub const ESCAPE_MAX_HALVINGS: usize = 50;
/// Default relative singular-value threshold of [`decrease_rank`].
pub const RANK_DROP_TOL: f64 = 1e-8;
/// Largest Krylov dimension used by [`min_eig_s`].
pub const LANCZOS_MAX_DIM: usize = 400;

/// Recovered dual variables of the lifted subproblem.
#[derive(Clone, Debug)]
pub struct DualCertificate {
    /// Multipliers of the affine constraints.
    pub dual: AffineDual,
    /// The cone multiplier `W` (dense).
    pub w: DMatrix<f64>,
    /// `L = Q − Diag(μ̃) − W₂₂`.
    pub l_matrix: DMatrix<f64>,
    /// `x = R e₁`.
    pub anchor: DVector<f64>,
    /// `S = C − 𝒜*(y) − W`.
    pub s_dense: DMatrix<f64>,
    projected_anchor: DVector<f64>,
    dense_a: Option<DMatrix<f64>>,
    aat_inv_a: Option<DMatrix<f64>>,
}

impl DualCertificate {
    /// `N v = J_A(−x v₀ + v₁..ₙ)` for `v ∈ ℝⁿ⁺¹`.
    pub fn n_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.rows(1, v.len() - 1).into_owned();
        out.axpy(-v[0], &self.anchor, 1.0);
        self.project_null(out)
    }

    fn project_null(&self, mut v: DVector<f64>) -> DVector<f64> {
        if let (Some(a), Some(p)) = (&self.dense_a, &self.aat_inv_a) {
            let av = a * &v;
            v -= p.tr_mul(&av);
        }
        v
    }

    /// The compact operator `v ↦ Nᵀ L N v`.
    pub fn compact_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let nv = self.n_apply(v);
        let jl = self.project_null(&self.l_matrix * nv);
        let mut out = DVector::zeros(v.len());
        out[0] = -self.anchor.dot(&jl);
        out.rows_mut(1, jl.len()).copy_from(&jl);
        out
    }

    /// `‖C − 𝒜*(y) − S − W‖` against the given cost.
    pub fn assembly_residual(&self, model: &DnnModel, cost: &DMatrix<f64>) -> f64 {
        (cost - model.constraint_adjoint(&self.dual) - &self.s_dense - &self.w).norm()
    }

    /// `J_A x`.
    pub fn projected_anchor(&self) -> &DVector<f64> {
        &self.projected_anchor
    }
}

/// Builds the canonical certificate of a (near-)stationary factor of the
/// subproblem with cost `cost`.
pub fn recover_duals(
    model: &DnnModel,
    cost: &DMatrix<f64>,
    r: &FactorPoint,
    mu: &DVector<f64>,
    w: &DMatrix<f64>,
) -> Result<DualCertificate> {
    let (n, m) = (model.n(), model.m());
    let x = r.first_col();
    let mu_full = model.scatter_binary(mu);
    let mut l_matrix = cost.view((1, 1), (n, n)) - w.view((1, 1), (n, n));
    for i in 0..n {
        l_matrix[(i, i)] -= mu_full[i];
    }
    let q = cost.view((1, 0), (n, 1)).column(0) * 2.0 + &mu_full - w.view((1, 0), (n, 1)).column(0) * 2.0;

    let (lambda1, lambda2, dense_a, aat_inv_a) = if m > 0 {
        let a = model.factors().matrix().to_dense();
        let p = model.factors().aat_solve(&a)?;
        let t = &p * &l_matrix;
        let lambda1 = &p * (&q + &l_matrix * model.pinv_b());
        let lambda2 = &t * 2.0 - (&t * a.transpose()) * &p;
        (lambda1, lambda2, Some(a), Some(p))
    } else {
        (DVector::zeros(0), DMatrix::zeros(0, n), None, None)
    };
    let projected_anchor = if m > 0 {
        ja_apply(model.factors(), &DMatrix::from_column_slice(n, 1, x.as_slice()))?.column(0).into_owned()
    } else {
        x.clone()
    };
    let alpha = -projected_anchor.dot(&(&l_matrix * &projected_anchor)) - w[(0, 0)];
    let dual = AffineDual { lambda1, lambda2, mu: mu.clone(), alpha };
    let s_dense = cost - model.constraint_adjoint(&dual) - w;
    Ok(DualCertificate {
        dual,
        w: w.clone(),
        l_matrix,
        anchor: x,
        s_dense,
        projected_anchor,
        dense_a,
        aat_inv_a,
    })
}

/// One eigenpair.
#[derive(Clone, Debug)]
pub struct EigenPair {
    /// Eigenvalue.
    pub value: f64,
    /// Unit eigenvector.
    pub vector: DVector<f64>,
}

/// All eigenvalues of `S` in ascending order together with eigenvectors.
pub fn dense_spectrum(s: &DMatrix<f64>) -> Result<Vec<EigenPair>> {
    let eig = SymmetricEigen::try_new(s.clone(), f64::EPSILON, 0).ok_or(RnnalError::EigFailed)?;
    let mut pairs: Vec<EigenPair> = (0..eig.eigenvalues.len())
        .map(|i| EigenPair { value: eig.eigenvalues[i], vector: eig.eigenvectors.column(i).into_owned() })
        .collect();
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(pairs)
}

/// `‖Π_𝕊₊(−S)‖`, the norm of the negative part of the spectrum.
pub fn negative_part_norm(s: &DMatrix<f64>) -> Result<f64> {
    let values = SymmetricEigen::try_new(s.clone(), f64::EPSILON, 0)
        .ok_or(RnnalError::EigFailed)?
        .eigenvalues;
    Ok(values.iter().filter(|v| **v < 0.0).map(|v| v * v).sum::<f64>().sqrt())
}

/// The `k` algebraically smallest eigenpairs of a symmetric operator of
/// order `dim`, by Lanczos with full reorthogonalization.
///
/// Fails with [`RnnalError::EigFailed`] when the Ritz residuals do not reach
/// `1e-8 (1 + |θ|)` within the Krylov budget.
pub fn lanczos_smallest<F>(dim: usize, k: usize, apply: F, seed: u64) -> Result<Vec<EigenPair>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    use rand::Rng;
    if dim == 0 || k == 0 {
        return Ok(vec![]);
    }
    let k = k.min(dim);
    let max_dim = dim.min(LANCZOS_MAX_DIM.max(k + 1));
    let mut rng = crate::problem::instance_rng(seed);
    let start = DVector::from_fn(dim, |_, _| rng.random::<f64>() - 0.5);
    let mut basis: Vec<DVector<f64>> = vec![start.normalize()];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    loop {
        let j = basis.len() - 1;
        let mut w = apply(&basis[j]);
        let alpha = basis[j].dot(&w);
        alphas.push(alpha);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let beta = w.norm();
        let size = basis.len();
        let check = size >= k && (size % 10 == 0 || size == max_dim || beta < 1e-12);
        if check {
            let mut tri = DMatrix::zeros(size, size);
            for i in 0..size {
                tri[(i, i)] = alphas[i];
                if i + 1 < size {
                    tri[(i, i + 1)] = betas[i];
                    tri[(i + 1, i)] = betas[i];
                }
            }
            let eig = SymmetricEigen::new(tri);
            let mut order: Vec<usize> = (0..size).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let converged = order[..k].iter().all(|&i| {
                let theta = eig.eigenvalues[i];
                (beta * eig.eigenvectors[(size - 1, i)]).abs() <= 1e-8 * (1.0 + theta.abs())
            });
            if converged || beta < 1e-12 || size == max_dim {
                let pairs: Vec<EigenPair> = order[..k]
                    .iter()
                    .map(|&i| {
                        let mut v = DVector::zeros(dim);
                        for (t, b) in basis.iter().enumerate() {
                            v.axpy(eig.eigenvectors[(t, i)], b, 1.0);
                        }
                        let v = v.normalize();
                        EigenPair { value: eig.eigenvalues[i], vector: v }
                    })
                    .collect();
                let ok = pairs.iter().all(|p| {
                    let res = apply(&p.vector) - &p.vector * p.value;
                    res.norm() <= 1e-8 * (1.0 + p.value.abs())
                });
                if ok {
                    return Ok(pairs);
                }
                if beta < 1e-12 || size == max_dim {
                    return Err(RnnalError::EigFailed);
                }
            }
        }
        if beta < 1e-12 {
            return Err(RnnalError::EigFailed);
        }
        betas.push(beta);
        basis.push(w / beta);
    }
}

/// The `k` smallest eigenpairs of `S`: Lanczos on the compact operator
/// `Nᵀ L N`, falling back to a dense eigendecomposition of the assembled
/// matrix if Lanczos does not converge.
pub fn min_eig_s(cert: &DualCertificate, k: usize) -> Result<Vec<EigenPair>> {
    let dim = cert.s_dense.nrows();
    match lanczos_smallest(dim, k, |v| &cert.s_dense * v, 0x1a2c) {
        Ok(pairs) => Ok(pairs),
        Err(_) => Ok(dense_spectrum(&cert.s_dense)?.into_iter().take(k).collect()),
    }
}

/// Escape direction at a saddle: `P = [R, 0]`, `U = [0, N V]` and the
/// second-order model coefficient `β = ⟨S, V Vᵀ⟩` through the compact form.
pub fn escape_direction(r: &FactorPoint, vectors: &[DVector<f64>], cert: &DualCertificate) -> (FactorPoint, TangentVector, f64) {
    let (n, rank, extra) = (r.n(), r.rank(), vectors.len());
    let mut padded = DMatrix::zeros(n, rank + extra);
    padded.view_mut((0, 0), (n, rank)).copy_from(r.matrix());
    let mut direction = DMatrix::zeros(n, rank + extra);
    let mut beta = 0.0;
    for (t, v) in vectors.iter().enumerate() {
        let nv = cert.n_apply(v);
        direction.column_mut(rank + t).copy_from(&nv);
        beta += cert.compact_apply(v).dot(v);
    }
    (FactorPoint::new(padded), TangentVector::new(direction), beta)
}

/// Outcome of [`increase_rank`].
#[derive(Clone, Debug)]
pub struct EscapeStep {
    /// The accepted point of rank `r + τ`.
    pub point: FactorPoint,
    /// Objective at the accepted point.
    pub value: f64,
    /// Accepted step length.
    pub step: f64,
    /// Model coefficient `β`.
    pub beta: f64,
}

/// Leaves a saddle by adding columns along negative-curvature eigenvectors
/// of `S` with an Armijo search on `f(P + tU) ≤ f(R) + 1e-4 β t²`.
pub fn increase_rank(
    ctx: &mut SubproblemContext<'_>,
    r: &FactorPoint,
    vectors: &[DVector<f64>],
    cert: &DualCertificate,
) -> Result<EscapeStep> {
    let f0 = ctx.eval_objective(r);
    let (padded, direction, beta) = escape_direction(r, vectors, cert);
    let unorm = direction.matrix().norm();
    if !(beta < 0.0) || unorm == 0.0 {
        return Err(RnnalError::EscapeStalled { halvings: 0 });
    }
    let trust = 2.0 * padded.matrix().norm();
    let mut t = if trust > 0.0 { 0.99 * trust / unorm } else { 1.0 };
    t = t.min(1e3);
    for _ in 0..=ESCAPE_MAX_HALVINGS {
        let h = TangentVector::new(direction.matrix() * t);
        if let Ok(trial) = retract(ctx.model(), &padded, &h) {
            let value = ctx.eval_objective(&trial);
            if value.is_finite() && value <= f0 + ESCAPE_ARMIJO * beta * t * t {
                return Ok(EscapeStep { point: trial, value, step: t, beta });
            }
        }
        t *= 0.5;
    }
    ctx.eval_objective(r);
    Err(RnnalError::EscapeStalled { halvings: ESCAPE_MAX_HALVINGS })
}

/// Thin SVD of the block after the first column, sorted by decreasing
/// singular value.
struct TailSvd {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
}

impl TailSvd {
    fn new(r: &FactorPoint) -> Option<Self> {
        let rank = r.rank();
        let tail = r.matrix().columns(1, rank - 1).into_owned();
        let svd = SVD::new(tail, true, false);
        let u = svd.u?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
        let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
        Some(Self { u, sigma })
    }

    /// Number of singular values at or above `drop_tol · σ_max`.
    fn count_above(&self, drop_tol: f64) -> usize {
        let sigma_max = self.sigma.first().copied().unwrap_or(0.0);
        if sigma_max > 0.0 {
            self.sigma.iter().filter(|&&v| v >= drop_tol * sigma_max).count()
        } else {
            0
        }
    }

    /// Feasible rank-`new_rank` truncation `[x, U Σ]` and its objective
    /// value, if the re-projection succeeds.
    fn truncate(&self, ctx: &mut SubproblemContext<'_>, r: &FactorPoint, new_rank: usize) -> Option<(FactorPoint, f64)> {
        let mut reduced = DMatrix::zeros(r.n(), new_rank);
        reduced.column_mut(0).copy_from(&r.matrix().column(0));
        for t in 0..new_rank - 1 {
            reduced.column_mut(t + 1).copy_from(&(self.u.column(t) * self.sigma[t]));
        }
        let candidate = FactorPoint::new(metric_project(ctx.model(), &reduced).ok()?);
        if !candidate.is_feasible(ctx.model()) {
            return None;
        }
        let value = ctx.eval_objective(&candidate);
        Some((candidate, value))
    }
}

/// Drops the columns of `R` whose singular values (of the block after the
/// first column) fall below `drop_tol · σ_max`, re-projects, and accepts the
/// smaller factor only if `f` grows by at most `eps_i`. The first column
/// `x = R e₁` is kept so that `R̂` keeps its structure.
pub fn decrease_rank(
    ctx: &mut SubproblemContext<'_>,
    r: &FactorPoint,
    eps_i: f64,
    drop_tol: f64,
    min_rank: usize,
) -> FactorPoint {
    reduce(ctx, r, eps_i, drop_tol, min_rank, false)
}

/// [`decrease_rank`] followed by a bisection for the smallest rank whose
/// truncation still grows `f` by at most `eps_i`. The acceptance test is the
/// same, so the result is admissible for the same reasons; the search only
/// finds smaller admissible ranks when the trailing singular values are
/// small but not negligible relative to `σ_max`.
pub fn decrease_rank_search(
    ctx: &mut SubproblemContext<'_>,
    r: &FactorPoint,
    eps_i: f64,
    drop_tol: f64,
    min_rank: usize,
) -> FactorPoint {
    reduce(ctx, r, eps_i, drop_tol, min_rank, true)
}

fn reduce(
    ctx: &mut SubproblemContext<'_>,
    r: &FactorPoint,
    eps_i: f64,
    drop_tol: f64,
    min_rank: usize,
    search: bool,
) -> FactorPoint {
    let rank = r.rank();
    let floor = min_rank.max(1);
    if rank <= floor {
        return r.clone();
    }
    let Some(svd) = TailSvd::new(r) else {
        return r.clone();
    };
    let before = ctx.eval_objective(r);
    let mut best: Option<FactorPoint> = None;
    let mut hi = rank;
    let spec_rank = (svd.count_above(drop_tol) + 1).max(floor);
    if spec_rank < rank {
        if let Some((candidate, after)) = svd.truncate(ctx, r, spec_rank) {
            if after <= before + eps_i {
                best = Some(candidate);
                hi = spec_rank;
            }
        }
    }
    if search {
        // Smallest admissible rank in [floor, hi), assuming admissibility is
        // monotone in the rank.
        let mut lo = floor;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match svd.truncate(ctx, r, mid) {
                Some((candidate, after)) if after <= before + eps_i => {
                    best = Some(candidate);
                    hi = mid;
                }
                _ => lo = mid + 1,
            }
        }
    }
    match best {
        Some(point) => {
            ctx.eval_objective(&point);
            point
        }
        None => {
            ctx.eval_objective(r);
            r.clone()
        }
    }
}

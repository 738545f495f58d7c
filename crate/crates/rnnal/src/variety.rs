//! Geometry of the factorized feasible set
//!
//! ```text
//!   M_r = { R ∈ ℝ^{n×r} : A R = b e₁ᵀ,  diag_B(R Rᵀ) = R_B e₁ }.
//! ```
//!
//! With the shifted factor `R' = 2R − e e₁ᵀ` the quadratic constraints say
//! that every binary row of `R'` has unit norm, so `M_r` is an affine
//! subspace intersected with a product of spheres. The linearized constraint
//! map at `R` is
//!
//! ```text
//!   h_R(H)       = (A H,  ⟨H_i, R'_i⟩ for i ∈ B),
//!   h_R*(λ, μ)   = Aᵀ λ + Σ_{i∈B} μ_i e_i R'_iᵀ.
//! ```
//!
//! This module solves the normal system `h_R h_R* (λ, μ) = d` by eliminating
//! `λ` (a Schur complement of order `|B|`, or its Sherman–Morrison–Woodbury
//! form when `m r` is small), projects onto tangent spaces, and computes the
//! metric projection onto `M_r` through a convex dual problem solved by a
//! generalized Weiszfeld iteration accelerated by Newton steps.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RnnalError};
use crate::linops::{pinv_apply, ConstraintFactors, PIVOT_THRESHOLD};
use crate::problem::{instance_rng, DnnModel};

/// Feasibility tolerance of a factor flagged feasible (relative to `1 + ‖b‖`
/// for the affine part).
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Row norms below this value make the convexified projection degenerate.
pub const ANCHOR_THRESHOLD: f64 = 1e-14;

/// Iteration cap of the Weiszfeld/Newton solver.
pub const WEISZFELD_MAX_ITER: usize = 500;

/// Relative step size at which the Weiszfeld iteration hands over to Newton.
pub const NEWTON_SWITCH: f64 = 1e-4;

/// Number of fresh random starts tried by [`feasible_init`].
pub const INIT_ATTEMPTS: usize = 10;

/// A factor `R ∈ ℝ^{n×r}`; `R̂ = [e₁ᵀ; R]` factors the lifted matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPoint {
    r: DMatrix<f64>,
}

impl FactorPoint {
    /// Wraps a factor matrix.
    pub fn new(r: DMatrix<f64>) -> Self {
        Self { r }
    }

    /// The factor matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Consumes the point and returns the factor matrix.
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.r
    }

    /// Number of columns `r`.
    pub fn rank(&self) -> usize {
        self.r.ncols()
    }

    /// Number of rows `n`.
    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    /// `x = R e₁`.
    pub fn first_col(&self) -> DVector<f64> {
        self.r.column(0).into_owned()
    }

    /// `R Rᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.r * self.r.transpose()
    }

    /// `R̂ = [e₁ᵀ; R]`, of size `(n+1) × r`.
    pub fn lifted(&self) -> DMatrix<f64> {
        lifted_factor(&self.r)
    }

    /// `Ŷ = R̂ R̂ᵀ`.
    pub fn lifted_gram(&self) -> DMatrix<f64> {
        let rhat = self.lifted();
        &rhat * rhat.transpose()
    }

    /// `(‖A R − b e₁ᵀ‖, ‖diag_B(R Rᵀ) − R_B e₁‖)`.
    pub fn residuals(&self, model: &DnnModel) -> (f64, f64) {
        (affine_residual(model, &self.r), sphere_residual(model, &self.r))
    }

    /// Whether both residuals are within [`FEASIBILITY_TOL`].
    pub fn is_feasible(&self, model: &DnnModel) -> bool {
        let (affine, sphere) = self.residuals(model);
        affine <= FEASIBILITY_TOL * (1.0 + model.b().norm()) && sphere <= FEASIBILITY_TOL
    }
}

/// A tangent direction `H` at some base point: `A H = 0` and
/// `2 diag_B(H Rᵀ) − H_B e₁ = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    h: DMatrix<f64>,
}

impl TangentVector {
    /// Wraps a matrix that the caller asserts is tangent.
    pub fn new(h: DMatrix<f64>) -> Self {
        Self { h }
    }

    /// The direction matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Consumes the vector.
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.h
    }
}

/// Output of [`tangent_project`]: the tangent component and the normal
/// multipliers `(λ, μ)` with `V = P(V) + h_R*(λ, μ)`.
#[derive(Clone, Debug)]
pub struct TangentProjection {
    /// `P(V)`.
    pub tangent: TangentVector,
    /// `m × r` multiplier of `A R = b e₁ᵀ`.
    pub lambda: DMatrix<f64>,
    /// Multiplier of the sphere constraints, indexed by the binary set.
    pub mu: DVector<f64>,
}

/// `[e₁ᵀ; R]`.
pub fn lifted_factor(r: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = r.shape();
    let mut rhat = DMatrix::zeros(n + 1, k);
    if k > 0 {
        rhat[(0, 0)] = 1.0;
    }
    rhat.view_mut((1, 0), (n, k)).copy_from(r);
    rhat
}

/// `‖A R − b e₁ᵀ‖`.
pub fn affine_residual(model: &DnnModel, r: &DMatrix<f64>) -> f64 {
    if model.m() == 0 {
        return 0.0;
    }
    let mut ar = model.factors().matrix().mul(r);
    ar.column_mut(0).axpy(-1.0, model.b(), 1.0);
    ar.norm()
}

/// `‖diag_B(R Rᵀ) − R_B e₁‖`.
pub fn sphere_residual(model: &DnnModel, r: &DMatrix<f64>) -> f64 {
    model
        .binary()
        .iter()
        .map(|&i| {
            let row = r.row(i);
            let d = row.norm_squared() - row[0];
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Binary rows of `R' = 2R − e e₁ᵀ`, an `|B| × r` matrix.
fn shifted_binary_rows(model: &DnnModel, r: &DMatrix<f64>) -> DMatrix<f64> {
    let binary = model.binary();
    let mut p = DMatrix::zeros(binary.len(), r.ncols());
    for (k, &i) in binary.iter().enumerate() {
        for t in 0..r.ncols() {
            p[(k, t)] = 2.0 * r[(i, t)];
        }
        p[(k, 0)] -= 1.0;
    }
    p
}

/// The linearized constraint map `h_R(V)`.
pub fn normal_map(model: &DnnModel, r: &DMatrix<f64>, v: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let av = model.factors().matrix().mul(v);
    let p = shifted_binary_rows(model, r);
    let sphere = DVector::from_fn(p.nrows(), |k, _| v.row(model.binary()[k]).dot(&p.row(k)));
    (av, sphere)
}

/// The adjoint `h_R*(λ, μ) = Aᵀλ + Σ_{i∈B} μ_i e_i R'_iᵀ`.
pub fn normal_adjoint(model: &DnnModel, r: &DMatrix<f64>, lambda: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut out = if model.m() > 0 {
        model.factors().matrix().tr_mul(lambda)
    } else {
        DMatrix::zeros(r.nrows(), r.ncols())
    };
    for (k, &i) in model.binary().iter().enumerate() {
        for t in 0..r.ncols() {
            let shifted = 2.0 * r[(i, t)] - if t == 0 { 1.0 } else { 0.0 };
            out[(i, t)] += mu[k] * shifted;
        }
    }
    out
}

fn cholesky_checked(mat: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let max_diag = mat.diagonal().iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let threshold = PIVOT_THRESHOLD * max_diag.max(f64::MIN_POSITIVE);
    let chol = Cholesky::new(mat).ok_or(RnnalError::SingularSystem { pivot: 0.0, threshold })?;
    let l = chol.l_dirty();
    for i in 0..l.nrows() {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > threshold) {
            return Err(RnnalError::SingularSystem { pivot, threshold });
        }
    }
    Ok(chol)
}

/// Schur complement `M = (I − A†A)_{BB} ∘ (R'R'ᵀ)_{BB}` of the normal system.
pub fn schur_matrix(model: &DnnModel, r: &DMatrix<f64>) -> DMatrix<f64> {
    let p = shifted_binary_rows(model, r);
    let gram_p = &p * p.transpose();
    if model.m() == 0 {
        return DMatrix::from_diagonal(&gram_p.diagonal());
    }
    let k = model.binary_coupling();
    let coupling = k.tr_mul(k);
    let nb = p.nrows();
    DMatrix::from_fn(nb, nb, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        (id - coupling[(i, j)]) * gram_p[(i, j)]
    })
}

/// Whether the Sherman–Morrison–Woodbury route is cheaper than the dense
/// Schur complement for `m r` coupling columns and `|B|` binary rows.
pub fn prefers_woodbury(mr: usize, nb: usize) -> bool {
    let (mr, nb) = (mr as f64, nb as f64);
    mr.powi(3) + mr * mr * nb < nb.powi(3)
}

/// Solves `h_R h_R* (λ, μ) = (rhs_λ, rhs_μ)`.
///
/// `λ` is eliminated through `A Aᵀ`, leaving the `|B| × |B|` Schur system
/// `M μ = rhs_μ − ⟨(A_Bᵀ (AAᵀ)⁻¹ rhs_λ)_i, R'_i⟩`. `M` is factorized densely
/// or, when the coupling rank `m r` is small, inverted through its
/// diagonal-plus-low-rank form `M = Diag(‖R'_i‖²) − U Uᵀ`.
pub fn solve_normal_system(
    model: &DnnModel,
    r: &DMatrix<f64>,
    rhs_lambda: &DMatrix<f64>,
    rhs_mu: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let f: &ConstraintFactors = model.factors();
    let (m, nb, rank) = (model.m(), model.binary().len(), r.ncols());
    if rhs_lambda.shape() != (m, rank) || rhs_mu.len() != nb {
        return Err(RnnalError::DimensionMismatch {
            context: "solve_normal_system",
            expected: (m * rank, nb),
            found: (rhs_lambda.len(), rhs_mu.len()),
        });
    }
    if nb == 0 {
        return Ok((f.aat_solve(rhs_lambda)?, DVector::zeros(0)));
    }
    let p = shifted_binary_rows(model, r);
    let row_sq: Vec<f64> = p.row_iter().map(|row| row.norm_squared()).collect();
    let max_sq = row_sq.iter().cloned().fold(0.0, f64::max);
    let threshold = PIVOT_THRESHOLD * max_sq.max(f64::MIN_POSITIVE);
    if let Some(&pivot) = row_sq.iter().find(|v| !(**v > threshold)) {
        return Err(RnnalError::SingularSystem { pivot, threshold });
    }
    if m == 0 {
        let mu = DVector::from_fn(nb, |k, _| rhs_mu[k] / row_sq[k]);
        return Ok((DMatrix::zeros(0, rank), mu));
    }

    let k = model.binary_coupling();
    let z1 = f.chol_lower_solve(rhs_lambda)?;
    let coupled = k.tr_mul(&z1);
    let rhs2 = DVector::from_fn(nb, |i, _| rhs_mu[i] - coupled.row(i).dot(&p.row(i)));

    let mu = if prefers_woodbury(m * rank, nb) {
        // Columns of U are K_s ∘ P_{:,t} for every (s, t).
        let mut u = DMatrix::zeros(nb, m * rank);
        for s in 0..m {
            for t in 0..rank {
                let col = s * rank + t;
                for i in 0..nb {
                    u[(i, col)] = k[(s, i)] * p[(i, t)];
                }
            }
        }
        let dinv = DVector::from_iterator(nb, row_sq.iter().map(|v| 1.0 / v));
        let mut scaled_u = u.clone();
        for i in 0..nb {
            scaled_u.row_mut(i).scale_mut(dinv[i]);
        }
        let capacitance = DMatrix::identity(m * rank, m * rank) - u.tr_mul(&scaled_u);
        let cap = cholesky_checked(capacitance)?;
        let dinv_rhs = rhs2.component_mul(&dinv);
        let inner = cap.solve(&u.tr_mul(&dinv_rhs));
        dinv_rhs + scaled_u * inner
    } else {
        let schur = schur_matrix(model, r);
        cholesky_checked(schur)?.solve(&rhs2)
    };

    let mut weighted = p.clone();
    for i in 0..nb {
        weighted.row_mut(i).scale_mut(mu[i]);
    }
    let lambda = f.chol_upper_solve(&(z1 - k * weighted))?;
    Ok((lambda, mu))
}

/// `P(V) = V − h_R*(h_R h_R*)⁻¹ h_R(V)`, returned with the multipliers.
pub fn tangent_project(model: &DnnModel, r: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<TangentProjection> {
    let (d1, d2) = normal_map(model, r, v);
    let (lambda, mu) = solve_normal_system(model, r, &d1, &d2)?;
    let tangent = v - normal_adjoint(model, r, &lambda, &mu);
    Ok(TangentProjection {
        tangent: TangentVector::new(tangent),
        lambda,
        mu,
    })
}

/// Projection onto `B_r = { R : diag_B(R Rᵀ) = R_B e₁ }`: binary rows of
/// `2X − e e₁ᵀ` are normalized, other rows are kept.
pub fn proj_br(model: &DnnModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for &i in model.binary() {
        let mut row = x.row(i) * 2.0;
        row[0] -= 1.0;
        let norm = row.norm();
        if !(norm >= ANCHOR_THRESHOLD) {
            return Err(RnnalError::AnchorDegenerate { row: i });
        }
        row /= norm;
        row[0] += 1.0;
        out.row_mut(i).copy_from(&(row * 0.5));
    }
    Ok(out)
}

/// Trace of a [`weiszfeld_solve`] run.
#[derive(Clone, Debug)]
pub struct WeiszfeldReport {
    /// Minimizer `Θ` (`m × r`).
    pub theta: DMatrix<f64>,
    /// `G(Θ^k)` at every iterate, starting with `Θ⁰ = 0`.
    pub objective_trace: Vec<f64>,
    /// Generalized Weiszfeld steps taken.
    pub weiszfeld_steps: usize,
    /// Newton steps taken.
    pub newton_steps: usize,
    /// Final `‖∇G(Θ)‖`.
    pub grad_norm: f64,
    /// Whether the gradient test was met within the iteration cap.
    pub converged: bool,
    /// Set when the iteration stopped early because the minimizer sits at a
    /// nonsmooth point of `G`: either a binary row of `V' + AᵀΘ` stayed
    /// below [`ANCHOR_THRESHOLD`] (`Some(row)`) or a Weiszfeld step failed to
    /// decrease `G` beyond roundoff (`Some(usize::MAX)`).
    pub stalled: Option<usize>,
}

/// State of the convex dual `G(Θ)` at one `Θ`.
struct DualState {
    /// `U = V' + AᵀΘ`.
    u: DMatrix<f64>,
    /// Row norms of `U`.
    norms: Vec<f64>,
    value: f64,
    grad: DMatrix<f64>,
}

fn dual_state(model: &DnnModel, vp: &DMatrix<f64>, theta: &DMatrix<f64>) -> Result<DualState> {
    let a = model.factors().matrix();
    let u = vp + a.tr_mul(theta);
    let is_binary = model.is_binary();
    let mut norms = Vec::with_capacity(u.nrows());
    let mut value = 0.0;
    let mut scaled = u.clone();
    for i in 0..u.nrows() {
        let norm = u.row(i).norm();
        if is_binary[i] {
            if !(norm >= ANCHOR_THRESHOLD) {
                return Err(RnnalError::AnchorDegenerate { row: i });
            }
            value += norm;
            scaled.row_mut(i).scale_mut(1.0 / norm);
        } else {
            value += norm * norm;
            scaled.row_mut(i).scale_mut(2.0);
        }
        norms.push(norm);
    }
    let shift = model.shift_rhs();
    value += shift.dot(&theta.column(0));
    let mut grad = a.mul(&scaled);
    grad.column_mut(0).axpy(1.0, shift, 1.0);
    Ok(DualState { u, norms, value, grad })
}

/// Weights `v_i = 1/‖U_i‖` on binary rows and `2` elsewhere.
fn weiszfeld_weights(model: &DnnModel, norms: &[f64]) -> Vec<f64> {
    norms
        .iter()
        .zip(model.is_binary())
        .map(|(norm, &bin)| if bin { 1.0 / norm } else { 2.0 })
        .collect()
}

/// Hessian action of `G` at `U`: `Δ ↦ A [ (AᵀΔ)_i H_i ]`.
fn dual_hessian_apply(model: &DnnModel, state: &DualState, delta: &DMatrix<f64>) -> DMatrix<f64> {
    let a = model.factors().matrix();
    let mut w = a.tr_mul(delta);
    let is_binary = model.is_binary();
    for i in 0..w.nrows() {
        if is_binary[i] {
            let norm = state.norms[i];
            let unit = state.u.row(i) / norm;
            let along = unit.dot(&w.row(i));
            let row = (w.row(i) - unit * along) / norm;
            w.row_mut(i).copy_from(&row);
        } else {
            w.row_mut(i).scale_mut(2.0);
        }
    }
    a.mul(&w)
}

/// Newton direction by preconditioned conjugate gradients on the dual
/// Hessian, preconditioned with the Weiszfeld matrix `A Diag(v) Aᵀ`.
fn newton_direction(
    model: &DnnModel,
    state: &DualState,
    precond: &Cholesky<f64, Dyn>,
    tol: f64,
) -> DMatrix<f64> {
    let rhs = -&state.grad;
    let mut x = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    let mut res = rhs.clone();
    let mut z = precond.solve(&res);
    let mut dir = z.clone();
    let mut rz = res.dot(&z);
    let target = tol.max(1e-14 * rhs.norm());
    for _ in 0..200 {
        if res.norm() <= target {
            break;
        }
        let hd = dual_hessian_apply(model, state, &dir);
        let curv = dir.dot(&hd);
        if !(curv > 0.0) {
            break;
        }
        let step = rz / curv;
        x += &dir * step;
        res -= &hd * step;
        z = precond.solve(&res);
        let rz_new = res.dot(&z);
        dir = &z + &dir * (rz_new / rz);
        rz = rz_new;
    }
    x
}

/// Minimizes the convex dual
///
/// ```text
///   G(Θ) = Σ_{i∈B} ‖(V' + AᵀΘ)_i‖ + Σ_{i∉B} ‖(V' + AᵀΘ)_i‖² + ⟨b', AᵀΘ⟩
/// ```
///
/// with `V' = V − e e₁ᵀ/2` and `b' = A†(Ae − 2b) e₁ᵀ`, starting at `Θ⁰ = 0`.
///
/// Generalized Weiszfeld steps `Θ⁺ = −(A Diag(v) Aᵀ)⁻¹ A(b' + Diag(v) V')`
/// decrease `G` monotonically; once a step is shorter than
/// `1e-4 (1 + ‖Θ‖)` the iteration switches to damped Newton steps. Since
/// `∇G(Θ) = 2 (A R − b e₁ᵀ)` for `R = Proj_{B_r}(V + AᵀΘ)`, the stopping
/// test `‖∇G‖ ≤ 1e-10 (1 + ‖V‖)` is a feasibility guarantee.
pub fn weiszfeld_solve(model: &DnnModel, v: &DMatrix<f64>) -> Result<WeiszfeldReport> {
    let report = weiszfeld_run(model, v, WEISZFELD_MAX_ITER)?;
    match report.stalled {
        _ if report.converged => Ok(report),
        Some(usize::MAX) => Err(RnnalError::RetractionFailed("Weiszfeld step stalled at a nonsmooth point of the dual".into())),
        Some(row) => Err(RnnalError::AnchorDegenerate { row }),
        None => Err(RnnalError::MaxIterations { iterations: WEISZFELD_MAX_ITER }),
    }
}

/// Runs at most `max_iter` Weiszfeld/Newton steps of [`weiszfeld_solve`] and
/// returns the trace whether or not the gradient test was met. The trace is
/// monotone: a step that would raise `G` beyond roundoff ends the run with
/// [`WeiszfeldReport::stalled`] set. Only a degenerate start `Θ⁰ = 0` is an
/// error.
pub fn weiszfeld_run(model: &DnnModel, v: &DMatrix<f64>, max_iter: usize) -> Result<WeiszfeldReport> {
    let (n, rank, m) = (v.nrows(), v.ncols(), model.m());
    let a = model.factors().matrix();
    let mut vp = v.clone();
    for i in 0..n {
        vp[(i, 0)] -= 0.5;
    }
    let tol = 1e-10 * (1.0 + v.norm());
    let mut theta = DMatrix::zeros(m, rank);
    let mut report = WeiszfeldReport {
        theta: theta.clone(),
        objective_trace: Vec::new(),
        weiszfeld_steps: 0,
        newton_steps: 0,
        grad_norm: f64::INFINITY,
        converged: false,
        stalled: None,
    };
    let mut newton = false;
    let mut rng = instance_rng(0x5eed_0f_a11c);
    let mut perturbations = 0;
    let mut state = loop {
        match dual_state(model, &vp, &theta) {
            Ok(s) => break s,
            Err(RnnalError::AnchorDegenerate { row }) => {
                perturbations += 1;
                if perturbations > 10 {
                    return Err(RnnalError::AnchorDegenerate { row });
                }
                theta += DMatrix::from_fn(m, rank, |_, _| 1e-10 * rng.sample::<f64, _>(StandardNormal));
            }
            Err(e) => return Err(e),
        }
    };
    report.objective_trace.push(state.value);
    for _ in 0..max_iter {
        let gnorm = state.grad.norm();
        report.grad_norm = gnorm;
        if gnorm <= tol {
            report.theta = theta;
            report.converged = true;
            return Ok(report);
        }
        let weights = weiszfeld_weights(model, &state.norms);
        let gram = a.weighted_gram(&weights);
        let chol = cholesky_checked(gram)
            .map_err(|e| RnnalError::RetractionFailed(format!("Weiszfeld matrix is singular: {e}")))?;

        let mut accepted = None;
        if newton {
            let dir = newton_direction(model, &state, &chol, 0.1 * tol);
            let mut t = 1.0;
            for _ in 0..30 {
                let trial = &theta + &dir * t;
                if let Ok(s) = dual_state(model, &vp, &trial) {
                    let slack = 1e-12 * (1.0 + state.value.abs());
                    if s.value <= state.value + slack && s.grad.norm() < gnorm {
                        accepted = Some((trial, s));
                        break;
                    }
                    if s.value <= state.value - 1e-4 * t * dir.dot(&-&state.grad).abs() {
                        accepted = Some((trial, s));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                report.newton_steps += 1;
            } else {
                newton = false;
            }
        }
        if accepted.is_none() {
            // Θ⁺ = −(A Diag(v) Aᵀ)⁻¹ (A Diag(v) V' + (Ae − 2b) e₁ᵀ)
            let mut weighted = vp.clone();
            for (i, w) in weights.iter().enumerate() {
                weighted.row_mut(i).scale_mut(*w);
            }
            let mut rhs = a.mul(&weighted);
            rhs.column_mut(0).axpy(1.0, model.shift_rhs(), 1.0);
            let next = -chol.solve(&rhs);
            let step = (&next - &theta).norm();
            if step <= NEWTON_SWITCH * (1.0 + theta.norm()) {
                newton = true;
            }
            let mut candidate = next;
            let s = loop {
                match dual_state(model, &vp, &candidate) {
                    Ok(s) => break Ok(s),
                    Err(RnnalError::AnchorDegenerate { row }) => {
                        perturbations += 1;
                        if perturbations > 10 {
                            break Err(row);
                        }
                        candidate += DMatrix::from_fn(m, rank, |_, _| 1e-10 * rng.sample::<f64, _>(StandardNormal));
                    }
                    Err(e) => return Err(e),
                }
            };
            let s = match s {
                Ok(s) if s.value <= state.value + 1e-12 * (1.0 + state.value.abs()) => s,
                Ok(_) => {
                    report.stalled = Some(usize::MAX);
                    break;
                }
                Err(row) => {
                    report.stalled = Some(row);
                    break;
                }
            };
            report.weiszfeld_steps += 1;
            accepted = Some((candidate, s));
        }
        let (next_theta, next_state) = accepted.expect("a step is always produced");
        theta = next_theta;
        state = next_state;
        report.objective_trace.push(state.value);
    }
    report.grad_norm = state.grad.norm();
    report.converged = report.grad_norm <= tol;
    report.theta = theta;
    Ok(report)
}

/// Metric projection of `V` onto `M_r`.
///
/// * `m = 0`: closed-form row normalization onto `B_r`;
/// * `B = ∅`: affine projection `V − A†(AV − b e₁ᵀ)`;
/// * otherwise `Proj_{B_r}(V + AᵀΘ)` with `Θ` from [`weiszfeld_solve`].
pub fn metric_project(model: &DnnModel, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if model.m() == 0 {
        return proj_br(model, v);
    }
    let f = model.factors();
    if model.binary().is_empty() {
        let mut resid = f.matrix().mul(v);
        resid.column_mut(0).axpy(-1.0, model.b(), 1.0);
        return Ok(v - pinv_apply(f, &resid)?);
    }
    let report = weiszfeld_solve(model, v).map_err(|e| match e {
        RnnalError::MaxIterations { iterations } => {
            RnnalError::RetractionFailed(format!("Weiszfeld/Newton did not converge in {iterations} iterations"))
        }
        other => other,
    })?;
    proj_br(model, &(v + f.matrix().tr_mul(&report.theta)))
}

/// Retraction `Rtr_R(H) = Proj_{M_r}(R + H)`.
///
/// Steps longer than `2‖R‖` are outside the region where the convexified
/// projection is guaranteed and are rejected.
pub fn retract(model: &DnnModel, r: &FactorPoint, h: &TangentVector) -> Result<FactorPoint> {
    let step = h.matrix().norm();
    if step == 0.0 {
        return Ok(r.clone());
    }
    let bound = 2.0 * r.matrix().norm();
    if bound > 0.0 && step > bound * (1.0 + 1e-12) {
        return Err(RnnalError::RetractionFailed(format!(
            "step norm {step:e} exceeds the trust bound {bound:e}"
        )));
    }
    Ok(FactorPoint::new(metric_project(model, &(r.matrix() + h.matrix()))?))
}

/// Random feasible starting factor of rank `r`: a Gaussian matrix scaled to
/// norm `√n` is projected onto `M_r`; up to [`INIT_ATTEMPTS`] fresh draws.
pub fn feasible_init(model: &DnnModel, r: usize, seed: u64) -> Result<FactorPoint> {
    let n = model.n();
    let mut last = String::from("no attempt made");
    for attempt in 0..INIT_ATTEMPTS {
        let mut rng = instance_rng(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(attempt as u64));
        let mut v = DMatrix::from_fn(n, r.max(1), |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            v *= (n as f64).sqrt() / norm;
        }
        match metric_project(model, &v) {
            Ok(candidate) => {
                let point = FactorPoint::new(candidate);
                if point.is_feasible(model) {
                    return Ok(point);
                }
                let (affine, sphere) = point.residuals(model);
                last = format!("residuals ({affine:e}, {sphere:e}) above tolerance");
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(RnnalError::InitFailed { attempts: INIT_ATTEMPTS, reason: last })
}

/// Conditioning diagnostics of the normal operator at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityEstimate {
    /// Estimate of the smallest eigenvalue of `h_R h_R*` (0 if singular).
    pub sigma_min: f64,
    /// Estimate of the largest eigenvalue of `h_R h_R*`.
    pub sigma_max: f64,
    /// `sigma_max / sigma_min` (infinite if singular).
    pub condition: f64,
    /// Condition number of the Schur matrix `M`, when `B ≠ ∅`.
    pub schur_condition: Option<f64>,
}

fn pack(lambda: &DMatrix<f64>, mu: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(lambda.len() + mu.len(), lambda.iter().chain(mu.iter()).copied())
}

fn unpack(x: &DVector<f64>, m: usize, rank: usize) -> (DMatrix<f64>, DVector<f64>) {
    let lambda = DMatrix::from_column_slice(m, rank, &x.as_slice()[..m * rank]);
    let mu = DVector::from_column_slice(&x.as_slice()[m * rank..]);
    (lambda, mu)
}

/// Estimates the extreme eigenvalues of `h_R h_R*` by power and inverse
/// power iteration, and the condition number of the Schur matrix.
pub fn regularity_check(model: &DnnModel, r: &FactorPoint) -> RegularityEstimate {
    let (m, rank) = (model.m(), r.rank());
    let dim = m * rank + model.binary().len();
    let schur_condition = if model.binary().is_empty() {
        None
    } else {
        let eig = SymmetricEigen::new(schur_matrix(model, r.matrix())).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        Some(if lo > 0.0 { hi / lo } else { f64::INFINITY })
    };
    if dim == 0 {
        return RegularityEstimate { sigma_min: 1.0, sigma_max: 1.0, condition: 1.0, schur_condition };
    }
    let forward = |x: &DVector<f64>| {
        let (lambda, mu) = unpack(x, m, rank);
        let h = normal_adjoint(model, r.matrix(), &lambda, &mu);
        let (d1, d2) = normal_map(model, r.matrix(), &h);
        pack(&d1, &d2)
    };
    let mut rng = instance_rng(0xc0de);
    let start = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = start.normalize();
    let mut sigma_max = 0.0;
    for _ in 0..60 {
        let y = forward(&x);
        sigma_max = x.dot(&y);
        let norm = y.norm();
        if norm == 0.0 {
            break;
        }
        x = y / norm;
    }
    let mut x = start.normalize();
    let mut inv_max = 0.0;
    for _ in 0..60 {
        let (lambda, mu) = unpack(&x, m, rank);
        match solve_normal_system(model, r.matrix(), &lambda, &mu) {
            Ok((l, u)) => {
                let y = pack(&l, &u);
                inv_max = x.dot(&y);
                let norm = y.norm();
                if !norm.is_finite() || norm == 0.0 {
                    inv_max = f64::INFINITY;
                    break;
                }
                x = y / norm;
            }
            Err(_) => {
                inv_max = f64::INFINITY;
                break;
            }
        }
    }
    let sigma_min = if inv_max.is_finite() && inv_max > 0.0 { 1.0 / inv_max } else { 0.0 };
    let condition = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };
    RegularityEstimate { sigma_min, sigma_max, condition, schur_condition }
}

/// Adjoint of the Jacobian of the unreformulated constraint map
/// `g(R) = (A R e₁ − b; vec(A R Rᵀ − b e₁ᵀ Rᵀ); diag_B(R Rᵀ) − R_B e₁)`:
///
/// ```text
///   g_R*(λ₁, λ₂, μ) = Aᵀλ₁ e₁ᵀ + Aᵀλ₂ R + λ₂ᵀ A R − λ₂ᵀ b e₁ᵀ + 2 Diag(μ̃) R − μ̃ e₁ᵀ.
/// ```
///
/// On every feasible point `(b, −A, 0)` lies in its kernel, so that
/// formulation never satisfies LICQ.
pub fn quadratic_constraint_adjoint(
    model: &DnnModel,
    r: &DMatrix<f64>,
    lambda1: &DVector<f64>,
    lambda2: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> DMatrix<f64> {
    let a = model.factors().matrix();
    let mut out = a.tr_mul(lambda2) * r + lambda2.transpose() * a.mul(r);
    let mut first = a.tr_mul_vec(lambda1) - lambda2.tr_mul(model.b());
    let scattered = model.scatter_binary(mu);
    first -= &scattered;
    for i in 0..r.nrows() {
        for t in 0..r.ncols() {
            out[(i, t)] += 2.0 * scattered[i] * r[(i, t)];
        }
    }
    out.column_mut(0).axpy(1.0, &first, 1.0);
    out
}

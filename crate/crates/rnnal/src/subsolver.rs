//! The augmented Lagrangian subproblem on the factorized feasible set and
//! its Riemannian gradient solver.
//!
//! For a fixed multiplier `W̃` and penalty `σ` the subproblem is
//!
//! ```text
//!   f(R) = ⟨C, Ŷ⟩ + σ/2 ‖Π_𝒫*(σ⁻¹ W̃ − Ŷ)‖²,   Ŷ = R̂ R̂ᵀ,  R̂ = [e₁ᵀ; R],
//! ```
//!
//! minimized over the feasible factors. With `W = σ Π_𝒫*(σ⁻¹W̃ − Ŷ)` the
//! Euclidean gradient is `∇f(R) = 2 [(C − W)₂₁ e₁ᵀ + (C − W)₂₂ R]`.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::cones::proj_pstar_in_place;
use crate::error::{Result, RnnalError};
use crate::problem::DnnModel;
use crate::variety::{lifted_factor, retract, tangent_project, FactorPoint, TangentVector};

/// Lower clamp of the Barzilai–Borwein step.
pub const BB_MIN_STEP: f64 = 1e-10;
/// Upper clamp of the Barzilai–Borwein step.
pub const BB_MAX_STEP: f64 = 1e10;
/// Length of the non-monotone reference window.
pub const NONMONOTONE_WINDOW: usize = 5;
/// Armijo sufficient-decrease parameter.
pub const ARMIJO: f64 = 1e-4;
/// Backtracking contraction factor.
pub const BACKTRACK: f64 = 0.5;
/// Trial steps below this size end the line search.
pub const MIN_STEP: f64 = 1e-16;

/// Quantities shared by the objective and the gradient at one factor.
#[derive(Clone, Debug)]
struct EvalCache {
    point: DMatrix<f64>,
    w: DMatrix<f64>,
    value: f64,
}

/// Data of one subproblem: the cost, the multiplier `W̃` and the penalty `σ`,
/// plus the `W` computed at the most recently evaluated factor.
#[derive(Clone, Debug)]
pub struct SubproblemContext<'a> {
    model: &'a DnnModel,
    cost: DMatrix<f64>,
    w_tilde: DMatrix<f64>,
    sigma: f64,
    cache: Option<EvalCache>,
}

impl<'a> SubproblemContext<'a> {
    /// Subproblem with the model's own cost.
    pub fn new(model: &'a DnnModel, w_tilde: DMatrix<f64>, sigma: f64) -> Result<Self> {
        Self::with_cost(model, model.cost().clone(), w_tilde, sigma)
    }

    /// Subproblem with an explicit (for example rescaled) cost matrix.
    pub fn with_cost(model: &'a DnnModel, cost: DMatrix<f64>, w_tilde: DMatrix<f64>, sigma: f64) -> Result<Self> {
        let dim = model.dim();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(RnnalError::InvalidProblem(format!("penalty must be positive, got {sigma}")));
        }
        for (what, mat) in [("cost", &cost), ("multiplier", &w_tilde)] {
            if mat.shape() != (dim, dim) {
                return Err(RnnalError::DimensionMismatch {
                    context: what,
                    expected: (dim, dim),
                    found: mat.shape(),
                });
            }
        }
        Ok(Self { model, cost, w_tilde, sigma, cache: None })
    }

    /// The lifted model.
    pub fn model(&self) -> &'a DnnModel {
        self.model
    }

    /// Cost matrix used by this subproblem.
    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    /// The multiplier `W̃`.
    pub fn w_tilde(&self) -> &DMatrix<f64> {
        &self.w_tilde
    }

    /// The penalty `σ`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `W` at the last evaluated factor, if any.
    pub fn w_dual(&self) -> Option<&DMatrix<f64>> {
        self.cache.as_ref().map(|c| &c.w)
    }

    /// `W = σ Π_𝒫*(σ⁻¹ W̃ − Ŷ)` for an explicit lifted matrix.
    pub fn multiplier_at(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = &self.w_tilde - y * self.sigma;
        proj_pstar_in_place(&mut w, self.model.pattern());
        w
    }

    /// `f(R)`; caches `W` for the gradient.
    pub fn eval_objective(&mut self, r: &FactorPoint) -> f64 {
        let rhat = lifted_factor(r.matrix());
        let y = &rhat * rhat.transpose();
        let w = self.multiplier_at(&y);
        let value = self.cost.dot(&y) + w.norm_squared() / (2.0 * self.sigma);
        self.cache = Some(EvalCache { point: r.matrix().clone(), w, value });
        value
    }

    /// Euclidean gradient `2 [(C − W)₂₁ e₁ᵀ + (C − W)₂₂ R]` at the factor
    /// last passed to [`Self::eval_objective`].
    pub fn eval_egrad(&self, r: &FactorPoint) -> Result<DMatrix<f64>> {
        let cache = self.cache.as_ref().ok_or(RnnalError::StaleCache)?;
        if cache.point != *r.matrix() {
            return Err(RnnalError::StaleCache);
        }
        let rhat = lifted_factor(r.matrix());
        let n = self.model.n();
        let diff = &self.cost - &cache.w;
        let rows = diff.view((1, 0), (n, n + 1));
        Ok(rows * rhat * 2.0)
    }

    /// Last cached value of `f`.
    pub fn cached_value(&self) -> Option<f64> {
        self.cache.as_ref().map(|c| c.value)
    }
}

/// Why [`rgd_solve`] stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RgdTermination {
    /// The Riemannian gradient norm reached the tolerance.
    Converged,
    /// The iteration cap was reached.
    MaxIterations,
    /// The line search could not find an acceptable step above [`MIN_STEP`].
    StepUnderflow,
    /// The deadline passed.
    Deadline,
}

/// Result of [`rgd_solve`].
#[derive(Clone, Debug)]
pub struct RgdOutcome {
    /// Final iterate.
    pub point: FactorPoint,
    /// Normal multiplier of `A R = b e₁ᵀ` from the last gradient projection.
    pub lambda: DMatrix<f64>,
    /// Normal multiplier of the sphere constraints.
    pub mu: nalgebra::DVector<f64>,
    /// Riemannian gradient at the final iterate.
    pub gradient: TangentVector,
    /// `‖grad f(R)‖`.
    pub grad_norm: f64,
    /// `f(R)`.
    pub value: f64,
    /// Accepted steps.
    pub iterations: usize,
    /// Stopping reason.
    pub termination: RgdTermination,
}

/// Knobs of [`rgd_solve_with`].
#[derive(Clone, Copy, Debug)]
pub struct RgdSettings {
    /// Absolute bound on the Riemannian gradient norm.
    pub grad_tol: f64,
    /// Maximum accepted steps.
    pub max_iter: usize,
    /// Wall-clock deadline.
    pub deadline: Option<Instant>,
}

struct GradientAt {
    grad: DMatrix<f64>,
    lambda: DMatrix<f64>,
    mu: nalgebra::DVector<f64>,
    norm: f64,
}

fn riemannian_gradient(ctx: &SubproblemContext<'_>, r: &FactorPoint) -> Result<GradientAt> {
    let egrad = ctx.eval_egrad(r)?;
    let proj = tangent_project(ctx.model(), r.matrix(), &egrad)?;
    let grad = proj.tangent.into_matrix();
    let norm = grad.norm();
    Ok(GradientAt { grad, lambda: proj.lambda, mu: proj.mu, norm })
}

/// Riemannian gradient descent with alternating Barzilai–Borwein steps and
/// a non-monotone Armijo line search, stopped at `‖grad f‖ ≤ eps_g`.
pub fn rgd_solve(ctx: &mut SubproblemContext<'_>, r0: FactorPoint, eps_g: f64, max_iter: usize) -> Result<RgdOutcome> {
    rgd_solve_with(ctx, r0, &RgdSettings { grad_tol: eps_g, max_iter, deadline: None })
}

/// [`rgd_solve`] with an optional deadline.
pub fn rgd_solve_with(ctx: &mut SubproblemContext<'_>, r0: FactorPoint, settings: &RgdSettings) -> Result<RgdOutcome> {
    let mut point = r0;
    let mut value = ctx.eval_objective(&point);
    if !value.is_finite() {
        return Err(RnnalError::LineSearchFailed("objective is not finite at the start".into()));
    }
    let mut current = riemannian_gradient(ctx, &point)?;
    let mut window: VecDeque<f64> = VecDeque::with_capacity(NONMONOTONE_WINDOW);
    window.push_back(value);
    let mut step = (0.1 * point.matrix().norm().max(1.0) / current.norm.max(f64::MIN_POSITIVE))
        .clamp(BB_MIN_STEP, BB_MAX_STEP);
    let mut iterations = 0;
    let termination = loop {
        if current.norm <= settings.grad_tol {
            break RgdTermination::Converged;
        }
        if iterations >= settings.max_iter {
            break RgdTermination::MaxIterations;
        }
        if settings.deadline.is_some_and(|d| Instant::now() >= d) {
            break RgdTermination::Deadline;
        }
        let reference = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let decrease = current.norm * current.norm;
        let trust = 2.0 * point.matrix().norm();
        let mut t = step;
        if trust > 0.0 {
            t = t.min(0.999 * trust / current.norm);
        }
        let mut accepted = None;
        let mut last_error = None;
        let mut any_evaluated = false;
        while t >= MIN_STEP {
            let h = TangentVector::new(&current.grad * -t);
            match retract(ctx.model(), &point, &h) {
                Ok(trial) => {
                    let trial_value = ctx.eval_objective(&trial);
                    if !trial_value.is_finite() {
                        return Err(RnnalError::LineSearchFailed(format!("objective became {trial_value} at step {t:e}")));
                    }
                    any_evaluated = true;
                    if trial_value <= reference - ARMIJO * t * decrease {
                        accepted = Some((trial, trial_value));
                        break;
                    }
                }
                Err(e @ (RnnalError::RetractionFailed(_) | RnnalError::AnchorDegenerate { .. } | RnnalError::SingularSystem { .. } | RnnalError::MaxIterations { .. })) => {
                    last_error = Some(e);
                }
                Err(e) => return Err(e),
            }
            t *= BACKTRACK;
        }
        let Some((next, next_value)) = accepted else {
            if !any_evaluated {
                if let Some(e) = last_error {
                    return Err(e);
                }
            }
            // Restore the cache at the current iterate.
            ctx.eval_objective(&point);
            break RgdTermination::StepUnderflow;
        };
        let next_grad = match riemannian_gradient(ctx, &next) {
            Ok(g) => g,
            Err(e) => return Err(e),
        };
        let s = next.matrix() - point.matrix();
        let y = &next_grad.grad - &current.grad;
        let sy = s.dot(&y);
        let (ss, yy) = (s.norm_squared(), y.norm_squared());
        step = if sy > 0.0 {
            if iterations % 2 == 0 { ss / sy } else { sy / yy }
        } else if yy > 0.0 {
            (ss / yy).sqrt()
        } else {
            t * 2.0
        }
        .clamp(BB_MIN_STEP, BB_MAX_STEP);
        point = next;
        value = next_value;
        current = next_grad;
        if window.len() == NONMONOTONE_WINDOW {
            window.pop_front();
        }
        window.push_back(value);
        iterations += 1;
    };
    Ok(RgdOutcome {
        point,
        lambda: current.lambda,
        mu: current.mu,
        grad_norm: current.norm,
        gradient: TangentVector::new(current.grad),
        value,
        iterations,
        termination,
    })
}

//! The outer augmented Lagrangian loop.
//!
//! Each outer iteration minimizes the subproblem over the factorized feasible
//! set, checks the recovered certificate for negative curvature (escaping by
//! adding a column when found), adjusts the rank once, and updates
//!
//! ```text
//!   Z ← Π_𝒫(Y − σ⁻¹W),   W ← W − σ (Y − Z),
//! ```
//!
//! stopping when the relative KKT residues
//!
//! ```text
//!   Rp = max{ ‖𝒜(Y) − d‖/(1 + ‖d‖), ‖Y − Z‖/(1 + ‖Y‖ + ‖Z‖) },
//!   Rd = ‖Π_𝕊₊(−S)‖/(1 + ‖S‖),   Rc = |⟨Y, S⟩|/(1 + ‖Y‖ + ‖S‖)
//! ```
//!
//! all fall below `tol`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::cones::proj_p;
use crate::duals::{decrease_rank, decrease_rank_search, dense_spectrum, increase_rank, lanczos_smallest, recover_duals, DualCertificate, RANK_DROP_TOL};
use crate::error::{Result, RnnalError};
use crate::problem::{add_slacks, build_dnn, DnnModel};
use crate::subsolver::{rgd_solve_with, RgdSettings, RgdTermination, SubproblemContext};
use crate::variety::{feasible_init, regularity_check, FactorPoint};

/// Largest lifted dimension for which `S` is diagonalized densely.
pub const DENSE_SPECTRUM_CAP: usize = 4001;
/// Frobenius norm the cost is scaled down to when `scale_cost` is set.
pub const COST_NORM_TARGET: f64 = 0.1;
/// Gradient tolerance, relative to `1 + |f|`, of the polished subproblem
/// solves behind [`SolverOptions::certify_subproblems`].
pub const CERTIFY_GRAD_TOL: f64 = 1e-10;

/// When to use the slack reformulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SlackMode {
    /// Solve directly; restart once with slacks if the geometry breaks down.
    #[default]
    Auto,
    /// Always add slacks.
    On,
    /// Never add slacks.
    Off,
}

/// Solver parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Stopping tolerance on `max(Rp, Rd, Rc)`.
    pub tol: f64,
    /// Wall-clock budget in seconds.
    pub time_limit_secs: f64,
    /// Initial penalty.
    pub sigma0: f64,
    /// Penalty growth factor.
    pub sigma_growth: f64,
    /// Penalty cap.
    pub sigma_max: f64,
    /// Initial rank; `None` means `min(200, ⌈n/5⌉)`.
    pub rank0: Option<usize>,
    /// Columns added per saddle escape.
    pub tau: usize,
    /// Seed of the random initial factor.
    pub seed: u64,
    /// Maximum outer iterations.
    pub max_outer: usize,
    /// Maximum Riemannian gradient steps per subproblem.
    pub max_inner: usize,
    /// Slack reformulation policy.
    pub use_slacks: SlackMode,
    /// Relative singular-value threshold of the rank decrease.
    pub rank_drop_tol: f64,
    /// Also search for the smallest rank whose truncation passes the
    /// objective-increase test.
    pub rank_search: bool,
    /// `Rmax` of the previous outer iteration below which the search runs.
    pub rank_search_gate: f64,
    /// Rank floor.
    pub min_rank: usize,
    /// Maximum saddle escapes per outer iteration.
    pub max_escapes: usize,
    /// Rescale the cost to Frobenius norm [`COST_NORM_TARGET`] internally.
    pub scale_cost: bool,
    /// Record the conditioning of the normal operator each outer iteration.
    pub track_condition: bool,
    /// After every converged inner solve, polish a copy of the subproblem to
    /// stationarity and record its certificate in
    /// [`SolveReport::certificate_checks`]. Does not change the iterates.
    pub certify_subproblems: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            time_limit_secs: 3600.0,
            sigma0: 1.0,
            sigma_growth: 1.25,
            sigma_max: 1e8,
            rank0: None,
            tau: 1,
            seed: 1,
            max_outer: 500,
            max_inner: 2000,
            use_slacks: SlackMode::Auto,
            rank_drop_tol: RANK_DROP_TOL,
            rank_search: true,
            rank_search_gate: 1e-4,
            min_rank: 1,
            max_escapes: 5,
            scale_cost: true,
            track_condition: false,
            certify_subproblems: false,
        }
    }
}

impl SolverOptions {
    /// Checks the parameter invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(RnnalError::InvalidProblem(msg.to_string()));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.sigma_growth > 1.0) {
            return bad("sigma growth must exceed 1");
        }
        if !(self.sigma0 > 0.0) {
            return bad("sigma0 must be positive");
        }
        if !(self.time_limit_secs > 0.0) {
            return bad("time limit must be positive");
        }
        if self.tau == 0 {
            return bad("tau must be at least 1");
        }
        if self.rank0 == Some(0) {
            return bad("initial rank must be at least 1");
        }
        Ok(())
    }

    /// Initial rank for `n` variables.
    pub fn initial_rank(&self, n: usize) -> usize {
        self.rank0.unwrap_or_else(|| 200.min(n.div_ceil(5))).max(1)
    }
}

/// Final status of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    /// All residues below `tol`.
    Converged,
    /// The time budget ran out.
    TimeLimit,
    /// No progress (primal residue stagnated, penalty capped or outer cap).
    Stalled,
}

impl SolveStatus {
    /// Name used in tables and JSON.
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "Converged",
            SolveStatus::TimeLimit => "TimeLimit",
            SolveStatus::Stalled => "Stalled",
        }
    }
}

/// Per-outer-iteration log record.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// Outer iteration (1-based).
    pub iteration: usize,
    /// Primal objective `⟨C, Y⟩`.
    pub objective: f64,
    /// Primal residue.
    pub rp: f64,
    /// Dual residue.
    pub rd: f64,
    /// Complementarity residue.
    pub rc: f64,
    /// Penalty used in this iteration.
    pub sigma: f64,
    /// Rank after the iteration.
    pub rank: usize,
    /// Gradient steps in this iteration.
    pub inner_iters: usize,
    /// Seconds since the start.
    pub time_secs: f64,
    /// Saddle escapes performed.
    pub escapes: usize,
    /// Largest condition number of `h_R h_R*` seen (when tracked).
    pub condition: Option<f64>,
}

/// Relative KKT residues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residues {
    /// Primal.
    pub rp: f64,
    /// Dual.
    pub rd: f64,
    /// Complementarity.
    pub rc: f64,
}

impl Residues {
    /// `max(Rp, Rd, Rc)`.
    pub fn max(&self) -> f64 {
        self.rp.max(self.rd).max(self.rc)
    }
}

/// Output of [`solve`].
#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Instance name.
    pub problem: String,
    /// Variables of the solved model.
    pub n: usize,
    /// Rows of `A` of the solved model.
    pub m: usize,
    /// Final status.
    pub status: SolveStatus,
    /// `⟨C, Y⟩`.
    pub obj: f64,
    /// Final residues.
    pub residues: Residues,
    /// Outer iterations.
    pub outer_iters: usize,
    /// Total gradient steps.
    pub inner_iters_total: usize,
    /// Final rank.
    pub rank: usize,
    /// Wall time in seconds, excluding certification polishes.
    pub wall_time: f64,
    /// Outer iteration history.
    pub history: Vec<IterationRecord>,
    /// Whether the slack reformulation was solved.
    pub used_slacks: bool,
    /// Why the solver switched to slacks, if it did so automatically.
    pub restart_reason: Option<String>,
    /// Whether `Rd` comes from a partial spectrum (a lower bound).
    pub rd_estimated: bool,
    /// Final factor (of the solved model).
    pub solution: FactorPoint,
    /// Final certificate in the original cost units.
    pub certificate: DualCertificate,
    /// Final `Z`.
    pub z: DMatrix<f64>,
    /// Final penalty.
    pub sigma: f64,
    /// Outer iterations whose subproblem certificate was checked for
    /// complementarity: `(iteration, |⟨S,Y⟩|/(1+‖Y‖+‖S‖), assembly residual)`.
    /// Filled only under [`SolverOptions::certify_subproblems`], for the
    /// subproblems whose polish reached stationarity.
    pub certificate_checks: Vec<(usize, f64, f64)>,
    /// Converged subproblems whose polish stopped short of stationarity
    /// (iteration cap or step underflow) and so were not certified.
    pub uncertified_subproblems: usize,
}

impl SolveReport {
    /// `max(Rp, Rd, Rc)`.
    pub fn rmax(&self) -> f64 {
        self.residues.max()
    }
}

/// Relative KKT residues of `(Y, Z; y, S)`; `neg_part` is `‖Π_𝕊₊(−S)‖`.
pub fn kkt_residues(model: &DnnModel, y: &DMatrix<f64>, z: &DMatrix<f64>, s: &DMatrix<f64>, neg_part: f64) -> Residues {
    let d = model.lifted_rhs();
    let affine = (model.constraint_map(y) - &d).norm() / (1.0 + d.norm());
    let (ny, nz, ns) = (y.norm(), z.norm(), s.norm());
    let cone = (y - z).norm() / (1.0 + ny + nz);
    Residues {
        rp: affine.max(cone),
        rd: neg_part / (1.0 + ns),
        rc: y.dot(s).abs() / (1.0 + ny + ns),
    }
}

/// Penalty update: grow by `growth` when `Rp` fell by less than 10%.
pub fn update_penalty(sigma: f64, rp_old: f64, rp_new: f64, growth: f64, cap: f64) -> f64 {
    if rp_new > 0.9 * rp_old {
        (sigma * growth).min(cap)
    } else {
        sigma
    }
}

/// Inner gradient tolerance at outer iteration `k`.
pub fn inner_tolerance(k: usize, tol: f64, cost_inf_norm: f64) -> f64 {
    (0.5f64.powi(k.min(1000) as i32) * 1e-2).max(1e-3 * tol) * (1.0 + cost_inf_norm)
}

fn inf_norm(c: &DMatrix<f64>) -> f64 {
    c.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Solves the DNN relaxation of `model`.
pub fn solve(model: &DnnModel, opts: &SolverOptions) -> Result<SolveReport> {
    solve_with_observer(model, opts, &mut |_| {})
}

fn restartable(e: &RnnalError) -> bool {
    matches!(
        e,
        RnnalError::SingularSystem { .. }
            | RnnalError::RetractionFailed(_)
            | RnnalError::AnchorDegenerate { .. }
            | RnnalError::InitFailed { .. }
    )
}

/// [`solve`] with a callback invoked after every outer iteration.
pub fn solve_with_observer(
    model: &DnnModel,
    opts: &SolverOptions,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<SolveReport> {
    opts.validate()?;
    let start = Instant::now();
    let deadline = start + Duration::from_secs_f64(opts.time_limit_secs);
    match opts.use_slacks {
        SlackMode::On if model.m() > 0 => {
            let slacked = build_dnn(&add_slacks(model.problem()))?;
            let mut report = run(&slacked, opts, start, deadline, observer)?;
            report.used_slacks = true;
            Ok(report)
        }
        SlackMode::Auto if model.m() > 0 => match run(model, opts, start, deadline, observer) {
            Err(e) if restartable(&e) => {
                let slacked = build_dnn(&add_slacks(model.problem()))?;
                let mut report = run(&slacked, opts, start, deadline, observer)?;
                report.used_slacks = true;
                report.restart_reason = Some(e.to_string());
                Ok(report)
            }
            other => other,
        },
        _ => run(model, opts, start, deadline, observer),
    }
}

struct Assessment {
    certificate: DualCertificate,
    residues: Residues,
    rd_estimated: bool,
    lowest: Vec<(f64, DVector<f64>)>,
    y: DMatrix<f64>,
    z: DMatrix<f64>,
    w_next: DMatrix<f64>,
}

/// Certificate and residues at the end of a subproblem, in original units.
fn assess(
    model: &DnnModel,
    point: &FactorPoint,
    mu: &DVector<f64>,
    w_tilde: &DMatrix<f64>,
    sigma: f64,
    scale: f64,
    want: usize,
) -> Result<Assessment> {
    let y = point.lifted_gram();
    let z = proj_p(&(&y - w_tilde / sigma), model.pattern());
    let w_next = w_tilde - (&y - &z) * sigma;
    let certificate = recover_duals(model, model.cost(), point, &(mu * scale), &(&w_next * scale))?;
    let dim = model.dim();
    let (neg, lowest, rd_estimated) = if dim <= DENSE_SPECTRUM_CAP {
        let pairs = dense_spectrum(&certificate.s_dense)?;
        let neg = pairs.iter().filter(|p| p.value < 0.0).map(|p| p.value * p.value).sum::<f64>().sqrt();
        let lowest = pairs.into_iter().take(want).map(|p| (p.value, p.vector)).collect();
        (neg, lowest, false)
    } else {
        let pairs = lanczos_smallest(dim, 20.max(want), |v| &certificate.s_dense * v, 7)?;
        let neg = pairs.iter().filter(|p| p.value < 0.0).map(|p| p.value * p.value).sum::<f64>().sqrt();
        let lowest = pairs.into_iter().take(want).map(|p| (p.value, p.vector)).collect();
        (neg, lowest, true)
    };
    let residues = kkt_residues(model, &y, &z, &certificate.s_dense, neg);
    Ok(Assessment { certificate, residues, rd_estimated, lowest, y, z, w_next })
}

fn run(
    model: &DnnModel,
    opts: &SolverOptions,
    start: Instant,
    deadline: Instant,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<SolveReport> {
    let n = model.n();
    let dim = model.dim();
    let scale = if opts.scale_cost { (model.cost().norm() / COST_NORM_TARGET).max(1.0) } else { 1.0 };
    let cost = model.cost() / scale;
    let cost_inf = inf_norm(&cost);
    let eps_h_base = 1e-4 * (1.0 + cost_inf);

    let mut point = feasible_init(model, opts.initial_rank(n), opts.seed)?;
    let mut w = DMatrix::zeros(dim, dim);
    let mut sigma = opts.sigma0;
    let mut history = Vec::new();
    let mut certificate_checks = Vec::new();
    let mut uncertified = 0;
    let mut certify_time = Duration::ZERO;
    let mut inner_total = 0;
    let mut rp_prev = f64::INFINITY;
    let mut rmax_prev = f64::INFINITY;
    let mut stagnant = 0;
    let mut last: Option<Assessment> = None;
    let mut status = SolveStatus::Stalled;

    for k in 0..opts.max_outer {
        let eps_g = inner_tolerance(k, opts.tol, cost_inf);
        let mut ctx = SubproblemContext::with_cost(model, cost.clone(), w.clone(), sigma)?;
        let settings = RgdSettings { grad_tol: eps_g, max_iter: opts.max_inner, deadline: Some(deadline) };
        let mut eps_h = eps_h_base;
        let mut escapes = 0;
        let mut inner_iters = 0;
        let mut condition: Option<f64> = None;
        let track = |p: &FactorPoint, condition: &mut Option<f64>| {
            if opts.track_condition {
                let c = regularity_check(model, p).condition;
                *condition = Some(condition.map_or(c, |old: f64| old.max(c)));
            }
        };

        let mut outcome = rgd_solve_with(&mut ctx, point.clone(), &settings)?;
        inner_iters += outcome.iterations;
        track(&outcome.point, &mut condition);

        // One rank decrease per outer iteration.
        let eps_i = 1e-6 * (1.0 + outcome.value.abs()) * 0.5f64.powi(k.min(1000) as i32);
        // The rank search runs only once the previous iterate is close to
        // optimal; earlier truncations fight the escapes.
        let reduced = if opts.rank_search && rmax_prev < opts.rank_search_gate {
            decrease_rank_search(&mut ctx, &outcome.point, eps_i, opts.rank_drop_tol, opts.min_rank)
        } else {
            decrease_rank(&mut ctx, &outcome.point, eps_i, opts.rank_drop_tol, opts.min_rank)
        };
        if reduced.rank() < outcome.point.rank() {
            outcome = rgd_solve_with(&mut ctx, reduced, &settings)?;
            inner_iters += outcome.iterations;
        }

        let mut assessment = assess(model, &outcome.point, &outcome.mu, &w, sigma, scale, opts.tau)?;
        // Escape saddles while the certificate shows negative curvature. Once
        // the primal side is within tolerance, any curvature large enough to
        // keep Rd above tolerance counts. The first-order term of the escape
        // step vanishes at every point, so an inexact inner solve is no bar.
        let threshold = |a: &Assessment, eps_h: f64| {
            if a.residues.rp < opts.tol {
                eps_h.min(0.5 * opts.tol * (1.0 + a.certificate.s_dense.norm()) / scale)
            } else {
                eps_h
            }
        };
        while escapes < opts.max_escapes
            && assessment.lowest.first().is_some_and(|(v, _)| *v / scale < -threshold(&assessment, eps_h))
        {
            let cut = threshold(&assessment, eps_h);
            let vectors: Vec<DVector<f64>> = assessment
                .lowest
                .iter()
                .filter(|(v, _)| *v / scale < -cut)
                .map(|(_, vec)| vec.clone())
                .collect();
            let scaled_cert = recover_duals(model, &cost, &outcome.point, &outcome.mu, ctx.w_dual().unwrap_or(&w))?;
            match increase_rank(&mut ctx, &outcome.point, &vectors, &scaled_cert) {
                Ok(step) => {
                    escapes += 1;
                    eps_h *= 0.5;
                    outcome = rgd_solve_with(&mut ctx, step.point, &settings)?;
                    inner_iters += outcome.iterations;
                    track(&outcome.point, &mut condition);
                    assessment = assess(model, &outcome.point, &outcome.mu, &w, sigma, scale, opts.tau)?;
                }
                Err(RnnalError::EscapeStalled { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        if opts.certify_subproblems && outcome.termination == RgdTermination::Converged {
            let polish_start = Instant::now();
            let mut copy = ctx.clone();
            let tight = RgdSettings {
                grad_tol: CERTIFY_GRAD_TOL * (1.0 + outcome.value.abs()),
                max_iter: 10 * opts.max_inner,
                deadline: None,
            };
            let polished = rgd_solve_with(&mut copy, outcome.point.clone(), &tight)?;
            if polished.termination == RgdTermination::Converged {
                let a = assess(model, &polished.point, &polished.mu, &w, sigma, scale, 1)?;
                let c = &a.certificate;
                let comp = a.y.dot(&c.s_dense).abs() / (1.0 + a.y.norm() + c.s_dense.norm());
                certificate_checks.push((k + 1, comp, c.assembly_residual(model, model.cost())));
            } else {
                uncertified += 1;
            }
            certify_time += polish_start.elapsed();
        }
        inner_total += inner_iters;
        point = outcome.point;
        let residues = assessment.residues;
        w = assessment.w_next.clone();
        let record = IterationRecord {
            iteration: k + 1,
            objective: model.cost().dot(&assessment.y),
            rp: residues.rp,
            rd: residues.rd,
            rc: residues.rc,
            sigma,
            rank: point.rank(),
            inner_iters,
            time_secs: start.elapsed().as_secs_f64(),
            escapes,
            condition,
        };
        observer(&record);
        history.push(record);
        last = Some(assessment);

        if residues.max() < opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        if Instant::now() >= deadline {
            status = SolveStatus::TimeLimit;
            break;
        }
        if residues.rp > 0.99 * rp_prev {
            stagnant += 1;
            if stagnant >= 20 {
                status = SolveStatus::Stalled;
                break;
            }
        } else {
            stagnant = 0;
        }
        // The penalty stays put once the primal side is within tolerance.
        if rp_prev.is_finite() && residues.rp >= opts.tol {
            sigma = update_penalty(sigma, rp_prev, residues.rp, opts.sigma_growth, opts.sigma_max);
        }
        rp_prev = residues.rp;
        rmax_prev = residues.max();
    }

    let last = last.ok_or(RnnalError::MaxIterations { iterations: 0 })?;
    let final_record = history.last().cloned();
    Ok(SolveReport {
        problem: model.problem().name.clone(),
        n,
        m: model.m(),
        status,
        obj: model.cost().dot(&last.y),
        residues: last.residues,
        outer_iters: history.len(),
        inner_iters_total: inner_total,
        rank: final_record.map_or(point.rank(), |r| r.rank),
        wall_time: (start.elapsed() - certify_time).as_secs_f64(),
        history,
        used_slacks: false,
        restart_reason: None,
        rd_estimated: last.rd_estimated,
        solution: point,
        certificate: last.certificate,
        z: last.z,
        sigma,
        certificate_checks,
        uncertified_subproblems: uncertified,
    })
}

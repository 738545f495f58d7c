//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a custom harness (`cargo test --test acceptance`). Criteria that
//! need benchmark files read them from `$RNNAL_DATA_DIR` (default: `data/`
//! at the workspace root):
//!
//! * `bqp1000.txt` — the ORLIB `bqp1000` collection (first instance used);
//! * `G43` — the Gset graph;
//! * `chr12a.dat` — the QAPLIB instance.
//!
//! A missing file is a FAIL with the path in the detail; nothing is skipped
//! silently. The process exits non-zero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rnnal::alm::{SlackMode, SolveReport, SolveStatus, SolverOptions};
use rnnal::duals::{dense_spectrum, escape_direction, recover_duals};
use rnnal::oracle::{brute_force_mbqp, dense_dnn_solve};
use rnnal::problem::{add_slacks, build_qap, build_theta, gen_gwd, gen_qkp, parse_gset, parse_orlib_biq, parse_qaplib};
use rnnal::subsolver::{rgd_solve, RgdTermination, SubproblemContext};
use rnnal::variety::{feasible_init, quadratic_constraint_adjoint, regularity_check, retract, TangentVector};
use rnnal::{build_dnn, solve, MbqpProblem};

use common::*;

/// Outcome of one criterion.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("RNNAL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn read_data(name: &str) -> Result<String, String> {
    let path = data_dir().join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("benchmark file {} unavailable ({e})", path.display()))
}

fn default_options() -> SolverOptions {
    SolverOptions::default()
}

// ---------------------------------------------------------------------------
// Criterion 1: oracle equivalence
// ---------------------------------------------------------------------------

const ORACLE_AGREEMENT: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-8;
const PER_SOLVE_SECS: f64 = 30.0;
const SANDWICH_MAX_N: usize = 16;
const SANDWICH_SLACK: f64 = 1e-6;

struct OracleRun {
    name: String,
    n: usize,
    report: SolveReport,
    oracle: f64,
    brute: Option<f64>,
}

fn oracle_runs() -> &'static Vec<OracleRun> {
    static RUNS: OnceLock<Vec<OracleRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        oracle_instances()
            .into_iter()
            .map(|p| {
                let model = build_dnn(&p).expect("valid instance");
                // Certification polishes copies of the subproblems and is
                // excluded from the reported wall time.
                let opts = SolverOptions { certify_subproblems: true, ..default_options() };
                let report = solve(&model, &opts).expect("solver runs");
                let oracle = dense_dnn_solve(&model, ORACLE_TOL).expect("oracle converges").obj;
                let brute = (p.n() <= SANDWICH_MAX_N).then(|| brute_force_mbqp(&p).expect("feasible").1);
                OracleRun { name: p.name.clone(), n: p.n(), report, oracle, brute }
            })
            .collect()
    })
}

fn criterion_1() -> Verdict {
    let runs = oracle_runs();
    let mut failures = Vec::new();
    let mut worst_gap = 0.0f64;
    let mut slowest = 0.0f64;
    let mut sandwiches = 0;
    for run in runs {
        let gap = rel_gap(run.report.obj, run.oracle);
        worst_gap = worst_gap.max(gap);
        slowest = slowest.max(run.report.wall_time);
        if run.report.status != SolveStatus::Converged {
            failures.push(format!("{}: {}", run.name, run.report.status.as_str()));
        }
        if gap > ORACLE_AGREEMENT {
            failures.push(format!("{}: gap {gap:.2e}", run.name));
        }
        if run.report.wall_time > PER_SOLVE_SECS {
            failures.push(format!("{}: {:.1} s", run.name, run.report.wall_time));
        }
        if let Some(best) = run.brute {
            sandwiches += 1;
            // The oracle is solved to 1e-8; the solver's objective carries
            // the criterion's own agreement tolerance.
            let oracle_slack = SANDWICH_SLACK * (1.0 + best.abs());
            let solver_slack = ORACLE_AGREEMENT * (1.0 + best.abs());
            if run.oracle > best + oracle_slack || run.report.obj > best + solver_slack {
                failures.push(format!("{} (n={}): bound {:.6e}/{:.6e} above enumeration {best:.6e}", run.name, run.n, run.oracle, run.report.obj));
            }
        }
    }
    let summary = format!(
        "{} instances, worst |obj−oracle|/(1+|oracle|) = {worst_gap:.2e}, slowest solve {slowest:.2} s, {sandwiches} sandwiches vs enumeration",
        runs.len()
    );
    if failures.is_empty() {
        Verdict::new(true, summary)
    } else {
        Verdict::new(false, format!("{summary}; failures: {}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// Criteria 2, 3: desk-scale reproductions from benchmark files
// ---------------------------------------------------------------------------

const DESK_RMAX: f64 = 1e-6;
const DESK_SECS: f64 = 600.0;

fn desk_scale(problem: Result<MbqpProblem, String>, accept: impl Fn(f64) -> bool, target: &str) -> Verdict {
    let problem = match problem {
        Ok(p) => p,
        Err(e) => return Verdict::new(false, e),
    };
    let model = match build_dnn(&problem) {
        Ok(m) => m,
        Err(e) => return Verdict::new(false, format!("model: {e}")),
    };
    let opts = SolverOptions { time_limit_secs: DESK_SECS, ..default_options() };
    match solve(&model, &opts) {
        Ok(r) => {
            let ok = r.rmax() <= DESK_RMAX && accept(r.obj) && r.wall_time <= DESK_SECS;
            Verdict::new(
                ok,
                format!("{}: obj {:.8e} (target {target}), Rmax {:.1e}, {:.1} s, {}", problem.name, r.obj, r.rmax(), r.wall_time, r.status.as_str()),
            )
        }
        Err(e) => Verdict::new(false, format!("{}: solver error {e}", problem.name)),
    }
}

fn criterion_2() -> Verdict {
    const TARGET: f64 = -3.9849472e5;
    let problem = read_data("bqp1000.txt").and_then(|text| {
        let mut all = parse_orlib_biq(&text).map_err(|e| e.to_string())?;
        if all.is_empty() {
            return Err("bqp1000.txt holds no instance".into());
        }
        let mut p = all.swap_remove(0);
        p.name = "bqp1000.1".into();
        Ok(p)
    });
    desk_scale(problem, |obj| (obj - TARGET).abs() <= 1e-5 * TARGET.abs(), "-3.9849472e5 ± 1e-5 rel")
}

fn criterion_3() -> Verdict {
    const LOW: f64 = -2.7973625e2;
    const HIGH: f64 = -2.7973595e2;
    let problem = read_data("G43").and_then(|text| {
        let g = parse_gset(&text).map_err(|e| e.to_string())?;
        let mut p = build_theta(g.n, &g.edges).map_err(|e| e.to_string())?;
        p.name = "G43".into();
        Ok(p)
    });
    let slack = 1e-5 * LOW.abs();
    desk_scale(problem, |obj| obj >= LOW - slack && obj <= HIGH + slack, "[-2.7973625e2, -2.7973595e2] ± 1e-5 rel")
}

// ---------------------------------------------------------------------------
// Criterion 4: QKP generator reproduction
// ---------------------------------------------------------------------------

fn criterion_4() -> Verdict {
    let mut rows = Vec::new();
    let mut pass = true;
    for seed in 1..=5u64 {
        let model = build_dnn(&gen_qkp(500, 0.1, seed)).expect("QKP instance");
        match solve(&model, &default_options()) {
            Ok(r) => {
                let magnitude_ok = (1e6..1e7).contains(&r.obj.abs());
                pass &= r.rmax() <= 1e-6 && magnitude_ok;
                rows.push(format!("seed {seed}: obj {:.7e} Rmax {:.1e} ({:.0} s)", r.obj, r.rmax(), r.wall_time));
            }
            Err(e) => {
                pass = false;
                rows.push(format!("seed {seed}: error {e}"));
            }
        }
    }
    Verdict::new(pass, rows.join("; "))
}

// ---------------------------------------------------------------------------
// Criterion 5: QAP smoothness strategy
// ---------------------------------------------------------------------------

const CONDITION_RATIO: f64 = 100.0;

fn max_condition(report: &SolveReport) -> f64 {
    report.history.iter().filter_map(|h| h.condition).fold(0.0, f64::max)
}

fn criterion_5() -> Verdict {
    let (w, d) = match read_data("chr12a.dat").and_then(|t| parse_qaplib(&t).map_err(|e| e.to_string())) {
        Ok(wd) => wd,
        Err(e) => return Verdict::new(false, e),
    };
    let direct = build_dnn(&build_qap(&w, &d, false).expect("QAP instance")).expect("QAP model");
    let base = SolverOptions { track_condition: true, time_limit_secs: 300.0, ..default_options() };
    let on = solve(&direct, &SolverOptions { use_slacks: SlackMode::On, ..base.clone() });
    let off = solve(&direct, &SolverOptions { use_slacks: SlackMode::Off, ..base });
    let on = match on {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("slacks on: solver error {e}")),
    };
    let on_ok = on.status == SolveStatus::Converged && on.rmax() <= 1e-6 && on.wall_time <= 300.0;
    let on_cond = max_condition(&on);
    let (off_ok, off_detail) = match off {
        Err(e) => (true, format!("slacks off failed: {e}")),
        Ok(r) if r.status != SolveStatus::Converged => (true, format!("slacks off {}", r.status.as_str())),
        Ok(r) => {
            let c = max_condition(&r);
            (c >= CONDITION_RATIO * on_cond, format!("slacks off converged, max cond {c:.2e} vs {on_cond:.2e}"))
        }
    };
    Verdict::new(
        on_ok && off_ok,
        format!("slacks on: {} Rmax {:.1e} in {:.1} s, max cond {on_cond:.2e}; {off_detail}", on.status.as_str(), on.rmax(), on.wall_time),
    )
}

// ---------------------------------------------------------------------------
// Criterion 6: geometry property suite
// ---------------------------------------------------------------------------

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let models = geometry_models();
    let mut retraction = 0.0f64;
    let (mut idem, mut adj) = (0.0f64, 0.0f64);
    let mut schur = 0.0f64;
    for (k, model) in models.iter().enumerate() {
        let seed = 10_000 * (k as u64 + 1);
        retraction = retraction.max(retraction_feasibility(model, 20, seed));
        let (i, a, _) = tangent_projection_errors(model, 20, seed + 500);
        idem = idem.max(i);
        adj = adj.max(a);
        for s in 0..10u64 {
            schur = schur.max(schur_discrepancy(model, &random_point(model, 2 + (s % 3) as usize, seed + 900 + s)));
        }
    }
    // Weiszfeld monotonicity on 100 random projection subproblems.
    let wmodels = weiszfeld_models();
    let mut weiszfeld = f64::NEG_INFINITY;
    for s in 0..100u64 {
        let model = &wmodels[s as usize % wmodels.len()];
        let v = gaussian(model.n(), 1 + (s % 4) as usize, 70_000 + s) * 2.0;
        weiszfeld = weiszfeld.max(weiszfeld_worst_increase(model, &v));
    }
    // Non-LICQ witness of the quadratic formulation at exactly feasible
    // points: binary solutions (rank one) and mixtures of them (rank ≤ 4).
    let mut witness = 0.0f64;
    let mut witness_points = 0;
    for s in 0..20u64 {
        let p = planted_binary(8 + (s % 5) as usize, 1 + (s % 2) as usize, 80_000 + s);
        let solutions = binary_solutions(&p);
        let model = build_dnn(&p).unwrap();
        for rank in 1..=solutions.len().min(4) {
            let r = binary_mixture_point(&solutions, rank, 81_000 + s);
            let g = quadratic_constraint_adjoint(&model, &r, model.b(), &(-p.a.clone()), &DVector::zeros(p.binary.len()));
            witness = witness.max(g.norm());
            witness_points += 1;
        }
    }
    // LICQ on the slack reformulation.
    let mut sigma_min = f64::INFINITY;
    // Ranks stay above the low-rank regime where random projections onto the
    // slack QAP variety land on nonsmooth points of the convexified dual.
    for s in 0..100u64 {
        let (p, rank) = if s % 2 == 0 {
            (add_slacks(&gen_qkp(8 + (s % 7) as usize, 0.5, 90_000 + s)), 2 + (s % 3) as usize)
        } else {
            let (w, d) = random_qap(3 + (s % 2) as usize, 90_000 + s);
            (build_qap(&w, &d, true).unwrap(), 4 + (s % 3) as usize)
        };
        let model = build_dnn(&p).unwrap();
        let r = feasible_init(&model, rank, s).unwrap();
        sigma_min = sigma_min.min(regularity_check(&model, &r).sigma_min);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = retraction <= 1e-9
        && idem <= 1e-10
        && adj <= 1e-10
        && weiszfeld <= 1e-12
        && schur <= 1e-10
        && witness <= 1e-12
        && sigma_min > 0.0
        && secs < 60.0;
    Verdict::new(
        pass,
        format!(
            "retraction {retraction:.1e}, idempotence {idem:.1e}, self-adjointness {adj:.1e}, Weiszfeld worst rise {weiszfeld:.1e}, \
             Schur {schur:.1e}, non-LICQ witness {witness:.1e} on {witness_points} points, min σ_min {sigma_min:.2e}, {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 7: dual certificates and the escape model
// ---------------------------------------------------------------------------

const CERT_TOL: f64 = 1e-8;
const ESCAPE_T: f64 = 1e-3;

/// `(f(Rtr_P(tU)) − f(R)) / (β t²)` at saddles of rank-2 BIQ subproblems.
fn escape_model_ratios() -> Vec<f64> {
    let mut ratios = Vec::new();
    for seed in 0..16u64 {
        let model = build_dnn(&rnnal::problem::gen_biq(10, 0.5, 700 + seed)).unwrap();
        let cost = model.cost() / model.cost().norm();
        let mut ctx = SubproblemContext::with_cost(&model, cost, DMatrix::zeros(model.dim(), model.dim()), 1.0).unwrap();
        let start = feasible_init(&model, 2, seed).unwrap();
        let Ok(out) = rgd_solve(&mut ctx, start, 1e-10, 50_000) else { continue };
        if out.termination != RgdTermination::Converged {
            continue;
        }
        let f0 = ctx.eval_objective(&out.point);
        let w = ctx.w_dual().unwrap().clone();
        let cert = recover_duals(&model, ctx.cost(), &out.point, &out.mu, &w).unwrap();
        let lowest = &dense_spectrum(&cert.s_dense).unwrap()[0];
        if lowest.value > -1e-6 {
            continue;
        }
        let (padded, direction, beta) = escape_direction(&out.point, std::slice::from_ref(&lowest.vector), &cert);
        let step = TangentVector::new(direction.matrix() * ESCAPE_T);
        let Ok(trial) = retract(&model, &padded, &step) else { continue };
        let f1 = ctx.eval_objective(&trial);
        ratios.push((f1 - f0) / (beta * ESCAPE_T * ESCAPE_T));
    }
    ratios
}

fn criterion_7() -> Verdict {
    let runs = oracle_runs();
    let (mut comp, mut assembly, mut checked, mut uncertified) = (0.0f64, 0.0f64, 0usize, 0usize);
    let mut bare_runs = Vec::new();
    for run in runs {
        for &(_, c, a) in &run.report.certificate_checks {
            comp = comp.max(c);
            assembly = assembly.max(a);
            checked += 1;
        }
        uncertified += run.report.uncertified_subproblems;
        if run.report.certificate_checks.is_empty() {
            bare_runs.push(run.name.clone());
        }
    }
    let ratios = escape_model_ratios();
    let ratio_ok = ratios.len() >= 3 && ratios.iter().all(|r| (0.5..=1.5).contains(r));
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(*r), b.max(*r)));
    Verdict::new(
        bare_runs.is_empty() && comp <= CERT_TOL && assembly <= CERT_TOL && ratio_ok,
        format!(
            "{checked} stationary subproblems: max complementarity {comp:.1e}, max assembly residual {assembly:.1e} \
             ({uncertified} polishes stopped short of stationarity; runs without a certified subproblem: {}); \
             {} saddles, β-ratio in [{lo:.3}, {hi:.3}]",
            if bare_runs.is_empty() { "none".to_string() } else { bare_runs.join(", ") },
            ratios.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 8: gradient correctness
// ---------------------------------------------------------------------------

fn criterion_8() -> Verdict {
    let models = geometry_models();
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let model = &models[k as usize % models.len()];
        let (n, dim) = (model.n(), model.dim());
        let rank = 1 + (k % 4) as usize;
        let r = gaussian(n, rank, 5_000 + k);
        let w_tilde = random_symmetric(dim, 6_000 + k) * (model.cost().amax() * 0.5);
        let sigma = 10f64.powf((k % 5) as f64 - 2.0);
        let mut ctx = SubproblemContext::new(model, w_tilde, sigma).unwrap();
        let point = rnnal::variety::FactorPoint::new(r.clone());
        ctx.eval_objective(&point);
        let grad = ctx.eval_egrad(&point).unwrap();
        let mut fd = DMatrix::zeros(n, rank);
        for i in 0..n {
            for j in 0..rank {
                let h = 1e-6 * (1.0 + r[(i, j)].abs());
                let mut plus = r.clone();
                plus[(i, j)] += h;
                let mut minus = r.clone();
                minus[(i, j)] -= h;
                let fp = ctx.eval_objective(&rnnal::variety::FactorPoint::new(plus));
                let fm = ctx.eval_objective(&rnnal::variety::FactorPoint::new(minus));
                fd[(i, j)] = (fp - fm) / (2.0 * h);
            }
        }
        worst = worst.max((&fd - &grad).norm() / grad.norm().max(f64::MIN_POSITIVE));
    }
    Verdict::new(worst <= 1e-5, format!("50 tuples, max ‖FD − ∇f‖/‖∇f‖ = {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Criterion 9: rank adaptation
// ---------------------------------------------------------------------------

fn criterion_9() -> Verdict {
    let model = build_dnn(&gen_gwd(10, 10, 1).expect("GWD instance")).expect("GWD model");
    let mut ranks = Vec::new();
    let mut rows = Vec::new();
    let mut pass = true;
    for r0 in [20usize, 50, 100] {
        match solve(&model, &SolverOptions { rank0: Some(r0), ..default_options() }) {
            Ok(r) => {
                pass &= r.rmax() <= 1e-6;
                ranks.push(r.rank);
                rows.push(format!("r0={r0}: rank {} Rmax {:.1e} obj {:.8e}", r.rank, r.rmax(), r.obj));
            }
            Err(e) => {
                pass = false;
                rows.push(format!("r0={r0}: error {e}"));
            }
        }
    }
    let spread = ranks.iter().max().zip(ranks.iter().min()).map_or(usize::MAX, |(a, b)| a - b);
    Verdict::new(pass && ranks.len() == 3 && spread <= 3, format!("{}; rank spread {spread}", rows.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("oracle equivalence", criterion_1),
        ("BIQ desk-scale reproduction", criterion_2),
        ("θ₊ desk-scale reproduction", criterion_3),
        ("QKP generator reproduction", criterion_4),
        ("QAP smoothness strategy", criterion_5),
        ("geometry property suite", criterion_6),
        ("dual-certificate suite", criterion_7),
        ("gradient correctness", criterion_8),
        ("rank adaptation", criterion_9),
    ];
    // `RNNAL_CRITERION=1,7` restricts the run to the listed criteria.
    let only: Option<Vec<usize>> = std::env::var("RNNAL_CRITERION")
        .ok()
        .map(|v| v.split(',').filter_map(|c| c.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|list| !list.contains(&(k + 1))) {
            continue;
        }
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Verdict::new(false, format!("panicked: {msg}"))
        });
        if !verdict.pass {
            failed += 1;
        }
        println!("criterion {} [{name}]: {} — {}", k + 1, if verdict.pass { "PASS" } else { "FAIL" }, verdict.detail);
    }
    println!("acceptance: {failed} criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

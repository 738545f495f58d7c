//! Table rows and JSON reports.

use rnnal::alm::{IterationRecord, SolveReport, SolverOptions};
use rnnal::oracle::{dense_dnn_solve, ORACLE_MAX_N};
use rnnal::DnnModel;
use serde_json::{json, Value};

/// Largest `n` for which `--oracle auto` runs the dense reference solver.
pub const AUTO_ORACLE_MAX_N: usize = 30;

/// Seconds with three significant digits.
pub fn format_time(secs: f64) -> String {
    if secs <= 0.0 {
        return "0".into();
    }
    let digits = (2 - secs.log10().floor() as i32).max(0) as usize;
    format!("{secs:.digits$}")
}

/// Header of the results table.
pub fn table_header() -> String {
    format!(
        "{:<24} {:<8} {:>16} {:>9} {:>9} {:>9} {:>15} {:>15} {:>9} {:<9}",
        "problem", "algo", "it|itsub|r", "Rp", "Rd", "Rc", "obj", "oracle", "time", "status"
    )
}

/// One results row.
pub fn table_row(r: &SolveReport, oracle: Option<f64>) -> String {
    let counts = format!("{}|{}|{}", r.outer_iters, r.inner_iters_total, r.rank);
    let oracle = oracle.map_or_else(|| "-".to_string(), |v| format!("{v:.7e}"));
    let algo = if r.used_slacks { "RNNAL+s" } else { "RNNAL" };
    format!(
        "{:<24} {:<8} {:>16} {:>9.1e} {:>9.1e} {:>9.1e} {:>15.7e} {:>15} {:>9} {:<9}",
        r.problem,
        algo,
        counts,
        r.residues.rp,
        r.residues.rd,
        r.residues.rc,
        r.obj,
        oracle,
        format_time(r.wall_time),
        r.status.as_str()
    )
}

/// Reference value from the dense solver for small instances.
pub fn oracle_value(model: &DnnModel) -> Option<f64> {
    if model.n() > AUTO_ORACLE_MAX_N.min(ORACLE_MAX_N) {
        return None;
    }
    dense_dnn_solve(model, 1e-8).ok().map(|o| o.obj)
}

/// JSON report of a solve.
pub fn report_json(r: &SolveReport, opts: &SolverOptions, omit_time: bool) -> Value {
    let mut flags = vec!["heuristic_inexactness"];
    if r.rd_estimated {
        flags.push("rd_estimated");
    }
    json!({
        "problem": r.problem,
        "n": r.n,
        "m": r.m,
        "status": r.status.as_str(),
        "obj": r.obj,
        "Rp": r.residues.rp,
        "Rd": r.residues.rd,
        "Rc": r.residues.rc,
        "it": r.outer_iters,
        "itsub": r.inner_iters_total,
        "rank": r.rank,
        "time_secs": if omit_time { 0.0 } else { r.wall_time },
        "used_slacks": r.used_slacks,
        "restart_reason": r.restart_reason,
        "options": options_json(opts),
        "flags": flags,
    })
}

/// JSON view of the solver options.
pub fn options_json(o: &SolverOptions) -> Value {
    json!({
        "tol": o.tol,
        "time_limit_secs": o.time_limit_secs,
        "sigma0": o.sigma0,
        "sigma_growth": o.sigma_growth,
        "rank0": o.rank0,
        "tau": o.tau,
        "seed": o.seed,
        "slacks": format!("{:?}", o.use_slacks).to_lowercase(),
    })
}

/// One JSON-lines log record.
pub fn record_json(rec: &IterationRecord) -> Value {
    json!({
        "iteration": rec.iteration,
        "f": rec.objective,
        "Rp": rec.rp,
        "Rd": rec.rd,
        "Rc": rec.rc,
        "sigma": rec.sigma,
        "rank": rec.rank,
        "itsub": rec.inner_iters,
        "escapes": rec.escapes,
        "condition": rec.condition,
        "time": rec.time_secs,
    })
}

//! `rnnal` — solve, benchmark, generate and check DNN relaxations.

mod bench;
mod certificate;
mod report;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rnnal::alm::{kkt_residues, IterationRecord, SlackMode, SolveStatus, SolverOptions};
use rnnal::cones::proj_p;
use rnnal::duals::negative_part_norm;
use rnnal::problem::{
    build_qap, build_theta, gen_biq, gen_dqkp, gen_gwd, gen_qkp, gen_random_graph, parse_generic, parse_gset,
    parse_orlib_biq, parse_qaplib, write_generic,
};
use rnnal::{build_dnn, solve_with_observer, MbqpProblem};

use crate::certificate::{parse_certificate, write_certificate, CertificateFile, PrimalPoint};

/// Exit code for a failed check or a stalled solve.
const EXIT_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "rnnal", version, about = "Low-rank Riemannian ALM for DNN relaxations of mixed-binary QPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one instance and print a table row.
    Solve(SolveArgs),
    /// Run every entry of a manifest and print an aggregate table.
    Bench(BenchArgs),
    /// Generate a random instance in the generic format.
    Gen(GenArgs),
    /// Recompute the KKT residues of an exported certificate.
    Check(CheckArgs),
}

/// Instance families and their input formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// ORLIB `bqp` file (maximization, negated on load).
    Biq,
    /// Gset graph, θ₊ relaxation of the stable set problem.
    Theta,
    /// QAPLIB `.dat` file.
    Qap,
    /// Quadratic knapsack instance in the generic format.
    Qkp,
    /// Disjunctive quadratic knapsack in the generic format.
    Dqkp,
    /// Gromov–Wasserstein instance in the generic format.
    Gwd,
    /// Any instance in the generic format.
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SlackArg {
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OracleArg {
    Off,
    Auto,
}

/// Solver flags shared by `solve` and `bench`.
#[derive(Args, Debug, Clone)]
pub struct SolverFlags {
    /// Stopping tolerance on max(Rp, Rd, Rc).
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Wall-clock limit in seconds.
    #[arg(long = "time-limit", default_value_t = 3600.0)]
    time_limit: f64,
    /// Initial penalty.
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    /// Initial rank (default min(200, ⌈n/5⌉)).
    #[arg(long)]
    rank0: Option<usize>,
    /// Columns added per saddle escape.
    #[arg(long, default_value_t = 1)]
    tau: usize,
    /// Seed of the random initial point.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Slack reformulation policy.
    #[arg(long, value_enum, default_value_t = SlackArg::Auto)]
    slacks: SlackArg,
}

impl SolverFlags {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            time_limit_secs: self.time_limit,
            sigma0: self.sigma0,
            rank0: self.rank0,
            tau: self.tau,
            seed: self.seed,
            use_slacks: match self.slacks {
                SlackArg::Auto => SlackMode::Auto,
                SlackArg::On => SlackMode::On,
                SlackArg::Off => SlackMode::Off,
            },
            ..SolverOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Input format / family.
    #[arg(long, value_enum)]
    family: Family,
    /// Instance file.
    #[arg(long)]
    input: PathBuf,
    /// Instance index inside a multi-instance ORLIB file (0-based).
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[command(flatten)]
    solver: SolverFlags,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines iteration log path.
    #[arg(long)]
    log: Option<PathBuf>,
    /// CSV of the per-iteration conditioning of the normal operator.
    #[arg(long)]
    condlog: Option<PathBuf>,
    /// Certificate export path.
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Cross-check with the dense reference solver on small instances.
    #[arg(long, value_enum, default_value_t = OracleArg::Off)]
    oracle: OracleArg,
    /// Write `time_secs = 0` so that reports are byte-reproducible.
    #[arg(long)]
    omit_time: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Manifest file (one instance per line).
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// JSON summary path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cross-check with the dense reference solver on small instances.
    #[arg(long, value_enum, default_value_t = OracleArg::Off)]
    oracle: OracleArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GenFamily {
    Biq,
    Theta,
    Qkp,
    Dqkp,
    Gwd,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Generator.
    #[arg(long, value_enum)]
    family: GenFamily,
    /// Number of variables (BIQ/QKP/DQKP), vertices (θ₊) or source points (GWD).
    #[arg(long)]
    n: usize,
    /// Density (BIQ), edge probability (θ₊), profit density (QKP) or edge ratio d (DQKP).
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Target points for GWD (default: same as n).
    #[arg(long)]
    k: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    seed: u64,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Input format / family.
    #[arg(long, value_enum)]
    family: Family,
    /// Instance file.
    #[arg(long)]
    input: PathBuf,
    /// Instance index inside a multi-instance ORLIB file.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Certificate file.
    #[arg(long)]
    cert: PathBuf,
    /// Tolerance on every residue.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Interpret the instance in its slack reformulation.
    #[arg(long)]
    slacks: bool,
}

/// Loads an instance of the given family.
pub fn load_instance(family: Family, path: &Path, index: usize) -> Result<MbqpProblem, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance").to_string();
    let err = |e: rnnal::RnnalError| format!("{}: {e}", path.display());
    match family {
        Family::Biq => {
            let mut all = parse_orlib_biq(&text).map_err(err)?;
            if index >= all.len() {
                return Err(format!("{}: has {} instances, index {index} requested", path.display(), all.len()));
            }
            Ok(all.swap_remove(index))
        }
        Family::Theta => {
            let g = parse_gset(&text).map_err(err)?;
            let mut p = build_theta(g.n, &g.edges).map_err(err)?;
            p.name = stem;
            Ok(p)
        }
        Family::Qap => {
            let (w, d) = parse_qaplib(&text).map_err(err)?;
            let mut p = build_qap(&w, &d, false).map_err(err)?;
            p.name = stem;
            Ok(p)
        }
        Family::Qkp | Family::Dqkp | Family::Gwd | Family::Generic => parse_generic(&text, &stem).map_err(err),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode, String> {
    let problem = load_instance(args.family, &args.input, args.index)?;
    let mut opts = args.solver.options();
    opts.track_condition = args.condlog.is_some();
    let model = build_dnn(&problem).map_err(|e| e.to_string())?;
    let mut log = match &args.log {
        Some(p) => Some(fs::File::create(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => None,
    };
    let mut log_error = None;
    let mut observer = |rec: &IterationRecord| {
        if let Some(f) = log.as_mut() {
            let line = report::record_json(rec);
            if let Err(e) = writeln!(f, "{line}") {
                log_error.get_or_insert(e.to_string());
            }
        }
    };
    let result = solve_with_observer(&model, &opts, &mut observer);
    if let Some(e) = log_error {
        return Err(format!("writing the iteration log: {e}"));
    }
    let solved = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("solve failed: {e}");
            if opts.use_slacks == SlackMode::Off && model.m() > 0 {
                eprintln!("hint: the direct formulation may be degenerate; retry with --slacks on");
            }
            return Ok(ExitCode::from(EXIT_FAILED));
        }
    };
    let oracle = if args.oracle == OracleArg::Auto { report::oracle_value(&model) } else { None };
    println!("{}", report::table_header());
    println!("{}", report::table_row(&solved, oracle));
    if let Some(p) = &args.out {
        let json = report::report_json(&solved, &opts, args.omit_time);
        write_file(p, &(serde_json::to_string_pretty(&json).map_err(|e| e.to_string())? + "\n"))?;
    }
    if let Some(p) = &args.condlog {
        let mut csv = String::from("iteration,condition\n");
        for rec in &solved.history {
            csv += &format!("{},{:e}\n", rec.iteration, rec.condition.unwrap_or(f64::NAN));
        }
        write_file(p, &csv)?;
    }
    if let Some(p) = &args.cert {
        let c = &solved.certificate;
        let file = CertificateFile {
            sigma: Some(solved.sigma),
            primal: PrimalPoint::Factor(solved.solution.matrix().clone()),
            w: Some(c.w.clone()),
            dual: Some(c.dual.clone()),
        };
        write_file(p, &write_certificate(&file))?;
    }
    Ok(ExitCode::from(match solved.status {
        SolveStatus::Converged => 0,
        SolveStatus::TimeLimit => 2,
        SolveStatus::Stalled => EXIT_FAILED,
    }))
}

fn cmd_gen(args: &GenArgs) -> Result<ExitCode, String> {
    let p = match args.family {
        GenFamily::Biq => gen_biq(args.n, args.density, args.seed),
        GenFamily::Qkp => gen_qkp(args.n, args.density, args.seed),
        GenFamily::Dqkp => gen_dqkp(args.n, args.density, args.seed).map_err(|e| e.to_string())?,
        GenFamily::Theta => {
            let edges = gen_random_graph(args.n, args.density, args.seed);
            let mut p = build_theta(args.n, &edges).map_err(|e| e.to_string())?;
            p.name = format!("theta-n{}-p{}-s{}", args.n, args.density, args.seed);
            p
        }
        GenFamily::Gwd => gen_gwd(args.n, args.k.unwrap_or(args.n), args.seed).map_err(|e| e.to_string())?,
    };
    write_file(&args.out, &write_generic(&p))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: &CheckArgs) -> Result<ExitCode, String> {
    let mut problem = load_instance(args.family, &args.input, args.index)?;
    if args.slacks {
        problem = rnnal::add_slacks(&problem);
    }
    let model = build_dnn(&problem).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(&args.cert).map_err(|e| format!("{}: {e}", args.cert.display()))?;
    let cert = parse_certificate(&text).map_err(|e| format!("{}: {e}", args.cert.display()))?;
    let y = cert.lifted();
    if y.shape() != (model.dim(), model.dim()) {
        return Err(format!("certificate is for dimension {}, instance has {}", y.nrows(), model.dim()));
    }
    let z = proj_p(&y, model.pattern());
    let (Some(dual), Some(w)) = (&cert.dual, &cert.w) else {
        let zero = DMatrix::zeros(model.dim(), model.dim());
        let res = kkt_residues(&model, &y, &z, &zero, 0.0);
        println!("Rp = {:.3e}", res.rp);
        println!("missing dual certificate: Rd and Rc not computed");
        return Ok(ExitCode::from(EXIT_FAILED));
    };
    if dual.lambda1.len() != model.m()
        || dual.lambda2.shape() != (model.m(), model.n())
        || dual.mu.len() != model.binary().len()
        || w.shape() != y.shape()
    {
        return Err("certificate dual blocks do not match the instance dimensions".into());
    }
    let s = model.cost() - model.constraint_adjoint(dual) - w;
    let neg = negative_part_norm(&s).map_err(|e| e.to_string())?;
    let res = kkt_residues(&model, &y, &z, &s, neg);
    let lambda_min = rnnal::duals::dense_spectrum(&s).map_err(|e| e.to_string())?[0].value;
    println!("Rp = {:.3e}  Rd = {:.3e}  Rc = {:.3e}  lambda_min(S) = {:.3e}", res.rp, res.rd, res.rc, lambda_min);
    let pass = res.max() < args.tol;
    println!("{}", if pass { "certificate OK" } else { "certificate FAILED" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILED) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => bench::cmd_bench(&a.manifest, &a.solver, a.out.as_deref(), a.oracle == OracleArg::Auto),
        Command::Gen(a) => cmd_gen(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

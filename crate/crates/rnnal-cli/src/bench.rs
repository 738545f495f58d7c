//! Benchmark manifests.
//!
//! One entry per line; `#` starts a comment. Entries are either generated
//! instances or files:
//!
//! ```text
//! gen biq   n=50 density=0.5 seed=3
//! gen qkp   n=500 p=0.1 seed=1
//! gen dqkp  n=100 d=1 seed=2
//! gen theta n=30 p=0.3 seed=4
//! gen gwd   l=10 k=10 seed=5
//! file biq   data/bqp100.txt index=0
//! file qap   data/chr12a.dat slacks=on
//! ```
//!
//! Every entry accepts the overrides `slacks=auto|on|off` and `rank0=<r>`.
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rnnal::alm::{SlackMode, SolveStatus, SolverOptions};
use rnnal::problem::{build_theta, gen_biq, gen_dqkp, gen_gwd, gen_qkp, gen_random_graph};
use rnnal::{build_dnn, solve, MbqpProblem};
use serde_json::json;

use crate::report::{oracle_value, options_json, report_json, table_header};
use crate::{load_instance, Family, SolverFlags};

/// Exit code when at least one entry did not converge.
const EXIT_PARTIAL: u8 = 4;

/// A parsed manifest line.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// 1-based line number.
    pub line: usize,
    /// `gen` or `file`.
    pub source: Source,
    /// `key=value` settings.
    pub settings: BTreeMap<String, String>,
}

/// Where an entry's instance comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    /// A generator name.
    Generated(String),
    /// A family and a path.
    File(Family, PathBuf),
}

fn parse_family(name: &str) -> Option<Family> {
    Some(match name {
        "biq" => Family::Biq,
        "theta" => Family::Theta,
        "qap" => Family::Qap,
        "qkp" => Family::Qkp,
        "dqkp" => Family::Dqkp,
        "gwd" => Family::Gwd,
        "generic" => Family::Generic,
        _ => return None,
    })
}

/// Parses a manifest.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, String> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let kind = words.next().unwrap_or_default();
        let family = words.next().ok_or(format!("manifest line {line}: missing family"))?;
        let source = match kind {
            "gen" => {
                if !matches!(family, "biq" | "qkp" | "dqkp" | "theta" | "gwd") {
                    return Err(format!("manifest line {line}: unknown generator {family:?}"));
                }
                Source::Generated(family.to_string())
            }
            "file" => {
                let fam = parse_family(family).ok_or(format!("manifest line {line}: unknown family {family:?}"))?;
                let path = words.next().ok_or(format!("manifest line {line}: missing path"))?;
                let path = Path::new(path);
                Source::File(fam, if path.is_absolute() { path.to_path_buf() } else { base.join(path) })
            }
            other => return Err(format!("manifest line {line}: expected `gen` or `file`, found {other:?}")),
        };
        let mut settings = BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or(format!("manifest line {line}: expected key=value, found {w:?}"))?;
            settings.insert(k.to_string(), v.to_string());
        }
        entries.push(ManifestEntry { line, source, settings });
    }
    Ok(entries)
}

fn setting<T: std::str::FromStr>(e: &ManifestEntry, key: &str) -> Result<Option<T>, String> {
    e.settings
        .get(key)
        .map(|v| v.parse::<T>().map_err(|_| format!("manifest line {}: bad value {v:?} for {key}", e.line)))
        .transpose()
}

fn required<T: std::str::FromStr>(e: &ManifestEntry, key: &str) -> Result<T, String> {
    setting(e, key)?.ok_or(format!("manifest line {}: missing {key}=", e.line))
}

/// Builds the instance of an entry.
pub fn instantiate(e: &ManifestEntry) -> Result<MbqpProblem, String> {
    match &e.source {
        Source::File(family, path) => load_instance(*family, path, setting(e, "index")?.unwrap_or(0)),
        Source::Generated(name) => {
            let seed: u64 = required(e, "seed")?;
            match name.as_str() {
                "biq" => Ok(gen_biq(required(e, "n")?, setting(e, "density")?.unwrap_or(0.1), seed)),
                "qkp" => Ok(gen_qkp(required(e, "n")?, setting(e, "p")?.unwrap_or(0.1), seed)),
                "dqkp" => gen_dqkp(required(e, "n")?, setting(e, "d")?.unwrap_or(1.0), seed).map_err(|x| x.to_string()),
                "theta" => {
                    let n = required(e, "n")?;
                    let p = setting(e, "p")?.unwrap_or(0.3);
                    let mut inst = build_theta(n, &gen_random_graph(n, p, seed)).map_err(|x| x.to_string())?;
                    inst.name = format!("theta-n{n}-p{p}-s{seed}");
                    Ok(inst)
                }
                "gwd" => {
                    let l = required(e, "l")?;
                    gen_gwd(l, setting(e, "k")?.unwrap_or(l), seed).map_err(|x| x.to_string())
                }
                other => Err(format!("unknown generator {other}")),
            }
        }
    }
}

fn entry_options(e: &ManifestEntry, base: &SolverOptions) -> Result<SolverOptions, String> {
    let mut opts = base.clone();
    if let Some(s) = setting::<String>(e, "slacks")? {
        opts.use_slacks = match s.as_str() {
            "auto" => SlackMode::Auto,
            "on" => SlackMode::On,
            "off" => SlackMode::Off,
            _ => return Err(format!("manifest line {}: slacks must be auto, on or off", e.line)),
        };
    }
    if let Some(r) = setting(e, "rank0")? {
        opts.rank0 = Some(r);
    }
    Ok(opts)
}

/// Number of bench workers from `RNNAL_THREADS` (default 1).
pub fn worker_count() -> usize {
    std::env::var("RNNAL_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

struct RowResult {
    line: String,
    json: serde_json::Value,
    converged: bool,
}

fn run_entry(e: &ManifestEntry, base: &SolverOptions, with_oracle: bool) -> RowResult {
    let failure = |msg: String| RowResult {
        line: format!("line {:<4} FAILED: {msg}", e.line),
        json: json!({"line": e.line, "status": "Error", "error": msg}),
        converged: false,
    };
    let problem = match instantiate(e) {
        Ok(p) => p,
        Err(msg) => return failure(msg),
    };
    let opts = match entry_options(e, base) {
        Ok(o) => o,
        Err(msg) => return failure(msg),
    };
    let model = match build_dnn(&problem) {
        Ok(m) => m,
        Err(err) => return failure(err.to_string()),
    };
    match solve(&model, &opts) {
        Ok(report) => {
            let oracle = if with_oracle { oracle_value(&model) } else { None };
            let mut json = report_json(&report, &opts, false);
            json["line"] = json!(e.line);
            json["oracle"] = json!(oracle);
            RowResult {
                line: crate::report::table_row(&report, oracle),
                json,
                converged: report.status == SolveStatus::Converged,
            }
        }
        Err(err) => failure(format!("{}: {err}", problem.name)),
    }
}

/// `rnnal bench`.
pub fn cmd_bench(manifest: &Path, flags: &SolverFlags, out: Option<&Path>, with_oracle: bool) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(manifest).map_err(|e| format!("{}: {e}", manifest.display()))?;
    let base_dir = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base_dir)?;
    if entries.is_empty() {
        return Err(format!("{}: manifest has no entries", manifest.display()));
    }
    let opts = flags.options();
    let results: Mutex<Vec<Option<RowResult>>> = Mutex::new((0..entries.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = worker_count().min(entries.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= entries.len() {
                    break;
                }
                let row = run_entry(&entries[i], &opts, with_oracle);
                results.lock().expect("result table poisoned")[i] = Some(row);
            });
        }
    });
    let rows: Vec<RowResult> = results.into_inner().expect("result table poisoned").into_iter().flatten().collect();
    println!("{}", table_header());
    for r in &rows {
        println!("{}", r.line);
    }
    let failed = rows.iter().filter(|r| !r.converged).count();
    println!("{} of {} entries converged", rows.len() - failed, rows.len());
    if let Some(p) = out {
        let summary = json!({
            "manifest": manifest.display().to_string(),
            "options": options_json(&opts),
            "rows": rows.iter().map(|r| r.json.clone()).collect::<Vec<_>>(),
            "converged": rows.len() - failed,
            "total": rows.len(),
        });
        std::fs::write(p, serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())? + "\n")
            .map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_PARTIAL) })
}

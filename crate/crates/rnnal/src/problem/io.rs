//! Readers for the ORLIB, Gset and QAPLIB benchmark formats, and a
//! line-oriented generic instance format with a canonical writer.
//!
//! Generic format (indices 1-based, `#` starts a comment line):
//!
//! ```text
//! MBQP n m |B| |E|
//! Q:
//! i j q_ij        # upper triangle (i ≤ j), nonzeros only
//! c:
//! c_1             # n lines
//! A:
//! i j a_ij        # row, column, nonzeros only
//! b:
//! b_1             # m lines
//! B:
//! i               # |B| lines
//! E:
//! i j             # |E| lines, i < j
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::MbqpProblem;
use crate::error::{Result, RnnalError};

/// Whitespace tokens tagged with their 1-based line numbers.
struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(k, line)| line.split_whitespace().map(move |t| (t, k + 1)))
            .collect();
        Self { items, pos: 0 }
    }

    fn last_line(&self) -> usize {
        self.items.last().map_or(1, |t| t.1)
    }

    fn next_raw(&mut self, what: &str) -> Result<(&'a str, usize)> {
        let item = self.items.get(self.pos).copied().ok_or_else(|| RnnalError::Parse {
            line: self.last_line(),
            message: format!("unexpected end of input while reading {what}"),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let (tok, line) = self.next_raw(what)?;
        tok.parse().map(|v| (v, line)).map_err(|_| RnnalError::Parse {
            line,
            message: format!("expected a nonnegative integer for {what}, found {tok:?}"),
        })
    }

    fn index(&mut self, n: usize, what: &str) -> Result<(usize, usize)> {
        let (v, line) = self.usize(what)?;
        if v == 0 || v > n {
            return Err(RnnalError::Parse {
                line,
                message: format!("{what} {v} outside 1..={n}"),
            });
        }
        Ok((v - 1, line))
    }

    fn f64(&mut self, what: &str) -> Result<(f64, usize)> {
        let (tok, line) = self.next_raw(what)?;
        tok.parse().map(|v| (v, line)).map_err(|_| RnnalError::Parse {
            line,
            message: format!("expected a number for {what}, found {tok:?}"),
        })
    }

    fn at_end(&self) -> bool {
        self.pos >= self.items.len()
    }
}

/// Collects symmetric triplets, rejecting conflicting `(i, j)` / `(j, i)`
/// pairs; a repeated identical entry is taken once.
fn symmetric_from_triplets(n: usize, triplets: &[(usize, usize, f64, usize)]) -> Result<DMatrix<f64>> {
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(i, j, v, line) in triplets {
        let key = (i.min(j), i.max(j));
        match entries.get(&key) {
            Some(&old) if old != v => {
                return Err(RnnalError::Asymmetry { row: i + 1, col: j + 1, line });
            }
            _ => {
                entries.insert(key, v);
            }
        }
    }
    let mut q = DMatrix::zeros(n, n);
    for ((i, j), v) in entries {
        q[(i, j)] = v;
        q[(j, i)] = v;
    }
    Ok(q)
}

/// Reads an ORLIB `bqp` file: an instance count, then per instance `n nnz`
/// and `nnz` triplets `i j q_ij`. Off-diagonal values populate both `Q_ij`
/// and `Q_ji`. ORLIB instances maximize `xᵀ Q x`; the returned problems
/// minimize `−xᵀ Q x`.
pub fn parse_orlib_biq(text: &str) -> Result<Vec<MbqpProblem>> {
    let mut tok = Tokens::new(text);
    let (count, _) = tok.usize("instance count")?;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let (n, _) = tok.usize("dimension")?;
        let (nnz, _) = tok.usize("nonzero count")?;
        let mut triplets = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let (i, _) = tok.index(n, "row index")?;
            let (j, _) = tok.index(n, "column index")?;
            let (v, line) = tok.f64("value")?;
            triplets.push((i, j, v, line));
        }
        let q = symmetric_from_triplets(n, &triplets)?;
        out.push(MbqpProblem {
            name: format!("bqp{n}.{}", k + 1),
            q: -q,
            c: DVector::zeros(n),
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            binary: (0..n).collect(),
            edges: vec![],
        });
    }
    Ok(out)
}

/// An undirected graph read from a Gset file (weights ignored).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GsetGraph {
    /// Vertex count.
    pub n: usize,
    /// 0-based edges `(i, j)` with `i < j`, in file order.
    pub edges: Vec<(usize, usize)>,
}

/// Reads a Gset file: `n m` followed by `m` lines `i j w`.
pub fn parse_gset(text: &str) -> Result<GsetGraph> {
    let mut tok = Tokens::new(text);
    let (n, _) = tok.usize("vertex count")?;
    let (m, _) = tok.usize("edge count")?;
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (i, line) = tok.index(n, "edge endpoint")?;
        let (j, _) = tok.index(n, "edge endpoint")?;
        tok.f64("edge weight")?;
        if i == j {
            return Err(RnnalError::Parse { line, message: "self-loop".into() });
        }
        edges.push((i.min(j), i.max(j)));
    }
    Ok(GsetGraph { n, edges })
}

/// Reads a QAPLIB file: `p` followed by two `p × p` matrices (flow, then
/// distance). Returns `(W, D)` such that the objective is `tr(W Π D Πᵀ)`.
pub fn parse_qaplib(text: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut tok = Tokens::new(text);
    let (p, _) = tok.usize("dimension")?;
    let mut read = |what: &str| -> Result<DMatrix<f64>> {
        let mut mat = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                mat[(i, j)] = tok.f64(what)?.0;
            }
        }
        Ok(mat)
    };
    let w = read("flow matrix")?;
    let d = read("distance matrix")?;
    Ok((w, d))
}

/// Reads the generic MBQP format described in the module docs.
pub fn parse_generic(text: &str, name: &str) -> Result<MbqpProblem> {
    let cleaned: String = text
        .lines()
        .map(|l| if l.trim_start().starts_with('#') { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    let mut tok = Tokens::new(&cleaned);
    let (magic, line) = tok.next_raw("header")?;
    if magic != "MBQP" {
        return Err(RnnalError::Parse { line, message: format!("expected MBQP header, found {magic:?}") });
    }
    let (n, _) = tok.usize("n")?;
    let (m, _) = tok.usize("m")?;
    let (nb, _) = tok.usize("|B|")?;
    let (ne, _) = tok.usize("|E|")?;

    let section = |tok: &mut Tokens, label: &str| -> Result<()> {
        let (t, line) = tok.next_raw(label)?;
        if t != label {
            return Err(RnnalError::Parse { line, message: format!("expected section {label}, found {t:?}") });
        }
        Ok(())
    };
    let is_label = |tok: &Tokens| tok.items.get(tok.pos).is_some_and(|t| t.0.ends_with(':'));

    section(&mut tok, "Q:")?;
    let mut triplets = Vec::new();
    while !tok.at_end() && !is_label(&tok) {
        let (i, _) = tok.index(n, "Q row")?;
        let (j, _) = tok.index(n, "Q column")?;
        let (v, line) = tok.f64("Q value")?;
        triplets.push((i, j, v, line));
    }
    let q = symmetric_from_triplets(n, &triplets)?;

    section(&mut tok, "c:")?;
    let mut c = DVector::zeros(n);
    for i in 0..n {
        c[i] = tok.f64("c value")?.0;
    }

    section(&mut tok, "A:")?;
    let mut a = DMatrix::zeros(m, n);
    while !tok.at_end() && !is_label(&tok) {
        let (i, _) = tok.index(m, "A row")?;
        let (j, _) = tok.index(n, "A column")?;
        a[(i, j)] = tok.f64("A value")?.0;
    }

    section(&mut tok, "b:")?;
    let mut b = DVector::zeros(m);
    for i in 0..m {
        b[i] = tok.f64("b value")?.0;
    }

    section(&mut tok, "B:")?;
    let mut binary = Vec::with_capacity(nb);
    for _ in 0..nb {
        binary.push(tok.index(n, "binary index")?.0);
    }
    binary.sort_unstable();

    section(&mut tok, "E:")?;
    let mut edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (i, line) = tok.index(n, "edge endpoint")?;
        let (j, _) = tok.index(n, "edge endpoint")?;
        if i == j {
            return Err(RnnalError::Parse { line, message: "self-loop in E".into() });
        }
        edges.push((i.min(j), i.max(j)));
    }
    edges.sort_unstable();
    if !tok.at_end() {
        let (t, line) = tok.next_raw("trailing data")?;
        return Err(RnnalError::Parse { line, message: format!("unexpected trailing token {t:?}") });
    }
    Ok(MbqpProblem { name: name.to_string(), q, c, a, b, binary, edges })
}

/// Reads a generic-format file; the instance is named after the file stem.
pub fn read_generic_file(path: &Path) -> Result<MbqpProblem> {
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
    parse_generic(&text, name)
}

/// Canonical generic-format serialization (shortest round-trip floats).
pub fn write_generic(p: &MbqpProblem) -> String {
    let (n, m) = (p.n(), p.m());
    let mut out = String::new();
    let _ = writeln!(out, "# {}", p.name);
    let _ = writeln!(out, "MBQP {n} {m} {} {}", p.binary.len(), p.edges.len());
    out.push_str("Q:\n");
    for j in 0..n {
        for i in 0..=j {
            if p.q[(i, j)] != 0.0 {
                let _ = writeln!(out, "{} {} {:?}", i + 1, j + 1, p.q[(i, j)]);
            }
        }
    }
    out.push_str("c:\n");
    for v in p.c.iter() {
        let _ = writeln!(out, "{v:?}");
    }
    out.push_str("A:\n");
    for j in 0..n {
        for i in 0..m {
            if p.a[(i, j)] != 0.0 {
                let _ = writeln!(out, "{} {} {:?}", i + 1, j + 1, p.a[(i, j)]);
            }
        }
    }
    out.push_str("b:\n");
    for v in p.b.iter() {
        let _ = writeln!(out, "{v:?}");
    }
    out.push_str("B:\n");
    for i in &p.binary {
        let _ = writeln!(out, "{}", i + 1);
    }
    out.push_str("E:\n");
    for (i, j) in &p.edges {
        let _ = writeln!(out, "{} {}", i + 1, j + 1);
    }
    out
}

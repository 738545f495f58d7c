//! Plain-text certificate files.
//!
//! ```text
//! # rnnal certificate
//! sigma <σ>
//! R <n> <r>          (or: Y <n+1>)
//! <rows>
//! W <n+1>
//! <rows>
//! lambda1 <m>
//! <values>
//! lambda2 <m> <n>
//! <rows>
//! mu <|B|>
//! <values>
//! alpha <α>
//! ```
//!
//! The dual sections are optional; a file with only `R`/`Y` is a primal
//! point without a certificate.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rnnal::problem::AffineDual;

/// Primal point stored in a certificate.
#[derive(Clone, Debug, PartialEq)]
pub enum PrimalPoint {
    /// Factor `R` with `Y = R̂ R̂ᵀ`.
    Factor(DMatrix<f64>),
    /// Dense lifted matrix.
    Lifted(DMatrix<f64>),
}

/// Contents of a certificate file.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateFile {
    /// Penalty at export time (informational).
    pub sigma: Option<f64>,
    /// The primal point.
    pub primal: PrimalPoint,
    /// The cone multiplier `W`.
    pub w: Option<DMatrix<f64>>,
    /// Affine multipliers.
    pub dual: Option<AffineDual>,
}

impl CertificateFile {
    /// The lifted matrix `Y`.
    pub fn lifted(&self) -> DMatrix<f64> {
        match &self.primal {
            PrimalPoint::Factor(r) => rnnal::variety::FactorPoint::new(r.clone()).lifted_gram(),
            PrimalPoint::Lifted(y) => y.clone(),
        }
    }
}

fn write_matrix(out: &mut String, header: &str, m: &DMatrix<f64>) {
    writeln!(out, "{header}").unwrap();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
}

fn write_vector(out: &mut String, header: &str, v: &DVector<f64>) {
    writeln!(out, "{header}").unwrap();
    let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    writeln!(out, "{}", vals.join(" ")).unwrap();
}

/// Serializes a certificate.
pub fn write_certificate(cert: &CertificateFile) -> String {
    let mut out = String::from("# rnnal certificate\n");
    if let Some(s) = cert.sigma {
        writeln!(out, "sigma {s:?}").unwrap();
    }
    match &cert.primal {
        PrimalPoint::Factor(r) => write_matrix(&mut out, &format!("R {} {}", r.nrows(), r.ncols()), r),
        PrimalPoint::Lifted(y) => write_matrix(&mut out, &format!("Y {}", y.nrows()), y),
    }
    if let Some(w) = &cert.w {
        write_matrix(&mut out, &format!("W {}", w.nrows()), w);
    }
    if let Some(d) = &cert.dual {
        write_vector(&mut out, &format!("lambda1 {}", d.lambda1.len()), &d.lambda1);
        write_matrix(&mut out, &format!("lambda2 {} {}", d.lambda2.nrows(), d.lambda2.ncols()), &d.lambda2);
        write_vector(&mut out, &format!("mu {}", d.mu.len()), &d.mu);
        writeln!(out, "alpha {:?}", d.alpha).unwrap();
    }
    out
}

struct Reader<'a> {
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        let tokens = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Self { tokens, pos: 0 }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let t = self.tokens.get(self.pos).copied();
        self.pos += 1;
        t
    }

    fn usize(&mut self) -> Result<usize, String> {
        let (line, t) = self.next().ok_or("unexpected end of file")?;
        t.parse().map_err(|_| format!("line {line}: expected a count, found {t:?}"))
    }

    fn float(&mut self) -> Result<f64, String> {
        let (line, t) = self.next().ok_or("unexpected end of file")?;
        t.parse().map_err(|_| format!("line {line}: expected a number, found {t:?}"))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, String> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.float()?;
            }
        }
        Ok(m)
    }
}

/// Parses a certificate file.
pub fn parse_certificate(text: &str) -> Result<CertificateFile, String> {
    let mut rd = Reader::new(text);
    let mut sigma = None;
    let mut primal = None;
    let mut w = None;
    let (mut lambda1, mut lambda2, mut mu, mut alpha) = (None, None, None, None);
    while let Some((line, key)) = rd.next() {
        match key {
            "sigma" => sigma = Some(rd.float()?),
            "R" => {
                let (n, r) = (rd.usize()?, rd.usize()?);
                primal = Some(PrimalPoint::Factor(rd.matrix(n, r)?));
            }
            "Y" => {
                let d = rd.usize()?;
                primal = Some(PrimalPoint::Lifted(rd.matrix(d, d)?));
            }
            "W" => {
                let d = rd.usize()?;
                w = Some(rd.matrix(d, d)?);
            }
            "lambda1" => {
                let m = rd.usize()?;
                lambda1 = Some(DVector::from_iterator(m, rd.matrix(m, 1)?.iter().copied()));
            }
            "lambda2" => {
                let (m, n) = (rd.usize()?, rd.usize()?);
                lambda2 = Some(rd.matrix(m, n)?);
            }
            "mu" => {
                let k = rd.usize()?;
                mu = Some(DVector::from_iterator(k, rd.matrix(k, 1)?.iter().copied()));
            }
            "alpha" => alpha = Some(rd.float()?),
            other => return Err(format!("line {line}: unknown section {other:?}")),
        }
    }
    let primal = primal.ok_or("certificate has no R or Y section")?;
    let dual = match (lambda1, lambda2, mu, alpha) {
        (Some(lambda1), Some(lambda2), Some(mu), Some(alpha)) => Some(AffineDual { lambda1, lambda2, mu, alpha }),
        (None, None, None, None) => None,
        _ => return Err("certificate has an incomplete set of dual sections".into()),
    };
    Ok(CertificateFile { sigma, primal, w, dual })
}

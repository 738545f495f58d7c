//! Projections onto the polyhedral cone `𝒫 = ℕ ∩ 𝒵` and its dual.
//!
//! `ℕ` is the cone of entrywise nonnegative symmetric matrices and `𝒵` the
//! subspace whose entries vanish on the incompatibility pattern `E`, lifted
//! into the lower-right `n × n` block of the `(n+1) × (n+1)` lifted matrix.
//! Its dual is `𝒫* = ℕ + 𝒵^⊥`: pattern entries are free, every other entry
//! must be nonnegative. Both projections are entrywise, so they satisfy the
//! Moreau identity `X = Π_𝒫(X) − Π_𝒫*(−X)` exactly in floating point.

use nalgebra::DMatrix;

/// Symmetric zero pattern of the lifted matrix.
///
/// Only the lower-right block is ever patterned; the first row and column
/// (which carry `x`) are never zeroed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConePattern {
    dim: usize,
    /// Lifted index pairs `(i, j)` with `1 ≤ i < j ≤ n`.
    entries: Vec<(usize, usize)>,
}

impl ConePattern {
    /// Lifts incompatible pairs `(i, j)` (0-based, `i < j < n`) into the
    /// `(n+1)`-dimensional lifted matrix.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut entries: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(i, j)| {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                debug_assert!(hi < n, "edge index out of range");
                (lo + 1, hi + 1)
            })
            .collect();
        entries.sort_unstable();
        entries.dedup();
        Self { dim: n + 1, entries }
    }

    /// Lifted dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper-triangular lifted pairs; each stands for both `(i, j)` and `(j, i)`.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Whether the pattern is empty.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether lifted entry `(i, j)` is patterned.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.entries.binary_search(&key).is_ok()
    }
}

/// In-place `Π_𝒫`: entrywise `max(x, 0)`, pattern entries set to zero.
pub fn proj_p_in_place(x: &mut DMatrix<f64>, pat: &ConePattern) {
    x.apply(|v| *v = v.max(0.0));
    for &(i, j) in pat.entries() {
        x[(i, j)] = 0.0;
        x[(j, i)] = 0.0;
    }
}

/// In-place `Π_𝒫*`: entrywise `max(x, 0)`, pattern entries passed through.
pub fn proj_pstar_in_place(x: &mut DMatrix<f64>, pat: &ConePattern) {
    let saved: Vec<(f64, f64)> = pat
        .entries()
        .iter()
        .map(|&(i, j)| (x[(i, j)], x[(j, i)]))
        .collect();
    x.apply(|v| *v = v.max(0.0));
    for (&(i, j), (vij, vji)) in pat.entries().iter().zip(saved) {
        x[(i, j)] = vij;
        x[(j, i)] = vji;
    }
}

/// `Π_𝒫(X)`.
pub fn proj_p(x: &DMatrix<f64>, pat: &ConePattern) -> DMatrix<f64> {
    let mut out = x.clone();
    proj_p_in_place(&mut out, pat);
    out
}

/// `Π_𝒫*(X)`.
pub fn proj_pstar(x: &DMatrix<f64>, pat: &ConePattern) -> DMatrix<f64> {
    let mut out = x.clone();
    proj_pstar_in_place(&mut out, pat);
    out
}

//! Mixed-binary quadratic programs, their doubly nonnegative lifting, the
//! slack reformulation, benchmark generators and file formats.
//!
//! An instance is
//!
//! ```text
//!   minimize    xᵀ Q x + 2 cᵀ x
//!   subject to  A x = b,  x ≥ 0,
//!               x_i ∈ {0, 1}     for i ∈ B,
//!               x_i x_j = 0      for (i, j) ∈ E.
//! ```
//!
//! Its DNN relaxation works on the lifted matrix `Y = [1 xᵀ; x X]` of order
//! `n + 1` with cost `C = [0 cᵀ; c Q]`, the affine constraints
//! `A x = b`, `A X = b xᵀ`, `diag_B(X) = x_B`, `Y₁₁ = 1`, the PSD cone and the
//! polyhedral cone `𝒫 = ℕ ∩ 𝒵`.

mod generators;
mod io;

pub use generators::{
    build_gwd, build_qap, build_theta, gen_biq, gen_dqkp, gen_gwd, gen_qkp, gen_random_graph,
    instance_rng,
};
pub use io::{
    parse_generic, parse_gset, parse_orlib_biq, parse_qaplib, read_generic_file, write_generic,
    GsetGraph,
};

use nalgebra::{DMatrix, DVector};

use crate::cones::ConePattern;
use crate::error::{Result, RnnalError};
use crate::linops::{factorize_constraints, pinv_apply_vec, ConstraintFactors};

/// Relative symmetry tolerance for the quadratic cost.
const SYMMETRY_TOL: f64 = 1e-14;

/// A raw mixed-binary quadratic program.
#[derive(Clone, Debug, PartialEq)]
pub struct MbqpProblem {
    /// Human-readable identifier used in reports.
    pub name: String,
    /// Symmetric `n × n` quadratic cost.
    pub q: DMatrix<f64>,
    /// Linear cost (the objective uses `2 cᵀ x`).
    pub c: DVector<f64>,
    /// `m × n` equality constraint matrix.
    pub a: DMatrix<f64>,
    /// Nonnegative right-hand side of length `m`.
    pub b: DVector<f64>,
    /// Sorted 0-based indices of binary variables.
    pub binary: Vec<usize>,
    /// Incompatible pairs `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl MbqpProblem {
    /// Number of variables.
    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    /// Number of equality constraints.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Objective `xᵀ Q x + 2 cᵀ x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + 2.0 * self.c.dot(x)
    }

    /// Checks every modelling invariant except full row rank of `A` (which is
    /// detected when `A Aᵀ` is factorized).
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.q.ncols() != n {
            return Err(RnnalError::InvalidProblem(format!(
                "Q is {}×{}, expected square",
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        if self.c.len() != n {
            return Err(RnnalError::InvalidProblem(format!("c has length {}, expected {n}", self.c.len())));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(RnnalError::InvalidProblem(format!(
                "A is {}×{} but n = {n} and b has length {}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        let scale = self.q.amax().max(1.0);
        for j in 0..n {
            for i in 0..j {
                if (self.q[(i, j)] - self.q[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(RnnalError::InvalidProblem(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        if let Some(i) = self.b.iter().position(|v| !(*v >= 0.0)) {
            return Err(RnnalError::InvalidProblem(format!("b[{i}] = {} is negative", self.b[i])));
        }
        if self.binary.windows(2).any(|w| w[0] >= w[1]) || self.binary.last().is_some_and(|&i| i >= n) {
            return Err(RnnalError::InvalidProblem("binary set must be sorted, distinct and in range".into()));
        }
        for w in self.edges.windows(2) {
            if w[0] == w[1] {
                return Err(RnnalError::DuplicateEdge(w[0].0, w[0].1));
            }
            if w[0] > w[1] {
                return Err(RnnalError::InvalidProblem("edge list must be sorted".into()));
            }
        }
        if let Some(&(i, j)) = self.edges.iter().find(|&&(i, j)| i >= j || j >= n) {
            return Err(RnnalError::InvalidProblem(format!(
                "edge ({i}, {j}) must satisfy i < j < n"
            )));
        }
        Ok(())
    }

    /// The same instance with every linear equality removed.
    pub fn without_linear_constraints(&self) -> Self {
        Self {
            a: DMatrix::zeros(0, self.n()),
            b: DVector::zeros(0),
            ..self.clone()
        }
    }
}

/// Multipliers of the lifted affine constraints, laid out like `𝒜(Y)`:
/// `(λ₁; vec λ₂; μ; α)` for `A x = b`, `A X − b xᵀ = 0`, `diag_B(X) − x_B = 0`
/// and `Y₁₁ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineDual {
    /// Length `m`.
    pub lambda1: DVector<f64>,
    /// `m × n`.
    pub lambda2: DMatrix<f64>,
    /// Length `|B|`.
    pub mu: DVector<f64>,
    /// Multiplier of `Y₁₁ = 1`.
    pub alpha: f64,
}

/// The lifted DNN program of an [`MbqpProblem`].
#[derive(Clone, Debug)]
pub struct DnnModel {
    problem: MbqpProblem,
    cost: DMatrix<f64>,
    is_binary: Vec<bool>,
    pattern: ConePattern,
    factors: ConstraintFactors,
    /// `A e − 2 b`, the shift that turns the affine constraint into one on
    /// `R' = 2R − e e₁ᵀ`.
    shift_rhs: DVector<f64>,
    /// `L⁻¹ A_{:,B}` where `L Lᵀ = A Aᵀ`; its Gram matrix is `(A† A)_{BB}`.
    binary_coupling: DMatrix<f64>,
    /// `A† b`.
    pinv_b: DVector<f64>,
}

impl DnnModel {
    /// The source instance.
    pub fn problem(&self) -> &MbqpProblem {
        &self.problem
    }

    /// Number of original variables `n` (the lifted dimension is `n + 1`).
    pub fn n(&self) -> usize {
        self.problem.n()
    }

    /// Number of rows of `A`.
    pub fn m(&self) -> usize {
        self.problem.m()
    }

    /// Lifted dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.n() + 1
    }

    /// Lifted cost `C = [0 cᵀ; c Q]`.
    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    /// Right-hand side `b`.
    pub fn b(&self) -> &DVector<f64> {
        &self.problem.b
    }

    /// Binary indices.
    pub fn binary(&self) -> &[usize] {
        &self.problem.binary
    }

    /// Membership mask of the binary set.
    pub fn is_binary(&self) -> &[bool] {
        &self.is_binary
    }

    /// Zero pattern lifted from `E`.
    pub fn pattern(&self) -> &ConePattern {
        &self.pattern
    }

    /// Cached factorization of `A Aᵀ`.
    pub fn factors(&self) -> &ConstraintFactors {
        &self.factors
    }

    /// `A e − 2 b`.
    pub fn shift_rhs(&self) -> &DVector<f64> {
        &self.shift_rhs
    }

    /// `L⁻¹ A_{:,B}`.
    pub fn binary_coupling(&self) -> &DMatrix<f64> {
        &self.binary_coupling
    }

    /// `A† b`.
    pub fn pinv_b(&self) -> &DVector<f64> {
        &self.pinv_b
    }

    /// Number of lifted equality constraints `m + m n + |B| + 1`.
    pub fn constraint_count(&self) -> usize {
        let (m, n) = (self.m(), self.n());
        m + m * n + self.binary().len() + 1
    }

    /// Right-hand side `d = (b; 0; 0; 1)` of the lifted constraints.
    pub fn lifted_rhs(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.constraint_count());
        d.rows_mut(0, self.m()).copy_from(self.b());
        let last = d.len() - 1;
        d[last] = 1.0;
        d
    }

    /// The lifted affine map `𝒜(Y) = (A Y₂₁; vec(A Y₂₂ − b Y₁₂); diag_B(Y₂₂) − (Y₂₁)_B; Y₁₁)`.
    pub fn constraint_map(&self, y: &DMatrix<f64>) -> DVector<f64> {
        let (m, n) = (self.m(), self.n());
        let a = self.factors.matrix();
        let y21 = y.view((1, 0), (n, 1)).into_owned();
        let y22 = y.view((1, 1), (n, n)).into_owned();
        let mut out = DVector::zeros(self.constraint_count());
        if m > 0 {
            let ax = a.mul(&y21);
            out.rows_mut(0, m).copy_from(&ax.column(0));
            let mut block = a.mul(&y22);
            for j in 0..n {
                for i in 0..m {
                    block[(i, j)] -= self.b()[i] * y21[(j, 0)];
                }
            }
            out.rows_mut(m, m * n).copy_from_slice(block.as_slice());
        }
        let offset = m + m * n;
        for (k, &i) in self.binary().iter().enumerate() {
            out[offset + k] = y22[(i, i)] - y21[(i, 0)];
        }
        let last = out.len() - 1;
        out[last] = y[(0, 0)];
        out
    }

    /// The adjoint `𝒜*(y)`, a symmetric `(n+1) × (n+1)` matrix.
    pub fn constraint_adjoint(&self, dual: &AffineDual) -> DMatrix<f64> {
        let (m, n) = (self.m(), self.n());
        let a = self.factors.matrix();
        let mut out = DMatrix::zeros(n + 1, n + 1);
        out[(0, 0)] = dual.alpha;
        let mut first = DVector::zeros(n);
        if m > 0 {
            first += a.tr_mul_vec(&dual.lambda1);
            first -= dual.lambda2.tr_mul(self.b());
            let at_l2 = a.tr_mul(&dual.lambda2);
            let sym = (&at_l2 + at_l2.transpose()) * 0.5;
            out.view_mut((1, 1), (n, n)).copy_from(&sym);
        }
        for (k, &i) in self.binary().iter().enumerate() {
            first[i] -= dual.mu[k];
            out[(i + 1, i + 1)] += dual.mu[k];
        }
        for i in 0..n {
            out[(i + 1, 0)] = 0.5 * first[i];
            out[(0, i + 1)] = 0.5 * first[i];
        }
        out
    }

    /// Scatters `μ` (indexed by the binary set) into a length-`n` vector.
    pub fn scatter_binary(&self, mu: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for (k, &i) in self.binary().iter().enumerate() {
            out[i] = mu[k];
        }
        out
    }
}

/// Builds the lifted DNN model; validates the instance and factorizes `A Aᵀ`.
pub fn build_dnn(p: &MbqpProblem) -> Result<DnnModel> {
    p.validate()?;
    let n = p.n();
    let mut cost = DMatrix::zeros(n + 1, n + 1);
    cost.view_mut((1, 1), (n, n)).copy_from(&p.q);
    for i in 0..n {
        cost[(i + 1, 0)] = p.c[i];
        cost[(0, i + 1)] = p.c[i];
    }
    let mut is_binary = vec![false; n];
    for &i in &p.binary {
        is_binary[i] = true;
    }
    let factors = factorize_constraints(&p.a)?;
    let shift_rhs = if p.m() > 0 {
        p.a.column_sum() - &p.b * 2.0
    } else {
        DVector::zeros(0)
    };
    let binary_coupling = if p.m() > 0 {
        let a_b = DMatrix::from_fn(p.m(), p.binary.len(), |i, k| p.a[(i, p.binary[k])]);
        factors.chol_lower_solve(&a_b)?
    } else {
        DMatrix::zeros(0, p.binary.len())
    };
    let pinv_b = pinv_apply_vec(&factors, &p.b)?;
    Ok(DnnModel {
        pattern: ConePattern::from_edges(n, &p.edges),
        problem: p.clone(),
        cost,
        is_binary,
        factors,
        shift_rhs,
        binary_coupling,
        pinv_b,
    })
}

/// Relaxes `A x = b` into `A x + s₁ = b`, `A x − s₂ = b` with continuous
/// slacks `s₁, s₂ ≥ 0`.
///
/// The DNN relaxations of the two instances have the same optimal value, and
/// the factorized feasible set of the relaxed instance satisfies LICQ at
/// every point. With `m = 0` the instance is returned unchanged.
pub fn add_slacks(p: &MbqpProblem) -> MbqpProblem {
    let (m, n) = (p.m(), p.n());
    if m == 0 {
        return p.clone();
    }
    let n_new = n + 2 * m;
    let mut q = DMatrix::zeros(n_new, n_new);
    q.view_mut((0, 0), (n, n)).copy_from(&p.q);
    let mut c = DVector::zeros(n_new);
    c.rows_mut(0, n).copy_from(&p.c);
    let mut a = DMatrix::zeros(2 * m, n_new);
    a.view_mut((0, 0), (m, n)).copy_from(&p.a);
    a.view_mut((m, 0), (m, n)).copy_from(&p.a);
    for i in 0..m {
        a[(i, n + i)] = 1.0;
        a[(m + i, n + m + i)] = -1.0;
    }
    let mut b = DVector::zeros(2 * m);
    b.rows_mut(0, m).copy_from(&p.b);
    b.rows_mut(m, m).copy_from(&p.b);
    MbqpProblem {
        name: format!("{}+slacks", p.name),
        q,
        c,
        a,
        b,
        binary: p.binary.clone(),
        edges: p.edges.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_qkp() -> MbqpProblem {
        MbqpProblem {
            name: "qkp3".into(),
            q: -DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 2.0, 1.0, 3.0, 5.0, 2.0, 5.0, 1.0]),
            c: DVector::zeros(3),
            a: DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]),
            b: DVector::from_element(1, 3.0),
            binary: vec![0, 1, 2],
            edges: vec![],
        }
    }

    #[test]
    fn smallest_biq_model() {
        let p = MbqpProblem {
            name: "one".into(),
            q: DMatrix::from_element(1, 1, 1.0),
            c: DVector::zeros(1),
            a: DMatrix::zeros(0, 1),
            b: DVector::zeros(0),
            binary: vec![0],
            edges: vec![],
        };
        let model = build_dnn(&p).unwrap();
        assert_eq!(model.cost(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(model.binary().len(), 1);
        assert_eq!(model.constraint_count(), 2);
    }

    #[test]
    fn qkp_model_counts_constraints() {
        let model = build_dnn(&tiny_qkp()).unwrap();
        assert_eq!(model.m(), 1);
        assert_eq!(model.constraint_count(), 1 + 3 + 3 + 1);
    }

    #[test]
    fn rejects_negative_rhs_and_asymmetry() {
        let mut p = tiny_qkp();
        p.b[0] = -1.0;
        assert!(matches!(build_dnn(&p), Err(RnnalError::InvalidProblem(_))));
        let mut p = tiny_qkp();
        p.q[(0, 1)] += 1e-3;
        assert!(matches!(build_dnn(&p), Err(RnnalError::InvalidProblem(_))));
    }

    #[test]
    fn binary_lift_satisfies_constraints() {
        let p = tiny_qkp();
        let model = build_dnn(&p).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let mut lifted = DVector::zeros(4);
        lifted[0] = 1.0;
        lifted.rows_mut(1, 3).copy_from(&x);
        let y = &lifted * lifted.transpose();
        let resid = model.constraint_map(&y) - model.lifted_rhs();
        assert!(resid.norm() < 1e-12);
        assert!((model.cost().dot(&y) - p.objective(&x)).abs() < 1e-12);
    }

    #[test]
    fn adjoint_matches_map() {
        let mut p = tiny_qkp();
        p.a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.5, -1.0, 0.0]);
        p.b = DVector::from_vec(vec![3.0, 0.5]);
        p.binary = vec![0, 2];
        let model = build_dnn(&p).unwrap();
        let y = DMatrix::from_fn(4, 4, |i, j| ((i * 3 + j * 3 + i * j) as f64).sin());
        let y = (&y + y.transpose()) * 0.5;
        let dual = AffineDual {
            lambda1: DVector::from_vec(vec![0.3, -1.1]),
            lambda2: DMatrix::from_fn(2, 3, |i, j| (i as f64 - j as f64) * 0.7 + 0.1),
            mu: DVector::from_vec(vec![2.0, -0.4]),
            alpha: 1.7,
        };
        let lhs = model.constraint_adjoint(&dual).dot(&y);
        let map = model.constraint_map(&y);
        let mut flat = Vec::new();
        flat.extend(dual.lambda1.iter());
        flat.extend(dual.lambda2.iter());
        flat.extend(dual.mu.iter());
        flat.push(dual.alpha);
        let rhs = DVector::from_vec(flat).dot(&map);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn slacks_of_unconstrained_instance_is_identity() {
        let p = tiny_qkp().without_linear_constraints();
        assert_eq!(add_slacks(&p), p);
    }
}

//! A small builder for conic programs over real variables with zero,
//! nonnegative and complex Hermitian PSD blocks, solved by Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, I, ONE};

/// Outcome of a conic solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_usable(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

impl From<SolverStatus> for SolveStatus {
    fn from(s: SolverStatus) -> Self {
        match s {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
            SolverStatus::PrimalInfeasible
            | SolverStatus::DualInfeasible
            | SolverStatus::AlmostPrimalInfeasible
            | SolverStatus::AlmostDualInfeasible => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalFailure,
        }
    }
}

/// `constant + Σ coeff · x[var]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(v: usize) -> Self {
        Self { constant: 0.0, terms: vec![(v, 1.0)] }
    }

    pub fn plus(mut self, var: usize, coeff: f64) -> Self {
        self.terms.push((var, coeff));
        self
    }
}

/// `constant + Σ x[var] · coeff` with Hermitian matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianAffine {
    pub constant: ComplexMatrix,
    pub terms: Vec<(usize, ComplexMatrix)>,
}

impl HermitianAffine {
    pub fn new(constant: ComplexMatrix) -> Self {
        Self { constant, terms: Vec::new() }
    }

    pub fn plus(&mut self, var: usize, coeff: ComplexMatrix) {
        self.terms.push((var, coeff));
    }

    pub fn evaluate(&self, x: &[f64]) -> ComplexMatrix {
        let mut m = self.constant.clone();
        for (v, c) in &self.terms {
            if x[*v] != 0.0 {
                m += &c.scale_real(x[*v]);
            }
        }
        m
    }
}

enum Block {
    Zero(Vec<Affine>),
    Nonneg(Vec<Affine>),
    Psd(HermitianAffine),
    Soc(Vec<Affine>),
}

/// Minimize `½ xᵀPx + qᵀx` subject to the added blocks.
#[derive(Default)]
pub struct ConicProgram {
    n_vars: usize,
    objective: Vec<f64>,
    quadratic: Vec<(usize, usize, f64)>,
    blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: u32,
}

/// Solver tolerances for feasibility and gaps.
pub const SOLVER_TOL: f64 = 1e-8;

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` variables and returns the index of the first.
    pub fn add_vars(&mut self, count: usize) -> usize {
        let start = self.n_vars;
        self.n_vars += count;
        self.objective.resize(self.n_vars, 0.0);
        start
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn add_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] += coeff;
    }

    /// Adds `value` to `P[i][j]` and `P[j][i]` (once when `i == j`).
    pub fn add_quadratic(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        self.quadratic.push((r, c, value));
    }

    pub fn equal_zero(&mut self, e: Affine) {
        match self.blocks.last_mut() {
            Some(Block::Zero(rows)) => rows.push(e),
            _ => self.blocks.push(Block::Zero(vec![e])),
        }
    }

    pub fn nonneg(&mut self, e: Affine) {
        match self.blocks.last_mut() {
            Some(Block::Nonneg(rows)) => rows.push(e),
            _ => self.blocks.push(Block::Nonneg(vec![e])),
        }
    }

    /// Requires `‖(e_1, …, e_k)‖₂ ≤ e_0`.
    pub fn second_order(&mut self, es: Vec<Affine>) {
        self.blocks.push(Block::Soc(es));
    }

    /// Requires the Hermitian affine expression to be PSD.
    pub fn hermitian_psd(&mut self, h: HermitianAffine) {
        self.blocks.push(Block::Psd(h));
    }

    pub fn solve(&self) -> Result<Solution> {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let push_affine = |e: &Affine, b: &mut Vec<f64>, rows: &mut Vec<usize>, cols: &mut Vec<usize>, vals: &mut Vec<f64>| {
            let r = b.len();
            b.push(e.constant);
            for &(v, c) in &e.terms {
                rows.push(r);
                cols.push(v);
                vals.push(-c);
            }
        };
        for block in &self.blocks {
            match block {
                Block::Zero(es) => {
                    es.iter().for_each(|e| push_affine(e, &mut b, &mut rows, &mut cols, &mut vals));
                    cones.push(SupportedConeT::ZeroConeT(es.len()));
                }
                Block::Nonneg(es) => {
                    es.iter().for_each(|e| push_affine(e, &mut b, &mut rows, &mut cols, &mut vals));
                    cones.push(SupportedConeT::NonnegativeConeT(es.len()));
                }
                Block::Soc(es) => {
                    es.iter().for_each(|e| push_affine(e, &mut b, &mut rows, &mut cols, &mut vals));
                    cones.push(SupportedConeT::SecondOrderConeT(es.len()));
                }
                Block::Psd(h) => {
                    let start = b.len();
                    let n = h.constant.rows();
                    b.extend(real_svec(&h.constant));
                    for (v, c) in &h.terms {
                        for (k, s) in real_svec(c).into_iter().enumerate() {
                            if s != 0.0 {
                                rows.push(start + k);
                                cols.push(*v);
                                vals.push(-s);
                            }
                        }
                    }
                    cones.push(SupportedConeT::PSDTriangleConeT(2 * n));
                }
            }
        }
        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, self.n_vars, rows, cols, vals);
        let (pi, pj, pv): (Vec<usize>, Vec<usize>, Vec<f64>) = {
            let mut pi = Vec::new();
            let mut pj = Vec::new();
            let mut pv = Vec::new();
            for &(i, j, v) in &self.quadratic {
                pi.push(i);
                pj.push(j);
                pv.push(v);
            }
            (pi, pj, pv)
        };
        let p = CscMatrix::new_from_triplets(self.n_vars, self.n_vars, pi, pj, pv);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_feas(SOLVER_TOL)
            .tol_gap_abs(SOLVER_TOL)
            .tol_gap_rel(SOLVER_TOL)
            .max_iter(400)
            .build()
            .map_err(|e| Error::Solver { status: SolveStatus::NumericalFailure, message: e.to_string() })?;
        let mut solver = DefaultSolver::new(&p, &self.objective, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver { status: SolveStatus::NumericalFailure, message: e.to_string() })?;
        solver.solve();
        let sol = &solver.solution;
        Ok(Solution { x: sol.x.clone(), status: sol.status.into(), objective: sol.obj_val, iterations: sol.iterations })
    }
}

/// Packs `[[Re, −Im], [Im, Re]]` of a Hermitian matrix in the scaled
/// upper-triangular column order of the solver's PSD cone.
fn real_svec(h: &ComplexMatrix) -> Vec<f64> {
    let n = h.rows();
    let real = |r: usize, c: usize| -> f64 {
        let (rb, cb) = (r / n, c / n);
        let z = h[(r % n, c % n)];
        match (rb, cb) {
            (0, 0) | (1, 1) => z.re,
            (1, 0) => z.im,
            _ => -z.im,
        }
    };
    let dim = 2 * n;
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for col in 0..dim {
        for row in 0..=col {
            let v = real(row, col);
            out.push(if row == col { v } else { v * std::f64::consts::SQRT_2 });
        }
    }
    out
}

/// Basis of the real vector space of `n×n` Hermitian matrices: diagonal
/// units, then for each `i < j` the symmetric and antisymmetric pairs.
pub fn hermitian_basis(n: usize) -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut m = ComplexMatrix::zeros(n, n);
        m[(i, i)] = ONE;
        out.push(m);
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut s = ComplexMatrix::zeros(n, n);
            s[(i, j)] = ONE;
            s[(j, i)] = ONE;
            out.push(s);
            let mut a = ComplexMatrix::zeros(n, n);
            a[(i, j)] = -I;
            a[(j, i)] = I;
            out.push(a);
        }
    }
    out
}

/// Rebuilds `Σ x[k] basis[k]`.
pub fn combine(basis: &[ComplexMatrix], x: &[f64]) -> ComplexMatrix {
    let n = basis[0].rows();
    let mut m = ComplexMatrix::zeros(n, n);
    for (b, &v) in basis.iter().zip(x) {
        if v != 0.0 {
            m += &b.scale(Complex64::new(v, 0.0));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_order_distance() {
        // min t s.t. ‖(x − 3, y − 4)‖ ≤ t, x + y = 0
        let mut p = ConicProgram::new();
        let v = p.add_vars(3);
        p.add_objective(v + 2, 1.0);
        p.equal_zero(Affine::var(v).plus(v + 1, 1.0));
        p.second_order(vec![Affine::var(v + 2), Affine::constant(-3.0).plus(v, 1.0), Affine::constant(-4.0).plus(v + 1, 1.0)]);
        let s = p.solve().unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[v + 2] - 7.0 / 2f64.sqrt()).abs() < 1e-7);
        assert!((s.x[v] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn lp_with_equality() {
        // min x + 2y s.t. x + y = 1, x, y ≥ 0
        let mut p = ConicProgram::new();
        let x = p.add_vars(2);
        p.add_objective(x, 1.0);
        p.add_objective(x + 1, 2.0);
        p.equal_zero(Affine::constant(-1.0).plus(x, 1.0).plus(x + 1, 1.0));
        p.nonneg(Affine::var(x));
        p.nonneg(Affine::var(x + 1));
        let s = p.solve().unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-7 && s.x[1].abs() < 1e-7);
    }

    #[test]
    fn min_eigenvalue_by_sdp() {
        // max t s.t. H − tI ⪰ 0 for a complex Hermitian H.
        let h = ComplexMatrix::from_row_major(2, 2, vec![ONE, I, -I, ONE.scale(2.0)]).unwrap();
        let want = h.min_eigenvalue().unwrap();
        let mut p = ConicProgram::new();
        let t = p.add_vars(1);
        p.add_objective(t, -1.0);
        let mut aff = HermitianAffine::new(h);
        aff.plus(t, ComplexMatrix::identity(2).scale_real(-1.0));
        p.hermitian_psd(aff);
        let s = p.solve().unwrap();
        assert!(s.status.is_usable());
        assert!((s.x[0] - want).abs() < 1e-7, "{} vs {want}", s.x[0]);
    }

    #[test]
    fn quadratic_objective() {
        // min (x − 3)² with x ≤ 1
        let mut p = ConicProgram::new();
        let x = p.add_vars(1);
        p.add_quadratic(x, x, 2.0);
        p.add_objective(x, -6.0);
        p.nonneg(Affine::constant(1.0).plus(x, -1.0));
        let s = p.solve().unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut p = ConicProgram::new();
        let x = p.add_vars(1);
        p.add_objective(x, 1.0);
        p.nonneg(Affine::constant(-1.0).plus(x, 1.0));
        p.nonneg(Affine::constant(0.0).plus(x, -1.0));
        assert_eq!(p.solve().unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn hermitian_basis_spans() {
        let basis = hermitian_basis(3);
        assert_eq!(basis.len(), 9);
        for b in &basis {
            assert!(b.is_hermitian(0.0));
        }
    }
}

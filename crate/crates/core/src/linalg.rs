//! Dense complex matrices and the quantum primitives built on them.
//!
//! Storage is row-major. Composite bipartite indices follow the single
//! convention `|a⟩|b⟩ ↦ a·dim_b + b` everywhere in the crate.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Tolerance used for positive-semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-9;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Dense complex matrix in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

/// Local dimensions of a bipartite system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemDims {
    pub dim_a: usize,
    pub dim_b: usize,
}

impl SubsystemDims {
    pub const QUTRITS: SubsystemDims = SubsystemDims { dim_a: 3, dim_b: 3 };

    pub fn new(dim_a: usize, dim_b: usize) -> Self {
        Self { dim_a, dim_b }
    }

    pub fn total(&self) -> usize {
        self.dim_a * self.dim_b
    }
}

/// Which tensor factor an operation acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Party {
    A,
    B,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// The rank-1 operator `|v⟩⟨v|`.
    pub fn outer(v: &[Complex64]) -> Self {
        Self::from_fn(v.len(), v.len(), |r, c| v[r] * v[c].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> Complex64 {
        debug_assert_eq!(self.cols, other.rows);
        debug_assert_eq!(self.rows, other.cols);
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * other[(k, i)];
            }
        }
        acc
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `max|M − M†|`.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// `max|M + M†|`.
    pub fn skew_hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                dev = dev.max((self[(r, c)] + self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    /// Returns `(M + M†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self[(r, c)] * v[c]).sum())
            .collect()
    }

    /// `⟨v|M|v⟩`.
    pub fn expectation(&self, v: &[Complex64]) -> Complex64 {
        let mv = self.mul_vec(v);
        v.iter().zip(mv).map(|(a, b)| a.conj() * b).sum()
    }

    fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Eigendecomposition of a Hermitian matrix. Eigenvalues are returned in
    /// ascending order; column `k` of the second component is the eigenvector
    /// of eigenvalue `k`.
    pub fn hermitian_eigen(&self) -> Result<(Vec<f64>, ComplexMatrix)> {
        let dev = self.hermitian_deviation();
        if dev > HERMITIAN_TOL.max(1e-8 * self.frobenius_norm()) {
            return Err(Error::NotHermitian(dev));
        }
        Ok(self.hermitian_part().eigen_unchecked())
    }

    fn eigen_unchecked(&self) -> (Vec<f64>, ComplexMatrix) {
        let eig = SymmetricEigen::new(self.to_nalgebra());
        let mut order: Vec<usize> = (0..self.rows).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = ComplexMatrix::from_fn(self.rows, self.rows, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }

    /// Eigenvalues of a Hermitian matrix in ascending order.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.hermitian_eigen()?.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.hermitian_eigenvalues()?[0])
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Applies `f` to the spectrum of a Hermitian matrix.
    pub fn hermitian_map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let (vals, vecs) = self.hermitian_eigen()?;
        let n = self.rows;
        let mapped: Vec<f64> = vals.iter().map(|&v| f(v)).collect();
        Ok(Self::from_fn(n, n, |r, c| {
            (0..n).map(|k| vecs[(r, k)] * vecs[(c, k)].conj() * mapped[k]).sum()
        }))
    }

    pub fn determinant(&self) -> Complex64 {
        self.to_nalgebra().determinant()
    }

    /// Rank of a Hermitian positive semidefinite matrix (eigenvalues above `tol`).
    pub fn psd_rank(&self, tol: f64) -> Result<usize> {
        Ok(self.hermitian_eigenvalues()?.iter().filter(|&&v| v > tol).count())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let lhs = self[(r, k)];
                if lhs == ZERO {
                    continue;
                }
                for c in 0..rhs.cols {
                    out.data[r * rhs.cols + c] += lhs * rhs[(k, c)];
                }
            }
        }
        out
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, " ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, " {:+.4}{:+.4}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    ComplexMatrix::from_fn(rows, cols, |r, c| {
        a[(r / b.rows, c / b.cols)] * b[(r % b.rows, c % b.cols)]
    })
}

/// Kronecker product of two vectors.
pub fn kron_vec(u: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    u.iter().flat_map(|&x| v.iter().map(move |&y| x * y)).collect()
}

/// Transposes the selected tensor factor of a bipartite operator.
pub fn partial_transpose(m: &ComplexMatrix, dims: SubsystemDims, which: Party) -> Result<ComplexMatrix> {
    let n = dims.total();
    if m.rows != n || m.cols != n {
        return Err(Error::DimensionMismatch(format!(
            "partial transpose of a {}x{} matrix with dims {}x{}",
            m.rows, m.cols, dims.dim_a, dims.dim_b
        )));
    }
    let db = dims.dim_b;
    Ok(ComplexMatrix::from_fn(n, n, |r, c| {
        let (a, b) = (r / db, r % db);
        let (a2, b2) = (c / db, c % db);
        match which {
            Party::A => m[(a2 * db + b, a * db + b2)],
            Party::B => m[(a * db + b2, a2 * db + b)],
        }
    }))
}

/// Matrix exponential of a skew-Hermitian matrix, computed from the
/// eigendecomposition of the Hermitian matrix `−i·h`.
pub fn unitary_exp(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    let dev = h.skew_hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(Error::NotSkewHermitian(dev));
    }
    let herm = h.scale(-I);
    let (vals, vecs) = herm.hermitian_part().eigen_unchecked();
    let n = h.rows;
    let phases: Vec<Complex64> = vals.iter().map(|&v| Complex64::from_polar(1.0, v)).collect();
    let u = ComplexMatrix::from_fn(n, n, |r, c| {
        (0..n).map(|k| vecs[(r, k)] * phases[k] * vecs[(c, k)].conj()).sum()
    });
    debug_assert!((&(&u.adjoint() * &u) - &ComplexMatrix::identity(n)).frobenius_norm() < 1e-9);
    Ok(u)
}

/// True iff the Hermitian matrix `m` has minimum eigenvalue `≥ −tol`.
pub fn is_psd(m: &ComplexMatrix, tol: f64) -> Result<bool> {
    let dev = m.hermitian_deviation();
    if dev > tol.max(HERMITIAN_TOL) {
        return Err(Error::NotHermitian(dev));
    }
    let (vals, _) = m.hermitian_part().eigen_unchecked();
    Ok(vals[0] >= -tol)
}

/// Checks that `m` is a density matrix within `tol`.
pub fn check_density(m: &ComplexMatrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidState(format!("{}x{} matrix is not square", m.rows, m.cols)));
    }
    let dev = m.hermitian_deviation();
    if dev > tol.max(HERMITIAN_TOL) {
        return Err(Error::InvalidState(format!("not Hermitian (deviation {dev:.3e})")));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(Error::InvalidState(format!("trace {:.6}{:+.6}i differs from 1", tr.re, tr.im)));
    }
    let min = m.hermitian_part().eigen_unchecked().0[0];
    if min < -tol {
        return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
    }
    Ok(())
}

/// Uhlmann fidelity `(tr √(√ρ σ √ρ))²`.
const FIDELITY_CUTOFF: f64 = 1e-13;

pub fn fidelity(rho: &ComplexMatrix, sigma: &ComplexMatrix) -> Result<f64> {
    check_density(rho, PSD_TOL)?;
    check_density(sigma, PSD_TOL)?;
    if rho.rows != sigma.rows {
        return Err(Error::DimensionMismatch(format!("{} vs {}", rho.rows, sigma.rows)));
    }
    // Eigenvalues below the cutoff are rounding noise of rank-deficient inputs.
    let root_clipped = |v: f64| if v > FIDELITY_CUTOFF { v.sqrt() } else { 0.0 };
    let sqrt_rho = rho.hermitian_part().hermitian_map(root_clipped)?;
    let inner = (&(&sqrt_rho * sigma) * &sqrt_rho).hermitian_part();
    let (vals, _) = inner.eigen_unchecked();
    let root: f64 = vals.iter().map(|&v| root_clipped(v)).sum();
    Ok(root * root)
}

/// Inner product `⟨u|v⟩`.
pub fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn normalize(v: &[Complex64]) -> Vec<Complex64> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter().map(|z| z / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn phi_plus() -> ComplexMatrix {
        let s = 1.0 / 3f64.sqrt();
        let mut v = vec![ZERO; 9];
        for k in 0..3 {
            v[k * 3 + k] = c(s, 0.0);
        }
        ComplexMatrix::outer(&v)
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i3 = ComplexMatrix::identity(3);
        assert_eq!(kron(&i3, &i3), ComplexMatrix::identity(9));
    }

    #[test]
    fn kron_of_basis_projectors() {
        let p0 = ComplexMatrix::from_real_diagonal(&[1.0, 0.0, 0.0]);
        let p1 = ComplexMatrix::from_real_diagonal(&[0.0, 1.0, 0.0]);
        let k = kron(&p0, &p1);
        for r in 0..9 {
            for col in 0..9 {
                let expect = if r == 1 && col == 1 { ONE } else { ZERO };
                assert_eq!(k[(r, col)], expect);
            }
        }
    }

    #[test]
    fn partial_transpose_of_product_transposes_one_factor() {
        let a = ComplexMatrix::from_fn(3, 3, |r, c_| c(r as f64, c_ as f64 * 0.5));
        let b = ComplexMatrix::from_fn(3, 3, |r, c_| c((r * 3 + c_) as f64, -(r as f64)));
        let pt = partial_transpose(&kron(&a, &b), SubsystemDims::QUTRITS, Party::B).unwrap();
        assert!(pt.max_abs_diff(&kron(&a, &b.transpose())) < 1e-14);
        let pta = partial_transpose(&kron(&a, &b), SubsystemDims::QUTRITS, Party::A).unwrap();
        assert!(pta.max_abs_diff(&kron(&a.transpose(), &b)) < 1e-14);
    }

    #[test]
    fn partial_transpose_is_involutive() {
        let m = ComplexMatrix::from_fn(9, 9, |r, c_| c((r * 7 + c_ * 3) as f64 % 5.0, (r + c_) as f64 * 0.1));
        let twice = partial_transpose(
            &partial_transpose(&m, SubsystemDims::QUTRITS, Party::B).unwrap(),
            SubsystemDims::QUTRITS,
            Party::B,
        )
        .unwrap();
        assert!(twice.max_abs_diff(&m) <= 1e-14);
    }

    #[test]
    fn partial_transpose_of_maximally_entangled_has_negative_third() {
        let pt = partial_transpose(&phi_plus(), SubsystemDims::QUTRITS, Party::B).unwrap();
        let min = pt.min_eigenvalue().unwrap();
        assert!((min + 1.0 / 3.0).abs() < 1e-12, "min eigenvalue {min}");
        assert!(!is_psd(&pt, 1e-9).unwrap());
    }

    #[test]
    fn partial_transpose_rejects_wrong_dimension() {
        let m = ComplexMatrix::identity(4);
        assert!(matches!(
            partial_transpose(&m, SubsystemDims::QUTRITS, Party::B),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn unitary_exp_of_zero_is_identity() {
        let u = unitary_exp(&ComplexMatrix::zeros(3, 3)).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(3)) < 1e-14);
    }

    #[test]
    fn unitary_exp_of_scalar_phase() {
        let h = ComplexMatrix::identity(3).scale(c(0.0, std::f64::consts::PI));
        let u = unitary_exp(&h).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(3).scale_real(-1.0)) < 1e-12);
    }

    #[test]
    fn unitary_exp_of_first_gell_mann_rotation() {
        let t = std::f64::consts::FRAC_PI_2;
        let mut g1 = ComplexMatrix::zeros(3, 3);
        g1[(0, 1)] = ONE;
        g1[(1, 0)] = ONE;
        let u = unitary_exp(&g1.scale(c(0.0, t))).unwrap();
        let expect = [[c(t.cos(), 0.0), c(0.0, t.sin())], [c(0.0, t.sin()), c(t.cos(), 0.0)]];
        for r in 0..2 {
            for col in 0..2 {
                assert!((u[(r, col)] - expect[r][col]).norm() < 1e-12);
            }
        }
        assert!((u[(2, 2)] - ONE).norm() < 1e-12);
    }

    #[test]
    fn unitary_exp_rejects_hermitian_input() {
        assert!(matches!(unitary_exp(&ComplexMatrix::identity(3)), Err(Error::NotSkewHermitian(_))));
    }

    #[test]
    fn fidelity_cases() {
        let mut v0 = vec![ZERO; 9];
        v0[0] = ONE;
        let mut v1 = vec![ZERO; 9];
        v1[4] = ONE;
        let r0 = ComplexMatrix::outer(&v0);
        let r1 = ComplexMatrix::outer(&v1);
        assert!((fidelity(&r0, &r0).unwrap() - 1.0).abs() < 1e-10);
        assert!(fidelity(&r0, &r1).unwrap().abs() < 1e-10);
        let mixed = ComplexMatrix::identity(9).scale_real(1.0 / 9.0);
        assert!((fidelity(&phi_plus(), &mixed).unwrap() - 1.0 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn fidelity_rejects_non_states() {
        let bad = ComplexMatrix::identity(9);
        let good = ComplexMatrix::identity(9).scale_real(1.0 / 9.0);
        assert!(matches!(fidelity(&bad, &good), Err(Error::InvalidState(_))));
    }

    #[test]
    fn psd_checks() {
        assert!(is_psd(&ComplexMatrix::identity(9), 0.0).unwrap());
        assert!(!is_psd(&ComplexMatrix::identity(9).scale_real(-1.0), 1e-9).unwrap());
        let mut nh = ComplexMatrix::identity(3);
        nh[(0, 1)] = ONE;
        assert!(matches!(is_psd(&nh, 1e-9), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn eigen_ordering_and_vectors() {
        let m = ComplexMatrix::from_real_diagonal(&[3.0, -1.0, 2.0]);
        let (vals, vecs) = m.hermitian_eigen().unwrap();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] + 1.0).abs() < 1e-12 && (vals[2] - 3.0).abs() < 1e-12);
        assert!((vecs[(1, 0)].norm() - 1.0).abs() < 1e-12);
    }
}

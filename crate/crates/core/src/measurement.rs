//! Local projective measurements and Born probabilities.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, kron, kron_vec, ComplexMatrix, ONE, ZERO};
use crate::state::DensityMatrix;

/// Shape of a table indexed by `(x, y, a, b)` with all indices 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub settings: usize,
    pub outcomes: usize,
}

impl Layout {
    pub const QUTRIT: Layout = Layout { settings: 3, outcomes: 3 };

    /// Number of `(x, y, a, b)` cells.
    pub fn cells(&self) -> usize {
        self.settings * self.settings * self.outcomes * self.outcomes
    }

    pub fn index(&self, x: usize, y: usize, a: usize, b: usize) -> usize {
        ((x * self.settings + y) * self.outcomes + a) * self.outcomes + b
    }

    pub fn unindex(&self, i: usize) -> (usize, usize, usize, usize) {
        let b = i % self.outcomes;
        let a = (i / self.outcomes) % self.outcomes;
        let y = (i / (self.outcomes * self.outcomes)) % self.settings;
        let x = i / (self.outcomes * self.outcomes * self.settings);
        (x, y, a, b)
    }

    pub fn check(&self, x: usize, y: usize, a: usize, b: usize) -> Result<()> {
        if x >= self.settings || y >= self.settings || a >= self.outcomes || b >= self.outcomes {
            return Err(Error::IndexOutOfRange(format!(
                "(x={x}, y={y}, a={a}, b={b}) with {} settings and {} outcomes",
                self.settings, self.outcomes
            )));
        }
        Ok(())
    }

    /// Iterates `(x, y, a, b)` in storage order.
    pub fn cells_iter(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.cells()).map(move |i| self.unindex(i))
    }
}

/// Rank-1 projective measurements for both parties, stored as unit vectors
/// per `(setting, outcome)` together with their projectors.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementModel {
    alice: Vec<Vec<Vec<Complex64>>>,
    bob: Vec<Vec<Vec<Complex64>>>,
    alice_proj: Vec<Vec<ComplexMatrix>>,
    bob_proj: Vec<Vec<ComplexMatrix>>,
}

const BASIS_TOL: f64 = 1e-10;

impl MeasurementModel {
    /// Builds a model from basis vectors, checking that each setting is an
    /// orthonormal basis.
    pub fn new(alice: Vec<Vec<Vec<Complex64>>>, bob: Vec<Vec<Vec<Complex64>>>) -> Result<Self> {
        for (party, sets) in [("alice", &alice), ("bob", &bob)] {
            check_bases(party, sets)?;
        }
        if alice.len() != bob.len() || alice[0].len() != bob[0].len() {
            return Err(Error::InvalidMeasurement("parties differ in settings or outcomes".into()));
        }
        let proj = |sets: &Vec<Vec<Vec<Complex64>>>| -> Vec<Vec<ComplexMatrix>> {
            sets.iter().map(|s| s.iter().map(|v| ComplexMatrix::outer(v)).collect()).collect()
        };
        Ok(Self { alice_proj: proj(&alice), bob_proj: proj(&bob), alice, bob })
    }

    /// Same bases on both sides.
    pub fn symmetric(bases: Vec<Vec<Vec<Complex64>>>) -> Result<Self> {
        Self::new(bases.clone(), bases)
    }

    /// Computational, Fourier and Gell-Mann bases on both sides, in the
    /// outcome and ket convention under which the bundled instruction tables
    /// act on the bundled target state.
    ///
    /// Fourier outcomes: `(|0⟩+ω|1⟩+ω̄|2⟩)/√3`, `(|0⟩+ω̄|1⟩+ω|2⟩)/√3`,
    /// `(|0⟩+|1⟩+|2⟩)/√3` with `ω = e^{2πi/3}`.
    /// Gell-Mann outcomes: `(|1⟩−|0⟩)/√2`, `|2⟩`, `(|1⟩+|0⟩)/√2`.
    pub fn standard() -> Self {
        let w = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
        let s2 = 1.0 / 2f64.sqrt();
        let bases = vec![
            computational(),
            fourier(w),
            vec![real(&[-s2, s2, 0.0]), real(&[0.0, 0.0, 1.0]), real(&[s2, s2, 0.0])],
        ];
        Self::symmetric(bases).expect("orthonormal bases")
    }

    /// The three bases as typeset: Fourier outcome 1 carries the phase
    /// `e^{−2πi/3}` on `|1⟩`, Gell-Mann is `{(|1⟩−|2⟩)/√2, |0⟩, (|1⟩+|2⟩)/√2}`.
    /// Does not reproduce the bundled tables' error rates; kept for comparison.
    pub fn printed() -> Self {
        let w = Complex64::from_polar(1.0, -2.0 * PI / 3.0);
        let s2 = 1.0 / 2f64.sqrt();
        let bases = vec![
            computational(),
            fourier(w),
            vec![real(&[0.0, s2, -s2]), real(&[1.0, 0.0, 0.0]), real(&[0.0, s2, s2])],
        ];
        Self::symmetric(bases).expect("orthonormal bases")
    }

    /// Relabels outcomes of every setting on both sides: new outcome `k` is
    /// old outcome `perm[x][k]`.
    pub fn relabeled(&self, perm: &[Vec<usize>]) -> Result<Self> {
        let apply = |sets: &Vec<Vec<Vec<Complex64>>>| -> Result<Vec<Vec<Vec<Complex64>>>> {
            if perm.len() != sets.len() {
                return Err(Error::DimensionMismatch(format!("{} permutations for {} settings", perm.len(), sets.len())));
            }
            sets.iter()
                .zip(perm)
                .map(|(s, p)| {
                    let mut seen = vec![false; s.len()];
                    p.iter()
                        .map(|&k| {
                            if k >= s.len() || std::mem::replace(&mut seen[k], true) {
                                return Err(Error::InvalidMeasurement(format!("{p:?} is not a permutation")));
                            }
                            Ok(s[k].clone())
                        })
                        .collect()
                })
                .collect()
        };
        Self::new(apply(&self.alice)?, apply(&self.bob)?)
    }

    pub fn layout(&self) -> Layout {
        Layout { settings: self.alice.len(), outcomes: self.alice[0].len() }
    }

    pub fn local_dim(&self) -> usize {
        self.alice[0][0].len()
    }

    pub fn alice_vector(&self, x: usize, a: usize) -> &[Complex64] {
        &self.alice[x][a]
    }

    pub fn bob_vector(&self, y: usize, b: usize) -> &[Complex64] {
        &self.bob[y][b]
    }

    pub fn alice(&self, x: usize, a: usize) -> &ComplexMatrix {
        &self.alice_proj[x][a]
    }

    pub fn bob(&self, y: usize, b: usize) -> &ComplexMatrix {
        &self.bob_proj[y][b]
    }

    /// `A_x^a ⊗ B_y^b`.
    pub fn product(&self, x: usize, a: usize, y: usize, b: usize) -> ComplexMatrix {
        kron(self.alice(x, a), self.bob(y, b))
    }

    /// Product vector `u_x^a ⊗ v_y^b`.
    pub fn product_vector(&self, x: usize, a: usize, y: usize, b: usize) -> Vec<Complex64> {
        kron_vec(&self.alice[x][a], &self.bob[y][b])
    }

    /// All product projectors in [`Layout`] order.
    pub fn products(&self) -> Vec<ComplexMatrix> {
        self.layout().cells_iter().map(|(x, y, a, b)| self.product(x, a, y, b)).collect()
    }

    /// Born probability of every `(x, y, a, b)` cell in [`Layout`] order.
    pub fn born_table(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.layout()
            .cells_iter()
            .map(|(x, y, a, b)| clamp_probability(rho.matrix().expectation(&self.product_vector(x, a, y, b)).re))
            .collect()
    }
}

fn check_bases(party: &str, sets: &[Vec<Vec<Complex64>>]) -> Result<()> {
    let outcomes = sets.first().map(Vec::len).unwrap_or(0);
    if outcomes == 0 {
        return Err(Error::InvalidMeasurement(format!("{party}: no settings")));
    }
    for (x, set) in sets.iter().enumerate() {
        if set.len() != outcomes || set.iter().any(|v| v.len() != outcomes) {
            return Err(Error::InvalidMeasurement(format!("{party} setting {x}: expected {outcomes} vectors of length {outcomes}")));
        }
        for i in 0..outcomes {
            for j in 0..outcomes {
                let want = if i == j { 1.0 } else { 0.0 };
                if (linalg::inner(&set[i], &set[j]) - Complex64::new(want, 0.0)).norm() > BASIS_TOL {
                    return Err(Error::InvalidMeasurement(format!("{party} setting {x}: vectors {i} and {j} not orthonormal")));
                }
            }
        }
    }
    Ok(())
}

fn real(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&r| Complex64::new(r, 0.0)).collect()
}

fn computational() -> Vec<Vec<Complex64>> {
    (0..3).map(|k| (0..3).map(|j| if j == k { ONE } else { ZERO }).collect()).collect()
}

fn fourier(w: Complex64) -> Vec<Vec<Complex64>> {
    let s3 = 1.0 / 3f64.sqrt();
    vec![
        vec![ONE * s3, w * s3, w.conj() * s3],
        vec![ONE * s3, w.conj() * s3, w * s3],
        vec![ONE * s3; 3],
    ]
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

/// `tr(ρ (A_x^a ⊗ B_y^b))`, clamped to `[0, 1]`.
pub fn born_probability(rho: &DensityMatrix, mm: &MeasurementModel, x: usize, a: usize, y: usize, b: usize) -> Result<f64> {
    mm.layout().check(x, y, a, b)?;
    if rho.dims().total() != mm.local_dim() * mm.local_dim() {
        return Err(Error::DimensionMismatch("state and measurement dimensions differ".into()));
    }
    Ok(clamp_probability(rho.matrix().expectation(&mm.product_vector(x, a, y, b)).re))
}

/// The default measurement model.
pub fn standard_bases() -> MeasurementModel {
    MeasurementModel::standard()
}

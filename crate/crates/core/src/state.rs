//! The preparable qutrit-qutrit state family and density matrices.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{self, check_density, unitary_exp, ComplexMatrix, SubsystemDims, I, ONE, ZERO};

/// Tolerance applied when reading states from files.
pub const STATE_FILE_TOL: f64 = 1e-6;

/// Parameters of the preparable family: the type-I error reparametrization
/// `e1`, the Schmidt angles `phi`, `theta` and the nine generator
/// coefficients of Alice's local unitary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub e1: f64,
    pub phi: f64,
    pub theta: f64,
    pub lambda_a: [f64; 9],
}

impl StateParams {
    pub const DIM: usize = 12;

    /// Type-I error probability `(tanh(e1) + 1) / 2`.
    pub fn p1(&self) -> f64 {
        (self.e1.tanh() + 1.0) / 2.0
    }

    /// Inverse of [`StateParams::p1`].
    pub fn e1_for_p1(p1: f64) -> f64 {
        (2.0 * p1 - 1.0).atanh()
    }

    /// Clamps `phi` into `[0, 2π)` and `theta` into `[0, π]`.
    pub fn canonical(&self) -> Self {
        Self {
            e1: self.e1,
            phi: self.phi.clamp(0.0, 2.0 * PI - 1e-12),
            theta: self.theta.clamp(0.0, PI),
            lambda_a: self.lambda_a,
        }
    }

    /// Flattens into `(e1, phi, theta, λ1..λ9)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.e1, self.phi, self.theta];
        v.extend_from_slice(&self.lambda_a);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != Self::DIM {
            return Err(Error::DimensionMismatch(format!("{} parameters, expected 12", v.len())));
        }
        let mut lambda_a = [0.0; 9];
        lambda_a.copy_from_slice(&v[3..]);
        Ok(Self { e1: v[0], phi: v[1], theta: v[2], lambda_a })
    }
}

/// A density matrix on a bipartite system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
    dims: SubsystemDims,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity at `tol`.
    pub fn with_tolerance(mat: ComplexMatrix, dims: SubsystemDims, tol: f64) -> Result<Self> {
        if mat.rows() != dims.total() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for dims {}x{}",
                mat.rows(),
                mat.cols(),
                dims.dim_a,
                dims.dim_b
            )));
        }
        check_density(&mat, tol)?;
        Ok(Self { mat: mat.hermitian_part(), dims })
    }

    pub fn new(mat: ComplexMatrix, dims: SubsystemDims) -> Result<Self> {
        Self::with_tolerance(mat, dims, linalg::PSD_TOL)
    }

    /// `|v⟩⟨v|` for the normalized `v`.
    pub fn pure(v: &[Complex64], dims: SubsystemDims) -> Result<Self> {
        if v.len() != dims.total() {
            return Err(Error::DimensionMismatch(format!("vector of length {} for dims {}x{}", v.len(), dims.dim_a, dims.dim_b)));
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        Ok(Self { mat: ComplexMatrix::outer(&linalg::normalize(v)), dims })
    }

    pub fn maximally_mixed(dims: SubsystemDims) -> Self {
        let n = dims.total();
        Self { mat: ComplexMatrix::identity(n).scale_real(1.0 / n as f64), dims }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn dims(&self) -> SubsystemDims {
        self.dims
    }

    /// `Re tr(ρ·op)`.
    pub fn expectation(&self, op: &ComplexMatrix) -> f64 {
        self.mat.trace_product(op).re
    }

    pub fn purity(&self) -> f64 {
        self.mat.trace_product(&self.mat).re
    }

    pub fn fidelity(&self, other: &DensityMatrix) -> Result<f64> {
        linalg::fidelity(&self.mat, &other.mat)
    }

    /// Parses the JSON state format (`vector` for pure states, `matrix` for
    /// mixed ones), rejecting inputs outside [`STATE_FILE_TOL`].
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| Error::parse("<root>", "expected a JSON object"))?;
        let dims = match obj.get("dims") {
            None => SubsystemDims::QUTRITS,
            Some(d) => {
                let arr = d.as_array().filter(|a| a.len() == 2).ok_or_else(|| Error::parse("dims", "expected [dim_a, dim_b]"))?;
                let get = |i: usize| {
                    arr[i].as_u64().filter(|&v| v > 0).ok_or_else(|| Error::parse(format!("dims[{i}]"), "expected a positive integer"))
                };
                SubsystemDims::new(get(0)? as usize, get(1)? as usize)
            }
        };
        match (obj.get("vector"), obj.get("matrix")) {
            (Some(v), None) => {
                let arr = v.as_array().ok_or_else(|| Error::parse("vector", "expected an array"))?;
                let amps = arr
                    .iter()
                    .enumerate()
                    .map(|(i, z)| parse_complex(z, &format!("vector[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                if amps.len() != dims.total() {
                    return Err(Error::parse("vector", format!("{} entries, expected {}", amps.len(), dims.total())));
                }
                let norm2: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
                if (norm2 - 1.0).abs() > STATE_FILE_TOL {
                    return Err(Error::parse("vector", format!("squared norm {norm2:.8} is not 1")));
                }
                Self::pure(&amps, dims)
            }
            (None, Some(m)) => {
                let rows = m.as_array().ok_or_else(|| Error::parse("matrix", "expected an array of rows"))?;
                let n = dims.total();
                if rows.len() != n {
                    return Err(Error::parse("matrix", format!("{} rows, expected {n}", rows.len())));
                }
                let mut data = Vec::with_capacity(n * n);
                for (r, row) in rows.iter().enumerate() {
                    let row = row.as_array().ok_or_else(|| Error::parse(format!("matrix[{r}]"), "expected an array"))?;
                    if row.len() != n {
                        return Err(Error::parse(format!("matrix[{r}]"), format!("{} entries, expected {n}", row.len())));
                    }
                    for (c, z) in row.iter().enumerate() {
                        data.push(parse_complex(z, &format!("matrix[{r}][{c}]"))?);
                    }
                }
                let mat = ComplexMatrix::from_row_major(n, n, data)?;
                Self::with_tolerance(mat, dims, STATE_FILE_TOL).map_err(|e| Error::parse("matrix", e.to_string()))
            }
            (Some(_), Some(_)) => Err(Error::parse("vector", "give either `vector` or `matrix`, not both")),
            (None, None) => Err(Error::parse("vector", "missing `vector` or `matrix`")),
        }
    }

    /// Serializes as the `matrix` form of the state format.
    pub fn to_json_value(&self) -> Value {
        let n = self.dims.total();
        let rows: Vec<Value> = (0..n)
            .map(|r| Value::Array((0..n).map(|c| complex_json(self.mat[(r, c)])).collect()))
            .collect();
        json!({ "dims": [self.dims.dim_a, self.dims.dim_b], "matrix": rows })
    }
}

pub(crate) fn complex_json(z: Complex64) -> Value {
    json!({ "re": z.re, "im": z.im })
}

/// Accepts `{"re": .., "im": ..}` or a plain real number.
fn parse_complex(v: &Value, field: &str) -> Result<Complex64> {
    if let Some(re) = v.as_f64() {
        return Ok(Complex64::new(re, 0.0));
    }
    let obj = v.as_object().ok_or_else(|| Error::parse(field, "expected a number or {\"re\":..,\"im\":..}"))?;
    let part = |k: &str| {
        obj.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::parse(format!("{field}.{k}"), "expected a number"))
    };
    Ok(Complex64::new(part("re")?, part("im")?))
}

/// `sin(θ/2)cos(φ/4)|00⟩ + sin(θ/2)sin(φ/4)|11⟩ + cos(θ/2)|22⟩`.
pub fn psi_from_angles(theta: f64, phi: f64) -> Vec<Complex64> {
    let s = (theta / 2.0).sin();
    let mut v = vec![ZERO; 9];
    v[0] = Complex64::new(s * (phi / 4.0).cos(), 0.0);
    v[4] = Complex64::new(s * (phi / 4.0).sin(), 0.0);
    v[8] = Complex64::new((theta / 2.0).cos(), 0.0);
    v
}

/// The eight Gell-Mann matrices in standard order.
pub fn gell_mann() -> [ComplexMatrix; 8] {
    let mut g: [ComplexMatrix; 8] = std::array::from_fn(|_| ComplexMatrix::zeros(3, 3));
    let mut sym = |k: usize, i: usize, j: usize| {
        g[k][(i, j)] = ONE;
        g[k][(j, i)] = ONE;
    };
    sym(0, 0, 1);
    sym(3, 0, 2);
    sym(5, 1, 2);
    let mut anti = |k: usize, i: usize, j: usize| {
        g[k][(i, j)] = -I;
        g[k][(j, i)] = I;
    };
    anti(1, 0, 1);
    anti(4, 0, 2);
    anti(6, 1, 2);
    g[2] = ComplexMatrix::from_real_diagonal(&[1.0, -1.0, 0.0]);
    let r3 = 1.0 / 3f64.sqrt();
    g[7] = ComplexMatrix::from_real_diagonal(&[r3, r3, -2.0 * r3]);
    g
}

/// Skew-Hermitian generators `T_j = i·G_j` (j = 1..8) and `T_9 = i·I`.
pub fn generators() -> [ComplexMatrix; 9] {
    let gm = gell_mann();
    std::array::from_fn(|j| if j < 8 { gm[j].scale(I) } else { ComplexMatrix::identity(3).scale(I) })
}

/// Alice's local unitary `exp(Σ λ_j T_j)`.
pub fn local_unitary(lambda_a: &[f64; 9]) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(3, 3);
    for (t, &l) in generators().iter().zip(lambda_a) {
        h += &t.scale_real(l);
    }
    unitary_exp(&h).expect("real combination of skew-Hermitian generators")
}

/// State vector `(U_A ⊗ I)|ψ(θ, φ)⟩` of the preparable family.
pub fn prepared_vector(p: &StateParams) -> Vec<Complex64> {
    let u = local_unitary(&p.lambda_a);
    let psi = psi_from_angles(p.theta, p.phi);
    let full = linalg::kron(&u, &ComplexMatrix::identity(3));
    full.mul_vec(&psi)
}

pub fn prepare_state(p: &StateParams) -> DensityMatrix {
    DensityMatrix::pure(&prepared_vector(p), SubsystemDims::QUTRITS).expect("unit vector")
}

/// Amplitudes of the optimized target state as printed (4 decimals), in
/// `|ab⟩` order. The printed vector is not exactly normalized.
pub const OPTIMIZED_STATE_AMPLITUDES: [(f64, f64); 9] = [
    (-0.2707, -0.2859),
    (0.2435, 0.2818),
    (-0.1624, 0.1675),
    (0.0932, 0.1845),
    (-0.1873, -0.1474),
    (-0.2944, 0.2817),
    (0.3284, -0.2914),
    (0.3043, -0.3131),
    (-0.0182, 0.0503),
];

pub fn optimized_state_vector() -> Vec<Complex64> {
    let raw: Vec<Complex64> = OPTIMIZED_STATE_AMPLITUDES.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
    linalg::normalize(&raw)
}

/// The optimized target state, renormalized.
pub fn optimized_state() -> DensityMatrix {
    DensityMatrix::pure(&optimized_state_vector(), SubsystemDims::QUTRITS).expect("nonzero vector")
}

/// Recovers family parameters of a pure state in the preparable family by
/// Schmidt decomposition with Bob's computational basis as Schmidt basis.
/// Returns the parameters and the residual `‖ρ(params) − ρ‖_F`.
pub fn params_from_state(v: &[Complex64], p1: f64) -> Result<(StateParams, f64)> {
    if v.len() != 9 {
        return Err(Error::DimensionMismatch(format!("vector of length {}", v.len())));
    }
    let v = linalg::normalize(v);
    // Column b of the coefficient matrix is U_A[:, b] · c_b.
    let coeff = |a: usize, b: usize| v[a * 3 + b];
    let weights: Vec<f64> = (0..3).map(|b| (0..3).map(|a| coeff(a, b).norm_sqr()).sum::<f64>().sqrt()).collect();
    let theta = 2.0 * weights[2].clamp(0.0, 1.0).acos();
    let phi = 4.0 * weights[1].atan2(weights[0]);
    let mut u = ComplexMatrix::zeros(3, 3);
    let mut filled = [false; 3];
    for b in 0..3 {
        if weights[b] > 1e-9 {
            for a in 0..3 {
                u[(a, b)] = coeff(a, b) / weights[b];
            }
            filled[b] = true;
        }
    }
    complete_unitary(&mut u, &filled);
    // U = exp(iH), H = Σ λ_j G_j + λ_9 I.
    let (vals, vecs) = unitary_eigen(&u);
    let h = ComplexMatrix::from_fn(3, 3, |r, c| {
        (0..3).map(|k| vecs[(r, k)] * vecs[(c, k)].conj() * vals[k].arg()).sum()
    });
    let gm = gell_mann();
    let mut lambda_a = [0.0; 9];
    for j in 0..8 {
        lambda_a[j] = h.trace_product(&gm[j]).re / 2.0;
    }
    lambda_a[8] = h.trace().re / 3.0;
    let params = StateParams { e1: StateParams::e1_for_p1(p1), phi, theta, lambda_a };
    let rebuilt = prepare_state(&params);
    let resid = (rebuilt.matrix() - &ComplexMatrix::outer(&v)).frobenius_norm();
    Ok((params, resid))
}

/// Fills the unset columns of `u` with an orthonormal completion.
fn complete_unitary(u: &mut ComplexMatrix, filled: &[bool; 3]) {
    for b in 0..3 {
        if filled[b] {
            continue;
        }
        for e in 0..3 {
            let mut cand: Vec<Complex64> = (0..3).map(|a| if a == e { ONE } else { ZERO }).collect();
            for other in 0..3 {
                if other == b || (!filled[other] && other > b) {
                    continue;
                }
                let col = u.column(other);
                let ov = linalg::inner(&col, &cand);
                for a in 0..3 {
                    cand[a] -= col[a] * ov;
                }
            }
            let norm = cand.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for a in 0..3 {
                    u[(a, b)] = cand[a] / norm;
                }
                break;
            }
        }
    }
}

/// Eigen-decomposition of a unitary through its Hermitian and anti-Hermitian
/// parts, which commute.
fn unitary_eigen(u: &ComplexMatrix) -> (Vec<Complex64>, ComplexMatrix) {
    // A generic real combination of the commuting parts separates the spectrum.
    let herm = u.hermitian_part();
    let anti = (u - &u.adjoint()).scale(Complex64::new(0.0, -0.5));
    let mix = &herm + &anti.scale_real(0.618_033_988_7);
    let (_, vecs) = mix.hermitian_eigen().expect("Hermitian by construction");
    let vals = (0..3).map(|k| linalg::inner(&vecs.column(k), &u.mul_vec(&vecs.column(k)))).collect();
    (vals, vecs)
}

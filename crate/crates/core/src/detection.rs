//! Minimal type-II error under a type-I constraint.
//!
//! Separable states are relaxed to PPT states, so the witness
//! `p1·I − M_Y` must be decomposable: `P + Q^{T_B}` with `P, Q ⪰ 0`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::conic::{combine, hermitian_basis, Affine, ConicProgram, HermitianAffine, SolveStatus};
use crate::error::{Error, Result};
use crate::instructions::{povm_from_table, Factors, InstructionSet, Scenario};
use crate::linalg::{self, partial_transpose, ComplexMatrix, Party, SubsystemDims};
use crate::measurement::{Layout, MeasurementModel};
use crate::state::{complex_json, DensityMatrix};

/// Which approximation of the separable set a bound uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// PPT relaxation; the error rate is a lower bound.
    Outer,
    /// Finite sample of product states; the error rate is optimistic.
    Inner,
}

impl Bound {
    pub fn label(&self) -> &'static str {
        match self {
            Bound::Outer => "outer",
            Bound::Inner => "inner",
        }
    }
}

/// `p1·I − M_Y = P + Q^{T_B}`.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessCertificate {
    pub p: ComplexMatrix,
    pub q: ComplexMatrix,
}

impl WitnessCertificate {
    /// `max |P + Q^{T_B} − w|`.
    pub fn reconstruction_error(&self, w: &ComplexMatrix) -> f64 {
        let qt = partial_transpose(&self.q, SubsystemDims::QUTRITS, Party::B).expect("9x9 block");
        (&self.p + &qt).max_abs_diff(w)
    }

    /// Projects both blocks onto the PSD cone. Interior-point iterates sit
    /// up to the feasibility tolerance outside the cone; the clipped blocks
    /// still reconstruct `w` to that order.
    pub fn rounded(p: &ComplexMatrix, q: &ComplexMatrix) -> Result<Self> {
        let clip = |m: &ComplexMatrix| m.hermitian_part().hermitian_map(|v| v.max(0.0));
        Ok(Self { p: clip(p)?, q: clip(q)? })
    }

    /// Smallest eigenvalue over both blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        let p = self.p.min_eigenvalue().expect("Hermitian block");
        let q = self.q.min_eigenvalue().expect("Hermitian block");
        p.min(q)
    }
}

#[derive(Clone, Debug)]
pub struct DetectionResult {
    pub p1: f64,
    pub p2: f64,
    pub bound: Bound,
    pub instructions: InstructionSet,
    pub m_n: ComplexMatrix,
    pub witness_cert: Option<WitnessCertificate>,
    pub status: SolveStatus,
}

impl DetectionResult {
    pub fn scenario(&self) -> Scenario {
        self.instructions.scenario()
    }

    /// `p1·I − M_Y`.
    pub fn witness(&self) -> ComplexMatrix {
        let n = self.m_n.rows();
        &ComplexMatrix::identity(n).scale_real(self.p1 - 1.0) + &self.m_n
    }

    pub fn to_json_value(&self) -> Value {
        let cert = self.witness_cert.as_ref().map(|c| json!({ "p": matrix_json(&c.p), "q": matrix_json(&c.q) }));
        json!({
            "p1": self.p1,
            "p2": self.p2,
            "scenario": self.scenario().label(),
            "bound": self.bound.label(),
            "status": self.status,
            "instructions": self.instructions.to_json_value(),
            "m_n": matrix_json(&self.m_n),
            "witness_cert": cert,
        })
    }
}

pub(crate) fn matrix_json(m: &ComplexMatrix) -> Value {
    Value::Array((0..m.rows()).map(|r| Value::Array((0..m.cols()).map(|c| complex_json(m[(r, c)])).collect())).collect())
}

/// Variable offsets of a scenario polytope inside a [`ConicProgram`].
struct PolytopeVars {
    layout: Layout,
    scenario: Scenario,
    n: usize,
    factors: usize,
    px: usize,
}

/// Adds the decision table and its bounding setting distribution:
/// LO `0 ≤ n ≤ m(x,y)`, `Σ m = 1`; one-way `0 ≤ n ≤ s(x,y|a)`,
/// `Σ_y s(x,y|a) = r(x)`, `Σ r = 1`, `s ≥ 0`.
fn add_polytope(prog: &mut ConicProgram, layout: Layout, scenario: Scenario) -> PolytopeVars {
    let (ns, no) = (layout.settings, layout.outcomes);
    let n = prog.add_vars(layout.cells());
    match scenario {
        Scenario::Lo => {
            let m = prog.add_vars(ns * ns);
            let mut total = Affine::constant(-1.0);
            for k in 0..ns * ns {
                total = total.plus(m + k, 1.0);
            }
            prog.equal_zero(total);
            for (i, (x, y, _, _)) in layout.cells_iter().enumerate() {
                prog.nonneg(Affine::var(n + i));
                prog.nonneg(Affine::var(m + x * ns + y).plus(n + i, -1.0));
            }
            PolytopeVars { layout, scenario, n, factors: m, px: 0 }
        }
        Scenario::OneWayLocc => {
            let s = prog.add_vars(ns * ns * no);
            let r = prog.add_vars(ns);
            let mut total = Affine::constant(-1.0);
            for x in 0..ns {
                total = total.plus(r + x, 1.0);
                for a in 0..no {
                    let mut row = Affine::default().plus(r + x, -1.0);
                    for y in 0..ns {
                        row = row.plus(s + (x * ns + y) * no + a, 1.0);
                    }
                    prog.equal_zero(row);
                }
            }
            prog.equal_zero(total);
            for k in 0..ns * ns * no {
                prog.nonneg(Affine::var(s + k));
            }
            for (i, (x, y, a, _)) in layout.cells_iter().enumerate() {
                prog.nonneg(Affine::var(n + i));
                prog.nonneg(Affine::var(s + (x * ns + y) * no + a).plus(n + i, -1.0));
            }
            PolytopeVars { layout, scenario, n, factors: s, px: r }
        }
    }
}

impl PolytopeVars {
    fn extract(&self, x: &[f64]) -> InstructionSet {
        let (ns, no) = (self.layout.settings, self.layout.outcomes);
        let clip = |v: f64| v.clamp(0.0, 1.0);
        let n_table = (0..self.layout.cells()).map(|i| clip(x[self.n + i])).collect();
        let factors = match self.scenario {
            Scenario::Lo => Factors::Lo { joint: (0..ns * ns).map(|k| clip(x[self.factors + k])).collect() },
            Scenario::OneWayLocc => Factors::OneWayLocc {
                px: (0..ns).map(|k| clip(x[self.px + k])).collect(),
                s: (0..ns * ns * no).map(|k| clip(x[self.factors + k])).collect(),
            },
        };
        InstructionSet::new(self.layout, n_table, factors)
    }
}

fn check_p1(p1: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p1) || p1.is_nan() {
        return Err(Error::Precondition(format!("p1 = {p1} outside [0, 1]")));
    }
    Ok(())
}

fn check_dims(rho: &DensityMatrix, mm: &MeasurementModel) -> Result<()> {
    let d = mm.local_dim();
    if rho.dims().total() != d * d {
        return Err(Error::DimensionMismatch(format!("state of dimension {} for local dimension {d}", rho.dims().total())));
    }
    Ok(())
}

fn usable(status: SolveStatus, what: &str) -> Result<()> {
    match status {
        SolveStatus::Optimal | SolveStatus::NearOptimal => Ok(()),
        SolveStatus::Infeasible => Err(Error::Solver {
            status,
            message: format!("{what} reported infeasible; the always-reject protocol is feasible, so this is an internal error"),
        }),
        SolveStatus::NumericalFailure => Err(Error::Solver { status, message: format!("{what} did not converge") }),
    }
}

/// Minimizes `tr(M_N ρ)` over the scenario polytope subject to
/// `p1·I − M_Y` being a decomposable witness.
pub fn solve_detection(rho: &DensityMatrix, mm: &MeasurementModel, p1: f64, scenario: Scenario) -> Result<DetectionResult> {
    check_p1(p1)?;
    check_dims(rho, mm)?;
    let layout = mm.layout();
    let dims = rho.dims();
    let d = dims.total();
    let products = mm.products();
    let basis = hermitian_basis(d);

    let mut prog = ConicProgram::new();
    let vars = add_polytope(&mut prog, layout, scenario);
    let q = prog.add_vars(basis.len());
    for (i, proj) in products.iter().enumerate() {
        prog.add_objective(vars.n + i, rho.expectation(proj));
    }
    let mut q_block = HermitianAffine::new(ComplexMatrix::zeros(d, d));
    let mut p_block = HermitianAffine::new(ComplexMatrix::identity(d).scale_real(p1 - 1.0));
    for (i, proj) in products.iter().enumerate() {
        p_block.plus(vars.n + i, proj.clone());
    }
    for (k, b) in basis.iter().enumerate() {
        q_block.plus(q + k, b.clone());
        p_block.plus(q + k, partial_transpose(b, dims, Party::B)?.scale_real(-1.0));
    }
    prog.hermitian_psd(q_block.clone());
    prog.hermitian_psd(p_block.clone());

    let sol = prog.solve()?;
    usable(sol.status, "detection program")?;
    let instructions = vars.extract(&sol.x);
    let m_n = povm_from_table(instructions.n_table(), mm);
    let q_mat = combine(&basis, &sol.x[q..q + basis.len()]);
    let w = &ComplexMatrix::identity(d).scale_real(p1 - 1.0) + &m_n;
    let p_mat = &w - &partial_transpose(&q_mat, dims, Party::B)?;
    Ok(DetectionResult {
        p1,
        p2: rho.expectation(&m_n),
        bound: Bound::Outer,
        instructions,
        m_n,
        witness_cert: Some(WitnessCertificate::rounded(&p_mat, &q_mat)?),
        status: sol.status,
    })
}

/// Tests `w ∈ {P + Q^{T_B} : P, Q ⪰ 0}` by maximizing the common margin
/// `t` with `P − tI ⪰ 0`, `Q − tI ⪰ 0`. Members have `t ≥ −tol`.
pub fn dual_cone_member(w: &ComplexMatrix, tol: f64) -> Result<(bool, Option<WitnessCertificate>)> {
    let dims = SubsystemDims::QUTRITS;
    let d = dims.total();
    if w.rows() != d || !w.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} operator, expected {d}x{d}", w.rows(), w.cols())));
    }
    let dev = w.hermitian_deviation();
    if dev > linalg::HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    let basis = hermitian_basis(d);
    let mut prog = ConicProgram::new();
    let t = prog.add_vars(1);
    let q = prog.add_vars(basis.len());
    prog.add_objective(t, -1.0);
    let eye = ComplexMatrix::identity(d);
    let mut q_block = HermitianAffine::new(ComplexMatrix::zeros(d, d));
    let mut p_block = HermitianAffine::new(w.hermitian_part());
    q_block.plus(t, eye.scale_real(-1.0));
    p_block.plus(t, eye.scale_real(-1.0));
    for (k, b) in basis.iter().enumerate() {
        q_block.plus(q + k, b.clone());
        p_block.plus(q + k, partial_transpose(b, dims, Party::B)?.scale_real(-1.0));
    }
    prog.hermitian_psd(q_block);
    prog.hermitian_psd(p_block);
    let sol = prog.solve()?;
    usable(sol.status, "membership program")?;
    let margin = sol.x[t];
    if margin < -tol {
        return Ok((false, None));
    }
    let q_mat = combine(&basis, &sol.x[q..q + basis.len()]);
    let p_mat = (w - &partial_transpose(&q_mat, dims, Party::B)?).hermitian_part();
    Ok((true, Some(WitnessCertificate { p: p_mat, q: q_mat })))
}

/// Haar-random product states `|u⟩⟨u| ⊗ |v⟩⟨v|` on two qutrits.
pub fn sample_product_states(count: usize, seed: u64) -> Result<Vec<DensityMatrix>> {
    if count == 0 {
        return Err(Error::Precondition("at least one product state is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut haar = || -> Vec<num_complex::Complex64> {
        let v: Vec<num_complex::Complex64> = (0..3)
            .map(|_| num_complex::Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        linalg::normalize(&v)
    };
    Ok((0..count)
        .map(|_| {
            let u = haar();
            let v = haar();
            DensityMatrix::pure(&linalg::kron_vec(&u, &v), SubsystemDims::QUTRITS).expect("unit vector")
        })
        .collect())
}

/// Per-sample Born weights `tr(σ_i (A_x^a ⊗ B_y^b))` shared across a sweep.
pub struct SampleConstraints {
    weights: Vec<Vec<f64>>,
}

impl SampleConstraints {
    pub fn new(mm: &MeasurementModel, samples: &[DensityMatrix]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Precondition("the inner bound needs at least one product state".into()));
        }
        let products = mm.products();
        let weights = samples.par_iter().map(|s| products.iter().map(|p| s.expectation(p)).collect()).collect();
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Minimizes `tr(M_N ρ)` over the scenario polytope subject to
/// `tr(M_Y σ_i) ≤ p1` for each sampled state only.
pub fn solve_inner_lp(
    rho: &DensityMatrix,
    mm: &MeasurementModel,
    p1: f64,
    product_states: &[DensityMatrix],
    scenario: Scenario,
) -> Result<DetectionResult> {
    let constraints = SampleConstraints::new(mm, product_states)?;
    solve_inner_lp_with(rho, mm, p1, &constraints, scenario)
}

pub fn solve_inner_lp_with(
    rho: &DensityMatrix,
    mm: &MeasurementModel,
    p1: f64,
    constraints: &SampleConstraints,
    scenario: Scenario,
) -> Result<DetectionResult> {
    check_p1(p1)?;
    check_dims(rho, mm)?;
    let products = mm.products();
    let mut prog = ConicProgram::new();
    let vars = add_polytope(&mut prog, mm.layout(), scenario);
    for (i, proj) in products.iter().enumerate() {
        prog.add_objective(vars.n + i, rho.expectation(proj));
    }
    for w in &constraints.weights {
        // p1 − tr(M_Y σ) = p1 − 1 + Σ n_k w_k ≥ 0
        let mut e = Affine::constant(p1 - 1.0);
        for (k, &wk) in w.iter().enumerate() {
            if wk != 0.0 {
                e = e.plus(vars.n + k, wk);
            }
        }
        prog.nonneg(e);
    }
    let sol = prog.solve()?;
    usable(sol.status, "inner linear program")?;
    let instructions = vars.extract(&sol.x);
    let m_n = povm_from_table(instructions.n_table(), mm);
    Ok(DetectionResult {
        p1,
        p2: rho.expectation(&m_n),
        bound: Bound::Inner,
        instructions,
        m_n,
        witness_cert: None,
        status: sol.status,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p1: f64,
    /// `NaN` when the solve failed.
    pub p2: f64,
    pub status: SolveStatus,
}

/// Error trade-off along a grid of type-I error values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub scenario: Scenario,
    pub bound: Bound,
    pub points: Vec<CurvePoint>,
}

impl TradeoffCurve {
    pub fn p1_grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p1).collect()
    }

    pub fn p2_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p2).collect()
    }

    /// Indices `i` with `p2[i + 1] > p2[i] + tol` among solved points.
    pub fn monotonicity_violations(&self, tol: f64) -> Vec<usize> {
        self.points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].status.is_usable() && w[1].status.is_usable() && w[1].p2 > w[0].p2 + tol)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn failed_points(&self) -> Vec<usize> {
        self.points.iter().enumerate().filter(|(_, p)| !p.status.is_usable()).map(|(i, _)| i).collect()
    }
}

/// `n` evenly spaced values from 0 to 1 inclusive.
pub fn p1_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|p| !(0.0..=1.0).contains(p)) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("p1 grid must be sorted and within [0, 1]".into()));
    }
    Ok(())
}

fn point_from(p1: f64, r: Result<DetectionResult>) -> Result<CurvePoint> {
    match r {
        Ok(r) => Ok(CurvePoint { p1, p2: r.p2, status: r.status }),
        Err(Error::Solver { status, .. }) => Ok(CurvePoint { p1, p2: f64::NAN, status }),
        Err(e) => Err(e),
    }
}

/// Outer-bound curve; grid points are solved in parallel and returned in
/// grid order. Failed points are kept with their status.
pub fn tradeoff_curve(rho: &DensityMatrix, mm: &MeasurementModel, scenario: Scenario, grid: &[f64]) -> Result<TradeoffCurve> {
    check_grid(grid)?;
    let points = grid
        .par_iter()
        .map(|&p1| point_from(p1, solve_detection(rho, mm, p1, scenario)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TradeoffCurve { scenario, bound: Bound::Outer, points })
}

/// Inner-bound curve from sampled product states.
pub fn inner_curve(
    rho: &DensityMatrix,
    mm: &MeasurementModel,
    scenario: Scenario,
    grid: &[f64],
    product_states: &[DensityMatrix],
) -> Result<TradeoffCurve> {
    check_grid(grid)?;
    let constraints = SampleConstraints::new(mm, product_states)?;
    let points = grid
        .par_iter()
        .map(|&p1| point_from(p1, solve_inner_lp_with(rho, mm, p1, &constraints, scenario)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TradeoffCurve { scenario, bound: Bound::Inner, points })
}

/// Writes curves as CSV with header `p1,p2,scenario,bound`.
pub fn write_curves_csv<W: Write>(curves: &[TradeoffCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p1", "p2", "scenario", "bound"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([p.p1.to_string(), p.p2.to_string(), c.scenario.label().to_string(), c.bound.label().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

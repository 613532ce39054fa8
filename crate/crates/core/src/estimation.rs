//! Least-squares state reconstruction from product-measurement frequencies.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::conic::{combine, hermitian_basis, Affine, ConicProgram, HermitianAffine};
use crate::error::{Error, Result};
use crate::instructions::InstructionSet;
use crate::linalg::{ComplexMatrix, SubsystemDims};
use crate::measurement::{Layout, MeasurementModel};
use crate::state::DensityMatrix;

const VALUE_TOL: f64 = 1e-6;

/// Frequency of outcome `(a, b)` under settings `(x, y)`; 0-based indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCell {
    pub a: usize,
    pub b: usize,
    pub x: usize,
    pub y: usize,
    /// `None` when no round with settings `(x, y)` was observed.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationData {
    layout: Layout,
    cells: Vec<ExpectationCell>,
}

impl ExpectationData {
    pub fn new(layout: Layout, cells: Vec<ExpectationCell>) -> Result<Self> {
        for c in &cells {
            layout.check(c.x, c.y, c.a, c.b)?;
            if let Some(v) = c.value {
                if !(-VALUE_TOL..=1.0 + VALUE_TOL).contains(&v) || v.is_nan() {
                    return Err(Error::parse("value", format!("{v} outside [0, 1] at (a={}, b={}, x={}, y={})", c.a + 1, c.b + 1, c.x + 1, c.y + 1)));
                }
            }
        }
        Ok(Self { layout, cells })
    }

    /// Exact Born probabilities of `rho` on `support` cells `(x, y, a, b)`.
    pub fn from_state(rho: &DensityMatrix, mm: &MeasurementModel, support: &[(usize, usize, usize, usize)]) -> Self {
        let cells = support
            .iter()
            .map(|&(x, y, a, b)| ExpectationCell { a, b, x, y, value: Some(rho.expectation(&mm.product(x, a, y, b)).clamp(0.0, 1.0)) })
            .collect();
        Self { layout: mm.layout(), cells }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn cells(&self) -> &[ExpectationCell] {
        &self.cells
    }

    pub fn present(&self) -> impl Iterator<Item = (&ExpectationCell, f64)> {
        self.cells.iter().filter_map(|c| c.value.map(|v| (c, v)))
    }

    pub fn missing(&self) -> Vec<&ExpectationCell> {
        self.cells.iter().filter(|c| c.value.is_none()).collect()
    }

    /// Reads CSV `a,b,x,y,value` with 1-based indices; an empty value or
    /// `NA` marks a missing cell.
    pub fn read_csv<R: Read>(input: R, layout: Layout) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let expected = ["a", "b", "x", "y", "value"];
        if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::parse("header", format!("expected `a,b,x,y,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut cells = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let idx = |k: usize, name: &str| -> Result<usize> {
                let v: usize = rec[k].parse().map_err(|_| Error::parse(format!("row {}.{name}", line + 1), format!("`{}` is not an index", &rec[k])))?;
                v.checked_sub(1).ok_or_else(|| Error::parse(format!("row {}.{name}", line + 1), "indices are 1-based"))
            };
            let value = match &rec[4] {
                "" | "NA" | "na" => None,
                s => Some(s.parse::<f64>().map_err(|_| Error::parse(format!("row {}.value", line + 1), format!("`{s}` is not a number")))?),
            };
            cells.push(ExpectationCell { a: idx(0, "a")?, b: idx(1, "b")?, x: idx(2, "x")?, y: idx(3, "y")?, value });
        }
        if cells.is_empty() {
            return Err(Error::parse("value", "no rows"));
        }
        Self::new(layout, cells)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a", "b", "x", "y", "value"])?;
        for c in &self.cells {
            let v = c.value.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
            w.write_record([(c.a + 1).to_string(), (c.b + 1).to_string(), (c.x + 1).to_string(), (c.y + 1).to_string(), v])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cells `(x, y, a, b)` where the decision table is nonzero.
pub fn support_of(instr: &InstructionSet) -> Vec<(usize, usize, usize, usize)> {
    instr.layout().cells_iter().zip(instr.n_table()).filter(|(_, &n)| n != 0.0).map(|(c, _)| c).collect()
}

/// Minimizes `Σ (E − tr(ρ A_x^a ⊗ B_y^b))²` over density matrices and
/// returns the minimizer with its sum of squared errors.
pub fn estimate_state(data: &ExpectationData, mm: &MeasurementModel) -> Result<(DensityMatrix, f64)> {
    if data.layout != mm.layout() {
        return Err(Error::DimensionMismatch("expectation data and measurement model differ in shape".into()));
    }
    let observed: Vec<(ComplexMatrix, f64)> = data.present().map(|(c, v)| (mm.product(c.x, c.a, c.y, c.b), v)).collect();
    if observed.is_empty() {
        return Err(Error::Precondition("no observed expectation values".into()));
    }
    let d = mm.local_dim() * mm.local_dim();
    let dims = SubsystemDims::new(mm.local_dim(), mm.local_dim());
    let basis = hermitian_basis(d);
    let k = basis.len();
    // Row i of G holds tr(B_k Π_i).
    let g: Vec<Vec<f64>> = observed.iter().map(|(proj, _)| basis.iter().map(|b| b.trace_product(proj).re).collect()).collect();

    // Minimizing the norm rather than its square keeps the solver tolerance
    // on the scale of the fitted probabilities.
    let mut prog = ConicProgram::new();
    let r = prog.add_vars(k);
    let t = prog.add_vars(1);
    prog.add_objective(t, 1.0);
    let mut soc = vec![Affine::var(t)];
    for (row, (_, e)) in g.iter().zip(&observed) {
        let mut res = Affine::constant(-e);
        for (i, &gi) in row.iter().enumerate() {
            if gi != 0.0 {
                res = res.plus(r + i, gi);
            }
        }
        soc.push(res);
    }
    prog.second_order(soc);
    let mut trace = Affine::constant(-1.0);
    for (i, b) in basis.iter().enumerate() {
        let t = b.trace().re;
        if t != 0.0 {
            trace = trace.plus(r + i, t);
        }
    }
    prog.equal_zero(trace);
    let mut psd = HermitianAffine::new(ComplexMatrix::zeros(d, d));
    for (i, b) in basis.iter().enumerate() {
        psd.plus(r + i, b.clone());
    }
    prog.hermitian_psd(psd);
    let sol = prog.solve()?;
    if !sol.status.is_usable() {
        return Err(Error::Solver { status: sol.status, message: "estimation program did not converge".into() });
    }
    let rho = project_to_density(&combine(&basis, &sol.x[r..r + k]), dims)?;
    let residual = observed.iter().map(|(proj, e)| (e - rho.expectation(proj)).powi(2)).sum();
    Ok((rho, residual))
}

/// Clips negative eigenvalues and restores unit trace.
fn project_to_density(m: &ComplexMatrix, dims: SubsystemDims) -> Result<DensityMatrix> {
    let clipped = m.hermitian_part().hermitian_map(|v| v.max(0.0))?;
    let tr = clipped.trace().re;
    if tr <= 0.0 {
        return Err(Error::InvalidState("estimate has no positive part".into()));
    }
    DensityMatrix::new(clipped.scale_real(1.0 / tr), dims)
}

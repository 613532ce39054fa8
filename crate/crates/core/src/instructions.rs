//! Instruction sets for the two detection scenarios, their polytope
//! constraints, POVM assembly and the merged table used by shuffled runs.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::measurement::{Layout, MeasurementModel};

/// Tolerance for tables read from four-decimal printouts.
pub const PRINTED_TABLE_TOL: f64 = 1e-3;
/// Tolerance for tables produced by this crate.
pub const EXACT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "LO")]
    Lo,
    #[serde(rename = "1LOCC")]
    OneWayLocc,
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::Lo => "LO",
            Scenario::OneWayLocc => "1LOCC",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lo" => Ok(Scenario::Lo),
            "1locc" | "onewaylocc" | "locc" => Ok(Scenario::OneWayLocc),
            _ => Err(Error::parse("scenario", format!("unknown scenario `{s}`"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Setting distributions bounding the decision table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Factors {
    /// Joint `P(x, y)`, indexed `x * settings + y`.
    Lo { joint: Vec<f64> },
    /// `P(x)` and `s(x, y | a) = P(x) P(y | a, x)`, the latter indexed
    /// `(x * settings + y) * outcomes + a`.
    OneWayLocc { px: Vec<f64>, s: Vec<f64> },
}

/// A decision table `P(x, y, N | a, b)` with the setting distributions that
/// bound it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionSet {
    layout: Layout,
    n_table: Vec<f64>,
    factors: Factors,
}

/// One failed polytope constraint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// 1-based indices of the offending cell, in the order named by `constraint`.
    pub indices: Vec<usize>,
    pub value: f64,
    pub limit: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Constraint {
    /// Entry outside `[0, 1]`; indices `(x, y, a, b)` or the factor's own.
    Range,
    /// Setting distribution does not sum to one.
    Normalization,
    /// `n(x, y, a, b) > P(x, y)`; indices `(x, y, a, b)`.
    LoUpperBound,
    /// `n(x, y, a, b) > s(x, y | a)`; indices `(x, y, a, b)`.
    LoccUpperBound,
    /// `Σ_y s(x, y | a) ≠ P(x)`; indices `(x, a)`.
    NoSignaling,
    /// Table length does not match the layout.
    Shape,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx = self.indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        let what = match self.constraint {
            Constraint::Range => "entry outside [0,1]",
            Constraint::Normalization => "distribution does not sum to 1",
            Constraint::LoUpperBound => "n(x,y,a,b) exceeds P(x,y)",
            Constraint::LoccUpperBound => "n(x,y,a,b) exceeds s(x,y|a)",
            Constraint::NoSignaling => "sum_y s(x,y|a) differs from P(x)",
            Constraint::Shape => "table length does not match layout",
        };
        write!(f, "{what} at ({idx}): value {:.6}, limit {:.6}", self.value, self.limit)
    }
}

fn one_based(ix: &[usize]) -> Vec<usize> {
    ix.iter().map(|i| i + 1).collect()
}

impl InstructionSet {
    /// Builds a set without validating; see [`InstructionSet::validate`].
    pub fn new(layout: Layout, n_table: Vec<f64>, factors: Factors) -> Self {
        Self { layout, n_table, factors }
    }

    /// Builds a set and rejects it if validation at `tol` fails.
    pub fn validated(layout: Layout, n_table: Vec<f64>, factors: Factors, tol: f64) -> Result<Self> {
        let set = Self::new(layout, n_table, factors);
        let v = set.validate(tol);
        if v.is_empty() {
            Ok(set)
        } else {
            Err(Error::InvalidInstructions(v))
        }
    }

    pub fn scenario(&self) -> Scenario {
        match self.factors {
            Factors::Lo { .. } => Scenario::Lo,
            Factors::OneWayLocc { .. } => Scenario::OneWayLocc,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_table(&self) -> &[f64] {
        &self.n_table
    }

    pub fn factors(&self) -> &Factors {
        &self.factors
    }

    /// `P(x, y, N | a, b)` with 0-based indices.
    pub fn n(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.n_table[self.layout.index(x, y, a, b)]
    }

    /// Upper bound on `n(x, y, a, b)` imposed by the setting distribution.
    pub fn bound(&self, x: usize, y: usize, a: usize, _b: usize) -> f64 {
        let s = self.layout.settings;
        match &self.factors {
            Factors::Lo { joint } => joint[x * s + y],
            Factors::OneWayLocc { s: table, .. } => table[(x * s + y) * self.layout.outcomes + a],
        }
    }

    /// Probability that Alice measures setting `x`.
    pub fn px(&self, x: usize) -> f64 {
        let s = self.layout.settings;
        match &self.factors {
            Factors::Lo { joint } => joint[x * s..(x + 1) * s].iter().sum(),
            Factors::OneWayLocc { px, .. } => px[x],
        }
    }

    /// Lists every violated constraint at tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Vec<Violation> {
        let l = self.layout;
        let (ns, no) = (l.settings, l.outcomes);
        let mut out = Vec::new();
        let mut shape = |len: usize, want: usize| {
            if len != want {
                out.push(Violation { constraint: Constraint::Shape, indices: vec![], value: len as f64, limit: want as f64 });
            }
        };
        shape(self.n_table.len(), l.cells());
        match &self.factors {
            Factors::Lo { joint } => shape(joint.len(), ns * ns),
            Factors::OneWayLocc { px, s } => {
                shape(px.len(), ns);
                shape(s.len(), ns * ns * no);
            }
        }
        if !out.is_empty() {
            return out;
        }
        let range = |v: f64| v < -tol || v > 1.0 + tol;
        for (i, &v) in self.n_table.iter().enumerate() {
            let (x, y, a, b) = l.unindex(i);
            if range(v) {
                out.push(Violation { constraint: Constraint::Range, indices: one_based(&[x, y, a, b]), value: v, limit: if v < 0.0 { 0.0 } else { 1.0 } });
            }
        }
        match &self.factors {
            Factors::Lo { joint } => {
                for (i, &v) in joint.iter().enumerate() {
                    if range(v) {
                        out.push(Violation { constraint: Constraint::Range, indices: one_based(&[i / ns, i % ns]), value: v, limit: 1.0 });
                    }
                }
                let total: f64 = joint.iter().sum();
                if (total - 1.0).abs() > tol {
                    out.push(Violation { constraint: Constraint::Normalization, indices: vec![], value: total, limit: 1.0 });
                }
                for (i, &v) in self.n_table.iter().enumerate() {
                    let (x, y, a, b) = l.unindex(i);
                    let m = joint[x * ns + y];
                    if v > m + tol {
                        out.push(Violation { constraint: Constraint::LoUpperBound, indices: one_based(&[x, y, a, b]), value: v, limit: m });
                    }
                }
            }
            Factors::OneWayLocc { px, s } => {
                for (x, &v) in px.iter().enumerate() {
                    if range(v) {
                        out.push(Violation { constraint: Constraint::Range, indices: vec![x + 1], value: v, limit: 1.0 });
                    }
                }
                for (i, &v) in s.iter().enumerate() {
                    if range(v) {
                        let (xy, a) = (i / no, i % no);
                        out.push(Violation { constraint: Constraint::Range, indices: one_based(&[xy / ns, xy % ns, a]), value: v, limit: 1.0 });
                    }
                }
                let total: f64 = px.iter().sum();
                if (total - 1.0).abs() > tol {
                    out.push(Violation { constraint: Constraint::Normalization, indices: vec![], value: total, limit: 1.0 });
                }
                for x in 0..ns {
                    for a in 0..no {
                        let row: f64 = (0..ns).map(|y| s[(x * ns + y) * no + a]).sum();
                        if (row - px[x]).abs() > tol {
                            out.push(Violation { constraint: Constraint::NoSignaling, indices: vec![x + 1, a + 1], value: row, limit: px[x] });
                        }
                    }
                }
                for (i, &v) in self.n_table.iter().enumerate() {
                    let (x, y, a, b) = l.unindex(i);
                    let bound = s[(x * ns + y) * no + a];
                    if v > bound + tol {
                        out.push(Violation { constraint: Constraint::LoccUpperBound, indices: one_based(&[x, y, a, b]), value: v, limit: bound });
                    }
                }
            }
        }
        out
    }

    /// Effective POVM `(M_N, M_Y)`; the set must validate at 1e-6.
    pub fn assemble_povm(&self, mm: &MeasurementModel) -> Result<(ComplexMatrix, ComplexMatrix)> {
        self.assemble_povm_with_tol(mm, EXACT_TOL)
    }

    /// As [`InstructionSet::assemble_povm`] with a caller-chosen validation
    /// tolerance, e.g. [`PRINTED_TABLE_TOL`] for rounded tables.
    pub fn assemble_povm_with_tol(&self, mm: &MeasurementModel, tol: f64) -> Result<(ComplexMatrix, ComplexMatrix)> {
        if mm.layout() != self.layout {
            return Err(Error::DimensionMismatch(format!("instructions {:?} vs measurements {:?}", self.layout, mm.layout())));
        }
        let v = self.validate(tol);
        if !v.is_empty() {
            return Err(Error::InvalidInstructions(v));
        }
        let m_n = povm_from_table(&self.n_table, mm);
        let m_y = &ComplexMatrix::identity(m_n.rows()) - &m_n;
        Ok((m_n, m_y))
    }

    /// Embeds an LO set into the one-way polytope with `s(x, y | a) = P(x, y)`.
    pub fn to_one_way(&self) -> InstructionSet {
        match &self.factors {
            Factors::OneWayLocc { .. } => self.clone(),
            Factors::Lo { joint } => {
                let (ns, no) = (self.layout.settings, self.layout.outcomes);
                let px = (0..ns).map(|x| joint[x * ns..(x + 1) * ns].iter().sum()).collect();
                let s = (0..ns * ns * no).map(|i| joint[i / no]).collect();
                InstructionSet::new(self.layout, self.n_table.clone(), Factors::OneWayLocc { px, s })
            }
        }
    }

    /// Splits an LO set into `P(x, y)` and `P(N | x, y, a, b)`; cells with
    /// `P(x, y) ≤ tol` get decision probability 0.
    pub fn factorize_lo(&self, tol: f64) -> Result<LoFactors> {
        let Factors::Lo { joint } = &self.factors else {
            return Err(Error::Precondition("factorize_lo needs an LO instruction set".into()));
        };
        let ns = self.layout.settings;
        let decision = self
            .layout
            .cells_iter()
            .zip(&self.n_table)
            .map(|((x, y, _, _), &n)| ratio(n, joint[x * ns + y], tol))
            .collect();
        Ok(LoFactors { p_xy: joint.clone(), decision })
    }

    /// Splits a one-way set into `P(x)`, `P(y | a, x)` and `P(N | x, y, a, b)`.
    /// Where `P(x) ≤ tol` the conditional is uniform; where `s ≤ tol` the
    /// decision probability is 0.
    pub fn factorize_locc(&self, tol: f64) -> Result<LoccFactors> {
        let Factors::OneWayLocc { px, s } = &self.factors else {
            return Err(Error::Precondition("factorize_locc needs a one-way instruction set".into()));
        };
        let (ns, no) = (self.layout.settings, self.layout.outcomes);
        let mut py_given_ax = vec![0.0; ns * no * ns];
        for x in 0..ns {
            for a in 0..no {
                for y in 0..ns {
                    py_given_ax[(x * no + a) * ns + y] =
                        if px[x] > tol { s[(x * ns + y) * no + a] / px[x] } else { 1.0 / ns as f64 };
                }
            }
        }
        let decision = self
            .layout
            .cells_iter()
            .zip(&self.n_table)
            .map(|((x, y, a, _), &n)| ratio(n, s[(x * ns + y) * no + a], tol))
            .collect();
        Ok(LoccFactors { px: px.clone(), py_given_ax, decision })
    }

    /// Reads the JSON instruction format (1-based indices).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| Error::parse("<root>", "expected a JSON object"))?;
        let scenario = obj
            .get("scenario")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse("scenario", "expected \"LO\" or \"1LOCC\""))
            .and_then(Scenario::parse)?;
        let count = |k: &str| -> Result<usize> {
            match obj.get(k) {
                None => Ok(3),
                Some(v) => v.as_u64().filter(|&n| n > 0).map(|n| n as usize).ok_or_else(|| Error::parse(k, "expected a positive integer")),
            }
        };
        let layout = Layout { settings: count("settings")?, outcomes: count("outcomes")? };
        let (ns, no) = (layout.settings, layout.outcomes);
        let mut n_table = vec![0.0; layout.cells()];
        for (i, row) in rows(obj.get("n_table"), "n_table")?.into_iter().enumerate() {
            let field = format!("n_table[{i}]");
            let (ix, v) = indexed_row(row, &[ns, ns, no, no], &field)?;
            n_table[layout.index(ix[0], ix[1], ix[2], ix[3])] = v;
        }
        let factors = obj.get("factors").and_then(Value::as_object).ok_or_else(|| Error::parse("factors", "expected an object"))?;
        let factors = match scenario {
            Scenario::Lo => {
                let mut joint = vec![0.0; ns * ns];
                for (i, row) in rows(factors.get("p_xy"), "factors.p_xy")?.into_iter().enumerate() {
                    let (ix, v) = indexed_row(row, &[ns, ns], &format!("factors.p_xy[{i}]"))?;
                    joint[ix[0] * ns + ix[1]] = v;
                }
                Factors::Lo { joint }
            }
            Scenario::OneWayLocc => {
                let mut px = vec![0.0; ns];
                for (i, row) in rows(factors.get("p_x"), "factors.p_x")?.into_iter().enumerate() {
                    let (ix, v) = indexed_row(row, &[ns], &format!("factors.p_x[{i}]"))?;
                    px[ix[0]] = v;
                }
                let mut s = vec![0.0; ns * ns * no];
                for (i, row) in rows(factors.get("p_y_given_ax"), "factors.p_y_given_ax")?.into_iter().enumerate() {
                    let (ix, v) = indexed_row(row, &[no, ns, ns], &format!("factors.p_y_given_ax[{i}]"))?;
                    let (a, x, y) = (ix[0], ix[1], ix[2]);
                    s[(x * ns + y) * no + a] = px[x] * v;
                }
                Factors::OneWayLocc { px, s }
            }
        };
        Ok(Self::new(layout, n_table, factors))
    }

    /// Writes the JSON instruction format; zero cells are omitted.
    pub fn to_json_value(&self) -> Value {
        let l = self.layout;
        let (ns, no) = (l.settings, l.outcomes);
        let n_table: Vec<Value> = l
            .cells_iter()
            .zip(&self.n_table)
            .filter(|(_, &v)| v != 0.0)
            .map(|((x, y, a, b), &v)| json!([x + 1, y + 1, a + 1, b + 1, v]))
            .collect();
        let factors = match &self.factors {
            Factors::Lo { joint } => {
                let p_xy: Vec<Value> = (0..ns * ns).map(|i| json!([i / ns + 1, i % ns + 1, joint[i]])).collect();
                json!({ "p_xy": p_xy })
            }
            Factors::OneWayLocc { px, s } => {
                let p_x: Vec<Value> = px.iter().enumerate().map(|(x, v)| json!([x + 1, v])).collect();
                let mut cond = Vec::new();
                for a in 0..no {
                    for x in 0..ns {
                        for y in 0..ns {
                            let v = if px[x] > 0.0 { s[(x * ns + y) * no + a] / px[x] } else { 1.0 / ns as f64 };
                            cond.push(json!([a + 1, x + 1, y + 1, v]));
                        }
                    }
                }
                json!({ "p_x": p_x, "p_y_given_ax": cond })
            }
        };
        json!({
            "scenario": self.scenario().label(),
            "settings": ns,
            "outcomes": no,
            "n_table": n_table,
            "factors": factors,
        })
    }
}

fn ratio(num: f64, den: f64, tol: f64) -> f64 {
    if den > tol {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn rows<'a>(v: Option<&'a Value>, field: &str) -> Result<Vec<&'a Vec<Value>>> {
    let arr = v.and_then(Value::as_array).ok_or_else(|| Error::parse(field, "expected an array of rows"))?;
    arr.iter()
        .enumerate()
        .map(|(i, r)| r.as_array().ok_or_else(|| Error::parse(format!("{field}[{i}]"), "expected an array")))
        .collect()
}

/// Parses `[i1, .., ik, value]` with 1-based indices bounded by `limits`.
fn indexed_row(row: &[Value], limits: &[usize], field: &str) -> Result<(Vec<usize>, f64)> {
    if row.len() != limits.len() + 1 {
        return Err(Error::parse(field, format!("expected {} indices and a value", limits.len())));
    }
    let mut ix = Vec::with_capacity(limits.len());
    for (k, (&lim, v)) in limits.iter().zip(row).enumerate() {
        let i = v.as_u64().ok_or_else(|| Error::parse(format!("{field}[{k}]"), "expected a 1-based index"))? as usize;
        if i == 0 || i > lim {
            return Err(Error::parse(format!("{field}[{k}]"), format!("index {i} outside 1..={lim}")));
        }
        ix.push(i - 1);
    }
    let value = row[limits.len()].as_f64().ok_or_else(|| Error::parse(format!("{field}[{}]", limits.len()), "expected a number"))?;
    Ok((ix, value))
}

/// `Σ n(x, y, a, b) A_x^a ⊗ B_y^b` over all cells.
pub fn povm_from_table(n_table: &[f64], mm: &MeasurementModel) -> ComplexMatrix {
    let d = mm.local_dim() * mm.local_dim();
    let mut m = ComplexMatrix::zeros(d, d);
    for ((x, y, a, b), &n) in mm.layout().cells_iter().zip(n_table) {
        if n != 0.0 {
            m += &mm.product(x, a, y, b).scale_real(n);
        }
    }
    m.hermitian_part()
}

/// `P(x, y)` and the decision table of an LO protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoFactors {
    /// Indexed `x * settings + y`.
    pub p_xy: Vec<f64>,
    /// `P(N | x, y, a, b)` in [`Layout`] order.
    pub decision: Vec<f64>,
}

/// `P(x)`, `P(y | a, x)` and the decision table of a one-way protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoccFactors {
    pub px: Vec<f64>,
    /// Indexed `(x * outcomes + a) * settings + y`.
    pub py_given_ax: Vec<f64>,
    /// `P(N | x, y, a, b)` in [`Layout`] order.
    pub decision: Vec<f64>,
}

fn check_distribution(name: &str, v: &[f64], tol: f64) -> Result<()> {
    if let Some(bad) = v.iter().find(|p| !(-tol..=1.0 + tol).contains(*p)) {
        return Err(Error::NotNormalized(format!("{name} has entry {bad}")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::NotNormalized(format!("{name} sums to {total}")));
    }
    Ok(())
}

fn check_decision(layout: Layout, decision: &[f64], tol: f64) -> Result<()> {
    if decision.len() != layout.cells() {
        return Err(Error::DimensionMismatch(format!("decision table has {} cells, expected {}", decision.len(), layout.cells())));
    }
    if let Some(bad) = decision.iter().find(|p| !(-tol..=1.0 + tol).contains(*p)) {
        return Err(Error::NotNormalized(format!("decision probability {bad} outside [0,1]")));
    }
    Ok(())
}

/// LO set with `n = P(N | x, y, a, b) P(x, y)`.
pub fn lo_from_factors(layout: Layout, p_xy: &[f64], decision: &[f64]) -> Result<InstructionSet> {
    lo_from_factors_with_tol(layout, p_xy, decision, EXACT_TOL)
}

pub fn lo_from_factors_with_tol(layout: Layout, p_xy: &[f64], decision: &[f64], tol: f64) -> Result<InstructionSet> {
    let ns = layout.settings;
    if p_xy.len() != ns * ns {
        return Err(Error::DimensionMismatch(format!("P(x,y) has {} entries, expected {}", p_xy.len(), ns * ns)));
    }
    check_distribution("P(x,y)", p_xy, tol)?;
    check_decision(layout, decision, tol)?;
    let n_table = layout.cells_iter().zip(decision).map(|((x, y, _, _), &d)| d * p_xy[x * ns + y]).collect();
    InstructionSet::validated(layout, n_table, Factors::Lo { joint: p_xy.to_vec() }, tol)
}

/// One-way set with `n = P(N | x, y, a, b) P(y | a, x) P(x)`.
pub fn locc_from_factors(layout: Layout, px: &[f64], py_given_ax: &[f64], decision: &[f64]) -> Result<InstructionSet> {
    locc_from_factors_with_tol(layout, px, py_given_ax, decision, EXACT_TOL)
}

pub fn locc_from_factors_with_tol(
    layout: Layout,
    px: &[f64],
    py_given_ax: &[f64],
    decision: &[f64],
    tol: f64,
) -> Result<InstructionSet> {
    let (ns, no) = (layout.settings, layout.outcomes);
    if px.len() != ns || py_given_ax.len() != ns * no * ns {
        return Err(Error::DimensionMismatch("factor tables do not match the layout".into()));
    }
    check_distribution("P(x)", px, tol)?;
    for x in 0..ns {
        for a in 0..no {
            let row = &py_given_ax[(x * no + a) * ns..(x * no + a + 1) * ns];
            check_distribution(&format!("P(y|a={},x={})", a + 1, x + 1), row, tol)?;
        }
    }
    check_decision(layout, decision, tol)?;
    let mut s = vec![0.0; ns * ns * no];
    for x in 0..ns {
        for y in 0..ns {
            for a in 0..no {
                s[(x * ns + y) * no + a] = px[x] * py_given_ax[(x * no + a) * ns + y];
            }
        }
    }
    let n_table = layout.cells_iter().zip(decision).map(|((x, y, a, _), &d)| d * s[(x * ns + y) * no + a]).collect();
    InstructionSet::validated(layout, n_table, Factors::OneWayLocc { px: px.to_vec(), s }, tol)
}

/// Sampling tables for interleaved LO and one-way rounds.
///
/// Bob's setting label `y'` runs over `0..2·settings`; labels below
/// `settings` are LO rounds with `y = y'`, the rest one-way rounds with
/// `y = y' - settings`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedInstructionSet {
    pub layout: Layout,
    /// LO share used to build the table, when known.
    pub weight: Option<f64>,
    pub pm_x: Vec<f64>,
    /// `P_m(y' | a, x)`, indexed `(a * settings + x) * 2·settings + y'`.
    pub pm_yprime: Vec<f64>,
    /// LO decision table `P(N | x, y, a, b)`.
    pub decision_lo: Vec<f64>,
    /// One-way decision table `P(N | x, y, a, b)`.
    pub decision_locc: Vec<f64>,
}

impl MergedInstructionSet {
    pub fn yprime_count(&self) -> usize {
        2 * self.layout.settings
    }

    pub fn yprime_row(&self, a: usize, x: usize) -> &[f64] {
        let w = self.yprime_count();
        let start = (a * self.layout.settings + x) * w;
        &self.pm_yprime[start..start + w]
    }

    /// Checks row normalization, decision ranges and that the LO half of
    /// every row is independent of `a`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let (ns, no) = (self.layout.settings, self.layout.outcomes);
        check_distribution("P_m(x)", &self.pm_x, tol)?;
        if self.pm_yprime.len() != no * ns * self.yprime_count() {
            return Err(Error::DimensionMismatch("P_m(y'|a,x) does not match the layout".into()));
        }
        for a in 0..no {
            for x in 0..ns {
                check_distribution(&format!("P_m(y'|a={},x={})", a + 1, x + 1), self.yprime_row(a, x), tol)?;
            }
        }
        check_decision(self.layout, &self.decision_lo, tol)?;
        check_decision(self.layout, &self.decision_locc, tol)?;
        self.check_lo_half(tol)
    }

    /// The LO half of `P_m(y' | a, x)` must not depend on `a`.
    pub fn check_lo_half(&self, tol: f64) -> Result<()> {
        let ns = self.layout.settings;
        for x in 0..ns {
            let first = &self.yprime_row(0, x)[..ns];
            for a in 1..self.layout.outcomes {
                let row = &self.yprime_row(a, x)[..ns];
                if let Some(y) = (0..ns).find(|&y| (row[y] - first[y]).abs() > tol) {
                    return Err(Error::Precondition(format!(
                        "LO half of P_m(y'|a,x) depends on a at x={}, y'={y}: {} vs {}",
                        x + 1,
                        row[y],
                        first[y]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fraction of rounds assigned to the LO half.
    pub fn lo_share(&self) -> f64 {
        let ns = self.layout.settings;
        (0..ns).map(|x| self.pm_x[x] * self.yprime_row(0, x)[..ns].iter().sum::<f64>()).sum()
    }
}

/// Interleaves an LO and a one-way protocol: each round runs LO with
/// probability `weight`, otherwise the one-way protocol, and Alice's
/// setting distribution is shared.
pub fn merge_shuffled(lo: &InstructionSet, locc: &InstructionSet, weight: f64) -> Result<MergedInstructionSet> {
    if lo.scenario() != Scenario::Lo || locc.scenario() != Scenario::OneWayLocc {
        return Err(Error::Precondition("merge_shuffled needs an LO set and a one-way set".into()));
    }
    if lo.layout() != locc.layout() {
        return Err(Error::DimensionMismatch(format!("setting counts differ: {:?} vs {:?}", lo.layout(), locc.layout())));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Precondition(format!("merge weight {weight} outside [0,1]")));
    }
    let layout = lo.layout();
    let (ns, no) = (layout.settings, layout.outcomes);
    let lo_f = lo.factorize_lo(EXACT_TOL)?;
    let locc_f = locc.factorize_locc(EXACT_TOL)?;
    let pm_x: Vec<f64> = (0..ns).map(|x| weight * lo.px(x) + (1.0 - weight) * locc.px(x)).collect();
    let w = 2 * ns;
    let mut pm_yprime = vec![0.0; no * ns * w];
    for a in 0..no {
        for x in 0..ns {
            let row = &mut pm_yprime[(a * ns + x) * w..(a * ns + x + 1) * w];
            if pm_x[x] <= EXACT_TOL {
                row.iter_mut().for_each(|v| *v = 1.0 / w as f64);
                continue;
            }
            for y in 0..ns {
                row[y] = weight * lo_f.p_xy[x * ns + y] / pm_x[x];
                row[ns + y] = (1.0 - weight) * locc_f.px[x] * locc_f.py_given_ax[(x * no + a) * ns + y] / pm_x[x];
            }
        }
    }
    Ok(MergedInstructionSet {
        layout,
        weight: Some(weight),
        pm_x,
        pm_yprime,
        decision_lo: lo_f.decision,
        decision_locc: locc_f.decision,
    })
}

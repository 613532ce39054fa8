//! Bundled reference tables for the optimized target state.
//!
//! All files use 1-based `x, y, a, b`; Bob's shuffled label `y'` is 0-based.

use serde::Deserialize;

use crate::error::Result;
use crate::instructions::{
    locc_from_factors_with_tol, lo_from_factors_with_tol, Factors, InstructionSet, MergedInstructionSet, PRINTED_TABLE_TOL,
};
use crate::measurement::Layout;

pub const OPTIMAL_INSTRUCTIONS_CSV: &str = include_str!("../data/optimal_instructions.csv");
pub const DECISION_PROBABILITIES_CSV: &str = include_str!("../data/decision_probabilities.csv");
pub const SETTING_X_CSV: &str = include_str!("../data/setting_x.csv");
pub const SETTING_Y_GIVEN_AX_CSV: &str = include_str!("../data/setting_y_given_ax.csv");
pub const SETTING_XY_CSV: &str = include_str!("../data/setting_xy.csv");
pub const SHUFFLED_X_CSV: &str = include_str!("../data/shuffled_x.csv");
pub const SHUFFLED_YPRIME_GIVEN_AX_CSV: &str = include_str!("../data/shuffled_yprime_given_ax.csv");
pub const OPTIMIZED_STATE_JSON: &str = include_str!("../data/optimized_state.json");

const L: Layout = Layout::QUTRIT;

#[derive(Deserialize)]
struct CellRow {
    x: usize,
    y: usize,
    a: usize,
    b: usize,
    lo: f64,
    one_way_locc: f64,
}

#[derive(Deserialize)]
struct XRow {
    x: usize,
    p: f64,
}

#[derive(Deserialize)]
struct XyRow {
    x: usize,
    y: usize,
    p: f64,
}

fn read<T: for<'de> Deserialize<'de>>(text: &str) -> Vec<T> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .expect("bundled table parses")
}

fn cell_tables(text: &str) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![0.0; L.cells()];
    let mut locc = vec![0.0; L.cells()];
    for r in read::<CellRow>(text) {
        let i = L.index(r.x - 1, r.y - 1, r.a - 1, r.b - 1);
        lo[i] = r.lo;
        locc[i] = r.one_way_locc;
    }
    (lo, locc)
}

/// Printed optimal decision tables `P(x, y, N | a, b)` for (LO, one-way).
pub fn optimal_n_tables() -> (Vec<f64>, Vec<f64>) {
    cell_tables(OPTIMAL_INSTRUCTIONS_CSV)
}

/// Printed final decision probabilities `P(N | x, y, a, b)` for (LO, one-way).
pub fn decision_tables() -> (Vec<f64>, Vec<f64>) {
    cell_tables(DECISION_PROBABILITIES_CSV)
}

/// Printed `P(x)` of the one-way protocol.
pub fn setting_x() -> Vec<f64> {
    let mut px = vec![0.0; 3];
    for r in read::<XRow>(SETTING_X_CSV) {
        px[r.x - 1] = r.p;
    }
    px
}

/// Printed `P(y | a, x)`, indexed `(x * 3 + a) * 3 + y`.
pub fn setting_y_given_ax() -> Vec<f64> {
    let mut out = vec![0.0; 27];
    let mut rdr = csv::Reader::from_reader(SETTING_Y_GIVEN_AX_CSV.as_bytes());
    for rec in rdr.records() {
        let rec = rec.expect("bundled table parses");
        let f: Vec<f64> = rec.iter().map(|s| s.parse().expect("number")).collect();
        let (a, x) = (f[0] as usize - 1, f[1] as usize - 1);
        for y in 0..3 {
            out[(x * 3 + a) * 3 + y] = f[2 + y];
        }
    }
    out
}

/// Printed `P(x, y)` of the LO protocol, indexed `x * 3 + y`.
pub fn setting_xy() -> Vec<f64> {
    let mut out = vec![0.0; 9];
    for r in read::<XyRow>(SETTING_XY_CSV) {
        out[(r.x - 1) * 3 + r.y - 1] = r.p;
    }
    out
}

/// Printed optimal LO instruction set with its printed `P(x, y)`.
pub fn optimal_lo() -> InstructionSet {
    InstructionSet::new(L, optimal_n_tables().0, Factors::Lo { joint: setting_xy() })
}

/// Printed optimal one-way instruction set with its printed `P(x)` and `P(y | a, x)`.
pub fn optimal_locc() -> InstructionSet {
    let px = setting_x();
    let py = setting_y_given_ax();
    let mut s = vec![0.0; 27];
    for x in 0..3 {
        for y in 0..3 {
            for a in 0..3 {
                s[(x * 3 + y) * 3 + a] = px[x] * py[(x * 3 + a) * 3 + y];
            }
        }
    }
    InstructionSet::new(L, optimal_n_tables().1, Factors::OneWayLocc { px, s })
}

/// LO set rebuilt from the printed `P(x, y)` and decision probabilities.
pub fn lo_from_printed_factors() -> Result<InstructionSet> {
    lo_from_factors_with_tol(L, &setting_xy(), &decision_tables().0, PRINTED_TABLE_TOL)
}

/// One-way set rebuilt from the printed `P(x)`, `P(y | a, x)` and decision
/// probabilities.
pub fn locc_from_printed_factors() -> Result<InstructionSet> {
    locc_from_factors_with_tol(L, &setting_x(), &setting_y_given_ax(), &decision_tables().1, PRINTED_TABLE_TOL)
}

/// Printed shuffled sampling tables with the printed decision probabilities.
pub fn shuffled() -> MergedInstructionSet {
    let mut pm_x = vec![0.0; 3];
    for r in read::<XRow>(SHUFFLED_X_CSV) {
        pm_x[r.x - 1] = r.p;
    }
    let mut pm_yprime = vec![0.0; 3 * 3 * 6];
    let mut rdr = csv::Reader::from_reader(SHUFFLED_YPRIME_GIVEN_AX_CSV.as_bytes());
    for rec in rdr.records() {
        let rec = rec.expect("bundled table parses");
        let f: Vec<f64> = rec.iter().map(|s| s.parse().expect("number")).collect();
        let (a, x) = (f[0] as usize - 1, f[1] as usize - 1);
        pm_yprime[(a * 3 + x) * 6..(a * 3 + x + 1) * 6].copy_from_slice(&f[2..8]);
    }
    let (decision_lo, decision_locc) = decision_tables();
    MergedInstructionSet { layout: L, weight: None, pm_x, pm_yprime, decision_lo, decision_locc }
}

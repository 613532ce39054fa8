//! Monte Carlo rounds of the detection protocols.
//!
//! Independent rounds ([`run_rounds`]) draw from per-round ChaCha8 streams
//! and run in parallel. Shuffled rounds ([`run_shuffled`]) draw their
//! setting and decision digits from one sequential stream per random-number
//! table, so a run fed by pre-generated tables ([`generate_rng_tables`])
//! reproduces the live run exactly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{ExpectationCell, ExpectationData};
use crate::instructions::{Factors, InstructionSet, MergedInstructionSet, Scenario, PRINTED_TABLE_TOL};
use crate::measurement::{Layout, MeasurementModel};
use crate::state::DensityMatrix;

/// Attempts per round before a degenerate conditional aborts the run.
const MAX_RESAMPLES: u32 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Y,
    N,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub protocol: Scenario,
    pub x: usize,
    pub a: usize,
    /// Bob's merged setting label, shuffled runs only.
    pub yprime: Option<usize>,
    pub y: usize,
    pub b: usize,
    pub verdict: Verdict,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Y => "Y",
            Verdict::N => "N",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub protocol: Scenario,
    pub rounds: u64,
    pub rejections: u64,
    pub empirical_p2: f64,
    /// Rounds redrawn because a conditional distribution had no mass.
    pub resampled: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffledSummary {
    pub rounds: u64,
    pub rounds_lo: u64,
    pub rounds_locc: u64,
    pub rejections_lo: u64,
    pub rejections_locc: u64,
    /// `None` when the protocol received no rounds.
    pub p2_lo: Option<f64>,
    pub p2_locc: Option<f64>,
    pub resampled: u64,
}

fn discrete(weights: impl IntoIterator<Item = f64>) -> Option<WeightedIndex<f64>> {
    WeightedIndex::new(weights.into_iter().map(|w| w.max(0.0))).ok()
}

/// Born statistics of one state under one measurement model.
struct BornSampler {
    layout: Layout,
    /// Joint `(a, b)` per `(x, y)`.
    joint: Vec<Option<WeightedIndex<f64>>>,
    /// Alice's marginal per `x`.
    alice: Vec<Option<WeightedIndex<f64>>>,
    /// Bob's conditional per `(x, y, a)`.
    bob: Vec<Option<WeightedIndex<f64>>>,
}

impl BornSampler {
    fn new(rho: &DensityMatrix, mm: &MeasurementModel) -> Self {
        let layout = mm.layout();
        let (ns, no) = (layout.settings, layout.outcomes);
        let born = mm.born_table(rho);
        let p = |x, y, a, b| born[layout.index(x, y, a, b)];
        let mut joint = Vec::new();
        let mut bob = Vec::new();
        for x in 0..ns {
            for y in 0..ns {
                joint.push(discrete((0..no * no).map(|k| p(x, y, k / no, k % no))));
                for a in 0..no {
                    bob.push(discrete((0..no).map(|b| p(x, y, a, b))));
                }
            }
        }
        // Bob's outcomes are complete, so any of his settings gives Alice's marginal.
        let alice = (0..ns).map(|x| discrete((0..no).map(|a| (0..no).map(|b| p(x, 0, a, b)).sum::<f64>()))).collect();
        Self { layout, joint, alice, bob }
    }

    fn alice<R: Rng>(&self, x: usize, rng: &mut R) -> Option<usize> {
        self.alice[x].as_ref().map(|d| d.sample(rng))
    }

    fn bob<R: Rng>(&self, x: usize, y: usize, a: usize, rng: &mut R) -> Option<usize> {
        let (ns, no) = (self.layout.settings, self.layout.outcomes);
        self.bob[(x * ns + y) * no + a].as_ref().map(|d| d.sample(rng))
    }

    fn joint<R: Rng>(&self, x: usize, y: usize, rng: &mut R) -> Option<(usize, usize)> {
        let no = self.layout.outcomes;
        self.joint[x * self.layout.settings + y].as_ref().map(|d| {
            let k = d.sample(rng);
            (k / no, k % no)
        })
    }
}

fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng
}

/// Simulates `n` independent rounds of one protocol. Round `i` uses stream
/// `i` of `seed`, so records do not depend on thread scheduling.
pub fn run_rounds(
    rho: &DensityMatrix,
    mm: &MeasurementModel,
    instr: &InstructionSet,
    n: u64,
    seed: u64,
) -> Result<(Vec<RoundRecord>, RunSummary)> {
    if n == 0 {
        return Err(Error::Precondition("round count must be at least 1".into()));
    }
    if instr.layout() != mm.layout() {
        return Err(Error::DimensionMismatch("instruction set and measurement model differ in shape".into()));
    }
    let violations = instr.validate(PRINTED_TABLE_TOL);
    if !violations.is_empty() {
        return Err(Error::InvalidInstructions(violations));
    }
    let layout = instr.layout();
    let (ns, no) = (layout.settings, layout.outcomes);
    let born = BornSampler::new(rho, mm);
    let decision: Vec<f64> = layout.cells_iter().map(|(x, y, a, b)| ratio(instr.n(x, y, a, b), instr.bound(x, y, a, b))).collect();
    let protocol = instr.scenario();

    enum Settings {
        Lo(Option<WeightedIndex<f64>>),
        Locc { px: Option<WeightedIndex<f64>>, py: Vec<Option<WeightedIndex<f64>>> },
    }
    let settings = match instr.factors() {
        Factors::Lo { joint } => Settings::Lo(discrete(joint.iter().copied())),
        Factors::OneWayLocc { px, s } => Settings::Locc {
            px: discrete(px.iter().copied()),
            py: (0..ns * no).map(|k| discrete((0..ns).map(|y| s[((k / no) * ns + y) * no + k % no]))).collect(),
        },
    };

    let attempt = |rng: &mut ChaCha8Rng| -> Option<(usize, usize, usize, usize)> {
        match &settings {
            Settings::Lo(pxy) => {
                let k = pxy.as_ref()?.sample(rng);
                let (x, y) = (k / ns, k % ns);
                let (a, b) = born.joint(x, y, rng)?;
                Some((x, y, a, b))
            }
            Settings::Locc { px, py } => {
                let x = px.as_ref()?.sample(rng);
                let a = born.alice(x, rng)?;
                let y = py[x * no + a].as_ref()?.sample(rng);
                let b = born.bob(x, y, a, rng)?;
                Some((x, y, a, b))
            }
        }
    };

    let rounds: Vec<Result<(RoundRecord, u32)>> = (0..n)
        .into_par_iter()
        .map(|round| {
            let mut rng = round_rng(seed, round);
            let mut redraws = 0;
            let (x, y, a, b) = loop {
                if let Some(cell) = attempt(&mut rng) {
                    break cell;
                }
                redraws += 1;
                if redraws >= MAX_RESAMPLES {
                    return Err(Error::Precondition(format!("round {round}: sampling distribution has no mass")));
                }
            };
            let verdict = if rng.random::<f64>() < decision[layout.index(x, y, a, b)] { Verdict::N } else { Verdict::Y };
            Ok((RoundRecord { round, protocol, x, a, yprime: None, y, b, verdict }, redraws))
        })
        .collect();
    let mut records = Vec::with_capacity(n as usize);
    let mut resampled = 0u64;
    for r in rounds {
        let (rec, redraws) = r?;
        resampled += redraws as u64;
        records.push(rec);
    }
    let rejections = records.iter().filter(|r| r.verdict == Verdict::N).count() as u64;
    let summary = RunSummary { protocol, rounds: n, rejections, empirical_p2: rejections as f64 / n as f64, resampled };
    Ok((records, summary))
}

fn ratio(n: f64, bound: f64) -> f64 {
    if bound <= 0.0 { 0.0 } else { (n / bound).clamp(0.0, 1.0) }
}

/// Identifies one of the `1 + 9 + 162` random-number tables of a shuffled run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableId {
    X,
    YPrime { a: usize, x: usize },
    Decision { protocol: Scenario, a: usize, b: usize, x: usize, y: usize },
}

impl TableId {
    pub fn count(layout: Layout) -> usize {
        let (ns, no) = (layout.settings, layout.outcomes);
        1 + no * ns + 2 * no * no * ns * ns
    }

    pub fn index(&self, layout: Layout) -> usize {
        let (ns, no) = (layout.settings, layout.outcomes);
        match *self {
            TableId::X => 0,
            TableId::YPrime { a, x } => 1 + a * ns + x,
            TableId::Decision { protocol, a, b, x, y } => {
                let p = usize::from(protocol == Scenario::OneWayLocc);
                1 + no * ns + (((p * no + a) * no + b) * ns + x) * ns + y
            }
        }
    }

    pub fn all(layout: Layout) -> Vec<TableId> {
        let (ns, no) = (layout.settings, layout.outcomes);
        let mut out = vec![TableId::X];
        for a in 0..no {
            for x in 0..ns {
                out.push(TableId::YPrime { a, x });
            }
        }
        for protocol in [Scenario::Lo, Scenario::OneWayLocc] {
            for a in 0..no {
                for b in 0..no {
                    for x in 0..ns {
                        for y in 0..ns {
                            out.push(TableId::Decision { protocol, a, b, x, y });
                        }
                    }
                }
            }
        }
        out
    }

    /// File name with 1-based indices.
    pub fn file_name(&self) -> String {
        match *self {
            TableId::X => "RTx.txt".into(),
            TableId::YPrime { a, x } => format!("RTy_a{}x{}.txt", a + 1, x + 1),
            TableId::Decision { protocol, a, b, x, y } => {
                format!("RTN_{}_a{}b{}x{}y{}.txt", protocol.label(), a + 1, b + 1, x + 1, y + 1)
            }
        }
    }
}

/// Digit distributions of every table of a merged instruction set.
struct TableSources {
    dists: Vec<Option<WeightedIndex<f64>>>,
}

impl TableSources {
    fn new(merged: &MergedInstructionSet) -> Self {
        let layout = merged.layout;
        let dists = TableId::all(layout)
            .into_iter()
            .map(|t| match t {
                TableId::X => discrete(merged.pm_x.iter().copied()),
                TableId::YPrime { a, x } => discrete(merged.yprime_row(a, x).iter().copied()),
                TableId::Decision { protocol, a, b, x, y } => {
                    let table = if protocol == Scenario::Lo { &merged.decision_lo } else { &merged.decision_locc };
                    let p = table[layout.index(x, y, a, b)].clamp(0.0, 1.0);
                    // Digit 1 rejects.
                    discrete([1.0 - p, p])
                }
            })
            .collect();
        Self { dists }
    }
}

fn table_stream(seed: u64, table: usize) -> ChaCha8Rng {
    round_rng(seed, table as u64)
}

/// Stream for measurement outcomes; disjoint from the table streams.
const OUTCOME_STREAM: u64 = 1 << 32;

/// Pre-generated digit tables, in [`TableId::all`] order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngTableBundle {
    pub layout: Layout,
    pub tables: Vec<Vec<u8>>,
}

/// Lengths of the setting and decision tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableLengths {
    pub x: usize,
    pub yprime: usize,
    pub decision: usize,
}

impl TableLengths {
    pub fn uniform(len: usize) -> Self {
        Self { x: len, yprime: len, decision: len }
    }
}

impl RngTableBundle {
    pub fn table(&self, id: TableId) -> &[u8] {
        &self.tables[id.index(self.layout)]
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Writes one file per table, digits on a single line.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for id in TableId::all(self.layout) {
            let mut text: String = self.table(id).iter().map(|d| char::from(b'0' + d)).collect();
            text.push('\n');
            fs::write(dir.join(id.file_name()), text)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path, layout: Layout) -> Result<Self> {
        let tables = TableId::all(layout)
            .into_iter()
            .map(|id| {
                let name = id.file_name();
                let text = fs::read_to_string(dir.join(&name))?;
                text.trim_end()
                    .bytes()
                    .map(|c| if c.is_ascii_digit() { Ok(c - b'0') } else { Err(Error::parse(name.clone(), format!("non-digit byte {c:#x}"))) })
                    .collect()
            })
            .collect::<Result<Vec<Vec<u8>>>>()?;
        Ok(Self { layout, tables })
    }
}

/// Pre-samples every table from its own stream of `seed`.
pub fn generate_rng_tables(merged: &MergedInstructionSet, seed: u64, lengths: TableLengths) -> Result<RngTableBundle> {
    if lengths.x == 0 || lengths.yprime == 0 || lengths.decision == 0 {
        return Err(Error::Precondition("table lengths must be at least 1".into()));
    }
    merged.validate(PRINTED_TABLE_TOL)?;
    let sources = TableSources::new(merged);
    let tables = TableId::all(merged.layout)
        .into_par_iter()
        .enumerate()
        .map(|(i, id)| {
            let len = match id {
                TableId::X => lengths.x,
                TableId::YPrime { .. } => lengths.yprime,
                TableId::Decision { .. } => lengths.decision,
            };
            let mut rng = table_stream(seed, i);
            let dist = sources.dists[i].as_ref().ok_or_else(|| Error::Precondition(format!("table {} has no mass", id.file_name())))?;
            Ok((0..len).map(|_| dist.sample(&mut rng) as u8).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RngTableBundle { layout: merged.layout, tables })
}

/// Where a shuffled run takes its setting and decision digits from.
pub enum DigitSource<'a> {
    /// Fresh draws from the per-table streams of `seed`.
    Live { seed: u64 },
    /// Sequential reads from pre-generated tables.
    Tables(&'a RngTableBundle),
}

enum Digits<'a> {
    Live { rngs: Vec<ChaCha8Rng>, sources: TableSources },
    Tables { bundle: &'a RngTableBundle, cursors: Vec<usize> },
}

impl Digits<'_> {
    fn next(&mut self, table: usize) -> Result<usize> {
        match self {
            Digits::Live { rngs, sources } => sources.dists[table]
                .as_ref()
                .map(|d| d.sample(&mut rngs[table]))
                .ok_or_else(|| Error::Precondition(format!("random-number table {table} has no mass"))),
            Digits::Tables { bundle, cursors } => {
                let t = &bundle.tables[table];
                let d = *t.get(cursors[table]).ok_or_else(|| Error::Precondition(format!("random-number table {table} exhausted after {} digits", t.len())))?;
                cursors[table] += 1;
                Ok(d as usize)
            }
        }
    }
}

/// Simulates `n` interleaved rounds: `x ~ P_m(x)`, `a` by Born's rule,
/// `y' ~ P_m(y' | a, x)`, protocol and `y` from `y'`, `b` conditionally,
/// then the protocol's decision. Outcomes use their own stream of
/// `outcome_seed`.
pub fn run_shuffled(
    rho: &DensityMatrix,
    mm: &MeasurementModel,
    merged: &MergedInstructionSet,
    n: u64,
    outcome_seed: u64,
    source: DigitSource<'_>,
) -> Result<(Vec<RoundRecord>, ShuffledSummary)> {
    if n == 0 {
        return Err(Error::Precondition("round count must be at least 1".into()));
    }
    if merged.layout != mm.layout() {
        return Err(Error::DimensionMismatch("merged tables and measurement model differ in shape".into()));
    }
    merged.validate(PRINTED_TABLE_TOL)?;
    let layout = merged.layout;
    let ns = layout.settings;
    let born = BornSampler::new(rho, mm);
    let mut digits = match source {
        DigitSource::Live { seed } => Digits::Live {
            rngs: (0..TableId::count(layout)).map(|t| table_stream(seed, t)).collect(),
            sources: TableSources::new(merged),
        },
        DigitSource::Tables(bundle) => {
            if bundle.layout != layout || bundle.len() != TableId::count(layout) {
                return Err(Error::DimensionMismatch("table bundle does not match the merged tables".into()));
            }
            Digits::Tables { bundle, cursors: vec![0; bundle.len()] }
        }
    };
    let mut outcomes = round_rng(outcome_seed, OUTCOME_STREAM);
    let mut records = Vec::with_capacity(n as usize);
    let mut resampled = 0u64;
    for round in 0..n {
        let mut redraws = 0;
        let (x, a, yprime, b) = loop {
            let x = digits.next(TableId::X.index(layout))?;
            if let Some(a) = born.alice(x, &mut outcomes) {
                let yprime = digits.next(TableId::YPrime { a, x }.index(layout))?;
                if let Some(b) = born.bob(x, yprime % ns, a, &mut outcomes) {
                    break (x, a, yprime, b);
                }
            }
            redraws += 1;
            if redraws >= MAX_RESAMPLES {
                return Err(Error::Precondition(format!("round {round}: sampling distribution has no mass")));
            }
        };
        resampled += redraws as u64;
        let y = yprime % ns;
        let protocol = if yprime < ns { Scenario::Lo } else { Scenario::OneWayLocc };
        let digit = digits.next(TableId::Decision { protocol, a, b, x, y }.index(layout))?;
        let verdict = if digit == 1 { Verdict::N } else { Verdict::Y };
        records.push(RoundRecord { round, protocol, x, a, yprime: Some(yprime), y, b, verdict });
    }
    let count = |p: Scenario, v: Option<Verdict>| records.iter().filter(|r| r.protocol == p && v.is_none_or(|v| r.verdict == v)).count() as u64;
    let (rounds_lo, rounds_locc) = (count(Scenario::Lo, None), count(Scenario::OneWayLocc, None));
    let (rejections_lo, rejections_locc) = (count(Scenario::Lo, Some(Verdict::N)), count(Scenario::OneWayLocc, Some(Verdict::N)));
    let rate = |k: u64, total: u64| (total > 0).then(|| k as f64 / total as f64);
    let summary = ShuffledSummary {
        rounds: n,
        rounds_lo,
        rounds_locc,
        rejections_lo,
        rejections_locc,
        p2_lo: rate(rejections_lo, rounds_lo),
        p2_locc: rate(rejections_locc, rounds_locc),
        resampled,
    };
    Ok((records, summary))
}

/// Relative frequency of `(a, b)` among rounds with settings `(x, y)` on the
/// `support` cells `(x, y, a, b)`; cells whose settings never occurred are
/// marked missing.
pub fn estimate_expectations(records: &[RoundRecord], layout: Layout, support: &[(usize, usize, usize, usize)]) -> Result<ExpectationData> {
    let ns = layout.settings;
    let mut per_setting = vec![0u64; ns * ns];
    let mut per_cell = vec![0u64; layout.cells()];
    for r in records {
        layout.check(r.x, r.y, r.a, r.b)?;
        per_setting[r.x * ns + r.y] += 1;
        per_cell[layout.index(r.x, r.y, r.a, r.b)] += 1;
    }
    let cells = support
        .iter()
        .map(|&(x, y, a, b)| {
            layout.check(x, y, a, b)?;
            let total = per_setting[x * ns + y];
            let value = (total > 0).then(|| per_cell[layout.index(x, y, a, b)] as f64 / total as f64);
            Ok(ExpectationCell { a, b, x, y, value })
        })
        .collect::<Result<Vec<_>>>()?;
    ExpectationData::new(layout, cells)
}

/// Writes `round,protocol,x,a,yprime,y,b,verdict` with 1-based `x, a, y, b`
/// and 0-based `yprime` (empty outside shuffled runs).
pub fn write_records_csv<W: Write>(records: &[RoundRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "protocol", "x", "a", "yprime", "y", "b", "verdict"])?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.protocol.label().to_string(),
            (r.x + 1).to_string(),
            (r.a + 1).to_string(),
            r.yprime.map(|v| v.to_string()).unwrap_or_default(),
            (r.y + 1).to_string(),
            (r.b + 1).to_string(),
            r.verdict.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

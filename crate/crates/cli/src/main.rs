//! `entdetect` command-line tool.
//!
//! Exit codes: 0 success, 1 constraint violations, 2 bad input, 3 solver
//! failure.

mod manifest;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use entdetect::data;
use entdetect::detection::{inner_curve, p1_grid, sample_product_states, solve_detection, solve_inner_lp, tradeoff_curve, write_curves_csv};
use entdetect::estimation::{estimate_state, ExpectationData};
use entdetect::gap::{search, SearchConfig};
use entdetect::instructions::{merge_shuffled, PRINTED_TABLE_TOL, EXACT_TOL};
use entdetect::linalg::PSD_TOL;
use entdetect::simulator::{generate_rng_tables, run_rounds, run_shuffled, write_records_csv, DigitSource, TableLengths};
use entdetect::{DensityMatrix, Error, InstructionSet, Layout, MeasurementModel, MergedInstructionSet, Scenario};

use manifest::{sidecar, ManifestBuilder};

#[derive(Parser)]
#[command(name = "entdetect", version, about = "Optimal entanglement detection with local measurements on qutrit pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal type-II error at one type-I error value.
    Solve(SolveArgs),
    /// Error trade-off curve on a uniform grid of type-I error values.
    Curve(CurveArgs),
    /// Search the preparable family for the largest LO vs 1-LOCC gap.
    GapSearch(GapSearchArgs),
    /// Monte Carlo simulation of detection rounds.
    Simulate(SimulateArgs),
    /// Least-squares state estimate from measured frequencies.
    Estimate(EstimateArgs),
    /// Check an instruction set against its polytope constraints.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    #[value(name = "lo")]
    Lo,
    #[value(name = "1locc")]
    OneWayLocc,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Lo => Scenario::Lo,
            ScenarioArg::OneWayLocc => Scenario::OneWayLocc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum BoundArg {
    Outer,
    Inner,
}

#[derive(Args)]
struct StateArg {
    /// State file (JSON `vector` or `matrix`); defaults to the bundled optimized state.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    state: StateArg,
    #[arg(long)]
    p1: f64,
    #[arg(long, value_enum, default_value = "lo")]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value = "outer")]
    bound: BoundArg,
    /// Product states sampled for the inner bound.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    state: StateArg,
    /// Both scenarios when omitted.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, value_enum, default_value = "outer")]
    bound: BoundArg,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GapSearchArgs {
    /// Search configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Trace CSV.
    #[arg(long)]
    out: PathBuf,
    /// Best-parameter JSON; defaults to `<out>.best.json`.
    #[arg(long)]
    best: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    state: StateArg,
    /// Instruction file; give two (LO, then 1-LOCC) with `--shuffled`.
    #[arg(long)]
    instructions: Vec<PathBuf>,
    /// Use the bundled published tables.
    #[arg(long)]
    bundled_tables: bool,
    #[arg(long, value_enum, default_value = "1locc")]
    scenario: ScenarioArg,
    /// Interleave LO and 1-LOCC rounds.
    #[arg(long)]
    shuffled: bool,
    /// LO share when merging two instruction files.
    #[arg(long, default_value_t = 0.5)]
    weight: f64,
    #[arg(long)]
    rounds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shuffled runs: write the random-number tables here and replay them.
    #[arg(long)]
    rng_tables: Option<PathBuf>,
    /// Records CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON; defaults to `<out>.summary.json`, else stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV `a,b,x,y,value` with 1-based indices.
    #[arg(long)]
    expectations: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, conflicts_with_all = ["bundled_tables", "cross_check"])]
    instructions: Option<PathBuf>,
    #[arg(long)]
    bundled_tables: bool,
    /// Recombine the printed setting and decision tables and compare with
    /// the printed optimal instructions.
    #[arg(long)]
    cross_check: bool,
    /// Only with `--bundled-tables`; both scenarios when omitted.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Defaults to 1e-3 for bundled tables and 1e-6 for files.
    #[arg(long)]
    tol: Option<f64>,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn violations(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Solver { .. }) { 3 } else { 2 };
        Self { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::input(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Curve(a) => cmd_curve(a),
        Command::GapSearch(a) => cmd_gap_search(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_state(arg: &StateArg, mb: &mut ManifestBuilder) -> Result<DensityMatrix, Failure> {
    match &arg.state {
        Some(path) => {
            let text = mb.read_input(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            DensityMatrix::from_json_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
        }
        None => Ok(DensityMatrix::from_json_str(data::OPTIMIZED_STATE_JSON)?),
    }
}

fn load_instructions(path: &Path, mb: &mut ManifestBuilder) -> Result<InstructionSet, Failure> {
    let text = mb.read_input(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    InstructionSet::from_json_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn check_p1(p1: f64) -> CliResult {
    if !(0.0..=1.0).contains(&p1) {
        return Err(Failure::input(format!("--p1 {p1} outside [0, 1]")));
    }
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> CliResult {
    check_p1(a.p1)?;
    let seed = (a.bound == BoundArg::Inner).then_some(a.seed);
    let params = json!({ "p1": a.p1, "scenario": Scenario::from(a.scenario).label(), "bound": bound_label(a.bound), "samples": a.samples, "state": a.state.state });
    let mut mb = ManifestBuilder::new("solve", params, seed);
    let rho = load_state(&a.state, &mut mb)?;
    let mm = MeasurementModel::standard();
    let result = match a.bound {
        BoundArg::Outer => solve_detection(&rho, &mm, a.p1, a.scenario.into())?,
        BoundArg::Inner => solve_inner_lp(&rho, &mm, a.p1, &sample_product_states(a.samples, a.seed)?, a.scenario.into())?,
    };
    let mut out = result.to_json_value();
    out["manifest"] = serde_json::to_value(mb.finish()).expect("serializable");
    write_json(a.out.as_deref(), &out)
}

fn bound_label(b: BoundArg) -> &'static str {
    match b {
        BoundArg::Outer => "outer",
        BoundArg::Inner => "inner",
    }
}

fn cmd_curve(a: CurveArgs) -> CliResult {
    if a.grid < 2 {
        return Err(Failure::input("--grid must be at least 2"));
    }
    let seed = (a.bound == BoundArg::Inner).then_some(a.seed);
    let scenarios: Vec<Scenario> = match a.scenario {
        Some(s) => vec![s.into()],
        None => vec![Scenario::Lo, Scenario::OneWayLocc],
    };
    let params = json!({
        "scenarios": scenarios.iter().map(|s| s.label()).collect::<Vec<_>>(),
        "grid": a.grid,
        "bound": bound_label(a.bound),
        "samples": a.samples,
        "state": a.state.state,
    });
    let mut mb = ManifestBuilder::new("curve", params, seed);
    let rho = load_state(&a.state, &mut mb)?;
    let mm = MeasurementModel::standard();
    let grid = p1_grid(a.grid);
    let samples = match a.bound {
        BoundArg::Inner => Some(sample_product_states(a.samples, a.seed)?),
        BoundArg::Outer => None,
    };
    let curves = scenarios
        .iter()
        .map(|&s| match &samples {
            Some(states) => inner_curve(&rho, &mm, s, &grid, states),
            None => tradeoff_curve(&rho, &mm, s, &grid),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut buf = Vec::new();
    write_curves_csv(&curves, &mut buf)?;
    match &a.out {
        Some(path) => {
            fs::write(path, &buf)?;
            write_json(Some(&sidecar(path)), &serde_json::to_value(mb.finish()).expect("serializable"))?;
        }
        None => io::stdout().write_all(&buf)?,
    }
    let failed: usize = curves.iter().map(|c| c.failed_points().len()).sum();
    if failed > 0 {
        return Err(Failure { code: 3, message: format!("{failed} grid points failed to solve (written as NaN)") });
    }
    Ok(())
}

fn cmd_gap_search(a: GapSearchArgs) -> CliResult {
    let mut mb = ManifestBuilder::new("gap-search", json!({ "config": a.config, "seed_override": a.seed }), None);
    let text = mb.read_input(&a.config).map_err(|e| Failure::input(format!("{}: {e}", a.config.display())))?;
    let mut cfg = SearchConfig::from_json_str(&text).map_err(|e| Failure::input(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    mb.set_seed(cfg.seed);
    let (best, trace) = search(&cfg, &MeasurementModel::standard())?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    fs::write(&a.out, &buf)?;
    let record = trace.best().expect("search returned a best point");
    let manifest = serde_json::to_value(mb.finish()).expect("serializable");
    write_json(Some(&sidecar(&a.out)), &manifest)?;
    let best_path = a.best.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".best.json");
        a.out.with_file_name(name)
    });
    let out = json!({
        "params": best,
        "p1": record.p1,
        "p2_lo": record.p2_lo,
        "p2_locc": record.p2_locc,
        "gap": record.gap,
        "evaluations": trace.records.len(),
        "manifest": manifest,
    });
    write_json(Some(&best_path), &out)
}

fn bundled_instructions(scenario: Scenario) -> Result<InstructionSet, Failure> {
    Ok(match scenario {
        Scenario::Lo => data::lo_from_printed_factors()?,
        Scenario::OneWayLocc => data::locc_from_printed_factors()?,
    })
}

fn cmd_simulate(a: SimulateArgs) -> CliResult {
    if a.rounds == 0 {
        return Err(Failure::input("--rounds must be at least 1"));
    }
    if a.bundled_tables == !a.instructions.is_empty() {
        return Err(Failure::input("give either --bundled-tables or --instructions"));
    }
    let params = json!({
        "rounds": a.rounds,
        "bundled_tables": a.bundled_tables,
        "scenario": Scenario::from(a.scenario).label(),
        "shuffled": a.shuffled,
        "weight": a.weight,
        "instructions": a.instructions,
        "rng_tables": a.rng_tables,
        "state": a.state.state,
    });
    let mut mb = ManifestBuilder::new("simulate", params, Some(a.seed));
    let rho = load_state(&a.state, &mut mb)?;
    let mm = MeasurementModel::standard();
    let (records, summary) = if a.shuffled {
        let merged: MergedInstructionSet = if a.bundled_tables {
            data::shuffled()
        } else {
            let [lo, locc] = a.instructions.as_slice() else {
                return Err(Failure::input("--shuffled needs two --instructions files (LO, then 1-LOCC)"));
            };
            merge_shuffled(&load_instructions(lo, &mut mb)?, &load_instructions(locc, &mut mb)?, a.weight)?
        };
        merged.check_lo_half(PRINTED_TABLE_TOL)?;
        let (records, summary) = match &a.rng_tables {
            Some(dir) => {
                let len = usize::try_from(a.rounds).map_err(|_| Failure::input("--rounds too large for table replay"))?;
                let bundle = generate_rng_tables(&merged, a.seed, TableLengths::uniform(len))?;
                bundle.write_dir(dir)?;
                run_shuffled(&rho, &mm, &merged, a.rounds, a.seed, DigitSource::Tables(&bundle))?
            }
            None => run_shuffled(&rho, &mm, &merged, a.rounds, a.seed, DigitSource::Live { seed: a.seed })?,
        };
        let mut counts = vec![0u64; merged.layout.settings];
        records.iter().for_each(|r| counts[r.x] += 1);
        let pm_x_empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / a.rounds as f64).collect();
        let value = json!({
            "summary": summary,
            "pm_x": merged.pm_x,
            "pm_x_empirical": pm_x_empirical,
            "lo_share": merged.lo_share(),
        });
        (records, value)
    } else {
        let instr = if a.bundled_tables {
            bundled_instructions(a.scenario.into())?
        } else {
            let [path] = a.instructions.as_slice() else {
                return Err(Failure::input("give exactly one --instructions file"));
            };
            load_instructions(path, &mut mb)?
        };
        let (records, summary) = run_rounds(&rho, &mm, &instr, a.rounds, a.seed)?;
        let (m_n, _) = instr.assemble_povm_with_tol(&mm, PRINTED_TABLE_TOL)?;
        let value = json!({ "summary": summary, "expected_p2": rho.expectation(&m_n) });
        (records, value)
    };
    let mut out = summary;
    out["manifest"] = serde_json::to_value(mb.finish()).expect("serializable");
    if let Some(path) = &a.out {
        let file = fs::File::create(path)?;
        write_records_csv(&records, io::BufWriter::new(file))?;
    }
    let summary_path = a.summary.clone().or_else(|| {
        a.out.as_ref().map(|p| {
            let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".summary.json");
            p.with_file_name(name)
        })
    });
    write_json(summary_path.as_deref(), &out)
}

fn cmd_estimate(a: EstimateArgs) -> CliResult {
    let mut mb = ManifestBuilder::new("estimate", json!({ "expectations": a.expectations }), None);
    let text = mb.read_input(&a.expectations).map_err(|e| Failure::input(format!("{}: {e}", a.expectations.display())))?;
    let data = ExpectationData::read_csv(text.as_bytes(), Layout::QUTRIT).map_err(|e| Failure::input(format!("{}: {e}", a.expectations.display())))?;
    let (rho, residual) = estimate_state(&data, &MeasurementModel::standard())?;
    let min_eig = rho.matrix().min_eigenvalue()?;
    if min_eig < -PSD_TOL || (rho.matrix().trace().re - 1.0).abs() > EXACT_TOL {
        return Err(Failure { code: 3, message: "estimate is not a valid density matrix".into() });
    }
    let mut out = rho.to_json_value();
    out["residual"] = json!(residual);
    out["observed_cells"] = json!(data.present().count());
    out["missing_cells"] = json!(data.missing().len());
    out["min_eigenvalue"] = json!(min_eig);
    out["purity"] = json!(rho.purity());
    out["manifest"] = serde_json::to_value(mb.finish()).expect("serializable");
    write_json(a.out.as_deref(), &out)
}

fn cmd_validate(a: ValidateArgs) -> CliResult {
    if a.instructions.is_none() && !a.bundled_tables && !a.cross_check {
        return Err(Failure::input("give --instructions, --bundled-tables or --cross-check"));
    }
    let tol = a.tol.unwrap_or(if a.instructions.is_some() { EXACT_TOL } else { PRINTED_TABLE_TOL });
    if !(tol >= 0.0) {
        return Err(Failure::input(format!("--tol {tol} must be non-negative")));
    }
    let params = json!({ "instructions": a.instructions, "bundled_tables": a.bundled_tables, "cross_check": a.cross_check, "tol": tol });
    let mut mb = ManifestBuilder::new("validate", params, None);
    let mut report = Vec::new();
    let mut failed = 0usize;

    let mut sets: Vec<(String, InstructionSet)> = Vec::new();
    if let Some(path) = &a.instructions {
        sets.push((path.display().to_string(), load_instructions(path, &mut mb)?));
    }
    if a.bundled_tables {
        let scenarios = match a.scenario {
            Some(s) => vec![Scenario::from(s)],
            None => vec![Scenario::Lo, Scenario::OneWayLocc],
        };
        for s in scenarios {
            let set = if s == Scenario::Lo { data::optimal_lo() } else { data::optimal_locc() };
            sets.push((format!("bundled optimal {}", s.label()), set));
        }
    }
    for (name, set) in &sets {
        let violations = set.validate(tol);
        println!("{name} ({}): {} violation(s) at tol {tol:e}", set.scenario(), violations.len());
        for v in &violations {
            println!("  {v}");
        }
        failed += violations.len();
        report.push(json!({ "source": name, "scenario": set.scenario().label(), "violations": violations }));
    }
    if a.cross_check {
        let printed = [data::optimal_lo(), data::optimal_locc()];
        let rebuilt = [data::lo_from_printed_factors()?, data::locc_from_printed_factors()?];
        for (p, r) in printed.iter().zip(&rebuilt) {
            let max_diff = p.n_table().iter().zip(r.n_table()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            let ok = max_diff <= tol;
            println!("cross-check {}: max |recombined − printed| = {max_diff:.3e} ({})", p.scenario(), if ok { "ok" } else { "exceeds tol" });
            failed += usize::from(!ok);
            report.push(json!({ "cross_check": p.scenario().label(), "max_abs_diff": max_diff, "ok": ok }));
        }
    }
    if let Some(path) = &a.out {
        let out = json!({ "tol": tol, "checks": report, "manifest": mb.finish() });
        write_json(Some(path), &out)?;
    }
    if failed > 0 {
        return Err(Failure::violations(format!("{failed} check(s) failed")));
    }
    Ok(())
}

//! Acceptance criteria A1-A9. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use entdetect::data;
use entdetect::detection::{p1_grid, sample_product_states, solve_detection, solve_inner_lp_with, tradeoff_curve, SampleConstraints};
use entdetect::estimation::{estimate_state, ExpectationCell, ExpectationData};
use entdetect::gap::{fit_params_to_state, gap_objective, search, SearchConfig};
use entdetect::instructions::{merge_shuffled, Factors, PRINTED_TABLE_TOL};
use entdetect::linalg::{check_density, kron, partial_transpose, unitary_exp, ComplexMatrix, Party, SubsystemDims, I};
use entdetect::simulator::{run_rounds, write_records_csv};
use entdetect::state::{optimized_state_vector, StateParams};
use entdetect::{optimized_state, InstructionSet, Layout, MeasurementModel, Scenario};
use num_complex::Complex64;

const P1_STAR: f64 = 0.7481;
const P2_LO: f64 = 0.0944;
const P2_LOCC: f64 = 0.0283;
const GAP: f64 = 0.0661;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_time(o: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let pass = o.pass && elapsed <= limit;
    outcome(pass, format!("{}; {:.1}s (limit {}s)", o.detail, elapsed.as_secs_f64(), limit.as_secs()))
}

fn povm_value(set: &InstructionSet, mm: &MeasurementModel) -> f64 {
    let (m_n, _) = set.assemble_povm_with_tol(mm, PRINTED_TABLE_TOL).expect("printed table assembles");
    optimized_state().expectation(&m_n)
}

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Published optimal decision tables with the printed bases, raw and under every single outcome
/// relabeling per basis.
fn a1() -> Outcome {
    let (lo, locc) = (data::optimal_lo(), data::optimal_locc());
    let printed = MeasurementModel::printed();
    let ok = |v: (f64, f64)| (v.0 - P2_LO).abs() <= 5e-3 && (v.1 - P2_LOCC).abs() <= 5e-3;
    let raw = (povm_value(&lo, &printed), povm_value(&locc, &printed));
    let mut best = (f64::INFINITY, raw, [0usize; 3]);
    let mut found = None;
    for p0 in 0..6 {
        for p1 in 0..6 {
            for p2 in 0..6 {
                let perm: Vec<Vec<usize>> = [p0, p1, p2].iter().map(|&k| PERMS[k].to_vec()).collect();
                let mm = printed.relabeled(&perm).expect("permutations");
                let v = (povm_value(&lo, &mm), povm_value(&locc, &mm));
                let err = (v.0 - P2_LO).abs().max((v.1 - P2_LOCC).abs());
                if err < best.0 {
                    best = (err, v, [p0, p1, p2]);
                }
                if found.is_none() && ok(v) {
                    found = Some(([p0, p1, p2], v));
                }
            }
        }
    }
    let standard = MeasurementModel::standard();
    let adopted = (povm_value(&lo, &standard), povm_value(&locc, &standard));
    let detail = format!(
        "printed bases raw LO {:.5} / 1-LOCC {:.5}; best single relabeling {:?} gives {:.5} / {:.5} (max error {:.4} > 5e-3); \
         adopted basis convention (Fourier outcomes 2<->3 and Gell-Mann kets |0>,|2> exchanged) gives {:.5} / {:.5}",
        raw.0,
        raw.1,
        best.2.map(|k| PERMS[k]),
        best.1 .0,
        best.1 .1,
        best.0,
        adopted.0,
        adopted.1
    );
    match found {
        Some((perm, v)) => outcome(true, format!("relabeling {:?} gives {:.5} / {:.5}", perm.map(|k| PERMS[k]), v.0, v.1)),
        None => outcome(false, detail),
    }
}

fn a2() -> Outcome {
    let mm = MeasurementModel::standard();
    let rho = optimized_state();
    let lo = solve_detection(&rho, &mm, P1_STAR, Scenario::Lo).expect("LO solve");
    let locc = solve_detection(&rho, &mm, P1_STAR, Scenario::OneWayLocc).expect("1-LOCC solve");
    let g = gap_objective(&rho, P1_STAR, &mm).expect("gap");
    let pass = (lo.p2 - P2_LO).abs() <= 1e-2 && (locc.p2 - P2_LOCC).abs() <= 1e-2 && (g.gap - GAP).abs() <= 1e-2;
    outcome(pass, format!("p2 LO {:.5}, 1-LOCC {:.5}, G {:.5}", lo.p2, locc.p2, g.gap))
}

fn a3() -> Outcome {
    let mm = MeasurementModel::standard();
    let rho = optimized_state();
    let grid = p1_grid(100);
    let lo = tradeoff_curve(&rho, &mm, Scenario::Lo, &grid).expect("LO curve");
    let locc = tradeoff_curve(&rho, &mm, Scenario::OneWayLocc, &grid).expect("1-LOCC curve");
    let mut problems = Vec::new();
    for c in [&lo, &locc] {
        let p2 = c.p2_values();
        let failed = c.failed_points();
        if !failed.is_empty() {
            problems.push(format!("{} failed at {:?}", c.scenario, failed));
        }
        if (p2[0] - 1.0).abs() > 1e-6 || p2[99].abs() > 1e-6 {
            problems.push(format!("{} endpoints {:.2e}, {:.2e}", c.scenario, p2[0], p2[99]));
        }
        let v = c.monotonicity_violations(1e-6);
        if !v.is_empty() {
            problems.push(format!("{} increases at {v:?}", c.scenario));
        }
    }
    let above: Vec<usize> = (0..100).filter(|&i| locc.points[i].p2 > lo.points[i].p2 + 1e-6).collect();
    if !above.is_empty() {
        problems.push(format!("1-LOCC above LO at {above:?}"));
    }
    let max_gap = (0..100).map(|i| lo.points[i].p2 - locc.points[i].p2).fold(f64::MIN, f64::max);
    outcome(problems.is_empty(), if problems.is_empty() { format!("200 points solved; max LO - 1-LOCC {max_gap:.5}") } else { problems.join("; ") })
}

fn a4() -> Outcome {
    let mm = MeasurementModel::standard();
    let rho = optimized_state();
    let samples = sample_product_states(10_000, 2024).expect("samples");
    let constraints = SampleConstraints::new(&mm, &samples).expect("constraints");
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 11.0).collect();
    let mut worst = f64::NEG_INFINITY;
    for &p1 in &grid {
        let inner = solve_inner_lp_with(&rho, &mm, p1, &constraints, Scenario::Lo).expect("inner LP");
        let outer = solve_detection(&rho, &mm, p1, Scenario::Lo).expect("outer SDP");
        worst = worst.max(inner.p2 - outer.p2);
    }
    outcome(worst <= 1e-6, format!("max(inner - outer) over 10 p1 values = {worst:.3e} with 10000 Haar product states"))
}

fn a5() -> Outcome {
    let lo = data::lo_from_printed_factors().expect("LO factors");
    let locc = data::locc_from_printed_factors().expect("1-LOCC factors");
    let (printed_lo, printed_locc) = data::optimal_n_tables();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let table_diff = diff(lo.n_table(), &printed_lo).max(diff(locc.n_table(), &printed_locc));
    let part_a = table_diff <= 1e-3;

    // Least-squares weight for P_m(x) = w P_LO(x) + (1 - w) P_1LOCC(x).
    let target = data::shuffled();
    let (num, den) = (0..3).fold((0.0, 0.0), |(n, d), x| {
        let (a, b) = (lo.px(x), locc.px(x));
        (n + (target.pm_x[x] - b) * (a - b), d + (a - b).powi(2))
    });
    let w = num / den;
    let merged = merge_shuffled(&lo, &locc, w).expect("merge");
    let pm_err = diff(&merged.pm_x, &target.pm_x);
    let exact_lo_half = merged.check_lo_half(0.0).is_ok() && target.check_lo_half(0.0).is_ok();
    let lo_half_err = (0..3)
        .flat_map(|a| (0..3).map(move |x| (a, x)))
        .map(|(a, x)| diff(&merged.yprime_row(a, x)[..3], &target.yprime_row(a, x)[..3]))
        .fold(0.0, f64::max);
    let part_b = pm_err <= 5e-3 && exact_lo_half;
    outcome(
        part_a && part_b,
        format!(
            "(a) max |factored - printed n| = {table_diff:.2e}; (b) fitted w = {w:.4}, P_m(x) = ({:.4}, {:.4}, {:.4}) max error {pm_err:.2e}, \
             LO half a-independent exactly: {exact_lo_half}, max LO-half deviation from printed {lo_half_err:.2e}",
            merged.pm_x[0], merged.pm_x[1], merged.pm_x[2]
        ),
    )
}

fn a6() -> Outcome {
    let mm = MeasurementModel::standard();
    let rho = optimized_state();
    let instr = data::locc_from_printed_factors().expect("1-LOCC factors");
    let n = 1_000_000u64;
    let (m_n, _) = instr.assemble_povm(&mm).expect("povm");
    let p = rho.expectation(&m_n);
    let (r1, s1) = run_rounds(&rho, &mm, &instr, n, 20240611).expect("run");
    let (r2, _) = run_rounds(&rho, &mm, &instr, n, 20240611).expect("rerun");
    let (mut b1, mut b2) = (Vec::new(), Vec::new());
    write_records_csv(&r1, &mut b1).expect("csv");
    write_records_csv(&r2, &mut b2).expect("csv");
    let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let dev = (s1.empirical_p2 - p).abs();
    let identical = b1 == b2;
    outcome(dev <= bound && identical, format!("empirical {:.5} vs tr(M_N rho) {p:.5}: |diff| {dev:.2e} <= {bound:.2e}; byte-identical rerun: {identical}", s1.empirical_p2))
}

fn a7() -> Outcome {
    let mm = MeasurementModel::standard();
    let rho = optimized_state();
    let (lo, locc) = (data::optimal_lo(), data::optimal_locc());
    let support: Vec<(usize, usize, usize, usize)> = Layout::QUTRIT
        .cells_iter()
        .filter(|&(x, y, a, b)| lo.n(x, y, a, b) != 0.0 || locc.n(x, y, a, b) != 0.0)
        .collect();
    let exact = ExpectationData::from_state(&rho, &mm, &support);
    let (_, residual) = estimate_state(&exact, &mm).expect("exact estimate");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 1e-2).expect("normal");
    let noisy_cells: Vec<ExpectationCell> = exact
        .cells()
        .iter()
        .map(|c| ExpectationCell { value: c.value.map(|v| (v + rng.sample(noise)).clamp(0.0, 1.0)), ..c.clone() })
        .collect();
    let noisy = ExpectationData::new(Layout::QUTRIT, noisy_cells).expect("noisy data");
    let (est, noisy_residual) = estimate_state(&noisy, &mm).expect("noisy estimate");
    let valid = check_density(est.matrix(), 1e-9).is_ok();
    let sq: f64 = exact.present().map(|(c, v)| (est.expectation(&mm.product(c.x, c.a, c.y, c.b)) - v).powi(2)).sum();
    let rms = (sq / support.len() as f64).sqrt();
    outcome(
        residual <= 1e-8 && valid && rms <= 3e-2,
        format!("{} support cells; exact residual {residual:.2e}; noisy residual {noisy_residual:.2e}, valid state {valid}, RMS vs noiseless {rms:.2e}", support.len()),
    )
}

fn a8() -> Outcome {
    let (fit, fit_residual) = fit_params_to_state(&optimized_state_vector(), P1_STAR).expect("fit");
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let dir: Vec<f64> = (0..StateParams::DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let start: Vec<f64> = fit.to_vec().iter().zip(&dir).map(|(p, d)| p + 1e-2 * d / norm).collect();
    let initial = StateParams::from_slice(&start).expect("params");
    let cfg = SearchConfig { initial: Some(initial), step: 0.05, ..SearchConfig::new(1, 200, 99) };
    let (_, trace) = search(&cfg, &MeasurementModel::standard()).expect("search");
    let first = trace.records[0].gap;
    let best = *trace.best_so_far.last().expect("records");
    let monotone = trace.best_so_far.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        best >= 0.05 && monotone,
        format!("fit residual {fit_residual:.2e}; G at start {first:.5}, final best {best:.5} after {} evaluations; best-so-far monotone {monotone}", trace.records.len()),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn a9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut problems = Vec::new();

    let mut linalg_err: f64 = 0.0;
    for _ in 0..100 {
        let (a, b) = (random_matrix(&mut rng, 3), random_matrix(&mut rng, 3));
        linalg_err = linalg_err.max((kron(&a, &b).trace() - a.trace() * b.trace()).norm());
        let m = random_matrix(&mut rng, 9);
        let back = partial_transpose(&partial_transpose(&m, SubsystemDims::QUTRITS, Party::B).unwrap(), SubsystemDims::QUTRITS, Party::B).unwrap();
        linalg_err = linalg_err.max(back.max_abs_diff(&m));
        let h = random_matrix(&mut rng, 3).hermitian_part();
        let u = unitary_exp(&h.scale(I)).unwrap();
        linalg_err = linalg_err.max((&u * &u.adjoint()).max_abs_diff(&ComplexMatrix::identity(3)));
    }
    if linalg_err > 1e-10 {
        problems.push(format!("linalg identity error {linalg_err:.2e}"));
    }

    let mut containment_failures = 0;
    for _ in 0..100 {
        let raw: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let joint: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let n_table: Vec<f64> = Layout::QUTRIT.cells_iter().map(|(x, y, _, _)| rng.random::<f64>() * joint[x * 3 + y]).collect();
        let set = InstructionSet::new(Layout::QUTRIT, n_table, Factors::Lo { joint });
        if !set.validate(1e-9).is_empty() || !set.to_one_way().validate(1e-9).is_empty() {
            containment_failures += 1;
        }
    }
    if containment_failures > 0 {
        problems.push(format!("{containment_failures} LO sets not contained in 1-LOCC"));
    }

    let mm = MeasurementModel::standard();
    let rho = optimized_state();
    let mut cert_worst: (f64, f64) = (0.0, f64::INFINITY);
    let mut solves = 0;
    for p1 in p1_grid(11) {
        for s in [Scenario::Lo, Scenario::OneWayLocc] {
            let r = solve_detection(&rho, &mm, p1, s).expect("solve");
            let cert = r.witness_cert.as_ref().expect("certificate");
            cert_worst = (cert_worst.0.max(cert.reconstruction_error(&r.witness())), cert_worst.1.min(cert.min_eigenvalue()));
            solves += 1;
        }
    }
    if cert_worst.0 > 1e-6 || cert_worst.1 < -1e-7 {
        problems.push(format!("certificate reconstruction {:.2e}, min eigenvalue {:.2e}", cert_worst.0, cert_worst.1));
    }

    let states = sample_product_states(10_000, 77).expect("samples");
    let min_pt = states
        .iter()
        .map(|s| partial_transpose(s.matrix(), SubsystemDims::QUTRITS, Party::B).unwrap().min_eigenvalue().unwrap())
        .fold(f64::INFINITY, f64::min);
    if min_pt < -1e-9 {
        problems.push(format!("product-state partial transpose eigenvalue {min_pt:.2e}"));
    }
    let detail = format!(
        "linalg error {linalg_err:.1e} on 300 cases; containment failures {containment_failures}/100; {solves} certificates, \
         reconstruction {:.1e}, min eigenvalue {:.1e}; min PPT eigenvalue {min_pt:.1e} over 10000 product states",
        cert_worst.0, cert_worst.1
    );
    outcome(problems.is_empty(), if problems.is_empty() { detail } else { problems.join("; ") })
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome, u64); 9] = [
        ("A1", "POVM reconstruction", a1, 1),
        ("A2", "SDP reproduction", a2, 30),
        ("A3", "endpoints and monotonicity", a3, 600),
        ("A4", "sandwich property", a4, 600),
        ("A5", "table consistency", a5, 60),
        ("A6", "Monte Carlo convergence", a6, 300),
        ("A7", "estimation closed loop", a7, 60),
        ("A8", "gap-search refinement", a8, 1800),
        ("A9", "property suites", a9, 600),
    ];
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        let start = Instant::now();
        let o = within_time(run(), start.elapsed(), Duration::from_secs(limit));
        println!("{id} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS }
}

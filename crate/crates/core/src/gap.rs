//! Search for states where one-way adaptivity lowers the type-II error most.

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::solve_detection;
use crate::error::{Error, Result};
use crate::instructions::Scenario;
use crate::measurement::MeasurementModel;
use crate::optimize::{evolution_strategy, nelder_mead, Bounds};
use crate::state::{params_from_state, prepare_state, DensityMatrix, StateParams};
use num_complex::Complex64;

/// Both optimal type-II errors at one point and their difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapValue {
    pub p2_lo: f64,
    pub p2_locc: f64,
    pub gap: f64,
}

pub fn gap_objective(rho: &DensityMatrix, p1: f64, mm: &MeasurementModel) -> Result<GapValue> {
    let (lo, locc) = rayon::join(
        || solve_detection(rho, mm, p1, Scenario::Lo),
        || solve_detection(rho, mm, p1, Scenario::OneWayLocc),
    );
    let (p2_lo, p2_locc) = (lo?.p2, locc?.p2);
    Ok(GapValue { p2_lo, p2_locc, gap: p2_lo - p2_locc })
}

pub fn gap_objective_params(p: &StateParams, mm: &MeasurementModel) -> Result<GapValue> {
    gap_objective(&prepare_state(p), p.p1(), mm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    NelderMead,
    EvolutionStrategy,
}

/// Box for `e1` and each generator coefficient; `phi ∈ [0, 2π]` and
/// `theta ∈ [0, π]` are fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub e1: [f64; 2],
    pub lambda: [f64; 2],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self { e1: [-3.0, 3.0], lambda: [-PI, PI] }
    }
}

impl ParamBounds {
    pub fn to_bounds(&self) -> Result<Bounds> {
        let mut lower = vec![self.e1[0], 0.0, 0.0];
        let mut upper = vec![self.e1[1], 2.0 * PI, PI];
        lower.extend([self.lambda[0]; 9]);
        upper.extend([self.lambda[1]; 9]);
        Bounds::new(lower, upper)
    }
}

fn default_step() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub restarts: usize,
    /// Objective evaluations per restart, the starting point included.
    pub iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Initial simplex edge or mutation scale.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub bounds: ParamBounds,
    /// Starting point of restart 0; later restarts start at seeded samples.
    #[serde(default)]
    pub initial: Option<StateParams>,
}

impl SearchConfig {
    pub fn new(restarts: usize, iterations: usize, seed: u64) -> Self {
        Self { restarts, iterations, seed, optimizer: Optimizer::default(), step: default_step(), bounds: ParamBounds::default(), initial: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.iterations == 0 {
            return Err(Error::Precondition("restarts and iterations must be at least 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Precondition(format!("step {} must be positive", self.step)));
        }
        self.bounds.to_bounds().map(|_| ())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One objective evaluation. Failed evaluations carry NaN errors and the
/// solver message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub restart: usize,
    /// 1-based evaluation count within the restart.
    pub iteration: usize,
    pub params: StateParams,
    pub p1: f64,
    pub p2_lo: f64,
    pub p2_locc: f64,
    pub gap: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub records: Vec<EvaluationRecord>,
    /// Largest gap seen up to each record; `-inf` before the first success.
    pub best_so_far: Vec<f64>,
}

impl SearchTrace {
    fn from_records(records: Vec<EvaluationRecord>) -> Self {
        let mut best = f64::NEG_INFINITY;
        let best_so_far = records
            .iter()
            .map(|r| {
                if r.failure.is_none() && r.gap > best {
                    best = r.gap;
                }
                best
            })
            .collect();
        Self { records, best_so_far }
    }

    pub fn best(&self) -> Option<&EvaluationRecord> {
        self.records.iter().filter(|r| r.failure.is_none()).fold(None, |acc: Option<&EvaluationRecord>, r| match acc {
            Some(b) if b.gap >= r.gap => Some(b),
            _ => Some(r),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["restart", "iteration", "e1", "phi", "theta"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=9).map(|i| format!("l{i}")));
        header.extend(["p1", "p2_lo", "p2_locc", "gap"].iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.restart.to_string(), r.iteration.to_string()];
            row.extend(r.params.to_vec().iter().map(f64::to_string));
            row.extend([r.p1, r.p2_lo, r.p2_locc, r.gap].iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Maximizes the gap. Restarts run in parallel on independent streams of
/// the seed and are merged in restart order.
pub fn search(cfg: &SearchConfig, mm: &MeasurementModel) -> Result<(StateParams, SearchTrace)> {
    cfg.validate()?;
    let bounds = cfg.bounds.to_bounds()?;
    let per_restart: Vec<Result<Vec<EvaluationRecord>>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(restart as u64);
            let start = match (&cfg.initial, restart) {
                (Some(p), 0) => p.to_vec(),
                _ => bounds.sample(&mut rng),
            };
            let mut records = Vec::with_capacity(cfg.iterations);
            let objective = |x: &[f64]| {
                let params = StateParams::from_slice(x).expect("12 parameters");
                let p1 = params.p1();
                let (value, failure) = match gap_objective_params(&params, mm) {
                    Ok(v) => (v, None),
                    Err(e) => (GapValue { p2_lo: f64::NAN, p2_locc: f64::NAN, gap: f64::NAN }, Some(e.to_string())),
                };
                records.push(EvaluationRecord {
                    restart,
                    iteration: records.len() + 1,
                    params,
                    p1,
                    p2_lo: value.p2_lo,
                    p2_locc: value.p2_locc,
                    gap: value.gap,
                    failure,
                });
                -value.gap
            };
            match cfg.optimizer {
                Optimizer::NelderMead => nelder_mead(objective, &start, cfg.step, &bounds, cfg.iterations)?,
                Optimizer::EvolutionStrategy => evolution_strategy(objective, &start, cfg.step, &bounds, cfg.iterations, &mut rng)?,
            };
            Ok(records)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_restart {
        records.extend(r?);
    }
    let trace = SearchTrace::from_records(records);
    let best = trace.best().ok_or_else(|| Error::Precondition("every evaluation failed".into()))?.params.clone();
    Ok((best, trace))
}

/// Fits family parameters to a pure state: closed-form start followed by
/// Nelder-Mead on the squared Frobenius distance. Returns the parameters
/// and `‖ρ(params) − ρ‖_F`.
pub fn fit_params_to_state(v: &[Complex64], p1: f64) -> Result<(StateParams, f64)> {
    let (start, start_residual) = params_from_state(v, p1)?;
    let target = DensityMatrix::pure(v, crate::linalg::SubsystemDims::QUTRITS)?;
    let e1 = start.e1;
    let distance = |x: &[f64]| {
        let mut full = vec![e1];
        full.extend_from_slice(x);
        let p = StateParams::from_slice(&full).expect("12 parameters");
        (prepare_state(&p).matrix() - target.matrix()).frobenius_norm().powi(2)
    };
    let x0 = &start.to_vec()[1..];
    let refined = nelder_mead(distance, x0, 0.02, &Bounds::unbounded(x0.len()), 3000)?;
    let residual = refined.value.sqrt();
    if residual < start_residual {
        let mut full = vec![e1];
        full.extend(refined.x);
        Ok((StateParams::from_slice(&full)?, residual))
    } else {
        Ok((start, start_residual))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SubsystemDims;
    use crate::measurement::standard_bases;
    use crate::state::{optimized_state, optimized_state_vector};

    #[test]
    fn gap_at_target_state() {
        let g = gap_objective(&optimized_state(), 0.7481, &standard_bases()).unwrap();
        assert!((g.gap - 0.0661).abs() < 1e-2, "{g:?}");
        assert!((g.gap - (g.p2_lo - g.p2_locc)).abs() < 1e-12);
    }

    #[test]
    fn endpoints_and_product_state_have_no_gap() {
        let mm = standard_bases();
        let rho = optimized_state();
        for p1 in [0.0, 1.0] {
            assert!(gap_objective(&rho, p1, &mm).unwrap().gap.abs() < 1e-6);
        }
        let mut v = vec![Complex64::new(0.0, 0.0); 9];
        v[0] = Complex64::new(1.0, 0.0);
        let product = DensityMatrix::pure(&v, SubsystemDims::QUTRITS).unwrap();
        for p1 in [0.2, 0.7481] {
            let g = gap_objective(&product, p1, &mm).unwrap();
            assert!(g.gap.abs() < 1e-6, "{g:?}");
        }
        let p = StateParams { e1: 0.3, phi: 0.0, theta: PI, lambda_a: [0.0; 9] };
        assert!(gap_objective_params(&p, &mm).unwrap().gap.abs() < 1e-6);
    }

    #[test]
    fn tanh_inversion() {
        let e1 = StateParams::e1_for_p1(0.7481);
        assert!((e1 - 0.5443).abs() < 1e-3);
        let p = StateParams { e1, phi: 0.0, theta: 0.0, lambda_a: [0.0; 9] };
        assert!((p.p1() - 0.7481).abs() < 1e-6);
        let p = StateParams { e1: 40.0, ..p };
        assert!((p.p1() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_iteration_echoes_initial_point() {
        let mut cfg = SearchConfig::new(1, 1, 5);
        let init = StateParams { e1: 0.5, phi: 1.0, theta: 2.0, lambda_a: [0.1; 9] };
        cfg.initial = Some(init.clone());
        let (best, trace) = search(&cfg, &standard_bases()).unwrap();
        assert_eq!(best, init);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn search_is_deterministic_and_monotone() {
        let mm = standard_bases();
        let mut cfg = SearchConfig::new(2, 15, 11);
        cfg.optimizer = Optimizer::EvolutionStrategy;
        let (b1, t1) = search(&cfg, &mm).unwrap();
        let (b2, t2) = search(&cfg, &mm).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(t1, t2);
        assert_eq!(t1.records.len(), 30);
        assert!(t1.best_so_far.windows(2).all(|w| w[1] >= w[0]));
        for r in &t1.records {
            assert!(r.gap >= -1e-6 && (r.gap - (r.p2_lo - r.p2_locc)).abs() <= 1e-9);
        }
    }

    #[test]
    fn config_json_defaults_and_validation() {
        let cfg = SearchConfig::from_json_str(r#"{"restarts": 2, "iterations": 50, "seed": 3}"#).unwrap();
        assert_eq!(cfg.optimizer, Optimizer::NelderMead);
        assert_eq!(cfg.bounds, ParamBounds::default());
        let cfg = SearchConfig::from_json_str(r#"{"restarts": 1, "iterations": 5, "seed": 3, "optimizer": "evolution-strategy"}"#).unwrap();
        assert_eq!(cfg.optimizer, Optimizer::EvolutionStrategy);
        assert!(SearchConfig::from_json_str(r#"{"restarts": 0, "iterations": 5, "seed": 3}"#).is_err());
        assert!(SearchConfig::from_json_str(r#"{"restarts": 1, "iterations": 5}"#).is_err());
    }

    #[test]
    fn fit_recovers_optimized_state() {
        let (p, residual) = fit_params_to_state(&optimized_state_vector(), 0.7481).unwrap();
        assert!(residual < 1e-3, "{residual}");
        assert!((p.p1() - 0.7481).abs() < 1e-9);
        assert!(prepare_state(&p).fidelity(&optimized_state()).unwrap() > 0.999);
    }

    #[test]
    fn trace_csv_header() {
        let cfg = SearchConfig { initial: Some(StateParams { e1: 0.0, phi: 0.5, theta: 1.0, lambda_a: [0.0; 9] }), ..SearchConfig::new(1, 1, 0) };
        let (_, trace) = search(&cfg, &standard_bases()).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("restart,iteration,e1,phi,theta,l1,l2,l3,l4,l5,l6,l7,l8,l9,p1,p2_lo,p2_locc,gap\n0,1,0,0.5,1,"));
    }
}

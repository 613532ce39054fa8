//! Derivative-free minimizers with box constraints and an evaluation budget.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Axis-aligned box; points are clamped into it before evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!("{} lower and {} upper bounds", lower.len(), upper.len())));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Precondition(format!("bound {i}: lower {} exceeds upper {}", lower[i], upper[i])));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, v)| (self.lower[i]..=self.upper[i]).contains(v))
    }

    /// Uniform sample; infinite sides fall back to `[-1, 1]`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let lo = if self.lower[i].is_finite() { self.lower[i] } else { -1.0 };
                let hi = if self.upper[i].is_finite() { self.upper[i] } else { 1.0 };
                if lo == hi { lo } else { rng.random_range(lo..hi) }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Counts evaluations and maps NaN to +∞.
struct Budgeted<F> {
    f: F,
    used: usize,
    max: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> f64> Budgeted<F> {
    fn eval(&mut self, x: &[f64]) -> Option<f64> {
        if self.used >= self.max {
            return None;
        }
        self.used += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if self.best.as_ref().is_none_or(|(_, b)| v < *b) {
            self.best = Some((x.to_vec(), v));
        }
        Some(v)
    }

    fn finish(self) -> Minimum {
        let (x, value) = self.best.expect("at least one evaluation");
        Minimum { x, value, evaluations: self.used }
    }
}

fn check_start(x0: &[f64], bounds: &Bounds, max_evals: usize) -> Result<Vec<f64>> {
    if x0.len() != bounds.dim() {
        return Err(Error::DimensionMismatch(format!("start of length {} in {} dimensions", x0.len(), bounds.dim())));
    }
    if max_evals == 0 {
        return Err(Error::Precondition("evaluation budget must be at least 1".into()));
    }
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    Ok(x)
}

/// Nelder-Mead with dimension-adaptive coefficients. The start point is
/// evaluated first, then the axis simplex with edge `step`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, bounds: &Bounds, max_evals: usize) -> Result<Minimum> {
    let start = check_start(x0, bounds, max_evals)?;
    let n = start.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let mut obj = Budgeted { f, used: 0, max: max_evals, best: None };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let Some(v0) = obj.eval(&start) else { unreachable!() };
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut p = start.clone();
        // Step inward when the forward vertex would sit on the bound.
        p[i] = if p[i] + step <= bounds.upper[i] { p[i] + step } else { p[i] - step };
        bounds.clamp(&mut p);
        let Some(v) = obj.eval(&p) else { return Ok(obj.finish()) };
        simplex.push((p, v));
    }

    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = c.iter().zip(w).map(|(ci, wi)| ci + t * (wi - ci)).collect();
        bounds.clamp(&mut p);
        p
    };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let worst = simplex[n].clone();
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / nf).collect();
        let xr = point(&centroid, &worst.0, -alpha);
        let Some(fr) = obj.eval(&xr) else { break };
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst.0, -alpha * gamma);
            let Some(fe) = obj.eval(&xe) else { break };
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, outside) = if fr < worst.1 { (point(&centroid, &worst.0, -alpha * rho), true) } else { (point(&centroid, &worst.0, rho), false) };
            let Some(fc) = obj.eval(&xc) else { break };
            if (outside && fc <= fr) || (!outside && fc < worst.1) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for k in 1..=n {
                    let p = point(&best, &simplex[k].0, sigma);
                    let Some(v) = obj.eval(&p) else { return Ok(obj.finish()) };
                    simplex[k] = (p, v);
                }
            }
        }
    }
    Ok(obj.finish())
}

/// `(μ/μ, λ)` evolution strategy with weighted recombination and a
/// success-based step-size rule.
pub fn evolution_strategy<F: FnMut(&[f64]) -> f64, R: Rng>(
    f: F,
    x0: &[f64],
    sigma0: f64,
    bounds: &Bounds,
    max_evals: usize,
    rng: &mut R,
) -> Result<Minimum> {
    let start = check_start(x0, bounds, max_evals)?;
    let n = start.len();
    let lambda = 4 + (3.0 * (n as f64).ln()).floor() as usize;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu).map(|i| ((mu as f64) + 0.5).ln() - ((i + 1) as f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let mut obj = Budgeted { f, used: 0, max: max_evals, best: None };
    let Some(mut incumbent) = obj.eval(&start) else { unreachable!() };
    let mut mean = start;
    let mut sigma = sigma0;
    'outer: loop {
        let mut pop = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut p: Vec<f64> = mean.iter().map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            bounds.clamp(&mut p);
            let Some(v) = obj.eval(&p) else { break 'outer };
            pop.push((p, v));
        }
        pop.sort_by(|a, b| a.1.total_cmp(&b.1));
        mean = (0..n).map(|j| pop[..mu].iter().zip(&weights).map(|((p, _), w)| w * p[j]).sum()).collect();
        if pop[0].1 < incumbent {
            incumbent = pop[0].1;
            sigma *= 1.2;
        } else {
            sigma *= 0.85;
        }
    }
    Ok(obj.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], 0.5, &Bounds::unbounded(2), 2000).unwrap();
        assert!(m.value < 1e-8, "{m:?}");
        assert!(m.evaluations <= 2000);
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let b = Bounds::new(vec![2.0, -5.0], vec![5.0, 5.0]).unwrap();
        let mut seen_outside = false;
        let m = nelder_mead(
            |x| {
                seen_outside |= !(2.0..=5.0).contains(&x[0]);
                x[0] * x[0] + (x[1] - 1.0).powi(2)
            },
            &[4.0, 0.0],
            1.0,
            &b,
            500,
        )
        .unwrap();
        assert!(!seen_outside);
        assert!((m.x[0] - 2.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn single_evaluation_returns_start() {
        let b = Bounds::unbounded(3);
        let m = nelder_mead(|x| x.iter().sum(), &[0.3, 0.2, 0.1], 0.1, &b, 1).unwrap();
        assert_eq!(m.x, vec![0.3, 0.2, 0.1]);
        assert_eq!(m.evaluations, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = evolution_strategy(|x| x.iter().sum(), &[0.3, 0.2, 0.1], 0.1, &b, 1, &mut rng).unwrap();
        assert_eq!(m.x, vec![0.3, 0.2, 0.1]);
        assert!(nelder_mead(|x| x[0], &[0.0], 0.1, &Bounds::unbounded(1), 0).is_err());
    }

    #[test]
    fn nan_is_treated_as_worst() {
        let m = nelder_mead(|x| if x[0] > 0.5 { f64::NAN } else { (x[0] - 0.4).powi(2) }, &[0.0], 0.1, &Bounds::unbounded(1), 200).unwrap();
        assert!((m.x[0] - 0.4).abs() < 1e-4);
    }

    #[test]
    fn evolution_strategy_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = Bounds::new(vec![-3.0; 5], vec![3.0; 5]).unwrap();
        let m = evolution_strategy(|x| x.iter().map(|v| (v - 1.0).powi(2)).sum(), &[-2.0; 5], 0.5, &b, 3000, &mut rng).unwrap();
        assert!(m.value < 1e-6, "{m:?}");
    }
}

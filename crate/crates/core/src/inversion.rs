//! Projected nonlinear Landweber iteration and ill-posedness diagnostics.

use crate::error::{Error, Result};
use crate::forward::{picard_forward_solve, ForwardConfig, ForwardProblem};
use crate::gram::{build_parameter_gram, ParameterGram};
use crate::linalg::{axpy, max_abs};
use crate::process::{project_admissible, DamageProcess};
use crate::sensitivity::Linearization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

/// Absolute residual threshold used when the data are exact.
pub const NOISELESS_FLOOR: f64 = 1e-10;

/// Noisy displacement data and the noise level `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub data: Vec<f64>,
    pub delta: f64,
}

impl Measurement {
    pub fn exact(data: Vec<f64>) -> Self {
        Self { data, delta: 0.0 }
    }

    /// Adds seeded Gaussian noise on the free dofs, rescaled so that
    /// `‖u^δ − u‖ = fraction · ‖u‖` in the data norm.
    pub fn synthesize(problem: &ForwardProblem, clean: &[f64], fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction >= 0.0 && fraction.is_finite()) {
            return Err(Error::Config(format!("noise fraction must be >= 0, got {fraction}")));
        }
        if clean.len() != problem.data_len() {
            return Err(Error::Shape(format!("data has {} entries, expected {}", clean.len(), problem.data_len())));
        }
        if fraction == 0.0 {
            return Ok(Self::exact(clean.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = problem.mesh.dof_count();
        let mut noise: Vec<f64> = (0..clean.len())
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                if problem.mesh.is_constrained(i % nd) {
                    0.0
                } else {
                    z
                }
            })
            .collect();
        let target = fraction * problem.data_norm(clean);
        let scale = target / problem.data_norm(&noise);
        noise.iter_mut().for_each(|v| *v *= scale);
        let data: Vec<f64> = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let diff: Vec<f64> = data.iter().zip(clean).map(|(a, b)| a - b).collect();
        Ok(Self { data, delta: problem.data_norm(&diff) })
    }
}

/// Morozov rule `‖r‖ ≤ τδ`, with an absolute floor for exact data.
pub fn discrepancy_stop(residual: f64, delta: f64, tau: f64) -> bool {
    if delta == 0.0 {
        residual <= NOISELESS_FLOOR
    } else {
        residual <= tau * delta
    }
}

#[derive(Debug, Clone)]
pub struct LandweberConfig {
    /// Step size; `None` selects `0.9/σ₁²` at the initial guess.
    pub step: Option<f64>,
    pub tau: f64,
    pub max_iter: usize,
    pub start: DamageProcess,
    /// Sobolev exponent of the parameter Gram.
    pub s: f64,
    pub forward: ForwardConfig,
    /// Disables discrepancy stopping (semiconvergence studies).
    pub run_to_cap: bool,
    /// Record wall-clock times; when off, all times are reported as zero.
    pub timing: bool,
}

impl LandweberConfig {
    pub fn new(start: DamageProcess, s: f64) -> Self {
        Self { step: None, tau: 1.5, max_iter: 500, start, s, forward: ForwardConfig::default(), run_to_cap: false, timing: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("discrepancy factor must exceed 1, got {}", self.tau)));
        }
        if let Some(w) = self.step {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("step size must be positive, got {w}")));
            }
        }
        if !self.start.is_admissible() {
            return Err(Error::Domain("initial guess is not admissible".into()));
        }
        Ok(())
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iter: usize,
    pub residual: f64,
    /// `‖∂Φ(g_k)*(u^δ − Φ(g_k))‖_{M_s}`; zero on the final row.
    pub grad_norm: f64,
    pub step: f64,
    /// `‖Φ(g_k) − Φ(g_{k−1}) − ∂Φ(g_{k−1})(g_k − g_{k−1})‖ / ‖Φ(g_k) − Φ(g_{k−1})‖`; NaN on row 0.
    pub cone_sample: f64,
    /// `‖g_k − g†‖_{M_s}` when a reference process is supplied.
    pub error: Option<f64>,
    pub wallclock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Discrepancy,
    MaxIterations,
    ForwardFailure(String),
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct LandweberHistory {
    pub records: Vec<IterateRecord>,
    /// Coefficients of every iterate, `iterates[k]` belonging to `records[k]`.
    pub iterates: Vec<Vec<f64>>,
    pub termination: Termination,
    pub step: f64,
    pub warnings: Vec<String>,
}

impl LandweberHistory {
    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    /// Iteration at which the discrepancy principle stopped the run.
    pub fn stopping_index(&self) -> Option<usize> {
        (self.termination == Termination::Discrepancy).then(|| self.records.len() - 1)
    }
}

/// Largest singular value of `∂Φ(g)` in the `M_s` geometry by power iteration.
pub fn power_norm(lin: &Linearization, gram: &ParameterGram, iterations: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..lin.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = gram.norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let w = lin.normal(gram, &v)?;
        let lambda = gram.inner(&v, &w);
        let norm = gram.norm(&w);
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w.iter().map(|x| x / norm).collect();
        let next = lambda.max(0.0).sqrt();
        if (next - estimate).abs() <= 1e-12 * next {
            return Ok(next);
        }
        estimate = next;
    }
    Ok(estimate)
}

fn process_error(gram: &ParameterGram, coeffs: &[f64], truth: Option<&DamageProcess>) -> Option<f64> {
    truth.map(|t| {
        let d: Vec<f64> = coeffs.iter().zip(&t.coeffs).map(|(a, b)| a - b).collect();
        gram.norm(&d)
    })
}

/// Projected Landweber iteration `g_{k+1} = P(g_k + ω ∂Φ(g_k)*(u^δ − Φ(g_k)))`.
///
/// When `truth` is given the parameter error is tracked per iteration.
pub fn landweber_run(problem: &ForwardProblem, cfg: &LandweberConfig, meas: &Measurement, truth: Option<&DamageProcess>) -> Result<LandweberHistory> {
    cfg.validate()?;
    if meas.data.len() != problem.data_len() {
        return Err(Error::Shape(format!("measurement has {} entries, expected {}", meas.data.len(), problem.data_len())));
    }
    if !(meas.delta >= 0.0) {
        return Err(Error::Config(format!("noise level must be >= 0, got {}", meas.delta)));
    }
    let clock = Instant::now();
    let elapsed = || if cfg.timing { clock.elapsed().as_secs_f64() } else { 0.0 };
    let gram = build_parameter_gram(&cfg.start.basis, cfg.s)?;
    let mut g = cfg.start.clone();
    let mut history = LandweberHistory { records: Vec::new(), iterates: Vec::new(), termination: Termination::MaxIterations, step: 0.0, warnings: Vec::new() };
    let mut state = picard_forward_solve(problem, &g, &cfg.forward)?;
    let step = match cfg.step {
        Some(w) => w,
        None => {
            let lin = Linearization::new(problem, &g, &state)?;
            let sigma = power_norm(&lin, &gram, 200, 0x5eed)?;
            if !(sigma > 0.0) {
                return Err(Error::Numerical("linearized operator vanishes at the initial guess".into()));
            }
            0.9 / (sigma * sigma)
        }
    };
    history.step = step;
    // data, linearization and coefficient step of the previous iterate
    let mut previous: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for k in 0..=cfg.max_iter {
        let phi = state.data();
        let r: Vec<f64> = meas.data.iter().zip(&phi).map(|(a, b)| a - b).collect();
        let residual = problem.data_norm(&r);
        let cone_sample = match &previous {
            Some((phi_old, dphi_step, _)) => {
                let diff: Vec<f64> = phi.iter().zip(phi_old).map(|(a, b)| a - b).collect();
                let rem: Vec<f64> = diff.iter().zip(dphi_step).map(|(a, b)| a - b).collect();
                let den = problem.data_norm(&diff);
                if den > 0.0 { problem.data_norm(&rem) / den } else { f64::NAN }
            }
            None => f64::NAN,
        };
        let mut record = IterateRecord { iter: k, residual, grad_norm: f64::NAN, step, cone_sample, error: process_error(&gram, &g.coeffs, truth), wallclock: 0.0 };
        history.iterates.push(g.coeffs.clone());
        if !residual.is_finite() {
            record.wallclock = elapsed();
            history.records.push(record);
            history.termination = Termination::NonFinite;
            return Ok(history);
        }
        if k > 0 && k <= 5 && residual > history.records[k - 1].residual {
            let msg = format!("residual increased at iteration {k} ({:.6e} -> {residual:.6e}); the step size {step:.3e} may violate the step restriction", history.records[k - 1].residual);
            log::warn!("{msg}");
            history.warnings.push(msg);
        }
        if !cfg.run_to_cap && discrepancy_stop(residual, meas.delta, cfg.tau) {
            record.wallclock = elapsed();
            history.records.push(record);
            history.termination = Termination::Discrepancy;
            return Ok(history);
        }
        if k == cfg.max_iter {
            record.wallclock = elapsed();
            history.records.push(record);
            break;
        }
        let lin = Linearization::new(problem, &g, &state)?;
        let grad = lin.adjoint(&gram, &r)?;
        record.grad_norm = gram.norm(&grad);
        if !record.grad_norm.is_finite() {
            record.wallclock = elapsed();
            history.records.push(record);
            history.termination = Termination::NonFinite;
            return Ok(history);
        }
        let mut next = g.coeffs.clone();
        axpy(step, &grad, &mut next);
        let next = project_admissible(&g.with_coeffs(next));
        let delta: Vec<f64> = next.coeffs.iter().zip(&g.coeffs).map(|(a, b)| a - b).collect();
        let dphi_step = lin.apply(&delta)?;
        drop(lin);
        previous = Some((phi, dphi_step, delta));
        record.wallclock = elapsed();
        history.records.push(record);
        g = next;
        state = match picard_forward_solve(problem, &g, &cfg.forward) {
            Ok(s) => s,
            Err(e) => {
                history.iterates.push(g.coeffs.clone());
                history.termination = Termination::ForwardFailure(e.to_string());
                return Ok(history);
            }
        };
    }
    Ok(history)
}

/// Sampled tangential-cone ratios at one perturbation scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeReport {
    pub scale: f64,
    /// `‖Φ(g+h) − Φ(g) − ∂Φ(g)h‖ / (‖h‖_{M_s} ‖Φ(g+h) − Φ(g)‖)` per retained sample.
    pub ratios: Vec<f64>,
    /// `η = ratio · ‖h‖_{M_s}` per retained sample.
    pub etas: Vec<f64>,
    pub skipped: usize,
}

impl ConeReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_eta(&self) -> f64 {
        self.etas.iter().copied().fold(0.0, f64::max)
    }
}

/// Samples random admissible perturbations `h = P(g + scale·g_max·ξ/‖ξ‖_∞) − g`.
pub fn cone_constant_estimate(
    problem: &ForwardProblem,
    g: &DamageProcess,
    gram: &ParameterGram,
    cfg: &ForwardConfig,
    trials: usize,
    scale: f64,
    seed: u64,
) -> Result<ConeReport> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("perturbation scale must be positive, got {scale}")));
    }
    let state = picard_forward_solve(problem, g, cfg)?;
    let base = state.data();
    let lin = Linearization::new(problem, g, &state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<Vec<f64>> = (0..trials)
        .map(|_| {
            let xi: Vec<f64> = (0..g.coeffs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = max_abs(&xi);
            let moved = g.with_coeffs(g.coeffs.iter().zip(&xi).map(|(c, x)| c + scale * g.bound * x / m).collect());
            let moved = project_admissible(&moved);
            moved.coeffs.iter().zip(&g.coeffs).map(|(a, b)| a - b).collect()
        })
        .collect();
    let samples = problem.exec.try_map(trials, |i| -> Result<Option<(f64, f64)>> {
        let h = &directions[i];
        let hnorm = gram.norm(h);
        if hnorm == 0.0 {
            return Ok(None);
        }
        let gp = g.with_coeffs(g.coeffs.iter().zip(h).map(|(a, b)| a + b).collect());
        let up = picard_forward_solve(problem, &gp, cfg)?.data();
        let dphi = lin.apply(h)?;
        let diff: Vec<f64> = up.iter().zip(&base).map(|(a, b)| a - b).collect();
        let den = problem.data_norm(&diff);
        if den == 0.0 {
            return Ok(None);
        }
        let rem: Vec<f64> = diff.iter().zip(&dphi).map(|(a, b)| a - b).collect();
        let eta = problem.data_norm(&rem) / den;
        Ok(Some((eta / hnorm, eta)))
    })?;
    let mut report = ConeReport { scale, ratios: Vec::new(), etas: Vec::new(), skipped: 0 };
    for s in samples {
        match s {
            Some((ratio, eta)) => {
                report.ratios.push(ratio);
                report.etas.push(eta);
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}

/// Leading singular values of `∂Φ(g)` in the `M_s` geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Non-increasing singular values.
    pub values: Vec<f64>,
    /// Ritz residual bounds `‖N v − θ v‖_{M_s}` per value.
    pub residuals: Vec<f64>,
    /// Lanczos steps taken.
    pub steps: usize,
}

/// Lanczos with full reorthogonalization on `∂Φ*∂Φ` (self-adjoint in `M_s`).
pub fn spectrum_probe(lin: &Linearization, gram: &ParameterGram, k: usize, seed: u64) -> Result<SpectrumReport> {
    let p = lin.param_len();
    if k < 1 || k > p {
        return Err(Error::Config(format!("requested {k} singular values of a {p}-parameter operator")));
    }
    let max_steps = p.min((3 * k).max(k + 30));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_unit = |basis: &[Vec<f64>]| -> Vec<f64> {
        let mut v: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for b in basis {
                let c = gram.inner(&v, b);
                axpy(-c, b, &mut v);
            }
        }
        let n = gram.norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let mut basis: Vec<Vec<f64>> = vec![random_unit(&[])];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last_beta = 0.0;
    let mut scale = 0.0f64;
    for j in 0..max_steps {
        let v = basis[j].clone();
        let mut w = lin.normal(gram, &v)?;
        let a = gram.inner(&w, &v);
        alpha.push(a);
        scale = scale.max(a.abs());
        axpy(-a, &v, &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        for _ in 0..2 {
            for b in &basis {
                let c = gram.inner(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let b = gram.norm(&w);
        last_beta = b;
        if j + 1 == max_steps {
            break;
        }
        if b <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            // invariant subspace found; continue in its complement
            beta.push(0.0);
            let fresh = random_unit(&basis);
            basis.push(fresh);
        } else {
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
    }
    let m = alpha.len();
    let mut t = nalgebra::DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], (last_beta * eig.eigenvectors[(m - 1, i)]).abs()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.truncate(k);
    Ok(SpectrumReport {
        values: pairs.iter().map(|(v, _)| v.max(0.0).sqrt()).collect(),
        residuals: pairs.iter().map(|(_, r)| *r).collect(),
        steps: m,
    })
}

/// Error curve `‖g_k − g†‖_{M_s}` of a run without discrepancy stopping.
#[derive(Debug, Clone)]
pub struct SemiconvergenceReport {
    pub errors: Vec<f64>,
    pub residuals: Vec<f64>,
    /// First iteration satisfying the discrepancy principle, if any.
    pub discrepancy_index: Option<usize>,
    pub history: LandweberHistory,
}

impl SemiconvergenceReport {
    pub fn argmin(&self) -> usize {
        self.errors.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
    }

    /// The minimum lies strictly inside the run and the error grows afterwards.
    pub fn has_interior_minimum(&self) -> bool {
        let k = self.argmin();
        k > 0 && k + 1 < self.errors.len() && self.errors[self.errors.len() - 1] > self.errors[k]
    }
}

pub fn semiconvergence_probe(problem: &ForwardProblem, cfg: &LandweberConfig, meas: &Measurement, truth: &DamageProcess) -> Result<SemiconvergenceReport> {
    let cfg = LandweberConfig { run_to_cap: true, ..cfg.clone() };
    let history = landweber_run(problem, &cfg, meas, Some(truth))?;
    let errors = history.records.iter().map(|r| r.error.unwrap_or(f64::NAN)).collect();
    let residuals = history.residuals();
    let discrepancy_index = residuals.iter().position(|&r| discrepancy_stop(r, meas.delta, cfg.tau));
    Ok(SemiconvergenceReport { errors, residuals, discrepancy_index, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{self, InversionSize};
    use crate::Exec;

    #[test]
    fn discrepancy_rule() {
        assert!(discrepancy_stop(0.1, 0.1, 1.5));
        assert!(!discrepancy_stop(0.2, 0.1, 1.5));
        assert!(discrepancy_stop(1e-12, 0.0, 1.5));
        assert!(!discrepancy_stop(1e-9, 0.0, 1.5));
    }

    fn setup() -> presets::InversionSetup {
        presets::twin_inversion(InversionSize::SMALL, Exec::Serial).unwrap()
    }

    #[test]
    fn exact_start_stops_immediately() {
        let s = setup();
        let data = picard_forward_solve(&s.problem, &s.truth, &ForwardConfig::default()).unwrap().data();
        let cfg = LandweberConfig { step: Some(1.0), ..LandweberConfig::new(s.truth.clone(), s.s) };
        let h = landweber_run(&s.problem, &cfg, &Measurement::exact(data), None).unwrap();
        assert_eq!(h.termination, Termination::Discrepancy);
        assert_eq!(h.records.len(), 1);
        assert!(h.records[0].residual <= NOISELESS_FLOOR);
    }

    #[test]
    fn noise_has_exact_level_and_is_reproducible() {
        let s = setup();
        let clean = picard_forward_solve(&s.problem, &s.truth, &ForwardConfig::default()).unwrap().data();
        let a = Measurement::synthesize(&s.problem, &clean, 0.01, 7).unwrap();
        let b = Measurement::synthesize(&s.problem, &clean, 0.01, 7).unwrap();
        assert_eq!(a, b);
        let rel = a.delta / s.problem.data_norm(&clean);
        assert!((rel - 0.01).abs() <= 1e-12, "{rel}");
        let zero = Measurement::synthesize(&s.problem, &clean, 0.0, 7).unwrap();
        assert_eq!(zero.data, clean);
        assert_eq!(zero.delta, 0.0);
    }

    #[test]
    fn overlarge_step_triggers_warning() {
        let s = setup();
        let clean = picard_forward_solve(&s.problem, &s.truth, &ForwardConfig::default()).unwrap().data();
        let meas = Measurement::synthesize(&s.problem, &clean, 0.001, 1).unwrap();
        let base = LandweberConfig { max_iter: 6, ..LandweberConfig::new(s.start.clone(), s.s) };
        let tuned = landweber_run(&s.problem, &base, &meas, None).unwrap();
        assert!(tuned.warnings.is_empty(), "{:?}", tuned.warnings);
        let cfg = LandweberConfig { step: Some(tuned.step * 40.0), ..base };
        let h = landweber_run(&s.problem, &cfg, &meas, None).unwrap();
        assert!(!h.warnings.is_empty());
    }

    #[test]
    fn lanczos_matches_power_iteration() {
        let s = setup();
        let state = picard_forward_solve(&s.problem, &s.truth, &ForwardConfig::default()).unwrap();
        let lin = Linearization::new(&s.problem, &s.truth, &state).unwrap();
        let gram = build_parameter_gram(&s.basis, s.s).unwrap();
        let power = power_norm(&lin, &gram, 500, 3).unwrap();
        let spec = spectrum_probe(&lin, &gram, 5, 4).unwrap();
        assert!((spec.values[0] - power).abs() <= 1e-6 * power, "{} vs {power}", spec.values[0]);
        assert!(spec.values.windows(2).all(|w| w[0] >= w[1]));
        let one = spectrum_probe(&lin, &gram, 1, 4).unwrap();
        assert!((one.values[0] - power).abs() <= 1e-6 * power);
    }

    #[test]
    fn iterates_stay_admissible() {
        let s = setup();
        let clean = picard_forward_solve(&s.problem, &s.truth, &ForwardConfig::default()).unwrap().data();
        let meas = Measurement::synthesize(&s.problem, &clean, 0.01, 2).unwrap();
        let cfg = LandweberConfig { max_iter: 10, step: None, ..LandweberConfig::new(s.start.clone(), s.s) };
        let h = landweber_run(&s.problem, &cfg, &meas, Some(&s.truth)).unwrap();
        for it in &h.iterates {
            assert!(it.iter().all(|&c| (0.0..=s.start.bound).contains(&c)));
        }
        assert!(h.records.iter().all(|r| r.error.is_some()));
    }

    #[test]
    fn noiseless_error_never_increases() {
        let s = setup();
        let clean = picard_forward_solve(&s.problem, &s.truth, &ForwardConfig::default()).unwrap().data();
        let cfg = LandweberConfig { max_iter: 40, ..LandweberConfig::new(s.start.clone(), s.s) };
        let report = semiconvergence_probe(&s.problem, &cfg, &Measurement::exact(clean), &s.truth).unwrap();
        assert_eq!(report.errors.len(), 41);
        assert!(report.errors.windows(2).all(|w| w[1] <= w[0]), "{:?}", report.errors);
        assert!(!report.has_interior_minimum());
    }
}

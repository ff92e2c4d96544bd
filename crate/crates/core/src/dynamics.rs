//! Iterating the gradient descent map and classifying the outcome.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::SpectrumReport;
use crate::model::{Architecture, DataBatch, ParamVector, DEFAULT_HESSIAN_CAP};

/// Consecutive quiet iterations (small gradient and small step) required
/// before a run is declared converged.
pub const CONVERGENCE_STREAK: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub eta: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub diverge_norm: f64,
    pub diverge_loss: f64,
    pub record_every: usize,
    pub cycle_window: usize,
    pub cycle_tol: f64,
    /// Record the sharpness with every sample (dense eigensolve up to the
    /// Hessian cap, power iteration beyond it).
    pub track_sharpness: bool,
}

impl RunConfig {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            max_iters: 100_000,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            diverge_norm: 1e8,
            diverge_loss: 1e12,
            record_every: 100,
            cycle_window: 2000,
            cycle_tol: 1e-7,
            track_sharpness: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("diverge_norm", self.diverge_norm),
            ("diverge_loss", self.diverge_loss),
            ("cycle_tol", self.cycle_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("run_cfg.{name}"), "must be positive and finite"));
            }
        }
        for (name, v) in
            [("max_iters", self.max_iters), ("record_every", self.record_every), ("cycle_window", self.cycle_window)]
        {
            if v == 0 {
                return Err(Error::config(format!("run_cfg.{name}"), "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    Converged,
    Diverged,
    /// Bounded orbit revisiting an earlier state; `period` is the smallest lag
    /// at which the revisit was seen.
    Cycling {
        period: usize,
    },
    BudgetExhausted,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::Cycling { .. } => "cycling",
            Verdict::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub sharpness: Option<f64>,
    pub theta_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub verdict: Verdict,
    pub iterations_used: usize,
    pub samples: Vec<Sample>,
    pub final_theta: ParamVector,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        self.verdict == Verdict::Converged
    }
}

/// Plain gradient descent `theta <- theta - eta grad L(theta)`.
pub fn run_gd(arch: &Architecture, theta0: &ParamVector, data: &DataBatch, cfg: &RunConfig) -> Result<RunRecord> {
    run_gd_observed(arch, theta0, data, cfg, |_, _| {})
}

/// [`run_gd`] calling `observe(iteration, theta)` for every iterate, starting
/// with `theta0`.
pub fn run_gd_observed(
    arch: &Architecture,
    theta0: &ParamVector,
    data: &DataBatch,
    cfg: &RunConfig,
    observe: impl FnMut(usize, &ParamVector),
) -> Result<RunRecord> {
    let eta = cfg.eta;
    drive(arch, theta0, data, cfg, observe, |theta, full_grad| Ok(theta.axpy(-eta, full_grad)))
}

/// Minibatch SGD: every epoch draws a permutation from `rng` and takes one
/// step per consecutive batch. Convergence and divergence are judged on the
/// full-batch gradient at the start of each epoch. With `batch_size >= n`
/// every epoch is a single full-batch step, identical to [`run_gd`].
pub fn run_sgd<R: Rng>(
    arch: &Architecture,
    theta0: &ParamVector,
    data: &DataBatch,
    cfg: &RunConfig,
    batch_size: usize,
    rng: &mut R,
) -> Result<RunRecord> {
    run_sgd_observed(arch, theta0, data, cfg, batch_size, rng, |_, _| {})
}

/// [`run_sgd`] calling `observe(epoch, theta)` at the start of every epoch.
pub fn run_sgd_observed<R: Rng>(
    arch: &Architecture,
    theta0: &ParamVector,
    data: &DataBatch,
    cfg: &RunConfig,
    batch_size: usize,
    rng: &mut R,
    observe: impl FnMut(usize, &ParamVector),
) -> Result<RunRecord> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::config("batch_size", format!("must be in 1..={}", data.len())));
    }
    let eta = cfg.eta;
    if batch_size == data.len() {
        return drive(arch, theta0, data, cfg, observe, |theta, full_grad| Ok(theta.axpy(-eta, full_grad)));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    drive(arch, theta0, data, cfg, observe, |theta, _| {
        order.shuffle(rng);
        let mut theta = theta.clone();
        for chunk in order.chunks(batch_size) {
            let g = arch.gradient(&theta, &data.select(chunk))?;
            theta = theta.axpy(-eta, &g);
        }
        Ok(theta)
    })
}

fn drive(
    arch: &Architecture,
    theta0: &ParamVector,
    data: &DataBatch,
    cfg: &RunConfig,
    mut observe: impl FnMut(usize, &ParamVector),
    mut epoch: impl FnMut(&ParamVector, &ParamVector) -> Result<ParamVector>,
) -> Result<RunRecord> {
    cfg.validate()?;
    if theta0.len() != arch.param_count() {
        return Err(Error::ParamLength { expected: arch.param_count(), got: theta0.len() });
    }
    let burn_in = cfg.max_iters / 2;
    let mut window: VecDeque<ParamVector> = VecDeque::new();
    let mut samples = Vec::new();
    let mut streak = 0usize;
    let mut theta = theta0.clone();

    let sample = |iter: usize, loss: f64, grad_norm: f64, theta: &ParamVector| Sample {
        iter,
        loss,
        grad_norm,
        sharpness: if cfg.track_sharpness && loss.is_finite() { sharpness(arch, theta, data).ok() } else { None },
        theta_norm: theta.norm(),
    };

    for k in 0..cfg.max_iters {
        observe(k, &theta);
        let (loss, grad) = arch.loss_and_gradient(&theta, data)?;
        let grad_norm = grad.norm();
        let theta_norm = theta.norm();
        let finite = loss.is_finite() && grad_norm.is_finite() && theta_norm.is_finite();
        if !finite || theta_norm > cfg.diverge_norm || loss > cfg.diverge_loss {
            samples.push(Sample { iter: k, loss, grad_norm, sharpness: None, theta_norm });
            return Ok(RunRecord { verdict: Verdict::Diverged, iterations_used: k, samples, final_theta: theta });
        }
        if k % cfg.record_every == 0 {
            samples.push(sample(k, loss, grad_norm, &theta));
        }
        let next = epoch(&theta, &grad)?;
        let step = next.distance(&theta);
        if grad_norm < cfg.grad_tol && step < cfg.step_tol {
            streak += 1;
            if streak >= CONVERGENCE_STREAK {
                if samples.last().is_none_or(|s| s.iter != k) {
                    samples.push(sample(k, loss, grad_norm, &theta));
                }
                return Ok(RunRecord { verdict: Verdict::Converged, iterations_used: k, samples, final_theta: theta });
            }
        } else {
            streak = 0;
        }
        if k >= burn_in {
            if window.len() == cfg.cycle_window {
                window.pop_front();
            }
            window.push_back(theta.clone());
            let since = k - burn_in + 1;
            if window.len() == cfg.cycle_window && since.is_multiple_of(cfg.cycle_window) {
                if let Some(period) = smallest_revisit_lag(&window, cfg.cycle_tol) {
                    if period >= 2 {
                        if samples.last().is_none_or(|s| s.iter != k) {
                            samples.push(sample(k, loss, grad_norm, &theta));
                        }
                        return Ok(RunRecord {
                            verdict: Verdict::Cycling { period },
                            iterations_used: k,
                            samples,
                            final_theta: theta,
                        });
                    }
                }
            }
        }
        theta = next;
    }
    let (loss, grad) = arch.loss_and_gradient(&theta, data)?;
    samples.push(sample(cfg.max_iters, loss, grad.norm(), &theta));
    Ok(RunRecord { verdict: Verdict::BudgetExhausted, iterations_used: cfg.max_iters, samples, final_theta: theta })
}

/// Smallest lag `p` such that the newest state is within `tol` of the state
/// `p` steps earlier.
fn smallest_revisit_lag(window: &VecDeque<ParamVector>, tol: f64) -> Option<usize> {
    let newest = window.back()?;
    window.iter().rev().skip(1).position(|old| old.distance(newest) < tol).map(|i| i + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    MinimumWeaklyStable,
    MinimumUnstable,
    Saddle,
    NonCritical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointClass {
    pub kind: CriticalKind,
    pub grad_norm: f64,
    pub lambda_max: Option<f64>,
    pub lambda_min_nonzero: Option<f64>,
    /// `lambda_min_nonzero <= 2 / eta` (the weak-stability criterion).
    pub weakly_stable_minnz: Option<bool>,
    /// `lambda_max > 2 / eta`, the hypothesis used for instability of all minima.
    pub sharpness_exceeds: Option<bool>,
}

/// Classifies `theta` as a critical point of `L` for step-size `eta`, using
/// the Hessian spectrum (the linearization of the map is `I - eta H`).
pub fn classify_fixed_point(
    arch: &Architecture,
    theta: &ParamVector,
    data: &DataBatch,
    eta: f64,
    grad_tol: f64,
) -> Result<CriticalPointClass> {
    let grad_norm = arch.gradient(theta, data)?.norm();
    if !(grad_norm < grad_tol) {
        return Ok(CriticalPointClass {
            kind: CriticalKind::NonCritical,
            grad_norm,
            lambda_max: None,
            lambda_min_nonzero: None,
            weakly_stable_minnz: None,
            sharpness_exceeds: None,
        });
    }
    let spec = SpectrumReport::from_symmetric(arch.hessian(theta, data)?)?;
    let threshold = 2.0 / eta;
    let weakly = spec.lambda_min_nonzero.is_none_or(|l| l <= threshold);
    let kind = if spec.n_negative > 0 {
        CriticalKind::Saddle
    } else if weakly {
        CriticalKind::MinimumWeaklyStable
    } else {
        CriticalKind::MinimumUnstable
    };
    Ok(CriticalPointClass {
        kind,
        grad_norm,
        lambda_max: Some(spec.lambda_max),
        lambda_min_nonzero: spec.lambda_min_nonzero,
        weakly_stable_minnz: Some(weakly),
        sharpness_exceeds: Some(spec.lambda_max > threshold),
    })
}

/// Largest Hessian eigenvalue: dense eigensolve up to the default cap,
/// power iteration on finite-difference Hessian-vector products beyond it.
pub fn sharpness(arch: &Architecture, theta: &ParamVector, data: &DataBatch) -> Result<f64> {
    if arch.param_count() <= DEFAULT_HESSIAN_CAP {
        Ok(SpectrumReport::from_symmetric(arch.hessian(theta, data)?)?.lambda_max)
    } else {
        Ok(sharpness_power(arch, theta, data)?.value)
    }
}

pub fn sharpness_power(arch: &Architecture, theta: &ParamVector, data: &DataBatch) -> Result<PowerResult> {
    let scale = 1e-5 * (1.0 + theta.norm());
    let hvp = |v: &DVector<f64>| -> DVector<f64> {
        let dir = ParamVector(v.iter().copied().collect());
        let plus = arch.gradient(&theta.axpy(scale, &dir), data);
        let minus = arch.gradient(&theta.axpy(-scale, &dir), data);
        match (plus, minus) {
            (Ok(p), Ok(m)) => {
                DVector::from_iterator(v.len(), p.0.iter().zip(&m.0).map(|(a, b)| (a - b) / (2.0 * scale)))
            }
            _ => DVector::from_element(v.len(), f64::NAN),
        }
    };
    largest_eigenvalue(hvp, arch.param_count(), 1e-7, 10_000)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub value: f64,
    /// `|Hv - lambda v| / |lambda|` at the returned unit vector.
    pub residual: f64,
    pub iterations: usize,
}

/// Largest (algebraic) eigenvalue of a symmetric operator by power iteration.
/// Plain iteration is tried first; if it settles on a negative eigenvalue or
/// fails to converge, the operator is shifted by its estimated spectral radius.
pub fn largest_eigenvalue(
    op: impl Fn(&DVector<f64>) -> DVector<f64>,
    dim: usize,
    residual_tol: f64,
    max_iters: usize,
) -> Result<PowerResult> {
    let start = DVector::from_fn(dim, |i, _| 1.0 + 0.37 * ((i * 7919 % 101) as f64 / 101.0));
    let plain = power(&op, 0.0, &start, residual_tol, max_iters / 2);
    if let Ok(r) = plain {
        if r.value >= 0.0 {
            return Ok(r);
        }
    }
    // spectral radius from a short unshifted run
    let mut v = start.normalize();
    let mut radius: f64 = 0.0;
    for _ in 0..50 {
        let w = op(&v);
        radius = radius.max(w.norm());
        if w.norm() == 0.0 {
            break;
        }
        v = w.normalize();
    }
    let shift = 1.5 * radius + f64::MIN_POSITIVE;
    power(&op, shift, &start, residual_tol, max_iters - max_iters / 2)
        .map(|r| PowerResult { iterations: r.iterations + max_iters / 2, ..r })
}

fn power(
    op: &impl Fn(&DVector<f64>) -> DVector<f64>,
    shift: f64,
    start: &DVector<f64>,
    residual_tol: f64,
    max_iters: usize,
) -> Result<PowerResult> {
    let mut v = start.normalize();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let hv = op(&v);
        if hv.iter().any(|x| !x.is_finite()) {
            return Err(Error::PowerIterationStagnated { iterations: it, residual: f64::NAN });
        }
        let lambda = v.dot(&hv);
        let scale = lambda.abs().max(f64::MIN_POSITIVE);
        residual = (&hv - &v * lambda).norm() / scale;
        if residual < residual_tol || hv.norm() == 0.0 {
            return Ok(PowerResult { value: lambda, residual, iterations: it });
        }
        let shifted = hv + &v * shift;
        let n = shifted.norm();
        if n == 0.0 {
            return Ok(PowerResult { value: lambda, residual, iterations: it });
        }
        v = shifted / n;
    }
    Err(Error::PowerIterationStagnated { iterations: max_iters, residual })
}

/// Dense operator helper for [`largest_eigenvalue`].
pub fn dense_operator(h: &DMatrix<f64>) -> impl Fn(&DVector<f64>) -> DVector<f64> + '_ {
    move |v| h * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::substream;
    use approx::assert_relative_eq;

    fn two_neuron() -> (Architecture, DataBatch) {
        (Architecture::two_neuron(), DataBatch::scalar_pair(1.0, 1.0))
    }

    #[test]
    fn fixed_point_converges_without_moving() {
        let (a, d) = two_neuron();
        let theta: ParamVector = vec![1.0, 1.0].into();
        let rec = run_gd(&a, &theta, &d, &RunConfig::new(0.9)).unwrap();
        assert_eq!(rec.verdict, Verdict::Converged);
        assert_eq!(rec.final_theta, theta);
    }

    #[test]
    fn converging_regime_lands_on_weakly_stable_minimum() {
        let (a, d) = two_neuron();
        let rec = run_gd(&a, &vec![1.6, 2.0].into(), &d, &RunConfig::new(0.4)).unwrap();
        assert_eq!(rec.verdict, Verdict::Converged);
        let (x, y) = (rec.final_theta.0[0], rec.final_theta.0[1]);
        assert!((x * y - 1.0).abs() < 1e-6);
        assert!(x * x + y * y <= 5.0 + 1e-6);
    }

    #[test]
    fn large_step_orbit_is_bounded_and_not_converged() {
        let (a, d) = two_neuron();
        let mut max_norm: f64 = 0.0;
        let rec = run_gd_observed(&a, &vec![1.1, 0.809].into(), &d, &RunConfig::new(1.1), |_, t| {
            max_norm = max_norm.max(t.norm())
        })
        .unwrap();
        assert_ne!(rec.verdict, Verdict::Converged);
        assert!(matches!(rec.verdict, Verdict::Cycling { .. }), "{:?}", rec.verdict);
        assert!(max_norm < 10.0);
    }

    #[test]
    fn huge_step_diverges() {
        let (a, d) = two_neuron();
        let rec = run_gd(&a, &vec![3.0, 2.0].into(), &d, &RunConfig::new(2.0)).unwrap();
        assert_eq!(rec.verdict, Verdict::Diverged);
    }

    #[test]
    fn budget_exhaustion() {
        let (a, d) = two_neuron();
        let mut cfg = RunConfig::new(1e-3);
        cfg.max_iters = 50;
        let rec = run_gd(&a, &vec![0.2, 0.3].into(), &d, &cfg).unwrap();
        assert_eq!(rec.verdict, Verdict::BudgetExhausted);
        assert!(rec.samples.windows(2).all(|w| w[0].iter < w[1].iter));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (a, d) = two_neuron();
        let mut cfg = RunConfig::new(0.1);
        cfg.grad_tol = 0.0;
        assert!(matches!(run_gd(&a, &vec![0.2, 0.3].into(), &d, &cfg), Err(Error::Config { .. })));
        assert!(run_gd(&a, &vec![0.2, 0.3].into(), &d, &RunConfig::new(-1.0)).is_err());
    }

    #[test]
    fn full_batch_sgd_matches_gd() {
        let a = Architecture::linear(vec![2, 2, 1]).unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -0.3, 0.2, -1.0, 0.8]);
        let y = DMatrix::from_row_slice(1, 3, &[0.5, -0.2, 0.9]);
        let d = DataBatch::new(x, y).unwrap();
        let theta: ParamVector = vec![0.3, -0.1, 0.4, 0.2, 0.5, -0.6].into();
        let mut cfg = RunConfig::new(0.05);
        cfg.max_iters = 3000;
        cfg.record_every = 7;
        let gd = run_gd(&a, &theta, &d, &cfg).unwrap();
        let sgd = run_sgd(&a, &theta, &d, &cfg, 3, &mut substream(1, 0)).unwrap();
        assert_eq!(gd, sgd);
    }

    #[test]
    fn sgd_is_deterministic_per_seed() {
        let a = Architecture::linear(vec![2, 1]).unwrap();
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, -0.3, 0.1, 0.2, -1.0, 0.8, 0.4]);
        let y = DMatrix::from_row_slice(1, 4, &[0.5, -0.2, 0.9, 0.1]);
        let d = DataBatch::new(x, y).unwrap();
        let cfg = RunConfig { max_iters: 200, ..RunConfig::new(0.1) };
        let r1 = run_sgd(&a, &vec![0.0, 0.0].into(), &d, &cfg, 2, &mut substream(9, 3)).unwrap();
        let r2 = run_sgd(&a, &vec![0.0, 0.0].into(), &d, &cfg, 2, &mut substream(9, 3)).unwrap();
        assert_eq!(r1, r2);
        assert!(run_sgd(&a, &vec![0.0, 0.0].into(), &d, &cfg, 5, &mut substream(9, 3)).is_err());
    }

    #[test]
    fn fixed_point_classes() {
        let (a, d) = two_neuron();
        let one: ParamVector = vec![1.0, 1.0].into();
        let c = classify_fixed_point(&a, &one, &d, 0.4, 1e-8).unwrap();
        assert_eq!(c.kind, CriticalKind::MinimumWeaklyStable);
        assert_eq!(c.sharpness_exceeds, Some(false));
        let c = classify_fixed_point(&a, &one, &d, 1.1, 1e-8).unwrap();
        assert_eq!(c.kind, CriticalKind::MinimumUnstable);
        assert_eq!(c.sharpness_exceeds, Some(true));
        let c = classify_fixed_point(&a, &vec![0.0, 0.0].into(), &d, 0.4, 1e-8).unwrap();
        assert_eq!(c.kind, CriticalKind::Saddle);
        let c = classify_fixed_point(&a, &vec![1.0, 0.0].into(), &d, 0.4, 1e-8).unwrap();
        assert_eq!(c.kind, CriticalKind::NonCritical);
    }

    #[test]
    fn sharpness_on_the_hyperbola() {
        let (a, d) = two_neuron();
        assert_relative_eq!(sharpness(&a, &vec![1.0, 1.0].into(), &d).unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(sharpness(&a, &vec![2.0, 0.5].into(), &d).unwrap(), 4.25, epsilon = 1e-12);
    }

    #[test]
    fn power_iteration_handles_symmetric_spectrum() {
        // eigenvalues +1 and -1: plain power iteration cannot settle
        let h = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        let r = largest_eigenvalue(dense_operator(&h), 2, 1e-9, 10_000).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-12);
        let h = DMatrix::from_row_slice(2, 2, &[-5.0, 0.0, 0.0, 1.0]);
        let r = largest_eigenvalue(dense_operator(&h), 2, 1e-9, 10_000).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-12);
    }
}

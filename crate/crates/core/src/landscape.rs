//! Geometry of the linear-network loss.
//!
//! For `L = l(W_h ... W_1)` with `l(W) = |Y - WX|^2` the global minima form a
//! smooth manifold `M` of dimension `d_theta - r (d_0 + d_h - r)`, where `r` is
//! the smallest width. This module builds points of `M`, measures Hessian
//! spectra on it and estimates the step-size `eta_E = 2 / inf_M lambda_min_nonzero`
//! beyond which no minimum is weakly stable.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, DataBatch, ParamVector};
use crate::nelder_mead::NelderMead;
use crate::par::{substream, Execution};

/// `X` counts as full rank when `sigma_min(X) > RANK_TOL * sigma_max(X)`.
pub const RANK_TOL: f64 = 1e-10;
/// Relative Frobenius deviation of `XX^T` from `cI` tolerated as "whitened".
pub const WHITENING_TOL: f64 = 1e-8;
/// Cap on the condition number of the random factors used to build minima.
pub const INTERLEAVER_COND_CAP: f64 = 1e3;
/// Default determinant threshold for the non-singularity probe.
pub const DET_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillingClass {
    pub rank_budget: usize,
    pub filling: bool,
}

pub fn classify_architecture(arch: &Architecture) -> Result<FillingClass> {
    if !arch.is_linear() {
        return Err(Error::NotLinear);
    }
    let r = arch.rank_budget();
    Ok(FillingClass { rank_budget: r, filling: r == arch.input_dim().min(arch.output_dim()) })
}

/// `d_theta - r (d_0 + d_h - r)`
pub fn manifold_dimension(arch: &Architecture) -> Result<usize> {
    classify_architecture(arch)?;
    Ok(arch.param_count() - positive_eigenvalue_count(arch))
}

/// Number of positive Hessian eigenvalues at a minimum: `dim M_r = r (d_0 + d_h - r)`.
pub fn positive_eigenvalue_count(arch: &Architecture) -> usize {
    let r = arch.rank_budget();
    r * (arch.input_dim() + arch.output_dim() - r)
}

fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || !(min > RANK_TOL * max) || x.ncols() < x.nrows() {
        // Fewer samples than inputs: the missing singular values are zero.
        let ratio = if max > 0.0 && x.ncols() >= x.nrows() { min / max } else { 0.0 };
        return Err(Error::RankDeficient { ratio });
    }
    Ok(())
}

/// Least-squares minimizer of `W -> |Y - WX|^2`, i.e. the solution of
/// `W (XX^T) = Y X^T`, obtained by a Cholesky solve.
pub fn global_minimizer(data: &DataBatch) -> Result<DMatrix<f64>> {
    check_full_rank(&data.x)?;
    let s = &data.x * data.x.transpose();
    let rhs = &data.x * data.y.transpose();
    let chol = s.cholesky().ok_or(Error::RankDeficient { ratio: 0.0 })?;
    Ok(chol.solve(&rhs).transpose())
}

/// Relative deviation `|XX^T - cI|_F / c` with `c = tr(XX^T) / d_0`.
pub fn whitening_deviation(x: &DMatrix<f64>) -> f64 {
    let s = x * x.transpose();
    let c = s.trace() / s.nrows() as f64;
    (s - DMatrix::identity(x.nrows(), x.nrows()) * c).norm() / c
}

/// Best matrix of rank at most `r`. When `r >= min(d_0, d_h)` this is the
/// global minimizer; otherwise the data must be whitened and the answer is the
/// truncated SVD of the global minimizer.
pub fn rank_constrained_minimizer(data: &DataBatch, r: usize) -> Result<DMatrix<f64>> {
    let w = global_minimizer(data)?;
    let full = data.input_dim().min(data.output_dim());
    if r >= full {
        return Ok(w);
    }
    let deviation = whitening_deviation(&data.x);
    if deviation > WHITENING_TOL {
        return Err(Error::WhiteningRequired { deviation });
    }
    let mut sv: Vec<f64> = w.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv.windows(2).any(|p| (p[0] - p[1]).abs() <= 1e-10 * sv[0]) || sv.iter().any(|&s| s <= 0.0) {
        log::warn!("singular values of the unconstrained minimizer are not distinct and positive: {sv:?}");
    }
    let (u, sigma, vt) = top_singular_triplets(&w, r);
    Ok(u * DMatrix::from_diagonal(&sigma) * vt)
}

/// Top `k` singular triplets, ordered by decreasing singular value.
fn top_singular_triplets(w: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, nalgebra::DVector<f64>, DMatrix<f64>) {
    let svd = w.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(k);
    let u_k = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let vt_k = DMatrix::from_rows(&order.iter().map(|&i| vt.row(i)).collect::<Vec<_>>());
    let s_k = nalgebra::DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    (u_k, s_k, vt_k)
}

/// The minimizer of the loss over the image of the product map of `arch`.
pub fn target_product(arch: &Architecture, data: &DataBatch) -> Result<DMatrix<f64>> {
    let class = classify_architecture(arch)?;
    rank_constrained_minimizer(data, class.rank_budget)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimumPoint {
    pub theta: ParamVector,
    pub residual_gradient_norm: f64,
    pub product_error: f64,
}

/// Factorizations `W* = W_h ... W_1` of a fixed rank-`r` target.
///
/// With `W* = U S^h V^T` (thin SVD, `S = Sigma^{1/h}`) and full-column-rank
/// `P_i` (`d_i x r`) for each hidden layer, the factors
/// `W_1 = P_1 S V^T`, `W_i = P_i S Q_{i-1}`, `W_h = U S Q_{h-1}` multiply to
/// `W*` whenever `Q_i P_i = I_r`. We take `Q_i = P_i^+ + Z_i (I - P_i P_i^+)`.
#[derive(Clone, Debug)]
pub struct MinimumChart {
    arch: Architecture,
    target: DMatrix<f64>,
    u: DMatrix<f64>,
    root: DMatrix<f64>,
    vt: DMatrix<f64>,
}

impl MinimumChart {
    pub fn new(arch: &Architecture, data: &DataBatch) -> Result<Self> {
        let target = target_product(arch, data)?;
        let r = arch.rank_budget();
        let (u, sigma, vt) = top_singular_triplets(&target, r);
        let h = arch.depth() as f64;
        let root = DMatrix::from_diagonal(&sigma.map(|s| s.max(0.0).powf(1.0 / h)));
        Ok(Self { arch: arch.clone(), target, u, root, vt })
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }

    pub fn rank(&self) -> usize {
        self.root.nrows()
    }

    /// Shapes `(d_i, r)` of the hidden-layer interleavers.
    pub fn interleaver_shapes(&self) -> Vec<(usize, usize)> {
        let dims = self.arch.layer_dims();
        dims[1..dims.len() - 1].iter().map(|&d| (d, self.rank())).collect()
    }

    pub fn interleaver_len(&self) -> usize {
        self.interleaver_shapes().iter().map(|(a, b)| a * b).sum()
    }

    /// Interleavers `P_i = [I_r; 0]`, the balanced factorization.
    pub fn balanced_interleavers(&self) -> Vec<DMatrix<f64>> {
        self.interleaver_shapes().into_iter().map(|(d, r)| DMatrix::identity(d, r)).collect()
    }

    /// Parameters for interleavers `p` and kernel components `z` (`z` may be
    /// empty, meaning all zero). Returns `None` when some `P_i` has condition
    /// number above `cond_cap`.
    pub fn point(&self, p: &[DMatrix<f64>], z: &[DMatrix<f64>], cond_cap: f64) -> Option<ParamVector> {
        let h = self.arch.depth();
        if h == 1 {
            return self
                .arch
                .flatten(&crate::model::Layers { weights: vec![self.target.clone()], biases: vec![] })
                .ok();
        }
        let mut left_inverses = Vec::with_capacity(h - 1);
        for (i, pi) in p.iter().enumerate() {
            let svd = pi.clone().svd(true, true);
            let max = svd.singular_values.max();
            let min = svd.singular_values.min();
            if !(min > 0.0) || max / min > cond_cap || !max.is_finite() {
                return None;
            }
            let pinv = svd.pseudo_inverse(0.0).ok()?;
            let q = match z.get(i) {
                Some(zi) => {
                    let proj = DMatrix::identity(pi.nrows(), pi.nrows()) - pi * &pinv;
                    &pinv + zi * proj
                }
                None => pinv,
            };
            left_inverses.push(q);
        }
        let mut weights = Vec::with_capacity(h);
        weights.push(&p[0] * &self.root * &self.vt);
        for i in 1..h - 1 {
            weights.push(&p[i] * &self.root * &left_inverses[i - 1]);
        }
        weights.push(&self.u * &self.root * &left_inverses[h - 2]);
        self.arch.flatten(&crate::model::Layers { weights, biases: vec![] }).ok()
    }

    /// Rebuild interleavers from a flat vector (row-major blocks).
    pub fn interleavers_from_flat(&self, v: &[f64]) -> Vec<DMatrix<f64>> {
        let mut off = 0;
        self.interleaver_shapes()
            .into_iter()
            .map(|(d, r)| {
                let m = DMatrix::from_row_slice(d, r, &v[off..off + d * r]);
                off += d * r;
                m
            })
            .collect()
    }

    pub fn flatten_interleavers(p: &[DMatrix<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for m in p {
            for r in 0..m.nrows() {
                out.extend(m.row(r).iter());
            }
        }
        out
    }

    /// Random interleavers with condition number at most `cond_cap`, plus
    /// random kernel components.
    pub fn random_factors<R: Rng>(&self, rng: &mut R, cond_cap: f64) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut ps = Vec::new();
        let mut zs = Vec::new();
        for (d, r) in self.interleaver_shapes() {
            let p = loop {
                let scale = (rng.random_range(-0.7..0.7f64)).exp() / (d as f64).sqrt();
                let m = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
                let sv = m.singular_values();
                if sv.min() > 0.0 && sv.max() / sv.min() <= cond_cap {
                    break m;
                }
            };
            let zscale = 0.5 / (d as f64).sqrt();
            zs.push(DMatrix::from_fn(r, d, |_, _| rng.sample::<f64, _>(StandardNormal) * zscale));
            ps.push(p);
        }
        (ps, zs)
    }
}

/// A random point of `M`, checked against the minimum tolerances.
pub fn sample_minimum<R: Rng>(arch: &Architecture, data: &DataBatch, rng: &mut R) -> Result<MinimumPoint> {
    let chart = MinimumChart::new(arch, data)?;
    sample_from_chart(&chart, data, rng)
}

pub fn sample_from_chart<R: Rng>(chart: &MinimumChart, data: &DataBatch, rng: &mut R) -> Result<MinimumPoint> {
    const ATTEMPTS: usize = 10;
    for _ in 0..ATTEMPTS {
        let (p, z) = chart.random_factors(rng, INTERLEAVER_COND_CAP);
        let Some(theta) = chart.point(&p, &z, INTERLEAVER_COND_CAP) else { continue };
        if let Some(m) = verify_minimum(chart, data, theta)? {
            return Ok(m);
        }
    }
    Err(Error::MinimumSampling { attempts: ATTEMPTS })
}

fn verify_minimum(chart: &MinimumChart, data: &DataBatch, theta: ParamVector) -> Result<Option<MinimumPoint>> {
    let arch = &chart.arch;
    let product_error = (arch.product_map(&theta)? - &chart.target).norm();
    let residual_gradient_norm = arch.gradient(&theta, data)?.norm();
    let ok =
        product_error < 1e-9 * (1.0 + chart.target.norm()) && residual_gradient_norm < 1e-9 * (1.0 + data.y.norm());
    Ok(ok.then_some(MinimumPoint { theta, residual_gradient_norm, product_error }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub zero_threshold: f64,
    pub n_positive: usize,
    pub n_zero: usize,
    pub n_negative: usize,
    pub lambda_max: f64,
    pub lambda_min_nonzero: Option<f64>,
}

impl SpectrumReport {
    /// Eigen-decomposes a symmetric matrix and counts eigenvalues against the
    /// threshold `tau * max(1, lambda_max)` with `tau = 1e-8 * d`.
    pub fn from_symmetric(h: DMatrix<f64>) -> Result<Self> {
        let d = h.nrows();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigen(format!("non-finite entries in {d}x{d} matrix")));
        }
        let eig = SymmetricEigen::try_new(h, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Eigen(format!("symmetric eigensolver did not converge on a {d}x{d} matrix")))?;
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|a, b| a.total_cmp(b));
        Ok(Self::from_eigenvalues(eigenvalues))
    }

    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Self {
        let d = eigenvalues.len();
        let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);
        let tau = 1e-8 * d as f64;
        let zero_threshold = tau * lambda_max.max(1.0);
        let n_negative = eigenvalues.iter().filter(|&&v| v < -zero_threshold).count();
        let n_positive = eigenvalues.iter().filter(|&&v| v > zero_threshold).count();
        let lambda_min_nonzero = eigenvalues.iter().copied().find(|&v| v > zero_threshold);
        Self {
            n_zero: d - n_negative - n_positive,
            eigenvalues,
            zero_threshold,
            n_positive,
            n_negative,
            lambda_max,
            lambda_min_nonzero,
        }
    }
}

pub fn spectrum_at(arch: &Architecture, theta: &ParamVector, data: &DataBatch) -> Result<SpectrumReport> {
    SpectrumReport::from_symmetric(arch.hessian(theta, data)?)
}

/// Smallest non-zero Hessian eigenvalue at a point of `M`, taken as the
/// smallest of the `r (d_0 + d_h - r)` largest eigenvalues.
fn curvature_on_manifold(arch: &Architecture, theta: &ParamVector, data: &DataBatch) -> Option<f64> {
    let h = arch.hessian(theta, data).ok()?;
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 10_000)?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    let k = positive_eigenvalue_count(arch);
    ev.get(ev.len().checked_sub(k)?).copied()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta_e: f64,
    pub lambda_e: f64,
    pub n_samples: usize,
    /// Running minimum of the refined curvature, one entry per sample.
    pub lambda_running_min: Vec<f64>,
    pub best_theta: ParamVector,
}

/// Estimates `lambda_E = inf_M lambda_min_nonzero` by sampling `n_samples`
/// minima and refining each with Nelder-Mead over the chart's interleavers;
/// returns `eta_E = 2 / lambda_E`.
pub fn eta_e_estimate(
    arch: &Architecture,
    data: &DataBatch,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<EtaEstimate> {
    if n_samples < 1 {
        return Err(Error::config("n_samples", "must be at least 1"));
    }
    let chart = MinimumChart::new(arch, data)?;
    let refined: Vec<Result<(f64, ParamVector)>> = exec.map_indexed(n_samples, |i| {
        let mut rng = substream(seed, i as u64);
        let (p0, _) = chart.random_factors(&mut rng, INTERLEAVER_COND_CAP);
        let x0 = MinimumChart::flatten_interleavers(&p0);
        let objective = |v: &[f64]| {
            chart
                .point(&chart.interleavers_from_flat(v), &[], INTERLEAVER_COND_CAP)
                .and_then(|theta| curvature_on_manifold(arch, &theta, data))
                .unwrap_or(f64::INFINITY)
        };
        let (x, value) = NelderMead { max_evals: 400 * (x0.len() + 1), ..Default::default() }.minimize(objective, &x0);
        let theta = chart
            .point(&chart.interleavers_from_flat(&x), &[], INTERLEAVER_COND_CAP)
            .ok_or(Error::MinimumSampling { attempts: 1 })?;
        if !value.is_finite() {
            return Err(Error::MinimumSampling { attempts: 1 });
        }
        Ok((value, theta))
    });
    let mut running = Vec::with_capacity(n_samples);
    let mut best: Option<(f64, ParamVector)> = None;
    for r in refined {
        let (value, theta) = r?;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, theta));
        }
        running.push(best.as_ref().unwrap().0);
    }
    let (lambda_e, best_theta) = best.expect("n_samples >= 1");
    Ok(EtaEstimate { eta_e: 2.0 / lambda_e, lambda_e, n_samples, lambda_running_min: running, best_theta })
}

/// `lambda_min_nonzero` along the curve of minima obtained from the balanced
/// factorization by multiplying `W_1` by `s` and dividing `W_h` by `s`.
pub fn properness_probe(arch: &Architecture, data: &DataBatch, scales: &[f64]) -> Result<Vec<(f64, f64)>> {
    if arch.depth() < 2 {
        return Err(Error::InvalidArchitecture("the scaling curve needs at least two layers".into()));
    }
    let chart = MinimumChart::new(arch, data)?;
    let base = chart
        .point(&chart.balanced_interleavers(), &[], f64::INFINITY)
        .ok_or(Error::MinimumSampling { attempts: 1 })?;
    let first = 0..arch.weight_offset(1) + arch.layer_dims()[1] * arch.layer_dims()[0];
    let last = arch.weight_offset(arch.depth())..arch.weight_count();
    scales
        .iter()
        .map(|&s| {
            let mut theta = base.clone();
            theta.0[first.clone()].iter_mut().for_each(|v| *v *= s);
            theta.0[last.clone()].iter_mut().for_each(|v| *v /= s);
            let spec = spectrum_at(arch, &theta, data)?;
            let lambda = curvature_on_manifold(arch, &theta, data)
                .or(spec.lambda_min_nonzero)
                .ok_or_else(|| Error::Eigen("no non-zero eigenvalue".into()))?;
            Ok((s, lambda))
        })
        .collect()
}

/// Axis-aligned box in parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::config("box", "bounds have different lengths"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::config("box", "every lower bound must be below its upper bound"));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ParamVector {
        ParamVector(self.lo.iter().zip(&self.hi).map(|(&a, &b)| rng.random_range(a..b)).collect())
    }

    pub fn contains(&self, theta: &ParamVector) -> bool {
        theta.0.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonsingularityReport {
    pub eta: f64,
    pub n_samples: usize,
    pub det_tol: f64,
    pub min_abs_det: f64,
    pub fraction_below_tol: f64,
}

/// `det(I - eta H)` for one parameter value: the Jacobian determinant of the
/// gradient descent map.
pub fn gd_jacobian_det(arch: &Architecture, theta: &ParamVector, data: &DataBatch, eta: f64) -> Result<f64> {
    let h = arch.hessian(theta, data)?;
    let d = h.nrows();
    Ok((DMatrix::identity(d, d) - h * eta).determinant())
}

/// Samples the box uniformly and measures how often the gradient descent map
/// is (numerically) singular.
pub fn nonsingularity_probe(
    arch: &Architecture,
    data: &DataBatch,
    eta: f64,
    n_samples: usize,
    bounds: &ParamBox,
    seed: u64,
    exec: Execution,
) -> Result<NonsingularityReport> {
    if !(eta > 0.0) {
        return Err(Error::config("eta", "must be positive"));
    }
    if bounds.dim() != arch.param_count() {
        return Err(Error::config("box", format!("has dimension {}, expected {}", bounds.dim(), arch.param_count())));
    }
    let dets: Vec<Result<f64>> = exec.map_indexed(n_samples, |i| {
        let theta = bounds.sample(&mut substream(seed, i as u64));
        gd_jacobian_det(arch, &theta, data, eta).map(f64::abs)
    });
    let mut min_abs_det = f64::INFINITY;
    let mut below = 0usize;
    for d in dets {
        let d = d?;
        min_abs_det = min_abs_det.min(d);
        if d < DET_TOL {
            below += 1;
        }
    }
    Ok(NonsingularityReport {
        eta,
        n_samples,
        det_tol: DET_TOL,
        min_abs_det,
        fraction_below_tol: if n_samples == 0 { 0.0 } else { below as f64 / n_samples as f64 },
    })
}

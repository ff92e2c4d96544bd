//! Monte Carlo sweeps over step sizes, the arc length of weakly stable minima
//! for the scalar example, and dataset generation for each figure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{make_synthetic, write_csv, write_manifest, Cell, Manifest, SyntheticKind, SyntheticSpec, Table};
use crate::dynamics::{run_gd, run_gd_observed, run_sgd, RunConfig, Verdict};
use crate::error::{Error, Result};
use crate::landscape::ParamBox;
use crate::model::{Activation, Architecture, DataBatch, LossKind, ParamVector};
use crate::par::{stream_id, substream, Execution};
use crate::quadrature::integrate;

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959_964;

/// Distribution of initial parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum InitScheme {
    UniformBox {
        bounds: ParamBox,
    },
    /// Every parameter i.i.d. `N(0, sigma^2)`.
    Gaussian {
        sigma: f64,
    },
    /// Weights `N(0, 2 / fan_in)`, biases zero.
    He,
    /// [`InitScheme::He`] with the output layer set to zero, so every output
    /// starts at the activation's value at 0.
    HeZeroOutput,
}

impl InitScheme {
    /// Uniform over `[-0.2, 2.5] x [0, 2.5]`, the region shown for the scalar
    /// example.
    pub fn two_neuron_box() -> Self {
        InitScheme::UniformBox { bounds: ParamBox { lo: vec![-0.2, 0.0], hi: vec![2.5, 2.5] } }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitScheme::UniformBox { .. } => "uniform_box",
            InitScheme::Gaussian { .. } => "gaussian",
            InitScheme::He => "he",
            InitScheme::HeZeroOutput => "he_zero_output",
        }
    }

    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        match self {
            InitScheme::UniformBox { bounds } => {
                ParamBox::new(bounds.lo.clone(), bounds.hi.clone())?;
                if bounds.dim() != arch.param_count() {
                    return Err(Error::config(
                        "init.bounds",
                        format!(
                            "box has dimension {}, architecture has {} parameters",
                            bounds.dim(),
                            arch.param_count()
                        ),
                    ));
                }
            }
            InitScheme::Gaussian { sigma } if !(*sigma > 0.0 && sigma.is_finite()) => {
                return Err(Error::config("init.sigma", "must be positive and finite"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, arch: &Architecture, rng: &mut R) -> ParamVector {
        match self {
            InitScheme::UniformBox { bounds } => bounds.sample(rng),
            InitScheme::Gaussian { sigma } => {
                ParamVector((0..arch.param_count()).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
            }
            InitScheme::He | InitScheme::HeZeroOutput => {
                let dims = arch.layer_dims();
                let mut theta = Vec::with_capacity(arch.param_count());
                for w in dims.windows(2) {
                    let scale = (2.0 / w[0] as f64).sqrt();
                    theta.extend((0..w[0] * w[1]).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
                }
                theta.resize(arch.param_count(), 0.0);
                if *self == InitScheme::HeZeroOutput {
                    let start = arch.weight_offset(arch.depth());
                    theta[start..arch.weight_count()].fill(0.0);
                }
                ParamVector(theta)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Gd,
    Sgd { batch_size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub eta_grid: Vec<f64>,
    pub n_inits: usize,
    pub init: InitScheme,
    pub seed: u64,
    /// `run_cfg.eta` is overwritten by each grid value.
    pub run_cfg: RunConfig,
    pub optimizer: Optimizer,
    /// When set, converged runs whose final loss exceeds this value count as
    /// stalled instead of trapped (for instance saturated networks whose
    /// gradient vanishes in floating point).
    #[serde(default)]
    pub loss_ceiling: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self, arch: &Architecture, data: &DataBatch) -> Result<()> {
        if self.eta_grid.is_empty() {
            return Err(Error::config("eta_grid", "must not be empty"));
        }
        if self.eta_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::config("eta_grid", "step sizes must be positive and finite"));
        }
        if self.eta_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("eta_grid", "must be strictly increasing"));
        }
        if self.n_inits == 0 {
            return Err(Error::config("n_inits", "must be at least 1"));
        }
        if let Optimizer::Sgd { batch_size } = self.optimizer {
            if batch_size == 0 || batch_size > data.len() {
                return Err(Error::config("optimizer.batch_size", format!("must be in 1..={}", data.len())));
            }
        }
        if let Some(c) = self.loss_ceiling {
            if !(c >= 0.0) {
                return Err(Error::config("loss_ceiling", "must be non-negative"));
            }
        }
        self.init.validate(arch)?;
        RunConfig { eta: self.eta_grid[0], ..self.run_cfg.clone() }.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapRegionEstimate {
    pub eta: f64,
    pub converged: usize,
    /// Converged above the sweep's loss ceiling; not counted in `converged`.
    pub stalled: usize,
    pub diverged: usize,
    pub cycling: usize,
    pub budget_exhausted: usize,
    pub total: usize,
    pub ratio: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// Outcome of one trajectory in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Trapped,
    Stalled,
    Other(Verdict),
}

impl TrapRegionEstimate {
    fn from_outcomes(eta: f64, outcomes: &[Outcome]) -> Self {
        let count = |f: fn(&Outcome) -> bool| outcomes.iter().filter(|v| f(v)).count();
        let converged = count(|o| *o == Outcome::Trapped);
        let total = outcomes.len();
        let (wilson_lo, wilson_hi) = wilson_interval(converged, total);
        Self {
            eta,
            converged,
            stalled: count(|o| *o == Outcome::Stalled),
            diverged: count(|o| *o == Outcome::Other(Verdict::Diverged)),
            cycling: count(|o| matches!(o, Outcome::Other(Verdict::Cycling { .. }))),
            budget_exhausted: count(|o| *o == Outcome::Other(Verdict::BudgetExhausted)),
            total,
            ratio: converged as f64 / total as f64,
            wilson_lo,
            wilson_hi,
        }
    }
}

/// 95% Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).clamp(0.0, 1.0).min(p), (center + half).clamp(0.0, 1.0).max(p))
}

/// True if no later ratio exceeds an earlier one by more than their 95%
/// intervals allow.
pub fn non_increasing_up_to_overlap(estimates: &[TrapRegionEstimate]) -> bool {
    estimates
        .iter()
        .enumerate()
        .all(|(i, a)| estimates[i + 1..].iter().all(|b| b.ratio <= a.ratio || b.wilson_lo <= a.wilson_hi))
}

/// Runs `n_inits` trajectories per step size and counts converged ones.
///
/// Initial point `j` is drawn from substream `(0, j)`, so every step size sees
/// the same initializations; stochastic optimizers draw from `(eta_index + 1, j)`.
pub fn trap_region_sweep(
    arch: &Architecture,
    data: &DataBatch,
    spec: &SweepSpec,
    exec: Execution,
) -> Result<Vec<TrapRegionEstimate>> {
    spec.validate(arch, data)?;
    let n = spec.n_inits;
    let outcomes: Vec<Result<Outcome>> = exec.map_indexed(spec.eta_grid.len() * n, |job| {
        let (e, j) = (job / n, job % n);
        let theta0 = spec.init.sample(arch, &mut substream(spec.seed, stream_id(0, j)));
        let cfg = RunConfig { eta: spec.eta_grid[e], ..spec.run_cfg.clone() };
        let record = match spec.optimizer {
            Optimizer::Gd => run_gd(arch, &theta0, data, &cfg)?,
            Optimizer::Sgd { batch_size } => {
                run_sgd(arch, &theta0, data, &cfg, batch_size, &mut substream(spec.seed, stream_id(e + 1, j)))?
            }
        };
        Ok(match (record.verdict, spec.loss_ceiling) {
            (Verdict::Converged, Some(ceiling)) if arch.loss(&record.final_theta, data)? > ceiling => Outcome::Stalled,
            (Verdict::Converged, _) => Outcome::Trapped,
            (v, _) => Outcome::Other(v),
        })
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(spec
        .eta_grid
        .iter()
        .zip(outcomes.chunks(n))
        .map(|(&eta, o)| TrapRegionEstimate::from_outcomes(eta, o))
        .collect())
}

/// Positive endpoints `x_lo <= x_hi` of the branch `xy = 1, x^2 + y^2 <= 2/eta`,
/// or `None` when that set is empty.
pub fn mws_endpoints_2neuron(eta: f64) -> Option<(f64, f64)> {
    let c = 2.0 / eta;
    if !(c >= 2.0) {
        return None;
    }
    let disc = (c * c - 4.0).max(0.0).sqrt();
    let hi = ((c + disc) / 2.0).sqrt();
    Some((1.0 / hi, hi))
}

/// Length of `{xy = 1, x^2 + y^2 <= 2/eta}` over both branches.
pub fn mws_arclength_2neuron(eta: f64) -> f64 {
    match mws_endpoints_2neuron(eta) {
        Some((lo, hi)) if lo < hi => {
            let q = integrate(|x: f64| (1.0 + x.powi(-4)).sqrt(), lo, hi, 1e-13, 1e-14);
            2.0 * q.value
        }
        _ => 0.0,
    }
}

/// The same length measured by a polyline through `segments + 1` points per
/// branch, spaced uniformly in `log x`.
pub fn mws_polyline_2neuron(eta: f64, segments: usize) -> f64 {
    let Some((lo, hi)) = mws_endpoints_2neuron(eta) else { return 0.0 };
    let (a, b) = (lo.ln(), hi.ln());
    let point = |k: usize| {
        let t = a + (b - a) * k as f64 / segments as f64;
        (t.exp(), (-t).exp())
    };
    let mut total = 0.0;
    let mut prev = point(0);
    for k in 1..=segments {
        let p = point(k);
        total += (p.0 - prev.0).hypot(p.1 - prev.1);
        prev = p;
    }
    2.0 * total
}

/// `(eta, length(eta) / length(eta_grid[0]))`; the grid must start at its minimum.
pub fn normalized_mws_curve(eta_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let Some(&first) = eta_grid.first() else {
        return Err(Error::config("eta_grid", "must not be empty"));
    };
    if eta_grid.iter().any(|&e| !(e >= first)) {
        return Err(Error::config("eta_grid", "must start at its minimum"));
    }
    let base = mws_arclength_2neuron(first);
    if !(base > 0.0) {
        return Err(Error::config("eta_grid", "the first step size must be below 1 for a non-empty set"));
    }
    Ok(eta_grid.iter().map(|&e| (e, mws_arclength_2neuron(e) / base)).collect())
}

/// Network family for [`depth_convergence_grid`]; `depths` counts hidden
/// layers of width `width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub depths: Vec<usize>,
    pub width: usize,
    pub activation: Activation,
    pub loss: LossKind,
    pub use_bias: bool,
    /// Permit inputs above 64 and widths above 16.
    pub allow_large: bool,
}

impl GridSpec {
    pub fn architecture(&self, depth: usize, data: &DataBatch) -> Result<Architecture> {
        let mut dims = vec![data.input_dim()];
        dims.extend(std::iter::repeat_n(self.width, depth));
        dims.push(data.output_dim());
        Architecture::new(dims, self.activation, self.use_bias, self.loss)
    }
}

pub const DESK_MAX_INPUT: usize = 64;
pub const DESK_MAX_WIDTH: usize = 16;

/// Trap ratios indexed by `[depth][eta]`. Each depth row uses its own seed
/// derived from `spec.seed`.
pub fn depth_convergence_grid(
    grid: &GridSpec,
    data: &DataBatch,
    spec: &SweepSpec,
    exec: Execution,
) -> Result<Vec<Vec<TrapRegionEstimate>>> {
    if !grid.allow_large && (data.input_dim() > DESK_MAX_INPUT || grid.width > DESK_MAX_WIDTH) {
        return Err(Error::config(
            "grid",
            format!("inputs above {DESK_MAX_INPUT} or widths above {DESK_MAX_WIDTH} need allow_large"),
        ));
    }
    if grid.depths.is_empty() || grid.width == 0 {
        return Err(Error::config("grid.depths", "need at least one depth and a positive width"));
    }
    grid.depths
        .iter()
        .enumerate()
        .map(|(i, &depth)| {
            let arch = grid.architecture(depth, data)?;
            let row_spec = SweepSpec { seed: row_seed(spec.seed, i), ..spec.clone() };
            trap_region_sweep(&arch, data, &row_spec, exec)
        })
        .collect()
}

fn row_seed(seed: u64, row: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(row as u64 + 1))
}

/// Geometric grid of `steps` values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    grid(lo, hi, steps, true)
}

/// Uniform grid of `steps` values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    grid(lo, hi, steps, false)
}

fn grid(lo: f64, hi: f64, steps: usize, log: bool) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![lo],
        _ => (0..steps)
            .map(|k| {
                let t = k as f64 / (steps - 1) as f64;
                if k == steps - 1 {
                    hi
                } else if log {
                    (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + t * (hi - lo)
                }
            })
            .collect(),
    }
}

/// Complete setup for a depth grid: network family, data and sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridExperiment {
    pub grid: GridSpec,
    pub data: SyntheticSpec,
    pub sweep: SweepSpec,
}

impl GridExperiment {
    /// gelu + summed squared loss, full-batch gradient descent on two
    /// Gaussian blobs. A run counts as trapped when it converges (gradient
    /// below 1e-2) with loss at most 1e-3.
    pub fn conv(seed: u64) -> Self {
        let mut run_cfg = RunConfig::new(1.0);
        run_cfg.max_iters = 30_000;
        run_cfg.grad_tol = 1e-2;
        run_cfg.step_tol = 1e-2;
        run_cfg.record_every = 1000;
        Self {
            grid: GridSpec {
                depths: vec![2, 4, 8],
                width: 8,
                activation: Activation::Gelu,
                loss: LossKind::MSE,
                use_bias: true,
                allow_large: false,
            },
            data: blobs(seed, 8, 4),
            sweep: SweepSpec {
                eta_grid: log_grid(1e-3, 1.0, 7),
                n_inits: 50,
                init: InitScheme::HeZeroOutput,
                seed,
                run_cfg,
                optimizer: Optimizer::Gd,
                loss_ceiling: Some(1e-3),
            },
        }
    }

    /// relu + softmax cross-entropy trained with minibatch SGD.
    pub fn exp(seed: u64) -> Self {
        let mut run_cfg = RunConfig::new(1.0);
        run_cfg.max_iters = 3_000;
        run_cfg.grad_tol = 1e-2;
        run_cfg.step_tol = 1e-2;
        run_cfg.record_every = 1000;
        Self {
            grid: GridSpec {
                depths: vec![2, 4, 8],
                width: 8,
                activation: Activation::Relu,
                loss: LossKind::SoftmaxCrossEntropy,
                use_bias: true,
                allow_large: false,
            },
            data: blobs(seed, 8, 16),
            sweep: SweepSpec {
                eta_grid: log_grid(0.1, 100.0, 7),
                n_inits: 50,
                init: InitScheme::He,
                seed,
                run_cfg,
                optimizer: Optimizer::Sgd { batch_size: 4 },
                loss_ceiling: Some(1e-2),
            },
        }
    }

    pub fn run(&self, exec: Execution) -> Result<Vec<Vec<TrapRegionEstimate>>> {
        let data = make_synthetic(&self.data)?;
        depth_convergence_grid(&self.grid, &data, &self.sweep, exec)
    }
}

fn blobs(seed: u64, d0: usize, n: usize) -> SyntheticSpec {
    SyntheticSpec {
        kind: SyntheticKind::GaussianBlobs { classes: 2, sigma: 0.5 },
        d0,
        dh: 2,
        n,
        noise_sigma: 0.0,
        seed,
        whiten: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Fig3,
    Fig4,
    Fig2,
    Conv,
    Exp,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Fig3, Figure::Fig4, Figure::Fig2, Figure::Conv, Figure::Exp];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig2 => "fig2",
            Figure::Conv => "conv",
            Figure::Exp => "exp",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            Error::config("figure", format!("unknown figure `{s}` (expected fig3, fig4, fig2, conv or exp)"))
        })
    }
}

/// Regions and step sizes of the two trajectory plots.
pub const FIG3_ETA: f64 = 0.4;
pub const FIG4_ETA: f64 = 1.1;
pub const TRAJECTORY_STEPS: usize = 10_000;

pub fn fig3_region() -> ParamBox {
    ParamBox { lo: vec![-0.2, 0.0], hi: vec![2.5, 2.5] }
}

pub fn fig4_region() -> ParamBox {
    ParamBox { lo: vec![0.7, 0.65], hi: vec![1.25, 1.2] }
}

/// Writes `<figure>.csv` and `<figure>_manifest.json` into `out_dir` and
/// returns their paths.
pub fn reproduce_figure(figure: Figure, out_dir: &Path, seed: u64, exec: Execution) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_name = format!("{figure}.csv");
    let csv_path = out_dir.join(&csv_name);
    let mut manifest = Manifest::new(json!({ "name": "reproduce", "figure": figure }), seed);
    match figure {
        Figure::Fig3 | Figure::Fig4 => {
            let (eta, region) =
                if figure == Figure::Fig3 { (FIG3_ETA, fig3_region()) } else { (FIG4_ETA, fig4_region()) };
            let arch = Architecture::two_neuron();
            let data = DataBatch::scalar_pair(1.0, 1.0);
            let inits: Vec<ParamVector> = (0..5).map(|j| region.sample(&mut substream(seed, j))).collect();
            let mut run_cfg = RunConfig::new(eta);
            run_cfg.max_iters = TRAJECTORY_STEPS;
            run_cfg.cycle_window = TRAJECTORY_STEPS;
            let mut table = Table::new(["init", "iter", "x", "y", "loss"]);
            let mut verdicts = Vec::new();
            for (j, theta0) in inits.iter().enumerate() {
                let mut rows = Vec::new();
                let record = run_gd_observed(&arch, theta0, &data, &run_cfg, |k, t| rows.push((k, t.clone())))?;
                for (k, t) in rows {
                    let loss = arch.loss(&t, &data)?;
                    table.push(vec![j.into(), k.into(), t.0[0].into(), t.0[1].into(), loss.into()]);
                }
                verdicts.push(record.verdict.name());
            }
            write_csv(&table, &csv_path)?;
            manifest.arch = json!(arch);
            manifest.data = json!(SyntheticSpec::scalar_pair(1.0, 1.0));
            manifest.run_cfg = json!(run_cfg);
            manifest.command["eta"] = json!(eta);
            manifest.command["region"] = json!(region);
            manifest.command["inits"] = json!(inits);
            manifest.command["verdicts"] = json!(verdicts);
        }
        Figure::Fig2 => {
            let etas = linear_grid(0.1, 1.0, 19);
            let curve = normalized_mws_curve(&etas)?;
            let mut run_cfg = RunConfig::new(etas[0]);
            run_cfg.record_every = run_cfg.max_iters;
            let spec = SweepSpec {
                eta_grid: etas.clone(),
                n_inits: 200,
                init: InitScheme::two_neuron_box(),
                seed,
                run_cfg,
                optimizer: Optimizer::Gd,
                loss_ceiling: None,
            };
            let arch = Architecture::two_neuron();
            let data = DataBatch::scalar_pair(1.0, 1.0);
            let trap = trap_region_sweep(&arch, &data, &spec, exec)?;
            let mut table = Table::new([
                "eta",
                "mws_length",
                "mws_normalized",
                "converged",
                "total",
                "trap_ratio",
                "wilson_lo",
                "wilson_hi",
            ]);
            for ((eta, norm), t) in curve.iter().zip(&trap) {
                table.push(vec![
                    (*eta).into(),
                    mws_arclength_2neuron(*eta).into(),
                    (*norm).into(),
                    t.converged.into(),
                    t.total.into(),
                    t.ratio.into(),
                    t.wilson_lo.into(),
                    t.wilson_hi.into(),
                ]);
            }
            write_csv(&table, &csv_path)?;
            manifest.arch = json!(arch);
            manifest.data = json!(SyntheticSpec::scalar_pair(1.0, 1.0));
            manifest.run_cfg = json!(spec.run_cfg);
            manifest.command["sweep"] = json!(spec);
            manifest.command["mws_length_at_eta_min"] = json!(mws_arclength_2neuron(etas[0]));
        }
        Figure::Conv | Figure::Exp => {
            let experiment =
                if figure == Figure::Conv { GridExperiment::conv(seed) } else { GridExperiment::exp(seed) };
            let rows = experiment.run(exec)?;
            write_csv(&grid_table(&experiment.grid.depths, &rows), &csv_path)?;
            manifest.arch = json!(experiment.grid);
            manifest.data = json!(experiment.data);
            manifest.run_cfg = json!(experiment.sweep.run_cfg);
            manifest.command["sweep"] = json!(experiment.sweep);
        }
    }
    let manifest_name = format!("{figure}_manifest.json");
    manifest.outputs = vec![csv_name];
    let manifest_path = out_dir.join(&manifest_name);
    write_manifest(&manifest, &manifest_path)?;
    Ok(vec![csv_path, manifest_path])
}

/// One row per `(depth, eta)` cell.
pub fn grid_table(depths: &[usize], rows: &[Vec<TrapRegionEstimate>]) -> Table {
    let mut table = trap_table_header(true);
    for (&depth, row) in depths.iter().zip(rows) {
        for t in row {
            table.push(trap_row(Some(depth), t));
        }
    }
    table
}

/// One row per step size.
pub fn trap_table(estimates: &[TrapRegionEstimate]) -> Table {
    let mut table = trap_table_header(false);
    for t in estimates {
        table.push(trap_row(None, t));
    }
    table
}

fn trap_table_header(with_depth: bool) -> Table {
    let cols = [
        "eta",
        "converged",
        "stalled",
        "diverged",
        "cycling",
        "budget_exhausted",
        "total",
        "ratio",
        "wilson_lo",
        "wilson_hi",
    ];
    Table::new(with_depth.then_some("depth").into_iter().chain(cols))
}

fn trap_row(depth: Option<usize>, t: &TrapRegionEstimate) -> Vec<Cell> {
    depth
        .map(Cell::from)
        .into_iter()
        .chain([
            t.eta.into(),
            t.converged.into(),
            t.stalled.into(),
            t.diverged.into(),
            t.cycling.into(),
            t.budget_exhausted.into(),
            t.total.into(),
            t.ratio.into(),
            t.wilson_lo.into(),
            t.wilson_hi.into(),
        ])
        .collect()
}

//! Subcommand definitions. `prepare` validates every input and returns the
//! job that does the actual work, so nothing is computed on a bad flag.

use std::path::Path;

use clap::{ArgAction, Args};
use gdmap::data::{write_csv, Cell, SyntheticKind, SyntheticSpec, Table};
use gdmap::dynamics::{classify_fixed_point, run_gd_observed, run_sgd_observed, RunConfig, Verdict};
use gdmap::experiments::{
    depth_convergence_grid, grid_table, mws_arclength_2neuron, mws_polyline_2neuron, normalized_mws_curve,
    reproduce_figure, trap_region_sweep, trap_table, Figure, GridSpec, InitScheme, Optimizer, SweepSpec,
};
use gdmap::landscape::{eta_e_estimate, nonsingularity_probe, sample_minimum, spectrum_at};
use gdmap::par::{stream_id, substream, Execution};
use gdmap::{Activation, LossKind, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{
    bad, parse_cube, parse_eta, parse_eta_grid, parse_optional_f64, parse_theta, parse_usize_list, CommonArgs,
    InitArgs, ModelArgs, Problem, RunArgs,
};

/// What a finished job hands back for the manifest and the terminal.
#[derive(Default)]
pub(crate) struct Report {
    pub arch: Value,
    pub data: Value,
    pub run_cfg: Value,
    pub outputs: Vec<String>,
    pub summary: Vec<String>,
}

pub(crate) type Job = Box<dyn FnOnce(&Path, Execution) -> Result<Report> + Send>;

fn write(table: &Table, out: &Path, name: &str, report: &mut Report) -> Result<()> {
    write_csv(table, &out.join(name))?;
    report.outputs.push(name.to_string());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:.6e}"))
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Parameter vector, or auto (a sampled global minimum for linear
    /// networks, a He draw otherwise)
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub theta: String,
    /// Step size for the fixed-point classification (none skips it)
    #[arg(long, default_value = "none")]
    pub eta: String,
    /// Gradient norm below which the point counts as critical
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
}

impl SpectrumCmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let seed = self.common.seed;
        let Problem { arch, data, data_doc, .. } = self.model.resolve(seed)?;
        let theta = parse_theta(&self.theta, &arch, "theta")?;
        let eta = parse_optional_f64(&self.eta, "eta")?.map(|e| parse_eta(e, "eta")).transpose()?;
        let grad_tol = parse_eta(self.grad_tol, "grad_tol")?;
        Ok(Box::new(move |out, _| {
            let theta = match theta {
                Some(t) => t,
                None if arch.is_linear() => sample_minimum(&arch, &data, &mut substream(seed, 0))?.theta,
                None => InitScheme::He.sample(&arch, &mut substream(seed, 0)),
            };
            let spectrum = spectrum_at(&arch, &theta, &data)?;
            let mut report = Report { arch: json!(arch), data: data_doc, ..Default::default() };
            let mut eigen = Table::new(["index", "eigenvalue"]);
            for (i, &l) in spectrum.eigenvalues.iter().enumerate() {
                eigen.push(vec![i.into(), l.into()]);
            }
            write(&eigen, out, "spectrum.csv", &mut report)?;
            let mut summary = Table::new(["key", "value"]);
            let mut add = |k: &str, v: Cell| summary.push(vec![k.into(), v]);
            add("loss", arch.loss(&theta, &data)?.into());
            add("grad_norm", arch.gradient(&theta, &data)?.norm().into());
            add("n_positive", spectrum.n_positive.into());
            add("n_zero", spectrum.n_zero.into());
            add("n_negative", spectrum.n_negative.into());
            add("zero_threshold", spectrum.zero_threshold.into());
            add("lambda_max", spectrum.lambda_max.into());
            add("lambda_min_nonzero", spectrum.lambda_min_nonzero.map_or(Cell::from("none"), Cell::from));
            for (i, &v) in theta.0.iter().enumerate() {
                add(&format!("theta_{i}"), v.into());
            }
            report.summary.push(format!(
                "positive {} zero {} negative {}  lambda_max {:.6e}  lambda_min_nonzero {}",
                spectrum.n_positive,
                spectrum.n_zero,
                spectrum.n_negative,
                spectrum.lambda_max,
                fmt_opt(spectrum.lambda_min_nonzero)
            ));
            if let Some(eta) = eta {
                let class = classify_fixed_point(&arch, &theta, &data, eta, grad_tol)?;
                let kind = serde_json::to_value(class.kind).expect("enum serializes");
                let kind = kind.as_str().unwrap_or_default().to_string();
                add("classification", kind.clone().into());
                report.summary.push(format!("classification at eta {eta}: {kind}"));
            }
            write(&summary, out, "spectrum_summary.csv", &mut report)?;
            Ok(report)
        }))
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub init: InitArgs,
    /// Step size
    #[arg(long, default_value_t = 0.4)]
    pub eta: f64,
    /// Starting parameters, or auto (one draw from the init scheme)
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub theta: String,
    /// Write every k-th iterate
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    /// Also record the largest Hessian eigenvalue
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub track_sharpness: bool,
}

impl TrajectoryCmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let seed = self.common.seed;
        let problem = self.model.resolve(seed)?;
        let mut cfg = self.run.run_config(parse_eta(self.eta, "eta")?)?;
        if self.record_every == 0 {
            return Err(bad("record_every", "must be at least 1"));
        }
        cfg.record_every = self.record_every;
        cfg.track_sharpness = self.track_sharpness;
        let optimizer = self.run.optimizer(&problem.data)?;
        let theta = parse_theta(&self.theta, &problem.arch, "theta")?;
        let init = self.init.scheme(&problem)?;
        let Problem { arch, data, data_doc, .. } = problem;
        Ok(Box::new(move |out, _| {
            let theta0 = theta.unwrap_or_else(|| init.sample(&arch, &mut substream(seed, stream_id(0, 0))));
            let every = cfg.record_every;
            let mut kept = Vec::new();
            let observe = |k: usize, t: &gdmap::ParamVector| {
                if k.is_multiple_of(every) {
                    kept.push((k, t.clone()));
                }
            };
            let record = match optimizer {
                Optimizer::Gd => run_gd_observed(&arch, &theta0, &data, &cfg, observe)?,
                Optimizer::Sgd { batch_size } => {
                    let mut rng = substream(seed, stream_id(1, 0));
                    run_sgd_observed(&arch, &theta0, &data, &cfg, batch_size, &mut rng, observe)?
                }
            };
            let d = arch.param_count();
            let header = ["iter", "loss", "grad_norm", "theta_norm", "sharpness"]
                .into_iter()
                .map(String::from)
                .chain((0..d).map(|i| format!("theta_{i}")));
            let mut table = Table::new(header);
            let mut kept = kept.into_iter().peekable();
            for s in &record.samples {
                while kept.peek().is_some_and(|(k, _)| *k < s.iter) {
                    kept.next();
                }
                let theta = match kept.peek() {
                    Some((k, t)) if *k == s.iter && s.iter != record.iterations_used => t,
                    _ => &record.final_theta,
                };
                let mut row: Vec<Cell> = vec![
                    s.iter.into(),
                    s.loss.into(),
                    s.grad_norm.into(),
                    s.theta_norm.into(),
                    s.sharpness.map_or(Cell::from(""), Cell::from),
                ];
                row.extend(theta.0.iter().map(|&v| Cell::from(v)));
                table.push(row);
            }
            let mut report = Report { arch: json!(arch), data: data_doc, run_cfg: json!(cfg), ..Default::default() };
            write(&table, out, "trajectory.csv", &mut report)?;
            let last = record.samples.last().expect("every run records a sample");
            let period = match record.verdict {
                Verdict::Cycling { period } => format!(" (period {period})"),
                _ => String::new(),
            };
            report.summary.push(format!(
                "{}{} after {} iterations, loss {:.6e}",
                record.verdict.name(),
                period,
                record.iterations_used,
                last.loss
            ));
            Ok(report)
        }))
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SweepCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub init: InitArgs,
    /// Step sizes as lo:hi:steps, or lo:hi:steps:log for a geometric grid
    #[arg(long, default_value = "0.1:1.2:12")]
    pub eta_grid: String,
    /// Initializations per step size
    #[arg(long, default_value_t = 200)]
    pub n: usize,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct TrapCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub init: InitArgs,
    /// Step size
    #[arg(long, default_value_t = 1.2)]
    pub eta: f64,
    /// Number of initializations
    #[arg(long, default_value_t = 200)]
    pub n: usize,
}

#[allow(clippy::too_many_arguments)]
fn sweep_job(
    common: &CommonArgs,
    model: &ModelArgs,
    run: &RunArgs,
    init: &InitArgs,
    eta_grid: Vec<f64>,
    n: usize,
    csv_name: &'static str,
    single: bool,
) -> Result<Job> {
    let problem = model.resolve(common.seed)?;
    let mut run_cfg = run.run_config(eta_grid[0])?;
    run_cfg.record_every = run_cfg.max_iters;
    let spec = SweepSpec {
        eta_grid,
        n_inits: n,
        init: init.scheme(&problem)?,
        seed: common.seed,
        run_cfg,
        optimizer: run.optimizer(&problem.data)?,
        loss_ceiling: init.loss_ceiling()?,
    };
    if n == 0 {
        return Err(bad("n", "must be at least 1"));
    }
    spec.validate(&problem.arch, &problem.data)?;
    let Problem { arch, data, data_doc, .. } = problem;
    Ok(Box::new(move |out, exec| {
        let estimates = trap_region_sweep(&arch, &data, &spec, exec)?;
        let mut report = Report { arch: json!(arch), data: data_doc, run_cfg: json!(spec), ..Default::default() };
        write(&trap_table(&estimates), out, csv_name, &mut report)?;
        for t in &estimates {
            let line = format!(
                "ratio {:.2} ({}/{} converged, 95% interval [{:.4}, {:.4}])",
                t.ratio, t.converged, t.total, t.wilson_lo, t.wilson_hi
            );
            report.summary.push(if single { line } else { format!("eta {:.6}  {line}", t.eta) });
        }
        Ok(report)
    }))
}

impl SweepCmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let grid = parse_eta_grid(&self.eta_grid, "eta_grid")?;
        sweep_job(&self.common, &self.model, &self.run, &self.init, grid, self.n, "sweep.csv", false)
    }
}

impl TrapCmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let eta = parse_eta(self.eta, "eta")?;
        sweep_job(&self.common, &self.model, &self.run, &self.init, vec![eta], self.n, "trap.csv", true)
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct MwsLengthCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Step sizes; lengths are normalized by the value at the first one
    #[arg(long, default_value = "0.1:1.0:19")]
    pub eta_grid: String,
    /// Segments of the log-spaced polyline used as a cross-check
    #[arg(long, default_value_t = 200_000)]
    pub segments: usize,
}

impl MwsLengthCmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let grid = parse_eta_grid(&self.eta_grid, "eta_grid")?;
        if grid[0] >= 1.0 {
            return Err(bad("eta_grid", "the first step size must be below 1"));
        }
        if self.segments < 2 {
            return Err(bad("segments", "must be at least 2"));
        }
        let segments = self.segments;
        Ok(Box::new(move |out, _| {
            let curve = normalized_mws_curve(&grid)?;
            let mut table = Table::new(["eta", "length", "polyline_length", "normalized"]);
            for &(eta, norm) in &curve {
                table.push(vec![
                    eta.into(),
                    mws_arclength_2neuron(eta).into(),
                    mws_polyline_2neuron(eta, segments).into(),
                    norm.into(),
                ]);
            }
            let mut report = Report { arch: json!(gdmap::Architecture::two_neuron()), ..Default::default() };
            write(&table, out, "mws_length.csv", &mut report)?;
            report.summary.push(format!("length at eta {}: {:.10}", grid[0], mws_arclength_2neuron(grid[0])));
            Ok(report)
        }))
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct EtaECmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Sampled minima, each refined by Nelder-Mead
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
}

impl EtaECmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let seed = self.common.seed;
        let Problem { arch, data, data_doc, .. } = self.model.resolve(seed)?;
        if self.samples == 0 {
            return Err(bad("samples", "must be at least 1"));
        }
        if !arch.is_linear() {
            return Err(bad("activation", "eta-e needs a linear network (identity activation, no bias)"));
        }
        let samples = self.samples;
        Ok(Box::new(move |out, exec| {
            let est = eta_e_estimate(&arch, &data, samples, seed, exec)?;
            let mut table = Table::new(["sample", "lambda_running_min", "eta_e_running"]);
            for (i, &l) in est.lambda_running_min.iter().enumerate() {
                table.push(vec![i.into(), l.into(), (2.0 / l).into()]);
            }
            let mut report = Report { arch: json!(arch), data: data_doc, ..Default::default() };
            write(&table, out, "eta_e.csv", &mut report)?;
            report.summary.push(format!("eta_E = {:.6}", est.eta_e));
            report.summary.push(format!("lambda_E = {:.6}", est.lambda_e));
            Ok(report)
        }))
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct NonsingCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Step size
    #[arg(long, default_value_t = 0.9)]
    pub eta: f64,
    /// Uniform samples from the box
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Sampling cube lo:hi in every parameter
    #[arg(long = "box", default_value = "-3:3", allow_hyphen_values = true)]
    #[serde(rename = "box")]
    pub cube: String,
}

impl NonsingCmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let seed = self.common.seed;
        let Problem { arch, data, data_doc, .. } = self.model.resolve(seed)?;
        let eta = parse_eta(self.eta, "eta")?;
        let bounds = parse_cube(&self.cube, arch.param_count(), "box")?;
        if self.n == 0 {
            return Err(bad("n", "must be at least 1"));
        }
        let n = self.n;
        Ok(Box::new(move |out, exec| {
            let r = nonsingularity_probe(&arch, &data, eta, n, &bounds, seed, exec)?;
            let mut table = Table::new(["eta", "n_samples", "det_tol", "min_abs_det", "fraction_below_tol"]);
            table.push(vec![
                r.eta.into(),
                r.n_samples.into(),
                r.det_tol.into(),
                r.min_abs_det.into(),
                r.fraction_below_tol.into(),
            ]);
            let mut report = Report { arch: json!(arch), data: data_doc, ..Default::default() };
            write(&table, out, "nonsing.csv", &mut report)?;
            report.summary.push(format!(
                "fraction below {:e}: {}  (min |det| {:.6e})",
                r.det_tol, r.fraction_below_tol, r.min_abs_det
            ));
            Ok(report)
        }))
    }
}

/// Depth-by-step-size grid. The defaults are the gelu setup used for the
/// convergence-collapse check.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GridCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Hidden-layer counts, one grid row each
    #[arg(long, default_value = "2,4,8")]
    pub depths: String,
    /// Width of every hidden layer
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value = "gelu")]
    pub activation: String,
    #[arg(long, default_value = "mse")]
    pub loss: String,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub bias: bool,
    /// Input dimension of the blob data
    #[arg(long, default_value_t = 8)]
    pub d0: usize,
    /// Classes (and outputs)
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub data_n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub blob_sigma: f64,
    #[arg(long, default_value = "0.001:1:7:log")]
    pub eta_grid: String,
    /// Initializations per cell
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// gauss, he or he_zero_output
    #[arg(long, default_value = "he_zero_output")]
    pub init: String,
    /// Standard deviation for --init gauss
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 30_000)]
    pub budget: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub step_tol: f64,
    /// Converged runs ending above this loss count as stalled (none disables)
    #[arg(long, default_value = "1e-3")]
    pub loss_ceiling: String,
    /// gd or sgd
    #[arg(long, default_value = "gd")]
    pub optimizer: String,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Permit inputs above 64 and widths above 16
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub allow_large: bool,
}

impl GridCmd {
    fn experiment(&self) -> Result<gdmap::experiments::GridExperiment> {
        let seed = self.common.seed;
        let activation: Activation = self
            .activation
            .parse()
            .map_err(|_| bad("activation", format!("unknown activation `{}`", self.activation)))?;
        let loss: LossKind = self.loss.parse().map_err(|_| bad("loss", format!("unknown loss `{}`", self.loss)))?;
        if !(self.blob_sigma >= 0.0) {
            return Err(bad("blob_sigma", "must be non-negative"));
        }
        let mut run_cfg = RunConfig::new(1.0);
        run_cfg.max_iters = self.budget;
        run_cfg.grad_tol = self.grad_tol;
        run_cfg.step_tol = self.step_tol;
        run_cfg.record_every = 1000;
        run_cfg.validate().map_err(|e| match e {
            gdmap::Error::Config { path, message } => {
                let key = path.trim_start_matches("run_cfg.").replace("max_iters", "budget");
                bad(&key, message)
            }
            e => e,
        })?;
        let init = match self.init.as_str() {
            "he" => InitScheme::He,
            "he_zero_output" => InitScheme::HeZeroOutput,
            "gauss" => InitScheme::Gaussian { sigma: self.sigma },
            other => {
                return Err(bad("init", format!("unknown scheme `{other}` (expected gauss, he or he_zero_output)")))
            }
        };
        let optimizer = match self.optimizer.as_str() {
            "gd" => Optimizer::Gd,
            "sgd" if self.batch >= 1 => Optimizer::Sgd { batch_size: self.batch.min(self.data_n.max(1)) },
            "sgd" => return Err(bad("batch", "must be at least 1")),
            other => return Err(bad("optimizer", format!("unknown optimizer `{other}` (expected gd or sgd)"))),
        };
        if self.n == 0 {
            return Err(bad("n", "must be at least 1"));
        }
        let experiment = gdmap::experiments::GridExperiment {
            grid: GridSpec {
                depths: parse_usize_list(&self.depths, "depths")?,
                width: self.width,
                activation,
                loss,
                use_bias: self.bias,
                allow_large: self.allow_large,
            },
            data: SyntheticSpec {
                kind: SyntheticKind::GaussianBlobs { classes: self.classes, sigma: self.blob_sigma },
                d0: self.d0,
                dh: self.classes,
                n: self.data_n,
                noise_sigma: 0.0,
                seed,
                whiten: false,
            },
            sweep: SweepSpec {
                eta_grid: parse_eta_grid(&self.eta_grid, "eta_grid")?,
                n_inits: self.n,
                init,
                seed,
                run_cfg,
                optimizer,
                loss_ceiling: parse_optional_f64(&self.loss_ceiling, "loss_ceiling")?,
            },
        };
        experiment.data.validate().map_err(|e| match e {
            gdmap::Error::Config { path, message } => {
                let key = match path.trim_start_matches("data.") {
                    "n" => "data_n".to_string(),
                    "dh" | "classes" => "classes".to_string(),
                    other => other.to_string(),
                };
                bad(&key, message)
            }
            e => e,
        })?;
        Ok(experiment)
    }

    pub(crate) fn prepare(&self) -> Result<Job> {
        let experiment = self.experiment()?;
        let data = gdmap::data::make_synthetic(&experiment.data)?;
        for &depth in &experiment.grid.depths {
            let arch = experiment.grid.architecture(depth, &data)?;
            experiment.sweep.validate(&arch, &data)?;
        }
        Ok(Box::new(move |out, exec| {
            let rows = depth_convergence_grid(&experiment.grid, &data, &experiment.sweep, exec)?;
            let mut report = Report {
                arch: json!(experiment.grid),
                data: json!(experiment.data),
                run_cfg: json!(experiment.sweep),
                ..Default::default()
            };
            write(&grid_table(&experiment.grid.depths, &rows), out, "grid.csv", &mut report)?;
            for (depth, row) in experiment.grid.depths.iter().zip(&rows) {
                let ratios: Vec<String> = row.iter().map(|t| format!("{:.2}", t.ratio)).collect();
                report.summary.push(format!("depth {depth}: {}", ratios.join(" ")));
            }
            Ok(report)
        }))
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ReproduceCmd {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// fig3, fig4, fig2, conv, exp or all
    #[arg(long, default_value = "all")]
    pub figure: String,
}

impl ReproduceCmd {
    pub(crate) fn prepare(&self) -> Result<Job> {
        let figures: Vec<Figure> = match self.figure.as_str() {
            "all" => Figure::ALL.to_vec(),
            name => vec![name.parse()?],
        };
        let seed = self.common.seed;
        Ok(Box::new(move |out, exec| {
            let mut report = Report::default();
            for figure in figures {
                for path in reproduce_figure(figure, out, seed, exec)? {
                    let name = path.file_name().expect("file path").to_string_lossy().into_owned();
                    report.outputs.push(name);
                }
                report.summary.push(format!("{figure} written"));
            }
            Ok(report)
        }))
    }
}

//! Flag definitions shared by the subcommands, and their conversion into
//! typed library inputs. Every flag is validated here, before any compute.

use std::path::PathBuf;

use clap::Args;
use gdmap::data::{load_idx, make_synthetic, LabelEncoding, SyntheticKind, SyntheticSpec};
use gdmap::dynamics::RunConfig;
use gdmap::experiments::{linear_grid, log_grid, InitScheme, Optimizer};
use gdmap::landscape::{classify_architecture, ParamBox};
use gdmap::{Activation, Architecture, DataBatch, Error, LossKind, ParamVector, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub(crate) fn bad(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), message: message.into() }
}

/// Output location, seed and worker count, common to every subcommand.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct CommonArgs {
    /// Seed for every stochastic component
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for sweep-style commands (results do not depend on it)
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Directory receiving the CSV files and the manifest
    #[arg(long, default_value = "gdmap-out")]
    pub out: PathBuf,
    /// JSON file whose keys override the flags (none reads nothing)
    #[arg(long, default_value = "none")]
    pub config: String,
}

/// Network and dataset selection.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Named instance overriding the network and data flags: `none` or
    /// `two-neuron` (x -> w2 w1 x on {1 -> 1}, loss (1 - w1 w2)^2 / 2)
    #[arg(long, default_value = "none")]
    pub example: String,
    /// Layer widths d0,d1,...,dh
    #[arg(long, default_value = "2,3,2")]
    pub arch: String,
    /// identity, relu, gelu, tanh or sigmoid
    #[arg(long, default_value = "identity")]
    pub activation: String,
    /// mse, half_mse or ce (softmax cross-entropy)
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Add a bias vector to every layer
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub bias: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct DataArgs {
    /// auto, teacher (Gaussian inputs, linear full-rank teacher), blobs
    /// (one Gaussian blob per output class) or idx (requires --idx-images and --idx-labels)
    #[arg(long, default_value = "auto")]
    pub data: String,
    /// Number of synthetic samples
    #[arg(long, default_value_t = 16)]
    pub data_n: usize,
    /// Label noise standard deviation for the teacher task
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Standard deviation of each blob around its center
    #[arg(long, default_value_t = 0.5)]
    pub blob_sigma: f64,
    /// auto (whiten exactly when a linear network is non-filling), yes or no
    #[arg(long, default_value = "auto")]
    pub whiten: String,
    /// IDX image file (magic 0x00000803)
    #[arg(long, default_value = "none")]
    pub idx_images: String,
    /// IDX label file (magic 0x00000801)
    #[arg(long, default_value = "none")]
    pub idx_labels: String,
    /// Labels to keep from the IDX files
    #[arg(long, default_value = "0,1")]
    pub keep: String,
    /// At most this many samples per kept label
    #[arg(long, default_value_t = 32)]
    pub max_per_class: usize,
    /// onehot, or signed (one-hot with 0 replaced by -1)
    #[arg(long, default_value = "onehot")]
    pub labels: String,
}

/// Stopping rule of a single trajectory.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RunArgs {
    /// Maximum number of iterations (epochs for SGD)
    #[arg(long, default_value_t = 100_000)]
    pub budget: usize,
    /// Convergence needs the gradient norm below this
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    /// ... and the per-iteration movement below this, for 10 iterations in a row
    #[arg(long, default_value_t = 1e-10)]
    pub step_tol: f64,
    /// Divergence when the parameter norm exceeds this
    #[arg(long, default_value_t = 1e8)]
    pub diverge_norm: f64,
    /// States compared when looking for a revisited state (after half the budget)
    #[arg(long, default_value_t = 2000)]
    pub cycle_window: usize,
    /// Distance counted as a revisit
    #[arg(long, default_value_t = 1e-7)]
    pub cycle_tol: f64,
    /// gd or sgd
    #[arg(long, default_value = "gd")]
    pub optimizer: String,
    /// Minibatch size for sgd
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
}

/// Initialization distribution for sweeps.
#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct InitArgs {
    /// auto (box for the two-neuron example, he otherwise), box, gauss, he or he_zero_output
    #[arg(long, default_value = "auto")]
    pub init: String,
    /// Box for --init box: auto ([-0.2,2.5]x[0,2.5] for the two-neuron example, [-1,1]^d otherwise) or lo:hi
    #[arg(long = "box", default_value = "auto", allow_hyphen_values = true)]
    #[serde(rename = "box")]
    pub init_box: String,
    /// Standard deviation for --init gauss
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Converged runs ending above this loss count as stalled (none disables)
    #[arg(long, default_value = "none")]
    pub loss_ceiling: String,
}

pub(crate) struct Problem {
    pub arch: Architecture,
    pub data: DataBatch,
    /// Description of the data source for the manifest.
    pub data_doc: Value,
    pub two_neuron: bool,
}

impl ModelArgs {
    pub(crate) fn resolve(&self, seed: u64) -> Result<Problem> {
        match self.example.as_str() {
            "two-neuron" => {
                let spec = SyntheticSpec::scalar_pair(1.0, 1.0);
                return Ok(Problem {
                    arch: Architecture::two_neuron(),
                    data: make_synthetic(&spec)?,
                    data_doc: json!(spec),
                    two_neuron: true,
                });
            }
            "none" => {}
            other => return Err(bad("example", format!("unknown example `{other}` (expected none or two-neuron)"))),
        }
        let dims = parse_usize_list(&self.arch, "arch")?;
        let activation: Activation = self.activation.parse().map_err(|_| {
            bad(
                "activation",
                format!("unknown activation `{}` (expected identity, relu, gelu, tanh or sigmoid)", self.activation),
            )
        })?;
        let loss: LossKind = self
            .loss
            .parse()
            .map_err(|_| bad("loss", format!("unknown loss `{}` (expected mse, half_mse or ce)", self.loss)))?;
        let arch = Architecture::new(dims, activation, self.bias, loss)?;
        let (data, data_doc) = self.data.resolve(&arch, seed)?;
        Ok(Problem { arch, data, data_doc, two_neuron: false })
    }
}

impl DataArgs {
    fn resolve(&self, arch: &Architecture, seed: u64) -> Result<(DataBatch, Value)> {
        let (d0, dh) = (arch.input_dim(), arch.output_dim());
        let kind = match self.data.as_str() {
            "auto" if arch.is_linear() || dh < 2 => "teacher",
            "auto" => "blobs",
            k @ ("teacher" | "blobs" | "idx") => k,
            other => {
                return Err(bad(
                    "data",
                    format!("unknown data source `{other}` (expected auto, teacher, blobs or idx)"),
                ))
            }
        };
        if !(self.noise >= 0.0) {
            return Err(bad("noise", "must be non-negative"));
        }
        if kind == "idx" {
            if self.idx_images == "none" || self.idx_labels == "none" {
                return Err(bad("idx_images", "--data idx needs --idx-images and --idx-labels"));
            }
            let keep: Vec<u8> = parse_usize_list(&self.keep, "keep")?
                .into_iter()
                .map(|k| u8::try_from(k).map_err(|_| bad("keep", "labels must fit in a byte")))
                .collect::<Result<_>>()?;
            let encoding = match self.labels.as_str() {
                "onehot" => LabelEncoding::OneHot,
                "signed" => LabelEncoding::Signed,
                other => return Err(bad("labels", format!("unknown encoding `{other}` (expected onehot or signed)"))),
            };
            let data =
                load_idx(self.idx_images.as_ref(), self.idx_labels.as_ref(), &keep, self.max_per_class, encoding)?;
            if data.input_dim() != d0 || data.output_dim() != dh {
                return Err(bad(
                    "arch",
                    format!("the IDX data needs d0 = {} and dh = {}", data.input_dim(), data.output_dim()),
                ));
            }
            let doc = json!({
                "kind": "idx",
                "images": self.idx_images,
                "labels": self.idx_labels,
                "keep": keep,
                "max_per_class": self.max_per_class,
                "encoding": self.labels,
                "pixel_scale": "1/255",
            });
            return Ok((data, doc));
        }
        let whiten = match self.whiten.as_str() {
            "yes" => true,
            "no" => false,
            "auto" => arch.is_linear() && !classify_architecture(arch).map(|c| c.filling).unwrap_or(true),
            other => return Err(bad("whiten", format!("expected auto, yes or no, got `{other}`"))),
        };
        let kind = if kind == "teacher" {
            SyntheticKind::LinearTeacher { rank: d0.min(dh) }
        } else {
            if !(self.blob_sigma >= 0.0) {
                return Err(bad("blob_sigma", "must be non-negative"));
            }
            SyntheticKind::GaussianBlobs { classes: dh, sigma: self.blob_sigma }
        };
        let spec = SyntheticSpec { kind, d0, dh, n: self.data_n, noise_sigma: self.noise, seed, whiten };
        let data = make_synthetic(&spec).map_err(|e| match e {
            Error::Config { path, message } => Error::Config { path: path.replace("data.n", "data_n"), message },
            e => e,
        })?;
        Ok((data, json!(spec)))
    }
}

impl RunArgs {
    pub(crate) fn run_config(&self, eta: f64) -> Result<RunConfig> {
        let cfg = RunConfig {
            max_iters: self.budget,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            diverge_norm: self.diverge_norm,
            cycle_window: self.cycle_window,
            cycle_tol: self.cycle_tol,
            ..RunConfig::new(eta)
        };
        cfg.validate().map_err(|e| match e {
            Error::Config { path, message } => {
                let key = match path.trim_start_matches("run_cfg.") {
                    "max_iters" => "budget".to_string(),
                    other => other.to_string(),
                };
                Error::Config { path: key, message }
            }
            e => e,
        })?;
        Ok(cfg)
    }

    pub(crate) fn optimizer(&self, data: &DataBatch) -> Result<Optimizer> {
        match self.optimizer.as_str() {
            "gd" => Ok(Optimizer::Gd),
            "sgd" if self.batch >= 1 && self.batch <= data.len() => Ok(Optimizer::Sgd { batch_size: self.batch }),
            "sgd" if self.batch >= 1 => Ok(Optimizer::Sgd { batch_size: data.len() }),
            "sgd" => Err(bad("batch", "must be at least 1")),
            other => Err(bad("optimizer", format!("unknown optimizer `{other}` (expected gd or sgd)"))),
        }
    }
}

impl InitArgs {
    pub(crate) fn scheme(&self, problem: &Problem) -> Result<InitScheme> {
        let scheme = match (self.init.as_str(), problem.two_neuron) {
            ("auto", true) | ("box", _) => InitScheme::UniformBox { bounds: self.bounds(problem)? },
            ("auto", false) | ("he", _) => InitScheme::He,
            ("he_zero_output", _) => InitScheme::HeZeroOutput,
            ("gauss", _) => InitScheme::Gaussian { sigma: self.sigma },
            (other, _) => {
                return Err(bad(
                    "init",
                    format!("unknown scheme `{other}` (expected auto, box, gauss, he or he_zero_output)"),
                ))
            }
        };
        scheme.validate(&problem.arch).map_err(|e| match e {
            Error::Config { path, message } if path == "init.sigma" => Error::Config { path: "sigma".into(), message },
            e => e,
        })?;
        Ok(scheme)
    }

    fn bounds(&self, problem: &Problem) -> Result<ParamBox> {
        let dim = problem.arch.param_count();
        match self.init_box.as_str() {
            "auto" if problem.two_neuron => Ok(ParamBox { lo: vec![-0.2, 0.0], hi: vec![2.5, 2.5] }),
            "auto" => Ok(ParamBox::cube(dim, -1.0, 1.0)),
            spec => parse_cube(spec, dim, "box"),
        }
    }

    pub(crate) fn loss_ceiling(&self) -> Result<Option<f64>> {
        parse_optional_f64(&self.loss_ceiling, "loss_ceiling")
    }
}

pub(crate) fn parse_optional_f64(s: &str, path: &str) -> Result<Option<f64>> {
    if s == "none" {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| bad(path, format!("expected a number or `none`, got `{s}`")))?;
    if !(v >= 0.0) {
        return Err(bad(path, "must be non-negative"));
    }
    Ok(Some(v))
}

/// `lo:hi` as a cube in `dim` dimensions.
pub(crate) fn parse_cube(spec: &str, dim: usize, path: &str) -> Result<ParamBox> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(bad(path, format!("expected lo:hi, got `{spec}`")));
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad(path, format!("bad lower bound in `{spec}`")))?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad(path, format!("bad upper bound in `{spec}`")))?;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad(path, "need finite bounds with lo < hi"));
    }
    Ok(ParamBox::cube(dim, lo, hi))
}

pub(crate) fn parse_usize_list(s: &str, path: &str) -> Result<Vec<usize>> {
    let items: Vec<usize> = s
        .split(',')
        .map(|t| {
            t.trim().parse::<usize>().map_err(|_| bad(path, format!("expected comma-separated integers, got `{s}`")))
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(path, "must not be empty"));
    }
    Ok(items)
}

pub(crate) fn parse_f64_list(s: &str, path: &str) -> Result<Vec<f64>> {
    let items: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad(path, format!("expected comma-separated numbers, got `{s}`"))))
        .collect::<Result<_>>()?;
    if items.iter().any(|v| !v.is_finite()) {
        return Err(bad(path, "values must be finite"));
    }
    Ok(items)
}

/// `lo:hi:steps` (uniform) or `lo:hi:steps:log` (geometric).
pub(crate) fn parse_eta_grid(s: &str, path: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let usage = || bad(path, format!("expected lo:hi:steps[:log], got `{s}`"));
    if !(3..=4).contains(&parts.len()) {
        return Err(usage());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| usage())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| usage())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| usage())?;
    let log = match parts.get(3).map(|p| p.trim()) {
        None => false,
        Some("log") => true,
        Some(_) => return Err(usage()),
    };
    if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(bad(path, "step sizes must be positive and finite"));
    }
    if steps == 0 || (steps > 1 && !(hi > lo)) || (steps == 1 && hi != lo) {
        return Err(bad(path, "need steps >= 1 and hi > lo (or hi = lo with one step)"));
    }
    Ok(if log { log_grid(lo, hi, steps) } else { linear_grid(lo, hi, steps) })
}

pub(crate) fn parse_eta(eta: f64, path: &str) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(bad(path, "must be positive and finite"));
    }
    Ok(eta)
}

/// `auto` or a comma-separated parameter vector of the right length.
pub(crate) fn parse_theta(s: &str, arch: &Architecture, path: &str) -> Result<Option<ParamVector>> {
    if s == "auto" {
        return Ok(None);
    }
    let v = parse_f64_list(s, path)?;
    if v.len() != arch.param_count() {
        return Err(bad(path, format!("has {} entries, the network has {} parameters", v.len(), arch.param_count())));
    }
    Ok(Some(ParamVector(v)))
}

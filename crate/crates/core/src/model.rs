//! Feed-forward networks, their parameter space and exact derivatives.
//!
//! A network with widths `[d_0, ..., d_h]` maps `x` to
//! `sigma(W_h ... sigma(W_1 x + b_1) ... + b_h)`; the activation is applied
//! after every layer, including the last one. With identity activation and
//! no biases the network is the matrix product `W_h ... W_1` and the loss
//! factors through that product, which is what `landscape` exploits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense Hessians above this many parameters are refused unless a larger cap
/// is passed explicitly.
pub const DEFAULT_HESSIAN_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 5] =
        [Activation::Identity, Activation::Relu, Activation::Gelu, Activation::Tanh, Activation::Sigmoid];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Gelu => x * std_normal_cdf(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative; relu uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// `(apply(x), derivative(x))` sharing the expensive parts.
    #[inline]
    pub fn value_and_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Gelu => {
                let cdf = std_normal_cdf(x);
                (x * cdf, cdf + x * std_normal_pdf(x))
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            _ => (self.apply(x), self.derivative(x)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown activation `{s}` (expected identity, relu, gelu, tanh or sigmoid)"))
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss functional applied to the network output.
///
/// `Mse` is the summed squared residual `sum_i |y_i - f(x_i)|^2`; with
/// `half` it is multiplied by 1/2. Cross-entropy is averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse { half: bool },
    SoftmaxCrossEntropy,
}

impl LossKind {
    pub const MSE: LossKind = LossKind::Mse { half: false };
    pub const HALF_MSE: LossKind = LossKind::Mse { half: true };

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse { half: false } => "mse",
            LossKind::Mse { half: true } => "half_mse",
            LossKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mse" => Ok(LossKind::MSE),
            "half_mse" | "half-mse" => Ok(LossKind::HALF_MSE),
            "ce" | "softmax_cross_entropy" | "cross-entropy" => Ok(LossKind::SoftmaxCrossEntropy),
            _ => Err(format!("unknown loss `{s}` (expected mse, half_mse or ce)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    layer_dims: Vec<usize>,
    activation: Activation,
    use_bias: bool,
    loss: LossKind,
}

impl Architecture {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, use_bias: bool, loss: LossKind) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least an input and an output width, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidArchitecture(format!("zero width in {layer_dims:?}")));
        }
        if loss == LossKind::SoftmaxCrossEntropy && *layer_dims.last().unwrap() < 2 {
            return Err(Error::CrossEntropySingleOutput);
        }
        Ok(Self { layer_dims, activation, use_bias, loss })
    }

    /// Identity activation, no biases, summed squared loss.
    pub fn linear(layer_dims: Vec<usize>) -> Result<Self> {
        Self::new(layer_dims, Activation::Identity, false, LossKind::MSE)
    }

    /// The scalar network `x -> w2 w1 x` with loss `1/2 (y - w2 w1 x)^2`.
    pub fn two_neuron() -> Self {
        Self::new(vec![1, 1, 1], Activation::Identity, false, LossKind::HALF_MSE).expect("valid")
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn use_bias(&self) -> bool {
        self.use_bias
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn with_loss(mut self, loss: LossKind) -> Result<Self> {
        if loss == LossKind::SoftmaxCrossEntropy && self.output_dim() < 2 {
            return Err(Error::CrossEntropySingleOutput);
        }
        self.loss = loss;
        Ok(self)
    }

    /// Number of weight layers `h`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn weight_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        let biases: usize = if self.use_bias { self.layer_dims[1..].iter().sum() } else { 0 };
        self.weight_count() + biases
    }

    /// True when the network is a plain matrix product, so the analytic
    /// landscape machinery applies.
    pub fn is_linear(&self) -> bool {
        self.activation == Activation::Identity && !self.use_bias
    }

    /// Smallest width, the rank budget of the product map.
    pub fn rank_budget(&self) -> usize {
        *self.layer_dims.iter().min().unwrap()
    }

    /// Offset of layer `i` (1-based) weights in the flat layout.
    pub fn weight_offset(&self, layer: usize) -> usize {
        self.layer_dims[..layer].windows(2).map(|w| w[0] * w[1]).sum()
    }

    fn bias_offset(&self, layer: usize) -> usize {
        self.weight_count() + self.layer_dims[1..layer].iter().sum::<usize>()
    }

    fn require_linear(&self) -> Result<()> {
        if self.is_linear() {
            Ok(())
        } else {
            Err(Error::NotLinear)
        }
    }

    fn check_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::ParamLength { expected: self.param_count(), got: theta.len() });
        }
        Ok(())
    }

    fn check_data(&self, data: &DataBatch) -> Result<()> {
        if data.x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} rows, architecture expects {}",
                data.x.nrows(),
                self.input_dim()
            )));
        }
        if data.y.nrows() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "labels have {} rows, architecture expects {}",
                data.y.nrows(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn unflatten(&self, theta: &ParamVector) -> Result<Layers> {
        self.check_params(theta)?;
        let v = theta.as_slice();
        let weights = (1..=self.depth())
            .map(|i| {
                let (rows, cols) = (self.layer_dims[i], self.layer_dims[i - 1]);
                let off = self.weight_offset(i);
                DMatrix::from_row_slice(rows, cols, &v[off..off + rows * cols])
            })
            .collect();
        let biases = if self.use_bias {
            (1..=self.depth())
                .map(|i| {
                    let off = self.bias_offset(i);
                    DVector::from_column_slice(&v[off..off + self.layer_dims[i]])
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Layers { weights, biases })
    }

    pub fn flatten(&self, layers: &Layers) -> Result<ParamVector> {
        if layers.weights.len() != self.depth() || (self.use_bias && layers.biases.len() != self.depth()) {
            return Err(Error::DimensionMismatch("layer count does not match architecture".into()));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (i, w) in layers.weights.iter().enumerate() {
            if w.shape() != (self.layer_dims[i + 1], self.layer_dims[i]) {
                return Err(Error::DimensionMismatch(format!("weight {} has shape {:?}", i + 1, w.shape())));
            }
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
        }
        if self.use_bias {
            for b in &layers.biases {
                out.extend(b.iter());
            }
        }
        Ok(ParamVector(out))
    }

    /// `W_h ... W_1`, multiplied left to right.
    pub fn product_map(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        self.require_linear()?;
        let layers = self.unflatten(theta)?;
        Ok(product(layers.weights.iter().rev()).expect("depth >= 1"))
    }

    pub fn forward(&self, theta: &ParamVector, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_params(theta)?;
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} rows, architecture expects {}",
                x.nrows(),
                self.input_dim()
            )));
        }
        let layers = self.unflatten(theta)?;
        Ok(self.forward_pass(&layers, x).activations.pop().unwrap())
    }

    fn forward_pass(&self, layers: &Layers, x: &DMatrix<f64>) -> ForwardTrace {
        let act = self.activation;
        let mut slopes = Vec::with_capacity(self.depth());
        let mut activations = Vec::with_capacity(self.depth() + 1);
        activations.push(x.clone());
        for (i, w) in layers.weights.iter().enumerate() {
            let mut z = w * activations.last().unwrap();
            if self.use_bias {
                let b = &layers.biases[i];
                for mut col in z.column_iter_mut() {
                    col += b;
                }
            }
            if act == Activation::Identity {
                activations.push(z);
            } else {
                let mut slope = z.clone();
                for (v, s) in z.iter_mut().zip(slope.iter_mut()) {
                    (*v, *s) = act.value_and_derivative(*v);
                }
                slopes.push(slope);
                activations.push(z);
            }
        }
        ForwardTrace { slopes, activations }
    }

    pub fn loss(&self, theta: &ParamVector, data: &DataBatch) -> Result<f64> {
        self.check_data(data)?;
        let out = self.forward(theta, &data.x)?;
        Ok(self.output_loss(&out, &data.y).0)
    }

    /// Loss value and its derivative with respect to the network output.
    fn output_loss(&self, out: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        match self.loss {
            LossKind::Mse { half } => {
                let c = if half { 0.5 } else { 1.0 };
                let r = out - y;
                (c * r.norm_squared(), r * (2.0 * c))
            }
            LossKind::SoftmaxCrossEntropy => {
                let n = out.ncols() as f64;
                let mut total = 0.0;
                let mut d = DMatrix::zeros(out.nrows(), out.ncols());
                for j in 0..out.ncols() {
                    let col = out.column(j);
                    let m = col.max();
                    let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    let mass: f64 = y.column(j).sum();
                    for k in 0..out.nrows() {
                        let logp = col[k] - lse;
                        total -= y[(k, j)] * logp;
                        d[(k, j)] = (logp.exp() * mass - y[(k, j)]) / n;
                    }
                }
                (total / n, d)
            }
        }
    }

    /// Loss and gradient by reverse-mode differentiation.
    pub fn loss_and_gradient(&self, theta: &ParamVector, data: &DataBatch) -> Result<(f64, ParamVector)> {
        self.check_data(data)?;
        let layers = self.unflatten(theta)?;
        let trace = self.forward_pass(&layers, &data.x);
        let (value, mut delta) = self.output_loss(trace.activations.last().unwrap(), &data.y);
        let act = self.activation;
        let h = self.depth();
        let mut grads_w: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); h];
        let mut grads_b: Vec<DVector<f64>> = Vec::new();
        if self.use_bias {
            grads_b = vec![DVector::zeros(0); h];
        }
        for i in (0..h).rev() {
            if act != Activation::Identity {
                delta.component_mul_assign(&trace.slopes[i]);
            }
            grads_w[i] = &delta * trace.activations[i].transpose();
            if self.use_bias {
                grads_b[i] = delta.column_sum();
            }
            if i > 0 {
                delta = layers.weights[i].tr_mul(&delta);
            }
        }
        let grad = self.flatten(&Layers { weights: grads_w, biases: grads_b })?;
        Ok((value, grad))
    }

    pub fn gradient(&self, theta: &ParamVector, data: &DataBatch) -> Result<ParamVector> {
        Ok(self.loss_and_gradient(theta, data)?.1)
    }

    /// One gradient descent step `theta - eta * grad L(theta)`.
    pub fn gd_step(&self, theta: &ParamVector, data: &DataBatch, eta: f64) -> Result<ParamVector> {
        let g = self.gradient(theta, data)?;
        Ok(theta.axpy(-eta, &g))
    }

    pub fn hessian(&self, theta: &ParamVector, data: &DataBatch) -> Result<DMatrix<f64>> {
        self.hessian_with_cap(theta, data, DEFAULT_HESSIAN_CAP)
    }

    /// Dense symmetric Hessian. Linear networks with squared loss are assembled
    /// analytically; everything else uses central differences of the gradient.
    pub fn hessian_with_cap(&self, theta: &ParamVector, data: &DataBatch, cap: usize) -> Result<DMatrix<f64>> {
        let d = self.param_count();
        if d > cap {
            return Err(Error::HessianTooLarge { size: d, cap });
        }
        if self.is_linear() && matches!(self.loss, LossKind::Mse { .. }) {
            let (gn, curv) = self.hessian_terms(theta, data)?;
            Ok(gn + curv)
        } else {
            self.finite_difference_hessian(theta, data)
        }
    }

    /// Central differences of the analytic gradient, step `1e-5 (1 + |theta_i|)`,
    /// symmetrized.
    pub fn finite_difference_hessian(&self, theta: &ParamVector, data: &DataBatch) -> Result<DMatrix<f64>> {
        let d = self.param_count();
        self.check_params(theta)?;
        let mut h = DMatrix::zeros(d, d);
        let mut probe = theta.clone();
        for i in 0..d {
            let t = theta.0[i];
            let step = 1e-5 * (1.0 + t.abs());
            probe.0[i] = t + step;
            let gp = self.gradient(&probe, data)?;
            probe.0[i] = t - step;
            let gm = self.gradient(&probe, data)?;
            probe.0[i] = t;
            for j in 0..d {
                h[(j, i)] = (gp.0[j] - gm.0[j]) / (2.0 * step);
            }
        }
        Ok(symmetrize(h))
    }

    /// The two terms of the Hessian of `l(W_h...W_1)` for a linear network:
    /// the Gauss-Newton part `Dmu^T D^2 l Dmu` and the curvature part
    /// `Dl . D^2 mu`, which vanishes wherever `Dl(mu(theta)) = 0`.
    pub fn hessian_terms(&self, theta: &ParamVector, data: &DataBatch) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.require_linear()?;
        self.check_data(data)?;
        let c = match self.loss {
            LossKind::Mse { half } => {
                if half {
                    0.5
                } else {
                    1.0
                }
            }
            LossKind::SoftmaxCrossEntropy => return Err(Error::NotLinear),
        };
        let layers = self.unflatten(theta)?;
        let w = &layers.weights;
        let dims = &self.layer_dims;
        let h = self.depth();
        let n_params = self.param_count();

        // after[i] = W_h ... W_{i+2}  (product of layers above layer i+1, 0-based i)
        // before[i] = W_i ... W_1     (product of layers below layer i+1)
        let after: Vec<DMatrix<f64>> = (0..h)
            .map(|i| product(w[i + 1..].iter().rev()).unwrap_or_else(|| DMatrix::identity(dims[h], dims[h])))
            .collect();
        let before: Vec<DMatrix<f64>> = (0..h)
            .map(|i| product(w[..i].iter().rev()).unwrap_or_else(|| DMatrix::identity(dims[0], dims[0])))
            .collect();

        let s = &data.x * data.x.transpose();
        let residual = product(w.iter().rev()).unwrap() * &data.x - &data.y;
        let g = residual * data.x.transpose();

        let mut gn = DMatrix::zeros(n_params, n_params);
        let mut curv = DMatrix::zeros(n_params, n_params);
        for i in 0..h {
            let (ri, ci) = (dims[i + 1], dims[i]);
            let oi = self.weight_offset(i + 1);
            for j in i..h {
                let (rj, cj) = (dims[j + 1], dims[j]);
                let oj = self.weight_offset(j + 1);
                let left = after[i].tr_mul(&after[j]);
                let right = &before[i] * &s * before[j].transpose();
                for a in 0..ri {
                    for b in 0..ci {
                        for a2 in 0..rj {
                            for b2 in 0..cj {
                                let v = 2.0 * c * left[(a, a2)] * right[(b, b2)];
                                gn[(oi + a * ci + b, oj + a2 * cj + b2)] = v;
                                gn[(oj + a2 * cj + b2, oi + a * ci + b)] = v;
                            }
                        }
                    }
                }
                if j > i {
                    // W = after[j] W_j between W_i before[i]
                    let between =
                        product(w[i + 1..j].iter().rev()).unwrap_or_else(|| DMatrix::identity(dims[j], dims[j]));
                    let t = &before[i] * g.transpose() * &after[j];
                    for a in 0..rj {
                        for b in 0..cj {
                            for cc in 0..ri {
                                for dd in 0..ci {
                                    let v = 2.0 * c * t[(dd, a)] * between[(b, cc)];
                                    let p = oj + a * cj + b;
                                    let q = oi + cc * ci + dd;
                                    curv[(p, q)] = v;
                                    curv[(q, p)] = v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((gn, curv))
    }
}

fn product<'a>(mut mats: impl Iterator<Item = &'a DMatrix<f64>>) -> Option<DMatrix<f64>> {
    let first = mats.next()?.clone();
    Some(mats.fold(first, |acc, m| acc * m))
}

pub(crate) fn symmetrize(h: DMatrix<f64>) -> DMatrix<f64> {
    let ht = h.transpose();
    (h + ht) * 0.5
}

struct ForwardTrace {
    /// Activation derivatives at each layer's pre-activations (empty for
    /// identity activations).
    slopes: Vec<DMatrix<f64>>,
    activations: Vec<DMatrix<f64>>,
}

/// Per-layer weight matrices (`W_i` is `d_i x d_{i-1}`) and optional biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Layers {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// A point in parameter space, flattened layer-major: `W_1` row-major, then
/// `W_2`, ..., then `b_1, ..., b_h` when biases are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + alpha * b).collect())
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| c * v).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Inputs `x` (`d_0 x n`, one sample per column) and labels `y` (`d_h x n`).
#[derive(Clone, Debug, PartialEq)]
pub struct DataBatch {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl DataBatch {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch(format!("{} inputs but {} labels", x.ncols(), y.ncols())));
        }
        if x.ncols() == 0 {
            return Err(Error::DimensionMismatch("empty batch".into()));
        }
        Ok(Self { x, y })
    }

    /// The single sample `{x -> y}` on scalars.
    pub fn scalar_pair(x: f64, y: f64) -> Self {
        Self { x: DMatrix::from_element(1, 1, x), y: DMatrix::from_element(1, 1, y) }
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.y.nrows()
    }

    /// Columns `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> DataBatch {
        DataBatch { x: self.x.select_columns(indices), y: self.y.select_columns(indices) }
    }
}

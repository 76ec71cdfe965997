//! Dense feed-forward networks with exact reverse-mode gradients and Adam.
//!
//! Batches are row-major `B × d` matrices. A layer computes
//! `act(x · Wᵀ + b)` with `W` stored `out × in`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRecord", into = "LayerRecord")]
pub struct Layer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Checkpoint form of a layer: flat row-major weights.
#[derive(Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Layer> for LayerRecord {
    fn from(l: Layer) -> Self {
        Self {
            in_dim: l.in_dim(),
            out_dim: l.out_dim(),
            activation: l.activation,
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
        }
    }
}

impl TryFrom<LayerRecord> for Layer {
    type Error = Error;

    fn try_from(r: LayerRecord) -> Result<Self> {
        let weights = Array2::from_shape_vec((r.out_dim, r.in_dim), r.weights)
            .map_err(|e| Error::ShapeMismatch(format!("layer weights: {e}")))?;
        if r.bias.len() != r.out_dim {
            return Err(Error::ShapeMismatch(format!(
                "layer bias has {} entries, expected {}",
                r.bias.len(),
                r.out_dim
            )));
        }
        Ok(Self {
            weights,
            bias: Array1::from(r.bias),
            activation: r.activation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
    pub seed: u64,
}

/// Per-layer inputs, pre-activations and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(g.bias.iter()).all(|v| v.is_finite()))
    }
}

impl DenseNet {
    /// Glorot-uniform weights and zero biases from a seeded stream.
    /// `layer_dims` lists every width including the input, so it is one
    /// longer than `activations`.
    pub fn new(layer_dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.len() != activations.len() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} layer widths need {} activations, got {}",
                layer_dims.len(),
                layer_dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::ShapeMismatch("layer widths must be positive".into()));
        }
        let mut rng = rng::seeded(seed);
        let layers = layer_dims
            .windows(2)
            .zip(activations)
            .map(|(dims, &activation)| {
                let (fan_in, fan_out) = (dims[0], dims[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((fan_out, fan_in), |_| {
                        rng.random_range(-limit..=limit)
                    }),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {cols} columns, network expects {}",
                self.in_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch.ncols())?;
        let mut x = batch.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            x = z;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(batch.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            let y = z.mapv(|v| layer.activation.apply(v));
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        Ok(Trace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Parameter gradients and input gradient, given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if upstream.dim() != trace.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.dim(),
                trace.output.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        let mut output = trace.output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[i];
            ndarray::Zip::from(&mut delta)
                .and(z)
                .and(&output)
                .for_each(|d, &z, &y| *d *= layer.activation.derivative(z, y));
            let x = &trace.inputs[i];
            grads.push(LayerGrad {
                weights: delta.t().dot(x),
                bias: delta.sum_axis(Axis(0)),
            });
            delta = delta.dot(&layer.weights);
            output = x.clone();
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Recomputes the forward pass on `batch` and backpropagates `upstream`.
    pub fn backward_from(&self, batch: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let trace = self.forward_trace(batch)?;
        self.backward(&trace, upstream)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Adam moments mirroring a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every parameter of `net`.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut OptimState) -> Result<()> {
    if grads.layers.len() != net.layers.len() || state.first.len() != net.layers.len() {
        return Err(Error::ShapeMismatch("gradient/optimizer layer count".into()));
    }
    if !grads.all_finite() {
        return Err(Error::TrainingDivergence("non-finite gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.eps;

    for (((layer, grad), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        if grad.weights.dim() != layer.weights.dim() || m.len() != layer.weights.len() + layer.bias.len() {
            return Err(Error::ShapeMismatch("gradient/parameter shape".into()));
        }
        let params = layer
            .weights
            .iter_mut()
            .chain(layer.bias.iter_mut());
        let g = grad.weights.iter().chain(grad.bias.iter());
        for (((p, &g), m), v) in params.zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

const PROB_CLAMP: f64 = 1e-7;

fn check_same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean squared error over all entries and its gradient w.r.t. `pred`.
pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(pred, target)?;
    let count = pred.len().max(1) as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff * (2.0 / count)))
}

/// Mean binary cross-entropy and its gradient w.r.t. `prob`. Probabilities
/// are clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(prob: ArrayView2<f64>, label: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(prob, label)?;
    let count = prob.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(prob.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(prob)
        .and(label)
        .for_each(|g, &p, &y| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            *g = (p - y) / (p * (1.0 - p)) / count;
        });
    Ok((loss / count, grad))
}

/// Minibatch iteration order for one epoch: a seeded shuffle split into
/// chunks of at most `batch_size`.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut rng::Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Gathers `rows` of `data` into a new matrix.
pub fn gather_rows(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    data.select(Axis(0), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Identity,
    ];

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    /// Perturbs every parameter of a copy of `net` and differentiates
    /// `loss(net(batch))` numerically.
    fn finite_difference(
        net: &DenseNet,
        batch: &Array2<f64>,
        loss: &dyn Fn(&Array2<f64>) -> f64,
        h: f64,
    ) -> Gradients {
        let mut grads = Gradients::zeros_like(net);
        for li in 0..net.layers.len() {
            let (rows, cols) = net.layers[li].weights.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = net.clone();
                    plus.layers[li].weights[[r, c]] += h;
                    let mut minus = net.clone();
                    minus.layers[li].weights[[r, c]] -= h;
                    grads.layers[li].weights[[r, c]] = (loss(&plus.forward(batch.view()).unwrap())
                        - loss(&minus.forward(batch.view()).unwrap()))
                        / (2.0 * h);
                }
                let mut plus = net.clone();
                plus.layers[li].bias[r] += h;
                let mut minus = net.clone();
                minus.layers[li].bias[r] -= h;
                grads.layers[li].bias[r] = (loss(&plus.forward(batch.view()).unwrap())
                    - loss(&minus.forward(batch.view()).unwrap()))
                    / (2.0 * h);
            }
        }
        grads
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    fn assert_grads_close(analytic: &Gradients, numeric: &Gradients, tol: f64) {
        for (a, n) in analytic.layers.iter().zip(&numeric.layers) {
            for (x, y) in a.weights.iter().chain(a.bias.iter()).zip(n.weights.iter().chain(n.bias.iter())) {
                assert!(rel_err(*x, *y) <= tol, "analytic {x} vs numeric {y}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias_and_glorot_bound() {
        let a = DenseNet::new(&[16, 16], &[Activation::Tanh], 7).unwrap();
        let b = DenseNet::new(&[16, 16], &[Activation::Tanh], 7).unwrap();
        assert_eq!(a, b);
        assert!(a.layers[0].bias.iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / 32.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert_ne!(a, DenseNet::new(&[16, 16], &[Activation::Tanh], 8).unwrap());
    }

    #[test]
    fn init_rejects_mismatched_lists() {
        assert!(DenseNet::new(&[4, 3, 2], &[Activation::Tanh], 0).is_err());
        assert!(DenseNet::new(&[4], &[], 0).is_err());
        assert!(DenseNet::new(&[4, 0], &[Activation::Tanh], 0).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net = DenseNet::new(&[3, 5, 2], &[Activation::Tanh, Activation::Tanh], 1).unwrap();
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        let out = net.forward(random_matrix(4, 3, 2).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_is_affine() {
        let mut net = DenseNet::new(&[2, 2], &[Activation::Identity], 0).unwrap();
        net.layers[0].weights = array![[1.0, 2.0], [3.0, 4.0]];
        net.layers[0].bias = array![0.5, -1.0];
        let out = net.forward(array![[1.0, -1.0], [2.0, 0.5]].view()).unwrap();
        // [1·1 + 2·(−1) + 0.5, 3·1 + 4·(−1) − 1] and [1·2 + 2·0.5 + 0.5, 3·2 + 4·0.5 − 1]
        assert_eq!(out, array![[-0.5, -2.0], [3.5, 7.0]]);
    }

    #[test]
    fn rows_are_independent() {
        let net = DenseNet::new(&[3, 4, 2], &[Activation::Tanh, Activation::Sigmoid], 5).unwrap();
        let x = random_matrix(5, 3, 9);
        let perm = [3, 0, 4, 1, 2];
        let y = net.forward(x.view()).unwrap();
        let yp = net.forward(gather_rows(&x, &perm).view()).unwrap();
        assert_eq!(yp, gather_rows(&y, &perm));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let net = DenseNet::new(&[3, 2], &[Activation::Tanh], 0).unwrap();
        assert!(matches!(net.forward(Array2::zeros((2, 4)).view()), Err(Error::ShapeMismatch(_))));
        let trace = net.forward_trace(Array2::zeros((2, 3)).view()).unwrap();
        assert!(net.backward(&trace, Array2::zeros((3, 2)).view()).is_err());
        assert!(mse(Array2::zeros((2, 2)).view(), Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_for_every_activation() {
        for (i, &act) in ALL.iter().enumerate() {
            let net = DenseNet::new(&[3, 4, 2], &[act, act], 10 + i as u64).unwrap();
            let x = random_matrix(3, 3, 20 + i as u64);
            let target = random_matrix(3, 2, 30 + i as u64);
            let (_, upstream) = mse(net.forward(x.view()).unwrap().view(), target.view()).unwrap();
            let (analytic, _) = net.backward_from(x.view(), upstream.view()).unwrap();
            let numeric = finite_difference(&net, &x, &|y| mse(y.view(), target.view()).unwrap().0, 1e-5);
            assert_grads_close(&analytic, &numeric, 1e-4);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = DenseNet::new(&[3, 4, 1], &[Activation::Tanh, Activation::Sigmoid], 3).unwrap();
        let x = random_matrix(2, 3, 4);
        let labels = array![[1.0], [0.0]];
        let loss = |x: &Array2<f64>| bce(net.forward(x.view()).unwrap().view(), labels.view()).unwrap().0;
        let (_, upstream) = bce(net.forward(x.view()).unwrap().view(), labels.view()).unwrap();
        let (_, dx) = net.backward_from(x.view(), upstream.view()).unwrap();
        let h = 1e-5;
        for r in 0..2 {
            for c in 0..3 {
                let mut plus = x.clone();
                plus[[r, c]] += h;
                let mut minus = x.clone();
                minus[[r, c]] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!(rel_err(dx[[r, c]], numeric) <= 1e-4);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = DenseNet::new(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], 1).unwrap();
        let (g, dx) = net
            .backward_from(random_matrix(4, 3, 1).view(), Array2::zeros((4, 2)).view())
            .unwrap();
        assert!(g.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_row_gradients() {
        let net = DenseNet::new(&[3, 4, 2], &[Activation::Tanh, Activation::Sigmoid], 2).unwrap();
        let x = random_matrix(4, 3, 6);
        let up = random_matrix(4, 2, 7);
        let (total, _) = net.backward_from(x.view(), up.view()).unwrap();
        let mut summed = Gradients::zeros_like(&net);
        for r in 0..4 {
            let (g, _) = net
                .backward_from(x.slice(ndarray::s![r..r + 1, ..]), up.slice(ndarray::s![r..r + 1, ..]))
                .unwrap();
            summed.add_assign(&g);
        }
        for (a, b) in total.layers.iter().zip(&summed.layers) {
            for (x, y) in a.weights.iter().chain(a.bias.iter()).zip(b.weights.iter().chain(b.bias.iter())) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut net = DenseNet::new(&[2, 2], &[Activation::Tanh], 0).unwrap();
        let before = net.clone();
        let mut state = OptimState::new(&net, 0.1);
        let zeros = Gradients::zeros_like(&net);
        adam_step(&mut net, &zeros, &mut state).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = DenseNet::new(&[1, 1], &[Activation::Identity], 0).unwrap();
        let w0 = net.layers[0].weights[[0, 0]];
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[[0, 0]] = 1.0;
        let mut state = OptimState::new(&net, 0.1);
        adam_step(&mut net, &grads, &mut state).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −0.1 · 1 / (1 + 1e−8)
        let moved = net.layers[0].weights[[0, 0]] - w0;
        assert!((moved + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
    }

    #[test]
    fn adam_rejects_nan() {
        let mut net = DenseNet::new(&[1, 1], &[Activation::Identity], 0).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].bias[0] = f64::NAN;
        let mut state = OptimState::new(&net, 0.1);
        assert!(matches!(adam_step(&mut net, &grads, &mut state), Err(Error::TrainingDivergence(_))));
    }

    #[test]
    fn loss_values() {
        let x = array![[0.3, -0.2], [1.0, 4.0]];
        assert_eq!(mse(x.view(), x.view()).unwrap().0, 0.0);
        assert_eq!(mse(array![[0.0, 0.0]].view(), array![[1.0, 1.0]].view()).unwrap().0, 1.0);
        for y in [0.0, 1.0, 0.3] {
            let (l, _) = bce(array![[0.5]].view(), array![[y]].view()).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = DenseNet::new(&[3, 4, 2], &[Activation::Relu, Activation::Sigmoid], 11).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["layers"][0]["weights"].as_array().unwrap().len(), 12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn gradients_pass_finite_difference_check(
                dims in prop::collection::vec(1usize..=8, 2..=4),
                acts in prop::collection::vec(0usize..4, 3),
                loss_kind in 0usize..2,
                batch in 1usize..=8,
                seed in any::<u64>(),
            ) {
                let n_layers = dims.len() - 1;
                let mut activations: Vec<_> = acts[..n_layers].iter().map(|&a| ALL[a]).collect();
                if loss_kind == 1 {
                    *activations.last_mut().unwrap() = Activation::Sigmoid;
                }
                let net = DenseNet::new(&dims, &activations, seed).unwrap();
                let x = random_matrix(batch, dims[0], seed ^ 1);
                let out_dim = *dims.last().unwrap();
                let target = if loss_kind == 0 {
                    random_matrix(batch, out_dim, seed ^ 2)
                } else {
                    random_matrix(batch, out_dim, seed ^ 2).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
                };
                let loss = |y: &Array2<f64>| if loss_kind == 0 {
                    mse(y.view(), target.view()).unwrap().0
                } else {
                    bce(y.view(), target.view()).unwrap().0
                };
                // keep relu pre-activations away from the kink
                let trace = net.forward_trace(x.view()).unwrap();
                let near_kink = net.layers.iter().zip(&trace.pre).any(|(l, z)| {
                    l.activation == Activation::Relu && z.iter().any(|v| v.abs() < 1e-3)
                });
                prop_assume!(!near_kink);
                let upstream = if loss_kind == 0 {
                    mse(trace.output().view(), target.view()).unwrap().1
                } else {
                    bce(trace.output().view(), target.view()).unwrap().1
                };
                let (analytic, _) = net.backward(&trace, upstream.view()).unwrap();
                let numeric = finite_difference(&net, &x, &loss, 1e-5);
                for (a, n) in analytic.layers.iter().zip(&numeric.layers) {
                    for (p, q) in a.weights.iter().chain(a.bias.iter()).zip(n.weights.iter().chain(n.bias.iter())) {
                        prop_assert!(rel_err(*p, *q) <= 1e-4, "analytic {} numeric {}", p, q);
                    }
                }
            }
        }
    }
}

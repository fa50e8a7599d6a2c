//! Dense feed-forward networks: ReLU hidden layers, softmax output, exact
//! reverse-mode gradients and plain SGD updates.

mod fbn1;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{input_err, shape_err, Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn, Matrix};
use crate::math;
use crate::rng::StreamRng;

pub use fbn1::{decode_fbn1, encode_fbn1, FBN1_MAGIC};

/// Probabilities are floored at this value inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn floored_ln(p: f64) -> f64 {
    math::ln(if p > LOG_FLOOR { p } else { LOG_FLOOR })
}

/// One affine layer: `z = W a + b` with `W` of shape `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(shape_err!(
                "layer has {} output rows but {} biases",
                weights.rows(),
                biases.len()
            ));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(shape_err!("layer dimensions must be positive"));
        }
        if !weights.is_finite() || !biases.iter().all(|b| b.is_finite()) {
            return Err(Error::Numeric("layer parameters must be finite".into()));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weights: Matrix::zeros(out_dim, in_dim), biases: vec![0.0; out_dim] }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.biases.len()
    }

    /// `inputs · Wᵀ + b` for a batch laid out one example per row.
    fn affine(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut z = matmul_nt(inputs, &self.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.biases) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// Feed-forward network; the last layer feeds a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err!("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape_err!(
                    "layer {k} outputs {} units but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                ));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero network with the given widths `[input, hidden..., classes]`.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Self::new(widths.windows(2).map(|w| DenseLayer::zeros(w[1], w[0])).collect())
    }

    /// Symmetric uniform initialization in `±sqrt(6 / (fan_in + fan_out))`
    /// with zero biases.
    pub fn init(widths: &[usize], rng: &mut StreamRng) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                let data = (0..fan_in * fan_out).map(|_| rng.uniform_in(-bound, bound)).collect();
                DenseLayer {
                    weights: Matrix::new(fan_out, fan_in, data).expect("sized above"),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[input, hidden..., classes]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(DenseLayer::out_dim));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    /// Same architecture with parameters taken from a flat vector laid out
    /// as in [`Network::params`].
    pub fn with_params(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(shape_err!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            ));
        }
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("parameters must be finite".into()));
        }
        let mut net = self.clone();
        let mut off = 0;
        for l in &mut net.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(net)
    }

    /// Every parameter multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let flat: Vec<f64> = self.params().into_iter().map(|v| v * c).collect();
        self.with_params(&flat)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.frobenius_sq() + l.biases.iter().map(|b| b * b).sum::<f64>())
            .sum()
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(shape_err!(
                "inputs have {} features, network expects {}",
                inputs.cols(),
                self.input_dim()
            ));
        }
        if !inputs.is_finite() {
            return Err(input_err!("inputs contain non-finite entries"));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate needed for backpropagation.
    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        self.check_inputs(inputs)?;
        let mut pre = Vec::with_capacity(self.depth());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.depth());
        for (k, layer) in self.layers.iter().enumerate() {
            let a = if k == 0 { inputs } else { &post[k - 1] };
            let z = layer.affine(a)?;
            let out = if k + 1 == self.depth() { softmax_rows(&z) } else { relu(&z) };
            pre.push(z);
            post.push(out);
        }
        Ok(ForwardTrace { inputs: inputs.clone(), pre, post })
    }

    /// Class probabilities without retaining the trace.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        let mut a = self.layers[0].affine(inputs)?;
        for layer in &self.layers[1..] {
            relu_in_place(&mut a);
            a = layer.affine(&a)?;
        }
        Ok(softmax_rows(&a))
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(shape_err!("widths must list at least two positive sizes, got {widths:?}"));
    }
    Ok(())
}

fn relu(z: &Matrix) -> Matrix {
    let mut a = z.clone();
    relu_in_place(&mut a);
    a
}

// max(z, 0); derivative at 0 taken as 0
fn relu_in_place(z: &mut Matrix) {
    z.as_mut_slice().iter_mut().for_each(|v| {
        if *v <= 0.0 {
            *v = 0.0
        }
    });
}

/// Row-wise softmax computed as `exp(z - max z)` normalized.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - m);
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

/// Intermediates of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    /// Pre-activation of layer `k`.
    pub fn pre_activation(&self, k: usize) -> &Matrix {
        &self.pre[k]
    }

    /// Post-activation of layer `k`; for the last layer, the probabilities.
    pub fn post_activation(&self, k: usize) -> &Matrix {
        &self.post[k]
    }

    pub fn probs(&self) -> &Matrix {
        &self.post[self.post.len() - 1]
    }

    fn layer_input(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.inputs
        } else {
            &self.post[k - 1]
        }
    }

    fn check_against(&self, net: &Network) -> Result<()> {
        let stale = || shape_err!("trace does not belong to this network");
        if self.depth() != net.depth() || self.inputs.cols() != net.input_dim() {
            return Err(stale());
        }
        for (z, l) in self.pre.iter().zip(net.layers()) {
            if z.cols() != l.out_dim() || z.rows() != self.batch_size() {
                return Err(stale());
            }
        }
        Ok(())
    }
}

/// Forward pass; the probabilities are `trace.probs()`.
pub fn forward(net: &Network, inputs: &Matrix) -> Result<ForwardTrace> {
    net.forward(inputs)
}

/// Per-layer parameter gradients shaped like the network that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(|l| DenseLayer::zeros(l.out_dim(), l.in_dim())).collect(),
        }
    }

    /// Weight gradient of layer `k`.
    pub fn weights(&self, k: usize) -> &Matrix {
        &self.layers[k].weights
    }

    pub fn biases(&self, k: usize) -> &[f64] {
        &self.layers[k].biases
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Flattened in the same order as [`Network::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn from_flat(net: &Network, flat: &[f64]) -> Result<Self> {
        let shaped = net.with_params_unchecked(flat)?;
        Ok(Self { layers: shaped.layers })
    }

    pub fn l2_norm(&self) -> f64 {
        math::sqrt(
            self.layers
                .iter()
                .map(|l| l.weights.frobenius_sq() + l.biases.iter().map(|b| b * b).sum::<f64>())
                .sum(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }

    fn check_congruent(&self, other_layers: &[DenseLayer]) -> Result<()> {
        if self.layers.len() != other_layers.len()
            || self
                .layers
                .iter()
                .zip(other_layers)
                .any(|(a, b)| a.out_dim() != b.out_dim() || a.in_dim() != b.in_dim())
        {
            return Err(shape_err!("gradient shapes do not match"));
        }
        Ok(())
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &Gradients) -> Result<()> {
        self.check_congruent(&other.layers)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.axpy(c, &b.weights)?;
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += c * y;
            }
        }
        Ok(())
    }

    /// `self += c * θ` for the parameters of `net`.
    pub fn add_scaled_params(&mut self, c: f64, net: &Network) -> Result<()> {
        self.check_congruent(&net.layers)?;
        for (a, b) in self.layers.iter_mut().zip(&net.layers) {
            a.weights.axpy(c, &b.weights)?;
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += c * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.scale(c);
            l.biases.iter_mut().for_each(|b| *b *= c);
        }
    }

    /// Adds `f()` to every entry, in flattened order.
    pub fn add_each(&mut self, mut f: impl FnMut() -> f64) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|v| *v += f());
            l.biases.iter_mut().for_each(|v| *v += f());
        }
    }
}

impl Network {
    // Shapes a flat vector like this network without the finiteness check;
    // gradients may legitimately carry non-finite values to be reported.
    fn with_params_unchecked(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(shape_err!(
                "expected {} entries, got {}",
                self.num_params(),
                flat.len()
            ));
        }
        let mut net = self.clone();
        let mut off = 0;
        for l in &mut net.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(net)
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(shape_err!("{} labels for a batch of {rows}", labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(input_err!("label {bad} out of range for {classes} classes"));
    }
    Ok(())
}

/// Mean negative log-likelihood of the true classes.
pub fn loss_cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, probs.rows(), probs.cols())?;
    if labels.is_empty() {
        return Err(input_err!("empty batch"));
    }
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -floored_ln(probs.get(i, y))).sum();
    Ok(total / labels.len() as f64)
}

/// Row-wise `KL(p_i || q_i)`.
pub fn kl_rows(p: &Matrix, q: &Matrix) -> Result<Vec<f64>> {
    p.check_same_shape(q)?;
    Ok(p.iter_rows()
        .zip(q.iter_rows())
        .map(|(pr, qr)| {
            pr.iter()
                .zip(qr)
                .filter(|(&pc, _)| pc > 0.0)
                .map(|(&pc, &qc)| pc * (floored_ln(pc) - floored_ln(qc)))
                .sum()
        })
        .collect())
}

/// Batch mean of `KL(p_i || q_i)`.
pub fn kl_divergence(p: &Matrix, q: &Matrix) -> Result<f64> {
    let rows = kl_rows(p, q)?;
    if rows.is_empty() {
        return Err(input_err!("empty batch"));
    }
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// `scale · (P − onehot(Y))`, the logit gradient of cross-entropy.
pub fn ce_output_delta(probs: &Matrix, labels: &[usize], scale: f64) -> Result<Matrix> {
    check_labels(labels, probs.rows(), probs.cols())?;
    let mut d = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = d.row_mut(i);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(d)
}

// dL/dz for every layer, last layer first in the backward sweep but stored
// in layer order. When `to_input` is set also returns dL/dx.
fn layer_deltas(
    net: &Network,
    trace: &ForwardTrace,
    output_delta: Matrix,
    to_input: bool,
) -> Result<(Vec<Matrix>, Option<Matrix>)> {
    trace.check_against(net)?;
    if output_delta.rows() != trace.batch_size() || output_delta.cols() != net.num_classes() {
        return Err(shape_err!("output delta does not match the trace"));
    }
    let depth = net.depth();
    let mut deltas: Vec<Option<Matrix>> = vec![None; depth];
    let mut delta = output_delta;
    let mut input_delta = None;
    for k in (0..depth).rev() {
        if k > 0 || to_input {
            let mut below = matmul_nn(&delta, &net.layers[k].weights)?;
            if k > 0 {
                let z = &trace.pre[k - 1];
                for (d, &zv) in below.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
                deltas[k] = Some(core::mem::replace(&mut delta, below));
            } else {
                input_delta = Some(below);
                deltas[0] = Some(core::mem::replace(&mut delta, Matrix::zeros(0, 0)));
            }
        } else {
            deltas[0] = Some(core::mem::replace(&mut delta, Matrix::zeros(0, 0)));
        }
    }
    Ok((deltas.into_iter().map(|d| d.expect("filled")).collect(), input_delta))
}

fn grads_from_deltas(trace: &ForwardTrace, deltas: &[Matrix]) -> Result<Gradients> {
    let layers = deltas
        .iter()
        .enumerate()
        .map(|(k, d)| {
            Ok(DenseLayer { weights: matmul_tn(d, trace.layer_input(k))?, biases: d.column_sums() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Gradients { layers })
}

/// Parameter gradients for an arbitrary gradient at the logits.
pub fn backward_from_output_delta(
    net: &Network,
    trace: &ForwardTrace,
    output_delta: Matrix,
) -> Result<Gradients> {
    let (deltas, _) = layer_deltas(net, trace, output_delta, false)?;
    grads_from_deltas(trace, &deltas)
}

/// Gradient of the batch-mean cross-entropy with respect to every parameter.
pub fn backward(net: &Network, trace: &ForwardTrace, labels: &[usize]) -> Result<Gradients> {
    trace.check_against(net)?;
    let n = trace.batch_size();
    if n == 0 {
        return Err(input_err!("empty batch"));
    }
    let delta = ce_output_delta(trace.probs(), labels, 1.0 / n as f64)?;
    backward_from_output_delta(net, trace, delta)
}

/// Input gradients for an arbitrary gradient at the logits, one row per
/// example.
pub fn input_gradients_from_output_delta(
    net: &Network,
    trace: &ForwardTrace,
    output_delta: Matrix,
) -> Result<Matrix> {
    let (_, dx) = layer_deltas(net, trace, output_delta, true)?;
    Ok(dx.expect("requested"))
}

/// One gradient per example; element `i` equals [`backward`] on the
/// singleton batch holding example `i`.
pub fn per_example_gradients(
    net: &Network,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<Vec<Gradients>> {
    check_labels(labels, inputs.rows(), net.num_classes())?;
    (0..inputs.rows())
        .map(|i| {
            let trace = net.forward(&inputs.slice_rows(i, i + 1))?;
            backward(net, &trace, &labels[i..i + 1])
        })
        .collect()
}

/// Objective whose input gradient is requested.
#[derive(Debug, Clone, Copy)]
pub enum InputObjective<'a> {
    /// Cross-entropy against a class label.
    CrossEntropy { label: usize },
    /// `KL(reference || F(x))` against a fixed reference distribution.
    Kl { reference: &'a [f64] },
}

/// Gradient of `objective` with respect to the input `x`.
pub fn input_gradient(net: &Network, x: &[f64], objective: InputObjective<'_>) -> Result<Vec<f64>> {
    if x.len() != net.input_dim() {
        return Err(shape_err!("input has {} features, expected {}", x.len(), net.input_dim()));
    }
    let trace = net.forward(&Matrix::row_vector(x))?;
    let probs = trace.probs();
    let delta = match objective {
        InputObjective::CrossEntropy { label } => ce_output_delta(probs, &[label], 1.0)?,
        InputObjective::Kl { reference } => {
            if reference.len() != net.num_classes() {
                return Err(shape_err!("reference distribution has the wrong length"));
            }
            let r = Matrix::row_vector(reference);
            kl_reference_delta(&r, probs)?
        }
    };
    Ok(input_gradients_from_output_delta(net, &trace, delta)?.into_vec())
}

/// Logit gradient of `KL(r || softmax(z))`, i.e. `q − r` row-wise.
pub fn kl_reference_delta(reference: &Matrix, probs: &Matrix) -> Result<Matrix> {
    reference.check_same_shape(probs)?;
    let mut d = probs.clone();
    for (v, r) in d.as_mut_slice().iter_mut().zip(reference.as_slice()) {
        *v -= r;
    }
    Ok(d)
}

/// Sum of per-example cross-entropy gradients after clipping each one to
/// L2 norm at most `clip_norm`.
#[derive(Debug, Clone)]
pub struct ClippedSum {
    pub sum: Gradients,
    /// Per-example gradient norms before clipping.
    pub raw_norms: Vec<f64>,
    /// Per-example scale factors `1 / max(1, norm / C)`.
    pub factors: Vec<f64>,
}

impl ClippedSum {
    /// Norm of each example's gradient after clipping.
    pub fn clipped_norms(&self) -> Vec<f64> {
        self.raw_norms.iter().zip(&self.factors).map(|(n, f)| n * f).collect()
    }
}

/// Clipped per-example gradient sum without materializing per-example
/// gradients.
///
/// For a dense layer the gradient of example `i` is the outer product
/// `δ_i a_iᵀ` (plus `δ_i` for the bias), so its squared norm factors as
/// `|δ_i|² (|a_i|² + 1)`. Clipping scales `δ_i` for every layer at once since
/// the per-layer deltas are linear in the output delta.
pub fn clipped_gradient_sum(
    net: &Network,
    trace: &ForwardTrace,
    labels: &[usize],
    clip_norm: f64,
) -> Result<ClippedSum> {
    if !(clip_norm > 0.0) {
        return Err(input_err!("clip norm must be positive, got {clip_norm}"));
    }
    let delta = ce_output_delta(trace.probs(), labels, 1.0)?;
    let (mut deltas, _) = layer_deltas(net, trace, delta, false)?;
    let n = trace.batch_size();
    let mut sq = vec![0.0; n];
    for (k, d) in deltas.iter().enumerate() {
        let a = trace.layer_input(k);
        for (i, s) in sq.iter_mut().enumerate() {
            let dn: f64 = d.row(i).iter().map(|v| v * v).sum();
            let an: f64 = a.row(i).iter().map(|v| v * v).sum();
            *s += dn * (an + 1.0);
        }
    }
    let raw_norms: Vec<f64> = sq.into_iter().map(math::sqrt).collect();
    let factors: Vec<f64> = raw_norms
        .iter()
        .map(|&norm| {
            let r = norm / clip_norm;
            if r > 1.0 {
                1.0 / r
            } else {
                1.0
            }
        })
        .collect();
    for d in &mut deltas {
        for (i, &f) in factors.iter().enumerate() {
            if f != 1.0 {
                d.row_mut(i).iter_mut().for_each(|v| *v *= f);
            }
        }
    }
    let sum = grads_from_deltas(trace, &deltas)?;
    Ok(ClippedSum { sum, raw_norms, factors })
}

/// `θ ← θ − lr · g`.
pub fn sgd_step(net: Network, grads: &Gradients, lr: f64) -> Result<Network> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(input_err!("learning rate must be finite and non-negative, got {lr}"));
    }
    grads.check_congruent(&net.layers)?;
    if !grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient (norm {})",
            grads.l2_norm()
        )));
    }
    let mut net = net;
    for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
        l.weights.axpy(-lr, &g.weights)?;
        for (b, gb) in l.biases.iter_mut().zip(&g.biases) {
            *b -= lr * gb;
        }
    }
    Ok(net)
}

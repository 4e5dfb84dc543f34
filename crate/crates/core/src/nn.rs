//! Dense fully-connected network over a flat parameter vector.
//!
//! Hidden layers are `relu(a · W + b)`, the output layer is affine (logits),
//! and the loss is mean softmax cross-entropy over the batch.
//!
//! Parameter layout, per layer in order: the weight matrix `W` of shape
//! `(fan_in, fan_out)` in row-major order, followed by the bias `b` of length
//! `fan_out`.
//!
//! Read as a linear state model, one SGD step is `m_k = m_{k-1} + B u_k` with
//! identity transition and observation matrices, `B = -lr` and `u_k` the
//! batch gradient, and no process or measurement noise.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Batch, Dataset};
use crate::{Error, Result};

/// Layer widths: input dimension, hidden widths, number of classes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least an input and an output layer, got {} sizes",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArchitecture(format!("layer {pos} has size 0")));
        }
        Ok(Architecture { layer_sizes })
    }

    /// 784-256-10.
    pub fn mnist_default() -> Self {
        Architecture {
            layer_sizes: vec![784, 256, 10],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn slots(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset = slot.bias + w[1];
                slot
            })
            .collect()
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.layer_sizes.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

/// All weights and biases of one network, flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    arch: Arc<Architecture>,
    values: Array1<f64>,
}

/// Gradient of the loss, in [`ParamVector`] layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    values: Array1<f64>,
}

/// Owned weights and bias of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_finite(context: &'static str, values: ArrayView1<'_, f64>) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { context, index }),
        None => Ok(()),
    }
}

impl ParamVector {
    pub fn from_values(arch: Arc<Architecture>, values: Array1<f64>) -> Result<Self> {
        check_len("ParamVector::from_values", arch.param_count(), values.len())?;
        check_finite("ParamVector::from_values", values.view())?;
        Ok(ParamVector { arch, values })
    }

    pub fn zeros(arch: Arc<Architecture>) -> Self {
        let n = arch.param_count();
        ParamVector {
            arch,
            values: Array1::zeros(n),
        }
    }

    pub fn architecture(&self) -> &Arc<Architecture> {
        &self.arch
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Borrowed `(W, b)` views, input layer first.
    pub fn layers(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let flat = self.values.as_slice().expect("owned 1-D arrays are contiguous");
        self.arch
            .slots()
            .into_iter()
            .map(|s| {
                let w = ArrayView2::from_shape((s.fan_in, s.fan_out), &flat[s.weights..s.bias]).unwrap();
                let b = ArrayView1::from(&flat[s.bias..s.bias + s.fan_out]);
                (w, b)
            })
            .collect()
    }

    pub fn unflatten(&self) -> Vec<LayerParams> {
        self.layers()
            .into_iter()
            .map(|(w, b)| LayerParams {
                weights: w.to_owned(),
                bias: b.to_owned(),
            })
            .collect()
    }

    pub fn flatten(arch: Arc<Architecture>, layers: &[LayerParams]) -> Result<Self> {
        let slots = arch.slots();
        check_len("ParamVector::flatten layers", slots.len(), layers.len())?;
        let mut values = Vec::with_capacity(arch.param_count());
        for (slot, layer) in slots.iter().zip(layers) {
            if layer.weights.dim() != (slot.fan_in, slot.fan_out) {
                return Err(Error::ShapeMismatch {
                    context: "ParamVector::flatten weights",
                    expected: slot.fan_in * slot.fan_out,
                    actual: layer.weights.len(),
                });
            }
            check_len("ParamVector::flatten bias", slot.fan_out, layer.bias.len())?;
            values.extend(layer.weights.iter());
            values.extend(layer.bias.iter());
        }
        ParamVector::from_values(arch, Array1::from(values))
    }

    pub(crate) fn with_values(&self, values: Array1<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        ParamVector {
            arch: self.arch.clone(),
            values,
        }
    }

    /// Bias entries, in layout order.
    pub fn biases(&self) -> Vec<f64> {
        self.layers().into_iter().flat_map(|(_, b)| b.to_vec()).collect()
    }
}

impl GradientVector {
    pub fn from_values(values: Array1<f64>) -> Result<Self> {
        check_finite("GradientVector::from_values", values.view())?;
        Ok(GradientVector { values })
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<ParamVector> {
    let arch = Architecture::new(arch.layer_sizes.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array1::zeros(arch.param_count());
    for slot in arch.slots() {
        let bound = 1.0 / (slot.fan_in as f64).sqrt();
        for v in values.slice_mut(ndarray::s![slot.weights..slot.bias]).iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(ParamVector {
        arch: Arc::new(arch),
        values,
    })
}

fn affine(input: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut z = input.dot(&w);
    z += &b;
    z
}

/// Logits for each row of `images`.
pub fn forward(params: &ParamVector, images: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_len("forward input width", params.arch.input_dim(), images.ncols())?;
    let layers = params.layers();
    let last = layers.len() - 1;
    let mut a = images.to_owned();
    for (l, (w, b)) in layers.into_iter().enumerate() {
        a = affine(a.view(), w, b);
        if l < last {
            a.mapv_inplace(|v| v.max(0.0));
        }
    }
    Ok(a)
}

/// Mean softmax cross-entropy and its exact gradient.
pub fn loss_and_grad(params: &ParamVector, batch: &Batch) -> Result<(f64, GradientVector)> {
    let arch = &params.arch;
    check_len("loss_and_grad input width", arch.input_dim(), batch.images.ncols())?;
    check_len("loss_and_grad labels", batch.images.nrows(), batch.labels.len())?;
    let classes = arch.num_classes();
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: classes,
        });
    }
    let n = batch.len() as f64;
    let layers = params.layers();
    let last = layers.len() - 1;

    // activations[l] is the input to layer l; the last entry holds the logits
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(layers.len() + 1);
    activations.push(batch.images.clone());
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = affine(activations[l].view(), w.view(), b.view());
        if l < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        activations.push(z);
    }

    // softmax with max-subtraction; delta becomes dLoss/dlogits
    let mut delta = activations.pop().unwrap();
    let mut loss = 0.0;
    for (mut row, &label) in delta.axis_iter_mut(Axis(0)).zip(&batch.labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        row.mapv_inplace(|v| (v - lse).exp() / n);
        row[label] -= 1.0 / n;
    }
    loss /= n;

    let mut grad = Array1::<f64>::zeros(arch.param_count());
    let slots = arch.slots();
    for l in (0..layers.len()).rev() {
        let slot = slots[l];
        let input = &activations[l];
        let dw = input.t().dot(&delta);
        let db = delta.sum_axis(Axis(0));
        grad.slice_mut(ndarray::s![slot.weights..slot.bias])
            .assign(&Array1::from_iter(dw.iter().copied()));
        grad.slice_mut(ndarray::s![slot.bias..slot.bias + slot.fan_out])
            .assign(&db);
        if l > 0 {
            let mut prev = delta.dot(&layers[l].0.t());
            Zip::from(&mut prev).and(input).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
    }
    Ok((loss, GradientVector::from_values(grad)?))
}

/// `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &GradientVector, lr: f64) -> Result<ParamVector> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidLearningRate(lr));
    }
    check_len("sgd_step", params.len(), grad.len())?;
    let mut values = params.values.clone();
    values.scaled_add(-lr, &grad.values);
    check_finite("sgd_step result", values.view())?;
    Ok(params.with_values(values))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 1024;

/// Fraction of samples whose argmax logit equals the label (ties go to the
/// lowest class index).
pub fn evaluate(params: &ParamVector, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("evaluate input width", params.arch.input_dim(), dataset.input_dim())?;
    let images = dataset.images();
    let labels = dataset.labels();
    let mut correct = 0usize;
    for start in (0..dataset.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let chunk = images.slice(ndarray::s![start..end, ..]).mapv(f64::from);
        let logits = forward(params, chunk.view())?;
        correct += logits
            .axis_iter(Axis(0))
            .zip(&labels[start..end])
            .filter(|(row, &label)| argmax(row.view()) == label as usize)
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

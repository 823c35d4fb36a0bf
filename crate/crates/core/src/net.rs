//! Feedforward classifier with softmax cross-entropy and exact backprop.
//!
//! Layers compute `A = act(X·W + b)` with `W` stored `d_in × d_out`. The last
//! layer is linear and produces the logits. Any layer's output activation can
//! be tapped, and a gradient with respect to a tapped activation can be
//! injected into [`backward`]; that is how a discrepancy loss on hidden
//! representations joins the classification loss.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::FeatureMatrix;
use crate::rng;

/// Standard deviation of the output-layer weight initialisation.
pub const OUTPUT_INIT_STD: f64 = 0.005;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `d_in × d_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn d_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Build from explicit layers, checking the dimension chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let model = MlpModel { layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::input("model has no layers"))?;
        if last.activation != Activation::Identity {
            return Err(Error::input("output layer must be linear"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.d_out() {
                return Err(Error::input(format!("layer {i}: bias length mismatch")));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.d_in() != layer.d_out() {
                    return Err(Error::DimensionMismatch {
                        expected: layer.d_out(),
                        found: next.d_in(),
                    });
                }
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::input(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map(Layer::d_out).unwrap_or(0)
    }

    /// `[d_in, h₁, …, C]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::d_out))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Inverse of [`MlpModel::parameters`].
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.num_parameters(),
                found: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| {
                *p = it.next().expect("length checked");
            });
        }
        Ok(())
    }
}

/// Per-layer intermediates for one batch.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub pre_activations: Vec<Array2<f64>>,
    /// Output of each layer; the last entry equals the logits.
    pub activations: Vec<Array2<f64>>,
    pub probabilities: Array2<f64>,
    /// Layer whose activation is handed to the discrepancy loss, if any.
    pub tap_layer: Option<usize>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array2<f64> {
        self.activations.last().expect("at least one layer")
    }

    pub fn n(&self) -> usize {
        self.input.nrows()
    }

    /// Activation of `layer`, or of the trace's tap layer when `None`.
    pub fn tapped(&self, layer: Option<usize>) -> Option<&Array2<f64>> {
        layer.or(self.tap_layer).and_then(|l| self.activations.get(l))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
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

    /// Same ordering as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Features plus dense integer labels `0..C`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if labels.len() != features.n() {
            return Err(Error::input(format!(
                "{} labels for {} samples",
                labels.len(),
                features.n()
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::input("a labeled dataset needs at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::input(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            class_names,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Row-wise softmax with max-subtraction.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

pub fn forward(model: &MlpModel, x: ArrayView2<'_, f64>, tap_layer: Option<usize>) -> Result<ForwardTrace> {
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    if let Some(t) = tap_layer {
        if t >= model.layers.len() {
            return Err(Error::input(format!(
                "tap layer {t} out of range for {} layers",
                model.layers.len()
            )));
        }
    }
    let mut pre_activations = Vec::with_capacity(model.layers.len());
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let input = activations.last().map(|a| a.view()).unwrap_or(x);
        let z = input.dot(&layer.weights) + &layer.bias;
        let a = match layer.activation {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        };
        pre_activations.push(z);
        activations.push(a);
    }
    let probabilities = softmax(activations.last().expect("validated").view());
    Ok(ForwardTrace {
        input: x.to_owned(),
        pre_activations,
        activations,
        probabilities,
        tap_layer,
    })
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::input(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy(trace: &ForwardTrace, labels: &[usize]) -> Result<f64> {
    let p = &trace.probabilities;
    check_labels(labels, p.nrows(), p.ncols())?;
    if labels.is_empty() {
        return Err(Error::input("cross-entropy of an empty batch"));
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            // f64::max would swallow a NaN probability
            let py = p[[i, y]];
            -(if py.is_nan() { py } else { py.max(PROB_FLOOR) }).ln()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Backpropagate through `trace`.
///
/// `labels` adds the cross-entropy gradient `(softmax - onehot) / n` at the
/// logits; each `(layer, grad)` in `injected` adds `grad` as the upstream
/// gradient of that layer's output activation. Either may be empty, e.g. a
/// target-domain batch carries only the injected discrepancy gradient.
pub fn backward(
    model: &MlpModel,
    trace: &ForwardTrace,
    labels: Option<&[usize]>,
    injected: &[(usize, ArrayView2<'_, f64>)],
) -> Result<Gradients> {
    let n_layers = model.layers.len();
    if trace.activations.len() != n_layers {
        return Err(Error::input("trace does not match model depth"));
    }
    let n = trace.n();
    for (layer, grad) in injected {
        let act = trace
            .activations
            .get(*layer)
            .ok_or_else(|| Error::input(format!("injected gradient at missing layer {layer}")))?;
        if grad.dim() != act.dim() {
            return Err(Error::input(format!(
                "injected gradient at layer {layer} has shape {:?}, expected {:?}",
                grad.dim(),
                act.dim()
            )));
        }
    }

    let mut upstream = Array2::<f64>::zeros(trace.logits().raw_dim());
    if let Some(labels) = labels {
        check_labels(labels, n, model.n_classes())?;
        upstream.assign(&trace.probabilities);
        for (i, &y) in labels.iter().enumerate() {
            upstream[[i, y]] -= 1.0;
        }
        upstream /= n as f64;
    }

    let mut grads = Vec::with_capacity(n_layers);
    for idx in (0..n_layers).rev() {
        let layer = &model.layers[idx];
        for (_, g) in injected.iter().filter(|(l, _)| *l == idx) {
            upstream += g;
        }
        let dz = match layer.activation {
            Activation::Identity => upstream,
            Activation::Relu => {
                let mut dz = upstream;
                Zip::from(&mut dz)
                    .and(&trace.pre_activations[idx])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                dz
            }
        };
        let input = if idx == 0 {
            trace.input.view()
        } else {
            trace.activations[idx - 1].view()
        };
        grads.push(LayerGradient {
            weights: input.t().dot(&dz),
            bias: dz.sum_axis(Axis(0)),
        });
        upstream = dz.dot(&layer.weights.t());
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// Argmax per row; ties go to the smaller class index.
pub fn argmax_rows(values: ArrayView2<'_, f64>) -> Vec<usize> {
    values
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let trace = forward(model, x, None)?;
    Ok(argmax_rows(trace.probabilities.view()))
}

/// Random initialisation for `layer_dims = [d_in, h₁, …, C]`.
///
/// Hidden layers (ReLU) use He-normal weights with variance `2 / d_in`; the
/// output layer uses `N(0, 0.005²)`. Biases start at zero.
pub fn init_model(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 2 {
        return Err(Error::input("need at least input and output dimensions"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::input("layer dimensions must be positive"));
    }
    let mut rng = rng::substream(seed, rng::stream::MODEL_INIT);
    let n_layers = layer_dims.len() - 1;
    let layers = layer_dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (d_in, d_out) = (w[0], w[1]);
            let is_output = i + 1 == n_layers;
            let std = if is_output {
                OUTPUT_INIT_STD
            } else {
                (2.0 / d_in as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            let weights = Array2::from_shape_simple_fn((d_in, d_out), || normal.sample(&mut rng));
            Layer {
                weights,
                bias: Array1::zeros(d_out),
                activation: if is_output {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();
    MlpModel::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_model_is_uniform() {
        let model = MlpModel::new(vec![Layer {
            weights: Array2::zeros((3, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.0, 5.0, 1.0]];
        let trace = forward(&model, x.view(), None).unwrap();
        for p in trace.probabilities.iter() {
            assert_eq!(*p, 0.5);
        }
    }

    #[test]
    fn softmax_fixed_values() {
        let p = softmax(array![[0.0, 0.0, 0.0]].view());
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax(array![[1000.0, 0.0]].view());
        assert_eq!(p[[0, 0]], 1.0);
        assert!(p[[0, 1]] >= 0.0 && p[[0, 1]] < 1e-300);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    fn trace_with_probs(p: Array2<f64>) -> ForwardTrace {
        ForwardTrace {
            input: Array2::zeros((p.nrows(), 1)),
            pre_activations: vec![p.clone()],
            activations: vec![p.clone()],
            probabilities: p,
            tap_layer: None,
        }
    }

    #[test]
    fn cross_entropy_values() {
        let perfect = trace_with_probs(array![[1.0, 0.0], [0.0, 1.0]]);
        assert_abs_diff_eq!(cross_entropy(&perfect, &[0, 1]).unwrap(), 0.0, epsilon = 1e-9);
        let uniform = trace_with_probs(array![[0.5, 0.5], [0.5, 0.5]]);
        assert_abs_diff_eq!(
            cross_entropy(&uniform, &[0, 1]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let t = trace_with_probs(array![[0.9, 0.1]]);
        assert_abs_diff_eq!(cross_entropy(&t, &[0]).unwrap(), 0.105_360_515_657_826_3, epsilon = 1e-15);
        let wrong = trace_with_probs(array![[1.0, 0.0]]);
        assert_abs_diff_eq!(cross_entropy(&wrong, &[1]).unwrap(), -(1e-12f64).ln(), epsilon = 1e-9);
        assert!(cross_entropy(&t, &[2]).is_err());
        assert!(cross_entropy(&t, &[0, 1]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_model(&[4, 8, 3], 7).unwrap();
        let b = init_model(&[4, 8, 3], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layer_dims(), vec![4, 8, 3]);
        assert_eq!(a.layers[0].activation, Activation::Relu);
        assert_eq!(a.layers[1].activation, Activation::Identity);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_ne!(a, init_model(&[4, 8, 3], 8).unwrap());
        assert!(init_model(&[], 0).is_err());
        assert!(init_model(&[3], 0).is_err());
        assert!(init_model(&[3, 0, 2], 0).is_err());
    }

    #[test]
    fn forward_checks_dimensions() {
        let model = init_model(&[3, 2], 0).unwrap();
        assert!(forward(&model, Array2::zeros((2, 4)).view(), None).is_err());
        assert!(forward(&model, Array2::zeros((2, 3)).view(), Some(1)).is_err());
    }

    #[test]
    fn backward_rejects_bad_injection() {
        let model = init_model(&[3, 4, 2], 0).unwrap();
        let x = Array2::ones((5, 3));
        let trace = forward(&model, x.view(), Some(0)).unwrap();
        let bad = Array2::zeros((5, 3));
        assert!(backward(&model, &trace, None, &[(0, bad.view())]).is_err());
        let ok = Array2::zeros((5, 4));
        assert!(backward(&model, &trace, None, &[(2, ok.view())]).is_err());
        assert!(backward(&model, &trace, Some(&[0, 1]), &[]).is_err());
    }

    #[test]
    fn zero_injection_matches_plain_backward() {
        let model = init_model(&[3, 5, 4, 2], 11).unwrap();
        let x = array![[0.1, -1.0, 2.0], [1.5, 0.3, -0.2], [0.0, 0.7, 0.9]];
        let labels = [0, 1, 1];
        let trace = forward(&model, x.view(), Some(1)).unwrap();
        let plain = backward(&model, &trace, Some(&labels), &[]).unwrap();
        let zeros = Array2::zeros((3, 4));
        let injected = backward(&model, &trace, Some(&labels), &[(1, zeros.view())]).unwrap();
        for (a, b) in plain.flatten().iter().zip(injected.flatten()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn saturated_correct_predictions_have_tiny_gradient() {
        let model = MlpModel::new(vec![Layer {
            weights: array![[60.0, -60.0]],
            bias: array![0.0, 0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = array![[1.0], [2.0], [-1.0]];
        let trace = forward(&model, x.view(), None).unwrap();
        let g = backward(&model, &trace, Some(&[0, 0, 1]), &[]).unwrap();
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn argmax_ties_prefer_lower_index() {
        let v = array![[0.5, 0.5], [0.2, 0.8], [0.3, 0.3]];
        assert_eq!(argmax_rows(v.view()), vec![0, 1, 0]);
    }

    #[test]
    fn parameter_round_trip() {
        let mut model = init_model(&[2, 3, 2], 1).unwrap();
        let p = model.parameters();
        assert_eq!(p.len(), model.num_parameters());
        let doubled: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        model.set_parameters(&doubled).unwrap();
        assert_eq!(model.parameters(), doubled);
        assert!(model.set_parameters(&p[1..]).is_err());
    }

    #[test]
    fn dataset_validation() {
        let f = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(LabeledDataset::new(f.clone(), vec![0], names.clone()).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0, 2], names.clone()).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0, 0], vec!["a".into()]).is_err());
        let ds = LabeledDataset::new(f, vec![1, 1], names).unwrap();
        assert_eq!(ds.class_counts(), vec![0, 2]);
    }
}

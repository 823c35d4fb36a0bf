//! Joint classification + discrepancy training.
//!
//! Each step pairs one labeled source minibatch with one unlabeled target
//! minibatch and minimises
//!
//! ```text
//! L = CE(source) + Σᵢ λᵢ · D(tapᵢ(source), tapᵢ(target))
//! ```
//!
//! where `D` is the biased MMD² (median-heuristic mixture for `rkhs-mmd`,
//! fixed σ = 1 Gaussian for `standard-mmd`) or the CORAL loss. Median
//! bandwidths are recomputed on every step's pooled tapped representations
//! and treated as constants when differentiating.
//!
//! Parameters follow SGD with momentum:
//! `v ← μ·v - lr·(g + wd·w)`, `w ← w + v`, where weight decay skips biases
//! and the output layer's rate is `base_lr · fc_lr_multiplier`.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::coral::coral_with_gradient;
use crate::error::{Error, Result};
use crate::kernel::{FeatureMatrix, KernelSpec};
use crate::metrics::{self, ClassificationReport, ConfusionMatrix};
use crate::mmd::gradient_with;
use crate::net::{self, init_model, Gradients, LabeledDataset, MlpModel};
use crate::rng;

pub use crate::config::{AdaptLoss, ExperimentConfig};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-step cross-entropy on source batches.
    pub class_loss: f64,
    /// Mean per-step unweighted discrepancy, summed over tapped layers.
    pub adapt_loss_value: f64,
    /// Mean per-step discrepancy for each tapped layer.
    pub adapt_components: Vec<f64>,
    /// Mean per-step joint objective.
    pub joint_loss: f64,
    /// λ actually applied this epoch (zero for `none`).
    pub lambda_effective: Vec<f64>,
    pub source_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1_target: Option<f64>,
    /// Not serialized: it would make logs of identical runs differ.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl EpochMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Per-step losses, handed to an observer.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub class_loss: f64,
    pub adapt_components: Vec<f64>,
    pub lambda: Vec<f64>,
    pub joint_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub metrics: Vec<EpochMetrics>,
}

/// SGD with momentum, decoupled per-layer learning rates, and weight decay
/// on weights only.
#[derive(Clone, Debug)]
pub struct Sgd {
    velocity: Gradients,
    lrs: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(model: &MlpModel, config: &ExperimentConfig) -> Self {
        let last = model.layers.len() - 1;
        Sgd {
            velocity: Gradients::zeros_like(model),
            lrs: (0..model.layers.len())
                .map(|i| {
                    if i == last {
                        config.base_lr * config.fc_lr_multiplier
                    } else {
                        config.base_lr
                    }
                })
                .collect(),
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        assert_eq!(self.velocity.layers.len(), model.layers.len(), "momentum buffer depth drift");
        for (((layer, v), g), &lr) in model
            .layers
            .iter_mut()
            .zip(&mut self.velocity.layers)
            .zip(&grads.layers)
            .zip(&self.lrs)
        {
            assert_eq!(v.weights.dim(), layer.weights.dim(), "momentum buffer shape drift");
            assert_eq!(v.bias.dim(), layer.bias.dim(), "momentum buffer shape drift");
            let (mu, wd) = (self.momentum, self.weight_decay);
            ndarray::Zip::from(&mut v.weights)
                .and(&mut layer.weights)
                .and(&g.weights)
                .for_each(|v, w, &g| {
                    *v = mu * *v - lr * (g + wd * *w);
                    *w += *v;
                });
            ndarray::Zip::from(&mut v.bias)
                .and(&mut layer.bias)
                .and(&g.bias)
                .for_each(|v, b, &g| {
                    *v = mu * *v - lr * g;
                    *b += *v;
                });
        }
    }
}

/// Cycles through a shuffled order, reshuffling whenever it runs out.
struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
    rng: rng::Rng,
}

impl BatchCycler {
    fn new(n: usize, rng: rng::Rng) -> Self {
        BatchCycler {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        batch
    }
}

/// Accuracy plus the full report for a labeled set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
}

/// Argmax predictions (ties to the lower class index) scored against labels.
pub fn evaluate(model: &MlpModel, dataset: &LabeledDataset) -> Result<Evaluation> {
    if dataset.n() == 0 {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    if dataset.n_classes() != model.n_classes() {
        return Err(Error::input(format!(
            "dataset has {} classes but the model outputs {}",
            dataset.n_classes(),
            model.n_classes()
        )));
    }
    let predictions = net::predict(model, dataset.features.view())?;
    let correct = predictions
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, y)| p == y)
        .count();
    let confusion = metrics::confusion(&dataset.labels, &predictions, &dataset.class_names)?;
    let report = metrics::report(&confusion)?;
    Ok(Evaluation {
        accuracy: correct as f64 / dataset.n() as f64,
        predictions,
        confusion,
        report,
    })
}

fn views(v: &[(usize, Array2<f64>)]) -> Vec<(usize, ArrayView2<'_, f64>)> {
    v.iter().map(|(l, g)| (*l, g.view())).collect()
}

enum Discrepancy<'a> {
    Mmd(&'a KernelSpec),
    Coral,
}

struct AdaptTerm {
    value: f64,
    source_grad: Array2<f64>,
    target_grad: Array2<f64>,
}

fn discrepancy(kind: &Discrepancy<'_>, s: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>, grad: bool) -> Result<AdaptTerm> {
    match kind {
        Discrepancy::Mmd(spec) => {
            let resolved = resolve_for_batch(spec, s, t)?;
            let g = gradient_with(&resolved, s, t);
            Ok(AdaptTerm {
                value: g.estimate.value,
                source_grad: g.source,
                target_grad: g.target,
            })
        }
        Discrepancy::Coral => {
            let g = coral_with_gradient(s, t, grad);
            Ok(AdaptTerm {
                value: g.value,
                source_grad: g.source,
                target_grad: g.target,
            })
        }
    }
}

/// Median bandwidth on the pooled batch. If every representation in the
/// batch coincides the discrepancy is zero under any bandwidth; use the
/// multipliers as absolute bandwidths then.
fn resolve_for_batch(spec: &KernelSpec, s: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Result<KernelSpec> {
    if spec.is_resolved() {
        return Ok(spec.clone());
    }
    let s = FeatureMatrix::new(s.to_owned())?;
    let t = FeatureMatrix::new(t.to_owned())?;
    match spec.resolve(&s, &t) {
        Err(Error::Degenerate(_)) => Ok(spec.with_base_sigma(1.0)),
        other => other,
    }
}

pub fn train(
    config: &ExperimentConfig,
    source: &LabeledDataset,
    target: &FeatureMatrix,
    eval_target: Option<&LabeledDataset>,
) -> Result<TrainOutcome> {
    train_observed(config, source, target, eval_target, &mut |_| {})
}

/// [`train`] with a callback after every optimisation step.
pub fn train_observed(
    config: &ExperimentConfig,
    source: &LabeledDataset,
    target: &FeatureMatrix,
    eval_target: Option<&LabeledDataset>,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if source.n() == 0 {
        return Err(Error::input("source dataset is empty"));
    }
    if source.n() < config.batch_size {
        return Err(Error::input(format!(
            "source has {} samples, fewer than batch_size {}",
            source.n(),
            config.batch_size
        )));
    }
    if target.d() != source.features.d() {
        return Err(Error::DimensionMismatch {
            expected: source.features.d(),
            found: target.d(),
        });
    }
    let adapting = config.adapt_loss.is_active();
    if adapting && target.n() < config.batch_size {
        return Err(Error::input(format!(
            "target has {} samples, fewer than batch_size {}",
            target.n(),
            config.batch_size
        )));
    }
    if let Some(ev) = eval_target {
        if ev.features.d() != source.features.d() {
            return Err(Error::DimensionMismatch {
                expected: source.features.d(),
                found: ev.features.d(),
            });
        }
    }

    let dims = config.layer_dims(source.features.d(), source.n_classes());
    let mut model = init_model(&dims, config.seed)?;
    let mut sgd = Sgd::new(&model, config);
    let kernel = config.kernel_spec()?;
    let kind = match config.adapt_loss {
        AdaptLoss::Coral => Discrepancy::Coral,
        _ => Discrepancy::Mmd(&kernel),
    };
    // `none` still reports the discrepancy of its representations, computed
    // on the side and never differentiated.
    let monitoring = !adapting && target.n() >= 2;

    let mut src_rng = rng::substream(config.seed, rng::stream::SOURCE_SHUFFLE);
    let mut tgt = BatchCycler::new(target.n(), rng::substream(config.seed, rng::stream::TARGET_SHUFFLE));
    let steps_per_epoch = source.n() / config.batch_size;
    let n_taps = config.tap_layers.len();
    let mut history = Vec::with_capacity(config.epochs);
    let mut src_order: Vec<usize> = (0..source.n()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let scale = config.lambda_scale(epoch);
        let lambda: Vec<f64> = if adapting {
            config.lambda.iter().map(|l| l * scale).collect()
        } else {
            vec![0.0; n_taps]
        };
        src_order.shuffle(&mut src_rng);
        let mut sum_class = 0.0;
        let mut sum_joint = 0.0;
        let mut sum_components = vec![0.0; n_taps];

        for step in 0..steps_per_epoch {
            let idx = &src_order[step * config.batch_size..(step + 1) * config.batch_size];
            let xs = source.features.select(idx);
            let ys: Vec<usize> = idx.iter().map(|&i| source.labels[i]).collect();
            let trace_s = net::forward(&model, xs.view(), None)?;
            let class_loss = net::cross_entropy(&trace_s, &ys)?;
            if !class_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: step + 1,
                    component: "classification".into(),
                });
            }

            let mut components = vec![0.0; n_taps];
            let mut inject_s: Vec<(usize, Array2<f64>)> = Vec::new();
            let mut inject_t: Vec<(usize, Array2<f64>)> = Vec::new();
            let mut trace_t = None;
            if adapting || monitoring {
                let xt = target.select(&tgt.next(config.batch_size));
                let tt = net::forward(&model, xt.view(), None)?;
                for (k, &layer) in config.tap_layers.iter().enumerate() {
                    let term = discrepancy(
                        &kind,
                        trace_s.activations[layer].view(),
                        tt.activations[layer].view(),
                        adapting,
                    )?;
                    if !term.value.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            epoch: epoch + 1,
                            step: step + 1,
                            component: format!("{} (tap layer {layer})", config.adapt_loss.name()),
                        });
                    }
                    components[k] = term.value;
                    if adapting {
                        inject_s.push((layer, term.source_grad * lambda[k]));
                        inject_t.push((layer, term.target_grad * lambda[k]));
                    }
                }
                trace_t = Some(tt);
            }

            let joint = class_loss + lambda.iter().zip(&components).map(|(l, c)| l * c).sum::<f64>();
            let mut grads = net::backward(&model, &trace_s, Some(&ys), &views(&inject_s))?;
            if adapting {
                let tt = trace_t.as_ref().expect("target forward ran");
                grads.add_assign(&net::backward(&model, tt, None, &views(&inject_t))?);
            }
            sgd.step(&mut model, &grads);

            sum_class += class_loss;
            sum_joint += joint;
            for (acc, c) in sum_components.iter_mut().zip(&components) {
                *acc += c;
            }
            observer(&StepRecord {
                epoch: epoch + 1,
                step: step + 1,
                class_loss,
                adapt_components: components,
                lambda: lambda.clone(),
                joint_loss: joint,
            });
        }

        let steps = steps_per_epoch as f64;
        let adapt_components: Vec<f64> = sum_components.iter().map(|s| s / steps).collect();
        let source_eval = evaluate(&model, source)?;
        let target_eval = eval_target.map(|ev| evaluate(&model, ev)).transpose()?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            class_loss: sum_class / steps,
            adapt_loss_value: adapt_components.iter().sum(),
            adapt_components,
            joint_loss: sum_joint / steps,
            lambda_effective: lambda,
            source_accuracy: source_eval.accuracy,
            target_accuracy: target_eval.as_ref().map(|e| e.accuracy),
            macro_f1_target: target_eval.as_ref().map(|e| e.report.macro_f1),
            wall_time_seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!("{}", m.to_json_line());
        history.push(m);
    }

    Ok(TrainOutcome {
        model,
        metrics: history,
    })
}

/// Discrepancy between the tapped representations of two feature sets
/// under a trained model, using the config's adaptation loss (or its MMD
/// monitor kernel for `none`).
pub fn representation_discrepancy(
    config: &ExperimentConfig,
    model: &MlpModel,
    source: &FeatureMatrix,
    target: &FeatureMatrix,
    layer: usize,
) -> Result<f64> {
    let kernel = config.kernel_spec()?;
    let kind = match config.adapt_loss {
        AdaptLoss::Coral => Discrepancy::Coral,
        _ => Discrepancy::Mmd(&kernel),
    };
    let ts = net::forward(model, source.view(), Some(layer))?;
    let tt = net::forward(model, target.view(), Some(layer))?;
    let s = ts.tapped(None).expect("tap validated");
    let t = tt.tapped(None).expect("tap validated");
    Ok(discrepancy(&kind, s.view(), t.view(), false)?.value)
}

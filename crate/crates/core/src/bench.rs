//! Method comparison on a synthetic shift.
//!
//! A suite fixes one [`ShiftSpec`], one training configuration and a list
//! of methods, each with its own λ. Every method is trained on the same
//! seeds; per-seed data and initialisation depend only on the seed, so the
//! methods see identical source/target draws.
//!
//! Suite files are TOML:
//!
//! ```toml
//! [shift]
//! generator = "two-arcs"
//! n_per_class = 500
//! d = 2
//! rotation_degrees = 30.0
//! noise_scale = 0.1
//!
//! [training]
//! base_lr = 0.01
//!
//! [[methods]]
//! adapt_loss = "rkhs-mmd"
//! lambda = 1.0
//! ```
//!
//! Omitting `methods` runs all four with the training config's λ.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdaptLoss, ExperimentConfig};
use crate::data::{generate, ShiftSpec};
use crate::error::{Error, Result};
use crate::train::train;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSetting {
    pub adapt_loss: AdaptLoss,
    /// Applied to every tap layer; `None` keeps the training config's λ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSuite {
    pub shift: ShiftSpec,
    #[serde(default)]
    pub training: ExperimentConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<MethodSetting>,
}

fn all_methods() -> Vec<MethodSetting> {
    AdaptLoss::ALL
        .into_iter()
        .map(|adapt_loss| MethodSetting { adapt_loss, lambda: None })
        .collect()
}

impl BenchmarkSuite {
    /// The rotated two-arcs suite. The hidden layers train with
    /// `base_lr = 0.01`; CORAL's loss is several orders of magnitude smaller
    /// than the MMD losses at the same representation scale, hence its λ.
    pub fn default_suite() -> Self {
        let training = ExperimentConfig {
            base_lr: 1e-2,
            lambda: vec![1.0],
            ..ExperimentConfig::default()
        };
        let method = |adapt_loss, lambda| MethodSetting {
            adapt_loss,
            lambda: Some(lambda),
        };
        BenchmarkSuite {
            shift: ShiftSpec::rotated_arcs(),
            training,
            methods: vec![
                method(AdaptLoss::RkhsMmd, 1.0),
                method(AdaptLoss::StandardMmd, 1.0),
                method(AdaptLoss::Coral, 3000.0),
                method(AdaptLoss::None, 0.0),
            ],
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let suite: BenchmarkSuite = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("suite serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.shift.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("suite lists no methods".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].iter().any(|o| o.adapt_loss == m.adapt_loss) {
                return Err(Error::Config(format!("method {} listed twice", m.adapt_loss.name())));
            }
            self.config_for(m, 0).validate()?;
        }
        Ok(())
    }

    /// Training config for one method and seed.
    pub fn config_for(&self, method: &MethodSetting, seed: u64) -> ExperimentConfig {
        let mut cfg = self.training.with_adapt_loss(method.adapt_loss);
        cfg.seed = seed;
        if let Some(l) = method.lambda {
            cfg.lambda = vec![l; cfg.tap_layers.len()];
        }
        cfg
    }
}

/// Final-epoch numbers for one method and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub method: String,
    pub seed: u64,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    pub macro_f1_target: f64,
    pub class_loss: f64,
    pub adapt_loss: f64,
    /// Epoch-mean discrepancy in the first epoch.
    pub adapt_loss_first_epoch: f64,
}

impl SeedResult {
    pub fn discrepancy_decreased(&self) -> bool {
        self.adapt_loss < self.adapt_loss_first_epoch
    }
}

/// One comparison row: a method's means over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub lambda: f64,
    pub seeds: usize,
    pub target_accuracy: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub target_accuracy_std: f64,
    pub source_accuracy: f64,
    pub macro_f1_target: f64,
    pub class_loss: f64,
    pub adapt_loss: f64,
    /// Seeds whose discrepancy fell from the first to the last epoch.
    pub discrepancy_decreased: usize,
}

impl BenchmarkRow {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("row serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub per_seed: Vec<SeedResult>,
}

impl BenchmarkReport {
    pub fn row(&self, adapt: AdaptLoss) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == adapt.name())
    }

    /// Comparison table in the layout of a method/accuracy/loss table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14}{:>10}{:>10}{:>12}{:>14}{:>12}\n",
            "Method", "Accuracy", "Std", "Macro F1", "Class Loss", "Loss"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14}{:>10.4}{:>10.4}{:>12.4}{:>14.4e}{:>12.4e}\n",
                r.method, r.target_accuracy, r.target_accuracy_std, r.macro_f1_target, r.class_loss, r.adapt_loss
            ));
        }
        out
    }
}

/// Train every method of `suite` on each of `seeds`.
///
/// `on_method` is called after each method finishes (for progress logs).
pub fn run_benchmark(
    suite: &BenchmarkSuite,
    seeds: &[u64],
    on_method: &mut dyn FnMut(&BenchmarkRow),
) -> Result<BenchmarkReport> {
    suite.validate()?;
    if seeds.is_empty() {
        return Err(Error::input("benchmark needs at least one seed"));
    }
    let datasets = seeds
        .par_iter()
        .map(|&seed| generate(&suite.shift, seed))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for method in &suite.methods {
        let results = seeds
            .par_iter()
            .zip(&datasets)
            .map(|(&seed, (source, target))| {
                let cfg = suite.config_for(method, seed);
                let outcome = train(&cfg, source, &target.features, Some(target))?;
                let first = outcome.metrics.first().expect("at least one epoch");
                let last = outcome.metrics.last().expect("at least one epoch");
                Ok(SeedResult {
                    method: method.adapt_loss.name().to_string(),
                    seed,
                    source_accuracy: last.source_accuracy,
                    target_accuracy: last.target_accuracy.expect("target labels supplied"),
                    macro_f1_target: last.macro_f1_target.expect("target labels supplied"),
                    class_loss: last.class_loss,
                    adapt_loss: last.adapt_loss_value,
                    adapt_loss_first_epoch: first.adapt_loss_value,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let lambda = suite.config_for(method, 0).lambda.first().copied().unwrap_or(0.0);
        let row = summarize(method.adapt_loss, lambda, &results);
        on_method(&row);
        rows.push(row);
        per_seed.extend(results);
    }
    Ok(BenchmarkReport { rows, per_seed })
}

fn summarize(adapt: AdaptLoss, lambda: f64, results: &[SeedResult]) -> BenchmarkRow {
    let n = results.len() as f64;
    let mean = |f: fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let acc = mean(|r| r.target_accuracy);
    let std = if results.len() > 1 {
        (results.iter().map(|r| (r.target_accuracy - acc).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    BenchmarkRow {
        method: adapt.name().to_string(),
        lambda: if adapt.is_active() { lambda } else { 0.0 },
        seeds: results.len(),
        target_accuracy: acc,
        target_accuracy_std: std,
        source_accuracy: mean(|r| r.source_accuracy),
        macro_f1_target: mean(|r| r.macro_f1_target),
        class_loss: mean(|r| r.class_loss),
        adapt_loss: mean(|r| r.adapt_loss),
        discrepancy_decreased: results.iter().filter(|r| r.discrepancy_decreased()).count(),
    }
}

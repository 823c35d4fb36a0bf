//! Experiment configuration.
//!
//! Config files are flat `key = value` TOML. Unknown keys are rejected.
//! Every key is optional; the defaults are:
//!
//! ```toml
//! adapt_loss = "rkhs-mmd"     # rkhs-mmd | standard-mmd | coral | none
//! lambda = [0.5]              # one weight per tapped layer
//! tap_layers = [1]            # layer indices whose outputs are aligned
//! lambda_ramp_epochs = 0      # ramp λ linearly from 0 over this many epochs
//! hidden_layers = [64, 32]
//! batch_size = 32
//! epochs = 50
//! base_lr = 1e-3
//! fc_lr_multiplier = 10.0     # output-layer learning rate = base_lr × this
//! weight_decay = 5e-4         # applied to weights, never to biases
//! momentum = 0.9
//! seed = 0
//! # kernel = "mixture"        # gaussian | mixture
//! # sigma = "median"          # "median" or a fixed bandwidth
//! # kernel_scales = [0.25, 0.5, 1.0, 2.0, 4.0]
//! ```
//!
//! Without `kernel`/`sigma`, `rkhs-mmd` (and the monitor used for `none`)
//! takes the median-heuristic mixture, and `standard-mmd` a single
//! Gaussian with σ = 1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, DEFAULT_MIXTURE_SCALES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptLoss {
    RkhsMmd,
    StandardMmd,
    Coral,
    None,
}

impl AdaptLoss {
    pub const ALL: [AdaptLoss; 4] = [
        AdaptLoss::RkhsMmd,
        AdaptLoss::StandardMmd,
        AdaptLoss::Coral,
        AdaptLoss::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdaptLoss::RkhsMmd => "rkhs-mmd",
            AdaptLoss::StandardMmd => "standard-mmd",
            AdaptLoss::Coral => "coral",
            AdaptLoss::None => "none",
        }
    }

    pub fn is_active(self) -> bool {
        self != AdaptLoss::None
    }
}

impl std::str::FromStr for AdaptLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdaptLoss::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown adapt_loss {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Gaussian,
    Mixture,
}

/// `"median"` or a positive number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Fixed(f64),
    Named(String),
}

impl Sigma {
    pub fn median() -> Self {
        Sigma::Named("median".into())
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text == "median" {
            return Ok(Sigma::median());
        }
        text.parse::<f64>()
            .map(Sigma::Fixed)
            .map_err(|_| Error::Config(format!("sigma must be \"median\" or a number, got {text:?}")))
    }
}

/// Build a kernel from the three user-facing knobs.
///
/// With `sigma = median`, `scales` are multipliers of the median-heuristic
/// bandwidth; with a fixed σ they multiply σ.
pub fn kernel_from_choice(choice: KernelChoice, sigma: &Sigma, scales: Option<&[f64]>) -> Result<KernelSpec> {
    let scales: Vec<f64> = match (choice, scales) {
        (_, Some(s)) => s.to_vec(),
        (KernelChoice::Gaussian, None) => vec![1.0],
        (KernelChoice::Mixture, None) => DEFAULT_MIXTURE_SCALES.to_vec(),
    };
    if choice == KernelChoice::Gaussian && scales.len() != 1 {
        return Err(Error::Config("gaussian kernel takes a single scale".into()));
    }
    let m = scales.len();
    let template = match choice {
        KernelChoice::Gaussian => KernelSpec::gaussian_median(),
        KernelChoice::Mixture => KernelSpec::mixture_median(),
    };
    let spec = KernelSpec {
        bandwidths: scales,
        weights: vec![1.0 / m as f64; m],
        ..template
    };
    let spec = match sigma {
        Sigma::Named(n) if n == "median" => spec,
        Sigma::Named(n) => return Err(Error::Config(format!("unknown sigma {n:?}"))),
        Sigma::Fixed(s) => {
            if !(s.is_finite() && *s > 0.0) {
                return Err(Error::Config(format!("sigma must be positive, got {s}")));
            }
            spec.with_base_sigma(*s)
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn d_adapt() -> AdaptLoss {
    AdaptLoss::RkhsMmd
}
fn d_lambda() -> Vec<f64> {
    vec![0.5]
}
fn d_tap() -> Vec<usize> {
    vec![1]
}
fn d_hidden() -> Vec<usize> {
    vec![64, 32]
}
fn d_batch() -> usize {
    32
}
fn d_epochs() -> usize {
    50
}
fn d_lr() -> f64 {
    1e-3
}
fn d_fc_mult() -> f64 {
    10.0
}
fn d_wd() -> f64 {
    5e-4
}
fn d_momentum() -> f64 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_adapt")]
    pub adapt_loss: AdaptLoss,
    #[serde(default = "d_lambda")]
    pub lambda: Vec<f64>,
    #[serde(default = "d_tap")]
    pub tap_layers: Vec<usize>,
    #[serde(default)]
    pub lambda_ramp_epochs: usize,
    #[serde(default = "d_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub base_lr: f64,
    #[serde(default = "d_fc_mult")]
    pub fc_lr_multiplier: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: Option<KernelChoice>,
    #[serde(default)]
    pub sigma: Option<Sigma>,
    #[serde(default)]
    pub kernel_scales: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_adapt_loss(&self, adapt: AdaptLoss) -> Self {
        ExperimentConfig {
            adapt_loss: adapt,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.lambda.len() != self.tap_layers.len() {
            return bad(format!(
                "{} lambda values for {} tap layers",
                self.lambda.len(),
                self.tap_layers.len()
            ));
        }
        if self.adapt_loss.is_active() && self.tap_layers.is_empty() {
            return bad("an active adapt_loss needs at least one tap layer".into());
        }
        let n_layers = self.hidden_layers.len() + 1;
        if let Some(t) = self.tap_layers.iter().find(|&&t| t >= n_layers) {
            return bad(format!("tap layer {t} out of range for {n_layers} layers"));
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("fc_lr_multiplier", self.fc_lr_multiplier),
            ("weight_decay", self.weight_decay),
            ("momentum", self.momentum),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return bad(format!("lambda must be nonnegative, got {l}"));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.adapt_loss.is_active() && self.batch_size < 2 {
            return bad("batch_size must be at least 2 when adaptation is active".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        self.kernel_spec()?;
        Ok(())
    }

    /// Kernel for the MMD losses (and the monitor used with `none`).
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let (default_choice, default_sigma) = match self.adapt_loss {
            AdaptLoss::StandardMmd => (KernelChoice::Gaussian, Sigma::Fixed(1.0)),
            _ => (KernelChoice::Mixture, Sigma::median()),
        };
        kernel_from_choice(
            self.kernel.unwrap_or(default_choice),
            self.sigma.as_ref().unwrap_or(&default_sigma),
            self.kernel_scales.as_deref(),
        )
    }

    /// Layer dimensions `[d_in, hidden…, C]`.
    pub fn layer_dims(&self, d_in: usize, n_classes: usize) -> Vec<usize> {
        std::iter::once(d_in)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(n_classes))
            .collect()
    }

    /// Multiplier on λ during `epoch` (0-based).
    pub fn lambda_scale(&self, epoch: usize) -> f64 {
        if self.lambda_ramp_epochs == 0 {
            1.0
        } else {
            (epoch as f64 / self.lambda_ramp_epochs as f64).min(1.0)
        }
    }
}

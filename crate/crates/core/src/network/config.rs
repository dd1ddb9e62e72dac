use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::Scheme;
use crate::error::{parameter, Error, Result};
use crate::spiking::SurrogateConfig;

/// Components whose initialization can be made homogeneous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    ThetaEncoder,
    Omega,
    B,
    C,
    D,
    Dt,
    ThetaC,
    ThetaD,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::ThetaEncoder,
        Component::Omega,
        Component::B,
        Component::C,
        Component::D,
        Component::Dt,
        Component::ThetaC,
        Component::ThetaD,
    ];

    /// Constant used when the component is homogenized.
    pub fn homogeneous_value(self) -> f64 {
        match self {
            Component::ThetaEncoder | Component::Omega | Component::Dt | Component::ThetaC | Component::ThetaD => 1.0,
            Component::B | Component::C | Component::D => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::ThetaEncoder => "theta_encoder",
            Component::Omega => "omega",
            Component::B => "b",
            Component::C => "c",
            Component::D => "d",
            Component::Dt => "dt",
            Component::ThetaC => "theta_c",
            Component::ThetaD => "theta_d",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| parameter(format!("unknown component `{s}`")))
    }
}

/// Initialization law of one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitLaw {
    /// `U(0, 1]`.
    UnitOpen,
    /// `U(-n^{-1/2}, n^{-1/2})`.
    SymmetricUniform {
        fan: usize,
    },
    StandardNormal,
    Constant(f64),
}

/// Heterogeneous initialization with optional constant overrides.
///
/// Defaults: `Ω, Δt, θ ~ U(0,1]`, `B ~ U(±H^{-1/2})`, `C ~ U(±P^{-1/2})`,
/// `D ~ N(0,1)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneitySpec {
    #[serde(default)]
    pub homogeneous: BTreeMap<Component, f64>,
}

impl HeterogeneitySpec {
    pub fn heterogeneous() -> Self {
        Self::default()
    }

    /// Homogenizes the given components at their standard constants.
    pub fn homogenized(components: impl IntoIterator<Item = Component>) -> Self {
        Self {
            homogeneous: components.into_iter().map(|c| (c, c.homogeneous_value())).collect(),
        }
    }

    pub fn is_homogeneous(&self, c: Component) -> bool {
        self.homogeneous.contains_key(&c)
    }

    pub fn law(&self, c: Component, hidden: usize, state: usize) -> InitLaw {
        if let Some(&v) = self.homogeneous.get(&c) {
            return InitLaw::Constant(v);
        }
        match c {
            Component::B => InitLaw::SymmetricUniform { fan: hidden },
            Component::C => InitLaw::SymmetricUniform { fan: state },
            Component::D => InitLaw::StandardNormal,
            _ => InitLaw::UnitOpen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Classification { num_classes: usize },
    Regression { out_dim: usize, kernel_size: usize },
}

impl Task {
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::Classification { num_classes } => num_classes,
            Task::Regression { out_dim, .. } => out_dim,
        }
    }
}

pub const DEFAULT_KERNEL_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub state: usize,
    pub n_blocks: usize,
    pub scheme: Scheme,
    pub task: Task,
    #[serde(default)]
    pub dropout: f64,
    /// Drop the Linear/BN/threshold stage of each block.
    #[serde(default)]
    pub ssm_only: bool,
    #[serde(default)]
    pub heterogeneity: HeterogeneitySpec,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
    #[serde(default = "default_dt_min")]
    pub dt_min: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
}

fn default_omega_max() -> f64 {
    4.0
}
fn default_dt_min() -> f64 {
    1e-3
}
fn default_bn_momentum() -> f64 {
    0.1
}
fn default_bn_eps() -> f64 {
    1e-5
}

/// Lower clamp applied to every spike threshold after an optimizer step.
pub const THRESHOLD_FLOOR: f64 = 1e-3;

impl ModelConfig {
    pub fn classification(input_dim: usize, hidden: usize, state: usize, n_blocks: usize, num_classes: usize) -> Self {
        Self::with_task(input_dim, hidden, state, n_blocks, Task::Classification { num_classes })
    }

    pub fn regression(input_dim: usize, hidden: usize, state: usize, n_blocks: usize, out_dim: usize) -> Self {
        Self::with_task(
            input_dim,
            hidden,
            state,
            n_blocks,
            Task::Regression {
                out_dim,
                kernel_size: DEFAULT_KERNEL_SIZE,
            },
        )
    }

    fn with_task(input_dim: usize, hidden: usize, state: usize, n_blocks: usize, task: Task) -> Self {
        Self {
            input_dim,
            hidden,
            state,
            n_blocks,
            scheme: Scheme::Imex,
            task,
            dropout: 0.0,
            ssm_only: false,
            heterogeneity: HeterogeneitySpec::default(),
            surrogate: SurrogateConfig::default(),
            omega_max: default_omega_max(),
            dt_min: default_dt_min(),
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.state == 0 {
            return Err(parameter("input_dim, hidden and state must be >= 1"));
        }
        if self.n_blocks == 0 {
            return Err(parameter("n_blocks must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(parameter(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        match self.task {
            Task::Classification { num_classes } if num_classes < 2 => {
                return Err(parameter("classification needs >= 2 classes"));
            }
            Task::Regression { out_dim, kernel_size } => {
                if out_dim == 0 {
                    return Err(parameter("regression out_dim must be >= 1"));
                }
                if !kernel_size.is_power_of_two() {
                    return Err(parameter(format!("kernel_size {kernel_size} is not a power of two")));
                }
            }
            _ => {}
        }
        if self.omega_max.is_nan() || self.omega_max <= 0.0 || !(f64::MIN_POSITIVE..=1.0).contains(&self.dt_min) {
            return Err(parameter("omega_max must be > 0 and dt_min in (0, 1]"));
        }
        if self.scheme == Scheme::Imex && self.omega_max > 4.0 {
            return Err(parameter(
                "IMEX needs omega_max <= 4 so that dt^2 * omega <= 4 with dt <= 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps.is_nan() || self.bn_eps <= 0.0 {
            return Err(parameter("bn_momentum must lie in [0, 1] and bn_eps > 0"));
        }
        self.surrogate.validate()
    }

    /// Feature width entering block `n` (0-based): the encoder's `H` plus `H` per earlier block.
    pub fn block_input_width(&self, n: usize) -> usize {
        self.hidden * (n + 1)
    }

    pub fn decoder_input_width(&self) -> usize {
        self.hidden * (self.n_blocks + 1)
    }

    /// Closed-form trainable parameter count.
    ///
    /// * encoder: `H·C_in + 3H` (bias-free linear, BN scale/shift, threshold)
    /// * block `n` with width `F = nH`: `3P + PF + HP + F + H`, plus `H² + 3H`
    ///   for the Linear/BN/threshold stage unless `ssm_only`
    /// * classifier: `K(N+1)H + K`; regressor: `O(N+1)H + O + O·K_taps`
    pub fn parameter_count(&self) -> usize {
        let (h, p, c) = (self.hidden, self.state, self.input_dim);
        let mut total = h * c + 3 * h;
        for n in 1..=self.n_blocks {
            let f = n * h;
            total += 3 * p + p * f + h * p + f + h;
            if !self.ssm_only {
                total += h * h + 3 * h;
            }
        }
        let width = self.decoder_input_width();
        total += match self.task {
            Task::Classification { num_classes } => num_classes * width + num_classes,
            Task::Regression { out_dim, kernel_size } => out_dim * width + out_dim + out_dim * kernel_size,
        };
        total
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| parameter(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

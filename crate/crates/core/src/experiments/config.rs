//! Run and sweep descriptions, loadable from TOML or JSON.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::envs;
use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::net::{Activation, NetConfig, OutputScale};
use crate::td::{MarkovStart, SamplingMode, StepSize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ProjectedNeural,
    MeanPath,
    UnprojectedSingleLayer,
    Linear,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ProjectedNeural => "projected_neural",
            Algorithm::MeanPath => "mean_path",
            Algorithm::UnprojectedSingleLayer => "unprojected_single_layer",
            Algorithm::Linear => "linear",
        }
    }
}

/// Environment to evaluate the uniform policy on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Random {
        n: usize,
        d: usize,
        actions: usize,
        seed: u64,
        gamma: f64,
    },
    Gridworld {
        width: usize,
        height: usize,
        slip: f64,
        gamma: f64,
    },
    Chain {
        n: usize,
        p_forward: f64,
        #[serde(default)]
        smoothing: f64,
        gamma: f64,
    },
    /// Two states `±1` that swap with probability `flip`.
    Pair { flip: f64, gamma: f64 },
    File { path: String, gamma: f64 },
}

impl EnvConfig {
    pub fn gamma(&self) -> f64 {
        match *self {
            EnvConfig::Random { gamma, .. }
            | EnvConfig::Gridworld { gamma, .. }
            | EnvConfig::Chain { gamma, .. }
            | EnvConfig::Pair { gamma, .. }
            | EnvConfig::File { gamma, .. } => gamma,
        }
    }

    pub fn build(&self) -> Result<Mdp> {
        let mdp = match self {
            EnvConfig::Random { n, d, actions, seed, .. } => envs::random_mdp(*n, *d, *actions, *seed)?,
            EnvConfig::Gridworld { width, height, slip, .. } => envs::gridworld(*width, *height, *slip)?,
            EnvConfig::Chain { n, p_forward, smoothing, .. } => {
                let mdp = envs::chain_env(*n, *p_forward)?;
                if *smoothing > 0.0 {
                    mdp.smoothed(*smoothing)
                } else {
                    mdp
                }
            }
            EnvConfig::Pair { flip, .. } => envs::symmetric_pair(*flip)?,
            EnvConfig::File { path, .. } => Mdp::load(Path::new(path))?,
        };
        mdp.with_gamma(self.gamma())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    #[serde(default)]
    pub output_scale: OutputScale,
}

impl NetSpec {
    /// Network over `input_dim` features, initialized from `seed`.
    pub fn config(&self, input_dim: usize, seed: u64) -> NetConfig {
        NetConfig {
            depth: self.depth,
            width: self.width,
            input_dim,
            activation: self.activation,
            seed,
            output_scale: self.output_scale,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusScaling {
    /// `ω = ω₀` at every width.
    #[default]
    Constant,
    /// `ω = ω₀ √(m_ref / m)`.
    InvSqrtWidth,
}

impl RadiusScaling {
    pub fn name(self) -> &'static str {
        match self {
            RadiusScaling::Constant => "constant",
            RadiusScaling::InvSqrtWidth => "inv_sqrt_width",
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Projection {
    pub omega0: f64,
    #[serde(default)]
    pub scaling: RadiusScaling,
    #[serde(default = "one")]
    pub m_ref: f64,
}

impl Projection {
    pub fn radius(&self, width: usize) -> f64 {
        match self.scaling {
            RadiusScaling::Constant => self.omega0,
            RadiusScaling::InvSqrtWidth => self.omega0 * (self.m_ref / width as f64).sqrt(),
        }
    }
}

/// Step-size rule, resolved to a [`StepSize`] once the horizon and target are known.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSizeSpec {
    Constant { alpha: f64 },
    /// `α = scale / √T`
    InverseSqrtHorizon { scale: f64 },
    /// `α_t = 1 / (λ(t + 1))`
    InverseTime { lambda: f64 },
    /// `α_t = 1 / (λ(t + 1))` with `λ` a multiple of the smallest admissible value, computed
    /// from the weighted singular value of the Jacobian at the target.
    InverseTimeAuto { factor: f64 },
}

impl StepSizeSpec {
    pub fn is_inverse_time(&self) -> bool {
        matches!(self, StepSizeSpec::InverseTime { .. } | StepSizeSpec::InverseTimeAuto { .. })
    }

    /// Everything except the automatic rule, which needs the chain.
    pub fn resolve_fixed(&self, horizon: usize) -> Option<StepSize> {
        match *self {
            StepSizeSpec::Constant { alpha } => Some(StepSize::Constant { alpha }),
            StepSizeSpec::InverseSqrtHorizon { scale } => Some(StepSize::Constant {
                alpha: scale / (horizon as f64).sqrt(),
            }),
            StepSizeSpec::InverseTime { lambda } => Some(StepSize::InverseTime { lambda }),
            StepSizeSpec::InverseTimeAuto { .. } => None,
        }
    }
}

/// Representable target `θ̂* = θ₀ + ρu` for a random unit `u`; rewards are redefined so that
/// `V(θ̂*)` is the true value function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellmanMetric {
    /// `Σ_s μ(s)(R + γPV − V)(s)²`
    #[default]
    Exact,
    /// Moving average of `δ_t²` with decay 0.99.
    Ema,
}

fn default_record_every() -> usize {
    20
}

fn default_stride() -> usize {
    1
}

fn default_iid() -> SamplingMode {
    SamplingMode::Iid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdRunConfig {
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    #[serde(default)]
    pub net: Option<NetSpec>,
    #[serde(default)]
    pub projection: Option<Projection>,
    pub step_size: StepSizeSpec,
    pub horizon: usize,
    #[serde(default = "default_iid")]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub markov_start: MarkovStart,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub bellman_metric: BellmanMetric,
    /// The running average of the 𝒩-error visits every `average_every`-th iterate.
    #[serde(default = "default_stride")]
    pub average_every: usize,
}

impl TdRunConfig {
    pub fn validate(&self) -> Result<()> {
        let gamma = self.env.gamma();
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config("env.gamma", format!("must lie in (0,1), got {gamma}")));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be positive"));
        }
        if self.average_every == 0 {
            return Err(Error::config("average_every", "must be positive"));
        }
        match self.algorithm {
            Algorithm::Linear => {}
            _ => {
                let net = self
                    .net
                    .ok_or_else(|| Error::config("net", format!("required by {}", self.algorithm.name())))?;
                if net.depth == 0 || net.width == 0 {
                    return Err(Error::config("net", "depth and width must be positive"));
                }
            }
        }
        if self.algorithm == Algorithm::ProjectedNeural && self.projection.is_none() {
            return Err(Error::config("projection", "required by projected_neural"));
        }
        if let Some(p) = &self.projection {
            if !(p.omega0 > 0.0) || !(p.m_ref > 0.0) {
                return Err(Error::config("projection", "omega0 and m_ref must be positive"));
            }
        }
        if self.algorithm == Algorithm::UnprojectedSingleLayer {
            if self.net.map(|n| n.depth) != Some(1) {
                return Err(Error::config("net.depth", "unprojected_single_layer needs depth 1"));
            }
            if self.projection.is_some() {
                return Err(Error::config("projection", "unprojected_single_layer takes no projection"));
            }
            if !self.step_size.is_inverse_time() {
                return Err(Error::config("step_size", "unprojected_single_layer needs an inverse_time schedule"));
            }
        }
        if matches!(self.step_size, StepSizeSpec::InverseTimeAuto { .. }) && self.target.is_none() {
            return Err(Error::config("step_size", "inverse_time_auto needs a target"));
        }
        if let Some(step) = self.step_size.resolve_fixed(self.horizon) {
            step.validate().map_err(|e| Error::config("step_size", e.to_string()))?;
        }
        if let Some(t) = &self.target {
            if !(t.rho >= 0.0) {
                return Err(Error::config("target.rho", "must be non-negative"));
            }
        }
        Ok(())
    }

    /// Width used for radius scaling; linear models count as width 1.
    pub fn width(&self) -> usize {
        self.net.map_or(1, |n| n.width)
    }

    pub fn omega(&self) -> Option<f64> {
        self.projection.map(|p| p.radius(self.width()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        load_document(path).and_then(|(text, json)| {
            if json {
                Self::from_json_str(&text)
            } else {
                Self::from_toml_str(&text)
            }
        })
    }
}

/// A grid of runs: every combination of the listed axis values, each repeated over `seeds`
/// seeds. An empty axis keeps the base value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: TdRunConfig,
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub radius_scalings: Vec<RadiusScaling>,
    #[serde(default)]
    pub sampling_modes: Vec<SamplingMode>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    20
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be positive"));
        }
        if !self.widths.is_empty() && self.base.net.is_none() {
            return Err(Error::config("widths", "a width axis needs a network"));
        }
        if !self.radius_scalings.is_empty() && self.base.projection.is_none() {
            return Err(Error::config("radius_scalings", "a radius axis needs a projection"));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// Cell configurations in a fixed order: width, then horizon, radius and sampling mode.
    pub fn cells(&self) -> Vec<TdRunConfig> {
        fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let base = &self.base;
        let widths = axis(&self.widths, base.width());
        let horizons = axis(&self.horizons, base.horizon);
        let scalings = axis(
            &self.radius_scalings,
            base.projection.map(|p| p.scaling).unwrap_or_default(),
        );
        let modes = axis(&self.sampling_modes, base.sampling);
        let mut cells = Vec::new();
        for &w in &widths {
            for &h in &horizons {
                for &r in &scalings {
                    for &mode in &modes {
                        let mut cfg = base.clone();
                        if let Some(net) = cfg.net.as_mut() {
                            net.width = w;
                        }
                        cfg.horizon = h;
                        if let Some(p) = cfg.projection.as_mut() {
                            p.scaling = r;
                        }
                        cfg.sampling = mode;
                        cells.push(cfg);
                    }
                }
            }
        }
        cells
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (text, json) = load_document(path)?;
        let spec: Self = if json { parse_json(&text)? } else { parse_toml(&text)? };
        spec.validate()?;
        Ok(spec)
    }
}

fn load_document(path: &Path) -> Result<(String, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    Ok((text, json))
}

fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().message().to_string())
    })
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))
}

//! Fully-connected value network `x⁽ᵏ⁾ = σ(θ⁽ᵏ⁾x⁽ᵏ⁻¹⁾)/√m`, `V = scale · bᵀx⁽ᴷ⁾`, with exact
//! reverse-mode gradients over the flattened weights.
//!
//! Weights are stored as one flat vector: layer 1 (`m × d`) first, then layers 2..K
//! (`m × m`), each row-major. The output vector `b` is drawn once and never trained.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Bound on `‖θ₀⁽ᵏ⁾‖_F / √(m · fan_in)` checked at initialization.
pub const INIT_NORM_FACTOR: f64 = 3.0;

/// Smooth activations. ReLU is deliberately absent: the analysis needs a bounded second
/// derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
    Gelu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::Gelu,
    ];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Gelu => x * normal_cdf(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(x),
            Activation::Gelu => normal_cdf(x) + x * normal_pdf(x),
        }
    }

    /// `sup |σ'|`, rounded up.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Tanh => 1.0,
            Activation::Sigmoid => 0.25,
            Activation::Softplus => 1.0,
            Activation::Gelu => 1.13,
        }
    }

    /// Upper bound on `sup |σ''|`.
    pub fn smoothness(self) -> f64 {
        match self {
            Activation::Tanh => 0.7700,
            Activation::Sigmoid => 0.0963,
            Activation::Softplus => 0.25,
            Activation::Gelu => 1.13,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::Gelu => "gelu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softplus" => Ok(Activation::Softplus),
            "gelu" => Ok(Activation::Gelu),
            "relu" => Err(Error::InvalidArgument(
                "relu is not supported: the activation must be smooth".into(),
            )),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Multiplier applied to `bᵀx⁽ᴷ⁾`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    /// `V = bᵀx⁽ᴷ⁾ / √m`.
    #[default]
    InvSqrtWidth,
    /// `V = bᵀx⁽ᴷ⁾`. For one hidden layer this is `Σ_r b_r σ(θ_r·s) / √m`, whose gradient
    /// norm stays O(1) as the width grows.
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_scale: OutputScale,
}

impl NetConfig {
    pub fn new(depth: usize, width: usize, input_dim: usize, activation: Activation, seed: u64) -> Self {
        NetConfig {
            depth,
            width,
            input_dim,
            activation,
            seed,
            output_scale: OutputScale::default(),
        }
    }

    pub fn with_output_scale(mut self, scale: OutputScale) -> Self {
        self.output_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.input_dim == 0 {
            return Err(Error::InvalidDimension(format!(
                "depth, width and input_dim must be positive (got K={}, m={}, d={})",
                self.depth, self.width, self.input_dim
            )));
        }
        Ok(())
    }

    /// `(rows, cols)` of layer `k`, counted from 0.
    pub fn layer_shape(&self, k: usize) -> (usize, usize) {
        if k == 0 {
            (self.width, self.input_dim)
        } else {
            (self.width, self.width)
        }
    }

    /// Position of layer `k` inside the flattened parameter vector.
    pub fn layer_range(&self, k: usize) -> Range<usize> {
        let first = self.width * self.input_dim;
        if k == 0 {
            0..first
        } else {
            let start = first + (k - 1) * self.width * self.width;
            start..start + self.width * self.width
        }
    }

    pub fn num_params(&self) -> usize {
        self.width * self.input_dim + (self.depth - 1) * self.width * self.width
    }

    pub fn output_factor(&self) -> f64 {
        match self.output_scale {
            OutputScale::InvSqrtWidth => 1.0 / (self.width as f64).sqrt(),
            OutputScale::Unit => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub theta: DVector<f64>,
    pub b: DVector<f64>,
}

/// Everything computed by one forward pass. `activations[0]` is the input.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    pub pre_activations: Vec<DVector<f64>>,
    pub activations: Vec<DVector<f64>>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitDiagnostics {
    /// `‖θ₀⁽ᵏ⁾‖_F / √(m · fan_in)` per layer.
    pub norm_ratios: Vec<f64>,
    /// Largest `|θ⁽ᵏ⁾x⁽ᵏ⁻¹⁾|` entry over all layers and probe inputs.
    pub max_pre_activation: f64,
    /// Threshold applied to `max_pre_activation`.
    pub pre_activation_limit: f64,
}

impl InitDiagnostics {
    pub fn passed(&self) -> bool {
        self.norm_ratios.iter().all(|&r| r <= INIT_NORM_FACTOR)
            && self.max_pre_activation <= self.pre_activation_limit
    }
}

/// Draws `θ ~ N(0, 1)` entrywise and `b` uniform on `{−1, +1}` and runs the init diagnostics.
pub fn init(cfg: &NetConfig) -> Result<NetParams> {
    let (params, diag) = init_with_diagnostics(cfg)?;
    if !diag.passed() {
        return Err(Error::InitDiagnosticFailed(format!(
            "layer norm ratios {:?}, max pre-activation {:.3} (limit {:.3})",
            diag.norm_ratios, diag.max_pre_activation, diag.pre_activation_limit
        )));
    }
    Ok(params)
}

pub fn init_with_diagnostics(cfg: &NetConfig) -> Result<(NetParams, InitDiagnostics)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta = DVector::from_iterator(
        cfg.num_params(),
        (0..cfg.num_params()).map(|_| StandardNormal.sample(&mut rng)),
    );
    let b = DVector::from_iterator(
        cfg.width,
        (0..cfg.width).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }),
    );
    let params = NetParams {
        config: *cfg,
        theta,
        b,
    };
    let diag = params.diagnostics()?;
    Ok((params, diag))
}

impl NetParams {
    pub fn new(config: NetConfig, theta: DVector<f64>, b: DVector<f64>) -> Result<Self> {
        config.validate()?;
        if theta.len() != config.num_params() {
            return Err(Error::ShapeMismatch {
                expected: config.num_params(),
                got: theta.len(),
            });
        }
        if b.len() != config.width {
            return Err(Error::ShapeMismatch {
                expected: config.width,
                got: b.len(),
            });
        }
        if b.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidArgument("output weights must satisfy |b_r| ≤ 1".into()));
        }
        Ok(NetParams { config, theta, b })
    }

    /// Same network with different weights; `b` is shared.
    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::ShapeMismatch {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        Ok(NetParams {
            config: self.config,
            theta,
            b: self.b.clone(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Layer `k` (from 0) as a matrix.
    pub fn layer(&self, k: usize) -> DMatrix<f64> {
        let (rows, cols) = self.config.layer_shape(k);
        DMatrix::from_row_slice(rows, cols, &self.theta.as_slice()[self.config.layer_range(k)])
    }

    /// `Σ_k ‖θ⁽ᵏ⁾‖_F²`, accumulated layer by layer.
    pub fn layer_norms_sq(&self) -> Vec<f64> {
        (0..self.config.depth).map(|k| self.layer(k).norm_squared()).collect()
    }

    pub fn forward(&self, s: &[f64]) -> Result<ForwardTape> {
        check_len(self.config.input_dim, s.len())?;
        let cfg = &self.config;
        let act = cfg.activation;
        let inv_sqrt_m = 1.0 / (cfg.width as f64).sqrt();
        let theta = self.theta.as_slice();

        let mut pre_activations = Vec::with_capacity(cfg.depth);
        let mut activations = Vec::with_capacity(cfg.depth + 1);
        activations.push(DVector::from_column_slice(s));
        for k in 0..cfg.depth {
            let (rows, cols) = cfg.layer_shape(k);
            let w = &theta[cfg.layer_range(k)];
            let x = activations[k].as_slice();
            let h = DVector::from_iterator(
                rows,
                w.chunks_exact(cols).map(|row| dot(row, x)),
            );
            let next = h.map(|v| act.eval(v) * inv_sqrt_m);
            pre_activations.push(h);
            activations.push(next);
        }
        let value = cfg.output_factor() * self.b.dot(&activations[cfg.depth]);
        Ok(ForwardTape {
            pre_activations,
            activations,
            value,
        })
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        self.forward(s).map(|t| t.value)
    }

    /// `∇_θ V(s, θ)` in canonical order.
    pub fn grad(&self, s: &[f64]) -> Result<DVector<f64>> {
        self.value_and_grad(s).map(|(_, g)| g)
    }

    pub fn value_and_grad(&self, s: &[f64]) -> Result<(f64, DVector<f64>)> {
        let tape = self.forward(s)?;
        let mut out = DVector::zeros(self.num_params());
        self.backward(&tape, out.as_mut_slice());
        Ok((tape.value, out))
    }

    /// Writes `∇_θ V` for a recorded pass into `out`.
    pub fn backward(&self, tape: &ForwardTape, out: &mut [f64]) {
        let cfg = &self.config;
        let act = cfg.activation;
        let inv_sqrt_m = 1.0 / (cfg.width as f64).sqrt();
        let theta = self.theta.as_slice();

        let mut upstream: Vec<f64> = self.b.iter().map(|v| v * cfg.output_factor()).collect();
        for k in (0..cfg.depth).rev() {
            let (_, cols) = cfg.layer_shape(k);
            let range = cfg.layer_range(k);
            let h = &tape.pre_activations[k];
            let dh: Vec<f64> = upstream
                .iter()
                .zip(h.iter())
                .map(|(u, &hv)| u * act.derivative(hv) * inv_sqrt_m)
                .collect();
            let x = tape.activations[k].as_slice();
            let block = &mut out[range.clone()];
            for (row, &d) in block.chunks_exact_mut(cols).zip(&dh) {
                for (g, &xv) in row.iter_mut().zip(x) {
                    *g = d * xv;
                }
            }
            if k > 0 {
                let w = &theta[range];
                let mut next = vec![0.0; cols];
                for (row, &d) in w.chunks_exact(cols).zip(&dh) {
                    if d != 0.0 {
                        for (n, &wv) in next.iter_mut().zip(row) {
                            *n += d * wv;
                        }
                    }
                }
                upstream = next;
            }
        }
    }

    fn diagnostics(&self) -> Result<InitDiagnostics> {
        let cfg = &self.config;
        let norm_ratios = self
            .layer_norms_sq()
            .into_iter()
            .enumerate()
            .map(|(k, sq)| {
                let (rows, cols) = cfg.layer_shape(k);
                (sq / (rows * cols) as f64).sqrt()
            })
            .collect();
        let d = cfg.input_dim;
        let mut probes = vec![vec![1.0 / (d as f64).sqrt(); d]];
        let mut axis = vec![0.0; d];
        axis[0] = 1.0;
        probes.push(axis);
        let mut max_pre_activation: f64 = 0.0;
        for probe in &probes {
            let tape = self.forward(probe)?;
            for h in &tape.pre_activations {
                max_pre_activation = max_pre_activation.max(h.amax());
            }
        }
        Ok(InitDiagnostics {
            norm_ratios,
            max_pre_activation,
            pre_activation_limit: 10.0 * (1.0 + (cfg.width as f64).ln()),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y ← y + αx`
pub fn param_axpy(alpha: f64, x: &DVector<f64>, y: &mut DVector<f64>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    y.axpy(alpha, x, 1.0);
    Ok(())
}

pub fn param_norm(theta: &DVector<f64>) -> f64 {
    theta.norm()
}

pub fn param_dist(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Central finite-difference gradient with step `h`, for testing.
pub fn finite_difference_grad(params: &NetParams, s: &[f64], h: f64) -> Result<DVector<f64>> {
    let mut probe = params.clone();
    let mut out = DVector::zeros(params.num_params());
    for i in 0..params.num_params() {
        let base = probe.theta[i];
        probe.theta[i] = base + h;
        let up = probe.value(s)?;
        probe.theta[i] = base - h;
        let down = probe.value(s)?;
        probe.theta[i] = base;
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// On-disk network record. Floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub theta: Vec<f64>,
    pub b: Vec<f64>,
}

impl From<&NetParams> for Checkpoint {
    fn from(p: &NetParams) -> Self {
        Checkpoint {
            config: p.config,
            theta: p.theta.as_slice().to_vec(),
            b: p.b.as_slice().to_vec(),
        }
    }
}

impl Checkpoint {
    pub fn into_params(self) -> Result<NetParams> {
        NetParams::new(self.config, DVector::from_vec(self.theta), DVector::from_vec(self.b))
    }
}

pub fn save_checkpoint(params: &NetParams, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from(params)).map_err(|e| Error::persist(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::persist(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::persist(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let ckpt: Checkpoint = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
    ckpt.into_params()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_unit() -> NetParams {
        let cfg = NetConfig::new(1, 1, 2, Activation::Tanh, 0);
        NetParams::new(cfg, DVector::from_vec(vec![0.5, 0.0]), DVector::from_vec(vec![1.0])).unwrap()
    }

    #[test]
    fn single_unit_by_hand() {
        let net = single_unit();
        assert_abs_diff_eq!(net.value(&[1.0, 0.0]).unwrap(), 0.5f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(net.value(&[1.0, 0.0]).unwrap(), 0.462117, epsilon = 1e-6);
        let g = net.grad(&[1.0, 0.0]).unwrap();
        let sech2 = 1.0 / 0.5f64.cosh().powi(2);
        assert_abs_diff_eq!(g[0], sech2, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], 0.786448, epsilon = 1e-6);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn zero_weights() {
        let cfg = NetConfig::new(3, 4, 2, Activation::Tanh, 1);
        let net = init(&cfg).unwrap();
        let zero = net.with_theta(DVector::zeros(cfg.num_params())).unwrap();
        let s = [0.6, -0.3];
        assert_eq!(zero.value(&s).unwrap(), 0.0);
        let g = zero.grad(&s).unwrap();
        assert!(g.rows(cfg.layer_range(1).start, g.len() - cfg.layer_range(1).start).iter().all(|&v| v == 0.0));
        let fd = finite_difference_grad(&zero, &s, 1e-5).unwrap();
        assert!((&g - &fd).amax() < 1e-9);

        // Softplus keeps a constant signal alive: every layer outputs ln2/√m per unit.
        let cfg = NetConfig::new(3, 4, 2, Activation::Softplus, 1);
        let net = init(&cfg).unwrap();
        let zero = net.with_theta(DVector::zeros(cfg.num_params())).unwrap();
        let m = 4.0f64;
        let last = Activation::Softplus.eval(0.0) / m.sqrt();
        let expected = net.b.sum() * last / m.sqrt();
        assert_abs_diff_eq!(zero.value(&s).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn init_is_deterministic_and_signed() {
        let cfg = NetConfig::new(2, 8, 3, Activation::Gelu, 42);
        let a = init(&cfg).unwrap();
        let b = init(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.b.iter().all(|&v| v == 1.0 || v == -1.0));
        assert_ne!(a, init(&NetConfig { seed: 43, ..cfg }).unwrap());
    }

    #[test]
    fn wide_first_layer_has_unit_entry_scale() {
        let cfg = NetConfig::new(1, 4096, 2, Activation::Tanh, 5);
        let (_, diag) = init_with_diagnostics(&cfg).unwrap();
        assert!((0.9..=1.1).contains(&diag.norm_ratios[0]), "{:?}", diag.norm_ratios);
        assert!(diag.passed());
    }

    #[test]
    fn layout_and_norms() {
        let cfg = NetConfig::new(3, 5, 2, Activation::Sigmoid, 9);
        let net = init(&cfg).unwrap();
        assert_eq!(cfg.num_params(), 10 + 25 + 25);
        assert_eq!(cfg.layer_range(2), 35..60);
        let layer = net.layer(1);
        assert_eq!(layer[(0, 1)], net.theta[10 + 1]);
        assert_eq!(layer[(1, 0)], net.theta[10 + 5]);
        let via_layers = net.layer_norms_sq().iter().sum::<f64>().sqrt();
        assert_abs_diff_eq!(param_norm(&net.theta), via_layers, epsilon = 1e-12);
        assert_eq!(param_dist(&net.theta, &net.theta).unwrap(), 0.0);
        assert_abs_diff_eq!(
            param_norm(&(&net.theta * -2.5)),
            2.5 * param_norm(&net.theta),
            epsilon = 1e-12
        );
        let mut y = net.theta.clone();
        param_axpy(-1.0, &net.theta, &mut y).unwrap();
        assert_eq!(param_norm(&y), 0.0);
        assert!(matches!(
            param_axpy(1.0, &DVector::zeros(3), &mut y),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn activation_constants_hold_on_a_grid() {
        for act in Activation::ALL {
            let (mut d1, mut d2) = (0.0f64, 0.0f64);
            let h = 1e-4;
            for i in -20000..=20000 {
                let x = i as f64 * 1e-3;
                d1 = d1.max(act.derivative(x).abs());
                let second = (act.derivative(x + h) - act.derivative(x - h)) / (2.0 * h);
                d2 = d2.max(second.abs());
            }
            assert!(d1 <= act.lipschitz(), "{act}: sup|σ'| ≈ {d1}");
            assert!(d2 <= act.smoothness(), "{act}: sup|σ''| ≈ {d2}");
            let fd = (act.eval(0.3 + 1e-6) - act.eval(0.3 - 1e-6)) / 2e-6;
            assert_abs_diff_eq!(fd, act.derivative(0.3), epsilon = 1e-8);
        }
    }

    #[test]
    fn relu_is_rejected() {
        assert!(matches!("relu".parse::<Activation>(), Err(Error::InvalidArgument(_))));
        assert_eq!("GELU".parse::<Activation>().unwrap(), Activation::Gelu);
    }

    #[test]
    fn wrong_input_length() {
        let net = single_unit();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = NetConfig::new(2, 6, 3, Activation::Tanh, 11).with_output_scale(OutputScale::Unit);
        let net = init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert!(back.theta.iter().zip(net.theta.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

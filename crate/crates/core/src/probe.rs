//! Empirical Lipschitz and smoothness constants of the network in a ball around its
//! initialization, across widths.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::{init, NetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub width: usize,
    /// Largest `‖∇_θ V(s, θ)‖` seen.
    pub lipschitz_est: f64,
    /// Largest `‖∇V(s, θ₁) − ∇V(s, θ₂)‖ / ‖θ₁ − θ₂‖` seen.
    pub smoothness_est: f64,
    pub probes: usize,
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample(StandardNormal)));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// A uniform point of the ball `B(center, radius)`.
fn point_in_ball(center: &DVector<f64>, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let r = radius * rng.gen::<f64>().powf(1.0 / center.len() as f64);
    let mut out = unit_vector(center.len(), rng);
    out *= r;
    out += center;
    out
}

/// For each width, draws `trials` triples `(s, θ₁, θ₂)` with `‖s‖ = 1` and `θ₁, θ₂` in
/// `B(θ₀, ω)`. For one hidden layer the estimates must respect `‖∇V‖ ≤ l` and the
/// smoothness ratio `≤ c₀/√m`; a violation is reported as [`Error::BoundViolation`].
pub fn regularity_probe(
    base: &NetConfig,
    widths: &[usize],
    omega: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    if !(omega > 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {omega}")));
    }
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("widths must be strictly ascending".into()));
    }
    let mut rows = Vec::with_capacity(widths.len());
    for &width in widths {
        let cfg = NetConfig { width, ..*base };
        let mut probe = init(&cfg)?;
        let theta0 = probe.theta.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (width as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let lip_bound = cfg.activation.lipschitz() + 1e-9;
        let smooth_bound = cfg.activation.smoothness() / (width as f64).sqrt() + 1e-9;

        let mut row = ProbeRow {
            width,
            lipschitz_est: 0.0,
            smoothness_est: 0.0,
            probes: trials,
        };
        for _ in 0..trials {
            let s = unit_vector(cfg.input_dim, &mut rng);
            probe.theta = point_in_ball(&theta0, omega, &mut rng);
            let g1 = probe.grad(s.as_slice())?;
            let theta1 = std::mem::replace(&mut probe.theta, point_in_ball(&theta0, omega, &mut rng));
            let g2 = probe.grad(s.as_slice())?;
            let step = (&theta1 - &probe.theta).norm();
            let lip = g1.norm().max(g2.norm());
            let smooth = if step > 0.0 { (&g1 - &g2).norm() / step } else { 0.0 };
            row.lipschitz_est = row.lipschitz_est.max(lip);
            row.smoothness_est = row.smoothness_est.max(smooth);
            if cfg.depth == 1 && (lip > lip_bound || smooth > smooth_bound) {
                return Err(Error::BoundViolation(format!(
                    "width {width}: gradient norm {lip:e} (bound {lip_bound:e}), \
                     smoothness ratio {smooth:e} (bound {smooth_bound:e})"
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// CSV with columns `width,lipschitz_est,smoothness_est,probes`.
pub fn probe_csv(rows: &[ProbeRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Schema(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, OutputScale};

    #[test]
    fn single_layer_bounds_hold() {
        let base = NetConfig::new(1, 4, 3, Activation::Tanh, 1).with_output_scale(OutputScale::Unit);
        let rows = regularity_probe(&base, &[4, 16, 100], 5.0, 200, 9).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.lipschitz_est <= 1.0);
            assert!(r.smoothness_est <= 0.77 / (r.width as f64).sqrt());
        }
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(-0.5))).collect();
        assert!((log_log_slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let base = NetConfig::new(1, 4, 3, Activation::Tanh, 1);
        assert!(regularity_probe(&base, &[8, 4], 1.0, 1, 0).is_err());
        assert!(regularity_probe(&base, &[4], 0.0, 1, 0).is_err());
    }
}

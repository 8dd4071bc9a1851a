//! Error functionals on state functions: the μ-weighted norm, the Dirichlet semi-norm and
//! their convex combination 𝒩, plus the weighted singular value used by the unprojected
//! analysis and the gradient-splitting residual of linear TD.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::mdp::PolicyChain;

/// Tolerance for `fᵀD(γP − I)f = −𝒩(f)`, relative to `1 + 𝒩(f)`.
pub const QUADRATIC_IDENTITY_TOL: f64 = 1e-10;
/// Tolerance for the gradient-splitting residual, relative to `1 + 𝒩`.
pub const SPLITTING_TOL: f64 = 1e-8;
/// Sup-norm tolerance for `features · θ* = V*`.
pub const REPRESENTABLE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormReport {
    pub d_norm_sq: f64,
    pub dirichlet_sq: f64,
    pub n_value: f64,
    pub gamma: f64,
}

/// `‖f‖_D² = Σ_s μ(s) f(s)²`
pub fn d_norm_sq(f: &DVector<f64>, chain: &PolicyChain) -> Result<f64> {
    check_len(chain.n(), f.len())?;
    Ok(chain.mu.iter().zip(f.iter()).map(|(m, x)| m * x * x).sum())
}

/// `½ Σ_{s,s'} μ(s) P(s'|s) (f(s') − f(s))²`
pub fn dirichlet_sq(f: &DVector<f64>, chain: &PolicyChain) -> Result<f64> {
    let n = chain.n();
    check_len(n, f.len())?;
    let mut total = 0.0;
    for s in 0..n {
        let mut row = 0.0;
        for t in 0..n {
            let diff = f[t] - f[s];
            row += chain.p[(s, t)] * diff * diff;
        }
        total += chain.mu[s] * row;
    }
    Ok(0.5 * total)
}

/// `fᵀ D (γP − I) g`
pub fn td_bilinear(f: &DVector<f64>, g: &DVector<f64>, chain: &PolicyChain) -> Result<f64> {
    check_len(chain.n(), f.len())?;
    check_len(chain.n(), g.len())?;
    let pg = &chain.p * g;
    Ok((0..chain.n())
        .map(|s| chain.mu[s] * f[s] * (chain.gamma * pg[s] - g[s]))
        .sum())
}

/// `D (γP − I) f`, the vector that pulls back to the mean-path direction.
pub fn td_operator(f: &DVector<f64>, chain: &PolicyChain) -> Result<DVector<f64>> {
    check_len(chain.n(), f.len())?;
    let pf = &chain.p * f;
    Ok(DVector::from_iterator(
        chain.n(),
        (0..chain.n()).map(|s| chain.mu[s] * (chain.gamma * pf[s] - f[s])),
    ))
}

/// `𝒩(f) = (1 − γ)‖f‖_D² + γ‖f‖_Dir²`, checked against the quadratic-form identity.
pub fn n_functional(f: &DVector<f64>, chain: &PolicyChain) -> Result<NormReport> {
    let d = d_norm_sq(f, chain)?;
    let dir = dirichlet_sq(f, chain)?;
    let gamma = chain.gamma;
    let n_value = (1.0 - gamma) * d + gamma * dir;
    let quad = td_bilinear(f, f, chain)?;
    let gap = (quad + n_value).abs();
    if !(gap <= QUADRATIC_IDENTITY_TOL * (1.0 + n_value)) {
        return Err(Error::IdentityViolation(format!(
            "fᵀD(γP−I)f = {quad:e} but 𝒩(f) = {n_value:e} (gap {gap:e})"
        )));
    }
    Ok(NormReport {
        d_norm_sq: d,
        dirichlet_sq: dir,
        n_value,
        gamma,
    })
}

/// Shorthand for `n_functional(f).n_value`.
pub fn n_value(f: &DVector<f64>, chain: &PolicyChain) -> Result<f64> {
    n_functional(f, chain).map(|r| r.n_value)
}

/// `min_{x≠0} ‖Jx‖_D / ‖x‖`: the smallest singular value of `diag(√μ) J`, or zero when
/// `J` has more columns than rows (the minimum is then attained on the null space).
pub fn sigma_min_2d(jacobian: &DMatrix<f64>, chain: &PolicyChain) -> Result<f64> {
    check_len(chain.n(), jacobian.nrows())?;
    if jacobian.ncols() == 0 {
        return Err(Error::InvalidDimension("Jacobian has no columns".into()));
    }
    if jacobian.ncols() > jacobian.nrows() {
        return Ok(0.0);
    }
    let mut weighted = jacobian.clone();
    for (s, mut row) in weighted.row_iter_mut().enumerate() {
        row *= chain.mu[s].sqrt();
    }
    let sv = weighted.singular_values();
    Ok(sv.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Residual of the gradient-splitting identity for linear TD with `V(θ) = Φθ`:
/// `|(θ − θ*)ᵀ ḡ(θ) + 𝒩(Φ(θ − θ*))|` where `ḡ(θ) = ΦᵀD(γP − I)Φ(θ − θ*)`.
pub fn splitting_residual(
    theta: &DVector<f64>,
    theta_star: &DVector<f64>,
    features: &DMatrix<f64>,
    chain: &PolicyChain,
) -> Result<f64> {
    check_len(chain.n(), features.nrows())?;
    check_len(features.ncols(), theta.len())?;
    check_len(features.ncols(), theta_star.len())?;
    let represented = features * theta_star;
    let miss = (&represented - &chain.v_star).amax();
    if !(miss <= REPRESENTABLE_TOL) {
        return Err(Error::NotRepresentable(miss));
    }
    let diff = theta - theta_star;
    let f = features * &diff;
    let g_bar = features.tr_mul(&td_operator(&f, chain)?);
    let n = n_value(&f, chain)?;
    Ok((diff.dot(&g_bar) + n).abs())
}

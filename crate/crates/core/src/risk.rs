//! Risk-sensitive episodic return.
//!
//! The optimizer maximizes the mean-minus-variance surrogate
//! `E[R] - (mu/2) Var[R]`; the exponential-utility form is kept as a
//! diagnostic. Note its sign: `(1/mu) log E[exp(-mu R)]` is close to `-E[R]`,
//! so `-evar_literal` is what approximates the surrogate.

use crate::error::{Error, Result};

/// Risk sensitivity `mu` in `[0, 1)` and the horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskConfig {
    pub mu: f64,
    pub horizon: usize,
}

impl RiskConfig {
    pub fn new(mu: f64, horizon: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::InvalidRisk(format!("mu must lie in [0, 1), got {mu}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidRisk("horizon T must be >= 1".into()));
        }
        Ok(Self { mu, horizon })
    }
}

/// Which per-sample weight multiplies the score function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientForm {
    /// `(1 + mu Rbar) R - (mu/2) R^2`, the exact gradient of the surrogate.
    #[default]
    Surrogate,
    /// `(1 - mu Rbar) R + (mu/2) R^2`, the printed sample-based update.
    Literal,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by `n`).
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    // Shift by the first value so identical samples give exactly zero.
    let d: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let m = mean(&d);
    d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d.len() as f64
}

/// `(1/mu) log(mean(exp(-mu R)))`, evaluated with a max shift.
pub fn evar_literal(returns: &[f64], mu: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::InvalidRisk("no returns".into()));
    }
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::InvalidRisk(format!(
            "evar_literal needs mu > 0 (got {mu}); use surrogate_return for mu = 0"
        )));
    }
    let exps: Vec<f64> = returns.iter().map(|r| -mu * r).collect();
    let shift = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exps.iter().map(|e| (e - shift).exp()).sum();
    Ok((shift + (sum / returns.len() as f64).ln()) / mu)
}

/// `mean(R) - (mu/2) Var(R)`.
pub fn surrogate_return(returns: &[f64], mu: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::InvalidRisk("no returns".into()));
    }
    Ok(mean(returns) - 0.5 * mu * population_variance(returns))
}

/// Score-function weight of one trajectory with return `ret`, given the
/// batch mean `mean_ret`.
pub fn gradient_weight(ret: f64, mean_ret: f64, mu: f64, form: GradientForm) -> f64 {
    match form {
        GradientForm::Surrogate => (1.0 + mu * mean_ret) * ret - 0.5 * mu * ret * ret,
        GradientForm::Literal => (1.0 - mu * mean_ret) * ret + 0.5 * mu * ret * ret,
    }
}

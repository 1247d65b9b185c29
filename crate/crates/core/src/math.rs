//! Numerically stable primitives shared by the rest of the crate.
//!
//! `lse` and `softmax` are temperature-scaled:
//! `lse(w) = β⁻¹ log Σⱼ exp(β wⱼ)` and `softmax(w) = ∇lse(w)`.
//! Both shift by `max(w)` first, so every exponent is `≤ 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Entropic regularization strength `β`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Self(beta))
        } else {
            Err(invalid("beta", format!("must be positive and finite, got {beta}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Step of the gradient mapping.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct StepSize(f64);

impl StepSize {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self(alpha))
        } else {
            Err(invalid("alpha", format!("must be positive and finite, got {alpha}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for StepSize {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StepSize> for f64 {
    fn from(s: StepSize) -> f64 {
        s.0
    }
}

fn max_finite(w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::Domain("empty vector".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite entry".into()));
    }
    Ok(w.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `β⁻¹ log Σⱼ exp(β wⱼ)`.
pub fn lse(w: &[f64], beta: Temperature) -> Result<f64> {
    let b = beta.get();
    let m = max_finite(w)?;
    let s: f64 = w.iter().map(|&v| (b * (v - m)).exp()).sum();
    Ok(m + s.ln() / b)
}

/// Gibbs weights `exp(β wⱼ) / Σₖ exp(β wₖ)`.
pub fn softmax(w: &[f64], beta: Temperature) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(w.len());
    softmax_into(w, beta, &mut out)?;
    Ok(out)
}

pub(crate) fn softmax_into(w: &[f64], beta: Temperature, out: &mut Vec<f64>) -> Result<()> {
    let b = beta.get();
    let m = max_finite(w)?;
    out.clear();
    out.extend(w.iter().map(|&v| (b * (v - m)).exp()));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    Ok(())
}

pub fn positive_part(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// `(λ − (λ − α·grad)₊) / α`.
///
/// Component `j` equals `min(λⱼ/α, gradⱼ)`; the explicit form is kept so the
/// result matches the projected-step definition bit for bit.
pub fn gradient_mapping(lambda: &[f64], grad: &[f64], alpha: StepSize) -> Result<Vec<f64>> {
    if lambda.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "lambda has {} entries, gradient has {}",
            lambda.len(),
            grad.len()
        )));
    }
    if let Some(j) = lambda.iter().position(|&l| !(l >= 0.0)) {
        return Err(Error::Domain(format!("lambda[{j}] = {} is negative", lambda[j])));
    }
    let a = alpha.get();
    Ok(lambda
        .iter()
        .zip(grad)
        .map(|(&l, &g)| (l - (l - a * g).max(0.0)) / a)
        .collect())
}

/// Largest Euclidean column norm, i.e. the `ℓ₁ → ℓ₂` operator norm.
pub fn norm_1_to_2(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

//! A-posteriori guarantees attached to a dual point: a bound on the true
//! constraint violation and on the excess risk over any feasible policy.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::estimation_errors;
use crate::math::{gradient_mapping, norm2, StepSize, Temperature};
use crate::problem::{expected_gradient, DualModel, DualVector, Problem, RandomizedClassifier, WeightedSupport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `‖Ĝ_α(λ)‖` with the exact gradient of `F̂` over the evaluation support.
    pub grad_map_norm: f64,
    /// `E‖L − L̂‖_∞`; `None` when no true oracles are available.
    pub delta_l: Option<f64>,
    /// `√E‖C − Ĉ‖²_{1→2}`; `None` when no true oracles are available.
    pub delta_c: Option<f64>,
    pub lambda_norm: f64,
    pub alpha: StepSize,
    pub beta: Temperature,
    /// `E‖Ĉ‖_{1→2}`.
    pub sigma_term: f64,
    /// Entropy of the uniform policy, `log|𝒜|` (summed over blocks for
    /// set-valued problems).
    pub entropy: f64,
    pub violation_bound: f64,
    pub risk_gap_bound: f64,
}

impl Certificate {
    /// Both bounds from their ingredients; missing deltas count as zero.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        grad_map_norm: f64,
        delta_l: Option<f64>,
        delta_c: Option<f64>,
        lambda_norm: f64,
        alpha: StepSize,
        beta: Temperature,
        sigma_term: f64,
        entropy: f64,
    ) -> Self {
        let dl = delta_l.unwrap_or(0.0);
        let dc = delta_c.unwrap_or(0.0);
        let violation_bound = grad_map_norm + dc;
        let risk_gap_bound = (lambda_norm + alpha.get() * sigma_term) * grad_map_norm
            + 2.0 * dl
            + dc * lambda_norm
            + 2.0 * entropy / beta.get();
        Self { grad_map_norm, delta_l, delta_c, lambda_norm, alpha, beta, sigma_term, entropy, violation_bound, risk_gap_bound }
    }

    pub fn plug_in_only(&self) -> bool {
        self.delta_l.is_none()
    }
}

/// Certificate for any [`DualModel`] at `λ`; `deltas = (Δ_L, Δ_C)` when known.
pub fn certify_model<X, D: DualModel<X> + ?Sized>(
    estimated: &D,
    lambda: &DualVector,
    beta: Temperature,
    alpha: StepSize,
    entropy: f64,
    support: &WeightedSupport<X>,
    deltas: Option<(f64, f64)>,
) -> Result<Certificate> {
    let grad = expected_gradient(estimated, lambda.as_slice(), support, beta)?;
    let gm = gradient_mapping(lambda.as_slice(), &grad, alpha)?;
    let mut sigma_term = 0.0;
    for (x, w) in support.iter() {
        sigma_term += w * estimated.cost_norm(x)?;
    }
    Ok(Certificate::assemble(
        norm2(&gm),
        deltas.map(|d| d.0),
        deltas.map(|d| d.1),
        lambda.norm(),
        alpha,
        beta,
        sigma_term,
        entropy,
    ))
}

/// Certificate of a Gibbs classifier; `truth` supplies the estimation errors.
pub fn certify<X>(
    clf: &RandomizedClassifier<X>,
    truth: Option<&Problem<X>>,
    support: &WeightedSupport<X>,
    alpha: StepSize,
) -> Result<Certificate> {
    let deltas = match truth {
        Some(t) => Some(estimation_errors(clf.problem(), t, support)?),
        None => None,
    };
    let entropy = (clf.actions().len() as f64).ln();
    certify_model(clf.problem(), clf.lambda(), clf.beta(), alpha, entropy, support, deltas)
}

/// `√Σⱼ (vⱼ)₊²`.
pub fn positive_violation(values: &[f64]) -> f64 {
    values.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt()
}

/// Measured quantities next to their certified bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub measured_violation: f64,
    pub violation_bound: f64,
    pub measured_risk: f64,
    pub lp_value: Option<f64>,
    pub risk_bound: Option<f64>,
    pub violation_ok: bool,
    pub risk_ok: bool,
}

/// Compare the true violation and risk of a policy with `cert`. `lp_value`
/// is the optimum of the true problem when known.
pub fn check_certificate(
    cert: &Certificate,
    true_constraints: &[f64],
    true_risk: f64,
    lp_value: Option<f64>,
    tol: f64,
) -> CertificateCheck {
    let measured_violation = positive_violation(true_constraints);
    let risk_bound = lp_value.map(|v| v + cert.risk_gap_bound);
    CertificateCheck {
        measured_violation,
        violation_bound: cert.violation_bound,
        measured_risk: true_risk,
        lp_value,
        risk_bound,
        violation_ok: measured_violation <= cert.violation_bound + tol,
        risk_ok: risk_bound.is_none_or(|b| true_risk <= b + tol),
    }
}

//! Test-set metrics of randomized and set-valued predictors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Action, ActionSpace};

/// Per-point action probabilities `π(·|xᵢ)` paired with labeled test data.
pub struct LabeledPolicy<'a> {
    pub actions: &'a ActionSpace,
    pub proba: &'a [Vec<f64>],
    pub labels: &'a [usize],
    /// Group of each point, with the number of groups.
    pub groups: Option<(&'a [usize], usize)>,
    /// Prediction of a deployed classifier at each point.
    pub base: Option<&'a [usize]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// `E Σ_{ŷ ∈ [K]} 1{ŷ ≠ y} π(ŷ|x)`: rejection is not an error.
    pub risk: f64,
    /// As `risk` but with the reject option counted as a mistake.
    pub risk_reject_as_error: f64,
    /// `E π(r|x)` when the action set has a reject option.
    pub rejection_rate: Option<f64>,
    /// Error rate among non-rejected mass, `risk / (1 − rejection_rate)`.
    pub selective_risk: Option<f64>,
    /// `U_s = max_ŷ |E[π(ŷ|X) | S = s] − E π(ŷ|X)|`; `None` for empty groups.
    pub ks_unfairness: Option<Vec<Option<f64>>>,
    /// `E Σ_{ŷ ≠ g(x)} π(ŷ|x)`.
    pub churn: Option<f64>,
}

fn check_rows(proba: &[Vec<f64>], width: usize, labels: &[usize]) -> Result<()> {
    if proba.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if proba.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} prediction rows, {} labels", proba.len(), labels.len())));
    }
    if let Some(i) = proba.iter().position(|r| r.len() != width) {
        return Err(Error::ShapeMismatch(format!("row {i} has {} entries, expected {width}", proba[i].len())));
    }
    Ok(())
}

pub fn evaluate(input: &LabeledPolicy<'_>) -> Result<EvalReport> {
    let a = input.actions.len();
    check_rows(input.proba, a, input.labels)?;
    let label_of: Vec<Option<usize>> = input
        .actions
        .actions()
        .iter()
        .map(|act| match act {
            Action::Label(y) => Some(*y),
            _ => None,
        })
        .collect();
    let reject = input.actions.reject_index();
    let n = input.proba.len();
    let nf = n as f64;

    let (mut risk, mut risk_r, mut rej) = (0.0, 0.0, 0.0);
    for (p, &y) in input.proba.iter().zip(input.labels) {
        for (i, &pi) in p.iter().enumerate() {
            match label_of[i] {
                Some(l) if l != y => {
                    risk += pi;
                    risk_r += pi;
                }
                Some(_) => {}
                None => risk_r += pi,
            }
        }
        if let Some(r) = reject {
            rej += p[r];
        }
    }
    let rejection_rate = reject.map(|_| rej / nf);
    let selective_risk = rejection_rate.and_then(|r| (r < 1.0).then(|| risk / nf / (1.0 - r)));

    let ks_unfairness = match input.groups {
        None => None,
        Some((groups, s)) => {
            if groups.len() != n {
                return Err(Error::ShapeMismatch(format!("{} group entries for {n} points", groups.len())));
            }
            let mut overall = vec![0.0; a];
            let mut per = vec![vec![0.0; a]; s];
            let mut count = vec![0usize; s];
            for (p, &g) in input.proba.iter().zip(groups) {
                if g >= s {
                    return Err(Error::Domain(format!("group {g} outside 0..{s}")));
                }
                count[g] += 1;
                for i in 0..a {
                    overall[i] += p[i] / nf;
                    per[g][i] += p[i];
                }
            }
            Some(
                per.iter()
                    .zip(&count)
                    .map(|(row, &c)| {
                        (c > 0).then(|| {
                            row.iter().zip(&overall).map(|(v, o)| (v / c as f64 - o).abs()).fold(0.0, f64::max)
                        })
                    })
                    .collect(),
            )
        }
    };

    let churn = match input.base {
        None => None,
        Some(base) => {
            if base.len() != n {
                return Err(Error::ShapeMismatch(format!("{} base predictions for {n} points", base.len())));
            }
            let mut c = 0.0;
            for (p, &g) in input.proba.iter().zip(base) {
                c += p.iter().enumerate().filter(|&(i, _)| label_of[i] != Some(g)).map(|(_, v)| v).sum::<f64>();
            }
            Some(c / nf)
        }
    };

    Ok(EvalReport {
        n,
        risk: risk / nf,
        risk_reject_as_error: risk_r / nf,
        rejection_rate,
        selective_risk,
        ks_unfairness,
        churn,
    })
}

/// Replace every row by a one-hot draw from it.
pub fn sample_policy(proba: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    proba
        .iter()
        .map(|p| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = p.len().checked_sub(1).ok_or(Error::EmptyBatch)?;
            for (i, v) in p.iter().enumerate() {
                acc += v;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let mut row = vec![0.0; p.len()];
            row[pick] = 1.0;
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub n: usize,
    /// `P(Y ∉ Γ(X))`.
    pub miscoverage: f64,
    /// `E|Γ(X)|`.
    pub size: f64,
    pub churn: Option<f64>,
}

/// Metrics of per-class inclusion probabilities.
pub fn evaluate_sets(inclusion: &[Vec<f64>], labels: &[usize], base: Option<&[usize]>) -> Result<SetReport> {
    let k = inclusion.first().map_or(0, Vec::len);
    check_rows(inclusion, k, labels)?;
    let nf = labels.len() as f64;
    let mut miss = 0.0;
    let mut size = 0.0;
    for (q, &y) in inclusion.iter().zip(labels) {
        if y >= k {
            return Err(Error::Domain(format!("label {y} outside 0..{k}")));
        }
        miss += 1.0 - q[y];
        size += q.iter().sum::<f64>();
    }
    let churn = match base {
        None => None,
        Some(b) => {
            if b.len() != labels.len() {
                return Err(Error::ShapeMismatch(format!("{} base predictions for {} points", b.len(), labels.len())));
            }
            Some(inclusion.iter().zip(b).map(|(q, &g)| 1.0 - q.get(g).copied().unwrap_or(0.0)).sum::<f64>() / nf)
        }
    };
    Ok(SetReport { n: labels.len(), miscoverage: miss / nf, size: size / nf, churn })
}

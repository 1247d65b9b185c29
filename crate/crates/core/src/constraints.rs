//! Builders turning base probability estimators into `(𝒜, L, C)` problems.
//!
//! Every budget is folded into the cost functions as an additive constant so
//! that each family reads `𝒞_j(π) ≤ 0`. Constraint-row order is part of the
//! contract; see each builder.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::{lse, norm_1_to_2, softmax, Temperature};
use crate::problem::{
    Action, ActionSpace, ConstraintOracle, DualModel, DualVector, FiniteInstance, LossOracle, Problem, WeightedSupport,
};

/// Tolerance for a probability vector to sum to one.
pub const PROB_TOL: f64 = 1e-9;

/// `x ↦ (P(Y = y | X = x))_y`.
pub trait ClassProbModel<X>: Send + Sync {
    fn num_classes(&self) -> usize;
    fn predict(&self, x: &X) -> Result<Vec<f64>>;
}

/// Closure-backed [`ClassProbModel`].
pub struct FnProbModel<F> {
    num_classes: usize,
    f: F,
}

impl<F> FnProbModel<F> {
    pub fn new(num_classes: usize, f: F) -> Self {
        Self { num_classes, f }
    }
}

impl<X, F> ClassProbModel<X> for FnProbModel<F>
where
    F: Fn(&X) -> Result<Vec<f64>> + Send + Sync,
{
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, x: &X) -> Result<Vec<f64>> {
        (self.f)(x)
    }
}

pub type SharedProbModel<X> = Arc<dyn ClassProbModel<X>>;
pub type LabelFn<X> = Arc<dyn Fn(&X) -> Result<usize> + Send + Sync>;

fn checked_probs<X>(model: &dyn ClassProbModel<X>, x: &X, what: &str) -> Result<Vec<f64>> {
    let p = model.predict(x)?;
    if p.len() != model.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{what} model returned {} entries for {} classes",
            p.len(),
            model.num_classes()
        )));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Domain(format!("{what} model returned an invalid probability vector {p:?}")));
    }
    Ok(p)
}

/// Group posteriors `τ_s(x)` and marginals `P(S = s)`.
pub struct SensitiveProbModel<X> {
    tau: SharedProbModel<X>,
    marginals: Vec<f64>,
}

impl<X> Clone for SensitiveProbModel<X> {
    fn clone(&self) -> Self {
        Self { tau: Arc::clone(&self.tau), marginals: self.marginals.clone() }
    }
}

fn check_marginals(m: &[f64], what: &'static str) -> Result<()> {
    if m.is_empty() {
        return Err(invalid(what, "no groups"));
    }
    if let Some(s) = m.iter().position(|&v| !(v > 0.0)) {
        return Err(invalid(what, format!("marginal of group {s} is {} (must be positive)", m[s])));
    }
    let sum: f64 = m.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(invalid(what, format!("marginals sum to {sum}")));
    }
    Ok(())
}

impl<X: 'static> SensitiveProbModel<X> {
    /// The group is not observed at prediction time; `τ` is estimated.
    pub fn unaware(tau: SharedProbModel<X>, marginals: Vec<f64>) -> Result<Self> {
        check_marginals(&marginals, "marginals")?;
        if tau.num_classes() != marginals.len() {
            return Err(Error::ShapeMismatch(format!(
                "tau over {} groups, {} marginals",
                tau.num_classes(),
                marginals.len()
            )));
        }
        Ok(Self { tau, marginals })
    }

    /// The group is part of `x`; `τ_{s'}(x) = 1{s(x) = s'}`.
    pub fn aware(group_of: LabelFn<X>, marginals: Vec<f64>) -> Result<Self> {
        check_marginals(&marginals, "marginals")?;
        let s = marginals.len();
        let tau = FnProbModel::new(s, move |x: &X| {
            let g = group_of(x)?;
            if g >= s {
                return Err(Error::Domain(format!("group {g} out of range 0..{s}")));
            }
            let mut v = vec![0.0; s];
            v[g] = 1.0;
            Ok(v)
        });
        Ok(Self { tau: Arc::new(tau), marginals })
    }

    pub fn num_groups(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    pub fn tau(&self, x: &X) -> Result<Vec<f64>> {
        checked_probs(self.tau.as_ref(), x, "group")
    }
}

/// Budgets and slacks of the supported families, as they appear in config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub churn_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_budget: Option<f64>,
}

impl SlackParams {
    /// Range checks on whichever fields are present; `k` bounds the size budget.
    pub fn validate(&self, k: usize) -> Result<()> {
        if let Some(eps) = &self.eps {
            if let Some(i) = eps.iter().position(|&e| !(e >= 0.0 && e.is_finite())) {
                return Err(invalid("eps", format!("entry {i} = {} must be a finite nonnegative number", eps[i])));
            }
        }
        for (name, v) in [
            ("rejection_budget", self.rejection_budget),
            ("error_budget", self.error_budget),
            ("churn_budget", self.churn_budget),
            ("risk_budget", self.risk_budget),
        ] {
            if let Some(v) = v {
                unit_open(name, v)?;
            }
        }
        if let Some(i) = self.size_budget {
            size_range(i, k)?;
        }
        Ok(())
    }
}

fn unit_open(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in (0, 1), got {v}")))
    }
}

fn size_range(i: f64, k: usize) -> Result<()> {
    if i > 0.0 && i <= k as f64 {
        Ok(())
    } else {
        Err(invalid("size_budget", format!("must lie in (0, {k}], got {i}")))
    }
}

fn check_classes<X>(probs: &dyn ClassProbModel<X>, k: usize) -> Result<()> {
    if k < 2 {
        return Err(invalid("K", format!("need at least two classes, got {k}")));
    }
    if probs.num_classes() != k {
        return Err(Error::ShapeMismatch(format!("probability model over {} classes, K = {k}", probs.num_classes())));
    }
    Ok(())
}

fn misclassification_loss<X: 'static>(probs: &SharedProbModel<X>, k: usize) -> LossOracle<X> {
    let probs = Arc::clone(probs);
    LossOracle::new(k, move |x: &X| Ok(checked_probs(probs.as_ref(), x, "class")?.iter().map(|p| 1.0 - p).collect()))
}

/// `𝒜 = [K]`, `ℓ(x, a) = 1 − p_a(x)`, no constraints.
pub fn build_standard<X: 'static>(probs: SharedProbModel<X>, k: usize) -> Result<Problem<X>> {
    check_classes(probs.as_ref(), k)?;
    Problem::new(ActionSpace::labels(k), misclassification_loss(&probs, k), ConstraintOracle::none(k))
}

/// `𝒜 = [K] ∪ {r}`; misclassification loss on labels, zero loss on reject;
/// one row `c(x, a) = 1{a = r} − budget`.
pub fn build_reject_controlled_rejection<X: 'static>(probs: SharedProbModel<X>, k: usize, budget: f64) -> Result<Problem<X>> {
    check_classes(probs.as_ref(), k)?;
    unit_open("rejection_budget", budget)?;
    let a = k + 1;
    let p = Arc::clone(&probs);
    let loss = LossOracle::new(a, move |x: &X| {
        let mut l: Vec<f64> = checked_probs(p.as_ref(), x, "class")?.iter().map(|v| 1.0 - v).collect();
        l.push(0.0);
        Ok(l)
    });
    let row = DMatrix::from_fn(1, a, |_, j| if j == k { 1.0 - budget } else { -budget });
    let constraints = ConstraintOracle::new(1, a, move |_: &X| Ok(row.clone()));
    Problem::new(ActionSpace::labels_with_reject(k), loss, constraints)
}

/// Roles swapped: the rejection rate is minimized subject to
/// `c(x, a) = (1 − p_a(x))·1{a ≠ r} − budget`.
pub fn build_reject_controlled_error<X: 'static>(probs: SharedProbModel<X>, k: usize, budget: f64) -> Result<Problem<X>> {
    check_classes(probs.as_ref(), k)?;
    unit_open("error_budget", budget)?;
    let a = k + 1;
    let loss_row: Vec<f64> = (0..a).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
    let loss = LossOracle::new(a, move |_: &X| Ok(loss_row.clone()));
    let p = Arc::clone(&probs);
    let constraints = ConstraintOracle::new(1, a, move |x: &X| {
        let pr = checked_probs(p.as_ref(), x, "class")?;
        Ok(DMatrix::from_fn(1, a, |_, j| if j == k { -budget } else { 1.0 - pr[j] - budget }))
    });
    Problem::new(ActionSpace::labels_with_reject(k), loss, constraints)
}

/// Demographic parity, `M = 2·|S|·K` rows ordered `(sign, s, y)` with `+`
/// first: `c±_{(s,y)}(x, ŷ) = ±(τ_s(x)/P(S=s) − 1)·1{ŷ = y} − ε_s`.
pub fn build_demographic_parity<X: 'static>(
    probs: SharedProbModel<X>,
    sens: SensitiveProbModel<X>,
    k: usize,
    eps: &[f64],
) -> Result<Problem<X>> {
    check_classes(probs.as_ref(), k)?;
    let s = sens.num_groups();
    if eps.len() != s {
        return Err(Error::ShapeMismatch(format!("{} slack values for {s} groups", eps.len())));
    }
    SlackParams { eps: Some(eps.to_vec()), ..Default::default() }.validate(k)?;
    let m = 2 * s * k;
    let eps = eps.to_vec();
    let constraints = ConstraintOracle::new(m, k, move |x: &X| {
        let tau = sens.tau(x)?;
        let mut c = DMatrix::zeros(m, k);
        for (g, (&t, &pg)) in tau.iter().zip(sens.marginals()).enumerate() {
            let ratio = t / pg - 1.0;
            for y in 0..k {
                let plus = g * k + y;
                let minus = s * k + plus;
                for a in 0..k {
                    let ind = if a == y { 1.0 } else { 0.0 };
                    c[(plus, a)] = ratio * ind - eps[g];
                    c[(minus, a)] = -ratio * ind - eps[g];
                }
            }
        }
        Ok(c)
    });
    Problem::new(ActionSpace::labels(k), misclassification_loss(&probs, k), constraints)
}

/// Joint-outcome estimates for equalized odds.
pub struct JointModel<X> {
    /// `x ↦ P((S, Y) = (s, y) | x)` flattened as `s·K + y`.
    pub joint: SharedProbModel<X>,
    /// `P((S, Y) = (s, y))`, same flattening.
    pub marginals_sy: Vec<f64>,
    /// `P(Y = y)`.
    pub marginals_y: Vec<f64>,
}

/// Equalized odds, `M = 2·|S|·K²` rows ordered `(sign, y, s, y′)`:
/// `c±_{(y,s,y′)}(x, ŷ) = ±(P((S,Y)=(s,y′)|x)/P(s,y′) − p_{y′}(x)/P(Y=y′))·1{ŷ = y} − ε_{(s,y′)}`,
/// with `eps` flattened as `s·K + y′`.
pub fn build_equalized_odds<X: 'static>(
    probs: SharedProbModel<X>,
    joint: JointModel<X>,
    k: usize,
    eps: &[f64],
) -> Result<Problem<X>> {
    check_classes(probs.as_ref(), k)?;
    let sk = joint.marginals_sy.len();
    if sk == 0 || sk % k != 0 || joint.joint.num_classes() != sk || joint.marginals_y.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "joint model over {} outcomes, {} joint marginals, {} label marginals for K = {k}",
            joint.joint.num_classes(),
            sk,
            joint.marginals_y.len()
        )));
    }
    if let Some(i) = joint.marginals_sy.iter().position(|&v| !(v > 0.0)) {
        return Err(invalid("marginals_sy", format!("P((S,Y) = ({}, {})) must be positive", i / k, i % k)));
    }
    if let Some(y) = joint.marginals_y.iter().position(|&v| !(v > 0.0)) {
        return Err(invalid("marginals_y", format!("P(Y = {y}) must be positive")));
    }
    if eps.len() != sk {
        return Err(Error::ShapeMismatch(format!("{} slack values for {sk} (group, label) pairs", eps.len())));
    }
    SlackParams { eps: Some(eps.to_vec()), ..Default::default() }.validate(k)?;
    let s = sk / k;
    let m = 2 * s * k * k;
    let eps = eps.to_vec();
    let p = Arc::clone(&probs);
    let constraints = ConstraintOracle::new(m, k, move |x: &X| {
        let py = checked_probs(p.as_ref(), x, "class")?;
        let pj = checked_probs(joint.joint.as_ref(), x, "joint")?;
        for yp in 0..k {
            let col: f64 = (0..s).map(|g| pj[g * k + yp]).sum();
            if (col - py[yp]).abs() > 1e-6 {
                return Err(Error::Domain(format!(
                    "joint model disagrees with class model at label {yp}: {col} vs {}",
                    py[yp]
                )));
            }
        }
        let mut c = DMatrix::zeros(m, k);
        for y in 0..k {
            for g in 0..s {
                for yp in 0..k {
                    let idx = g * k + yp;
                    let diff = pj[idx] / joint.marginals_sy[idx] - py[yp] / joint.marginals_y[yp];
                    let plus = y * s * k + idx;
                    let minus = s * k * k + plus;
                    for a in 0..k {
                        let ind = if a == y { 1.0 } else { 0.0 };
                        c[(plus, a)] = diff * ind - eps[idx];
                        c[(minus, a)] = -diff * ind - eps[idx];
                    }
                }
            }
        }
        Ok(c)
    });
    Problem::new(ActionSpace::labels(k), misclassification_loss(&probs, k), constraints)
}

/// Churn against a deployed classifier `g`: `c(x, a) = 1{a ≠ g(x)} − budget`.
pub fn build_churn<X: 'static>(probs: SharedProbModel<X>, base: LabelFn<X>, k: usize, budget: f64) -> Result<Problem<X>> {
    check_classes(probs.as_ref(), k)?;
    unit_open("churn_budget", budget)?;
    let constraints = ConstraintOracle::new(1, k, move |x: &X| {
        let g = base(x)?;
        if g >= k {
            return Err(Error::Domain(format!("base classifier returned label {g} outside 0..{k}")));
        }
        Ok(DMatrix::from_fn(1, k, |_, a| if a == g { -budget } else { 1.0 - budget }))
    });
    Problem::new(ActionSpace::labels(k), misclassification_loss(&probs, k), constraints)
}

/// Stack the constraint rows of several problems over the same action set;
/// the loss is taken from the first.
pub fn combine<X: 'static>(problems: Vec<Problem<X>>) -> Result<Problem<X>> {
    let first = problems.first().ok_or_else(|| Error::Domain("nothing to combine".into()))?;
    if let Some(p) = problems.iter().find(|p| p.actions != first.actions) {
        return Err(Error::ShapeMismatch(format!(
            "action spaces differ: {:?} vs {:?}",
            first.actions.actions(),
            p.actions.actions()
        )));
    }
    let actions = first.actions.clone();
    let loss = first.loss.clone();
    let a = actions.len();
    let parts: Vec<ConstraintOracle<X>> = problems.into_iter().map(|p| p.constraints).collect();
    let m: usize = parts.iter().map(|c| c.num_constraints()).sum();
    let constraints = ConstraintOracle::new(m, a, move |x: &X| {
        let mut c = DMatrix::zeros(m, a);
        let mut row = 0;
        for part in &parts {
            let block = part.eval(x)?;
            c.rows_mut(row, block.nrows()).copy_from(&block);
            row += block.nrows();
        }
        Ok(c)
    });
    Problem::new(actions, loss, constraints)
}

/// Which quantity of a set-valued predictor is budgeted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SetValuedMode {
    /// Minimize miscoverage subject to `E|Γ| ≤ I`.
    SizeBudget(f64),
    /// Minimize `E|Γ|` subject to miscoverage `≤ α`.
    RiskBudget(f64),
}

/// Set-valued prediction with independent per-class inclusion
/// probabilities `π_y(x) ∈ [0, 1]`.
///
/// Each class is a two-action block (include, exclude). Risk, size and churn
/// are linear in `π`, so each block carries its share of loss and costs;
/// budget constants are split evenly over the `K` blocks. Smoothing uses a
/// per-coordinate binary entropy, giving a logistic inclusion probability.
pub struct SetValuedProblem<X> {
    k: usize,
    probs: SharedProbModel<X>,
    mode: SetValuedMode,
    churn: Option<(LabelFn<X>, f64)>,
}

impl<X> Clone for SetValuedProblem<X> {
    fn clone(&self) -> Self {
        Self {
            k: self.k,
            probs: Arc::clone(&self.probs),
            mode: self.mode,
            churn: self.churn.as_ref().map(|(g, b)| (Arc::clone(g), *b)),
        }
    }
}

/// Per-class block: loss over (include, exclude) and an `M × 2` cost matrix.
pub type Block = (Vec<f64>, DMatrix<f64>);

pub fn build_set_valued<X: 'static>(
    probs: SharedProbModel<X>,
    k: usize,
    mode: SetValuedMode,
    churn: Option<(LabelFn<X>, f64)>,
) -> Result<SetValuedProblem<X>> {
    check_classes(probs.as_ref(), k)?;
    match mode {
        SetValuedMode::SizeBudget(i) => size_range(i, k)?,
        SetValuedMode::RiskBudget(a) => unit_open("risk_budget", a)?,
    }
    if let Some((_, b)) = &churn {
        unit_open("churn_budget", *b)?;
    }
    Ok(SetValuedProblem { k, probs, mode, churn })
}

impl<X> SetValuedProblem<X> {
    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> SetValuedMode {
        self.mode
    }

    pub fn num_constraints(&self) -> usize {
        1 + usize::from(self.churn.is_some())
    }

    pub fn blocks(&self, x: &X) -> Result<Vec<Block>> {
        let p = checked_probs(self.probs.as_ref(), x, "class")?;
        let kf = self.k as f64;
        let g = match &self.churn {
            Some((g, b)) => {
                let label = g(x)?;
                if label >= self.k {
                    return Err(Error::Domain(format!("base classifier returned label {label} outside 0..{}", self.k)));
                }
                Some((label, *b))
            }
            None => None,
        };
        let m = self.num_constraints();
        Ok((0..self.k)
            .map(|y| {
                let mut c = DMatrix::zeros(m, 2);
                let loss = match self.mode {
                    SetValuedMode::SizeBudget(i) => {
                        c[(0, 0)] = 1.0 - i / kf;
                        c[(0, 1)] = -i / kf;
                        vec![0.0, p[y]]
                    }
                    SetValuedMode::RiskBudget(a) => {
                        c[(0, 0)] = -a / kf;
                        c[(0, 1)] = p[y] - a / kf;
                        vec![1.0, 0.0]
                    }
                };
                if let Some((label, b)) = g {
                    c[(1, 0)] = -b / kf;
                    c[(1, 1)] = if label == y { 1.0 } else { 0.0 } - b / kf;
                }
                (loss, c)
            })
            .collect())
    }

    fn block_score(loss: &[f64], c: &DMatrix<f64>, lambda: &[f64]) -> Vec<f64> {
        (0..2).map(|a| -loss[a] - (0..c.nrows()).map(|j| c[(j, a)] * lambda[j]).sum::<f64>()).collect()
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.num_constraints() {
            return Err(Error::ShapeMismatch(format!(
                "lambda has {} entries, problem has {} constraints",
                lambda.len(),
                self.num_constraints()
            )));
        }
        Ok(())
    }

    /// `π_y(x)` of the smoothed solution at `λ`.
    pub fn inclusion_proba(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        self.blocks(x)?
            .iter()
            .map(|(l, c)| softmax(&Self::block_score(l, c, lambda), beta).map(|p| p[0]))
            .collect()
    }

    pub fn classifier(&self, lambda: DualVector, beta: Temperature) -> Result<SetValuedClassifier<X>> {
        self.check_lambda(lambda.as_slice())?;
        Ok(SetValuedClassifier { problem: self.clone(), lambda, beta })
    }

    /// `(objective, constraint values)` of an inclusion policy.
    pub fn evaluate_policy<P>(&self, policy: P, support: &WeightedSupport<X>) -> Result<(f64, Vec<f64>)>
    where
        P: Fn(&X) -> Result<Vec<f64>>,
    {
        let mut obj = 0.0;
        let mut cons = vec![0.0; self.num_constraints()];
        for (x, w) in support.iter() {
            let pi = policy(x)?;
            if pi.len() != self.k {
                return Err(Error::ShapeMismatch(format!("policy returned {} coordinates for K = {}", pi.len(), self.k)));
            }
            for ((l, c), &q) in self.blocks(x)?.iter().zip(&pi) {
                obj += w * (l[0] * q + l[1] * (1.0 - q));
                for (j, cj) in cons.iter_mut().enumerate() {
                    *cj += w * (c[(j, 0)] * q + c[(j, 1)] * (1.0 - q));
                }
            }
        }
        Ok((obj, cons))
    }

    /// Miscoverage `E[Σ_y p_y (1 − π_y)]`.
    pub fn risk<P>(&self, policy: P, support: &WeightedSupport<X>) -> Result<f64>
    where
        P: Fn(&X) -> Result<Vec<f64>>,
    {
        let mut acc = 0.0;
        for (x, w) in support.iter() {
            let p = checked_probs(self.probs.as_ref(), x, "class")?;
            let pi = policy(x)?;
            acc += w * p.iter().zip(&pi).map(|(py, q)| py * (1.0 - q)).sum::<f64>();
        }
        Ok(acc)
    }

    /// Expected set size `E[Σ_y π_y]`.
    pub fn size<P>(&self, policy: P, support: &WeightedSupport<X>) -> Result<f64>
    where
        P: Fn(&X) -> Result<Vec<f64>>,
    {
        let mut acc = 0.0;
        for (x, w) in support.iter() {
            acc += w * policy(x)?.iter().sum::<f64>();
        }
        Ok(acc)
    }

    /// Equivalent two-action instance over `(point, class)` pairs, each with
    /// weight `w/K` and tables scaled by `K`; LP values coincide.
    pub fn to_finite_instance(&self, support: &WeightedSupport<X>) -> Result<FiniteInstance> {
        let kf = self.k as f64;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut loss = Vec::new();
        let mut costs = Vec::new();
        for (i, (x, w)) in support.iter().enumerate() {
            for (y, (l, c)) in self.blocks(x)?.into_iter().enumerate() {
                points.push(vec![i as f64, y as f64]);
                weights.push(w / kf);
                loss.push(l.iter().map(|v| v * kf).collect());
                costs.push(c * kf);
            }
        }
        FiniteInstance::new(ActionSpace::include_exclude(), points, weights, loss, costs, self.num_constraints())
    }
}

impl<X> DualModel<X> for SetValuedProblem<X> {
    fn num_constraints(&self) -> usize {
        SetValuedProblem::num_constraints(self)
    }

    fn sample_value(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<f64> {
        self.check_lambda(lambda)?;
        self.blocks(x)?.iter().map(|(l, c)| lse(&Self::block_score(l, c, lambda), beta)).sum()
    }

    fn sample_gradient(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        let mut g = vec![0.0; lambda.len()];
        for (l, c) in self.blocks(x)? {
            let p = softmax(&Self::block_score(&l, &c, lambda), beta)?;
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= c[(j, 0)] * p[0] + c[(j, 1)] * p[1];
            }
        }
        Ok(g)
    }

    fn cost_norm(&self, x: &X) -> Result<f64> {
        Ok(self.blocks(x)?.iter().map(|(_, c)| norm_1_to_2(c)).sum())
    }
}

/// Smoothed set-valued predictor at a fixed `λ`.
pub struct SetValuedClassifier<X> {
    problem: SetValuedProblem<X>,
    lambda: DualVector,
    beta: Temperature,
}

impl<X> SetValuedClassifier<X> {
    pub fn lambda(&self) -> &DualVector {
        &self.lambda
    }

    pub fn inclusion_proba(&self, x: &X) -> Result<Vec<f64>> {
        self.problem.inclusion_proba(self.lambda.as_slice(), x, self.beta)
    }

    /// Draw `Γ(x)` coordinate by coordinate.
    pub fn sample_set<R: rand::Rng + ?Sized>(&self, x: &X, rng: &mut R) -> Result<Vec<Action>> {
        Ok(self
            .inclusion_proba(x)?
            .iter()
            .enumerate()
            .filter(|(_, &q)| rng.random::<f64>() < q)
            .map(|(y, _)| Action::Label(y))
            .collect())
    }
}

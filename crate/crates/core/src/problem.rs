//! The constrained-classification problem and its entropic dual.
//!
//! A [`Problem`] bundles an action set with a loss oracle `x ↦ L(x) ∈ ℝ^|𝒜|`
//! and a constraint oracle `x ↦ C(x) ∈ ℝ^{M×|𝒜|}`. For a dual vector `λ ≥ 0`
//! the score of `x` is `−L(x) − C(x)ᵀλ`; the dual objective is the expected
//! `lse` of the score and the classifier is the Gibbs distribution over it.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{lse, norm_1_to_2, softmax, softmax_into, Temperature};

/// Tolerance on `Σ wᵢ = 1` for weighted supports.
pub const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Action {
    /// Predict class `k` (0-based).
    Label(usize),
    /// Abstain.
    Reject,
    /// Include the coordinate in a set-valued prediction.
    Include,
    /// Leave the coordinate out of a set-valued prediction.
    Exclude,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Label(k) => write!(f, "{k}"),
            Action::Reject => f.write_str("r"),
            Action::Include => f.write_str("in"),
            Action::Exclude => f.write_str("out"),
        }
    }
}

impl FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(Action::Reject),
            "in" => Ok(Action::Include),
            "out" => Ok(Action::Exclude),
            _ => s
                .parse::<usize>()
                .map(Action::Label)
                .map_err(|_| Error::Schema(format!("unknown action identifier {s:?}"))),
        }
    }
}

impl From<Action> for String {
    fn from(a: Action) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Action {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Ordered, duplicate-free list of actions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Action>", into = "Vec<Action>")]
pub struct ActionSpace(Vec<Action>);

impl ActionSpace {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Domain("action space must be nonempty".into()));
        }
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].contains(a) {
                return Err(Error::Domain(format!("duplicate action {a}")));
            }
        }
        Ok(Self(actions))
    }

    /// `[0, K)`.
    pub fn labels(k: usize) -> Self {
        Self((0..k).map(Action::Label).collect())
    }

    /// `[0, K) ∪ {r}`, reject last.
    pub fn labels_with_reject(k: usize) -> Self {
        let mut v: Vec<Action> = (0..k).map(Action::Label).collect();
        v.push(Action::Reject);
        Self(v)
    }

    pub fn include_exclude() -> Self {
        Self(vec![Action::Include, Action::Exclude])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn index_of(&self, a: Action) -> Option<usize> {
        self.0.iter().position(|&b| b == a)
    }

    pub fn reject_index(&self) -> Option<usize> {
        self.index_of(Action::Reject)
    }
}

impl TryFrom<Vec<Action>> for ActionSpace {
    type Error = Error;
    fn try_from(v: Vec<Action>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActionSpace> for Vec<Action> {
    fn from(a: ActionSpace) -> Self {
        a.0
    }
}

type LossFn<X> = dyn Fn(&X) -> Result<Vec<f64>> + Send + Sync;
type CostFn<X> = dyn Fn(&X) -> Result<DMatrix<f64>> + Send + Sync;

/// `x ↦ L(x)`, one loss per action.
pub struct LossOracle<X> {
    num_actions: usize,
    f: Arc<LossFn<X>>,
}

impl<X> Clone for LossOracle<X> {
    fn clone(&self) -> Self {
        Self { num_actions: self.num_actions, f: Arc::clone(&self.f) }
    }
}

impl<X> LossOracle<X> {
    pub fn new<F>(num_actions: usize, f: F) -> Self
    where
        F: Fn(&X) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        Self { num_actions, f: Arc::new(f) }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn eval(&self, x: &X) -> Result<Vec<f64>> {
        let v = (self.f)(x)?;
        if v.len() != self.num_actions {
            return Err(Error::ShapeMismatch(format!(
                "loss oracle returned {} entries for {} actions",
                v.len(),
                self.num_actions
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { oracle: "loss" });
        }
        Ok(v)
    }
}

/// `x ↦ C(x)`, an `M × |𝒜|` matrix with `C(x)_{ja} = c_j(x, a)`.
pub struct ConstraintOracle<X> {
    num_constraints: usize,
    num_actions: usize,
    f: Arc<CostFn<X>>,
}

impl<X> Clone for ConstraintOracle<X> {
    fn clone(&self) -> Self {
        Self {
            num_constraints: self.num_constraints,
            num_actions: self.num_actions,
            f: Arc::clone(&self.f),
        }
    }
}

impl<X> ConstraintOracle<X> {
    pub fn new<F>(num_constraints: usize, num_actions: usize, f: F) -> Self
    where
        F: Fn(&X) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        Self { num_constraints, num_actions, f: Arc::new(f) }
    }

    /// `M = 0`.
    pub fn none(num_actions: usize) -> Self
    where
        X: 'static,
    {
        Self::new(0, num_actions, move |_| Ok(DMatrix::zeros(0, num_actions)))
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn eval(&self, x: &X) -> Result<DMatrix<f64>> {
        let c = (self.f)(x)?;
        if c.shape() != (self.num_constraints, self.num_actions) {
            return Err(Error::ShapeMismatch(format!(
                "constraint oracle returned {:?}, expected {:?}",
                c.shape(),
                (self.num_constraints, self.num_actions)
            )));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { oracle: "constraint" });
        }
        Ok(c)
    }
}

/// Dual variable `λ ∈ ℝ₊^M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DualVector(Vec<f64>);

impl DualVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if let Some(j) = lambda.iter().position(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::Domain(format!("lambda[{j}] = {} is not a finite nonnegative number", lambda[j])));
        }
        Ok(Self(lambda))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        crate::math::norm2(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for DualVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DualVector> for Vec<f64> {
    fn from(d: DualVector) -> Self {
        d.0
    }
}

/// Finitely supported distribution over sample points.
#[derive(Debug, Clone)]
pub struct WeightedSupport<X> {
    points: Vec<X>,
    weights: Vec<f64>,
}

impl<X> WeightedSupport<X> {
    pub fn new(points: Vec<X>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if points.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidWeights { sum });
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<X>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn points(&self) -> &[X] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&X, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

impl WeightedSupport<usize> {
    /// Indices `0..n` with the given weights.
    pub fn indexed(weights: Vec<f64>) -> Result<Self> {
        Self::new((0..weights.len()).collect(), weights)
    }
}

/// Anything whose entropic dual can be sampled: `λ ↦ f(λ, x)` with a
/// closed-form gradient, plus the per-sample norm that bounds its variance.
pub trait DualModel<X>: Send + Sync {
    fn num_constraints(&self) -> usize;

    /// `f(λ, x)`; its expectation over `x` is the dual objective.
    fn sample_value(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<f64>;

    /// `∇_λ f(λ, x)`.
    fn sample_gradient(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<Vec<f64>>;

    /// Upper bound on `‖∇_λ f(λ, x)‖` uniform in `λ`; `‖C(x)‖_{1→2}` for a
    /// single Gibbs block.
    fn cost_norm(&self, x: &X) -> Result<f64>;
}

/// `Σᵢ wᵢ ∇f(λ, xᵢ)`.
pub fn expected_gradient<X, D>(model: &D, lambda: &[f64], support: &WeightedSupport<X>, beta: Temperature) -> Result<Vec<f64>>
where
    D: DualModel<X> + ?Sized,
{
    let mut acc = vec![0.0; model.num_constraints()];
    for (x, w) in support.iter() {
        let g = model.sample_gradient(lambda, x, beta)?;
        acc.iter_mut().zip(&g).for_each(|(a, gj)| *a += w * gj);
    }
    Ok(acc)
}

/// `Σᵢ wᵢ f(λ, xᵢ)`.
pub fn expected_value<X, D>(model: &D, lambda: &[f64], support: &WeightedSupport<X>, beta: Temperature) -> Result<f64>
where
    D: DualModel<X> + ?Sized,
{
    support
        .iter()
        .map(|(x, w)| model.sample_value(lambda, x, beta).map(|v| w * v))
        .sum()
}

/// Action set with loss and constraint oracles.
pub struct Problem<X> {
    pub actions: ActionSpace,
    pub loss: LossOracle<X>,
    pub constraints: ConstraintOracle<X>,
}

impl<X> Clone for Problem<X> {
    fn clone(&self) -> Self {
        Self { actions: self.actions.clone(), loss: self.loss.clone(), constraints: self.constraints.clone() }
    }
}

impl<X> Problem<X> {
    pub fn new(actions: ActionSpace, loss: LossOracle<X>, constraints: ConstraintOracle<X>) -> Result<Self> {
        let a = actions.len();
        if loss.num_actions() != a || constraints.num_actions() != a {
            return Err(Error::ShapeMismatch(format!(
                "{a} actions, loss oracle over {}, constraint oracle over {}",
                loss.num_actions(),
                constraints.num_actions()
            )));
        }
        Ok(Self { actions, loss, constraints })
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.num_constraints()
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

    fn score_parts(&self, lambda: &[f64], x: &X) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_lambda(lambda)?;
        let loss = self.loss.eval(x)?;
        let c = self.constraints.eval(x)?;
        let mut score: Vec<f64> = loss.iter().map(|l| -l).collect();
        for (a, s) in score.iter_mut().enumerate() {
            for (j, &l) in lambda.iter().enumerate() {
                *s -= c[(j, a)] * l;
            }
        }
        Ok((score, c))
    }

    /// `−L(x) − C(x)ᵀλ`.
    pub fn score_vector(&self, lambda: &[f64], x: &X) -> Result<Vec<f64>> {
        self.score_parts(lambda, x).map(|(s, _)| s)
    }

    /// Mean of `lse(score(x))` over the batch.
    pub fn dual_objective(&self, lambda: &[f64], batch: &[X], beta: Temperature) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut acc = 0.0;
        for x in batch {
            acc += lse(&self.score_vector(lambda, x)?, beta)?;
        }
        Ok(acc / batch.len() as f64)
    }

    /// `g(λ; x) = −C(x) σ(β score(x))`.
    pub fn stochastic_gradient(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<Vec<f64>> {
        if self.num_constraints() == 0 {
            return Err(Error::Domain("no constraints: the dual has nothing to optimize".into()));
        }
        self.gradient_unchecked(lambda, x, beta)
    }

    fn gradient_unchecked(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<Vec<f64>> {
        let (score, c) = self.score_parts(lambda, x)?;
        let p = softmax(&score, beta)?;
        Ok((0..c.nrows()).map(|j| -(0..c.ncols()).map(|a| c[(j, a)] * p[a]).sum::<f64>()).collect())
    }

    /// `∇F(λ) = −Σᵢ wᵢ C(xᵢ) σ(β score(xᵢ))`.
    pub fn exact_gradient(&self, lambda: &[f64], support: &WeightedSupport<X>, beta: Temperature) -> Result<Vec<f64>> {
        self.check_lambda(lambda)?;
        expected_gradient(self, lambda, support, beta)
    }

    /// Gibbs classifier `π_λ`.
    pub fn classifier(&self, lambda: DualVector, beta: Temperature) -> Result<RandomizedClassifier<X>> {
        self.check_lambda(lambda.as_slice())?;
        Ok(RandomizedClassifier { problem: self.clone(), lambda, beta })
    }
}

impl<X> DualModel<X> for Problem<X> {
    fn num_constraints(&self) -> usize {
        self.constraints.num_constraints()
    }

    fn sample_value(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<f64> {
        lse(&self.score_vector(lambda, x)?, beta)
    }

    fn sample_gradient(&self, lambda: &[f64], x: &X, beta: Temperature) -> Result<Vec<f64>> {
        self.gradient_unchecked(lambda, x, beta)
    }

    fn cost_norm(&self, x: &X) -> Result<f64> {
        Ok(norm_1_to_2(&self.constraints.eval(x)?))
    }
}

/// `E[Σ_a ℓ(x, a) π(a|x)]` for an arbitrary policy.
pub fn policy_risk<X, P>(policy: P, loss: &LossOracle<X>, support: &WeightedSupport<X>) -> Result<f64>
where
    P: Fn(&X) -> Result<Vec<f64>>,
{
    let mut acc = 0.0;
    for (x, w) in support.iter() {
        let p = policy(x)?;
        let l = loss.eval(x)?;
        if p.len() != l.len() {
            return Err(Error::ShapeMismatch(format!("policy over {} actions, loss over {}", p.len(), l.len())));
        }
        acc += w * l.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc)
}

/// `(E[Σ_a c_j(x, a) π(a|x)])_j` for an arbitrary policy.
pub fn policy_constraints<X, P>(policy: P, constraints: &ConstraintOracle<X>, support: &WeightedSupport<X>) -> Result<Vec<f64>>
where
    P: Fn(&X) -> Result<Vec<f64>>,
{
    let mut acc = vec![0.0; constraints.num_constraints()];
    for (x, w) in support.iter() {
        let p = policy(x)?;
        let c = constraints.eval(x)?;
        if p.len() != c.ncols() {
            return Err(Error::ShapeMismatch(format!("policy over {} actions, constraints over {}", p.len(), c.ncols())));
        }
        for (j, a) in acc.iter_mut().enumerate() {
            *a += w * (0..c.ncols()).map(|k| c[(j, k)] * p[k]).sum::<f64>();
        }
    }
    Ok(acc)
}

/// `π_λ(a | x) ∝ exp(β (−L(x) − C(x)ᵀλ)_a)`.
pub struct RandomizedClassifier<X> {
    problem: Problem<X>,
    lambda: DualVector,
    beta: Temperature,
}

impl<X> Clone for RandomizedClassifier<X> {
    fn clone(&self) -> Self {
        Self { problem: self.problem.clone(), lambda: self.lambda.clone(), beta: self.beta }
    }
}

impl<X> RandomizedClassifier<X> {
    pub fn problem(&self) -> &Problem<X> {
        &self.problem
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.problem.actions
    }

    pub fn lambda(&self) -> &DualVector {
        &self.lambda
    }

    pub fn beta(&self) -> Temperature {
        self.beta
    }

    pub fn predict_proba(&self, x: &X) -> Result<Vec<f64>> {
        let score = self.problem.score_vector(self.lambda.as_slice(), x)?;
        let mut p = Vec::with_capacity(score.len());
        softmax_into(&score, self.beta, &mut p)?;
        Ok(p)
    }

    /// Inverse-CDF draw over the declared action order.
    pub fn sample_action<R: Rng + ?Sized>(&self, x: &X, rng: &mut R) -> Result<Action> {
        let p = self.predict_proba(x)?;
        let u: f64 = rng.random();
        let mut cdf = 0.0;
        for (i, pi) in p.iter().enumerate() {
            cdf += pi;
            if u < cdf {
                return Ok(self.problem.actions.actions()[i]);
            }
        }
        // u landed in the rounding gap above the accumulated mass
        let last = p.iter().rposition(|&q| q > 0.0).unwrap_or(p.len() - 1);
        Ok(self.problem.actions.actions()[last])
    }

    /// `𝒞_j(π_λ)` under the supplied (typically true) constraint oracle.
    pub fn constraint_values(&self, truth: &ConstraintOracle<X>, support: &WeightedSupport<X>) -> Result<Vec<f64>> {
        if truth.num_constraints() != self.problem.num_constraints() {
            return Err(Error::ShapeMismatch(format!(
                "classifier has {} constraints, reference oracle has {}",
                self.problem.num_constraints(),
                truth.num_constraints()
            )));
        }
        policy_constraints(|x| self.predict_proba(x), truth, support)
    }

    /// `ℛ(π_λ)` under the supplied (typically true) loss oracle.
    pub fn risk_value(&self, truth: &LossOracle<X>, support: &WeightedSupport<X>) -> Result<f64> {
        policy_risk(|x| self.predict_proba(x), truth, support)
    }
}

/// Source of feature draws for a stochastic optimizer.
pub trait SampleStream<X> {
    fn next_sample(&mut self) -> Option<&X>;
    fn drawn(&self) -> usize;
}

/// I.i.d. draws from a weighted support.
pub struct WeightedSampler<'a, X> {
    support: &'a WeightedSupport<X>,
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    drawn: usize,
}

impl<'a, X> WeightedSampler<'a, X> {
    pub fn new(support: &'a WeightedSupport<X>, seed: u64) -> Result<Self> {
        let dist = WeightedIndex::new(support.weights())
            .map_err(|e| Error::Domain(format!("cannot sample from support: {e}")))?;
        Ok(Self { support, dist, rng: ChaCha8Rng::seed_from_u64(seed), drawn: 0 })
    }
}

impl<X> SampleStream<X> for WeightedSampler<'_, X> {
    fn next_sample(&mut self) -> Option<&X> {
        let i = self.dist.sample(&mut self.rng);
        self.drawn += 1;
        Some(&self.support.points()[i])
    }

    fn drawn(&self) -> usize {
        self.drawn
    }
}

/// Finite pool visited in a fresh random order on each pass.
pub struct ShuffledPool<'a, X> {
    pool: &'a [X],
    order: Vec<usize>,
    pos: usize,
    passes_left: usize,
    rng: ChaCha8Rng,
    drawn: usize,
}

impl<'a, X> ShuffledPool<'a, X> {
    pub fn new(pool: &'a [X], passes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        Self { pool, order, pos: 0, passes_left: passes.saturating_sub(1), rng, drawn: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.pool.len() * (self.passes_left + 1) + self.drawn
    }
}

impl<X> SampleStream<X> for ShuffledPool<'_, X> {
    fn next_sample(&mut self) -> Option<&X> {
        if self.pos == self.order.len() {
            if self.passes_left == 0 || self.order.is_empty() {
                return None;
            }
            self.passes_left -= 1;
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        self.drawn += 1;
        Some(&self.pool[i])
    }

    fn drawn(&self) -> usize {
        self.drawn
    }
}

/// Tabulated finite-support problem: `n` weighted points, an `n × |𝒜|` loss
/// table and `n` constraint matrices of shape `M × |𝒜|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteInstance {
    pub actions: ActionSpace,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub loss: Vec<Vec<f64>>,
    pub costs: Vec<DMatrix<f64>>,
    num_constraints: usize,
}

#[derive(Serialize, Deserialize)]
struct SupportEntry {
    x: Vec<f64>,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    actions: ActionSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_constraints: Option<usize>,
    support: Vec<SupportEntry>,
    #[serde(rename = "L")]
    loss: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    costs: Vec<Vec<Vec<f64>>>,
}

impl FiniteInstance {
    pub fn new(
        actions: ActionSpace,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
        loss: Vec<Vec<f64>>,
        costs: Vec<DMatrix<f64>>,
        num_constraints: usize,
    ) -> Result<Self> {
        let n = weights.len();
        let a = actions.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if points.len() != n || loss.len() != n || costs.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} weights, {} points, {} loss rows, {} cost matrices",
                points.len(),
                loss.len(),
                costs.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-12 * n as f64 {
            return Err(Error::InvalidWeights { sum });
        }
        for (i, (l, c)) in loss.iter().zip(&costs).enumerate() {
            if l.len() != a || c.shape() != (num_constraints, a) {
                return Err(Error::ShapeMismatch(format!("support point {i}: table shapes disagree with {a} actions")));
            }
            if l.iter().chain(c.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("support point {i}: non-finite table entry")));
            }
        }
        Ok(Self { actions, points, weights, loss, costs, num_constraints })
    }

    /// Tabulate `problem` over `support`; `features` (if any) are stored as
    /// the points' coordinates.
    pub fn from_problem<X>(problem: &Problem<X>, support: &WeightedSupport<X>, features: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let mut loss = Vec::with_capacity(support.len());
        let mut costs = Vec::with_capacity(support.len());
        for x in support.points() {
            loss.push(problem.loss.eval(x)?);
            costs.push(problem.constraints.eval(x)?);
        }
        let points = features.unwrap_or_else(|| vec![Vec::new(); support.len()]);
        Self::new(
            problem.actions.clone(),
            points,
            support.weights().to_vec(),
            loss,
            costs,
            problem.num_constraints(),
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    /// Table-backed problem over support indices.
    pub fn to_problem(&self) -> Problem<usize> {
        let a = self.num_actions();
        let m = self.num_constraints;
        let loss = Arc::new(self.loss.clone());
        let costs = Arc::new(self.costs.clone());
        let n = self.len();
        let oob = move |i: usize| Error::Domain(format!("support index {i} out of range 0..{n}"));
        Problem {
            actions: self.actions.clone(),
            loss: LossOracle::new(a, move |&i: &usize| loss.get(i).cloned().ok_or_else(|| oob(i))),
            constraints: ConstraintOracle::new(m, a, move |&i: &usize| costs.get(i).cloned().ok_or_else(|| oob(i))),
        }
    }

    pub fn support(&self) -> WeightedSupport<usize> {
        WeightedSupport { points: (0..self.len()).collect(), weights: self.weights.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = InstanceDoc {
            actions: self.actions.clone(),
            num_constraints: (self.num_constraints == 0).then_some(0),
            support: self
                .points
                .iter()
                .zip(&self.weights)
                .map(|(x, &weight)| SupportEntry { x: x.clone(), weight })
                .collect(),
            loss: self.loss.clone(),
            costs: self
                .costs
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        let a = doc.actions.len();
        let m = match (doc.num_constraints, doc.costs.first()) {
            (Some(m), _) => m,
            (None, Some(c)) => c.len(),
            (None, None) => 0,
        };
        let mut costs = Vec::with_capacity(doc.costs.len());
        for (i, rows) in doc.costs.iter().enumerate() {
            if rows.len() != m || rows.iter().any(|r| r.len() != a) {
                return Err(Error::Schema(format!("C[{i}] must be {m} rows of {a} entries")));
            }
            costs.push(DMatrix::from_fn(m, a, |j, k| rows[j][k]));
        }
        let (points, weights) = doc.support.into_iter().map(|e| (e.x, e.weight)).unzip();
        Self::new(doc.actions, points, weights, doc.loss, costs, m)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn beta(b: f64) -> Temperature {
        Temperature::new(b).unwrap()
    }

    fn single(loss: Vec<f64>, c: DMatrix<f64>) -> Problem<()> {
        let a = loss.len();
        let m = c.nrows();
        Problem::new(
            ActionSpace::labels(a),
            LossOracle::new(a, move |_| Ok(loss.clone())),
            ConstraintOracle::new(m, a, move |_| Ok(c.clone())),
        )
        .unwrap()
    }

    /// Random instance with an `n`-point support, used for brute-force checks.
    fn random_instance(rng: &mut ChaCha8Rng, n: usize, a: usize, m: usize) -> FiniteInstance {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / s).collect();
        let loss = (0..n).map(|_| (0..a).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let costs = (0..n).map(|_| DMatrix::from_fn(m, a, |_, _| rng.random_range(-1.0..1.0))).collect();
        FiniteInstance::new(ActionSpace::labels(a), vec![vec![]; n], weights, loss, costs, m).unwrap()
    }

    #[test]
    fn action_space_invariants() {
        assert!(ActionSpace::new(vec![]).is_err());
        assert!(ActionSpace::new(vec![Action::Reject, Action::Label(0), Action::Reject]).is_err());
        let s = ActionSpace::labels_with_reject(3);
        assert_eq!(s.len(), 4);
        assert_eq!(s.reject_index(), Some(3));
        assert_eq!("r".parse::<Action>().unwrap(), Action::Reject);
        assert_eq!("12".parse::<Action>().unwrap(), Action::Label(12));
        assert!("x".parse::<Action>().is_err());
    }

    #[test]
    fn score_vector_examples() {
        let p = single(vec![0.3, 0.7], DMatrix::zeros(0, 2));
        assert_eq!(p.score_vector(&[], &()).unwrap(), vec![-0.3, -0.7]);

        let p = single(vec![0.3, 0.7], DMatrix::from_row_slice(1, 2, &[5.0, -2.0]));
        assert_eq!(p.score_vector(&[0.0], &()).unwrap(), vec![-0.3, -0.7]);

        let c = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let p = single(vec![0.0, 1.0], c.clone());
        let s = p.score_vector(&[2.0], &()).unwrap();
        // brute-force loop
        let l = [0.0, 1.0];
        let brute: Vec<f64> = (0..2).map(|a| -l[a] - c[(0, a)] * 2.0).collect();
        assert_eq!(s, vec![-2.0, 1.0]);
        assert_eq!(s, brute);
        assert!(matches!(p.score_vector(&[1.0, 1.0], &()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn predict_proba_examples() {
        let p = single(vec![0.4; 5], DMatrix::zeros(0, 5));
        let clf = p.classifier(DualVector::zeros(0), beta(3.0)).unwrap();
        for q in clf.predict_proba(&()).unwrap() {
            assert_abs_diff_eq!(q, 0.2, epsilon = 1e-12);
        }
        let p = single(vec![0.0, 1.0], DMatrix::zeros(0, 2));
        let q = p.classifier(DualVector::zeros(0), beta(1.0)).unwrap().predict_proba(&()).unwrap();
        assert_abs_diff_eq!(q[0], 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.268_941_421_369_995_1, epsilon = 1e-12);

        // unique argmin of L + Cᵀλ = (0.5 + 0.2, 0.5 - 0.1, 0.9) is action 1
        let p = single(vec![0.5, 0.5, 0.9], DMatrix::from_row_slice(1, 3, &[0.2, -0.1, 0.0]));
        let q = p.classifier(DualVector::new(vec![1.0]).unwrap(), beta(1e3)).unwrap().predict_proba(&()).unwrap();
        assert!(q[1] >= 1.0 - 1e-6);
    }

    #[test]
    fn predict_proba_names_nonfinite_oracle() {
        let p: Problem<()> = Problem::new(
            ActionSpace::labels(2),
            LossOracle::new(2, |_| Ok(vec![0.0, f64::NAN])),
            ConstraintOracle::none(2),
        )
        .unwrap();
        let clf = p.classifier(DualVector::zeros(0), beta(1.0)).unwrap();
        assert!(matches!(clf.predict_proba(&()), Err(Error::NonFinite { oracle: "loss" })));

        let p: Problem<()> = Problem::new(
            ActionSpace::labels(2),
            LossOracle::new(2, |_| Ok(vec![0.0, 1.0])),
            ConstraintOracle::new(1, 2, |_| Ok(DMatrix::from_row_slice(1, 2, &[f64::INFINITY, 0.0]))),
        )
        .unwrap();
        let clf = p.classifier(DualVector::zeros(1), beta(1.0)).unwrap();
        assert!(matches!(clf.predict_proba(&()), Err(Error::NonFinite { oracle: "constraint" })));
    }

    #[test]
    fn sample_action_examples() {
        let p = single(vec![0.0, 1.0], DMatrix::zeros(0, 2));
        let clf = p.classifier(DualVector::zeros(0), beta(1e4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(clf.sample_action(&(), &mut rng).unwrap(), Action::Label(0));
        }

        let p = single(vec![0.5, 0.5], DMatrix::zeros(0, 2));
        let clf = p.classifier(DualVector::zeros(0), beta(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let hits = (0..n).filter(|_| clf.sample_action(&(), &mut rng).unwrap() == Action::Label(0)).count();
        // binomial sd = 0.0016; 0.01 is > 6 sd
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| clf.sample_action(&(), &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn dual_objective_examples() {
        let p = single(vec![0.0, 0.0], DMatrix::zeros(0, 2));
        assert_abs_diff_eq!(p.dual_objective(&[], &[()], beta(1.0)).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(matches!(p.dual_objective(&[], &[], beta(1.0)), Err(Error::EmptyBatch)));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = random_instance(&mut rng, 5, 3, 2);
        let prob = inst.to_problem();
        let lam = [0.4, 1.3];
        let b = beta(2.0);
        let batch: Vec<usize> = (0..5).collect();
        let brute: f64 = (0..5)
            .map(|i| {
                let s: Vec<f64> = (0..3)
                    .map(|a| -inst.loss[i][a] - inst.costs[i][(0, a)] * lam[0] - inst.costs[i][(1, a)] * lam[1])
                    .collect();
                lse(&s, b).unwrap()
            })
            .sum::<f64>()
            / 5.0;
        assert_abs_diff_eq!(prob.dual_objective(&lam, &batch, b).unwrap(), brute, epsilon = 1e-12);
    }

    #[test]
    fn dual_objective_is_convex_along_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let inst = random_instance(&mut rng, 4, 3, 2);
            let prob = inst.to_problem();
            let batch: Vec<usize> = (0..4).collect();
            let dir = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let f = |t: f64| prob.dual_objective(&[t * dir[0], t * dir[1]], &batch, beta(3.0)).unwrap();
            let (t0, t1) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            assert!(f(0.5 * (t0 + t1)) <= 0.5 * (f(t0) + f(t1)) + 1e-12);
        }
    }

    #[test]
    fn stochastic_gradient_examples() {
        let p = single(vec![0.1, 0.2], DMatrix::zeros(2, 2));
        assert_eq!(p.stochastic_gradient(&[1.0, 2.0], &(), beta(1.0)).unwrap(), vec![0.0, 0.0]);

        let c = DMatrix::from_row_slice(2, 1, &[0.3, -0.7]);
        let p = single(vec![0.5], c);
        let g = p.stochastic_gradient(&[0.2, 0.9], &(), beta(4.0)).unwrap();
        assert_abs_diff_eq!(g[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.7, epsilon = 1e-15);

        let p = single(vec![0.1, 0.2], DMatrix::zeros(0, 2));
        assert!(matches!(p.stochastic_gradient(&[], &(), beta(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn stochastic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &b in &[0.1, 1.0, 10.0] {
            for _ in 0..20 {
                let inst = random_instance(&mut rng, 1, 4, 3);
                let prob = inst.to_problem();
                let lam: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
                let g = prob.stochastic_gradient(&lam, &0, beta(b)).unwrap();
                let h = 1e-5 * (1.0 + lam.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                for j in 0..3 {
                    let mut up = lam.clone();
                    let mut dn = lam.clone();
                    up[j] += h;
                    dn[j] -= h;
                    let fd = (prob.sample_value(&up, &0, beta(b)).unwrap() - prob.sample_value(&dn, &0, beta(b)).unwrap()) / (2.0 * h);
                    assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()), "fd {fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn exact_gradient_is_average_and_rejects_bad_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let inst = random_instance(&mut rng, 6, 3, 2);
        let prob = inst.to_problem();
        let support = inst.support();
        let lam = [0.7, 0.1];
        let b = beta(5.0);
        let exact = prob.exact_gradient(&lam, &support, b).unwrap();
        let mut avg = [0.0; 2];
        for (i, w) in support.iter() {
            let g = prob.stochastic_gradient(&lam, i, b).unwrap();
            avg[0] += w * g[0];
            avg[1] += w * g[1];
        }
        assert_abs_diff_eq!(exact[0], avg[0], epsilon = 1e-12);
        assert_abs_diff_eq!(exact[1], avg[1], epsilon = 1e-12);

        // gradient = −𝒞(π_λ)
        let clf = prob.classifier(DualVector::new(lam.to_vec()).unwrap(), b).unwrap();
        let cv = clf.constraint_values(&prob.constraints, &support).unwrap();
        assert_abs_diff_eq!(exact[0], -cv[0], epsilon = 1e-12);
        assert_abs_diff_eq!(exact[1], -cv[1], epsilon = 1e-12);

        assert!(matches!(WeightedSupport::indexed(vec![0.5, 0.4]), Err(Error::InvalidWeights { .. })));
    }

    #[test]
    fn risk_and_constraint_examples() {
        // uniform π over K+1 actions with reject cost indicator
        let k = 3;
        let acts = ActionSpace::labels_with_reject(k);
        let p: Problem<usize> = Problem::new(
            acts,
            LossOracle::new(k + 1, |_| Ok(vec![1.0; 4])),
            ConstraintOracle::new(1, k + 1, |_| Ok(DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 1.0]))),
        )
        .unwrap();
        let support = WeightedSupport::indexed(vec![0.5, 0.5]).unwrap();
        let uniform = |_: &usize| Ok(vec![0.25; 4]);
        assert_abs_diff_eq!(policy_constraints(uniform, &p.constraints, &support).unwrap()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(policy_risk(uniform, &p.loss, &support).unwrap(), 1.0, epsilon = 1e-15);

        // deterministic π on a single point picks out a column
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, -2.0, -3.0]);
        let single_pt = single(vec![0.1, 0.2, 0.3], c);
        let one = WeightedSupport::new(vec![()], vec![1.0]).unwrap();
        let det = |_: &()| Ok(vec![0.0, 1.0, 0.0]);
        assert_eq!(policy_constraints(det, &single_pt.constraints, &one).unwrap(), vec![2.0, -2.0]);
        assert_eq!(policy_risk(det, &single_pt.loss, &one).unwrap(), 0.2);

        // random instance vs double loop
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let inst = random_instance(&mut rng, 7, 4, 2);
        let prob = inst.to_problem();
        let clf = prob.classifier(DualVector::new(vec![0.3, 0.8]).unwrap(), beta(2.0)).unwrap();
        let support = inst.support();
        let cv = clf.constraint_values(&prob.constraints, &support).unwrap();
        let r = clf.risk_value(&prob.loss, &support).unwrap();
        let (mut bc, mut br) = (vec![0.0; 2], 0.0);
        for i in 0..7 {
            let pi = clf.predict_proba(&i).unwrap();
            for a in 0..4 {
                br += inst.weights[i] * inst.loss[i][a] * pi[a];
                for j in 0..2 {
                    bc[j] += inst.weights[i] * inst.costs[i][(j, a)] * pi[a];
                }
            }
        }
        assert_abs_diff_eq!(r, br, epsilon = 1e-12);
        assert_abs_diff_eq!(cv[0], bc[0], epsilon = 1e-12);
        assert_abs_diff_eq!(cv[1], bc[1], epsilon = 1e-12);

        let wrong = ConstraintOracle::<usize>::none(4);
        assert!(matches!(clf.constraint_values(&wrong, &support), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, 3, 3, 1);
        let mut shifted = inst.clone();
        for row in &mut shifted.loss {
            row.iter_mut().for_each(|v| *v += 0.75);
        }
        let (p, q) = (inst.to_problem(), shifted.to_problem());
        let lam = DualVector::new(vec![0.6]).unwrap();
        let b = beta(4.0);
        let batch: Vec<usize> = (0..3).collect();
        let fp = p.dual_objective(lam.as_slice(), &batch, b).unwrap();
        let fq = q.dual_objective(lam.as_slice(), &batch, b).unwrap();
        assert_abs_diff_eq!(fp - fq, 0.75, epsilon = 1e-12);
        let cp = p.classifier(lam.clone(), b).unwrap();
        let cq = q.classifier(lam, b).unwrap();
        for i in 0..3 {
            for (x, y) in cp.predict_proba(&i).unwrap().iter().zip(cq.predict_proba(&i).unwrap()) {
                assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let support = WeightedSupport::indexed(vec![0.2, 0.3, 0.5]).unwrap();
        let take = |seed| {
            let mut s = WeightedSampler::new(&support, seed).unwrap();
            (0..20).map(|_| *s.next_sample().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(take(4), take(4));

        let pool: Vec<usize> = (0..5).collect();
        let mut s = ShuffledPool::new(&pool, 2, 0);
        let mut seen: Vec<usize> = (0..5).map(|_| *s.next_sample().unwrap()).collect();
        seen.sort();
        assert_eq!(seen, pool);
        for _ in 0..5 {
            assert!(s.next_sample().is_some());
        }
        assert!(s.next_sample().is_none());
        assert_eq!(s.drawn(), 10);
    }

    #[test]
    fn instance_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut inst = random_instance(&mut rng, 4, 3, 2);
        inst.points = (0..4).map(|i| vec![i as f64 / 3.0, 1e-300 * i as f64]).collect();
        let back = FiniteInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);

        let empty_m = FiniteInstance::new(ActionSpace::labels(2), vec![vec![]], vec![1.0], vec![vec![0.1, 0.2]], vec![DMatrix::zeros(0, 2)], 0).unwrap();
        assert_eq!(FiniteInstance::from_json(&empty_m.to_json().unwrap()).unwrap(), empty_m);
    }

    proptest! {
        #[test]
        fn gibbs_probabilities_are_valid(
            loss in prop::collection::vec(-3.0f64..3.0, 1..6),
            lam in 0.0f64..5.0,
            b in 0.01f64..200.0,
        ) {
            let a = loss.len();
            let c = DMatrix::from_fn(1, a, |_, k| k as f64 - 1.0);
            let p = single(loss, c);
            let q = p.classifier(DualVector::new(vec![lam]).unwrap(), beta(b)).unwrap().predict_proba(&()).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(q.iter().all(|&v| v >= 0.0));
        }
    }
}

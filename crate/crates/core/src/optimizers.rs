//! Stochastic first-order solvers for the smoothed dual and the end-to-end
//! post-processing pipeline built on them.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::{norm2, StepSize, Temperature};
use crate::problem::{DualModel, DualVector, Problem, RandomizedClassifier, SampleStream};

/// Source of stochastic gradients `∇f(λ, x)` with `E f(λ, X) = F(λ)`.
pub trait StochasticObjective<X>: Send + Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, lambda: &[f64], x: &X) -> Result<Vec<f64>>;
    fn value(&self, lambda: &[f64], x: &X) -> Result<f64>;
}

/// The entropic dual of a [`DualModel`] at a fixed temperature.
pub struct EntropicDual<'a, D> {
    model: &'a D,
    beta: Temperature,
}

impl<'a, D> EntropicDual<'a, D> {
    pub fn new(model: &'a D, beta: Temperature) -> Self {
        Self { model, beta }
    }
}

impl<X, D: DualModel<X>> StochasticObjective<X> for EntropicDual<'_, D> {
    fn dim(&self) -> usize {
        self.model.num_constraints()
    }

    fn gradient(&self, lambda: &[f64], x: &X) -> Result<Vec<f64>> {
        self.model.sample_gradient(lambda, x, self.beta)
    }

    fn value(&self, lambda: &[f64], x: &X) -> Result<f64> {
        self.model.sample_value(lambda, x, self.beta)
    }
}

/// One diagnostic row; `objective` is a single-sample estimate of `F` at the
/// averaged iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub stage: usize,
    pub objective: f64,
    pub lambda_norm: f64,
    pub elapsed_secs: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub sigma_sq: f64,
    pub smoothness: f64,
    pub mu: f64,
    pub t: usize,
    pub beta: Temperature,
    pub seed: u64,
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(invalid("sigma_sq", format!("must be finite and nonnegative, got {}", self.sigma_sq)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(invalid("mu", format!("must be positive, got {}", self.mu)));
        }
        if !(self.smoothness >= self.mu && self.smoothness.is_finite()) {
            return Err(invalid("smoothness", format!("must be finite and at least mu = {}, got {}", self.mu, self.smoothness)));
        }
        if self.t == 0 {
            return Err(invalid("T", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub lambda_hat: DualVector,
    pub alpha_cert: StepSize,
    pub trace: Vec<TraceRow>,
}

/// Any solver that maps `(F, λ₀, params, stream)` to a dual point together
/// with the step at which its gradient mapping is certified.
pub trait BlackBoxOptimizer<X> {
    fn optimize(
        &self,
        objective: &dyn StochasticObjective<X>,
        lambda0: &DualVector,
        params: &OptimizerParams,
        stream: &mut dyn SampleStream<X>,
    ) -> Result<OptimizerResult>;
}

struct Tracer {
    every: usize,
    start: Instant,
    iteration: usize,
    rows: Vec<TraceRow>,
}

impl Tracer {
    fn new(every: usize) -> Self {
        Self { every, start: Instant::now(), iteration: 0, rows: Vec::new() }
    }

    fn step<X>(&mut self, stage: usize, obj: &dyn StochasticObjective<X>, ag: &[f64], x: &X, last: bool) -> Result<()> {
        self.iteration += 1;
        if self.every == 0 || (self.iteration % self.every != 0 && !last) {
            return Ok(());
        }
        self.rows.push(TraceRow {
            iteration: self.iteration,
            stage,
            objective: obj.value(ag, x)?,
            lambda_norm: norm2(ag),
            elapsed_secs: self.start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

fn check_dim<X>(obj: &dyn StochasticObjective<X>, lambda0: &[f64]) -> Result<()> {
    if obj.dim() == 0 {
        return Err(Error::Domain("no constraints: the dual is zero-dimensional".into()));
    }
    if lambda0.len() != obj.dim() {
        return Err(Error::ShapeMismatch(format!("lambda0 has {} entries, objective has dimension {}", lambda0.len(), obj.dim())));
    }
    if lambda0.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("lambda0 must be nonnegative".into()));
    }
    Ok(())
}

fn draw<'s, X>(stream: &'s mut dyn SampleStream<X>) -> Result<&'s X> {
    let drawn = stream.drawn();
    stream.next_sample().ok_or(Error::StreamExhausted { drawn })
}

/// AC-SA on `F + Σᵢ μᵢ/2 ‖λ − cᵢ‖²`; the proximal terms enter each
/// stochastic gradient analytically.
#[allow(clippy::too_many_arguments)]
fn ac_sa_prox<X>(
    obj: &dyn StochasticObjective<X>,
    prox: &[(f64, Vec<f64>)],
    lambda0: &[f64],
    mu: f64,
    l: f64,
    t_max: usize,
    stream: &mut dyn SampleStream<X>,
    tracer: &mut Tracer,
    stage: usize,
) -> Result<Vec<f64>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid("mu", format!("must be positive, got {mu}")));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(invalid("L", format!("must be positive, got {l}")));
    }
    if t_max == 0 {
        return Err(invalid("T", "must be at least 1"));
    }
    let m = lambda0.len();
    let mut lam = lambda0.to_vec();
    let mut ag = lambda0.to_vec();
    let mut md = vec![0.0; m];
    for t in 1..=t_max {
        let x = draw(stream)?;
        let tf = t as f64;
        let alpha = 2.0 / (tf + 1.0);
        let gamma = 4.0 * l / (tf * (tf + 1.0));
        let denom = gamma + (1.0 - alpha * alpha) * mu;
        let w_ag = (1.0 - alpha) * (mu + gamma) / denom;
        let w_lam = alpha * ((1.0 - alpha) * mu + gamma) / denom;
        for j in 0..m {
            md[j] = w_ag * ag[j] + w_lam * lam[j];
        }
        let mut g = obj.gradient(&md, x)?;
        if g.len() != m {
            return Err(Error::ShapeMismatch(format!("gradient has {} entries, expected {m}", g.len())));
        }
        for (mu_i, c) in prox {
            for j in 0..m {
                g[j] += mu_i * (md[j] - c[j]);
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { oracle: "gradient" });
        }
        let c_lam = ((1.0 - alpha) * mu + gamma) / (mu + gamma);
        let c_md = alpha * mu / (mu + gamma);
        let c_g = alpha / (mu + gamma);
        for j in 0..m {
            lam[j] = (c_lam * lam[j] + c_md * md[j] - c_g * g[j]).max(0.0);
            ag[j] = alpha * lam[j] + (1.0 - alpha) * ag[j];
        }
        tracer.step(stage, obj, &ag, x, t == t_max)?;
    }
    Ok(ag)
}

/// Accelerated stochastic approximation for a `μ`-strongly convex,
/// `L`-smooth objective over the nonnegative orthant. Consumes exactly `t`
/// draws and returns the aggregated iterate.
pub fn ac_sa<X>(
    objective: &dyn StochasticObjective<X>,
    lambda0: &DualVector,
    mu: f64,
    l: f64,
    t: usize,
    stream: &mut dyn SampleStream<X>,
) -> Result<DualVector> {
    check_dim(objective, lambda0.as_slice())?;
    let mut tracer = Tracer::new(0);
    let out = ac_sa_prox(objective, &[], lambda0.as_slice(), mu, l, t, stream, &mut tracer, 0)?;
    DualVector::new(out)
}

/// `(J, 4√(L/μ)·J)` with `J = ⌊log₂(L/μ)⌋`.
pub fn sgd3_threshold(mu: f64, l: f64) -> (usize, f64) {
    let ratio = l / mu;
    let mut j = 0usize;
    while 2f64.powi(j as i32 + 1) <= ratio {
        j += 1;
    }
    (j, 4.0 * ratio.sqrt() * j as f64)
}

/// Multi-stage AC-SA with geometrically growing proximal terms, aimed at a
/// small gradient mapping rather than a small objective gap.
///
/// With `J = 0` (`L < 2μ`) a single AC-SA pass runs on `F + μ/2‖λ − λ₀‖²`
/// with the whole budget. The per-stage budget is `⌊T/J⌋`, the last stage
/// also takes the remainder.
pub fn sgd3<X>(
    objective: &dyn StochasticObjective<X>,
    lambda0: &DualVector,
    mu: f64,
    l: f64,
    t: usize,
    stream: &mut dyn SampleStream<X>,
    trace_every: usize,
) -> Result<OptimizerResult> {
    check_dim(objective, lambda0.as_slice())?;
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid("mu", format!("must be positive, got {mu}")));
    }
    if !(l >= mu && l.is_finite()) {
        return Err(invalid("mu", format!("must not exceed L = {l}, got {mu}")));
    }
    if t == 0 {
        return Err(invalid("T", "must be at least 1"));
    }
    let (stages, threshold) = sgd3_threshold(mu, l);
    if t as f64 <= threshold {
        return Err(Error::BelowThreshold { t, threshold, minimal: threshold.floor() as usize + 1 });
    }
    let mut tracer = Tracer::new(trace_every);
    let smooth = 2.0 * (l + mu);
    let mut prox = vec![(mu, lambda0.as_slice().to_vec())];
    let lambda_hat = if stages == 0 {
        ac_sa_prox(objective, &prox, lambda0.as_slice(), mu, smooth, t, stream, &mut tracer, 1)?
    } else {
        let per = t / stages;
        let mut current = lambda0.as_slice().to_vec();
        let mut mu_j = mu;
        for j in 1..=stages {
            let budget = if j == stages { t - per * (stages - 1) } else { per };
            current = ac_sa_prox(objective, &prox, &current, mu_j, smooth, budget, stream, &mut tracer, j)?;
            mu_j *= 2.0;
            prox.push((mu_j, current.clone()));
        }
        current
    };
    let alpha = 1.0 / (2f64.powi(stages as i32 + 2) * mu);
    Ok(OptimizerResult { lambda_hat: DualVector::new(lambda_hat)?, alpha_cert: StepSize::new(alpha)?, trace: tracer.rows })
}

/// [`sgd3`] behind the black-box interface.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sgd3 {
    pub trace_every: usize,
}

impl<X> BlackBoxOptimizer<X> for Sgd3 {
    fn optimize(
        &self,
        objective: &dyn StochasticObjective<X>,
        lambda0: &DualVector,
        params: &OptimizerParams,
        stream: &mut dyn SampleStream<X>,
    ) -> Result<OptimizerResult> {
        params.validate()?;
        sgd3(objective, lambda0, params.mu, params.smoothness, params.t, stream, self.trace_every)
    }
}

/// Plain projected SGD with steps `1/(L + σ√t)`, returning the average of
/// the second half of the iterates. Certified at `α = 1/L`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectedSgd {
    pub trace_every: usize,
}

impl<X> BlackBoxOptimizer<X> for ProjectedSgd {
    fn optimize(
        &self,
        objective: &dyn StochasticObjective<X>,
        lambda0: &DualVector,
        params: &OptimizerParams,
        stream: &mut dyn SampleStream<X>,
    ) -> Result<OptimizerResult> {
        params.validate()?;
        check_dim(objective, lambda0.as_slice())?;
        let m = lambda0.len();
        let sigma = params.sigma_sq.sqrt();
        let mut lam = lambda0.as_slice().to_vec();
        let mut avg = vec![0.0; m];
        let half = params.t / 2;
        let mut tracer = Tracer::new(self.trace_every);
        for t in 1..=params.t {
            let x = draw(stream)?;
            let g = objective.gradient(&lam, x)?;
            if g.len() != m || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { oracle: "gradient" });
            }
            let eta = 1.0 / (params.smoothness + sigma * (t as f64).sqrt());
            for j in 0..m {
                lam[j] = (lam[j] - eta * g[j]).max(0.0);
            }
            if t > half {
                let k = (t - half) as f64;
                for j in 0..m {
                    avg[j] += (lam[j] - avg[j]) / k;
                }
            }
            tracer.step(1, objective, &avg, x, t == params.t)?;
        }
        Ok(OptimizerResult {
            lambda_hat: DualVector::new(avg)?,
            alpha_cert: StepSize::new(1.0 / params.smoothness)?,
            trace: tracer.rows,
        })
    }
}

/// How `β` is tied to the budget `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum BetaMode {
    /// `β = T / (8 log₂ T)`.
    #[default]
    Theory,
    /// `β = 0.5 √T · ln √T`.
    Experiment,
    Fixed(f64),
}

impl BetaMode {
    pub fn beta(self, t: usize) -> Result<f64> {
        let tf = t as f64;
        let b = match self {
            BetaMode::Theory => {
                if t < 2 {
                    return Err(invalid("T", format!("must be at least 2, got {t}")));
                }
                tf / (8.0 * tf.log2())
            }
            BetaMode::Experiment => 0.5 * tf.sqrt() * tf.sqrt().ln(),
            BetaMode::Fixed(b) => b,
        };
        Temperature::new(b)?;
        Ok(b)
    }
}

fn check_sigma(sigma_sq: f64) -> Result<()> {
    if sigma_sq > 0.0 && sigma_sq.is_finite() {
        Ok(())
    } else {
        Err(invalid("sigma_sq", format!("must be positive and finite, got {sigma_sq}")))
    }
}

fn theory_admissible(t: usize, sigma_sq: f64) -> bool {
    let Ok(beta) = BetaMode::Theory.beta(t) else { return false };
    let mu = 2.0 * sigma_sq / beta;
    let l = 2.0 * beta * sigma_sq;
    mu <= l && (t as f64) > sgd3_threshold(mu, l).1
}

/// `β = T/(8 log₂ T)`, `μ = 2σ²/β`, `L = 2βσ²`. Errors with the smallest
/// admissible `T` when `μ > L` or the staging threshold fails.
pub fn default_schedule(t: usize, sigma_sq: f64) -> Result<OptimizerParams> {
    check_sigma(sigma_sq)?;
    if !theory_admissible(t, sigma_sq) {
        let minimal = (t.max(2)..).find(|&n| theory_admissible(n, sigma_sq)).unwrap_or(usize::MAX);
        let threshold = BetaMode::Theory.beta(t).map(|b| 4.0 * b * (2.0 * b.log2()).floor().max(0.0)).unwrap_or(f64::INFINITY);
        return Err(Error::BelowThreshold { t, threshold, minimal });
    }
    let beta = BetaMode::Theory.beta(t)?;
    Ok(OptimizerParams {
        sigma_sq,
        smoothness: 2.0 * beta * sigma_sq,
        mu: 2.0 * sigma_sq / beta,
        t,
        beta: Temperature::new(beta)?,
        seed: 0,
    })
}

/// Schedule for any [`BetaMode`]. Outside the theory mode the pairing
/// `μ = 2σ²/β` can violate the staging threshold for moderate `T`; `μ` is
/// then doubled (capped at `L`) until the threshold holds.
pub fn schedule(t: usize, sigma_sq: f64, mode: BetaMode) -> Result<OptimizerParams> {
    if mode == BetaMode::Theory {
        return default_schedule(t, sigma_sq);
    }
    check_sigma(sigma_sq)?;
    if t == 0 {
        return Err(invalid("T", "must be at least 1"));
    }
    let beta = mode.beta(t)?;
    let l = 2.0 * beta * sigma_sq;
    let mut mu = (2.0 * sigma_sq / beta).min(l);
    while (t as f64) <= sgd3_threshold(mu, l).1 {
        mu = (2.0 * mu).min(l);
    }
    Ok(OptimizerParams { sigma_sq, smoothness: l, mu, t, beta: Temperature::new(beta)?, seed: 0 })
}

/// Mean of `‖Ĉ(x)‖²_{1→2}` over `batch`, inflated by 1.1 so that it upper
/// bounds the population value with margin.
pub fn estimate_sigma_sq<X, D: DualModel<X> + ?Sized>(model: &D, batch: &[X]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = 0.0;
    for x in batch {
        let c = model.cost_norm(x)?;
        acc += c * c;
    }
    Ok(1.1 * acc / batch.len() as f64)
}

/// Pipeline settings; `sigma_sq = None` estimates it on the calibration batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoptSettings {
    pub t: usize,
    #[serde(default)]
    pub beta: BetaMode,
    #[serde(default)]
    pub sigma_sq: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

pub struct CoptOutput<C> {
    pub classifier: C,
    pub result: OptimizerResult,
    pub params: OptimizerParams,
}

/// Estimate `σ²`, set the schedule and run `optimizer` from `λ₀ = 0` on the
/// entropic dual of `model`. Returns the parameters used and the solver output.
pub fn copt_dual<X, D: DualModel<X>>(
    model: &D,
    calibration: &[X],
    stream: &mut dyn SampleStream<X>,
    settings: &CoptSettings,
    optimizer: &dyn BlackBoxOptimizer<X>,
) -> Result<(OptimizerParams, OptimizerResult)> {
    let m = model.num_constraints();
    if m == 0 {
        return Err(Error::Domain("no constraints: nothing to optimize".into()));
    }
    let sigma_sq = match settings.sigma_sq {
        Some(s) => s,
        None => estimate_sigma_sq(model, calibration)?,
    };
    let mut params = schedule(settings.t, sigma_sq, settings.beta)?;
    params.seed = settings.seed;
    let objective = EntropicDual::new(model, params.beta);
    let result = optimizer.optimize(&objective, &DualVector::zeros(m), &params, stream)?;
    Ok((params, result))
}

/// [`copt_dual`] on a classification problem, returning the Gibbs classifier
/// at `λ̂`.
pub fn copt<X>(
    problem: &Problem<X>,
    calibration: &[X],
    stream: &mut dyn SampleStream<X>,
    settings: &CoptSettings,
    optimizer: &dyn BlackBoxOptimizer<X>,
) -> Result<CoptOutput<RandomizedClassifier<X>>> {
    let (params, result) = copt_dual(problem, calibration, stream, settings, optimizer)?;
    let classifier = problem.classifier(result.lambda_hat.clone(), params.beta)?;
    Ok(CoptOutput { classifier, result, params })
}

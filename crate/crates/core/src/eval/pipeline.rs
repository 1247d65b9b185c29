//! End-to-end run: load data, split, estimate, build the constrained problem,
//! optimize the dual, certify and evaluate.
//!
//! Every point is an index into the feature table. Synthetic data carries a
//! finite support with exact posteriors, so certificates are computed over the
//! true `P_X` and checked against the true problem. CSV data has no truth; the
//! certificate is plug-in only and uses the unlabeled pool with uniform
//! weights as its support.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{
    build_churn, build_demographic_parity, build_equalized_odds, build_reject_controlled_error,
    build_reject_controlled_rejection, build_set_valued, JointModel, LabelFn, SensitiveProbModel, SetValuedMode,
    SetValuedProblem, SharedProbModel, SlackParams,
};
use crate::error::{Error, Result};
use crate::estimators::{default_bandwidth, empirical_marginals, KernelSpec, OneVsAll, ProbTable};
use crate::eval::certificate::{certify, certify_model, check_certificate, positive_violation, Certificate, CertificateCheck};
use crate::eval::config::{Algorithm, EstimatorKind, Family, RunConfig, SeedPlan};
use crate::eval::ingest::{ingest_csv, split, CsvSchema, Split};
use crate::eval::metrics::{evaluate, evaluate_sets, sample_policy, EvalReport, LabeledPolicy, SetReport};
use crate::eval::synth::{synth_generate, LabeledDraw, SynthData};
use crate::math::norm_1_to_2;
use crate::optimizers::{copt_dual, write_trace_csv, BlackBoxOptimizer, CoptSettings, OptimizerParams, OptimizerResult, ProjectedSgd, Sgd3};
use crate::oracle::solve_lp_exact;
use crate::problem::{FiniteInstance, Problem, ShuffledPool, WeightedSupport};

/// Features, labeled draws and (for synthetic data) the exact posteriors.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub features: Vec<Vec<f64>>,
    pub draws: Vec<LabeledDraw>,
    pub num_classes: usize,
    /// Zero when the data has no groups.
    pub num_groups: usize,
    /// Group of each feature row, when observed.
    pub observed_groups: Option<Vec<usize>>,
    pub truth: Option<SynthData>,
}

pub fn load_data(cfg: &RunConfig) -> Result<DataBundle> {
    if let Some(spec) = &cfg.data.synthetic {
        let d = synth_generate(spec, cfg.data.samples)?;
        return Ok(DataBundle {
            features: d.features.clone(),
            draws: d.samples.clone(),
            num_classes: d.num_classes(),
            num_groups: d.num_groups(),
            observed_groups: None,
            truth: Some(d),
        });
    }
    let src = cfg.data.csv.as_ref().ok_or_else(|| Error::Domain("no data source".into()))?;
    let schema = CsvSchema { features: src.features.clone(), label: src.label.clone(), group: src.group.clone() };
    let ds = ingest_csv(&src.path, &schema)?;
    if ds.num_classes() < 2 {
        return Err(Error::Domain(format!("label column has {} distinct value(s); need at least two", ds.num_classes())));
    }
    let draws = (0..ds.len())
        .map(|i| LabeledDraw { index: i, label: ds.labels[i], group: ds.groups.as_ref().map_or(0, |g| g[i]) })
        .collect();
    Ok(DataBundle {
        num_classes: ds.num_classes(),
        num_groups: ds.num_groups(),
        observed_groups: ds.groups.clone(),
        features: ds.features,
        draws,
        truth: None,
    })
}

/// Posterior tables over the feature rows.
#[derive(Clone)]
pub struct Posteriors {
    pub class: Arc<ProbTable>,
    pub group: Option<Arc<ProbTable>>,
    pub joint: Option<Arc<ProbTable>>,
    pub marginals_s: Option<Vec<f64>>,
    pub marginals_sy: Option<Vec<f64>>,
    pub marginals_y: Vec<f64>,
}

fn exact_posteriors(d: &SynthData) -> Result<Posteriors> {
    Ok(Posteriors {
        class: Arc::new(d.class_probs()?),
        group: Some(Arc::new(d.group_probs()?)),
        joint: Some(Arc::new(d.joint_probs()?)),
        marginals_s: Some(d.marginals_s()),
        marginals_sy: Some(d.marginals_sy()),
        marginals_y: d.marginals_y(),
    })
}

fn tabulate(model: &OneVsAll, features: &[Vec<f64>], prefix: &str) -> Result<ProbTable> {
    use crate::constraints::ClassProbModel;
    let rows = features.par_iter().map(|x| model.predict(x)).collect::<Result<Vec<_>>>()?;
    ProbTable::new((0..model.num_classes()).map(|c| format!("{prefix}{c}")).collect(), rows)
}

fn fit(cfg: &RunConfig, data: &DataBundle, train: &[LabeledDraw], k: usize, target: impl Fn(&LabeledDraw) -> usize) -> Result<OneVsAll> {
    let est = &cfg.estimator;
    let dim = data.features.first().map_or(1, Vec::len);
    let h = est.bandwidth.unwrap_or_else(|| default_bandwidth(train.len(), est.degree, dim));
    let labels: Vec<usize> = train.iter().map(&target).collect();
    let xs = train.iter().map(|d| data.features[d.index].clone()).collect();
    OneVsAll::fit(&labels, xs, k, est.degree, KernelSpec::new(est.kernel, h)?)
}

fn positive_marginals(m: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    match m.iter().position(|&v| v <= 0.0) {
        Some(i) => Err(Error::Domain(format!("{what} {i} has no train samples"))),
        None => Ok(m),
    }
}

fn estimate_posteriors(cfg: &RunConfig, data: &DataBundle, train: &[LabeledDraw]) -> Result<Posteriors> {
    let family = cfg.problem.family;
    let (k, s) = (data.num_classes, data.num_groups);
    let labels: Vec<usize> = train.iter().map(|d| d.label).collect();
    let marginals_y = empirical_marginals(&labels, k)?;
    let needs_groups = family.needs_groups();
    let (marginals_s, marginals_sy) = if needs_groups {
        let g: Vec<usize> = train.iter().map(|d| d.group).collect();
        let sy: Vec<usize> = train.iter().map(|d| d.group * k + d.label).collect();
        (Some(positive_marginals(empirical_marginals(&g, s)?, "group")?), Some(empirical_marginals(&sy, s * k)?))
    } else {
        (None, None)
    };
    match cfg.estimator.kind {
        EstimatorKind::Oracle => {
            let truth = data.truth.as_ref().ok_or_else(|| Error::Domain("oracle estimator needs synthetic data".into()))?;
            exact_posteriors(truth)
        }
        EstimatorKind::Table => {
            let path = cfg.estimator.table.as_ref().ok_or_else(|| Error::Domain("no probability table given".into()))?;
            let t = ProbTable::read_csv(path)?;
            if t.rows.len() != data.features.len() || t.header.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "probability table is {}×{}, data has {} rows and {k} classes",
                    t.rows.len(),
                    t.header.len(),
                    data.features.len()
                )));
            }
            Ok(Posteriors { class: Arc::new(t), group: None, joint: None, marginals_s, marginals_sy, marginals_y })
        }
        EstimatorKind::LocalPoly => {
            if family == Family::EqualizedOdds {
                let m = fit(cfg, data, train, s * k, |d| d.group * k + d.label)?;
                let joint = tabulate(&m, &data.features, "sy")?;
                let rows = joint.rows.iter().map(|r| (0..k).map(|y| (0..s).map(|g| r[g * k + y]).sum()).collect()).collect();
                let class = ProbTable::new((0..k).map(|y| format!("p{y}")).collect(), rows)?;
                let marginals_sy = marginals_sy.map(|m| positive_marginals(m, "group-label cell")).transpose()?;
                return Ok(Posteriors {
                    class: Arc::new(class),
                    group: None,
                    joint: Some(Arc::new(joint)),
                    marginals_s,
                    marginals_sy,
                    marginals_y: positive_marginals(marginals_y, "class")?,
                });
            }
            let class = tabulate(&fit(cfg, data, train, k, |d| d.label)?, &data.features, "p")?;
            let group = if family == Family::DemographicParity && !cfg.problem.aware {
                Some(Arc::new(tabulate(&fit(cfg, data, train, s, |d| d.group)?, &data.features, "tau")?))
            } else {
                None
            };
            Ok(Posteriors { class: Arc::new(class), group, joint: None, marginals_s, marginals_sy, marginals_y })
        }
    }
}

/// The deployed classifier for churn: argmax of a local-constant fit on the
/// first half of the train split.
fn base_predictions(cfg: &RunConfig, data: &DataBundle, train: &[LabeledDraw]) -> Result<Vec<usize>> {
    let half = &train[..train.len().div_ceil(2)];
    let dim = data.features.first().map_or(1, Vec::len);
    let h = cfg.estimator.bandwidth.unwrap_or_else(|| default_bandwidth(half.len(), 0, dim));
    let labels: Vec<usize> = half.iter().map(|d| d.label).collect();
    let xs = half.iter().map(|d| data.features[d.index].clone()).collect();
    let model = OneVsAll::fit(&labels, xs, data.num_classes, 0, KernelSpec::new(cfg.estimator.kernel, h)?)?;
    let t = tabulate(&model, &data.features, "p")?;
    Ok(t.rows.iter().map(|r| (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b })).collect())
}

pub enum FamilyProblem {
    Classifier(Problem<usize>),
    Sets(SetValuedProblem<usize>),
}

fn broadcast(eps: &[f64], n: usize) -> Vec<f64> {
    if eps.len() == 1 {
        vec![eps[0]; n]
    } else {
        eps.to_vec()
    }
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Domain(format!("missing family parameter `{name}`")))
}

/// Build the chosen family from posterior tables.
pub fn build_family(
    family: Family,
    params: &SlackParams,
    post: &Posteriors,
    k: usize,
    observed_groups: Option<&[usize]>,
    aware: bool,
    base: Option<&Arc<Vec<usize>>>,
) -> Result<FamilyProblem> {
    let probs: SharedProbModel<usize> = post.class.clone();
    let base_fn = || -> Result<LabelFn<usize>> {
        let b = Arc::clone(base.ok_or_else(|| Error::Domain("churn needs a base classifier".into()))?);
        Ok(Arc::new(move |&i: &usize| b.get(i).copied().ok_or_else(|| Error::Domain(format!("no base prediction at {i}")))))
    };
    let p = match family {
        Family::Rejection => build_reject_controlled_rejection(probs, k, need(params.rejection_budget, "rejection_budget")?)?,
        Family::ControlledError => build_reject_controlled_error(probs, k, need(params.error_budget, "error_budget")?)?,
        Family::Churn => build_churn(probs, base_fn()?, k, need(params.churn_budget, "churn_budget")?)?,
        Family::DemographicParity => {
            let marg = post.marginals_s.clone().ok_or_else(|| Error::Domain("no group marginals".into()))?;
            let s = marg.len();
            let sens = if aware {
                let g: Arc<Vec<usize>> = Arc::new(observed_groups.ok_or_else(|| Error::Domain("groups are not observed".into()))?.to_vec());
                SensitiveProbModel::aware(
                    Arc::new(move |&i: &usize| g.get(i).copied().ok_or_else(|| Error::Domain(format!("no group at {i}")))),
                    marg,
                )?
            } else {
                let tau: SharedProbModel<usize> = post.group.clone().ok_or_else(|| Error::Domain("no group posteriors".into()))?;
                SensitiveProbModel::unaware(tau, marg)?
            };
            let eps = params.eps.as_deref().ok_or_else(|| Error::Domain("missing family parameter `eps`".into()))?;
            build_demographic_parity(probs, sens, k, &broadcast(eps, s))?
        }
        Family::EqualizedOdds => {
            let joint = JointModel {
                joint: post.joint.clone().ok_or_else(|| Error::Domain("no joint posteriors".into()))?,
                marginals_sy: post.marginals_sy.clone().ok_or_else(|| Error::Domain("no joint marginals".into()))?,
                marginals_y: post.marginals_y.clone(),
            };
            let eps = params.eps.as_deref().ok_or_else(|| Error::Domain("missing family parameter `eps`".into()))?;
            let n = joint.marginals_sy.len();
            build_equalized_odds(probs, joint, k, &broadcast(eps, n))?
        }
        Family::SetValuedSize => {
            return Ok(FamilyProblem::Sets(build_set_valued(probs, k, SetValuedMode::SizeBudget(need(params.size_budget, "size_budget")?), None)?));
        }
        Family::SetValuedRisk => {
            return Ok(FamilyProblem::Sets(build_set_valued(probs, k, SetValuedMode::RiskBudget(need(params.risk_budget, "risk_budget")?), None)?));
        }
    };
    Ok(FamilyProblem::Classifier(p))
}

/// Everything that depends on the seed but not on the budget.
#[derive(Clone)]
pub struct Prepared {
    pub seed: u64,
    pub split: Split,
    pub estimated: Posteriors,
    pub exact: Option<Posteriors>,
    pub base: Option<Arc<Vec<usize>>>,
}

pub fn prepare(cfg: &RunConfig, data: &DataBundle, seed: u64) -> Result<Prepared> {
    let seeds = SeedPlan::new(seed);
    let sp = split(data.draws.len(), cfg.data.split, seeds.split)?;
    if sp.train.is_empty() || sp.unlabeled.is_empty() {
        return Err(Error::Domain(format!("{} labeled rows are too few to split", data.draws.len())));
    }
    let train: Vec<LabeledDraw> = sp.train.iter().map(|&i| data.draws[i]).collect();
    let estimated = estimate_posteriors(cfg, data, &train)?;
    let exact = data.truth.as_ref().map(exact_posteriors).transpose()?;
    let base = if cfg.problem.family == Family::Churn { Some(Arc::new(base_predictions(cfg, data, &train)?)) } else { None };
    Ok(Prepared { seed, split: sp, estimated, exact, base })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestMetrics {
    Classifier(EvalReport),
    Sets(SetReport),
}

impl TestMetrics {
    /// Test error: misclassification (reject not counted) or miscoverage.
    pub fn risk(&self) -> f64 {
        match self {
            TestMetrics::Classifier(r) => r.risk,
            TestMetrics::Sets(r) => r.miscoverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub family: Family,
    pub seed: u64,
    pub params: SlackParams,
    /// `true_support` or `unlabeled_pool`.
    pub support: String,
    pub support_size: usize,
    /// Objective and constraints of `π̂` under the estimated oracles.
    pub plug_in_objective: f64,
    pub plug_in_constraints: Vec<f64>,
    pub plug_in_violation: f64,
    pub true_objective: Option<f64>,
    pub true_constraints: Option<Vec<f64>>,
    pub true_violation: Option<f64>,
    pub lp_value: Option<f64>,
    pub test: TestMetrics,
    pub sampled_test: Option<TestMetrics>,
}

pub struct RunOutput {
    pub params: OptimizerParams,
    pub result: OptimizerResult,
    pub certificate: Certificate,
    pub check: Option<CertificateCheck>,
    pub report: RunReport,
    /// Column names of `proba`.
    pub proba_header: Vec<String>,
    /// `(point, π̂(·|x))` over the certificate support.
    pub proba: Vec<(usize, Vec<f64>)>,
}

/// Block-wise estimation errors of a set-valued problem. The product action
/// set has `‖L − L̂‖_∞ ≤ Σ_y ‖l_y − l̂_y‖_∞` and `‖C − Ĉ‖_{1→2} ≤ Σ_y ‖C_y − Ĉ_y‖_{1→2}`.
fn set_valued_errors(est: &SetValuedProblem<usize>, truth: &SetValuedProblem<usize>, support: &WeightedSupport<usize>) -> Result<(f64, f64)> {
    let (mut dl, mut dc) = (0.0, 0.0);
    for (x, w) in support.iter() {
        let (mut l, mut c) = (0.0, 0.0);
        for ((le, ce), (lt, ct)) in est.blocks(x)?.iter().zip(truth.blocks(x)?.iter()) {
            l += le.iter().zip(lt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            c += norm_1_to_2(&(ce - ct));
        }
        dl += w * l;
        dc += w * c * c;
    }
    Ok((dl, dc.sqrt()))
}

fn optimizer(cfg: &RunConfig) -> Box<dyn BlackBoxOptimizer<usize>> {
    let every = cfg.optimizer.trace_every;
    match cfg.optimizer.algorithm {
        Algorithm::Sgd3 => Box::new(Sgd3 { trace_every: every }),
        Algorithm::ProjectedSgd => Box::new(ProjectedSgd { trace_every: every }),
    }
}

const CHECK_TOL: f64 = 1e-9;

/// Optimize, certify and evaluate one `(params, seed)` cell.
pub fn run_prepared(cfg: &RunConfig, data: &DataBundle, prep: &Prepared, params: &SlackParams) -> Result<RunOutput> {
    let family = cfg.problem.family;
    let seeds = SeedPlan::new(prep.seed);
    let k = data.num_classes;
    let groups = data.observed_groups.as_deref();
    let est = build_family(family, params, &prep.estimated, k, groups, cfg.problem.aware, prep.base.as_ref())?;
    let truth = match &prep.exact {
        Some(post) => Some(build_family(family, params, post, k, groups, cfg.problem.aware, prep.base.as_ref())?),
        None => None,
    };

    let pool: Vec<usize> = prep.split.unlabeled.iter().map(|&i| data.draws[i].index).collect();
    let t = cfg.optimizer.iterations.unwrap_or(pool.len() * cfg.optimizer.passes);
    let settings = CoptSettings { t, beta: cfg.optimizer.beta, sigma_sq: cfg.optimizer.sigma_sq, seed: seeds.stream };
    let mut stream = ShuffledPool::new(&pool, cfg.optimizer.passes, seeds.stream);
    let opt = optimizer(cfg);

    let (support, support_kind) = match &data.truth {
        Some(d) => (d.support()?, "true_support"),
        None => (WeightedSupport::uniform(pool.clone())?, "unlabeled_pool"),
    };
    let test: Vec<LabeledDraw> = prep.split.test.iter().map(|&i| data.draws[i]).collect();
    let test_idx: Vec<usize> = test.iter().map(|d| d.index).collect();
    let test_labels: Vec<usize> = test.iter().map(|d| d.label).collect();
    let test_groups: Vec<usize> = test.iter().map(|d| d.group).collect();
    let test_base: Option<Vec<usize>> = prep.base.as_ref().map(|b| test_idx.iter().map(|&i| b[i]).collect());

    match (est, truth) {
        (FamilyProblem::Classifier(est), truth) => {
            let truth = truth.map(|t| match t {
                FamilyProblem::Classifier(p) => Ok(p),
                FamilyProblem::Sets(_) => Err(Error::Domain("family mismatch".into())),
            });
            let truth = truth.transpose()?;
            let (params_used, result) = copt_dual(&est, &pool, &mut stream, &settings, opt.as_ref())?;
            let clf = est.classifier(result.lambda_hat.clone(), params_used.beta)?;
            let certificate = certify(&clf, truth.as_ref(), &support, result.alpha_cert)?;

            let proba: Vec<(usize, Vec<f64>)> =
                support.points().iter().map(|&i| clf.predict_proba(&i).map(|p| (i, p))).collect::<Result<_>>()?;
            let plug_in_constraints = clf.constraint_values(&est.constraints, &support)?;
            let plug_in_objective = clf.risk_value(&est.loss, &support)?;

            let (mut true_objective, mut true_constraints, mut lp_value, mut check) = (None, None, None, None);
            if let Some(tp) = &truth {
                let cons = clf.constraint_values(&tp.constraints, &support)?;
                let risk = clf.risk_value(&tp.loss, &support)?;
                let lp = solve_lp_exact(&FiniteInstance::from_problem(tp, &support, None)?)?.lp_value;
                check = Some(check_certificate(&certificate, &cons, risk, Some(lp), CHECK_TOL));
                true_objective = Some(risk);
                true_constraints = Some(cons);
                lp_value = Some(lp);
            }

            let test_proba: Vec<Vec<f64>> = test_idx.iter().map(|i| clf.predict_proba(i)).collect::<Result<_>>()?;
            let grouped = (data.num_groups > 0).then_some((test_groups.as_slice(), data.num_groups));
            let eval = |proba: &[Vec<f64>]| {
                evaluate(&LabeledPolicy {
                    actions: clf.actions(),
                    proba,
                    labels: &test_labels,
                    groups: grouped,
                    base: test_base.as_deref(),
                })
            };
            let report_test = if test_proba.is_empty() { None } else { Some(eval(&test_proba)?) };
            let sampled = match (&report_test, cfg.sampled_metrics) {
                (Some(_), true) => Some(TestMetrics::Classifier(eval(&sample_policy(&test_proba, seeds.sampling)?)?)),
                _ => None,
            };
            let report = RunReport {
                family,
                seed: prep.seed,
                params: params.clone(),
                support: support_kind.into(),
                support_size: support.len(),
                plug_in_objective,
                plug_in_violation: positive_violation(&plug_in_constraints),
                plug_in_constraints,
                true_violation: true_constraints.as_deref().map(positive_violation),
                true_objective,
                true_constraints,
                lp_value,
                test: TestMetrics::Classifier(report_test.ok_or(Error::EmptyBatch)?),
                sampled_test: sampled,
            };
            Ok(RunOutput {
                params: params_used,
                result,
                certificate,
                check,
                report,
                proba_header: clf.actions().actions().iter().map(|a| format!("pi_{a}")).collect(),
                proba,
            })
        }
        (FamilyProblem::Sets(est), truth) => {
            let truth = truth
                .map(|t| match t {
                    FamilyProblem::Sets(p) => Ok(p),
                    FamilyProblem::Classifier(_) => Err(Error::Domain("family mismatch".into())),
                })
                .transpose()?;
            let (params_used, result) = copt_dual(&est, &pool, &mut stream, &settings, opt.as_ref())?;
            let lambda = result.lambda_hat.clone();
            let beta = params_used.beta;
            let deltas = truth.as_ref().map(|t| set_valued_errors(&est, t, &support)).transpose()?;
            let entropy = k as f64 * std::f64::consts::LN_2;
            let certificate = certify_model(&est, &lambda, beta, result.alpha_cert, entropy, &support, deltas)?;
            let policy = |x: &usize| est.inclusion_proba(lambda.as_slice(), x, beta);

            let proba: Vec<(usize, Vec<f64>)> = support.points().iter().map(|&i| policy(&i).map(|p| (i, p))).collect::<Result<_>>()?;
            let (plug_in_objective, plug_in_constraints) = est.evaluate_policy(policy, &support)?;

            let (mut true_objective, mut true_constraints, mut lp_value, mut check) = (None, None, None, None);
            if let Some(tp) = &truth {
                let (obj, cons) = tp.evaluate_policy(policy, &support)?;
                let lp = solve_lp_exact(&tp.to_finite_instance(&support)?)?.lp_value;
                check = Some(check_certificate(&certificate, &cons, obj, Some(lp), CHECK_TOL));
                true_objective = Some(obj);
                true_constraints = Some(cons);
                lp_value = Some(lp);
            }
            let incl: Vec<Vec<f64>> = test_idx.iter().map(policy).collect::<Result<_>>()?;
            if incl.is_empty() {
                return Err(Error::EmptyBatch);
            }
            let test_report = evaluate_sets(&incl, &test_labels, test_base.as_deref())?;
            let sampled = if cfg.sampled_metrics {
                let drawn = sample_sets(&incl, seeds.sampling);
                Some(TestMetrics::Sets(evaluate_sets(&drawn, &test_labels, test_base.as_deref())?))
            } else {
                None
            };
            let report = RunReport {
                family,
                seed: prep.seed,
                params: params.clone(),
                support: support_kind.into(),
                support_size: support.len(),
                plug_in_objective,
                plug_in_violation: positive_violation(&plug_in_constraints),
                plug_in_constraints,
                true_violation: true_constraints.as_deref().map(positive_violation),
                true_objective,
                true_constraints,
                lp_value,
                test: TestMetrics::Sets(test_report),
                sampled_test: sampled,
            };
            Ok(RunOutput {
                params: params_used,
                result,
                certificate,
                check,
                report,
                proba_header: (0..k).map(|y| format!("incl_{y}")).collect(),
                proba,
            })
        }
    }
}

fn sample_sets(incl: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    incl.iter().map(|q| q.iter().map(|&v| if rng.random::<f64>() < v { 1.0 } else { 0.0 }).collect()).collect()
}

/// Full run with the config's own seed and parameters.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let prep = prepare(cfg, &data, cfg.seed)?;
    run_prepared(cfg, &data, &prep, &cfg.problem.params)
}

#[derive(Serialize)]
struct LambdaDoc<'a> {
    lambda: &'a [f64],
    alpha_cert: f64,
    beta: f64,
    params: &'a OptimizerParams,
}

#[derive(Serialize)]
struct CertificateDoc<'a> {
    #[serde(flatten)]
    certificate: &'a Certificate,
    plug_in_only: bool,
    check: &'a Option<CertificateCheck>,
}

pub const ARTIFACTS: [&str; 5] = ["lambda.json", "proba.csv", "certificate.json", "report.json", "trace.csv"];

/// Write the run artifacts into `dir` (created if needed).
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let lambda = LambdaDoc {
        lambda: out.result.lambda_hat.as_slice(),
        alpha_cert: out.result.alpha_cert.get(),
        beta: out.params.beta.get(),
        params: &out.params,
    };
    std::fs::write(dir.join("lambda.json"), serde_json::to_string_pretty(&lambda)? + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("proba.csv"))?;
    let mut header = vec!["point".to_owned()];
    header.extend(out.proba_header.iter().cloned());
    w.write_record(&header)?;
    for (i, p) in &out.proba {
        let mut rec = vec![i.to_string()];
        rec.extend(p.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let cert = CertificateDoc { certificate: &out.certificate, plug_in_only: out.certificate.plug_in_only(), check: &out.check };
    std::fs::write(dir.join("certificate.json"), serde_json::to_string_pretty(&cert)? + "\n")?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)? + "\n")?;
    write_trace_csv(&out.result.trace, dir.join("trace.csv"))?;
    Ok(())
}

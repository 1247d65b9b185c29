//! Versioned run configuration, as read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constraints::SlackParams;
use crate::error::{ConfigIssue, Error, Result};
use crate::estimators::KernelShape;
use crate::eval::ingest::DEFAULT_PROPORTIONS;
use crate::eval::synth::SynthSpec;
use crate::optimizers::BetaMode;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Misclassification risk subject to a rejection-rate budget.
    Rejection,
    /// Rejection rate subject to an error budget.
    ControlledError,
    DemographicParity,
    EqualizedOdds,
    Churn,
    /// Miscoverage subject to an expected set size.
    SetValuedSize,
    /// Expected set size subject to a miscoverage budget.
    SetValuedRisk,
}

impl Family {
    /// The `SlackParams` field a sweep varies.
    pub fn budget_field(self) -> &'static str {
        match self {
            Family::Rejection => "rejection_budget",
            Family::ControlledError => "error_budget",
            Family::DemographicParity | Family::EqualizedOdds => "eps",
            Family::Churn => "churn_budget",
            Family::SetValuedSize => "size_budget",
            Family::SetValuedRisk => "risk_budget",
        }
    }

    pub fn needs_groups(self) -> bool {
        matches!(self, Family::DemographicParity | Family::EqualizedOdds)
    }

    pub fn is_set_valued(self) -> bool {
        matches!(self, Family::SetValuedSize | Family::SetValuedRisk)
    }

    /// `params` with the budget replaced by `v`; every slack entry is set to
    /// `v` for the fairness families.
    pub fn with_budget(self, params: &SlackParams, v: f64) -> SlackParams {
        let mut p = params.clone();
        match self {
            Family::Rejection => p.rejection_budget = Some(v),
            Family::ControlledError => p.error_budget = Some(v),
            Family::DemographicParity | Family::EqualizedOdds => {
                let n = p.eps.as_ref().map_or(1, Vec::len);
                p.eps = Some(vec![v; n]);
            }
            Family::Churn => p.churn_budget = Some(v),
            Family::SetValuedSize => p.size_budget = Some(v),
            Family::SetValuedRisk => p.risk_budget = Some(v),
        }
        p
    }

    fn present(self, params: &SlackParams) -> Vec<&'static str> {
        let mut v = Vec::new();
        if params.eps.is_some() {
            v.push("eps");
        }
        for (name, x) in [
            ("rejection_budget", params.rejection_budget),
            ("error_budget", params.error_budget),
            ("churn_budget", params.churn_budget),
            ("size_budget", params.size_budget),
            ("risk_budget", params.risk_budget),
        ] {
            if x.is_some() {
                v.push(name);
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: Family,
    #[serde(default)]
    pub params: SlackParams,
    /// Demographic parity with the group observed at prediction time.
    #[serde(default)]
    pub aware: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub features: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default)]
    pub synthetic: Option<SynthSpec>,
    /// Labeled draws from the synthetic generator.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Train / unlabeled / test proportions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_samples() -> usize {
    2000
}

fn default_split() -> [f64; 3] {
    DEFAULT_PROPORTIONS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Local polynomial one-vs-all fits on the train split.
    #[default]
    LocalPoly,
    /// The generator's exact posteriors (synthetic data only).
    Oracle,
    /// Class probabilities read from a CSV with one row per data row.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub kernel: KernelShape,
    /// Defaults to `n^{-1/(2ℓ+2+d)}` on the train split.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub table: Option<PathBuf>,
}

fn default_degree() -> usize {
    1
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { kind: EstimatorKind::default(), degree: default_degree(), kernel: KernelShape::default(), bandwidth: None, table: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Sgd3,
    ProjectedSgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Iteration budget `T`; defaults to `passes × |unlabeled|`.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub beta: BetaMode,
    /// Overrides the calibration estimate of `σ²`.
    #[serde(default)]
    pub sigma_sq: Option<f64>,
    /// Passes over the unlabeled pool; more than one reuses samples.
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Trace every this many iterations (0 disables the trace).
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
}

fn default_passes() -> usize {
    1
}

fn default_trace_every() -> usize {
    100
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            beta: BetaMode::default(),
            sigma_sq: None,
            passes: default_passes(),
            algorithm: Algorithm::default(),
            trace_every: default_trace_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub budgets: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// Per-component seeds derived from the top-level seed by fixed offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub split: u64,
    pub stream: u64,
    pub sampling: u64,
}

impl SeedPlan {
    pub fn new(seed: u64) -> Self {
        Self { split: seed, stream: seed.wrapping_add(1), sampling: seed.wrapping_add(2) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Also report metrics of one sampled action per test point.
    #[serde(default)]
    pub sampled_metrics: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn issue(field: impl Into<String>, reason: impl Into<String>) -> ConfigIssue {
    ConfigIssue { field: field.into(), reason: reason.into() }
}

impl RunConfig {
    /// Parse and validate. Syntax errors and unknown keys are reported as a
    /// single issue on the `config` field.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(vec![issue("config", e.to_string().trim_end())]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![issue("config", format!("cannot read {}: {e}", path.display()))]))?;
        let mut cfg = Self::from_toml_str(&s)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Make relative data paths relative to `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        if let Some(c) = &mut self.data.csv {
            if c.path.is_relative() {
                c.path = dir.join(&c.path);
            }
        }
        if let Some(t) = &mut self.estimator.table {
            if t.is_relative() {
                *t = dir.join(&*t);
            }
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Domain(format!("cannot serialize config: {e}")))
    }

    /// Number of classes when known before loading data.
    fn known_classes(&self) -> Option<usize> {
        self.data.synthetic.as_ref().map(|s| s.classes)
    }

    fn check_params(&self, params: &SlackParams, field: &str, out: &mut Vec<ConfigIssue>) {
        let family = self.problem.family;
        let need = family.budget_field();
        let present = family.present(params);
        if !present.contains(&need) {
            out.push(issue(format!("{field}.{need}"), format!("required by family `{}`", family_name(family))));
        }
        for p in present.iter().filter(|&&p| p != need) {
            out.push(issue(format!("{field}.{p}"), format!("not used by family `{}`", family_name(family))));
        }
        if let Err(e) = params.validate(self.known_classes().unwrap_or(usize::MAX)) {
            let name = match &e {
                Error::InvalidParameter { name, .. } => *name,
                _ => need,
            };
            out.push(issue(format!("{field}.{name}"), e.to_string()));
        }
        if let (Some(eps), Some(spec)) = (&params.eps, &self.data.synthetic) {
            let want = match family {
                Family::EqualizedOdds => spec.groups * spec.classes,
                _ => spec.groups,
            };
            if eps.len() != 1 && eps.len() != want {
                out.push(issue(format!("{field}.eps"), format!("expected 1 or {want} entries, got {}", eps.len())));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut out = Vec::new();
        if self.version != CONFIG_VERSION {
            out.push(issue("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        let family = self.problem.family;
        self.check_params(&self.problem.params, "problem.params", &mut out);

        match (&self.data.csv, &self.data.synthetic) {
            (Some(_), Some(_)) => out.push(issue("data", "give exactly one of `csv` and `synthetic`, not both")),
            (None, None) => out.push(issue("data", "one of `csv` and `synthetic` is required")),
            _ => {}
        }
        if let Some(spec) = &self.data.synthetic {
            if let Err(e) = spec.validate() {
                out.push(issue("data.synthetic", e.to_string()));
            }
            if self.data.samples == 0 {
                out.push(issue("data.samples", "must be at least 1"));
            }
            if self.problem.aware {
                out.push(issue("problem.aware", "synthetic groups are latent; group-aware constraints need a CSV group column"));
            }
        }
        if let Some(c) = &self.data.csv {
            if c.features.is_empty() {
                out.push(issue("data.csv.features", "at least one feature column is required"));
            }
            if family.needs_groups() && c.group.is_none() {
                out.push(issue("data.csv.group", format!("required by family `{}`", family_name(family))));
            }
        }
        let sp = self.data.split;
        if sp.iter().any(|p| !(*p >= 0.0)) || (sp.iter().sum::<f64>() - 1.0).abs() > 1e-9 || sp[0] <= 0.0 || sp[1] <= 0.0 {
            out.push(issue("data.split", format!("{sp:?} must be nonnegative, sum to 1, with positive train and unlabeled parts")));
        }
        if self.problem.aware && family != Family::DemographicParity {
            out.push(issue("problem.aware", "only applies to demographic_parity"));
        }

        let est = &self.estimator;
        match est.kind {
            EstimatorKind::Oracle if self.data.synthetic.is_none() => {
                out.push(issue("estimator.kind", "`oracle` needs synthetic data"));
            }
            EstimatorKind::Table => {
                if est.table.is_none() {
                    out.push(issue("estimator.table", "required when kind = \"table\""));
                }
                if family.needs_groups() {
                    out.push(issue("estimator.kind", "a class-probability table cannot supply group posteriors"));
                }
            }
            _ => {}
        }
        if let Some(h) = est.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                out.push(issue("estimator.bandwidth", format!("must be positive, got {h}")));
            }
        }

        let opt = &self.optimizer;
        if opt.passes == 0 {
            out.push(issue("optimizer.passes", "must be at least 1"));
        }
        if let Some(t) = opt.iterations {
            if t < 2 {
                out.push(issue("optimizer.iterations", format!("must be at least 2, got {t}")));
            }
        }
        if let Some(s) = opt.sigma_sq {
            if !(s > 0.0 && s.is_finite()) {
                out.push(issue("optimizer.sigma_sq", format!("must be positive, got {s}")));
            }
        }
        if let BetaMode::Fixed(b) = opt.beta {
            if !(b > 0.0 && b.is_finite()) {
                out.push(issue("optimizer.beta.value", format!("must be positive, got {b}")));
            }
        }

        if let Some(sw) = &self.sweep {
            if sw.budgets.is_empty() {
                out.push(issue("sweep.budgets", "grid is empty"));
            }
            if sw.seeds.is_empty() {
                out.push(issue("sweep.seeds", "no seeds"));
            }
            for (i, &b) in sw.budgets.iter().enumerate() {
                let mut sub = Vec::new();
                self.check_params(&family.with_budget(&self.problem.params, b), "sweep", &mut sub);
                for s in sub {
                    out.push(issue(format!("sweep.budgets[{i}]"), s.reason));
                }
            }
        }

        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(out))
        }
    }
}

fn family_name(f: Family) -> String {
    serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

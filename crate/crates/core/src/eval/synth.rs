//! Synthetic finite-support data with known posteriors.
//!
//! `(S, Y)` has a prior in which each group leans towards one class, and
//! `X | (S, Y) ~ N(m_y + d_s, σ² I)`. The support is a fixed draw of `n_support`
//! points from that mixture with uniform weights; on it the true `P((S,Y)|x)`
//! is the exact Gaussian posterior (multinomial logistic in `x`), so every
//! oracle built from it is known exactly. Labeled samples draw a support index
//! uniformly, then `(S, Y)` from its posterior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::ProbTable;
use crate::problem::WeightedSupport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    /// Number of support points.
    #[serde(default = "default_support")]
    pub support: usize,
    /// Scale of the class means.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Length of the per-group mean shift.
    #[serde(default = "default_group_shift")]
    pub group_shift: f64,
    /// Extra prior weight of the class each group leans towards.
    #[serde(default = "default_group_bias")]
    pub group_bias: f64,
    /// Within-component standard deviation; larger is smoother.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    2
}
fn default_classes() -> usize {
    2
}
fn default_groups() -> usize {
    2
}
fn default_support() -> usize {
    200
}
fn default_separation() -> f64 {
    1.0
}
fn default_group_shift() -> f64 {
    0.5
}
fn default_group_bias() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    1.0
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            classes: default_classes(),
            groups: default_groups(),
            support: default_support(),
            separation: default_separation(),
            group_shift: default_group_shift(),
            group_bias: default_group_bias(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if self.classes < 2 {
            return Err(invalid("classes", format!("need at least two classes, got {}", self.classes)));
        }
        if self.groups == 0 {
            return Err(invalid("groups", "must be at least 1"));
        }
        if self.support == 0 {
            return Err(invalid("support", "must be at least 1"));
        }
        for (name, v) in [("separation", self.separation), ("group_shift", self.group_shift), ("group_bias", self.group_bias)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(invalid("noise", format!("must be positive, got {}", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDraw {
    /// Support index of the feature vector.
    pub index: usize,
    pub label: usize,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub features: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `P((S, Y) = (s, y) | xᵢ)` flattened as `s·K + y`.
    pub joint: Vec<Vec<f64>>,
    pub samples: Vec<LabeledDraw>,
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draw `n` labeled samples on top of a fresh support; `n = 0` gives the
/// support alone.
pub fn synth_generate(spec: &SynthSpec, n: usize) -> Result<SynthData> {
    spec.validate()?;
    let (d, k, s) = (spec.dim, spec.classes, spec.groups);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_means: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d, spec.separation)).collect();
    let shifts: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            let v = normal_vec(&mut rng, d, 1.0);
            let len = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|a| spec.group_shift * a / len).collect()
        })
        .collect();
    let mut prior: Vec<f64> = (0..s * k).map(|i| if i % k == (i / k) % k { 1.0 + spec.group_bias } else { 1.0 }).collect();
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|v| *v /= total);

    let mut features = Vec::with_capacity(spec.support);
    for _ in 0..spec.support {
        let c = pick(&prior, rng.random());
        let (g, y) = (c / k, c % k);
        let x: Vec<f64> = (0..d)
            .map(|j| class_means[y][j] + shifts[g][j] + spec.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        features.push(x);
    }
    let joint: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            let logs: Vec<f64> = (0..s * k)
                .map(|c| {
                    let (g, y) = (c / k, c % k);
                    let sq: f64 = (0..d).map(|j| (x[j] - class_means[y][j] - shifts[g][j]).powi(2)).sum();
                    prior[c].ln() - sq / (2.0 * spec.noise * spec.noise)
                })
                .collect();
            let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let index = rng.random_range(0..spec.support);
        let c = pick(&joint[index], rng.random());
        samples.push(LabeledDraw { index, label: c % k, group: c / k });
    }
    let weights = vec![1.0 / spec.support as f64; spec.support];
    Ok(SynthData { spec: spec.clone(), features, weights, joint, samples })
}

fn pick(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

impl SynthData {
    pub fn num_classes(&self) -> usize {
        self.spec.classes
    }

    pub fn num_groups(&self) -> usize {
        self.spec.groups
    }

    pub fn support(&self) -> Result<WeightedSupport<usize>> {
        WeightedSupport::indexed(self.weights.clone())
    }

    /// `p_y(xᵢ)`.
    pub fn class_probs(&self) -> Result<ProbTable> {
        let (k, s) = (self.spec.classes, self.spec.groups);
        let rows = self.joint.iter().map(|j| (0..k).map(|y| (0..s).map(|g| j[g * k + y]).sum()).collect()).collect();
        ProbTable::new((0..k).map(|y| format!("p{y}")).collect(), rows)
    }

    /// `τ_s(xᵢ)`.
    pub fn group_probs(&self) -> Result<ProbTable> {
        let k = self.spec.classes;
        let rows = self.joint.iter().map(|j| j.chunks(k).map(|c| c.iter().sum()).collect()).collect();
        ProbTable::new((0..self.spec.groups).map(|g| format!("tau{g}")).collect(), rows)
    }

    pub fn joint_probs(&self) -> Result<ProbTable> {
        let k = self.spec.classes;
        let header = (0..self.joint[0].len()).map(|c| format!("s{}y{}", c / k, c % k)).collect();
        ProbTable::new(header, self.joint.clone())
    }

    /// `P((S, Y) = (s, y))` under the support weights.
    pub fn marginals_sy(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.joint[0].len()];
        for (j, w) in self.joint.iter().zip(&self.weights) {
            for (a, b) in m.iter_mut().zip(j) {
                *a += w * b;
            }
        }
        m
    }

    pub fn marginals_y(&self) -> Vec<f64> {
        let k = self.spec.classes;
        let sy = self.marginals_sy();
        (0..k).map(|y| (0..self.spec.groups).map(|g| sy[g * k + y]).sum()).collect()
    }

    pub fn marginals_s(&self) -> Vec<f64> {
        self.marginals_sy().chunks(self.spec.classes).map(|c| c.iter().sum()).collect()
    }
}

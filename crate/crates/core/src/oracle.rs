//! Ground-truth solvers for small finite-support instances: the exact LP by
//! a dense two-phase simplex, the exact entropic dual optimum for `M ≤ 2`,
//! and checks of the structure of optimal policies.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::{lse, softmax_into, Temperature};
use crate::problem::{DualVector, FiniteInstance};

/// Largest tableau (rows × columns) the dense simplex will allocate.
pub const MAX_TABLEAU_ENTRIES: usize = 40_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub lp_value: f64,
    pub lambda_star: DualVector,
    pub pi_star: Vec<Vec<f64>>,
    /// `γⱼ = −E[Cπ*]ⱼ ≥ 0`.
    pub gamma: Vec<f64>,
}

const PIVOT_TOL: f64 = 1e-11;

enum Basic {
    Var(usize),
    Artificial,
}

struct Tableau {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<Basic>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.cols + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64], z: &mut f64) {
        let w = self.cols;
        let p = self.at(pr, pc);
        let inv = 1.0 / p;
        for v in &mut self.a[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.rhs[pr] *= inv;
        let (before, rest) = self.a.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        let rhs_p = self.rhs[pr];
        let update = |row: &mut [f64], rhs: &mut f64| {
            let f = row[pc];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
                *rhs -= f * rhs_p;
            }
        };
        for (r, row) in before.chunks_mut(w).enumerate() {
            update(row, &mut self.rhs[r]);
        }
        for (k, row) in after.chunks_mut(w).enumerate() {
            update(row, &mut self.rhs[pr + 1 + k]);
        }
        let f = cost[pc];
        if f != 0.0 {
            for (v, pv) in cost.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            cost[pc] = 0.0;
            *z -= f * rhs_p;
        }
        self.basis[pr] = Basic::Var(pc);
    }

    /// Minimize with the reduced costs in `cost`; `allowed` masks columns.
    fn optimize(&mut self, cost: &mut [f64], z: &mut f64, allowed: &[bool], tol: f64) -> Result<()> {
        let max_iter = 50 * (self.rows + self.cols) + 1000;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        for _ in 0..max_iter {
            let entering = if bland {
                (0..self.cols).find(|&c| allowed[c] && cost[c] < -tol)
            } else {
                (0..self.cols)
                    .filter(|&c| allowed[c] && cost[c] < -tol)
                    .min_by(|&a, &b| cost[a].total_cmp(&cost[b]))
            };
            let Some(pc) = entering else { return Ok(()) };
            let mut ratio = f64::INFINITY;
            for r in 0..self.rows {
                let v = self.at(r, pc);
                if v > PIVOT_TOL {
                    ratio = ratio.min(self.rhs[r].max(0.0) / v);
                }
            }
            if ratio == f64::INFINITY {
                return Err(Error::Domain("linear program is unbounded".into()));
            }
            // among tied rows, artificials leave first, then the smallest index
            let pr = (0..self.rows)
                .filter(|&r| {
                    let v = self.at(r, pc);
                    v > PIVOT_TOL && self.rhs[r].max(0.0) / v <= ratio + 1e-14
                })
                .min_by_key(|&r| match self.basis[r] {
                    Basic::Artificial => (0, r),
                    Basic::Var(c) => (1, c),
                })
                .expect("a row attains the minimum ratio");
            if ratio <= 1e-14 {
                degenerate_run += 1;
                if degenerate_run > 50 {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc, cost, z);
        }
        Err(Error::Domain("simplex iteration limit reached".into()))
    }
}

/// Exact value of `min{E⟨L, π⟩ : E[Cπ] ≤ 0}` with its multipliers.
pub fn solve_lp_exact(inst: &FiniteInstance) -> Result<OracleSolution> {
    let n = inst.len();
    let a = inst.num_actions();
    let m = inst.num_constraints();
    let nv = n * a;
    let rows = n + m;
    let cols = nv + m;
    if rows.saturating_mul(cols) > MAX_TABLEAU_ENTRIES {
        return Err(Error::Domain(format!("instance too large for the dense oracle ({rows} × {cols} tableau)")));
    }
    let mut t = Tableau { rows, cols, a: vec![0.0; rows * cols], rhs: vec![0.0; rows], basis: Vec::with_capacity(rows) };
    for i in 0..n {
        for k in 0..a {
            t.a[i * cols + i * a + k] = 1.0;
        }
        t.rhs[i] = 1.0;
        t.basis.push(Basic::Artificial);
    }
    for j in 0..m {
        let r = n + j;
        for i in 0..n {
            let w = inst.weights[i];
            for k in 0..a {
                t.a[r * cols + i * a + k] = w * inst.costs[i][(j, k)];
            }
        }
        t.a[r * cols + nv + j] = 1.0;
        t.basis.push(Basic::Var(nv + j));
    }

    // phase 1: minimize the sum of the artificials of the simplex rows
    let mut cost = vec![0.0; cols];
    let mut z = 0.0;
    for r in 0..n {
        for c in 0..cols {
            cost[c] -= t.at(r, c);
        }
        z -= t.rhs[r];
    }
    let allowed = vec![true; cols];
    t.optimize(&mut cost, &mut z, &allowed, 1e-12)?;
    if -z > 1e-9 {
        return Err(Error::Infeasible);
    }
    for r in 0..rows {
        if matches!(t.basis[r], Basic::Artificial) {
            if let Some(c) = (0..cols).find(|&c| t.at(r, c).abs() > 1e-9) {
                t.pivot(r, c, &mut cost, &mut z);
            }
        }
    }

    // phase 2
    let scale = inst.loss.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let mut cost = vec![0.0; cols];
    for i in 0..n {
        for k in 0..a {
            cost[i * a + k] = inst.weights[i] * inst.loss[i][k];
        }
    }
    let mut z = 0.0;
    for r in 0..rows {
        if let Basic::Var(b) = t.basis[r] {
            let cb = cost[b];
            if cb != 0.0 {
                for c in 0..cols {
                    let v = t.at(r, c);
                    cost[c] -= cb * v;
                }
                cost[b] = 0.0;
                z -= cb * t.rhs[r];
            }
        }
    }
    let min_w = inst.weights.iter().copied().filter(|&w| w > 0.0).fold(1.0, f64::min);
    t.optimize(&mut cost, &mut z, &allowed, 1e-13 * scale * min_w.max(1e-6))?;

    let mut x = vec![0.0; cols];
    for r in 0..rows {
        if let Basic::Var(c) = t.basis[r] {
            x[c] = t.rhs[r].max(0.0);
        }
    }
    let pi_star: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = &x[i * a..(i + 1) * a];
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let lp_value = (0..n).map(|i| inst.weights[i] * inst.loss[i].iter().zip(&pi_star[i]).map(|(l, p)| l * p).sum::<f64>()).sum();
    let lambda_star = DualVector::new((0..m).map(|j| cost[nv + j].max(0.0)).collect())?;
    let gamma = (0..m)
        .map(|j| {
            let e: f64 = (0..n)
                .map(|i| inst.weights[i] * (0..a).map(|k| inst.costs[i][(j, k)] * pi_star[i][k]).sum::<f64>())
                .sum();
            (-e).max(0.0)
        })
        .collect();
    Ok(OracleSolution { lp_value, lambda_star, pi_star, gamma })
}

/// `(F(λ), ∇F(λ), ∇²F(λ))` of the entropic dual over the instance support.
pub fn dual_derivatives(inst: &FiniteInstance, lambda: &[f64], beta: Temperature) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let m = inst.num_constraints();
    let a = inst.num_actions();
    if lambda.len() != m {
        return Err(Error::ShapeMismatch(format!("lambda has {} entries, instance has {m} constraints", lambda.len())));
    }
    let b = beta.get();
    let mut f = 0.0;
    let mut g = vec![0.0; m];
    let mut h = vec![vec![0.0; m]; m];
    let mut score = vec![0.0; a];
    let mut sig = Vec::with_capacity(a);
    let mut mean = vec![0.0; m];
    for i in 0..inst.len() {
        let w = inst.weights[i];
        let c = &inst.costs[i];
        for k in 0..a {
            score[k] = -inst.loss[i][k] - (0..m).map(|j| c[(j, k)] * lambda[j]).sum::<f64>();
        }
        f += w * lse(&score, beta)?;
        softmax_into(&score, beta, &mut sig)?;
        for j in 0..m {
            mean[j] = (0..a).map(|k| c[(j, k)] * sig[k]).sum();
            g[j] -= w * mean[j];
        }
        for j in 0..m {
            for l in 0..=j {
                let cov: f64 = (0..a).map(|k| sig[k] * c[(j, k)] * c[(l, k)]).sum::<f64>() - mean[j] * mean[l];
                h[j][l] += w * b * cov;
            }
        }
    }
    for j in 0..m {
        for l in 0..j {
            h[l][j] = h[j][l];
        }
    }
    Ok((f, g, h))
}

/// Grid for [`solve_dual_grid`]: `resolution` points per axis on `[0, λ_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_max: f64,
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lambda_max: 10.0, resolution: 201 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualGridSolution {
    pub lambda: DualVector,
    pub objective: f64,
    /// Norm of the projected gradient at the returned point.
    pub projected_gradient: f64,
    /// The coarse optimum sat on the grid edge and `λ_max` had to be doubled
    /// this many times.
    pub boundary_expansions: usize,
}

fn projected_gradient_norm(lambda: &[f64], g: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(g)
        .map(|(&l, &gj)| if l <= 0.0 { gj.min(0.0) } else { gj })
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Minimize `t ↦ F(λ + t eⱼ)` over `t ∈ [lo, hi]` by bisection on the
/// derivative (monotone by convexity).
fn line_min(inst: &FiniteInstance, lambda: &mut [f64], j: usize, lo: f64, hi: f64, beta: Temperature) -> Result<()> {
    let d = |lam: &mut [f64], v: f64| -> Result<f64> {
        lam[j] = v;
        Ok(dual_derivatives(inst, lam, beta)?.1[j])
    };
    let (mut a, mut b) = (lo, hi);
    if d(lambda, a)? >= 0.0 {
        lambda[j] = a;
        return Ok(());
    }
    while d(lambda, b)? < 0.0 {
        a = b;
        b *= 2.0;
        if b > 1e12 {
            return Err(Error::Domain("dual objective decreases without bound along a coordinate".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if d(lambda, mid)? < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    lambda[j] = 0.5 * (a + b);
    Ok(())
}

/// Exact minimizer of `F` over `λ ≥ 0` for `M ≤ 2`: coarse grid search,
/// then bisection on the derivative (`M = 1`) or coordinate descent with a
/// projected Newton polish (`M = 2`).
pub fn solve_dual_grid(inst: &FiniteInstance, beta: Temperature, grid: GridSpec) -> Result<DualGridSolution> {
    let m = inst.num_constraints();
    if m > 2 {
        return Err(invalid("M", format!("dual grid supports at most two constraints, got {m}")));
    }
    if !(grid.lambda_max > 0.0 && grid.lambda_max.is_finite()) || grid.resolution < 2 {
        return Err(invalid("grid", "lambda_max must be positive and resolution at least 2"));
    }
    if m == 0 {
        let (f, _, _) = dual_derivatives(inst, &[], beta)?;
        return Ok(DualGridSolution { lambda: DualVector::zeros(0), objective: f, projected_gradient: 0.0, boundary_expansions: 0 });
    }
    let mut lmax = grid.lambda_max;
    let mut expansions = 0;
    let (mut best, step) = loop {
        let step = lmax / (grid.resolution - 1) as f64;
        let mut best = (f64::INFINITY, vec![0.0; m], false);
        let axis = |i: usize| i as f64 * step;
        let count = if m == 1 { grid.resolution } else { grid.resolution * grid.resolution };
        for idx in 0..count {
            let (i, k) = (idx % grid.resolution, idx / grid.resolution);
            let lam: Vec<f64> = if m == 1 { vec![axis(i)] } else { vec![axis(i), axis(k)] };
            let (f, _, _) = dual_derivatives(inst, &lam, beta)?;
            if f < best.0 {
                let edge = i + 1 == grid.resolution || (m == 2 && k + 1 == grid.resolution);
                best = (f, lam, edge);
            }
        }
        if best.2 && expansions < 40 {
            lmax *= 2.0;
            expansions += 1;
            continue;
        }
        break (best.1, step);
    };

    if m == 1 {
        let (lo, hi) = ((best[0] - step).max(0.0), best[0] + step);
        line_min(inst, &mut best, 0, lo, hi, beta)?;
    } else {
        let mut f_prev = dual_derivatives(inst, &best, beta)?.0;
        for sweep in 0..500 {
            if sweep % 10 == 0 && newton_polish(inst, &mut best, beta)? {
                break;
            }
            for j in 0..2 {
                let hi = (best[j] + step).max(step);
                line_min(inst, &mut best, j, 0.0, hi, beta)?;
            }
            let f = dual_derivatives(inst, &best, beta)?.0;
            if f_prev - f <= 1e-15 * (1.0 + f.abs()) {
                newton_polish(inst, &mut best, beta)?;
                break;
            }
            f_prev = f;
        }
    }
    let (f, g, _) = dual_derivatives(inst, &best, beta)?;
    Ok(DualGridSolution {
        projected_gradient: projected_gradient_norm(&best, &g),
        lambda: DualVector::new(best)?,
        objective: f,
        boundary_expansions: expansions,
    })
}

/// Projected Newton steps on the free coordinates, accepted only on
/// decrease. Returns whether the projected gradient vanished.
fn newton_polish(inst: &FiniteInstance, lambda: &mut Vec<f64>, beta: Temperature) -> Result<bool> {
    for _ in 0..50 {
        let (f, g, h) = dual_derivatives(inst, lambda, beta)?;
        if projected_gradient_norm(lambda, &g) < 1e-13 {
            return Ok(true);
        }
        let free: Vec<usize> = (0..lambda.len()).filter(|&j| lambda[j] > 0.0 || g[j] < 0.0).collect();
        let step = match free.len() {
            1 => {
                let j = free[0];
                let mut s = vec![0.0; lambda.len()];
                if h[j][j] > 0.0 {
                    s[j] = g[j] / h[j][j];
                }
                s
            }
            2 => {
                let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
                if det.abs() <= 1e-300 {
                    return Ok(false);
                }
                vec![(h[1][1] * g[0] - h[0][1] * g[1]) / det, (h[0][0] * g[1] - h[1][0] * g[0]) / det]
            }
            _ => return Ok(false),
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| (l - t * s).max(0.0)).collect();
            let fc = dual_derivatives(inst, &cand, beta)?.0;
            if fc < f {
                *lambda = cand;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            return Ok(false);
        }
    }
    Ok(false)
}

/// Gibbs policy `π_λ` on every support point of the instance.
pub fn gibbs_policy(inst: &FiniteInstance, lambda: &[f64], beta: Temperature) -> Result<Vec<Vec<f64>>> {
    let m = inst.num_constraints();
    let a = inst.num_actions();
    if lambda.len() != m {
        return Err(Error::ShapeMismatch(format!("lambda has {} entries, instance has {m} constraints", lambda.len())));
    }
    (0..inst.len())
        .map(|i| {
            let score: Vec<f64> =
                (0..a).map(|k| -inst.loss[i][k] - (0..m).map(|j| inst.costs[i][(j, k)] * lambda[j]).sum::<f64>()).collect();
            let mut p = Vec::with_capacity(a);
            softmax_into(&score, beta, &mut p)?;
            Ok(p)
        })
        .collect()
}

/// `(risk, constraint values)` of a tabulated policy.
pub fn policy_values(inst: &FiniteInstance, pi: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if pi.len() != inst.len() || pi.iter().any(|p| p.len() != inst.num_actions()) {
        return Err(Error::ShapeMismatch("policy table does not match the instance".into()));
    }
    let m = inst.num_constraints();
    let mut risk = 0.0;
    let mut cons = vec![0.0; m];
    for (i, p) in pi.iter().enumerate() {
        let w = inst.weights[i];
        risk += w * inst.loss[i].iter().zip(p).map(|(l, q)| l * q).sum::<f64>();
        for (j, cj) in cons.iter_mut().enumerate() {
            *cj += w * p.iter().enumerate().map(|(k, q)| inst.costs[i][(j, k)] * q).sum::<f64>();
        }
    }
    Ok((risk, cons))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCheck {
    pub beta: f64,
    pub lambda: Vec<f64>,
    pub risk: f64,
    pub risk_gap: f64,
    pub gap_bound: f64,
    pub max_violation: f64,
    /// Gibbs mass outside the argmin set of `L + Cᵀλ*`.
    pub off_argmin_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpReport {
    /// Largest per-point mass of `π*` outside `argmin (L + Cᵀλ*)`.
    pub support_violation: f64,
    pub complementary_slackness: f64,
    pub betas: Vec<BetaCheck>,
    pub ok: bool,
}

/// Actions within `tol` of the minimum of `L + Cᵀλ` at point `i`.
pub fn argmin_set(inst: &FiniteInstance, i: usize, lambda: &[f64], tol: f64) -> Vec<usize> {
    let a = inst.num_actions();
    let v: Vec<f64> = (0..a)
        .map(|k| inst.loss[i][k] + (0..lambda.len()).map(|j| inst.costs[i][(j, k)] * lambda[j]).sum::<f64>())
        .collect();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    (0..a).filter(|&k| v[k] <= min + tol).collect()
}

/// Support, complementary slackness, risk-gap and feasibility checks of the
/// optimal structure. Violations are reported, not raised.
pub fn validate_np_structure(inst: &FiniteInstance, sol: &OracleSolution, betas: &[f64]) -> Result<NpReport> {
    let tol = 1e-7;
    let lam = sol.lambda_star.as_slice();
    let mut support_violation: f64 = 0.0;
    for i in 0..inst.len() {
        let set = argmin_set(inst, i, lam, tol);
        let outside: f64 = (0..inst.num_actions()).filter(|k| !set.contains(k)).map(|k| sol.pi_star[i][k]).sum();
        support_violation = support_violation.max(outside);
    }
    let complementary_slackness = sol.gamma.iter().zip(lam).map(|(g, l)| g * l).fold(0.0, f64::max);
    let mut checks = Vec::new();
    let log_a = (inst.num_actions() as f64).ln();
    for &b in betas {
        let beta = Temperature::new(b)?;
        let dual = if inst.num_constraints() <= 2 {
            solve_dual_grid(inst, beta, GridSpec::default())?.lambda.into_inner()
        } else {
            lam.to_vec()
        };
        let pi = gibbs_policy(inst, &dual, beta)?;
        let (risk, cons) = policy_values(inst, &pi)?;
        let mut off: f64 = 0.0;
        for (i, p) in pi.iter().enumerate() {
            let set = argmin_set(inst, i, lam, tol);
            off = off.max((0..inst.num_actions()).filter(|k| !set.contains(k)).map(|k| p[k]).sum());
        }
        checks.push(BetaCheck {
            beta: b,
            lambda: dual,
            risk,
            risk_gap: risk - sol.lp_value,
            gap_bound: log_a / b,
            max_violation: cons.iter().copied().fold(0.0, f64::max),
            off_argmin_mass: off,
        });
    }
    let ok = support_violation <= 1e-6
        && complementary_slackness <= 1e-6
        && checks.iter().all(|c| c.risk_gap <= c.gap_bound + 1e-6 && c.max_violation <= 1e-6);
    Ok(NpReport { support_violation, complementary_slackness, betas: checks, ok })
}

/// Temperatures at which [`oracle_report`] checks the smoothed solution.
pub const DEFAULT_CHECK_BETAS: [f64; 3] = [10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    #[serde(flatten)]
    pub solution: OracleSolution,
    pub validation: NpReport,
}

/// Exact solution of `inst` together with its structural checks.
pub fn oracle_report(inst: &FiniteInstance, betas: &[f64]) -> Result<OracleReport> {
    let solution = solve_lp_exact(inst)?;
    let validation = validate_np_structure(inst, &solution, betas)?;
    Ok(OracleReport { solution, validation })
}

//! Truncated stick-breaking mixture of cube-truncated Gaussians over the
//! potential compliances, with its within-Gibbs updates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::normal::LN_2PI;
use crate::truncmvn::{CubePoints, TruncatedGaussian};
use crate::wishart::{ln_inv_wishart, ln_wishart, sample_inv_wishart, sample_wishart};

const STICK_EPS: f64 = 1e-15;

/// Which likelihood the concentration update targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConcentrationTarget {
    /// `∏_{h<H} Beta(w'_h | 1 + n_h, α + n_{>h})`.
    CountAugmented,
    /// `∏_{h<H} Beta(w'_h | 1, α)`, the stick prior alone.
    StickPrior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub kernel: TruncatedGaussian,
    pub log_c: f64,
}

impl Component {
    pub fn new(kernel: TruncatedGaussian, points: &CubePoints) -> Component {
        let log_c = kernel.log_normalizing_constant(points);
        Component { kernel, log_c }
    }

    pub fn log_density(&self, d: &[f64]) -> f64 {
        self.kernel.log_density(self.log_c, d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha: f64,
    /// 0-based component index per subject.
    pub assignments: Vec<usize>,
    pub components: Vec<Component>,
}

impl MixtureState {
    pub fn h(&self) -> usize {
        self.components.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        component_counts(&self.assignments, self.h())
    }

    pub fn occupied(&self) -> usize {
        self.counts().iter().filter(|&&c| c > 0).count()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let h = self.h();
        let total: f64 = self.weights.iter().sum();
        if self.sticks.len() != h || self.weights.len() != h {
            return Err(Error::InvalidArgument("stick/weight length differs from H".into()));
        }
        if self.sticks[h - 1] != 1.0 {
            return Err(Error::InvalidArgument("last stick must be 1".into()));
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        if self.assignments.iter().any(|&z| z >= h) {
            return Err(Error::InvalidArgument("assignment out of range".into()));
        }
        Ok(())
    }
}

pub fn component_counts(assignments: &[usize], h: usize) -> Vec<usize> {
    let mut counts = vec![0; h];
    for &z in assignments {
        counts[z] += 1;
    }
    counts
}

/// `w_h = w'_h ∏_{k<h} (1 - w'_k)`.
pub fn stick_break(sticks: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0;
    let mut weights = Vec::with_capacity(sticks.len());
    for (h, &s) in sticks.iter().enumerate() {
        if h + 1 == sticks.len() {
            weights.push(remaining);
        } else {
            let w = s * remaining;
            weights.push(w);
            remaining -= w;
        }
    }
    weights
}

/// `w'_h ~ Beta(1 + n_h, α + n_{>h})` for `h < H`, `w'_H = 1`.
pub fn update_sticks<R: Rng + ?Sized>(assignments: &[usize], h: usize, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("concentration must be positive, got {alpha}")));
    }
    let counts = component_counts(assignments, h);
    let mut above: usize = counts.iter().sum();
    let mut sticks = Vec::with_capacity(h);
    for &c in counts.iter().take(h - 1) {
        above -= c;
        let beta = Beta::new(1.0 + c as f64, alpha + above as f64).expect("positive Beta parameters");
        sticks.push(beta.sample(rng).clamp(STICK_EPS, 1.0 - STICK_EPS));
    }
    sticks.push(1.0);
    Ok(sticks)
}

/// Per-subject categorical draw, `Pr(Z_i = h) ∝ w_h c_h N(D_i | η_h, Σ_h)`,
/// computed in log space and sampled with the Gumbel-max trick.
pub fn update_assignments<R: Rng + ?Sized>(rows: &[&[f64]], state: &MixtureState, rng: &mut R) -> Result<Vec<usize>> {
    let prior: Vec<f64> = state
        .weights
        .iter()
        .zip(&state.components)
        .map(|(w, c)| if *w > 0.0 { w.ln() + c.log_c } else { f64::NEG_INFINITY })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for (i, d) in rows.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for (h, c) in state.components.iter().enumerate() {
            if prior[h] == f64::NEG_INFINITY {
                continue;
            }
            let u: f64 = rng.random();
            let gumbel = -(-(u.max(f64::MIN_POSITIVE)).ln()).ln();
            let score = prior[h] + c.kernel.log_gaussian(d) + gumbel;
            if score > best {
                best = score;
                arg = h;
            }
        }
        if arg == usize::MAX {
            return Err(Error::ZeroDensity(format!("row {i} has zero density under every component")));
        }
        out.push(arg);
    }
    Ok(out)
}

/// Log probabilities of the assignment categorical for one row, normalized.
pub fn assignment_log_probs(d: &[f64], state: &MixtureState) -> Vec<f64> {
    let lp: Vec<f64> = state
        .weights
        .iter()
        .zip(&state.components)
        .map(|(w, c)| w.ln() + c.log_c + c.kernel.log_gaussian(d))
        .collect();
    let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + lp.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    lp.into_iter().map(|v| v - lse).collect()
}

/// Mixture-assigned log likelihood `n ln c + Σ ln N(D_i | η, Σ)`.
fn component_log_target(kernel: &TruncatedGaussian, log_c: f64, rows: &[&[f64]]) -> f64 {
    rows.len() as f64 * log_c + rows.iter().map(|d| kernel.log_gaussian(d)).sum::<f64>()
}

fn row_mean(rows: &[&[f64]], m: usize) -> DVector<f64> {
    let mut bar = DVector::zeros(m);
    for d in rows {
        for j in 0..m {
            bar[j] += d[j];
        }
    }
    bar / rows.len() as f64
}

/// `ln N(x | centre, Σ / n)` using the kernel's Cholesky factor of Σ.
fn ln_mean_proposal(x: &DVector<f64>, centre: &DVector<f64>, kernel: &TruncatedGaussian, n: f64) -> f64 {
    let m = x.len();
    let diff = x - centre;
    let z = kernel
        .chol()
        .solve_lower_triangular(&diff)
        .expect("triangular factor is invertible");
    -0.5 * (m as f64 * LN_2PI + kernel.log_det() - m as f64 * n.ln() + n * z.norm_squared())
}

/// Log MH ratio of moving a component mean from `current` to `proposal`
/// under the independence proposal `N(D̄_h, Σ_h / n_h)` and a flat prior.
pub fn mean_log_ratio(current: &Component, proposal: &Component, rows: &[&[f64]]) -> f64 {
    let m = current.kernel.dim();
    let n = rows.len() as f64;
    let bar = row_mean(rows, m);
    let tp = component_log_target(&proposal.kernel, proposal.log_c, rows);
    let tc = component_log_target(&current.kernel, current.log_c, rows);
    let qp = ln_mean_proposal(proposal.kernel.mean(), &bar, &current.kernel, n);
    let qc = ln_mean_proposal(current.kernel.mean(), &bar, &current.kernel, n);
    tp - tc + qc - qp
}

/// One MH step on `η_h`. `rows` must be non-empty.
pub fn update_component_mean<R: Rng + ?Sized>(
    current: &Component,
    rows: &[&[f64]],
    points: &CubePoints,
    rng: &mut R,
) -> Result<(Component, bool)> {
    assert!(!rows.is_empty(), "mean update needs assigned rows");
    let m = current.kernel.dim();
    let n = rows.len() as f64;
    let bar = row_mean(rows, m);
    let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let eta = bar + current.kernel.chol() * z / n.sqrt();
    let kernel = TruncatedGaussian::new(eta, current.kernel.cov().clone())?;
    let proposal = Component::new(kernel, points);
    let log_r = mean_log_ratio(current, &proposal, rows);
    let u: f64 = rng.random();
    if u.ln() < log_r {
        Ok((proposal, true))
    } else {
        Ok((current.clone(), false))
    }
}

/// Log MH ratio for moving `Σ_h` under prior `IW(m, I_m)` and the
/// random-walk proposal `Wishart(df, Σ_current / df)`.
pub fn cov_log_ratio(current: &Component, proposal: &Component, rows: &[&[f64]], proposal_df: f64) -> Option<f64> {
    let m = current.kernel.dim();
    let eye = DMatrix::identity(m, m);
    let sc = current.kernel.cov();
    let sp = proposal.kernel.cov();
    let tp = ln_inv_wishart(sp, m as f64, &eye)? + component_log_target(&proposal.kernel, proposal.log_c, rows);
    let tc = ln_inv_wishart(sc, m as f64, &eye)? + component_log_target(&current.kernel, current.log_c, rows);
    let q_back = ln_wishart(sc, proposal_df, &(sp / proposal_df))?;
    let q_fwd = ln_wishart(sp, proposal_df, &(sc / proposal_df))?;
    Some(tp - tc + q_back - q_fwd)
}

/// One MH step on `Σ_h`. Non-PD proposals are rejected.
pub fn update_component_cov<R: Rng + ?Sized>(
    current: &Component,
    rows: &[&[f64]],
    points: &CubePoints,
    proposal_df: f64,
    rng: &mut R,
) -> Result<(Component, bool)> {
    let scale = current.kernel.cov() / proposal_df;
    let draw = match sample_wishart(proposal_df, &scale, rng) {
        Ok(s) => s,
        Err(_) => return Ok((current.clone(), false)),
    };
    let kernel = match TruncatedGaussian::new(current.kernel.mean().clone(), draw) {
        Ok(k) => k,
        Err(_) => return Ok((current.clone(), false)),
    };
    let proposal = Component::new(kernel, points);
    let u: f64 = rng.random();
    match cov_log_ratio(current, &proposal, rows, proposal_df) {
        Some(log_r) if u.ln() < log_r => Ok((proposal, true)),
        _ => Ok((current.clone(), false)),
    }
}

/// Fresh component from the base measure: `η` uniform on the cube,
/// `Σ ~ IW(m, I_m)`.
pub fn draw_from_base<R: Rng + ?Sized>(m: usize, points: &CubePoints, rng: &mut R) -> Result<Component> {
    let eta = DVector::from_iterator(m, (0..m).map(|_| rng.random::<f64>()));
    let sigma = sample_inv_wishart(m as f64, &DMatrix::identity(m, m), rng)?;
    Ok(Component::new(TruncatedGaussian::new(eta, sigma)?, points))
}

fn concentration_log_lik(sticks: &[f64], counts: &[usize], alpha: f64, target: ConcentrationTarget) -> f64 {
    let h = sticks.len();
    let mut above: usize = counts.iter().sum();
    let mut total = 0.0;
    for k in 0..h - 1 {
        above -= counts[k];
        let (a, b) = match target {
            ConcentrationTarget::CountAugmented => (1.0 + counts[k] as f64, alpha + above as f64),
            ConcentrationTarget::StickPrior => (1.0, alpha),
        };
        let w = sticks[k];
        total += (a - 1.0) * w.ln() + (b - 1.0) * (1.0 - w).ln() - ln_beta(a, b);
    }
    total
}

/// Log acceptance ratio for the concentration under a `Gamma(1,1)` prior and
/// a `Gamma(1,1)` independence proposal, where prior and proposal cancel.
pub fn concentration_log_ratio(
    sticks: &[f64],
    assignments: &[usize],
    current: f64,
    proposal: f64,
    target: ConcentrationTarget,
) -> f64 {
    let counts = component_counts(assignments, sticks.len());
    concentration_log_lik(sticks, &counts, proposal, target) - concentration_log_lik(sticks, &counts, current, target)
}

/// Un-normalized log posterior of `α` (Gamma(1,1) prior included).
pub fn concentration_log_posterior(sticks: &[f64], assignments: &[usize], alpha: f64, target: ConcentrationTarget) -> f64 {
    let counts = component_counts(assignments, sticks.len());
    concentration_log_lik(sticks, &counts, alpha, target) - alpha
}

pub fn update_concentration<R: Rng + ?Sized>(
    sticks: &[f64],
    assignments: &[usize],
    current: f64,
    target: ConcentrationTarget,
    rng: &mut R,
) -> (f64, bool) {
    let proposal: f64 = Gamma::new(1.0_f64, 1.0).expect("unit gamma").sample(rng).max(1e-12);
    let log_r = concentration_log_ratio(sticks, assignments, current, proposal, target);
    let u: f64 = rng.random();
    if u.ln() < log_r {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// `Σ_h w_h c_h N(d | η_h, Σ_h) 1[d ∈ cube]`.
pub fn mixture_density(d: &[f64], weights: &[f64], components: &[Component]) -> f64 {
    if d.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return 0.0;
    }
    weights
        .iter()
        .zip(components)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| w * c.log_density(d).exp())
        .sum()
}

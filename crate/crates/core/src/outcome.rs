//! Outcome regressions of potential outcomes on potential compliances with
//! equality-constrained coefficients, and the stage-1 logistic response model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{Arm, SlotId, SmartDesign};
use crate::error::{Error, Result};
use crate::normal::{expit, log_expit};

/// Maps every (sequence, term) slot to a free parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeLayout {
    /// `index[k][t]` for 0-based sequence `k`.
    pub index: Vec<Vec<usize>>,
    pub n_params: usize,
}

impl OutcomeLayout {
    pub fn new(design: &SmartDesign) -> OutcomeLayout {
        let p = design.partition();
        OutcomeLayout { index: p.class, n_params: p.n_classes }
    }

    pub fn expand(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        self.index.iter().map(|row| row.iter().map(|&g| theta[g]).collect()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeParams {
    /// `beta[k]` follows `design.sequences[k].terms`.
    pub beta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
}

/// Linear predictor of sequence `k` (1-based) at compliance vector `d`.
pub fn predict_mean(design: &SmartDesign, beta: &[Vec<f64>], k: usize, d: &[f64]) -> f64 {
    let seq = design.sequence(k);
    seq.terms.iter().zip(&beta[k - 1]).map(|(t, b)| b * t.value(d)).sum()
}

/// Like [`predict_mean`] but takes a compliance vector with gaps and fails if a
/// coordinate needed by the sequence is absent.
pub fn predict_mean_partial(design: &SmartDesign, beta: &[Vec<f64>], k: usize, d: &[Option<f64>]) -> Result<f64> {
    let seq = design.sequence(k);
    for t in &seq.terms {
        for j in t.coordinates() {
            if d.get(j).copied().flatten().is_none() {
                return Err(Error::InvalidArgument(format!(
                    "sequence {k} needs coordinate {}",
                    design.coordinates[j].name
                )));
            }
        }
    }
    let full: Vec<f64> = d.iter().map(|v| v.unwrap_or(0.0)).collect();
    Ok(predict_mean(design, beta, k, &full))
}

/// Per-observation inputs to the regression block.
pub struct RegressionData<'a> {
    /// 1-based sequence of each row.
    pub sequence: &'a [usize],
    /// Row-major complete compliance matrix, `m` values per row.
    pub compliance: &'a [f64],
    pub y: &'a [f64],
    pub m: usize,
}

/// Precision and linear term of the Gaussian conditional of the free
/// coefficients given the variances.
pub fn pooled_normal_equations(
    design: &SmartDesign,
    layout: &OutcomeLayout,
    data: &RegressionData<'_>,
    sigma2: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = layout.n_params;
    let mut prec = DMatrix::zeros(p, p);
    let mut lin = DVector::zeros(p);
    let mut x = Vec::with_capacity(8);
    for (i, &k) in data.sequence.iter().enumerate() {
        let seq = &design.sequences[k - 1];
        let d = &data.compliance[i * data.m..(i + 1) * data.m];
        x.clear();
        x.extend(seq.terms.iter().map(|t| t.value(d)));
        let g = &layout.index[k - 1];
        let w = 1.0 / sigma2[k - 1];
        for a in 0..x.len() {
            lin[g[a]] += w * x[a] * data.y[i];
            for b in 0..x.len() {
                prec[(g[a], g[b])] += w * x[a] * x[b];
            }
        }
    }
    (prec, lin)
}

fn rank_deficient(design: &SmartDesign, layout: &OutcomeLayout, prec: &DMatrix<f64>) -> Error {
    let worst = (0..layout.n_params)
        .min_by(|&a, &b| prec[(a, a)].total_cmp(&prec[(b, b)]))
        .unwrap_or(0);
    for (k, row) in layout.index.iter().enumerate() {
        if let Some(t) = row.iter().position(|&g| g == worst) {
            let slot = SlotId { sequence: k + 1, term: design.sequences[k].terms[t] };
            return Error::RankDeficient { sequence: k + 1, slot: design.slot_label(&slot) };
        }
    }
    Error::RankDeficient { sequence: 0, slot: String::new() }
}

fn factor(design: &SmartDesign, layout: &OutcomeLayout, prec: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = prec.clone().cholesky().ok_or_else(|| rank_deficient(design, layout, prec))?;
    // Collinear columns can leave a rounding-sized positive pivot.
    let l = chol.l_dirty();
    if (0..layout.n_params).any(|i| l[(i, i)] * l[(i, i)] <= 1e-10 * prec[(i, i)]) {
        return Err(rank_deficient(design, layout, prec));
    }
    Ok(chol)
}

/// Posterior mean of the free coefficients given the variances.
pub fn coefficient_mean(
    design: &SmartDesign,
    layout: &OutcomeLayout,
    data: &RegressionData<'_>,
    sigma2: &[f64],
) -> Result<Vec<f64>> {
    let (prec, lin) = pooled_normal_equations(design, layout, data, sigma2);
    let chol = factor(design, layout, &prec)?;
    Ok(chol.solve(&lin).iter().copied().collect())
}

/// Draw of the free coefficients `θ ~ N(P⁻¹b, P⁻¹)` given the variances.
pub fn draw_coefficients<R: Rng + ?Sized>(
    design: &SmartDesign,
    layout: &OutcomeLayout,
    data: &RegressionData<'_>,
    sigma2: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (prec, lin) = pooled_normal_equations(design, layout, data, sigma2);
    let chol = factor(design, layout, &prec)?;
    let mean = chol.solve(&lin);
    let z = DVector::from_iterator(layout.n_params, (0..layout.n_params).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let dev = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor is invertible");
    Ok((mean + dev).iter().copied().collect())
}

/// Per-sequence residual sums of squares and row counts.
pub fn residual_sums(design: &SmartDesign, beta: &[Vec<f64>], data: &RegressionData<'_>) -> (Vec<f64>, Vec<usize>) {
    let k = design.k();
    let mut rss = vec![0.0; k];
    let mut n = vec![0usize; k];
    for (i, &s) in data.sequence.iter().enumerate() {
        let d = &data.compliance[i * data.m..(i + 1) * data.m];
        let r = data.y[i] - predict_mean(design, beta, s, d);
        rss[s - 1] += r * r;
        n[s - 1] += 1;
    }
    (rss, n)
}

/// `σ²_k | β ~ RSS_k / χ²_{n_k}`: the exact conditional under the flat
/// `p(β, σ²) ∝ ∏ σ_k⁻²` prior.
pub fn draw_variances<R: Rng + ?Sized>(rss: &[f64], n: &[usize], rng: &mut R) -> Vec<f64> {
    rss.iter()
        .zip(n)
        .map(|(&r, &nk)| {
            let chi: f64 = ChiSquared::new(nk as f64).expect("positive df").sample(rng);
            (r / chi).max(1e-300)
        })
        .collect()
}

/// One Gibbs pass over the regression block: coefficients given variances,
/// then variances given coefficients.
pub fn draw_outcome_params<R: Rng + ?Sized>(
    design: &SmartDesign,
    layout: &OutcomeLayout,
    data: &RegressionData<'_>,
    sigma2: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, OutcomeParams)> {
    let theta = draw_coefficients(design, layout, data, sigma2, rng)?;
    let beta = layout.expand(&theta);
    let (rss, n) = residual_sums(design, &beta, data);
    let sigma2 = draw_variances(&rss, &n, rng);
    Ok((theta, OutcomeParams { beta, sigma2 }))
}

/// Which stage-1 response model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResponseVariant {
    /// One model with features `(1, D_{1,+}, D_{1,-}, a1)`.
    #[default]
    A4,
    /// Separate per-arm models, each using only its own stage-1 compliance:
    /// features `(1[+], 1[+] D_{1,+}, 1[-], 1[-] D_{1,-})`.
    A5,
}

pub const RESPONSE_DIM: usize = 4;

pub fn response_features(variant: ResponseVariant, design: &SmartDesign, a1: Arm, d: &[f64]) -> [f64; RESPONSE_DIM] {
    let plus = design.stage1_coordinate(Arm::Plus).map_or(0.0, |j| d[j]);
    let minus = design.stage1_coordinate(Arm::Minus).map_or(0.0, |j| d[j]);
    match variant {
        ResponseVariant::A4 => [1.0, plus, minus, a1.value()],
        ResponseVariant::A5 => match a1 {
            Arm::Plus => [1.0, plus, 0.0, 0.0],
            Arm::Minus => [0.0, 0.0, 1.0, minus],
        },
    }
}

/// `λ = expit(x'γ)`, the probability of response.
pub fn response_prob(variant: ResponseVariant, design: &SmartDesign, gamma: &[f64], a1: Arm, d: &[f64]) -> f64 {
    let x = response_features(variant, design, a1, d);
    expit(x.iter().zip(gamma).map(|(a, b)| a * b).sum())
}

/// Bernoulli-logit log likelihood of `s` given feature rows `x` (row-major, `p` per row).
pub fn logistic_log_lik(x: &[f64], s: &[bool], p: usize, gamma: &[f64]) -> f64 {
    s.iter()
        .enumerate()
        .map(|(i, &si)| {
            let eta: f64 = x[i * p..(i + 1) * p].iter().zip(gamma).map(|(a, b)| a * b).sum();
            if si {
                log_expit(eta)
            } else {
                log_expit(-eta)
            }
        })
        .sum()
}

fn fisher_information(x: &[f64], p: usize, gamma: &[f64]) -> DMatrix<f64> {
    let n = x.len() / p;
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        let mu = expit(row.iter().zip(gamma).map(|(a, b)| a * b).sum());
        let w = mu * (1.0 - mu);
        for a in 0..p {
            for b in 0..p {
                info[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    info
}

/// Newton–Raphson maximum-likelihood fit with step halving. Returns the
/// estimate and whether it diverged (a sign of separation).
pub fn logistic_mle(x: &[f64], s: &[bool], p: usize) -> (Vec<f64>, bool) {
    let mut gamma = vec![0.0; p];
    let mut ll = logistic_log_lik(x, s, p, &gamma);
    let n = s.len();
    for _ in 0..100 {
        let mut score = DVector::zeros(p);
        for i in 0..n {
            let row = &x[i * p..(i + 1) * p];
            let mu = expit(row.iter().zip(&gamma).map(|(a, b)| a * b).sum());
            let r = s[i] as u8 as f64 - mu;
            for a in 0..p {
                score[a] += r * row[a];
            }
        }
        let mut info = fisher_information(x, p, &gamma);
        for a in 0..p {
            info[(a, a)] += 1e-8;
        }
        let Some(chol) = info.cholesky() else { break };
        let step = chol.solve(&score);
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-6 {
            let cand: Vec<f64> = gamma.iter().zip(step.iter()).map(|(g, d)| g + t * d).collect();
            let lc = logistic_log_lik(x, s, p, &cand);
            if lc >= ll {
                improved = lc - ll > 1e-12;
                gamma = cand;
                ll = lc;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let diverged = gamma.iter().any(|g| !g.is_finite() || g.abs() > 30.0);
    (gamma, diverged)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// Length of the initial run.
    pub initial_draws: usize,
    /// Thinning of the initial run.
    pub initial_thin: usize,
    /// Metropolis steps per outer Gibbs iteration.
    pub refresh_steps: usize,
    pub target_acceptance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { initial_draws: 10_000, initial_thin: 10, refresh_steps: 10, target_acceptance: 0.3 }
    }
}

/// Random-walk Metropolis on logistic coefficients under a flat prior. The
/// proposal covariance is the inverse Fisher information at the MLE, scaled
/// by `2.38² / p` times an adaptive factor.
#[derive(Debug, Clone)]
pub struct LogisticSampler {
    p: usize,
    chol: DMatrix<f64>,
    log_scale: f64,
    adapt_steps: u64,
    target: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub separation: bool,
}

impl LogisticSampler {
    /// Builds the sampler from data and returns it with its starting point.
    pub fn new(x: &[f64], s: &[bool], p: usize, target: f64) -> (LogisticSampler, Vec<f64>) {
        let (mle, separation) = logistic_mle(x, s, p);
        let start = if separation { vec![0.0; p] } else { mle };
        let mut info = fisher_information(x, p, &start);
        let ridge = 1e-6 * (0..p).map(|a| info[(a, a)]).fold(0.0, f64::max).max(1e-6);
        for a in 0..p {
            info[(a, a)] += ridge;
        }
        let cov = info
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::identity(p, p));
        let cov = cov * (2.38f64.powi(2) / p as f64);
        let chol = cov
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| DMatrix::identity(p, p) * 0.1);
        let sampler = LogisticSampler {
            p,
            chol,
            log_scale: 0.0,
            adapt_steps: 0,
            target,
            accepted: 0,
            proposed: 0,
            separation,
        };
        (sampler, start)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Runs `steps` Metropolis steps from `gamma` in place. With `adapt`, the
    /// proposal scale follows a Robbins–Monro recursion toward the target rate.
    pub fn run<R: Rng + ?Sized>(&mut self, x: &[f64], s: &[bool], gamma: &mut [f64], steps: usize, adapt: bool, rng: &mut R) {
        let p = self.p;
        let mut ll = logistic_log_lik(x, s, p, gamma);
        let mut prop = vec![0.0; p];
        for _ in 0..steps {
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let scale = self.log_scale.exp();
            for (a, pa) in prop.iter_mut().enumerate() {
                let shift: f64 = (0..=a).map(|b| self.chol[(a, b)] * z[b]).sum();
                *pa = gamma[a] + scale * shift;
            }
            let lp = logistic_log_lik(x, s, p, &prop);
            let u: f64 = rng.random();
            let acc = u.ln() < lp - ll;
            if acc {
                gamma.copy_from_slice(&prop);
                ll = lp;
                self.accepted += 1;
            }
            self.proposed += 1;
            if adapt {
                self.adapt_steps += 1;
                let rate = (self.adapt_steps as f64).powf(-0.6);
                self.log_scale += rate * ((acc as u8 as f64) - self.target);
            }
        }
    }
}

/// Initial logistic run: `initial_draws` steps with adaptation, thinned; the
/// last kept draw is returned.
pub fn initial_response_draw<R: Rng + ?Sized>(
    x: &[f64],
    s: &[bool],
    p: usize,
    config: &LogisticConfig,
    rng: &mut R,
) -> (LogisticSampler, Vec<f64>) {
    let (mut sampler, mut gamma) = LogisticSampler::new(x, s, p, config.target_acceptance);
    let thin = config.initial_thin.max(1);
    let kept = config.initial_draws / thin;
    for _ in 0..kept {
        sampler.run(x, s, &mut gamma, thin, true, rng);
    }
    (sampler, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_ties_slots() {
        let d = SmartDesign::engage(false);
        let layout = OutcomeLayout::new(&d);
        assert_eq!(layout.n_params, 11);
        assert_eq!(layout.index[3][0], layout.index[0][0]);
        assert_eq!(layout.index[3][1], layout.index[0][1]);
        assert_eq!(layout.index[2][2], layout.index[1][2]);
        assert_ne!(layout.index[2][1], layout.index[1][1]);
    }

    #[test]
    fn predict_mean_examples() {
        let d = SmartDesign::engage(false);
        let beta = vec![vec![0.7, 0.6], vec![0.2, 0.7, 0.9], vec![0.2, 0.6, 0.9], vec![0.7, 0.6, 0.6], vec![0.3, 0.6, 0.7], vec![0.3, 0.6, 0.7]];
        assert_eq!(predict_mean(&d, &beta, 1, &[0.0, 0.3, 0.3]), 0.7);
        assert!((predict_mean(&d, &beta, 1, &[1.0, 0.3, 0.3]) - 1.3).abs() < 1e-15);
        let di = SmartDesign::engage(true);
        let mut bi = beta.clone();
        bi[1].push(2.0);
        bi[2].push(2.0);
        bi[4].push(1.5);
        bi[5].push(1.5);
        assert!((predict_mean(&di, &bi, 2, &[1.0, 0.0, 1.0]) - 3.8).abs() < 1e-12);
        assert!(predict_mean_partial(&d, &beta, 2, &[Some(0.5), None, None]).is_err());
        assert_eq!(predict_mean_partial(&d, &beta, 1, &[Some(0.0), None, None]).unwrap(), 0.7);
    }

    #[test]
    fn insufficient_data_is_rank_deficient() {
        let d = SmartDesign::engage(false);
        let layout = OutcomeLayout::new(&d);
        let seqs = vec![1, 1, 2];
        let comp = vec![0.2; 9];
        let y = vec![1.0, 1.0, 1.0];
        let data = RegressionData { sequence: &seqs, compliance: &comp, y: &y, m: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            draw_coefficients(&d, &layout, &data, &[1.0; 6], &mut rng),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn mle_recovers_simple_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4000;
        let mut x = Vec::new();
        let mut s = Vec::new();
        for _ in 0..n {
            let v: f64 = rng.random();
            x.extend([1.0, v]);
            s.push(rng.random::<f64>() < expit(-1.0 + 2.0 * v));
        }
        let (g, sep) = logistic_mle(&x, &s, 2);
        assert!(!sep);
        assert!((g[0] + 1.0).abs() < 0.2 && (g[1] - 2.0).abs() < 0.35, "{g:?}");
    }

    #[test]
    fn separated_data_is_flagged() {
        let x = vec![1.0, 0.1, 1.0, 0.2, 1.0, 0.8, 1.0, 0.9];
        let s = vec![false, false, true, true];
        assert!(logistic_mle(&x, &s, 2).1);
    }

    #[test]
    fn response_probabilities() {
        let d = SmartDesign::engage(false);
        let g = [-1.0, 1.0, 0.0, 0.0];
        assert_eq!(response_prob(ResponseVariant::A4, &d, &g, Arm::Plus, &[1.0, 0.2, 0.3]), 0.5);
        let g2 = [-1.5, 0.0, 1.0, 0.0];
        let l = response_prob(ResponseVariant::A4, &d, &g2, Arm::Minus, &[0.0, 1.0, 0.0]);
        assert!((l - 0.377_540_668_798_145_4).abs() < 1e-12);
        assert_eq!(response_prob(ResponseVariant::A4, &d, &[0.0; 4], Arm::Minus, &[0.3, 0.3, 0.3]), 0.5);
        assert_eq!(response_prob(ResponseVariant::A4, &d, &[800.0, 0.0, 0.0, 0.0], Arm::Plus, &[0.3; 3]), 1.0);
        // A5 ignores the opposite-arm compliance.
        let a5 = [-1.0, 1.0, -1.5, 1.0];
        let p1 = response_prob(ResponseVariant::A5, &d, &a5, Arm::Plus, &[0.6, 0.1, 0.0]);
        let p2 = response_prob(ResponseVariant::A5, &d, &a5, Arm::Plus, &[0.6, 0.9, 0.0]);
        assert_eq!(p1, p2);
        assert!((p1 - expit(-0.4)).abs() < 1e-15);
    }
}

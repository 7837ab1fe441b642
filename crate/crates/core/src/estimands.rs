//! Posterior estimands: principal causal effects per embedded regime and
//! compliance class, multiple comparisons with the best, WAIC, and an
//! empirical intention-to-treat summary.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::design::SmartDesign;
use crate::error::{Error, Result};
use crate::gibbs::{mean_sd, PosteriorDraws};
use crate::normal::log_pdf;
use crate::outcome::{predict_mean, response_prob, ResponseVariant};

/// Whether larger or smaller outcomes are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

/// `θ_R λ + θ_NR (1 - λ)`.
pub fn pce_combine(theta_r: f64, theta_nr: f64, lambda: f64) -> f64 {
    theta_r * lambda + theta_nr * (1.0 - lambda)
}

/// Mean outcome of EDTR `l` (1-based) at compliance vector `d` for one
/// parameter draw.
pub fn pce_value(
    design: &SmartDesign,
    variant: ResponseVariant,
    beta: &[Vec<f64>],
    gamma: &[f64],
    l: usize,
    d: &[f64],
) -> Result<f64> {
    if d.len() != design.m() {
        return Err(Error::InvalidArgument(format!(
            "compliance vector has {} coordinates, design needs {}",
            d.len(),
            design.m()
        )));
    }
    let (r, nr) = design.sequences_for_edtr(l)?;
    let lambda = response_prob(variant, design, gamma, r.a1, d);
    Ok(pce_combine(predict_mean(design, beta, r.id, d), predict_mean(design, beta, nr.id, d), lambda))
}

/// One value per stored draw.
pub fn pce_draws(post: &PosteriorDraws, l: usize, d: &[f64]) -> Result<Vec<f64>> {
    post.draws
        .iter()
        .map(|dr| pce_value(&post.design, post.response_variant, &dr.beta, &dr.gamma, l, d))
        .collect()
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean, sd and equal-tailed interval at `level`.
pub fn summarize(x: &[f64], level: f64) -> Result<Summary> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("no draws to summarize".into()));
    }
    let (mean, sd) = mean_sd(x);
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Summary { mean, sd, lower: quantile_sorted(&s, tail), upper: quantile_sorted(&s, 1.0 - tail) })
}

/// A box of compliance values with a representative point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceClass {
    pub label: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ComplianceClass {
    pub fn uniform(label: impl Into<String>, lo: f64, hi: f64, m: usize) -> Result<ComplianceClass> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidArgument(format!("class bounds [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1")));
        }
        Ok(ComplianceClass { label: label.into(), lower: vec![lo; m], upper: vec![hi; m] })
    }

    /// Per-coordinate midpoint.
    pub fn representative(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// Parses comma-separated percent bands such as `25-50,50-75,75-100,100`.
pub fn parse_classes(spec: &str, m: usize) -> Result<Vec<ComplianceClass>> {
    let pct = |s: &str| -> Result<f64> {
        s.trim()
            .trim_end_matches('%')
            .parse::<f64>()
            .map(|v| v / 100.0)
            .map_err(|_| Error::InvalidArgument(format!("bad class bound '{s}'")))
    };
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (pct(a)?, pct(b)?),
            None => {
                let v = pct(part)?;
                (v, v)
            }
        };
        let label = if lo == hi {
            format!("{}%", lo * 100.0)
        } else {
            format!("{}%-{}%", lo * 100.0, hi * 100.0)
        };
        out.push(ComplianceClass::uniform(label, lo, hi, m)?);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no compliance classes given".into()));
    }
    Ok(out)
}

pub const DEFAULT_CLASSES: &str = "25-50,50-75,75-100,100";

pub fn default_classes(m: usize) -> Vec<ComplianceClass> {
    parse_classes(DEFAULT_CLASSES, m).expect("default classes parse")
}

/// Set of regimes not distinguishable from the best.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestSet {
    /// 1-based index of the regime with the best posterior mean.
    pub best: usize,
    /// Upper credible limit of `θ_l - max_l' θ_l'` (on the oriented scale).
    pub upper: Vec<f64>,
    /// 1-based members, ascending.
    pub members: Vec<usize>,
}

/// Bayesian multiple comparisons with the best over `columns[l][draw]`.
pub fn mcb_sets(columns: &[Vec<f64>], alpha: f64, direction: Direction) -> Result<BestSet> {
    let l = columns.len();
    if l < 2 {
        return Err(Error::InvalidArgument("MCB needs at least two regimes".into()));
    }
    let n = columns[0].len();
    if n < 2 || columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("MCB needs at least two draws per regime, equal across regimes".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let sign = match direction {
        Direction::Maximize => 1.0,
        Direction::Minimize => -1.0,
    };
    let means: Vec<f64> = columns.iter().map(|c| sign * c.iter().sum::<f64>() / n as f64).collect();
    let mut best = 0;
    for (i, &mu) in means.iter().enumerate() {
        if mu > means[best] {
            best = i;
        }
    }
    let level = 1.0 - alpha / (l - 1) as f64;
    let max_per_draw: Vec<f64> = (0..n)
        .map(|i| columns.iter().map(|c| sign * c[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let upper: Vec<f64> = columns
        .iter()
        .map(|c| {
            let diffs: Vec<f64> = (0..n).map(|i| sign * c[i] - max_per_draw[i]).collect();
            quantile(&diffs, level)
        })
        .collect();
    let members = (0..l).filter(|&i| i == best || upper[i] >= 0.0).map(|i| i + 1).collect();
    Ok(BestSet { best: best + 1, upper, members })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEstimate {
    pub class: ComplianceClass,
    /// One summary per EDTR.
    pub edtr: Vec<Summary>,
    pub best: BestSet,
}

/// PCE summaries and best sets at each class representative.
pub fn estimate_classes(
    post: &PosteriorDraws,
    classes: &[ComplianceClass],
    alpha: f64,
    direction: Direction,
    level: f64,
) -> Result<Vec<ClassEstimate>> {
    if post.draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    classes
        .iter()
        .map(|class| {
            let d = class.representative();
            let cols: Vec<Vec<f64>> = (1..=post.design.l()).map(|l| pce_draws(post, l, &d)).collect::<Result<_>>()?;
            let edtr = cols.iter().map(|c| summarize(c, level)).collect::<Result<_>>()?;
            let best = if cols[0].len() >= 2 {
                mcb_sets(&cols, alpha, direction)?
            } else {
                degenerate_best(&cols, direction)
            };
            Ok(ClassEstimate { class: class.clone(), edtr, best })
        })
        .collect()
}

/// With a single draw there is no uncertainty: only ties with the best survive.
fn degenerate_best(cols: &[Vec<f64>], direction: Direction) -> BestSet {
    let sign = if direction == Direction::Maximize { 1.0 } else { -1.0 };
    let v: Vec<f64> = cols.iter().map(|c| sign * c[0]).collect();
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best = v.iter().position(|&x| x == top).unwrap_or(0);
    let upper: Vec<f64> = v.iter().map(|x| x - top).collect();
    let members = (0..v.len()).filter(|&i| upper[i] >= 0.0).map(|i| i + 1).collect();
    BestSet { best: best + 1, upper, members }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Waic {
    pub waic: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub n: usize,
}

fn waic_core(loglik: &[Vec<f64>]) -> std::result::Result<Waic, usize> {
    let s = loglik.len();
    let n = loglik[0].len();
    let mut lppd = 0.0;
    let mut p = 0.0;
    for i in 0..n {
        let col: Vec<f64> = loglik.iter().map(|r| r[i]).collect();
        let mx = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return Err(i);
        }
        lppd += mx + (col.iter().map(|v| (v - mx).exp()).sum::<f64>() / s as f64).ln();
        p += mean_sd(&col).1.powi(2);
    }
    Ok(Waic { waic: -2.0 * lppd + 2.0 * p, lppd, p_waic: p, n })
}

/// WAIC from a `draws × observations` matrix of pointwise log densities.
pub fn waic_from_loglik(loglik: &[Vec<f64>]) -> Result<Waic> {
    if loglik.is_empty() {
        return Err(Error::InvalidArgument("WAIC needs draws".into()));
    }
    waic_core(loglik).map_err(|i| Error::ZeroDensity(format!("observation {} has zero predictive density", i + 1)))
}

/// WAIC of sequence `k`, treating each draw's imputed compliances as
/// parameters.
pub fn waic(post: &PosteriorDraws, data: &Dataset, k: usize) -> Result<Waic> {
    let design = &post.design;
    if k == 0 || k > design.k() {
        return Err(Error::InvalidArgument(format!("sequence {k} out of range")));
    }
    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.sequence[i] == k).collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("sequence {k} has no subjects")));
    }
    let m = design.m();
    let loglik: Vec<Vec<f64>> = post
        .draws
        .iter()
        .map(|dr| {
            if dr.compliance.len() != data.n() * m {
                return Err(Error::InvalidArgument("draws do not carry imputed compliances".into()));
            }
            Ok(rows
                .iter()
                .map(|&i| {
                    let mu = predict_mean(design, &dr.beta, k, &dr.compliance[i * m..(i + 1) * m]);
                    log_pdf(data.subjects[i].y, mu, dr.sigma2[k - 1])
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    if loglik.is_empty() {
        return Err(Error::InvalidArgument("WAIC needs draws".into()));
    }
    waic_core(&loglik).map_err(|i| {
        Error::ZeroDensity(format!("subject {} has zero predictive density", data.subjects[rows[i]].id))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IttEstimate {
    pub edtr: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub consistent: usize,
}

/// Weighted mean outcome per EDTR over the subjects in `idx`. Subjects
/// re-randomized at stage 2 weigh 2, others 1.
pub fn itt_means(data: &Dataset, design: &SmartDesign, idx: &[usize]) -> Result<Vec<f64>> {
    design
        .edtrs
        .iter()
        .map(|e| {
            let mut num = 0.0;
            let mut den = 0.0;
            for &i in idx {
                let k = data.sequence[i];
                if k == e.responder_sequence || k == e.nonresponder_sequence {
                    let w = if data.subjects[i].a2.is_some() { 2.0 } else { 1.0 };
                    num += w * data.subjects[i].y;
                    den += w;
                }
            }
            if den == 0.0 {
                Err(Error::InvalidArgument(format!("EDTR {} has no consistent subjects", e.id)))
            } else {
                Ok(num / den)
            }
        })
        .collect()
}

/// Empirical intention-to-treat means with nonparametric bootstrap
/// percentile intervals.
pub fn itt_summary<R: Rng + ?Sized>(
    data: &Dataset,
    design: &SmartDesign,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<Vec<IttEstimate>> {
    let all: Vec<usize> = (0..data.n()).collect();
    let point = itt_means(data, design, &all)?;
    let n = data.n();
    let mut boots: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); design.l()];
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for v in idx.iter_mut() {
            *v = rng.random_range(0..n);
        }
        if let Ok(means) = itt_means(data, design, &idx) {
            for (b, v) in boots.iter_mut().zip(means) {
                b.push(v);
            }
        }
    }
    let tail = (1.0 - level) / 2.0;
    Ok(design
        .edtrs
        .iter()
        .enumerate()
        .map(|(l, e)| {
            let consistent = all
                .iter()
                .filter(|&&i| data.sequence[i] == e.responder_sequence || data.sequence[i] == e.nonresponder_sequence)
                .count();
            let (lower, upper) = if boots[l].is_empty() {
                (point[l], point[l])
            } else {
                (quantile(&boots[l], tail), quantile(&boots[l], 1.0 - tail))
            };
            IttEstimate { edtr: e.id, mean: point[l], lower, upper, consistent }
        })
        .collect())
}

/// Writes the per-class EDTR table with best-set membership.
pub fn write_class_table<W: Write>(estimates: &[ClassEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "edtr", "mean", "sd", "lower", "upper", "mcb_upper", "in_best", "best"])?;
    for est in estimates {
        for (l, s) in est.edtr.iter().enumerate() {
            w.write_record([
                est.class.label.clone(),
                (l + 1).to_string(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.lower.to_string(),
                s.upper.to_string(),
                est.best.upper[l].to_string(),
                (est.best.members.contains(&(l + 1)) as u8).to_string(),
                est.best.best.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Posterior-mean PCE over a grid on the first three coordinates (others
/// fixed at 0.5), `steps + 1` levels per axis.
pub fn pce_grid(post: &PosteriorDraws, steps: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let m = post.design.m();
    let axes = m.min(3);
    let steps = steps.max(1);
    let total = (steps + 1).pow(axes as u32);
    let mut out = Vec::with_capacity(total);
    for cell in 0..total {
        let mut d = vec![0.5; m];
        let mut rem = cell;
        for v in d.iter_mut().take(axes) {
            *v = (rem % (steps + 1)) as f64 / steps as f64;
            rem /= steps + 1;
        }
        let vals = (1..=post.design.l())
            .map(|l| pce_draws(post, l, &d).map(|x| x.iter().sum::<f64>() / x.len() as f64))
            .collect::<Result<_>>()?;
        out.push((d, vals));
    }
    Ok(out)
}

pub fn write_pce_grid<W: Write>(post: &PosteriorDraws, grid: &[(Vec<f64>, Vec<f64>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = post.design.coordinates.iter().map(|c| c.name.clone()).collect();
    header.extend((1..=post.design.l()).map(|l| format!("edtr{l}")));
    w.write_record(&header)?;
    for (d, v) in grid {
        w.write_record(d.iter().chain(v).map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

//! Data augmentation of latent potential compliances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::design::{Term, TreatmentSequence};
use crate::error::Result;
use crate::normal::draw_truncated;
use crate::truncmvn::TruncatedGaussian;

/// How latent coordinates are filled before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    #[default]
    Uniform,
    /// Resample from subjects where the same coordinate is observed, falling
    /// back to uniform when it is never observed.
    Empirical,
}

/// Complete row-major `n × m` compliance matrix.
pub fn initialize_missing<R: Rng + ?Sized>(data: &Dataset, m: usize, method: InitMethod, rng: &mut R) -> Vec<f64> {
    let pools: Vec<Vec<f64>> = (0..m)
        .map(|j| data.subjects.iter().filter_map(|s| s.compliance[j]).collect())
        .collect();
    let mut out = Vec::with_capacity(data.n() * m);
    for s in &data.subjects {
        for (j, v) in s.compliance.iter().enumerate() {
            out.push(match v {
                Some(x) => *x,
                None => match method {
                    InitMethod::Empirical if !pools[j].is_empty() => pools[j][rng.random_range(0..pools[j].len())],
                    _ => rng.random(),
                },
            });
        }
    }
    out
}

/// Splits the sequence mean into `a + g d_j`, the part free of and the slope
/// in coordinate `j`, at the current values of the other coordinates.
fn linear_in(seq: &TreatmentSequence, beta: &[f64], d: &[f64], j: usize) -> (f64, f64) {
    let mut a = 0.0;
    let mut g = 0.0;
    for (t, b) in seq.terms.iter().zip(beta) {
        match *t {
            Term::Intercept => a += b,
            Term::Main(i) if i == j => g += b,
            Term::Main(i) => a += b * d[i],
            Term::Interaction(p, q) if p == j => g += b * d[q],
            Term::Interaction(p, q) if q == j => g += b * d[p],
            Term::Interaction(p, q) => a += b * d[p] * d[q],
        }
    }
    (a, g)
}

/// Current state needed to impute one subject.
pub struct ImputeContext<'a> {
    pub sequence: &'a TreatmentSequence,
    pub beta: &'a [f64],
    pub sigma2: f64,
    pub y: f64,
    pub kernel: &'a TruncatedGaussian,
}

/// Gibbs sweeps over the latent coordinates of `d`, each drawn exactly from
/// its full conditional: the kernel's conditional given the other
/// coordinates, times the outcome likelihood, truncated to `[0, 1]`.
pub fn impute_missing<R: Rng + ?Sized>(d: &mut [f64], missing: &[usize], ctx: &ImputeContext<'_>, sweeps: usize, rng: &mut R) {
    let q = ctx.kernel.precision();
    let eta = ctx.kernel.mean();
    for _ in 0..sweeps {
        for &j in missing {
            let qjj = q[(j, j)];
            let mut cross = 0.0;
            for (l, dl) in d.iter().enumerate() {
                if l != j {
                    cross += q[(j, l)] * (dl - eta[l]);
                }
            }
            let prior_mean = eta[j] - cross / qjj;
            let (a, g) = linear_in(ctx.sequence, ctx.beta, d, j);
            let tau = qjj + g * g / ctx.sigma2;
            let mean = (qjj * prior_mean + g * (ctx.y - a) / ctx.sigma2) / tau;
            d[j] = draw_truncated(mean, tau.sqrt().recip(), 0.0, 1.0, rng);
        }
    }
}

/// Joint conditional of the latent coordinates when the outcome mean is
/// linear in them (no interaction between two latent coordinates): the
/// kernel conditional combined with the outcome likelihood.
pub fn missing_posterior(d: &[f64], missing: &[usize], ctx: &ImputeContext<'_>) -> Result<TruncatedGaussian> {
    let observed: Vec<usize> = (0..d.len()).filter(|j| !missing.contains(j)).collect();
    let obs_vals: Vec<f64> = observed.iter().map(|&j| d[j]).collect();
    let prior = if observed.is_empty() {
        ctx.kernel.clone()
    } else {
        ctx.kernel.conditional(&observed, &obs_vals)?
    };
    let r = missing.len();
    let mut zeroed = d.to_vec();
    for &j in missing {
        zeroed[j] = 0.0;
    }
    let a: f64 = linear_in(ctx.sequence, ctx.beta, &zeroed, usize::MAX).0;
    let g = DVector::from_iterator(r, missing.iter().map(|&j| linear_in(ctx.sequence, ctx.beta, &zeroed, j).1));
    let prec: DMatrix<f64> = prior.precision() + &g * g.transpose() / ctx.sigma2;
    let lin = prior.precision() * prior.mean() + &g * ((ctx.y - a) / ctx.sigma2);
    let chol = prec
        .cholesky()
        .ok_or_else(|| crate::error::Error::NotPositiveDefinite("latent-coordinate posterior".into()))?;
    TruncatedGaussian::new(chol.solve(&lin), chol.inverse())
}

//! Wishart and inverse-Wishart densities and draws.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub fn ln_multigamma(a: f64, m: usize) -> f64 {
    let mf = m as f64;
    mf * (mf - 1.0) / 4.0 * PI.ln() + (1..=m).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

fn chol_logdet(x: &DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let c = x.clone().cholesky()?;
    let ld = 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    ld.is_finite().then_some((c, ld))
}

/// Bartlett draw from `Wishart(df, scale)`.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let m = scale.nrows();
    if df <= m as f64 - 1.0 {
        return Err(Error::InvalidArgument(format!("Wishart df {df} too small for dimension {m}")));
    }
    let l = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Wishart scale".into()))?
        .l();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        let chi = ChiSquared::new(df - i as f64).expect("positive df");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let x = &la * la.transpose();
    Ok((&x + x.transpose()) * 0.5)
}

/// Draw from `IW(df, psi)` by inverting a `Wishart(df, psi^{-1})` draw.
pub fn sample_inv_wishart<R: Rng + ?Sized>(df: f64, psi: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let psi_inv = psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?
        .inverse();
    let w = sample_wishart(df, &psi_inv, rng)?;
    let inv = w
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Wishart draw".into()))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `ln Wishart(x | df, scale)`; `None` if either matrix is not PD.
pub fn ln_wishart(x: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Option<f64> {
    let m = x.nrows();
    let mf = m as f64;
    let (_, ld_x) = chol_logdet(x)?;
    let (cv, ld_v) = chol_logdet(scale)?;
    let trace = cv.solve(x).trace();
    Some(
        0.5 * (df - mf - 1.0) * ld_x - 0.5 * trace - 0.5 * df * mf * LN_2 - 0.5 * df * ld_v - ln_multigamma(df / 2.0, m),
    )
}

/// `ln IW(sigma | df, psi)`; `None` if either matrix is not PD.
pub fn ln_inv_wishart(sigma: &DMatrix<f64>, df: f64, psi: &DMatrix<f64>) -> Option<f64> {
    let m = sigma.nrows();
    let mf = m as f64;
    let (cs, ld_s) = chol_logdet(sigma)?;
    let (_, ld_p) = chol_logdet(psi)?;
    let trace = cs.solve(psi).trace();
    Some(
        0.5 * df * ld_p - 0.5 * df * mf * LN_2 - ln_multigamma(df / 2.0, m) - 0.5 * (df + mf + 1.0) * ld_s - 0.5 * trace,
    )
}

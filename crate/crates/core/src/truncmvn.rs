//! Multivariate normal truncated to the closed unit cube `[0,1]^m`: the
//! mixture kernel.
//!
//! The normalizing constant `c = 1 / P(X ∈ [0,1]^m)` for `X ~ N(η, Σ)` is
//! estimated with the separation-of-variables transform (sequential
//! conditioning on the Cholesky factor), averaged over a shared point set.
//! For `m = 1` the estimate is exact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::normal::{draw_truncated, StdInterval, LN_2PI};

/// Smallest cube mass admitted before taking logs.
const MIN_MASS: f64 = 1e-300;

/// How the integration points for cube masses are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubeRule {
    /// Randomly shifted Kronecker lattice with a tent transform.
    Lattice,
    /// Independent uniforms.
    Random,
}

/// A fixed set of points in `[0,1]^(m-1)` shared by every cube-mass
/// evaluation within one sampler iteration.
#[derive(Debug, Clone)]
pub struct CubePoints {
    dim: usize,
    n: usize,
    values: Vec<f64>,
}

// Square roots of the first primes; fractional parts generate the lattice.
const LATTICE_ROOTS: [f64; 8] = [
    1.414_213_562_373_095,
    1.732_050_807_568_877_2,
    2.236_067_977_499_79,
    2.645_751_311_064_590_7,
    3.316_624_790_355_4,
    3.605_551_275_463_989,
    4.123_105_625_617_661,
    4.358_898_943_540_674,
];

impl CubePoints {
    pub fn new<R: Rng + ?Sized>(m: usize, n: usize, rule: CubeRule, rng: &mut R) -> CubePoints {
        let dim = m.saturating_sub(1);
        let n = n.max(1);
        let mut values = Vec::with_capacity(n * dim);
        match rule {
            CubeRule::Random => {
                for _ in 0..n * dim {
                    values.push(rng.random::<f64>());
                }
            }
            CubeRule::Lattice => {
                assert!(dim <= LATTICE_ROOTS.len(), "lattice supports m <= 9");
                let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                for k in 1..=n {
                    for i in 0..dim {
                        let v = (k as f64 * LATTICE_ROOTS[i] + shift[i]).fract();
                        values.push(1.0 - (2.0 * v - 1.0).abs());
                    }
                }
            }
        }
        CubePoints { dim, n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// `N(η, Σ)` restricted to `[0,1]^m`. `η` and `Σ` are pre-truncation moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl TruncatedGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<TruncatedGaussian> {
        let m = mean.len();
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::InvalidArgument(format!(
                "covariance is {}x{}, mean has length {m}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entries".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("{m}x{m} covariance")))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite("degenerate covariance".into()));
        }
        let precision = chol.inverse();
        Ok(TruncatedGaussian { mean, cov, chol: l, precision, log_det })
    }

    pub fn from_slices(mean: &[f64], cov: &[f64]) -> Result<TruncatedGaussian> {
        let m = mean.len();
        if cov.len() != m * m {
            return Err(Error::InvalidArgument("covariance must be m*m row-major".into()));
        }
        TruncatedGaussian::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(m, m, cov))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Untruncated `log N(d | η, Σ)`.
    pub fn log_gaussian(&self, d: &[f64]) -> f64 {
        let m = self.dim();
        debug_assert_eq!(d.len(), m);
        // Forward substitution L z = d - η.
        let mut z = [0.0f64; 16];
        let mut quad = 0.0;
        for i in 0..m {
            let mut s = d[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * z[j];
            }
            let zi = s / self.chol[(i, i)];
            z[i] = zi;
            quad += zi * zi;
        }
        -0.5 * (m as f64 * LN_2PI + self.log_det + quad)
    }

    /// `P(X ∈ [0,1]^m)` under the pre-truncation normal.
    pub fn cube_mass(&self, points: &CubePoints) -> f64 {
        let m = self.dim();
        let l = &self.chol;
        let first = StdInterval::new(-self.mean[0] / l[(0, 0)], (1.0 - self.mean[0]) / l[(0, 0)]);
        if m == 1 {
            return first.mass();
        }
        assert_eq!(points.dim, m - 1, "point set built for a different dimension");
        let mut y = [0.0f64; 16];
        let mut total = 0.0;
        for k in 0..points.n {
            let w = points.point(k);
            let mut f = first.mass();
            y[0] = first.quantile(w[0]);
            for i in 1..m {
                let mut s = self.mean[i];
                for j in 0..i {
                    s += l[(i, j)] * y[j];
                }
                let iv = StdInterval::new(-s / l[(i, i)], (1.0 - s) / l[(i, i)]);
                f *= iv.mass();
                if f == 0.0 {
                    break;
                }
                if i + 1 < m {
                    y[i] = iv.quantile(w[i]);
                }
            }
            total += f;
        }
        total / points.n as f64
    }

    /// `ln c = -ln P(X ∈ [0,1]^m)`.
    pub fn log_normalizing_constant(&self, points: &CubePoints) -> f64 {
        -self.cube_mass(points).max(MIN_MASS).ln()
    }

    /// Truncated log density for a known `ln c`; `-∞` off the cube.
    pub fn log_density(&self, log_c: f64, d: &[f64]) -> f64 {
        if d.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return f64::NEG_INFINITY;
        }
        log_c + self.log_gaussian(d)
    }

    /// Pre-truncation conditional of the complementary coordinates given
    /// `observed_values` at `observed_indices`.
    pub fn conditional(&self, observed_indices: &[usize], observed_values: &[f64]) -> Result<TruncatedGaussian> {
        let m = self.dim();
        if observed_indices.len() != observed_values.len() {
            return Err(Error::InvalidArgument("indices and values differ in length".into()));
        }
        let mut seen = vec![false; m];
        for &i in observed_indices {
            if i >= m || seen[i] {
                return Err(Error::InvalidArgument(format!("bad observed index {i}")));
            }
            seen[i] = true;
        }
        if observed_values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("observed values must lie in [0,1]".into()));
        }
        let free: Vec<usize> = (0..m).filter(|&i| !seen[i]).collect();
        if free.is_empty() {
            return Err(Error::InvalidArgument("nothing left to condition on".into()));
        }
        let (o, f) = (observed_indices, &free[..]);
        if o.is_empty() {
            return Ok(self.clone());
        }
        let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.cov[(rows[r], cols[c])]);
        let s_oo = sub(o, o);
        let s_fo = sub(f, o);
        let s_ff = sub(f, f);
        let chol = s_oo
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("conditioning block".into()))?;
        let resid = DVector::from_iterator(o.len(), o.iter().zip(observed_values).map(|(&i, &v)| v - self.mean[i]));
        let mean = DVector::from_iterator(f.len(), f.iter().map(|&i| self.mean[i])) + &s_fo * chol.solve(&resid);
        let cov = s_ff - &s_fo * chol.solve(&s_fo.transpose());
        TruncatedGaussian::new(mean, cov)
    }

    /// Conditional moments of coordinate `j` given all others at `x`.
    pub fn coordinate_conditional(&self, j: usize, x: &[f64]) -> (f64, f64) {
        let q = &self.precision;
        let qjj = q[(j, j)];
        let mut shift = 0.0;
        for k in 0..self.dim() {
            if k != j {
                shift += q[(j, k)] * (x[k] - self.mean[k]);
            }
        }
        (self.mean[j] - shift / qjj, 1.0 / qjj)
    }

    /// Coordinate-wise Gibbs sweeps over `free`, each draw an exact
    /// univariate truncated normal; everything else in `x` stays fixed.
    pub fn gibbs_sweeps<R: Rng + ?Sized>(&self, x: &mut [f64], free: &[usize], sweeps: usize, rng: &mut R) {
        for _ in 0..sweeps {
            for &j in free {
                let (mu, var) = self.coordinate_conditional(j, x);
                x[j] = draw_truncated(mu, var.sqrt(), 0.0, 1.0, rng);
            }
        }
    }

    /// Approximate draw: Gibbs sweeps started from the cube-clamped mean.
    /// Exact for `m = 1`.
    pub fn sample<R: Rng + ?Sized>(&self, sweeps: usize, rng: &mut R) -> Vec<f64> {
        let mut x: Vec<f64> = self.mean.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let all: Vec<usize> = (0..self.dim()).collect();
        self.gibbs_sweeps(&mut x, &all, sweeps.max(1), rng);
        x
    }
}

/// Monte Carlo estimate of `c` with a fresh point set of `mc_samples` points.
pub fn normalizing_constant<R: Rng + ?Sized>(
    tg: &TruncatedGaussian,
    mc_samples: usize,
    rule: CubeRule,
    rng: &mut R,
) -> Result<f64> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    let points = CubePoints::new(tg.dim(), mc_samples, rule, rng);
    Ok(1.0 / tg.cube_mass(&points).max(MIN_MASS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::std_cdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn univariate_constant_is_exact() {
        let tg = TruncatedGaussian::from_slices(&[0.5], &[0.25]).unwrap();
        let c = normalizing_constant(&tg, 10, CubeRule::Lattice, &mut rng()).unwrap();
        let mass = 2.0 * std_cdf(1.0) - 1.0;
        assert!((c - 1.0 / mass).abs() < 1e-12);
        assert!((c - 1.4647).abs() < 1e-3);
    }

    #[test]
    fn tiny_variance_keeps_all_mass() {
        let tg = TruncatedGaussian::from_slices(&[0.5], &[1e-8]).unwrap();
        let c = normalizing_constant(&tg, 1, CubeRule::Random, &mut rng()).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        let tg = TruncatedGaussian::from_slices(&[0.5, 0.5, 0.5], &[1e-6, 0.0, 0.0, 0.0, 1e-6, 0.0, 0.0, 0.0, 1e-6]).unwrap();
        let c = normalizing_constant(&tg, 100, CubeRule::Lattice, &mut rng()).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_density_values() {
        let tg = TruncatedGaussian::from_slices(&[0.5], &[0.25]).unwrap();
        let c: f64 = 1.4647;
        assert_eq!(tg.log_density(c.ln(), &[1.2]), f64::NEG_INFINITY);
        assert_eq!(tg.log_density(c.ln(), &[-0.01]), f64::NEG_INFINITY);
        let expect = (c / (2.0 * std::f64::consts::PI * 0.25).sqrt()).ln();
        assert!((tg.log_density(c.ln(), &[0.5]) - expect).abs() < 1e-14);
        // Closed cube: the faces belong to the support.
        assert!(tg.log_density(c.ln(), &[0.0]).is_finite());
        assert!(tg.log_density(c.ln(), &[1.0]).is_finite());
    }

    #[test]
    fn conditional_independent_is_marginal() {
        let tg = TruncatedGaussian::from_slices(&[0.2, 0.4, 0.9], &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
        let c = tg.conditional(&[1], &[0.7]).unwrap();
        assert_eq!(c.mean().as_slice(), &[0.2, 0.9]);
        assert_eq!(c.cov()[(0, 0)], 1.0);
        assert_eq!(c.cov()[(1, 1)], 3.0);
        assert_eq!(c.cov()[(0, 1)], 0.0);
    }

    #[test]
    fn conditional_bivariate() {
        let tg = TruncatedGaussian::from_slices(&[0.5, 0.5], &[1.0, 0.5, 0.5, 1.0]).unwrap();
        let c = tg.conditional(&[1], &[1.0]).unwrap();
        assert!((c.mean()[0] - 0.75).abs() < 1e-12);
        assert!((c.cov()[(0, 0)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn conditional_rejects_bad_inputs() {
        let tg = TruncatedGaussian::from_slices(&[0.5, 0.5], &[1.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(tg.conditional(&[1, 1], &[0.3, 0.3]).is_err());
        assert!(tg.conditional(&[0], &[1.5]).is_err());
        assert!(tg.conditional(&[0, 1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn non_pd_rejected() {
        assert!(matches!(
            TruncatedGaussian::from_slices(&[0.5, 0.5], &[1.0, 2.0, 2.0, 1.0]),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn samples_lie_in_cube() {
        let tg = TruncatedGaussian::from_slices(&[1.4, -0.3], &[0.5, 0.2, 0.2, 0.3]).unwrap();
        let mut r = rng();
        for _ in 0..500 {
            let x = tg.sample(5, &mut r);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn coordinate_conditional_matches_schur() {
        let tg = TruncatedGaussian::from_slices(&[0.3, 0.6, 0.5], &[0.3, 0.1, 0.05, 0.1, 0.2, 0.02, 0.05, 0.02, 0.4]).unwrap();
        let x = [0.1, 0.8, 0.4];
        let (mu, var) = tg.coordinate_conditional(1, &x);
        let c = tg.conditional(&[0, 2], &[x[0], x[2]]).unwrap();
        assert!((mu - c.mean()[0]).abs() < 1e-12);
        assert!((var - c.cov()[(0, 0)]).abs() < 1e-12);
    }
}

//! Independent reference computations shared by the oracle tests and the
//! acceptance suite. Each function returns the measured discrepancy.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::beta::ln_beta;

use smart_pce::augment::{impute_missing, ImputeContext};
use smart_pce::design::Term;
use smart_pce::estimands::pce_value;
use smart_pce::gibbs::{mean_density_grid, run_mixture_chain};
use smart_pce::mixture::{update_component_cov, update_component_mean, update_concentration, Component, ConcentrationTarget};
use smart_pce::outcome::{draw_coefficients, draw_variances, LogisticSampler, OutcomeLayout, RegressionData};
use smart_pce::truncmvn::{CubePoints, CubeRule, TruncatedGaussian};
use smart_pce::{Arm, ResponseVariant, SamplerConfig, SmartDesign, TreatmentSequence};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gauss(x: f64, mu: f64, var: f64) -> f64 {
    (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Two-sided Kolmogorov–Smirnov distance between draws and a CDF tabulated
/// on an equispaced grid of `[0, 1]`.
pub fn ks_against_grid(mut draws: Vec<f64>, cdf: &[f64]) -> f64 {
    draws.sort_by(f64::total_cmp);
    let cells = (cdf.len() - 1) as f64;
    let f = |x: f64| {
        let t = (x.clamp(0.0, 1.0) * cells).min(cells - 1e-9);
        let i = t.floor() as usize;
        cdf[i] + (t - i as f64) * (cdf[i + 1] - cdf[i])
    };
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let fx = f(x);
            (fx - i as f64 / n).abs().max((fx - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Trapezoid CDF of an unnormalized density on `[0, 1]`.
pub fn grid_cdf(density: impl Fn(f64) -> f64, cells: usize) -> Vec<f64> {
    let h = 1.0 / cells as f64;
    let vals: Vec<f64> = (0..=cells).map(|i| density(i as f64 * h)).collect();
    let mut cdf = vec![0.0; cells + 1];
    for i in 1..=cells {
        cdf[i] = cdf[i - 1] + 0.5 * h * (vals[i - 1] + vals[i]);
    }
    let total = cdf[cells];
    cdf.iter().map(|c| c / total).collect()
}

/// Largest `|∫ f - 1|` over truncated normals in one and two dimensions,
/// by midpoint quadrature of the implemented density.
pub fn tmvn_integral_error() -> f64 {
    let mut r = rng(1);
    let cases: [(&[f64], &[f64]); 4] = [
        (&[0.3], &[0.05]),
        (&[1.2], &[0.3]),
        (&[0.4, 0.7], &[0.05, 0.02, 0.02, 0.08]),
        (&[-0.2, 0.5], &[0.3, -0.1, -0.1, 0.2]),
    ];
    let mut worst: f64 = 0.0;
    for (mean, cov) in cases {
        let tg = TruncatedGaussian::from_slices(mean, cov).unwrap();
        let m = mean.len();
        let points = CubePoints::new(m, 256, CubeRule::Lattice, &mut r);
        let log_c = tg.log_normalizing_constant(&points);
        let total = if m == 1 {
            let n = 10_000;
            (0..n).map(|i| tg.log_density(log_c, &[(i as f64 + 0.5) / n as f64]).exp()).sum::<f64>() / n as f64
        } else {
            let n = 400;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                    s += tg.log_density(log_c, &d).exp();
                }
            }
            s / (n * n) as f64
        };
        worst = worst.max((total - 1.0).abs());
    }
    worst
}

/// KS distance of 10⁴ one-dimensional truncated-normal draws from the grid CDF.
pub fn tmvn_ks() -> f64 {
    let (mu, var) = (0.3, 0.0625);
    let tg = TruncatedGaussian::from_slices(&[mu], &[var]).unwrap();
    let mut r = rng(2);
    let draws: Vec<f64> = (0..10_000).map(|_| tg.sample(1, &mut r)[0]).collect();
    ks_against_grid(draws, &grid_cdf(|x| gauss(x, mu, var), 20_000))
}

/// Largest deviation of the conditional-mean and -variance formula from the
/// textbook bivariate normal expressions.
pub fn conditional_error() -> f64 {
    let (m1, m2, s1, s2, rho) = (0.3, 0.6, 0.2, 0.3, 0.4);
    let cov = [s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2];
    let tg = TruncatedGaussian::from_slices(&[m1, m2], &cov).unwrap();
    let mut worst: f64 = 0.0;
    for x2 in [0.0, 0.5, 0.9] {
        let c = tg.conditional(&[1], &[x2]).unwrap();
        worst = worst.max((c.mean()[0] - (m1 + rho * s1 / s2 * (x2 - m2))).abs());
        worst = worst.max((c.cov()[(0, 0)] - s1 * s1 * (1.0 - rho * rho)).abs());
    }
    for x1 in [0.1, 0.7] {
        let c = tg.conditional(&[0], &[x1]).unwrap();
        worst = worst.max((c.mean()[0] - (m2 + rho * s2 / s1 * (x1 - m1))).abs());
        worst = worst.max((c.cov()[(0, 0)] - s2 * s2 * (1.0 - rho * rho)).abs());
    }
    worst
}

/// Mean and variance z-scores (largest over coefficients) of 10⁴ constrained
/// regression draws against weighted least squares on an explicit design matrix.
pub fn regression_z_scores() -> (f64, f64) {
    let design = SmartDesign::engage(false);
    let layout = OutcomeLayout::new(&design);
    let mut r = rng(3);
    let n = 300;
    let m = design.m();
    let seqs: Vec<usize> = (0..n).map(|i| i % design.k() + 1).collect();
    let comp: Vec<f64> = (0..n * m).map(|_| r.random::<f64>()).collect();
    let sigma2: Vec<f64> = (1..=design.k()).map(|k| 0.01 * k as f64).collect();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + comp[i * m] - comp[i * m + 2] + noise.sample(&mut r)).collect();

    // Whitened explicit design matrix over free parameters.
    let p = layout.n_params;
    let mut x: DMatrix<f64> = DMatrix::zeros(n, p);
    let mut yw: DVector<f64> = DVector::zeros(n);
    for i in 0..n {
        let k = seqs[i];
        let w = sigma2[k - 1].sqrt().recip();
        let d = &comp[i * m..(i + 1) * m];
        for (t, term) in design.sequence(k).terms.iter().enumerate() {
            let v = match *term {
                Term::Intercept => 1.0,
                Term::Main(j) => d[j],
                Term::Interaction(a, b) => d[a] * d[b],
            };
            x[(i, layout.index[k - 1][t])] += w * v;
        }
        yw[i] = w * y[i];
    }
    let xtx = x.transpose() * &x;
    let cov = xtx.clone().try_inverse().unwrap();
    let mean = &cov * x.transpose() * yw;

    let data = RegressionData { sequence: &seqs, compliance: &comp, y: &y, m };
    let draws = 10_000;
    let mut sum = vec![0.0; p];
    let mut sq = vec![0.0; p];
    let samples: Vec<Vec<f64>> = (0..draws)
        .map(|_| draw_coefficients(&design, &layout, &data, &sigma2, &mut r).unwrap())
        .collect();
    for s in &samples {
        for j in 0..p {
            sum[j] += s[j];
        }
    }
    let avg: Vec<f64> = sum.iter().map(|v| v / draws as f64).collect();
    for s in &samples {
        for j in 0..p {
            sq[j] += (s[j] - avg[j]).powi(2);
        }
    }
    let mut zmean: f64 = 0.0;
    let mut zvar: f64 = 0.0;
    for j in 0..p {
        let var_hat = sq[j] / (draws - 1) as f64;
        let v = cov[(j, j)];
        zmean = zmean.max((avg[j] - mean[j]).abs() / (v / draws as f64).sqrt());
        zvar = zvar.max((var_hat - v).abs() / (v * (2.0 / (draws - 1) as f64).sqrt()));
    }
    (zmean, zvar)
}

/// z-score of the mean of 10⁴ residual-variance draws against `RSS / (n - 2)`.
pub fn variance_z_score() -> f64 {
    let (rss, n) = (2.0, 30usize);
    let mut r = rng(4);
    let draws = 10_000;
    let v: Vec<f64> = (0..draws).map(|_| draw_variances(&[rss], &[n], &mut r)[0]).collect();
    let nf = n as f64;
    let mean = rss / (nf - 2.0);
    let var = 2.0 * rss * rss / ((nf - 2.0).powi(2) * (nf - 4.0));
    let avg = v.iter().sum::<f64>() / draws as f64;
    (avg - mean).abs() / (var / draws as f64).sqrt()
}

/// Largest gap between the random-walk logistic posterior mean and a 2-d grid
/// posterior under a flat prior.
pub fn logistic_grid_gap() -> f64 {
    let mut r = rng(5);
    let n = 80;
    let mut x = Vec::with_capacity(2 * n);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = r.random();
        x.extend([1.0, u]);
        s.push(r.random::<f64>() < expit(-0.5 + 1.5 * u));
    }
    let ll = |g: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let eta = g[0] * x[2 * i] + g[1] * x[2 * i + 1];
                if s[i] {
                    -(1.0 + (-eta).exp()).ln()
                } else {
                    -(1.0 + eta.exp()).ln()
                }
            })
            .sum()
    };
    let (mut sampler, mut gamma) = LogisticSampler::new(&x, &s, 2, 0.3);
    sampler.run(&x, &s, &mut gamma, 3000, true, &mut r);
    let steps = 60_000;
    let mut acc = [0.0; 2];
    for _ in 0..steps {
        sampler.run(&x, &s, &mut gamma, 1, false, &mut r);
        acc[0] += gamma[0];
        acc[1] += gamma[1];
    }
    let mc = [acc[0] / steps as f64, acc[1] / steps as f64];

    let g = 241;
    let (lo0, hi0, lo1, hi1) = (-4.0, 3.0, -3.0, 6.0);
    let mut logp = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let a = lo0 + (hi0 - lo0) * i as f64 / (g - 1) as f64;
            let b = lo1 + (hi1 - lo1) * j as f64 / (g - 1) as f64;
            logp.push((a, b, ll(&[a, b])));
        }
    }
    let top = logp.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m0, mut m1) = (0.0, 0.0, 0.0);
    for (a, b, l) in logp {
        let w = (l - top).exp();
        z += w;
        m0 += w * a;
        m1 += w * b;
    }
    (mc[0] - m0 / z).abs().max((mc[1] - m1 / z).abs())
}

fn truncated_rows(mu: f64, sd: f64, n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = Normal::new(mu, sd).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = dist.sample(r);
        if (0.0..=1.0).contains(&v) {
            out.push(v);
        }
    }
    out
}

fn cube_mass_1d(mu: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let phi = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    phi((1.0 - mu) / sd) - phi(-mu / sd)
}

/// Gap between the chain for a one-dimensional kernel mean and the grid
/// posterior `∝ c(η)^n ∏ N(d_i | η, σ²)` under a flat prior.
pub fn mixture_mean_gap() -> f64 {
    let mut r = rng(6);
    let var = 0.15f64 * 0.15;
    let rows_v = truncated_rows(0.15, 0.15, 40, &mut r);
    let rows: Vec<&[f64]> = rows_v.iter().map(std::slice::from_ref).collect();
    let points = CubePoints::new(1, 1, CubeRule::Lattice, &mut r);
    let kernel = TruncatedGaussian::from_slices(&[0.3], &[var]).unwrap();
    let mut comp = Component::new(kernel, &points);
    let steps = 40_000;
    let mut total = 0.0;
    for _ in 0..steps {
        comp = update_component_mean(&comp, &rows, &points, &mut r).unwrap().0;
        total += comp.kernel.mean()[0];
    }
    let mc = total / steps as f64;

    let logpost = |eta: f64| -> f64 {
        let n = rows_v.len() as f64;
        -n * cube_mass_1d(eta, var).ln() + rows_v.iter().map(|d| gauss(*d, eta, var).ln()).sum::<f64>()
    };
    grid_mean_gap(mc, logpost, -1.0, 1.5, 20_001)
}

fn grid_mean_gap(mc: f64, logpost: impl Fn(f64) -> f64, lo: f64, hi: f64, g: usize) -> f64 {
    (mc - grid_mean(logpost, lo, hi, g)).abs()
}

fn grid_mean(logpost: impl Fn(f64) -> f64, lo: f64, hi: f64, g: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (0..g)
        .map(|i| {
            let v = lo + (hi - lo) * i as f64 / (g - 1) as f64;
            (v, logpost(v))
        })
        .collect();
    let top = pts.iter().map(|p| p.1).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m) = (0.0, 0.0);
    for (v, l) in pts {
        let w = (l - top).exp();
        z += w;
        m += w * v;
    }
    m / z
}

/// Relative gap for a one-dimensional kernel variance under the `IW(1, 1)`
/// prior, `p(σ²) ∝ (σ²)^(-3/2) exp(-1 / (2σ²))`.
pub fn mixture_cov_gap() -> f64 {
    let mut r = rng(7);
    let eta = 0.5;
    let rows_v = truncated_rows(eta, 0.12, 40, &mut r);
    let rows: Vec<&[f64]> = rows_v.iter().map(std::slice::from_ref).collect();
    let points = CubePoints::new(1, 1, CubeRule::Lattice, &mut r);
    let mut comp = Component::new(TruncatedGaussian::from_slices(&[eta], &[0.02]).unwrap(), &points);
    let burn = 5_000;
    let steps = 100_000;
    let mut total = 0.0;
    for t in 0..burn + steps {
        comp = update_component_cov(&comp, &rows, &points, 200.0, &mut r).unwrap().0;
        if t >= burn {
            total += comp.kernel.cov()[(0, 0)];
        }
    }
    let mc = total / steps as f64;
    let logpost = |v: f64| -> f64 {
        if v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let n = rows_v.len() as f64;
        -1.5 * v.ln() - 0.5 / v - n * cube_mass_1d(eta, v).ln() + rows_v.iter().map(|d| gauss(*d, eta, v).ln()).sum::<f64>()
    };
    let exact = grid_mean(logpost, 1e-5, 0.2, 40_001);
    ((mc - exact) / exact).abs()
}

/// Gap for the concentration under the count-augmented stick likelihood and
/// a `Gamma(1,1)` prior.
pub fn concentration_gap() -> f64 {
    let mut r = rng(8);
    let sticks = [0.55, 0.4, 0.3, 0.5, 0.2, 0.25, 0.6, 0.1, 0.3, 1.0];
    let counts = [120usize, 60, 30, 20, 8, 5, 4, 2, 1, 0];
    let assignments: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect();
    let mut alpha = 1.0;
    let steps = 60_000;
    let mut total = 0.0;
    for _ in 0..steps {
        alpha = update_concentration(&sticks, &assignments, alpha, ConcentrationTarget::CountAugmented, &mut r).0;
        total += alpha;
    }
    let mc = total / steps as f64;
    let logpost = |a: f64| -> f64 {
        if a <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut above: usize = counts.iter().sum();
        let mut l = -a;
        for k in 0..sticks.len() - 1 {
            above -= counts[k];
            let (p, q) = (1.0 + counts[k] as f64, a + above as f64);
            l += (p - 1.0) * sticks[k].ln() + (q - 1.0) * (1.0 - sticks[k]).ln() - ln_beta(p, q);
        }
        l
    };
    grid_mean_gap(mc, logpost, 1e-6, 40.0, 40_001)
}

/// KS distance of exact single-coordinate imputation draws from the grid
/// posterior `∝ N(d₂ | conditional) N(y | a + g d₂, σ²)` on `[0, 1]`.
pub fn augmentation_ks() -> f64 {
    let seq = TreatmentSequence {
        id: 1,
        a1: Arm::Plus,
        responder: false,
        a2: Some(Arm::Plus),
        observed: vec![true, false],
        terms: vec![Term::Intercept, Term::Main(0), Term::Main(1)],
    };
    let beta = [0.2, 0.7, 0.9];
    let (m1, m2, s1, s2, rho) = (0.5, 0.4, 0.2, 0.3, 0.5);
    let cov = [s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2];
    let kernel = TruncatedGaussian::from_slices(&[m1, m2], &cov).unwrap();
    let (sigma2, y, d1) = (0.04, 1.3, 0.6);
    let ctx = ImputeContext { sequence: &seq, beta: &beta, sigma2, y, kernel: &kernel };
    let mut r = rng(9);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            let mut d = [d1, 0.5];
            impute_missing(&mut d, &[1], &ctx, 1, &mut r);
            d[1]
        })
        .collect();
    let cm = m2 + rho * s2 / s1 * (d1 - m1);
    let cv = s2 * s2 * (1.0 - rho * rho);
    let a = beta[0] + beta[1] * d1;
    let density = |x: f64| gauss(x, cm, cv) * gauss(y, a + beta[2] * x, sigma2);
    ks_against_grid(draws, &grid_cdf(density, 20_000))
}

/// Largest gap between hand-written EDTR mean formulas and the implementation.
pub fn pce_hand_error() -> f64 {
    let design = SmartDesign::engage(false);
    let b = vec![
        vec![0.7, 0.6],
        vec![0.2, 0.7, 0.9],
        vec![0.2, 0.6, 0.9],
        vec![0.7, 0.6, 0.6],
        vec![0.3, 0.6, 0.7],
        vec![0.3, 0.6, 0.7],
    ];
    let g4 = [-0.8, 1.1, 0.9, 0.25];
    let g5 = [-1.0, 1.0, -1.5, 1.2];
    let mut worst: f64 = 0.0;
    for d in [[0.3, 0.6, 0.8], [1.0, 1.0, 1.0], [0.0, 0.2, 0.5]] {
        let (d11, d12, d22) = (d[0], d[1], d[2]);
        let r1 = b[0][0] + b[0][1] * d11;
        let n2 = b[1][0] + b[1][1] * d11 + b[1][2] * d22;
        let n3 = b[2][0] + b[2][1] * d11 + b[2][2] * d22;
        let r4 = b[3][0] + b[3][1] * d11 + b[3][2] * d12;
        let n5 = b[4][0] + b[4][1] * d12 + b[4][2] * d22;
        let n6 = b[5][0] + b[5][1] * d12 + b[5][2] * d22;
        let lp4 = expit(g4[0] + g4[1] * d11 + g4[2] * d12 + g4[3]);
        let lm4 = expit(g4[0] + g4[1] * d11 + g4[2] * d12 - g4[3]);
        let lp5 = expit(g5[0] + g5[1] * d11);
        let lm5 = expit(g5[2] + g5[3] * d12);
        let want4 = [
            lp4 * r1 + (1.0 - lp4) * n2,
            lp4 * r1 + (1.0 - lp4) * n3,
            lm4 * r4 + (1.0 - lm4) * n5,
            lm4 * r4 + (1.0 - lm4) * n6,
        ];
        let want5 = [
            lp5 * r1 + (1.0 - lp5) * n2,
            lp5 * r1 + (1.0 - lp5) * n3,
            lm5 * r4 + (1.0 - lm5) * n5,
            lm5 * r4 + (1.0 - lm5) * n6,
        ];
        for l in 1..=4 {
            let got4 = pce_value(&design, ResponseVariant::A4, &b, &g4, l, &d).unwrap();
            let got5 = pce_value(&design, ResponseVariant::A5, &b, &g5, l, &d).unwrap();
            worst = worst.max((got4 - want4[l - 1]).abs()).max((got5 - want5[l - 1]).abs());
        }
    }
    worst
}

/// Two separated truncated normals on the unit square.
pub struct TwoBumps {
    pub weights: [f64; 2],
    pub means: [[f64; 2]; 2],
    pub sds: [[f64; 2]; 2],
}

impl Default for TwoBumps {
    fn default() -> Self {
        TwoBumps { weights: [0.45, 0.55], means: [[0.25, 0.3], [0.72, 0.7]], sds: [[0.09, 0.1], [0.1, 0.08]] }
    }
}

impl TwoBumps {
    pub fn sample(&self, n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let k = usize::from(r.random::<f64>() >= self.weights[0]);
            for j in 0..2 {
                let dist = Normal::new(self.means[k][j], self.sds[k][j]).unwrap();
                out.push(loop {
                    let v = dist.sample(r);
                    if (0.0..=1.0).contains(&v) {
                        break v;
                    }
                });
            }
        }
        out
    }

    /// Density `Σ w_k TN_k`, each piece normalised by its product of 1-d masses.
    pub fn density(&self, x: &[f64]) -> f64 {
        (0..2)
            .map(|k| {
                let mut p = self.weights[k];
                for j in 0..2 {
                    let (mu, var) = (self.means[k][j], self.sds[k][j].powi(2));
                    p *= gauss(x[j], mu, var) / cube_mass_1d(mu, var);
                }
                p
            })
            .sum()
    }
}

/// L1 distance on a 50×50 midpoint grid between the posterior-mean mixture
/// density from 500 draws and the generating density.
pub fn density_l1(config: &SamplerConfig) -> f64 {
    let truth = TwoBumps::default();
    let mut r = rng(10);
    let d = truth.sample(500, &mut r);
    let (draws, _) = run_mixture_chain(&d, 2, config).unwrap();
    let g = 50;
    let grid: Vec<Vec<f64>> = (0..g * g)
        .map(|c| vec![((c / g) as f64 + 0.5) / g as f64, ((c % g) as f64 + 0.5) / g as f64])
        .collect();
    let est = mean_density_grid(draws.iter().map(|d| (&d.weights[..], &d.components[..])), &grid).unwrap();
    grid.iter().zip(&est).map(|(x, e)| (e - truth.density(x)).abs()).sum::<f64>() / (g * g) as f64
}

/// Modal occupied-component count over the last 200 burn-in iterations for
/// data from one truncated Gaussian.
pub fn degenerate_modal_occupancy() -> usize {
    let mut r = rng(12);
    let truth = TwoBumps { weights: [1.0, 0.0], means: [[0.4, 0.6]; 2], sds: [[0.15, 0.2]; 2] };
    let d = truth.sample(500, &mut r);
    let config = SamplerConfig { iterations: 1000, burn_in: 1000, ..Default::default() };
    let (_, diag) = run_mixture_chain(&d, 2, &config).unwrap();
    let mut counts = vec![0usize; config.components + 1];
    for &k in &diag.occupied[800..] {
        counts[k] += 1;
    }
    (0..counts.len()).max_by_key(|&k| counts[k]).unwrap()
}

//! Univariate normal helpers used by the kernel math.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use rand::Rng;
use libm::erfc;
use statrs::function::erf::erfc_inv;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn std_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn std_inv_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

#[inline]
pub fn log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + var.ln() + z * z / var)
}

pub fn pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(expit(x))`, stable for large |x|.
#[inline]
pub fn log_expit(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Standard normal restricted to `[lo, hi]`, sampled by inverse CDF. Works in
/// whichever tail keeps the probabilities away from 1.
#[derive(Debug, Clone, Copy)]
pub struct StdInterval {
    lo: f64,
    hi: f64,
    base: f64,
    mass: f64,
    upper: bool,
}

impl StdInterval {
    pub fn new(lo: f64, hi: f64) -> StdInterval {
        debug_assert!(lo <= hi);
        if lo > 0.0 {
            let base = std_sf(lo);
            StdInterval { lo, hi, base, mass: base - std_sf(hi), upper: true }
        } else {
            let base = std_cdf(lo);
            StdInterval { lo, hi, base, mass: std_cdf(hi) - base, upper: false }
        }
    }

    /// Probability of the interval under the standard normal.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Point with conditional CDF `u` inside the interval.
    pub fn quantile(&self, u: f64) -> f64 {
        if !(self.mass > 0.0) {
            // Both ends lie beyond the representable tail: collapse onto the
            // end nearest the mode.
            return if self.upper { self.lo } else { self.hi };
        }
        let x = if self.upper {
            -std_inv_cdf(self.base - u * self.mass)
        } else {
            std_inv_cdf(self.base + u * self.mass)
        };
        x.clamp(self.lo, self.hi)
    }
}

/// Draw from `N(mean, sd²)` truncated to `[lo, hi]`.
pub fn draw_truncated<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    if !(sd > 0.0) || !sd.is_finite() {
        return mean.clamp(lo, hi);
    }
    let iv = StdInterval::new((lo - mean) / sd, (hi - mean) / sd);
    let u: f64 = rng.random();
    (mean + sd * iv.quantile(u)).clamp(lo, hi)
}

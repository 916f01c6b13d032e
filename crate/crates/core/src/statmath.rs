//! Standard-normal primitives and exact interval probabilities.
//!
//! Everything here works on extended reals: `f64::INFINITY` and
//! `f64::NEG_INFINITY` are legitimate interval endpoints and quantiles.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal distribution function Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x), computed without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

// Acklam's rational approximation, relative error ~1.15e-9 before refinement.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

/// Φ⁻¹(p) for p in (0, 1/2], refined by one Halley step against the cdf.
fn lower_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let density = std_normal_pdf(x);
    if density == 0.0 || !density.is_finite() {
        return x;
    }
    let u = (std_normal_cdf(x) - p) / density;
    x - u / (1.0 + 0.5 * x * u)
}

/// Standard normal quantile Φ⁻¹(p); Φ⁻¹(0) = −∞ and Φ⁻¹(1) = +∞.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability {
            field: "p".into(),
            value: p,
        });
    }
    Ok(quantile_unchecked(p))
}

pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p <= 0.5 {
        lower_quantile(p)
    } else {
        // 1 - p is exact for p in [1/2, 1].
        -lower_quantile(1.0 - p)
    }
}

/// Φ⁻¹(1 − q) computed from the upper-tail probability q directly, so that
/// tiny q keep full relative precision.
pub fn std_normal_upper_quantile(q: f64) -> f64 {
    -quantile_unchecked(q)
}

/// An open interval (lo, hi) of the extended real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let iv = Interval { lo, hi };
        iv.validate("interval")?;
        Ok(iv)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            return Err(Error::InvalidInterval {
                field: field.to_string(),
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    /// Intersection, which may be empty (lo >= hi).
    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }
}

/// Pr{Z ∈ (lo, hi)} for Z ~ N(mu, 1).
pub fn gaussian_interval_prob(iv: Interval, mu: f64) -> f64 {
    if iv.is_empty() {
        return 0.0;
    }
    let lo = iv.lo - mu;
    let hi = iv.hi - mu;
    let p = if lo > 0.0 {
        std_normal_sf(lo) - std_normal_sf(hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    };
    p.clamp(0.0, 1.0)
}

/// Pr{|Z| ∈ (lo, hi)} for Z ~ N(mu, 1), with 0 ≤ lo ≤ hi.
pub fn folded_interval_prob(iv: Interval, mu: f64) -> Result<f64> {
    if iv.lo < 0.0 {
        return Err(Error::InvalidInterval {
            field: "folded interval".into(),
            lo: iv.lo,
            hi: iv.hi,
        });
    }
    Ok(folded_unchecked(iv, mu))
}

pub(crate) fn folded_unchecked(iv: Interval, mu: f64) -> f64 {
    let pos = gaussian_interval_prob(iv, mu);
    let neg = gaussian_interval_prob(
        Interval {
            lo: -iv.hi,
            hi: -iv.lo,
        },
        mu,
    );
    (pos + neg).min(1.0)
}

/// Two-sided normal p-value 2{1 − Φ(|z|)}.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * std_normal_sf(z.abs())).min(1.0)
}

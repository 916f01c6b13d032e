//! Closed-form tests: the minimax-optimal similar region for unit-fraction
//! levels, its extension to arbitrary levels, and the joint-significance and
//! delta-method (Sobel) baselines.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::regions::{OutsideRule, Provenance, RegionKind, RejectionRegion2D, WeightedRect};
use crate::statmath::{quantile_unchecked, std_normal_upper_quantile, two_sided_p, Interval};

/// Tolerance on |1/α − round(1/α)| for treating α as a unit fraction.
pub const UNIT_FRACTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSpec {
    pub alpha: f64,
    pub unit_fraction: bool,
    /// 1/α for unit fractions, ⌊1/α⌋ otherwise.
    pub k: usize,
}

impl AlphaSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let inv = 1.0 / alpha;
        let rounded = inv.round();
        if (inv - rounded).abs() < UNIT_FRACTION_TOL {
            Ok(AlphaSpec {
                alpha,
                unit_fraction: true,
                k: rounded as usize,
            })
        } else {
            Ok(AlphaSpec {
                alpha,
                unit_fraction: false,
                k: inv.floor() as usize,
            })
        }
    }

    /// The level K = 1/α spelled as a unit fraction.
    pub fn unit(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidAlpha(1.0 / k as f64));
        }
        Ok(AlphaSpec {
            alpha: 1.0 / k as f64,
            unit_fraction: true,
            k,
        })
    }

    /// j·α/2, exact in the unit-fraction case.
    fn half_multiple(&self, j: usize) -> f64 {
        if self.unit_fraction {
            j as f64 / (2 * self.k) as f64
        } else {
            j as f64 * self.alpha / 2.0
        }
    }
}

/// Breakpoints a_k = Φ⁻¹(kα/2), k = 0..2/α, with a_0 = −∞ and a_{2/α} = +∞.
/// The lower half is computed and mirrored so that a_{2/α−k} = −a_k exactly.
pub fn minimax_breakpoints(spec: &AlphaSpec) -> Result<Vec<f64>> {
    if !spec.unit_fraction {
        return Err(Error::NotUnitFraction(spec.alpha));
    }
    let k = spec.k;
    let mut a = vec![0.0; 2 * k + 1];
    for (j, slot) in a.iter_mut().enumerate().take(k) {
        *slot = quantile_unchecked(spec.half_multiple(j));
    }
    a[k] = 0.0;
    for j in 0..k {
        a[2 * k - j] = -a[j];
    }
    Ok(a)
}

/// Squares along both diagonals of the grid given by `breaks`:
/// (b_{k−1}, b_k)² and (b_{k−1}, b_k) × (−b_k, −b_{k−1}).
pub fn diagonal_region(alpha: f64, kind: RegionKind, breaks: &[f64]) -> Result<RejectionRegion2D> {
    let mut cells = Vec::with_capacity(2 * breaks.len());
    for w in breaks.windows(2) {
        let strip = Interval { lo: w[0], hi: w[1] };
        if strip.is_empty() {
            continue;
        }
        cells.push(WeightedRect::new(strip, strip, 1.0));
        cells.push(WeightedRect::new(
            strip,
            Interval {
                lo: -w[1],
                hi: -w[0],
            },
            1.0,
        ));
    }
    RejectionRegion2D::new(alpha, kind, cells, OutsideRule::None)
}

/// The minimax-optimal similar region R_mm for a unit-fraction α.
pub fn build_minimax_region(spec: &AlphaSpec) -> Result<RejectionRegion2D> {
    let a = minimax_breakpoints(spec)?;
    diagonal_region(spec.alpha, RegionKind::Minimax, &a)
}

/// Band edges on |z| for the extended region: 0, then Φ⁻¹(1 − jα/2) for
/// j = K, K−1, …, 1, then +∞, where K = ⌊1/α⌋. The innermost band
/// (0, Φ⁻¹(1 − Kα/2)) has mass 1 − Kα and collapses for unit fractions;
/// every other band has mass α.
pub fn extended_band_edges(spec: &AlphaSpec) -> Vec<f64> {
    let k = spec.k;
    let mut edges = Vec::with_capacity(k + 2);
    edges.push(0.0);
    for j in (1..=k).rev() {
        // + 0.0 turns a -0.0 from the median into +0.0
        edges.push(std_normal_upper_quantile(spec.half_multiple(j)) + 0.0);
    }
    edges.push(f64::INFINITY);
    edges
}

/// Four-quadrant union of squares on the extended bands; valid for any α in (0, 1).
pub fn build_extended_region(alpha: f64) -> Result<RejectionRegion2D> {
    let spec = AlphaSpec::new(alpha)?;
    let edges = extended_band_edges(&spec);
    let mut cells = Vec::with_capacity(4 * edges.len());
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if !(lo < hi) {
            continue;
        }
        let pos = Interval { lo, hi };
        let neg = Interval { lo: -hi, hi: -lo };
        for (x, y) in [(pos, pos), (pos, neg), (neg, pos), (neg, neg)] {
            cells.push(WeightedRect::new(x, y, 1.0));
        }
    }
    RejectionRegion2D::new(alpha, RegionKind::Extended, cells, OutsideRule::None)
}

/// Type-1 error of the extended region at the origin, ⌊1/α⌋α² + (1 − ⌊1/α⌋α)².
pub fn origin_type1(alpha: f64) -> Result<f64> {
    let spec = AlphaSpec::new(alpha)?;
    if spec.unit_fraction {
        return Ok(alpha);
    }
    let k = spec.k as f64;
    let rest = 1.0 - k * alpha;
    Ok(k * alpha * alpha + rest * rest)
}

/// Critical value Φ⁻¹(1 − α/2) of a two-sided level-α Wald test.
pub fn js_threshold(alpha: f64) -> f64 {
    std_normal_upper_quantile(alpha / 2.0)
}

/// Joint-significance (intersection-union) region as a region object.
pub fn js_region(alpha: f64) -> Result<RejectionRegion2D> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    RejectionRegion2D::new(
        alpha,
        RegionKind::JointSignificance,
        Vec::new(),
        OutsideRule::JointSignificance {
            threshold: js_threshold(alpha),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decision {
    pub reject: bool,
    pub p_value: f64,
}

/// Reject iff both |zx| and |zy| strictly exceed Φ⁻¹(1 − α/2); the p-value
/// is the larger of the two coordinate-wise two-sided p-values.
pub fn js_test(zx: f64, zy: f64, alpha: f64) -> Result<Decision> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let t = js_threshold(alpha);
    Ok(Decision {
        reject: zx.abs() > t && zy.abs() > t,
        p_value: js_pvalue(zx, zy),
    })
}

pub fn js_pvalue(zx: f64, zy: f64) -> f64 {
    two_sided_p(zx).max(two_sided_p(zy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobelResult {
    pub z: f64,
    pub p_value: f64,
    /// Set when the delta-method denominator vanishes.
    pub degenerate: bool,
}

/// Delta-method statistic Z = √n δ̂x δ̂y / √(δ̂y² s_x² + δ̂x² s_y²).
pub fn sobel_test(prov: &Provenance) -> SobelResult {
    let num = (prov.n as f64).sqrt() * prov.delta_x_hat * prov.delta_y_hat;
    let den = (prov.delta_y_hat.powi(2) * prov.se_x.powi(2)
        + prov.delta_x_hat.powi(2) * prov.se_y.powi(2))
    .sqrt();
    if !(den > 0.0) || !den.is_finite() {
        return SobelResult {
            z: 0.0,
            p_value: 1.0,
            degenerate: true,
        };
    }
    let z = num / den;
    SobelResult {
        z,
        p_value: two_sided_p(z),
        degenerate: false,
    }
}

/// Sobel statistic from a standardized pair with unit scale:
/// zx zy / √(zx² + zy²).
pub fn sobel_from_z(zx: f64, zy: f64) -> SobelResult {
    sobel_test(&Provenance {
        delta_x_hat: zx,
        delta_y_hat: zy,
        se_x: 1.0,
        se_y: 1.0,
        n: 1,
    })
}

//! Generalized p-values p̂ = ∫₀¹ I{z ∉ R_α} dα for the extended minimax
//! family, and familywise / false-discovery-rate adjustments.
//!
//! With t = 2(1 − Φ(|z|)) per coordinate, z lies in the extended region at
//! level α exactly when ⌊t_x/α⌋ = ⌊t_y/α⌋ (and neither coordinate is zero),
//! so the integral has the closed form evaluated by
//! [`minimax_pvalue_exact`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::closed_form::{build_extended_region, js_pvalue, sobel_test};
use crate::error::{Error, Result};
use crate::regions::{RejectionRegion2D, TestStatisticPair};
use crate::statmath::two_sided_p;

pub const DEFAULT_RESOLUTION: usize = 10_000;
pub const MIN_RESOLUTION: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PvalueMethod {
    ExtendedMinimax,
    Js,
    Sobel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PvalueResult {
    pub p: f64,
    /// Size of the α grid; `None` for closed-form values.
    pub resolution: Option<usize>,
    pub method: PvalueMethod,
}

type RegionTable = Arc<Vec<RejectionRegion2D>>;

fn cache() -> &'static Mutex<HashMap<usize, RegionTable>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, RegionTable>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Midpoints α_j = (j − ½)/resolution, j = 1..resolution.
pub fn alpha_grid(resolution: usize) -> Vec<f64> {
    (1..=resolution)
        .map(|j| (j as f64 - 0.5) / resolution as f64)
        .collect()
}

/// Extended regions on the midpoint α grid, built once per resolution.
pub fn extended_regions(resolution: usize) -> Result<RegionTable> {
    if let Some(t) = cache().lock().unwrap().get(&resolution) {
        return Ok(Arc::clone(t));
    }
    let built: Vec<RejectionRegion2D> = alpha_grid(resolution)
        .into_par_iter()
        .map(build_extended_region)
        .collect::<Result<_>>()?;
    let table = Arc::new(built);
    let mut guard = cache().lock().unwrap();
    Ok(Arc::clone(guard.entry(resolution).or_insert(table)))
}

/// Membership in the extended region at level α without building it.
pub fn extended_rejects(zx: f64, zy: f64, alpha: f64) -> bool {
    if zx == 0.0 || zy == 0.0 {
        return false;
    }
    let (tx, ty) = (two_sided_p(zx), two_sided_p(zy));
    (tx / alpha).floor() == (ty / alpha).floor()
}

/// Midpoint Riemann sum of I{z ∉ R_α} over the α grid.
pub fn minimax_pvalue(z: &TestStatisticPair, resolution: usize) -> Result<PvalueResult> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    let regions = extended_regions(resolution)?;
    let accepted = regions
        .iter()
        .filter(|r| r.rejection_prob(z.zx, z.zy) == 0.0)
        .count();
    Ok(PvalueResult {
        p: accepted as f64 / resolution as f64,
        resolution: Some(resolution),
        method: PvalueMethod::ExtendedMinimax,
    })
}

/// Riemann-sum p-values for many pairs in parallel.
pub fn minimax_pvalues(zs: &[TestStatisticPair], resolution: usize) -> Result<Vec<f64>> {
    extended_regions(resolution)?;
    zs.par_iter()
        .map(|z| minimax_pvalue(z, resolution).map(|r| r.p))
        .collect()
}

/// H_n, summed directly for small n and by its asymptotic series beyond.
fn harmonic(n: f64) -> f64 {
    if n < 100_000.0 {
        return (1..=n as u64).rev().map(|k| 1.0 / k as f64).sum();
    }
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let inv2 = 1.0 / (n * n);
    n.ln() + EULER_GAMMA + 0.5 / n - inv2 / 12.0 + inv2 * inv2 / 120.0
}

/// The exact value of ∫₀¹ I{z ∉ R_α} dα.
///
/// With a = min(t_x, t_y), b = max(t_x, t_y) and d = b − a, the rejection
/// set is (b, 1) together with (b/(j+1), a/j) for j = 1..N, N = ⌈a/d⌉ − 1,
/// so p̂ = b − Σ_{j≤N} (a/j − b/(j+1)) = a/(N+1) + d·H_{N+1}.
pub fn minimax_pvalue_exact(zx: f64, zy: f64) -> f64 {
    if zx == 0.0 || zy == 0.0 {
        return 1.0;
    }
    let (tx, ty) = (two_sided_p(zx), two_sided_p(zy));
    let (a, b) = (tx.min(ty), tx.max(ty));
    let d = b - a;
    if d == 0.0 {
        return 0.0;
    }
    let n = (a / d).ceil() - 1.0;
    // p̂ ≤ b exactly; the clamp absorbs rounding in the sum
    (a / (n + 1.0) + d * harmonic(n + 1.0)).clamp(0.0, b)
}

/// p-value of the chosen method; `resolution` applies to the extended
/// minimax Riemann sum, and `None` selects the closed form.
pub fn pvalue(
    z: &TestStatisticPair,
    method: PvalueMethod,
    resolution: Option<usize>,
) -> Result<PvalueResult> {
    match method {
        PvalueMethod::ExtendedMinimax => match resolution {
            Some(r) => minimax_pvalue(z, r),
            None => Ok(PvalueResult {
                p: minimax_pvalue_exact(z.zx, z.zy),
                resolution: None,
                method,
            }),
        },
        PvalueMethod::Js => Ok(PvalueResult {
            p: js_pvalue(z.zx, z.zy),
            resolution: None,
            method,
        }),
        PvalueMethod::Sobel => {
            let p = match &z.provenance {
                Some(prov) => sobel_test(prov).p_value,
                None => crate::closed_form::sobel_from_z(z.zx, z.zy).p_value,
            };
            Ok(PvalueResult {
                p,
                resolution: None,
                method,
            })
        }
    }
}

fn check_pvals(pvals: &[f64], level: f64, name: &str) -> Result<()> {
    if pvals.is_empty() {
        return Err(Error::InvalidArgument("no p-values given".into()));
    }
    if let Some((i, &p)) = pvals.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidProbability {
            field: format!("p[{i}]"),
            value: p,
        });
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidProbability {
            field: name.into(),
            value: level,
        });
    }
    Ok(())
}

/// Reject H_i when p_i ≤ α/n.
pub fn bonferroni(pvals: &[f64], alpha_fwer: f64) -> Result<Vec<bool>> {
    check_pvals(pvals, alpha_fwer, "alpha")?;
    let cut = alpha_fwer / pvals.len() as f64;
    Ok(pvals.iter().map(|&p| p <= cut).collect())
}

/// Benjamini–Hochberg step-up: with k the largest rank such that
/// p_(k) ≤ kq/n, reject every hypothesis with p ≤ p_(k).
pub fn benjamini_hochberg(pvals: &[f64], q: f64) -> Result<Vec<bool>> {
    check_pvals(pvals, q, "q")?;
    let n = pvals.len();
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = (1..=n)
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * q / n as f64)
        .map(|k| sorted[k - 1]);
    Ok(match cut {
        Some(c) => pvals.iter().map(|&p| p <= c).collect(),
        None => vec![false; n],
    })
}

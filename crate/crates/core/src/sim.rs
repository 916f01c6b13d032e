//! Monte Carlo harness: power curves, p-value ECDFs and Sobel-statistic
//! samples, written as CSV.
//!
//! Every (parameter point, block of 1000 replicates) pair owns a ChaCha8
//! stream selected by `set_stream`, so results do not depend on the number
//! of worker threads or their scheduling. All methods see the same draws.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::closed_form::{
    build_extended_region, build_minimax_region, js_pvalue, js_threshold, sobel_from_z, AlphaSpec,
};
use crate::error::{Error, Result};
use crate::pvalue::{minimax_pvalue_exact, minimax_pvalues};
use crate::regions::{RejectionRegion2D, TestStatisticPair};

pub const THREADS_ENV: &str = "COMPOSITE_NULL_THREADS";
const BLOCK: usize = 1000;

/// Worker pool, capped by `COMPOSITE_NULL_THREADS` when set.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            b = b.num_threads(n);
        }
        b.build().expect("failed to start worker pool")
    })
}

fn stream_rng(seed: u64, point: usize, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | block as u64);
    rng
}

fn blocks(reps: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..reps.div_ceil(BLOCK)).map(move |b| (b, BLOCK.min(reps - b * BLOCK)))
}

#[derive(Debug, Clone)]
pub enum SimMethod {
    Minimax,
    Extended,
    Bayes {
        region: Arc<RejectionRegion2D>,
        derandomize: bool,
    },
    Js,
    Sobel,
}

impl SimMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SimMethod::Minimax => "minimax",
            SimMethod::Extended => "extended",
            SimMethod::Bayes { .. } => "bayes",
            SimMethod::Js => "js",
            SimMethod::Sobel => "sobel",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimSpec {
    pub methods: Vec<SimMethod>,
    pub delta_grid: Vec<(f64, f64)>,
    pub alpha: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub delta_x: f64,
    pub delta_y: f64,
    pub method: String,
    pub alpha: f64,
    pub n: usize,
    pub reps: usize,
    pub reject_rate: f64,
    pub mc_se: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub rows: Vec<SimRow>,
}

impl SimResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, method: &str, delta: (f64, f64)) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.delta_x, r.delta_y) == delta)
    }
}

enum Decider {
    Region(Arc<RejectionRegion2D>, bool),
    Js(f64),
    Sobel(f64),
}

impl Decider {
    fn rejects(&self, zx: f64, zy: f64, u: f64) -> bool {
        match self {
            Decider::Region(r, derandomize) => {
                let p = r.rejection_prob(zx, zy);
                if *derandomize {
                    p == 1.0
                } else {
                    u < p
                }
            }
            Decider::Js(t) => zx.abs() > *t && zy.abs() > *t,
            Decider::Sobel(t) => sobel_from_z(zx, zy).z.abs() > *t,
        }
    }
}

fn decider(m: &SimMethod, alpha: f64) -> Result<Decider> {
    Ok(match m {
        SimMethod::Minimax => {
            Decider::Region(Arc::new(build_minimax_region(&AlphaSpec::new(alpha)?)?), false)
        }
        SimMethod::Extended => Decider::Region(Arc::new(build_extended_region(alpha)?), false),
        SimMethod::Bayes {
            region,
            derandomize,
        } => {
            if (region.alpha() - alpha).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "Bayes region was solved for alpha = {}, simulation uses {alpha}",
                    region.alpha()
                )));
            }
            Decider::Region(Arc::clone(region), *derandomize)
        }
        SimMethod::Js => Decider::Js(js_threshold(alpha)),
        SimMethod::Sobel => Decider::Sobel(js_threshold(alpha)),
    })
}

/// One replicate: z = √n · (mean of n draws from N((δx, δy), I)), plus an
/// auxiliary uniform for randomized cells.
fn draw_z(rng: &mut ChaCha8Rng, delta: (f64, f64), n: usize) -> (f64, f64, f64) {
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..n {
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        sx += delta.0 + ex;
        sy += delta.1 + ey;
    }
    let rn = (n as f64).sqrt();
    let u: f64 = rng.random();
    (sx / rn, sy / rn, u)
}

pub fn simulate_power(spec: &SimSpec) -> Result<SimResult> {
    if spec.reps == 0 || spec.n == 0 {
        return Err(Error::InvalidArgument("reps and n must be positive".into()));
    }
    if spec.delta_grid.is_empty() || spec.methods.is_empty() {
        return Err(Error::InvalidArgument("empty delta grid or method list".into()));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::InvalidAlpha(spec.alpha));
    }
    let deciders: Vec<Decider> = spec
        .methods
        .iter()
        .map(|m| decider(m, spec.alpha))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..spec.delta_grid.len())
        .flat_map(|p| blocks(spec.reps).map(move |(b, len)| (p, b, len)))
        .collect();
    let counts: Vec<(usize, Vec<u64>)> = pool().install(|| {
        jobs.par_iter()
            .map(|&(p, b, len)| {
                let mut rng = stream_rng(spec.seed, p, b);
                let mut hits = vec![0u64; deciders.len()];
                for _ in 0..len {
                    let (zx, zy, u) = draw_z(&mut rng, spec.delta_grid[p], spec.n);
                    for (h, d) in hits.iter_mut().zip(&deciders) {
                        *h += d.rejects(zx, zy, u) as u64;
                    }
                }
                (p, hits)
            })
            .collect()
    });

    let mut totals = vec![vec![0u64; deciders.len()]; spec.delta_grid.len()];
    for (p, hits) in counts {
        for (t, h) in totals[p].iter_mut().zip(hits) {
            *t += h;
        }
    }
    let mut rows = Vec::new();
    for (p, &(dx, dy)) in spec.delta_grid.iter().enumerate() {
        for (k, m) in spec.methods.iter().enumerate() {
            let rate = totals[p][k] as f64 / spec.reps as f64;
            rows.push(SimRow {
                delta_x: dx,
                delta_y: dy,
                method: m.name().to_string(),
                alpha: spec.alpha,
                n: spec.n,
                reps: spec.reps,
                reject_rate: rate,
                mc_se: (rate * (1.0 - rate) / spec.reps as f64).sqrt(),
                seed: spec.seed,
            });
        }
    }
    Ok(SimResult { rows })
}

/// Standardized pairs z ~ N(δ*, I), deterministic in `seed`.
pub fn null_draws(reps: usize, delta_star: (f64, f64), seed: u64) -> Vec<TestStatisticPair> {
    let per_block: Vec<Vec<TestStatisticPair>> = pool().install(|| {
        blocks(reps)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(b, len)| {
                let mut rng = stream_rng(seed, 0, b);
                (0..len)
                    .map(|_| {
                        let ex: f64 = rng.sample(StandardNormal);
                        let ey: f64 = rng.sample(StandardNormal);
                        TestStatisticPair::new(delta_star.0 + ex, delta_star.1 + ey)
                    })
                    .collect()
            })
            .collect()
    });
    per_block.concat()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcdfRow {
    pub method: String,
    pub p_value: f64,
    pub ecdf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcdfTable {
    pub rows: Vec<EcdfRow>,
}

impl EcdfTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Sorted p-values of one method.
    pub fn values(&self, method: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.p_value)
            .collect()
    }
}

fn ecdf_rows(method: &str, mut ps: Vec<f64>) -> Vec<EcdfRow> {
    ps.sort_by(f64::total_cmp);
    let n = ps.len() as f64;
    ps.into_iter()
        .enumerate()
        .map(|(i, p)| EcdfRow {
            method: method.to_string(),
            p_value: p,
            ecdf: (i + 1) as f64 / n,
        })
        .collect()
}

/// ECDFs of the extended-minimax and joint-significance p-values at δ*.
/// `resolution` selects the Riemann sum; `None` uses the closed form.
pub fn simulate_pvalue_ecdf(
    reps: usize,
    delta_star: (f64, f64),
    resolution: Option<usize>,
    seed: u64,
) -> Result<EcdfTable> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let zs = null_draws(reps, delta_star, seed);
    let mm = match resolution {
        Some(r) => pool().install(|| minimax_pvalues(&zs, r))?,
        None => zs.iter().map(|z| minimax_pvalue_exact(z.zx, z.zy)).collect(),
    };
    let js = zs.iter().map(|z| js_pvalue(z.zx, z.zy)).collect();
    let mut rows = ecdf_rows("extended_minimax", mm);
    rows.extend(ecdf_rows("js", js));
    Ok(EcdfTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobelDraw {
    /// √n δ̂x δ̂y / √(δ̂y² s_x² + δ̂x² s_y²).
    pub z: f64,
    /// n δ̂x δ̂y / (s_x s_y), the rescaled product estimator.
    pub product: f64,
}

/// Sobel statistics from samples X ~ N(δx, 1), Y ~ N(0, 1) of size n with
/// estimated standard deviations. `stream` separates independent batches.
pub fn sobel_draws(delta_x: f64, n: usize, reps: usize, seed: u64, stream: usize) -> Result<Vec<SobelDraw>> {
    if n < 2 || reps == 0 {
        return Err(Error::InvalidArgument("need n >= 2 and reps >= 1".into()));
    }
    let per_block: Vec<Vec<SobelDraw>> = pool().install(|| {
        blocks(reps)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(b, len)| {
                let mut rng = stream_rng(seed, stream, b);
                let mut xs = vec![0.0; n];
                let mut ys = vec![0.0; n];
                (0..len)
                    .map(|_| {
                        for i in 0..n {
                            let ex: f64 = rng.sample(StandardNormal);
                            let ey: f64 = rng.sample(StandardNormal);
                            xs[i] = delta_x + ex;
                            ys[i] = ey;
                        }
                        let (mx, vx) = mean_var(&xs);
                        let (my, vy) = mean_var(&ys);
                        let nn = n as f64;
                        let den = (my * my * vx + mx * mx * vy).sqrt();
                        let z = if den > 0.0 { nn.sqrt() * mx * my / den } else { 0.0 };
                        SobelDraw {
                            z,
                            product: nn * mx * my / (vx * vy).sqrt(),
                        }
                    })
                    .collect()
            })
            .collect()
    });
    Ok(per_block.concat())
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub delta_x: f64,
    pub sample: f64,
}

/// Long-format Sobel Z samples, one batch per δx.
pub fn sample_sobel_density(
    delta_x_list: &[f64],
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<DensityRow>> {
    let mut rows = Vec::with_capacity(delta_x_list.len() * reps);
    for (k, &dx) in delta_x_list.iter().enumerate() {
        for d in sobel_draws(dx, n, reps, seed, k)? {
            rows.push(DensityRow {
                delta_x: dx,
                sample: d.z,
            });
        }
    }
    Ok(rows)
}

pub fn write_rows<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

//! Acceptance checks. Each criterion prints one PASS/FAIL line; the test
//! fails if any line is FAIL.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use compnull::bayes_lp::{assemble_bayes_region, build_lp, solve_lp};
use compnull::closed_form::{
    build_extended_region, build_minimax_region, js_pvalue, js_region, AlphaSpec,
};
use compnull::gof::{dkw_epsilon, ks_one_sample, ks_two_sample};
use compnull::latin3::{build_latin_region, cyclic_latin};
use compnull::pvalue::{minimax_pvalue_exact, DEFAULT_RESOLUTION};
use compnull::regions::RuleBox;
use compnull::sim::{null_draws, simulate_power, simulate_pvalue_ecdf, sobel_draws, SimMethod, SimSpec};
use compnull::simplex::LpStatus;
use compnull::statmath::{std_normal_cdf, std_normal_quantile};
use compnull::{Interval, OutsideRule, RegionKind, RejectionRegion2D, WeightedRect};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bayes_alpha0.05_m65.region.json");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn run(id: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match res {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    // written to the handle directly so the report survives output capture
    let line = format!(
        "criterion {id:>2} {} {title}: {detail} [{secs:.2} s]\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

fn similarity() -> Outcome {
    let start = Instant::now();
    let grid: Vec<f64> = (0..=240).map(|i| -6.0 + 0.05 * i as f64).collect();
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 0.1, 0.05, 0.01] {
        let r = build_minimax_region(&AlphaSpec::new(alpha).unwrap()).unwrap();
        for &t in &grid {
            worst = worst
                .max((r.analytic_power(t, 0.0) - alpha).abs())
                .max((r.analytic_power(0.0, t) - alpha).abs());
        }
    }
    let el = start.elapsed();
    outcome(
        worst <= 1e-10 && within(el, 1.0),
        format!("max |power − α| = {worst:.2e} (tol 1e-10) over 2×241 null points, 4 levels, {:.3} s (limit 1 s)", el.as_secs_f64()),
    )
}

fn worked_example() -> Outcome {
    let zx = std_normal_quantile(4.0 / 5.0).unwrap();
    let zy = std_normal_quantile(5.0 / 7.0).unwrap();
    let third = build_minimax_region(&AlphaSpec::unit(3).unwrap()).unwrap();
    let half = build_minimax_region(&AlphaSpec::unit(2).unwrap()).unwrap();
    let (r3, r2) = (third.rejection_prob(zx, zy) == 1.0, half.rejection_prob(zx, zy) == 1.0);
    outcome(
        r3 && !r2,
        format!("α=1/3 rejects: {r3} (want true), α=1/2 rejects: {r2} (want false)"),
    )
}

fn extended_origin() -> Outcome {
    let start = Instant::now();
    let formula = |a: f64| {
        let k = (1.0 / a).floor();
        k * a * a + (1.0 - k * a).powi(2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a: f64 = rng.random_range(0.002..1.0);
        let r = build_extended_region(a).unwrap();
        worst = worst.max((r.analytic_power(0.0, 0.0) - formula(a)).abs());
    }
    let three_q = build_extended_region(0.75).unwrap().analytic_power(0.0, 0.0);
    // the gap is maximal inside each band (1/(K+1), 1/K] at α = (2K+1)/(2K(K+1))
    let mut alphas: Vec<f64> = (1..=4000).map(|i| 0.05 * i as f64 / 4000.0).filter(|&a| a >= 0.002).collect();
    alphas.extend((20..=500).map(|k| {
        let k = k as f64;
        (2.0 * k + 1.0) / (2.0 * k * (k + 1.0))
    }));
    let gap = alphas
        .par_iter()
        .map(|&a| a - build_extended_region(a).unwrap().analytic_power(0.0, 0.0))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let el = start.elapsed();
    let bound = 1.0 / 1680.0;
    outcome(
        worst <= 1e-12 && (three_q - 0.625).abs() <= 1e-12 && gap <= bound + 1e-12 && within(el, 10.0),
        format!(
            "formula error {worst:.2e} (tol 1e-12) on 1000 α; α=3/4 gives {three_q:.15}; max gap {gap:.12e} vs 1/1680 = {bound:.12e}; {:.2} s (limit 10 s)",
            el.as_secs_f64()
        ),
    )
}

fn js_baselines() -> Outcome {
    let mut origin_err: f64 = 0.0;
    let mut type2_err: f64 = 0.0;
    let near = [1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0];
    let axis: Vec<f64> = near.iter().flat_map(|&v| [v, -v]).collect();
    for alpha in [0.01, 0.05, 0.1, 0.5] {
        let r = js_region(alpha).unwrap();
        origin_err = origin_err.max((r.analytic_power(0.0, 0.0) - alpha * alpha).abs());
        let worst_type2 = axis
            .iter()
            .flat_map(|&x| axis.iter().map(move |&y| (x, y)))
            .map(|(x, y)| 1.0 - r.analytic_power(x, y))
            .fold(0.0, f64::max);
        type2_err = type2_err.max((worst_type2 - (1.0 - alpha * alpha)).abs());
    }
    outcome(
        origin_err <= 1e-12 && type2_err <= 1e-6,
        format!("origin |power − α²| = {origin_err:.2e} (tol 1e-12); worst type-2 vs 1 − α²: {type2_err:.2e} (tol 1e-6)"),
    )
}

fn dihedral_asymmetry(r: &RejectionRegion2D) -> f64 {
    let g: Vec<f64> = (-8..=8).map(|i| 0.5 * i as f64).collect();
    let mut worst: f64 = 0.0;
    for &x in &g {
        for &y in &g {
            let p = r.analytic_power(x, y);
            for (a, b) in [(y, x), (-x, y), (x, -y), (-y, -x)] {
                worst = worst.max((p - r.analytic_power(a, b)).abs());
            }
        }
    }
    worst
}

fn bayes_lp() -> Outcome {
    let start = Instant::now();
    let p = build_lp(0.05, 65, 2.0, 130).unwrap();
    let s = solve_lp(&p).unwrap();
    let el = start.elapsed();
    let optimal = s.solver_status == LpStatus::Optimal;
    let min_slack = p
        .row_values(&s.m_r)
        .iter()
        .zip(&p.rhs)
        .map(|(lhs, rhs)| rhs - lhs)
        .fold(f64::INFINITY, f64::min);
    let region = assemble_bayes_region(&p, &s, false).unwrap();
    let region_excess = p
        .null_grid
        .iter()
        .map(|&(x, y)| region.analytic_power(x, y) - p.alpha)
        .fold(f64::NEG_INFINITY, f64::max);
    let near = s.m_r.iter().filter(|&&v| v <= 1e-6 || v >= 1.0 - 1e-6).count() as f64 / s.m_r.len() as f64;
    let cand = p.js_candidate();
    let cand_slack = p
        .row_values(&cand)
        .iter()
        .zip(&p.rhs)
        .map(|(lhs, rhs)| rhs - lhs)
        .fold(f64::INFINITY, f64::min);
    let js_obj = p.objective_value(&cand);
    let asym = dihedral_asymmetry(&region);
    let fixture = RejectionRegion2D::read_file(FIXTURE).unwrap();
    let fixture_excess = p
        .null_grid
        .iter()
        .map(|&(x, y)| fixture.analytic_power(x, y) - p.alpha)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        optimal
            && min_slack >= -1e-8
            && region_excess <= 1e-8
            && near >= 0.95
            && cand_slack >= -1e-8
            && s.objective_value <= js_obj
            && asym <= 1e-3
            && fixture_excess <= 1e-8
            && within(el, 600.0),
        format!(
            "status {}; min slack {min_slack:.2e} (≥ −1e-8); region power − α ≤ {region_excess:.2e}; {:.2}% cells within 1e-6 of {{0,1}} (≥ 95%); objective {:.6} ≤ JS candidate {js_obj:.6} (slack {cand_slack:.1e}); dihedral asymmetry {asym:.2e} (≤ 1e-3); fixture power − α ≤ {fixture_excess:.2e}; solve {:.1} s (limit 600 s)",
            s.solver_status,
            100.0 * near,
            s.objective_value,
            el.as_secs_f64()
        ),
    )
}

fn simulation_study() -> Outcome {
    let start = Instant::now();
    let bayes = Arc::new(RejectionRegion2D::read_file(FIXTURE).unwrap());
    let deltas: Vec<(f64, f64)> = (0..=8).map(|i| (0.05 * i as f64, 0.05 * i as f64)).collect();
    let spec = SimSpec {
        methods: vec![
            SimMethod::Minimax,
            SimMethod::Bayes { region: bayes, derandomize: false },
            SimMethod::Js,
        ],
        delta_grid: deltas.clone(),
        alpha: 0.05,
        n: 50,
        reps: 100_000,
        seed: 20_240_601,
    };
    let res = simulate_power(&spec).unwrap();
    let el = start.elapsed();
    let rate = |m: &str, d: (f64, f64)| res.get(m, d).unwrap().reject_rate;
    let (mmo0, bro0, js0) = (rate("minimax", (0.0, 0.0)), rate("bayes", (0.0, 0.0)), rate("js", (0.0, 0.0)));
    let mut max_diff: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for &d in &deltas {
        let (m, b, j) = (rate("minimax", d), rate("bayes", d), rate("js", d));
        max_diff = max_diff.max((m - b).abs());
        if d.0 <= 0.2 + 1e-12 {
            min_margin = min_margin.min(m - j).min(b - j);
        }
    }
    outcome(
        (mmo0 - 0.05).abs() <= 0.005
            && (bro0 - 0.05).abs() <= 0.005
            && (js0 - 0.0025).abs() <= 0.001
            && max_diff <= 0.01
            && min_margin >= 0.01
            && within(el, 300.0),
        format!(
            "δ=0: MMO {mmo0:.4}, BRO {bro0:.4} (0.05 ± 0.005), JS {js0:.4} (0.0025 ± 0.001); max |MMO − BRO| {max_diff:.4} (≤ 0.01); min margin over JS for δ ≤ 0.2: {min_margin:.4} (≥ 0.01); {:.1} s (limit 300 s)",
            el.as_secs_f64()
        ),
    )
}

fn pvalue_dominance() -> Outcome {
    let start = Instant::now();
    let reps = 10_000;
    let eps = dkw_epsilon(reps, 0.99);
    let table = simulate_pvalue_ecdf(reps, (0.0, 0.0), Some(DEFAULT_RESOLUTION), 11).unwrap();
    let excess = |sorted: &[f64]| {
        let n = sorted.len() as f64;
        sorted
            .iter()
            .enumerate()
            .map(|(i, &p)| (i + 1) as f64 / n - p)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let grid_excess = excess(&table.values("extended_minimax"));
    let zs = null_draws(reps, (0.0, 0.0), 11);
    let mut exact: Vec<f64> = zs.iter().map(|z| minimax_pvalue_exact(z.zx, z.zy)).collect();
    let violations = zs
        .iter()
        .zip(&exact)
        .filter(|(z, &p)| js_pvalue(z.zx, z.zy) < p)
        .count();
    exact.sort_by(f64::total_cmp);
    let exact_excess = excess(&exact);
    let el = start.elapsed();
    outcome(
        grid_excess <= eps && exact_excess <= eps && violations == 0 && within(el, 300.0),
        format!(
            "sup(ECDF − t): grid {grid_excess:.4}, closed form {exact_excess:.4} (DKW 99% ε = {eps:.4}); JS p < p̂ on {violations}/{reps} draws; {:.1} s (limit 300 s)",
            el.as_secs_f64()
        ),
    )
}

fn latin_similarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut consistency = f64::INFINITY;
    for k in 2..=5 {
        let square = cyclic_latin(k).unwrap().normalize_corner().0;
        let alpha = 1.0 / k as f64;
        let region = build_latin_region(&square, alpha).unwrap();
        for axis in 0..3 {
            for _ in 0..50 {
                let mut d = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), 0.0];
                d.swap(2, axis);
                worst = worst.max((region.analytic_power3(d) - alpha).abs());
            }
        }
        consistency = consistency.min(region.analytic_power3([10.0, 10.0, 10.0]));
    }
    let square = cyclic_latin(3).unwrap().normalize_corner().0;
    let region = build_latin_region(&square, 1.0 / 3.0).unwrap();
    let counter = region
        .permutation_counterexample()
        .map(|(a, b)| region.rejects(a) != region.rejects(b))
        .unwrap_or(false);
    outcome(
        worst <= 1e-10 && consistency >= 0.999 && counter && !square.is_totally_symmetric(),
        format!(
            "max |power − α| = {worst:.2e} (tol 1e-10) over 3×50 null points, K=2..5; min power at (10,10,10) {consistency:.6} (≥ 0.999); K=3 counterexample found: {counter}"
        ),
    )
}

fn sobel_check() -> Outcome {
    let alt: Vec<f64> = sobel_draws(0.3, 100, 1000, 5, 0).unwrap().iter().map(|d| d.z).collect();
    let ks_alt = ks_one_sample(&alt, std_normal_cdf).unwrap();
    let null = sobel_draws(0.0, 100, 2000, 5, 1).unwrap();
    let z: Vec<f64> = null.iter().map(|d| d.z).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (z.len() - 1) as f64;
    let product: Vec<f64> = null.iter().map(|d| d.product).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reference: Vec<f64> = (0..20_000)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let ks_prod = ks_two_sample(&product, &reference).unwrap();
    outcome(
        ks_alt.p_value > 0.01 && var < 0.5 && ks_prod.p_value > 0.01,
        format!(
            "δx=0.3: KS D {:.4}, p {:.3} (> 0.01, 1000 reps); δx=0: variance {var:.3} (< 0.5); product vs W1·W2 two-sample KS p {:.3} (> 0.01)",
            ks_alt.statistic, ks_alt.p_value, ks_prod.p_value
        ),
    )
}

fn random_region(rng: &mut ChaCha8Rng) -> RejectionRegion2D {
    let axis = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(2..=6);
        let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        if rng.random_bool(0.3) {
            b.push(f64::NEG_INFINITY);
        }
        if rng.random_bool(0.3) {
            b.push(f64::INFINITY);
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    };
    let (xs, ys) = (axis(rng), axis(rng));
    let mut cells = Vec::new();
    for wx in xs.windows(2) {
        for wy in ys.windows(2) {
            if rng.random_bool(0.5) {
                let p = if rng.random_bool(0.7) { 1.0 } else { rng.random_range(0.05..0.95) };
                cells.push(WeightedRect::new(
                    Interval::new(wx[0], wx[1]).unwrap(),
                    Interval::new(wy[0], wy[1]).unwrap(),
                    p,
                ));
            }
        }
    }
    if rng.random_bool(0.3) {
        let bx = RuleBox {
            x: Interval::new(xs[0], xs[xs.len() - 1]).unwrap(),
            y: Interval::new(ys[0], ys[ys.len() - 1]).unwrap(),
        };
        let threshold = rng.random_range(0.5..2.5);
        RejectionRegion2D::with_rule_box(
            0.05,
            RegionKind::Custom,
            cells,
            OutsideRule::JointSignificance { threshold },
            Some(bx),
        )
        .unwrap()
    } else {
        RejectionRegion2D::new(0.05, RegionKind::Custom, cells, OutsideRule::None).unwrap()
    }
}

fn oracle_equivalence() -> Outcome {
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal), rng.random::<f64>()))
        .collect();
    let cases: Vec<(RejectionRegion2D, Vec<(f64, f64)>)> = (0..100)
        .map(|_| {
            let r = random_region(&mut rng);
            let ds = (0..10)
                .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            (r, ds)
        })
        .collect();
    let worst = cases
        .par_iter()
        .flat_map_iter(|(r, ds)| {
            let draws = &draws;
            ds.iter().map(move |&(dx, dy)| {
                let hits = draws.iter().filter(|&&(ex, ey, u)| r.decide(dx + ex, dy + ey, u)).count();
                let mc = hits as f64 / n as f64;
                let p = r.analytic_power(dx, dy);
                let se = (p * (1.0 - p) / n as f64).sqrt();
                let diff = (mc - p).abs();
                if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY }
            })
        })
        .reduce(|| 0.0, f64::max);
    outcome(
        worst <= 4.0,
        format!("max |MC − analytic| = {worst:.2} SE (≤ 4) over 100 regions × 10 δ*, 1e6 shared draws"),
    )
}

#[test]
fn acceptance_criteria() {
    let results = [
        run(1, "similarity of the minimax region", similarity),
        run(2, "worked example decisions", worked_example),
        run(3, "extended region origin power", extended_origin),
        run(4, "joint-significance baselines", js_baselines),
        run(5, "Bayes linear program", bayes_lp),
        run(6, "power simulation", simulation_study),
        run(7, "p-value dominance", pvalue_dominance),
        run(8, "Latin-square similarity", latin_similarity),
        run(9, "Sobel statistic shape", sobel_check),
        run(10, "analytic power vs Monte Carlo", oracle_equivalence),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

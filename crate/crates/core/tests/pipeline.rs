use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use compnull::closed_form::{build_extended_region, build_minimax_region, js_region, AlphaSpec};
use compnull::gof::ks_one_sample;
use compnull::mediation::{load_csv, product_method_stats, CsvSchema, MediationDataset, MediationModel};
use compnull::statmath::std_normal_cdf;
use compnull::{RegionKind, RejectionRegion2D};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bayes_alpha0.05_m65.region.json");

fn simulate(rng: &mut ChaCha8Rng, n: usize, a_to_m: f64, m_to_y: f64) -> MediationDataset {
    let mut d = MediationDataset {
        y: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        m: Vec::with_capacity(n),
        covariate_names: vec!["c".into()],
        covariates: vec![Vec::with_capacity(n)],
    };
    for _ in 0..n {
        let a = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let c: f64 = rng.sample(StandardNormal);
        let m = a_to_m * a + 0.5 * c + rng.sample::<f64, _>(StandardNormal);
        let y = 0.3 * a + m_to_y * m - 0.2 * c + rng.sample::<f64, _>(StandardNormal);
        d.a.push(a);
        d.m.push(m);
        d.y.push(y);
        d.covariates[0].push(c);
    }
    d
}

#[test]
fn wald_statistics_are_standard_normal_on_each_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut zy_null, mut zx_null) = (Vec::new(), Vec::new());
    for _ in 0..600 {
        let (_, z) = product_method_stats(&simulate(&mut rng, 300, 0.0, 0.4), MediationModel::MainEffects).unwrap();
        zy_null.push(z.zy);
        let (_, z) = product_method_stats(&simulate(&mut rng, 300, 0.4, 0.0), MediationModel::MainEffects).unwrap();
        zx_null.push(z.zx);
    }
    for (name, s) in [("zy", &zy_null), ("zx", &zx_null)] {
        let ks = ks_one_sample(s, std_normal_cdf).unwrap();
        assert!(ks.p_value > 0.01, "{name}: D = {}, p = {}", ks.statistic, ks.p_value);
    }
}

#[test]
fn csv_to_decision_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = simulate(&mut rng, 200, 0.5, 0.5);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "id,y,a,m,c").unwrap();
    for i in 0..d.len() {
        writeln!(file, "{i},{},{},{},{}", d.y[i], d.a[i], d.m[i], d.covariates[0][i]).unwrap();
    }
    file.flush().unwrap();
    let schema = CsvSchema {
        y: "y".into(),
        a: "a".into(),
        m: "m".into(),
        covariates: vec!["c".into()],
    };
    let loaded = load_csv(file.path(), &schema).unwrap();
    assert_eq!(loaded, d);
    let (fit, z) = product_method_stats(&loaded, MediationModel::MainEffects).unwrap();
    assert!(z.zx > 2.0 && z.zy > 2.0, "{fit:?}");

    let dir = tempfile::tempdir().unwrap();
    let regions = [
        build_minimax_region(&AlphaSpec::new(0.05).unwrap()).unwrap(),
        build_extended_region(0.04).unwrap(),
        js_region(0.05).unwrap(),
        RejectionRegion2D::read_file(FIXTURE).unwrap(),
    ];
    for r in &regions {
        let path = dir.path().join(format!("{}.json", r.kind()));
        r.write_file(&path).unwrap();
        let back = RejectionRegion2D::read_file(&path).unwrap();
        assert_eq!(back.kind(), r.kind());
        assert_eq!(back.cells(), r.cells());
        assert_eq!(back.outside_rule(), r.outside_rule());
        assert_eq!(back.rejection_prob(z.zx, z.zy), r.rejection_prob(z.zx, z.zy));
        for _ in 0..200 {
            let (x, y): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            assert_eq!(back.rejection_prob(x, y), r.rejection_prob(x, y));
        }
    }
}

#[test]
fn bayes_fixture_is_a_level_alpha_region() {
    let r = RejectionRegion2D::read_file(FIXTURE).unwrap();
    assert_eq!(r.kind(), RegionKind::Bayes);
    assert_eq!(r.alpha(), 0.05);
    assert!(r.rule_box().is_some());
    // a finer null grid than the one the program was solved on
    let mut worst: f64 = 0.0;
    for i in 0..=1200 {
        let t = -6.0 + 0.01 * i as f64;
        worst = worst.max(r.analytic_power(t, 0.0)).max(r.analytic_power(0.0, t));
    }
    assert!(worst <= 0.05 + 1e-4, "worst null power {worst}");
    assert!((r.analytic_power(0.0, 0.0) - 0.05).abs() < 1e-4);
    assert!(r.analytic_power(5.0, 5.0) > 0.99);
}

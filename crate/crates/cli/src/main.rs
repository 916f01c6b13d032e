use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use compnull::bayes_lp::{assemble_bayes_region, build_lp, solve_lp};
use compnull::closed_form::{
    build_extended_region, build_minimax_region, js_region, js_test, sobel_from_z, AlphaSpec,
};
use compnull::latin3::{build_latin_region, cyclic_latin, LatinSquare};
use compnull::mediation::{load_csv, product_method_stats, CsvSchema, MediationModel};
use compnull::pvalue::{
    benjamini_hochberg, bonferroni, minimax_pvalue, minimax_pvalue_exact, DEFAULT_RESOLUTION,
};
use compnull::sim::{
    sample_sobel_density, simulate_power, simulate_pvalue_ecdf, write_rows, SimMethod, SimSpec,
};
use compnull::{Error, RejectionRegion2D, TestStatisticPair};

#[derive(Parser)]
#[command(name = "compnull", version, about = "Tests of the composite null δx·δy = 0")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save rejection regions.
    #[command(subcommand)]
    Region(RegionCmd),
    /// Apply a two-dimensional test to a standardized pair.
    Test(TestArgs),
    /// Apply the Latin-square test to a standardized triple.
    Test3(Test3Args),
    /// Generalized p-value of the extended minimax test.
    Pvalue(PvalueArgs),
    /// Multiplicity adjustment of a column of p-values.
    Adjust(AdjustArgs),
    /// Solve the discretized Bayes-risk program.
    #[command(subcommand)]
    Bayes(BayesCmd),
    /// Fit mediator and outcome models and report (zx, zy).
    Fit(FitArgs),
    /// Monte Carlo studies written as CSV.
    #[command(subcommand)]
    Simulate(SimulateCmd),
}

#[derive(Subcommand)]
enum RegionCmd {
    Build(RegionBuildArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionMethod {
    Minimax,
    Extended,
    Js,
}

#[derive(Args)]
struct RegionBuildArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "minimax")]
    method: RegionMethod,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TestMethod {
    Minimax,
    Extended,
    Js,
    Sobel,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, allow_hyphen_values = true)]
    zx: f64,
    #[arg(long, allow_hyphen_values = true)]
    zy: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "minimax")]
    method: TestMethod,
    /// Region document; overrides --method and --alpha.
    #[arg(long)]
    region: Option<PathBuf>,
    /// Uniform draw for randomized cells; without it only cells with
    /// probability one reject.
    #[arg(long)]
    u: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Test3Args {
    /// Comma-separated z1,z2,z3.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    z: Vec<f64>,
    #[arg(long)]
    alpha: f64,
    /// `cyclic` (corner-normalized) or a JSON file with a row-major square.
    #[arg(long, default_value = "cyclic")]
    square: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PvalueArgs {
    #[arg(long, allow_hyphen_values = true)]
    zx: f64,
    #[arg(long, allow_hyphen_values = true)]
    zy: f64,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdjustMethod {
    Bh,
    Bonferroni,
}

#[derive(Args)]
struct AdjustArgs {
    #[arg(value_enum)]
    method: AdjustMethod,
    /// FDR level for bh, familywise level for bonferroni.
    #[arg(long)]
    q: f64,
    /// CSV with a header `p` and one p-value per line.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BayesCmd {
    Solve(BayesSolveArgs),
}

#[derive(Args)]
struct BayesSolveArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 65)]
    m: usize,
    #[arg(long = "prior-sd", default_value_t = 2.0)]
    prior_sd: f64,
    /// Null-grid points per half-axis; defaults to 2m.
    #[arg(long = "grid-points")]
    grid_points: Option<usize>,
    /// Zero out fractional cells.
    #[arg(long)]
    derandomize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    y: String,
    #[arg(long)]
    a: String,
    #[arg(long)]
    m: String,
    #[arg(long, value_delimiter = ',')]
    covars: Vec<String>,
    #[arg(long)]
    interaction: bool,
    #[arg(long = "a-prime", default_value_t = 1.0, allow_hyphen_values = true)]
    a_prime: f64,
    #[arg(long = "a-dblprime", default_value_t = 0.0, allow_hyphen_values = true)]
    a_dblprime: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimulateCmd {
    Power(PowerArgs),
    Ecdf(EcdfArgs),
    SobelDensity(SobelArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SimMethodArg {
    Minimax,
    Extended,
    Bayes,
    Js,
    Sobel,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "minimax,js")]
    methods: Vec<SimMethodArg>,
    /// Points `dx:dy` separated by commas; defaults to δx = δy = 0, 0.05, …, 0.4.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    deltas: Vec<String>,
    /// Region document for the bayes method.
    #[arg(long = "bayes-region")]
    bayes_region: Option<PathBuf>,
    #[arg(long)]
    derandomize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EcdfArgs {
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long = "delta-x", default_value_t = 0.0, allow_hyphen_values = true)]
    delta_x: f64,
    #[arg(long = "delta-y", default_value_t = 0.0, allow_hyphen_values = true)]
    delta_y: f64,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Use the closed-form p-value instead of the α-grid sum.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SobelArgs {
    #[arg(long = "delta-x", value_delimiter = ',', default_value = "0,0.1,0.2,0.3")]
    delta_x: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidAlpha(_) | Error::NotUnitFraction(_) | Error::InvalidArgument(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn sink(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json(value: &serde_json::Value, out: &Option<PathBuf>) -> CliResult<()> {
    let mut w = sink(out)?;
    serde_json::to_writer(&mut w, value).map_err(|e| Failure::Data(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_region(path: &Path) -> CliResult<RejectionRegion2D> {
    RejectionRegion2D::read_file(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn region_build(a: &RegionBuildArgs) -> CliResult<()> {
    let region = match a.method {
        RegionMethod::Minimax => build_minimax_region(&AlphaSpec::new(a.alpha)?)?,
        RegionMethod::Extended => build_extended_region(a.alpha)?,
        RegionMethod::Js => js_region(a.alpha)?,
    };
    let mut w = sink(&a.out)?;
    w.write_all(region.to_json_pretty()?.as_bytes())?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn region_decision(r: &RejectionRegion2D, zx: f64, zy: f64, u: Option<f64>) -> serde_json::Value {
    let p = r.rejection_prob(zx, zy);
    let reject = match u {
        Some(u) => u < p,
        None => p == 1.0,
    };
    json!({
        "method": r.kind().to_string(),
        "alpha": r.alpha(),
        "zx": zx,
        "zy": zy,
        "rejection_prob": p,
        "reject": reject,
    })
}

fn test(a: &TestArgs) -> CliResult<()> {
    if let Some(u) = a.u {
        if !(0.0..1.0).contains(&u) {
            return Err(Failure::Usage(format!("--u must lie in [0, 1), got {u}")));
        }
    }
    let value = if let Some(path) = &a.region {
        region_decision(&read_region(path)?, a.zx, a.zy, a.u)
    } else {
        match a.method {
            TestMethod::Minimax => {
                let r = build_minimax_region(&AlphaSpec::new(a.alpha)?)?;
                region_decision(&r, a.zx, a.zy, a.u)
            }
            TestMethod::Extended => region_decision(&build_extended_region(a.alpha)?, a.zx, a.zy, a.u),
            TestMethod::Js => {
                let d = js_test(a.zx, a.zy, a.alpha)?;
                json!({
                    "method": "joint_significance",
                    "alpha": a.alpha,
                    "zx": a.zx,
                    "zy": a.zy,
                    "reject": d.reject,
                    "p_value": d.p_value,
                })
            }
            TestMethod::Sobel => {
                if !(a.alpha > 0.0 && a.alpha < 1.0) {
                    return Err(Error::InvalidAlpha(a.alpha).into());
                }
                let s = sobel_from_z(a.zx, a.zy);
                json!({
                    "method": "sobel",
                    "alpha": a.alpha,
                    "zx": a.zx,
                    "zy": a.zy,
                    "z": s.z,
                    "reject": s.p_value < a.alpha,
                    "p_value": s.p_value,
                    "degenerate": s.degenerate,
                })
            }
        }
    };
    emit_json(&value, &a.out)
}

fn test3(a: &Test3Args) -> CliResult<()> {
    if a.z.len() != 3 {
        return Err(Failure::Usage(format!("--z needs three values, got {}", a.z.len())));
    }
    let spec = AlphaSpec::new(a.alpha)?;
    let square = if a.square == "cyclic" {
        cyclic_latin(spec.k)?.normalize_corner().0
    } else {
        let text = std::fs::read_to_string(&a.square)
            .map_err(|e| Failure::Data(format!("{}: {e}", a.square)))?;
        LatinSquare::from_json(&text).map_err(|e| Failure::Data(format!("{}: {e}", a.square)))?
    };
    let region = build_latin_region(&square, a.alpha)?;
    let z = [a.z[0], a.z[1], a.z[2]];
    let k = square.order();
    emit_json(
        &json!({
            "alpha": a.alpha,
            "z": z,
            "square": square,
            "corner_condition": square.get(k, k) == k,
            "reject": region.rejects(z),
        }),
        &a.out,
    )
}

fn pvalue(a: &PvalueArgs) -> CliResult<()> {
    let z = TestStatisticPair::new(a.zx, a.zy);
    let r = minimax_pvalue(&z, a.resolution)?;
    emit_json(
        &json!({
            "method": r.method,
            "zx": a.zx,
            "zy": a.zy,
            "p": r.p,
            "resolution": r.resolution,
            "p_exact": minimax_pvalue_exact(a.zx, a.zy),
            "p_js": compnull::closed_form::js_pvalue(a.zx, a.zy),
        }),
        &a.out,
    )
}

fn adjust(a: &AdjustArgs) -> CliResult<()> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&a.input)
        .map_err(|e| Failure::Data(format!("{}: {e}", a.input.display())))?;
    let headers = reader.headers().map_err(|e| Failure::Data(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "p")
        .ok_or_else(|| Failure::Data(format!("{}: no column `p` in header", a.input.display())))?;
    let mut pvals = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Data(e.to_string()))?;
        let cell = rec.get(col).unwrap_or("");
        let p: f64 = cell.parse().map_err(|_| {
            Failure::Data(format!("row {}, column `p`: `{cell}` is not a number", k + 2))
        })?;
        pvals.push(p);
    }
    if pvals.is_empty() {
        return Err(Failure::Data(format!("{}: no p-values", a.input.display())));
    }
    let decisions = match a.method {
        AdjustMethod::Bh => benjamini_hochberg(&pvals, a.q),
        AdjustMethod::Bonferroni => bonferroni(&pvals, a.q),
    }
    .map_err(|e| Failure::Data(e.to_string()))?;
    let mut w = csv::Writer::from_writer(sink(&a.out)?);
    w.write_record(["p", "reject"]).map_err(|e| Failure::Data(e.to_string()))?;
    for (p, d) in pvals.iter().zip(decisions) {
        w.write_record([p.to_string(), d.to_string()])
            .map_err(|e| Failure::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn bayes_solve(a: &BayesSolveArgs) -> CliResult<()> {
    let problem = build_lp(a.alpha, a.m, a.prior_sd, a.grid_points.unwrap_or(2 * a.m))?;
    let sol = solve_lp(&problem)?;
    let region = assemble_bayes_region(&problem, &sol, a.derandomize)?;
    region
        .write_file(&a.out)
        .map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    let near = sol
        .m_r
        .iter()
        .filter(|&&v| !(1e-6..=1.0 - 1e-6).contains(&v))
        .count();
    emit_json(
        &json!({
            "status": sol.solver_status,
            "objective_value": sol.objective_value,
            "relative_gap": sol.relative_gap,
            "iterations": sol.iterations,
            "cells": sol.m_r.len(),
            "constraints": problem.null_grid.len(),
            "near_integral_fraction": near as f64 / sol.m_r.len() as f64,
            "region_cells": region.cells().len(),
            "out": a.out,
        }),
        &None,
    )
}

fn fit(a: &FitArgs) -> CliResult<()> {
    let schema = CsvSchema {
        y: a.y.clone(),
        a: a.a.clone(),
        m: a.m.clone(),
        covariates: a.covars.clone(),
    };
    let data = load_csv(&a.data, &schema)?;
    let model = if a.interaction {
        MediationModel::Interaction {
            a_prime: a.a_prime,
            a_dblprime: a.a_dblprime,
        }
    } else {
        MediationModel::MainEffects
    };
    let (fit, z) = product_method_stats(&data, model).map_err(|e| match e {
        Error::InvalidArgument(m) => Failure::Data(m),
        other => other.into(),
    })?;
    emit_json(
        &json!({
            "fit": fit,
            "zx": z.zx,
            "zy": z.zy,
            "rows": data.len(),
            "columns": {"y": a.y, "a": a.a, "m": a.m, "covariates": a.covars},
        }),
        &a.out,
    )
}

fn parse_deltas(items: &[String]) -> CliResult<Vec<(f64, f64)>> {
    if items.is_empty() {
        return Ok((0..=8).map(|i| {
            let d = i as f64 * 0.05;
            (d, d)
        }).collect());
    }
    items
        .iter()
        .map(|s| {
            let (x, y) = s
                .split_once(':')
                .ok_or_else(|| Failure::Usage(format!("delta `{s}` is not of the form dx:dy")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Failure::Usage(format!("delta `{s}` is not numeric")))
            };
            Ok((parse(x)?, parse(y)?))
        })
        .collect()
}

fn simulate(cmd: &SimulateCmd) -> CliResult<()> {
    match cmd {
        SimulateCmd::Power(a) => {
            let mut methods = Vec::new();
            for m in &a.methods {
                methods.push(match m {
                    SimMethodArg::Minimax => SimMethod::Minimax,
                    SimMethodArg::Extended => SimMethod::Extended,
                    SimMethodArg::Js => SimMethod::Js,
                    SimMethodArg::Sobel => SimMethod::Sobel,
                    SimMethodArg::Bayes => {
                        let path = a.bayes_region.as_ref().ok_or_else(|| {
                            Failure::Usage("the bayes method needs --bayes-region".into())
                        })?;
                        SimMethod::Bayes {
                            region: Arc::new(read_region(path)?),
                            derandomize: a.derandomize,
                        }
                    }
                });
            }
            let spec = SimSpec {
                methods,
                delta_grid: parse_deltas(&a.deltas)?,
                alpha: a.alpha,
                n: a.n,
                reps: a.reps,
                seed: a.seed,
            };
            let res = simulate_power(&spec)?;
            res.write_csv(sink(&a.out)?)?;
        }
        SimulateCmd::Ecdf(a) => {
            let res = if a.exact { None } else { Some(a.resolution) };
            let table = simulate_pvalue_ecdf(a.reps, (a.delta_x, a.delta_y), res, a.seed)?;
            table.write_csv(sink(&a.out)?)?;
        }
        SimulateCmd::SobelDensity(a) => {
            let rows = sample_sobel_density(&a.delta_x, a.n, a.reps, a.seed)?;
            write_rows(&rows, sink(&a.out)?)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Region(RegionCmd::Build(a)) => region_build(a),
        Command::Test(a) => test(a),
        Command::Test3(a) => test3(a),
        Command::Pvalue(a) => pvalue(a),
        Command::Adjust(a) => adjust(a),
        Command::Bayes(BayesCmd::Solve(a)) => bayes_solve(a),
        Command::Fit(a) => fit(a),
        Command::Simulate(c) => simulate(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

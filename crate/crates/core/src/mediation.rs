//! Product-of-coefficients estimation for mediation data: OLS fits of the
//! mediator model m ~ 1 + a + c and the outcome model y ~ 1 + a + m (+ a·m)
//! + c, reduced to a standardized pair (zx, zy).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::regions::{Provenance, TestStatisticPair};

/// Relative size of a diagonal entry of R below which its column is treated
/// as linearly dependent on the earlier ones.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    /// σ̂² (XᵀX)⁻¹.
    pub covariance: DMatrix<f64>,
    pub sigma2: f64,
    pub rss: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn se(&self, j: usize) -> f64 {
        self.covariance[(j, j)].sqrt()
    }
}

/// Least squares through a Householder QR of the design. `names` labels the
/// columns in rank errors.
pub fn fit_ols(design: &DMatrix<f64>, response: &DVector<f64>, names: &[String]) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::InvalidArgument(format!(
            "design has {n} rows but response has {}",
            response.len()
        )));
    }
    if n <= p {
        return Err(Error::InvalidArgument(format!(
            "need more rows than columns, got {n} rows and {p} columns"
        )));
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..p {
        let col_norm = design.column(j).norm();
        if r[(j, j)].abs() <= RANK_TOL * scale.max(col_norm) || col_norm == 0.0 {
            let column = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
            return Err(Error::RankDeficient { column });
        }
    }
    let qty = qr.q().transpose() * response;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { column: "?".into() })?;
    let resid = response - design * &coefficients;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient { column: "?".into() })?;
    let covariance = &rinv * rinv.transpose() * sigma2;
    Ok(OlsFit {
        coefficients,
        covariance,
        sigma2,
        rss,
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediationDataset {
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    pub m: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// One vector per covariate.
    pub covariates: Vec<Vec<f64>>,
}

impl MediationDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Same data with the mediator multiplied by `c`.
    pub fn scale_mediator(&self, c: f64) -> Self {
        MediationDataset {
            m: self.m.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub y: String,
    pub a: String,
    pub m: String,
    pub covariates: Vec<String>,
}

/// Reads a headed CSV. Row numbers in errors are file line numbers.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MediationDataset> {
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    read_dataset(reader, schema)
}

pub fn load_csv_reader<R: std::io::Read>(input: R, schema: &CsvSchema) -> Result<MediationDataset> {
    let reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    read_dataset(reader, schema)
}

fn read_dataset<R: std::io::Read>(mut reader: csv::Reader<R>, schema: &CsvSchema) -> Result<MediationDataset> {
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Data {
            row: 1,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    };
    let wanted: Vec<&str> = [schema.y.as_str(), schema.a.as_str(), schema.m.as_str()]
        .into_iter()
        .chain(schema.covariates.iter().map(String::as_str))
        .collect();
    let idx: Vec<usize> = wanted.iter().map(|w| find(w)).collect::<Result<_>>()?;

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k + 2, |p| p.line() as usize);
        for (c, &i) in idx.iter().enumerate() {
            let cell = rec.get(i).unwrap_or("");
            let value = match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    let message = if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                        "missing value".to_string()
                    } else {
                        format!("`{cell}` is not a finite number")
                    };
                    return Err(Error::Data {
                        row: line,
                        column: wanted[c].to_string(),
                        message,
                    });
                }
            };
            cols[c].push(value);
        }
    }
    if cols[0].is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut it = cols.into_iter();
    let (y, a, m) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok(MediationDataset {
        y,
        a,
        m,
        covariate_names: schema.covariates.clone(),
        covariates: it.collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MediationModel {
    MainEffects,
    Interaction { a_prime: f64, a_dblprime: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub delta_x_hat: f64,
    pub delta_y_hat: f64,
    /// Finite-sample standard errors of the two estimates.
    pub se_x: f64,
    pub se_y: f64,
    pub n: usize,
    pub model: MediationModel,
}

impl FitResult {
    /// Provenance in the √n scaling, s = se·√n.
    pub fn provenance(&self) -> Provenance {
        let rn = (self.n as f64).sqrt();
        Provenance {
            delta_x_hat: self.delta_x_hat,
            delta_y_hat: self.delta_y_hat,
            se_x: self.se_x * rn,
            se_y: self.se_y * rn,
            n: self.n,
        }
    }
}

fn design(columns: &[(&str, &[f64])]) -> (DMatrix<f64>, Vec<String>) {
    let n = columns[0].1.len();
    let mut x = DMatrix::from_element(n, columns.len() + 1, 1.0);
    for (j, (_, col)) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            x[(i, j + 1)] = *v;
        }
    }
    let names = std::iter::once("(intercept)".to_string())
        .chain(columns.iter().map(|(n, _)| n.to_string()))
        .collect();
    (x, names)
}

/// δ̂y is the exposure coefficient β1 of the mediator model (times
/// a′ − a″ under interaction); δ̂x is the mediator coefficient θ2 of the
/// outcome model (plus θ3·a′ under interaction).
pub fn product_method_stats(
    data: &MediationDataset,
    model: MediationModel,
) -> Result<(FitResult, TestStatisticPair)> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let covs: Vec<(&str, &[f64])> = data
        .covariate_names
        .iter()
        .zip(&data.covariates)
        .map(|(n, c)| (n.as_str(), c.as_slice()))
        .collect();

    let mut med_cols = vec![("a", data.a.as_slice())];
    med_cols.extend(covs.iter().copied());
    let (xm, names_m) = design(&med_cols);
    let med = fit_ols(&xm, &DVector::from_column_slice(&data.m), &names_m)?;

    let am: Vec<f64> = data.a.iter().zip(&data.m).map(|(a, m)| a * m).collect();
    let mut out_cols = vec![("a", data.a.as_slice()), ("m", data.m.as_slice())];
    if let MediationModel::Interaction { .. } = model {
        out_cols.push(("a:m", am.as_slice()));
    }
    out_cols.extend(covs.iter().copied());
    let (xo, names_o) = design(&out_cols);
    let out = fit_ols(&xo, &DVector::from_column_slice(&data.y), &names_o)?;

    let (dx, sx, dy, sy) = match model {
        MediationModel::MainEffects => (
            out.coefficients[2],
            out.se(2),
            med.coefficients[1],
            med.se(1),
        ),
        MediationModel::Interaction { a_prime, a_dblprime } => {
            if a_prime == a_dblprime {
                return Err(Error::InvalidArgument(
                    "a' and a'' must differ for the interaction contrast".into(),
                ));
            }
            let v = &out.covariance;
            let var = v[(2, 2)] + a_prime * a_prime * v[(3, 3)] + 2.0 * a_prime * v[(2, 3)];
            let contrast = a_prime - a_dblprime;
            (
                out.coefficients[2] + out.coefficients[3] * a_prime,
                var.max(0.0).sqrt(),
                med.coefficients[1] * contrast,
                med.se(1) * contrast.abs(),
            )
        }
    };
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::InvalidArgument(
            "a fitted coefficient has zero standard error (the model fits exactly)".into(),
        ));
    }
    let fit = FitResult {
        delta_x_hat: dx,
        delta_y_hat: dy,
        se_x: sx,
        se_y: sy,
        n,
        model,
    };
    let pair = TestStatisticPair {
        zx: dx / sx,
        zy: dy / sy,
        provenance: Some(fit.provenance()),
    };
    Ok((fit, pair))
}

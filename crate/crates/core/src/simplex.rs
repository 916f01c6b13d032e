//! Bounded-variable primal simplex for
//!
//!   maximize cᵀx  subject to  A x ≤ h,  0 ≤ x ≤ u,
//!
//! started from the all-slack basis, so h must be non-negative. The
//! constraint matrix is accessed only through [`ConstraintMatrix`], which lets
//! structured matrices price all columns without being materialized.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub trait ConstraintMatrix {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// Writes column `j` into `out` (length `n_rows`).
    fn column(&self, j: usize, out: &mut [f64]);
    /// out_j = A_jᵀ y for every column.
    fn price(&self, y: &[f64], out: &mut [f64]);
    /// out = A x.
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// Row-major dense matrix.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged matrix rows".into()));
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

impl ConstraintMatrix for DenseMatrix {
    fn n_rows(&self) -> usize {
        self.rows
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.get(i, j);
        }
    }

    fn price(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += yi * a;
            }
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
            LpStatus::IterationLimit => "iteration_limit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Primal feasibility tolerance on the scaled problem.
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance on the scaled problem.
    pub optimality_tol: f64,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_limit: usize,
    /// Required relative gap between primal value and dual bound.
    pub gap_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 200_000,
            feasibility_tol: 1e-10,
            optimality_tol: 1e-11,
            refactor_every: 100,
            degenerate_limit: 50,
            gap_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Row duals, clamped to be non-negative.
    pub y: Vec<f64>,
    pub objective: f64,
    /// hᵀy + Σ_j u_j max(0, c_j − A_jᵀy), an upper bound on the optimum.
    pub dual_bound: f64,
    pub relative_gap: f64,
    /// max_i (A x − h)_i.
    pub max_violation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize),
    Lower,
    Upper,
}

struct Scaled<'a> {
    a: &'a dyn ConstraintMatrix,
    row_scale: Vec<f64>,
}

impl Scaled<'_> {
    fn column(&self, j: usize, out: &mut [f64]) {
        self.a.column(j, out);
        for (o, r) in out.iter_mut().zip(&self.row_scale) {
            *o *= r;
        }
    }
}

struct Solver<'a> {
    m: usize,
    n: usize,
    a: Scaled<'a>,
    c: Vec<f64>,
    h: Vec<f64>,
    upper: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    xb: Vec<f64>,
    binv: Vec<f64>,
    opts: SimplexOptions,
    scratch: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn var_upper(&self, v: usize) -> f64 {
        if v < self.n {
            self.upper[v]
        } else {
            f64::INFINITY
        }
    }

    fn var_cost(&self, v: usize) -> f64 {
        if v < self.n {
            self.c[v]
        } else {
            0.0
        }
    }

    fn var_column(&self, v: usize, out: &mut [f64]) {
        if v < self.n {
            self.a.column(v, out);
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[v - self.n] = 1.0;
        }
    }

    fn nonbasic_x(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| match self.state[j] {
                VarState::Upper => self.upper[j],
                _ => 0.0,
            })
            .collect()
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = DMatrix::<f64>::zeros(m, m);
        let mut col = vec![0.0; m];
        for (r, &v) in self.basis.iter().enumerate() {
            self.var_column(v, &mut col);
            for i in 0..m {
                b[(i, r)] = col[i];
            }
        }
        let inv = b
            .try_inverse()
            .ok_or_else(|| Error::NotOptimal("singular basis".into()))?;
        for i in 0..m {
            for j in 0..m {
                self.binv[i * m + j] = inv[(i, j)];
            }
        }
        // x_B = B⁻¹ (h − N x_N); slacks are never nonbasic at an upper bound
        let xn = self.nonbasic_x();
        let mut ax = vec![0.0; m];
        self.a.a.apply(&xn, &mut ax);
        let rhs: Vec<f64> = (0..m)
            .map(|i| self.h[i] - self.a.row_scale[i] * ax[i])
            .collect();
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &v) in self.basis.iter().enumerate() {
            let cb = self.var_cost(v);
            if cb == 0.0 {
                continue;
            }
            let row = &self.binv[r * m..(r + 1) * m];
            for (yj, &b) in y.iter_mut().zip(row) {
                *yj += cb * b;
            }
        }
        y
    }

    /// Reduced costs d_v for all structural and slack variables.
    fn reduced_costs(&mut self, y: &[f64], d: &mut [f64]) {
        let scaled_y: Vec<f64> = y
            .iter()
            .zip(&self.a.row_scale)
            .map(|(a, b)| a * b)
            .collect();
        self.scratch.resize(self.n, 0.0);
        self.a.a.price(&scaled_y, &mut self.scratch);
        for j in 0..self.n {
            d[j] = self.c[j] - self.scratch[j];
        }
        for i in 0..self.m {
            d[self.n + i] = -y[i];
        }
    }

    fn choose_entering(&self, d: &[f64], bland: bool) -> Option<(usize, f64)> {
        let tol = self.opts.optimality_tol;
        let mut best: Option<(usize, f64)> = None;
        for (v, &dv) in d.iter().enumerate() {
            let gain = match self.state[v] {
                VarState::Basic(_) => continue,
                VarState::Lower => dv,
                VarState::Upper => -dv,
            };
            if gain <= tol {
                continue;
            }
            if bland {
                return Some((v, gain));
            }
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((v, gain));
            }
        }
        best
    }

    fn pivot(&mut self, r: usize, w: &[f64]) {
        let m = self.m;
        let wr = w[r];
        for j in 0..m {
            self.binv[r * m + j] /= wr;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (pivot_row, after) = rest.split_at_mut(m);
        for (i, row) in before
            .chunks_exact_mut(m)
            .enumerate()
            .chain(after.chunks_exact_mut(m).enumerate().map(|(k, row)| (r + 1 + k, row)))
        {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for (a, &p) in row.iter_mut().zip(pivot_row.iter()) {
                *a -= wi * p;
            }
        }
    }

    fn run(&mut self) -> Result<(LpStatus, usize)> {
        let m = self.m;
        let total = self.n + m;
        let mut d = vec![0.0; total];
        let mut w = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut since_refactor = 0usize;
        let mut degenerate_run = 0usize;
        let feas = self.opts.feasibility_tol;
        let pivot_tol = 1e-9;

        for iter in 0..self.opts.max_iterations {
            if since_refactor >= self.opts.refactor_every {
                self.refactor()?;
                since_refactor = 0;
            }
            let y = self.duals();
            self.reduced_costs(&y, &mut d);
            let bland = degenerate_run > self.opts.degenerate_limit;
            let Some((q, _)) = self.choose_entering(&d, bland) else {
                if since_refactor > 0 {
                    self.refactor()?;
                    since_refactor = 0;
                    let y = self.duals();
                    self.reduced_costs(&y, &mut d);
                    if self.choose_entering(&d, bland).is_some() {
                        continue;
                    }
                }
                return Ok((LpStatus::Optimal, iter));
            };

            self.var_column(q, &mut col);
            for i in 0..m {
                let row = &self.binv[i * m..(i + 1) * m];
                w[i] = row.iter().zip(&col).map(|(a, b)| a * b).sum();
            }
            let dir = if self.state[q] == VarState::Lower { 1.0 } else { -1.0 };
            let flip = self.var_upper(q);

            // x_B moves by θ·rate
            let rate = |i: usize| -dir * w[i];
            let room = |s: &Self, i: usize, rt: f64| -> f64 {
                if rt < 0.0 {
                    s.xb[i]
                } else {
                    s.var_upper(s.basis[i]) - s.xb[i]
                }
            };

            let mut leave: Option<usize> = None;
            let theta;
            if bland {
                let mut best = f64::INFINITY;
                for i in 0..m {
                    let rt = rate(i);
                    if rt.abs() <= pivot_tol {
                        continue;
                    }
                    let ub = self.var_upper(self.basis[i]);
                    if rt > 0.0 && ub.is_infinite() {
                        continue;
                    }
                    let ratio = room(self, i, rt).max(0.0) / rt.abs();
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best || (ratio == best && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best = ratio;
                        leave = Some(i);
                    }
                }
                if flip <= best {
                    leave = None;
                    theta = flip;
                } else {
                    theta = best;
                }
            } else {
                let mut relaxed = f64::INFINITY;
                for i in 0..m {
                    let rt = rate(i);
                    if rt.abs() <= pivot_tol {
                        continue;
                    }
                    let ub = self.var_upper(self.basis[i]);
                    if rt > 0.0 && ub.is_infinite() {
                        continue;
                    }
                    relaxed = relaxed.min((room(self, i, rt) + feas) / rt.abs());
                }
                if flip <= relaxed {
                    theta = flip;
                } else {
                    let mut best_mag = 0.0;
                    let mut best_ratio = f64::INFINITY;
                    for i in 0..m {
                        let rt = rate(i);
                        if rt.abs() <= pivot_tol {
                            continue;
                        }
                        let ub = self.var_upper(self.basis[i]);
                        if rt > 0.0 && ub.is_infinite() {
                            continue;
                        }
                        let ratio = room(self, i, rt) / rt.abs();
                        if ratio <= relaxed && rt.abs() > best_mag {
                            best_mag = rt.abs();
                            best_ratio = ratio.max(0.0);
                            leave = Some(i);
                        }
                    }
                    theta = best_ratio;
                }
            }

            if !theta.is_finite() {
                return Ok((LpStatus::Unbounded, iter));
            }
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            for i in 0..m {
                self.xb[i] += theta * rate(i);
            }
            match leave {
                None => {
                    self.state[q] = if dir > 0.0 { VarState::Upper } else { VarState::Lower };
                }
                Some(r) => {
                    let out = self.basis[r];
                    let rt = rate(r);
                    self.state[out] = if rt < 0.0 { VarState::Lower } else { VarState::Upper };
                    let entering_value = if dir > 0.0 { theta } else { flip - theta };
                    self.pivot(r, &w);
                    self.basis[r] = q;
                    self.state[q] = VarState::Basic(r);
                    self.xb[r] = entering_value;
                    since_refactor += 1;
                }
            }
        }
        Ok((LpStatus::IterationLimit, self.opts.max_iterations))
    }
}

/// Solves max cᵀx s.t. A x ≤ h, 0 ≤ x ≤ upper. Rows are equilibrated and the
/// objective normalized internally; the returned duals refer to the original
/// problem. Returns `Infeasible` when some h_i is below the smallest value row
/// i can attain; any other negative h_i is rejected as an argument error.
pub fn solve(
    a: &dyn ConstraintMatrix,
    c: &[f64],
    h: &[f64],
    upper: &[f64],
    opts: &SimplexOptions,
) -> Result<LpSolution> {
    let (m, n) = (a.n_rows(), a.n_cols());
    if c.len() != n || upper.len() != n || h.len() != m {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: A is {m}x{n}, c has {}, u has {}, h has {}",
            c.len(),
            upper.len(),
            h.len()
        )));
    }
    if upper.iter().any(|&u| !(u >= 0.0)) || c.iter().chain(h).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "bounds must be non-negative and costs finite".into(),
        ));
    }

    let mut row_max = vec![0.0f64; m];
    let mut row_min = vec![0.0f64; m];
    let mut col = vec![0.0; m];
    for j in 0..n {
        a.column(j, &mut col);
        for i in 0..m {
            row_max[i] = row_max[i].max(col[i].abs());
            if col[i] < 0.0 {
                row_min[i] += col[i] * upper[j];
            }
        }
    }
    if let Some(i) = (0..m).find(|&i| h[i] < 0.0) {
        if row_min[i] > h[i] {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                y: vec![0.0; m],
                objective: f64::NAN,
                dual_bound: f64::NAN,
                relative_gap: f64::NAN,
                max_violation: h[i].abs(),
                iterations: 0,
            });
        }
        return Err(Error::InvalidArgument(format!(
            "h[{i}] = {} is negative; the all-slack start needs h >= 0",
            h[i]
        )));
    }

    let row_scale: Vec<f64> = row_max
        .iter()
        .map(|&r| if r > 0.0 { 1.0 / r } else { 1.0 })
        .collect();
    let c_scale = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let c_scale = if c_scale > 0.0 { c_scale } else { 1.0 };

    let mut solver = Solver {
        m,
        n,
        h: h.iter().zip(&row_scale).map(|(a, b)| a * b).collect(),
        a: Scaled { a, row_scale },
        c: c.iter().map(|v| v / c_scale).collect(),
        upper: upper.to_vec(),
        state: (0..n)
            .map(|_| VarState::Lower)
            .chain((0..m).map(VarState::Basic))
            .collect(),
        basis: (n..n + m).collect(),
        xb: vec![0.0; m],
        binv: vec![0.0; m * m],
        opts: opts.clone(),
        scratch: Vec::new(),
    };
    solver.refactor()?;
    let (status, iterations) = solver.run()?;

    let mut x = solver.nonbasic_x();
    for (r, &v) in solver.basis.iter().enumerate() {
        if v < n {
            x[v] = solver.xb[r].clamp(0.0, upper[v]);
        }
    }
    let y_scaled = solver.duals();
    let y: Vec<f64> = y_scaled
        .iter()
        .zip(&solver.a.row_scale)
        .map(|(yi, r)| (yi * r * c_scale).max(0.0))
        .collect();

    let objective: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    let mut aty = vec![0.0; n];
    a.price(&y, &mut aty);
    let dual_bound = h.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
        + (0..n)
            .map(|j| upper[j] * (c[j] - aty[j]).max(0.0))
            .sum::<f64>();
    let relative_gap = (dual_bound - objective).abs() / objective.abs().max(1.0);
    let mut ax = vec![0.0; m];
    a.apply(&x, &mut ax);
    let max_violation = ax
        .iter()
        .zip(h)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(LpSolution {
        status,
        x,
        y,
        objective,
        dual_bound,
        relative_gap,
        max_violation,
        iterations,
    })
}

//! Discretized Bayes-risk linear program. The box B = [−b, b]² is tiled into
//! 2m × 2m open squares; the unknowns are the rejection probabilities m_r of
//! the squares, the objective is prior-averaged power, and one type-1 row is
//! imposed at every point of a grid on the two null axes. Outside B the
//! joint-significance test is used.
//!
//! Every constraint row is a rank-one tensor: at δ* = (d, 0) the mass of
//! square (k, l) is g_k(d)·g_l(0). Pricing all columns therefore costs
//! O(rows · m + m²) and the matrix is never formed.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::regions::{OutsideRule, RegionKind, RejectionRegion2D, RuleBox, WeightedRect};
use crate::simplex::{self, ConstraintMatrix, LpStatus, SimplexOptions};
use crate::statmath::{
    folded_unchecked, gaussian_interval_prob, std_normal_cdf, std_normal_upper_quantile, Interval,
};

/// Values this close to 0 or 1 are snapped; cells below it are dropped.
pub const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone)]
struct AxisRow {
    axis: Axis,
    /// Strip masses along the moving coordinate.
    p: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub alpha: f64,
    pub m: usize,
    pub prior_sd: f64,
    /// Half-width of B.
    pub b: f64,
    /// Joint-significance threshold used outside B.
    pub threshold: f64,
    /// Strip edges −b = e_0 < … < e_{2m} = b shared by both axes.
    pub edges: Vec<f64>,
    /// Null points (δx*, δy*), one per type-1 row.
    pub null_grid: Vec<(f64, f64)>,
    /// Prior probability of each square: the gain in prior-averaged power
    /// per unit of m_r. Cell (k, l) has index k·2m + l.
    pub objective: Vec<f64>,
    /// α minus the joint-significance mass outside B, per row.
    pub rhs: Vec<f64>,
    rows: Vec<AxisRow>,
    /// Strip masses at δ = 0.
    q0: Vec<f64>,
}

fn strip_masses(edges: &[f64], mu: f64) -> Vec<f64> {
    edges
        .windows(2)
        .map(|w| gaussian_interval_prob(Interval { lo: w[0], hi: w[1] }, mu))
        .collect()
}

/// Joint-significance mass outside [−b, b]² at (dx, dy).
pub fn outside_mass(t: f64, b: f64, dx: f64, dy: f64) -> f64 {
    let tail = |d: f64| folded_unchecked(Interval { lo: t, hi: f64::INFINITY }, d);
    let inner = |d: f64| folded_unchecked(Interval { lo: t, hi: b }, d);
    (tail(dx) * tail(dy) - inner(dx) * inner(dy)).max(0.0)
}

/// Builds the program. `grid_points` is the number of null-grid points on
/// each half-axis; they are evenly spaced out to 2b, so 2m gives spacing
/// b/m and 8m + 1 rows in total.
pub fn build_lp(alpha: f64, m: usize, prior_sd: f64, grid_points: usize) -> Result<LpProblem> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if m < 4 {
        return Err(Error::InvalidArgument(format!("m must be at least 4, got {m}")));
    }
    if !(prior_sd > 0.0 && prior_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "prior sd must be positive, got {prior_sd}"
        )));
    }
    if grid_points == 0 {
        return Err(Error::InvalidArgument("grid_points must be positive".into()));
    }
    let t = std_normal_upper_quantile(alpha / 2.0);
    let b = 2.0 * t;
    let side = b / m as f64;
    let mut edges: Vec<f64> = (0..=2 * m).map(|k| -b + k as f64 * side).collect();
    edges[m] = 0.0;
    edges[2 * m] = b;

    let q0 = strip_masses(&edges, 0.0);
    let scale = (1.0 + prior_sd * prior_sd).sqrt();
    let prior: Vec<f64> = edges
        .windows(2)
        .map(|w| std_normal_cdf(w[1] / scale) - std_normal_cdf(w[0] / scale))
        .collect();
    let objective: Vec<f64> = prior
        .iter()
        .flat_map(|&pk| prior.iter().map(move |&pl| pk * pl))
        .collect();

    let step = 2.0 * b / grid_points as f64;
    let g = grid_points as i64;
    let offsets: Vec<f64> = (-g..=g).filter(|&i| i != 0).map(|i| i as f64 * step).collect();

    let mut null_grid = vec![(0.0, 0.0)];
    let mut rows = vec![AxisRow {
        axis: Axis::X,
        p: q0.clone(),
    }];
    for &d in &offsets {
        null_grid.push((d, 0.0));
        rows.push(AxisRow {
            axis: Axis::X,
            p: strip_masses(&edges, d),
        });
    }
    for &d in &offsets {
        null_grid.push((0.0, d));
        rows.push(AxisRow {
            axis: Axis::Y,
            p: strip_masses(&edges, d),
        });
    }

    let mut rhs = Vec::with_capacity(null_grid.len());
    for &(dx, dy) in &null_grid {
        let out = outside_mass(t, b, dx, dy);
        if out > alpha {
            return Err(Error::Infeasible {
                delta_x: dx,
                delta_y: dy,
                outside_mass: out,
            });
        }
        rhs.push(alpha - out);
    }

    Ok(LpProblem {
        alpha,
        m,
        prior_sd,
        b,
        threshold: t,
        edges,
        null_grid,
        objective,
        rhs,
        rows,
        q0,
    })
}

impl LpProblem {
    pub fn n_cells(&self) -> usize {
        self.objective.len()
    }

    fn strips(&self) -> usize {
        2 * self.m
    }

    pub fn cell_rect(&self, idx: usize) -> WeightedRect {
        let (k, l) = (idx / self.strips(), idx % self.strips());
        WeightedRect::new(
            Interval {
                lo: self.edges[k],
                hi: self.edges[k + 1],
            },
            Interval {
                lo: self.edges[l],
                hi: self.edges[l + 1],
            },
            0.0,
        )
    }

    /// P_r(δ*) for every cell r at row `row`'s null point.
    pub fn row_dense(&self, row: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_cells());
        let r = &self.rows[row];
        for k in 0..self.strips() {
            for l in 0..self.strips() {
                out.push(match r.axis {
                    Axis::X => r.p[k] * self.q0[l],
                    Axis::Y => self.q0[k] * r.p[l],
                });
            }
        }
        out
    }

    /// Left-hand sides Σ_r m_r P_r(δ*) of all rows.
    pub fn row_values(&self, m_r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        self.apply(m_r, &mut out);
        out
    }

    /// Σ_r c_r (1 − m_r).
    pub fn objective_value(&self, m_r: &[f64]) -> f64 {
        self.objective
            .iter()
            .zip(m_r)
            .map(|(c, x)| c * (1.0 - x))
            .sum()
    }

    /// The feasible candidate with m_r = 1 exactly on squares lying inside
    /// the joint-significance region.
    pub fn js_candidate(&self) -> Vec<f64> {
        let t = self.threshold;
        let outside = |lo: f64, hi: f64| lo >= t || hi <= -t;
        (0..self.n_cells())
            .map(|i| {
                let c = self.cell_rect(i);
                if outside(c.x.lo, c.x.hi) && outside(c.y.lo, c.y.hi) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

impl ConstraintMatrix for LpProblem {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn n_cols(&self) -> usize {
        self.objective.len()
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        let (k, l) = (j / self.strips(), j % self.strips());
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = match r.axis {
                Axis::X => r.p[k] * self.q0[l],
                Axis::Y => self.q0[k] * r.p[l],
            };
        }
    }

    fn price(&self, y: &[f64], out: &mut [f64]) {
        let s = self.strips();
        let mut u = vec![0.0; s];
        let mut v = vec![0.0; s];
        for (yr, r) in y.iter().zip(&self.rows) {
            if *yr == 0.0 {
                continue;
            }
            let acc = if r.axis == Axis::X { &mut u } else { &mut v };
            for (a, p) in acc.iter_mut().zip(&r.p) {
                *a += yr * p;
            }
        }
        for k in 0..s {
            for l in 0..s {
                out[k * s + l] = u[k] * self.q0[l] + self.q0[k] * v[l];
            }
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let s = self.strips();
        let mut sx = vec![0.0; s];
        let mut sy = vec![0.0; s];
        for k in 0..s {
            for l in 0..s {
                let v = x[k * s + l];
                sx[k] += v * self.q0[l];
                sy[l] += v * self.q0[k];
            }
        }
        for (o, r) in out.iter_mut().zip(&self.rows) {
            let marg = if r.axis == Axis::X { &sx } else { &sy };
            *o = r.p.iter().zip(marg).map(|(a, b)| a * b).sum();
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LpSolution {
    pub m_r: Vec<f64>,
    /// Σ_r c_r (1 − m_r), the in-box part of the Bayes risk.
    pub objective_value: f64,
    pub solver_status: LpStatus,
    pub relative_gap: f64,
    pub iterations: usize,
}

pub fn solve_lp(p: &LpProblem) -> Result<LpSolution> {
    solve_lp_with(p, &SimplexOptions::default())
}

pub fn solve_lp_with(p: &LpProblem, opts: &SimplexOptions) -> Result<LpSolution> {
    let upper = vec![1.0; p.n_cells()];
    let sol = simplex::solve(p, &p.objective, &p.rhs, &upper, opts)?;
    let m_r: Vec<f64> = sol
        .x
        .iter()
        .map(|&v| {
            if v < SNAP_TOL {
                0.0
            } else if v > 1.0 - SNAP_TOL {
                1.0
            } else {
                v
            }
        })
        .collect();
    let mut status = sol.status;
    if status == LpStatus::Optimal && sol.relative_gap > opts.gap_tol {
        status = LpStatus::IterationLimit;
    }
    Ok(LpSolution {
        objective_value: p.objective_value(&m_r),
        m_r,
        solver_status: status,
        relative_gap: sol.relative_gap,
        iterations: sol.iterations,
    })
}

/// Region with the solved squares inside B and the joint-significance rule
/// outside it. With `derandomize`, fractional squares are dropped.
pub fn assemble_bayes_region(
    p: &LpProblem,
    s: &LpSolution,
    derandomize: bool,
) -> Result<RejectionRegion2D> {
    if s.solver_status != LpStatus::Optimal {
        return Err(Error::NotOptimal(s.solver_status.to_string()));
    }
    let cells: Vec<WeightedRect> = s
        .m_r
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v >= SNAP_TOL && (!derandomize || v == 1.0))
        .map(|(i, &v)| WeightedRect { p: v, ..p.cell_rect(i) })
        .collect();
    let boxed = Interval { lo: -p.b, hi: p.b };
    RejectionRegion2D::with_rule_box(
        p.alpha,
        RegionKind::Bayes,
        cells,
        OutsideRule::JointSignificance {
            threshold: p.threshold,
        },
        Some(RuleBox { x: boxed, y: boxed }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    /// Gauss–Hermite (probabilists') nodes and weights by Golub–Welsch.
    fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
        let mut j = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let off = (i as f64).sqrt();
            j[(i, i - 1)] = off;
            j[(i - 1, i)] = off;
        }
        let eig = SymmetricEigen::new(j);
        (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect()
    }

    #[test]
    fn dimensions_match_the_tiling() {
        let p = build_lp(0.05, 8, 2.0, 16).unwrap();
        assert_eq!(p.n_cells(), 256);
        assert_eq!(p.n_rows(), 65);
        assert!((p.b - 2.0 * 1.959_963_984_540_054).abs() < 1e-12);
        assert!(p.null_grid.iter().all(|&(x, y)| x == 0.0 || y == 0.0));
        let far = p.null_grid.iter().map(|&(x, y)| x.abs().max(y.abs())).fold(0.0, f64::max);
        assert!((far - 2.0 * p.b).abs() < 1e-12);
    }

    #[test]
    fn origin_row_sums_to_box_mass() {
        let p = build_lp(0.05, 10, 2.0, 20).unwrap();
        let total: f64 = p.row_dense(0).iter().sum();
        let side = gaussian_interval_prob(Interval { lo: -p.b, hi: p.b }, 0.0);
        assert!((total - side * side).abs() < 1e-10);
    }

    #[test]
    fn objective_matches_prior_quadrature() {
        let p = build_lp(0.05, 6, 2.0, 12).unwrap();
        let nodes = gauss_hermite(64);
        let s = p.strips();
        let strip_prior: Vec<f64> = (0..s)
            .map(|k| {
                let iv = Interval { lo: p.edges[k], hi: p.edges[k + 1] };
                nodes
                    .iter()
                    .map(|&(x, w)| w * gaussian_interval_prob(iv, 2.0 * x))
                    .sum()
            })
            .collect();
        for k in 0..s {
            for l in 0..s {
                let want = strip_prior[k] * strip_prior[l];
                assert!((p.objective[k * s + l] - want).abs() < 1e-12, "({k},{l})");
            }
        }
    }

    #[test]
    fn objective_has_dihedral_symmetry() {
        let p = build_lp(0.05, 7, 2.0, 14).unwrap();
        let s = p.strips();
        for k in 0..s {
            for l in 0..s {
                let c = p.objective[k * s + l];
                for (kk, ll) in [(l, k), (s - 1 - k, l), (k, s - 1 - l), (s - 1 - l, s - 1 - k)] {
                    assert!((c - p.objective[kk * s + ll]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn structured_operations_match_dense_rows() {
        let p = build_lp(0.05, 5, 2.0, 7).unwrap();
        let dense: Vec<Vec<f64>> = (0..p.n_rows()).map(|i| p.row_dense(i)).collect();
        let y: Vec<f64> = (0..p.n_rows()).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let mut priced = vec![0.0; p.n_cells()];
        p.price(&y, &mut priced);
        let x: Vec<f64> = (0..p.n_cells()).map(|j| ((j * 3) % 11) as f64 / 10.0).collect();
        let applied = p.row_values(&x);
        let mut col = vec![0.0; p.n_rows()];
        for j in 0..p.n_cells() {
            let want: f64 = (0..p.n_rows()).map(|i| y[i] * dense[i][j]).sum();
            assert!((priced[j] - want).abs() < 1e-12);
            p.column(j, &mut col);
            for i in 0..p.n_rows() {
                assert_eq!(col[i], dense[i][j]);
            }
        }
        for i in 0..p.n_rows() {
            let want: f64 = dense[i].iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((applied[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_mass_matches_direct_quadrants() {
        let (t, b) = (1.96, 3.92);
        for &(dx, dy) in &[(0.0, 0.0), (2.5, 0.0), (0.0, -6.0), (1.0, 1.0)] {
            let tail = |lo: f64, hi: f64, d: f64| {
                gaussian_interval_prob(Interval { lo, hi }, d)
                    + gaussian_interval_prob(Interval { lo: -hi, hi: -lo }, d)
            };
            // JS mass outside the box: some coordinate beyond b, both beyond t
            let beyond_x = tail(b, f64::INFINITY, dx) * tail(t, f64::INFINITY, dy);
            let inside_x_beyond_y = tail(t, b, dx) * tail(b, f64::INFINITY, dy);
            let got = outside_mass(t, b, dx, dy);
            assert!((got - beyond_x - inside_x_beyond_y).abs() < 1e-15);
        }
    }

    #[test]
    fn outside_mass_never_exceeds_alpha_on_the_null() {
        // at (d, 0) the outside mass is at most α·P(|X| > t), so rhs ≥ 0
        for &alpha in &[0.01, 0.05, 0.2, 0.5, 0.9, 0.99] {
            let p = build_lp(alpha, 4, 2.0, 8).unwrap();
            assert!(p.rhs.iter().all(|&r| r >= 0.0), "alpha {alpha}");
        }
    }

    #[test]
    fn small_problem_solves_and_respects_constraints() {
        let p = build_lp(0.05, 8, 2.0, 16).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.solver_status, LpStatus::Optimal);
        for (lhs, rhs) in p.row_values(&s.m_r).iter().zip(&p.rhs) {
            assert!(lhs - rhs <= 1e-8);
        }
        let js = p.js_candidate();
        assert!(p.row_values(&js).iter().zip(&p.rhs).all(|(l, r)| l <= r));
        assert!(s.objective_value <= p.objective_value(&js) + 1e-12);

        let region = assemble_bayes_region(&p, &s, false).unwrap();
        let derand = assemble_bayes_region(&p, &s, true).unwrap();
        for &(dx, dy) in &p.null_grid {
            assert!(region.analytic_power(dx, dy) <= p.alpha + 1e-8);
        }
        for &(dx, dy) in &[(0.0, 0.0), (1.0, 2.0), (3.0, -1.0)] {
            assert!(derand.analytic_power(dx, dy) <= region.analytic_power(dx, dy) + 1e-15);
        }
    }

    #[test]
    fn bayes_risk_by_quadrature_matches_objective() {
        let p = build_lp(0.05, 8, 2.0, 16).unwrap();
        let s = solve_lp(&p).unwrap();
        let region = assemble_bayes_region(&p, &s, false).unwrap();
        let nodes = gauss_hermite(48);
        let mut risk = 0.0;
        for &(x, wx) in &nodes {
            for &(y, wy) in &nodes {
                risk += wx * wy * (1.0 - region.analytic_power(2.0 * x, 2.0 * y));
            }
        }
        let outside_prior: f64 = {
            // prior-averaged JS mass outside B, from the predictive N(0, 5)
            let sd = 5f64.sqrt();
            let f = |lo: f64, hi: f64| {
                2.0 * (std_normal_cdf(hi / sd) - std_normal_cdf(lo / sd))
            };
            let (t, b) = (p.threshold, p.b);
            f(t, f64::INFINITY).powi(2) - f(t, b).powi(2)
        };
        let in_box_prior: f64 = p.objective.iter().sum();
        let want = s.objective_value + (1.0 - in_box_prior) - outside_prior;
        assert!((risk - want).abs() < 1e-6, "{risk} vs {want}");
    }

    #[test]
    fn non_optimal_solution_is_rejected() {
        let p = build_lp(0.05, 4, 2.0, 8).unwrap();
        let s = LpSolution {
            m_r: vec![0.0; p.n_cells()],
            objective_value: 0.0,
            solver_status: LpStatus::IterationLimit,
            relative_gap: f64::NAN,
            iterations: 0,
        };
        assert!(matches!(assemble_bayes_region(&p, &s, false), Err(Error::NotOptimal(_))));
    }
}

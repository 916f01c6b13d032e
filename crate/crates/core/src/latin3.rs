//! Similar tests of δ1·δ2·δ3 = 0 built from Latin squares of order K = 1/α.
//! With c_k = Φ⁻¹((1 + kα)/2), the test rejects when
//! (|z1|, |z2|, |z3|) ∈ (c_{i−1}, c_i) × (c_{j−1}, c_j) × (c_{s−1}, c_s)
//! for some i, j with s = A_ij.

use serde::{Deserialize, Serialize};

use crate::closed_form::AlphaSpec;
use crate::error::{Error, Result};
use crate::statmath::{folded_unchecked, std_normal_upper_quantile, Interval};

/// A K×K array of symbols 1..K in which every row and column is a
/// permutation. Serialized as a row-major array of arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct LatinSquare {
    k: usize,
    grid: Vec<Vec<usize>>,
}

impl TryFrom<Vec<Vec<usize>>> for LatinSquare {
    type Error = Error;

    fn try_from(rows: Vec<Vec<usize>>) -> Result<Self> {
        LatinSquare::from_rows(rows)
    }
}

impl From<LatinSquare> for Vec<Vec<usize>> {
    fn from(a: LatinSquare) -> Self {
        a.grid
    }
}

/// The identity and the five other permutations of (row, col, sym).
pub const CONJUGATES: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Relabelings applied by [`LatinSquare::normalize_corner`]; entry i holds
/// the new label (1-based) of old row, column or symbol i + 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Isotopism {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub symbols: Vec<usize>,
}

impl LatinSquare {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidArgument("Latin square of order 0".into()));
        }
        let mut seen_col = vec![vec![false; k]; k];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "row {} has {} entries, expected {k}",
                    i + 1,
                    row.len()
                )));
            }
            let mut seen_row = vec![false; k];
            for (j, &s) in row.iter().enumerate() {
                if s < 1 || s > k {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({}, {}) = {s} is not a symbol in 1..{k}",
                        i + 1,
                        j + 1
                    )));
                }
                if std::mem::replace(&mut seen_row[s - 1], true) {
                    return Err(Error::InvalidArgument(format!(
                        "symbol {s} repeats in row {}",
                        i + 1
                    )));
                }
                if std::mem::replace(&mut seen_col[j][s - 1], true) {
                    return Err(Error::InvalidArgument(format!(
                        "symbol {s} repeats in column {}",
                        j + 1
                    )));
                }
            }
        }
        Ok(LatinSquare { k, grid: rows })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn order(&self) -> usize {
        self.k
    }

    /// A_ij with 1-based indices.
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.grid[i - 1][j - 1]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.grid
    }

    /// The square whose orthogonal-array triples are (t[p0], t[p1], t[p2])
    /// for each triple t = (row, col, sym) of `self`.
    pub fn conjugate(&self, perm: [usize; 3]) -> Result<Self> {
        let mut sorted = perm;
        sorted.sort_unstable();
        if sorted != [0, 1, 2] {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of (0, 1, 2)"
            )));
        }
        let mut grid = vec![vec![0; self.k]; self.k];
        for i in 0..self.k {
            for j in 0..self.k {
                let t = [i, j, self.grid[i][j] - 1];
                grid[t[perm[0]]][t[perm[1]]] = t[perm[2]] + 1;
            }
        }
        Ok(LatinSquare { k: self.k, grid })
    }

    pub fn is_totally_symmetric(&self) -> bool {
        CONJUGATES
            .iter()
            .all(|&p| self.conjugate(p).map(|c| c == *self).unwrap_or(false))
    }

    /// Swaps row K with the row holding K in the last column, so that
    /// A_KK = K without relabeling symbols.
    pub fn normalize_corner(&self) -> (Self, Isotopism) {
        let k = self.k;
        let r = self
            .grid
            .iter()
            .position(|row| row[k - 1] == k)
            .expect("every column of a Latin square holds every symbol");
        let ident: Vec<usize> = (1..=k).collect();
        let mut rows = ident.clone();
        rows.swap(r, k - 1);
        let mut grid = self.grid.clone();
        grid.swap(r, k - 1);
        (
            LatinSquare { k, grid },
            Isotopism {
                rows,
                cols: ident.clone(),
                symbols: ident,
            },
        )
    }
}

/// A_ij = ((i + j − 2) mod K) + 1.
pub fn cyclic_latin(k: usize) -> Result<LatinSquare> {
    if k == 0 {
        return Err(Error::InvalidArgument("Latin square of order 0".into()));
    }
    let grid = (0..k)
        .map(|i| (0..k).map(|j| (i + j) % k + 1).collect())
        .collect();
    Ok(LatinSquare { k, grid })
}

/// c_0 = 0 < c_1 < … < c_K = ∞ with c_k = Φ⁻¹((1 + k/K)/2).
pub fn latin_breakpoints(k: usize) -> Vec<f64> {
    (0..=k)
        .map(|j| {
            if j == k {
                f64::INFINITY
            } else {
                std_normal_upper_quantile((k - j) as f64 / (2 * k) as f64) + 0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectionRegion3D {
    pub alpha: f64,
    pub square: LatinSquare,
    pub breakpoints: Vec<f64>,
    /// Open boxes on (|z1|, |z2|, |z3|).
    pub boxes: Vec<[Interval; 3]>,
}

pub fn build_latin_region(a: &LatinSquare, alpha: f64) -> Result<RejectionRegion3D> {
    let spec = AlphaSpec::new(alpha)?;
    if !spec.unit_fraction {
        return Err(Error::NotUnitFraction(alpha));
    }
    if spec.k != a.order() {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} needs a square of order {}, got order {}",
            spec.k,
            a.order()
        )));
    }
    let c = latin_breakpoints(spec.k);
    let band = |i: usize| Interval {
        lo: c[i - 1],
        hi: c[i],
    };
    let mut boxes = Vec::with_capacity(spec.k * spec.k);
    for i in 1..=spec.k {
        for j in 1..=spec.k {
            boxes.push([band(i), band(j), band(a.get(i, j))]);
        }
    }
    Ok(RejectionRegion3D {
        alpha,
        square: a.clone(),
        breakpoints: c,
        boxes,
    })
}

impl RejectionRegion3D {
    /// 1-based band of |z|, or None on a breakpoint.
    fn band(&self, z: f64) -> Option<usize> {
        let x = z.abs();
        let c = &self.breakpoints;
        let i = c.partition_point(|&e| e < x);
        if i == 0 || i >= c.len() || c[i] == x {
            return None;
        }
        Some(i)
    }

    pub fn rejects(&self, z: [f64; 3]) -> bool {
        match (self.band(z[0]), self.band(z[1]), self.band(z[2])) {
            (Some(i), Some(j), Some(s)) => self.square.get(i, j) == s,
            _ => false,
        }
    }

    /// Exact rejection probability when Z ~ N(δ, I₃).
    pub fn analytic_power3(&self, delta: [f64; 3]) -> f64 {
        self.boxes
            .iter()
            .map(|b| {
                (0..3)
                    .map(|axis| folded_unchecked(b[axis], delta[axis]))
                    .product::<f64>()
            })
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// A point whose membership changes under some coordinate permutation,
    /// with the permuted point; None when membership is permutation
    /// invariant on every band triple.
    pub fn permutation_counterexample(&self) -> Option<([f64; 3], [f64; 3])> {
        let c = &self.breakpoints;
        let k = c.len() - 1;
        let mid = |i: usize| {
            if c[i].is_infinite() {
                c[i - 1] + 1.0
            } else {
                0.5 * (c[i - 1] + c[i])
            }
        };
        for i in 1..=k {
            for j in 1..=k {
                for s in 1..=k {
                    let z = [mid(i), mid(j), mid(s)];
                    for p in CONJUGATES {
                        let w = [z[p[0]], z[p[1]], z[p[2]]];
                        if self.rejects(z) != self.rejects(w) {
                            return Some((z, w));
                        }
                    }
                }
            }
        }
        None
    }
}

//! Rejection regions built from weighted open rectangles.
//!
//! A [`RejectionRegion2D`] is a finite union of pairwise disjoint open
//! rectangles, each carrying the probability of rejecting when the statistic
//! lands inside it, plus an optional rule that applies outside the bounding
//! box of the cells. Point lookups go through a slab index (binary search
//! over x-breakpoints, then over the y-sorted cells of the slab).

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

use crate::error::{Error, Result};
use crate::statmath::{gaussian_interval_prob, std_normal_cdf, std_normal_sf, Interval};

pub const REGION_VERSION: &str = "region-v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRect {
    pub x: Interval,
    pub y: Interval,
    pub p: f64,
}

impl WeightedRect {
    pub fn new(x: Interval, y: Interval, p: f64) -> Self {
        WeightedRect { x, y, p }
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty() || self.y.is_empty()
    }

    #[inline]
    pub fn contains(&self, zx: f64, zy: f64) -> bool {
        self.x.contains(zx) && self.y.contains(zy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Minimax,
    Extended,
    JointSignificance,
    Bayes,
    Custom,
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionKind::Minimax => "minimax",
            RegionKind::Extended => "extended",
            RegionKind::JointSignificance => "joint_significance",
            RegionKind::Bayes => "bayes",
            RegionKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Rule for the unbounded remainder of the plane outside the cells' box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutsideRule {
    None,
    /// Reject when both |zx| ≥ threshold and |zy| ≥ threshold.
    JointSignificance { threshold: f64 },
}

/// Standardized statistic pair with optional provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestStatisticPair {
    pub zx: f64,
    pub zy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Raw estimates behind a statistic pair.
///
/// `se_x` and `se_y` are the scale estimates s_x, s_y of √n(δ̂ − δ), so the
/// standard error of δ̂x is `se_x / √n` and `zx = √n δ̂x / se_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub delta_x_hat: f64,
    pub delta_y_hat: f64,
    pub se_x: f64,
    pub se_y: f64,
    pub n: usize,
}

impl TestStatisticPair {
    pub fn new(zx: f64, zy: f64) -> Self {
        TestStatisticPair {
            zx,
            zy,
            provenance: None,
        }
    }

    pub fn from_provenance(prov: Provenance) -> Result<Self> {
        if !(prov.se_x > 0.0 && prov.se_y > 0.0) || prov.n == 0 {
            return Err(Error::InvalidArgument(
                "provenance needs positive scale estimates and n > 0".into(),
            ));
        }
        let rn = (prov.n as f64).sqrt();
        Ok(TestStatisticPair {
            zx: rn * prov.delta_x_hat / prov.se_x,
            zy: rn * prov.delta_y_hat / prov.se_y,
            provenance: Some(prov),
        })
    }
}

#[derive(Debug, Clone, Default)]
struct SlabIndex {
    breaks: Vec<f64>,
    // slab s spans (breaks[s], breaks[s + 1]); cell ids sorted by y.lo
    slabs: Vec<Vec<u32>>,
}

impl SlabIndex {
    fn build(cells: &[WeightedRect]) -> Result<Self> {
        let mut breaks: Vec<f64> = cells
            .iter()
            .filter(|c| !c.is_empty())
            .flat_map(|c| [c.x.lo, c.x.hi])
            .collect();
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        if breaks.len() < 2 {
            return Ok(SlabIndex::default());
        }
        let mut slabs = vec![Vec::new(); breaks.len() - 1];
        for (id, c) in cells.iter().enumerate() {
            if c.is_empty() {
                continue;
            }
            let s0 = breaks.partition_point(|&b| b < c.x.lo);
            let s1 = breaks.partition_point(|&b| b < c.x.hi);
            for slab in &mut slabs[s0..s1] {
                slab.push(id as u32);
            }
        }
        for slab in &mut slabs {
            slab.sort_by(|&a, &b| {
                cells[a as usize]
                    .y
                    .lo
                    .partial_cmp(&cells[b as usize].y.lo)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for w in slab.windows(2) {
                let (a, b) = (&cells[w[0] as usize], &cells[w[1] as usize]);
                if a.y.hi > b.y.lo {
                    let (i, j) = (w[0].min(w[1]), w[0].max(w[1]));
                    return Err(Error::OverlappingCells {
                        first: i as usize,
                        second: j as usize,
                    });
                }
            }
        }
        Ok(SlabIndex { breaks, slabs })
    }

    fn lookup(&self, cells: &[WeightedRect], zx: f64, zy: f64) -> Option<usize> {
        if self.slabs.is_empty() || !(zx > self.breaks[0]) {
            return None;
        }
        let s = self.breaks.partition_point(|&b| b <= zx) - 1;
        let slab = self.slabs.get(s)?;
        let j = slab.partition_point(|&id| cells[id as usize].y.lo < zy);
        if j == 0 {
            return None;
        }
        let id = slab[j - 1] as usize;
        cells[id].contains(zx, zy).then_some(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleBox {
    pub x: Interval,
    pub y: Interval,
}

impl RuleBox {
    fn contains_closed(&self, zx: f64, zy: f64) -> bool {
        self.x.lo <= zx && zx <= self.x.hi && self.y.lo <= zy && zy <= self.y.hi
    }
}

/// A possibly randomized rejection region in the (zx, zy) plane.
#[derive(Debug, Clone)]
pub struct RejectionRegion2D {
    alpha: f64,
    kind: RegionKind,
    cells: Vec<WeightedRect>,
    outside_rule: OutsideRule,
    explicit_box: Option<RuleBox>,
    rule_box: Option<RuleBox>,
    index: SlabIndex,
}

impl RejectionRegion2D {
    pub fn new(
        alpha: f64,
        kind: RegionKind,
        cells: Vec<WeightedRect>,
        outside_rule: OutsideRule,
    ) -> Result<Self> {
        Self::with_rule_box(alpha, kind, cells, outside_rule, None)
    }

    /// Like [`new`](Self::new) but with an explicit box outside of which the
    /// outside rule applies, instead of the bounding box of the cells.
    pub fn with_rule_box(
        alpha: f64,
        kind: RegionKind,
        cells: Vec<WeightedRect>,
        outside_rule: OutsideRule,
        explicit_box: Option<RuleBox>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        for (i, c) in cells.iter().enumerate() {
            c.x.validate(&format!("cells[{i}].x"))?;
            c.y.validate(&format!("cells[{i}].y"))?;
            if !(0.0..=1.0).contains(&c.p) {
                return Err(Error::InvalidProbability {
                    field: format!("cells[{i}].p"),
                    value: c.p,
                });
            }
        }
        if let OutsideRule::JointSignificance { threshold } = outside_rule {
            if !(threshold >= 0.0) || threshold.is_infinite() {
                return Err(Error::InvalidArgument(format!(
                    "outside_rule.threshold must be finite and nonnegative, got {threshold}"
                )));
            }
        }
        if kind == RegionKind::JointSignificance
            && (!cells.is_empty() || outside_rule == OutsideRule::None)
        {
            return Err(Error::InvalidArgument(
                "a joint_significance region has no cells and a joint_significance outside rule"
                    .into(),
            ));
        }
        if let Some(b) = explicit_box {
            b.x.validate("outside_rule.box.x")?;
            b.y.validate("outside_rule.box.y")?;
        }
        let index = SlabIndex::build(&cells)?;
        let rule_box = explicit_box.or_else(|| bounding_box(&cells));
        Ok(RejectionRegion2D {
            alpha,
            kind,
            cells,
            outside_rule,
            explicit_box,
            rule_box,
            index,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn cells(&self) -> &[WeightedRect] {
        &self.cells
    }

    pub fn outside_rule(&self) -> OutsideRule {
        self.outside_rule
    }

    /// The box outside of which the outside rule applies, if any.
    pub fn rule_box(&self) -> Option<RuleBox> {
        self.rule_box
    }

    pub fn cell_at(&self, zx: f64, zy: f64) -> Option<&WeightedRect> {
        self.index
            .lookup(&self.cells, zx, zy)
            .map(|id| &self.cells[id])
    }

    /// Rejection probability M(zx, zy) at a point. Cell boundaries accept.
    pub fn rejection_prob(&self, zx: f64, zy: f64) -> f64 {
        if let Some(c) = self.cell_at(zx, zy) {
            return c.p;
        }
        match self.outside_rule {
            OutsideRule::None => 0.0,
            OutsideRule::JointSignificance { threshold } => {
                let outside = self
                    .rule_box
                    .is_none_or(|b| !b.contains_closed(zx, zy));
                if outside && zx.abs() >= threshold && zy.abs() >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn rejection_prob_at_point(&self, z: &TestStatisticPair) -> f64 {
        self.rejection_prob(z.zx, z.zy)
    }

    /// Randomized decision given an auxiliary uniform draw `u` in [0, 1).
    pub fn decide(&self, zx: f64, zy: f64, u: f64) -> bool {
        u < self.rejection_prob(zx, zy)
    }

    /// Exact rejection probability when (Zx, Zy) ~ N((dx, dy), I).
    pub fn analytic_power(&self, dx: f64, dy: f64) -> f64 {
        let mut total = 0.0;
        for c in &self.cells {
            if c.p == 0.0 || c.is_empty() {
                continue;
            }
            total += c.p * gaussian_interval_prob(c.x, dx) * gaussian_interval_prob(c.y, dy);
        }
        if let OutsideRule::JointSignificance { threshold } = self.outside_rule {
            let mut mass = two_sided_tail(threshold, dx) * two_sided_tail(threshold, dy);
            if let Some(b) = self.rule_box {
                mass -= tail_within(threshold, b.x, dx) * tail_within(threshold, b.y, dy);
            }
            total += mass.max(0.0);
        }
        total.clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: RegionDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_doc(doc)
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn to_doc(&self) -> RegionDoc {
        RegionDoc {
            version: REGION_VERSION.to_string(),
            alpha: self.alpha,
            kind: self.kind,
            cells: self
                .cells
                .iter()
                .map(|c| CellDoc {
                    x: [ExtF64(c.x.lo), ExtF64(c.x.hi)],
                    y: [ExtF64(c.y.lo), ExtF64(c.y.hi)],
                    p: c.p,
                })
                .collect(),
            outside_rule: match self.outside_rule {
                OutsideRule::None => RuleDoc::None,
                OutsideRule::JointSignificance { threshold } => RuleDoc::JointSignificance {
                    threshold,
                    r#box: self.explicit_box.map(|b| BoxDoc {
                        x: [ExtF64(b.x.lo), ExtF64(b.x.hi)],
                        y: [ExtF64(b.y.lo), ExtF64(b.y.hi)],
                    }),
                },
            },
        }
    }

    fn from_doc(doc: RegionDoc) -> Result<Self> {
        if doc.version != REGION_VERSION {
            return Err(Error::Parse {
                field: "version".into(),
                message: format!("expected \"{REGION_VERSION}\", found \"{}\"", doc.version),
            });
        }
        let cells = doc
            .cells
            .iter()
            .map(|c| WeightedRect {
                x: Interval {
                    lo: c.x[0].0,
                    hi: c.x[1].0,
                },
                y: Interval {
                    lo: c.y[0].0,
                    hi: c.y[1].0,
                },
                p: c.p,
            })
            .collect();
        let (rule, explicit_box) = match doc.outside_rule {
            RuleDoc::None => (OutsideRule::None, None),
            RuleDoc::JointSignificance { threshold, r#box } => (
                OutsideRule::JointSignificance { threshold },
                r#box.map(|b| RuleBox {
                    x: Interval {
                        lo: b.x[0].0,
                        hi: b.x[1].0,
                    },
                    y: Interval {
                        lo: b.y[0].0,
                        hi: b.y[1].0,
                    },
                }),
            ),
        };
        Self::with_rule_box(doc.alpha, doc.kind, cells, rule, explicit_box)
    }
}

fn bounding_box(cells: &[WeightedRect]) -> Option<RuleBox> {
    let mut it = cells.iter().filter(|c| !c.is_empty());
    let first = it.next()?;
    let mut b = RuleBox {
        x: first.x,
        y: first.y,
    };
    for c in it {
        b.x.lo = b.x.lo.min(c.x.lo);
        b.x.hi = b.x.hi.max(c.x.hi);
        b.y.lo = b.y.lo.min(c.y.lo);
        b.y.hi = b.y.hi.max(c.y.hi);
    }
    Some(b)
}

/// Pr{|Z| ≥ t} for Z ~ N(mu, 1).
fn two_sided_tail(t: f64, mu: f64) -> f64 {
    std_normal_cdf(-t - mu) + std_normal_sf(t - mu)
}

/// Pr{|Z| ≥ t, Z ∈ iv} for Z ~ N(mu, 1).
fn tail_within(t: f64, iv: Interval, mu: f64) -> f64 {
    let left = iv.intersect(&Interval {
        lo: f64::NEG_INFINITY,
        hi: -t,
    });
    let right = iv.intersect(&Interval {
        lo: t,
        hi: f64::INFINITY,
    });
    gaussian_interval_prob(left, mu) + gaussian_interval_prob(right, mu)
}

/// Extended real written as a JSON number, or "inf" / "-inf".
#[derive(Debug, Clone, Copy, PartialEq)]
struct ExtF64(f64);

impl Serialize for ExtF64 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtF64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = ExtF64;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"inf\" / \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<ExtF64, E> {
                Ok(ExtF64(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<ExtF64, E> {
                Ok(ExtF64(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<ExtF64, E> {
                Ok(ExtF64(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ExtF64, E> {
                match v {
                    "inf" | "+inf" => Ok(ExtF64(f64::INFINITY)),
                    "-inf" => Ok(ExtF64(f64::NEG_INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    version: String,
    alpha: f64,
    kind: RegionKind,
    cells: Vec<CellDoc>,
    outside_rule: RuleDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellDoc {
    x: [ExtF64; 2],
    y: [ExtF64; 2],
    p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RuleDoc {
    None,
    JointSignificance {
        threshold: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r#box: Option<BoxDoc>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxDoc {
    x: [ExtF64; 2],
    y: [ExtF64; 2],
}

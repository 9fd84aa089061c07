//! Error metrics against a ground-truth displacement.
//!
//! Relative errors are `100·‖estimate − truth‖ / ‖truth‖` in the discrete L²
//! norm, in percent; the componentwise variants use the norms of single
//! components. They are undefined (`None`) when the reference norm is zero.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::boundary::Edge;
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub e_rel_u: Option<f64>,
    pub e_rel_u1: Option<f64>,
    pub e_rel_u2: Option<f64>,
    /// Largest `|estimate₁ − truth₁|`.
    pub max_abs_u1: f64,
    pub max_abs_u2: f64,
    pub abs_map_u1: ScalarField,
    pub abs_map_u2: ScalarField,
}

/// Flat record of the scalar metrics, used for CSV rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub e_rel_u: String,
    pub e_rel_u1: String,
    pub e_rel_u2: String,
    pub max_abs_u1: f64,
    pub max_abs_u2: f64,
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| 100.0 * (num / den).sqrt())
}

/// Text form of a possibly undefined percentage.
pub fn format_percent(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |p| format!("{p:.6}"))
}

/// Compare an estimate with the ground truth.
pub fn compare(estimate: &VectorField, truth: &VectorField) -> Result<ErrorReport> {
    estimate.geometry().ensure_same(truth.geometry())?;
    let diff = VectorField::linear_combine(1.0, estimate, -1.0, truth)?;
    let (d1, d2) = (sum_sq(diff.u1()), sum_sq(diff.u2()));
    let (t1, t2) = (sum_sq(truth.u1()), sum_sq(truth.u2()));
    let g = *truth.geometry();
    let abs1 = ScalarField::new(g, diff.u1().iter().map(|v| v.abs()).collect())?;
    let abs2 = ScalarField::new(g, diff.u2().iter().map(|v| v.abs()).collect())?;
    Ok(ErrorReport {
        e_rel_u: ratio(d1 + d2, t1 + t2),
        e_rel_u1: ratio(d1, t1),
        e_rel_u2: ratio(d2, t2),
        max_abs_u1: abs1.max(),
        max_abs_u2: abs2.max(),
        abs_map_u1: abs1,
        abs_map_u2: abs2,
    })
}

impl ErrorReport {
    pub fn summary(&self) -> ErrorSummary {
        ErrorSummary {
            e_rel_u: format_percent(self.e_rel_u),
            e_rel_u1: format_percent(self.e_rel_u1),
            e_rel_u2: format_percent(self.e_rel_u2),
            max_abs_u1: self.max_abs_u1,
            max_abs_u2: self.max_abs_u2,
        }
    }

    /// `key=value` lines, one metric per line.
    pub fn to_key_value(&self) -> String {
        self.to_string()
    }

    /// Header plus one CSV row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.serialize(self.summary()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.summary();
        writeln!(f, "metric=l2_relative_percent")?;
        writeln!(f, "e_rel_u={}", s.e_rel_u)?;
        writeln!(f, "e_rel_u1={}", s.e_rel_u1)?;
        writeln!(f, "e_rel_u2={}", s.e_rel_u2)?;
        writeln!(f, "max_abs_u1={:.6}", s.max_abs_u1)?;
        writeln!(f, "max_abs_u2={:.6}", s.max_abs_u2)
    }
}

/// Mean magnitude of the normal derivative over the non-corner pixels of the
/// given edges, averaged over both components. The derivative at a boundary
/// pixel `b` with inward neighbours `b − n`, `b − 2n` is the second-order
/// one-sided difference `(3u(b) − 4u(b − n) + u(b − 2n)) / 2h`. Measures how
/// far a field is from zero normal flux. Needs at least three pixels across.
pub fn mean_normal_derivative(field: &VectorField, edges: &[Edge]) -> f64 {
    let g = field.geometry();
    let (w, h) = (g.width(), g.height());
    let mut total = 0.0;
    let mut count = 0usize;
    for &edge in edges {
        let (positions, across) = match edge {
            Edge::Top | Edge::Bottom => (1..w - 1, h),
            Edge::Left | Edge::Right => (1..h - 1, w),
        };
        if across < 3 {
            continue;
        }
        for pos in positions {
            let (x, y) = edge.pixel(g, pos);
            let inward = |k: usize| match edge {
                Edge::Top => (x, k),
                Edge::Bottom => (x, h - 1 - k),
                Edge::Left => (k, y),
                Edge::Right => (w - 1 - k, y),
            };
            let (b, i, ii) = (field.get(x, y), inward(1), inward(2));
            let (i, ii) = (field.get(i.0, i.1), field.get(ii.0, ii.1));
            for c in 0..2 {
                total += (3.0 * b[c] - 4.0 * i[c] + ii[c]).abs() / (4.0 * g.spacing());
            }
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

//! Labeling of the grid boundary into Dirichlet, traction-free and natural
//! segments.
//!
//! The top and bottom edges own the corner pixels and are indexed by column
//! `0..width`. The left and right edges are indexed by row and cover
//! `1..height-1`. Pixels not claimed by any segment behave as natural
//! (free) boundary.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::GridGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Top, Edge::Bottom, Edge::Left, Edge::Right];

    /// Valid position range along this edge.
    pub fn range(self, geometry: &GridGeometry) -> (usize, usize) {
        match self {
            Edge::Top | Edge::Bottom => (0, geometry.width()),
            Edge::Left | Edge::Right => (1, geometry.height() - 1),
        }
    }

    /// Pixel `(x, y)` at `position` along this edge.
    pub fn pixel(self, geometry: &GridGeometry, position: usize) -> (usize, usize) {
        match self {
            Edge::Top => (position, 0),
            Edge::Bottom => (position, geometry.height() - 1),
            Edge::Left => (0, position),
            Edge::Right => (geometry.width() - 1, position),
        }
    }

    /// Edge owning a boundary pixel, with its position along that edge.
    pub fn locate(geometry: &GridGeometry, x: usize, y: usize) -> Option<(Edge, usize)> {
        if y == 0 {
            Some((Edge::Top, x))
        } else if y + 1 == geometry.height() {
            Some((Edge::Bottom, x))
        } else if x == 0 {
            Some((Edge::Left, y))
        } else if x + 1 == geometry.width() {
            Some((Edge::Right, y))
        } else {
            None
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Edge::Top => "top",
            Edge::Bottom => "bottom",
            Edge::Left => "left",
            Edge::Right => "right",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Edge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Edge::Top),
            "bottom" => Ok(Edge::Bottom),
            "left" => Ok(Edge::Left),
            "right" => Ok(Edge::Right),
            other => Err(Error::InvalidBoundary(format!("unknown edge {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SegmentKind {
    /// Prescribed displacement `g`.
    Dirichlet([f64; 2]),
    /// Free surface of an elastic body.
    TractionFree,
    /// No condition imposed; the variational problem supplies its own.
    Natural,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub edge: Edge,
    /// First position along the edge.
    pub start: usize,
    /// One past the last position along the edge.
    pub end: usize,
    pub kind: SegmentKind,
}

/// Boundary segments of an experiment, defined for one grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundarySpec {
    segments: Vec<Segment>,
}

impl BoundarySpec {
    /// Validate that segments stay on their edges and do not overlap.
    pub fn new(geometry: &GridGeometry, segments: Vec<Segment>) -> Result<Self> {
        let spec = Self { segments };
        spec.resolve(geometry)?;
        Ok(spec)
    }

    /// No segments: every boundary pixel is natural.
    pub fn natural() -> Self {
        Self::default()
    }

    /// Sample fixed along the top edge, compressed by `compression` (pixels
    /// of upward motion) along the bottom edge, sides traction-free.
    pub fn compression(geometry: &GridGeometry, compression: f64) -> Self {
        let (w, h) = (geometry.width(), geometry.height());
        let segments = vec![
            Segment {
                edge: Edge::Top,
                start: 0,
                end: w,
                kind: SegmentKind::Dirichlet([0.0, 0.0]),
            },
            Segment {
                edge: Edge::Bottom,
                start: 0,
                end: w,
                kind: SegmentKind::Dirichlet([0.0, -compression * geometry.spacing()]),
            },
            Segment {
                edge: Edge::Left,
                start: 1,
                end: h - 1,
                kind: SegmentKind::TractionFree,
            },
            Segment {
                edge: Edge::Right,
                start: 1,
                end: h - 1,
                kind: SegmentKind::TractionFree,
            },
        ];
        Self { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn has_dirichlet(&self) -> bool {
        self.segments
            .iter()
            .any(|s| matches!(s.kind, SegmentKind::Dirichlet(_)))
    }

    /// Same segments with every Dirichlet value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                kind: match s.kind {
                    SegmentKind::Dirichlet([a, b]) => SegmentKind::Dirichlet([a * factor, b * factor]),
                    other => other,
                },
                ..*s
            })
            .collect();
        Self { segments }
    }

    /// Per-pixel segment kind on `geometry`; `None` for interior pixels and
    /// for unclaimed boundary pixels.
    pub fn resolve(&self, geometry: &GridGeometry) -> Result<Vec<Option<SegmentKind>>> {
        let mut labels: Vec<Option<SegmentKind>> = vec![None; geometry.len()];
        for seg in &self.segments {
            let (lo, hi) = seg.edge.range(geometry);
            if seg.start >= seg.end || seg.start < lo || seg.end > hi {
                return Err(Error::InvalidBoundary(format!(
                    "{} segment [{}, {}) outside valid range [{lo}, {hi}) on {geometry}",
                    seg.edge, seg.start, seg.end
                )));
            }
            if let SegmentKind::Dirichlet(g) = seg.kind {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidBoundary("non-finite Dirichlet value".into()));
                }
            }
            for pos in seg.start..seg.end {
                let (x, y) = seg.edge.pixel(geometry, pos);
                let slot = &mut labels[geometry.index(x, y)];
                if slot.is_some() {
                    return Err(Error::InvalidBoundary(format!(
                        "segments overlap at pixel ({x}, {y})"
                    )));
                }
                *slot = Some(seg.kind);
            }
        }
        Ok(labels)
    }

    /// Dirichlet values per pixel on `geometry`.
    pub fn dirichlet_map(&self, geometry: &GridGeometry) -> Result<DirichletMap> {
        let labels = self.resolve(geometry)?;
        let values = labels
            .into_iter()
            .map(|l| match l {
                Some(SegmentKind::Dirichlet(g)) => Some(g),
                _ => None,
            })
            .collect();
        Ok(DirichletMap {
            geometry: *geometry,
            values,
        })
    }

    /// Dirichlet values on a subsampled grid whose pixel `(x, y)` sits at
    /// `(x·factor, y·factor)` of `fine`. Boundary pixels of the coarse grid
    /// inherit the label of the fine pixel at the same relative position on
    /// the same edge; values are multiplied by `value_scale`.
    pub fn dirichlet_map_subsampled(
        &self,
        fine: &GridGeometry,
        coarse: &GridGeometry,
        factor: usize,
        value_scale: f64,
    ) -> Result<DirichletMap> {
        let fine_map = self.dirichlet_map(fine)?;
        let mut values = vec![None; coarse.len()];
        for y in 0..coarse.height() {
            for x in 0..coarse.width() {
                let Some((edge, pos)) = Edge::locate(coarse, x, y) else {
                    continue;
                };
                let (lo, hi) = edge.range(fine);
                let fine_pos = (pos * factor).clamp(lo, hi - 1);
                let (fx, fy) = edge.pixel(fine, fine_pos);
                values[coarse.index(x, y)] = fine_map.values[fine.index(fx, fy)]
                    .map(|[a, b]| [a * value_scale, b * value_scale]);
            }
        }
        Ok(DirichletMap {
            geometry: *coarse,
            values,
        })
    }
}

/// Prescribed displacement per pixel (`None` where unconstrained).
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletMap {
    geometry: GridGeometry,
    values: Vec<Option<[f64; 2]>>,
}

impl DirichletMap {
    /// No constrained pixels.
    pub fn empty(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            values: vec![None; geometry.len()],
        }
    }

    pub(crate) fn from_values(geometry: GridGeometry, values: Vec<Option<[f64; 2]>>) -> Self {
        assert_eq!(values.len(), geometry.len());
        Self { geometry, values }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn get(&self, index: usize) -> Option<[f64; 2]> {
        self.values[index]
    }

    pub fn values(&self) -> &[Option<[f64; 2]>] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compression_preset_partitions_boundary() {
        let g = GridGeometry::new(6, 5).unwrap();
        let spec = BoundarySpec::compression(&g, 2.0);
        let labels = spec.resolve(&g).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(labels[g.index(x, y)].is_some(), g.is_boundary(x, y));
            }
        }
        let map = spec.dirichlet_map(&g).unwrap();
        assert_eq!(map.count(), 12);
        assert_eq!(map.get(g.index(3, 0)), Some([0.0, 0.0]));
        assert_eq!(map.get(g.index(0, 4)), Some([0.0, -2.0]));
        assert_eq!(map.get(g.index(0, 2)), None);
    }

    #[test]
    fn overlapping_segments_rejected() {
        let g = GridGeometry::new(5, 5).unwrap();
        let seg = |start, end| Segment {
            edge: Edge::Top,
            start,
            end,
            kind: SegmentKind::Natural,
        };
        assert!(BoundarySpec::new(&g, vec![seg(0, 3), seg(2, 5)]).is_err());
        assert!(BoundarySpec::new(&g, vec![seg(0, 3), seg(3, 5)]).is_ok());
        // left edge may not claim corners
        let corner = Segment {
            edge: Edge::Left,
            start: 0,
            end: 2,
            kind: SegmentKind::Natural,
        };
        assert!(BoundarySpec::new(&g, vec![corner]).is_err());
    }

    #[test]
    fn subsampled_map_keeps_edges_and_scales_values() {
        let fine = GridGeometry::new(16, 16).unwrap();
        let coarse = GridGeometry::new(8, 8).unwrap();
        let spec = BoundarySpec::compression(&fine, 4.0);
        let map = spec.dirichlet_map_subsampled(&fine, &coarse, 2, 0.5).unwrap();
        for x in 0..8 {
            assert_eq!(map.get(coarse.index(x, 0)), Some([0.0, 0.0]));
            assert_eq!(map.get(coarse.index(x, 7)), Some([0.0, -2.0]));
        }
        assert_eq!(map.count(), 16);
    }
}

//! Bubble detection and tracking.
//!
//! Bubbles are large bright speckle formations. They are found in the first
//! frame by thresholding and 8-connected labeling, and followed into the
//! second frame by exhaustive zero-mean normalized cross-correlation with a
//! parabolic subpixel refinement per axis.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::derivatives::ImagePair;
use crate::error::{Error, Result};
use crate::field::ScalarField;

/// A tracked speckle formation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bubble {
    /// Center of mass `(x, y)` in pixel coordinates of the first frame.
    pub center: [f64; 2],
    /// Displacement between the frames, in the grid's length unit.
    pub motion: [f64; 2],
    /// Relative weight in the speckle term.
    pub weight: f64,
    /// Peak normalized cross-correlation of the match.
    pub score: f64,
}

impl Bubble {
    pub fn new(center: [f64; 2], motion: [f64; 2]) -> Self {
        Self {
            center,
            motion,
            weight: 1.0,
            score: 1.0,
        }
    }
}

/// Detection and tracking parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerParams {
    /// Binarization level as a fraction of the frame's intensity range.
    pub threshold: f64,
    pub min_area: usize,
    pub max_area: usize,
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Matches scoring below this are discarded.
    pub min_score: f64,
    /// When set, each match is tracked back from frame 1 into frame 0 and
    /// kept only if it returns within this many pixels (per axis) of its
    /// start, and matches peaking on the rim of the search window are
    /// dropped. This removes matches onto a neighbouring bubble.
    pub consistency: Option<usize>,
    /// When set, a motion is dropped if it differs from the median motion
    /// of its nearest tracked neighbours by more than this many times their
    /// median deviation from it (normalized median test).
    pub median_test: Option<f64>,
}

/// Default threshold of the normalized median test.
pub const MEDIAN_THRESHOLD: f64 = 2.0;
/// Neighbours consulted by the median test.
const MEDIAN_NEIGHBOURS: usize = 8;
/// Floor on the neighbour deviation, in pixels, so uniform motion does not
/// reject subpixel noise.
const MEDIAN_FLOOR: f64 = 0.1;

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_area: 5,
            max_area: 100,
            patch_radius: 7,
            search_radius: 15,
            min_score: 0.6,
            consistency: Some(1),
            median_test: Some(MEDIAN_THRESHOLD),
        }
    }
}

/// Find bright blobs of `min_area..=max_area` pixels.
///
/// Pixels above `min + threshold·(max − min)` are foreground. Centers are
/// intensity-weighted centroids; motions are left at zero.
pub fn detect_bubbles(
    image: &ScalarField,
    min_area: usize,
    max_area: usize,
    threshold: f64,
) -> Result<Vec<Bubble>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if min_area == 0 || min_area > max_area {
        return Err(Error::InvalidParameter(format!(
            "need 0 < min_area <= max_area, got {min_area}..{max_area}"
        )));
    }
    let g = image.geometry();
    let (w, h) = (g.width(), g.height());
    let (lo, hi) = (image.min(), image.max());
    if hi <= lo {
        return Ok(Vec::new());
    }
    let level = lo + threshold * (hi - lo);
    let values = image.values();
    let foreground: Vec<bool> = values.iter().map(|v| *v > level).collect();

    let mut visited = vec![false; g.len()];
    let mut queue = VecDeque::new();
    let mut bubbles = Vec::new();
    for start in 0..g.len() {
        if !foreground[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let (mut area, mut mass, mut mx, mut my) = (0usize, 0.0, 0.0, 0.0);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            let v = values[p];
            area += 1;
            mass += v;
            mx += v * x as f64;
            my += v * y as f64;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if foreground[q] && !visited[q] {
                        visited[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if (min_area..=max_area).contains(&area) && mass > 0.0 {
            bubbles.push(Bubble::new([mx / mass, my / mass], [0.0, 0.0]));
        }
    }
    Ok(bubbles)
}

/// Square patch of `radius` around `(cx, cy)`, or `None` when it leaves the
/// grid.
fn patch(image: &ScalarField, cx: i64, cy: i64, radius: i64) -> Option<Vec<f64>> {
    let g = image.geometry();
    if cx - radius < 0
        || cy - radius < 0
        || cx + radius >= g.width() as i64
        || cy + radius >= g.height() as i64
    {
        return None;
    }
    let mut out = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    for y in cy - radius..=cy + radius {
        for x in cx - radius..=cx + radius {
            out.push(image.get(x as usize, y as usize));
        }
    }
    Some(out)
}

/// Zero-mean normalized cross-correlation; 0 when either patch is flat.
fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        ab += da * db;
        aa += da * da;
        bb += db * db;
    }
    if aa <= 0.0 || bb <= 0.0 {
        return 0.0;
    }
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Vertex offset of the parabola through three samples around a maximum.
fn parabolic_peak(minus: f64, center: f64, plus: f64) -> f64 {
    let curvature = minus - 2.0 * center + plus;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (minus - plus) / curvature).clamp(-0.5, 0.5)
}

/// NCC scores of one template over the search window.
struct Match {
    dx: i64,
    dy: i64,
    score: f64,
    radius: i64,
    scores: Vec<f64>,
}

impl Match {
    fn at(&self, ox: i64, oy: i64) -> Option<f64> {
        let sr = self.radius;
        if ox.abs() > sr || oy.abs() > sr {
            return None;
        }
        let side = (2 * sr + 1) as usize;
        let s = self.scores[((oy + sr) as usize) * side + (ox + sr) as usize];
        (!s.is_nan()).then_some(s)
    }
}

/// Best integer offset of the patch around `(cx, cy)` in `from` within
/// `sr` pixels in `to`. Ties keep the first offset in (axial, lateral)
/// order.
fn best_match(from: &ScalarField, to: &ScalarField, cx: i64, cy: i64, r: i64, sr: i64) -> Option<Match> {
    let template = patch(from, cx, cy, r)?;
    let side = (2 * sr + 1) as usize;
    let mut scores = vec![f64::NAN; side * side];
    let mut best: Option<(i64, i64, f64)> = None;
    for dy in -sr..=sr {
        for dx in -sr..=sr {
            let Some(candidate) = patch(to, cx + dx, cy + dy, r) else {
                continue;
            };
            let score = ncc(&template, &candidate);
            scores[((dy + sr) as usize) * side + (dx + sr) as usize] = score;
            if best.map_or(true, |(_, _, b)| score > b) {
                best = Some((dx, dy, score));
            }
        }
    }
    let (dx, dy, score) = best?;
    Some(Match {
        dx,
        dy,
        score,
        radius: sr,
        scores,
    })
}

/// Estimate the motion of each bubble from frame 0 into frame 1.
///
/// Bubbles whose template leaves the grid, whose best score falls below
/// `params.min_score`, or that fail the optional forward-backward check are
/// dropped. Output keeps the input order.
pub fn track_bubbles(pair: &ImagePair, bubbles: &[Bubble], params: &TrackerParams) -> Result<Vec<Bubble>> {
    if params.patch_radius < 2 || params.search_radius < 1 {
        return Err(Error::InvalidParameter(format!(
            "need patch_radius >= 2 and search_radius >= 1, got {} and {}",
            params.patch_radius, params.search_radius
        )));
    }
    let r = params.patch_radius as i64;
    let sr = params.search_radius as i64;
    let spacing = pair.geometry().spacing();
    let mut tracked = Vec::with_capacity(bubbles.len());
    for bubble in bubbles {
        let cx = bubble.center[0].round() as i64;
        let cy = bubble.center[1].round() as i64;
        let Some(m) = best_match(pair.frame0(), pair.frame1(), cx, cy, r, sr) else {
            continue;
        };
        let (dx, dy, score) = (m.dx, m.dy, m.score);
        if score < params.min_score {
            continue;
        }
        if let Some(tol) = params.consistency {
            // a peak on the rim of the searched area is not a local maximum
            if [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(ox, oy)| m.at(dx + ox, dy + oy).is_none()) {
                continue;
            }
            let tol = tol as i64;
            match best_match(pair.frame1(), pair.frame0(), cx + dx, cy + dy, r, sr) {
                Some(back) if (back.dx + dx).abs() <= tol && (back.dy + dy).abs() <= tol => {}
                _ => continue,
            }
        }
        let at = |ox: i64, oy: i64| m.at(ox, oy);
        let (mut sx, mut sy) = (0.0, 0.0);
        // an exact match sits on the integer grid
        if score < 1.0 - 1e-12 {
            if let (Some(m), Some(p)) = (at(dx - 1, dy), at(dx + 1, dy)) {
                sx = parabolic_peak(m, score, p);
            }
            if let (Some(m), Some(p)) = (at(dx, dy - 1), at(dx, dy + 1)) {
                sy = parabolic_peak(m, score, p);
            }
        }
        tracked.push(Bubble {
            center: bubble.center,
            motion: [(dx as f64 + sx) * spacing, (dy as f64 + sy) * spacing],
            weight: bubble.weight,
            score,
        });
    }
    Ok(match params.median_test {
        Some(threshold) => median_filter(tracked, threshold, spacing),
        None => tracked,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Drop bubbles whose motion disagrees with their neighbourhood. Bubbles
/// with fewer than three neighbours are kept.
fn median_filter(bubbles: Vec<Bubble>, threshold: f64, spacing: f64) -> Vec<Bubble> {
    if bubbles.len() < 4 {
        return bubbles;
    }
    let keep: Vec<bool> = bubbles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut others: Vec<(f64, usize)> = bubbles
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, o)| {
                    let d = (o.center[0] - b.center[0]).powi(2) + (o.center[1] - b.center[1]).powi(2);
                    (d, j)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.truncate(MEDIAN_NEIGHBOURS);
            (0..2).all(|c| {
                let mut m: Vec<f64> = others.iter().map(|&(_, j)| bubbles[j].motion[c]).collect();
                let med = median(&mut m);
                let mut dev: Vec<f64> = m.iter().map(|v| (v - med).abs()).collect();
                let spread = median(&mut dev);
                (b.motion[c] - med).abs() <= threshold * (spread + MEDIAN_FLOOR * spacing)
            })
        })
        .collect();
    bubbles.into_iter().zip(keep).filter_map(|(b, k)| k.then_some(b)).collect()
}

#[derive(Serialize, Deserialize)]
struct BubbleRecord {
    id: usize,
    cx: f64,
    cy: f64,
    ux: f64,
    uy: f64,
    weight: f64,
    score: f64,
}

/// Write bubbles as CSV with columns `id,cx,cy,ux,uy,weight,score`.
pub fn write_bubbles_csv<W: Write>(writer: W, bubbles: &[Bubble]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for (id, b) in bubbles.iter().enumerate() {
        out.serialize(BubbleRecord {
            id,
            cx: b.center[0],
            cy: b.center[1],
            ux: b.motion[0],
            uy: b.motion[1],
            weight: b.weight,
            score: b.score,
        })
        .map_err(|e| Error::MalformedBubbles(e.to_string()))?;
    }
    out.flush()
        .map_err(|e| Error::MalformedBubbles(e.to_string()))
}

/// Read a bubble CSV written by [`write_bubbles_csv`]; rows come back in
/// file order.
pub fn read_bubbles_csv<R: Read>(reader: R) -> Result<Vec<Bubble>> {
    let mut input = csv::Reader::from_reader(reader);
    let mut bubbles = Vec::new();
    for record in input.deserialize::<BubbleRecord>() {
        let r = record.map_err(|e| Error::MalformedBubbles(e.to_string()))?;
        if !(r.weight > 0.0) {
            return Err(Error::MalformedBubbles(format!(
                "bubble {} has non-positive weight {}",
                r.id, r.weight
            )));
        }
        bubbles.push(Bubble {
            center: [r.cx, r.cy],
            motion: [r.ux, r.uy],
            weight: r.weight,
            score: r.score,
        });
    }
    Ok(bubbles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridGeometry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth random texture with a few bright square blobs.
    fn textured(g: GridGeometry, seed: u64, blobs: &[(usize, usize)]) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
        ScalarField::from_fn(g, |x, y| {
            let mut acc = 0.0;
            let mut n = 0.0;
            for oy in -1i64..=1 {
                for ox in -1i64..=1 {
                    let xx = (x as i64 + ox).clamp(0, g.width() as i64 - 1) as usize;
                    let yy = (y as i64 + oy).clamp(0, g.height() as i64 - 1) as usize;
                    acc += noise[g.index(xx, yy)];
                    n += 1.0;
                }
            }
            let mut v = 0.4 * acc / n;
            for &(bx, by) in blobs {
                if x.abs_diff(bx) <= 2 && y.abs_diff(by) <= 2 {
                    v = 0.95;
                }
            }
            v
        })
        .unwrap()
    }

    fn shifted(img: &ScalarField, dx: i64, dy: i64) -> ScalarField {
        let g = *img.geometry();
        ScalarField::from_fn(g, |x, y| {
            let sx = (x as i64 - dx).clamp(0, g.width() as i64 - 1) as usize;
            let sy = (y as i64 - dy).clamp(0, g.height() as i64 - 1) as usize;
            img.get(sx, sy)
        })
        .unwrap()
    }

    #[test]
    fn black_image_has_no_bubbles() {
        let g = GridGeometry::new(16, 16).unwrap();
        assert!(detect_bubbles(&ScalarField::zeros(g), 1, 100, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_square_found_at_its_centroid() {
        let g = GridGeometry::new(20, 20).unwrap();
        let img = ScalarField::from_fn(g, |x, y| {
            if (6..11).contains(&x) && (9..14).contains(&y) {
                0.9
            } else {
                0.1
            }
        })
        .unwrap();
        let found = detect_bubbles(&img, 9, 100, 0.5).unwrap();
        assert_eq!(found.len(), 1);
        assert!((found[0].center[0] - 8.0).abs() < 1e-9);
        assert!((found[0].center[1] - 11.0).abs() < 1e-9);
        // area bounds exclude it
        assert!(detect_bubbles(&img, 26, 100, 0.5).unwrap().is_empty());
        assert!(detect_bubbles(&img, 1, 24, 0.5).unwrap().is_empty());
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let g = GridGeometry::new(8, 8).unwrap();
        let img = ScalarField::from_fn(g, |x, y| if x == y && x < 4 { 1.0 } else { 0.0 }).unwrap();
        let found = detect_bubbles(&img, 1, 10, 0.5).unwrap();
        assert_eq!(found.len(), 1);
        assert!((found[0].center[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn detection_rejects_bad_parameters() {
        let img = ScalarField::zeros(GridGeometry::new(4, 4).unwrap());
        assert!(detect_bubbles(&img, 1, 10, 0.0).is_err());
        assert!(detect_bubbles(&img, 1, 10, 1.0).is_err());
        assert!(detect_bubbles(&img, 0, 10, 0.5).is_err());
        assert!(detect_bubbles(&img, 11, 10, 0.5).is_err());
    }

    #[test]
    fn static_pair_gives_zero_motion_and_unit_score() {
        let g = GridGeometry::new(64, 64).unwrap();
        let img = textured(g, 3, &[(20, 20), (40, 30)]);
        let pair = ImagePair::new(img.clone(), img.clone()).unwrap();
        let bubbles = detect_bubbles(&img, 9, 100, 0.5).unwrap();
        assert_eq!(bubbles.len(), 2);
        let tracked = track_bubbles(&pair, &bubbles, &TrackerParams::default()).unwrap();
        assert_eq!(tracked.len(), 2);
        for b in tracked {
            assert_eq!(b.motion, [0.0, 0.0]);
            assert!((b.score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_translation_recovered_exactly() {
        let g = GridGeometry::new(64, 64).unwrap();
        let img = textured(g, 5, &[(22, 24), (38, 34), (30, 40)]);
        let moved = shifted(&img, 3, 2);
        let pair = ImagePair::new(img.clone(), moved).unwrap();
        let bubbles = detect_bubbles(&img, 9, 100, 0.5).unwrap();
        let tracked = track_bubbles(&pair, &bubbles, &TrackerParams::default()).unwrap();
        assert_eq!(tracked.len(), 3);
        for b in tracked {
            assert_eq!(b.motion, [3.0, 2.0]);
        }
    }

    #[test]
    fn bubbles_near_edges_are_skipped() {
        let g = GridGeometry::new(32, 32).unwrap();
        let img = textured(g, 8, &[(3, 3)]);
        let pair = ImagePair::new(img.clone(), img.clone()).unwrap();
        let bubbles = detect_bubbles(&img, 9, 100, 0.5).unwrap();
        assert_eq!(bubbles.len(), 1);
        assert!(track_bubbles(&pair, &bubbles, &TrackerParams::default()).unwrap().is_empty());
    }

    #[test]
    fn backward_check_rejects_match_onto_neighbour() {
        let g = GridGeometry::new(64, 48).unwrap();
        let img = textured(g, 21, &[(12, 24), (30, 24)]);
        // everything moves 10 px left; the left blob's true match leaves the grid
        let moved = shifted(&img, -10, 0);
        let pair = ImagePair::new(img.clone(), moved).unwrap();
        let bubbles = detect_bubbles(&img, 9, 100, 0.5).unwrap();
        assert_eq!(bubbles.len(), 2);
        let unchecked = TrackerParams {
            consistency: None,
            ..TrackerParams::default()
        };
        let loose = track_bubbles(&pair, &bubbles, &unchecked).unwrap();
        assert_eq!(loose.len(), 2);
        assert!((loose[0].motion[0] - 8.0).abs() < 0.5);
        let checked = track_bubbles(&pair, &bubbles, &TrackerParams::default()).unwrap();
        assert_eq!(checked.len(), 1);
        assert_eq!(checked[0].motion, [-10.0, 0.0]);
    }

    #[test]
    fn median_test_drops_the_odd_motion() {
        let mut bubbles: Vec<Bubble> = (0..9)
            .map(|i| Bubble::new([(i % 3) as f64 * 10.0, (i / 3) as f64 * 10.0], [1.0 + 0.01 * i as f64, -2.0]))
            .collect();
        bubbles[4].motion = [6.0, -2.0];
        let kept = median_filter(bubbles.clone(), MEDIAN_THRESHOLD, 1.0);
        assert_eq!(kept.len(), 8);
        assert!(kept.iter().all(|b| b.motion[0] < 2.0));
        assert_eq!(median_filter(bubbles[..3].to_vec(), MEDIAN_THRESHOLD, 1.0).len(), 3);
    }

    #[test]
    fn parabola_vertex() {
        // samples of -(x - 0.25)^2 at -1, 0, 1
        let f = |x: f64| -(x - 0.25) * (x - 0.25);
        assert!((parabolic_peak(f(-1.0), f(0.0), f(1.0)) - 0.25).abs() < 1e-12);
        assert_eq!(parabolic_peak(1.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let bubbles = vec![
            Bubble { center: [1.5, 2.25], motion: [-0.5, 3.0], weight: 2.0, score: 0.9 },
            Bubble::new([10.0, 11.0], [0.0, 0.125]),
        ];
        let mut buf = Vec::new();
        write_bubbles_csv(&mut buf, &bubbles).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,cx,cy,ux,uy,weight,score\n"));
        assert_eq!(read_bubbles_csv(buf.as_slice()).unwrap(), bubbles);
        assert!(read_bubbles_csv("id,cx\n0,1\n".as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn tracking_is_translation_equivariant(tx in -4i64..=4, ty in -4i64..=4, seed in 0u64..1000) {
            let g = GridGeometry::new(72, 72).unwrap();
            let blobs = [(30usize, 30usize), (42, 38)];
            let img = textured(g, seed, &blobs);
            let moved = shifted(&img, 2, -1);
            let bubbles = detect_bubbles(&img, 9, 100, 0.5).unwrap();
            let base = track_bubbles(&ImagePair::new(img.clone(), moved.clone()).unwrap(), &bubbles, &TrackerParams::default()).unwrap();

            let img_t = shifted(&img, tx, ty);
            let moved_t = shifted(&moved, tx, ty);
            let bubbles_t: Vec<Bubble> = bubbles.iter().map(|b| Bubble::new([b.center[0] + tx as f64, b.center[1] + ty as f64], [0.0, 0.0])).collect();
            let moved_pair = ImagePair::new(img_t, moved_t).unwrap();
            let translated = track_bubbles(&moved_pair, &bubbles_t, &TrackerParams::default()).unwrap();
            prop_assert_eq!(base.len(), translated.len());
            for (a, b) in base.iter().zip(&translated) {
                prop_assert_eq!(a.motion, b.motion);
                prop_assert!(a.score >= -1.0 && a.score <= 1.0);
            }
        }
    }
}

//! Synthetic compression experiment with known ground truth.
//!
//! A speckle texture with bright bubbles is compressed through an elastic
//! sample holding a circular stiff inclusion. The displacement comes from an
//! inhomogeneous elasticity solve, and the second frame is rendered so that
//! `frame1(x + u(x)) = frame0(x)`, the convention of the optical flow
//! equation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::BoundarySpec;
use crate::derivatives::{gaussian_blur, ImagePair};
use crate::elasticity::{solve_inhomogeneous, MaterialParams};
use crate::error::{Error, Result};
use crate::field::{GridGeometry, ScalarField, VectorField};
use crate::speckle::Bubble;

/// Default peak-to-peak intensity of the background speckle.
pub const SPECKLE_CONTRAST: f64 = 0.4;
/// Default blur of the raw per-pixel noise.
pub const SPECKLE_BLUR: f64 = 1.0;
/// Default blur of the composed frame.
pub const IMAGE_BLUR: f64 = 0.0;
/// Darkest intensity of the background speckle.
pub const SPECKLE_FLOOR: f64 = 0.05;
/// Peak bubble intensity.
pub const BUBBLE_INTENSITY: f64 = 0.95;
/// Minimum free space between two bubble rims.
const BUBBLE_GAP: f64 = 3.0;
/// Minimum distance between a bubble rim and the image border.
const BORDER_MARGIN: f64 = 2.0;
/// Tolerance of the elasticity solve producing the ground truth.
const TRUTH_TOL: f64 = 1e-10;
const TRUTH_MAX_ITER: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub geometry: GridGeometry,
    /// Inclusion center in pixels.
    pub inclusion_center: [f64; 2],
    /// Inclusion radius in pixels.
    pub inclusion_radius: f64,
    /// Young's modulus of the inclusion over that of the background.
    pub stiffness_ratio: f64,
    pub n_bubbles: usize,
    /// Smallest and largest bubble radius in pixels.
    pub bubble_radius_range: (f64, f64),
    /// Upward displacement of the bottom edge in pixels.
    pub compression: f64,
    /// Peak-to-peak intensity of the background speckle, at most 0.4 so the
    /// texture stays below the default bubble detection threshold.
    pub speckle_contrast: f64,
    /// Standard deviation in pixels of the blur smoothing the speckle noise.
    pub speckle_blur: f64,
    /// Standard deviation in pixels of a final blur over the whole frame,
    /// softening the bubble rims.
    pub image_blur: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let geometry = GridGeometry::new(256, 256).expect("valid default geometry");
        Self {
            geometry,
            inclusion_center: [127.5, 127.5],
            inclusion_radius: 40.0,
            stiffness_ratio: 5.0,
            n_bubbles: 200,
            bubble_radius_range: (2.0, 4.0),
            compression: 4.0,
            speckle_contrast: SPECKLE_CONTRAST,
            speckle_blur: SPECKLE_BLUR,
            image_blur: IMAGE_BLUR,
            seed: 42,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let (w, h) = (self.geometry.width() as f64, self.geometry.height() as f64);
        let [cx, cy] = self.inclusion_center;
        let r = self.inclusion_radius;
        if !(r.is_finite() && r > 0.0) {
            return bad(format!("inclusion radius must be positive, got {r}"));
        }
        if !(cx - r >= 0.0 && cy - r >= 0.0 && cx + r <= w - 1.0 && cy + r <= h - 1.0) {
            return bad(format!("inclusion at ({cx}, {cy}) with radius {r} leaves the {w}x{h} grid"));
        }
        if !(self.stiffness_ratio.is_finite() && self.stiffness_ratio > 0.0) {
            return bad(format!("stiffness ratio must be positive, got {}", self.stiffness_ratio));
        }
        let (rmin, rmax) = self.bubble_radius_range;
        if !(rmin.is_finite() && rmax.is_finite() && rmin > 0.0 && rmin <= rmax) {
            return bad(format!("bubble radius range ({rmin}, {rmax}) must satisfy 0 < min <= max"));
        }
        if !(0.0..=0.4).contains(&self.speckle_contrast) {
            return bad(format!("speckle contrast must lie in [0, 0.4], got {}", self.speckle_contrast));
        }
        if !(self.speckle_blur.is_finite() && self.speckle_blur >= 0.0) {
            return bad(format!("speckle blur must be nonnegative, got {}", self.speckle_blur));
        }
        if !(self.image_blur.is_finite() && self.image_blur >= 0.0) {
            return bad(format!("image blur must be nonnegative, got {}", self.image_blur));
        }
        if !self.compression.is_finite() {
            return bad("compression must be finite".into());
        }
        Ok(())
    }

    /// Top edge fixed, bottom edge pushed up by `compression`, sides free.
    pub fn boundary(&self) -> BoundarySpec {
        BoundarySpec::compression(&self.geometry, self.compression)
    }

    /// Young's modulus map for a background modulus `background`.
    pub fn young_map(&self, background: f64) -> ScalarField {
        ScalarField::from_fn(self.geometry, |x, y| {
            if self.in_inclusion(x as f64, y as f64) {
                background * self.stiffness_ratio
            } else {
                background
            }
        })
        .expect("finite modulus")
    }

    /// Whether the pixel center `(x, y)` lies in the inclusion.
    pub fn in_inclusion(&self, x: f64, y: f64) -> bool {
        let [cx, cy] = self.inclusion_center;
        (x - cx).powi(2) + (y - cy).powi(2) <= self.inclusion_radius.powi(2)
    }
}

/// Output of [`generate_phantom`].
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub pair: ImagePair,
    pub truth: VectorField,
    /// Bubble centers in frame 0 with their true motion.
    pub bubbles: Vec<Bubble>,
}

struct Disc {
    center: [f64; 2],
    radius: f64,
}

fn place_bubbles(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Disc>> {
    let n = spec.n_bubbles;
    let (w, h) = (spec.geometry.width() as f64, spec.geometry.height() as f64);
    let (rmin, rmax) = spec.bubble_radius_range;
    let max_attempts = 100 * n;
    let mut discs: Vec<Disc> = Vec::with_capacity(n);
    let mut attempts = 0;
    while discs.len() < n {
        if attempts == max_attempts {
            return Err(Error::PlacementFailed {
                attempts,
                placed: discs.len(),
                requested: n,
            });
        }
        attempts += 1;
        let radius = if rmin == rmax { rmin } else { rng.gen_range(rmin..rmax) };
        let lo = radius + BORDER_MARGIN;
        let (hx, hy) = (w - 1.0 - lo, h - 1.0 - lo);
        if hx <= lo || hy <= lo {
            continue;
        }
        let center = [rng.gen_range(lo..hx), rng.gen_range(lo..hy)];
        let clear = discs.iter().all(|d| {
            let dist = ((d.center[0] - center[0]).powi(2) + (d.center[1] - center[1]).powi(2)).sqrt();
            dist >= d.radius + radius + BUBBLE_GAP
        });
        if clear {
            discs.push(Disc { center, radius });
        }
    }
    Ok(discs)
}

fn render_frame0(spec: &PhantomSpec, discs: &[Disc], rng: &mut ChaCha8Rng) -> Result<ScalarField> {
    let g = spec.geometry;
    let noise = ScalarField::from_fn(g, |_, _| rng.gen::<f64>())?;
    let smooth = gaussian_blur(&noise, spec.speckle_blur)?;
    let (lo, hi) = (smooth.min(), smooth.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut values: Vec<f64> = smooth
        .values()
        .iter()
        .map(|v| SPECKLE_FLOOR + spec.speckle_contrast * (v - lo) / span)
        .collect();
    for d in discs {
        let reach = d.radius + 1.0;
        let x0 = (d.center[0] - reach).floor().max(0.0) as usize;
        let x1 = ((d.center[0] + reach).ceil() as usize).min(g.width() - 1);
        let y0 = (d.center[1] - reach).floor().max(0.0) as usize;
        let y1 = ((d.center[1] + reach).ceil() as usize).min(g.height() - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dist = ((x as f64 - d.center[0]).powi(2) + (y as f64 - d.center[1]).powi(2)).sqrt();
                // antialiased rim one pixel wide
                let cover = (d.radius + 0.5 - dist).clamp(0.0, 1.0);
                if cover > 0.0 {
                    let i = g.index(x, y);
                    values[i] = values[i] * (1.0 - cover) + BUBBLE_INTENSITY * cover;
                }
            }
        }
    }
    gaussian_blur(&ScalarField::new(g, values)?, spec.image_blur)
}

/// Render the deformed frame: `frame1(y) = frame0(x)` with `x + u(x) = y`,
/// solving for `x` by fixed-point iteration. Displacements are in grid
/// length units.
pub fn render_deformed(frame0: &ScalarField, u: &VectorField) -> Result<ScalarField> {
    frame0.geometry().ensure_same(u.geometry())?;
    let g = *frame0.geometry();
    let s = g.spacing();
    let mut out = Vec::with_capacity(g.len());
    for y in 0..g.height() {
        for x in 0..g.width() {
            let target = [x as f64, y as f64];
            let mut p = target;
            for _ in 0..50 {
                let d = u.sample(p[0], p[1]);
                let next = [target[0] - d[0] / s, target[1] - d[1] / s];
                let moved = (next[0] - p[0]).abs().max((next[1] - p[1]).abs());
                p = next;
                if moved < 1e-12 {
                    break;
                }
            }
            out.push(frame0.sample(p[0], p[1]));
        }
    }
    ScalarField::new(g, out)
}

/// Generate the speckle pair, the ground-truth displacement and the seeded
/// bubbles. `material` is the background material; `bc` the loading, usually
/// [`PhantomSpec::boundary`].
pub fn generate_phantom(spec: &PhantomSpec, material: &MaterialParams, bc: &BoundarySpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let discs = place_bubbles(spec, &mut rng)?;
    let frame0 = render_frame0(spec, &discs, &mut rng)?;
    let young = spec.young_map(material.young_modulus());
    let truth = solve_inhomogeneous(&young, material.poisson_ratio(), bc, TRUTH_TOL, TRUTH_MAX_ITER)?;
    let frame1 = render_deformed(&frame0, &truth)?;
    let bubbles = discs
        .iter()
        .map(|d| Bubble::new(d.center, truth.sample(d.center[0], d.center[1])))
        .collect();
    Ok(Phantom {
        pair: ImagePair::new(frame0, frame1)?,
        truth,
        bubbles,
    })
}

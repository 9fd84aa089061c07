//! Image-pair derivatives and backward warping.

use crate::error::{Error, Result};
use crate::field::{GridGeometry, ScalarField, VectorField};

/// Intensity slack allowed when validating `[0, 1]` images.
const RANGE_SLACK: f64 = 1e-9;

/// Two frames of the same scene: `frame0` at time t, `frame1` at t + 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    frame0: ScalarField,
    frame1: ScalarField,
}

impl ImagePair {
    pub fn new(frame0: ScalarField, frame1: ScalarField) -> Result<Self> {
        frame0.geometry().ensure_same(frame1.geometry())?;
        for (name, frame) in [("frame0", &frame0), ("frame1", &frame1)] {
            if frame.min() < -RANGE_SLACK || frame.max() > 1.0 + RANGE_SLACK {
                return Err(Error::InvalidParameter(format!(
                    "{name} intensities must lie in [0, 1], found [{}, {}]",
                    frame.min(),
                    frame.max()
                )));
            }
        }
        Ok(Self { frame0, frame1 })
    }

    pub fn frame0(&self) -> &ScalarField {
        &self.frame0
    }

    pub fn frame1(&self) -> &ScalarField {
        &self.frame1
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.frame0.geometry()
    }
}

/// Central differences inside, one-sided differences on the outer ring.
fn gradient_of(frame: &ScalarField) -> (Vec<f64>, Vec<f64>) {
    let g = frame.geometry();
    let (w, h, s) = (g.width(), g.height(), g.spacing());
    let v = frame.values();
    let mut gx = vec![0.0; g.len()];
    let mut gy = vec![0.0; g.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x == 0 {
                (v[i + 1] - v[i]) / s
            } else if x + 1 == w {
                (v[i] - v[i - 1]) / s
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * s)
            };
            gy[i] = if y == 0 {
                (v[i + w] - v[i]) / s
            } else if y + 1 == h {
                (v[i] - v[i - w]) / s
            } else {
                (v[i + w] - v[i - w]) / (2.0 * s)
            };
        }
    }
    (gx, gy)
}

/// Spatial gradient averaged over both frames: `½(∇I₀ + ∇I₁)`.
pub fn spatial_gradient(pair: &ImagePair) -> (ScalarField, ScalarField) {
    let geometry = *pair.geometry();
    let (gx0, gy0) = gradient_of(&pair.frame0);
    let (gx1, gy1) = gradient_of(&pair.frame1);
    let avg = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> {
        a.into_iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect()
    };
    (
        ScalarField::from_vec_unchecked(geometry, avg(gx0, gx1)),
        ScalarField::from_vec_unchecked(geometry, avg(gy0, gy1)),
    )
}

/// `I₁ − I₀` with a unit time step.
pub fn temporal_derivative(pair: &ImagePair) -> ScalarField {
    let values = pair
        .frame1
        .values()
        .iter()
        .zip(pair.frame0.values())
        .map(|(b, a)| b - a)
        .collect();
    ScalarField::from_vec_unchecked(*pair.geometry(), values)
}

impl ImagePair {
    /// Temporal derivative of the pair, `I₁ − I₀`.
    pub fn temporal_derivative(&self) -> ScalarField {
        temporal_derivative(self)
    }

    /// Spatial gradient averaged over both frames.
    pub fn spatial_gradient(&self) -> (ScalarField, ScalarField) {
        spatial_gradient(self)
    }
}

/// Backward warp: `out(x) = I(x + u(x))`, bilinear, clamped to the grid.
///
/// Displacements are in the same length unit as the grid spacing.
pub fn warp_image(image: &ScalarField, displacement: &VectorField) -> Result<ScalarField> {
    image.geometry().ensure_same(displacement.geometry())?;
    let g = *image.geometry();
    let s = g.spacing();
    let (u1, u2) = (displacement.u1(), displacement.u2());
    let mut out = Vec::with_capacity(g.len());
    for y in 0..g.height() {
        for x in 0..g.width() {
            let i = g.index(x, y);
            out.push(image.sample(x as f64 + u1[i] / s, y as f64 + u2[i] / s));
        }
    }
    Ok(ScalarField::from_vec_unchecked(g, out))
}

/// Separable Gaussian blur with standard deviation `std` in pixels, kernel
/// truncated at `3·std`, clamp-to-edge. `std = 0` returns a copy.
pub fn gaussian_blur(image: &ScalarField, std: f64) -> Result<ScalarField> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::InvalidParameter(format!("blur std must be nonnegative, got {std}")));
    }
    if std == 0.0 {
        return Ok(image.clone());
    }
    let radius = (3.0 * std).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * std * std)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let g = *image.geometry();
    let (w, h) = (g.width() as i64, g.height() as i64);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, weight) in (-radius..=radius).zip(&kernel) {
                    let (sx, sy) = if horizontal {
                        ((x + k).clamp(0, w - 1), y)
                    } else {
                        (x, (y + k).clamp(0, h - 1))
                    };
                    acc += weight * src[(sy * w + sx) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let once = pass(image.values(), true);
    Ok(ScalarField::from_vec_unchecked(g, pass(&once, false)))
}

//! Grid geometry and the scalar/vector field containers.
//!
//! Storage is row-major. Column index `x` runs along the lateral axis (x₁),
//! row index `y` along the axial axis (x₂), which points downward as in a
//! displayed tomogram. Integrals over the domain are midpoint sums over pixel
//! centers weighted by `spacing²`.

use std::fmt;

use crate::error::{Error, Result};

/// Pixel grid covering the rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    width: usize,
    height: usize,
    spacing: f64,
}

impl GridGeometry {
    /// Grid with unit pixel pitch.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_spacing(width, height, 1.0)
    }

    pub fn with_spacing(width: usize, height: usize, spacing: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidGeometry(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            width,
            height,
            spacing,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    /// Inverse of [`GridGeometry::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// Whether the pixel lies on the outermost ring of the grid.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        x == 0 || y == 0 || x + 1 == self.width || y + 1 == self.height
    }

    /// Whether a continuous position (pixel units) lies inside the grid's
    /// convex hull of pixel centers.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    pub(crate) fn ensure_same(&self, other: &GridGeometry) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for GridGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} (spacing {})", self.width, self.height, self.spacing)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_len(geometry: &GridGeometry, len: usize) -> Result<()> {
    if len != geometry.len() {
        return Err(Error::InvalidGeometry(format!(
            "expected {} samples for {geometry}, got {len}",
            geometry.len()
        )));
    }
    Ok(())
}

/// Bilinear interpolation with clamp-to-edge, positions in pixel units.
#[inline]
pub(crate) fn bilinear(values: &[f64], geometry: &GridGeometry, x: f64, y: f64) -> f64 {
    let w = geometry.width;
    let h = geometry.height;
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = (xc.floor() as usize).min(w - 2);
    let y0 = (yc.floor() as usize).min(h - 2);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let i = y0 * w + x0;
    let v00 = values[i];
    let v10 = values[i + 1];
    let v01 = values[i + w];
    let v11 = values[i + w + 1];
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

/// A real sample per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        check_len(&geometry, values.len())?;
        check_finite(&values)?;
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self::filled(geometry, 0.0)
    }

    pub fn filled(geometry: GridGeometry, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            geometry,
            values: vec![value; geometry.len()],
        }
    }

    /// Build a field by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(geometry.len());
        for y in 0..geometry.height {
            for x in 0..geometry.width {
                values.push(f(x, y));
            }
        }
        Self::new(geometry, values)
    }

    pub(crate) fn from_vec_unchecked(geometry: GridGeometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { geometry, values }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[self.geometry.index(x, y)]
    }

    /// Bilinear sample at a continuous position, clamping outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.values, &self.geometry, x, y)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete L² norm: `sqrt(Σ v²)·spacing`.
    pub fn norm_l2(&self) -> f64 {
        let sum: f64 = self.values.iter().map(|v| v * v).sum();
        sum.sqrt() * self.geometry.spacing
    }
}

/// A displacement-like 2-vector per pixel; `u1` lateral, `u2` axial.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    geometry: GridGeometry,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl VectorField {
    pub fn new(geometry: GridGeometry, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        check_len(&geometry, u1.len())?;
        check_len(&geometry, u2.len())?;
        check_finite(&u1)?;
        check_finite(&u2).map_err(|e| match e {
            Error::NonFinite { index } => Error::NonFinite {
                index: index + geometry.len(),
            },
            other => other,
        })?;
        Ok(Self { geometry, u1, u2 })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self::constant(geometry, [0.0, 0.0])
    }

    pub fn constant(geometry: GridGeometry, value: [f64; 2]) -> Self {
        assert!(value.iter().all(|v| v.is_finite()));
        Self {
            geometry,
            u1: vec![value[0]; geometry.len()],
            u2: vec![value[1]; geometry.len()],
        }
    }

    pub fn from_fn(
        geometry: GridGeometry,
        mut f: impl FnMut(usize, usize) -> [f64; 2],
    ) -> Result<Self> {
        let mut u1 = Vec::with_capacity(geometry.len());
        let mut u2 = Vec::with_capacity(geometry.len());
        for y in 0..geometry.height {
            for x in 0..geometry.width {
                let [a, b] = f(x, y);
                u1.push(a);
                u2.push(b);
            }
        }
        Self::new(geometry, u1, u2)
    }

    pub(crate) fn from_vecs_unchecked(geometry: GridGeometry, u1: Vec<f64>, u2: Vec<f64>) -> Self {
        debug_assert_eq!(u1.len(), geometry.len());
        debug_assert_eq!(u2.len(), geometry.len());
        Self { geometry, u1, u2 }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn u1(&self) -> &[f64] {
        &self.u1
    }

    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    pub fn into_components(self) -> (Vec<f64>, Vec<f64>) {
        (self.u1, self.u2)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        let i = self.geometry.index(x, y);
        [self.u1[i], self.u2[i]]
    }

    /// Bilinear sample of both components, clamping outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 2] {
        [
            bilinear(&self.u1, &self.geometry, x, y),
            bilinear(&self.u2, &self.geometry, x, y),
        ]
    }

    pub fn component(&self, which: usize) -> ScalarField {
        let values = match which {
            0 => self.u1.clone(),
            1 => self.u2.clone(),
            _ => panic!("vector fields have two components"),
        };
        ScalarField::from_vec_unchecked(self.geometry, values)
    }

    /// `a·f + b·g`, componentwise.
    pub fn linear_combine(a: f64, f: &VectorField, b: f64, g: &VectorField) -> Result<VectorField> {
        f.geometry.ensure_same(&g.geometry)?;
        let combine = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
        };
        VectorField::new(f.geometry, combine(&f.u1, &g.u1), combine(&f.u2, &g.u2))
    }

    /// Discrete L² norm: `sqrt(Σ (u1² + u2²)·spacing²)`.
    pub fn norm_l2(&self) -> f64 {
        let sum: f64 = self
            .u1
            .iter()
            .zip(&self.u2)
            .map(|(a, b)| a * a + b * b)
            .sum();
        sum.sqrt() * self.geometry.spacing
    }

    pub fn max_abs(&self) -> f64 {
        self.u1
            .iter()
            .chain(&self.u2)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(geometry: GridGeometry, rng: &mut ChaCha8Rng) -> VectorField {
        VectorField::from_fn(geometry, |_, _| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
            .unwrap()
    }

    #[test]
    fn geometry_rejects_degenerate_grids() {
        assert!(GridGeometry::new(1, 5).is_err());
        assert!(GridGeometry::new(5, 1).is_err());
        assert!(GridGeometry::with_spacing(4, 4, 0.0).is_err());
        assert!(GridGeometry::with_spacing(4, 4, f64::NAN).is_err());
        assert!(GridGeometry::new(2, 2).is_ok());
    }

    #[test]
    fn fields_reject_bad_lengths_and_nan() {
        let g = GridGeometry::new(2, 2).unwrap();
        assert!(ScalarField::new(g, vec![0.0; 3]).is_err());
        assert!(matches!(
            ScalarField::new(g, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(
            VectorField::new(g, vec![0.0; 4], vec![0.0, 0.0, f64::INFINITY, 0.0]),
            Err(Error::NonFinite { index: 6 })
        ));
    }

    #[test]
    fn combine_identity_and_cancellation() {
        let g = GridGeometry::new(5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(g, &mut rng);
        let other = random_field(g, &mut rng);
        assert_eq!(VectorField::linear_combine(1.0, &f, 0.0, &other).unwrap(), f);
        let zero = VectorField::linear_combine(1.0, &f, -1.0, &f).unwrap();
        assert_eq!(zero, VectorField::zeros(g));
    }

    #[test]
    fn combine_hand_summed_table() {
        let g = GridGeometry::new(4, 4).unwrap();
        // background: u1 = x, u2 = y; update: u1 = 10·y, u2 = -x
        let bg = VectorField::from_fn(g, |x, y| [x as f64, y as f64]).unwrap();
        let upd = VectorField::from_fn(g, |x, y| [10.0 * y as f64, -(x as f64)]).unwrap();
        let sum = VectorField::linear_combine(1.0, &bg, 1.0, &upd).unwrap();
        let expected_u1 = [
            0.0, 1.0, 2.0, 3.0, //
            10.0, 11.0, 12.0, 13.0, //
            20.0, 21.0, 22.0, 23.0, //
            30.0, 31.0, 32.0, 33.0,
        ];
        let expected_u2 = [
            0.0, -1.0, -2.0, -3.0, //
            1.0, 0.0, -1.0, -2.0, //
            2.0, 1.0, 0.0, -1.0, //
            3.0, 2.0, 1.0, 0.0,
        ];
        assert_eq!(sum.u1(), &expected_u1);
        assert_eq!(sum.u2(), &expected_u2);
    }

    #[test]
    fn combine_rejects_mismatched_geometry() {
        let a = VectorField::zeros(GridGeometry::new(4, 4).unwrap());
        let b = VectorField::zeros(GridGeometry::new(4, 5).unwrap());
        assert!(matches!(
            VectorField::linear_combine(1.0, &a, 1.0, &b),
            Err(Error::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn norm_examples() {
        let g = GridGeometry::new(2, 2).unwrap();
        assert_eq!(VectorField::zeros(g).norm_l2(), 0.0);
        assert_eq!(VectorField::constant(g, [3.0, 4.0]).norm_l2(), 10.0);
    }

    #[test]
    fn norm_matches_elementwise_summation() {
        let g = GridGeometry::with_spacing(8, 8, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_field(g, &mut rng);
        let mut acc = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let [a, b] = f.get(x, y);
                acc += (a * a + b * b) * 0.25;
            }
        }
        assert!((f.norm_l2() - acc.sqrt()).abs() <= 1e-12 * acc.sqrt());
    }

    #[test]
    fn bilinear_reproduces_affine_functions() {
        let g = GridGeometry::new(6, 5).unwrap();
        let f = ScalarField::from_fn(g, |x, y| 0.3 * x as f64 - 0.7 * y as f64 + 2.0).unwrap();
        for &(x, y) in &[(0.5, 0.5), (2.25, 3.75), (4.9, 0.1), (5.0, 4.0)] {
            let expected = 0.3 * x - 0.7 * y + 2.0;
            assert!((f.sample(x, y) - expected).abs() < 1e-12);
        }
        // clamped outside
        assert_eq!(f.sample(-3.0, 0.0), f.get(0, 0));
    }

    proptest! {
        #[test]
        fn norm_is_zero_only_for_zero_field(seed in any::<u64>(), zero_out in any::<bool>()) {
            let g = GridGeometry::new(4, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = if zero_out { VectorField::zeros(g) } else { random_field(g, &mut rng) };
            prop_assert_eq!(f.norm_l2() == 0.0, f.u1().iter().chain(f.u2()).all(|v| *v == 0.0));
        }

        #[test]
        fn norm_triangle_inequality(seed in any::<u64>()) {
            let g = GridGeometry::new(6, 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, &mut rng);
            let h = random_field(g, &mut rng);
            let sum = VectorField::linear_combine(1.0, &f, 1.0, &h).unwrap();
            prop_assert!(sum.norm_l2() <= f.norm_l2() + h.norm_l2() + 1e-12);
        }

        #[test]
        fn combine_is_exact_on_integers(a in -20i32..20, b in -20i32..20, seed in any::<u64>()) {
            let g = GridGeometry::new(3, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = VectorField::from_fn(g, |_, _| [rng.gen_range(-100..100) as f64, rng.gen_range(-100..100) as f64]).unwrap();
            let h = VectorField::from_fn(g, |_, _| [rng.gen_range(-100..100) as f64, rng.gen_range(-100..100) as f64]).unwrap();
            let c = VectorField::linear_combine(a as f64, &f, b as f64, &h).unwrap();
            for i in 0..9 {
                let expected = a as i64 * f.u1()[i] as i64 + b as i64 * h.u1()[i] as i64;
                prop_assert_eq!(c.u1()[i], expected as f64);
            }
        }
    }
}

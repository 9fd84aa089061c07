//! Plane-strain linearized elasticity on the pixel grid.
//!
//! Nodes sit at pixel centers and every square of four neighboring pixels
//! forms a bilinear cell. The cell stiffness is integrated with 2×2 Gauss
//! points, which yields the 9-point finite-difference stencil of the
//! Navier–Cauchy operator `μΔu + (λ+μ)∇(∇·u)` in the interior together with
//! consistent one-sided traction rows on free edges. Dirichlet pixels are
//! eliminated, so the reduced operator stays symmetric positive definite.

use std::sync::OnceLock;

use crate::boundary::BoundarySpec;
use crate::dofs::{eliminate, AssembledSystem, DofMap};
use crate::error::{Error, Result};
use crate::field::{GridGeometry, ScalarField, VectorField};
use crate::linalg::{conjugate_gradient, CgSettings, CsrMatrix};

/// Isotropic material given by its Lamé parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
}

impl MaterialParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be > 0, got {mu}")));
        }
        Ok(Self { lambda, mu })
    }

    /// From Young's modulus `E > 0` and Poisson ratio `ν ∈ [0, 0.5)`.
    pub fn from_young_poisson(young: f64, poisson: f64) -> Result<Self> {
        if !(young.is_finite() && young > 0.0) {
            return Err(Error::InvalidParameter(format!("Young's modulus must be > 0, got {young}")));
        }
        if !(0.0..0.5).contains(&poisson) {
            return Err(Error::InvalidParameter(format!(
                "Poisson ratio must lie in [0, 0.5), got {poisson}"
            )));
        }
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = young / (2.0 * (1.0 + poisson));
        Self::new(lambda, mu)
    }

    pub fn young_modulus(&self) -> f64 {
        self.mu * (3.0 * self.lambda + 2.0 * self.mu) / (self.lambda + self.mu)
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }

    /// Same Poisson ratio, Young's modulus multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda: self.lambda * factor,
            mu: self.mu * factor,
        }
    }
}

impl Default for MaterialParams {
    /// `E = 1`, `ν = 0.45`.
    fn default() -> Self {
        Self::from_young_poisson(1.0, 0.45).expect("valid defaults")
    }
}

/// Cell stiffness split as `K = λ·K_λ + μ·K_μ`. Local node order is
/// (0,0), (1,0), (0,1), (1,1) in (x, y); entries are `2·node + component`.
/// In two dimensions the matrices do not depend on the cell size.
struct CellStiffness {
    lambda: [[f64; 8]; 8],
    mu: [[f64; 8]; 8],
}

const CELL_NODES: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

fn cell_stiffness() -> &'static CellStiffness {
    static CELL: OnceLock<CellStiffness> = OnceLock::new();
    CELL.get_or_init(|| {
        let gp = 0.5 / 3f64.sqrt();
        let points = [0.5 - gp, 0.5 + gp];
        let mut lambda = [[0.0; 8]; 8];
        let mut mu = [[0.0; 8]; 8];
        for &px in &points {
            for &py in &points {
                // shape gradients on the unit cell, Gauss weight 1/4
                let mut dx = [0.0; 4];
                let mut dy = [0.0; 4];
                for (a, &(nx, ny)) in CELL_NODES.iter().enumerate() {
                    let fx = if nx == 1 { px } else { 1.0 - px };
                    let fy = if ny == 1 { py } else { 1.0 - py };
                    let sx = if nx == 1 { 1.0 } else { -1.0 };
                    let sy = if ny == 1 { 1.0 } else { -1.0 };
                    dx[a] = sx * fy;
                    dy[a] = sy * fx;
                }
                // strain rows (ε_xx, ε_yy, γ_xy) per local entry
                let mut b = [[0.0; 8]; 3];
                for a in 0..4 {
                    b[0][2 * a] = dx[a];
                    b[1][2 * a + 1] = dy[a];
                    b[2][2 * a] = dy[a];
                    b[2][2 * a + 1] = dx[a];
                }
                for i in 0..8 {
                    for j in 0..8 {
                        let div = (b[0][i] + b[1][i]) * (b[0][j] + b[1][j]);
                        let dev = 2.0 * (b[0][i] * b[0][j] + b[1][i] * b[1][j]) + b[2][i] * b[2][j];
                        lambda[i][j] += 0.25 * div;
                        mu[i][j] += 0.25 * dev;
                    }
                }
            }
        }
        CellStiffness { lambda, mu }
    })
}

/// Stiffness system for per-cell material `cell(x, y)` where `(x, y)` is the
/// top-left pixel of the cell.
pub(crate) fn assemble_elasticity(
    geometry: &GridGeometry,
    bc: &BoundarySpec,
    mut cell: impl FnMut(usize, usize) -> MaterialParams,
) -> Result<AssembledSystem> {
    if !bc.has_dirichlet() {
        return Err(Error::NoDirichlet);
    }
    let dirichlet = bc.dirichlet_map(geometry)?;
    let (w, h) = (geometry.width(), geometry.height());
    let k = cell_stiffness();
    let mut triplets = Vec::with_capacity((w - 1) * (h - 1) * 64);
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let m = cell(x, y);
            let nodes = CELL_NODES.map(|(nx, ny)| geometry.index(x + nx, y + ny));
            for i in 0..8 {
                let gi = 2 * nodes[i / 2] + i % 2;
                for j in 0..8 {
                    let v = m.lambda * k.lambda[i][j] + m.mu * k.mu[i][j];
                    if v != 0.0 {
                        triplets.push((gi, 2 * nodes[j / 2] + j % 2, v));
                    }
                }
            }
        }
    }
    let full = CsrMatrix::from_triplets(2 * geometry.len(), &triplets);
    let rhs = vec![0.0; 2 * geometry.len()];
    Ok(eliminate(&full, &rhs, DofMap::new(*geometry, &dirichlet)))
}

fn solve_system(system: &AssembledSystem, tol: f64, max_iter: usize) -> Result<VectorField> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if system.dof_map.free_count() == 0 {
        return Ok(system.dof_map.expand(&[]));
    }
    let out = conjugate_gradient(&system.operator, &system.rhs, None, CgSettings { tol, max_iter })?;
    Ok(system.dof_map.expand(&out.solution))
}

/// Stiffness system of a homogeneous sample, Dirichlet unknowns eliminated.
pub fn assemble_background(
    geometry: &GridGeometry,
    material: &MaterialParams,
    bc: &BoundarySpec,
) -> Result<AssembledSystem> {
    assemble_elasticity(geometry, bc, |_, _| *material)
}

/// Displacement of a homogeneous sample under the boundary conditions `bc`.
pub fn solve_background(
    geometry: &GridGeometry,
    material: &MaterialParams,
    bc: &BoundarySpec,
    tol: f64,
    max_iter: usize,
) -> Result<VectorField> {
    let system = assemble_elasticity(geometry, bc, |_, _| *material)?;
    solve_system(&system, tol, max_iter)
}

/// Displacement of an inhomogeneous sample. `young` holds Young's modulus
/// per pixel; each cell uses the harmonic mean of its four corners.
pub fn solve_inhomogeneous(
    young: &ScalarField,
    poisson: f64,
    bc: &BoundarySpec,
    tol: f64,
    max_iter: usize,
) -> Result<VectorField> {
    if young.min() <= 0.0 {
        return Err(Error::InvalidParameter("Young's modulus must be positive everywhere".into()));
    }
    let unit = MaterialParams::from_young_poisson(1.0, poisson)?;
    let geometry = *young.geometry();
    let system = assemble_elasticity(&geometry, bc, |x, y| {
        let inv: f64 = CELL_NODES
            .iter()
            .map(|&(nx, ny)| 1.0 / young.get(x + nx, y + ny))
            .sum();
        unit.scaled(4.0 / inv)
    })?;
    solve_system(&system, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{Edge, Segment, SegmentKind};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lame_conversions_round_trip() {
        let m = MaterialParams::from_young_poisson(3.0, 0.3).unwrap();
        assert!((m.young_modulus() - 3.0).abs() < 1e-12);
        assert!((m.poisson_ratio() - 0.3).abs() < 1e-12);
        let d = MaterialParams::default();
        assert!((d.poisson_ratio() - 0.45).abs() < 1e-12);
        assert!(MaterialParams::new(-1.0, 1.0).is_err());
        assert!(MaterialParams::new(1.0, 0.0).is_err());
        assert!(MaterialParams::from_young_poisson(1.0, 0.5).is_err());
    }

    #[test]
    fn cell_stiffness_is_symmetric_with_rigid_kernel() {
        let k = cell_stiffness();
        for i in 0..8 {
            for j in 0..8 {
                assert!((k.lambda[i][j] - k.lambda[j][i]).abs() < 1e-15);
                assert!((k.mu[i][j] - k.mu[j][i]).abs() < 1e-15);
            }
        }
        // translations and the infinitesimal rotation carry no energy
        let rotation: Vec<f64> = CELL_NODES
            .iter()
            .flat_map(|&(x, y)| [-(y as f64), x as f64])
            .collect();
        for mode in [[1.0, 0.0].repeat(4), [0.0, 1.0].repeat(4), rotation] {
            for i in 0..8 {
                let row: f64 = (0..8).map(|j| (k.lambda[i][j] + k.mu[i][j]) * mode[j]).sum();
                assert!(row.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_fields_carry_exact_strain_energy() {
        // energy of u = G·x on one unit cell equals W(ε) for the constant strain
        let k = cell_stiffness();
        let grad = [[0.3, -0.2], [0.5, 0.7]];
        let (lambda, mu) = (1.7, 0.6);
        let u: Vec<f64> = CELL_NODES
            .iter()
            .flat_map(|&(x, y)| {
                let (x, y) = (x as f64, y as f64);
                [grad[0][0] * x + grad[0][1] * y, grad[1][0] * x + grad[1][1] * y]
            })
            .collect();
        let mut quad = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                quad += u[i] * (lambda * k.lambda[i][j] + mu * k.mu[i][j]) * u[j];
            }
        }
        let (exx, eyy, exy) = (grad[0][0], grad[1][1], 0.5 * (grad[0][1] + grad[1][0]));
        let energy = 0.5 * lambda * (exx + eyy).powi(2) + mu * (exx * exx + eyy * eyy + 2.0 * exy * exy);
        assert!((0.5 * quad - energy).abs() < 1e-14);
    }

    #[test]
    fn zero_load_gives_zero_field() {
        let g = GridGeometry::new(12, 10).unwrap();
        let bc = BoundarySpec::compression(&g, 0.0);
        let u = solve_background(&g, &MaterialParams::default(), &bc, 1e-8, 1000).unwrap();
        assert_eq!(u, VectorField::zeros(g));
    }

    #[test]
    fn missing_dirichlet_is_an_error() {
        let g = GridGeometry::new(8, 8).unwrap();
        let err = solve_background(&g, &MaterialParams::default(), &BoundarySpec::natural(), 1e-8, 100);
        assert!(matches!(err, Err(Error::NoDirichlet)));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let g = GridGeometry::new(24, 24).unwrap();
        let bc = BoundarySpec::compression(&g, 1.0);
        match solve_background(&g, &MaterialParams::default(), &bc, 1e-12, 3) {
            Err(Error::NotConverged { iterations: 3, residual }) => assert!(residual > 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniaxial_strip_without_poisson_effect_is_linear() {
        let g = GridGeometry::new(24, 41).unwrap();
        let bc = BoundarySpec::compression(&g, 2.0);
        let mat = MaterialParams::new(0.0, 1.0).unwrap();
        let u = solve_background(&g, &mat, &bc, 1e-12, 20_000).unwrap();
        for y in 14..=27 {
            let expected = -2.0 * y as f64 / 40.0;
            for x in 0..24 {
                let [u1, u2] = u.get(x, y);
                assert!((u2 - expected).abs() <= 0.02 * expected.abs());
                assert!(u1.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_setup_gives_mirrored_field() {
        let g = GridGeometry::new(21, 16).unwrap();
        let bc = BoundarySpec::compression(&g, 1.5);
        let u = solve_background(&g, &MaterialParams::default(), &bc, 1e-11, 20_000).unwrap();
        let scale = u.max_abs();
        for y in 0..16 {
            for x in 0..21 {
                let [a1, a2] = u.get(x, y);
                let [b1, b2] = u.get(20 - x, y);
                assert!((a1 + b1).abs() < 1e-8 * scale);
                assert!((a2 - b2).abs() < 1e-8 * scale);
            }
        }
        // the compressed sample bulges outward
        assert!(u.get(0, 8)[0] < 0.0 && u.get(20, 8)[0] > 0.0);
    }

    fn random_edge_bc(g: &GridGeometry, rng: &mut ChaCha8Rng) -> BoundarySpec {
        let mut segments = Vec::new();
        for edge in [Edge::Top, Edge::Bottom] {
            for pos in 0..g.width() {
                segments.push(Segment {
                    edge,
                    start: pos,
                    end: pos + 1,
                    kind: SegmentKind::Dirichlet([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]),
                });
            }
        }
        BoundarySpec::new(g, segments).unwrap()
    }

    #[test]
    fn matches_dense_direct_solve() {
        let g = GridGeometry::new(16, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let bc = random_edge_bc(&g, &mut rng);
        let mat = MaterialParams::new(rng.gen_range(0.0..5.0), rng.gen_range(0.1..2.0)).unwrap();
        let system = assemble_elasticity(&g, &bc, |_, _| mat).unwrap();
        assert!(system.operator.is_symmetric());
        let n = system.dof_map.free_count();
        let dense = DMatrix::from_fn(n, n, |r, c| system.operator.get(r, c));
        let exact = dense.lu().solve(&DVector::from_column_slice(&system.rhs)).unwrap();
        let u = solve_background(&g, &mat, &bc, 1e-12, 20_000).unwrap();
        let iterative = system.dof_map.restrict(&u);
        let diff: f64 = iterative.iter().zip(exact.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-8 * exact.norm(), "relative difference {}", diff / exact.norm());
    }

    #[test]
    fn solution_is_linear_in_boundary_data() {
        let g = GridGeometry::new(14, 12).unwrap();
        let mat = MaterialParams::default();
        let one = solve_background(&g, &mat, &BoundarySpec::compression(&g, 1.0), 1e-12, 20_000).unwrap();
        let two = solve_background(&g, &mat, &BoundarySpec::compression(&g, 2.0), 1e-12, 20_000).unwrap();
        let doubled = VectorField::linear_combine(2.0, &one, -1.0, &two).unwrap();
        assert!(doubled.norm_l2() < 1e-9 * two.norm_l2());
    }

    #[test]
    fn uniform_modulus_field_matches_homogeneous_solve() {
        let g = GridGeometry::new(16, 12).unwrap();
        let bc = BoundarySpec::compression(&g, 1.0);
        let homogeneous = solve_background(&g, &MaterialParams::from_young_poisson(2.0, 0.3).unwrap(), &bc, 1e-12, 20_000).unwrap();
        let inhom = solve_inhomogeneous(&ScalarField::filled(g, 2.0), 0.3, &bc, 1e-12, 20_000).unwrap();
        let diff = VectorField::linear_combine(1.0, &homogeneous, -1.0, &inhom).unwrap();
        assert!(diff.norm_l2() < 1e-9 * homogeneous.norm_l2());
    }
}

//! The elastographic optical flow functional and its normal equations.
//!
//! The discrete functional over a displacement (or update) field `v` is
//!
//! ```text
//! F(v) = Σ_p h²·(∇I·(u_bg + v) + I_t)²                       data
//!      + α·Σ_edges |v_q − v_p|²                              smoothness
//!      + β·Σ_i w_i Σ_p g_σ(x_p, x̂_i)·|v_p − (û_i − u_bg(x̂_i))|²   speckle
//!      + γ·Σ_{p ∈ Γ} h·|v_p − (g_p − u_bg(p))|²               weak boundary
//! ```
//!
//! with `h` the pixel pitch. The smoothness sum runs over pairs of
//! horizontally or vertically adjacent pixels, which is the 5-point
//! Laplacian with mirrored ghost pixels, so its unconstrained minimizer
//! carries zero normal flux through the boundary. `F` is quadratic:
//! `F(v) = ½·vᵀAv − bᵀv + F(0)`. [`assemble`] builds `A` and `b`, with
//! Dirichlet unknowns eliminated in hard mode, and [`solve`] runs CG on it.
//!
//! The Gaussian weights are evaluated in pixel units, so `Σ_p g_σ ≈ 1` per
//! bubble regardless of the pitch.

use std::f64::consts::PI;

use crate::boundary::{BoundarySpec, DirichletMap};
use crate::derivatives::ImagePair;
use crate::error::{Error, Result};
use crate::field::{GridGeometry, VectorField};
use crate::dofs::eliminate;
pub use crate::dofs::{AssembledSystem, Dof, DofMap};
use crate::linalg::{conjugate_gradient, CgSettings, CsrMatrix};
use crate::speckle::Bubble;

/// Gaussian support radius in units of σ.
pub const GAUSSIAN_TRUNCATION: f64 = 3.0;

/// How boundary information enters the functional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryMode {
    /// Unconstrained; zero normal derivative emerges from the minimization.
    Natural,
    /// Dirichlet pixels are removed from the unknowns.
    DirichletHard,
    /// Dirichlet values are enforced by a boundary penalty of weight `gamma`.
    DirichletWeak { gamma: f64 },
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Smoothness weight α.
    pub alpha: f64,
    /// Speckle weight β.
    pub beta: f64,
    /// Gaussian width σ in pixels.
    pub sigma: f64,
    /// Per-bubble weights βᵢ; when absent each bubble's own weight is used.
    pub per_bubble_weights: Option<Vec<f64>>,
    pub bc_mode: BoundaryMode,
    /// Known background field; the unknown then becomes the update.
    pub background: Option<VectorField>,
    pub lin_tol: f64,
    pub lin_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.5,
            sigma: 5.0,
            per_bubble_weights: None,
            bc_mode: BoundaryMode::DirichletHard,
            background: None,
            lin_tol: 1e-8,
            lin_max_iter: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.lin_tol.is_finite() && self.lin_tol > 0.0) {
            return bad(format!("lin_tol must be positive, got {}", self.lin_tol));
        }
        if self.lin_max_iter == 0 {
            return bad("lin_max_iter must be at least 1".into());
        }
        if let BoundaryMode::DirichletWeak { gamma } = self.bc_mode {
            if !(gamma.is_finite() && gamma > 0.0) {
                return bad(format!("gamma must be positive, got {gamma}"));
            }
        }
        if let Some(w) = &self.per_bubble_weights {
            if let Some(bad_w) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return bad(format!("per-bubble weights must be positive, got {bad_w}"));
            }
        }
        Ok(())
    }
}

/// `g_σ(x, c) = exp(−|x−c|²/2σ²) / (2πσ²)`, zero beyond 3σ.
pub fn gaussian_weight(x: [f64; 2], center: [f64; 2], sigma: f64) -> f64 {
    let dx = x[0] - center[0];
    let dy = x[1] - center[1];
    let r2 = dx * dx + dy * dy;
    let cutoff = GAUSSIAN_TRUNCATION * sigma;
    if r2 > cutoff * cutoff {
        return 0.0;
    }
    (-r2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
}

/// Where the functional is linearized and which reference field shifts the
/// speckle targets and boundary values.
pub(crate) struct Linearization<'a> {
    /// Field added to the unknown in the speckle and boundary terms.
    pub offset: Option<&'a VectorField>,
    /// Whether the data term also sees the offset (`I_t + ∇I·offset`).
    /// The multiscale driver warps the frames instead.
    pub shift_data: bool,
}

fn bubble_weights(bubbles: &[Bubble], cfg: &SolverConfig) -> Result<Vec<f64>> {
    match &cfg.per_bubble_weights {
        Some(w) if w.len() != bubbles.len() => Err(Error::InvalidParameter(format!(
            "{} per-bubble weights for {} bubbles",
            w.len(),
            bubbles.len()
        ))),
        Some(w) => Ok(w.clone()),
        None => Ok(bubbles.iter().map(|b| b.weight).collect()),
    }
}

/// Pixel window covering the truncated Gaussian support of a bubble.
fn support(geometry: &GridGeometry, center: [f64; 2], sigma: f64) -> (usize, usize, usize, usize) {
    let r = GAUSSIAN_TRUNCATION * sigma;
    let clampi = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
    let x0 = clampi((center[0] - r).ceil(), geometry.width() - 1);
    let x1 = clampi((center[0] + r).floor(), geometry.width() - 1);
    let y0 = clampi((center[1] - r).ceil(), geometry.height() - 1);
    let y1 = clampi((center[1] + r).floor(), geometry.height() - 1);
    (x0, x1, y0, y1)
}

/// Per-pixel data-term coefficients `(I_x, I_y, c)` where the residual is
/// `I_x·v₁ + I_y·v₂ + c`.
fn data_coefficients(pair: &ImagePair, lin: &Linearization<'_>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ix, iy) = pair.spatial_gradient();
    let it = pair.temporal_derivative();
    let mut c = it.into_values();
    if let (Some(off), true) = (lin.offset, lin.shift_data) {
        for (p, cp) in c.iter_mut().enumerate() {
            *cp += ix.values()[p] * off.u1()[p] + iy.values()[p] * off.u2()[p];
        }
    }
    (ix.into_values(), iy.into_values(), c)
}

fn check_inputs(
    pair: &ImagePair,
    cfg: &SolverConfig,
    dirichlet: &DirichletMap,
    lin: &Linearization<'_>,
) -> Result<()> {
    cfg.validate()?;
    pair.geometry().ensure_same(dirichlet.geometry())?;
    if let Some(off) = lin.offset {
        pair.geometry().ensure_same(off.geometry())?;
    }
    Ok(())
}

/// Assemble `A` and `b` of `F(v) = ½vᵀAv − bᵀv + F(0)`.
///
/// `cfg.background`, when set, makes the unknown the update field: the data
/// term is shifted by `∇I·u_bg`, bubble targets become `û_i − u_bg(x̂_i)`, and
/// Dirichlet values become `g − u_bg`.
pub fn assemble(
    pair: &ImagePair,
    bubbles: &[Bubble],
    cfg: &SolverConfig,
    bc: &BoundarySpec,
) -> Result<AssembledSystem> {
    let dirichlet = bc.dirichlet_map(pair.geometry())?;
    let lin = Linearization {
        offset: cfg.background.as_ref(),
        shift_data: true,
    };
    assemble_linearized(pair, bubbles, cfg, &dirichlet, &lin)
}

pub(crate) fn assemble_linearized(
    pair: &ImagePair,
    bubbles: &[Bubble],
    cfg: &SolverConfig,
    dirichlet: &DirichletMap,
    lin: &Linearization<'_>,
) -> Result<AssembledSystem> {
    check_inputs(pair, cfg, dirichlet, lin)?;
    let weights = bubble_weights(bubbles, cfg)?;
    let geometry = *pair.geometry();
    let (w, h, s) = (geometry.width(), geometry.height(), geometry.spacing());
    let n = geometry.len();
    let area = s * s;

    let offset_at = |p: usize| -> [f64; 2] {
        lin.offset
            .map(|o| [o.u1()[p], o.u2()[p]])
            .unwrap_or([0.0, 0.0])
    };

    // Hessian entries and b over all 2n entries before elimination.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * n * 7);
    let mut rhs = vec![0.0; 2 * n];

    let (ix, iy, c) = data_coefficients(pair, lin);
    for p in 0..n {
        let (gx, gy) = (ix[p], iy[p]);
        triplets.push((2 * p, 2 * p, 2.0 * area * gx * gx));
        triplets.push((2 * p, 2 * p + 1, 2.0 * area * gx * gy));
        triplets.push((2 * p + 1, 2 * p, 2.0 * area * gx * gy));
        triplets.push((2 * p + 1, 2 * p + 1, 2.0 * area * gy * gy));
        rhs[2 * p] -= 2.0 * area * gx * c[p];
        rhs[2 * p + 1] -= 2.0 * area * gy * c[p];
    }

    let two_alpha = 2.0 * cfg.alpha;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut neighbors = [None, None];
            if x + 1 < w {
                neighbors[0] = Some(p + 1);
            }
            if y + 1 < h {
                neighbors[1] = Some(p + w);
            }
            for q in neighbors.into_iter().flatten() {
                for comp in 0..2 {
                    let (i, j) = (2 * p + comp, 2 * q + comp);
                    triplets.push((i, i, two_alpha));
                    triplets.push((j, j, two_alpha));
                    triplets.push((i, j, -two_alpha));
                    triplets.push((j, i, -two_alpha));
                }
            }
        }
    }

    if cfg.beta > 0.0 {
        for (bubble, &wi) in bubbles.iter().zip(&weights) {
            let shift = lin
                .offset
                .map(|o| o.sample(bubble.center[0], bubble.center[1]))
                .unwrap_or([0.0, 0.0]);
            let target = [bubble.motion[0] - shift[0], bubble.motion[1] - shift[1]];
            let (x0, x1, y0, y1) = support(&geometry, bubble.center, cfg.sigma);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let g = gaussian_weight([x as f64, y as f64], bubble.center, cfg.sigma);
                    if g == 0.0 {
                        continue;
                    }
                    let k = 2.0 * cfg.beta * wi * g;
                    let p = y * w + x;
                    for comp in 0..2 {
                        triplets.push((2 * p + comp, 2 * p + comp, k));
                        rhs[2 * p + comp] += k * target[comp];
                    }
                }
            }
        }
    }

    if let BoundaryMode::DirichletWeak { gamma } = cfg.bc_mode {
        let k = 2.0 * gamma * s;
        for p in 0..n {
            if let Some(g) = dirichlet.get(p) {
                let off = offset_at(p);
                for comp in 0..2 {
                    triplets.push((2 * p + comp, 2 * p + comp, k));
                    rhs[2 * p + comp] += k * (g[comp] - off[comp]);
                }
            }
        }
    }

    let full = CsrMatrix::from_triplets(2 * n, &triplets);
    drop(triplets);

    let pinned = match cfg.bc_mode {
        BoundaryMode::DirichletHard => {
            let values = (0..n)
                .map(|p| {
                    dirichlet.get(p).map(|g| {
                        let off = offset_at(p);
                        [g[0] - off[0], g[1] - off[1]]
                    })
                })
                .collect();
            DirichletMap::from_values(geometry, values)
        }
        _ => DirichletMap::empty(geometry),
    };
    let dof_map = DofMap::new(geometry, &pinned);
    Ok(eliminate(&full, &rhs, dof_map))
}

/// Solve the assembled system by Jacobi-preconditioned CG and re-insert the
/// pinned values. In background mode the result is the update field.
pub fn solve(system: &AssembledSystem, cfg: &SolverConfig) -> Result<VectorField> {
    cfg.validate()?;
    if system.dof_map.free_count() == 0 {
        return Ok(system.dof_map.expand(&[]));
    }
    let outcome = conjugate_gradient(
        &system.operator,
        &system.rhs,
        None,
        CgSettings {
            tol: cfg.lin_tol,
            max_iter: cfg.lin_max_iter,
        },
    )?;
    Ok(system.dof_map.expand(&outcome.solution))
}

/// Individual terms of the discrete functional at a given field.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FunctionalValue {
    pub data: f64,
    /// Unweighted smoothness `R(v)`.
    pub smoothness: f64,
    /// Unweighted speckle term (per-bubble weights included, β not).
    pub speckle: f64,
    /// Unweighted boundary penalty `B(v)`; zero unless weak mode.
    pub boundary: f64,
    /// `data + α·smoothness + β·speckle + γ·boundary`.
    pub total: f64,
}

/// Evaluate the discrete functional directly, term by term.
///
/// `v` is the full unknown field (the update when `cfg.background` is set).
/// This path shares no code with [`assemble`] beyond the image derivatives.
pub fn functional_value(
    pair: &ImagePair,
    bubbles: &[Bubble],
    cfg: &SolverConfig,
    bc: &BoundarySpec,
    v: &VectorField,
) -> Result<FunctionalValue> {
    let dirichlet = bc.dirichlet_map(pair.geometry())?;
    let lin = Linearization {
        offset: cfg.background.as_ref(),
        shift_data: true,
    };
    functional_value_linearized(pair, bubbles, cfg, &dirichlet, &lin, v)
}

pub(crate) fn functional_value_linearized(
    pair: &ImagePair,
    bubbles: &[Bubble],
    cfg: &SolverConfig,
    dirichlet: &DirichletMap,
    lin: &Linearization<'_>,
    v: &VectorField,
) -> Result<FunctionalValue> {
    check_inputs(pair, cfg, dirichlet, lin)?;
    pair.geometry().ensure_same(v.geometry())?;
    let weights = bubble_weights(bubbles, cfg)?;
    let geometry = *pair.geometry();
    let (w, h, s) = (geometry.width(), geometry.height(), geometry.spacing());
    let zero = VectorField::zeros(geometry);
    let offset = lin.offset.unwrap_or(&zero);

    let (ix, iy) = pair.spatial_gradient();
    let it = pair.temporal_derivative();
    let mut data = 0.0;
    for y in 0..h {
        for x in 0..w {
            let [v1, v2] = v.get(x, y);
            let [o1, o2] = if lin.shift_data {
                offset.get(x, y)
            } else {
                [0.0, 0.0]
            };
            let r = ix.get(x, y) * (o1 + v1) + iy.get(x, y) * (o2 + v2) + it.get(x, y);
            data += s * s * r * r;
        }
    }

    let mut smoothness = 0.0;
    for y in 0..h {
        for x in 0..w {
            let here = v.get(x, y);
            if x + 1 < w {
                let right = v.get(x + 1, y);
                smoothness += (right[0] - here[0]).powi(2) + (right[1] - here[1]).powi(2);
            }
            if y + 1 < h {
                let below = v.get(x, y + 1);
                smoothness += (below[0] - here[0]).powi(2) + (below[1] - here[1]).powi(2);
            }
        }
    }

    let mut speckle = 0.0;
    for (bubble, wi) in bubbles.iter().zip(&weights) {
        let shift = offset.sample(bubble.center[0], bubble.center[1]);
        let target = [bubble.motion[0] - shift[0], bubble.motion[1] - shift[1]];
        for y in 0..h {
            for x in 0..w {
                let g = gaussian_weight([x as f64, y as f64], bubble.center, cfg.sigma);
                let [v1, v2] = v.get(x, y);
                speckle += wi * g * ((v1 - target[0]).powi(2) + (v2 - target[1]).powi(2));
            }
        }
    }

    let mut boundary = 0.0;
    let gamma = match cfg.bc_mode {
        BoundaryMode::DirichletWeak { gamma } => gamma,
        _ => 0.0,
    };
    if gamma > 0.0 {
        for y in 0..h {
            for x in 0..w {
                let p = geometry.index(x, y);
                if let Some(g) = dirichlet.get(p) {
                    let [o1, o2] = offset.get(x, y);
                    let [v1, v2] = v.get(x, y);
                    boundary += s * ((v1 - (g[0] - o1)).powi(2) + (v2 - (g[1] - o2)).powi(2));
                }
            }
        }
    }

    let total = data + cfg.alpha * smoothness + cfg.beta * speckle + gamma * boundary;
    Ok(FunctionalValue {
        data,
        smoothness,
        speckle,
        boundary,
        total,
    })
}

//! Coarse-to-fine estimation over an image pyramid.
//!
//! Level `k` holds the pair blurred and subsampled `k` times by two, so its
//! pixel `(x, y)` sits at `(2ᵏx, 2ᵏy)` of the input. Displacements at level
//! `k` are expressed in level pixels and are `2⁻ᵏ` times the input values.
//!
//! The driver solves at the coarsest level, then at each finer level warps
//! the second frame by the current estimate and solves for a correction.
//! Pixels warped from outside the grid are treated as unchanged.
//! With a background field the estimate is kept as `u_bg + u_upd`, where the
//! background is resampled at every level and only the update is carried
//! across levels.

use crate::boundary::{BoundarySpec, DirichletMap};
use crate::derivatives::{gaussian_blur, warp_image, ImagePair};
use crate::eofm::{assemble_linearized, solve, Linearization, SolverConfig};
use crate::error::{Error, Result};
use crate::field::{GridGeometry, ScalarField, VectorField};
use crate::speckle::Bubble;

/// Anti-aliasing blur applied before each subsampling step.
pub const PYRAMID_BLUR: f64 = 1.0;
/// Smallest width or height of a pyramid level.
pub const MIN_LEVEL_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    /// 0 is the input resolution.
    pub level: usize,
    pub pair: ImagePair,
    /// `2⁻ˡᵉᵛᵉˡ`.
    pub scale: f64,
    /// Bubbles inside this level's grid, centers and motions scaled.
    pub bubbles: Vec<Bubble>,
    /// Index of each kept bubble in the input list.
    pub source: Vec<usize>,
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

fn coarser(g: &GridGeometry) -> Result<GridGeometry> {
    GridGeometry::with_spacing(half(g.width()), half(g.height()), g.spacing())
}

/// Blur and keep the even pixels.
fn downsample_image(image: &ScalarField) -> Result<ScalarField> {
    let blurred = gaussian_blur(image, PYRAMID_BLUR)?;
    let coarse = coarser(image.geometry())?;
    ScalarField::from_fn(coarse, |x, y| blurred.get(2 * x, 2 * y))
}

/// Subsample a displacement field onto `coarse` (pixel `(x, y)` taken from
/// `(2x, 2y)`), halving the values.
pub fn downsample_field(field: &VectorField, coarse: &GridGeometry) -> Result<VectorField> {
    let fine = field.geometry();
    if half(fine.width()) != coarse.width() || half(fine.height()) != coarse.height() {
        return Err(Error::GeometryMismatch {
            left: format!("half of {fine}"),
            right: coarse.to_string(),
        });
    }
    VectorField::from_fn(*coarse, |x, y| {
        let [a, b] = field.get(2 * x, 2 * y);
        [0.5 * a, 0.5 * b]
    })
}

/// Bilinear upsampling onto `fine`, doubling the values.
pub fn upsample_field(field: &VectorField, fine: &GridGeometry) -> Result<VectorField> {
    let coarse = field.geometry();
    if half(fine.width()) != coarse.width() || half(fine.height()) != coarse.height() {
        return Err(Error::GeometryMismatch {
            left: coarse.to_string(),
            right: format!("half of {fine}"),
        });
    }
    VectorField::from_fn(*fine, |x, y| {
        let [a, b] = field.sample(0.5 * x as f64, 0.5 * y as f64);
        [2.0 * a, 2.0 * b]
    })
}

/// Build `levels` pyramid levels, finest first.
pub fn build_pyramid(pair: &ImagePair, bubbles: &[Bubble], levels: usize) -> Result<Vec<PyramidLevel>> {
    if levels == 0 {
        return Err(Error::InvalidParameter("at least one pyramid level is required".into()));
    }
    let mut out = vec![PyramidLevel {
        level: 0,
        pair: pair.clone(),
        scale: 1.0,
        bubbles: bubbles.to_vec(),
        source: (0..bubbles.len()).collect(),
    }];
    for level in 1..levels {
        let prev = &out[level - 1].pair;
        let coarse = coarser(prev.geometry())?;
        if coarse.width() < MIN_LEVEL_SIZE || coarse.height() < MIN_LEVEL_SIZE {
            return Err(Error::PyramidTooDeep {
                levels,
                width: pair.geometry().width(),
                height: pair.geometry().height(),
            });
        }
        let level_pair = ImagePair::new(downsample_image(prev.frame0())?, downsample_image(prev.frame1())?)?;
        let scale = 0.5f64.powi(level as i32);
        let (w, h) = ((coarse.width() - 1) as f64, (coarse.height() - 1) as f64);
        let mut kept = Vec::new();
        let mut source = Vec::new();
        for (i, b) in bubbles.iter().enumerate() {
            let c = [b.center[0] * scale, b.center[1] * scale];
            if (0.0..=w).contains(&c[0]) && (0.0..=h).contains(&c[1]) {
                kept.push(Bubble {
                    center: c,
                    motion: [b.motion[0] * scale, b.motion[1] * scale],
                    ..*b
                });
                source.push(i);
            }
        }
        out.push(PyramidLevel {
            level,
            pair: level_pair,
            scale,
            bubbles: kept,
            source,
        });
    }
    Ok(out)
}

/// Solver settings at one level: σ scaled (floored at one pixel) and
/// per-bubble weights restricted to the kept bubbles.
fn level_config(cfg: &SolverConfig, level: &PyramidLevel) -> SolverConfig {
    let sigma = if level.level == 0 {
        cfg.sigma
    } else {
        (cfg.sigma * level.scale).max(1.0)
    };
    SolverConfig {
        sigma,
        per_bubble_weights: cfg
            .per_bubble_weights
            .as_ref()
            .map(|w| level.source.iter().map(|&i| w[i]).collect()),
        background: None,
        ..cfg.clone()
    }
}

fn level_dirichlet(bc: &BoundarySpec, fine: &GridGeometry, level: &PyramidLevel) -> Result<DirichletMap> {
    if level.level == 0 {
        bc.dirichlet_map(fine)
    } else {
        bc.dirichlet_map_subsampled(fine, level.pair.geometry(), 1 << level.level, level.scale)
    }
}

/// Background field resampled to every level, finest first.
fn background_pyramid(background: &VectorField, levels: &[PyramidLevel]) -> Result<Vec<VectorField>> {
    levels[0].pair.geometry().ensure_same(background.geometry())?;
    let fine = background.geometry();
    levels
        .iter()
        .map(|l| {
            let f = 1usize << l.level;
            VectorField::from_fn(*l.pair.geometry(), |x, y| {
                let [a, b] = background.get((f * x).min(fine.width() - 1), (f * y).min(fine.height() - 1));
                [a * l.scale, b * l.scale]
            })
        })
        .collect()
}

/// Frame 0 with frame 1 warped back by `prior`. Pixels whose target leaves
/// the grid copy frame 0, so they carry no temporal change.
fn warped_pair(pair: &ImagePair, prior: &VectorField) -> Result<ImagePair> {
    let g = *pair.geometry();
    let s = g.spacing();
    let warped = warp_image(pair.frame1(), prior)?;
    let frame0 = pair.frame0();
    let masked = ScalarField::from_fn(g, |x, y| {
        let [a, b] = prior.get(x, y);
        if g.contains(x as f64 + a / s, y as f64 + b / s) {
            warped.get(x, y)
        } else {
            frame0.get(x, y)
        }
    })?;
    ImagePair::new(frame0.clone(), masked)
}

/// Run the coarse-to-fine driver and return the full displacement at the
/// input resolution. `background`, when given, overrides `cfg.background`.
pub fn run_coarse_to_fine(
    levels: &[PyramidLevel],
    cfg: &SolverConfig,
    bc: &BoundarySpec,
    background: Option<&VectorField>,
) -> Result<VectorField> {
    let Some(finest) = levels.first() else {
        return Err(Error::InvalidParameter("empty pyramid".into()));
    };
    cfg.validate()?;
    if let Some(w) = &cfg.per_bubble_weights {
        if w.len() != finest.bubbles.len() {
            return Err(Error::InvalidParameter(format!(
                "{} per-bubble weights for {} bubbles",
                w.len(),
                finest.bubbles.len()
            )));
        }
    }
    let fine_geometry = *finest.pair.geometry();
    let background = background.or(cfg.background.as_ref());
    let backgrounds = background.map(|bg| background_pyramid(bg, levels)).transpose()?;

    let mut update: Option<VectorField> = None;
    for level in levels.iter().rev() {
        let geometry = *level.pair.geometry();
        let level_cfg = level_config(cfg, level);
        let dirichlet = level_dirichlet(bc, &fine_geometry, level)?;
        let bg = backgrounds.as_ref().map(|b| &b[level.level]);
        let next = match &update {
            None => {
                let lin = Linearization {
                    offset: bg,
                    shift_data: true,
                };
                let system = assemble_linearized(&level.pair, &level.bubbles, &level_cfg, &dirichlet, &lin)?;
                solve(&system, &level_cfg)?
            }
            Some(coarse) => {
                let carried = upsample_field(coarse, &geometry)?;
                let prior = match bg {
                    Some(b) => VectorField::linear_combine(1.0, b, 1.0, &carried)?,
                    None => carried.clone(),
                };
                let pair = warped_pair(&level.pair, &prior)?;
                let lin = Linearization {
                    offset: Some(&prior),
                    shift_data: false,
                };
                let system = assemble_linearized(&pair, &level.bubbles, &level_cfg, &dirichlet, &lin)?;
                let correction = solve(&system, &level_cfg)?;
                VectorField::linear_combine(1.0, &carried, 1.0, &correction)?
            }
        };
        update = Some(next);
    }
    let update = update.expect("at least one level");
    match backgrounds {
        Some(b) => VectorField::linear_combine(1.0, &b[0], 1.0, &update),
        None => Ok(update),
    }
}

/// Build the pyramid and run the driver.
pub fn estimate(
    pair: &ImagePair,
    bubbles: &[Bubble],
    cfg: &SolverConfig,
    bc: &BoundarySpec,
    levels: usize,
) -> Result<VectorField> {
    let pyramid = build_pyramid(pair, bubbles, levels)?;
    run_coarse_to_fine(&pyramid, cfg, bc, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eofm::{assemble, BoundaryMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn speckle(g: GridGeometry, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = ScalarField::from_fn(g, |_, _| rng.gen::<f64>()).unwrap();
        gaussian_blur(&noise, 1.5).unwrap()
    }

    #[test]
    fn single_level_is_identity() {
        let g = GridGeometry::new(20, 17).unwrap();
        let img = speckle(g, 1);
        let pair = ImagePair::new(img.clone(), img).unwrap();
        let bubbles = vec![Bubble::new([3.0, 4.0], [0.5, 0.5])];
        let p = build_pyramid(&pair, &bubbles, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].pair, pair);
        assert_eq!(p[0].bubbles, bubbles);
        assert_eq!(p[0].scale, 1.0);
    }

    #[test]
    fn level_sizes_halve_with_ceiling() {
        let g = GridGeometry::new(256, 256).unwrap();
        let c = ScalarField::filled(g, 0.5);
        let pair = ImagePair::new(c.clone(), c).unwrap();
        let p = build_pyramid(&pair, &[], 4).unwrap();
        let sizes: Vec<_> = p.iter().map(|l| l.pair.geometry().width()).collect();
        assert_eq!(sizes, vec![256, 128, 64, 32]);

        let odd = GridGeometry::new(33, 20).unwrap();
        let c = ScalarField::filled(odd, 0.25);
        let p = build_pyramid(&ImagePair::new(c.clone(), c.clone()).unwrap(), &[], 2).unwrap();
        assert_eq!((p[1].pair.geometry().width(), p[1].pair.geometry().height()), (17, 10));
        assert!(p[1].pair.frame0().values().iter().all(|v| (v - 0.25).abs() < 1e-15));

        assert!(matches!(
            build_pyramid(&ImagePair::new(c.clone(), c).unwrap(), &[], 3),
            Err(Error::PyramidTooDeep { .. })
        ));
    }

    #[test]
    fn bubbles_scale_exactly() {
        let g = GridGeometry::new(64, 64).unwrap();
        let c = ScalarField::filled(g, 0.5);
        let pair = ImagePair::new(c.clone(), c).unwrap();
        let bubbles = vec![Bubble::new([10.0, 22.0], [4.0, -2.0]), Bubble::new([63.0, 63.0], [1.0, 1.0])];
        let p = build_pyramid(&pair, &bubbles, 3).unwrap();
        assert_eq!(p[2].bubbles[0].center, [2.5, 5.5]);
        assert_eq!(p[2].bubbles[0].motion, [1.0, -0.5]);
        // (63, 63)/4 = 15.75 lies outside the 16-pixel grid's last pixel center 15
        assert_eq!(p[2].source, vec![0]);
    }

    #[test]
    fn upsample_then_downsample_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coarse = GridGeometry::new(9, 7).unwrap();
        let fine = GridGeometry::new(18, 13).unwrap();
        let f = VectorField::from_fn(coarse, |_, _| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).unwrap();
        let back = downsample_field(&upsample_field(&f, &fine).unwrap(), &coarse).unwrap();
        for i in 0..coarse.len() {
            assert!((back.u1()[i] - f.u1()[i]).abs() < 1e-10);
            assert!((back.u2()[i] - f.u2()[i]).abs() < 1e-10);
        }
        let shift = upsample_field(&VectorField::constant(coarse, [1.5, -0.25]), &fine).unwrap();
        assert!(shift.u1().iter().all(|v| *v == 3.0));
        assert!(shift.u2().iter().all(|v| *v == -0.5));
    }

    #[test]
    fn static_pair_gives_zero() {
        let g = GridGeometry::new(32, 32).unwrap();
        let img = speckle(g, 8);
        let pair = ImagePair::new(img.clone(), img).unwrap();
        let cfg = SolverConfig {
            beta: 0.0,
            bc_mode: BoundaryMode::Natural,
            ..SolverConfig::default()
        };
        let u = estimate(&pair, &[], &cfg, &BoundarySpec::natural(), 3).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn one_level_matches_single_solve() {
        let g = GridGeometry::new(24, 24).unwrap();
        let a = speckle(g, 4);
        let b = speckle(g, 5);
        let pair = ImagePair::new(a, b).unwrap();
        let bubbles = vec![Bubble::new([8.0, 9.0], [0.3, -0.2]), Bubble::new([15.5, 12.0], [0.1, 0.4])];
        let bg = VectorField::from_fn(g, |x, y| [0.01 * x as f64, -0.02 * y as f64]).unwrap();
        let bc = BoundarySpec::compression(&g, 0.46);
        for background in [None, Some(bg)] {
            let cfg = SolverConfig {
                background: background.clone(),
                ..SolverConfig::default()
            };
            let direct = solve(&assemble(&pair, &bubbles, &cfg, &bc).unwrap(), &cfg).unwrap();
            let direct = match &background {
                Some(b) => VectorField::linear_combine(1.0, b, 1.0, &direct).unwrap(),
                None => direct,
            };
            let driven = estimate(&pair, &bubbles, &cfg, &bc, 1).unwrap();
            assert_eq!(direct, driven);
        }
    }
}

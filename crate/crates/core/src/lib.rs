//! Displacement field estimation for quasi-static elastography.
//!
//! The crate estimates the internal displacement of a compressed sample from
//! two images by minimizing an optical flow functional extended with bubble
//! (speckle) tracking data, physical boundary conditions and a background
//! field from linearized elasticity. A coarse-to-fine driver handles large
//! displacements, and a synthetic phantom with known ground truth drives the
//! evaluation.
//!
//! ```
//! use eofm::{BoundarySpec, GridGeometry, ImagePair, ScalarField, SolverConfig, BoundaryMode};
//!
//! let g = GridGeometry::new(32, 32)?;
//! let frame = ScalarField::from_fn(g, |x, y| 0.5 + 0.4 * ((x as f64) * 0.7).sin() * ((y as f64) * 0.5).cos())?;
//! let pair = ImagePair::new(frame.clone(), frame)?;
//! let cfg = SolverConfig { beta: 0.0, bc_mode: BoundaryMode::Natural, ..SolverConfig::default() };
//! let system = eofm::assemble(&pair, &[], &cfg, &BoundarySpec::natural())?;
//! let u = eofm::solve(&system, &cfg)?;
//! assert_eq!(u.norm_l2(), 0.0);
//! # Ok::<(), eofm::Error>(())
//! ```

pub mod ablation;
pub mod boundary;
pub mod derivatives;
pub mod dofs;
pub mod elasticity;
pub mod eofm;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod io;
pub mod linalg;
pub mod multiscale;
pub mod phantom;
pub mod speckle;

pub use boundary::{BoundarySpec, DirichletMap, Edge, Segment, SegmentKind};
pub use derivatives::{gaussian_blur, spatial_gradient, temporal_derivative, warp_image, ImagePair};
pub use dofs::{AssembledSystem, Dof, DofMap};
pub use elasticity::{assemble_background, solve_background, solve_inhomogeneous, MaterialParams};
pub use eofm::{
    assemble, functional_value, gaussian_weight, solve, BoundaryMode, FunctionalValue, SolverConfig,
};
pub use error::{Error, Result};
pub use field::{GridGeometry, ScalarField, VectorField};
pub use speckle::{detect_bubbles, track_bubbles, Bubble, TrackerParams};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use multiscale::{build_pyramid, estimate, run_coarse_to_fine, PyramidLevel};
pub use evaluation::{compare, ErrorReport};

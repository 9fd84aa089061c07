//! The guide under `book/` is written for mdbook, which cannot run listings
//! that depend on workspace crates. Each chapter is included here as a module
//! doc comment instead, so `cargo test --doc` compiles and runs every listing
//! against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/fields.md")]
pub mod fields {}
#[doc = include_str!("../../../book/src/functional.md")]
pub mod functional {}
#[doc = include_str!("../../../book/src/boundary.md")]
pub mod boundary {}
#[doc = include_str!("../../../book/src/tracking.md")]
pub mod tracking {}
#[doc = include_str!("../../../book/src/elasticity.md")]
pub mod elasticity {}
#[doc = include_str!("../../../book/src/multiscale.md")]
pub mod multiscale {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

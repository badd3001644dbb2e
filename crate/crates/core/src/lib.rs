//! Surfel scene rendering with surface octahedral probes.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] holds the surfel primitive, ray intersection, the BVH and
//!   ordered alpha traversal.
//! * [`octmap`] implements the octahedral direction mapping, textures,
//!   Hammersley sequences and environment importance sampling.
//! * [`gbuffer`] renders the alpha-blended geometry/material planes.
//! * [`shading`] evaluates the BRDF and the Monte Carlo shading estimators.
//! * [`probes`] places, bakes and interpolates surface octahedral probes.
//! * [`lighting`] captures panoramas, completes them and fuses exposure
//!   brackets into HDR environment maps.
//! * [`composition`] caches object-induced occlusion, computes shadow ratios
//!   and composites a relit object into a scene.
//! * [`metrics`] exposes image metrics and loss terms.

pub mod composition;
pub mod error;
pub mod gbuffer;
pub mod geometry;
pub mod hdr;
pub mod lighting;
pub mod metrics;
pub mod octmap;
pub mod probes;
pub mod raster;
pub mod seed;
pub mod shading;
pub mod tutorial;

pub use error::{Error, Result};

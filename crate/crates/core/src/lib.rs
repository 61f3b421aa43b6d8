//! Equi-affine differential invariants of images and volumes, an
//! affine-invariant scale-space feature detector, and robust affine
//! registration of image pairs.
//!
//! The crate is organized bottom-up:
//!
//! - [`image`], [`transform`], [`interp`], [`synth`]: grids, SA(2)/SA(3)
//!   maps, Catmull-Rom warping and synthetic test imagery.
//! - [`diffops`]: central finite differences and Gaussian pre-smoothing.
//! - [`invariants`]: the `H`, `J` and detector fields, their 3D analogues and
//!   the moving-frame normalization.
//! - [`scalespace`]: affine-invariant and linear PDE scale-spaces.
//! - [`features`], [`describe`], [`register`]: detection, description,
//!   matching and RANSAC registration.
//! - [`io`], [`cli`]: file formats and the command-line front end.
//!
//! Inner loops run on rayon when the default `parallel` feature is enabled
//! and sequentially otherwise; outputs are identical either way.

pub mod cli;
pub mod describe;
pub mod diffops;
pub mod error;
pub mod features;
pub mod image;
pub mod interp;
pub mod invariants;
pub mod io;
pub mod par;
pub mod register;
pub mod scalespace;
pub mod synth;
pub mod transform;

pub use error::{Error, ErrorClass, Result};
pub use image::{Field2D, Field3D, Image2D, Image3D, Mask};
pub use transform::{Affine2, EquiAffine2, EquiAffine3};

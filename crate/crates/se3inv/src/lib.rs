//! SE(3)-invariant descriptors of compact oriented surfaces in R³.
//!
//! The library turns a triangle mesh into a weighted sample of the Gauss-map
//! lift {(x, N_x)} ⊂ R³×S², accumulates spherical-harmonic moment tensors of
//! that measure, convolves them into translation- and rotation-invariant
//! descriptor vectors, audits the rank (genericity) conditions under which the
//! descriptors are invertible, and reconstructs rigid copies of the surface
//! from a chosen fiber of the associated incidence variety.
//!
//! Module map:
//! - [`sphharm`]: spherical harmonics and the solid-harmonic polynomial basis.
//! - [`so3`]: Wigner matrices, Clebsch–Gordan coupling, Haar quadrature.
//! - [`surface`]: mesh I/O, surface-measure quadrature, shape operators,
//!   analytic test shapes.
//! - [`moments`]: harmonic-channel moment tensors and their translational
//!   (MGF-product) convolution.
//! - [`invariants`]: SO(3) trivial-part contraction into rigid-motion
//!   invariant descriptors.
//! - [`fiber`]: the section/trivialization geometry of sphere triples, pair
//!   samples, ball classification, and reconstruction.
//! - [`genericity`]: numerical audits of the two rank conditions that
//!   reconstruction relies on.
//! - [`config`]: run configuration shared by the CLI and file headers.

pub mod config;
pub mod fiber;
pub mod genericity;
pub mod invariants;
pub mod moments;
pub mod selftest;
pub mod so3;
pub mod sphharm;
pub mod surface;
pub mod util;

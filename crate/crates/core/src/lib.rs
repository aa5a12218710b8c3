//! Image provenance analysis.
//!
//! Given a query image and a large corpus, [`filtering`] retrieves the images
//! that are directly or indirectly related to the query using an
//! OPQ + IVFADC feature index ([`index`]) built over Hessian interest points
//! ([`detector`]). [`pairwise`] then measures shared content among the
//! retrieved images and [`graphs`] turns those measurements into a
//! provenance graph. [`eval`] scores both stages and [`synth`] generates
//! synthetic provenance cases with known ground truth.

pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod filtering;
pub mod graphs;
pub mod imaging;
pub mod index;
pub mod pairwise;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

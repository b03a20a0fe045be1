//! Distance to the border of size-conditioned Galton-Watson trees.
//!
//! For an offspring distribution `psi` and a Galton-Watson tree `T`
//! conditioned to have exactly `n` nodes, this crate computes the
//! probability that every leaf sits at distance at least `k` from the
//! root — exactly at finite `n` and in the `n -> infinity` limit — and
//! verifies the exact route with two independent engines.
//!
//! - [`series`]: truncated power series over exact rationals or floats.
//! - [`family`]: offspring families, Khinchin quantities, the solution of
//!   Lagrange's equation `g = z psi(g)`, the Otter asymptotic, tilted and
//!   progeny laws, extinction probabilities.
//! - [`border`]: the iteration scheme `g_k = z (psi(g_{k-1}) - b_0)`, exact
//!   conditional probabilities `A_n^(k)/A_n`, limit constants, closed forms
//!   for plane and binary trees, and the generalized index-set scheme.
//! - [`oracle`]: exhaustive weighted enumeration of rooted plane trees,
//!   cross-checking every exact coefficient.
//! - [`sampler`]: rejection-conditioned Galton-Watson simulation with
//!   deterministic parallel streams.

pub mod border;
pub mod error;
pub mod family;
pub mod fmt;
pub mod oracle;
pub mod sampler;
pub mod series;

pub use error::{Error, Result};
pub use family::{KhinchinQuantities, OffspringFamily};
pub use series::{ExactSeries, FloatSeries, Series};

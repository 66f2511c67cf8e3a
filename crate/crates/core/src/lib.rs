//! Simulation and exact-computation toolkit around almost sure central limit
//! theorems for Hermite power variations of fractional Brownian motion.
//!
//! The crate splits into five layers:
//!
//! - [`fgn`]: exact fractional Gaussian noise synthesis by circulant
//!   embedding, plus the increment covariance and its asymptotics;
//! - [`hermite`]: Hermite polynomials in the probabilists' convention;
//! - [`variation`]: Hermite power variations, exact finite-n normalizers and
//!   the normalized statistics for every (q, H) regime;
//! - [`kernels`]: exact arithmetic on the discrete block kernels
//!   (inner products, contraction norms, symmetrized contractions, the
//!   chaos-expansion variance and the summability criteria);
//! - [`asclt`]: the experiment layer (log-averaged empirical measures,
//!   Kolmogorov distances, characteristic-function statistics, the Stein
//!   bound, and the non-Gaussian-regime contrast).
//!
//! Everything is deterministic given a seed: replications derive per-path
//! ChaCha streams from (seed, stream index), so results never depend on
//! thread count.

pub mod asclt;
pub mod error;
pub mod fgn;
pub mod hermite;
pub mod kernels;
pub mod parallel;
pub mod variation;

pub use error::{Error, Result};

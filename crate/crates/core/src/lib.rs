//! Desk-scale, CPU-only differentiable 3D Gaussian splatting.
//!
//! The crate is organized around the rendering/optimization pipeline:
//!
//! - [`gsmath`]: Gaussian primitive parameterization, covariance assembly and
//!   camera projection (EWA Jacobian), with hand-derived backward passes.
//! - [`raster`]: tile-based front-to-back alpha compositing, the analytic
//!   backward pass, per-Gaussian pixel-coverage counting, and a brute-force
//!   reference renderer used as an equivalence oracle.
//! - [`densctl`]: densification statistics and the two split/clone policies
//!   (mean NDC gradient vs pixel-coverage-weighted gradient).
//! - [`deform`]: tri-plane hash position encoder, gated multimodal fusion
//!   modules and deformation heads.
//! - [`train`]: losses, Adam, image metrics, dual-branch compositing and the
//!   three-stage training pipeline.
//! - [`io`]: PLY cloud snapshots, "PGSW" tensor checkpoints and "PGSF"
//!   per-frame feature sequences.
//! - [`gradcheck`]: central finite-difference harness with discontinuity
//!   exclusion, shared by unit tests and the `gradcheck` CLI command.
//! - [`synth`]: synthetic scene/dataset generators for self-reconstruction
//!   and policy-comparison experiments.

pub mod densctl;
pub mod deform;
pub mod error;
pub mod gradcheck;
pub mod gsmath;
pub mod image;
pub mod io;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

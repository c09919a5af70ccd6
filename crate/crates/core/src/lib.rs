//! Simulation and analysis toolkit for a quantum phased array receiver.
//!
//! Squeezed light is coupled from free space onto a 1-D array of antennas,
//! detected by an array of balanced homodyne receivers and coherently combined
//! in the RF domain. The crate is organised bottom-up:
//!
//! - [`gaussian`]: Gaussian states and exact linear-optics transformations.
//! - [`aperture`]: antenna geometry, overlap integrals and geometric loss.
//! - [`receiver`]: receiver noise model, seeded quadrature sampling, RF combining.
//! - [`calibration`]: phase calibration search, steering, beamwidth and FoV scans.
//! - [`estimation`]: windowed statistics, KDE squeezing estimates and model fits.
//! - [`cluster`]: two-mode cluster-state emulation and inseparability.
//! - [`experiments`]: configuration and the reproducible experiment runners.
//!
//! Quadrature units follow the convention `X(θ) = (a e^{iθ} + a† e^{-iθ}) / 2`,
//! so the vacuum variance is [`SIGMA_VAC`] = 1/4.

pub mod aperture;
pub mod calibration;
pub mod cluster;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod gaussian;
pub mod receiver;

pub use error::{QpaError, Result};
pub use gaussian::SIGMA_VAC;

//! Two-photon excitation of quantum-dot biexcitons with a competing
//! phonon-assisted exciton channel, Monte Carlo cascade emission into
//! detector time tags, and the photon-correlation analyses built on them:
//! g²(τ), polarization tomography with Bell-state fidelity, and
//! lifetime extraction by forward-model deconvolution.

pub mod correlator;
pub mod dynamics;
pub mod emission;
pub mod error;
pub mod experiments;
pub mod lifetimes;
pub mod polarization;
pub mod qd;
pub mod scenario;
pub mod tomography;
pub mod units;

pub use error::{Error, Result};
pub use polarization::Jones;
pub use qd::{DetectorSpec, IrfKernel, LaserPulseSpec, PhononEnvironment, QdParameters, Validate};

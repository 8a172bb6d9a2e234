//! Simulation and tomography of path-encoded photonic qudit states.
//!
//! A photon distributed over `d` well-separated Gaussian beam paths carries a
//! `d`-dimensional quantum state. This crate forward-models the camera frames
//! produced by a rotating one-dimensional optical Fourier transform of such a
//! state and reconstructs the `d x d` density matrix back from those frames:
//!
//! * [`density`] - Hermitian matrix algebra: purity, fidelity, physicality
//!   projection, random test states.
//! * [`prep`] - Jones-calculus simulation of the waveplate/beam-displacer
//!   preparation stage, including the spinning-waveplate mixer.
//! * [`geometry`] - path-geometry bookkeeping: segment tables, lens-angle
//!   sets, validity checking, Golomb rulers, measurement planning and
//!   resource accounting.
//! * [`optics`] - synthetic camera frames: direct images and rotated
//!   cylindrical-lens images, with optional shot/read noise, plus 16-bit PGM
//!   frame I/O.
//! * [`reconstruct`] - slice extraction, exact-frequency Fourier projection,
//!   two-reference phase calibration and density-matrix assembly.

pub mod density;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod optics;
pub mod pipeline;
pub mod prep;
pub mod reconstruct;

pub use density::DensityMatrix;
pub use error::{Error, Result};
pub use geometry::{MeasurementPlan, PathGeometry, ResourceReport, Segment, ValidityReport};
pub use optics::{CameraImage, NoiseModel, OpticalConfig};
pub use prep::{PolPathState, PrepSettings};
pub use reconstruct::{Calibration, FrameSet, PeakReading, ReconstructionResult};

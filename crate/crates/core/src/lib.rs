//! Simulation core of a confocal single-photon microscope: emitters, optics,
//! actuators, detectors, a streaming time-tag correlator, fitting and the
//! scan/HBT orchestration used by the service.
//!
//! Numeric building blocks are generic over [`scalar::Scalar`] (`f32` or
//! `f64`). The aliases below pin the `f64` instantiation the instrument uses.

// `!(x > 0)` is the NaN-rejecting form used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod actuation;
pub mod analysis;
pub mod correlator;
pub mod detection;
pub mod emitter_sample;
pub mod error;
pub mod io;
pub mod lm;
pub mod optics;
pub mod profile;
pub mod rng;
pub mod scalar;
pub mod scan_engine;

pub use error::{Error, Result};

pub type BeamProfile = optics::BeamProfile<f64>;
pub type TransmissionCurve = optics::TransmissionCurve<f64>;
pub type ObjectiveSpec = optics::ObjectiveSpec<f64>;
pub type FilterElement = optics::FilterElement<f64>;
pub type FilterStack = optics::FilterStack<f64>;
pub type DacSpec = actuation::DacSpec<f64>;
pub type VoiceCoilAxis = actuation::VoiceCoilAxis<f64>;
pub type ActuatorState = actuation::ActuatorState<f64>;
pub type G2Fit = analysis::G2Fit<f64>;
pub type BeamWaistFit = analysis::BeamWaistFit<f64>;
pub type BeamFitConfig = analysis::BeamFitConfig<f64>;
pub type GaussianCrossSection = analysis::GaussianCrossSection<f64>;
pub type LinearFit = analysis::LinearFit<f64>;
pub type Spot = analysis::Spot<f64>;
pub type SpotConfig = analysis::SpotConfig<f64>;

/// Single-precision variants for memory-bound analysis of large images.
pub type SpotF32 = analysis::Spot<f32>;
pub type G2FitF32 = analysis::G2Fit<f32>;
pub type BeamProfileF32 = optics::BeamProfile<f32>;

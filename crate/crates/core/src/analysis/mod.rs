//! Fitting and image analysis on acquired data.

mod beam;
mod g2;
mod gaussian;
mod linear;
mod spots;

pub use beam::{fit_beam_waist, BeamFitConfig, BeamWaistFit};
pub use g2::{classify_g2_zero, classify_single_emitter, fit_g2, G2Fit, Verdict};
pub use gaussian::{fit_gaussian_cross_section, GaussianCrossSection};
pub use linear::{fit_linear, LinearFit};
pub use spots::{background_stats, find_spots_grid, GridView, Spot, SpotConfig};

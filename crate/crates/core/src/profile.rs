//! Instrument profiles: the full parameter set of one setup.
//!
//! Two presets ship with the crate, `reference` (NA 0.95 objective on an
//! open-loop piezo stage) and `lowcost` (Blu-ray pickup lens on its voice
//! coils). Any profile can be written to and read from TOML.

use crate::actuation::{ActuatorState, Backend, DacSpec, VoiceCoilAxis};
use crate::detection::SpadSpec;
use crate::emitter_sample::{ChargeState, EmitterSpec};
use crate::error::{Error, Result};
use crate::optics::{
    excitation_rate_at, spectral_collection_efficiency, BeamProfile, FilterStack, ObjectiveSpec, TransmissionCurve,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PRESETS: [&str; 2] = ["reference", "lowcost"];

/// Excitation rate per mW of pump power delivered on focus (1/s/mW).
///
/// Chosen so an on-focus NV⁻ under the reference preset at 10 mW is pumped
/// at its decay rate, i.e. emits at half its saturation rate.
pub const EXCITATION_PER_MW: f64 = 1e9 / 12.0 / (10.0 * 0.85);

/// Brightness multiplier of the demo-fast mode.
pub const DEMO_FAST_FACTOR: f64 = 20.0;

/// Beam expansion in front of the objective. Recorded for reference only;
/// the Gaussian beam model works from the focal waist directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelescopeSpec {
    pub magnification: f64,
    pub input_beam_mm: f64,
    pub output_beam_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentProfile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// `power_mw` is the profile's reference pump power.
    pub beam: BeamProfile<f64>,
    pub objective: ObjectiveSpec<f64>,
    pub filters: FilterStack<f64>,
    pub pinhole_axial_fwhm_um: f64,
    pub excitation_per_mw: f64,
    pub actuator: ActuatorState<f64>,
    pub spad_a: SpadSpec,
    pub spad_b: SpadSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telescope: Option<TelescopeSpec>,
    /// Set when the demo-fast scaling has been applied.
    #[serde(default)]
    pub demo_fast: bool,
}

impl InstrumentProfile {
    pub fn reference() -> Self {
        let axis = VoiceCoilAxis::piezo();
        InstrumentProfile {
            name: "reference".into(),
            description: "Confocal microscope with NA 0.95 objective and open-loop piezo stage".into(),
            beam: BeamProfile {
                w0: 0.35,
                wavelength_nm: 532.0,
                m_squared: 1.05,
                power_mw: 10.0,
                focus_z: 0.0,
            },
            objective: ObjectiveSpec {
                numerical_aperture: 0.95,
                transmission_curve: TransmissionCurve {
                    points: vec![(400.0, 0.75), (532.0, 0.85), (600.0, 0.90), (850.0, 0.90)],
                },
                autofluorescence_rate_per_mw: 50.0,
            },
            filters: FilterStack::detection_default(),
            pinhole_axial_fwhm_um: 1.5,
            excitation_per_mw: EXCITATION_PER_MW,
            actuator: ActuatorState {
                backend: Backend::Piezo,
                axes: [axis.clone(), axis.clone()],
                calibration: [axis.clone(), axis],
                dac: DacSpec::default_16bit(),
                center: [10.0, 10.0],
                drift_offset: [0.0, 0.0],
                drift_rate_rms: 0.5,
                elapsed: 0.0,
            },
            spad_a: SpadSpec::default(),
            spad_b: SpadSpec::default(),
            telescope: Some(TelescopeSpec {
                magnification: 20.0 / 3.0,
                input_beam_mm: 0.6,
                output_beam_mm: 4.0,
            }),
            demo_fast: false,
        }
    }

    pub fn lowcost() -> Self {
        let x = VoiceCoilAxis::opu(15.0);
        let y = VoiceCoilAxis::opu(13.5);
        let nominal = VoiceCoilAxis::opu(15.0);
        InstrumentProfile {
            name: "lowcost".into(),
            description: "Blu-ray optical pickup lens (NA 0.6) scanned by its voice coils".into(),
            beam: BeamProfile {
                w0: 1.66,
                wavelength_nm: 532.0,
                m_squared: 1.0,
                power_mw: 10.0,
                focus_z: 0.0,
            },
            objective: ObjectiveSpec {
                numerical_aperture: 0.6,
                transmission_curve: TransmissionCurve {
                    points: vec![
                        (400.0, 0.97),
                        (450.0, 0.85),
                        (532.0, 0.70),
                        (600.0, 0.90),
                        (650.0, 0.97),
                        (850.0, 0.97),
                    ],
                },
                autofluorescence_rate_per_mw: LOWCOST_AUTOFLUORESCENCE_PER_MW,
            },
            filters: FilterStack::detection_default(),
            pinhole_axial_fwhm_um: 4.0,
            excitation_per_mw: EXCITATION_PER_MW,
            actuator: ActuatorState {
                backend: Backend::VoiceCoil,
                axes: [x, y],
                calibration: [nominal.clone(), nominal],
                dac: DacSpec::default_16bit(),
                center: [10.0, 10.0],
                drift_offset: [0.0, 0.0],
                drift_rate_rms: 0.1,
                elapsed: 0.0,
            },
            spad_a: SpadSpec::default(),
            spad_b: SpadSpec::default(),
            telescope: None,
            demo_fast: false,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "reference" => Some(Self::reference()),
            "lowcost" => Some(Self::lowcost()),
            _ => None,
        }
    }

    /// A preset name or a path to a TOML profile.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::preset(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::validation(
                "profile",
                format!("unknown profile {name_or_path:?}: expected reference, lowcost or a TOML file"),
            ));
        }
        Self::from_file(path)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let profile: Self = toml::from_str(text).map_err(|e| Error::Format(format!("profile: {e}")))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("profile: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        self.objective.validate()?;
        self.filters.validate()?;
        self.actuator.validate()?;
        self.spad_a.validate()?;
        self.spad_b.validate()?;
        if !(self.pinhole_axial_fwhm_um > 0.0) {
            return Err(Error::validation("pinhole_axial_fwhm_um", "must be positive"));
        }
        if !(self.excitation_per_mw >= 0.0) {
            return Err(Error::validation("excitation_per_mw", "must be non-negative"));
        }
        Ok(())
    }

    /// Non-physical fast mode: autofluorescence and dark counts scale with the
    /// emitter brightness (see [`crate::emitter_sample::SampleField::scale_brightness`])
    /// so the signal fraction is unchanged while acquisitions need `factor`
    /// times less simulated time.
    pub fn with_demo_fast(mut self, factor: f64) -> Self {
        self.objective.autofluorescence_rate_per_mw *= factor;
        self.spad_a.dark_count_rate *= factor;
        self.spad_b.dark_count_rate *= factor;
        self.demo_fast = true;
        self
    }

    /// Pump rate (1/s) of an emitter for the beam centered at `beam_xy`.
    pub fn excitation_rate(&self, emitter: &EmitterSpec, beam_xy: [f64; 2], power_mw: f64, focus_z: f64) -> f64 {
        let beam = BeamProfile {
            power_mw,
            focus_z,
            ..self.beam
        };
        excitation_rate_at(&beam, &self.objective, self.excitation_per_mw, emitter.position, beam_xy)
    }

    /// Fraction of an emitter's photons that reach the detector pair.
    pub fn collection(&self, emitter: &EmitterSpec, focus_z: f64) -> Result<f64> {
        spectral_collection_efficiency(
            &self.objective,
            &self.filters,
            emitter,
            emitter.position[2] - focus_z,
            self.pinhole_axial_fwhm_um,
        )
    }

    /// Autofluorescence photons reaching the detector pair (1/s).
    pub fn background_incident_rate(&self, power_mw: f64) -> Result<f64> {
        crate::optics::background_rate(&self.objective, power_mw)
    }

    /// Detected count rate summed over both detectors for a photon rate
    /// arriving at the 50/50 split.
    pub fn detected_rate(&self, incident: f64) -> f64 {
        self.spad_a.detected_rate(incident / 2.0) + self.spad_b.detected_rate(incident / 2.0)
    }

    /// Signal fraction `S/(S+B)` of detection events with the beam parked
    /// on `emitter`, ignoring dead time.
    pub fn signal_fraction(&self, emitter: &EmitterSpec, power_mw: f64) -> Result<f64> {
        let k = self.excitation_rate(emitter, [emitter.position[0], emitter.position[1]], power_mw, 0.0);
        let signal = emitter.emission_rate(k) * self.collection(emitter, 0.0)? * self.mean_efficiency();
        let background = self.background_incident_rate(power_mw)? * self.mean_efficiency()
            + self.spad_a.dark_count_rate
            + self.spad_b.dark_count_rate;
        Ok(signal / (signal + background))
    }

    fn mean_efficiency(&self) -> f64 {
        (self.spad_a.efficiency + self.spad_b.efficiency) / 2.0
    }

    /// Autofluorescence rate per mW that gives signal fraction `rho` on an
    /// on-focus emitter at `power_mw`, ignoring dead time.
    pub fn autofluorescence_for_signal_fraction(&self, emitter: &EmitterSpec, power_mw: f64, rho: f64) -> Result<f64> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::validation("rho", "must lie in (0, 1]"));
        }
        if !(power_mw > 0.0) {
            return Err(Error::validation("power_mw", "must be positive"));
        }
        let k = self.excitation_rate(emitter, [emitter.position[0], emitter.position[1]], power_mw, 0.0);
        let eta = self.mean_efficiency();
        let signal = emitter.emission_rate(k) * self.collection(emitter, 0.0)? * eta;
        let darks = self.spad_a.dark_count_rate + self.spad_b.dark_count_rate;
        let auto = signal / rho - signal - darks;
        if auto < 0.0 {
            return Err(Error::validation(
                "rho",
                format!("dark counts alone push the signal fraction below {rho}"),
            ));
        }
        Ok(auto / (eta * power_mw))
    }
}

/// Lowcost autofluorescence (counts/s/mW at the detectors): gives a signal
/// fraction of 0.762 on a default NV⁻ at 10 mW.
pub const LOWCOST_AUTOFLUORESCENCE_PER_MW: f64 = 83.6;

/// Default NV⁻ at the origin, used for calibration checks.
pub fn calibration_emitter() -> EmitterSpec {
    EmitterSpec::new(ChargeState::NvMinus, [0.0, 0.0, 0.0])
}

//! Positioning backends: OPU voice-coil lens and open-loop piezo stage.
//!
//! Both are driven by DAC control voltages. An axis deflects linearly around
//! its virtual ground with a small cubic term; the controller converts
//! target positions to voltages with its own calibration model, which may
//! disagree with the physical axis (the gain mismatch that makes spots oval).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacSpec<T> {
    pub bits: u32,
    pub v_min: T,
    pub v_max: T,
}

impl<T: Scalar> DacSpec<T> {
    /// 16-bit over [0, 10] V.
    pub fn default_16bit() -> Self {
        DacSpec {
            bits: 16,
            v_min: T::zero(),
            v_max: T::of(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=24).contains(&self.bits) {
            return Err(Error::validation("bits", "DAC resolution must be 8..=24 bits"));
        }
        if !(self.v_max > self.v_min) {
            return Err(Error::validation("v_max", "must exceed v_min"));
        }
        Ok(())
    }

    pub fn step(&self) -> T {
        (self.v_max - self.v_min) / T::of(((1u64 << self.bits) - 1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized<T> {
    pub volts: T,
    pub code: u32,
    /// Input was outside the DAC range and has been clamped.
    pub clamped: bool,
}

/// Round to the nearest of the DAC's `2^bits` codes.
pub fn dac_quantize<T: Scalar>(v: T, dac: &DacSpec<T>) -> Quantized<T> {
    let clamped = !(v >= dac.v_min && v <= dac.v_max);
    let v = if v.is_nan() {
        dac.v_min
    } else {
        v.max(dac.v_min).min(dac.v_max)
    };
    let max_code = (1u64 << dac.bits) - 1;
    let code = ((v - dac.v_min) / dac.step())
        .round()
        .to_u64()
        .unwrap_or(0)
        .min(max_code);
    let volts = if code == max_code {
        dac.v_max
    } else {
        dac.v_min + T::of(code as f64) * dac.step()
    };
    Quantized {
        volts,
        code: code as u32,
        clamped,
    }
}

/// One actuator axis. For a voice coil the span is the coil voltage swing
/// around the virtual ground; a piezo axis uses the same shape with its own
/// center and span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceCoilAxis<T> {
    /// Control voltage at which the axis sits centered (V).
    pub virtual_ground: T,
    /// µm per volt of coil voltage.
    pub gain: T,
    /// Relative cubic deviation at full swing.
    pub cubic_nonlinearity: T,
    /// Largest coil voltage magnitude (V); the control range is `virtual_ground ± max_coil_voltage`.
    pub max_coil_voltage: T,
    /// Coil current at full swing (mA).
    pub max_coil_current_ma: T,
}

impl<T: Scalar> VoiceCoilAxis<T> {
    pub fn opu(gain: T) -> Self {
        VoiceCoilAxis {
            virtual_ground: T::of(2.0),
            gain,
            cubic_nonlinearity: T::of(0.02),
            max_coil_voltage: T::one(),
            max_coil_current_ma: T::of(200.0),
        }
    }

    /// Open-loop piezo driven over the full 0–10 V DAC range, 100 µm travel.
    pub fn piezo() -> Self {
        VoiceCoilAxis {
            virtual_ground: T::of(5.0),
            gain: T::of(10.0),
            cubic_nonlinearity: T::zero(),
            max_coil_voltage: T::of(5.0),
            max_coil_current_ma: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > T::zero()) {
            return Err(Error::validation("gain", "must be positive"));
        }
        if !(self.max_coil_voltage > T::zero()) {
            return Err(Error::validation("max_coil_voltage", "must be positive"));
        }
        if !(self.cubic_nonlinearity.abs() < T::one() / T::of(3.0)) {
            return Err(Error::validation(
                "cubic_nonlinearity",
                "|nonlinearity| must stay below 1/3 to keep the axis monotone",
            ));
        }
        Ok(())
    }

    pub fn control_range(&self) -> (T, T) {
        (
            self.virtual_ground - self.max_coil_voltage,
            self.virtual_ground + self.max_coil_voltage,
        )
    }

    fn displacement_for_coil(&self, coil_v: T) -> T {
        let u = coil_v / self.max_coil_voltage;
        self.gain * coil_v * (T::one() + self.cubic_nonlinearity * u * u)
    }

    /// Deflection at the ends of the control range.
    pub fn travel(&self) -> (T, T) {
        (
            self.displacement_for_coil(-self.max_coil_voltage),
            self.displacement_for_coil(self.max_coil_voltage),
        )
    }

    /// Coil current (mA) for a control voltage, assuming an ohmic coil.
    pub fn coil_current_ma(&self, control_v: T) -> T {
        (control_v - self.virtual_ground) / self.max_coil_voltage * self.max_coil_current_ma
    }
}

/// Displacement (µm) of the axis for a control voltage.
pub fn deflection<T: Scalar>(axis: &VoiceCoilAxis<T>, control_v: T) -> Result<T> {
    let (lo, hi) = axis.control_range();
    if !(control_v >= lo && control_v <= hi) {
        return Err(Error::range(
            "control",
            format!("{control_v} V outside [{lo}, {hi}] V"),
        ));
    }
    Ok(axis.displacement_for_coil(control_v - axis.virtual_ground))
}

/// Control voltage that deflects the axis to `target` µm (bisection on the monotone model).
pub fn voltage_for_position<T: Scalar>(axis: &VoiceCoilAxis<T>, target: T) -> Result<T> {
    let (min_travel, max_travel) = axis.travel();
    if !(target >= min_travel && target <= max_travel) {
        return Err(Error::range(
            "target",
            format!("{target} µm outside reachable [{min_travel}, {max_travel}] µm"),
        ));
    }
    if target == T::zero() {
        return Ok(axis.virtual_ground);
    }
    let mut lo = -axis.max_coil_voltage;
    let mut hi = axis.max_coil_voltage;
    for _ in 0..200 {
        let mid = (lo + hi) / T::of(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if axis.displacement_for_coil(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let coil = if (axis.displacement_for_coil(lo) - target).abs()
        <= (axis.displacement_for_coil(hi) - target).abs()
    {
        lo
    } else {
        hi
    };
    Ok(axis.virtual_ground + coil)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    VoiceCoil,
    Piezo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState<T> {
    pub backend: Backend,
    /// Physical X and Y axes.
    pub axes: [VoiceCoilAxis<T>; 2],
    /// The controller's model of the axes, used to plan voltages.
    pub calibration: [VoiceCoilAxis<T>; 2],
    pub dac: DacSpec<T>,
    /// Sample position (µm) at which both axes sit at their virtual ground.
    pub center: [T; 2],
    /// Accumulated drift (µm), XY.
    pub drift_offset: [T; 2],
    /// µm/√hour per axis.
    pub drift_rate_rms: T,
    /// Seconds.
    pub elapsed: T,
}

impl<T: Scalar> ActuatorState<T> {
    pub fn validate(&self) -> Result<()> {
        self.dac.validate()?;
        for a in self.axes.iter().chain(self.calibration.iter()) {
            a.validate()?;
        }
        if !(self.drift_rate_rms >= T::zero()) {
            return Err(Error::validation("drift_rate_rms", "must be non-negative"));
        }
        Ok(())
    }

    /// Where the beam lands on the sample for the given control voltages.
    pub fn beam_position(&self, control: [T; 2]) -> Result<[T; 2]> {
        let dx = deflection(&self.axes[0], control[0])?;
        let dy = deflection(&self.axes[1], control[1])?;
        Ok([
            self.center[0] + dx + self.drift_offset[0],
            self.center[1] + dy + self.drift_offset[1],
        ])
    }

    /// Quantized control voltages the controller issues to reach `target`.
    pub fn command_for(&self, target: [T; 2]) -> Result<[Quantized<T>; 2]> {
        let names = ["x", "y"];
        let mut out = [dac_quantize(T::zero(), &self.dac); 2];
        for i in 0..2 {
            let v = voltage_for_position(&self.calibration[i], target[i] - self.center[i])
                .map_err(|e| Error::range(names[i], e.to_string()))?;
            out[i] = dac_quantize(v, &self.dac);
        }
        Ok(out)
    }

    /// Reachable sample window `[min, max]` per axis according to the controller model.
    pub fn planned_window(&self) -> [(T, T); 2] {
        let mut out = [(T::zero(), T::zero()); 2];
        for i in 0..2 {
            let (lo, hi) = self.calibration[i].travel();
            out[i] = (self.center[i] + lo, self.center[i] + hi);
        }
        out
    }
}

/// Gaussian random walk of the drift offset over `dt` seconds.
///
/// Per-axis step σ = `drift_rate_rms·sqrt(dt / 1 h)`.
pub fn advance_drift<T: Scalar, R: Rng + ?Sized>(state: &ActuatorState<T>, dt: T, rng: &mut R) -> Result<ActuatorState<T>> {
    let mut next = state.clone();
    advance_drift_in_place(&mut next, dt, rng)?;
    Ok(next)
}

pub fn advance_drift_in_place<T: Scalar, R: Rng + ?Sized>(state: &mut ActuatorState<T>, dt: T, rng: &mut R) -> Result<()> {
    if !(dt >= T::zero()) {
        return Err(Error::validation("dt", "must be non-negative"));
    }
    if dt == T::zero() {
        return Ok(());
    }
    let sigma = state.drift_rate_rms * (dt / T::of(3600.0)).sqrt();
    if sigma > T::zero() {
        for d in state.drift_offset.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *d += sigma * T::of(z);
        }
    }
    state.elapsed += dt;
    Ok(())
}

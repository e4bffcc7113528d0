//! Nanodiamond samples and NV-center photon emission.
//!
//! Each NV center is a two-level renewal process: after every emission the
//! center waits an exponential time for re-excitation (rate `k_exc`) and
//! another exponential time for radiative decay (rate `k_dec = 1/lifetime`).
//! The normalized pair correlation of that stream is `1 - exp(-(k_exc + k_dec)|τ|)`.

use crate::error::{Error, Result};
use crate::rng::SimRng;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Geometric, Normal};
use serde::{Deserialize, Serialize};

pub const SAMPLE_SCHEMA: &str = "photonbench.sample/1";

/// Placement attempts per diamond before dart throwing gives up.
pub const PLACEMENT_RETRY_BUDGET: usize = 10_000;

/// Spectral support of the emission model (nm).
pub const SPECTRUM_MIN_NM: f64 = 550.0;
pub const SPECTRUM_MAX_NM: f64 = 850.0;

/// Width of the zero-phonon line (nm, 1σ); draws are truncated at ±4σ.
pub const ZPL_SIGMA_NM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeState {
    NvMinus,
    NvZero,
}

impl ChargeState {
    pub fn default_lifetime_ns(self) -> f64 {
        match self {
            ChargeState::NvMinus => 12.0,
            ChargeState::NvZero => 21.0,
        }
    }

    pub fn zpl_wavelength_nm(self) -> f64 {
        match self {
            ChargeState::NvMinus => 638.0,
            ChargeState::NvZero => 575.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterSpec {
    /// µm; z = 0 is the coverslip surface.
    pub position: [f64; 3],
    pub charge_state: ChargeState,
    pub lifetime_ns: f64,
    /// Photon output rate (counts/s) in the limit of infinite pump.
    pub saturation_rate: f64,
    pub zpl_wavelength_nm: f64,
    pub sideband_center_nm: f64,
    /// Full width at half maximum of the sideband (nm).
    pub sideband_width_nm: f64,
    pub zpl_weight: f64,
    /// Index of the host diamond within the sample.
    #[serde(default)]
    pub diamond: usize,
}

impl EmitterSpec {
    pub const DEFAULT_SATURATION_RATE: f64 = 150e3;
    pub const DEFAULT_ZPL_WEIGHT: f64 = 0.04;
    pub const DEFAULT_SIDEBAND_CENTER_NM: f64 = 690.0;
    pub const DEFAULT_SIDEBAND_WIDTH_NM: f64 = 45.0;

    pub fn new(charge_state: ChargeState, position: [f64; 3]) -> Self {
        EmitterSpec {
            position,
            charge_state,
            lifetime_ns: charge_state.default_lifetime_ns(),
            saturation_rate: Self::DEFAULT_SATURATION_RATE,
            zpl_wavelength_nm: charge_state.zpl_wavelength_nm(),
            sideband_center_nm: Self::DEFAULT_SIDEBAND_CENTER_NM,
            sideband_width_nm: Self::DEFAULT_SIDEBAND_WIDTH_NM,
            zpl_weight: Self::DEFAULT_ZPL_WEIGHT,
            diamond: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lifetime_ns > 0.0 && self.lifetime_ns.is_finite()) {
            return Err(Error::validation("lifetime_ns", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.zpl_weight) {
            return Err(Error::validation("zpl_weight", "must lie in [0, 1]"));
        }
        if !(self.sideband_width_nm > 0.0) {
            return Err(Error::validation("sideband_width_nm", "must be positive"));
        }
        if !(self.saturation_rate >= 0.0) || self.photon_yield() > 1.0 {
            return Err(Error::validation(
                "saturation_rate",
                "must be non-negative and not exceed 1/lifetime",
            ));
        }
        Ok(())
    }

    /// Radiative decay rate (1/s).
    pub fn decay_rate(&self) -> f64 {
        1e9 / self.lifetime_ns
    }

    /// Fraction of excitation cycles that yield an output photon.
    pub fn photon_yield(&self) -> f64 {
        self.saturation_rate * self.lifetime_ns * 1e-9
    }

    /// Standard deviation of the sideband Gaussian (nm).
    pub fn sideband_sigma_nm(&self) -> f64 {
        self.sideband_width_nm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    /// Mean renewal-cycle rate `k_exc·k_dec/(k_exc + k_dec)` (1/s).
    pub fn cycle_rate(&self, excitation_rate: f64) -> f64 {
        let k_dec = self.decay_rate();
        if excitation_rate <= 0.0 {
            return 0.0;
        }
        excitation_rate * k_dec / (excitation_rate + k_dec)
    }

    /// Output photon rate (1/s); tends to `saturation_rate` at infinite pump.
    pub fn emission_rate(&self, excitation_rate: f64) -> f64 {
        self.photon_yield() * self.cycle_rate(excitation_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Lower-left corner of the field (µm).
    #[serde(default)]
    pub field_origin: [f64; 2],
    pub field_size: [f64; 2],
    /// Diamonds per 100 µm².
    pub target_density: f64,
    pub min_spacing: f64,
    pub fraction_single: f64,
    /// Fraction of NV centers in the negative charge state.
    pub charge_state_mix: f64,
    pub rng_seed: u64,
    #[serde(default = "default_saturation_rate")]
    pub saturation_rate: f64,
}

fn default_saturation_rate() -> f64 {
    EmitterSpec::DEFAULT_SATURATION_RATE
}

impl Default for SampleSpec {
    /// 12 diamonds on a 20 × 20 µm field, spaced by twice the low-cost waist.
    fn default() -> Self {
        SampleSpec {
            field_origin: [0.0, 0.0],
            field_size: [20.0, 20.0],
            target_density: 3.0,
            min_spacing: 3.32,
            fraction_single: 1.0,
            charge_state_mix: 1.0,
            rng_seed: 42,
            saturation_rate: EmitterSpec::DEFAULT_SATURATION_RATE,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.field_size;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::validation("field_size", "both extents must be positive"));
        }
        if !(self.min_spacing >= 0.0) || self.min_spacing >= w.min(h) / 2.0 {
            return Err(Error::validation(
                "min_spacing",
                "must be non-negative and below half the shorter field edge",
            ));
        }
        if !(self.target_density >= 0.0 && self.target_density.is_finite()) {
            return Err(Error::validation("target_density", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.fraction_single) {
            return Err(Error::validation("fraction_single", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.charge_state_mix) {
            return Err(Error::validation("charge_state_mix", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.field_size[0] * self.field_size[1]
    }

    /// Number of diamonds the target density asks for.
    pub fn requested_diamonds(&self) -> usize {
        (self.target_density * self.area() / 100.0).round() as usize
    }

    /// Whether an XY point lies inside the field.
    pub fn contains(&self, xy: [f64; 2]) -> bool {
        (0..2).all(|i| {
            xy[i] >= self.field_origin[i] && xy[i] <= self.field_origin[i] + self.field_size[i]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleField {
    pub schema: String,
    pub emitters: Vec<EmitterSpec>,
    pub spec: SampleSpec,
    pub diamond_count: usize,
    /// Diamonds per 100 µm² actually placed.
    pub achieved_density: f64,
}

impl SampleField {
    /// Field holding exactly the given emitters (test scenarios, hand-built samples).
    pub fn from_emitters(spec: SampleSpec, emitters: Vec<EmitterSpec>) -> Self {
        let diamond_count = emitters
            .iter()
            .map(|e| e.diamond + 1)
            .max()
            .unwrap_or(0);
        let achieved_density = diamond_count as f64 * 100.0 / spec.area();
        SampleField {
            schema: SAMPLE_SCHEMA.to_string(),
            emitters,
            spec,
            diamond_count,
            achieved_density,
        }
    }

    /// One position per diamond.
    pub fn diamond_positions(&self) -> Vec<[f64; 3]> {
        let mut out: Vec<Option<[f64; 3]>> = vec![None; self.diamond_count];
        for e in &self.emitters {
            if e.diamond < out.len() && out[e.diamond].is_none() {
                out[e.diamond] = Some(e.position);
            }
        }
        out.into_iter().flatten().collect()
    }

    /// Multiply every emitter's brightness (demo scaling).
    pub fn scale_brightness(&mut self, factor: f64) {
        for e in &mut self.emitters {
            e.saturation_rate *= factor;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let field: SampleField = serde_json::from_str(text)?;
        if field.schema != SAMPLE_SCHEMA {
            return Err(Error::Format(format!(
                "unsupported sample schema {:?}, expected {SAMPLE_SCHEMA:?}",
                field.schema
            )));
        }
        for e in &field.emitters {
            e.validate()?;
        }
        Ok(field)
    }
}

/// Dart-throw diamonds onto the field with a hard minimum spacing.
///
/// A placement that fails [`PLACEMENT_RETRY_BUDGET`] times stops the fill.
/// The result is accepted when at least 70% of the requested diamonds were
/// placed (the achieved density is reported), otherwise the spec is
/// rejected as infeasible.
pub fn generate_sample(spec: &SampleSpec) -> Result<SampleField> {
    spec.validate()?;
    let mut rng = crate::rng::stream_rng(spec.rng_seed, crate::rng::stream::SAMPLE);
    let requested = spec.requested_diamonds();
    let min_sq = spec.min_spacing * spec.min_spacing;

    let mut diamonds: Vec<[f64; 2]> = Vec::with_capacity(requested);
    let mut attempts = 0usize;
    'fill: for _ in 0..requested {
        for _ in 0..PLACEMENT_RETRY_BUDGET {
            attempts += 1;
            let p = [
                spec.field_origin[0] + rng.random::<f64>() * spec.field_size[0],
                spec.field_origin[1] + rng.random::<f64>() * spec.field_size[1],
            ];
            let clear = diamonds.iter().all(|q| {
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                dx * dx + dy * dy >= min_sq
            });
            if clear {
                diamonds.push(p);
                continue 'fill;
            }
        }
        break;
    }

    if (diamonds.len() as f64) < 0.7 * requested as f64 {
        return Err(Error::Infeasible {
            placed: diamonds.len(),
            requested,
            attempts,
        });
    }

    let mut emitters = Vec::new();
    for (index, p) in diamonds.iter().enumerate() {
        let count = if rng.random::<f64>() < spec.fraction_single {
            1
        } else {
            rng.random_range(2..=3)
        };
        for _ in 0..count {
            let state = if rng.random::<f64>() < spec.charge_state_mix {
                ChargeState::NvMinus
            } else {
                ChargeState::NvZero
            };
            let mut e = EmitterSpec::new(state, [p[0], p[1], 0.0]);
            e.saturation_rate = spec.saturation_rate;
            e.diamond = index;
            emitters.push(e);
        }
    }

    let diamond_count = diamonds.len();
    Ok(SampleField {
        schema: SAMPLE_SCHEMA.to_string(),
        emitters,
        spec: spec.clone(),
        diamond_count,
        achieved_density: diamond_count as f64 * 100.0 / spec.area(),
    })
}

/// One renewal cycle: re-excitation wait plus radiative decay (ns).
///
/// Returns `f64::INFINITY` when the emitter is not pumped.
pub fn next_emission_interval(emitter: &EmitterSpec, excitation_rate: f64, rng: &mut SimRng) -> f64 {
    if excitation_rate <= 0.0 {
        return f64::INFINITY;
    }
    let excite = Exp::new(excitation_rate * 1e-9).expect("positive rate");
    let decay = Exp::new(1.0 / emitter.lifetime_ns).expect("positive lifetime");
    excite.sample(rng) + decay.sample(rng)
}

/// Draw an emission wavelength (nm) from the ZPL + phonon-sideband mixture.
pub fn sample_wavelength(emitter: &EmitterSpec, rng: &mut SimRng) -> f64 {
    if rng.random::<f64>() < emitter.zpl_weight {
        let line = Normal::new(0.0, ZPL_SIGMA_NM).expect("finite line");
        loop {
            let d: f64 = line.sample(rng);
            if d.abs() <= 4.0 * ZPL_SIGMA_NM {
                return emitter.zpl_wavelength_nm + d;
            }
        }
    }
    let band = Normal::new(emitter.sideband_center_nm, emitter.sideband_sigma_nm())
        .expect("positive sideband width");
    loop {
        let w = band.sample(rng);
        if (SPECTRUM_MIN_NM..=SPECTRUM_MAX_NM).contains(&w) {
            return w;
        }
    }
}

/// Stationary photon stream of one emitter after independent thinning.
///
/// Thinning the renewal cycles with keep probability `p` leaves the
/// normalized g² unchanged. The gap between kept photons is the sum of a
/// geometric number `N` of cycles, i.e. `Gamma(N, 1/k_exc) + Gamma(N, 1/k_dec)`,
/// so each kept photon costs O(1) draws regardless of `p`.
#[derive(Debug, Clone)]
pub struct PhotonSource {
    excitation_rate: f64,
    decay_rate: f64,
    keep_probability: f64,
    /// Absolute time of the next kept photon (ps).
    next_ps: f64,
}

impl PhotonSource {
    pub fn new(emitter: &EmitterSpec, excitation_rate: f64, keep_probability: f64, start_ps: f64, rng: &mut SimRng) -> Self {
        let mut source = PhotonSource {
            excitation_rate,
            decay_rate: emitter.decay_rate(),
            keep_probability: keep_probability.clamp(0.0, 1.0),
            next_ps: start_ps,
        };
        source.next_ps = start_ps + source.gap_ps(rng);
        source
    }

    /// Mean rate of kept photons (1/s).
    pub fn rate(&self) -> f64 {
        if self.excitation_rate <= 0.0 {
            return 0.0;
        }
        self.keep_probability * self.excitation_rate * self.decay_rate
            / (self.excitation_rate + self.decay_rate)
    }

    /// Change rates from now on; the pending photon keeps its time.
    pub fn retune(&mut self, excitation_rate: f64, keep_probability: f64) {
        self.excitation_rate = excitation_rate;
        self.keep_probability = keep_probability.clamp(0.0, 1.0);
    }

    fn gap_ps(&self, rng: &mut SimRng) -> f64 {
        if self.excitation_rate <= 0.0 || self.keep_probability <= 0.0 {
            return f64::INFINITY;
        }
        let cycles = if self.keep_probability >= 1.0 {
            1
        } else {
            Geometric::new(self.keep_probability)
                .expect("probability in (0, 1)")
                .sample(rng)
                + 1
        };
        let exc_scale = 1e12 / self.excitation_rate;
        let dec_scale = 1e12 / self.decay_rate;
        if cycles == 1 {
            let u: f64 = rand_distr::Exp1.sample(rng);
            let v: f64 = rand_distr::Exp1.sample(rng);
            u * exc_scale + v * dec_scale
        } else {
            let n = cycles as f64;
            Gamma::new(n, exc_scale).expect("valid gamma").sample(rng)
                + Gamma::new(n, dec_scale).expect("valid gamma").sample(rng)
        }
    }

    /// Append every photon before `end_ps` to `out`.
    pub fn emit_until(&mut self, end_ps: f64, out: &mut Vec<f64>, rng: &mut SimRng) {
        while self.next_ps < end_ps {
            out.push(self.next_ps);
            self.next_ps += self.gap_ps(rng);
        }
    }

    /// Restart a source that was dark at `start_ps`.
    pub fn wake(&mut self, start_ps: f64, rng: &mut SimRng) {
        if self.next_ps.is_infinite() {
            self.restart(start_ps, rng);
        }
    }

    /// Discard the pending photon and draw a fresh gap from `start_ps`.
    pub fn restart(&mut self, start_ps: f64, rng: &mut SimRng) {
        self.next_ps = start_ps + self.gap_ps(rng);
    }
}

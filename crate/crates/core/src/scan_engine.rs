//! Acquisition: raster scans on the Poisson fast path, per-photon HBT runs,
//! and z-focus search. A [`Session`] owns the sample, actuator and RNG
//! bookkeeping of one virtual instrument.

use crate::actuation::{advance_drift_in_place, ActuatorState, Quantized};
use crate::analysis::{find_spots_grid, GridView, Spot, SpotConfig};
use crate::correlator::{normalize, Accumulator, CorrelationHistogram, HistogramSpec};
use crate::detection::{split_hbt, SpadChannel, TagStream};
use crate::emitter_sample::{PhotonSource, SampleField};
use crate::error::{Error, Result};
use crate::profile::InstrumentProfile;
use crate::rng::{indexed_rng, stream, SimRng};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};

pub const SCAN_SCHEMA: &str = "photonbench.scan/1";

/// Emitters whose excitation falls below this fraction of the peak are
/// left out of a pixel's rate sum.
const NEGLIGIBLE_EXCITATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// µm, x and y
    pub extent: [f64; 2],
    /// Pixels along x and y.
    pub resolution: [usize; 2],
    pub integration_time_ms: f64,
    pub laser_power_mw: f64,
    /// Focus position (µm).
    pub z_offset: f64,
    /// Scan center in sample coordinates (µm).
    pub center: [f64; 2],
    /// Overrides the session seed for this scan.
    pub rng_seed: Option<u64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            extent: [20.0, 20.0],
            resolution: [100, 100],
            integration_time_ms: 40.0,
            laser_power_mw: 10.0,
            z_offset: 0.0,
            center: [10.0, 10.0],
            rng_seed: None,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution[0] < 2 || self.resolution[1] < 2 {
            return Err(Error::validation("resolution", "must be at least 2×2"));
        }
        if self.resolution[0] * self.resolution[1] > 4_000_000 {
            return Err(Error::validation("resolution", "at most 4 megapixels"));
        }
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) || !self.extent.iter().all(|e| e.is_finite()) {
            return Err(Error::validation("extent", "must be positive"));
        }
        if !(self.integration_time_ms > 0.0) || !self.integration_time_ms.is_finite() {
            return Err(Error::validation("integration_time_ms", "must be positive"));
        }
        if !(self.laser_power_mw >= 0.0) || !self.laser_power_mw.is_finite() {
            return Err(Error::validation("laser_power_mw", "must be non-negative"));
        }
        if !self.z_offset.is_finite() || !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::validation("center", "must be finite"));
        }
        Ok(())
    }

    pub fn pixel_pitch(&self) -> [f64; 2] {
        [
            self.extent[0] / self.resolution[0] as f64,
            self.extent[1] / self.resolution[1] as f64,
        ]
    }

    /// Sample position of pixel (0, 0).
    pub fn origin(&self) -> [f64; 2] {
        [
            self.center[0] - self.extent[0] / 2.0,
            self.center[1] - self.extent[1] / 2.0,
        ]
    }

    /// Sample position (µm) of pixel `(col, row)`.
    pub fn pixel_position(&self, col: usize, row: usize) -> [f64; 2] {
        let o = self.origin();
        let p = self.pixel_pitch();
        [o[0] + col as f64 * p[0], o[1] + row as f64 * p[1]]
    }

    pub fn pixel_count(&self) -> usize {
        self.resolution[0] * self.resolution[1]
    }

    /// Planned dwell over all pixels (s).
    pub fn total_dwell_s(&self) -> f64 {
        self.pixel_count() as f64 * self.integration_time_ms * 1e-3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterPoint {
    pub col: usize,
    pub row: usize,
    /// Intended sample position (µm).
    pub target: [f64; 2],
    pub command: [Quantized<f64>; 2],
}

/// Row-major raster, left to right on every row.
pub fn plan_raster(config: &ScanConfig, actuator: &ActuatorState<f64>) -> Result<Vec<RasterPoint>> {
    config.validate()?;
    let names = ["x", "y"];
    let window = actuator.planned_window();
    let first = config.pixel_position(0, 0);
    let last = config.pixel_position(config.resolution[0] - 1, config.resolution[1] - 1);
    for i in 0..2 {
        if first[i] < window[i].0 || last[i] > window[i].1 {
            return Err(Error::range(
                names[i],
                format!(
                    "scan span [{:.3}, {:.3}] µm exceeds the reachable window [{:.3}, {:.3}] µm",
                    first[i], last[i], window[i].0, window[i].1
                ),
            ));
        }
    }
    let mut plan = Vec::with_capacity(config.pixel_count());
    for row in 0..config.resolution[1] {
        for col in 0..config.resolution[0] {
            let target = config.pixel_position(col, row);
            let command = actuator.command_for(target)?;
            plan.push(RasterPoint { col, row, target, command });
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSample {
    pub row: usize,
    /// Session clock (s).
    pub time_s: f64,
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanImage {
    pub schema: String,
    /// Row-major counts, `resolution[1]` rows of `resolution[0]` pixels.
    pub counts: Vec<u64>,
    pub config: ScanConfig,
    pub profile: String,
    pub pixel_pitch: [f64; 2],
    /// Sample position of pixel (0, 0).
    pub origin: [f64; 2],
    /// Session clock at the start of the scan (s, simulated).
    pub started_at: f64,
    /// Simulated acquisition time (s).
    pub wall_duration: f64,
    pub drift_log: Vec<DriftSample>,
    pub rows_completed: usize,
    pub incomplete: bool,
}

impl ScanImage {
    pub fn cols(&self) -> usize {
        self.config.resolution[0]
    }

    pub fn rows(&self) -> usize {
        self.config.resolution[1]
    }

    pub fn at(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.counts[row * self.cols()..(row + 1) * self.cols()]
    }

    /// Sample position (µm) of a pixel.
    pub fn pixel_position(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + col as f64 * self.pixel_pitch[0],
            self.origin[1] + row as f64 * self.pixel_pitch[1],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCAN_SCHEMA {
            return Err(Error::Format(format!("unsupported scan schema {:?}", self.schema)));
        }
        if self.counts.len() != self.config.pixel_count() {
            return Err(Error::Format(format!(
                "scan has {} pixels, resolution says {}",
                self.counts.len(),
                self.config.pixel_count()
            )));
        }
        Ok(())
    }
}

/// Bright spots in a scan image, positions in sample coordinates.
pub fn find_spots(img: &ScanImage, min_snr: f64) -> Vec<Spot<f64>> {
    let values: Vec<f64> = img.counts.iter().map(|&c| c as f64).collect();
    let grid = GridView {
        values: &values,
        cols: img.cols(),
        rows: img.rows(),
        origin: img.origin,
        pitch: img.pixel_pitch,
    };
    let config = SpotConfig {
        min_snr,
        ..SpotConfig::default()
    };
    find_spots_grid(&grid, &config)
}

/// Expected-rate model of the fast path with per-emitter collection cached.
#[derive(Debug, Clone)]
pub struct PixelModel<'a> {
    profile: &'a InstrumentProfile,
    sample: &'a SampleField,
    collection: Vec<f64>,
    power_mw: f64,
    focus_z: f64,
    background: f64,
}

impl<'a> PixelModel<'a> {
    pub fn new(profile: &'a InstrumentProfile, sample: &'a SampleField, power_mw: f64, focus_z: f64) -> Result<Self> {
        let collection = sample
            .emitters
            .iter()
            .map(|e| Ok(profile.collection(e, focus_z)? * e.photon_yield()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(PixelModel {
            profile,
            sample,
            collection,
            power_mw,
            focus_z,
            background: profile.background_incident_rate(power_mw)?,
        })
    }

    /// Emitter photons per second arriving at the beamsplitter.
    pub fn signal_incident_rate(&self, beam_xy: [f64; 2]) -> f64 {
        let peak = self.profile.excitation_per_mw * self.power_mw;
        self.sample
            .emitters
            .iter()
            .zip(&self.collection)
            .map(|(e, &c)| {
                let k = self.profile.excitation_rate(e, beam_xy, self.power_mw, self.focus_z);
                if k <= NEGLIGIBLE_EXCITATION * peak {
                    0.0
                } else {
                    e.cycle_rate(k) * c
                }
            })
            .sum()
    }

    /// Photons per second arriving at the beamsplitter, signal plus autofluorescence.
    pub fn incident_rate(&self, beam_xy: [f64; 2]) -> f64 {
        self.signal_incident_rate(beam_xy) + self.background
    }

    /// Expected detection rate summed over both detectors (1/s).
    pub fn detected_rate(&self, beam_xy: [f64; 2]) -> f64 {
        self.profile.detected_rate(self.incident_rate(beam_xy))
    }
}

/// Counts over `dwell_ms` with the beam at `beam_xy`.
pub fn acquire_pixel(model: &PixelModel<'_>, beam_xy: [f64; 2], dwell_ms: f64, rng: &mut SimRng) -> u64 {
    let mean = model.detected_rate(beam_xy) * dwell_ms * 1e-3;
    if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum Activity {
    Idle,
    Scanning,
    Hbt,
    Focusing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub profile: InstrumentProfile,
    pub sample: SampleField,
    pub actuator: ActuatorState<f64>,
    pub seed: u64,
    /// Current focus position (µm).
    pub focus_z: f64,
    pub activity: Activity,
    /// Number of acquisitions started, used to derive fresh RNG sub-streams.
    pub acquisitions: u64,
}

impl Session {
    pub fn new(id: impl Into<String>, profile: InstrumentProfile, sample: SampleField, seed: u64) -> Result<Self> {
        profile.validate()?;
        let actuator = profile.actuator.clone();
        Ok(Session {
            id: id.into(),
            profile,
            sample,
            actuator,
            seed,
            focus_z: 0.0,
            activity: Activity::Idle,
            acquisitions: 0,
        })
    }

    /// Session clock (s), advanced by every acquisition.
    pub fn clock(&self) -> f64 {
        self.actuator.elapsed
    }

    /// Mark the session busy; fails if another acquisition is active.
    pub fn begin(&mut self, activity: Activity) -> Result<()> {
        if self.activity != Activity::Idle {
            return Err(Error::Busy(format!("session {} is busy ({:?})", self.id, self.activity)));
        }
        self.activity = activity;
        Ok(())
    }

    pub fn end(&mut self) {
        self.activity = Activity::Idle;
    }

    fn next_rngs(&mut self, seed_override: Option<u64>, streams: &[u64]) -> Vec<SimRng> {
        let index = self.acquisitions;
        self.acquisitions += 1;
        let (seed, index) = match seed_override {
            Some(s) => (s, 0),
            None => (self.seed, index),
        };
        streams.iter().map(|&s| indexed_rng(seed, s, index)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanProgress {
    pub row: usize,
    pub rows_total: usize,
    pub row_counts: Vec<u64>,
}

/// Raster-scan the session's sample. Cancellation is honored between pixels
/// and yields a partial image flagged `incomplete`.
pub fn run_scan(
    session: &mut Session,
    config: &ScanConfig,
    cancel: &AtomicBool,
    mut progress: impl FnMut(&ScanProgress),
) -> Result<ScanImage> {
    let plan = plan_raster(config, &session.actuator)?;
    session.begin(Activity::Scanning)?;
    let result = scan_inner(session, config, &plan, cancel, &mut progress);
    session.end();
    result
}

fn scan_inner(
    session: &mut Session,
    config: &ScanConfig,
    plan: &[RasterPoint],
    cancel: &AtomicBool,
    progress: &mut dyn FnMut(&ScanProgress),
) -> Result<ScanImage> {
    let mut rngs = session.next_rngs(config.rng_seed, &[stream::SCAN, stream::DRIFT]);
    let mut drift_rng = rngs.pop().expect("two streams");
    let mut count_rng = rngs.pop().expect("two streams");
    let started_at = session.clock();
    let dwell_s = config.integration_time_ms * 1e-3;
    let cols = config.resolution[0];
    let rows = config.resolution[1];
    let mut counts = vec![0u64; plan.len()];
    let mut drift_log = Vec::with_capacity(rows);
    let mut rows_completed = 0;
    let mut incomplete = false;

    let Session {
        profile,
        sample,
        actuator,
        ..
    } = session;
    let model = PixelModel::new(profile, sample, config.laser_power_mw, config.z_offset)?;

    'rows: for row in 0..rows {
        drift_log.push(DriftSample {
            row,
            time_s: actuator.elapsed,
            offset: actuator.drift_offset,
        });
        for col in 0..cols {
            if cancel.load(Ordering::Relaxed) {
                incomplete = true;
                break 'rows;
            }
            let point = &plan[row * cols + col];
            let beam = actuator.beam_position([point.command[0].volts, point.command[1].volts])?;
            counts[row * cols + col] = acquire_pixel(&model, beam, config.integration_time_ms, &mut count_rng);
            advance_drift_in_place(actuator, dwell_s, &mut drift_rng)?;
        }
        rows_completed = row + 1;
        progress(&ScanProgress {
            row,
            rows_total: rows,
            row_counts: counts[row * cols..(row + 1) * cols].to_vec(),
        });
    }

    Ok(ScanImage {
        schema: SCAN_SCHEMA.into(),
        counts,
        config: config.clone(),
        profile: profile.name.clone(),
        pixel_pitch: config.pixel_pitch(),
        origin: config.origin(),
        started_at,
        wall_duration: actuator.elapsed - started_at,
        drift_log,
        rows_completed,
        incomplete,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HbtConfig {
    /// Sample position (µm) to park the beam on.
    pub position: [f64; 2],
    /// Simulated acquisition time (s).
    pub duration_s: f64,
    pub spec: HistogramSpec,
    /// Defaults to the profile's reference power.
    pub laser_power_mw: Option<f64>,
    /// Simulated time per chunk (s), at most 1.
    pub chunk_s: f64,
    pub rng_seed: Option<u64>,
    /// Keep both channels' tags in the result for export.
    pub keep_tags: bool,
}

impl Default for HbtConfig {
    fn default() -> Self {
        HbtConfig {
            position: [10.0, 10.0],
            duration_s: 60.0,
            spec: HistogramSpec::default(),
            laser_power_mw: None,
            chunk_s: 1.0,
            rng_seed: None,
            keep_tags: false,
        }
    }
}

impl HbtConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::validation("duration_s", "must be positive"));
        }
        // tags are u64 picoseconds; keep well inside that
        if self.duration_s > 1e6 {
            return Err(Error::validation("duration_s", "at most 10⁶ s"));
        }
        if !(self.chunk_s > 0.0 && self.chunk_s <= 1.0) {
            return Err(Error::validation("chunk_s", "must lie in (0, 1] s"));
        }
        if let Some(p) = self.laser_power_mw {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::validation("laser_power_mw", "must be non-negative"));
            }
        }
        if !self.position.iter().all(|p| p.is_finite()) {
            return Err(Error::validation("position", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbtProgress {
    pub elapsed_s: f64,
    pub duration_s: f64,
    pub histogram: CorrelationHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbtResult {
    pub histogram: CorrelationHistogram,
    pub position: [f64; 2],
    pub requested_duration_s: f64,
    pub achieved_duration_s: f64,
    pub incomplete: bool,
    pub drift_log: Vec<DriftSample>,
    /// Channel A and B tags, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<[TagStream; 2]>,
}

struct HbtSources {
    sources: Vec<PhotonSource>,
    collection: Vec<f64>,
}

/// Per-photon HBT acquisition with the beam parked at `config.position`.
///
/// Every emitter is simulated as a thinned renewal stream weighted by its
/// local excitation. Autofluorescence joins as Poisson light before the
/// beamsplitter; each detector adds its own darks, jitter and dead time.
/// Drift advances once per chunk and the excitation rates follow it.
pub fn run_hbt(
    session: &mut Session,
    config: &HbtConfig,
    cancel: &AtomicBool,
    mut progress: impl FnMut(&HbtProgress),
) -> Result<HbtResult> {
    config.validate()?;
    let command = session.actuator.command_for(config.position)?;
    session.begin(Activity::Hbt)?;
    let result = hbt_inner(session, config, command, cancel, &mut progress);
    session.end();
    result
}

fn hbt_inner(
    session: &mut Session,
    config: &HbtConfig,
    command: [Quantized<f64>; 2],
    cancel: &AtomicBool,
    progress: &mut dyn FnMut(&HbtProgress),
) -> Result<HbtResult> {
    let streams = [
        stream::HBT_SOURCE,
        stream::HBT_SPLIT,
        stream::DETECTOR_A,
        stream::DETECTOR_B,
        stream::DRIFT,
    ];
    let mut rngs = session.next_rngs(config.rng_seed, &streams).into_iter();
    let mut source_rng = rngs.next().expect("stream");
    let mut split_rng = rngs.next().expect("stream");
    let mut rng_a = rngs.next().expect("stream");
    let mut rng_b = rngs.next().expect("stream");
    let mut drift_rng = rngs.next().expect("stream");

    let Session {
        profile,
        sample,
        actuator,
        focus_z,
        ..
    } = session;
    let power = config.laser_power_mw.unwrap_or(profile.beam.power_mw);
    let focus_z = *focus_z;
    let volts = [command[0].volts, command[1].volts];
    let mut det_a = SpadChannel::new(profile.spad_a.clone(), 0)?;
    let mut det_b = SpadChannel::new(profile.spad_b.clone(), 1)?;
    let mut acc = Accumulator::new(config.spec)?;
    let background = profile.background_incident_rate(power)?;

    let duration_ps = (config.duration_s * 1e12).round() as u64;
    let chunk_ps = config.chunk_s * 1e12;
    let mut hbt = HbtSources {
        sources: Vec::with_capacity(sample.emitters.len()),
        collection: Vec::with_capacity(sample.emitters.len()),
    };
    let beam0 = actuator.beam_position(volts)?;
    for e in &sample.emitters {
        let keep = profile.collection(e, focus_z)? * e.photon_yield();
        let k = profile.excitation_rate(e, beam0, power, focus_z);
        hbt.collection.push(keep);
        hbt.sources.push(PhotonSource::new(e, k, keep, 0.0, &mut source_rng));
    }

    let mut drift_log = Vec::new();
    let mut photons: Vec<f64> = Vec::new();
    let mut t0 = 0.0f64;
    let mut incomplete = false;
    let mut chunk_index = 0usize;
    let mut kept: Option<[Vec<u64>; 2]> = config.keep_tags.then(Default::default);
    while t0 < duration_ps as f64 {
        if cancel.load(Ordering::Relaxed) {
            incomplete = true;
            break;
        }
        let t1 = (t0 + chunk_ps).min(duration_ps as f64);
        let beam = actuator.beam_position(volts)?;
        drift_log.push(DriftSample {
            row: chunk_index,
            time_s: actuator.elapsed,
            offset: actuator.drift_offset,
        });
        photons.clear();
        for ((source, e), &keep) in hbt.sources.iter_mut().zip(&sample.emitters).zip(&hbt.collection) {
            let before = source.rate();
            let k = profile.excitation_rate(e, beam, power, focus_z);
            source.retune(k, keep);
            let after = source.rate();
            // a pending photon drawn under a very different rate would bias the next chunk
            if after > 0.0 && (before <= 0.0 || after > 2.0 * before || after < 0.5 * before) {
                source.restart(t0, &mut source_rng);
            }
            source.emit_until(t1, &mut photons, &mut source_rng);
        }
        let mean_bg = background * (t1 - t0) * 1e-12;
        if mean_bg > 0.0 {
            let n = Poisson::new(mean_bg).expect("positive mean").sample(&mut source_rng) as usize;
            photons.extend((0..n).map(|_| t0 + source_rng.random::<f64>() * (t1 - t0)));
        }
        photons.sort_by(f64::total_cmp);
        let (arm_a, arm_b) = split_hbt(&photons, &mut split_rng);

        let last = t1 >= duration_ps as f64;
        let (mut tags_a, mut tags_b) = rayon::join(
            || det_a.process(&arm_a, t0, t1, &mut rng_a),
            || det_b.process(&arm_b, t0, t1, &mut rng_b),
        );
        if last {
            tags_a.extend(det_a.finish(duration_ps));
            tags_b.extend(det_b.finish(duration_ps));
            acc.accumulate(&tags_a, &tags_b)?;
        } else {
            let guard = t1 - det_a.guard_ps().max(det_b.guard_ps());
            acc.accumulate_until(&tags_a, &tags_b, guard.max(0.0).floor() as u64)?;
        }
        if let Some([a, b]) = kept.as_mut() {
            a.extend_from_slice(&tags_a);
            b.extend_from_slice(&tags_b);
        }

        let dt = (t1 - t0) * 1e-12;
        advance_drift_in_place(actuator, dt, &mut drift_rng)?;
        t0 = t1;
        chunk_index += 1;
        progress(&HbtProgress {
            elapsed_s: t0 * 1e-12,
            duration_s: config.duration_s,
            histogram: acc.snapshot(t0 as u64),
        });
    }

    let achieved = if incomplete { t0 as u64 } else { duration_ps };
    if incomplete {
        // tags held back for jitter reordering still belong to the run
        let tail_a = det_a.finish(achieved);
        let tail_b = det_b.finish(achieved);
        acc.accumulate(&tail_a, &tail_b)?;
        if let Some([a, b]) = kept.as_mut() {
            a.extend_from_slice(&tail_a);
            b.extend_from_slice(&tail_b);
        }
    }
    let raw = acc.finalize(achieved);
    let histogram = normalize(&raw).unwrap_or(raw);
    Ok(HbtResult {
        histogram,
        position: config.position,
        requested_duration_s: config.duration_s,
        achieved_duration_s: achieved as f64 * 1e-12,
        incomplete,
        drift_log,
        tags: kept.map(|[a, b]| [TagStream::new(0, a, achieved), TagStream::new(1, b, achieved)]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusPeak {
    pub z: f64,
    /// The maximum sits on the edge of the searched range.
    pub at_boundary: bool,
    /// The parabola was not concave-down, so the best sample was used.
    pub fallback: bool,
}

/// Peak of `signal(z)` from a parabola through the log of the brightest
/// sample and its two neighbors.
pub fn focus_peak(zs: &[f64], signal: &[f64]) -> Result<FocusPeak> {
    if zs.len() != signal.len() || zs.len() < 3 {
        return Err(Error::validation("steps", "need at least 3 samples"));
    }
    if zs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("z_range", "z samples must increase"));
    }
    let best = signal
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > signal[b] { i } else { b });
    if best == 0 || best == zs.len() - 1 {
        return Ok(FocusPeak {
            z: zs[best],
            at_boundary: true,
            fallback: false,
        });
    }
    let ln = |v: f64| v.max(0.5).ln();
    let (x0, x1, x2) = (zs[best - 1], zs[best], zs[best + 1]);
    let (y0, y1, y2) = (ln(signal[best - 1]), ln(signal[best]), ln(signal[best + 1]));
    // second divided difference; negative for a concave-down peak
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curvature = (d12 - d01) / (x2 - x0);
    if !(curvature < 0.0) {
        return Ok(FocusPeak {
            z: x1,
            at_boundary: false,
            fallback: true,
        });
    }
    let vertex = (x0 + x1) / 2.0 - d01 / (2.0 * curvature);
    Ok(FocusPeak {
        z: vertex.clamp(x0, x2),
        at_boundary: false,
        fallback: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusResult {
    pub z: f64,
    pub at_boundary: bool,
    pub fallback: bool,
    pub samples: Vec<(f64, u64)>,
}

/// Sweep the focus over `z_range` around the beam at `position`, then move
/// the session focus to the brightest plane.
pub fn autofocus(
    session: &mut Session,
    position: [f64; 2],
    z_range: (f64, f64),
    steps: usize,
    dwell_ms: f64,
) -> Result<FocusResult> {
    if steps < 3 {
        return Err(Error::validation("steps", "need at least 3 steps"));
    }
    if !(z_range.1 > z_range.0) {
        return Err(Error::validation("z_range", "upper bound must exceed lower bound"));
    }
    if !(dwell_ms > 0.0) {
        return Err(Error::validation("dwell_ms", "must be positive"));
    }
    let command = session.actuator.command_for(position)?;
    session.begin(Activity::Focusing)?;
    let mut rngs = session.next_rngs(None, &[stream::FOCUS, stream::DRIFT]);
    let mut drift_rng = rngs.pop().expect("stream");
    let mut rng = rngs.pop().expect("stream");
    let power = session.profile.beam.power_mw;
    let volts = [command[0].volts, command[1].volts];
    let zs: Vec<f64> = (0..steps)
        .map(|i| z_range.0 + (z_range.1 - z_range.0) * i as f64 / (steps - 1) as f64)
        .collect();
    let mut samples = Vec::with_capacity(steps);
    let outcome = (|| -> Result<()> {
        for &z in &zs {
            let model = PixelModel::new(&session.profile, &session.sample, power, z)?;
            let beam = session.actuator.beam_position(volts)?;
            samples.push((z, acquire_pixel(&model, beam, dwell_ms, &mut rng)));
            advance_drift_in_place(&mut session.actuator, dwell_ms * 1e-3, &mut drift_rng)?;
        }
        Ok(())
    })();
    session.end();
    outcome?;

    let values: Vec<f64> = samples.iter().map(|s| s.1 as f64).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2].min(sorted[0] * 2.0 + 1.0);
    let peak = sorted[sorted.len() - 1];
    if peak - floor <= 5.0 * (floor + 1.0).sqrt() {
        return Err(Error::NoSignal(
            "no focus signal above background; select a bright spot first".into(),
        ));
    }
    let found = focus_peak(&zs, &values)?;
    session.focus_z = found.z;
    Ok(FocusResult {
        z: found.z,
        at_boundary: found.at_boundary,
        fallback: found.fallback,
        samples,
    })
}

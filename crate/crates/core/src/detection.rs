//! HBT beamsplitter, SPAD detectors and time-tagger digitization.

use crate::error::{Error, Result};
use crate::rng::SimRng;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpadSpec {
    pub efficiency: f64,
    pub dead_time_ns: f64,
    pub jitter_sigma_ps: f64,
    /// counts/s
    pub dark_count_rate: f64,
}

impl Default for SpadSpec {
    fn default() -> Self {
        SpadSpec {
            efficiency: 0.6,
            dead_time_ns: 45.0,
            jitter_sigma_ps: 350.0,
            dark_count_rate: 250.0,
        }
    }
}

impl SpadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::validation("efficiency", "must lie in [0, 1]"));
        }
        if !(self.dead_time_ns >= 0.0) {
            return Err(Error::validation("dead_time_ns", "must be non-negative"));
        }
        if !(self.jitter_sigma_ps >= 0.0) {
            return Err(Error::validation("jitter_sigma_ps", "must be non-negative"));
        }
        if !(self.dark_count_rate >= 0.0) {
            return Err(Error::validation("dark_count_rate", "must be non-negative"));
        }
        Ok(())
    }

    fn dead_time_ps(&self) -> f64 {
        self.dead_time_ns * 1e3
    }

    /// Detected rate for an incident photon rate, with non-paralyzable dead time.
    pub fn detected_rate(&self, incident: f64) -> f64 {
        let raw = incident * self.efficiency + self.dark_count_rate;
        raw / (1.0 + raw * self.dead_time_ns * 1e-9)
    }
}

/// Detection timestamps of one channel, integer picoseconds since acquisition start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagStream {
    pub channel: u16,
    pub timestamps: Vec<u64>,
    /// Acquisition span (ps).
    pub duration: u64,
}

impl TagStream {
    pub fn new(channel: u16, timestamps: Vec<u64>, duration: u64) -> Self {
        TagStream {
            channel,
            timestamps,
            duration,
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Non-decreasing and inside `[0, duration]`.
    pub fn validate(&self) -> Result<()> {
        check_ordered(&self.timestamps, &format!("channel {}", self.channel))?;
        if let Some(&last) = self.timestamps.last() {
            if last > self.duration {
                return Err(Error::validation(
                    format!("channel {}", self.channel),
                    format!("timestamp {last} ps beyond duration {} ps", self.duration),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_ordered(tags: &[u64], field: &str) -> Result<()> {
    if let Some(i) = tags.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::validation(
            field,
            format!("timestamps not ordered at index {}: {} < {}", i + 1, tags[i + 1], tags[i]),
        ));
    }
    Ok(())
}

/// Route each photon to arm A or B with probability 1/2.
pub fn split_hbt(photons: &[f64], rng: &mut SimRng) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(photons.len() / 2 + 1);
    let mut b = Vec::with_capacity(photons.len() / 2 + 1);
    for &t in photons {
        if rng.random::<bool>() {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    (a, b)
}

/// Jitter is truncated at this many σ so chunk boundaries can be finalized.
const JITTER_TRUNCATION: f64 = 8.0;

/// Streaming detector channel.
///
/// Photons arrive window by window. Tags that jitter could still reorder
/// against the next window are held back; everything older is released in
/// order after dead-time filtering.
#[derive(Debug, Clone)]
pub struct SpadChannel {
    spec: SpadSpec,
    channel: u16,
    pending: Vec<f64>,
    last_kept: Option<u64>,
    jitter: Option<Normal<f64>>,
}

impl SpadChannel {
    pub fn new(spec: SpadSpec, channel: u16) -> Result<Self> {
        spec.validate()?;
        let jitter = if spec.jitter_sigma_ps > 0.0 {
            Some(Normal::new(0.0, spec.jitter_sigma_ps).expect("finite sigma"))
        } else {
            None
        };
        Ok(SpadChannel {
            spec,
            channel,
            pending: Vec::new(),
            last_kept: None,
            jitter,
        })
    }

    pub fn channel(&self) -> u16 {
        self.channel
    }

    /// Tags later than `end_ps - guard_ps()` may still be reordered by jitter.
    pub fn guard_ps(&self) -> f64 {
        JITTER_TRUNCATION * self.spec.jitter_sigma_ps + 1.0
    }

    /// Feed the photons of `[start_ps, end_ps)` and return tags that are final.
    pub fn process(&mut self, arm: &[f64], start_ps: f64, end_ps: f64, rng: &mut SimRng) -> Vec<u64> {
        let mut events: Vec<f64> = arm
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < self.spec.efficiency)
            .collect();

        let span_s = (end_ps - start_ps).max(0.0) * 1e-12;
        let mean_darks = self.spec.dark_count_rate * span_s;
        if mean_darks > 0.0 {
            let n = Poisson::new(mean_darks).expect("positive mean").sample(rng) as usize;
            events.extend((0..n).map(|_| start_ps + rng.random::<f64>() * (end_ps - start_ps)));
        }
        events.sort_by(f64::total_cmp);

        if let Some(jitter) = &self.jitter {
            let limit = JITTER_TRUNCATION * self.spec.jitter_sigma_ps;
            for t in events.iter_mut() {
                let d = loop {
                    let d = jitter.sample(rng);
                    if d.abs() <= limit {
                        break d;
                    }
                };
                *t += d;
            }
        }
        for t in events.iter_mut() {
            *t = t.round_ties_even().max(0.0);
        }
        events.sort_by(f64::total_cmp);

        let mut merged = Vec::with_capacity(self.pending.len() + events.len());
        merge_sorted(&self.pending, &events, &mut merged);
        let cut = end_ps - self.guard_ps();
        let split = merged.partition_point(|&t| t < cut);
        let released: Vec<f64> = merged.drain(..split).collect();
        self.pending = merged;
        self.apply_dead_time(&released)
    }

    /// Release everything still pending, clamped to `duration_ps`.
    pub fn finish(&mut self, duration_ps: u64) -> Vec<u64> {
        let rest = std::mem::take(&mut self.pending);
        let clamped: Vec<f64> = rest.into_iter().map(|t| t.min(duration_ps as f64)).collect();
        self.apply_dead_time(&clamped)
    }

    fn apply_dead_time(&mut self, sorted: &[f64]) -> Vec<u64> {
        let dead = self.spec.dead_time_ps();
        let mut out = Vec::with_capacity(sorted.len());
        for &t in sorted {
            let t = t as u64;
            match self.last_kept {
                Some(last) if (t - last) as f64 <= dead => {}
                _ => {
                    out.push(t);
                    self.last_kept = Some(t);
                }
            }
        }
        out
    }
}

fn merge_sorted(a: &[f64], b: &[f64], out: &mut Vec<f64>) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Full detector chain for one arm over `[0, duration_ps]`: efficiency
/// thinning, Poisson dark counts, Gaussian jitter, integer rounding (ties to
/// even), non-paralyzable dead time.
pub fn apply_detector(arm: &[f64], spad: &SpadSpec, duration_ps: u64, channel: u16, rng: &mut SimRng) -> Result<TagStream> {
    if arm.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::validation("arm", "photon times must be ordered"));
    }
    let mut det = SpadChannel::new(spad.clone(), channel)?;
    let mut tags = det.process(arm, 0.0, duration_ps as f64, rng);
    tags.extend(det.finish(duration_ps));
    Ok(TagStream::new(channel, tags, duration_ps))
}

//! Start-multistop cross-correlation of two timestamp channels.
//!
//! Delays are `τ = t_b - t_a`. With `n` bins of width `w`, bin `k` covers
//! `[(k - n/2)·w, (k + 1 - n/2)·w)`, so bin `n/2` starts at zero delay.

use crate::detection::{check_ordered, TagStream};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Below this many tags in channel A the correlation runs single-threaded.
const PARALLEL_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width_ps: u64,
    pub bin_count: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            bin_width_ps: 200,
            bin_count: 1000,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bin_width_ps == 0 {
            return Err(Error::validation("bin_width_ps", "must be positive"));
        }
        if self.bin_count < 2 || !self.bin_count.is_multiple_of(2) {
            return Err(Error::validation("bin_count", "must be even and at least 2"));
        }
        if (self.bin_count as u128) * (self.bin_width_ps as u128) > i64::MAX as u128 {
            return Err(Error::validation("bin_count", "window too wide"));
        }
        Ok(())
    }

    /// Half-open delay window `[lo, hi)` in ps.
    pub fn window(&self) -> (i64, i64) {
        let half = (self.bin_count / 2) as i64 * self.bin_width_ps as i64;
        (-half, half)
    }

    pub fn bin_start_ps(&self, k: usize) -> i64 {
        (k as i64 - (self.bin_count / 2) as i64) * self.bin_width_ps as i64
    }

    pub fn bin_center_ps(&self, k: usize) -> f64 {
        self.bin_start_ps(k) as f64 + 0.5 * self.bin_width_ps as f64
    }

    /// Bin holding delay `tau`, if inside the window.
    pub fn bin_of(&self, tau: i64) -> Option<usize> {
        let (lo, hi) = self.window();
        if tau < lo || tau >= hi {
            return None;
        }
        Some(((tau - lo) / self.bin_width_ps as i64) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub spec: HistogramSpec,
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    /// Acquisition span (ps).
    pub duration: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<Vec<f64>>,
}

impl CorrelationHistogram {
    pub fn empty(spec: HistogramSpec) -> Self {
        CorrelationHistogram {
            spec,
            counts: vec![0; spec.bin_count],
            n_a: 0,
            n_b: 0,
            duration: 0,
            normalized: None,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Delay at each bin center (ps).
    pub fn tau_ps(&self) -> Vec<f64> {
        (0..self.spec.bin_count).map(|k| self.spec.bin_center_ps(k)).collect()
    }

    /// `duration/(n_a·n_b·bin_width)`: multiply a count by this to get g².
    pub fn normalization_factor(&self) -> Result<f64> {
        if self.duration == 0 {
            return Err(Error::validation("duration", "must be positive to normalize"));
        }
        if self.n_a == 0 {
            return Err(Error::validation("n_a", "channel A has no counts"));
        }
        if self.n_b == 0 {
            return Err(Error::validation("n_b", "channel B has no counts"));
        }
        Ok(self.duration as f64 / (self.n_a as f64 * self.n_b as f64 * self.spec.bin_width_ps as f64))
    }

    /// Mean g² of the two bins bordering zero delay.
    pub fn raw_g2_zero(&self) -> Option<f64> {
        let g = self.normalized.as_ref()?;
        let mid = self.spec.bin_count / 2;
        Some(0.5 * (g[mid - 1] + g[mid]))
    }
}

fn validate_streams(a: &[u64], b: &[u64], spec: &HistogramSpec) -> Result<()> {
    spec.validate()?;
    check_ordered(a, "a")?;
    check_ordered(b, "b")?;
    for (name, s) in [("a", a), ("b", b)] {
        if s.last().is_some_and(|&t| t > i64::MAX as u64 / 2) {
            return Err(Error::validation(name, "timestamps exceed the supported range"));
        }
    }
    Ok(())
}

/// Two-pointer pass adding every in-window `(a, b)` pair to `counts`.
fn count_pairs(a: &[u64], b: &[u64], spec: &HistogramSpec, counts: &mut [u64]) {
    let (lo, hi) = spec.window();
    let width = spec.bin_width_ps as i64;
    let mut start = 0usize;
    for &ta in a {
        let ta = ta as i64;
        let first = ta + lo;
        while start < b.len() && (b[start] as i64) < first {
            start += 1;
        }
        let end = ta + hi;
        for &tb in &b[start..] {
            let tb = tb as i64;
            if tb >= end {
                break;
            }
            counts[((tb - first) / width) as usize] += 1;
        }
    }
}

fn correlate_slices(a: &[u64], b: &[u64], spec: &HistogramSpec) -> Vec<u64> {
    if a.len() < PARALLEL_THRESHOLD || b.is_empty() {
        let mut counts = vec![0u64; spec.bin_count];
        count_pairs(a, b, spec, &mut counts);
        return counts;
    }
    let (lo, hi) = spec.window();
    let pieces = rayon::current_num_threads().max(1) * 4;
    let piece_len = a.len().div_ceil(pieces);
    a.par_chunks(piece_len)
        .map(|chunk| {
            let mut counts = vec![0u64; spec.bin_count];
            let first = chunk[0] as i64 + lo;
            let last = chunk[chunk.len() - 1] as i64 + hi;
            let from = b.partition_point(|&t| (t as i64) < first);
            let to = b.partition_point(|&t| (t as i64) < last);
            count_pairs(chunk, &b[from..to], spec, &mut counts);
            counts
        })
        .reduce(
            || vec![0u64; spec.bin_count],
            |mut acc, part| {
                acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
                acc
            },
        )
}

/// Cross-correlation histogram of two ordered tag streams.
pub fn correlate(a: &TagStream, b: &TagStream, spec: &HistogramSpec) -> Result<CorrelationHistogram> {
    correlate_tags(&a.timestamps, &b.timestamps, a.duration.max(b.duration), spec)
}

pub fn correlate_tags(a: &[u64], b: &[u64], duration: u64, spec: &HistogramSpec) -> Result<CorrelationHistogram> {
    validate_streams(a, b, spec)?;
    Ok(CorrelationHistogram {
        spec: *spec,
        counts: correlate_slices(a, b, spec),
        n_a: a.len() as u64,
        n_b: b.len() as u64,
        duration,
        normalized: None,
    })
}

/// Reference implementation: literal double loop over all pairs.
pub fn correlate_bruteforce(a: &TagStream, b: &TagStream, spec: &HistogramSpec) -> Result<CorrelationHistogram> {
    spec.validate()?;
    let (lo, hi) = spec.window();
    let mut counts = vec![0u64; spec.bin_count];
    for &ta in &a.timestamps {
        for &tb in &b.timestamps {
            let tau = tb as i128 - ta as i128;
            if tau >= lo as i128 && tau < hi as i128 {
                let k = (tau - lo as i128) / spec.bin_width_ps as i128;
                counts[k as usize] += 1;
            }
        }
    }
    Ok(CorrelationHistogram {
        spec: *spec,
        counts,
        n_a: a.len() as u64,
        n_b: b.len() as u64,
        duration: a.duration.max(b.duration),
        normalized: None,
    })
}

/// Attach `g²[k] = counts[k]·duration/(n_a·n_b·bin_width)`.
pub fn normalize(h: &CorrelationHistogram) -> Result<CorrelationHistogram> {
    let factor = h.normalization_factor()?;
    let mut out = h.clone();
    out.normalized = Some(h.counts.iter().map(|&c| c as f64 * factor).collect());
    Ok(out)
}

/// Incremental correlator for live acquisitions.
///
/// Only tags that can still pair with future arrivals are retained: an A tag
/// is kept while it lies less than one window ahead of channel B's lower
/// bound for future tags, and vice versa. Memory stays proportional to
/// rate × window, independent of acquisition length.
#[derive(Debug, Clone)]
pub struct Accumulator {
    spec: HistogramSpec,
    counts: Vec<u64>,
    n_a: u64,
    n_b: u64,
    retained_a: Vec<u64>,
    retained_b: Vec<u64>,
    floor_a: u64,
    floor_b: u64,
    peak_retained: usize,
}

impl Accumulator {
    pub fn new(spec: HistogramSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Accumulator {
            spec,
            counts: vec![0; spec.bin_count],
            n_a: 0,
            n_b: 0,
            retained_a: Vec::new(),
            retained_b: Vec::new(),
            floor_a: 0,
            floor_b: 0,
            peak_retained: 0,
        })
    }

    pub fn spec(&self) -> &HistogramSpec {
        &self.spec
    }

    /// Append new tags of each channel.
    pub fn accumulate(&mut self, new_a: &[u64], new_b: &[u64]) -> Result<()> {
        self.ingest(new_a, new_b, None)
    }

    /// Append new tags and promise that all later tags are `>= horizon`,
    /// which lets the tail buffers shrink even when a channel is idle.
    pub fn accumulate_until(&mut self, new_a: &[u64], new_b: &[u64], horizon: u64) -> Result<()> {
        self.ingest(new_a, new_b, Some(horizon))
    }

    fn ingest(&mut self, new_a: &[u64], new_b: &[u64], horizon: Option<u64>) -> Result<()> {
        validate_streams(new_a, new_b, &self.spec)?;
        if new_a.first().is_some_and(|&t| t < self.floor_a) {
            return Err(Error::validation("a", "appended tags precede earlier tags"));
        }
        if new_b.first().is_some_and(|&t| t < self.floor_b) {
            return Err(Error::validation("b", "appended tags precede earlier tags"));
        }

        count_pairs(&self.retained_a, new_b, &self.spec, &mut self.counts);
        self.retained_b.extend_from_slice(new_b);
        let tail_start = self.prune_start_b(new_a.first().copied());
        count_pairs(new_a, &self.retained_b[tail_start..], &self.spec, &mut self.counts);
        self.retained_a.extend_from_slice(new_a);
        self.n_a += new_a.len() as u64;
        self.n_b += new_b.len() as u64;

        let h = horizon.unwrap_or(0);
        self.floor_a = self.floor_a.max(new_a.last().copied().unwrap_or(0)).max(h);
        self.floor_b = self.floor_b.max(new_b.last().copied().unwrap_or(0)).max(h);
        self.peak_retained = self.peak_retained.max(self.retained_a.len() + self.retained_b.len());
        self.prune();
        Ok(())
    }

    fn prune_start_b(&self, first_a: Option<u64>) -> usize {
        match first_a {
            Some(t) => {
                let first = t as i64 + self.spec.window().0;
                self.retained_b.partition_point(|&b| (b as i64) < first)
            }
            None => self.retained_b.len(),
        }
    }

    fn prune(&mut self) {
        let (lo, hi) = self.spec.window();
        // A tags pair with future B only if t_a + hi > floor_b
        let floor_b = self.floor_b as i64;
        let drop_a = self.retained_a.partition_point(|&t| t as i64 + hi <= floor_b);
        self.retained_a.drain(..drop_a);
        // B tags pair with future A only if t_b >= floor_a + lo
        let floor_a = self.floor_a as i64;
        let drop_b = self.retained_b.partition_point(|&t| (t as i64) < floor_a + lo);
        self.retained_b.drain(..drop_b);
    }

    pub fn retained_len(&self) -> usize {
        self.retained_a.len() + self.retained_b.len()
    }

    /// Largest tail-buffer size seen, measured before pruning.
    pub fn peak_retained(&self) -> usize {
        self.peak_retained
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Histogram of everything seen so far.
    pub fn snapshot(&self, duration: u64) -> CorrelationHistogram {
        CorrelationHistogram {
            spec: self.spec,
            counts: self.counts.clone(),
            n_a: self.n_a,
            n_b: self.n_b,
            duration,
            normalized: None,
        }
    }

    pub fn finalize(self, duration: u64) -> CorrelationHistogram {
        CorrelationHistogram {
            spec: self.spec,
            counts: self.counts,
            n_a: self.n_a,
            n_b: self.n_b,
            duration,
            normalized: None,
        }
    }
}

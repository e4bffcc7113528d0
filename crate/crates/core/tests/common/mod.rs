#![allow(dead_code)]

use photonbench::correlator::{normalize, CorrelationHistogram, HistogramSpec};
use photonbench::detection::TagStream;
use photonbench::emitter_sample::{ChargeState, EmitterSpec, PhotonSource};
use photonbench::rng::SimRng;

/// Asymptotic Kolmogorov tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against `cdf`; returns `(D, p)`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sqrt_n = n.sqrt();
    // Stephens' small-sample correction
    (d, kolmogorov_tail((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

pub fn exponential_cdf(rate: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| if x <= 0.0 { 0.0 } else { 1.0 - (-rate * x).exp() }
}

/// NV⁻ at the origin whose every cycle yields a photon.
pub fn unit_yield_emitter() -> EmitterSpec {
    let mut e = EmitterSpec::new(ChargeState::NvMinus, [0.0; 3]);
    e.saturation_rate = e.decay_rate();
    e
}

/// Every photon of one emitter until `count` photons were produced.
pub fn raw_photons(emitter: &EmitterSpec, k_exc: f64, keep: f64, count: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut source = PhotonSource::new(emitter, k_exc, keep, 0.0, rng);
    let mut out = Vec::with_capacity(count + 16);
    let mut end = 0.0;
    let step = 1e12 * count as f64 / source.rate() / 20.0;
    while out.len() < count {
        end += step;
        source.emit_until(end, &mut out, rng);
    }
    out.truncate(count);
    out
}

pub fn to_tags(photons: &[f64]) -> Vec<u64> {
    photons.iter().map(|t| t.round_ties_even() as u64).collect()
}

/// Normalized autocorrelation of one stream, self-pairs removed.
pub fn autocorrelation(tags: &[u64], spec: &HistogramSpec) -> CorrelationHistogram {
    let stream = TagStream::new(0, tags.to_vec(), tags.last().copied().unwrap_or(0) + 1);
    let mut h = photonbench::correlator::correlate(&stream, &stream, spec).unwrap();
    let mid = spec.bin_count / 2;
    h.counts[mid] -= tags.len() as u64;
    normalize(&h).unwrap()
}

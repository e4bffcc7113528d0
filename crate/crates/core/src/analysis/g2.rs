//! Antibunching fit `g²(τ) = baseline - amplitude·exp(-|τ - shift|/τ_anti)`.

use crate::correlator::CorrelationHistogram;
use crate::error::{Error, Result};
use crate::lm::{minimize, LeastSquaresProblem, LmConfig, Termination};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

const MIN_BINS: usize = 20;
const INITIAL_TAU_NS: f64 = 10.0;
const REWEIGHT_PASSES: usize = 3;
/// Largest dip-center offset (ns) attributed to channel delay mismatch.
const MAX_SHIFT_NS: f64 = 20.0;
/// Amplitude over its standard error needed to call the dip real.
const DIP_SIGNIFICANCE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct G2Fit<T> {
    /// `baseline - amplitude`, the model value at the dip center.
    #[serde(with = "crate::scalar::nullable")]
    pub g2_zero: T,
    #[serde(with = "crate::scalar::nullable")]
    pub g2_zero_sigma: T,
    /// Antibunching recovery time (ns).
    #[serde(with = "crate::scalar::nullable")]
    pub tau_anti: T,
    #[serde(with = "crate::scalar::nullable")]
    pub amplitude: T,
    #[serde(with = "crate::scalar::nullable")]
    pub baseline: T,
    /// Dip center offset from zero delay (ns), absorbing channel delay mismatch.
    #[serde(with = "crate::scalar::nullable")]
    pub shift: T,
    /// Parameter covariance, row-major over `[baseline, amplitude, tau_anti, shift]`.
    #[serde(with = "crate::scalar::nullable_vec")]
    pub covariance: Vec<T>,
    pub converged: bool,
    /// The minimizer stopped on a tolerance rather than the iteration budget.
    pub optimizer_converged: bool,
    /// Dip amplitude is at least three standard errors.
    pub dip_significant: bool,
    /// Mean of the normalized histogram and its Poisson standard error, i.e.
    /// the best constant (no-dip) model.
    #[serde(with = "crate::scalar::nullable")]
    pub flat_level: T,
    #[serde(with = "crate::scalar::nullable")]
    pub flat_level_sigma: T,
    pub iterations: usize,
    #[serde(with = "crate::scalar::nullable")]
    pub reduced_chi2: T,
    /// Normalized histogram value at zero delay (mean of the two bins bordering it).
    pub raw_g2_zero: Option<T>,
}

impl<T: Scalar> G2Fit<T> {
    pub fn sigma(&self, index: usize) -> T {
        self.covariance
            .get(index * 4 + index)
            .map(|v| v.max(T::zero()).sqrt())
            .unwrap_or(T::nan())
    }

    /// Model value at delay `tau_ns`.
    pub fn model(&self, tau_ns: T) -> T {
        self.baseline - self.amplitude * (-(tau_ns - self.shift).abs() / self.tau_anti).exp()
    }
}

struct DipProblem<T> {
    tau: Vec<T>,
    value: Vec<T>,
    inv_sigma: Vec<T>,
    max_shift: T,
    min_tau: T,
}

impl<T: Scalar> LeastSquaresProblem<T> for DipProblem<T> {
    fn residual_count(&self) -> usize {
        self.tau.len()
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        let (baseline, amplitude, tau_anti, shift) = (p[0], p[1], p[2], p[3]);
        for i in 0..self.tau.len() {
            let e = (-(self.tau[i] - shift).abs() / tau_anti).exp();
            out[i] = (baseline - amplitude * e - self.value[i]) * self.inv_sigma[i];
        }
    }

    fn jacobian(&self, p: &[T], out: &mut [T]) {
        let (amplitude, tau_anti, shift) = (p[1], p[2], p[3]);
        for i in 0..self.tau.len() {
            let d = self.tau[i] - shift;
            let e = (-d.abs() / tau_anti).exp();
            let w = self.inv_sigma[i];
            let sign = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            out[i * 4] = w;
            out[i * 4 + 1] = -e * w;
            out[i * 4 + 2] = -amplitude * e * d.abs() / (tau_anti * tau_anti) * w;
            out[i * 4 + 3] = -amplitude * e * sign / tau_anti * w;
        }
    }

    fn constrain(&self, p: &mut [T]) {
        p[2] = p[2].max(self.min_tau);
        p[3] = p[3].max(-self.max_shift).min(self.max_shift);
    }
}

fn median<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n == 0 {
        return T::nan();
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::of(2.0)
    }
}

/// Weighted damped least-squares fit of the antibunching dip.
///
/// Bin uncertainties follow Poisson statistics. A first pass weights bins by
/// their observed counts; later passes take the weights from the fitted model,
/// which removes the low-count bias of observed-count weighting and converges
/// to the Poisson maximum-likelihood estimate.
///
/// The fit is flagged unconverged when the iteration budget runs out or the
/// dip amplitude is below four standard errors. The threshold sits above the
/// usual three because the dip center is free to wander across the shift
/// range, which gives noise many chances to look like a dip.
pub fn fit_g2<T: Scalar>(h: &CorrelationHistogram) -> Result<G2Fit<T>> {
    let normalized = h
        .normalized
        .as_ref()
        .ok_or_else(|| Error::validation("normalized", "histogram must be normalized before fitting"))?;
    if h.spec.bin_count < MIN_BINS {
        return Err(Error::validation("bin_count", format!("need at least {MIN_BINS} bins")));
    }
    let factor = h.normalization_factor()?;
    let tau: Vec<T> = h.tau_ps().into_iter().map(|t| T::of(t * 1e-3)).collect();
    let value: Vec<T> = normalized.iter().map(|&v| T::of(v)).collect();
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("normalized", "non-finite g² values"));
    }
    let inv_sigma: Vec<T> = h
        .counts
        .iter()
        .map(|&c| T::one() / T::of(factor * (c.max(1) as f64).sqrt()))
        .collect();
    let raw_g2_zero = h.raw_g2_zero().map(T::of);
    let n = value.len();
    let total: u64 = h.counts.iter().sum();
    let flat_level = T::of(factor * total as f64 / n as f64);
    let flat_level_sigma = T::of(factor * (total.max(1) as f64).sqrt() / n as f64);

    let first = value[0];
    if value.iter().all(|&v| v == first) {
        return Ok(G2Fit {
            g2_zero: first,
            g2_zero_sigma: flat_level_sigma,
            tau_anti: T::of(INITIAL_TAU_NS),
            amplitude: T::zero(),
            baseline: first,
            shift: T::zero(),
            covariance: vec![T::zero(); 16],
            converged: false,
            optimizer_converged: true,
            dip_significant: false,
            flat_level,
            flat_level_sigma,
            iterations: 0,
            reduced_chi2: T::zero(),
            raw_g2_zero,
        });
    }

    // outer 20% of bins, 10% on each side
    let edge = (n / 10).max(1);
    let mut outer: Vec<T> = value[..edge].iter().chain(&value[n - edge..]).copied().collect();
    let baseline0 = median(&mut outer);
    let (min_index, min_value) = smoothed_minimum(&value);
    let amplitude0 = baseline0 - min_value;
    let bin_ns = h.spec.bin_width_ps as f64 * 1e-3;
    let max_shift = T::of(MAX_SHIFT_NS.min(bin_ns * n as f64 / 4.0));
    let shift0 = if tau[min_index].abs() <= max_shift { tau[min_index] } else { T::zero() };

    let mut problem = DipProblem {
        tau,
        value,
        inv_sigma,
        max_shift,
        // a dip narrower than two bins cannot be told apart from noise
        min_tau: T::of(2.0 * bin_ns),
    };
    let init = [baseline0, amplitude0, T::of(INITIAL_TAU_NS), shift0];
    let mut report = minimize(&problem, &init, &LmConfig::default());
    let floor = T::of(0.5 * factor);
    for _ in 0..REWEIGHT_PASSES {
        if report.termination == Termination::IterationBudget || !report.params.iter().all(|v| v.is_finite()) {
            break;
        }
        let p = report.params.clone();
        for i in 0..n {
            let e = (-(problem.tau[i] - p[3]).abs() / p[2]).exp();
            // σ² = expected counts × factor², in g² units: model × factor
            let expected = (p[0] - p[1] * e).max(floor);
            problem.inv_sigma[i] = T::one() / (expected * T::of(factor)).sqrt();
        }
        report = minimize(&problem, &p, &LmConfig::default());
    }
    let p = &report.params;
    let covariance = report.inverse_normal.clone().unwrap_or_else(|| vec![T::nan(); 16]);
    let var = |i: usize, j: usize| covariance[i * 4 + j];
    let g2_var = var(0, 0) + var(1, 1) - T::of(2.0) * var(0, 1);
    let amp_sigma = var(1, 1).max(T::zero()).sqrt();
    let significant = p[1].abs() >= T::of(DIP_SIGNIFICANCE) * amp_sigma && amp_sigma.is_finite();
    let optimizer_converged = report.termination != Termination::IterationBudget;
    let converged = optimizer_converged && report.inverse_normal.is_some() && significant;
    let dof = (n - 4).max(1);

    Ok(G2Fit {
        g2_zero: p[0] - p[1],
        g2_zero_sigma: g2_var.max(T::zero()).sqrt(),
        tau_anti: p[2],
        amplitude: p[1],
        baseline: p[0],
        shift: p[3],
        covariance,
        converged,
        optimizer_converged,
        dip_significant: significant,
        flat_level,
        flat_level_sigma,
        iterations: report.iterations,
        reduced_chi2: T::of(2.0) * report.objective / T::of(dof as f64),
        raw_g2_zero,
    })
}

/// Index and value of the minimum of an 11-bin moving average.
fn smoothed_minimum<T: Scalar>(values: &[T]) -> (usize, T) {
    let half = 5usize;
    let n = values.len();
    let mut best = (n / 2, T::infinity());
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let mean = values[lo..hi].iter().copied().sum::<T>() / T::of((hi - lo) as f64);
        if mean < best.1 {
            best = (i, mean);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Single,
    NotSingle,
    Inconclusive,
}

/// Single-emitter decision with a two-sigma margin on the 0.5 threshold.
///
/// A fit whose minimizer converged but found no significant dip is judged on
/// its flat level instead, so uncorrelated light reads as `NotSingle`.
pub fn classify_single_emitter<T: Scalar>(fit: &G2Fit<T>) -> Verdict {
    if fit.converged {
        classify_g2_zero(fit.g2_zero, fit.g2_zero_sigma, true)
    } else if fit.optimizer_converged && !fit.dip_significant {
        classify_g2_zero(fit.flat_level, fit.flat_level_sigma, true)
    } else {
        Verdict::Inconclusive
    }
}

pub fn classify_g2_zero<T: Scalar>(g2_zero: T, sigma: T, converged: bool) -> Verdict {
    if !converged || !g2_zero.is_finite() || !sigma.is_finite() {
        return Verdict::Inconclusive;
    }
    let two = T::of(2.0);
    let half = T::of(0.5);
    if g2_zero + two * sigma < half {
        Verdict::Single
    } else if g2_zero - two * sigma >= half {
        Verdict::NotSingle
    } else {
        Verdict::Inconclusive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::{normalize, HistogramSpec};
    use crate::lm::finite_difference_jacobian;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, Poisson};

    /// Histogram whose expected counts are `scale·g²(τ)`.
    fn synthetic(scale: f64, g2: impl Fn(f64) -> f64, noise_seed: Option<u64>) -> CorrelationHistogram {
        let spec = HistogramSpec::default();
        let mut h = CorrelationHistogram::empty(spec);
        // n_a·n_b·w/T = scale
        h.n_a = 100_000;
        h.n_b = 100_000;
        h.duration = (1e10 * spec.bin_width_ps as f64 / scale) as u64;
        let mut rng = noise_seed.map(|s| stream_rng(s, 99));
        for (k, c) in h.counts.iter_mut().enumerate() {
            let mean = scale * g2(spec.bin_center_ps(k) * 1e-3);
            *c = match rng.as_mut() {
                Some(r) => Poisson::new(mean.max(1e-9)).unwrap().sample(r) as u64,
                None => mean.round() as u64,
            };
        }
        normalize(&h).unwrap()
    }

    #[test]
    fn recovers_noisy_dip() {
        let h = synthetic(1e4, |t| 1.0 - (-t.abs() / 12.0).exp(), Some(5));
        let fit = fit_g2::<f64>(&h).unwrap();
        assert!(fit.converged);
        assert!((fit.baseline - 1.0).abs() < 0.05);
        assert!((fit.amplitude - 1.0).abs() < 0.05);
        assert!((fit.tau_anti - 12.0).abs() < 0.6);
        assert!(fit.g2_zero.abs() < 0.05);
        assert_eq!(classify_single_emitter(&fit), Verdict::Single);
    }

    #[test]
    fn flat_histogram_is_baseline_only() {
        let h = synthetic(1e4, |_| 1.0, None);
        let fit = fit_g2::<f64>(&h).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.amplitude, 0.0);
        assert!((fit.g2_zero - 1.0).abs() < 1e-12);
        assert_eq!(classify_single_emitter(&fit), Verdict::NotSingle);
    }

    #[test]
    fn poissonian_light_reads_not_single() {
        let h = synthetic(2e3, |_| 1.0, Some(8));
        let fit = fit_g2::<f64>(&h).unwrap();
        assert!((fit.flat_level - 1.0).abs() < 0.01);
        assert_eq!(classify_single_emitter(&fit), Verdict::NotSingle);
    }

    #[test]
    fn rescaled_counts_give_same_fit() {
        let h = synthetic(5e3, |t| 1.0 - 0.8 * (-(t - 0.3).abs() / 12.0).exp(), Some(3));
        let mut scaled = h.clone();
        scaled.counts.iter_mut().for_each(|c| *c *= 7);
        scaled.n_a *= 7;
        let scaled = normalize(&scaled).unwrap();
        let a = fit_g2::<f64>(&h).unwrap();
        let b = fit_g2::<f64>(&scaled).unwrap();
        assert!((a.g2_zero - b.g2_zero).abs() < 1e-6);
        assert!((a.tau_anti - b.tau_anti).abs() < 1e-5);
        assert!((a.shift - b.shift).abs() < 1e-5);
    }

    #[test]
    fn single_precision_fit() {
        let h = synthetic(1e4, |t| 1.0 - 0.86 * (-t.abs() / 12.0).exp(), Some(11));
        let fit = fit_g2::<f32>(&h).unwrap();
        assert!(fit.converged);
        assert!((fit.g2_zero - 0.14).abs() < 0.03);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let tau: Vec<f64> = (0..60).map(|i| -30.0 + i as f64 + 0.37).collect();
        let problem = DipProblem {
            value: tau.iter().map(|t| 1.0 - 0.7 * (-t.abs() / 11.0).exp()).collect(),
            inv_sigma: vec![3.0; tau.len()],
            tau,
            max_shift: 20.0,
            min_tau: 0.4,
        };
        let p = [1.02, 0.8, 9.0, 0.4];
        let mut analytic = vec![0.0; 240];
        let mut numeric = vec![0.0; 240];
        problem.jacobian(&p, &mut analytic);
        finite_difference_jacobian(&problem, &p, &mut numeric);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {n}");
        }
    }

    #[test]
    fn verdict_thresholds() {
        assert_eq!(classify_g2_zero(0.14, 0.03, true), Verdict::Single);
        assert_eq!(classify_g2_zero(0.42, 0.03, true), Verdict::Single);
        assert_eq!(classify_g2_zero(0.60, 0.02, true), Verdict::NotSingle);
        assert_eq!(classify_g2_zero(0.48, 0.03, true), Verdict::Inconclusive);
        assert_eq!(classify_g2_zero(0.14, 0.03, false), Verdict::Inconclusive);
    }
}

use crate::error::{Error, Result};
use crate::lm::{minimize, LeastSquaresProblem, LmConfig};
use crate::optics::waist_radius;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct BeamWaistFit<T> {
    /// µm
    #[serde(with = "crate::scalar::nullable")]
    pub w0: T,
    #[serde(with = "crate::scalar::nullable")]
    pub z_focus: T,
    #[serde(with = "crate::scalar::nullable")]
    pub w0_uncertainty: T,
    #[serde(with = "crate::scalar::nullable")]
    pub z_focus_uncertainty: T,
    /// RMS of the relative residuals `w_fit / w_measured − 1`.
    #[serde(with = "crate::scalar::nullable")]
    pub residual_rms: T,
    pub converged: bool,
    pub iterations: usize,
}

/// Known beam parameters for a waist fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamFitConfig<T> {
    pub wavelength_nm: T,
    pub m_squared: T,
}

impl<T: Scalar> Default for BeamFitConfig<T> {
    fn default() -> Self {
        BeamFitConfig {
            wavelength_nm: T::of(532.0),
            m_squared: T::one(),
        }
    }
}

struct WaistProblem<'a, T> {
    samples: &'a [(T, T)],
    /// M²·λ/π in µm
    c: T,
    config: BeamFitConfig<T>,
}

impl<T: Scalar> LeastSquaresProblem<T> for WaistProblem<'_, T> {
    fn residual_count(&self) -> usize {
        self.samples.len()
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        for (i, &(z, r)) in self.samples.iter().enumerate() {
            out[i] = waist_radius(p[0], z - p[1], self.config.wavelength_nm, self.config.m_squared) / r - T::one();
        }
    }

    fn jacobian(&self, p: &[T], out: &mut [T]) {
        let (w0, zf) = (p[0], p[1]);
        let c2 = self.c * self.c;
        for (i, &(z, r)) in self.samples.iter().enumerate() {
            let d = z - zf;
            let w = waist_radius(w0, d, self.config.wavelength_nm, self.config.m_squared);
            out[i * 2] = (w0 - d * d * c2 / (w0 * w0 * w0)) / (w * r);
            out[i * 2 + 1] = -d * c2 / (w0 * w0 * w * r);
        }
    }

    fn constrain(&self, p: &mut [T]) {
        p[0] = p[0].abs().max(T::of(1e-6));
    }
}

/// Fit `w(z) = w0·sqrt(1 + ((z - z_focus)·M²·λ/(π·w0²))²)` to measured radii.
///
/// `samples` are `(z µm, radius µm)`. Residuals are relative to the measured
/// radius, matching errors that scale with the spot size. Uncertainties come
/// from the residual-scaled covariance diagonal.
pub fn fit_beam_waist<T: Scalar>(samples: &[(T, T)], config: &BeamFitConfig<T>) -> Result<BeamWaistFit<T>> {
    if samples.iter().any(|(z, r)| !z.is_finite() || !r.is_finite()) {
        return Err(Error::validation("samples", "non-finite value"));
    }
    if samples.iter().any(|&(_, r)| !(r > T::zero())) {
        return Err(Error::validation("samples", "radii must be positive"));
    }
    let mut zs: Vec<T> = samples.iter().map(|s| s.0).collect();
    zs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    zs.dedup();
    if zs.len() < 3 {
        return Err(Error::Fit(format!(
            "beam waist fit needs at least 3 distinct z positions, got {}",
            zs.len()
        )));
    }

    let c = config.m_squared * config.wavelength_nm * T::of(1e-3) / T::pi();
    let (z_min, r_min) = samples
        .iter()
        .copied()
        .fold((T::zero(), T::infinity()), |best, s| if s.1 < best.1 { s } else { best });
    let problem = WaistProblem { samples, c, config: *config };
    let report = minimize(&problem, &[r_min, z_min], &LmConfig::default());
    let n = samples.len();
    let cov = report
        .scaled_covariance(n)
        .ok_or_else(|| Error::Fit("degenerate data: normal matrix is singular".into()))?;
    let (w0, z_focus) = (report.params[0], report.params[1]);
    let uncertainty = |k: usize| {
        let v = cov[k * 2 + k];
        if v.is_finite() {
            v.max(T::zero()).sqrt()
        } else {
            T::zero()
        }
    };
    Ok(BeamWaistFit {
        w0,
        z_focus,
        w0_uncertainty: uncertainty(0),
        z_focus_uncertainty: uncertainty(1),
        residual_rms: (T::of(2.0) * report.objective / T::of(n as f64)).sqrt(),
        converged: report.converged() && w0 > T::zero(),
        iterations: report.iterations,
    })
}

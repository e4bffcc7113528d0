use crate::error::{Error, Result};
use crate::lm::{minimize, LeastSquaresProblem, LmConfig};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// 1D Gaussian fitted to a line profile through a spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCrossSection<T> {
    pub center: T,
    pub sigma: T,
    pub amplitude: T,
    pub offset: T,
    /// 1/e² intensity radius, `2σ`.
    pub radius: T,
    pub converged: bool,
    /// False when the profile is flat and the center carries no information.
    pub center_constrained: bool,
}

struct Profile1d<'a, T> {
    x: &'a [T],
    y: &'a [T],
    span: T,
}

impl<T: Scalar> LeastSquaresProblem<T> for Profile1d<'_, T> {
    fn residual_count(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        let (c, s, a, o) = (p[0], p[1], p[2], p[3]);
        for i in 0..self.x.len() {
            let d = (self.x[i] - c) / s;
            out[i] = a * (-d * d / T::of(2.0)).exp() + o - self.y[i];
        }
    }

    fn jacobian(&self, p: &[T], out: &mut [T]) {
        let (c, s, a) = (p[0], p[1], p[2]);
        for i in 0..self.x.len() {
            let d = (self.x[i] - c) / s;
            let e = (-d * d / T::of(2.0)).exp();
            out[i * 4] = a * e * d / s;
            out[i * 4 + 1] = a * e * d * d / s;
            out[i * 4 + 2] = e;
            out[i * 4 + 3] = T::one();
        }
    }

    fn constrain(&self, p: &mut [T]) {
        p[1] = p[1].abs().max(self.span * T::of(1e-4));
    }
}

/// Fit `amplitude·exp(-(x - center)²/(2σ²)) + offset` to `values` sampled at
/// `origin + i·pitch`.
pub fn fit_gaussian_cross_section<T: Scalar>(values: &[T], origin: T, pitch: T) -> Result<GaussianCrossSection<T>> {
    if values.len() < 5 {
        return Err(Error::validation("values", "need at least 5 samples"));
    }
    if values.iter().any(|v| !v.is_finite()) || !origin.is_finite() || !(pitch > T::zero()) {
        return Err(Error::validation("values", "non-finite sample or non-positive pitch"));
    }
    let x: Vec<T> = (0..values.len()).map(|i| origin + T::of(i as f64) * pitch).collect();
    let (mut lo, mut hi, mut argmax) = (values[0], values[0], 0);
    for (i, &v) in values.iter().enumerate() {
        lo = lo.min(v);
        if v > hi {
            hi = v;
            argmax = i;
        }
    }
    let span = pitch * T::of(values.len() as f64);
    if hi - lo <= T::of(1e-12) * hi.abs().max(T::one()) {
        return Ok(GaussianCrossSection {
            center: x[values.len() / 2],
            sigma: T::infinity(),
            amplitude: T::zero(),
            offset: lo,
            radius: T::infinity(),
            converged: false,
            center_constrained: false,
        });
    }
    let half = lo + (hi - lo) / T::of(2.0);
    let above = values.iter().filter(|&&v| v >= half).count().max(1);
    let sigma0 = (T::of(above as f64) * pitch / T::of(2.3548)).max(pitch / T::of(2.0));

    let problem = Profile1d { x: &x, y: values, span };
    let report = minimize(&problem, &[x[argmax], sigma0, hi - lo, lo], &LmConfig::default());
    let p = &report.params;
    let constrained = report.converged() && p[2] > T::zero() && p[1] < span;
    Ok(GaussianCrossSection {
        center: p[0],
        sigma: p[1],
        amplitude: p[2],
        offset: p[3],
        radius: T::of(2.0) * p[1],
        converged: report.converged(),
        center_constrained: constrained,
    })
}

/// Elliptical 2D Gaussian over pixel coordinates with a fixed offset.
/// Parameters are `[x0, y0, amplitude, σx, σy]`.
pub(crate) struct Gaussian2d<'a, T> {
    pub points: &'a [(T, T, T)],
    pub offset: T,
    pub max_sigma: T,
}

impl<T: Scalar> LeastSquaresProblem<T> for Gaussian2d<'_, T> {
    fn residual_count(&self) -> usize {
        self.points.len()
    }

    fn residuals(&self, p: &[T], out: &mut [T]) {
        let two = T::of(2.0);
        for (i, &(x, y, v)) in self.points.iter().enumerate() {
            let dx = (x - p[0]) / p[3];
            let dy = (y - p[1]) / p[4];
            out[i] = p[2] * (-(dx * dx + dy * dy) / two).exp() + self.offset - v;
        }
    }

    fn jacobian(&self, p: &[T], out: &mut [T]) {
        let two = T::of(2.0);
        for (i, &(x, y, _)) in self.points.iter().enumerate() {
            let dx = (x - p[0]) / p[3];
            let dy = (y - p[1]) / p[4];
            let e = (-(dx * dx + dy * dy) / two).exp();
            let ae = p[2] * e;
            let row = &mut out[i * 5..(i + 1) * 5];
            row[0] = ae * dx / p[3];
            row[1] = ae * dy / p[4];
            row[2] = e;
            row[3] = ae * dx * dx / p[3];
            row[4] = ae * dy * dy / p[4];
        }
    }

    fn constrain(&self, p: &mut [T]) {
        let floor = T::of(0.2);
        p[3] = p[3].abs().max(floor).min(self.max_sigma);
        p[4] = p[4].abs().max(floor).min(self.max_sigma);
    }
}

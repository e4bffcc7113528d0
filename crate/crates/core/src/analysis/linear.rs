use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub max_abs_residual: T,
    pub rms_residual: T,
}

impl<T: Scalar> LinearFit<T> {
    pub fn at(&self, x: T) -> T {
        self.slope * x + self.intercept
    }
}

/// Ordinary least-squares line through `(x, y)` pairs.
pub fn fit_linear<T: Scalar>(points: &[(T, T)]) -> Result<LinearFit<T>> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::validation("points", "non-finite value"));
    }
    let n = T::of(points.len() as f64);
    if points.len() < 2 {
        return Err(Error::Fit("linear fit needs at least 2 points".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<T>() / n;
    let my = points.iter().map(|p| p.1).sum::<T>() / n;
    let sxx = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<T>();
    let sxy = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<T>();
    if !(sxx > T::zero()) {
        return Err(Error::Fit("linear fit needs at least 2 distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut max_abs = T::zero();
    let mut sq = T::zero();
    for &(x, y) in points {
        let r = y - (slope * x + intercept);
        max_abs = max_abs.max(r.abs());
        sq += r * r;
    }
    Ok(LinearFit {
        slope,
        intercept,
        max_abs_residual: max_abs,
        rms_residual: (sq / n).sqrt(),
    })
}

//! Gaussian excitation beam, collection optics and background light.

use crate::emitter_sample::{EmitterSpec, SPECTRUM_MAX_NM, SPECTRUM_MIN_NM, ZPL_SIGMA_NM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamProfile<T> {
    /// 1/e² waist radius (µm).
    pub w0: T,
    pub wavelength_nm: T,
    pub m_squared: T,
    pub power_mw: T,
    /// Axial focus position (µm).
    pub focus_z: T,
}

impl<T: Scalar> BeamProfile<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > T::zero()) {
            return Err(Error::validation("w0", "waist must be positive"));
        }
        if !(self.m_squared >= T::one()) {
            return Err(Error::validation("m_squared", "beam quality factor must be >= 1"));
        }
        if !(self.wavelength_nm > T::zero()) {
            return Err(Error::validation("wavelength_nm", "must be positive"));
        }
        if !(self.power_mw >= T::zero()) {
            return Err(Error::validation("power_mw", "must be non-negative"));
        }
        Ok(())
    }

    /// Rayleigh range `π·w0²/(M²·λ)` (µm).
    pub fn rayleigh_range(&self) -> T {
        T::pi() * self.w0 * self.w0 / (self.m_squared * self.wavelength_nm * T::of(1e-3))
    }
}

/// Beam radius at axial offset `z` (µm) from the waist.
pub fn beam_radius<T: Scalar>(beam: &BeamProfile<T>, z: T) -> T {
    waist_radius(beam.w0, z, beam.wavelength_nm, beam.m_squared)
}

/// `w0·sqrt(1 + (z·M²·λ/(π·w0²))²)` with `w0`, `z` in µm and `λ` in nm.
pub fn waist_radius<T: Scalar>(w0: T, z: T, wavelength_nm: T, m_squared: T) -> T {
    let lambda_um = wavelength_nm * T::of(1e-3);
    let q = z * m_squared * lambda_um / (T::pi() * w0 * w0);
    w0 * (T::one() + q * q).sqrt()
}

/// Relative excitation intensity `(w0/w)²·exp(-2r²/w²)`; 1 at the focus center.
pub fn excitation_profile<T: Scalar>(beam: &BeamProfile<T>, dx: T, dy: T, dz: T) -> T {
    let w = beam_radius(beam, dz);
    let ratio = beam.w0 / w;
    let r2 = dx * dx + dy * dy;
    ratio * ratio * (-T::of(2.0) * r2 / (w * w)).exp()
}

/// Analytic gradient of [`excitation_profile`] with respect to `(dx, dy, dz)`.
pub fn excitation_profile_gradient<T: Scalar>(beam: &BeamProfile<T>, dx: T, dy: T, dz: T) -> [T; 3] {
    let two = T::of(2.0);
    let w = beam_radius(beam, dz);
    let w2 = w * w;
    let r2 = dx * dx + dy * dy;
    let f = excitation_profile(beam, dx, dy, dz);
    // d(w²)/dz = 2·w0²·z/zR²
    let zr = beam.rayleigh_range();
    let dw2_dz = two * beam.w0 * beam.w0 * dz / (zr * zr);
    // f = w0²/w² · exp(-2r²/w²)  →  ∂f/∂(w²) = f·(-1/w² + 2r²/w⁴)
    let df_dw2 = f * (-T::one() / w2 + two * r2 / (w2 * w2));
    [
        -T::of(4.0) * dx / w2 * f,
        -T::of(4.0) * dy / w2 * f,
        df_dw2 * dw2_dz,
    ]
}

/// Piecewise-linear transmission curve, held constant beyond its end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionCurve<T> {
    /// `(wavelength nm, transmission)` pairs sorted by wavelength.
    pub points: Vec<(T, T)>,
}

impl<T: Scalar> TransmissionCurve<T> {
    pub fn flat(value: T) -> Self {
        TransmissionCurve {
            points: vec![(T::of(300.0), value), (T::of(1100.0), value)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::validation("transmission_curve", "needs at least one point"));
        }
        if self.points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::validation(
                "transmission_curve",
                "wavelengths must be strictly increasing",
            ));
        }
        if self
            .points
            .iter()
            .any(|&(_, t)| !(t >= T::zero() && t <= T::one()))
        {
            return Err(Error::validation("transmission_curve", "values must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn at(&self, wavelength_nm: T) -> T {
        let pts = &self.points;
        match pts.len() {
            0 => T::zero(),
            1 => pts[0].1,
            _ => {
                if wavelength_nm <= pts[0].0 {
                    return pts[0].1;
                }
                let last = pts[pts.len() - 1];
                if wavelength_nm >= last.0 {
                    return last.1;
                }
                let i = pts.partition_point(|p| p.0 <= wavelength_nm);
                let (x0, y0) = pts[i - 1];
                let (x1, y1) = pts[i];
                y0 + (y1 - y0) * (wavelength_nm - x0) / (x1 - x0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec<T> {
    pub numerical_aperture: T,
    pub transmission_curve: TransmissionCurve<T>,
    /// Lens autofluorescence reaching the detection path (counts/s per mW of pump).
    pub autofluorescence_rate_per_mw: T,
}

impl<T: Scalar> ObjectiveSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let na = self.numerical_aperture;
        if !(na > T::zero() && na < T::one()) {
            return Err(Error::validation("numerical_aperture", "must lie in (0, 1)"));
        }
        if !(self.autofluorescence_rate_per_mw >= T::zero()) {
            return Err(Error::validation("autofluorescence_rate_per_mw", "must be non-negative"));
        }
        self.transmission_curve.validate()
    }

    /// Fraction of isotropic emission inside the acceptance cone.
    pub fn solid_angle_fraction(&self) -> T {
        solid_angle_fraction(self.numerical_aperture)
    }
}

/// `(1 - sqrt(1 - NA²))/2`.
pub fn solid_angle_fraction<T: Scalar>(numerical_aperture: T) -> T {
    (T::one() - (T::one() - numerical_aperture * numerical_aperture).sqrt()) / T::of(2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Longpass,
    Shortpass,
    /// Transmits everything except a reflected band (a dichroic seen in transmission).
    DichroicReflectband,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterElement<T> {
    pub kind: FilterKind,
    /// Edge wavelength for long/short-pass elements (nm).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_nm: Option<T>,
    /// Reflected band for dichroics (nm).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_nm: Option<(T, T)>,
    pub transmission_pass: T,
    pub transmission_stop: T,
}

impl<T: Scalar> FilterElement<T> {
    pub fn longpass(edge_nm: T, pass: T, stop: T) -> Self {
        FilterElement {
            kind: FilterKind::Longpass,
            edge_nm: Some(edge_nm),
            band_nm: None,
            transmission_pass: pass,
            transmission_stop: stop,
        }
    }

    pub fn shortpass(edge_nm: T, pass: T, stop: T) -> Self {
        FilterElement {
            kind: FilterKind::Shortpass,
            edge_nm: Some(edge_nm),
            band_nm: None,
            transmission_pass: pass,
            transmission_stop: stop,
        }
    }

    pub fn dichroic(band_nm: (T, T), pass: T, stop: T) -> Self {
        FilterElement {
            kind: FilterKind::DichroicReflectband,
            edge_nm: None,
            band_nm: Some(band_nm),
            transmission_pass: pass,
            transmission_stop: stop,
        }
    }

    fn passes(&self, wavelength_nm: T) -> bool {
        match self.kind {
            FilterKind::Longpass => wavelength_nm >= self.edge_nm.unwrap_or(T::zero()),
            FilterKind::Shortpass => wavelength_nm <= self.edge_nm.unwrap_or(T::infinity()),
            FilterKind::DichroicReflectband => match self.band_nm {
                Some((lo, hi)) => !(wavelength_nm >= lo && wavelength_nm < hi),
                None => true,
            },
        }
    }

    pub fn transmission(&self, wavelength_nm: T) -> T {
        if self.passes(wavelength_nm) {
            self.transmission_pass
        } else {
            self.transmission_stop
        }
    }

    /// Wavelengths where the transmission jumps.
    pub fn edges(&self) -> Vec<T> {
        match (self.edge_nm, self.band_nm) {
            (Some(e), _) => vec![e],
            (None, Some((lo, hi))) => vec![lo, hi],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStack<T> {
    pub elements: Vec<FilterElement<T>>,
}

impl<T: Scalar> FilterStack<T> {
    /// Dichroic (reflects below 550 nm), two 550 nm long-pass filters and a 750 nm short-pass.
    pub fn detection_default() -> Self {
        let pass = T::of(0.95);
        let stop = T::of(9e-5);
        FilterStack {
            elements: vec![
                FilterElement::dichroic((T::of(350.0), T::of(550.0)), pass, stop),
                FilterElement::longpass(T::of(550.0), pass, stop),
                FilterElement::longpass(T::of(550.0), pass, stop),
                FilterElement::shortpass(T::of(750.0), pass, stop),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, el) in self.elements.iter().enumerate() {
            let ok = |v: T| v >= T::zero() && v <= T::one();
            if !ok(el.transmission_pass) || !ok(el.transmission_stop) {
                return Err(Error::validation(
                    format!("filters[{i}]"),
                    "transmissions must lie in [0, 1]",
                ));
            }
            let has_geometry = match el.kind {
                FilterKind::Longpass | FilterKind::Shortpass => el.edge_nm.is_some(),
                FilterKind::DichroicReflectband => el.band_nm.is_some(),
            };
            if !has_geometry {
                return Err(Error::validation(format!("filters[{i}]"), "missing edge or band"));
            }
        }
        Ok(())
    }

    pub fn transmission(&self, wavelength_nm: T) -> T {
        self.elements
            .iter()
            .fold(T::one(), |acc, el| acc * el.transmission(wavelength_nm))
    }

    /// Transmission relative to the all-pass product.
    pub fn relative_transmission(&self, wavelength_nm: T) -> T {
        self.elements.iter().fold(T::one(), |acc, el| {
            if el.transmission_pass > T::zero() {
                acc * el.transmission(wavelength_nm) / el.transmission_pass
            } else {
                T::zero()
            }
        })
    }

    pub fn edges(&self) -> Vec<T> {
        self.elements.iter().flat_map(|e| e.edges()).collect()
    }
}

/// Pinhole modeled as a Gaussian axial acceptance.
pub fn axial_acceptance<T: Scalar>(axial_offset: T, pinhole_axial_fwhm: T) -> T {
    let ln2 = T::of(std::f64::consts::LN_2);
    (-T::of(4.0) * ln2 * axial_offset * axial_offset / (pinhole_axial_fwhm * pinhole_axial_fwhm)).exp()
}

/// Fraction of photons at `wavelength_nm`, emitted `axial_offset` µm from the
/// focal plane, that reach the detection path.
pub fn collection_efficiency<T: Scalar>(
    objective: &ObjectiveSpec<T>,
    filters: &FilterStack<T>,
    wavelength_nm: T,
    axial_offset: T,
    pinhole_axial_fwhm: T,
) -> Result<T> {
    if !(pinhole_axial_fwhm > T::zero()) {
        return Err(Error::validation("pinhole_axial_fwhm", "must be positive"));
    }
    let eff = objective.solid_angle_fraction()
        * objective.transmission_curve.at(wavelength_nm)
        * filters.transmission(wavelength_nm)
        * axial_acceptance(axial_offset, pinhole_axial_fwhm);
    Ok(eff.max(T::zero()).min(T::one()))
}

/// Pump-rate model: `k_exc = C·P·T_pump·(w0/w)²·exp(-2r²/w²)`.
///
/// `excitation_per_mw` is `C`, the excitation rate (1/s) per mW of pump
/// power transmitted to an on-focus emitter.
pub fn excitation_rate_at<T: Scalar>(
    beam: &BeamProfile<T>,
    objective: &ObjectiveSpec<T>,
    excitation_per_mw: T,
    emitter_position: [T; 3],
    beam_center_xy: [T; 2],
) -> T {
    let t_pump = objective.transmission_curve.at(beam.wavelength_nm);
    let dx = emitter_position[0] - beam_center_xy[0];
    let dy = emitter_position[1] - beam_center_xy[1];
    let dz = emitter_position[2] - beam.focus_z;
    excitation_per_mw * beam.power_mw * t_pump * excitation_profile(beam, dx, dy, dz)
}

/// Lens autofluorescence reaching the detection path (counts/s).
pub fn background_rate<T: Scalar>(objective: &ObjectiveSpec<T>, power_mw: T) -> Result<T> {
    if !(power_mw >= T::zero()) {
        return Err(Error::validation("power_mw", "must be non-negative"));
    }
    Ok(objective.autofluorescence_rate_per_mw * power_mw)
}

const QUADRATURE_ORDER: usize = 64;

/// 64-point Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = QUADRATURE_ORDER;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

/// Integrate `f` over `[a, b]`, splitting at `breaks` so discontinuities
/// fall on segment boundaries.
fn integrate_piecewise(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let mut cuts: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let nodes = gauss_legendre();
    cuts.windows(2)
        .map(|seg| {
            let half = 0.5 * (seg[1] - seg[0]);
            let mid = 0.5 * (seg[1] + seg[0]);
            nodes.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
        })
        .sum()
}

fn normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let u = (x - mean) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Collection efficiency averaged over an emitter's emission spectrum.
///
/// Each mixture component (zero-phonon line, truncated phonon sideband) is
/// integrated with 64-point Gauss-Legendre quadrature on segments split at
/// the filter edges and transmission-curve knots.
pub fn spectral_collection_efficiency(
    objective: &ObjectiveSpec<f64>,
    filters: &FilterStack<f64>,
    emitter: &EmitterSpec,
    axial_offset: f64,
    pinhole_axial_fwhm: f64,
) -> Result<f64> {
    let at = |w: f64| collection_efficiency(objective, filters, w, axial_offset, pinhole_axial_fwhm);
    at(emitter.sideband_center_nm)?;
    let mut breaks = filters.edges();
    breaks.extend(objective.transmission_curve.points.iter().map(|p| p.0));
    let eff = |w: f64| at(w).unwrap_or(0.0);

    let zpl = if emitter.zpl_weight > 0.0 {
        let half = 4.0 * ZPL_SIGMA_NM;
        let (lo, hi) = (emitter.zpl_wavelength_nm - half, emitter.zpl_wavelength_nm + half);
        let pdf = |w: f64| normal_pdf(w, emitter.zpl_wavelength_nm, ZPL_SIGMA_NM);
        let mass = integrate_piecewise(pdf, lo, hi, &[]);
        integrate_piecewise(|w| pdf(w) * eff(w), lo, hi, &breaks) / mass
    } else {
        0.0
    };
    let sideband = if emitter.zpl_weight < 1.0 {
        let pdf = |w: f64| normal_pdf(w, emitter.sideband_center_nm, emitter.sideband_sigma_nm());
        let mass = integrate_piecewise(pdf, SPECTRUM_MIN_NM, SPECTRUM_MAX_NM, &[]);
        integrate_piecewise(|w| pdf(w) * eff(w), SPECTRUM_MIN_NM, SPECTRUM_MAX_NM, &breaks) / mass
    } else {
        0.0
    };
    Ok(emitter.zpl_weight * zpl + (1.0 - emitter.zpl_weight) * sideband)
}

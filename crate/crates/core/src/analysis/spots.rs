use super::gaussian::Gaussian2d;
use crate::lm::{minimize, LmConfig};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spot<T> {
    /// µm, sample coordinates
    pub x: T,
    pub y: T,
    /// Fitted peak height above the background median (counts).
    pub amplitude: T,
    /// Brightest pixel value (counts).
    pub peak: T,
    /// 1/e² radii along x and y (µm).
    pub radius_x: T,
    pub radius_y: T,
    /// Geometric mean of the two radii (µm).
    pub width: T,
    /// Major over minor radius, ≥ 1.
    pub ellipticity: T,
    pub snr: T,
    pub fit_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotConfig<T> {
    pub min_snr: T,
    /// Lower bound on the fit window half-size in pixels (7×7 by default).
    pub min_window_half: usize,
    pub max_window_half: usize,
}

impl<T: Scalar> Default for SpotConfig<T> {
    fn default() -> Self {
        SpotConfig {
            min_snr: T::of(5.0),
            min_window_half: 3,
            max_window_half: 12,
        }
    }
}

/// Row-major image with physical pixel placement.
#[derive(Debug, Clone, Copy)]
pub struct GridView<'a, T> {
    pub values: &'a [T],
    pub cols: usize,
    pub rows: usize,
    /// Position of pixel (0, 0) in µm.
    pub origin: [T; 2],
    pub pitch: [T; 2],
}

impl<T: Scalar> GridView<'_, T> {
    fn at(&self, col: usize, row: usize) -> T {
        self.values[row * self.cols + col]
    }
}

fn median_of<T: Scalar>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n == 0 {
        T::zero()
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::of(2.0)
    }
}

/// Background level and robust noise scale `max(1.4826·MAD, 1)`.
pub fn background_stats<T: Scalar>(values: &[T]) -> (T, T) {
    let med = median_of(values.to_vec());
    let mad = median_of(values.iter().map(|&v| (v - med).abs()).collect());
    (med, (T::of(1.4826) * mad).max(T::one()))
}

/// Locate bright spots: local maxima above `median + min_snr·noise`, each
/// refined by an elliptical Gaussian fit with the offset held at the median.
/// Spots closer than one width to a brighter spot are merged into it.
pub fn find_spots_grid<T: Scalar>(grid: &GridView<'_, T>, config: &SpotConfig<T>) -> Vec<Spot<T>> {
    let (cols, rows) = (grid.cols, grid.rows);
    if cols == 0 || rows == 0 || grid.values.len() != cols * rows {
        return Vec::new();
    }
    let (median, noise) = background_stats(grid.values);
    let threshold = median + config.min_snr * noise;

    let mut candidates = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = grid.at(c, r);
            if !(v > threshold) {
                continue;
            }
            let mut is_max = true;
            'scan: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                        continue;
                    }
                    let n = grid.at(cc as usize, rr as usize);
                    // ties go to the earlier pixel in raster order
                    let earlier = (rr, cc) < (r as i64, c as i64);
                    if n > v || (n == v && earlier) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                candidates.push((c, r, v));
            }
        }
    }

    let mut spots: Vec<Spot<T>> = candidates
        .into_iter()
        .map(|(c, r, v)| refine(grid, c, r, v, median, noise, config))
        .collect();
    spots.sort_by(|a, b| b.peak.partial_cmp(&a.peak).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept: Vec<Spot<T>> = Vec::new();
    for s in spots {
        let near = kept.iter().any(|k| {
            let d = ((k.x - s.x) * (k.x - s.x) + (k.y - s.y) * (k.y - s.y)).sqrt();
            d < k.width
        });
        if !near {
            kept.push(s);
        }
    }
    kept
}

/// Half-width estimate in pixels from the half-maximum run through the peak.
fn half_max_sigma<T: Scalar>(grid: &GridView<'_, T>, c: usize, r: usize, peak: T, median: T) -> T {
    let half = median + (peak - median) / T::of(2.0);
    let run = |dc: i64, dr: i64| {
        let mut n = 0usize;
        let (mut cc, mut rr) = (c as i64 + dc, r as i64 + dr);
        while cc >= 0 && rr >= 0 && (cc as usize) < grid.cols && (rr as usize) < grid.rows {
            if grid.at(cc as usize, rr as usize) < half {
                break;
            }
            n += 1;
            cc += dc;
            rr += dr;
        }
        n
    };
    let fwhm_x = (run(1, 0) + run(-1, 0) + 1) as f64;
    let fwhm_y = (run(0, 1) + run(0, -1) + 1) as f64;
    T::of(((fwhm_x + fwhm_y) / 2.0) / 2.3548)
}

fn refine<T: Scalar>(
    grid: &GridView<'_, T>,
    c: usize,
    r: usize,
    peak: T,
    median: T,
    noise: T,
    config: &SpotConfig<T>,
) -> Spot<T> {
    let sigma0 = half_max_sigma(grid, c, r, peak, median).max(T::of(0.5));
    let half = (sigma0 * T::of(1.5)).ceil().to_usize().unwrap_or(config.min_window_half);
    let half = half.clamp(config.min_window_half, config.max_window_half.max(config.min_window_half));
    let c0 = c.saturating_sub(half);
    let c1 = (c + half).min(grid.cols - 1);
    let r0 = r.saturating_sub(half);
    let r1 = (r + half).min(grid.rows - 1);
    let mut points = Vec::with_capacity((c1 - c0 + 1) * (r1 - r0 + 1));
    for rr in r0..=r1 {
        for cc in c0..=c1 {
            points.push((T::of(cc as f64), T::of(rr as f64), grid.at(cc, rr)));
        }
    }
    let problem = Gaussian2d {
        points: &points,
        offset: median,
        max_sigma: T::of((2 * half + 1) as f64),
    };
    let init = [T::of(c as f64), T::of(r as f64), peak - median, sigma0, sigma0];
    let report = minimize(&problem, &init, &LmConfig::default());
    let p = &report.params;
    let inside = (p[0] - T::of(c as f64)).abs() <= T::of(half as f64)
        && (p[1] - T::of(r as f64)).abs() <= T::of(half as f64)
        && p[2] > T::zero();
    let (px, py, amp, sx, sy, ok) = if report.converged() && inside {
        (p[0], p[1], p[2], p[3], p[4], true)
    } else {
        (T::of(c as f64), T::of(r as f64), peak - median, sigma0, sigma0, false)
    };
    let two = T::of(2.0);
    let radius_x = two * sx * grid.pitch[0];
    let radius_y = two * sy * grid.pitch[1];
    Spot {
        x: grid.origin[0] + px * grid.pitch[0],
        y: grid.origin[1] + py * grid.pitch[1],
        amplitude: amp,
        peak,
        radius_x,
        radius_y,
        width: (radius_x * radius_y).sqrt(),
        ellipticity: radius_x.max(radius_y) / radius_x.min(radius_y),
        snr: (peak - median) / noise,
        fit_converged: ok,
    }
}

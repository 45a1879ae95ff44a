//! The fixed 24-point hourly grid shared by the FPCA and scoring stages.

/// Hours of the clock domain (0h, 24h] at which daily curves are resolved:
/// t = 1, 2, ..., 24. Midnight belongs to the preceding day as t = 24.
pub const HOURS: usize = 24;

/// Snap tolerance when matching observation times to the grid (one minute).
pub const SNAP_TOL_HOURS: f64 = 1.0 / 60.0;

/// Grid points in hours.
pub fn points() -> [f64; HOURS] {
    let mut p = [0.0; HOURS];
    for (i, v) in p.iter_mut().enumerate() {
        *v = (i + 1) as f64;
    }
    p
}

/// Trapezoidal quadrature weights on the hourly grid (unit spacing):
/// 1/2 at both ends, 1 elsewhere. Inner products and eigenfunction
/// normalization all use these weights.
pub fn quadrature_weights() -> [f64; HOURS] {
    let mut w = [1.0; HOURS];
    w[0] = 0.5;
    w[HOURS - 1] = 0.5;
    w
}

/// Index of the grid point nearest to `t` if it lies within the snap
/// tolerance, else `None`.
pub fn snap_index(t: f64) -> Option<usize> {
    let nearest = t.round();
    if (t - nearest).abs() > SNAP_TOL_HOURS {
        return None;
    }
    if !(1.0..=HOURS as f64).contains(&nearest) {
        return None;
    }
    Some(nearest as usize - 1)
}

/// Quadrature inner product of two grid-sampled functions.
pub fn inner_product(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), HOURS);
    debug_assert_eq!(b.len(), HOURS);
    let w = quadrature_weights();
    a.iter()
        .zip(b)
        .zip(w.iter())
        .map(|((x, y), wi)| wi * x * y)
        .sum()
}

/// Linear interpolation of a grid-sampled function to an arbitrary time in
/// (0, 24], wrapping across midnight so that t in (0, 1) interpolates
/// between the t = 24 and t = 1 samples.
pub fn interpolate(values: &[f64], t: f64) -> f64 {
    debug_assert_eq!(values.len(), HOURS);
    if t >= 1.0 && t <= HOURS as f64 {
        let lo = (t.floor() as usize).min(HOURS) - 1;
        if lo + 1 >= HOURS {
            return values[HOURS - 1];
        }
        let frac = t - (lo + 1) as f64;
        values[lo] * (1.0 - frac) + values[lo + 1] * frac
    } else {
        // (0, 1): between midnight (t = 24, clock 0) and t = 1.
        let frac = t.clamp(0.0, 1.0);
        values[HOURS - 1] * (1.0 - frac) + values[0] * frac
    }
}

//! Cubic B-spline bases on an interval (clamped) or a circle (cyclic),
//! with derivative evaluation and exact second-derivative Gram matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SmoothError;

const DEGREE: usize = 3;

/// Gauss-Legendre 2-point rule positions on [0, 1]; exact for cubics, so
/// the piecewise-quadratic integrand of the curvature penalty is integrated
/// without error.
const GL2: [f64; 2] = [0.211324865405187118, 0.788675134594812882];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Clamped basis on [a, b]: boundary knots repeated, equally spaced
    /// interior knots, L = interior + 4.
    Clamped,
    /// Periodic basis on (a, b]: L shifted copies of the cardinal cubic
    /// B-spline wrapped around the circle; values and derivatives up to
    /// order 2 are continuous across the seam.
    Cyclic,
}

/// A cubic B-spline basis of dimension `num_basis` on `domain`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    pub kind: BasisKind,
    pub domain: (f64, f64),
    pub num_basis: usize,
    /// Full knot vector (clamped kind only; empty for cyclic).
    pub knots: Vec<f64>,
}

impl SplineBasis {
    /// Build a basis with equally spaced interior knots. Clamped bases need
    /// L >= 4 (L = 4 has no interior knots), cyclic ones L >= 3.
    pub fn new(domain: (f64, f64), num_basis: usize, kind: BasisKind) -> Result<Self, SmoothError> {
        let (a, b) = domain;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(SmoothError::InvalidDimension(format!(
                "degenerate domain [{a}, {b}]"
            )));
        }
        let min = match kind {
            BasisKind::Clamped => 4,
            BasisKind::Cyclic => 3,
        };
        if num_basis < min {
            return Err(SmoothError::InvalidDimension(format!(
                "{kind:?} cubic basis needs at least {min} functions, got {num_basis}"
            )));
        }
        let knots = match kind {
            BasisKind::Clamped => {
                let interior = num_basis - 4;
                let spans = (interior + 1) as f64;
                let mut knots = vec![a; 4];
                for i in 1..=interior {
                    knots.push(a + (b - a) * i as f64 / spans);
                }
                knots.extend_from_slice(&[b; 4]);
                knots
            }
            BasisKind::Cyclic => Vec::new(),
        };
        Ok(Self {
            kind,
            domain,
            num_basis,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn interior_knot_count(&self) -> usize {
        match self.kind {
            BasisKind::Clamped => self.num_basis - 4,
            BasisKind::Cyclic => self.num_basis,
        }
    }

    /// Evaluate all basis functions (or a derivative) at `x`. Out-of-domain
    /// points are clamped to the boundary for the clamped kind and wrapped
    /// for the cyclic kind; the bool reports whether clamping happened.
    pub fn eval_row(&self, x: f64, deriv: usize) -> (Vec<f64>, bool) {
        assert!(deriv <= 2, "only derivatives up to order 2 are supported");
        match self.kind {
            BasisKind::Clamped => self.eval_clamped(x, deriv),
            BasisKind::Cyclic => (self.eval_cyclic(x, deriv), false),
        }
    }

    /// Design matrix rows for a batch of points; returns the number of
    /// points that had to be clamped so callers can warn.
    pub fn design_matrix(&self, points: &[f64]) -> (DMatrix<f64>, usize) {
        let mut m = DMatrix::zeros(points.len(), self.num_basis);
        let mut clamped = 0;
        for (r, &x) in points.iter().enumerate() {
            let (row, c) = self.eval_row(x, 0);
            if c {
                clamped += 1;
            }
            for (j, v) in row.iter().enumerate() {
                m[(r, j)] = *v;
            }
        }
        (m, clamped)
    }

    /// Value of the spline with the given coefficients at `x`.
    pub fn value(&self, coefficients: &[f64], x: f64) -> f64 {
        let (row, _) = self.eval_row(x, 0);
        row.iter().zip(coefficients).map(|(b, c)| b * c).sum()
    }

    /// Exact Gram matrix of second derivatives: S[k][l] = integral of
    /// B_k'' B_l'' over the domain, by 2-point Gauss-Legendre on each knot
    /// span (exact, since second derivatives are piecewise linear).
    pub fn penalty_matrix(&self) -> DMatrix<f64> {
        let l = self.num_basis;
        let mut s = DMatrix::zeros(l, l);
        let mut accumulate = |lo: f64, hi: f64, basis: &Self| {
            let h = hi - lo;
            for &g in &GL2 {
                let x = lo + h * g;
                let (row, _) = basis.eval_row(x, 2);
                let w = 0.5 * h;
                for k in 0..l {
                    if row[k] == 0.0 {
                        continue;
                    }
                    for m in 0..l {
                        s[(k, m)] += w * row[k] * row[m];
                    }
                }
            }
        };
        match self.kind {
            BasisKind::Clamped => {
                for j in DEGREE..self.knots.len() - DEGREE - 1 {
                    let (lo, hi) = (self.knots[j], self.knots[j + 1]);
                    if hi > lo {
                        accumulate(lo, hi, self);
                    }
                }
            }
            BasisKind::Cyclic => {
                let (a, b) = self.domain;
                let delta = (b - a) / self.num_basis as f64;
                for k in 0..self.num_basis {
                    let lo = a + delta * k as f64;
                    accumulate(lo, lo + delta, self);
                }
            }
        }
        // Symmetrize away quadrature round-off.
        let st = s.transpose();
        (s + st) * 0.5
    }

    /// Greville abscissae (clamped only): the coefficients that reproduce
    /// the identity function exactly.
    pub fn greville(&self) -> Vec<f64> {
        assert!(matches!(self.kind, BasisKind::Clamped));
        (0..self.num_basis)
            .map(|i| (self.knots[i + 1] + self.knots[i + 2] + self.knots[i + 3]) / 3.0)
            .collect()
    }

    fn eval_clamped(&self, x: f64, deriv: usize) -> (Vec<f64>, bool) {
        let (a, b) = self.domain;
        let clamped = x < a || x > b;
        let x = x.clamp(a, b);
        let knots = &self.knots;
        let n_knots = knots.len();
        let base_degree = DEGREE - deriv;

        // Degree-0 indicators over all spans; the span containing x is the
        // last j with knots[j] <= x < knots[j+1], with x == b mapped into
        // the final nonempty span.
        let mut span = DEGREE;
        while span + 1 < n_knots - DEGREE - 1 && x >= knots[span + 1] {
            span += 1;
        }
        let mut vals = vec![0.0; n_knots - 1];
        vals[span] = 1.0;

        // Cox-de Boor up to the working degree.
        for k in 1..=base_degree {
            let len = n_knots - 1 - k;
            for i in 0..len {
                let d1 = knots[i + k] - knots[i];
                let d2 = knots[i + k + 1] - knots[i + 1];
                let left = if d1 > 0.0 {
                    (x - knots[i]) / d1 * vals[i]
                } else {
                    0.0
                };
                let right = if d2 > 0.0 {
                    (knots[i + k + 1] - x) / d2 * vals[i + 1]
                } else {
                    0.0
                };
                vals[i] = left + right;
            }
            vals.truncate(len);
        }

        // Derivative recursion lifts degree back up to 3.
        for k in (base_degree + 1)..=DEGREE {
            let len = n_knots - 1 - k;
            for i in 0..len {
                let d1 = knots[i + k] - knots[i];
                let d2 = knots[i + k + 1] - knots[i + 1];
                let left = if d1 > 0.0 { vals[i] / d1 } else { 0.0 };
                let right = if d2 > 0.0 { vals[i + 1] / d2 } else { 0.0 };
                vals[i] = k as f64 * (left - right);
            }
            vals.truncate(len);
        }

        debug_assert_eq!(vals.len(), self.num_basis);
        (vals, clamped)
    }

    fn eval_cyclic(&self, x: f64, deriv: usize) -> Vec<f64> {
        let (a, b) = self.domain;
        let period = b - a;
        let l = self.num_basis;
        let delta = period / l as f64;
        let s = ((x - a).rem_euclid(period)) / delta;
        let scale = delta.powi(deriv as i32).recip();
        (0..l)
            .map(|i| {
                let mut m = (s - i as f64).rem_euclid(l as f64);
                let mut v = 0.0;
                // For L = 3 the 4-wide support wraps onto itself.
                while m < 4.0 {
                    v += cardinal_cubic(m, deriv);
                    m += l as f64;
                }
                v * scale
            })
            .collect()
    }
}

/// The cardinal cubic B-spline on knots 0..4 and its first two derivatives.
fn cardinal_cubic(u: f64, deriv: usize) -> f64 {
    if !(0.0..4.0).contains(&u) {
        return 0.0;
    }
    let seg = u.floor() as usize;
    let w = u - seg as f64;
    match (deriv, seg) {
        (0, 0) => w * w * w / 6.0,
        (0, 1) => ((-3.0 * w * w * w) + 3.0 * w * w + 3.0 * w + 1.0) / 6.0,
        (0, 2) => (3.0 * w * w * w - 6.0 * w * w + 4.0) / 6.0,
        (0, 3) => (1.0 - w).powi(3) / 6.0,
        (1, 0) => 0.5 * w * w,
        (1, 1) => 0.5 * (-3.0 * w * w + 2.0 * w + 1.0),
        (1, 2) => 0.5 * (3.0 * w * w - 4.0 * w),
        (1, 3) => -0.5 * (1.0 - w) * (1.0 - w),
        (2, 0) => w,
        (2, 1) => 1.0 - 3.0 * w,
        (2, 2) => 3.0 * w - 2.0,
        (2, 3) => 1.0 - w,
        _ => unreachable!("derivative order checked by caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn minimal_clamped_basis_has_no_interior_knots() {
        let basis = SplineBasis::new((0.0, 1.0), 4, BasisKind::Clamped).unwrap();
        assert_eq!(basis.interior_knot_count(), 0);
        assert_eq!(basis.knots, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn dimension_floor_is_enforced() {
        assert!(SplineBasis::new((0.0, 1.0), 3, BasisKind::Clamped).is_err());
        assert!(SplineBasis::new((0.0, 1.0), 2, BasisKind::Cyclic).is_err());
        assert!(SplineBasis::new((1.0, 1.0), 8, BasisKind::Clamped).is_err());
    }

    #[test]
    fn partition_of_unity_on_interior_points() {
        for kind in [BasisKind::Clamped, BasisKind::Cyclic] {
            let basis = SplineBasis::new((-4.0, 31.0), 10, kind).unwrap();
            for i in 0..200 {
                let x = -4.0 + 35.0 * (i as f64 + 0.31) / 200.0;
                let (row, clamped) = basis.eval_row(x, 0);
                assert!(!clamped);
                let sum: f64 = row.iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                assert!(row.iter().all(|&v| v >= -1e-14));
            }
        }
    }

    #[test]
    fn central_knot_weights_match_de_boor() {
        // Uniform interior spacing; at an interior knot far from the
        // boundary the nonzero values are 1/6, 4/6, 1/6.
        let basis = SplineBasis::new((0.0, 11.0), 14, BasisKind::Clamped).unwrap();
        let (row, _) = basis.eval_row(5.0, 0);
        let mut nonzero: Vec<f64> = row.iter().copied().filter(|v| v.abs() > 1e-13).collect();
        nonzero.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(nonzero.len(), 3);
        assert_abs_diff_eq!(nonzero[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nonzero[1], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nonzero[2], 4.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn clamping_reuses_boundary_row() {
        let basis = SplineBasis::new((2.0, 9.0), 8, BasisKind::Clamped).unwrap();
        let (below, clamped) = basis.eval_row(1.0, 0);
        assert!(clamped);
        let (at_edge, not_clamped) = basis.eval_row(2.0, 0);
        assert!(!not_clamped);
        assert_eq!(below, at_edge);
    }

    #[test]
    fn cyclic_seam_is_invisible() {
        let basis = SplineBasis::new((0.0, 24.0), 10, BasisKind::Cyclic).unwrap();
        for deriv in 0..=2 {
            let (at24, _) = basis.eval_row(24.0, deriv);
            let (near0, _) = basis.eval_row(1e-12, deriv);
            for (a, b) in at24.iter().zip(&near0) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn penalty_annihilates_constants() {
        for kind in [BasisKind::Clamped, BasisKind::Cyclic] {
            let basis = SplineBasis::new((0.0, 24.0), 10, kind).unwrap();
            let s = basis.penalty_matrix();
            let ones = nalgebra::DVector::from_element(10, 1.0);
            let q = (ones.transpose() * &s * &ones)[(0, 0)];
            assert_abs_diff_eq!(q, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn penalty_annihilates_affine_clamped() {
        let basis = SplineBasis::new((-3.0, 7.0), 9, BasisKind::Clamped).unwrap();
        let coeffs = nalgebra::DVector::from_vec(basis.greville());
        let s = basis.penalty_matrix();
        let q = (coeffs.transpose() * &s * &coeffs)[(0, 0)];
        assert_abs_diff_eq!(q, 0.0, epsilon = 1e-9);
        // Greville coefficients really do reproduce the identity.
        for &x in &[-3.0, -1.2, 0.0, 4.4, 7.0] {
            assert_abs_diff_eq!(basis.value(coeffs.as_slice(), x), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadratic_curvature_integral_is_exact() {
        // f(z) = z^2 on [0, 1]: integral of f''^2 = 4. Marsden's identity
        // gives the exact B-spline coefficients of z^2.
        let basis = SplineBasis::new((0.0, 1.0), 8, BasisKind::Clamped).unwrap();
        let k = &basis.knots;
        let coeffs: Vec<f64> = (0..8)
            .map(|i| (k[i + 1] * k[i + 2] + k[i + 1] * k[i + 3] + k[i + 2] * k[i + 3]) / 3.0)
            .collect();
        for &x in &[0.0, 0.21, 0.5, 0.83, 1.0] {
            assert_abs_diff_eq!(basis.value(&coeffs, x), x * x, epsilon = 1e-12);
        }
        let s = basis.penalty_matrix();
        let c = nalgebra::DVector::from_vec(coeffs);
        let q = (c.transpose() * &s * &c)[(0, 0)];
        assert_abs_diff_eq!(q, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn penalty_is_positive_semidefinite() {
        for kind in [BasisKind::Clamped, BasisKind::Cyclic] {
            let basis = SplineBasis::new((0.0, 24.0), 12, kind).unwrap();
            let s = basis.penalty_matrix();
            let eig = nalgebra::SymmetricEigen::new(s);
            let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            for &ev in eig.eigenvalues.iter() {
                assert!(ev >= -1e-10 * max, "eigenvalue {ev} too negative");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in [BasisKind::Clamped, BasisKind::Cyclic] {
            let basis = SplineBasis::new((0.0, 10.0), 9, kind).unwrap();
            let h = 1e-5;
            for &x in &[1.3, 4.9, 7.2] {
                let (v0m, _) = basis.eval_row(x - h, 0);
                let (v0p, _) = basis.eval_row(x + h, 0);
                let (d1, _) = basis.eval_row(x, 1);
                let (d1m, _) = basis.eval_row(x - h, 1);
                let (d1p, _) = basis.eval_row(x + h, 1);
                let (d2, _) = basis.eval_row(x, 2);
                for j in 0..9 {
                    assert_abs_diff_eq!((v0p[j] - v0m[j]) / (2.0 * h), d1[j], epsilon = 1e-6);
                    assert_abs_diff_eq!((d1p[j] - d1m[j]) / (2.0 * h), d2[j], epsilon = 1e-5);
                }
            }
        }
    }
}

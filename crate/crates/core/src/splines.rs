//! Degree-k B-spline function spaces on clamped knot grids.
//!
//! A [`KnotVector`] holds strictly increasing interior knots `t_0 < … < t_m`
//! padded with `k` replicated knots at each end (the clamped/open convention),
//! which yields exactly `m + k` basis functions whose domain of validity is
//! `[t_0, t_m]`. Basis values come from the local de Boor triangular scheme,
//! derivatives from the standard recurrence
//! `B'_{i,k} = k (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}))`.
//!
//! Out-of-range evaluation points are clamped to `[t_0, t_m]` before
//! evaluation: the spline part of an activation is held at its boundary value
//! outside the grid (and its derivative with respect to x is zero there).
//! Standardized return panels routinely produce a few samples past the grid,
//! so this is the documented out-of-range contract for the whole crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("grid lower bound {lo} must be finite and strictly below upper bound {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("grid needs at least one interval")]
    NoIntervals,
    #[error("spline degree must be at least 1, got {0}")]
    InvalidDegree(usize),
    #[error("interior knots must be finite, strictly increasing, and at least two")]
    InvalidKnots,
    #[error("evaluation point is NaN")]
    NanInput,
    #[error("coefficient count {got} does not match basis count {expected}")]
    CoeffMismatch { expected: usize, got: usize },
    #[error("no samples provided for grid refit")]
    NoSamples,
    #[error("refit normal equations are rank deficient even with the ridge fallback")]
    RankDeficient,
}

/// Clamped knot vector of a degree-k B-spline space.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    interior: Vec<f64>,
    padded: Vec<f64>,
}

/// Coefficients of one spline in a [`KnotVector`]'s basis, one entry per
/// basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCoeffs {
    pub values: Vec<f64>,
}

impl SplineCoeffs {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl KnotVector {
    /// Uniform grid of `num_intervals` equal intervals on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, num_intervals: usize, degree: usize) -> Result<Self, SplineError> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(SplineError::InvalidRange { lo, hi });
        }
        if num_intervals < 1 {
            return Err(SplineError::NoIntervals);
        }
        let n = num_intervals;
        let width = hi - lo;
        let mut interior: Vec<f64> = (0..=n).map(|i| lo + width * i as f64 / n as f64).collect();
        interior[0] = lo;
        interior[n] = hi;
        Self::from_interior(interior, degree)
    }

    /// Build from explicit interior knots; pads each end with `degree`
    /// replicated knots.
    pub fn from_interior(interior: Vec<f64>, degree: usize) -> Result<Self, SplineError> {
        if degree < 1 {
            return Err(SplineError::InvalidDegree(degree));
        }
        if interior.len() < 2 || interior.iter().any(|v| !v.is_finite()) {
            return Err(SplineError::InvalidKnots);
        }
        if interior.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SplineError::InvalidKnots);
        }
        let lo = interior[0];
        let hi = *interior.last().unwrap();
        let mut padded = Vec::with_capacity(interior.len() + 2 * degree);
        padded.extend(std::iter::repeat(lo).take(degree));
        padded.extend_from_slice(&interior);
        padded.extend(std::iter::repeat(hi).take(degree));
        Ok(Self { degree, interior, padded })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_intervals(&self) -> usize {
        self.interior.len() - 1
    }

    /// Number of basis functions: `num_intervals + degree`.
    pub fn basis_count(&self) -> usize {
        self.num_intervals() + self.degree
    }

    /// Domain of validity `[t_0, t_m]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.interior[0], *self.interior.last().unwrap())
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Greville abscissae `g_i = mean(t_{i+1}, …, t_{i+k})` of the padded
    /// vector. Setting `c_i = w * g_i` makes the spline exactly `w * x` on the
    /// domain, which is how affine edges are realized inside a spline space.
    pub fn greville_abscissae(&self) -> Vec<f64> {
        let k = self.degree;
        (0..self.basis_count())
            .map(|i| self.padded[i + 1..i + 1 + k].iter().sum::<f64>() / k as f64)
            .collect()
    }

    fn clamp(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        x.clamp(lo, hi)
    }

    /// Index mu of the knot span containing the (clamped) point, with
    /// `padded[mu] <= x < padded[mu+1]`; the right endpoint maps to the last
    /// non-degenerate interval.
    fn find_span(&self, x: f64) -> usize {
        let m = self.num_intervals();
        let idx = self.interior.partition_point(|&t| t <= x);
        self.degree + idx.saturating_sub(1).min(m - 1)
    }

    /// Local de Boor triangular scheme: the `deg + 1` possibly nonzero basis
    /// values of the given degree at x, for indices `span-deg ..= span`.
    fn local_basis(&self, span: usize, x: f64, deg: usize) -> Vec<f64> {
        let t = &self.padded;
        let mut n = vec![0.0; deg + 1];
        n[0] = 1.0;
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        for j in 1..=deg {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let term = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * term;
                saved = left[j - r] * term;
            }
            n[j] = saved;
        }
        n
    }

    /// All basis function values `B_{i,k}(x)`, clamped evaluation.
    pub fn basis_values(&self, x: f64) -> Result<Vec<f64>, SplineError> {
        if x.is_nan() {
            return Err(SplineError::NanInput);
        }
        let xc = self.clamp(x);
        let span = self.find_span(xc);
        let local = self.local_basis(span, xc, self.degree);
        let mut out = vec![0.0; self.basis_count()];
        for (offset, v) in local.into_iter().enumerate() {
            out[span - self.degree + offset] = v;
        }
        Ok(out)
    }

    /// All basis derivatives `dB_{i,k}/dx`. Zero outside the domain, matching
    /// the clamped extension; at the boundary the interior one-sided
    /// derivative is returned.
    pub fn basis_derivatives(&self, x: f64) -> Result<Vec<f64>, SplineError> {
        if x.is_nan() {
            return Err(SplineError::NanInput);
        }
        let mut out = vec![0.0; self.basis_count()];
        let (lo, hi) = self.domain();
        if x < lo || x > hi {
            return Ok(out);
        }
        let k = self.degree;
        let t = &self.padded;
        let span = self.find_span(x);
        // Nonzero degree-(k-1) values sit at indices span-(k-1) ..= span.
        let lower = self.local_basis(span, x, k - 1);
        let lower_at = |i: usize| -> f64 {
            let first = span + 1 - k;
            if i >= first && i <= span {
                lower[i - first]
            } else {
                0.0
            }
        };
        for offset in 0..=k {
            let i = span - k + offset;
            let d1 = t[i + k] - t[i];
            let d2 = t[i + k + 1] - t[i + 1];
            let term1 = if d1 != 0.0 { lower_at(i) / d1 } else { 0.0 };
            let term2 = if d2 != 0.0 { lower_at(i + 1) / d2 } else { 0.0 };
            out[i] = k as f64 * (term1 - term2);
        }
        Ok(out)
    }
}

/// Evaluate `sum_l c_l B_{l,k}(x)` (clamped).
pub fn spline_value(kv: &KnotVector, coeffs: &SplineCoeffs, x: f64) -> Result<f64, SplineError> {
    if coeffs.len() != kv.basis_count() {
        return Err(SplineError::CoeffMismatch { expected: kv.basis_count(), got: coeffs.len() });
    }
    if x.is_nan() {
        return Err(SplineError::NanInput);
    }
    let xc = kv.clamp(x);
    let span = kv.find_span(xc);
    let local = kv.local_basis(span, xc, kv.degree);
    let first = span - kv.degree;
    Ok(local.iter().enumerate().map(|(o, b)| b * coeffs.values[first + o]).sum())
}

/// Derivative of the clamped spline with respect to x.
pub fn spline_derivative(kv: &KnotVector, coeffs: &SplineCoeffs, x: f64) -> Result<f64, SplineError> {
    if coeffs.len() != kv.basis_count() {
        return Err(SplineError::CoeffMismatch { expected: kv.basis_count(), got: coeffs.len() });
    }
    let db = kv.basis_derivatives(x)?;
    Ok(db.iter().zip(&coeffs.values).map(|(d, c)| d * c).sum())
}

/// Refit a spline onto a new grid by least squares over the given sample
/// points: the returned coefficients minimize
/// `sum_s (spline_new(s) - spline_old(s))^2`.
///
/// Solved via normal equations; if the Gram matrix is not positive definite
/// (fewer effective samples than basis functions), a ridge term of 1e-8 is
/// added before giving up.
pub fn refine_grid(
    kv_old: &KnotVector,
    coeffs_old: &SplineCoeffs,
    kv_new: &KnotVector,
    samples: &[f64],
) -> Result<SplineCoeffs, SplineError> {
    if samples.is_empty() {
        return Err(SplineError::NoSamples);
    }
    if coeffs_old.len() != kv_old.basis_count() {
        return Err(SplineError::CoeffMismatch {
            expected: kv_old.basis_count(),
            got: coeffs_old.len(),
        });
    }
    let n = kv_new.basis_count();
    let k = kv_new.degree;
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for &s in samples {
        let y = spline_value(kv_old, coeffs_old, s)?;
        let xc = kv_new.clamp(s);
        let span = kv_new.find_span(xc);
        let local = kv_new.local_basis(span, xc, k);
        let first = span - k;
        for (a, &ba) in local.iter().enumerate() {
            let ia = first + a;
            rhs[ia] += ba * y;
            for (b, &bb) in local.iter().enumerate() {
                gram[ia * n + first + b] += ba * bb;
            }
        }
    }
    match cholesky_solve(&gram, &rhs, n) {
        Some(c) => Ok(SplineCoeffs::new(c)),
        None => {
            let mut ridged = gram;
            for i in 0..n {
                ridged[i * n + i] += 1e-8;
            }
            cholesky_solve(&ridged, &rhs, n)
                .map(SplineCoeffs::new)
                .ok_or(SplineError::RankDeficient)
        }
    }
}

/// Cholesky solve of a symmetric positive definite system stored row-major.
/// Returns None when the factorization breaks down.
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for p in 0..j {
                sum -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for p in 0..i {
            sum -= l[i * n + p] * y[p];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for p in i + 1..n {
            sum -= l[p * n + i] * x[p];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Textbook Cox-de Boor recursion, written naively as an independent
    /// oracle for the triangular-scheme implementation. Uses the half-open
    /// convention, so only interior points are compared.
    fn cox_de_boor(t: &[f64], i: usize, k: usize, x: f64) -> f64 {
        if k == 0 {
            return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = t[i + k] - t[i];
        if d1 != 0.0 {
            v += (x - t[i]) / d1 * cox_de_boor(t, i, k - 1, x);
        }
        let d2 = t[i + k + 1] - t[i + 1];
        if d2 != 0.0 {
            v += (t[i + k + 1] - x) / d2 * cox_de_boor(t, i + 1, k - 1, x);
        }
        v
    }

    /// Dense Gaussian elimination with partial pivoting, test-only oracle for
    /// small interpolation systems.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut sum = b[row];
            for c in row + 1..n {
                sum -= a[row][c] * x[c];
            }
            x[row] = sum / a[row][row];
        }
        x
    }

    #[test]
    fn uniform_grid_counts_and_spacing() {
        let kv = KnotVector::uniform(0.0, 1.0, 1, 1).unwrap();
        assert_eq!(kv.basis_count(), 2);
        assert_eq!(kv.interior_knots(), &[0.0, 1.0]);

        let kv = KnotVector::uniform(-4.0, 4.0, 3, 3).unwrap();
        assert_eq!(kv.basis_count(), 6);
        assert_eq!(kv.num_intervals(), 3);

        let kv = KnotVector::uniform(0.0, 1.0, 4, 3).unwrap();
        assert_eq!(kv.basis_count(), 7);
        assert_eq!(kv.interior_knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn uniform_grid_rejects_bad_input() {
        assert!(matches!(KnotVector::uniform(1.0, 1.0, 3, 3), Err(SplineError::InvalidRange { .. })));
        assert!(matches!(KnotVector::uniform(2.0, 1.0, 3, 3), Err(SplineError::InvalidRange { .. })));
        assert!(matches!(KnotVector::uniform(0.0, 1.0, 0, 3), Err(SplineError::NoIntervals)));
        assert!(matches!(KnotVector::uniform(0.0, 1.0, 3, 0), Err(SplineError::InvalidDegree(0))));
        assert!(matches!(
            KnotVector::uniform(f64::NAN, 1.0, 3, 3),
            Err(SplineError::InvalidRange { .. })
        ));
    }

    #[test]
    fn degree_one_hat_functions() {
        let kv = KnotVector::uniform(0.0, 1.0, 1, 1).unwrap();
        let b = kv.basis_values(0.5).unwrap();
        assert_eq!(b.len(), 2);
        assert_abs_diff_eq!(b[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.5, epsilon = 1e-15);

        let d = kv.basis_derivatives(0.5).unwrap();
        assert_abs_diff_eq!(d[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn partition_of_unity_cubic() {
        let kv = KnotVector::uniform(-4.0, 4.0, 5, 3).unwrap();
        for i in 0..=80 {
            let x = -4.0 + 0.1 * i as f64;
            let b = kv.basis_values(x).unwrap();
            let sum: f64 = b.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {} at x={}", sum, x);
            assert!(b.iter().all(|&v| v >= 0.0), "negative basis at x={}", x);
        }
    }

    #[test]
    fn matches_naive_cox_de_boor_oracle() {
        let kv = KnotVector::from_interior(vec![0.0, 0.5, 1.0], 3).unwrap();
        let t = &kv.padded;
        for &x in &[0.05, 0.25, 0.4, 0.6, 0.73, 0.95] {
            let b = kv.basis_values(x).unwrap();
            for i in 0..kv.basis_count() {
                let expect = cox_de_boor(t, i, 3, x);
                assert!((b[i] - expect).abs() < 1e-13, "B_{i} at x={x}: {} vs oracle {}", b[i], expect);
            }
        }
    }

    #[test]
    fn clamping_outside_domain() {
        let kv = KnotVector::uniform(-1.0, 1.0, 4, 3).unwrap();
        assert_eq!(kv.basis_values(5.0).unwrap(), kv.basis_values(1.0).unwrap());
        assert_eq!(kv.basis_values(-7.0).unwrap(), kv.basis_values(-1.0).unwrap());
        // Clamped extension is flat outside the domain.
        assert!(kv.basis_derivatives(5.0).unwrap().iter().all(|&d| d == 0.0));
        assert!(matches!(kv.basis_values(f64::NAN), Err(SplineError::NanInput)));
    }

    #[test]
    fn derivative_sums_to_zero() {
        for degree in 1..=4 {
            let kv = KnotVector::uniform(-2.0, 3.0, 6, degree).unwrap();
            for i in 1..20 {
                let x = -2.0 + 5.0 * i as f64 / 20.0;
                let sum: f64 = kv.basis_derivatives(x).unwrap().iter().sum();
                assert!(sum.abs() < 1e-10, "degree {} x {} sum {}", degree, x, sum);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let kv = KnotVector::uniform(-4.0, 4.0, 5, 3).unwrap();
        let h = 1e-6;
        for i in 0..100 {
            let x = -3.9 + 7.8 * i as f64 / 99.0;
            let d = kv.basis_derivatives(x).unwrap();
            let up = kv.basis_values(x + h).unwrap();
            let dn = kv.basis_values(x - h).unwrap();
            for j in 0..kv.basis_count() {
                let fd = (up[j] - dn[j]) / (2.0 * h);
                let denom = fd.abs().max(d[j].abs()).max(1e-3);
                assert!(
                    (d[j] - fd).abs() / denom < 1e-5,
                    "basis {} at x={}: analytic {} vs fd {}",
                    j, x, d[j], fd
                );
            }
        }
    }

    #[test]
    fn local_support_window() {
        let kv = KnotVector::uniform(0.0, 1.0, 5, 3).unwrap();
        let k = kv.degree();
        for i in 0..kv.basis_count() {
            let lo = kv.padded[i];
            let hi = kv.padded[i + k + 1];
            for j in 0..=100 {
                let x = j as f64 / 100.0;
                let v = kv.basis_values(x).unwrap()[i];
                if x < lo - 1e-12 || x > hi + 1e-12 {
                    assert_eq!(v, 0.0, "B_{} nonzero at x={} outside [{}, {}]", i, x, lo, hi);
                }
            }
        }
    }

    #[test]
    fn spline_value_trivials() {
        let kv = KnotVector::uniform(-1.0, 2.0, 4, 3).unwrap();
        let ones = SplineCoeffs::new(vec![1.0; kv.basis_count()]);
        let zeros = SplineCoeffs::zeros(kv.basis_count());
        for i in 0..=30 {
            let x = -1.0 + 3.0 * i as f64 / 30.0;
            assert_abs_diff_eq!(spline_value(&kv, &ones, x).unwrap(), 1.0, epsilon = 1e-12);
            assert_eq!(spline_value(&kv, &zeros, x).unwrap(), 0.0);
        }
        let short = SplineCoeffs::zeros(2);
        assert!(matches!(spline_value(&kv, &short, 0.0), Err(SplineError::CoeffMismatch { .. })));
    }

    #[test]
    fn greville_interpolation_reproduces_identity() {
        let kv = KnotVector::uniform(-2.0, 2.0, 5, 3).unwrap();
        let g = kv.greville_abscissae();
        // Oracle: solve the collocation system B(g_i) c = g_i directly.
        let a: Vec<Vec<f64>> = g.iter().map(|&x| kv.basis_values(x).unwrap()).collect();
        let c = gauss_solve(a, g.clone());
        let coeffs = SplineCoeffs::new(c);
        for i in 0..=40 {
            let x = -2.0 + 4.0 * i as f64 / 40.0;
            assert_abs_diff_eq!(spline_value(&kv, &coeffs, x).unwrap(), x, epsilon = 1e-10);
        }
        // The solved coefficients are the Greville abscissae themselves.
        for (ci, gi) in coeffs.values.iter().zip(&g) {
            assert_abs_diff_eq!(*ci, *gi, epsilon = 1e-10);
        }
    }

    #[test]
    fn refine_preserves_constant() {
        let old = KnotVector::uniform(0.0, 1.0, 3, 3).unwrap();
        let new = KnotVector::uniform(0.0, 1.0, 5, 3).unwrap();
        let c_old = SplineCoeffs::new(vec![1.0; old.basis_count()]);
        let samples: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let c_new = refine_grid(&old, &c_old, &new, &samples).unwrap();
        for &s in &samples {
            assert_abs_diff_eq!(spline_value(&new, &c_new, s).unwrap(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn refine_preserves_linear() {
        let old = KnotVector::uniform(-1.0, 1.0, 3, 3).unwrap();
        let new = KnotVector::uniform(-1.0, 1.0, 5, 3).unwrap();
        let c_old = SplineCoeffs::new(old.greville_abscissae());
        let samples: Vec<f64> = (0..=64).map(|i| -1.0 + 2.0 * i as f64 / 64.0).collect();
        let c_new = refine_grid(&old, &c_old, &new, &samples).unwrap();
        for &s in &samples {
            assert_abs_diff_eq!(spline_value(&new, &c_new, s).unwrap(), s, epsilon = 1e-8);
        }
    }

    #[test]
    fn refine_beats_constant_fit() {
        let old = KnotVector::uniform(-1.0, 1.0, 5, 3).unwrap();
        let new = KnotVector::uniform(-1.0, 1.0, 10, 3).unwrap();
        // A fixed, wiggly coefficient pattern.
        let c_old = SplineCoeffs::new(
            (0..old.basis_count()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.37).collect(),
        );
        let samples: Vec<f64> = (0..512).map(|i| -1.0 + 2.0 * i as f64 / 511.0).collect();
        let c_new = refine_grid(&old, &c_old, &new, &samples).unwrap();
        let targets: Vec<f64> =
            samples.iter().map(|&s| spline_value(&old, &c_old, s).unwrap()).collect();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let mut resid = 0.0;
        let mut resid_const = 0.0;
        for (&s, &y) in samples.iter().zip(&targets) {
            resid += (spline_value(&new, &c_new, s).unwrap() - y).powi(2);
            resid_const += (mean - y).powi(2);
        }
        assert!(resid < resid_const, "refit residual {} not below constant fit {}", resid, resid_const);
    }

    #[test]
    fn refine_rejects_empty_samples_and_uses_ridge() {
        let old = KnotVector::uniform(0.0, 1.0, 3, 3).unwrap();
        let new = KnotVector::uniform(0.0, 1.0, 5, 3).unwrap();
        let c_old = SplineCoeffs::new(vec![1.0; old.basis_count()]);
        assert!(matches!(refine_grid(&old, &c_old, &new, &[]), Err(SplineError::NoSamples)));
        // Two samples cannot determine 8 coefficients; the ridge fallback
        // still returns a least-norm-ish fit that matches at the samples.
        let c_new = refine_grid(&old, &c_old, &new, &[0.2, 0.8]).unwrap();
        assert_abs_diff_eq!(spline_value(&new, &c_new, 0.2).unwrap(), 1.0, epsilon = 1e-4);
    }
}

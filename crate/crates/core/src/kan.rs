//! Kolmogorov-Arnold layers: one learnable univariate function per edge,
//! nodes that merely sum their inputs.
//!
//! Each edge computes `w_b * silu(x) + w_s * sum_l c_l B_{l,k}(x)` over a knot
//! vector shared by the whole layer. An affine-constrained mode replaces every
//! edge with `x -> slope * x`, which turns the layer into plain matrix
//! multiplication; that mode is what makes the autoencoder collapse to
//! classical PCA.
//!
//! Gradients are fully analytic (no autodiff): the spline part differentiates
//! through the B-spline derivative recurrence, the base part through the
//! closed-form SiLU derivative. Forward and backward are pure functions of
//! layer + input, so batches can be evaluated in any order; the training loop
//! in this crate accumulates sample gradients sequentially for bitwise
//! reproducibility.

use crate::splines::{spline_value, KnotVector, SplineCoeffs, SplineError};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KanError {
    #[error("input length {got} does not match layer input dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input at index {index}")]
    NonFiniteInput { index: usize },
    #[error("cache does not match this layer (wrong mode or stale grid)")]
    CacheMismatch,
    #[error("gradient output length {got} does not match layer output dimension {expected}")]
    OutputMismatch { expected: usize, got: usize },
    #[error("empty activation sample set for grid update")]
    EmptyActivations,
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// SiLU base activation `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Closed-form SiLU derivative `sigmoid(x) * (1 + x * (1 - sigmoid(x)))`.
pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Learnable univariate function on one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeActivation {
    pub base_weight: f64,
    pub spline_weight: f64,
    pub coeffs: SplineCoeffs,
    /// Slope of `x -> slope * x`; only read in affine mode.
    pub affine_slope: f64,
}

impl EdgeActivation {
    fn zeroed(basis_count: usize) -> Self {
        Self {
            base_weight: 0.0,
            spline_weight: 0.0,
            coeffs: SplineCoeffs::zeros(basis_count),
            affine_slope: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    Spline,
    Affine,
}

/// One KAN layer: an `n_out x n_in` grid of edge activations over one shared
/// knot vector, mapping `y_j = sum_i phi_ji(x_i)`.
#[derive(Debug, Clone)]
pub struct KanLayer {
    n_in: usize,
    n_out: usize,
    mode: LayerMode,
    knots: KnotVector,
    /// Row-major: edge (j, i) lives at `j * n_in + i`.
    edges: Vec<EdgeActivation>,
}

/// Per-sample evaluation record consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Array1<f64>,
    spline: Option<SplineCache>,
}

#[derive(Debug, Clone)]
struct SplineCache {
    silu_vals: Array1<f64>,
    silu_primes: Array1<f64>,
    /// n_in x basis_count
    basis: Array2<f64>,
    dbasis: Array2<f64>,
}

/// Gradient of `sum_j dy_j * y_j` with respect to every layer parameter and
/// to the input. Shapes mirror the layer's parameter shapes exactly: spline
/// layers fill the base/spline/coefficient blocks, affine layers the slope
/// block.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub d_base_weight: Array2<f64>,
    pub d_spline_weight: Array2<f64>,
    /// Edge-major, matching the layer's edge order.
    pub d_coeffs: Vec<Vec<f64>>,
    pub d_slope: Array2<f64>,
    pub d_input: Array1<f64>,
}

impl LayerGradients {
    pub fn zeros(layer: &KanLayer) -> Self {
        let (o, i) = (layer.n_out, layer.n_in);
        match layer.mode {
            LayerMode::Spline => Self {
                d_base_weight: Array2::zeros((o, i)),
                d_spline_weight: Array2::zeros((o, i)),
                d_coeffs: vec![vec![0.0; layer.knots.basis_count()]; o * i],
                d_slope: Array2::zeros((0, 0)),
                d_input: Array1::zeros(i),
            },
            LayerMode::Affine => Self {
                d_base_weight: Array2::zeros((0, 0)),
                d_spline_weight: Array2::zeros((0, 0)),
                d_coeffs: Vec::new(),
                d_slope: Array2::zeros((o, i)),
                d_input: Array1::zeros(i),
            },
        }
    }
}

impl KanLayer {
    /// Fresh spline-mode layer: `w_b = w_s = 1`, coefficients drawn uniformly
    /// from `[-0.1, 0.1]`.
    pub fn new_spline<R: Rng>(n_in: usize, n_out: usize, knots: KnotVector, rng: &mut R) -> Self {
        let nb = knots.basis_count();
        let edges = (0..n_in * n_out)
            .map(|_| EdgeActivation {
                base_weight: 1.0,
                spline_weight: 1.0,
                coeffs: SplineCoeffs::new((0..nb).map(|_| rng.random_range(-0.1..0.1)).collect()),
                affine_slope: 0.0,
            })
            .collect();
        Self { n_in, n_out, mode: LayerMode::Spline, knots, edges }
    }

    /// Fresh affine-mode layer with slopes drawn uniformly from
    /// `[-1/sqrt(n_in), 1/sqrt(n_in)]`.
    pub fn new_affine<R: Rng>(n_in: usize, n_out: usize, knots: KnotVector, rng: &mut R) -> Self {
        let scale = 1.0 / (n_in as f64).sqrt();
        let nb = knots.basis_count();
        let edges = (0..n_in * n_out)
            .map(|_| EdgeActivation {
                affine_slope: rng.random_range(-scale..scale),
                ..EdgeActivation::zeroed(nb)
            })
            .collect();
        Self { n_in, n_out, mode: LayerMode::Affine, knots, edges }
    }

    /// Layer from explicit edges; used by serialization and initializers.
    pub fn from_parts(
        n_in: usize,
        n_out: usize,
        mode: LayerMode,
        knots: KnotVector,
        edges: Vec<EdgeActivation>,
    ) -> Result<Self, KanError> {
        if edges.len() != n_in * n_out {
            return Err(KanError::DimensionMismatch { expected: n_in * n_out, got: edges.len() });
        }
        let nb = knots.basis_count();
        if mode == LayerMode::Spline && edges.iter().any(|e| e.coeffs.len() != nb) {
            return Err(KanError::CacheMismatch);
        }
        Ok(Self { n_in, n_out, mode, knots, edges })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn edge(&self, j: usize, i: usize) -> &EdgeActivation {
        &self.edges[j * self.n_in + i]
    }

    pub fn edge_mut(&mut self, j: usize, i: usize) -> &mut EdgeActivation {
        &mut self.edges[j * self.n_in + i]
    }

    pub fn edges(&self) -> &[EdgeActivation] {
        &self.edges
    }

    /// Evaluate one edge function at a point.
    pub fn edge_value(&self, j: usize, i: usize, x: f64) -> Result<f64, KanError> {
        let e = self.edge(j, i);
        Ok(match self.mode {
            LayerMode::Affine => e.affine_slope * x,
            LayerMode::Spline => {
                e.base_weight * silu(x) + e.spline_weight * spline_value(&self.knots, &e.coeffs, x)?
            }
        })
    }

    /// Slope matrix of an affine-mode layer.
    pub fn slope_matrix(&self) -> Option<Array2<f64>> {
        if self.mode != LayerMode::Affine {
            return None;
        }
        Some(Array2::from_shape_fn((self.n_out, self.n_in), |(j, i)| self.edge(j, i).affine_slope))
    }

    /// Forward pass for one sample: `y_j = sum_i phi_ji(x_i)` plus the cache
    /// the backward pass needs.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, LayerCache), KanError> {
        if x.len() != self.n_in {
            return Err(KanError::DimensionMismatch { expected: self.n_in, got: x.len() });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(KanError::NonFiniteInput { index });
        }
        match self.mode {
            LayerMode::Affine => {
                let mut y = Array1::zeros(self.n_out);
                for j in 0..self.n_out {
                    let mut acc = 0.0;
                    for i in 0..self.n_in {
                        acc += self.edge(j, i).affine_slope * x[i];
                    }
                    y[j] = acc;
                }
                Ok((y, LayerCache { input: x.to_owned(), spline: None }))
            }
            LayerMode::Spline => {
                let nb = self.knots.basis_count();
                let mut basis = Array2::zeros((self.n_in, nb));
                let mut dbasis = Array2::zeros((self.n_in, nb));
                let mut silu_vals = Array1::zeros(self.n_in);
                let mut silu_primes = Array1::zeros(self.n_in);
                for i in 0..self.n_in {
                    let b = self.knots.basis_values(x[i])?;
                    let db = self.knots.basis_derivatives(x[i])?;
                    for l in 0..nb {
                        basis[[i, l]] = b[l];
                        dbasis[[i, l]] = db[l];
                    }
                    silu_vals[i] = silu(x[i]);
                    silu_primes[i] = silu_prime(x[i]);
                }
                let mut y = Array1::zeros(self.n_out);
                for j in 0..self.n_out {
                    let mut acc = 0.0;
                    for i in 0..self.n_in {
                        let e = self.edge(j, i);
                        let mut sv = 0.0;
                        for (l, &c) in e.coeffs.values.iter().enumerate() {
                            sv += c * basis[[i, l]];
                        }
                        acc += e.base_weight * silu_vals[i] + e.spline_weight * sv;
                    }
                    y[j] = acc;
                }
                let cache = LayerCache {
                    input: x.to_owned(),
                    spline: Some(SplineCache { silu_vals, silu_primes, basis, dbasis }),
                };
                Ok((y, cache))
            }
        }
    }

    /// Backward pass for one sample; allocates fresh gradients.
    pub fn backward(&self, cache: &LayerCache, dy: ArrayView1<f64>) -> Result<LayerGradients, KanError> {
        let mut grads = LayerGradients::zeros(self);
        let d_input = self.backward_into(cache, dy, &mut grads)?;
        grads.d_input = d_input;
        Ok(grads)
    }

    /// Backward pass that accumulates parameter gradients into `grads` and
    /// returns the input gradient for this sample. Used by the training loop
    /// so a whole batch shares one gradient buffer.
    pub fn backward_into(
        &self,
        cache: &LayerCache,
        dy: ArrayView1<f64>,
        grads: &mut LayerGradients,
    ) -> Result<Array1<f64>, KanError> {
        if dy.len() != self.n_out {
            return Err(KanError::OutputMismatch { expected: self.n_out, got: dy.len() });
        }
        if cache.input.len() != self.n_in {
            return Err(KanError::CacheMismatch);
        }
        let mut d_input = Array1::zeros(self.n_in);
        match self.mode {
            LayerMode::Affine => {
                if cache.spline.is_some() || grads.d_slope.dim() != (self.n_out, self.n_in) {
                    return Err(KanError::CacheMismatch);
                }
                for j in 0..self.n_out {
                    let dyj = dy[j];
                    for i in 0..self.n_in {
                        grads.d_slope[[j, i]] += dyj * cache.input[i];
                        d_input[i] += self.edge(j, i).affine_slope * dyj;
                    }
                }
            }
            LayerMode::Spline => {
                let sc = cache.spline.as_ref().ok_or(KanError::CacheMismatch)?;
                let nb = self.knots.basis_count();
                if sc.basis.dim() != (self.n_in, nb)
                    || grads.d_base_weight.dim() != (self.n_out, self.n_in)
                    || grads.d_coeffs.len() != self.edges.len()
                {
                    return Err(KanError::CacheMismatch);
                }
                for j in 0..self.n_out {
                    let dyj = dy[j];
                    for i in 0..self.n_in {
                        let e = self.edge(j, i);
                        let mut sval = 0.0;
                        let mut sderiv = 0.0;
                        for (l, &c) in e.coeffs.values.iter().enumerate() {
                            sval += c * sc.basis[[i, l]];
                            sderiv += c * sc.dbasis[[i, l]];
                        }
                        grads.d_base_weight[[j, i]] += dyj * sc.silu_vals[i];
                        grads.d_spline_weight[[j, i]] += dyj * sval;
                        let dc = &mut grads.d_coeffs[j * self.n_in + i];
                        let w = dyj * e.spline_weight;
                        for l in 0..nb {
                            dc[l] += w * sc.basis[[i, l]];
                        }
                        d_input[i] +=
                            dyj * (e.base_weight * sc.silu_primes[i] + e.spline_weight * sderiv);
                    }
                }
            }
        }
        Ok(d_input)
    }

    /// Affine-constrained copy of this layer: every edge becomes
    /// `x -> slope * x`, with the slope taken from a least-squares affine fit
    /// of the existing edge function over the knot domain (intercept fitted
    /// and discarded; the output bias is fixed at zero).
    pub fn constrain_affine(&self) -> KanLayer {
        if self.mode == LayerMode::Affine {
            return self.clone();
        }
        let (lo, hi) = self.knots.domain();
        let n_pts = 101;
        let xs: Vec<f64> =
            (0..n_pts).map(|i| lo + (hi - lo) * i as f64 / (n_pts - 1) as f64).collect();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sx: f64 = xs.iter().sum();
        let n = n_pts as f64;
        let det = sxx * n - sx * sx;
        let nb = self.knots.basis_count();
        let mut edges = Vec::with_capacity(self.edges.len());
        for j in 0..self.n_out {
            for i in 0..self.n_in {
                let mut sxy = 0.0;
                let mut sy = 0.0;
                for &x in &xs {
                    let y = self.edge_value(j, i, x).expect("in-domain edge evaluation");
                    sxy += x * y;
                    sy += y;
                }
                let slope = (n * sxy - sx * sy) / det;
                edges.push(EdgeActivation { affine_slope: slope, ..EdgeActivation::zeroed(nb) });
            }
        }
        KanLayer {
            n_in: self.n_in,
            n_out: self.n_out,
            mode: LayerMode::Affine,
            knots: self.knots.clone(),
            edges,
        }
    }

    /// New layer whose grid spans the observed activation range (min/max with
    /// a 10% relative margin) with `num_intervals` intervals; every edge
    /// spline is refit onto the new grid by least squares over the samples.
    ///
    /// The activation rows must come from the training split only; the
    /// pipeline's `TrainOnlyView` is the intended source.
    pub fn update_grid_range(
        &self,
        activations: ArrayView2<f64>,
        num_intervals: usize,
    ) -> Result<KanLayer, KanError> {
        if activations.nrows() == 0 {
            return Err(KanError::EmptyActivations);
        }
        if activations.ncols() != self.n_in {
            return Err(KanError::DimensionMismatch {
                expected: self.n_in,
                got: activations.ncols(),
            });
        }
        if self.mode == LayerMode::Affine {
            return Ok(self.clone());
        }
        let knots = grid_for_samples(activations, num_intervals, self.knots.degree())?;
        let mut edges = Vec::with_capacity(self.edges.len());
        for j in 0..self.n_out {
            for i in 0..self.n_in {
                let samples: Vec<f64> = activations.column(i).to_vec();
                let e = self.edge(j, i);
                let coeffs = crate::splines::refine_grid(&self.knots, &e.coeffs, &knots, &samples)?;
                edges.push(EdgeActivation {
                    base_weight: e.base_weight,
                    spline_weight: e.spline_weight,
                    coeffs,
                    affine_slope: e.affine_slope,
                });
            }
        }
        Ok(KanLayer { n_in: self.n_in, n_out: self.n_out, mode: self.mode, knots, edges })
    }
}

/// Knot vector spanning the observed samples with a 10% relative margin;
/// a degenerate (zero-width) range falls back to `[-1, 1]`.
pub fn grid_for_samples(
    samples: ArrayView2<f64>,
    num_intervals: usize,
    degree: usize,
) -> Result<KnotVector, KanError> {
    if samples.is_empty() {
        return Err(KanError::EmptyActivations);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in samples.iter() {
        if !v.is_finite() {
            return Err(KanError::NonFiniteInput { index: 0 });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let width = hi - lo;
    let (lo, hi) = if width > 1e-9 {
        (lo - 0.1 * width, hi + 0.1 * width)
    } else {
        (-1.0, 1.0)
    };
    Ok(KnotVector::uniform(lo, hi, num_intervals, degree)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cubic_knots(lo: f64, hi: f64, intervals: usize) -> KnotVector {
        KnotVector::uniform(lo, hi, intervals, 3).unwrap()
    }

    fn affine_from_matrix(w: &Array2<f64>) -> KanLayer {
        let (n_out, n_in) = w.dim();
        let knots = cubic_knots(-1.0, 1.0, 3);
        let nb = knots.basis_count();
        let edges = (0..n_out)
            .flat_map(|j| {
                (0..n_in).map(move |i| (j, i))
            })
            .map(|(j, i)| EdgeActivation { affine_slope: w[[j, i]], ..EdgeActivation::zeroed(nb) })
            .collect();
        KanLayer::from_parts(n_in, n_out, LayerMode::Affine, knots, edges).unwrap()
    }

    #[test]
    fn silu_values_and_derivative() {
        assert_eq!(silu(0.0), 0.0);
        assert_abs_diff_eq!(silu_prime(0.0), 0.5, epsilon = 1e-15);
        let h = 1e-6;
        let x = 1.7;
        let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
        assert!((silu_prime(x) - fd).abs() / fd.abs() < 1e-6);
        // Large-|x| stability.
        assert_abs_diff_eq!(silu(50.0), 50.0, epsilon = 1e-9);
        assert!(silu(-50.0).abs() < 1e-9);
    }

    #[test]
    fn affine_forward_is_matrix_multiplication() {
        let layer = affine_from_matrix(&Array2::eye(3));
        let x = array![1.0, 2.0, 3.0];
        let (y, _) = layer.forward(x.view()).unwrap();
        assert_eq!(y, x);

        // A concrete 3-input, 3-node slope matrix; output must equal Wx.
        let w = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4], [-0.9, 0.8, 1.5]];
        let layer = affine_from_matrix(&w);
        let x = array![0.4, -1.1, 2.2];
        let (y, _) = layer.forward(x.view()).unwrap();
        let expect = w.dot(&x);
        for j in 0..3 {
            assert_abs_diff_eq!(y[j], expect[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let layer = affine_from_matrix(&Array2::eye(3));
        assert!(matches!(
            layer.forward(array![1.0, 2.0].view()),
            Err(KanError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            layer.forward(array![1.0, f64::NAN, 0.0].view()),
            Err(KanError::NonFiniteInput { index: 1 })
        ));
    }

    #[test]
    fn spline_partition_of_unity_sums_over_edges() {
        // w_b = 0, w_s = 1, all coefficients 1: each edge evaluates to 1 on
        // the interior, so each output equals n_in.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let knots = cubic_knots(-2.0, 2.0, 5);
        let mut layer = KanLayer::new_spline(4, 2, knots, &mut rng);
        for j in 0..2 {
            for i in 0..4 {
                let e = layer.edge_mut(j, i);
                e.base_weight = 0.0;
                e.spline_weight = 1.0;
                e.coeffs.values.iter_mut().for_each(|c| *c = 1.0);
            }
        }
        let x = array![-1.0, 0.3, 0.7, 1.9];
        let (y, _) = layer.forward(x.view()).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(y[j], 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_zero_cotangent_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = KanLayer::new_spline(3, 2, cubic_knots(-1.0, 1.0, 4), &mut rng);
        let x = array![0.2, -0.5, 0.9];
        let (_, cache) = layer.forward(x.view()).unwrap();
        let g = layer.backward(&cache, array![0.0, 0.0].view()).unwrap();
        assert!(g.d_base_weight.iter().all(|&v| v == 0.0));
        assert!(g.d_spline_weight.iter().all(|&v| v == 0.0));
        assert!(g.d_coeffs.iter().flatten().all(|&v| v == 0.0));
        assert!(g.d_input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_backward_is_bilinear() {
        let w = array![[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]];
        let layer = affine_from_matrix(&w);
        let x = array![1.3, -0.7];
        let dy = array![0.2, -1.1, 0.6];
        let (_, cache) = layer.forward(x.view()).unwrap();
        let g = layer.backward(&cache, dy.view()).unwrap();
        for j in 0..3 {
            for i in 0..2 {
                assert_abs_diff_eq!(g.d_slope[[j, i]], dy[j] * x[i], epsilon = 1e-15);
            }
        }
        let expect = w.t().dot(&dy);
        for i in 0..2 {
            assert_abs_diff_eq!(g.d_input[i], expect[i], epsilon = 1e-15);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = KanLayer::new_spline(4, 3, cubic_knots(-2.0, 2.0, 5), &mut rng);
        let x = array![0.3, -1.2, 1.7, -0.4];
        let dy = array![0.8, -0.5, 1.1];
        let objective = |layer: &KanLayer, x: &Array1<f64>| -> f64 {
            let (y, _) = layer.forward(x.view()).unwrap();
            y.dot(&dy)
        };
        let (_, cache) = layer.forward(x.view()).unwrap();
        let g = layer.backward(&cache, dy.view()).unwrap();
        let h = 1e-5;

        for j in 0..3 {
            for i in 0..4 {
                // Base weight.
                let mut lp = layer.clone();
                lp.edge_mut(j, i).base_weight += h;
                let mut lm = layer.clone();
                lm.edge_mut(j, i).base_weight -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                assert!(rel_err(g.d_base_weight[[j, i]], fd) < 1e-5, "w_b ({j},{i})");

                // Spline weight.
                let mut lp = layer.clone();
                lp.edge_mut(j, i).spline_weight += h;
                let mut lm = layer.clone();
                lm.edge_mut(j, i).spline_weight -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                assert!(rel_err(g.d_spline_weight[[j, i]], fd) < 1e-5, "w_s ({j},{i})");

                // Every spline coefficient.
                for l in 0..layer.knots().basis_count() {
                    let mut lp = layer.clone();
                    lp.edge_mut(j, i).coeffs.values[l] += h;
                    let mut lm = layer.clone();
                    lm.edge_mut(j, i).coeffs.values[l] -= h;
                    let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                    assert!(rel_err(g.d_coeffs[j * 4 + i][l], fd) < 1e-5, "c ({j},{i},{l})");
                }
            }
        }
        // Input gradient.
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
            assert!(rel_err(g.d_input[i], fd) < 1e-5, "input {i}");
        }
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spline = KanLayer::new_spline(2, 2, cubic_knots(-1.0, 1.0, 3), &mut rng);
        let affine = spline.constrain_affine();
        let (_, cache) = spline.forward(array![0.1, 0.2].view()).unwrap();
        assert!(matches!(
            affine.backward(&cache, array![1.0, 1.0].view()),
            Err(KanError::CacheMismatch)
        ));
        assert!(matches!(
            spline.backward(&cache, array![1.0].view()),
            Err(KanError::OutputMismatch { .. })
        ));
    }

    #[test]
    fn constrain_affine_recovers_exact_slopes() {
        // Build an edge that is exactly 0.8 * x through the linear-reproduction
        // construction, then check the fitted slope.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let knots = cubic_knots(-2.0, 2.0, 4);
        let greville = knots.greville_abscissae();
        let mut layer = KanLayer::new_spline(1, 2, knots, &mut rng);
        {
            let e = layer.edge_mut(0, 0);
            e.base_weight = 0.0;
            e.spline_weight = 1.0;
            e.coeffs = SplineCoeffs::new(greville.iter().map(|g| 0.8 * g).collect());
        }
        {
            let e = layer.edge_mut(1, 0);
            e.base_weight = 0.0;
            e.spline_weight = 0.0;
            e.coeffs.values.iter_mut().for_each(|c| *c = 0.0);
        }
        let affine = layer.constrain_affine();
        assert_abs_diff_eq!(affine.edge(0, 0).affine_slope, 0.8, epsilon = 1e-8);
        assert_abs_diff_eq!(affine.edge(1, 0).affine_slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constrained_layer_is_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = KanLayer::new_spline(3, 2, cubic_knots(-1.0, 1.0, 4), &mut rng);
        let affine = layer.constrain_affine();
        let x = array![0.11, -0.32, 0.2];
        let (y1, _) = affine.forward(x.view()).unwrap();
        // Power-of-two scaling is exact in floating point.
        let (y2, _) = affine.forward((&x * 2.0).view()).unwrap();
        for j in 0..2 {
            assert_eq!(y2[j], 2.0 * y1[j]);
        }
        let alpha = 0.37;
        let (y3, _) = affine.forward((&x * alpha).view()).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(y3[j], alpha * y1[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn affine_superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = KanLayer::new_affine(4, 3, cubic_knots(-1.0, 1.0, 3), &mut rng);
        let x = array![0.5, -0.25, 1.0, 0.125];
        let z = array![-1.5, 0.75, 0.5, -2.0];
        let (fx, _) = layer.forward(x.view()).unwrap();
        let (fz, _) = layer.forward(z.view()).unwrap();
        let combo = &x * 0.6 + &z * (-1.3);
        let (fc, _) = layer.forward(combo.view()).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(fc[j], 0.6 * fx[j] - 1.3 * fz[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn composed_affine_layers_act_as_one_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l1 = KanLayer::new_affine(5, 4, cubic_knots(-1.0, 1.0, 3), &mut rng);
        let l2 = KanLayer::new_affine(4, 2, cubic_knots(-1.0, 1.0, 3), &mut rng);
        // Assemble M by pushing the standard basis through the composition.
        let mut m = Array2::zeros((2, 5));
        for i in 0..5 {
            let mut e = Array1::zeros(5);
            e[i] = 1.0;
            let (h, _) = l1.forward(e.view()).unwrap();
            let (y, _) = l2.forward(h.view()).unwrap();
            for j in 0..2 {
                m[[j, i]] = y[j];
            }
        }
        for trial in 0..50 {
            let x = Array1::from_shape_fn(5, |i| ((trial * 5 + i) as f64 * 0.318).sin());
            let (h, _) = l1.forward(x.view()).unwrap();
            let (y, _) = l2.forward(h.view()).unwrap();
            let expect = m.dot(&x);
            for j in 0..2 {
                assert!((y[j] - expect[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_backward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = KanLayer::new_spline(3, 3, cubic_knots(-2.0, 2.0, 5), &mut rng);
        let x = array![0.7, -0.3, 1.4];
        let dy = array![1.0, -2.0, 0.5];
        let (y1, c1) = layer.forward(x.view()).unwrap();
        let g1 = layer.backward(&c1, dy.view()).unwrap();
        let (y2, c2) = layer.forward(x.view()).unwrap();
        let g2 = layer.backward(&c2, dy.view()).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(g1.d_base_weight, g2.d_base_weight);
        assert_eq!(g1.d_spline_weight, g2.d_spline_weight);
        assert_eq!(g1.d_coeffs, g2.d_coeffs);
        assert_eq!(g1.d_input, g2.d_input);
    }

    #[test]
    fn grid_update_tightens_and_preserves_function() {
        // Edges carry exactly-affine splines (representable on any grid), so
        // the refit must reproduce them at the samples essentially exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let knots = cubic_knots(-4.0, 4.0, 5);
        let greville = knots.greville_abscissae();
        let mut layer = KanLayer::new_spline(2, 2, knots, &mut rng);
        for j in 0..2 {
            for i in 0..2 {
                let slope = 0.3 + 0.4 * (j * 2 + i) as f64;
                let e = layer.edge_mut(j, i);
                e.spline_weight = 1.0;
                e.coeffs = SplineCoeffs::new(greville.iter().map(|g| slope * g).collect());
            }
        }
        let acts = Array2::from_shape_fn((300, 2), |(t, i)| {
            ((t as f64 * 0.1 + i as f64).sin()) * 0.9
        });
        let updated = layer.update_grid_range(acts.view(), 5).unwrap();
        let (lo, hi) = updated.knots().domain();
        assert!(lo > -4.0 && hi < 4.0, "grid did not tighten: [{lo}, {hi}]");
        for t in (0..300).step_by(17) {
            for j in 0..2 {
                for i in 0..2 {
                    let x = acts[[t, i]];
                    let before = layer.edge_value(j, i, x).unwrap();
                    let after = updated.edge_value(j, i, x).unwrap();
                    assert!(
                        (before - after).abs() < 1e-6,
                        "edge ({j},{i}) moved at x={x}: {before} vs {after}"
                    );
                }
            }
        }
    }

    #[test]
    fn grid_update_refit_matches_least_squares_oracle() {
        // Generic random edges: the refit cannot be exact, but it must land
        // on the normal-equations optimum, checked against a dense solve.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let layer = KanLayer::new_spline(1, 1, cubic_knots(-4.0, 4.0, 5), &mut rng);
        let acts = Array2::from_shape_fn((200, 1), |(t, _)| ((t as f64) * 0.07).sin() * 0.95);
        let updated = layer.update_grid_range(acts.view(), 4).unwrap();

        let new_kv = updated.knots();
        let nb = new_kv.basis_count();
        // Dense normal equations assembled independently.
        let mut gram = vec![vec![0.0; nb]; nb];
        let mut rhs = vec![0.0; nb];
        let old = layer.edge(0, 0);
        for t in 0..200 {
            let x = acts[[t, 0]];
            let b = new_kv.basis_values(x).unwrap();
            let y = crate::splines::spline_value(layer.knots(), &old.coeffs, x).unwrap();
            for a in 0..nb {
                rhs[a] += b[a] * y;
                for c in 0..nb {
                    gram[a][c] += b[a] * b[c];
                }
            }
        }
        // Gauss elimination with partial pivoting.
        let mut m = gram;
        let mut v = rhs;
        for col in 0..nb {
            let piv = (col..nb).max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs())).unwrap();
            m.swap(col, piv);
            v.swap(col, piv);
            for row in col + 1..nb {
                let f = m[row][col] / m[col][col];
                for c in col..nb {
                    m[row][c] -= f * m[col][c];
                }
                v[row] -= f * v[col];
            }
        }
        let mut expect = vec![0.0; nb];
        for row in (0..nb).rev() {
            let mut sum = v[row];
            for c in row + 1..nb {
                sum -= m[row][c] * expect[c];
            }
            expect[row] = sum / m[row][row];
        }
        for (got, want) in updated.edge(0, 0).coeffs.values.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-9, "refit {got} vs oracle {want}");
        }
    }

    #[test]
    fn grid_update_degenerate_range_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = KanLayer::new_spline(1, 1, cubic_knots(-1.0, 1.0, 3), &mut rng);
        let acts = Array2::from_elem((50, 1), 0.25);
        let updated = layer.update_grid_range(acts.view(), 3).unwrap();
        assert_eq!(updated.knots().domain(), (-1.0, 1.0));
        let empty = Array2::zeros((0, 1));
        assert!(matches!(
            layer.update_grid_range(empty.view(), 3),
            Err(KanError::EmptyActivations)
        ));
    }

    #[test]
    fn grid_update_is_nearly_a_fixed_point_on_matching_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Grid already spans the activations with the production margin.
        let layer = KanLayer::new_spline(1, 1, cubic_knots(-1.2, 1.2, 4), &mut rng);
        let acts = Array2::from_shape_fn((400, 1), |(t, _)| -1.0 + 2.0 * t as f64 / 399.0);
        let updated = layer.update_grid_range(acts.view(), 4).unwrap();
        let (lo, hi) = updated.knots().domain();
        assert_abs_diff_eq!(lo, -1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.2, epsilon = 1e-12);
        for t in 0..400 {
            let x = acts[[t, 0]];
            let before = layer.edge_value(0, 0, x).unwrap();
            let after = updated.edge_value(0, 0, x).unwrap();
            assert!((before - after).abs() < 1e-8);
        }
    }
}

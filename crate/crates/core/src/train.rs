//! Autoencoder assembly and training: a KAN encoder stack with a linear
//! decoder, reconstruction loss with L1/entropy spline regularization, Adam,
//! staged training with progressive grid extension, and early stopping on the
//! validation loss.
//!
//! Training is single-writer and fully deterministic: gradients accumulate
//! over samples in panel order, the optimizer state is rebuilt at each stage
//! boundary (coefficient shapes change when the grid grows), and a fixed seed
//! reproduces every epoch bitwise.

use crate::audit::{AuditHandle, SplitTag};
use crate::kan::{grid_for_samples, KanError, KanLayer, LayerCache, LayerGradients, LayerMode};
use crate::linalg::{pca_fit, LinalgError, PcaModel};
use crate::pipeline::{train_view, SplitPanels};
use crate::splines::{KnotVector, SplineError, SplineCoeffs};
use crate::kan::EdgeActivation;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Kan(#[from] KanError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite activations out of encoder layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("training diverged at stage {stage}, epoch {epoch}")]
    Diverged { stage: usize, epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("panels must be standardized with train-split statistics before fitting")]
    NotStandardized,
    #[error("incompatible initialization: {0}")]
    IncompatibleInit(String),
    #[error("parameter vector length {got} does not match model ({expected})")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Random,
    Pca,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::Random => "random",
            InitKind::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    Minibatch(usize),
}

#[derive(Debug, Clone)]
pub struct StageConfig {
    pub grid_intervals: usize,
    pub spline_penalty: f64,
    pub entropy_penalty: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Encoder widths including input and bottleneck: `[N, ..., k]`.
    pub encoder_dims: Vec<usize>,
    pub degree: usize,
    pub stages: Vec<StageConfig>,
    pub learning_rate: f64,
    pub batch_mode: BatchMode,
    pub seed: u64,
    pub affine: bool,
    pub init: InitKind,
}

impl TrainConfig {
    /// Default three-stage schedule: grids 3 -> 5 -> 10 with the spline
    /// penalty stepping down 1e-3 -> 3e-4 -> 1e-4 (geometric midpoint) and a
    /// 0.1 entropy penalty throughout.
    pub fn default_schedule(encoder_dims: Vec<usize>) -> Self {
        let stage = |grid_intervals: usize, spline_penalty: f64| StageConfig {
            grid_intervals,
            spline_penalty,
            entropy_penalty: 0.1,
            max_epochs: 500,
            patience: 20,
        };
        Self {
            encoder_dims,
            degree: 3,
            stages: vec![stage(3, 1e-3), stage(5, 3e-4), stage(10, 1e-4)],
            learning_rate: 1e-3,
            batch_mode: BatchMode::Full,
            seed: 42,
            affine: false,
            init: InitKind::Random,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.encoder_dims.len() < 2 || self.encoder_dims.iter().any(|&d| d == 0) {
            return Err(TrainError::InvalidConfig("encoder needs at least [N, k] dims".into()));
        }
        if self.degree < 1 {
            return Err(TrainError::InvalidConfig("spline degree must be >= 1".into()));
        }
        if self.stages.is_empty() {
            return Err(TrainError::InvalidConfig("at least one stage required".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.grid_intervals < 1 {
                return Err(TrainError::InvalidConfig(format!("stage {i}: grid_intervals >= 1")));
            }
            if s.spline_penalty < 0.0 || s.entropy_penalty < 0.0 {
                return Err(TrainError::InvalidConfig(format!("stage {i}: penalties must be >= 0")));
            }
            if s.patience < 1 {
                return Err(TrainError::InvalidConfig(format!("stage {i}: patience >= 1")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        if let BatchMode::Minibatch(0) = self.batch_mode {
            return Err(TrainError::InvalidConfig("minibatch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelMeta {
    pub seed: u64,
    pub init: InitKind,
    pub degree: usize,
}

/// KAN encoder stack plus unconstrained linear decoder `x_hat = W z`.
#[derive(Debug, Clone)]
pub struct KanPcaModel {
    pub encoder: Vec<KanLayer>,
    /// N x k decoding matrix; row i reconstructs asset i from the factors.
    pub decoder: Array2<f64>,
    pub meta: ModelMeta,
}

/// Per-layer, per-sample forward records for a batch.
pub struct ModelCache {
    pub layer_caches: Vec<Vec<LayerCache>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub grid_intervals: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct StageRecord {
    pub stage: usize,
    pub grid_intervals: usize,
    /// Training loss right before this stage's grid change.
    pub loss_before_extension: f64,
    /// Training loss right after the grid change, before any training.
    pub loss_after_extension: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub reason: StopReason,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stages: Vec<StageRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,stage,grid_intervals,train_loss,val_loss,penalty\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.stage, e.grid_intervals, e.train_loss, e.val_loss, e.penalty
            ));
        }
        out
    }
}

impl KanPcaModel {
    /// Fresh model from a config: spline layers get `w_b = w_s = 1` with
    /// small uniform coefficients, affine layers Xavier-style slopes, and the
    /// decoder uniform entries of scale `1/sqrt(k)`.
    pub fn new(config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self, TrainError> {
        config.validate()?;
        let dims = &config.encoder_dims;
        let knots = KnotVector::uniform(-1.0, 1.0, config.stages[0].grid_intervals, config.degree)?;
        let mut encoder = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let layer = if config.affine {
                KanLayer::new_affine(w[0], w[1], knots.clone(), rng)
            } else {
                KanLayer::new_spline(w[0], w[1], knots.clone(), rng)
            };
            encoder.push(layer);
        }
        let n = dims[0];
        let k = *dims.last().unwrap();
        let scale = 1.0 / (k as f64).sqrt();
        let decoder = Array2::from_shape_fn((n, k), |_| rng.random_range(-scale..scale));
        Ok(Self {
            encoder,
            decoder,
            meta: ModelMeta { seed: config.seed, init: config.init, degree: config.degree },
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.encoder.first().map(|l| l.n_in()).unwrap_or(0)
    }

    pub fn n_factors(&self) -> usize {
        self.decoder.ncols()
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.n_inputs()];
        dims.extend(self.encoder.iter().map(|l| l.n_out()));
        dims
    }

    pub fn is_affine(&self) -> bool {
        self.encoder.iter().all(|l| l.mode() == LayerMode::Affine)
    }

    /// Affine-constrained copy (every encoder layer constrained).
    pub fn constrain_affine(&self) -> KanPcaModel {
        KanPcaModel {
            encoder: self.encoder.iter().map(|l| l.constrain_affine()).collect(),
            decoder: self.decoder.clone(),
            meta: self.meta.clone(),
        }
    }

    /// The single matrix computed by an all-affine encoder.
    pub fn encoder_matrix(&self) -> Option<Array2<f64>> {
        let mut m: Option<Array2<f64>> = None;
        for layer in &self.encoder {
            let w = layer.slope_matrix()?;
            m = Some(match m {
                None => w,
                Some(prev) => w.dot(&prev),
            });
        }
        m
    }

    /// Batch forward pass: factors `Z`, reconstructions `X_hat`, and the
    /// caches the backward pass needs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>, ModelCache), TrainError> {
        self.check_width(x)?;
        let b = x.nrows();
        let k = self.n_factors();
        let n = self.n_inputs();
        let mut z = Array2::zeros((b, k));
        let mut xhat = Array2::zeros((b, n));
        let mut layer_caches: Vec<Vec<LayerCache>> =
            self.encoder.iter().map(|_| Vec::with_capacity(b)).collect();
        for t in 0..b {
            let mut a = x.row(t).to_owned();
            for (l, layer) in self.encoder.iter().enumerate() {
                let (y, cache) = layer.forward(a.view())?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteActivation { layer: l });
                }
                layer_caches[l].push(cache);
                a = y;
            }
            let row_hat = self.decoder.dot(&a);
            for c in 0..k {
                z[[t, c]] = a[c];
            }
            for c in 0..n {
                xhat[[t, c]] = row_hat[c];
            }
        }
        Ok((z, xhat, ModelCache { layer_caches }))
    }

    /// Forward pass without retaining caches.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>), TrainError> {
        self.check_width(x)?;
        let b = x.nrows();
        let k = self.n_factors();
        let n = self.n_inputs();
        let mut z = Array2::zeros((b, k));
        let mut xhat = Array2::zeros((b, n));
        for t in 0..b {
            let mut a = x.row(t).to_owned();
            for (l, layer) in self.encoder.iter().enumerate() {
                let (y, _) = layer.forward(a.view())?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteActivation { layer: l });
                }
                a = y;
            }
            let row_hat = self.decoder.dot(&a);
            for c in 0..k {
                z[[t, c]] = a[c];
            }
            for c in 0..n {
                xhat[[t, c]] = row_hat[c];
            }
        }
        Ok((z, xhat))
    }

    fn check_width(&self, x: ArrayView2<f64>) -> Result<(), TrainError> {
        if x.ncols() != self.n_inputs() {
            return Err(TrainError::ShapeMismatch {
                expected: format!("{} columns", self.n_inputs()),
                got: format!("{} columns", x.ncols()),
            });
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        for layer in &self.encoder {
            let edges = layer.n_in() * layer.n_out();
            count += match layer.mode() {
                LayerMode::Affine => edges,
                LayerMode::Spline => edges * (2 + layer.knots().basis_count()),
            };
        }
        count + self.decoder.len()
    }

    /// Flat parameter vector: encoder layers in order (per edge, row-major:
    /// slope for affine, `[w_b, w_s, c_0..]` for spline), then the decoder
    /// row-major. Gradients use the identical layout.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for layer in &self.encoder {
            for j in 0..layer.n_out() {
                for i in 0..layer.n_in() {
                    let e = layer.edge(j, i);
                    match layer.mode() {
                        LayerMode::Affine => p.push(e.affine_slope),
                        LayerMode::Spline => {
                            p.push(e.base_weight);
                            p.push(e.spline_weight);
                            p.extend_from_slice(&e.coeffs.values);
                        }
                    }
                }
            }
        }
        p.extend(self.decoder.iter());
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<(), TrainError> {
        if p.len() != self.param_count() {
            return Err(TrainError::ParamCount { expected: self.param_count(), got: p.len() });
        }
        let mut pos = 0;
        for layer in &mut self.encoder {
            let mode = layer.mode();
            let nb = layer.knots().basis_count();
            for j in 0..layer.n_out() {
                for i in 0..layer.n_in() {
                    let e = layer.edge_mut(j, i);
                    match mode {
                        LayerMode::Affine => {
                            e.affine_slope = p[pos];
                            pos += 1;
                        }
                        LayerMode::Spline => {
                            e.base_weight = p[pos];
                            e.spline_weight = p[pos + 1];
                            pos += 2;
                            e.coeffs.values.copy_from_slice(&p[pos..pos + nb]);
                            pos += nb;
                        }
                    }
                }
            }
        }
        for v in self.decoder.iter_mut() {
            *v = p[pos];
            pos += 1;
        }
        Ok(())
    }
}

/// Mean over rows of the squared Euclidean reconstruction error.
pub fn reconstruction_loss(x: ArrayView2<f64>, xhat: ArrayView2<f64>) -> Result<f64, TrainError> {
    if x.shape() != xhat.shape() {
        return Err(TrainError::ShapeMismatch {
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", xhat.shape()),
        });
    }
    let b = x.nrows().max(1);
    let ss: f64 = x.iter().zip(xhat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ss / b as f64)
}

/// Spline regularization `lambda_s * sum L1 + lambda_e * sum H` where, per
/// layer, `L1` sums each edge's mean absolute coefficient and `H` is the
/// entropy of the normalized per-edge magnitudes (zero when `L1` is zero).
pub fn regularization_penalty(model: &KanPcaModel, spline_penalty: f64, entropy_penalty: f64) -> f64 {
    let mut total = 0.0;
    for layer in &model.encoder {
        if layer.mode() != LayerMode::Spline {
            continue;
        }
        let (l1, entropy) = layer_penalty_terms(layer);
        total += spline_penalty * l1 + entropy_penalty * entropy;
    }
    total
}

fn layer_penalty_terms(layer: &KanLayer) -> (f64, f64) {
    let nb = layer.knots().basis_count() as f64;
    let mags: Vec<f64> = layer
        .edges()
        .iter()
        .map(|e| e.coeffs.values.iter().map(|c| c.abs()).sum::<f64>() / nb)
        .collect();
    let l1: f64 = mags.iter().sum();
    if l1 <= 0.0 {
        return (0.0, 0.0);
    }
    let entropy = -mags
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| {
            let p = a / l1;
            p * p.ln()
        })
        .sum::<f64>();
    (l1, entropy)
}

/// Adam first/second-moment state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }
}

/// One Adam update with bias correction; beta1 = 0.9, beta2 = 0.999,
/// epsilon = 1e-8.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Early-stopping bookkeeping: an epoch counts as an improvement only when it
/// beats the best validation loss by at least 1e-10, which keeps float noise
/// from stalling the patience counter.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, bad: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if self.best - val_loss >= 1e-10 {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.bad = 0;
            StopDecision::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Reconstruction loss, regularization value, and the gradient of their sum
/// over a batch, flattened in the model's parameter layout. Gradients
/// accumulate over samples in row order.
pub fn loss_and_gradients(
    model: &KanPcaModel,
    x: ArrayView2<f64>,
    spline_penalty: f64,
    entropy_penalty: f64,
) -> Result<(f64, f64, Vec<f64>), TrainError> {
    model.check_width(x)?;
    let b = x.nrows();
    if b == 0 {
        return Err(TrainError::ShapeMismatch { expected: "at least one row".into(), got: "0 rows".into() });
    }
    let n = model.n_inputs();
    let k = model.n_factors();
    let n_layers = model.encoder.len();
    let mut layer_grads: Vec<LayerGradients> =
        model.encoder.iter().map(LayerGradients::zeros).collect();
    let mut d_decoder = Array2::<f64>::zeros((n, k));
    let mut loss = 0.0;
    let scale = 2.0 / b as f64;
    for t in 0..b {
        let mut caches: Vec<LayerCache> = Vec::with_capacity(n_layers);
        let mut a = x.row(t).to_owned();
        for (l, layer) in model.encoder.iter().enumerate() {
            let (y, cache) = layer.forward(a.view())?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteActivation { layer: l });
            }
            caches.push(cache);
            a = y;
        }
        let z = a;
        let xhat = model.decoder.dot(&z);
        let mut dxhat = Array1::zeros(n);
        for i in 0..n {
            let r = xhat[i] - x[[t, i]];
            loss += r * r;
            dxhat[i] = scale * r;
            for c in 0..k {
                d_decoder[[i, c]] += dxhat[i] * z[c];
            }
        }
        let mut dy = model.decoder.t().dot(&dxhat);
        for l in (0..n_layers).rev() {
            dy = model.encoder[l].backward_into(&caches[l], dy.view(), &mut layer_grads[l])?;
        }
    }
    loss /= b as f64;
    let penalty = add_penalty_gradients(model, spline_penalty, entropy_penalty, &mut layer_grads);
    let grads = flatten_gradients(model, &layer_grads, &d_decoder);
    Ok((loss, penalty, grads))
}

/// Adds the penalty gradient (with the subgradient convention sign(0) = 0)
/// onto the coefficient blocks and returns the penalty value.
fn add_penalty_gradients(
    model: &KanPcaModel,
    spline_penalty: f64,
    entropy_penalty: f64,
    layer_grads: &mut [LayerGradients],
) -> f64 {
    let mut total = 0.0;
    for (layer, grads) in model.encoder.iter().zip(layer_grads.iter_mut()) {
        if layer.mode() != LayerMode::Spline {
            continue;
        }
        let nb = layer.knots().basis_count() as f64;
        let mags: Vec<f64> = layer
            .edges()
            .iter()
            .map(|e| e.coeffs.values.iter().map(|c| c.abs()).sum::<f64>() / nb)
            .collect();
        let l1: f64 = mags.iter().sum();
        if l1 <= 0.0 {
            continue;
        }
        let mut entropy = 0.0;
        for &a in &mags {
            if a > 0.0 {
                let p = a / l1;
                entropy -= p * p.ln();
            }
        }
        total += spline_penalty * l1 + entropy_penalty * entropy;
        for (e_idx, edge) in layer.edges().iter().enumerate() {
            let a = mags[e_idx];
            // dH/da_e = -(ln p_e + H) / L1; flat at exactly-zero edges.
            let dh_da = if a > 0.0 { -(((a / l1).ln() + entropy) / l1) } else { 0.0 };
            let factor = (spline_penalty + entropy_penalty * dh_da) / nb;
            let dc = &mut grads.d_coeffs[e_idx];
            for (l, &c) in edge.coeffs.values.iter().enumerate() {
                dc[l] += factor * c.signum() * if c == 0.0 { 0.0 } else { 1.0 };
            }
        }
    }
    total
}

fn flatten_gradients(
    model: &KanPcaModel,
    layer_grads: &[LayerGradients],
    d_decoder: &Array2<f64>,
) -> Vec<f64> {
    let mut g = Vec::with_capacity(model.param_count());
    for (layer, lg) in model.encoder.iter().zip(layer_grads) {
        for j in 0..layer.n_out() {
            for i in 0..layer.n_in() {
                match layer.mode() {
                    LayerMode::Affine => g.push(lg.d_slope[[j, i]]),
                    LayerMode::Spline => {
                        g.push(lg.d_base_weight[[j, i]]);
                        g.push(lg.d_spline_weight[[j, i]]);
                        g.extend_from_slice(&lg.d_coeffs[j * layer.n_in() + i]);
                    }
                }
            }
        }
    }
    g.extend(d_decoder.iter());
    g
}

/// Global row ranges of the train and validation splits, for audit entries.
#[derive(Debug, Clone, Copy)]
pub struct SplitRanges {
    pub train: (usize, usize),
    pub validation: (usize, usize),
}

/// Gradient-descend one stage: Adam on `loss + penalty` over the training
/// rows, validation reconstruction loss (never the penalty) after each epoch,
/// stop after `patience` epochs without improvement, and hand back the
/// parameters of the best validation epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    model: &mut KanPcaModel,
    train: ArrayView2<f64>,
    validation: ArrayView2<f64>,
    stage: &StageConfig,
    stage_idx: usize,
    learning_rate: f64,
    batch_mode: BatchMode,
    history: &mut TrainHistory,
    audit: Option<(&AuditHandle, SplitRanges)>,
) -> Result<(usize, f64, StopReason), TrainError> {
    let grid_intervals = model
        .encoder
        .iter()
        .find(|l| l.mode() == LayerMode::Spline)
        .map(|l| l.knots().num_intervals())
        .unwrap_or(0);
    let mut params = model.params_flat();
    let mut adam = AdamState::new(params.len());
    let mut stopper = EarlyStopper::new(stage.patience);
    let mut best_params = params.clone();
    let mut reason = StopReason::MaxEpochs;
    let batch_size = match batch_mode {
        BatchMode::Full => train.nrows(),
        BatchMode::Minibatch(s) => s.min(train.nrows()).max(1),
    };
    for epoch in 1..=stage.max_epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_penalty = 0.0;
        let mut n_batches = 0;
        let mut start = 0;
        while start < train.nrows() {
            let end = (start + batch_size).min(train.nrows());
            let batch = train.slice(ndarray::s![start..end, ..]);
            let (loss, penalty, grads) =
                loss_and_gradients(model, batch, stage.spline_penalty, stage.entropy_penalty)?;
            if !loss.is_finite() || !penalty.is_finite() {
                return Err(TrainError::Diverged { stage: stage_idx, epoch });
            }
            adam_step(&mut params, &grads, &mut adam, learning_rate);
            model.set_params_flat(&params)?;
            epoch_loss += loss;
            epoch_penalty += penalty;
            n_batches += 1;
            start = end;
        }
        if let Some((handle, ranges)) = audit {
            crate::audit::record(handle, "train_epoch", SplitTag::Train, ranges.train);
        }
        let (_, val_hat) = model.predict(validation)?;
        let val_loss = reconstruction_loss(validation, val_hat.view())?;
        if let Some((handle, ranges)) = audit {
            crate::audit::record(handle, "validation_eval", SplitTag::Validation, ranges.validation);
        }
        history.epochs.push(EpochRecord {
            stage: stage_idx,
            epoch,
            grid_intervals,
            train_loss: epoch_loss / n_batches as f64,
            val_loss,
            penalty: epoch_penalty / n_batches as f64,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_params.copy_from_slice(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                reason = StopReason::EarlyStopped;
                break;
            }
        }
    }
    model.set_params_flat(&best_params)?;
    Ok((stopper.best_epoch(), stopper.best(), reason))
}

fn layer_batch_forward(layer: &KanLayer, x: ArrayView2<f64>) -> Result<Array2<f64>, TrainError> {
    let mut out = Array2::zeros((x.nrows(), layer.n_out()));
    for t in 0..x.nrows() {
        let (y, _) = layer.forward(x.row(t))?;
        for j in 0..layer.n_out() {
            out[[t, j]] = y[j];
        }
    }
    Ok(out)
}

/// Full staged fit on standardized splits: for each stage, move every spline
/// layer's grid onto the current training activations at the stage's interval
/// count (training rows only, by way of the pipeline's train-only view), then
/// run [`train_stage`]. The returned model carries the best-validation
/// parameters of the final stage.
pub fn fit_kan_pca(
    config: &TrainConfig,
    splits: &SplitPanels,
    audit: &AuditHandle,
) -> Result<(KanPcaModel, TrainHistory), TrainError> {
    config.validate()?;
    if !splits.is_standardized()
        || splits.train.standardization.as_ref().map(|s| s.fitted_on) != Some(SplitTag::Train)
    {
        return Err(TrainError::NotStandardized);
    }
    let n = splits.train.n_assets();
    let k = *config.encoder_dims.last().unwrap();
    if config.encoder_dims[0] != n {
        return Err(TrainError::ShapeMismatch {
            expected: format!("encoder input width {n}"),
            got: format!("{}", config.encoder_dims[0]),
        });
    }
    let view = train_view(splits, audit);
    let (_, off_val, _) = splits.offsets();
    let ranges = SplitRanges {
        train: (0, splits.train.n_rows()),
        validation: (off_val, off_val + splits.validation.n_rows()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = KanPcaModel::new(config, &mut rng)?;
    if config.init == InitKind::Pca {
        let pca = pca_fit(view.rows("pca_fit"), k)?;
        pca_init(&mut model, &pca, view.rows("grid_update"))?;
    }

    let mut history = TrainHistory::default();
    for (stage_idx, stage) in config.stages.iter().enumerate() {
        let train_rows = view.rows("train_eval");
        let (_, before_hat) = model.predict(train_rows)?;
        let loss_before = reconstruction_loss(train_rows, before_hat.view())?;

        // pca_init already placed stage-0 grids over the training activations.
        let grids_current = stage_idx == 0 && config.init == InitKind::Pca;
        if !config.affine && !grids_current {
            let mut acts = view.rows("grid_update").to_owned();
            for layer in model.encoder.iter_mut() {
                let updated = layer.update_grid_range(acts.view(), stage.grid_intervals)?;
                *layer = updated;
                acts = layer_batch_forward(layer, acts.view())?;
            }
        }

        let train_rows = view.rows("train_eval");
        let (_, after_hat) = model.predict(train_rows)?;
        let loss_after = reconstruction_loss(train_rows, after_hat.view())?;

        let (best_epoch, best_val_loss, reason) = train_stage(
            &mut model,
            view.rows("train_epoch"),
            splits.validation.values.view(),
            stage,
            stage_idx,
            config.learning_rate,
            config.batch_mode,
            &mut history,
            Some((audit, ranges)),
        )?;
        history.stages.push(StageRecord {
            stage: stage_idx,
            grid_intervals: stage.grid_intervals,
            loss_before_extension: loss_before,
            loss_after_extension: loss_after,
            best_epoch,
            best_val_loss,
            reason,
        });
    }
    Ok((model, history))
}

/// Initialize the model at the classical-PCA solution: the composed encoder
/// equals `U_k^T`, the decoder equals `U_k`, so the model reproduces the PCA
/// reconstruction before any training. Spline layers realize their linear map
/// through the Greville construction on grids spanning the training
/// activations (hence the data argument); affine layers take the slopes
/// directly. Requires every hidden width to be at least k.
pub fn pca_init(
    model: &mut KanPcaModel,
    pca: &PcaModel,
    train: ArrayView2<f64>,
) -> Result<(), TrainError> {
    let dims = model.encoder_dims();
    let n = dims[0];
    let k = *dims.last().unwrap();
    if pca.loadings.nrows() != n || pca.k != k {
        return Err(TrainError::ShapeMismatch {
            expected: format!("loadings {n}x{k}"),
            got: format!("loadings {}x{}", pca.loadings.nrows(), pca.k),
        });
    }
    if train.ncols() != n {
        return Err(TrainError::ShapeMismatch {
            expected: format!("{n} columns"),
            got: format!("{} columns", train.ncols()),
        });
    }
    if dims.iter().skip(1).any(|&d| d < k) {
        return Err(TrainError::IncompatibleInit(format!(
            "every encoder width must be >= k = {k}, got {dims:?}"
        )));
    }

    // Factor U_k^T through the stack: the first layer carries U_k^T in its
    // top k rows, later layers pass those k coordinates through untouched.
    let n_layers = model.encoder.len();
    let mut targets: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (rows, cols) = (dims[l + 1], dims[l]);
        let mut m = Array2::zeros((rows, cols));
        if l == 0 {
            for r in 0..k {
                for c in 0..cols {
                    m[[r, c]] = pca.loadings[[c, r]];
                }
            }
        } else {
            for r in 0..k {
                m[[r, r]] = 1.0;
            }
        }
        targets.push(m);
    }

    let mut acts = train.to_owned();
    for (layer, target) in model.encoder.iter_mut().zip(&targets) {
        let (n_out, n_in) = (layer.n_out(), layer.n_in());
        match layer.mode() {
            LayerMode::Affine => {
                let nb = layer.knots().basis_count();
                let mut edges = Vec::with_capacity(n_out * n_in);
                for j in 0..n_out {
                    for i in 0..n_in {
                        edges.push(EdgeActivation {
                            base_weight: 0.0,
                            spline_weight: 0.0,
                            coeffs: SplineCoeffs::zeros(nb),
                            affine_slope: target[[j, i]],
                        });
                    }
                }
                *layer = KanLayer::from_parts(n_in, n_out, LayerMode::Affine, layer.knots().clone(), edges)?;
            }
            LayerMode::Spline => {
                let knots = grid_for_samples(
                    acts.view(),
                    layer.knots().num_intervals(),
                    layer.knots().degree(),
                )?;
                let greville = knots.greville_abscissae();
                let mut edges = Vec::with_capacity(n_out * n_in);
                for j in 0..n_out {
                    for i in 0..n_in {
                        let slope = target[[j, i]];
                        edges.push(EdgeActivation {
                            base_weight: 0.0,
                            spline_weight: 1.0,
                            coeffs: SplineCoeffs::new(greville.iter().map(|g| slope * g).collect()),
                            affine_slope: 0.0,
                        });
                    }
                }
                *layer = KanLayer::from_parts(n_in, n_out, LayerMode::Spline, knots, edges)?;
            }
        }
        acts = acts.dot(&target.t());
    }
    model.decoder = pca.loadings.clone();
    model.meta.init = InitKind::Pca;
    Ok(())
}

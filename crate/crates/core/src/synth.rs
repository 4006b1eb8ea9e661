//! Seeded synthetic return panels for tests, demos, and benchmarks.
//!
//! Panels follow a k-factor structure `X = G(F) B + noise`, where `F` holds
//! independent Gaussian factor series, `B` mixes factors into assets, and `G`
//! is either the identity (linear panel) or a per-factor monotone cubic
//! distortion. Everything is driven by a ChaCha stream, so a given spec
//! always produces the same panel.

use crate::pipeline::ReturnPanel;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct PanelSpec {
    pub n_days: usize,
    pub n_assets: usize,
    pub n_factors: usize,
    /// Per-factor volatilities; strongly separated scales give the covariance
    /// a clear eigengap.
    pub factor_vols: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl PanelSpec {
    pub fn new(n_days: usize, n_assets: usize, n_factors: usize, seed: u64) -> Self {
        let factor_vols = (0..n_factors).map(|i| 2.5 / (1.0 + 0.7 * i as f64)).collect();
        Self { n_days, n_assets, n_factors, factor_vols, noise_std: 0.3, seed }
    }
}

/// Linear k-factor Gaussian panel.
pub fn linear_factor_panel(spec: &PanelSpec) -> ReturnPanel {
    factor_panel(spec, 0.0)
}

/// Factor panel whose factor series pass through the monotone cubic map
/// `f -> f + strength * f^3` before mixing.
pub fn cubic_distorted_panel(spec: &PanelSpec, strength: f64) -> ReturnPanel {
    factor_panel(spec, strength)
}

fn factor_panel(spec: &PanelSpec, cubic_strength: f64) -> ReturnPanel {
    assert_eq!(spec.factor_vols.len(), spec.n_factors, "one volatility per factor");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t, n, k) = (spec.n_days, spec.n_assets, spec.n_factors);
    let mixing = Array2::from_shape_fn((k, n), |_| {
        let g: f64 = rng.sample(StandardNormal);
        g / (k as f64).sqrt()
    });
    let mut values = Array2::zeros((t, n));
    for row in 0..t {
        let factors: Vec<f64> = (0..k)
            .map(|f| {
                let g: f64 = rng.sample(StandardNormal);
                let raw = g * spec.factor_vols[f];
                raw + cubic_strength * raw.powi(3)
            })
            .collect();
        for col in 0..n {
            let mut v = 0.0;
            for f in 0..k {
                v += factors[f] * mixing[[f, col]];
            }
            let e: f64 = rng.sample(StandardNormal);
            values[[row, col]] = v + spec.noise_std * e;
        }
    }
    panel_from_values(values)
}

/// Inject a simultaneous negative shock of `magnitude` standard-deviation
/// units into every asset on one date.
pub fn with_shock(mut panel: ReturnPanel, row: usize, magnitude: f64) -> ReturnPanel {
    for c in 0..panel.n_assets() {
        let col = panel.values.column(c);
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt();
        panel.values[[row, c]] = -magnitude * sd;
    }
    panel
}

fn panel_from_values(values: Array2<f64>) -> ReturnPanel {
    let t = values.nrows();
    let n = values.ncols();
    ReturnPanel {
        dates: (0..t).map(|i| format!("d{:05}", i)).collect(),
        tickers: (0..n).map(|i| format!("A{:02}", i)).collect(),
        values,
        standardization: None,
    }
}

//! Command implementations: fit-pca, fit-kan, benchmark, export-factors,
//! export-edges, inspect. Each writes its artifacts into the configured
//! output directory and prints a one-paragraph summary to stdout.

use crate::config::{ConfigError, ExperimentConfig};
use kanpca::audit::{new_handle, AuditHandle, SplitTag};
use kanpca::linalg::{pca_fit, pca_reconstruct, pca_transform, r_squared, LinalgError, PcaModel};
use kanpca::modelfile::{
    read_header, read_model, write_kan_model, write_pca_model, ModelArtifact, ModelFileError,
};
use kanpca::pipeline::{
    chronological_split, load_csv, standardize, train_view, write_csv, PipelineError, ReturnPanel,
    SplitPanels,
};
use kanpca::train::{fit_kan_pca, KanPcaModel, TrainError, TrainHistory};
use ndarray::{Array2, ArrayView2};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl AppError {
    /// 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(m) => write!(f, "usage error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
            AppError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Usage(e.to_string())
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<ModelFileError> for AppError {
    fn from(e: ModelFileError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<LinalgError> for AppError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NoConvergence(_) | LinalgError::NonFinite => {
                AppError::Numerical(e.to_string())
            }
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } | TrainError::NonFiniteActivation { .. } => {
                AppError::Numerical(e.to_string())
            }
            TrainError::InvalidConfig(_) => AppError::Usage(e.to_string()),
            TrainError::Linalg(inner) => AppError::from(inner),
            other => AppError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> AppError {
    AppError::Data(format!("failed to write {}: {e}", path.display()))
}

/// Standardized splits plus the audit handle and full-panel bookkeeping.
pub struct Prepared {
    pub splits: SplitPanels,
    pub audit: AuditHandle,
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
}

impl Prepared {
    /// All standardized rows in chronological order.
    pub fn full_values(&self) -> Array2<f64> {
        let n = self.splits.train.n_assets();
        let t = self.splits.total_rows();
        let mut out = Array2::zeros((t, n));
        let mut row = 0;
        for panel in [&self.splits.train, &self.splits.validation, &self.splits.test] {
            for r in 0..panel.n_rows() {
                for c in 0..n {
                    out[[row, c]] = panel.values[[r, c]];
                }
                row += 1;
            }
        }
        out
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, AppError> {
    let panel = load_csv(&cfg.data.path, cfg.schema())?;
    if panel.n_assets() != cfg.model.architecture[0] {
        return Err(AppError::Data(format!(
            "data has {} assets but the configured architecture expects {}",
            panel.n_assets(),
            cfg.model.architecture[0]
        )));
    }
    let [ft, fv, fe] = cfg.data.split;
    let splits = chronological_split(&panel, (ft, fv, fe))?;
    let audit = new_handle(cfg.output.deterministic);
    let splits = standardize(&splits, &audit)?;
    Ok(Prepared { splits, audit, dates: panel.dates, tickers: panel.tickers })
}

struct SplitMetrics {
    train: f64,
    validation: f64,
    test: f64,
}

/// R^2 on each split, with every evaluation recorded in the audit log.
fn evaluate<F>(prep: &Prepared, mut reconstruct: F) -> Result<SplitMetrics, AppError>
where
    F: FnMut(ArrayView2<f64>) -> Result<Array2<f64>, AppError>,
{
    let (off_tr, off_v, off_t) = prep.splits.offsets();
    let mut r2 = |panel: &ReturnPanel, tag: SplitTag, offset: usize| -> Result<f64, AppError> {
        kanpca::audit::record(
            &prep.audit,
            "metric_eval",
            tag,
            (offset, offset + panel.n_rows()),
        );
        let xhat = reconstruct(panel.values.view())?;
        Ok(r_squared(panel.values.view(), xhat.view())?)
    };
    Ok(SplitMetrics {
        train: r2(&prep.splits.train, SplitTag::Train, off_tr)?,
        validation: r2(&prep.splits.validation, SplitTag::Validation, off_v)?,
        test: r2(&prep.splits.test, SplitTag::Test, off_t)?,
    })
}

fn fit_pca_model(cfg: &ExperimentConfig, prep: &Prepared) -> Result<PcaModel, AppError> {
    let view = train_view(&prep.splits, &prep.audit);
    Ok(pca_fit(view.rows("pca_fit"), cfg.k())?)
}

fn pca_metrics(prep: &Prepared, pca: &PcaModel) -> Result<SplitMetrics, AppError> {
    evaluate(prep, |x| {
        let z = pca_transform(pca, x)?;
        Ok(pca_reconstruct(pca, z.view())?)
    })
}

fn kan_metrics(prep: &Prepared, model: &KanPcaModel) -> Result<SplitMetrics, AppError> {
    evaluate(prep, |x| {
        let (_, xhat) = model.predict(x)?;
        Ok(xhat)
    })
}

fn write_common(cfg: &ExperimentConfig, prep: &Prepared, out: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let echo = out.join("config.resolved.toml");
    std::fs::write(&echo, cfg.to_toml()).map_err(|e| io_err(&echo, e))?;
    let log_path = out.join("audit.log");
    let rendered = prep.audit.lock().expect("audit lock").render();
    std::fs::write(&log_path, rendered).map_err(|e| io_err(&log_path, e))?;
    Ok(())
}

fn metadata_lines(cfg: &ExperimentConfig, prep: &Prepared, title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "config_hash = {}", cfg.hash());
    let _ = writeln!(out, "seed = {}", cfg.train.seed);
    let _ = writeln!(out, "deterministic = {}", cfg.output.deterministic);
    let _ = writeln!(out, "data = {}", cfg.data.path.display());
    let _ = writeln!(out, "n_assets = {}", prep.splits.train.n_assets());
    let _ = writeln!(
        out,
        "rows = {} (train {} / validation {} / test {})",
        prep.splits.total_rows(),
        prep.splits.train.n_rows(),
        prep.splits.validation.n_rows(),
        prep.splits.test.n_rows()
    );
    let _ = writeln!(out, "k = {}", cfg.k());
    out
}

fn metrics_table(rows: &[(&str, &SplitMetrics)]) -> String {
    let mut out = String::from("model     r2_train        r2_validation   r2_test\n");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{name:<9} {:.12}  {:.12}  {:.12}",
            m.train, m.validation, m.test
        );
    }
    out
}

fn shares_line(pca: &PcaModel) -> String {
    let shares: Vec<String> =
        pca.explained_ratios.iter().map(|r| format!("{r:.12}")).collect();
    format!("pca_eigenvalue_shares = {}", shares.join(","))
}

fn finish_report(
    mut report: String,
    prep: &Prepared,
    cfg: &ExperimentConfig,
    started: Instant,
) -> String {
    let _ = writeln!(report, "{}", prep.audit.lock().expect("audit lock").summary());
    if !cfg.output.deterministic {
        let _ = writeln!(report, "wall_time_secs = {:.3}", started.elapsed().as_secs_f64());
    }
    report
}

/// Fit classical PCA on the training split and report R^2 on all three.
pub fn cmd_fit_pca(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let prep = prepare(cfg)?;
    let pca = fit_pca_model(cfg, &prep)?;
    prep.audit.lock().expect("audit lock").mark_fit_complete();
    let metrics = pca_metrics(&prep, &pca)?;

    let out = &cfg.output.dir;
    write_common(cfg, &prep, out)?;
    write_pca_model(&pca, &out.join("pca.model"))?;
    let mut report = metadata_lines(cfg, &prep, "pca fit");
    report.push_str(&metrics_table(&[("pca", &metrics)]));
    let _ = writeln!(report, "{}", shares_line(&pca));
    let report = finish_report(report, &prep, cfg, started);
    let path = out.join("report.txt");
    std::fs::write(&path, &report).map_err(|e| io_err(&path, e))?;
    print!("{report}");
    Ok(())
}

fn fit_kan_model(
    cfg: &ExperimentConfig,
    prep: &Prepared,
) -> Result<(KanPcaModel, TrainHistory), AppError> {
    Ok(fit_kan_pca(&cfg.to_train_config(), &prep.splits, &prep.audit)?)
}

fn stage_summary(history: &TrainHistory) -> String {
    let mut out = String::new();
    for s in &history.stages {
        let _ = writeln!(
            out,
            "stage {} grid {} best_epoch {} best_val_loss {:.12} ({:?})",
            s.stage, s.grid_intervals, s.best_epoch, s.best_val_loss, s.reason
        );
    }
    out
}

/// Fit the KAN autoencoder (spline or affine-constrained) and report R^2.
pub fn cmd_fit_kan(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let prep = prepare(cfg)?;
    let (model, history) = fit_kan_model(cfg, &prep)?;
    prep.audit.lock().expect("audit lock").mark_fit_complete();
    let metrics = kan_metrics(&prep, &model)?;

    let out = &cfg.output.dir;
    write_common(cfg, &prep, out)?;
    write_kan_model(&model, &out.join("kan.model"))?;
    let hist_path = out.join("history.csv");
    std::fs::write(&hist_path, history.to_csv()).map_err(|e| io_err(&hist_path, e))?;
    let mut report = metadata_lines(cfg, &prep, "kan-pca fit");
    report.push_str(&metrics_table(&[("kan-pca", &metrics)]));
    report.push_str(&stage_summary(&history));
    let report = finish_report(report, &prep, cfg, started);
    let path = out.join("report.txt");
    std::fs::write(&path, &report).map_err(|e| io_err(&path, e))?;
    print!("{report}");
    Ok(())
}

/// Fit both models on identical splits and emit the two-row comparison table.
pub fn cmd_benchmark(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let started = Instant::now();
    let prep = prepare(cfg)?;
    let pca = fit_pca_model(cfg, &prep)?;
    let (model, history) = fit_kan_model(cfg, &prep)?;
    prep.audit.lock().expect("audit lock").mark_fit_complete();
    let pca_m = pca_metrics(&prep, &pca)?;
    let kan_m = kan_metrics(&prep, &model)?;

    let out = &cfg.output.dir;
    write_common(cfg, &prep, out)?;
    write_pca_model(&pca, &out.join("pca.model"))?;
    write_kan_model(&model, &out.join("kan.model"))?;
    let hist_path = out.join("history.csv");
    std::fs::write(&hist_path, history.to_csv()).map_err(|e| io_err(&hist_path, e))?;

    // Standardized full panel, reloadable as wide_returns.
    let std_panel = ReturnPanel {
        dates: prep.dates.clone(),
        tickers: prep.tickers.clone(),
        values: prep.full_values(),
        standardization: prep.splits.train.standardization.clone(),
    };
    write_csv(&std_panel, &out.join("standardized_panel.csv"))?;

    let mut report = metadata_lines(cfg, &prep, "benchmark");
    report.push_str(&metrics_table(&[("pca", &pca_m), ("kan-pca", &kan_m)]));
    let _ = writeln!(report, "{}", shares_line(&pca));
    report.push_str(&stage_summary(&history));
    let report = finish_report(report, &prep, cfg, started);
    let path = out.join("benchmark.txt");
    std::fs::write(&path, &report).map_err(|e| io_err(&path, e))?;
    print!("{report}");
    Ok(())
}

/// Factor series z_t over the full panel (standardized with training
/// statistics), one column per factor.
pub fn cmd_export_factors(
    cfg: &ExperimentConfig,
    model_path: &Path,
    out_path: &Path,
) -> Result<(), AppError> {
    let prep = prepare_for_model(cfg, model_path)?;
    let (prep, artifact) = prep;
    let full = prep.full_values();
    let z = match &artifact {
        ModelArtifact::Kan(m) => {
            let (z, _) = m.predict(full.view())?;
            z
        }
        ModelArtifact::Pca(p) => pca_transform(p, full.view())?,
    };
    let k = z.ncols();
    let mut csv = String::from("date");
    for f in 1..=k {
        let _ = write!(csv, ",factor_{f}");
    }
    csv.push('\n');
    for (r, date) in prep.dates.iter().enumerate() {
        let _ = write!(csv, "{date}");
        for c in 0..k {
            let _ = write!(csv, ",{}", z[[r, c]]);
        }
        csv.push('\n');
    }
    std::fs::write(out_path, csv).map_err(|e| io_err(out_path, e))?;
    println!("wrote {} factor rows ({} factors) to {}", z.nrows(), k, out_path.display());
    Ok(())
}

/// Load the model first so dimension mismatches surface as data errors, then
/// run the standard pipeline with the model's input width enforced.
fn prepare_for_model(
    cfg: &ExperimentConfig,
    model_path: &Path,
) -> Result<(Prepared, ModelArtifact), AppError> {
    let artifact = read_model(model_path)?;
    let n_inputs = match &artifact {
        ModelArtifact::Kan(m) => m.n_inputs(),
        ModelArtifact::Pca(p) => p.loadings.nrows(),
    };
    let mut cfg = cfg.clone();
    if cfg.model.architecture[0] != n_inputs {
        cfg.model.architecture = vec![n_inputs, cfg.k().min(n_inputs)];
    }
    let prep = prepare(&cfg)?;
    Ok((prep, artifact))
}

/// Sampled first-encoder-layer edge functions for plotting. Affine models
/// export straight lines (the mode is noted on stdout).
pub fn cmd_export_edges(
    model_path: &Path,
    out_path: &Path,
    samples: usize,
) -> Result<(), AppError> {
    if samples < 2 {
        return Err(AppError::Usage("--samples must be at least 2".into()));
    }
    let artifact = read_model(model_path)?;
    let model = match artifact {
        ModelArtifact::Kan(m) => m,
        ModelArtifact::Pca(_) => {
            return Err(AppError::Data(
                "edge export needs a kan model file; pca models have no edge functions".into(),
            ))
        }
    };
    let layer = model
        .encoder
        .first()
        .ok_or_else(|| AppError::Data("model has an empty encoder".into()))?;
    if layer.mode() == kanpca::kan::LayerMode::Affine {
        println!("note: affine-mode model, exported curves are straight lines");
    }
    let (lo, hi) = layer.knots().domain();
    let mut csv = String::from("target_node,source_index,x,phi\n");
    for j in 0..layer.n_out() {
        for i in 0..layer.n_in() {
            for s in 0..samples {
                let x = lo + (hi - lo) * s as f64 / (samples - 1) as f64;
                let phi = layer
                    .edge_value(j, i, x)
                    .map_err(|e| AppError::Numerical(e.to_string()))?;
                let _ = writeln!(csv, "{j},{i},{x},{phi}");
            }
        }
    }
    std::fs::write(out_path, csv).map_err(|e| io_err(out_path, e))?;
    println!(
        "wrote {} edge curves x {} samples to {}",
        layer.n_out() * layer.n_in(),
        samples,
        out_path.display()
    );
    Ok(())
}

/// Print a model file's header.
pub fn cmd_inspect(model_path: &Path) -> Result<(), AppError> {
    print!("{}", read_header(model_path)?);
    Ok(())
}

/// Resolve an output file location for exports relative to the output dir
/// when a bare file name is given.
pub fn resolve_out_file(cfg: &ExperimentConfig, path: &Path) -> PathBuf {
    if path.is_absolute() || path.parent().map(|p| !p.as_os_str().is_empty()).unwrap_or(false) {
        path.to_path_buf()
    } else {
        cfg.output.dir.join(path)
    }
}

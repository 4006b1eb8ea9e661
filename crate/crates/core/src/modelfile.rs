//! Single-file model format shared by the KAN autoencoder and classical PCA.
//!
//! Layout: a UTF-8 `key = value` header describing format version, kind,
//! architecture, per-layer grids, mode, and seed, followed by a `---` line
//! and the declared parameter blocks as little-endian 64-bit floats. The
//! header's `blocks` entry lists every block with its shape, so a reader can
//! walk the binary section without knowing the kind in advance.

use crate::kan::{EdgeActivation, KanLayer, LayerMode};
use crate::linalg::PcaModel;
use crate::splines::{KnotVector, SplineCoeffs};
use crate::train::{InitKind, KanPcaModel, ModelMeta};
use ndarray::{Array1, Array2};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

const MAGIC: &str = "kanpca-model v1";
const SEPARATOR: &[u8] = b"\n---\n";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("failed to access {path}: {source}")]
    Io { path: String, #[source] source: std::io::Error },
    #[error("not a model file (bad magic line)")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("missing header key {0}")]
    MissingKey(&'static str),
    #[error("binary section truncated: block {block} needs {needed} bytes")]
    Truncated { block: String, needed: usize },
    #[error("inconsistent model description: {0}")]
    Inconsistent(String),
}

/// Either trained artifact, as stored on disk.
pub enum ModelArtifact {
    Kan(KanPcaModel),
    Pca(PcaModel),
}

struct Block {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

fn render_header(lines: &[(String, String)], blocks: &[Block]) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for (k, v) in lines {
        let _ = writeln!(out, "{k} = {v}");
    }
    let spec: Vec<String> =
        blocks.iter().map(|b| format!("{}:{}:{}", b.name, b.rows, b.cols)).collect();
    let _ = writeln!(out, "blocks = {}", spec.join(";"));
    out
}

fn encode(lines: &[(String, String)], blocks: &[Block]) -> Vec<u8> {
    let header = render_header(lines, blocks);
    let mut bytes = header.into_bytes();
    // render_header ends with '\n'; the separator supplies its own.
    bytes.pop();
    bytes.extend_from_slice(SEPARATOR);
    for b in blocks {
        for v in &b.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// Serialize a KAN autoencoder model.
pub fn write_kan_model(model: &KanPcaModel, path: &Path) -> Result<(), ModelFileError> {
    let mut lines: Vec<(String, String)> = vec![
        ("kind".into(), "kan".into()),
        ("seed".into(), model.meta.seed.to_string()),
        ("init".into(), model.meta.init.as_str().into()),
        ("degree".into(), model.meta.degree.to_string()),
        (
            "encoder_dims".into(),
            model.encoder_dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
        ),
    ];
    let mut blocks: Vec<Block> = Vec::new();
    for (l, layer) in model.encoder.iter().enumerate() {
        let mode = match layer.mode() {
            LayerMode::Spline => "spline",
            LayerMode::Affine => "affine",
        };
        lines.push((format!("layer{l}.mode"), mode.into()));
        let (lo, hi) = layer.knots().domain();
        lines.push((
            format!("layer{l}.grid"),
            format!("{},{},{},{}", lo, hi, layer.knots().num_intervals(), layer.knots().degree()),
        ));
        let (o, i) = (layer.n_out(), layer.n_in());
        match layer.mode() {
            LayerMode::Affine => {
                let mut slopes = Vec::with_capacity(o * i);
                for j in 0..o {
                    for c in 0..i {
                        slopes.push(layer.edge(j, c).affine_slope);
                    }
                }
                blocks.push(Block { name: format!("layer{l}.slopes"), rows: o, cols: i, values: slopes });
            }
            LayerMode::Spline => {
                let nb = layer.knots().basis_count();
                let mut base = Vec::with_capacity(o * i);
                let mut spline = Vec::with_capacity(o * i);
                let mut coeffs = Vec::with_capacity(o * i * nb);
                for j in 0..o {
                    for c in 0..i {
                        let e = layer.edge(j, c);
                        base.push(e.base_weight);
                        spline.push(e.spline_weight);
                        coeffs.extend_from_slice(&e.coeffs.values);
                    }
                }
                blocks.push(Block { name: format!("layer{l}.base"), rows: o, cols: i, values: base });
                blocks.push(Block { name: format!("layer{l}.spline"), rows: o, cols: i, values: spline });
                blocks.push(Block {
                    name: format!("layer{l}.coeffs"),
                    rows: o * i,
                    cols: nb,
                    values: coeffs,
                });
            }
        }
    }
    blocks.push(Block {
        name: "decoder".into(),
        rows: model.decoder.nrows(),
        cols: model.decoder.ncols(),
        values: model.decoder.iter().copied().collect(),
    });
    std::fs::write(path, encode(&lines, &blocks))
        .map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })
}

/// Serialize a classical PCA model.
pub fn write_pca_model(model: &PcaModel, path: &Path) -> Result<(), ModelFileError> {
    let lines: Vec<(String, String)> = vec![
        ("kind".into(), "pca".into()),
        ("n_assets".into(), model.loadings.nrows().to_string()),
        ("k".into(), model.k.to_string()),
    ];
    let blocks = vec![
        Block {
            name: "loadings".into(),
            rows: model.loadings.nrows(),
            cols: model.loadings.ncols(),
            values: model.loadings.iter().copied().collect(),
        },
        Block {
            name: "explained_ratios".into(),
            rows: 1,
            cols: model.explained_ratios.len(),
            values: model.explained_ratios.to_vec(),
        },
        Block { name: "total_variance".into(), rows: 1, cols: 1, values: vec![model.total_variance] },
    ];
    std::fs::write(path, encode(&lines, &blocks))
        .map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })
}

/// The header text of a model file, as written (used by `inspect`).
pub fn read_header(path: &Path) -> Result<String, ModelFileError> {
    let bytes = std::fs::read(path)
        .map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })?;
    let (header, _) = split_file(&bytes)?;
    Ok(header.to_string())
}

fn split_file(bytes: &[u8]) -> Result<(&str, &[u8]), ModelFileError> {
    let pos = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| ModelFileError::BadHeader("missing --- separator".into()))?;
    let header = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| ModelFileError::BadHeader("header is not UTF-8".into()))?;
    if !header.starts_with(MAGIC) {
        return Err(ModelFileError::BadMagic);
    }
    Ok((header, &bytes[pos + SEPARATOR.len()..]))
}

fn parse_header(header: &str) -> Result<Vec<(String, String)>, ModelFileError> {
    header
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelFileError::BadHeader(format!("bad line {line:?}")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn lookup<'a>(kv: &'a [(String, String)], key: &'static str) -> Result<&'a str, ModelFileError> {
    kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()).ok_or(ModelFileError::MissingKey(key))
}

fn parse_usize(v: &str, what: &str) -> Result<usize, ModelFileError> {
    v.parse().map_err(|_| ModelFileError::BadHeader(format!("bad {what}: {v:?}")))
}

fn parse_f64(v: &str, what: &str) -> Result<f64, ModelFileError> {
    v.parse().map_err(|_| ModelFileError::BadHeader(format!("bad {what}: {v:?}")))
}

/// Load either model kind from disk.
pub fn read_model(path: &Path) -> Result<ModelArtifact, ModelFileError> {
    let bytes = std::fs::read(path)
        .map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })?;
    let (header, mut binary) = split_file(&bytes)?;
    let kv = parse_header(header)?;

    let block_spec = lookup(&kv, "blocks")?;
    let mut blocks: Vec<Block> = Vec::new();
    for part in block_spec.split(';').filter(|p| !p.is_empty()) {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 3 {
            return Err(ModelFileError::BadHeader(format!("bad block spec {part:?}")));
        }
        let rows = parse_usize(fields[1], "block rows")?;
        let cols = parse_usize(fields[2], "block cols")?;
        let count = rows * cols;
        let needed = count * 8;
        if binary.len() < needed {
            return Err(ModelFileError::Truncated { block: fields[0].to_string(), needed });
        }
        let values: Vec<f64> = binary[..needed]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        binary = &binary[needed..];
        blocks.push(Block { name: fields[0].to_string(), rows, cols, values });
    }
    let take = |name: String| -> Result<&Block, ModelFileError> {
        blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or(ModelFileError::Inconsistent(format!("missing block {name}")))
    };

    match lookup(&kv, "kind")? {
        "pca" => {
            let n = parse_usize(lookup(&kv, "n_assets")?, "n_assets")?;
            let k = parse_usize(lookup(&kv, "k")?, "k")?;
            let loadings = take("loadings".into())?;
            if loadings.rows != n || loadings.cols != k {
                return Err(ModelFileError::Inconsistent("loadings shape".into()));
            }
            let loadings = Array2::from_shape_vec((n, k), loadings.values.clone())
                .map_err(|e| ModelFileError::Inconsistent(e.to_string()))?;
            let ratios = Array1::from_vec(take("explained_ratios".into())?.values.clone());
            let total = take("total_variance".into())?.values[0];
            Ok(ModelArtifact::Pca(PcaModel {
                loadings,
                k,
                explained_ratios: ratios,
                total_variance: total,
            }))
        }
        "kan" => {
            let seed = lookup(&kv, "seed")?
                .parse::<u64>()
                .map_err(|_| ModelFileError::BadHeader("bad seed".into()))?;
            let init = match lookup(&kv, "init")? {
                "pca" => InitKind::Pca,
                _ => InitKind::Random,
            };
            let degree = parse_usize(lookup(&kv, "degree")?, "degree")?;
            let dims: Vec<usize> = lookup(&kv, "encoder_dims")?
                .split(',')
                .map(|d| parse_usize(d, "encoder dim"))
                .collect::<Result<_, _>>()?;
            if dims.len() < 2 {
                return Err(ModelFileError::Inconsistent("encoder_dims too short".into()));
            }
            let mut encoder = Vec::with_capacity(dims.len() - 1);
            for l in 0..dims.len() - 1 {
                let (n_in, n_out) = (dims[l], dims[l + 1]);
                let grid = lookup_owned(&kv, &format!("layer{l}.grid"))?;
                let parts: Vec<&str> = grid.split(',').collect();
                if parts.len() != 4 {
                    return Err(ModelFileError::BadHeader(format!("bad grid {grid:?}")));
                }
                let lo = parse_f64(parts[0], "grid lo")?;
                let hi = parse_f64(parts[1], "grid hi")?;
                let intervals = parse_usize(parts[2], "grid intervals")?;
                let layer_degree = parse_usize(parts[3], "grid degree")?;
                let knots = KnotVector::uniform(lo, hi, intervals, layer_degree)
                    .map_err(|e| ModelFileError::Inconsistent(e.to_string()))?;
                let mode = lookup_owned(&kv, &format!("layer{l}.mode"))?;
                let layer = match mode.as_str() {
                    "affine" => {
                        let slopes = take(format!("layer{l}.slopes"))?;
                        let nb = knots.basis_count();
                        let edges: Vec<EdgeActivation> = slopes
                            .values
                            .iter()
                            .map(|&s| EdgeActivation {
                                base_weight: 0.0,
                                spline_weight: 0.0,
                                coeffs: SplineCoeffs::zeros(nb),
                                affine_slope: s,
                            })
                            .collect();
                        KanLayer::from_parts(n_in, n_out, LayerMode::Affine, knots, edges)
                            .map_err(|e| ModelFileError::Inconsistent(e.to_string()))?
                    }
                    "spline" => {
                        let base = take(format!("layer{l}.base"))?.values.clone();
                        let spline = take(format!("layer{l}.spline"))?.values.clone();
                        let coeffs = take(format!("layer{l}.coeffs"))?;
                        let nb = knots.basis_count();
                        if coeffs.cols != nb || base.len() != n_in * n_out {
                            return Err(ModelFileError::Inconsistent(format!(
                                "layer {l} block shapes"
                            )));
                        }
                        let edges: Vec<EdgeActivation> = (0..n_in * n_out)
                            .map(|e| EdgeActivation {
                                base_weight: base[e],
                                spline_weight: spline[e],
                                coeffs: SplineCoeffs::new(
                                    coeffs.values[e * nb..(e + 1) * nb].to_vec(),
                                ),
                                affine_slope: 0.0,
                            })
                            .collect();
                        KanLayer::from_parts(n_in, n_out, LayerMode::Spline, knots, edges)
                            .map_err(|e| ModelFileError::Inconsistent(e.to_string()))?
                    }
                    other => {
                        return Err(ModelFileError::BadHeader(format!("bad layer mode {other:?}")))
                    }
                };
                encoder.push(layer);
            }
            let dec = take("decoder".into())?;
            let decoder = Array2::from_shape_vec((dec.rows, dec.cols), dec.values.clone())
                .map_err(|e| ModelFileError::Inconsistent(e.to_string()))?;
            Ok(ModelArtifact::Kan(KanPcaModel {
                encoder,
                decoder,
                meta: ModelMeta { seed, init, degree },
            }))
        }
        other => Err(ModelFileError::BadHeader(format!("unknown kind {other:?}"))),
    }
}

fn lookup_owned(kv: &[(String, String)], key: &str) -> Result<String, ModelFileError> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| ModelFileError::BadHeader(format!("missing header key {key}")))
}

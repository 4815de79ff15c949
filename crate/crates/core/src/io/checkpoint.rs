//! Checkpoint directory: `manifest.json` plus one little-endian `f32`
//! row-major file per tensor and a vocabulary file, each with a SHA-256.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Metadata, ModelBundle, Vocab};
use crate::error::{Error, Result};
use crate::model::nn::Matrix;
use crate::model::{LayerWeights, ModelConfig};

pub const CHECKPOINT_MAGIC: &str = "ssm-influence-checkpoint";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    magic: String,
    format_version: u32,
    config: ModelConfig,
    metadata: Metadata,
    vocab: FileRef,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileRef {
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    eos_id: Option<u32>,
    /// Hex-encoded bytes per token id.
    tokens: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over every referenced file's checksum, in manifest order.
fn export_hash(vocab_sha: &str, tensors: &[TensorEntry]) -> String {
    let mut h = Sha256::new();
    h.update(format!("vocab:{vocab_sha}\n"));
    for t in tensors {
        h.update(format!("{}:{}\n", t.name, t.sha256));
    }
    hex::encode(h.finalize())
}

/// Tensor names and shapes implied by a configuration, in canonical order.
fn expected_tensors(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (dm, di, ns) = (cfg.d_model, cfg.d_inner, cfg.d_state);
    let mut out = vec![("embedding".to_string(), vec![cfg.vocab_size, dm])];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.extend([
            (p("norm"), vec![dm]),
            (p("in_proj"), vec![2 * di, dm]),
            (p("conv1d.weight"), vec![di, cfg.d_conv]),
            (p("conv1d.bias"), vec![di]),
            (p("x_proj"), vec![cfg.x_proj_dim(), di]),
            (p("dt_proj.weight"), vec![di, cfg.dt_rank]),
            (p("dt_proj.bias"), vec![di]),
            (p("A_log"), vec![di, ns]),
            (p("D"), vec![di]),
            (p("out_proj"), vec![dm, di]),
        ]);
    }
    out.push(("norm_f".to_string(), vec![dm]));
    out
}

fn tensor_data(bundle: &ModelBundle, name: &str) -> Vec<f32> {
    if name == "embedding" {
        return bundle.embedding.data.clone();
    }
    if name == "norm_f" {
        return bundle.norm_f.clone();
    }
    let rest = name.strip_prefix("layers.").expect("layer tensor name");
    let (idx, field) = rest.split_once('.').expect("layer tensor field");
    let w = &bundle.layers[idx.parse::<usize>().expect("layer index")];
    match field {
        "norm" => w.norm_weight.clone(),
        "in_proj" => w.in_proj.data.clone(),
        "conv1d.weight" => w.conv_kernel.clone(),
        "conv1d.bias" => w.conv_bias.clone(),
        "x_proj" => w.x_proj.data.clone(),
        "dt_proj.weight" => w.dt_proj.data.clone(),
        "dt_proj.bias" => w.dt_bias.clone(),
        "A_log" => w.a_log.clone(),
        "D" => w.d_skip.clone(),
        "out_proj" => w.out_proj.data.clone(),
        other => unreachable!("unknown tensor field {other}"),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `bundle` into `dir` (created if needed). Output is byte-identical
/// for identical bundles.
pub fn save_checkpoint(bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let dir = dir.as_ref();
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;

    let vocab = VocabFile {
        eos_id: bundle.vocab.eos_id,
        tokens: bundle.vocab.tokens.iter().map(hex::encode).collect(),
    };
    let vocab_bytes = serde_json::to_vec_pretty(&vocab)?;
    write_file(&dir.join("vocab.json"), &vocab_bytes)?;
    let vocab_ref = FileRef {
        file: "vocab.json".into(),
        sha256: sha256_hex(&vocab_bytes),
    };

    let mut tensors = Vec::new();
    for (name, shape) in expected_tensors(&bundle.config) {
        let bytes: Vec<u8> = tensor_data(bundle, &name).iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = format!("tensors/{name}.bin");
        write_file(&dir.join(&file), &bytes)?;
        tensors.push(TensorEntry {
            name,
            shape,
            dtype: "f32".into(),
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    let metadata = Metadata {
        source: bundle.metadata.source.clone(),
        export_hash: export_hash(&vocab_ref.sha256, &tensors),
    };
    let manifest = Manifest {
        magic: CHECKPOINT_MAGIC.into(),
        format_version: FORMAT_VERSION,
        config: bundle.config.clone(),
        metadata,
        vocab: vocab_ref,
        tensors,
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &text)
}

fn load_err(tensor: &str, reason: impl Into<String>) -> Error {
    Error::Load {
        tensor: tensor.to_string(),
        reason: reason.into(),
    }
}

fn read_checked(dir: &Path, name: &str, file: &str, sha: &str) -> Result<Vec<u8>> {
    let path = dir.join(file);
    let bytes = fs::read(&path).map_err(|e| load_err(name, format!("cannot read {}: {e}", path.display())))?;
    if sha256_hex(&bytes) != sha {
        return Err(load_err(name, "checksum mismatch"));
    }
    Ok(bytes)
}

/// Loads and validates a checkpoint directory written by [`save_checkpoint`]
/// or by any exporter following the same manifest schema.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|e| load_err(MANIFEST_FILE, format!("malformed manifest: {e}")))?;
    if manifest.magic != CHECKPOINT_MAGIC {
        return Err(load_err(MANIFEST_FILE, format!("bad magic {:?}", manifest.magic)));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(load_err(
            MANIFEST_FILE,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let cfg = manifest.config;
    cfg.validate().map_err(|e| load_err(MANIFEST_FILE, e.to_string()))?;

    let expected_hash = export_hash(&manifest.vocab.sha256, &manifest.tensors);
    if manifest.metadata.export_hash != expected_hash {
        return Err(load_err(MANIFEST_FILE, "export hash does not match tensor checksums"));
    }

    let vocab_bytes = read_checked(dir, "vocab", &manifest.vocab.file, &manifest.vocab.sha256)?;
    let vf: VocabFile =
        serde_json::from_slice(&vocab_bytes).map_err(|e| load_err("vocab", format!("malformed vocabulary: {e}")))?;
    let tokens = vf
        .tokens
        .iter()
        .map(|h| hex::decode(h).map_err(|e| load_err("vocab", format!("bad hex token: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocab {
        tokens,
        eos_id: vf.eos_id,
    };

    let entries: HashMap<&str, &TensorEntry> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut data: HashMap<String, Vec<f32>> = HashMap::new();
    for (name, shape) in expected_tensors(&cfg) {
        let entry = entries.get(name.as_str()).ok_or_else(|| load_err(&name, "missing from manifest"))?;
        if entry.dtype != "f32" {
            return Err(load_err(&name, format!("unsupported dtype {}", entry.dtype)));
        }
        if entry.shape != shape {
            return Err(load_err(&name, format!("shape {:?}, expected {:?}", entry.shape, shape)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| load_err(&name, format!("cannot read {}: {e}", path.display())))?;
        let count: usize = shape.iter().product();
        if bytes.len() != 4 * count {
            return Err(load_err(
                &name,
                format!("file holds {} bytes, expected {}", bytes.len(), 4 * count),
            ));
        }
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(load_err(&name, "checksum mismatch"));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        data.insert(name, values);
    }

    let mut take = |name: String| data.remove(&name).expect("tensor loaded above");
    let (dm, di) = (cfg.d_model, cfg.d_inner);
    let embedding = Matrix::new(cfg.vocab_size, dm, take("embedding".into()));
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        layers.push(LayerWeights {
            norm_weight: take(p("norm")),
            in_proj: Matrix::new(2 * di, dm, take(p("in_proj"))),
            conv_kernel: take(p("conv1d.weight")),
            conv_bias: take(p("conv1d.bias")),
            x_proj: Matrix::new(cfg.x_proj_dim(), di, take(p("x_proj"))),
            dt_proj: Matrix::new(di, cfg.dt_rank, take(p("dt_proj.weight"))),
            dt_bias: take(p("dt_proj.bias")),
            a_log: take(p("A_log")),
            d_skip: take(p("D")),
            out_proj: Matrix::new(dm, di, take(p("out_proj"))),
        });
    }
    let norm_f = take("norm_f".into());
    let bundle = ModelBundle {
        config: cfg,
        embedding,
        layers,
        norm_f,
        vocab,
        metadata: manifest.metadata,
    };
    bundle.validate()?;
    Ok(bundle)
}

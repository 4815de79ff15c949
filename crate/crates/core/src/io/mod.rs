//! Portable formats: checkpoint directories, prompt manifests, experiment
//! reports, plus synthetic model generation.

mod checkpoint;
mod manifest;
mod report;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, MANIFEST_FILE};
pub use manifest::{
    builtin_prompt_suite, tag_and_tokenize_bytes, PromptEntry, PromptManifest, TokenTag, FUNCTION_WORDS,
};
pub use report::{
    format_sig9, read_report_csv, read_report_json, read_summary_csv, round_sig9, write_report, ExperimentReport,
    summary_path, ReportFormat, ReportRow, SummaryEntry, CSV_COLUMNS, SUMMARY_COLUMNS,
};
pub use synth::synth_model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::nn::Matrix;
use crate::model::{LayerWeights, ModelConfig};

/// Token id → byte sequence table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub tokens: Vec<Vec<u8>>,
    pub eos_id: Option<u32>,
}

impl Vocab {
    /// One token per byte value `0..size` (`size ≤ 256`), no EOS.
    pub fn byte_level(size: usize) -> Self {
        Self {
            tokens: (0..size.min(256)).map(|b| vec![b as u8]).collect(),
            eos_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let piece = self
                .tokens
                .get(id as usize)
                .ok_or_else(|| Error::Input(format!("token id {id} not in vocabulary")))?;
            out.extend_from_slice(piece);
        }
        Ok(out)
    }

    /// Lossy UTF-8 rendering for display.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Metadata {
    pub source: String,
    pub export_hash: String,
}

/// Weights, configuration and vocabulary of one language model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    /// `vocab × d_model`, tied with the output head.
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub norm_f: Vec<f32>,
    pub vocab: Vocab,
    pub metadata: Metadata,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let cfg = &self.config;
        if (self.embedding.rows, self.embedding.cols) != (cfg.vocab_size, cfg.d_model) {
            return Err(Error::Dimension("embedding shape does not match config".into()));
        }
        if self.norm_f.len() != cfg.d_model {
            return Err(Error::Dimension("final norm shape does not match config".into()));
        }
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Dimension(format!(
                "{} layers present, config declares {}",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate(cfg).map_err(|e| Error::Dimension(format!("layer {i}: {e}")))?;
        }
        if self.vocab.len() != cfg.vocab_size {
            return Err(Error::Dimension(format!(
                "vocabulary has {} entries, config declares {}",
                self.vocab.len(),
                cfg.vocab_size
            )));
        }
        if let Some(eos) = self.vocab.eos_id {
            if eos as usize >= cfg.vocab_size {
                return Err(Error::Input(format!("eos id {eos} outside vocabulary")));
            }
        }
        Ok(())
    }
}

//! Checkpoint and loss-curve artifacts.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bpe::Vocab;
use crate::lm::{LmError, ToyLMParams, TrainConfig};

/// A trained model on disk: shapes, flattened tensors, the hash of
/// the vocabulary it was trained with, and the training configuration
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub window: usize,
    pub pad_id: u32,
    pub eot_id: u32,
    pub vocab_hash: String,
    pub train_config: TrainConfig,
    pub embed: Vec<f64>,
    pub proj: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    /// Bundles trained parameters with their provenance.
    pub fn from_parts(
        params: &ToyLMParams,
        vocab: &Vocab,
        config: &TrainConfig,
        fingerprint: Option<String>,
    ) -> Checkpoint {
        Checkpoint {
            fingerprint,
            vocab_size: params.vocab_size,
            embed_dim: params.embed_dim,
            window: params.window,
            pad_id: params.pad_id,
            eot_id: params.eot_id,
            vocab_hash: vocab.content_hash(),
            train_config: config.clone(),
            embed: params.embed.clone(),
            proj: params.proj.clone(),
            bias: params.bias.clone(),
        }
    }

    /// Writes the checkpoint as a single JSON object.
    pub fn save<W: Write>(&self, mut out: W) -> Result<(), LmError> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        out.write_all(json.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Reads and validates a checkpoint written by [`Checkpoint::save`].
    pub fn load<R: BufRead>(mut input: R) -> Result<Checkpoint, LmError> {
        let mut contents = String::new();
        input.read_to_string(&mut contents)?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&contents).map_err(|err| LmError::MalformedCheckpoint {
                message: err.to_string(),
            })?;
        checkpoint.validate()?;
        Ok(checkpoint)
    }

    fn validate(&self) -> Result<(), LmError> {
        let malformed = |message: &str| LmError::MalformedCheckpoint {
            message: message.to_string(),
        };
        if self.embed.len() != self.vocab_size * self.embed_dim {
            return Err(malformed("embedding length does not match shapes"));
        }
        if self.proj.len() != self.window * self.embed_dim * self.vocab_size {
            return Err(malformed("projection length does not match shapes"));
        }
        if self.bias.len() != self.vocab_size {
            return Err(malformed("bias length does not match vocabulary size"));
        }
        if (self.pad_id as usize) >= self.vocab_size || (self.eot_id as usize) >= self.vocab_size {
            return Err(malformed("special token ids fall outside the vocabulary"));
        }
        let finite = self
            .embed
            .iter()
            .chain(self.proj.iter())
            .chain(self.bias.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(malformed("parameters contain a non-finite value"));
        }
        Ok(())
    }

    /// Reconstructs model parameters, refusing a vocabulary other than
    /// the one the checkpoint was trained with.
    pub fn into_params(self, vocab: &Vocab) -> Result<ToyLMParams, LmError> {
        let found = vocab.content_hash();
        if found != self.vocab_hash {
            return Err(LmError::VocabHashMismatch {
                expected: self.vocab_hash,
                found,
            });
        }
        if self.vocab_size != vocab.size() + 2 {
            return Err(LmError::MalformedCheckpoint {
                message: format!(
                    "checkpoint vocabulary {} does not equal tokenizer size {} plus specials",
                    self.vocab_size,
                    vocab.size()
                ),
            });
        }
        Ok(ToyLMParams {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            window: self.window,
            pad_id: self.pad_id,
            eot_id: self.eot_id,
            embed: self.embed,
            proj: self.proj,
            bias: self.bias,
        })
    }
}

/// Writes the per-epoch loss curve as CSV. The optional fingerprint
/// goes in a comment line above the header.
pub fn write_loss_csv<W: Write>(
    curve: &[f64],
    fingerprint: Option<&str>,
    mut out: W,
) -> std::io::Result<()> {
    if let Some(fingerprint) = fingerprint {
        writeln!(out, "# config_fingerprint: {fingerprint}")?;
    }
    writeln!(out, "epoch,mean_nll")?;
    for (epoch, nll) in curve.iter().enumerate() {
        writeln!(out, "{epoch},{nll}")?;
    }
    Ok(())
}

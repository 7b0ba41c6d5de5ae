//! Windowed softmax causal language model.
//!
//! The model predicts each token from the `k` tokens before it:
//! the window's embeddings (rows of `E`) are concatenated into a
//! `k*d` vector, projected through `U`, and shifted by the bias `b`
//! to produce logits over the vocabulary. Positions before the start
//! of the sequence are filled with a reserved pad token, and the
//! trainer appends an end-of-text token so generation can stop.
//!
//! The loss is the summed negative log-likelihood of every token from
//! the second position on; the first token has no real context and is
//! excluded. Gradients are exact, not approximated, and the test suite
//! holds them to central finite differences.

pub mod adamw;
pub mod checkpoint;
pub mod train;

pub use adamw::{adamw_step, AdamWHyper, OptState};
pub use checkpoint::{write_loss_csv, Checkpoint};
pub use train::{train, TrainConfig};

use thiserror::Error;

/// Default embedding width.
pub const DEFAULT_EMBED_DIM: usize = 32;

/// Default context window length.
pub const DEFAULT_WINDOW: usize = 8;

/// Width and window of the model, independent of vocabulary size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub window: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed_dim: DEFAULT_EMBED_DIM,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Errors from the model, the optimizer, and the trainer.
#[derive(Debug, Error)]
pub enum LmError {
    /// A sequence referenced a token id at or above the vocabulary.
    #[error("token id {id} is out of range for model vocabulary {vocab_size}")]
    TokenIdOutOfRange { id: u32, vocab_size: usize },
    /// The operation needs more tokens than the sequence has.
    #[error("sequence of length {length} is too short, need at least {minimum}")]
    SequenceTooShort { length: usize, minimum: usize },
    /// Two structures that must share shapes do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A gradient entry was NaN or infinite.
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    /// The trainer was handed nothing to train on.
    #[error("training dataset is empty")]
    EmptyDataset,
    /// A checkpoint file failed validation while loading.
    #[error("malformed checkpoint: {message}")]
    MalformedCheckpoint { message: String },
    /// The checkpoint was trained against a different vocabulary.
    #[error("checkpoint was trained with vocabulary {expected}, but the loaded vocabulary hashes to {found}")]
    VocabHashMismatch { expected: String, found: String },
    /// Reading or writing a checkpoint stream failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Model parameters.
///
/// `embed` is `vocab_size x embed_dim` row-major, `proj` is
/// `(window*embed_dim) x vocab_size` row-major, and `bias` has one
/// entry per vocabulary id. The pad and end-of-text ids are ordinary
/// rows of `embed`; they are recorded here so inference agrees with
/// training about which ids they were.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLMParams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub window: usize,
    pub pad_id: u32,
    pub eot_id: u32,
    pub embed: Vec<f64>,
    pub proj: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ToyLMParams {
    /// All-zero parameters with the given shape.
    pub fn zeros(vocab_size: usize, dims: ModelDims, pad_id: u32, eot_id: u32) -> ToyLMParams {
        ToyLMParams {
            vocab_size,
            embed_dim: dims.embed_dim,
            window: dims.window,
            pad_id,
            eot_id,
            embed: vec![0.0; vocab_size * dims.embed_dim],
            proj: vec![0.0; dims.window * dims.embed_dim * vocab_size],
            bias: vec![0.0; vocab_size],
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.embed.len() + self.proj.len() + self.bias.len()
    }

    /// Reads one scalar by flat index over embed, then proj, then bias.
    pub fn get_flat(&self, index: usize) -> f64 {
        let (tensor, offset) = self.locate(index);
        tensor[offset]
    }

    /// Writes one scalar by flat index over embed, then proj, then bias.
    pub fn set_flat(&mut self, index: usize, value: f64) {
        if index < self.embed.len() {
            self.embed[index] = value;
        } else if index < self.embed.len() + self.proj.len() {
            let offset = index - self.embed.len();
            self.proj[offset] = value;
        } else {
            let offset = index - self.embed.len() - self.proj.len();
            self.bias[offset] = value;
        }
    }

    fn locate(&self, index: usize) -> (&[f64], usize) {
        if index < self.embed.len() {
            (&self.embed, index)
        } else if index < self.embed.len() + self.proj.len() {
            (&self.proj, index - self.embed.len())
        } else {
            (&self.bias, index - self.embed.len() - self.proj.len())
        }
    }

    fn validate_ids(&self, seq: &[u32]) -> Result<(), LmError> {
        for &id in seq {
            if id as usize >= self.vocab_size {
                return Err(LmError::TokenIdOutOfRange {
                    id,
                    vocab_size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// The context window for predicting position `i`: the `window`
    /// ids before `i`, oldest first, pad-filled on the left.
    fn context<'a>(&'a self, seq: &'a [u32], i: usize) -> impl Iterator<Item = u32> + 'a {
        let k = self.window as isize;
        let i = i as isize;
        (0..k).map(move |slot| {
            let pos = i - k + slot;
            if pos < 0 {
                self.pad_id
            } else {
                seq[pos as usize]
            }
        })
    }

    /// Logits over the vocabulary for predicting position `i`.
    fn logits_at(&self, seq: &[u32], i: usize) -> Vec<f64> {
        let d = self.embed_dim;
        let v_size = self.vocab_size;
        let mut logits = self.bias.clone();
        for (slot, token) in self.context(seq, i).enumerate() {
            let embed_row = token as usize * d;
            for m in 0..d {
                let x = self.embed[embed_row + m];
                let proj_row = (slot * d + m) * v_size;
                let proj = &self.proj[proj_row..proj_row + v_size];
                for (logit, weight) in logits.iter_mut().zip(proj) {
                    *logit += x * weight;
                }
            }
        }
        logits
    }
}

/// Gradient (or moment accumulator) with the shapes of [`ToyLMParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LMGradient {
    pub embed: Vec<f64>,
    pub proj: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LMGradient {
    /// A zero gradient shaped like `params`.
    pub fn zeros_like(params: &ToyLMParams) -> LMGradient {
        LMGradient {
            embed: vec![0.0; params.embed.len()],
            proj: vec![0.0; params.proj.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    /// Reads one scalar by the same flat indexing as the params.
    pub fn get_flat(&self, index: usize) -> f64 {
        if index < self.embed.len() {
            self.embed[index]
        } else if index < self.embed.len() + self.proj.len() {
            self.proj[index - self.embed.len()]
        } else {
            self.bias[index - self.embed.len() - self.proj.len()]
        }
    }

    /// Adds `other` elementwise.
    pub fn add(&mut self, other: &LMGradient) {
        for (a, b) in self.embed.iter_mut().zip(&other.embed) {
            *a += b;
        }
        for (a, b) in self.proj.iter_mut().zip(&other.proj) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for x in self
            .embed
            .iter_mut()
            .chain(self.proj.iter_mut())
            .chain(self.bias.iter_mut())
        {
            *x *= factor;
        }
    }

    /// True when every entry is a normal float, zero included.
    pub fn is_finite(&self) -> bool {
        self.embed
            .iter()
            .chain(self.proj.iter())
            .chain(self.bias.iter())
            .all(|x| x.is_finite())
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    max + sum.ln()
}

/// Log-probability rows for every position of `seq`.
///
/// Row `i` is the predictive distribution for the token at position
/// `i` given the tokens before it, so it depends only on positions
/// strictly less than `i`.
pub fn forward_logprobs(params: &ToyLMParams, seq: &[u32]) -> Result<Vec<Vec<f64>>, LmError> {
    if seq.is_empty() {
        return Err(LmError::SequenceTooShort {
            length: 0,
            minimum: 1,
        });
    }
    params.validate_ids(seq)?;
    let mut rows = Vec::with_capacity(seq.len());
    for i in 0..seq.len() {
        let mut logits = params.logits_at(seq, i);
        let lse = log_sum_exp(&logits);
        for z in &mut logits {
            *z -= lse;
        }
        rows.push(logits);
    }
    Ok(rows)
}

/// Summed negative log-likelihood of `seq` from the second token on.
pub fn clm_nll(params: &ToyLMParams, seq: &[u32]) -> Result<f64, LmError> {
    Ok(nll_and_grad_inner(params, seq, false)?.0)
}

/// Exact gradient of [`clm_nll`] with respect to every parameter.
pub fn clm_grad(params: &ToyLMParams, seq: &[u32]) -> Result<LMGradient, LmError> {
    let (_, grad) = nll_and_grad(params, seq)?;
    Ok(grad)
}

/// Loss and gradient in one pass, as the trainer consumes them.
pub fn nll_and_grad(params: &ToyLMParams, seq: &[u32]) -> Result<(f64, LMGradient), LmError> {
    let (nll, grad) = nll_and_grad_inner(params, seq, true)?;
    Ok((nll, grad.expect("gradient requested")))
}

fn nll_and_grad_inner(
    params: &ToyLMParams,
    seq: &[u32],
    want_grad: bool,
) -> Result<(f64, Option<LMGradient>), LmError> {
    if seq.len() < 2 {
        return Err(LmError::SequenceTooShort {
            length: seq.len(),
            minimum: 2,
        });
    }
    params.validate_ids(seq)?;
    let d = params.embed_dim;
    let v_size = params.vocab_size;
    let mut nll = 0.0;
    let mut grad = want_grad.then(|| LMGradient::zeros_like(params));
    for i in 1..seq.len() {
        let logits = params.logits_at(seq, i);
        let lse = log_sum_exp(&logits);
        let target = seq[i] as usize;
        nll += lse - logits[target];
        let Some(grad) = grad.as_mut() else {
            continue;
        };
        // softmax minus the one-hot target, the logit-space gradient
        let mut g: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        g[target] -= 1.0;
        for (bias, gv) in grad.bias.iter_mut().zip(&g) {
            *bias += gv;
        }
        for (slot, token) in params.context(seq, i).enumerate() {
            let embed_row = token as usize * d;
            for m in 0..d {
                let x = params.embed[embed_row + m];
                let proj_row = (slot * d + m) * v_size;
                let proj = &params.proj[proj_row..proj_row + v_size];
                let dproj = &mut grad.proj[proj_row..proj_row + v_size];
                let mut dx = 0.0;
                for v in 0..v_size {
                    dproj[v] += x * g[v];
                    dx += proj[v] * g[v];
                }
                grad.embed[embed_row + m] += dx;
            }
        }
    }
    Ok((nll, grad))
}

/// Greedily completes `prompt`, returning only the generated text.
///
/// Each step takes the argmax over the next-token distribution,
/// breaking ties toward the lowest token id, and stops early when the
/// end-of-text token wins.
///
/// # Panics
///
/// Panics when `max_new_tokens` is zero.
pub fn generate(
    params: &ToyLMParams,
    vocab: &crate::bpe::Vocab,
    prompt: &str,
    max_new_tokens: usize,
) -> Result<String, LmError> {
    assert!(max_new_tokens >= 1, "max_new_tokens must be at least 1");
    if params.vocab_size != vocab.size() + 2
        || params.pad_id as usize != vocab.size()
        || params.eot_id as usize != vocab.size() + 1
    {
        return Err(LmError::ShapeMismatch(format!(
            "model vocabulary of {} with pad {} and end-of-text {} does not fit a tokenizer of {} tokens plus the two specials",
            params.vocab_size, params.pad_id, params.eot_id, vocab.size()
        )));
    }
    let mut ids = vocab.encode(prompt);
    params.validate_ids(&ids)?;
    let prompt_len = ids.len();
    for _ in 0..max_new_tokens {
        let logits = params.logits_at(&ids, ids.len());
        let mut next = 0u32;
        let mut best = f64::NEG_INFINITY;
        for (id, &z) in logits.iter().enumerate() {
            if z > best {
                best = z;
                next = id as u32;
            }
        }
        if next == params.eot_id {
            break;
        }
        ids.push(next);
    }
    let completion: Vec<u32> = ids[prompt_len..]
        .iter()
        .copied()
        .filter(|&id| id != params.pad_id)
        .collect();
    let text = vocab
        .decode(&completion)
        .expect("generated ids stay inside the tokenizer vocabulary");
    Ok(text)
}

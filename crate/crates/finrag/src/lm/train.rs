//! Deterministic training loop over rendered instruction records.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bpe::Vocab;
use crate::dataset::InstructionRecord;
use crate::lm::adamw::{adamw_step, AdamWHyper, OptState};
use crate::lm::{nll_and_grad, LMGradient, LmError, ModelDims, ToyLMParams};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Profile sized for tuning billion-parameter models: kept for
    /// documentation parity, far too cold a learning rate for the
    /// desk-scale model.
    pub fn full_scale(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 1e-5,
            weight_decay: 0.1,
            max_seq_len: 512,
            seed,
        }
    }

    /// Default profile for the desk-scale model. Smaller batches and
    /// a warmer learning rate than [`TrainConfig::full_scale`], since
    /// a tiny model on a few hundred records needs the extra steps.
    pub fn toy(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            lr: 1e-3,
            ..TrainConfig::full_scale(seed)
        }
    }
}

/// Standard normal draw via the Box-Muller transform.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gaussian-initialized parameters, mean 0 and standard deviation
/// 0.02, filled in a fixed order so a seed pins every entry.
pub fn init_params(
    vocab_size: usize,
    dims: ModelDims,
    pad_id: u32,
    eot_id: u32,
    seed: u64,
) -> ToyLMParams {
    let mut params = ToyLMParams::zeros(vocab_size, dims, pad_id, eot_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slot in params
        .embed
        .iter_mut()
        .chain(params.proj.iter_mut())
        .chain(params.bias.iter_mut())
    {
        *slot = 0.02 * gaussian(&mut rng);
    }
    params
}

/// Tokenizes each record's rendered string, appends the end-of-text
/// id, and truncates to `max_seq_len`. Sequences that end up shorter
/// than two tokens are dropped since they contain nothing to predict.
pub(crate) fn encode_records(
    records: &[InstructionRecord],
    vocab: &Vocab,
    eot_id: u32,
    max_seq_len: usize,
) -> Vec<Vec<u32>> {
    records
        .iter()
        .map(|record| {
            let mut ids = vocab.encode(&record.rendered);
            ids.push(eot_id);
            ids.truncate(max_seq_len);
            ids
        })
        .filter(|ids| ids.len() >= 2)
        .collect()
}

fn shuffle_seed(seed: u64, epoch: u64) -> u64 {
    let mut z = seed.wrapping_add((epoch + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a fresh model on `records`, returning the parameters and the
/// per-epoch mean loss curve.
///
/// The model vocabulary is the tokenizer's plus a pad id and an
/// end-of-text id above it. Batch gradients average over the predicted
/// tokens in the batch. Runs are bit-reproducible for a fixed seed:
/// initialization, the per-epoch shuffle, and the reduction order of
/// parallel per-sequence gradients are all pinned.
pub fn train(
    records: &[InstructionRecord],
    vocab: &Vocab,
    dims: ModelDims,
    config: &TrainConfig,
) -> Result<(ToyLMParams, Vec<f64>), LmError> {
    let pad_id = vocab.size() as u32;
    let eot_id = vocab.size() as u32 + 1;
    let vocab_size = vocab.size() + 2;
    let sequences = encode_records(records, vocab, eot_id, config.max_seq_len);
    if sequences.is_empty() {
        return Err(LmError::EmptyDataset);
    }

    let mut params = init_params(vocab_size, dims, pad_id, eot_id, config.seed);
    let mut state = OptState::new(&params, AdamWHyper::new(config.lr, config.weight_decay));
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(config.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            let per_seq: Vec<(f64, usize, LMGradient)> = batch
                .par_iter()
                .map(|&i| {
                    let seq = &sequences[i];
                    let (nll, grad) = nll_and_grad(&params, seq)?;
                    Ok((nll, seq.len() - 1, grad))
                })
                .collect::<Result<_, LmError>>()?;

            let mut batch_grad = LMGradient::zeros_like(&params);
            let mut batch_tokens = 0usize;
            for (nll, tokens, grad) in &per_seq {
                epoch_nll += nll;
                batch_tokens += tokens;
                batch_grad.add(grad);
            }
            epoch_tokens += batch_tokens;
            batch_grad.scale(1.0 / batch_tokens as f64);
            adamw_step(&mut params, &batch_grad, &mut state)?;
        }
        curve.push(epoch_nll / epoch_tokens as f64);
    }
    Ok((params, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::train_bpe;
    use crate::dataset::{default_templates, format_record, SentimentLabel};

    fn tiny_dataset() -> (Vec<InstructionRecord>, Vocab) {
        let templates = default_templates();
        let cues = [
            ("shares soar", SentimentLabel::Positive),
            ("profit slumps", SentimentLabel::Negative),
            ("output steady", SentimentLabel::Neutral),
        ];
        let mut records = Vec::new();
        for i in 0..30u64 {
            let (text, label) = cues[(i % 3) as usize];
            records.push(format_record(text, label, &templates, 5, i));
        }
        let corpus: String = records
            .iter()
            .map(|r| r.rendered.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let vocab = train_bpe(corpus.as_bytes(), 300).unwrap();
        (records, vocab)
    }

    fn quick_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.1,
            max_seq_len: 128,
            seed: 13,
        }
    }

    fn quick_dims() -> ModelDims {
        ModelDims {
            embed_dim: 8,
            window: 4,
        }
    }

    #[test]
    fn init_is_gaussian_shaped() {
        let params = init_params(64, ModelDims::default(), 62, 63, 7);
        let n = params.param_count() as f64;
        let mean: f64 =
            (0..params.param_count()).map(|i| params.get_flat(i)).sum::<f64>() / n;
        let var: f64 = (0..params.param_count())
            .map(|i| (params.get_flat(i) - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((var.sqrt() - 0.02).abs() < 0.002, "std {}", var.sqrt());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_params(32, quick_dims(), 30, 31, 9);
        let b = init_params(32, quick_dims(), 30, 31, 9);
        let c = init_params(32, quick_dims(), 30, 31, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn encoding_appends_eot_and_truncates() {
        let (records, vocab) = tiny_dataset();
        let eot = vocab.size() as u32 + 1;
        let full = encode_records(&records[..1], &vocab, eot, 512);
        assert_eq!(*full[0].last().unwrap(), eot);
        let clipped = encode_records(&records[..1], &vocab, eot, 5);
        assert_eq!(clipped[0].len(), 5);
        assert_ne!(*clipped[0].last().unwrap(), eot);
    }

    #[test]
    fn zero_epochs_returns_initialized_params_and_empty_curve() {
        let (records, vocab) = tiny_dataset();
        let config = quick_config(0);
        let (params, curve) = train(&records, &vocab, quick_dims(), &config).unwrap();
        assert!(curve.is_empty());
        let expected = init_params(
            vocab.size() + 2,
            quick_dims(),
            vocab.size() as u32,
            vocab.size() as u32 + 1,
            config.seed,
        );
        assert_eq!(params, expected);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (_, vocab) = tiny_dataset();
        assert!(matches!(
            train(&[], &vocab, quick_dims(), &quick_config(1)),
            Err(LmError::EmptyDataset)
        ));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (records, vocab) = tiny_dataset();
        let config = quick_config(2);
        let (params_a, curve_a) = train(&records, &vocab, quick_dims(), &config).unwrap();
        let (params_b, curve_b) = train(&records, &vocab, quick_dims(), &config).unwrap();
        assert_eq!(curve_a, curve_b);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn loss_falls_on_a_learnable_dataset() {
        let (records, vocab) = tiny_dataset();
        let config = quick_config(4);
        let (_, curve) = train(&records, &vocab, quick_dims(), &config).unwrap();
        assert_eq!(curve.len(), 4);
        assert!(
            curve.last().unwrap() < curve.first().unwrap(),
            "curve {curve:?}"
        );
    }

    #[test]
    fn profiles_differ_only_in_batch_and_learning_rate() {
        let full = TrainConfig::full_scale(3);
        let toy = TrainConfig::toy(3);
        assert_eq!(
            (full.epochs, full.weight_decay, full.max_seq_len),
            (toy.epochs, toy.weight_decay, toy.max_seq_len)
        );
        assert_eq!(full.lr, 1e-5);
        assert_eq!(toy.lr, 1e-3);
        assert_eq!(full.batch_size, 32);
        assert_eq!(toy.batch_size, 8);
        assert_eq!(full.weight_decay, 0.1);
        assert_eq!(full.epochs, 10);
        assert_eq!(full.max_seq_len, 512);
    }
}

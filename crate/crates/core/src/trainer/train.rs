use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{CheckpointMeta, CheckpointOf, FORMAT_VERSION};
use super::early_stop::{EarlyStopping, Monitor, Observation, StopOutcome};
use super::model::{encoder_spec, sigmoid, softplus, AdamW, TinyEncoder};
use super::{ClassWeightsOf, ModelConfig};
use crate::corpus::{Corpus, SplitSpec};
use crate::error::{Error, Result};
use crate::labels::{LabelVector, NUM_CLASSES};
use crate::metrics;
use crate::rng;
use crate::scalar::Scalar;
use crate::tokenizer::{VocabOptions, WordPiece};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }
}

/// Runs epochs `1..=max_epochs` until validation loss stops improving for
/// `patience` epochs. `on_improved` fires after every new best epoch so the
/// caller can snapshot weights.
pub fn fit_loop<R, I>(max_epochs: usize, patience: usize, mut run_epoch: R, mut on_improved: I) -> Result<(TrainHistory, StopOutcome)>
where
    R: FnMut(usize) -> Result<EpochRecord>,
    I: FnMut(&EpochRecord),
{
    let mut stopper = EarlyStopping::<f64>::new(patience, Monitor::Minimize);
    let mut epochs = Vec::new();
    let mut stop_epoch = max_epochs;
    for epoch in 1..=max_epochs {
        let record = run_epoch(epoch)?;
        epochs.push(record);
        match stopper.observe(epoch, record.val_loss) {
            Observation::Improved => on_improved(&record),
            Observation::NoImprovement => {}
            Observation::Stop => {
                stop_epoch = epoch;
                break;
            }
        }
    }
    let outcome = StopOutcome {
        stop_epoch,
        best_epoch: stopper.best_epoch(),
        stopped_early: stop_epoch < max_epochs,
    };
    if outcome.best_epoch == 0 {
        return Err(Error::Training("validation loss was never finite".into()));
    }
    let history = TrainHistory {
        epochs,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
    };
    Ok((history, outcome))
}

struct Encoded {
    ids: Vec<u32>,
    y: [bool; NUM_CLASSES],
}

fn encode_split(vocab: &WordPiece, corpus: &Corpus, max_tokens: usize) -> Vec<Encoded> {
    corpus
        .samples()
        .par_iter()
        .map(|s| Encoded {
            ids: vocab.encode(&s.text, max_tokens),
            y: s.labels.flags(),
        })
        .collect()
}

/// Weighted binary cross-entropy summed over classes; the class weight
/// scales only the positive term.
fn sample_loss<T: Scalar>(logits: &[T; NUM_CLASSES], y: &[bool; NUM_CLASSES], w: &[T; NUM_CLASSES]) -> T {
    (0..NUM_CLASSES)
        .map(|c| if y[c] { w[c] * softplus(-logits[c]) } else { softplus(logits[c]) })
        .sum()
}

fn logit_grad<T: Scalar>(logits: &[T; NUM_CLASSES], y: &[bool; NUM_CLASSES], w: &[T; NUM_CLASSES], scale: T) -> [T; NUM_CLASSES] {
    std::array::from_fn(|c| {
        let p = sigmoid(logits[c]);
        let g = if y[c] { w[c] * (p - T::one()) } else { p };
        g * scale
    })
}

struct Evaluation {
    loss: f64,
    macro_f1: f64,
}

fn evaluate_split<T: Scalar>(model: &TinyEncoder<T>, data: &[Encoded], w: &[T; NUM_CLASSES]) -> Result<Evaluation> {
    let logits: Vec<[T; NUM_CLASSES]> = data.par_iter().map(|e| model.forward(&e.ids).logits).collect();
    let loss: f64 = logits
        .iter()
        .zip(data)
        .map(|(z, e)| sample_loss(z, &e.y, w).as_f64())
        .sum::<f64>()
        / data.len().max(1) as f64;
    let half = T::lit(0.5);
    let pred: Vec<[bool; NUM_CLASSES]> = logits.iter().map(|z| z.map(|v| sigmoid(v) >= half)).collect();
    let decisions: Vec<_> = logits
        .iter()
        .map(|z| super::decide(&z.map(sigmoid), half))
        .collect::<Result<_>>()?;
    let gold: Vec<LabelVector> = data
        .iter()
        .map(|e| LabelVector::new(e.y).expect("labels came from a validated corpus"))
        .collect();
    let report = metrics::evaluate::<T>(&pred, &decisions, &gold)?;
    Ok(Evaluation {
        loss,
        macro_f1: report.macro_f1.as_f64(),
    })
}

/// Trains the configured encoder on the `train` ids of `split`, selecting the
/// epoch with the lowest validation loss.
pub fn train<T: Scalar>(config: &ModelConfig, corpus: &Corpus, split: &SplitSpec) -> Result<(CheckpointOf<T>, TrainHistory)> {
    train_with_progress(config, corpus, split, |_| {})
}

pub fn train_with_progress<T: Scalar>(
    config: &ModelConfig,
    corpus: &Corpus,
    split: &SplitSpec,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(CheckpointOf<T>, TrainHistory)> {
    config.validate()?;
    let spec = encoder_spec(&config.encoder_id)?;
    split.validate_against(corpus)?;
    let train_set = corpus.subset(&split.train)?;
    let val_set = corpus.subset(&split.val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput("training and validation splits must be non-empty".into()));
    }
    let weights: ClassWeightsOf<T> = if config.use_class_weights {
        super::compute_class_weights(&train_set)?
    } else {
        ClassWeightsOf::uniform()
    };

    let vocab = WordPiece::build(
        train_set.iter().map(|s| s.text.as_str()),
        VocabOptions {
            min_word_freq: spec.min_word_freq,
            max_words: spec.max_words,
        },
    );
    let train_data = encode_split(&vocab, &train_set, config.max_tokens);
    let val_data = encode_split(&vocab, &val_set, config.max_tokens);

    let mut model = TinyEncoder::<T>::init(spec.clone(), vocab.len(), &mut rng::substream(config.seed, "init"));
    let mut opt = AdamW::<T>::new(model.num_params(), config.learning_rate, config.weight_decay);
    let mut order_rng = rng::substream(config.seed, "train");
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut grad = vec![T::zero(); model.num_params()];
    let w = weights.weights;

    let mut best_params = model.params().to_vec();
    let mut best_record = None;

    let (history, _) = {
        let model = &mut model;
        let best_params = &mut best_params;
        let best_record = &mut best_record;
        let current = std::cell::RefCell::new(Vec::<T>::new());
        fit_loop(
            config.epochs,
            config.patience,
            |epoch| {
                order.shuffle(&mut order_rng);
                let mut total = 0.0;
                let mut last_finite = None;
                for (b, batch) in order.chunks(config.batch_size).enumerate() {
                    grad.iter_mut().for_each(|g| *g = T::zero());
                    let scale = T::one() / T::from_count(batch.len());
                    let mut batch_loss = 0.0;
                    for &i in batch {
                        let e = &train_data[i];
                        let trace = model.forward(&e.ids);
                        batch_loss += sample_loss(&trace.logits, &e.y, &w).as_f64();
                        let dz = logit_grad(&trace.logits, &e.y, &w, scale);
                        model.backward(&e.ids, &trace, &dz, &mut grad);
                    }
                    if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                        return Err(Error::Training(format!(
                            "non-finite loss at epoch {epoch}, batch {b} (learning_rate {}, batch_size {}, \
                             last finite batch loss {}); lower the learning rate or check the inputs",
                            config.learning_rate,
                            config.batch_size,
                            last_finite.map_or("none".to_string(), |v: f64| format!("{v:.6}")),
                        )));
                    }
                    last_finite = Some(batch_loss / batch.len() as f64);
                    total += batch_loss;
                    opt.step(model.params_mut(), &grad);
                }
                let eval = evaluate_split(model, &val_data, &w)?;
                if !eval.loss.is_finite() {
                    return Err(Error::Training(format!("validation loss became non-finite at epoch {epoch}")));
                }
                let record = EpochRecord {
                    epoch,
                    train_loss: total / train_data.len() as f64,
                    val_loss: eval.loss,
                    val_macro_f1: eval.macro_f1,
                };
                current.replace(model.params().to_vec());
                progress(&record);
                Ok(record)
            },
            |record| {
                best_params.clone_from(&current.borrow());
                *best_record = Some(*record);
            },
        )?
    };

    let best = best_record.expect("fit_loop guarantees a best epoch");
    let model = TinyEncoder::from_params(spec.clone(), vocab.len(), best_params)?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        encoder: spec,
        vocab_size: vocab.len(),
        corpus_fingerprint: corpus.fingerprint(),
        best_epoch: best.epoch,
        val_loss_at_best: best.val_loss,
        val_macro_f1_at_best: best.val_macro_f1,
        class_weights: w.map(Scalar::as_f64),
    };
    Ok((CheckpointOf::new(meta, model, vocab), history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_loop_restores_best_and_stops() {
        let losses = [0.9, 0.5, 0.6, 0.7, 0.4];
        let mut improved = Vec::new();
        let (h, out) = fit_loop(
            5,
            2,
            |e| {
                Ok(EpochRecord {
                    epoch: e,
                    train_loss: 0.0,
                    val_loss: losses[e - 1],
                    val_macro_f1: 0.0,
                })
            },
            |r| improved.push(r.epoch),
        )
        .unwrap();
        assert_eq!(improved, vec![1, 2]);
        assert_eq!((out.stop_epoch, h.best_epoch), (4, 2));
        assert!(h.stopped_early);
        assert_eq!(h.epochs.len(), 4);
    }

    #[test]
    fn fit_loop_propagates_errors() {
        let r = fit_loop(3, 2, |_| Err(Error::Training("boom".into())), |_| {});
        assert!(matches!(r, Err(Error::Training(_))));
    }

    #[test]
    fn loss_gradient_signs() {
        let w = [2.0, 1.0, 1.0, 1.0];
        let z = [0.0; 4];
        let g = logit_grad(&z, &[true, false, false, false], &w, 1.0);
        assert_eq!(g, [-1.0, 0.5, 0.5, 0.5]);
        let l = sample_loss(&z, &[true, false, false, false], &w);
        assert!((l - 5.0 * 2f64.ln()).abs() < 1e-12);
    }
}

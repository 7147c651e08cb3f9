//! Minibatch training with Adam, epoch-wise learning-rate decay, dev-set
//! early stopping, and checkpoint persistence.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaggedSentence;
use crate::error::{Error, Result};
use crate::eval::{span_micro_prf, spans_of_corpus, token_accuracy};
use crate::layers::Mode;
use crate::model::{encode_sentence, sentence_nll, EncodedToken, Tagger, TaggerVars};
use crate::tensor::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pos,
    Ner,
}

impl Task {
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Pos => "accuracy",
            Task::Ner => "micro-F1",
        }
    }
}

/// Learning-rate schedule and loop bounds. Defaults: base 0.0035, decay
/// 0.005, batch 8, up to 50 epochs, patience 5.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping; `None` disables
    /// early stopping (required when there is no dev set).
    pub patience: Option<usize>,
    /// Average (instead of sum) sentence losses within a batch.
    pub mean_loss: bool,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            base_lr: 0.0035,
            decay: 0.005,
            batch_size: 8,
            max_epochs: 50,
            patience: Some(5),
            mean_loss: false,
            clip_norm: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(Error::Config(format!("base learning rate {} must be > 0", self.base_lr)));
        }
        if self.decay < 0.0 {
            return Err(Error::Config(format!("decay {} must be >= 0", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be >= 1 (omit it to disable)".into()));
        }
        Ok(())
    }

    /// `eta_t = eta_0 / (1 + alpha * t)` with `t` = completed epochs, so the
    /// first epoch trains at the base rate.
    pub fn lr_at_epoch(&self, t: usize) -> f64 {
        self.base_lr / (1.0 + self.decay * t as f64)
    }
}

/// Adam state: first/second moment buffers mirroring the parameter tensors
/// (in `named_tensors` order), bias-corrected updates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_tagger(tagger: &Tagger) -> Self {
        let sizes: Vec<usize> =
            tagger.params.named_tensors().iter().map(|(_, t)| t.len()).collect();
        Adam::new(&sizes)
    }

    /// One Adam step over all trainable tensors; gradients are cleared
    /// afterwards. The step count increments even when every gradient is
    /// zero (the parameters are then unchanged).
    pub fn step(&mut self, tagger: &mut Tagger, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (name, tensor)) in tagger.params.named_tensors_mut().into_iter().enumerate() {
            if !tensor.requires_grad {
                continue;
            }
            tensor.ensure_grad();
            if tensor.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in parameter {name}")));
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..tensor.values.len() {
                let g = tensor.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.values[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(tagger: &mut Tagger, max_norm: f64) {
    let mut sq = 0.0;
    for (_, t) in tagger.params.named_tensors() {
        for g in &t.grad {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in tagger.params.named_tensors_mut() {
            for g in &mut t.grad {
                *g *= scale;
            }
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or reuse a training run. Serialized as JSON;
/// f64 values round-trip exactly, so save -> load -> save is byte-identical.
#[derive(Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub task: Task,
    pub tagger: Tagger,
    pub optimizer: Adam,
    pub epoch: usize,
    /// `None` when trained without a dev set.
    pub dev_score: Option<f64>,
    /// Master seed; per-epoch shuffle/dropout generators are derived from
    /// `(seed, epoch)`, so this plus `epoch` pins the full RNG state.
    pub rng_seed: u64,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = serde_json::to_string(ckpt)
        .map_err(|e| Error::Data(format!("checkpoint serialization failed: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Data(format!("{}: corrupt checkpoint: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "{}: checkpoint version {} does not match supported version {}",
            path.display(),
            ckpt.version,
            CHECKPOINT_VERSION
        )));
    }
    Ok(ckpt)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_train_loss: f64,
    pub dev_score: Option<f64>,
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64)
            .wrapping_add(stream << 32),
    )
}

/// Dev metric: token accuracy for POS, span micro-F1 for NER.
pub fn evaluate(tagger: &Tagger, task: Task, sentences: &[TaggedSentence]) -> Result<f64> {
    let gold: Vec<Vec<String>> = sentences.iter().map(|s| s.labels()).collect();
    let mut pred: Vec<Vec<String>> = Vec::with_capacity(sentences.len());
    for s in sentences {
        pred.push(tagger.tag_sentence(s)?);
    }
    match task {
        Task::Pos => token_accuracy(&gold, &pred),
        Task::Ner => {
            let report = span_micro_prf(&spans_of_corpus(&gold)?, &spans_of_corpus(&pred)?)?;
            Ok(report.f1)
        }
    }
}

/// Train in place. Each epoch shuffles the sentences with a seeded RNG,
/// accumulates loss gradients over `batch_size` sentences per optimizer
/// step, evaluates the dev set, and keeps the best checkpoint. Stops after
/// `patience` epochs without dev improvement or at `max_epochs`.
pub fn train(
    tagger: &mut Tagger,
    task: Task,
    train_set: &[TaggedSentence],
    dev_set: &[TaggedSentence],
    sched: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome> {
    sched.validate()?;
    tagger.config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if dev_set.is_empty() && sched.patience.is_some() {
        return Err(Error::Config(
            "early stopping (patience) requires a non-empty dev set".into(),
        ));
    }

    let encoded: Vec<Vec<EncodedToken>> = train_set
        .iter()
        .map(|s| encode_sentence(s, &tagger.word_vocab, &tagger.vocabs, &tagger.config))
        .collect::<Result<_>>()?;
    let gold: Vec<Vec<usize>> = train_set
        .iter()
        .map(|s| s.tokens.iter().map(|t| tagger.label_index(&t.label)).collect())
        .collect::<Result<_>>()?;

    let mut optimizer = Adam::for_tagger(tagger);
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut epochs_since_improve = 0usize;
    tagger.params.zero_grads();

    for epoch in 1..=sched.max_epochs {
        let lr = sched.lr_at_epoch(epoch - 1);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(seed, epoch, 1));
        let mut dropout_rng = epoch_rng(seed, epoch, 2);

        let mut total_loss = 0.0;
        for batch in order.chunks(sched.batch_size) {
            let mut g = Graph::new();
            let vars = TaggerVars::bind(&mut g, &tagger.params);
            let mut batch_loss = None;
            for &i in batch {
                let loss = sentence_nll(
                    &mut g,
                    &encoded[i],
                    &gold[i],
                    &vars,
                    &tagger.config,
                    Mode::Train,
                    &mut dropout_rng,
                );
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => g.add(acc, loss),
                });
            }
            let mut loss = batch_loss.expect("non-empty batch");
            if sched.mean_loss {
                loss = g.scale(loss, 1.0 / batch.len() as f64);
            }
            let loss_value = g.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged: loss {loss_value} at epoch {epoch}"
                )));
            }
            total_loss += if sched.mean_loss { loss_value * batch.len() as f64 } else { loss_value };
            g.backward(loss);
            vars.harvest(&g, &mut tagger.params);
            if let Some(max_norm) = sched.clip_norm {
                clip_global_norm(tagger, max_norm);
            }
            optimizer.step(tagger, lr)?;
        }
        let mean_train_loss = total_loss / train_set.len() as f64;

        let dev_score = if dev_set.is_empty() {
            None
        } else {
            Some(evaluate(tagger, task, dev_set)?)
        };
        history.push(EpochRecord { epoch, lr, mean_train_loss, dev_score });

        let improved = match dev_score {
            Some(score) => score > best_score,
            None => true, // without a dev set the latest state is kept
        };
        if improved {
            best_score = dev_score.unwrap_or(0.0);
            epochs_since_improve = 0;
            best = Some(Checkpoint {
                version: CHECKPOINT_VERSION,
                task,
                tagger: tagger.clone(),
                optimizer: optimizer.clone(),
                epoch,
                dev_score,
                rng_seed: seed,
            });
        } else {
            epochs_since_improve += 1;
            if let Some(patience) = sched.patience {
                if epochs_since_improve >= patience {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome { best: best.expect("at least one epoch ran"), history })
}

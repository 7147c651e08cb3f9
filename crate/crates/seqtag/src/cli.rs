//! Command-line front end: `train`, `crossval`, `tag`, and `eval`
//! subcommands over CoNLL files and JSON checkpoints.
//!
//! Option layering: command-line flags override the optional `--config`
//! JSON file, which overrides the built-in defaults. Every command is
//! deterministic given `--seed`. Exit codes: 0 success, 1 usage/config,
//! 2 data/parse, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{
    build_vocabularies, kfold_split, load_embeddings, make_unk_vector, read_conll,
    read_raw_columns, repair_bio2, validate_bio2, ColumnSpec, TaggedSentence, TaggedToken,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{span_micro_prf, spans_of_corpus, token_accuracy, EvalReport};
use crate::layers::EmbeddingTable;
use crate::model::{Tagger, TaggerConfig, TaggerParams};
use crate::tensor::Tensor;
use crate::train::{
    evaluate, load_checkpoint, save_checkpoint, train, Checkpoint, Task, TrainSchedule,
    CHECKPOINT_VERSION,
};

#[derive(Parser, Debug)]
#[command(
    name = "seqtag",
    about = "BiLSTM-CRF sequence tagger for POS tagging and named entity recognition",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a tagger and write the best checkpoint plus an epoch history file
    Train(TrainArgs),
    /// K-fold cross-validation over a single corpus
    Crossval(CrossvalArgs),
    /// Tag a file with a trained checkpoint
    Tag(TagArgs),
    /// Score a prediction file against a gold file
    Eval(EvalArgs),
}

/// Model hyperparameter flags; unset flags fall back to the config file,
/// then to the defaults noted in each help string.
#[derive(Args, Debug, Default, Clone)]
pub struct ModelFlags {
    /// Character embedding dimension [default: 100]
    #[arg(long)]
    pub char_dim: Option<usize>,
    /// Word embedding dimension; overridden by the embedding file's width [default: 300]
    #[arg(long)]
    pub word_dim: Option<usize>,
    /// Character LSTM hidden size per direction [default: 100]
    #[arg(long)]
    pub char_hidden: Option<usize>,
    /// Word LSTM hidden size per direction [default: 150]
    #[arg(long)]
    pub word_hidden: Option<usize>,
    /// Dropout rate on word representations [default: 0.35]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Disable the character-level word representation
    #[arg(long)]
    pub no_char: bool,
    /// Append a one-hot POS feature to each word representation (NER only)
    #[arg(long)]
    pub use_pos_onehot: bool,
    /// Append a one-hot chunk feature to each word representation (NER only)
    #[arg(long)]
    pub use_chunk_onehot: bool,
    /// Fine-tune pretrained word vectors instead of freezing them
    #[arg(long)]
    pub finetune_words: bool,
}

/// Optimization flags; same layering as the model flags.
#[derive(Args, Debug, Default, Clone)]
pub struct ScheduleFlags {
    /// Initial learning rate [default: 0.0035]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate decay: lr_t = lr / (1 + decay * t) [default: 0.005]
    #[arg(long)]
    pub decay: Option<f64>,
    /// Sentences per optimizer step [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum training epochs [default: 50]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Early-stopping patience in epochs; 0 disables [default: 5]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Average instead of sum sentence losses within a batch
    #[arg(long)]
    pub mean_loss: bool,
    /// Clip gradients to this global L2 norm
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Task: pos (token accuracy) or ner (span micro-F1)
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    /// Training corpus (CoNLL)
    #[arg(long)]
    pub train: PathBuf,
    /// Development corpus for model selection and early stopping
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Pretrained word embeddings ("<count> <dim>" header, one vector per line);
    /// omitted: word vectors are randomly initialized and trained
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch history TSV path [default: <out>.history.tsv]
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Columns per token: 2 (word label) or 4 (word pos chunk label)
    /// [default: 2 for pos, 4 for ner]
    #[arg(long)]
    pub columns: Option<usize>,
    /// Repair BIO label violations (I-X without a matching open span) instead
    /// of rejecting them
    #[arg(long)]
    pub repair_bio: bool,
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

#[derive(Args, Debug)]
pub struct CrossvalArgs {
    /// Task: pos or ner
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    /// Corpus to split into folds (CoNLL)
    #[arg(long)]
    pub data: PathBuf,
    /// Number of folds (>= 2)
    #[arg(short, long)]
    pub k: usize,
    /// Pretrained word embeddings; omitted: random trainable vectors
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Columns per token [default: 2 for pos, 4 for ner]
    #[arg(long)]
    pub columns: Option<usize>,
    /// Repair BIO label violations in the corpus
    #[arg(long)]
    pub repair_bio: bool,
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed (controls fold assignment and training) [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

#[derive(Args, Debug)]
pub struct TagArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Input file: one token per line (word, plus pos/chunk columns when the
    /// checkpoint uses those features), blank line between sentences
    #[arg(long)]
    pub input: PathBuf,
    /// Output file: input columns plus a predicted-label column
    #[arg(long)]
    pub output: PathBuf,
    /// Repair BIO violations in the predicted labels
    #[arg(long)]
    pub repair_bio: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Task: pos (token accuracy) or ner (span micro-P/R/F1)
    #[arg(long, value_parser = parse_task)]
    pub task: Task,
    /// Gold file; the last column of each line is the label
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction file, token-aligned with the gold file
    #[arg(long)]
    pub pred: PathBuf,
    /// Emit the report as JSON
    #[arg(long)]
    pub json: bool,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s {
        "pos" => Ok(Task::Pos),
        "ner" => Ok(Task::Ner),
        other => Err(format!("unknown task {other:?} (expected pos or ner)")),
    }
}

/// Optional JSON config file; any subset of these keys may appear.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub char_dim: Option<usize>,
    pub word_dim: Option<usize>,
    pub char_hidden: Option<usize>,
    pub word_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub use_char: Option<bool>,
    pub use_pos_onehot: Option<bool>,
    pub use_chunk_onehot: Option<bool>,
    pub finetune_words: Option<bool>,
    pub lr: Option<f64>,
    pub decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub mean_loss: Option<bool>,
    pub clip_norm: Option<f64>,
    pub seed: Option<u64>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: invalid config file: {e}", p.display())))
        }
    }
}

/// Flags > config file > defaults.
pub fn resolve_config(
    task: Task,
    tagset: Vec<String>,
    flags: &ModelFlags,
    file: &FileConfig,
) -> Result<TaggerConfig> {
    let mut cfg = TaggerConfig::new(tagset);
    cfg.char_dim = flags.char_dim.or(file.char_dim).unwrap_or(cfg.char_dim);
    cfg.word_dim = flags.word_dim.or(file.word_dim).unwrap_or(cfg.word_dim);
    cfg.char_hidden = flags.char_hidden.or(file.char_hidden).unwrap_or(cfg.char_hidden);
    cfg.word_hidden = flags.word_hidden.or(file.word_hidden).unwrap_or(cfg.word_hidden);
    cfg.dropout_rate = flags.dropout.or(file.dropout).unwrap_or(cfg.dropout_rate);
    cfg.use_char = if flags.no_char { false } else { file.use_char.unwrap_or(true) };
    cfg.use_pos_onehot = flags.use_pos_onehot || file.use_pos_onehot.unwrap_or(false);
    cfg.use_chunk_onehot = flags.use_chunk_onehot || file.use_chunk_onehot.unwrap_or(false);
    cfg.finetune_words = flags.finetune_words || file.finetune_words.unwrap_or(false);
    if task == Task::Pos && (cfg.use_pos_onehot || cfg.use_chunk_onehot) {
        return Err(Error::Config(
            "one-hot POS/chunk features are NER-only; task pos forbids them".into(),
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_schedule(flags: &ScheduleFlags, file: &FileConfig) -> Result<TrainSchedule> {
    let d = TrainSchedule::default();
    let patience = match flags.patience.or(file.patience) {
        Some(0) => None,
        Some(p) => Some(p),
        None => d.patience,
    };
    let sched = TrainSchedule {
        base_lr: flags.lr.or(file.lr).unwrap_or(d.base_lr),
        decay: flags.decay.or(file.decay).unwrap_or(d.decay),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
        max_epochs: flags.max_epochs.or(file.max_epochs).unwrap_or(d.max_epochs),
        patience,
        mean_loss: flags.mean_loss || file.mean_loss.unwrap_or(false),
        clip_norm: flags.clip_norm.or(file.clip_norm),
    };
    sched.validate()?;
    Ok(sched)
}

fn column_spec(task: Task, columns: Option<usize>) -> Result<ColumnSpec> {
    match columns {
        None => Ok(match task {
            Task::Pos => ColumnSpec::WordLabel,
            Task::Ner => ColumnSpec::WordPosChunkLabel,
        }),
        Some(2) => Ok(ColumnSpec::WordLabel),
        Some(4) => Ok(ColumnSpec::WordPosChunkLabel),
        Some(n) => Err(Error::Config(format!("--columns must be 2 or 4, got {n}"))),
    }
}

/// Reject or (with `repair`) rewrite BIO violations in gold labels.
fn check_or_repair_bio(sentences: &mut [TaggedSentence], repair: bool) -> Result<()> {
    for (i, sent) in sentences.iter_mut().enumerate() {
        let labels = sent.labels();
        if repair {
            let fixed = repair_bio2(&labels)?;
            for (tok, label) in sent.tokens.iter_mut().zip(fixed) {
                tok.label = label;
            }
        } else {
            let violations = validate_bio2(&labels)?;
            if let Some(v) = violations.first() {
                return Err(Error::Data(format!(
                    "sentence {}: BIO violation at token {}: {:?} (use --repair-bio to fix)",
                    i + 1,
                    v.index + 1,
                    v.label
                )));
            }
        }
    }
    Ok(())
}

/// Word vocabulary and embedding table: frozen pretrained vectors when a
/// file is given (UNK row drawn uniformly), otherwise random trainable
/// vectors over the training vocabulary.
fn build_word_table(
    embeddings: Option<&Path>,
    train_set: &[TaggedSentence],
    cfg: &mut TaggerConfig,
    seed: u64,
) -> Result<(Vocabulary, EmbeddingTable)> {
    match embeddings {
        Some(path) => {
            let emb = load_embeddings(path)?;
            let mut vocab = Vocabulary::with_unk();
            let mut matrix = make_unk_vector(emb.dim, seed.wrapping_add(0xE0B));
            for (i, w) in emb.vocab.iter().enumerate() {
                vocab.insert(w);
                matrix.extend_from_slice(&emb.matrix[i * emb.dim..(i + 1) * emb.dim]);
            }
            cfg.word_dim = emb.dim;
            let table = EmbeddingTable::frozen(Tensor::from_vec([vocab.len(), emb.dim], matrix));
            Ok((vocab, table))
        }
        None => {
            let mut vocab = Vocabulary::with_unk();
            for s in train_set {
                for t in &s.tokens {
                    vocab.insert(&t.word);
                }
            }
            // no external vectors to preserve, so always fine-tune
            cfg.finetune_words = true;
            let table = EmbeddingTable::random(vocab.len(), cfg.word_dim, seed.wrapping_add(0xE0B));
            Ok((vocab, table))
        }
    }
}

fn build_tagger(
    task: Task,
    train_set: &[TaggedSentence],
    embeddings: Option<&Path>,
    model_flags: &ModelFlags,
    file_cfg: &FileConfig,
    seed: u64,
) -> Result<Tagger> {
    let vocabs = build_vocabularies(train_set);
    let tagset = vocabs.labels.items().to_vec();
    if tagset.is_empty() {
        return Err(Error::Data("training corpus has no labels".into()));
    }
    let mut cfg = resolve_config(task, tagset, model_flags, file_cfg)?;
    let (word_vocab, word_table) = build_word_table(embeddings, train_set, &mut cfg, seed)?;
    let params = TaggerParams::init(
        &cfg,
        vocabs.chars.len(),
        vocabs.pos.len(),
        vocabs.chunk.len(),
        word_table,
        seed,
    );
    Ok(Tagger { config: cfg, params, vocabs, word_vocab })
}

fn write_history(path: &Path, history: &[crate::train::EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch\tlr\tmean_train_loss\tdev_metric\n");
    for rec in history {
        let dev = rec.dev_score.map_or_else(|| "-".to_string(), |s| format!("{s:.6}"));
        out.push_str(&format!("{}\t{:.8}\t{:.6}\t{}\n", rec.epoch, rec.lr, rec.mean_train_loss, dev));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file_cfg = load_file_config(args.config.as_deref())?;
    let seed = args.seed.or(file_cfg.seed).unwrap_or(42);
    let spec = column_spec(args.task, args.columns)?;

    let mut train_set = read_conll(&args.train, spec)?;
    let mut dev_set = match &args.dev {
        Some(p) => read_conll(p, spec)?,
        None => Vec::new(),
    };
    if args.task == Task::Ner {
        check_or_repair_bio(&mut train_set, args.repair_bio)?;
        check_or_repair_bio(&mut dev_set, args.repair_bio)?;
    }

    let mut sched = resolve_schedule(&args.schedule, &file_cfg)?;
    if dev_set.is_empty() {
        sched.patience = None;
    }
    let mut tagger =
        build_tagger(args.task, &train_set, args.embeddings.as_deref(), &args.model, &file_cfg, seed)?;

    let outcome = train(&mut tagger, args.task, &train_set, &dev_set, &sched, seed)?;

    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.tsv", args.out.display())));
    write_history(&history_path, &outcome.history)?;
    save_checkpoint(&outcome.best, &args.out)?;

    println!(
        "trained {} epochs; best epoch {} ({} {})",
        outcome.history.len(),
        outcome.best.epoch,
        args.task.metric_name(),
        match outcome.best.dev_score {
            None => "n/a (no dev set)".to_string(),
            Some(score) => format!("{score:.4}"),
        }
    );
    println!("checkpoint: {}", args.out.display());
    println!("history: {}", history_path.display());
    Ok(())
}

pub fn cmd_crossval(args: &CrossvalArgs) -> Result<()> {
    if args.k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {}", args.k)));
    }
    let file_cfg = load_file_config(args.config.as_deref())?;
    let seed = args.seed.or(file_cfg.seed).unwrap_or(42);
    let spec = column_spec(args.task, args.columns)?;

    let mut corpus = read_conll(&args.data, spec)?;
    if args.task == Task::Ner {
        check_or_repair_bio(&mut corpus, args.repair_bio)?;
    }

    // folds train without a dev set, so early stopping is off
    let mut sched = resolve_schedule(&args.schedule, &file_cfg)?;
    sched.patience = None;

    let folds = kfold_split(corpus.len(), args.k, seed)?;
    let mut scores = Vec::with_capacity(args.k);
    for (fold, (train_idx, test_idx)) in folds.iter().enumerate() {
        let train_set: Vec<TaggedSentence> = train_idx.iter().map(|&i| corpus[i].clone()).collect();
        let test_set: Vec<TaggedSentence> = test_idx.iter().map(|&i| corpus[i].clone()).collect();
        let fold_seed = seed.wrapping_add(1 + fold as u64);
        let result = (|| -> Result<f64> {
            let mut tagger = build_tagger(
                args.task,
                &train_set,
                args.embeddings.as_deref(),
                &args.model,
                &file_cfg,
                fold_seed,
            )?;
            train(&mut tagger, args.task, &train_set, &[], &sched, fold_seed)?;
            evaluate(&tagger, args.task, &test_set)
        })();
        match result {
            Ok(score) => {
                println!("fold {}/{}: {} {:.4}", fold + 1, args.k, args.task.metric_name(), score);
                scores.push(score);
            }
            Err(e) => {
                eprintln!("fold {}/{} failed after {} completed folds", fold + 1, args.k, scores.len());
                return Err(e);
            }
        }
    }
    let (mean, stddev) = crate::eval::crossval_aggregate(&scores)?;
    println!("mean {} {:.4} (stddev {:.4}, k={})", args.task.metric_name(), mean, stddev, args.k);
    Ok(())
}

/// Input rows for tagging keep their original columns; the checkpoint's
/// feature configuration dictates which columns must be present.
fn rows_to_sentence(
    rows: &[Vec<String>],
    cfg: &TaggerConfig,
    sentence_index: usize,
) -> Result<TaggedSentence> {
    let mut tokens = Vec::with_capacity(rows.len());
    for row in rows {
        if cfg.use_pos_onehot && row.len() < 2 {
            return Err(Error::Data(format!(
                "sentence {}: checkpoint uses POS features but the input is missing the pos column",
                sentence_index + 1
            )));
        }
        if cfg.use_chunk_onehot && row.len() < 3 {
            return Err(Error::Data(format!(
                "sentence {}: checkpoint uses chunk features but the input is missing the chunk column",
                sentence_index + 1
            )));
        }
        tokens.push(TaggedToken {
            word: row[0].clone(),
            pos: row.get(1).cloned(),
            chunk: row.get(2).cloned(),
            label: String::new(),
        });
    }
    Ok(TaggedSentence { tokens })
}

pub fn cmd_tag(args: &TagArgs) -> Result<()> {
    let ckpt: Checkpoint = load_checkpoint(&args.model)?;
    let tagger = ckpt.tagger;
    let sentences = read_raw_columns(&args.input)?;

    let mut out = String::new();
    for (i, rows) in sentences.iter().enumerate() {
        let sent = rows_to_sentence(rows, &tagger.config, i)?;
        let mut labels = tagger.tag_sentence(&sent)?;
        if args.repair_bio {
            labels = repair_bio2(&labels)?;
        }
        for (row, label) in rows.iter().zip(&labels) {
            out.push_str(&row.join("\t"));
            out.push('\t');
            out.push_str(label);
            out.push('\n');
        }
        out.push('\n');
    }
    fs::write(&args.output, out)?;
    Ok(())
}

/// Last column of every line, as one label sequence per sentence.
fn label_column(path: &Path) -> Result<Vec<Vec<String>>> {
    let sentences = read_raw_columns(path)?;
    Ok(sentences
        .into_iter()
        .map(|rows| rows.into_iter().map(|mut row| row.pop().expect("non-empty row")).collect())
        .collect())
}

fn check_alignment(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "gold has {} sentences but pred has {}",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Data(format!(
                "sentence {}: gold has {} tokens but pred has {}",
                i + 1,
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let gold = label_column(&args.gold)?;
    let pred = label_column(&args.pred)?;
    check_alignment(&gold, &pred)?;
    match args.task {
        Task::Pos => {
            let acc = token_accuracy(&gold, &pred)?;
            if args.json {
                println!("{}", serde_json::json!({ "accuracy": acc }));
            } else {
                println!("accuracy {acc:.4}");
            }
        }
        Task::Ner => {
            let report: EvalReport =
                span_micro_prf(&spans_of_corpus(&gold)?, &spans_of_corpus(&pred)?)?;
            if args.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report)
                        .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?
                );
            } else {
                println!("{report}");
            }
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Crossval(args) => cmd_crossval(&args),
        Command::Tag(args) => cmd_tag(&args),
        Command::Eval(args) => cmd_eval(&args),
    }
}

// keep the checkpoint format version visible from the CLI surface
pub const SUPPORTED_CHECKPOINT_VERSION: u32 = CHECKPOINT_VERSION;

//! End-to-end CLI flows: train -> tag -> eval, checkpoint persistence,
//! cross-validation, and error paths.

use std::fs;
use std::path::{Path, PathBuf};

use seqtag::cli::{
    cmd_crossval, cmd_eval, cmd_tag, cmd_train, CrossvalArgs, EvalArgs, ModelFlags, ScheduleFlags,
    TagArgs, TrainArgs,
};
use seqtag::train::{load_checkpoint, save_checkpoint, Task};

fn small_model_flags() -> ModelFlags {
    ModelFlags {
        char_dim: Some(6),
        word_dim: Some(10),
        char_hidden: Some(5),
        word_hidden: Some(6),
        dropout: Some(0.1),
        ..Default::default()
    }
}

fn short_schedule() -> ScheduleFlags {
    ScheduleFlags {
        lr: Some(0.01),
        max_epochs: Some(60),
        batch_size: Some(4),
        patience: Some(0),
        ..Default::default()
    }
}

fn train_args(task: Task, train: &Path, out: &Path) -> TrainArgs {
    TrainArgs {
        task,
        train: train.to_path_buf(),
        dev: None,
        embeddings: None,
        out: out.to_path_buf(),
        history: None,
        columns: Some(2),
        repair_bio: false,
        config: None,
        seed: Some(11),
        model: small_model_flags(),
        schedule: short_schedule(),
    }
}

/// Tiny NER corpus: per-word labels, valid BIO2.
const NER_CORPUS: &str = "\
mot O\nHa_Noi B-LOC\nvui O\n\n\
den O\nLan B-PER\nAnh I-PER\nnoi O\n\n\
Hue B-LOC\ndep O\n\n\
gap O\nLan B-PER\nAnh I-PER\n\n\
ve O\nHue B-LOC\nngay O\n\n\
Ha_Noi B-LOC\nmua O\n\n\
Lan B-PER\nAnh I-PER\ncuoi O\n\n\
ngay O\nmot O\nHue B-LOC\n\n";

#[test]
fn train_tag_eval_round_trip_reproduces_gold() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.conll");
    fs::write(&train_path, NER_CORPUS).unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    cmd_train(&train_args(Task::Ner, &train_path, &ckpt_path)).unwrap();

    // words-only input mirroring the training corpus
    let input_path = dir.path().join("input.txt");
    let words: String = NER_CORPUS
        .lines()
        .map(|l| l.split_whitespace().next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&input_path, words + "\n").unwrap();

    let output_path = dir.path().join("tagged.conll");
    cmd_tag(&TagArgs {
        model: ckpt_path.clone(),
        input: input_path,
        output: output_path.clone(),
        repair_bio: true,
    })
    .unwrap();

    // the overfit model reproduces its own training labels
    let tagged = fs::read_to_string(&output_path).unwrap();
    let gold_labels: Vec<&str> = NER_CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().last().unwrap())
        .collect();
    let pred_labels: Vec<&str> = tagged
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().last().unwrap())
        .collect();
    assert_eq!(gold_labels, pred_labels);

    // eval against gold: perfect scores on both tasks
    let gold_path = dir.path().join("gold.conll");
    fs::write(&gold_path, NER_CORPUS).unwrap();
    for task in [Task::Ner, Task::Pos] {
        cmd_eval(&EvalArgs {
            task,
            gold: gold_path.clone(),
            pred: output_path.clone(),
            json: false,
        })
        .unwrap();
    }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.conll");
    fs::write(&train_path, NER_CORPUS).unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    let mut args = train_args(Task::Ner, &train_path, &ckpt_path);
    args.schedule.max_epochs = Some(2);
    cmd_train(&args).unwrap();

    let first = fs::read_to_string(&ckpt_path).unwrap();
    let loaded = load_checkpoint(&ckpt_path).unwrap();
    let resaved_path = dir.path().join("resaved.ckpt");
    save_checkpoint(&loaded, &resaved_path).unwrap();
    let second = fs::read_to_string(&resaved_path).unwrap();
    if first != second {
        let at = first
            .bytes()
            .zip(second.bytes())
            .position(|(a, b)| a != b)
            .unwrap_or(first.len().min(second.len()));
        let lo = at.saturating_sub(80);
        panic!(
            "checkpoints differ at byte {at}:\n first: …{}…\nsecond: …{}…",
            &first[lo..(at + 80).min(first.len())],
            &second[lo..(at + 80).min(second.len())]
        );
    }
}

#[test]
fn corrupt_checkpoint_is_rejected_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    fs::write(&path, "{not json").unwrap();
    let err = match load_checkpoint(&path) {
        Ok(_) => panic!("corrupt checkpoint loaded"),
        Err(e) => e,
    };
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("bad.ckpt"), "{err}");
}

#[test]
fn tag_of_empty_input_writes_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.conll");
    fs::write(&train_path, NER_CORPUS).unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    let mut args = train_args(Task::Ner, &train_path, &ckpt_path);
    args.schedule.max_epochs = Some(1);
    cmd_train(&args).unwrap();

    let input = dir.path().join("empty.txt");
    fs::write(&input, "").unwrap();
    let output = dir.path().join("out.txt");
    cmd_tag(&TagArgs { model: ckpt_path, input, output: output.clone(), repair_bio: false })
        .unwrap();
    assert_eq!(fs::read_to_string(&output).unwrap(), "");
}

#[test]
fn ner_checkpoint_with_onehots_rejects_input_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.conll");
    // 4-column training data so one-hot POS/chunk features are available
    let four_col = "\
Lan Np B-NP B-PER\nden V B-VP O\n\n\
Hue Np B-NP B-LOC\ndep A B-AP O\n\n";
    fs::write(&train_path, four_col).unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    let mut args = train_args(Task::Ner, &train_path, &ckpt_path);
    args.columns = Some(4);
    args.model.use_pos_onehot = true;
    args.model.use_chunk_onehot = true;
    args.schedule.max_epochs = Some(1);
    cmd_train(&args).unwrap();

    // words + POS but no chunk column
    let input = dir.path().join("input.txt");
    fs::write(&input, "Lan Np\nden V\n\n").unwrap();
    let err = cmd_tag(&TagArgs {
        model: ckpt_path,
        input,
        output: dir.path().join("out.txt"),
        repair_bio: false,
    })
    .unwrap_err();
    assert!(err.to_string().contains("chunk column"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bio_violations_are_rejected_unless_repair_requested() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.conll");
    fs::write(&train_path, "mot O\nAnh I-PER\n\n").unwrap();
    let ckpt_path = dir.path().join("model.ckpt");

    let mut args = train_args(Task::Ner, &train_path, &ckpt_path);
    args.schedule.max_epochs = Some(1);
    let err = cmd_train(&args).unwrap_err();
    assert!(err.to_string().contains("BIO violation"), "{err}");

    args.repair_bio = true;
    cmd_train(&args).unwrap();
}

#[test]
fn crossval_prints_per_fold_and_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.conll");
    // repeat the corpus so every fold sees every label
    fs::write(&data_path, NER_CORPUS.repeat(3)).unwrap();
    cmd_crossval(&CrossvalArgs {
        task: Task::Ner,
        data: data_path,
        k: 3,
        embeddings: None,
        columns: Some(2),
        repair_bio: false,
        config: None,
        seed: Some(11),
        model: small_model_flags(),
        schedule: ScheduleFlags {
            max_epochs: Some(3),
            batch_size: Some(4),
            patience: Some(0),
            ..Default::default()
        },
    })
    .unwrap();
}

#[test]
fn crossval_rejects_k_below_two() {
    let err = cmd_crossval(&CrossvalArgs {
        task: Task::Pos,
        data: PathBuf::from("unused.conll"),
        k: 1,
        embeddings: None,
        columns: None,
        repair_bio: false,
        config: None,
        seed: None,
        model: ModelFlags::default(),
        schedule: ScheduleFlags::default(),
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn eval_reports_first_alignment_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.conll");
    let pred = dir.path().join("pred.conll");
    fs::write(&gold, "a O\nb O\n\nc O\n\n").unwrap();
    fs::write(&pred, "a O\nb O\n\nc O\nd O\n\n").unwrap();
    let err = cmd_eval(&EvalArgs { task: Task::Pos, gold, pred, json: false }).unwrap_err();
    assert!(err.to_string().contains("sentence 2"), "{err}");
}

#[test]
fn training_with_pretrained_embeddings_freezes_word_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.conll");
    fs::write(&train_path, NER_CORPUS).unwrap();

    // embedding file covering part of the vocabulary, dim 5
    let emb_path = dir.path().join("w2v.txt");
    let mut emb = String::from("3 5\n");
    for (w, v) in [("mot", 0.1), ("Hue", -0.2), ("den", 0.3)] {
        emb.push_str(&format!("{w} {v} {v} {v} {v} {v}\n"));
    }
    fs::write(&emb_path, emb).unwrap();

    let ckpt_path = dir.path().join("model.ckpt");
    let mut args = train_args(Task::Ner, &train_path, &ckpt_path);
    args.embeddings = Some(emb_path);
    args.schedule.max_epochs = Some(2);
    cmd_train(&args).unwrap();

    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let tagger = ckpt.tagger;
    // word dim follows the embedding file, vectors stay frozen
    assert_eq!(tagger.config.word_dim, 5);
    assert!(!tagger.params.word_table.trainable);
    let row = 1 * 5; // first real word after <UNK>
    assert_eq!(&tagger.params.word_table.weights.values[row..row + 5], &[0.1; 5]);
}

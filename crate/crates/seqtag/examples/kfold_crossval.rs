//! K-fold cross-validation by hand with the library API: split a corpus,
//! train one model per fold, and aggregate the fold scores.
//!
//! Run with: cargo run --example kfold_crossval

use seqtag::data::{build_vocabularies, kfold_split, TaggedSentence, TaggedToken, Vocabulary};
use seqtag::eval::crossval_aggregate;
use seqtag::layers::EmbeddingTable;
use seqtag::model::{Tagger, TaggerConfig, TaggerParams};
use seqtag::train::{evaluate, train, Task, TrainSchedule};

/// Synthetic POS-style corpus: each word type carries its own tag.
fn corpus() -> Vec<TaggedSentence> {
    let lexicon = [("an", "N"), ("bo", "V"), ("ci", "A"), ("du", "N"), ("el", "V"), ("fa", "A")];
    (0..18)
        .map(|s| TaggedSentence {
            tokens: (0..4)
                .map(|t| {
                    let (w, tag) = lexicon[(s + 2 * t) % lexicon.len()];
                    TaggedToken { word: w.into(), pos: None, chunk: None, label: tag.into() }
                })
                .collect(),
        })
        .collect()
}

fn fit(train_set: &[TaggedSentence], seed: u64) -> Tagger {
    let vocabs = build_vocabularies(train_set);
    let mut cfg = TaggerConfig::new(vocabs.labels.items().to_vec());
    cfg.char_dim = 6;
    cfg.word_dim = 8;
    cfg.char_hidden = 4;
    cfg.word_hidden = 5;
    cfg.dropout_rate = 0.1;
    cfg.finetune_words = true;
    let mut word_vocab = Vocabulary::with_unk();
    for s in train_set {
        for t in &s.tokens {
            word_vocab.insert(&t.word);
        }
    }
    let word_table = EmbeddingTable::random(word_vocab.len(), cfg.word_dim, seed);
    let params = TaggerParams::init(&cfg, vocabs.chars.len(), 0, 0, word_table, seed);
    let mut tagger = Tagger { config: cfg, params, vocabs, word_vocab };
    let sched = TrainSchedule {
        base_lr: 0.01,
        batch_size: 4,
        max_epochs: 20,
        patience: None,
        ..Default::default()
    };
    train(&mut tagger, Task::Pos, train_set, &[], &sched, seed).unwrap();
    tagger
}

fn main() {
    let data = corpus();
    let k = 5;
    let folds = kfold_split(data.len(), k, 3).unwrap();

    let mut scores = Vec::new();
    for (fold, (train_idx, test_idx)) in folds.iter().enumerate() {
        let train_set: Vec<TaggedSentence> = train_idx.iter().map(|&i| data[i].clone()).collect();
        let test_set: Vec<TaggedSentence> = test_idx.iter().map(|&i| data[i].clone()).collect();
        let tagger = fit(&train_set, 3 + fold as u64);
        let accuracy = evaluate(&tagger, Task::Pos, &test_set).unwrap();
        println!("fold {}/{k}: accuracy {accuracy:.3} ({} test sentences)", fold + 1, test_set.len());
        scores.push(accuracy);
    }
    let (mean, stddev) = crossval_aggregate(&scores).unwrap();
    println!("mean accuracy {mean:.3} (stddev {stddev:.3})");
}

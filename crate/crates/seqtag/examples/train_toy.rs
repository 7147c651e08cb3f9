//! Train the full BiLSTM-CRF tagger on an in-memory toy NER corpus, watch
//! the loss fall, and tag a sentence with the result.
//!
//! Run with: cargo run --example train_toy

use seqtag::data::{build_vocabularies, read_conll_str, ColumnSpec, Vocabulary};
use seqtag::layers::EmbeddingTable;
use seqtag::model::{Tagger, TaggerConfig, TaggerParams};
use seqtag::train::{evaluate, train, Task, TrainSchedule};

const CORPUS: &str = "\
hom_nay O\nLan B-PER\nAnh I-PER\nden O\nHa_Noi B-LOC\n\n\
Lan B-PER\nAnh I-PER\nthich O\nHue B-LOC\n\n\
ve O\nHa_Noi B-LOC\nngay O\n\n\
gap O\nLan B-PER\nAnh I-PER\n\n\
Hue B-LOC\nrat O\ndep O\n\n\
hom_nay O\nve O\nHue B-LOC\n\n\
den O\nHa_Noi B-LOC\ngap O\nLan B-PER\nAnh I-PER\n\n\
thich O\nve O\nHa_Noi B-LOC\n\n";

fn main() {
    let corpus = read_conll_str(CORPUS, ColumnSpec::WordLabel).unwrap();

    // vocabularies and a small configuration; word vectors are randomly
    // initialized and fine-tuned since there is no pretrained file here
    let vocabs = build_vocabularies(&corpus);
    let mut cfg = TaggerConfig::new(vocabs.labels.items().to_vec());
    cfg.char_dim = 8;
    cfg.word_dim = 12;
    cfg.char_hidden = 6;
    cfg.word_hidden = 8;
    cfg.dropout_rate = 0.1;
    cfg.finetune_words = true;

    let mut word_vocab = Vocabulary::with_unk();
    for s in &corpus {
        for t in &s.tokens {
            word_vocab.insert(&t.word);
        }
    }
    let seed = 13;
    let word_table = EmbeddingTable::random(word_vocab.len(), cfg.word_dim, seed);
    let params = TaggerParams::init(&cfg, vocabs.chars.len(), 0, 0, word_table, seed);
    let mut tagger = Tagger { config: cfg, params, vocabs, word_vocab };

    let sched = TrainSchedule {
        base_lr: 0.01,
        batch_size: 4,
        max_epochs: 40,
        patience: None, // no dev set: run every epoch
        ..Default::default()
    };
    let outcome = train(&mut tagger, Task::Ner, &corpus, &[], &sched, seed).unwrap();
    for rec in outcome.history.iter().step_by(8) {
        println!("epoch {:>2}: lr {:.5}, mean train loss {:.4}", rec.epoch, rec.lr, rec.mean_train_loss);
    }

    let accuracy = evaluate(&tagger, Task::Pos, &corpus).unwrap();
    let f1 = evaluate(&tagger, Task::Ner, &corpus).unwrap();
    println!("train accuracy {accuracy:.3}, span F1 {f1:.3}");

    let sent = read_conll_str("Lan O\nAnh O\nden O\nHue O\n\n", ColumnSpec::WordLabel)
        .unwrap()
        .remove(0);
    let labels = tagger.tag_sentence(&sent).unwrap();
    for (tok, label) in sent.tokens.iter().zip(&labels) {
        println!("{:10} {}", tok.word, label);
    }
}

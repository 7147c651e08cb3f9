//! End-to-end acceptance gate. Each test covers one numbered criterion and
//! prints a `PASS criterion N` line (visible with `cargo test -- --nocapture`).

use std::fs;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use seqtag::cli::{cmd_tag, cmd_train, ModelFlags, ScheduleFlags, TagArgs, TrainArgs};
use seqtag::crf::{
    brute_force_marginals, brute_force_oracle, log_partition, nll_graph, score_sequence,
    viterbi_decode, CrfScores,
};
use seqtag::data::{
    build_vocabularies, read_conll_str, repair_bio2, validate_bio2, write_conll_str, ColumnSpec,
    TaggedSentence, TaggedToken, Vocabulary,
};
use seqtag::eval::{extract_spans, span_micro_prf, Span};
use seqtag::layers::{EmbeddingTable, Mode};
use seqtag::model::{encode_sentence, sentence_nll, Tagger, TaggerConfig, TaggerParams, TaggerVars};
use seqtag::tensor::{Graph, Tensor};
use seqtag::train::{evaluate, train, Adam, Task, TrainSchedule};

fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CrfScores {
    let emissions =
        Tensor::from_vec([n, k], (0..n * k).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let transitions = Tensor::from_vec(
        [k + 2, k + 2],
        (0..(k + 2) * (k + 2)).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    );
    CrfScores::new(emissions, transitions)
}

fn enumerate_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |t| {
                    let mut s2 = s.clone();
                    s2.push(t);
                    s2
                })
            })
            .collect();
    }
    out
}

#[test]
fn criterion_01_crf_matches_brute_force_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..250 {
        let n = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=5);
        let scores = random_instance(&mut rng, n, k);
        let (oracle_log_z, oracle_path, oracle_score) = brute_force_oracle(&scores).unwrap();
        let log_z = log_partition(&scores);
        assert!(
            (log_z - oracle_log_z).abs() <= 1e-8,
            "trial {trial}: logZ {log_z} vs oracle {oracle_log_z}"
        );
        let (path, score) = viterbi_decode(&scores);
        assert_eq!(path, oracle_path, "trial {trial} (n={n}, K={k})");
        assert!((score - oracle_score).abs() <= 1e-8, "trial {trial}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "PASS criterion 1: log-partition and Viterbi match brute force on 250 instances ({elapsed:?})"
    );
}

#[test]
fn criterion_02_crf_distribution_normalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..250 {
        let n = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=5);
        let scores = random_instance(&mut rng, n, k);
        let log_z = log_partition(&scores);
        let total: f64 = enumerate_sequences(n, k)
            .iter()
            .map(|seq| (score_sequence(&scores, seq) - log_z).exp())
            .sum();
        assert!((total - 1.0).abs() <= 1e-8, "trial {trial}: sum {total}");
    }
    println!("PASS criterion 2: exp(score - logZ) sums to 1 on all 250 instances");
}

/// Build a tagger at audit scale: char dim 4, word dim 6, hidden 5/5, K=3.
fn audit_tagger() -> (Tagger, Vec<TaggedToken>) {
    let mut cfg = TaggerConfig::new(vec!["B-X".into(), "I-X".into(), "O".into()]);
    cfg.char_dim = 4;
    cfg.word_dim = 6;
    cfg.char_hidden = 5;
    cfg.word_hidden = 5;
    cfg.dropout_rate = 0.0;
    cfg.finetune_words = true;

    let tokens = vec![
        TaggedToken { word: "ab".into(), pos: None, chunk: None, label: "B-X".into() },
        TaggedToken { word: "ca".into(), pos: None, chunk: None, label: "O".into() },
    ];
    let sent = TaggedSentence { tokens: tokens.clone() };
    let vocabs = build_vocabularies(std::slice::from_ref(&sent));
    let mut word_vocab = Vocabulary::with_unk();
    word_vocab.insert("ab");
    word_vocab.insert("ca");
    let word_table = EmbeddingTable::random(word_vocab.len(), cfg.word_dim, 77);
    let params = TaggerParams::init(&cfg, vocabs.chars.len(), 0, 0, word_table, 7);
    (Tagger { config: cfg, params, vocabs, word_vocab }, tokens)
}

fn tagger_loss(tagger: &Tagger, gold: &[usize]) -> f64 {
    let sent = TaggedSentence { tokens: audit_tagger().1 };
    let encoded = encode_sentence(&sent, &tagger.word_vocab, &tagger.vocabs, &tagger.config).unwrap();
    let mut g = Graph::new();
    let vars = TaggerVars::bind(&mut g, &tagger.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = sentence_nll(&mut g, &encoded, gold, &vars, &tagger.config, Mode::Eval, &mut rng);
    g.scalar_value(loss)
}

#[test]
fn criterion_03_full_tagger_gradients_match_finite_differences() {
    let start = Instant::now();
    let (mut tagger, _) = audit_tagger();
    let gold = vec![0usize, 2];

    // analytic pass
    tagger.params.zero_grads();
    {
        let sent = TaggedSentence { tokens: audit_tagger().1 };
        let encoded =
            encode_sentence(&sent, &tagger.word_vocab, &tagger.vocabs, &tagger.config).unwrap();
        let mut g = Graph::new();
        let vars = TaggerVars::bind(&mut g, &tagger.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss =
            sentence_nll(&mut g, &encoded, &gold, &vars, &tagger.config, Mode::Eval, &mut rng);
        g.backward(loss);
        vars.harvest(&g, &mut tagger.params);
    }
    let analytic: Vec<(String, Vec<f64>)> = tagger
        .params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name, t.grad.clone()))
        .collect();

    // central differences on every trainable entry
    let step = 1e-5;
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    for (slot, (name, grads)) in analytic.iter().enumerate() {
        let trainable = tagger.params.named_tensors()[slot].1.requires_grad;
        if !trainable {
            assert!(grads.is_empty() || grads.iter().all(|&g| g == 0.0), "{name}: frozen tensor has gradient");
            continue;
        }
        let len = tagger.params.named_tensors()[slot].1.values.len();
        assert_eq!(grads.len(), len, "{name}: missing gradient buffer");
        for i in 0..len {
            let orig = tagger.params.named_tensors()[slot].1.values[i];
            tagger.params.named_tensors_mut()[slot].1.values[i] = orig + step;
            let up = tagger_loss(&tagger, &gold);
            tagger.params.named_tensors_mut()[slot].1.values[i] = orig - step;
            let down = tagger_loss(&tagger, &gold);
            tagger.params.named_tensors_mut()[slot].1.values[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            // floor the denominator: below 1e-6 the finite-difference
            // roundoff (~1e-11) would dominate a pure relative comparison
            let rel = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{i}]: analytic {} vs fd {numeric}", grads[i]);
            }
        }
    }
    assert!(max_rel < 1e-4, "max relative error {max_rel} at {worst}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!(
        "PASS criterion 3: full-model gradient audit, max relative error {max_rel:.2e} ({elapsed:?})"
    );
}

#[test]
fn criterion_04_nll_emission_gradient_is_marginal_minus_indicator() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for trial in 0..60 {
        let n = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=3);
        let scores = random_instance(&mut rng, n, k);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let marginals = brute_force_marginals(&scores).unwrap();

        let mut g = Graph::new();
        let mut em = scores.emissions.clone();
        em.requires_grad = true;
        let mut tr = scores.transitions.clone();
        tr.requires_grad = true;
        let (ev, tv) = (g.leaf(&em), g.leaf(&tr));
        let loss = nll_graph(&mut g, ev, tv, &gold);
        g.backward(loss);
        let grad = g.grad(ev).unwrap();
        for i in 0..n {
            for t in 0..k {
                let indicator = if gold[i] == t { 1.0 } else { 0.0 };
                let expect = marginals[i][t] - indicator;
                assert!(
                    (grad[i * k + t] - expect).abs() <= 1e-6,
                    "trial {trial}, position {i}, tag {t}: grad {} vs {expect}",
                    grad[i * k + t]
                );
            }
        }
    }
    println!("PASS criterion 4: emission gradients equal marginal minus gold indicator");
}

/// Deterministic word -> label toy corpus: 30 word types split over
/// B-PER / I-PER / O, arranged so every sentence is valid BIO2.
fn overfit_corpus() -> Vec<TaggedSentence> {
    let o_words: Vec<String> = (0..10).map(|i| format!("plain{i}")).collect();
    let b_words: Vec<String> = (0..10).map(|i| format!("first{i}")).collect();
    let i_words: Vec<String> = (0..10).map(|i| format!("rest{i}")).collect();
    (0..20)
        .map(|s| {
            let tok = |w: &str, l: &str| TaggedToken {
                word: w.into(),
                pos: None,
                chunk: None,
                label: l.into(),
            };
            TaggedSentence {
                tokens: vec![
                    tok(&o_words[s % 10], "O"),
                    tok(&b_words[(s + 3) % 10], "B-PER"),
                    tok(&i_words[(s + 7) % 10], "I-PER"),
                    tok(&o_words[(s + 5) % 10], "O"),
                    tok(&b_words[s % 10], "B-PER"),
                ],
            }
        })
        .collect()
}

fn toy_tagger(train_set: &[TaggedSentence], use_char: bool, seed: u64) -> Tagger {
    let vocabs = build_vocabularies(train_set);
    let mut cfg = TaggerConfig::new(vocabs.labels.items().to_vec());
    cfg.char_dim = 8;
    cfg.word_dim = 12;
    cfg.char_hidden = 6;
    cfg.word_hidden = 8;
    cfg.use_char = use_char;
    cfg.finetune_words = true;
    let mut word_vocab = Vocabulary::with_unk();
    for s in train_set {
        for t in &s.tokens {
            word_vocab.insert(&t.word);
        }
    }
    let word_table = EmbeddingTable::random(word_vocab.len(), cfg.word_dim, seed.wrapping_add(9));
    let params = TaggerParams::init(&cfg, vocabs.chars.len(), 0, 0, word_table, seed);
    Tagger { config: cfg, params, vocabs, word_vocab }
}

#[test]
fn criterion_05_overfits_toy_corpus_to_perfect_scores() {
    let start = Instant::now();
    let corpus = overfit_corpus();
    let mut tagger = toy_tagger(&corpus, true, 5);
    let sched = TrainSchedule { patience: None, ..Default::default() };
    train(&mut tagger, Task::Ner, &corpus, &[], &sched, 5).unwrap();

    let accuracy = evaluate(&tagger, Task::Pos, &corpus).unwrap();
    let f1 = evaluate(&tagger, Task::Ner, &corpus).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(accuracy, 1.0, "token accuracy {accuracy}");
    assert_eq!(f1, 1.0, "span F1 {f1}");
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("PASS criterion 5: 100% accuracy and F1 1.0 on the overfit corpus ({elapsed:?})");
}

/// Labels fully determined by word suffix; the test split uses stems never
/// seen in training, so every test word is out-of-vocabulary.
fn suffix_corpus(stems: &[String], seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tok = |stem: &str, suffix: &str, label: &str| TaggedToken {
        word: format!("{stem}{suffix}"),
        pos: None,
        chunk: None,
        label: label.into(),
    };
    stems
        .iter()
        .map(|stem| {
            let other = &stems[rng.gen_range(0..stems.len())];
            TaggedSentence {
                tokens: vec![
                    tok(stem, "on", "O"),
                    tok(other, "ez", "B-PER"),
                    tok(stem, "ez", "B-PER"),
                    tok(other, "on", "O"),
                ],
            }
        })
        .collect()
}

#[test]
fn criterion_06_char_features_beat_no_char_on_unseen_words() {
    let train_stems: Vec<String> = (0..24).map(|i| format!("tr{i}q")).collect();
    let test_stems: Vec<String> = (0..8).map(|i| format!("uv{i}k")).collect();
    let train_set = suffix_corpus(&train_stems, 61);
    let test_set = suffix_corpus(&test_stems, 62);

    let mut f1 = [0.0f64; 2];
    for (slot, use_char) in [(0, true), (1, false)] {
        let mut tagger = toy_tagger(&train_set, use_char, 6);
        let sched = TrainSchedule { patience: None, ..Default::default() };
        train(&mut tagger, Task::Ner, &train_set, &[], &sched, 6).unwrap();
        f1[slot] = evaluate(&tagger, Task::Ner, &test_set).unwrap();
    }
    assert!(
        f1[0] >= f1[1] + 0.10,
        "char model F1 {} vs no-char F1 {}: gap below 10 points",
        f1[0],
        f1[1]
    );
    println!(
        "PASS criterion 6: char model F1 {:.3} vs no-char {:.3} on unseen-word test set",
        f1[0], f1[1]
    );
}

#[test]
fn criterion_07_span_evaluation_fixture() {
    let span = |ty: &str, start, end| Span { ty: ty.into(), start, end };
    let gold = vec![[span("PER", 0, 1), span("LOC", 3, 3)].into_iter().collect()];
    let pred = vec![[span("PER", 0, 1)].into_iter().collect()];
    let report = span_micro_prf(&gold, &pred).unwrap();
    assert_eq!(report.precision, 1.0);
    assert_eq!(report.recall, 0.5);
    assert_eq!(report.f1, 2.0 / 3.0);

    let lenient = extract_spans(&["B-ORG", "I-PER"]).unwrap();
    let expect: std::collections::BTreeSet<Span> =
        [span("ORG", 0, 0), span("PER", 1, 1)].into_iter().collect();
    assert_eq!(lenient, expect);
    println!("PASS criterion 7: P=1.0, R=0.5, F1=2/3 fixture and lenient I-handling");
}

#[test]
fn criterion_08_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.conll");
    let corpus = overfit_corpus();
    fs::write(&train_path, write_conll_str(&corpus, ColumnSpec::WordLabel)).unwrap();
    let raw_path = dir.path().join("input.txt");
    let raw: String = corpus
        .iter()
        .map(|s| s.tokens.iter().map(|t| t.word.clone()).collect::<Vec<_>>().join("\n") + "\n\n")
        .collect();
    fs::write(&raw_path, &raw).unwrap();

    let mut artifacts = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("model{run}.ckpt"));
        let history = dir.path().join(format!("history{run}.tsv"));
        let args = TrainArgs {
            task: Task::Ner,
            train: train_path.clone(),
            dev: Some(train_path.clone()),
            embeddings: None,
            out: out.clone(),
            history: Some(history.clone()),
            columns: Some(2),
            repair_bio: false,
            config: None,
            seed: Some(9),
            model: ModelFlags {
                char_dim: Some(6),
                word_dim: Some(8),
                char_hidden: Some(4),
                word_hidden: Some(5),
                dropout: Some(0.2),
                ..Default::default()
            },
            schedule: ScheduleFlags {
                max_epochs: Some(4),
                batch_size: Some(4),
                patience: Some(0),
                ..Default::default()
            },
        };
        cmd_train(&args).unwrap();

        let tagged = dir.path().join(format!("tagged{run}.txt"));
        cmd_tag(&TagArgs {
            model: out.clone(),
            input: raw_path.clone(),
            output: tagged.clone(),
            repair_bio: false,
        })
        .unwrap();
        artifacts.push((fs::read(&history).unwrap(), fs::read(&out).unwrap(), fs::read(&tagged).unwrap()));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "epoch histories differ");
    assert_eq!(artifacts[0].1, artifacts[1].1, "checkpoints differ");
    assert_eq!(artifacts[0].2, artifacts[1].2, "tagging outputs differ");
    println!("PASS criterion 8: identical histories, checkpoints, and taggings across two runs");
}

#[test]
fn criterion_09_schedule_and_adam_unit_checks() {
    let sched = TrainSchedule::default();
    assert_eq!(sched.lr_at_epoch(0), 0.0035);
    assert!((sched.lr_at_epoch(10) - 0.0033333).abs() < 1e-6);

    // minimize f(x) = x^2 from x = 1 with lr 0.1; values derived by hand
    // from the Adam update equations
    let mut cfg = TaggerConfig::new(vec!["A".into()]);
    cfg.char_dim = 1;
    cfg.word_dim = 1;
    cfg.char_hidden = 1;
    cfg.word_hidden = 1;
    cfg.dropout_rate = 0.0;
    let mut word = Tensor::from_vec([1, 1], vec![0.0]);
    word.requires_grad = false;
    let vocabs = build_vocabularies(&[]);
    let mut params = TaggerParams::init(&cfg, 1, 0, 0, EmbeddingTable::frozen(word), 1);
    params.char_table.weights.values[0] = 1.0;
    let mut tagger = Tagger { config: cfg, params, vocabs, word_vocab: Vocabulary::with_unk() };
    let mut adam = Adam::for_tagger(&tagger);
    let expected = [0.9000000005, 0.8004122286917928];
    for step in 0..2 {
        let x = tagger.params.char_table.weights.values[0];
        tagger.params.zero_grads();
        {
            let mut named = tagger.params.named_tensors_mut();
            named[0].1.ensure_grad();
            named[0].1.grad[0] = 2.0 * x;
        }
        adam.step(&mut tagger, 0.1).unwrap();
        let got = tagger.params.char_table.weights.values[0];
        assert!(
            (got - expected[step]).abs() < 1e-12,
            "step {}: {got} vs {}",
            step + 1,
            expected[step]
        );
    }
    println!("PASS criterion 9: lr schedule values and two hand-checked Adam steps");
}

#[test]
fn criterion_10_conll_round_trip_and_bio_repair_fixpoint() {
    let fixture = "Anh Nc B-NP O\nNguyễn_Văn_A Np I-NP B-PER\nđi V B-VP O\nHà_Nội Np B-NP B-LOC\n\nTây N B-NP O\n\n";
    let sentences = read_conll_str(fixture, ColumnSpec::WordPosChunkLabel).unwrap();
    let written = write_conll_str(&sentences, ColumnSpec::WordPosChunkLabel);
    assert_eq!(written, fixture);
    // a reread of the written form yields the same sentences
    assert_eq!(read_conll_str(&written, ColumnSpec::WordPosChunkLabel).unwrap(), sentences);

    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let alphabet = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC"];
    for _ in 0..1000 {
        let len = rng.gen_range(1..=10);
        let labels: Vec<String> =
            (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect();
        let once = repair_bio2(&labels).unwrap();
        let twice = repair_bio2(&once).unwrap();
        assert_eq!(once, twice, "repair is not idempotent on {labels:?}");
        assert!(validate_bio2(&once).unwrap().is_empty(), "repair left violations in {once:?}");
    }
    println!("PASS criterion 10: CoNLL round-trip and BIO repair fixpoint on 1000 sequences");
}

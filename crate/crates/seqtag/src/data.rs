//! CoNLL-style column corpora, vocabularies, pretrained embedding loading,
//! BIO2 validation/repair, and fold splitting.
//!
//! Column layout follows the VLSP-2016 convention: word, POS, chunk, NER tag
//! for the 4-column NER task; word, label for the 2-column POS task. Blank
//! lines separate sentences, any run of whitespace separates columns, CRLF
//! is tolerated, and files must be valid UTF-8.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub word: String,
    pub pos: Option<String>,
    pub chunk: Option<String>,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<TaggedToken>,
}

impl TaggedSentence {
    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.word.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.label.clone()).collect()
    }
}

/// Which columns a corpus file carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSpec {
    /// POS task: word + label.
    WordLabel,
    /// NER task: word + POS + chunk + label.
    WordPosChunkLabel,
}

impl ColumnSpec {
    pub fn column_count(self) -> usize {
        match self {
            ColumnSpec::WordLabel => 2,
            ColumnSpec::WordPosChunkLabel => 4,
        }
    }
}

/// Parse CoNLL column text: one token per line, blank line ends a sentence.
pub fn read_conll_str(text: &str, spec: ColumnSpec) -> Result<Vec<TaggedSentence>> {
    let want = spec.column_count();
    let mut sentences = Vec::new();
    let mut tokens: Vec<TaggedToken> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(TaggedSentence { tokens: std::mem::take(&mut tokens) });
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != want {
            return Err(Error::Data(format!(
                "line {}: expected {} columns, found {}: {:?}",
                lineno + 1,
                want,
                cols.len(),
                line
            )));
        }
        let token = match spec {
            ColumnSpec::WordLabel => TaggedToken {
                word: cols[0].to_string(),
                pos: None,
                chunk: None,
                label: cols[1].to_string(),
            },
            ColumnSpec::WordPosChunkLabel => TaggedToken {
                word: cols[0].to_string(),
                pos: Some(cols[1].to_string()),
                chunk: Some(cols[2].to_string()),
                label: cols[3].to_string(),
            },
        };
        tokens.push(token);
    }
    if !tokens.is_empty() {
        sentences.push(TaggedSentence { tokens });
    }
    Ok(sentences)
}

pub fn read_conll(path: &Path, spec: ColumnSpec) -> Result<Vec<TaggedSentence>> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::Data(format!("{}: invalid UTF-8 at byte {}", path.display(), e.utf8_error().valid_up_to()))
    })?;
    read_conll_str(&text, spec)
}

pub fn write_conll_str(sentences: &[TaggedSentence], spec: ColumnSpec) -> String {
    let mut out = String::new();
    for sent in sentences {
        for t in &sent.tokens {
            match spec {
                ColumnSpec::WordLabel => {
                    out.push_str(&format!("{} {}\n", t.word, t.label));
                }
                ColumnSpec::WordPosChunkLabel => {
                    out.push_str(&format!(
                        "{} {} {} {}\n",
                        t.word,
                        t.pos.as_deref().unwrap_or("_"),
                        t.chunk.as_deref().unwrap_or("_"),
                        t.label
                    ));
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Looser column reader for tagging inputs: accepts any consistent column
/// count and returns raw column matrices per sentence.
pub fn read_raw_columns(path: &Path) -> Result<Vec<Vec<Vec<String>>>> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::Data(format!("{}: invalid UTF-8 at byte {}", path.display(), e.utf8_error().valid_up_to()))
    })?;
    let mut sentences = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !rows.is_empty() {
                sentences.push(std::mem::take(&mut rows));
            }
            continue;
        }
        let cols: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        match width {
            None => width = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(Error::Data(format!(
                    "line {}: inconsistent column count {} (expected {})",
                    lineno + 1,
                    cols.len(),
                    w
                )));
            }
            _ => {}
        }
        rows.push(cols);
    }
    if !rows.is_empty() {
        sentences.push(rows);
    }
    Ok(sentences)
}

/// Ordered string-to-id bijection, stable across runs given the same corpus.
/// Word and char vocabularies reserve `<UNK>` at index 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    items: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const UNK: &str = "<UNK>";

impl From<Vec<String>> for Vocabulary {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocabulary { items, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.items
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary { items: Vec::new(), index: HashMap::new() }
    }

    pub fn with_unk() -> Self {
        let mut v = Vocabulary::new();
        v.insert(UNK);
        v
    }

    /// Insert if absent, returning the id either way.
    pub fn insert(&mut self, item: &str) -> usize {
        if let Some(&id) = self.index.get(item) {
            return id;
        }
        let id = self.items.len();
        self.items.push(item.to_string());
        self.index.insert(item.to_string(), id);
        id
    }

    pub fn lookup(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    /// Id of `item`, falling back to the reserved UNK at index 0.
    pub fn lookup_or_unk(&self, item: &str) -> usize {
        self.lookup(item).unwrap_or(0)
    }

    pub fn get(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

/// word2vec text-format embeddings: header `"count dim"`, then one word and
/// `dim` floats per line. Duplicate words keep the first occurrence.
#[derive(Clone, Debug)]
pub struct PretrainedEmbeddings {
    pub vocab: Vec<String>,
    /// `vocab.len() x dim`, row-major.
    pub matrix: Vec<f64>,
    pub dim: usize,
    pub duplicates_skipped: usize,
}

pub fn load_embeddings_str(text: &str) -> Result<PretrainedEmbeddings> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data("embedding file is empty".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::Data(format!("line 1: malformed header {header:?}, expected \"count dim\"")));
    }
    let count: usize = parts[0]
        .parse()
        .map_err(|_| Error::Data(format!("line 1: bad word count {:?}", parts[0])))?;
    let dim: usize = parts[1]
        .parse()
        .map_err(|_| Error::Data(format!("line 1: bad dimension {:?}", parts[1])))?;

    let mut vocab = Vec::with_capacity(count);
    let mut seen: HashMap<String, ()> = HashMap::with_capacity(count);
    let mut matrix = Vec::with_capacity(count * dim);
    let mut duplicates_skipped = 0;
    for (lineno, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| Error::Data(format!("line {}: empty row", lineno + 1)))?;
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values
            .map_err(|e| Error::Data(format!("line {}: bad float: {e}", lineno + 1)))?;
        if values.len() != dim {
            return Err(Error::Data(format!(
                "line {}: row has {} values, header says dim {}",
                lineno + 1,
                values.len(),
                dim
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("line {}: non-finite embedding value", lineno + 1)));
        }
        if seen.insert(word.to_string(), ()).is_some() {
            duplicates_skipped += 1;
            continue;
        }
        vocab.push(word.to_string());
        matrix.extend_from_slice(&values);
    }
    Ok(PretrainedEmbeddings { vocab, matrix, dim, duplicates_skipped })
}

pub fn load_embeddings(path: &Path) -> Result<PretrainedEmbeddings> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::Data(format!("{}: invalid UTF-8 at byte {}", path.display(), e.utf8_error().valid_up_to()))
    })?;
    load_embeddings_str(&text)
}

/// Uniform sample in `[-sqrt(3/dim), +sqrt(3/dim)]`, the UNK embedding rule.
pub fn make_unk_vector(dim: usize, rng_seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "make_unk_vector: dim must be >= 1");
    let bound = (3.0 / dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    use rand::Rng;
    (0..dim).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// A BIO2 violation: an `I-X` whose predecessor is neither `B-X` nor `I-X`
/// of the same type (including sentence-initial `I-X`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bio2Violation {
    pub index: usize,
    pub label: String,
}

fn split_bio(label: &str) -> Result<Option<(char, &str)>> {
    if label == "O" {
        return Ok(None);
    }
    if let Some(ty) = label.strip_prefix("B-") {
        if !ty.is_empty() {
            return Ok(Some(('B', ty)));
        }
    }
    if let Some(ty) = label.strip_prefix("I-") {
        if !ty.is_empty() {
            return Ok(Some(('I', ty)));
        }
    }
    Err(Error::Data(format!("malformed BIO2 label {label:?} (expected O, B-X, or I-X)")))
}

/// Report every index where an `I-X` does not continue a `B-X`/`I-X` run of
/// the same type.
pub fn validate_bio2<S: AsRef<str>>(labels: &[S]) -> Result<Vec<Bio2Violation>> {
    let mut violations = Vec::new();
    let mut prev: Option<(char, String)> = None;
    for (i, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        let cur = split_bio(label)?;
        if let Some(('I', ty)) = cur {
            let ok = matches!(&prev, Some((tag, pty)) if *tag != 'O' && pty == ty);
            if !ok {
                violations.push(Bio2Violation { index: i, label: label.to_string() });
            }
        }
        prev = cur.map(|(t, ty)| (t, ty.to_string()));
    }
    Ok(violations)
}

/// Rewrite every violating `I-X` to `B-X`. Idempotent; validation of the
/// result is always empty.
pub fn repair_bio2<S: AsRef<str>>(labels: &[S]) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    let mut prev: Option<(char, String)> = None;
    for label in labels {
        let label = label.as_ref();
        let cur = split_bio(label)?;
        let fixed = match &cur {
            Some(('I', ty)) => {
                let ok = matches!(&prev, Some((tag, pty)) if *tag != 'O' && pty == ty);
                if ok {
                    label.to_string()
                } else {
                    format!("B-{ty}")
                }
            }
            _ => label.to_string(),
        };
        // track the repaired label so a following I-X sees the new B-X
        prev = split_bio(&fixed)?.map(|(t, ty)| (t, ty.to_string()));
        out.push(fixed);
    }
    Ok(out)
}

/// Vocabularies derived from a training corpus, in first-occurrence order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocabularies {
    /// Characters of all words, UNK at index 0.
    pub chars: Vocabulary,
    pub pos: Vocabulary,
    pub chunk: Vocabulary,
    /// No UNK: the tagset is closed.
    pub labels: Vocabulary,
}

pub fn build_vocabularies(train: &[TaggedSentence]) -> Vocabularies {
    let mut chars = Vocabulary::with_unk();
    let mut pos = Vocabulary::new();
    let mut chunk = Vocabulary::new();
    let mut labels = Vocabulary::new();
    for sent in train {
        for tok in &sent.tokens {
            for ch in tok.word.chars() {
                chars.insert(&ch.to_string());
            }
            if let Some(p) = &tok.pos {
                pos.insert(p);
            }
            if let Some(c) = &tok.chunk {
                chunk.insert(c);
            }
            labels.insert(&tok.label);
        }
    }
    Vocabularies { chars, pos, chunk, labels }
}

/// Shuffle once with the seed, then partition into `k` near-equal folds
/// (sizes differ by at most one, larger folds first). Returns
/// `(train_indices, test_indices)` per fold.
pub fn kfold_split(n: usize, k: usize, rng_seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("kfold_split: k={k} out of range for {n} sentences")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    indices.shuffle(&mut rng);
    let base = n / k;
    let remainder = n % k;
    let mut folds: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut offset = 0;
    for f in 0..k {
        let size = base + usize::from(f < remainder);
        folds.push(indices[offset..offset + size].to_vec());
        offset += size;
    }
    Ok((0..k)
        .map(|f| {
            let test = folds[f].clone();
            let train: Vec<usize> =
                folds.iter().enumerate().filter(|(i, _)| *i != f).flat_map(|(_, v)| v.clone()).collect();
            (train, test)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_conll_four_columns() {
        let text = "Hà_Nội N B-NP B-LOC\nđẹp A B-AP O\n\n";
        let sents = read_conll_str(text, ColumnSpec::WordPosChunkLabel).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].tokens.len(), 2);
        assert_eq!(sents[0].tokens[0].word, "Hà_Nội");
        assert_eq!(sents[0].tokens[0].pos.as_deref(), Some("N"));
        assert_eq!(sents[0].tokens[0].chunk.as_deref(), Some("B-NP"));
        assert_eq!(sents[0].tokens[0].label, "B-LOC");
        assert_eq!(sents[0].tokens[1].label, "O");
    }

    #[test]
    fn read_conll_blank_only_file() {
        let sents = read_conll_str("\n\n\n", ColumnSpec::WordLabel).unwrap();
        assert!(sents.is_empty());
        let sents = read_conll_str("", ColumnSpec::WordLabel).unwrap();
        assert!(sents.is_empty());
    }

    #[test]
    fn read_conll_wrong_column_count_cites_line() {
        let text = "a N B-NP B-LOC\nb N B-NP\n";
        let err = read_conll_str(text, ColumnSpec::WordPosChunkLabel).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("4"), "{msg}");
    }

    #[test]
    fn read_conll_tolerates_crlf_and_tabs() {
        let text = "a\tN\tB-NP\tO\r\nb N  B-NP O\r\n\r\n";
        let sents = read_conll_str(text, ColumnSpec::WordPosChunkLabel).unwrap();
        assert_eq!(sents[0].tokens.len(), 2);
    }

    #[test]
    fn conll_round_trip() {
        let text = "Hà_Nội N B-NP B-LOC\nđẹp A B-AP O\n\nmột M B-NP O\n";
        let sents = read_conll_str(text, ColumnSpec::WordPosChunkLabel).unwrap();
        let written = write_conll_str(&sents, ColumnSpec::WordPosChunkLabel);
        let reparsed = read_conll_str(&written, ColumnSpec::WordPosChunkLabel).unwrap();
        assert_eq!(sents, reparsed);
    }

    #[test]
    fn load_embeddings_basic() {
        let text = "2 3\nxin 0.1 0.2 0.3\nchào -1 0 1\n";
        let e = load_embeddings_str(text).unwrap();
        assert_eq!(e.dim, 3);
        assert_eq!(e.vocab, vec!["xin", "chào"]);
        assert_eq!(e.matrix, vec![0.1, 0.2, 0.3, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn load_embeddings_duplicates_keep_first() {
        let text = "3 2\na 1 2\na 3 4\nb 5 6\n";
        let e = load_embeddings_str(text).unwrap();
        assert_eq!(e.vocab, vec!["a", "b"]);
        assert_eq!(e.matrix, vec![1.0, 2.0, 5.0, 6.0]);
        assert_eq!(e.duplicates_skipped, 1);
    }

    #[test]
    fn load_embeddings_row_width_error_cites_line() {
        let text = "2 3\na 1 2 3\nb 1 2\n";
        let err = load_embeddings_str(text).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn unk_vector_bounds_and_determinism() {
        let v = make_unk_vector(300, 9);
        assert!(v.iter().all(|x| x.abs() <= 0.1 + 1e-15));
        let w = make_unk_vector(3, 9);
        assert!(w.iter().all(|x| x.abs() <= 1.0));
        assert_eq!(make_unk_vector(10, 4), make_unk_vector(10, 4));
    }

    #[test]
    fn validate_bio2_cases() {
        assert!(validate_bio2(&["B-LOC", "I-LOC", "O"]).unwrap().is_empty());
        let v = validate_bio2(&["B-ORG", "I-PER"]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 1);
        let v = validate_bio2(&["I-LOC"]).unwrap();
        assert_eq!(v[0].index, 0);
        assert!(validate_bio2(&["O", "B-X", "I-X", "I-X"]).unwrap().is_empty());
        // I-X after O of same type is still a violation
        let v = validate_bio2(&["B-X", "O", "I-X"]).unwrap();
        assert_eq!(v[0].index, 2);
    }

    #[test]
    fn validate_bio2_rejects_malformed() {
        assert!(validate_bio2(&["B-"]).is_err());
        assert!(validate_bio2(&["X-LOC"]).is_err());
        assert!(validate_bio2(&["b-LOC"]).is_err());
    }

    #[test]
    fn repair_bio2_cases() {
        assert_eq!(repair_bio2(&["I-LOC"]).unwrap(), vec!["B-LOC"]);
        assert_eq!(repair_bio2(&["B-ORG", "I-PER"]).unwrap(), vec!["B-ORG", "B-PER"]);
        let valid = ["B-LOC", "I-LOC", "O", "B-PER"];
        assert_eq!(repair_bio2(&valid).unwrap(), valid.to_vec());
        // a repaired I becomes a B that licenses the following I
        assert_eq!(repair_bio2(&["I-LOC", "I-LOC"]).unwrap(), vec!["B-LOC", "I-LOC"]);
    }

    #[test]
    fn repair_is_fixpoint_of_validate() {
        let seqs = [
            vec!["I-A", "I-A", "O", "I-B"],
            vec!["B-A", "I-B", "I-B", "I-A"],
            vec!["O", "O", "I-X"],
        ];
        for s in &seqs {
            let repaired = repair_bio2(s).unwrap();
            assert!(validate_bio2(&repaired).unwrap().is_empty(), "{repaired:?}");
            assert_eq!(repair_bio2(&repaired).unwrap(), repaired, "repair not idempotent");
        }
    }

    #[test]
    fn vocab_build_order_and_determinism() {
        let text = "Hà_Nội N B-NP B-LOC\nđẹp A B-AP O\n\n";
        let sents = read_conll_str(text, ColumnSpec::WordPosChunkLabel).unwrap();
        let v = build_vocabularies(&sents);
        assert_eq!(v.chars.get(0), UNK);
        assert_eq!(v.pos.items(), &["N".to_string(), "A".to_string()]);
        assert_eq!(v.labels.items(), &["B-LOC".to_string(), "O".to_string()]);
        let v2 = build_vocabularies(&sents);
        assert_eq!(v.chars.items(), v2.chars.items());
    }

    #[test]
    fn onehot_dictionary_positions() {
        // first POS gets index 0 (one-hot 1000...), second index 1 (0100...)
        let text = "a N x O\nb V x O\nc R x O\n\n";
        let sents = read_conll_str(text, ColumnSpec::WordPosChunkLabel).unwrap();
        let v = build_vocabularies(&sents);
        assert_eq!(v.pos.lookup("N"), Some(0));
        assert_eq!(v.pos.lookup("V"), Some(1));
        assert_eq!(v.pos.lookup("R"), Some(2));
    }

    #[test]
    fn kfold_sizes_and_partition() {
        let folds = kfold_split(10, 5, 1).unwrap();
        assert!(folds.iter().all(|(_, test)| test.len() == 2));

        let folds = kfold_split(11, 5, 1).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);

        let mut all: Vec<usize> = folds.iter().flat_map(|(_, t)| t.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        for (train, test) in &folds {
            assert!(train.iter().all(|i| !test.contains(i)));
            assert_eq!(train.len() + test.len(), 11);
        }
    }

    #[test]
    fn kfold_seed_behavior() {
        assert_eq!(kfold_split(100, 5, 7).unwrap(), kfold_split(100, 5, 7).unwrap());
        assert_ne!(kfold_split(100, 5, 7).unwrap(), kfold_split(100, 5, 8).unwrap());
        assert!(kfold_split(5, 1, 0).is_err());
        assert!(kfold_split(3, 4, 0).is_err());
    }
}

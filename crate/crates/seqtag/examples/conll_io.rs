//! Data pipeline tour: parse CoNLL text, build vocabularies, validate and
//! repair BIO2 labels, and load a pretrained embedding file.
//!
//! Run with: cargo run --example conll_io

use seqtag::data::{
    build_vocabularies, load_embeddings_str, read_conll_str, repair_bio2, validate_bio2,
    write_conll_str, ColumnSpec,
};

fn main() {
    // 4-column format: word, POS, chunk, NER label
    let text = "\
Anh Nc B-NP O
Nguyễn_Văn_A Np I-NP B-PER
đi V B-VP O
Hà_Nội Np B-NP B-LOC

Huế Np B-NP B-LOC
đẹp A B-AP O
";
    let sentences = read_conll_str(text, ColumnSpec::WordPosChunkLabel).unwrap();
    println!("parsed {} sentences", sentences.len());
    for tok in &sentences[0].tokens {
        println!(
            "  {:14} pos={:3} chunk={:5} label={}",
            tok.word,
            tok.pos.as_deref().unwrap_or("-"),
            tok.chunk.as_deref().unwrap_or("-"),
            tok.label
        );
    }

    // writing and re-reading is the identity
    let written = write_conll_str(&sentences, ColumnSpec::WordPosChunkLabel);
    assert_eq!(read_conll_str(&written, ColumnSpec::WordPosChunkLabel).unwrap(), sentences);
    println!("round-trip OK");

    let vocabs = build_vocabularies(&sentences);
    println!(
        "vocabularies: {} chars, {} POS tags, {} chunk tags, {} labels",
        vocabs.chars.len(),
        vocabs.pos.len(),
        vocabs.chunk.len(),
        vocabs.labels.len()
    );

    // an I- tag with no open span of its type violates BIO2
    let broken = ["O", "I-PER", "I-PER", "B-LOC", "I-ORG"];
    let violations = validate_bio2(&broken).unwrap();
    println!("violations in {broken:?}:");
    for v in &violations {
        println!("  token {}: {:?}", v.index, v.label);
    }
    let repaired = repair_bio2(&broken).unwrap();
    println!("repaired: {repaired:?}");
    assert!(validate_bio2(&repaired).unwrap().is_empty());

    // embedding file: "<count> <dim>" header, then one vector per line
    let emb = load_embeddings_str("2 3\nxin 0.1 0.2 0.3\nchao -0.5 0.0 0.5\n").unwrap();
    println!("loaded {} embeddings of dim {}", emb.vocab.len(), emb.dim);
}

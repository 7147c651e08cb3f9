//! Span-level NER evaluation: extract entity spans from BIO2 sequences and
//! compute micro-averaged precision/recall/F1 with a per-type breakdown.
//!
//! Run with: cargo run --example span_eval

use seqtag::eval::{extract_spans, span_micro_prf, token_accuracy};

fn main() {
    let gold = vec![
        vec!["B-PER", "I-PER", "O", "B-LOC"],
        vec!["O", "B-ORG", "I-ORG", "I-ORG", "O"],
        vec!["B-LOC", "O"],
    ];
    let pred = vec![
        vec!["B-PER", "I-PER", "O", "O"],      // missed the LOC
        vec!["O", "B-ORG", "I-ORG", "O", "O"], // boundary error on the ORG
        vec!["B-LOC", "O"],                    // exact match
    ];

    for (i, labels) in gold.iter().enumerate() {
        println!("gold sentence {}: {:?}", i + 1, extract_spans(labels).unwrap());
    }

    let gold_spans: Vec<_> = gold.iter().map(|s| extract_spans(s).unwrap()).collect();
    let pred_spans: Vec<_> = pred.iter().map(|s| extract_spans(s).unwrap()).collect();
    let report = span_micro_prf(&gold_spans, &pred_spans).unwrap();
    println!("\n{report}");

    let gold_owned: Vec<Vec<String>> =
        gold.iter().map(|s| s.iter().map(|l| l.to_string()).collect()).collect();
    let pred_owned: Vec<Vec<String>> =
        pred.iter().map(|s| s.iter().map(|l| l.to_string()).collect()).collect();
    println!("token accuracy {:.3}", token_accuracy(&gold_owned, &pred_owned).unwrap());

    // an orphan I- tag still opens a span (lenient conlleval semantics)
    println!("\nlenient extraction of [B-ORG, I-PER]: {:?}", extract_spans(&["B-ORG", "I-PER"]).unwrap());
}

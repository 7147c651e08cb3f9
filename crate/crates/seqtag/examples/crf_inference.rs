//! Linear-chain CRF inference on a hand-built instance: log-partition via
//! the forward recursion, Viterbi decoding, and a brute-force cross-check.
//!
//! Run with: cargo run --example crf_inference

use seqtag::crf::{
    brute_force_marginals, brute_force_oracle, log_partition, nll_loss, score_sequence,
    viterbi_decode, CrfScores,
};
use seqtag::tensor::Tensor;

fn main() {
    // 4 positions, 3 tags; transitions include virtual start (row K) and
    // end (column K+1) states
    let n = 4;
    let k = 3;
    let emissions = Tensor::from_vec(
        [n, k],
        vec![
            2.0, 0.1, -1.0, //
            0.3, 1.5, 0.2, //
            -0.5, 0.8, 1.2, //
            1.0, -0.2, 0.4,
        ],
    );
    let mut transitions = Tensor::zeros([k + 2, k + 2]);
    for (from, to, score) in [(0, 1, 0.9), (1, 2, 1.1), (2, 0, 0.7), (3, 0, 0.5), (1, 4, 0.3)] {
        transitions.set(from, to, score);
    }
    let scores = CrfScores::new(emissions, transitions);

    let log_z = log_partition(&scores);
    let (path, best_score) = viterbi_decode(&scores);
    println!("logZ          = {log_z:.10}");
    println!("viterbi path  = {path:?} (score {best_score:.6})");
    println!("path P(y|x)   = {:.6}", (best_score - log_z).exp());
    println!("gold nll      = {:.6}", nll_loss(&scores, &[0, 1, 2, 0]));

    // exhaustive enumeration agrees
    let (oracle_z, oracle_path, oracle_score) = brute_force_oracle(&scores).unwrap();
    assert!((log_z - oracle_z).abs() < 1e-10);
    assert_eq!(path, oracle_path);
    assert!((best_score - oracle_score).abs() < 1e-10);
    println!("brute-force enumeration agrees");

    // per-position tag marginals sum to one
    let marginals = brute_force_marginals(&scores).unwrap();
    for (i, row) in marginals.iter().enumerate() {
        let total: f64 = row.iter().sum();
        println!("marginals[{i}] = {row:?} (sum {total:.6})");
    }

    // the distribution over all tag sequences is normalized
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                for d in 0..k {
                    total += (score_sequence(&scores, &[a, b, c, d]) - log_z).exp();
                }
            }
        }
    }
    println!("sum over all sequences of exp(score - logZ) = {total:.12}");
}

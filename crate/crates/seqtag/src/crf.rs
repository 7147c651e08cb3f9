//! Linear-chain first-order CRF: sequence scoring, exact log-partition by
//! the forward recursion, negative log-likelihood, Viterbi decoding, and a
//! brute-force enumeration oracle.
//!
//! The transition matrix is `(K+2) x (K+2)` with rows = from-tag and
//! cols = to-tag; index `K` is the virtual start tag and `K+1` the end tag.
//! Transitions into start and out of end are never read.

use crate::error::{Error, Result};
use crate::tensor::{logsumexp_slice, Graph, Tensor, Var};

/// Per-sentence emission matrix plus the shared transition matrix, as plain
/// values (inference path). The differentiable path takes tape [`Var`]s
/// instead, see [`log_partition_graph`] and [`nll_graph`].
#[derive(Clone, Debug)]
pub struct CrfScores {
    /// `n x K` emission scores.
    pub emissions: Tensor,
    /// `(K+2) x (K+2)` transition scores.
    pub transitions: Tensor,
}

impl CrfScores {
    pub fn new(emissions: Tensor, transitions: Tensor) -> Self {
        let k = emissions.cols();
        assert!(emissions.rows() >= 1 && k >= 1, "CrfScores: need n >= 1 and K >= 1");
        assert_eq!(
            transitions.shape,
            [k + 2, k + 2],
            "CrfScores: transitions must be {}x{} for K={}, got {}x{}",
            k + 2,
            k + 2,
            k,
            transitions.rows(),
            transitions.cols()
        );
        CrfScores { emissions, transitions }
    }

    pub fn n(&self) -> usize {
        self.emissions.rows()
    }

    pub fn num_tags(&self) -> usize {
        self.emissions.cols()
    }

    pub fn start(&self) -> usize {
        self.num_tags()
    }

    pub fn end(&self) -> usize {
        self.num_tags() + 1
    }
}

fn check_tags(s: &CrfScores, tags: &[usize]) {
    assert_eq!(
        tags.len(),
        s.n(),
        "tag sequence length {} does not match sentence length {}",
        tags.len(),
        s.n()
    );
    for &t in tags {
        assert!(t < s.num_tags(), "tag index {t} out of range for K={}", s.num_tags());
    }
}

/// Path score: `A[start,y1] + sum_i A[y_i,y_i+1] + A[y_n,end] + sum_i P[i,y_i]`.
pub fn score_sequence(s: &CrfScores, tags: &[usize]) -> f64 {
    check_tags(s, tags);
    let a = &s.transitions;
    let mut score = a.get(s.start(), tags[0]);
    for w in tags.windows(2) {
        score += a.get(w[0], w[1]);
    }
    score += a.get(tags[tags.len() - 1], s.end());
    for (i, &t) in tags.iter().enumerate() {
        score += s.emissions.get(i, t);
    }
    score
}

/// Tape-side log-partition via the forward recursion
/// `alpha[t,j] = P[t,j] + logsumexp_k(alpha[t-1,k] + A[k,j])`,
/// seeded with `alpha[0,j] = A[start,j] + P[0,j]` and closed with the end
/// transitions. Differentiable through the graph.
pub fn log_partition_graph(g: &mut Graph, emissions: Var, transitions: Var) -> Var {
    let [n, k] = g.shape(emissions);
    let core_idx: Vec<usize> = (0..k).collect();
    let core_rows = g.rows(transitions, &core_idx);
    let core = g.cols(core_rows, &core_idx); // [K,K] from x to
    let core_t = g.transpose(core); // [K,K] rows = to-tag j, cols = from-tag k
    let start_row = g.rows(transitions, &[k]);
    let start_to = g.cols(start_row, &core_idx); // [1,K]
    let end_col = g.cols(transitions, &[k + 1]);
    let end_rows = g.rows(end_col, &core_idx); // [K,1]
    let to_end = g.transpose(end_rows); // [1,K]

    let p0 = g.rows(emissions, &[0]);
    let mut alpha = g.add(start_to, p0);
    for t in 1..n {
        let shifted = g.add_row_broadcast(core_t, alpha); // [j,k] = A[k,j] + alpha[k]
        let lse = g.logsumexp_rows(shifted); // [K,1]
        let lse_row = g.transpose(lse); // [1,K]
        let pt = g.rows(emissions, &[t]);
        alpha = g.add(lse_row, pt);
    }
    let closed = g.add(alpha, to_end);
    g.logsumexp_rows(closed)
}

/// Log-partition of plain scores (builds a throwaway graph).
pub fn log_partition(s: &CrfScores) -> f64 {
    let mut g = Graph::new();
    let e = g.leaf(&s.emissions);
    let a = g.leaf(&s.transitions);
    let z = log_partition_graph(&mut g, e, a);
    g.scalar_value(z)
}

/// Flat transition index helper for a `(K+2)^2` matrix.
fn trans_idx(k: usize, from: usize, to: usize) -> usize {
    from * (k + 2) + to
}

/// Tape-side gold-path score for [`nll_graph`].
pub fn score_sequence_graph(g: &mut Graph, emissions: Var, transitions: Var, tags: &[usize]) -> Var {
    let [n, k] = g.shape(emissions);
    assert_eq!(tags.len(), n, "tag sequence length {} does not match sentence length {n}", tags.len());
    for &t in tags {
        assert!(t < k, "tag index {t} out of range for K={k}");
    }
    let em_idx: Vec<usize> = tags.iter().enumerate().map(|(i, &t)| i * k + t).collect();
    let mut tr_idx = vec![trans_idx(k, k, tags[0])]; // start -> y1
    for w in tags.windows(2) {
        tr_idx.push(trans_idx(k, w[0], w[1]));
    }
    tr_idx.push(trans_idx(k, tags[n - 1], k + 1)); // y_n -> end
    let em_sum = g.select_sum(emissions, &em_idx);
    let tr_sum = g.select_sum(transitions, &tr_idx);
    g.add(em_sum, tr_sum)
}

/// Negative log-likelihood `logZ - score(gold)`, differentiable through the
/// tape.
pub fn nll_graph(g: &mut Graph, emissions: Var, transitions: Var, gold: &[usize]) -> Var {
    let log_z = log_partition_graph(g, emissions, transitions);
    let gold_score = score_sequence_graph(g, emissions, transitions, gold);
    g.sub(log_z, gold_score)
}

/// Negative log-likelihood on plain scores.
pub fn nll_loss(s: &CrfScores, gold: &[usize]) -> f64 {
    check_tags(s, gold);
    log_partition(s) - score_sequence(s, gold)
}

/// Max-product analogue of the forward recursion with backpointers. Ties
/// break toward the lower tag index at every argmax.
pub fn viterbi_decode(s: &CrfScores) -> (Vec<usize>, f64) {
    let n = s.n();
    let k = s.num_tags();
    let a = &s.transitions;
    let mut delta = vec![0.0f64; k];
    for j in 0..k {
        delta[j] = a.get(s.start(), j) + s.emissions.get(0, j);
    }
    let mut backptr = vec![vec![0usize; k]; n];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            for (from, &d) in delta.iter().enumerate() {
                let cand = d + a.get(from, j);
                if cand > best {
                    best = cand;
                    best_k = from;
                }
            }
            next[j] = best + s.emissions.get(t, j);
            backptr[t][j] = best_k;
        }
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_j = 0;
    for (j, &d) in delta.iter().enumerate() {
        let cand = d + a.get(j, s.end());
        if cand > best {
            best = cand;
            best_j = j;
        }
    }
    let mut tags = vec![0usize; n];
    tags[n - 1] = best_j;
    for t in (1..n).rev() {
        tags[t - 1] = backptr[t][tags[t]];
    }
    (tags, best)
}

/// Exhaustive enumeration of all `K^n` tag sequences. Returns the exact
/// log-partition, the argmax sequence under the same tie-break rule as
/// [`viterbi_decode`], and its score. Refuses instances with more than 10^6
/// sequences.
pub fn brute_force_oracle(s: &CrfScores) -> Result<(f64, Vec<usize>, f64)> {
    let n = s.n();
    let k = s.num_tags();
    let total = (k as f64).powi(n as i32);
    if total > 1e6 {
        return Err(Error::Config(format!(
            "brute_force_oracle: K^n = {k}^{n} exceeds the 10^6 sequence guard"
        )));
    }
    let mut scores = Vec::with_capacity(total as usize);
    let mut best_score = f64::NEG_INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut seq = vec![0usize; n];
    loop {
        let sc = score_sequence(s, &seq);
        scores.push(sc);
        // tie-break identical to Viterbi's per-step lowest-index rule:
        // prefer the sequence whose reverse is lexicographically smaller
        let better = sc > best_score
            || (sc == best_score
                && seq.iter().rev().lt(best.iter().rev()));
        if better {
            best_score = sc;
            best = seq.clone();
        }
        // increment the mixed-radix counter
        let mut pos = n;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < k {
                break;
            }
            seq[pos] = 0;
            if pos == 0 {
                return Ok((logsumexp_slice(&scores), best, best_score));
            }
        }
    }
}

/// Per-position tag marginals `p(y_i = k)` by enumeration (test oracle).
pub fn brute_force_marginals(s: &CrfScores) -> Result<Vec<Vec<f64>>> {
    let n = s.n();
    let k = s.num_tags();
    let (log_z, _, _) = brute_force_oracle(s)?;
    let mut marg = vec![vec![0.0f64; k]; n];
    let mut seq = vec![0usize; n];
    loop {
        let p = (score_sequence(s, &seq) - log_z).exp();
        for (i, &t) in seq.iter().enumerate() {
            marg[i][t] += p;
        }
        let mut pos = n;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < k {
                break;
            }
            seq[pos] = 0;
            if pos == 0 {
                return Ok(marg);
            }
        }
    }
}

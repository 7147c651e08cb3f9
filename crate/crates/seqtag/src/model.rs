//! The full architecture: character BiLSTM word encoder, feature
//! concatenation (pretrained word vector, char representation, optional
//! one-hot POS/chunk), dropout, word-level BiLSTM, linear emissions, CRF.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::crf::{self, CrfScores};
use crate::data::{TaggedSentence, Vocabularies, Vocabulary};
use crate::error::{Error, Result};
use crate::layers::{
    accumulate_grad, bilstm_encode, bilstm_final_states, dropout_apply, init_params,
    linear_project, DropoutSpec, EmbeddingTable, InitScheme, LstmParams, LstmVars, Mode,
};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub char_dim: usize,
    pub word_dim: usize,
    /// Hidden size per direction of the character BiLSTM.
    pub char_hidden: usize,
    /// Hidden size per direction of the word BiLSTM.
    pub word_hidden: usize,
    pub dropout_rate: f64,
    /// Character-level word representation on/off (the "w.o char" ablation).
    pub use_char: bool,
    pub use_pos_onehot: bool,
    pub use_chunk_onehot: bool,
    /// Ordered label list; defines K and the emission column order.
    pub tagset: Vec<String>,
    /// Fine-tune pretrained word vectors instead of freezing them.
    pub finetune_words: bool,
}

impl TaggerConfig {
    /// Defaults: char dim 100, word dim 300, char hidden 100, word hidden
    /// 150, dropout 0.35.
    pub fn new(tagset: Vec<String>) -> Self {
        TaggerConfig {
            char_dim: 100,
            word_dim: 300,
            char_hidden: 100,
            word_hidden: 150,
            dropout_rate: 0.35,
            use_char: true,
            use_pos_onehot: false,
            use_chunk_onehot: false,
            tagset,
            finetune_words: false,
        }
    }

    pub fn num_tags(&self) -> usize {
        self.tagset.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.char_dim == 0 || self.word_dim == 0 || self.char_hidden == 0 || self.word_hidden == 0
        {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.tagset.is_empty() {
            return Err(Error::Config("tagset is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tagset {
            if !seen.insert(t) {
                return Err(Error::Config(format!("duplicate label {t:?} in tagset")));
            }
        }
        Ok(())
    }

    /// Input width of the word-level BiLSTM.
    pub fn word_input_width(&self, pos_count: usize, chunk_count: usize) -> usize {
        self.word_dim
            + if self.use_char { 2 * self.char_hidden } else { 0 }
            + if self.use_pos_onehot { pos_count } else { 0 }
            + if self.use_chunk_onehot { chunk_count } else { 0 }
    }
}

/// All learnable weights plus the (by default frozen) pretrained word table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaggerParams {
    pub char_table: EmbeddingTable,
    pub word_table: EmbeddingTable,
    pub char_fwd: LstmParams,
    pub char_bwd: LstmParams,
    pub word_fwd: LstmParams,
    pub word_bwd: LstmParams,
    /// `[K, 2*word_hidden]`
    pub proj_w: Tensor,
    /// `[1, K]`
    pub proj_b: Tensor,
    /// `[(K+2), (K+2)]`
    pub crf_transitions: Tensor,
}

impl TaggerParams {
    pub fn init(
        cfg: &TaggerConfig,
        char_vocab_size: usize,
        pos_count: usize,
        chunk_count: usize,
        word_table: EmbeddingTable,
        seed: u64,
    ) -> Self {
        assert_eq!(word_table.dim(), cfg.word_dim, "word table dim {} vs config word_dim {}", word_table.dim(), cfg.word_dim);
        let k = cfg.num_tags();
        let word_input = cfg.word_input_width(pos_count, chunk_count);
        let mut word_table = word_table;
        word_table.trainable = cfg.finetune_words;
        word_table.weights.requires_grad = cfg.finetune_words;
        let mut proj_w =
            init_params([k, 2 * cfg.word_hidden], InitScheme::Glorot, seed.wrapping_add(900));
        proj_w.requires_grad = true;
        let mut proj_b = Tensor::zeros([1, k]);
        proj_b.requires_grad = true;
        let mut crf_transitions =
            init_params([k + 2, k + 2], InitScheme::Glorot, seed.wrapping_add(901));
        crf_transitions.requires_grad = true;
        TaggerParams {
            char_table: EmbeddingTable::random(char_vocab_size, cfg.char_dim, seed.wrapping_add(100)),
            word_table,
            char_fwd: LstmParams::init(cfg.char_hidden, cfg.char_dim, seed.wrapping_add(200)),
            char_bwd: LstmParams::init(cfg.char_hidden, cfg.char_dim, seed.wrapping_add(300)),
            word_fwd: LstmParams::init(cfg.word_hidden, word_input, seed.wrapping_add(400)),
            word_bwd: LstmParams::init(cfg.word_hidden, word_input, seed.wrapping_add(500)),
            proj_w,
            proj_b,
            crf_transitions,
        }
    }

    /// All parameter tensors with stable names, in a fixed order shared by
    /// the optimizer, checkpointing, and gradient audits.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("char_table".into(), &self.char_table.weights),
            ("word_table".into(), &self.word_table.weights),
        ];
        let lstm_names = ["w_f", "w_i", "w_c", "w_o", "u_f", "u_i", "u_c", "u_o", "b_f", "b_i", "b_c", "b_o"];
        for (prefix, p) in [
            ("char_fwd", &self.char_fwd),
            ("char_bwd", &self.char_bwd),
            ("word_fwd", &self.word_fwd),
            ("word_bwd", &self.word_bwd),
        ] {
            for (name, t) in lstm_names.iter().zip(p.tensors()) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out.push(("proj_w".into(), &self.proj_w));
        out.push(("proj_b".into(), &self.proj_b));
        out.push(("crf_transitions".into(), &self.crf_transitions));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("char_table".into(), &mut self.char_table.weights),
            ("word_table".into(), &mut self.word_table.weights),
        ];
        let lstm_names = ["w_f", "w_i", "w_c", "w_o", "u_f", "u_i", "u_c", "u_o", "b_f", "b_i", "b_c", "b_o"];
        for (prefix, p) in [
            ("char_fwd", &mut self.char_fwd),
            ("char_bwd", &mut self.char_bwd),
            ("word_fwd", &mut self.word_fwd),
            ("word_bwd", &mut self.word_bwd),
        ] {
            for (name, t) in lstm_names.iter().zip(p.tensors_mut()) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out.push(("proj_w".into(), &mut self.proj_w));
        out.push(("proj_b".into(), &mut self.proj_b));
        out.push(("crf_transitions".into(), &mut self.crf_transitions));
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.zero_grad();
        }
    }
}

/// A token encoded against the model's vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedToken {
    pub word_index: usize,
    pub char_indices: Vec<usize>,
    /// Indicator vector over the POS dictionary; all-zero for unseen tags.
    pub pos_onehot: Option<Vec<f64>>,
    pub chunk_onehot: Option<Vec<f64>>,
}

fn onehot(vocab: &Vocabulary, tag: &str) -> Vec<f64> {
    let mut v = vec![0.0; vocab.len()];
    if let Some(i) = vocab.lookup(tag) {
        v[i] = 1.0;
    }
    v
}

/// Encode a sentence. Word lookup is an exact string match against the
/// pretrained vocabulary with UNK fallback; characters are the Unicode
/// scalar values of the word string (underscore joiner included), unseen
/// characters map to the UNK char id.
pub fn encode_sentence(
    sent: &TaggedSentence,
    word_vocab: &Vocabulary,
    vocabs: &Vocabularies,
    cfg: &TaggerConfig,
) -> Result<Vec<EncodedToken>> {
    let mut out = Vec::with_capacity(sent.tokens.len());
    for (i, tok) in sent.tokens.iter().enumerate() {
        let char_indices: Vec<usize> =
            tok.word.chars().map(|c| vocabs.chars.lookup_or_unk(&c.to_string())).collect();
        if char_indices.is_empty() {
            return Err(Error::Data(format!("token {i}: empty word")));
        }
        let pos_onehot = if cfg.use_pos_onehot {
            let p = tok.pos.as_ref().ok_or_else(|| {
                Error::Data(format!("token {i} ({:?}): POS one-hot enabled but token has no POS column", tok.word))
            })?;
            Some(onehot(&vocabs.pos, p))
        } else {
            None
        };
        let chunk_onehot = if cfg.use_chunk_onehot {
            let c = tok.chunk.as_ref().ok_or_else(|| {
                Error::Data(format!("token {i} ({:?}): chunk one-hot enabled but token has no chunk column", tok.word))
            })?;
            Some(onehot(&vocabs.chunk, c))
        } else {
            None
        };
        out.push(EncodedToken {
            word_index: word_vocab.lookup_or_unk(&tok.word),
            char_indices,
            pos_onehot,
            chunk_onehot,
        });
    }
    Ok(out)
}

/// Tape-side handles for every parameter tensor, bound once per graph.
pub struct TaggerVars {
    pub char_table: Var,
    pub word_table: Var,
    pub char_fwd: LstmVars,
    pub char_bwd: LstmVars,
    pub word_fwd: LstmVars,
    pub word_bwd: LstmVars,
    pub proj_wt: Var, // transposed projection
    proj_w_leaf: Var,
    pub proj_b: Var,
    pub crf_transitions: Var,
}

impl TaggerVars {
    pub fn bind(g: &mut Graph, p: &TaggerParams) -> Self {
        let proj_w_leaf = g.leaf(&p.proj_w);
        TaggerVars {
            char_table: g.leaf(&p.char_table.weights),
            word_table: g.leaf(&p.word_table.weights),
            char_fwd: LstmVars::bind(g, &p.char_fwd),
            char_bwd: LstmVars::bind(g, &p.char_bwd),
            word_fwd: LstmVars::bind(g, &p.word_fwd),
            word_bwd: LstmVars::bind(g, &p.word_bwd),
            proj_wt: g.transpose(proj_w_leaf),
            proj_w_leaf,
            proj_b: g.leaf(&p.proj_b),
            crf_transitions: g.leaf(&p.crf_transitions),
        }
    }

    /// Accumulate tape gradients back into the parameter tensors.
    pub fn harvest(&self, g: &Graph, p: &mut TaggerParams) {
        accumulate_grad(g, self.char_table, &mut p.char_table.weights);
        accumulate_grad(g, self.word_table, &mut p.word_table.weights);
        self.char_fwd.harvest(g, &mut p.char_fwd);
        self.char_bwd.harvest(g, &mut p.char_bwd);
        self.word_fwd.harvest(g, &mut p.word_fwd);
        self.word_bwd.harvest(g, &mut p.word_bwd);
        accumulate_grad(g, self.proj_w_leaf, &mut p.proj_w);
        accumulate_grad(g, self.proj_b, &mut p.proj_b);
        accumulate_grad(g, self.crf_transitions, &mut p.crf_transitions);
    }
}

/// Character-level word representation: run the char BiLSTM over the word's
/// character embeddings and concatenate the two terminal hidden states.
pub fn char_word_embed(
    g: &mut Graph,
    char_indices: &[usize],
    vars: &TaggerVars,
    cfg: &TaggerConfig,
) -> Var {
    assert!(!char_indices.is_empty(), "char_word_embed: empty character list");
    let embedded = g.rows(vars.char_table, char_indices);
    let xs: Vec<Var> = (0..char_indices.len()).map(|i| g.rows(embedded, &[i])).collect();
    bilstm_final_states(g, &xs, &vars.char_fwd, &vars.char_bwd, cfg.char_hidden)
}

/// Word representation: `concat(word_vector, char_repr, [pos], [chunk])` in
/// that fixed order.
pub fn build_word_representation(
    g: &mut Graph,
    tok: &EncodedToken,
    vars: &TaggerVars,
    cfg: &TaggerConfig,
) -> Var {
    let word_vec = g.rows(vars.word_table, &[tok.word_index]);
    let mut parts = vec![word_vec];
    if cfg.use_char {
        parts.push(char_word_embed(g, &tok.char_indices, vars, cfg));
    }
    if let Some(p) = &tok.pos_onehot {
        parts.push(g.constant([1, p.len()], p.clone()));
    }
    if let Some(c) = &tok.chunk_onehot {
        parts.push(g.constant([1, c.len()], c.clone()));
    }
    g.concat(&parts, 1)
}

/// Full forward pass to CRF scores: representations, dropout on the word
/// BiLSTM's input and output vectors, emissions per token.
pub fn forward_sentence(
    g: &mut Graph,
    sent: &[EncodedToken],
    vars: &TaggerVars,
    cfg: &TaggerConfig,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> (Var, Var) {
    assert!(!sent.is_empty(), "forward_sentence: empty sentence");
    let drop = DropoutSpec { rate: cfg.dropout_rate, mode };
    let inputs: Vec<Var> = sent
        .iter()
        .map(|tok| {
            let rep = build_word_representation(g, tok, vars, cfg);
            dropout_apply(g, rep, drop, rng)
        })
        .collect();
    let encoded = bilstm_encode(g, &inputs, &vars.word_fwd, &vars.word_bwd, cfg.word_hidden);
    let emission_rows: Vec<Var> = encoded
        .into_iter()
        .map(|h| {
            let dropped = dropout_apply(g, h, drop, rng);
            linear_project(g, dropped, vars.proj_wt, vars.proj_b)
        })
        .collect();
    let emissions = g.concat(&emission_rows, 0);
    (emissions, vars.crf_transitions)
}

/// Differentiable per-sentence loss.
pub fn sentence_nll(
    g: &mut Graph,
    sent: &[EncodedToken],
    gold: &[usize],
    vars: &TaggerVars,
    cfg: &TaggerConfig,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Var {
    let (emissions, transitions) = forward_sentence(g, sent, vars, cfg, mode, rng);
    crf::nll_graph(g, emissions, transitions, gold)
}

/// A trained (or initialized) tagger: config, parameters, and the
/// vocabularies it was built against.
#[derive(Clone, Serialize, Deserialize)]
pub struct Tagger {
    pub config: TaggerConfig,
    pub params: TaggerParams,
    pub vocabs: Vocabularies,
    pub word_vocab: Vocabulary,
}

impl Tagger {
    /// Eval-mode CRF scores for an encoded sentence.
    pub fn scores(&self, sent: &[EncodedToken]) -> CrfScores {
        let mut g = Graph::new();
        let vars = TaggerVars::bind(&mut g, &self.params);
        // eval mode never samples, so any rng works
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let (emissions, transitions) =
            forward_sentence(&mut g, sent, &vars, &self.config, Mode::Eval, &mut rng);
        let e_shape = g.shape(emissions);
        let t_shape = g.shape(transitions);
        CrfScores::new(
            Tensor::from_vec(e_shape, g.value(emissions).to_vec()),
            Tensor::from_vec(t_shape, g.value(transitions).to_vec()),
        )
    }

    /// Eval-mode forward plus Viterbi decode, mapped back to label strings.
    pub fn tag_sentence(&self, sent: &TaggedSentence) -> Result<Vec<String>> {
        let encoded = encode_sentence(sent, &self.word_vocab, &self.vocabs, &self.config)?;
        let scores = self.scores(&encoded);
        let (tags, _) = crf::viterbi_decode(&scores);
        Ok(tags.iter().map(|&t| self.config.tagset[t].clone()).collect())
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.config
            .tagset
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Data(format!("label {label:?} not in the model tagset")))
    }
}

//! Parameterized layers: embeddings, the LSTM cell, bidirectional sequence
//! encoding, inverted dropout and linear projection.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Tensor, Var};

/// Weight initialization schemes. Biases are zero; matrices are
/// glorot-uniform; embedding rows use the uniform `[-sqrt(3/dim), +sqrt(3/dim)]`
/// rule that also produces the UNK vector.
#[derive(Clone, Copy, Debug)]
pub enum InitScheme {
    /// Uniform in `±sqrt(3/cols)`.
    UnkUniform,
    /// Uniform in `±sqrt(6/(fan_in+fan_out))` with `fan_in = cols`,
    /// `fan_out = rows`.
    Glorot,
    Zero,
}

pub fn init_params(shape: [usize; 2], scheme: InitScheme, rng_seed: u64) -> Tensor {
    assert!(shape[0] > 0 && shape[1] > 0, "init_params: non-positive shape {shape:?}");
    let bound = match scheme {
        InitScheme::UnkUniform => (3.0 / shape[1] as f64).sqrt(),
        InitScheme::Glorot => (6.0 / (shape[0] + shape[1]) as f64).sqrt(),
        InitScheme::Zero => return Tensor::zeros(shape),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let values = (0..shape[0] * shape[1]).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, values)
}

/// Row-indexed embedding matrix. Frozen tables (pretrained words) never
/// receive gradient updates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub weights: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut weights = init_params([vocab_size, dim], InitScheme::UnkUniform, seed);
        weights.requires_grad = true;
        EmbeddingTable { weights, trainable: true }
    }

    pub fn frozen(weights: Tensor) -> Self {
        let mut weights = weights;
        weights.requires_grad = false;
        EmbeddingTable { weights, trainable: false }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }
}

/// The four-gate LSTM cell parameters. `W_*` act on the previous hidden
/// state, `U_*` on the input, shapes `[H,H]`, `[H,D]` and `[1,H]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub u_f: Tensor,
    pub u_i: Tensor,
    pub u_c: Tensor,
    pub u_o: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

impl LstmParams {
    pub fn init(hidden: usize, input: usize, seed: u64) -> Self {
        let mk_w = |s: u64| {
            let mut t = init_params([hidden, hidden], InitScheme::Glorot, seed.wrapping_add(s));
            t.requires_grad = true;
            t
        };
        let mk_u = |s: u64| {
            let mut t = init_params([hidden, input], InitScheme::Glorot, seed.wrapping_add(s));
            t.requires_grad = true;
            t
        };
        let mk_b = || {
            let mut t = Tensor::zeros([1, hidden]);
            t.requires_grad = true;
            t
        };
        LstmParams {
            w_f: mk_w(1),
            w_i: mk_w(2),
            w_c: mk_w(3),
            w_o: mk_w(4),
            u_f: mk_u(5),
            u_i: mk_u(6),
            u_c: mk_u(7),
            u_o: mk_u(8),
            b_f: mk_b(),
            b_i: mk_b(),
            b_c: mk_b(),
            b_o: mk_b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.u_f.cols()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.w_f, &self.w_i, &self.w_c, &self.w_o, &self.u_f, &self.u_i, &self.u_c,
            &self.u_o, &self.b_f, &self.b_i, &self.b_c, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_f, &mut self.w_i, &mut self.w_c, &mut self.w_o, &mut self.u_f,
            &mut self.u_i, &mut self.u_c, &mut self.u_o, &mut self.b_f, &mut self.b_i,
            &mut self.b_c, &mut self.b_o,
        ]
    }
}

/// Tape-side handles for one LSTM's parameters. The `W`/`U` leaves are
/// pre-transposed once so every step is a plain row-vector matmul.
#[derive(Clone)]
pub struct LstmVars {
    leaves: Vec<Var>, // leaf nodes in LstmParams::tensors order
    wt: [Var; 4],     // transposed [H,H]
    ut: [Var; 4],     // transposed [D,H]
    b: [Var; 4],
}

impl LstmVars {
    pub fn bind(g: &mut Graph, p: &LstmParams) -> Self {
        let leaves: Vec<Var> = p.tensors().iter().map(|t| g.leaf(t)).collect();
        let tr = |g: &mut Graph, v: Var| g.transpose(v);
        LstmVars {
            wt: [tr(g, leaves[0]), tr(g, leaves[1]), tr(g, leaves[2]), tr(g, leaves[3])],
            ut: [tr(g, leaves[4]), tr(g, leaves[5]), tr(g, leaves[6]), tr(g, leaves[7])],
            b: [leaves[8], leaves[9], leaves[10], leaves[11]],
            leaves,
        }
    }

    /// Accumulate tape gradients back into the parameter tensors.
    pub fn harvest(&self, g: &Graph, p: &mut LstmParams) {
        for (t, &v) in p.tensors_mut().into_iter().zip(&self.leaves) {
            accumulate_grad(g, v, t);
        }
    }
}

pub(crate) fn accumulate_grad(g: &Graph, v: Var, t: &mut Tensor) {
    if let Some(grad) = g.grad(v) {
        t.ensure_grad();
        for (acc, gv) in t.grad.iter_mut().zip(grad) {
            *acc += gv;
        }
    }
}

/// One step of the LSTM cell:
/// gates `f,i,o = sigmoid(W h + U x + b)`, candidate `c~ = tanh(...)`,
/// `c_t = f.c_prev + i.c~`, `h_t = o.tanh(c_t)`.
pub fn lstm_step(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> (Var, Var) {
    let gate = |g: &mut Graph, k: usize| {
        let wh = g.matmul(h_prev, p.wt[k]);
        let ux = g.matmul(x, p.ut[k]);
        let s = g.add(wh, ux);
        g.add(s, p.b[k])
    };
    let pf = gate(g, 0);
    let f = g.sigmoid(pf);
    let pi = gate(g, 1);
    let i = g.sigmoid(pi);
    let pc = gate(g, 2);
    let c_tilde = g.tanh(pc);
    let po = gate(g, 3);
    let o = g.sigmoid(po);
    let fc = g.mul(f, c_prev);
    let ic = g.mul(i, c_tilde);
    let c_t = g.add(fc, ic);
    let tc = g.tanh(c_t);
    let h_t = g.mul(o, tc);
    (h_t, c_t)
}

/// Run one direction over the sequence, starting from zero states. Returns
/// the hidden state at every position.
pub fn lstm_run(g: &mut Graph, xs: &[Var], p: &LstmVars, hidden: usize) -> Vec<Var> {
    assert!(!xs.is_empty(), "lstm_run: empty sequence");
    let mut h = g.constant([1, hidden], vec![0.0; hidden]);
    let mut c = g.constant([1, hidden], vec![0.0; hidden]);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let (h_t, c_t) = lstm_step(g, x, h, c, p);
        h = h_t;
        c = c_t;
        out.push(h_t);
    }
    out
}

/// Bidirectional encoding: `output[t] = concat(h_fwd[t], h_bwd[t])` where the
/// backward pass reads the sequence in reverse and its outputs are
/// re-reversed to line up positionwise.
pub fn bilstm_encode(
    g: &mut Graph,
    xs: &[Var],
    fwd: &LstmVars,
    bwd: &LstmVars,
    hidden: usize,
) -> Vec<Var> {
    assert!(!xs.is_empty(), "bilstm_encode: empty sequence");
    let h_fwd = lstm_run(g, xs, fwd, hidden);
    let reversed: Vec<Var> = xs.iter().rev().cloned().collect();
    let mut h_bwd = lstm_run(g, &reversed, bwd, hidden);
    h_bwd.reverse();
    h_fwd
        .iter()
        .zip(&h_bwd)
        .map(|(&hf, &hb)| g.concat(&[hf, hb], 1))
        .collect()
}

/// Final states of both directions over the sequence (the character-level
/// word representation uses these, not the per-position outputs).
pub fn bilstm_final_states(
    g: &mut Graph,
    xs: &[Var],
    fwd: &LstmVars,
    bwd: &LstmVars,
    hidden: usize,
) -> Var {
    assert!(!xs.is_empty(), "bilstm_final_states: empty sequence");
    let h_fwd = lstm_run(g, xs, fwd, hidden);
    let reversed: Vec<Var> = xs.iter().rev().cloned().collect();
    let h_bwd = lstm_run(g, &reversed, bwd, hidden);
    g.concat(&[*h_fwd.last().unwrap(), *h_bwd.last().unwrap()], 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
}

/// Inverted dropout: in train mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; eval mode is the
/// identity.
pub fn dropout_apply(g: &mut Graph, x: Var, spec: DropoutSpec, rng: &mut dyn RngCore) -> Var {
    assert!(
        (0.0..1.0).contains(&spec.rate),
        "dropout rate {} outside [0, 1)",
        spec.rate
    );
    if spec.mode == Mode::Eval || spec.rate == 0.0 {
        return x;
    }
    let shape = g.shape(x);
    let keep = 1.0 / (1.0 - spec.rate);
    let mask: Vec<f64> = (0..shape[0] * shape[1])
        .map(|_| if rng.gen::<f64>() < spec.rate { 0.0 } else { keep })
        .collect();
    let m = g.constant(shape, mask);
    g.mul(x, m)
}

/// Emission projection `W x + b` with `x` a `[1,D]` row, `W` `[K,D]`, `b`
/// `[1,K]`.
pub fn linear_project(g: &mut Graph, x: Var, w_t: Var, b: Var) -> Var {
    let wx = g.matmul(x, w_t);
    g.add(wx, b)
}

//! Tape construction shared by training and inference.
//!
//! Everything the network computes is defined once, here, as graph-building
//! functions over [`Tape`]. The training entry point [`loss_and_gradients`]
//! runs them batched with teacher forcing and backpropagates; the inference
//! wrappers in `forward` run the same builders step by step and just read
//! values off the tape.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subword::{BOS_ID, EOS_ID, PAD_ID};

use super::{AttentionKind, EncoderDirection, Hyperparams, ModelParameters};

/// A batch of id sequences, boundary tokens not yet applied. The graph adds
/// `<s>`/`</s>` around sources and shifts targets for teacher forcing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    pub sources: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

pub(crate) struct LayerVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

pub(crate) struct NetVars {
    pub src_embed: Var,
    pub tgt_embed: Var,
    pub enc_fwd: Vec<LayerVars>,
    pub enc_bwd: Vec<LayerVars>,
    pub dec: Vec<LayerVars>,
    pub attn_w: Var,
    pub attn_u: Option<Var>,
    pub attn_v: Option<Var>,
    pub readout_w: Var,
    pub readout_b: Var,
    pub out_w: Var,
    pub out_b: Var,
    /// Every parameter leaf in canonical `tensors()` order.
    pub ordered: Vec<Var>,
}

/// Copies all parameters onto the tape as leaves, preserving canonical order.
pub(crate) fn register<F: Scalar>(tape: &mut Tape<F>, params: &ModelParameters<F>) -> NetVars {
    let mut ordered = Vec::new();
    let mut leaf = |tape: &mut Tape<F>, a: &Array2<F>| {
        let v = tape.leaf(a.clone());
        ordered.push(v);
        v
    };
    let src_embed = leaf(tape, &params.src_embed);
    let tgt_embed = leaf(tape, &params.tgt_embed);
    let mut layers = |tape: &mut Tape<F>, ls: &[super::LstmLayer<F>]| -> Vec<LayerVars> {
        ls.iter()
            .map(|l| LayerVars {
                wx: leaf(tape, &l.wx),
                wh: leaf(tape, &l.wh),
                b: leaf(tape, &l.b),
            })
            .collect()
    };
    let enc_fwd = layers(tape, &params.enc_fwd);
    let enc_bwd = layers(tape, &params.enc_bwd);
    let dec = layers(tape, &params.dec);
    let attn_w = leaf(tape, &params.attn_w);
    let attn_u = params.attn_u.as_ref().map(|u| leaf(tape, u));
    let attn_v = params.attn_v.as_ref().map(|v| leaf(tape, v));
    let readout_w = leaf(tape, &params.readout_w);
    let readout_b = leaf(tape, &params.readout_b);
    let out_w = leaf(tape, &params.out_w);
    let out_b = leaf(tape, &params.out_b);
    debug_assert_eq!(ordered.len(), params.tensors().len());
    NetVars {
        src_embed,
        tgt_embed,
        enc_fwd,
        enc_bwd,
        dec,
        attn_w,
        attn_u,
        attn_v,
        readout_w,
        readout_b,
        out_w,
        out_b,
        ordered,
    }
}

/// Inverted-dropout mask source. With `p == 0` it is a no-op and draws
/// nothing, so inference paths stay mask-free.
pub(crate) struct DropoutGen {
    rng: ChaCha8Rng,
    p: f64,
}

impl DropoutGen {
    pub fn new(p: f64, seed: u64) -> Self {
        DropoutGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            p,
        }
    }

    pub fn disabled() -> Self {
        Self::new(0.0, 0)
    }

    pub fn apply<F: Scalar>(&mut self, tape: &mut Tape<F>, x: Var) -> Var {
        if self.p <= 0.0 {
            return x;
        }
        let dim = tape.value(x).dim();
        let scale = 1.0 / (1.0 - self.p);
        let mask = Array2::from_shape_fn(dim, |_| {
            if self.rng.gen::<f64>() < self.p {
                F::zero()
            } else {
                F::of_f64(scale)
            }
        });
        tape.dropout(x, mask)
    }
}

/// One LSTM cell application for a whole batch row-block.
pub(crate) fn lstm_step<F: Scalar>(
    tape: &mut Tape<F>,
    layer: &LayerVars,
    hidden: usize,
    x: Var,
    h: Var,
    c: Var,
) -> (Var, Var) {
    let gx = tape.matmul(x, layer.wx);
    let gh = tape.matmul(h, layer.wh);
    let gsum = tape.add(gx, gh);
    let gates = tape.add_row(gsum, layer.b);
    let i_pre = tape.slice_cols(gates, 0, hidden);
    let i = tape.sigmoid(i_pre);
    let f_pre = tape.slice_cols(gates, hidden, 2 * hidden);
    let f = tape.sigmoid(f_pre);
    let g_pre = tape.slice_cols(gates, 2 * hidden, 3 * hidden);
    let g = tape.tanh(g_pre);
    let o_pre = tape.slice_cols(gates, 3 * hidden, 4 * hidden);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_new = tape.add(fc, ig);
    let c_tanh = tape.tanh(c_new);
    let h_new = tape.mul(o, c_tanh);
    (h_new, c_new)
}

/// Encoder output for a padded batch.
pub(crate) struct EncoderGraph<F: Scalar> {
    /// One `B x A` annotation block per source position.
    pub annotations: Vec<Var>,
    /// Additive attention's precomputed `U h_j`, one per position.
    pub uh: Option<Vec<Var>>,
    /// `B x T` validity mask (1 on real tokens, 0 on padding).
    pub mask: Array2<F>,
}

fn zeros_leaf<F: Scalar>(tape: &mut Tape<F>, rows: usize, cols: usize) -> Var {
    tape.leaf(Array2::zeros((rows, cols)))
}

/// Runs one direction of the encoder stack over the padded id grid.
/// `order` yields time indices; hidden/cell states are zeroed on padding so a
/// short sentence's states are exactly what an unpadded run would produce.
fn run_direction<F: Scalar>(
    tape: &mut Tape<F>,
    layers: &[LayerVars],
    hidden: usize,
    inputs: &[Var],
    valid_cols: &[Var],
    order: impl Iterator<Item = usize>,
    dropout: &mut DropoutGen,
) -> Vec<Var> {
    let batch = tape.value(inputs[0]).nrows();
    let mut h: Vec<Var> = (0..layers.len()).map(|_| zeros_leaf(tape, batch, hidden)).collect();
    let mut c: Vec<Var> = (0..layers.len()).map(|_| zeros_leaf(tape, batch, hidden)).collect();
    let mut top: Vec<Option<Var>> = vec![None; inputs.len()];
    for t in order {
        let mut x = inputs[t];
        for (l, layer) in layers.iter().enumerate() {
            if l > 0 {
                x = dropout.apply(tape, x);
            }
            let (h_new, c_new) = lstm_step(tape, layer, hidden, x, h[l], c[l]);
            let h_masked = tape.scale_rows(h_new, valid_cols[t]);
            let c_masked = tape.scale_rows(c_new, valid_cols[t]);
            h[l] = h_masked;
            c[l] = c_masked;
            x = h_masked;
        }
        top[t] = Some(*h.last().unwrap());
    }
    top.into_iter().map(|v| v.expect("all positions visited")).collect()
}

pub(crate) fn build_encoder<F: Scalar>(
    tape: &mut Tape<F>,
    nv: &NetVars,
    hyper: &Hyperparams,
    wrapped_sources: &[Vec<usize>],
    dropout: &mut DropoutGen,
) -> EncoderGraph<F> {
    let batch = wrapped_sources.len();
    let t_max = wrapped_sources.iter().map(Vec::len).max().unwrap_or(0);
    let mut mask = Array2::zeros((batch, t_max));
    for (b, s) in wrapped_sources.iter().enumerate() {
        for t in 0..s.len() {
            mask[(b, t)] = F::one();
        }
    }
    let valid_cols: Vec<Var> = (0..t_max)
        .map(|t| {
            let col = mask.column(t).to_owned().insert_axis(Axis(1));
            tape.leaf(col)
        })
        .collect();
    let inputs: Vec<Var> = (0..t_max)
        .map(|t| {
            let ids: Vec<usize> = wrapped_sources
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(PAD_ID))
                .collect();
            let e = tape.embed(nv.src_embed, &ids);
            dropout.apply(tape, e)
        })
        .collect();

    let fwd = run_direction(
        tape,
        &nv.enc_fwd,
        hyper.hidden_dim,
        &inputs,
        &valid_cols,
        0..t_max,
        dropout,
    );
    let annotations: Vec<Var> = match hyper.direction {
        EncoderDirection::Uni => fwd,
        EncoderDirection::Bi => {
            let bwd = run_direction(
                tape,
                &nv.enc_bwd,
                hyper.hidden_dim,
                &inputs,
                &valid_cols,
                (0..t_max).rev(),
                dropout,
            );
            fwd.into_iter()
                .zip(bwd)
                .map(|(f, b)| tape.concat_cols(&[f, b]))
                .collect()
        }
    };
    let uh = nv.attn_u.map(|u| {
        annotations
            .iter()
            .map(|&a| tape.matmul(a, u))
            .collect::<Vec<_>>()
    });
    EncoderGraph {
        annotations,
        uh,
        mask,
    }
}

/// Alignment scores, softmax weights and the context vector for one step.
/// `s_top` is the top-layer decoder hidden state from the previous step.
pub(crate) fn build_attention<F: Scalar>(
    tape: &mut Tape<F>,
    nv: &NetVars,
    kind: AttentionKind,
    s_top: Var,
    enc: &EncoderGraph<F>,
) -> (Var, Var) {
    let scores: Vec<Var> = match kind {
        AttentionKind::Additive => {
            let ws = tape.matmul(s_top, nv.attn_w);
            let uh = enc.uh.as_ref().expect("additive attention has U h cache");
            let v = nv.attn_v.expect("additive attention has v");
            uh.iter()
                .map(|&uh_j| {
                    let pre = tape.add(ws, uh_j);
                    let act = tape.tanh(pre);
                    tape.matmul(act, v)
                })
                .collect()
        }
        AttentionKind::General => {
            let sw = tape.matmul(s_top, nv.attn_w);
            enc.annotations
                .iter()
                .map(|&a_j| tape.row_dot(sw, a_j))
                .collect()
        }
    };
    let e = tape.concat_cols(&scores);
    let weights = tape.softmax_rows(e, enc.mask.clone());
    let mut context: Option<Var> = None;
    for (j, &a_j) in enc.annotations.iter().enumerate() {
        let w_j = tape.slice_cols(weights, j, j + 1);
        let term = tape.scale_rows(a_j, w_j);
        context = Some(match context {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    (context.expect("at least one source position"), weights)
}

/// Decoder recurrent state as tape handles, one (h, c) pair per layer.
#[derive(Clone)]
pub(crate) struct DecVars {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

pub(crate) fn dec_init<F: Scalar>(tape: &mut Tape<F>, hyper: &Hyperparams, batch: usize) -> DecVars {
    let h = (0..hyper.n_layers)
        .map(|_| zeros_leaf(tape, batch, hyper.hidden_dim))
        .collect::<Vec<_>>();
    let c = (0..hyper.n_layers)
        .map(|_| zeros_leaf(tape, batch, hyper.hidden_dim))
        .collect();
    DecVars { h, c }
}

pub(crate) struct DecStepOut {
    pub state: DecVars,
    pub logits: Var,
    pub context: Var,
    pub attention: Var,
}

/// One decoder step: attend with the previous top state, run the stack on
/// `[embedding; context]`, then project `g(y_prev, s_i, c_i)` to the vocab.
pub(crate) fn build_decoder_step<F: Scalar>(
    tape: &mut Tape<F>,
    nv: &NetVars,
    hyper: &Hyperparams,
    enc: &EncoderGraph<F>,
    state: &DecVars,
    y_prev: &[usize],
    dropout: &mut DropoutGen,
) -> DecStepOut {
    let emb_raw = tape.embed(nv.tgt_embed, y_prev);
    let emb = dropout.apply(tape, emb_raw);
    let s_top = *state.h.last().unwrap();
    let (context, attention) = build_attention(tape, nv, hyper.attention, s_top, enc);

    let mut h = state.h.clone();
    let mut c = state.c.clone();
    let mut x = tape.concat_cols(&[emb, context]);
    for (l, layer) in nv.dec.iter().enumerate() {
        if l > 0 {
            x = dropout.apply(tape, x);
        }
        let (h_new, c_new) = lstm_step(tape, layer, hyper.hidden_dim, x, h[l], c[l]);
        h[l] = h_new;
        c[l] = c_new;
        x = h_new;
    }

    let cat = tape.concat_cols(&[*h.last().unwrap(), context, emb]);
    let pre = tape.matmul(cat, nv.readout_w);
    let pre_b = tape.add_row(pre, nv.readout_b);
    let r = tape.tanh(pre_b);
    let r = dropout.apply(tape, r);
    let logits_pre = tape.matmul(r, nv.out_w);
    let logits = tape.add_row(logits_pre, nv.out_b);
    DecStepOut {
        state: DecVars { h, c },
        logits,
        context,
        attention,
    }
}

pub(crate) fn wrap_source(ids: &[usize]) -> Vec<usize> {
    let mut w = Vec::with_capacity(ids.len() + 2);
    w.push(BOS_ID);
    w.extend_from_slice(ids);
    w.push(EOS_ID);
    w
}

/// Mean (over sentences) teacher-forced negative log-likelihood of the batch
/// and its exact gradient with respect to every parameter.
///
/// Dropout masks are drawn from `dropout_seed` alone, so repeated calls with
/// identical arguments are bitwise identical, and finite-difference probes of
/// this function see a deterministic, differentiable loss.
pub fn loss_and_gradients<F: Scalar>(
    params: &ModelParameters<F>,
    batch: &EncodedBatch,
    dropout_p: f64,
    dropout_seed: u64,
) -> Result<(F, ModelParameters<F>)> {
    if batch.sources.is_empty() || batch.sources.len() != batch.targets.len() {
        return Err(Error::Model(format!(
            "batch must pair sources with targets, got {} and {}",
            batch.sources.len(),
            batch.targets.len()
        )));
    }
    for (s, t) in batch.sources.iter().zip(&batch.targets) {
        if s.is_empty() || t.is_empty() {
            return Err(Error::Model("empty sentence in batch".into()));
        }
        params.check_ids(s)?;
        params.check_ids(t)?;
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::Model(format!("dropout {dropout_p} outside [0, 1)")));
    }

    let batch_size = batch.sources.len();
    let mut tape = Tape::new();
    let nv = register(&mut tape, params);
    let mut dropout = DropoutGen::new(dropout_p, dropout_seed);

    let wrapped: Vec<Vec<usize>> = batch.sources.iter().map(|s| wrap_source(s)).collect();
    let enc = build_encoder(&mut tape, &nv, &params.hyper, &wrapped, &mut dropout);

    let t_steps = batch.targets.iter().map(Vec::len).max().unwrap() + 1;
    let mut state = dec_init(&mut tape, &params.hyper, batch_size);
    let mut step_losses = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let y_prev: Vec<usize> = batch
            .targets
            .iter()
            .map(|tgt| {
                if t == 0 {
                    BOS_ID
                } else {
                    tgt.get(t - 1).copied().unwrap_or(PAD_ID)
                }
            })
            .collect();
        let out = build_decoder_step(&mut tape, &nv, &params.hyper, &enc, &state, &y_prev, &mut dropout);
        state = out.state;
        let mut targets = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for tgt in &batch.targets {
            if t < tgt.len() {
                targets.push(tgt[t]);
                weights.push(F::one());
            } else if t == tgt.len() {
                targets.push(EOS_ID);
                weights.push(F::one());
            } else {
                targets.push(PAD_ID);
                weights.push(F::zero());
            }
        }
        step_losses.push(tape.ce_sum(out.logits, &targets, &weights));
    }
    let total = tape.sum_scalars(&step_losses);
    let loss_var = tape.scale_const(total, F::of_f64(1.0 / batch_size as f64));
    let loss = tape.scalar(loss_var);

    let grads = tape.backward(loss_var);
    let mut grad_params = params.zeros_like();
    for ((_, slot), var) in grad_params.tensors_mut().into_iter().zip(&nv.ordered) {
        slot.assign(grads.wrt(*var));
    }
    Ok((loss, grad_params))
}

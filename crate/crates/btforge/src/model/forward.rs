//! Inference-facing ops: encode, attend, single decoder steps, and batched
//! greedy decoding. All of them run the graph builders from `graph` with
//! dropout off and read values from the tape, so inference and training share
//! one definition of the network.

use ndarray::{Array1, Array2};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subword::{BOS_ID, EOS_ID, PAD_ID};

use super::graph::{
    build_attention, build_decoder_step, build_encoder, dec_init, register, wrap_source, DecVars,
    DropoutGen, EncoderGraph, NetVars,
};
use super::ModelParameters;

/// Concrete decoder state between steps: per-layer (h, c), plus the context
/// vector and attention weights produced by the step that created it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<F: Scalar> {
    pub h: Vec<Array1<F>>,
    pub c: Vec<Array1<F>>,
    pub context: Array1<F>,
    pub attention: Array1<F>,
}

impl<F: Scalar> DecoderState<F> {
    /// Zero state, attention sized for `n_positions` source annotations.
    pub fn initial(params: &ModelParameters<F>, n_positions: usize) -> Self {
        let h = params.hyper.hidden_dim;
        DecoderState {
            h: (0..params.hyper.n_layers).map(|_| Array1::zeros(h)).collect(),
            c: (0..params.hyper.n_layers).map(|_| Array1::zeros(h)).collect(),
            context: Array1::zeros(params.hyper.annotation_dim()),
            attention: Array1::zeros(n_positions),
        }
    }
}

fn annotation_graph<F: Scalar>(
    tape: &mut Tape<F>,
    nv: &NetVars,
    params: &ModelParameters<F>,
    annotations: &Array2<F>,
) -> Result<EncoderGraph<F>> {
    if annotations.nrows() == 0 {
        return Err(Error::Model("no encoder annotations".into()));
    }
    if annotations.ncols() != params.hyper.annotation_dim() {
        return Err(Error::Model(format!(
            "annotation width {} does not match model ({})",
            annotations.ncols(),
            params.hyper.annotation_dim()
        )));
    }
    let ann_vars: Vec<_> = (0..annotations.nrows())
        .map(|t| {
            let row = annotations.row(t).to_owned().insert_axis(ndarray::Axis(0));
            tape.leaf(row)
        })
        .collect();
    let uh = nv.attn_u.map(|u| {
        ann_vars
            .iter()
            .map(|&a| tape.matmul(a, u))
            .collect::<Vec<_>>()
    });
    Ok(EncoderGraph {
        mask: Array2::ones((1, annotations.nrows())),
        annotations: ann_vars,
        uh,
    })
}

/// Encoder annotations for one id sequence, one row per input position
/// (callers usually pass `<s> ... </s>`-wrapped ids).
pub fn encode<F: Scalar>(params: &ModelParameters<F>, ids: &[usize]) -> Result<Array2<F>> {
    if ids.is_empty() {
        return Err(Error::Model("cannot encode an empty sequence".into()));
    }
    params.check_ids(ids)?;
    let mut tape = Tape::new();
    let nv = register(&mut tape, params);
    let mut dropout = DropoutGen::disabled();
    let enc = build_encoder(&mut tape, &nv, &params.hyper, &[ids.to_vec()], &mut dropout);
    let mut out = Array2::zeros((ids.len(), params.hyper.annotation_dim()));
    for (t, var) in enc.annotations.iter().enumerate() {
        out.row_mut(t).assign(&tape.value(*var).row(0));
    }
    Ok(out)
}

/// Attention for one previous top-layer decoder state: returns the context
/// vector and the softmax weights (one per annotation row, summing to 1).
pub fn attend<F: Scalar>(
    params: &ModelParameters<F>,
    s_prev_top: &Array1<F>,
    annotations: &Array2<F>,
) -> Result<(Array1<F>, Array1<F>)> {
    if s_prev_top.len() != params.hyper.hidden_dim {
        return Err(Error::Model(format!(
            "decoder state width {} does not match hidden dim {}",
            s_prev_top.len(),
            params.hyper.hidden_dim
        )));
    }
    let mut tape = Tape::new();
    let nv = register(&mut tape, params);
    let enc = annotation_graph(&mut tape, &nv, params, annotations)?;
    let s = tape.leaf(s_prev_top.clone().insert_axis(ndarray::Axis(0)));
    let (ctx, weights) = build_attention(&mut tape, &nv, params.hyper.attention, s, &enc);
    Ok((
        tape.value(ctx).row(0).to_owned(),
        tape.value(weights).row(0).to_owned(),
    ))
}

/// One decoder step conditioned on the previously emitted token. Returns the
/// successor state and the full next-token probability distribution.
pub fn decode_step<F: Scalar>(
    params: &ModelParameters<F>,
    state: &DecoderState<F>,
    annotations: &Array2<F>,
    y_prev: usize,
) -> Result<(DecoderState<F>, Array1<F>)> {
    params.check_ids(&[y_prev])?;
    if state.h.len() != params.hyper.n_layers {
        return Err(Error::Model(format!(
            "state has {} layers, model has {}",
            state.h.len(),
            params.hyper.n_layers
        )));
    }
    let mut tape = Tape::new();
    let nv = register(&mut tape, params);
    let enc = annotation_graph(&mut tape, &nv, params, annotations)?;
    let dec_vars = DecVars {
        h: state
            .h
            .iter()
            .map(|a| tape.leaf(a.clone().insert_axis(ndarray::Axis(0))))
            .collect(),
        c: state
            .c
            .iter()
            .map(|a| tape.leaf(a.clone().insert_axis(ndarray::Axis(0))))
            .collect(),
    };
    let mut dropout = DropoutGen::disabled();
    let out = build_decoder_step(
        &mut tape,
        &nv,
        &params.hyper,
        &enc,
        &dec_vars,
        &[y_prev],
        &mut dropout,
    );
    let probs_var = {
        let ones = Array2::ones((1, params.vocab_size));
        tape.softmax_rows(out.logits, ones)
    };
    let next = DecoderState {
        h: out.state.h.iter().map(|&v| tape.value(v).row(0).to_owned()).collect(),
        c: out.state.c.iter().map(|&v| tape.value(v).row(0).to_owned()).collect(),
        context: tape.value(out.context).row(0).to_owned(),
        attention: tape.value(out.attention).row(0).to_owned(),
    };
    Ok((next, tape.value(probs_var).row(0).to_owned()))
}

/// Summed teacher-forced negative log-likelihood of one sentence pair
/// (content ids; boundaries added internally). Composes [`decode_step`], so
/// it cross-checks the batched training loss.
pub fn teacher_forced_nll<F: Scalar>(
    params: &ModelParameters<F>,
    source: &[usize],
    target: &[usize],
) -> Result<F> {
    let annotations = encode(params, &wrap_source(source))?;
    let mut state = DecoderState::initial(params, annotations.nrows());
    let mut y_prev = BOS_ID;
    let mut nll = F::zero();
    for t in 0..=target.len() {
        let (next, probs) = decode_step(params, &state, &annotations, y_prev)?;
        let y = if t < target.len() { target[t] } else { EOS_ID };
        nll = nll - probs[y].ln();
        state = next;
        y_prev = y;
    }
    Ok(nll)
}

/// Greedy argmax over a log-probability row, never emitting `<pad>` or `<s>`;
/// score ties resolve to the smaller token id.
pub(crate) fn argmax_allowed<F: Scalar>(row: &[F]) -> usize {
    let mut best = EOS_ID;
    let mut best_score = F::neg_infinity();
    for (j, &score) in row.iter().enumerate() {
        if j == PAD_ID || j == BOS_ID {
            continue;
        }
        if score > best_score {
            best_score = score;
            best = j;
        }
    }
    best
}

/// Shared per-sentence-batch decoding session: one tape carries the encoder
/// pass and every subsequent decoder step.
pub(crate) struct DecodeSession<F: Scalar> {
    tape: Tape<F>,
    nv: NetVars,
    enc: EncoderGraph<F>,
    hyper: super::Hyperparams,
    dropout: DropoutGen,
}

impl<F: Scalar> DecodeSession<F> {
    pub fn new(params: &ModelParameters<F>, wrapped_sources: &[Vec<usize>]) -> Result<Self> {
        for s in wrapped_sources {
            params.check_ids(s)?;
            if s.is_empty() {
                return Err(Error::Model("cannot decode from an empty source".into()));
            }
        }
        let mut tape = Tape::new();
        let nv = register(&mut tape, params);
        let mut dropout = DropoutGen::disabled();
        let enc = build_encoder(&mut tape, &nv, &params.hyper, wrapped_sources, &mut dropout);
        Ok(DecodeSession {
            tape,
            nv,
            enc,
            hyper: params.hyper,
            dropout,
        })
    }

    pub fn initial_state(&mut self) -> DecVars {
        dec_init(&mut self.tape, &self.hyper, self.enc.mask.nrows())
    }

    /// Advances every row one step. Returns the successor state and the
    /// log-probability rows.
    pub fn step(&mut self, state: &DecVars, y_prev: &[usize]) -> (DecVars, Array2<F>) {
        let out = build_decoder_step(
            &mut self.tape,
            &self.nv,
            &self.hyper,
            &self.enc,
            state,
            y_prev,
            &mut self.dropout,
        );
        let logits = self.tape.value(out.logits);
        let mut logp = logits.clone();
        for mut row in logp.rows_mut() {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for &x in row.iter() {
                denom += (x - max).exp();
            }
            let lse = max + denom.ln();
            row.mapv_inplace(|x| x - lse);
        }
        (out.state, logp)
    }
}

/// Greedy-decodes many sentences in padded batches. Sources are content ids;
/// outputs are content ids (no boundaries). Generation stops at `</s>` or
/// after `max_len` tokens.
pub fn greedy_decode_batch<F: Scalar>(
    params: &ModelParameters<F>,
    sources: &[Vec<usize>],
    max_len: usize,
    batch_size: usize,
) -> Result<Vec<Vec<usize>>> {
    let chunk = batch_size.max(1);
    let mut out = Vec::with_capacity(sources.len());
    for block in sources.chunks(chunk) {
        let wrapped: Vec<Vec<usize>> = block.iter().map(|s| wrap_source(s)).collect();
        let mut session = DecodeSession::new(params, &wrapped)?;
        let mut state = session.initial_state();
        let n = block.len();
        let mut y_prev = vec![BOS_ID; n];
        let mut done = vec![false; n];
        let mut hyp: Vec<Vec<usize>> = vec![Vec::new(); n];
        for _ in 0..max_len {
            let (next, logp) = session.step(&state, &y_prev);
            state = next;
            for b in 0..n {
                if done[b] {
                    y_prev[b] = PAD_ID;
                    continue;
                }
                let tok = argmax_allowed(logp.row(b).as_slice().unwrap());
                if tok == EOS_ID {
                    done[b] = true;
                    y_prev[b] = PAD_ID;
                } else {
                    hyp[b].push(tok);
                    y_prev[b] = tok;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        out.extend(hyp);
    }
    Ok(out)
}

//! The translation model: a stacked LSTM encoder-decoder with attention.
//!
//! Per decoding step `i` the model computes
//! `p(y_i | y_<i, X) = g(y_{i-1}, s_i, c_i)` where the decoder state follows
//! `s_i = f(s_{i-1}, y_{i-1}, c_i)` (LSTM with the fresh context as part of
//! its input), the context `c_i` is the attention-weighted sum of encoder
//! annotations, and the weights come from a softmax over alignment scores.
//! Two scorers are supported: additive, `v . tanh(W s_{i-1} + U h_j)`, and
//! the bilinear "general" form `s_{i-1} W h_j`. The encoder runs
//! unidirectionally or as two independent stacks (one per direction) whose
//! final-layer outputs are concatenated per position.
//!
//! Training gradients come from a reverse-mode tape over the same forward
//! definition ([`loss_and_gradients`]); they are exact up to rounding.

mod forward;
mod graph;

pub use forward::{attend, decode_step, encode, greedy_decode_batch, teacher_forced_nll, DecoderState};
pub use graph::{loss_and_gradients, EncodedBatch};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subword::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// `v . tanh(W s + U h)`
    Additive,
    /// `s W h`
    General,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::Additive => "additive",
            AttentionKind::General => "general",
        }
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(AttentionKind::Additive),
            "general" => Ok(AttentionKind::General),
            other => Err(Error::Config(format!("unknown attention {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderDirection {
    Uni,
    Bi,
}

impl EncoderDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderDirection::Uni => "uni",
            EncoderDirection::Bi => "bi",
        }
    }
}

impl std::fmt::Display for EncoderDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EncoderDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uni" => Ok(EncoderDirection::Uni),
            "bi" => Ok(EncoderDirection::Bi),
            other => Err(Error::Config(format!("unknown encoder direction {other:?}"))),
        }
    }
}

/// Architecture knobs. Regularization (dropout) is a training-time argument,
/// not part of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hyperparams {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Layer count for the decoder and for each encoder direction.
    pub n_layers: usize,
    pub attention: AttentionKind,
    pub direction: EncoderDirection,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embed_dim: 32,
            hidden_dim: 64,
            n_layers: 2,
            attention: AttentionKind::Additive,
            direction: EncoderDirection::Uni,
        }
    }
}

impl Hyperparams {
    /// Width of one encoder annotation.
    pub fn annotation_dim(&self) -> usize {
        match self.direction {
            EncoderDirection::Uni => self.hidden_dim,
            EncoderDirection::Bi => 2 * self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.n_layers == 0 {
            return Err(Error::Model(
                "embed_dim, hidden_dim and n_layers must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One LSTM layer. Gate order along the 4H axis is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F: Scalar> {
    /// (input_dim, 4H)
    pub wx: Array2<F>,
    /// (H, 4H)
    pub wh: Array2<F>,
    /// (1, 4H)
    pub b: Array2<F>,
}

/// All weights of one model. The same struct doubles as a gradient container
/// (same shapes, same iteration order).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<F: Scalar> {
    pub hyper: Hyperparams,
    pub vocab_size: usize,
    /// (V, E)
    pub src_embed: Array2<F>,
    /// (V, E)
    pub tgt_embed: Array2<F>,
    pub enc_fwd: Vec<LstmLayer<F>>,
    /// Empty for [`EncoderDirection::Uni`].
    pub enc_bwd: Vec<LstmLayer<F>>,
    pub dec: Vec<LstmLayer<F>>,
    /// Additive: (H, H). General: (H, A).
    pub attn_w: Array2<F>,
    /// (A, H), additive attention only.
    pub attn_u: Option<Array2<F>>,
    /// (H, 1), additive attention only.
    pub attn_v: Option<Array2<F>>,
    /// (H + A + E, H)
    pub readout_w: Array2<F>,
    /// (1, H)
    pub readout_b: Array2<F>,
    /// (H, V)
    pub out_w: Array2<F>,
    /// (1, V)
    pub out_b: Array2<F>,
}

fn uniform_mat<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    Array2::from_shape_fn((rows, cols), |_| F::of_f64(rng.gen_range(-0.1..0.1)))
}

fn init_layers<F: Scalar>(
    rng: &mut ChaCha8Rng,
    n_layers: usize,
    first_in: usize,
    hidden: usize,
) -> Vec<LstmLayer<F>> {
    (0..n_layers)
        .map(|l| {
            let in_dim = if l == 0 { first_in } else { hidden };
            LstmLayer {
                wx: uniform_mat(rng, in_dim, 4 * hidden),
                wh: uniform_mat(rng, hidden, 4 * hidden),
                b: uniform_mat(rng, 1, 4 * hidden),
            }
        })
        .collect()
}

impl<F: Scalar> ModelParameters<F> {
    /// Fresh parameters, every entry drawn uniformly from (-0.1, 0.1) with a
    /// ChaCha8 stream seeded by `seed`.
    pub fn init(hyper: Hyperparams, vocab_size: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if vocab_size == 0 {
            return Err(Error::Model("vocab_size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, h, a) = (hyper.embed_dim, hyper.hidden_dim, hyper.annotation_dim());
        let src_embed = uniform_mat(&mut rng, vocab_size, e);
        let tgt_embed = uniform_mat(&mut rng, vocab_size, e);
        let enc_fwd = init_layers(&mut rng, hyper.n_layers, e, h);
        let enc_bwd = match hyper.direction {
            EncoderDirection::Uni => Vec::new(),
            EncoderDirection::Bi => init_layers(&mut rng, hyper.n_layers, e, h),
        };
        let dec = init_layers(&mut rng, hyper.n_layers, e + a, h);
        let (attn_w, attn_u, attn_v) = match hyper.attention {
            AttentionKind::Additive => (
                uniform_mat(&mut rng, h, h),
                Some(uniform_mat(&mut rng, a, h)),
                Some(uniform_mat(&mut rng, h, 1)),
            ),
            AttentionKind::General => (uniform_mat(&mut rng, h, a), None, None),
        };
        let readout_w = uniform_mat(&mut rng, h + a + e, h);
        let readout_b = uniform_mat(&mut rng, 1, h);
        let out_w = uniform_mat(&mut rng, h, vocab_size);
        let out_b = uniform_mat(&mut rng, 1, vocab_size);
        Ok(ModelParameters {
            hyper,
            vocab_size,
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
        })
    }

    /// Same shapes as `self`, all zeros. Gradient containers start here.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
    }

    /// Named tensors in canonical order. This order fixes parameter
    /// initialization, checkpoint manifests and optimizer slot alignment.
    pub fn tensors(&self) -> Vec<(String, &Array2<F>)> {
        let mut out: Vec<(String, &Array2<F>)> = vec![
            ("src_embed".into(), &self.src_embed),
            ("tgt_embed".into(), &self.tgt_embed),
        ];
        for (prefix, layers) in [("enc_fwd", &self.enc_fwd), ("enc_bwd", &self.enc_bwd), ("dec", &self.dec)] {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}_l{i}_wx"), &l.wx));
                out.push((format!("{prefix}_l{i}_wh"), &l.wh));
                out.push((format!("{prefix}_l{i}_b"), &l.b));
            }
        }
        out.push(("attn_w".into(), &self.attn_w));
        if let Some(u) = &self.attn_u {
            out.push(("attn_u".into(), u));
        }
        if let Some(v) = &self.attn_v {
            out.push(("attn_v".into(), v));
        }
        out.push(("readout_w".into(), &self.readout_w));
        out.push(("readout_b".into(), &self.readout_b));
        out.push(("out_w".into(), &self.out_w));
        out.push(("out_b".into(), &self.out_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<F>)> {
        let mut out: Vec<(String, &mut Array2<F>)> = vec![
            ("src_embed".into(), &mut self.src_embed),
            ("tgt_embed".into(), &mut self.tgt_embed),
        ];
        for (prefix, layers) in [
            ("enc_fwd", &mut self.enc_fwd),
            ("enc_bwd", &mut self.enc_bwd),
            ("dec", &mut self.dec),
        ] {
            for (i, l) in layers.iter_mut().enumerate() {
                out.push((format!("{prefix}_l{i}_wx"), &mut l.wx));
                out.push((format!("{prefix}_l{i}_wh"), &mut l.wh));
                out.push((format!("{prefix}_l{i}_b"), &mut l.b));
            }
        }
        out.push(("attn_w".into(), &mut self.attn_w));
        if let Some(u) = &mut self.attn_u {
            out.push(("attn_u".into(), u));
        }
        if let Some(v) = &mut self.attn_v {
            out.push(("attn_v".into(), v));
        }
        out.push(("readout_w".into(), &mut self.readout_w));
        out.push(("readout_b".into(), &mut self.readout_b));
        out.push(("out_w".into(), &mut self.out_w));
        out.push(("out_b".into(), &mut self.out_b));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.vocab_size {
            return Err(Error::Model(format!(
                "token id {id} out of range for vocab of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub(crate) fn check_ids(&self, ids: &[usize]) -> Result<()> {
        ids.iter().try_for_each(|&id| self.check_id(id))
    }
}

/// Carries trained weights over to a rebuilt vocabulary.
///
/// Rows of both embedding tables and columns of the output projection move to
/// each token's new id when the token survives; ids new to `new_vocab` get
/// fresh uniform(-0.1, 0.1) entries drawn from `seed`. Everything else is
/// copied unchanged.
pub fn remap_vocab<F: Scalar>(
    params: &ModelParameters<F>,
    old_vocab: &Vocabulary,
    new_vocab: &Vocabulary,
    seed: u64,
) -> Result<ModelParameters<F>> {
    if old_vocab.size() != params.vocab_size {
        return Err(Error::Model(format!(
            "old vocabulary size {} does not match model vocab {}",
            old_vocab.size(),
            params.vocab_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_new = new_vocab.size();
    let e = params.hyper.embed_dim;
    let h = params.hyper.hidden_dim;

    let mut out = params.clone();
    out.vocab_size = v_new;
    out.src_embed = Array2::zeros((v_new, e));
    out.tgt_embed = Array2::zeros((v_new, e));
    out.out_w = Array2::zeros((h, v_new));
    out.out_b = Array2::zeros((1, v_new));

    for new_id in 0..v_new {
        let token = new_vocab.token(new_id)?;
        let old_id = if old_vocab.contains(token) {
            Some(old_vocab.id(token))
        } else {
            None
        };
        match old_id {
            Some(oid) => {
                out.src_embed.row_mut(new_id).assign(&params.src_embed.row(oid));
                out.tgt_embed.row_mut(new_id).assign(&params.tgt_embed.row(oid));
                out.out_w.column_mut(new_id).assign(&params.out_w.column(oid));
                out.out_b[(0, new_id)] = params.out_b[(0, oid)];
            }
            None => {
                for j in 0..e {
                    out.src_embed[(new_id, j)] = F::of_f64(rng.gen_range(-0.1..0.1));
                }
                for j in 0..e {
                    out.tgt_embed[(new_id, j)] = F::of_f64(rng.gen_range(-0.1..0.1));
                }
                for j in 0..h {
                    out.out_w[(j, new_id)] = F::of_f64(rng.gen_range(-0.1..0.1));
                }
                out.out_b[(0, new_id)] = F::of_f64(rng.gen_range(-0.1..0.1));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::build_vocab;

    fn tiny_hyper(attention: AttentionKind, direction: EncoderDirection) -> Hyperparams {
        Hyperparams {
            embed_dim: 4,
            hidden_dim: 5,
            n_layers: 2,
            attention,
            direction,
        }
    }

    fn tiny_batch() -> EncodedBatch {
        EncodedBatch {
            sources: vec![vec![4, 5, 6], vec![7, 8, 9, 10, 4]],
            targets: vec![vec![5, 6, 7, 8], vec![9, 4]],
        }
    }

    /// |a - b| within `tol` relative, floored at unit scale.
    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs() + b.abs())
    }

    #[test]
    fn gradients_match_central_differences_for_every_variant() {
        let batch = tiny_batch();
        for attention in [AttentionKind::Additive, AttentionKind::General] {
            for direction in [EncoderDirection::Uni, EncoderDirection::Bi] {
                for dropout_p in [0.0, 0.3] {
                    let hyper = tiny_hyper(attention, direction);
                    let params: ModelParameters<f64> =
                        ModelParameters::init(hyper, 12, 42).unwrap();
                    let (_, grads) =
                        loss_and_gradients(&params, &batch, dropout_p, 17).unwrap();
                    let eps = 1e-4;
                    let n_tensors = params.tensors().len();
                    for ti in 0..n_tensors {
                        let dim = params.tensors()[ti].1.dim();
                        for r in 0..dim.0 {
                            for c in 0..dim.1 {
                                let mut plus = params.clone();
                                *plus.tensors_mut()[ti].1.get_mut((r, c)).unwrap() += eps;
                                let mut minus = params.clone();
                                *minus.tensors_mut()[ti].1.get_mut((r, c)).unwrap() -= eps;
                                let lp =
                                    loss_and_gradients(&plus, &batch, dropout_p, 17).unwrap().0;
                                let lm =
                                    loss_and_gradients(&minus, &batch, dropout_p, 17).unwrap().0;
                                let numeric = (lp - lm) / (2.0 * eps);
                                let analytic = grads.tensors()[ti].1[(r, c)];
                                assert!(
                                    close(numeric, analytic, 1e-4),
                                    "{:?}/{:?} dropout {dropout_p} tensor {} ({r},{c}): \
                                     numeric {numeric} vs analytic {analytic}",
                                    attention,
                                    direction,
                                    params.tensors()[ti].0,
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn loss_and_gradients_are_deterministic() {
        let params: ModelParameters<f64> =
            ModelParameters::init(Hyperparams::default(), 15, 3).unwrap();
        let batch = tiny_batch();
        let (l1, g1) = loss_and_gradients(&params, &batch, 0.3, 99).unwrap();
        let (l2, g2) = loss_and_gradients(&params, &batch, 0.3, 99).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        let (l3, _) = loss_and_gradients(&params, &batch, 0.3, 100).unwrap();
        assert_ne!(l1, l3);
    }

    #[test]
    fn batch_loss_is_mean_of_singleton_losses() {
        let params: ModelParameters<f64> =
            ModelParameters::init(tiny_hyper(AttentionKind::Additive, EncoderDirection::Uni), 12, 7)
                .unwrap();
        let batch = tiny_batch();
        let (joint, _) = loss_and_gradients(&params, &batch, 0.0, 0).unwrap();
        let mut singles = 0.0;
        for i in 0..2 {
            let one = EncodedBatch {
                sources: vec![batch.sources[i].clone()],
                targets: vec![batch.targets[i].clone()],
            };
            singles += loss_and_gradients(&params, &one, 0.0, 0).unwrap().0;
        }
        assert!(
            close(joint * 2.0, singles, 1e-12),
            "padding leaked: {joint} * 2 != {singles}"
        );
    }

    #[test]
    fn duplicating_the_batch_keeps_the_loss() {
        let params: ModelParameters<f64> =
            ModelParameters::init(tiny_hyper(AttentionKind::General, EncoderDirection::Uni), 12, 8)
                .unwrap();
        let one = EncodedBatch {
            sources: vec![vec![4, 5, 6, 7]],
            targets: vec![vec![8, 9, 10]],
        };
        let two = EncodedBatch {
            sources: vec![one.sources[0].clone(), one.sources[0].clone()],
            targets: vec![one.targets[0].clone(), one.targets[0].clone()],
        };
        let (l1, _) = loss_and_gradients(&params, &one, 0.0, 0).unwrap();
        let (l2, _) = loss_and_gradients(&params, &two, 0.0, 0).unwrap();
        assert!(close(l1, l2, 1e-13), "{l1} vs {l2}");
    }

    #[test]
    fn teacher_forced_nll_matches_batched_loss() {
        for direction in [EncoderDirection::Uni, EncoderDirection::Bi] {
            let params: ModelParameters<f64> =
                ModelParameters::init(tiny_hyper(AttentionKind::Additive, direction), 12, 11)
                    .unwrap();
            let src = vec![4usize, 5, 6, 7];
            let tgt = vec![8usize, 9, 10];
            let batch = EncodedBatch {
                sources: vec![src.clone()],
                targets: vec![tgt.clone()],
            };
            let (loss, _) = loss_and_gradients(&params, &batch, 0.0, 0).unwrap();
            let nll = teacher_forced_nll(&params, &src, &tgt).unwrap();
            assert!(close(loss, nll, 1e-10), "{loss} vs {nll}");
        }
    }

    #[test]
    fn decode_step_emits_a_probability_simplex() {
        let params: ModelParameters<f64> =
            ModelParameters::init(Hyperparams::default(), 20, 5).unwrap();
        let annotations = encode(&params, &[1, 4, 5, 6, 2]).unwrap();
        assert_eq!(annotations.nrows(), 5);
        let state = DecoderState::initial(&params, annotations.nrows());
        let (next, probs) = decode_step(&params, &state, &annotations, 1).unwrap();
        assert_eq!(probs.len(), 20);
        assert!((probs.sum() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|&p| p >= 0.0));
        assert!((next.attention.sum() - 1.0).abs() < 1e-12);
        assert!(next.attention.iter().all(|&a| a >= 0.0));
        assert_eq!(next.h.len(), params.hyper.n_layers);
        assert_eq!(next.context.len(), params.hyper.annotation_dim());
    }

    #[test]
    fn attend_weights_form_a_simplex() {
        for attention in [AttentionKind::Additive, AttentionKind::General] {
            let params: ModelParameters<f64> =
                ModelParameters::init(tiny_hyper(attention, EncoderDirection::Bi), 12, 13).unwrap();
            let annotations = encode(&params, &[1, 4, 5, 2]).unwrap();
            assert_eq!(annotations.ncols(), 2 * params.hyper.hidden_dim);
            let s = ndarray::Array1::from_elem(params.hyper.hidden_dim, 0.1);
            let (ctx, w) = attend(&params, &s, &annotations).unwrap();
            assert_eq!(ctx.len(), annotations.ncols());
            assert_eq!(w.len(), 4);
            assert!((w.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let h = Hyperparams::default();
        let a: ModelParameters<f64> = ModelParameters::init(h, 30, 1).unwrap();
        let b: ModelParameters<f64> = ModelParameters::init(h, 30, 1).unwrap();
        let c: ModelParameters<f64> = ModelParameters::init(h, 30, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (_, t) in a.tensors() {
            assert!(t.iter().all(|&x| (-0.1..0.1).contains(&x)));
        }
    }

    #[test]
    fn f32_instantiation_works() {
        let params: ModelParameters<f32> =
            ModelParameters::init(tiny_hyper(AttentionKind::Additive, EncoderDirection::Uni), 12, 4)
                .unwrap();
        let (loss, grads) = loss_and_gradients(&params, &tiny_batch(), 0.0, 0).unwrap();
        assert!(loss.is_finite());
        assert_eq!(grads.n_parameters(), params.n_parameters());
    }

    #[test]
    fn greedy_batch_respects_limits_and_bans_structural_tokens() {
        let params: ModelParameters<f64> =
            ModelParameters::init(Hyperparams::default(), 20, 21).unwrap();
        let sources = vec![vec![4, 5], vec![6, 7, 8, 9], vec![10]];
        let out = greedy_decode_batch(&params, &sources, 7, 2).unwrap();
        assert_eq!(out.len(), 3);
        for hyp in &out {
            assert!(hyp.len() <= 7);
            for &t in hyp {
                assert!(t != crate::subword::PAD_ID && t != crate::subword::BOS_ID);
                assert!(t != crate::subword::EOS_ID);
                assert!(t < 20);
            }
        }
    }

    #[test]
    fn remap_vocab_moves_shared_tokens_and_freshens_new_ones() {
        let toks = |s: &str| -> Vec<String> { s.split(' ').map(str::to_string).collect() };
        let old_stream = vec![toks("aa bb cc"), toks("aa bb"), toks("aa")];
        let new_stream = vec![toks("bb dd"), toks("bb dd aa")];
        let old_vocab = build_vocab(old_stream.iter(), 100, &[]).unwrap();
        let new_vocab = build_vocab(new_stream.iter(), 100, &[]).unwrap();
        let params: ModelParameters<f64> =
            ModelParameters::init(Hyperparams::default(), old_vocab.size(), 6).unwrap();
        let remapped = remap_vocab(&params, &old_vocab, &new_vocab, 77).unwrap();
        assert_eq!(remapped.vocab_size, new_vocab.size());
        for tok in ["aa", "bb", "<pad>", "<s>", "</s>", "<unk>"] {
            let (o, n) = (old_vocab.id(tok), new_vocab.id(tok));
            assert_eq!(remapped.src_embed.row(n), params.src_embed.row(o), "{tok}");
            assert_eq!(remapped.tgt_embed.row(n), params.tgt_embed.row(o), "{tok}");
            assert_eq!(remapped.out_w.column(n), params.out_w.column(o), "{tok}");
            assert_eq!(remapped.out_b[(0, n)], params.out_b[(0, o)], "{tok}");
        }
        let dd = new_vocab.id("dd");
        assert!(remapped
            .src_embed
            .row(dd)
            .iter()
            .all(|&x| (-0.1..0.1).contains(&x)));
        // Encoder/decoder stacks and attention are untouched.
        assert_eq!(remapped.dec, params.dec);
        assert_eq!(remapped.attn_w, params.attn_w);
        // Deterministic in the remap seed.
        let again = remap_vocab(&params, &old_vocab, &new_vocab, 77).unwrap();
        assert_eq!(again, remapped);
    }
}

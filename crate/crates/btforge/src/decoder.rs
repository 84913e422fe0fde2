//! Greedy and beam-search inference, and bulk back-translation of
//! monolingual corpora.
//!
//! Hypotheses are scored by length-normalized log-probability,
//! `(Σ log p) / n^α` with `n` the number of emitted tokens (the end-of-
//! sentence token counts when it was predicted). The beam always also
//! considers the greedy rollout, so its chosen hypothesis never scores below
//! the greedy one. All ties break toward the lexicographically smaller token
//! id sequence, making decoding deterministic.

use crate::corpus::{MonolingualCorpus, ParallelCorpus, Provenance, Sentence, SentencePair};
use crate::error::{Error, Result};
use crate::model::{decode_step, encode, DecoderState, ModelParameters};
use crate::scalar::Scalar;
use crate::subword::{restore_hypothesis, BpeModel, Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK};

/// Beam-search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_norm_alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_len: 50,
            length_norm_alpha: 0.6,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.length_norm_alpha) {
            return Err(Error::Config(format!(
                "length_norm_alpha must lie in [0, 1], got {}",
                self.length_norm_alpha
            )));
        }
        Ok(())
    }
}

fn normalized(log_p: f64, n_terms: usize, alpha: f64) -> f64 {
    debug_assert!(n_terms > 0);
    log_p / (n_terms as f64).powf(alpha)
}

/// A finished hypothesis: its normalized score and emitted content ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypothesis {
    pub score: f64,
    pub ids: Vec<usize>,
}

struct LiveHypothesis<F: Scalar> {
    ids: Vec<usize>,
    pending: usize,
    log_p: f64,
    n_terms: usize,
    state: DecoderState<F>,
}

/// Greedy rollout: always extend with the most probable allowed token.
/// Returns accumulated raw log-probability alongside the ids.
fn greedy_rollout<F: Scalar>(
    params: &ModelParameters<F>,
    annotations: &ndarray::Array2<F>,
    max_len: usize,
) -> Result<(Vec<usize>, f64, usize)> {
    let mut state = DecoderState::initial(params, annotations.nrows());
    let mut pending = BOS_ID;
    let mut ids = Vec::new();
    let mut log_p = 0.0;
    let mut n_terms = 0;
    loop {
        let (next, probs) = decode_step(params, &state, annotations, pending)?;
        let mut best = EOS_ID;
        for tok in 0..probs.len() {
            if tok == PAD_ID || tok == BOS_ID {
                continue;
            }
            if probs[tok] > probs[best] {
                best = tok;
            }
        }
        log_p += probs[best].to_f64_lossy().ln();
        n_terms += 1;
        if best == EOS_ID {
            break;
        }
        ids.push(best);
        if ids.len() == max_len {
            break;
        }
        pending = best;
        state = next;
    }
    Ok((ids, log_p, n_terms))
}

/// Beam search over content token ids. `source` carries no boundary markers;
/// they are added internally. Returns the best hypothesis.
pub fn beam_decode<F: Scalar>(
    params: &ModelParameters<F>,
    source: &[usize],
    config: &BeamConfig,
) -> Result<ScoredHypothesis> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Model("cannot translate an empty source sentence".into()));
    }
    if let Some(&bad) = source.iter().find(|&&id| id >= params.vocab_size) {
        return Err(Error::Model(format!(
            "source token id {bad} is outside the model's vocabulary of {}",
            params.vocab_size
        )));
    }
    let mut wrapped = Vec::with_capacity(source.len() + 2);
    wrapped.push(BOS_ID);
    wrapped.extend_from_slice(source);
    wrapped.push(EOS_ID);
    let annotations = encode(params, &wrapped)?;
    let alpha = config.length_norm_alpha;

    let mut completed: Vec<ScoredHypothesis> = Vec::new();
    let (g_ids, g_log_p, g_terms) = greedy_rollout(params, &annotations, config.max_len)?;
    completed.push(ScoredHypothesis {
        score: normalized(g_log_p, g_terms, alpha),
        ids: g_ids,
    });

    let mut active = vec![LiveHypothesis {
        ids: Vec::new(),
        pending: BOS_ID,
        log_p: 0.0,
        n_terms: 0,
        state: DecoderState::initial(params, annotations.nrows()),
    }];

    while !active.is_empty() {
        let mut next_states = Vec::with_capacity(active.len());
        // (parent index, token, accumulated raw log-probability)
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (pi, hyp) in active.iter().enumerate() {
            let (next, probs) = decode_step(params, &hyp.state, &annotations, hyp.pending)?;
            next_states.push(next);
            for tok in 0..probs.len() {
                if tok == PAD_ID || tok == BOS_ID {
                    continue;
                }
                let lp = probs[tok].to_f64_lossy().ln();
                if lp.is_finite() {
                    candidates.push((pi, tok, hyp.log_p + lp));
                }
            }
        }
        // All live hypotheses have equal length, so raw log-probability is the
        // right ranking here; normalization only matters across lengths.
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .expect("finite scores")
                .then_with(|| (&active[a.0].ids, a.1).cmp(&(&active[b.0].ids, b.1)))
        });
        candidates.truncate(config.beam_size);

        let mut kept = Vec::with_capacity(config.beam_size);
        for (pi, tok, log_p) in candidates {
            let parent = &active[pi];
            let n_terms = parent.n_terms + 1;
            if tok == EOS_ID {
                completed.push(ScoredHypothesis {
                    score: normalized(log_p, n_terms, alpha),
                    ids: parent.ids.clone(),
                });
                continue;
            }
            let mut ids = parent.ids.clone();
            ids.push(tok);
            if ids.len() == config.max_len {
                // Out of budget: force-terminate and score as complete.
                completed.push(ScoredHypothesis {
                    score: normalized(log_p, n_terms, alpha),
                    ids,
                });
                continue;
            }
            kept.push(LiveHypothesis {
                ids,
                pending: tok,
                log_p,
                n_terms,
                state: next_states[pi].clone(),
            });
        }
        active = kept;
    }

    Ok(completed
        .into_iter()
        .max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .expect("finite scores")
                .then_with(|| b.ids.cmp(&a.ids))
        })
        .expect("greedy rollout guarantees one completed hypothesis"))
}

/// Translate one sentence of words: segment with `bpe`, encode with `vocab`,
/// beam-search, then reverse the subword segmentation. A hypothesis with no
/// content tokens comes back as a single unknown-word marker so downstream
/// corpus files never contain empty lines.
pub fn translate<F: Scalar>(
    params: &ModelParameters<F>,
    source: &Sentence,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    config: &BeamConfig,
) -> Result<Sentence> {
    if source.is_empty() {
        return Err(Error::Model("cannot translate an empty source sentence".into()));
    }
    if vocab.size() != params.vocab_size {
        return Err(Error::Model(format!(
            "vocabulary size {} does not match the model's {}",
            vocab.size(),
            params.vocab_size
        )));
    }
    let ids = vocab.encode(&bpe.apply_sentence(source));
    let best = beam_decode(params, &ids, config)?;
    let words = restore_hypothesis(&vocab.decode(&best.ids)?);
    Ok(if words.is_empty() {
        vec![UNK.to_string()]
    } else {
        words
    })
}

/// Translate every monolingual target sentence with the backward model and
/// pair each synthetic source with its authentic target, in input order.
pub fn back_translate<F: Scalar>(
    backward: &ModelParameters<F>,
    mono: &MonolingualCorpus,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    config: &BeamConfig,
) -> Result<ParallelCorpus> {
    let mut pairs = Vec::with_capacity(mono.len());
    for (i, target) in mono.sentences.iter().enumerate() {
        let source = translate(backward, target, bpe, vocab, config)
            .map_err(|e| Error::Model(format!("back-translation of sentence {i} failed: {e}")))?;
        pairs.push(SentencePair {
            source,
            target: target.clone(),
            provenance: Provenance::Synthetic,
        });
    }
    Ok(ParallelCorpus::from_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{greedy_decode_batch, AttentionKind, EncoderDirection, Hyperparams};
    use crate::subword::{build_vocab, learn_bpe};
    use std::collections::BTreeSet;

    fn params_with_vocab(vocab_size: usize, seed: u64) -> ModelParameters<f64> {
        let hyper = Hyperparams {
            embed_dim: 4,
            hidden_dim: 5,
            n_layers: 1,
            attention: AttentionKind::Additive,
            direction: EncoderDirection::Bi,
        };
        ModelParameters::init(hyper, vocab_size, seed).unwrap()
    }

    #[test]
    fn beam_of_one_equals_greedy() {
        let params = params_with_vocab(18, 31);
        let config = BeamConfig {
            beam_size: 1,
            max_len: 9,
            length_norm_alpha: 0.6,
        };
        for source in [vec![4usize, 5, 6], vec![9, 8, 7, 6, 5], vec![17]] {
            let beam = beam_decode(&params, &source, &config).unwrap();
            let greedy = greedy_decode_batch(&params, &[source], 9, 4).unwrap();
            assert_eq!(beam.ids, greedy[0]);
        }
    }

    /// Enumerates every possible hypothesis up to `max_len` and returns the
    /// best by raw log-probability, ties to the smaller id sequence.
    fn exhaustive_best(
        params: &ModelParameters<f64>,
        source: &[usize],
        max_len: usize,
    ) -> ScoredHypothesis {
        let mut wrapped = vec![BOS_ID];
        wrapped.extend_from_slice(source);
        wrapped.push(EOS_ID);
        let annotations = encode(params, &wrapped).unwrap();
        let mut out: Vec<ScoredHypothesis> = Vec::new();
        let state = DecoderState::initial(params, annotations.nrows());
        fn recurse(
            params: &ModelParameters<f64>,
            annotations: &ndarray::Array2<f64>,
            state: &DecoderState<f64>,
            pending: usize,
            ids: &mut Vec<usize>,
            log_p: f64,
            max_len: usize,
            out: &mut Vec<ScoredHypothesis>,
        ) {
            let (next, probs) = decode_step(params, state, annotations, pending).unwrap();
            for tok in 0..probs.len() {
                if tok == PAD_ID || tok == BOS_ID {
                    continue;
                }
                let lp = log_p + probs[tok].ln();
                if tok == EOS_ID {
                    out.push(ScoredHypothesis {
                        score: lp,
                        ids: ids.clone(),
                    });
                    continue;
                }
                ids.push(tok);
                if ids.len() == max_len {
                    out.push(ScoredHypothesis {
                        score: lp,
                        ids: ids.clone(),
                    });
                } else {
                    recurse(params, annotations, &next, tok, ids, lp, max_len, out);
                }
                ids.pop();
            }
        }
        recurse(
            params,
            &annotations,
            &state,
            BOS_ID,
            &mut Vec::new(),
            0.0,
            max_len,
            &mut out,
        );
        out.into_iter()
            .max_by(|a, b| {
                a.score
                    .partial_cmp(&b.score)
                    .unwrap()
                    .then_with(|| b.ids.cmp(&a.ids))
            })
            .unwrap()
    }

    #[test]
    fn wide_beam_with_unit_norm_matches_exhaustive_search() {
        // With alpha = 0 the normalized score is the raw log-probability, so a
        // beam wide enough to never prune must find the global optimum.
        let config = BeamConfig {
            beam_size: 64,
            max_len: 4,
            length_norm_alpha: 0.0,
        };
        for seed in [1, 2, 3] {
            let params = params_with_vocab(6, seed);
            for source in [vec![4usize, 5], vec![5, 5, 4], vec![4]] {
                let beam = beam_decode(&params, &source, &config).unwrap();
                let oracle = exhaustive_best(&params, &source, 4);
                assert_eq!(beam.ids, oracle.ids, "seed {seed} source {source:?}");
                assert!((beam.score - oracle.score).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beam_never_scores_below_greedy() {
        for seed in 0..5 {
            let params = params_with_vocab(15, 100 + seed);
            let config = BeamConfig {
                beam_size: 4,
                max_len: 8,
                length_norm_alpha: 0.6,
            };
            let source = vec![4 + (seed as usize % 3), 7, 9, 11];
            let wrapped: Vec<usize> =
                [vec![BOS_ID], source.clone(), vec![EOS_ID]].concat();
            let annotations = encode(&params, &wrapped).unwrap();
            let (_, g_log_p, g_terms) = greedy_rollout(&params, &annotations, 8).unwrap();
            let g_score = normalized(g_log_p, g_terms, 0.6);
            let beam = beam_decode(&params, &source, &config).unwrap();
            assert!(beam.score >= g_score - 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn beam_respects_max_len_and_is_deterministic() {
        let params = params_with_vocab(12, 8);
        let config = BeamConfig {
            beam_size: 3,
            max_len: 2,
            length_norm_alpha: 0.6,
        };
        let a = beam_decode(&params, &[4, 5, 6, 7, 8], &config).unwrap();
        let b = beam_decode(&params, &[4, 5, 6, 7, 8], &config).unwrap();
        assert_eq!(a, b);
        assert!(a.ids.len() <= 2);
    }

    #[test]
    fn beam_rejects_bad_inputs() {
        let params = params_with_vocab(12, 9);
        let config = BeamConfig::default();
        assert!(beam_decode(&params, &[], &config).is_err());
        assert!(beam_decode(&params, &[4, 99], &config).is_err());
        let broken = BeamConfig {
            beam_size: 0,
            ..config
        };
        assert!(beam_decode(&params, &[4], &broken).is_err());
    }

    fn words(s: &str) -> Sentence {
        s.split(' ').map(str::to_string).collect()
    }

    fn toy_bpe_and_vocab() -> (BpeModel, Vocabulary) {
        let corpus: Vec<Sentence> = vec![
            words("anna leste bok"),
            words("bok leste anna"),
            words("anna bok"),
            words("leste leste bok anna"),
        ];
        let bpe = learn_bpe(corpus.iter(), 12, &BTreeSet::new());
        let segmented: Vec<Sentence> = corpus.iter().map(|s| bpe.apply_sentence(s)).collect();
        let vocab = build_vocab(segmented.iter(), 64, &[]).unwrap();
        (bpe, vocab)
    }

    #[test]
    fn translate_emits_clean_words() {
        let (bpe, vocab) = toy_bpe_and_vocab();
        let params = params_with_vocab(vocab.size(), 12);
        let config = BeamConfig {
            beam_size: 2,
            max_len: 6,
            length_norm_alpha: 0.6,
        };
        let out = translate(&params, &words("anna leste"), &bpe, &vocab, &config).unwrap();
        assert!(!out.is_empty());
        for w in &out {
            assert!(!w.is_empty());
            assert!(!w.contains("@@"), "unmerged subword in {out:?}");
            assert!(w != "<pad>" && w != "<s>" && w != "</s>");
        }
        let again = translate(&params, &words("anna leste"), &bpe, &vocab, &config).unwrap();
        assert_eq!(out, again);
        assert!(translate(&params, &Vec::new(), &bpe, &vocab, &config).is_err());
        let wrong_size = params_with_vocab(vocab.size() + 1, 12);
        assert!(translate(&wrong_size, &words("anna"), &bpe, &vocab, &config).is_err());
    }

    #[test]
    fn back_translation_pairs_synthetic_sources_with_untouched_targets() {
        let (bpe, vocab) = toy_bpe_and_vocab();
        let params = params_with_vocab(vocab.size(), 13);
        let config = BeamConfig {
            beam_size: 2,
            max_len: 5,
            length_norm_alpha: 0.6,
        };
        let mono = MonolingualCorpus {
            sentences: vec![words("bok anna"), words("leste"), words("anna anna bok")],
        };
        let synthetic = back_translate(&params, &mono, &bpe, &vocab, &config).unwrap();
        assert_eq!(synthetic.len(), 3);
        for (pair, original) in synthetic.pairs.iter().zip(&mono.sentences) {
            assert_eq!(&pair.target, original);
            assert_eq!(pair.provenance, Provenance::Synthetic);
            assert!(!pair.source.is_empty());
        }
        let empty = back_translate(
            &params,
            &MonolingualCorpus::default(),
            &bpe,
            &vocab,
            &config,
        )
        .unwrap();
        assert!(empty.is_empty());
    }
}

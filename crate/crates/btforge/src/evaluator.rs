//! Corpus-level BLEU scoring and paired bootstrap significance testing.
//!
//! Scores follow the classic tokenized-BLEU conventions: case-sensitive,
//! corpus-level clipped n-gram precisions for orders 1 to 4 combined by
//! geometric mean, and a brevity penalty of `exp(1 - r/c)` whenever the
//! hypothesis corpus is not longer than the reference corpus. A zero
//! precision at any order zeroes the whole score; smoothing exists as an
//! explicit opt-in and is never applied by default.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, Sentence};
use crate::decoder::{translate, BeamConfig};
use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::scalar::Scalar;
use crate::subword::{BpeModel, Vocabulary};

/// Highest n-gram order entering the score.
pub const MAX_ORDER: usize = 4;

/// Corpus-level BLEU with its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// 100-scaled score.
    pub bleu: f64,
    /// Modified precisions for orders 1..=4, as used in the score.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// True when the hypothesis corpus has no n-grams at all for some order;
    /// the score is then 0 regardless of translation quality.
    pub degenerate: bool,
}

/// Outcome of one paired bootstrap comparison at a fixed sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceReport {
    /// Full-corpus BLEU(A) - BLEU(B).
    pub bleu_diff: f64,
    /// Fraction of bootstrap samples where BLEU(A) strictly exceeds BLEU(B).
    pub superiority_frequency: f64,
    pub n_samples: usize,
    pub sample_size: usize,
}

/// Clipped-match and total n-gram counts for one sentence pair.
#[derive(Debug, Clone, Copy, Default)]
struct SentenceStats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

/// Corpus accumulator; BLEU decomposes into sums of per-sentence counts,
/// which is what makes bootstrap resampling cheap.
#[derive(Debug, Clone, Copy, Default)]
struct CorpusStats {
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn sentence_stats(hyp: &Sentence, reference: &Sentence) -> SentenceStats {
    let mut stats = SentenceStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let hyp_grams = ngram_counts(hyp, n);
        let ref_grams = ngram_counts(reference, n);
        stats.totals[n - 1] = hyp_grams.values().sum();
        stats.matches[n - 1] = hyp_grams
            .iter()
            .map(|(gram, &count)| count.min(*ref_grams.get(gram).unwrap_or(&0)))
            .sum();
    }
    stats
}

impl CorpusStats {
    fn add(&mut self, s: &SentenceStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += s.matches[n];
            self.totals[n] += s.totals[n];
        }
        self.hyp_len += s.hyp_len;
        self.ref_len += s.ref_len;
    }

    fn report(&self, smoothing: bool) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            // Add-one smoothing for orders above unigram, when requested.
            let (m, t) = if smoothing && n > 0 {
                (self.matches[n] + 1, self.totals[n] + 1)
            } else {
                (self.matches[n], self.totals[n])
            };
            precisions[n] = if t == 0 { 0.0 } else { m as f64 / t as f64 };
        }
        let degenerate = self.totals.iter().any(|&t| t == 0);
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        // An all-empty hypothesis corpus scores 0 through its precisions; the
        // penalty is left neutral to stay inside (0, 1].
        let brevity_penalty = if c > r || self.hyp_len == 0 {
            1.0
        } else {
            (1.0 - r / c).exp()
        };
        let bleu = if precisions.iter().all(|&p| p > 0.0) {
            let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * mean_log.exp()
        } else {
            0.0
        };
        BleuReport {
            bleu,
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
            degenerate,
        }
    }
}

fn check_aligned(hypotheses: &[Sentence], references: &[Sentence]) -> Result<()> {
    if hypotheses.len() != references.len() {
        return Err(Error::Evaluation(format!(
            "{} hypotheses against {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Evaluation("cannot score an empty corpus".into()));
    }
    Ok(())
}

/// Corpus-level BLEU without smoothing.
pub fn bleu(hypotheses: &[Sentence], references: &[Sentence]) -> Result<BleuReport> {
    bleu_with_options(hypotheses, references, false)
}

/// Corpus-level BLEU; `smoothing` switches on add-one counts for orders 2-4.
pub fn bleu_with_options(
    hypotheses: &[Sentence],
    references: &[Sentence],
    smoothing: bool,
) -> Result<BleuReport> {
    check_aligned(hypotheses, references)?;
    let mut corpus = CorpusStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        corpus.add(&sentence_stats(h, r));
    }
    Ok(corpus.report(smoothing))
}

/// Paired bootstrap resampling under strict superiority.
///
/// Each sample draws `sample_size` sentence indices with replacement from its
/// own RNG substream, so results do not depend on evaluation order. Sample
/// sizes larger than the corpus are fine; sampling is with replacement.
pub fn paired_bootstrap(
    hyp_a: &[Sentence],
    hyp_b: &[Sentence],
    references: &[Sentence],
    n_samples: usize,
    sample_size: usize,
    seed: u64,
) -> Result<SignificanceReport> {
    check_aligned(hyp_a, references)?;
    check_aligned(hyp_b, references)?;
    if n_samples == 0 || sample_size == 0 {
        return Err(Error::Evaluation(
            "n_samples and sample_size must be at least 1".into(),
        ));
    }
    let stats_a: Vec<SentenceStats> = hyp_a
        .iter()
        .zip(references)
        .map(|(h, r)| sentence_stats(h, r))
        .collect();
    let stats_b: Vec<SentenceStats> = hyp_b
        .iter()
        .zip(references)
        .map(|(h, r)| sentence_stats(h, r))
        .collect();
    let full = |stats: &[SentenceStats]| {
        let mut c = CorpusStats::default();
        stats.iter().for_each(|s| c.add(s));
        c.report(false).bleu
    };
    let bleu_diff = full(&stats_a) - full(&stats_b);

    let n = references.len();
    let mut wins = 0usize;
    for sample in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + sample as u64);
        let mut acc_a = CorpusStats::default();
        let mut acc_b = CorpusStats::default();
        for _ in 0..sample_size {
            let i = rng.gen_range(0..n);
            acc_a.add(&stats_a[i]);
            acc_b.add(&stats_b[i]);
        }
        if acc_a.report(false).bleu > acc_b.report(false).bleu {
            wins += 1;
        }
    }
    Ok(SignificanceReport {
        bleu_diff,
        superiority_frequency: wins as f64 / n_samples as f64,
        n_samples,
        sample_size,
    })
}

/// Translate every source sentence of `test` in order.
pub fn translate_corpus<F: Scalar>(
    params: &ModelParameters<F>,
    test: &ParallelCorpus,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    config: &BeamConfig,
) -> Result<Vec<Sentence>> {
    test.pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            translate(params, &pair.source, bpe, vocab, config)
                .map_err(|e| Error::Evaluation(format!("translating sentence {i}: {e}")))
        })
        .collect()
}

/// Translate the test set and score it against the reference targets.
pub fn evaluate_model<F: Scalar>(
    params: &ModelParameters<F>,
    test: &ParallelCorpus,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    config: &BeamConfig,
) -> Result<BleuReport> {
    let hypotheses = translate_corpus(params, test, bpe, vocab, config)?;
    let references: Vec<Sentence> = test.pairs.iter().map(|p| p.target.clone()).collect();
    bleu(&hypotheses, &references)
}

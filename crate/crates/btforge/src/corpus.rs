//! Corpora: loading, validation, toy-language generation, tagging and mixing.
//!
//! File convention (both directions of a parallel corpus, and monolingual
//! text): UTF-8, LF line endings, one sentence per line, tokens separated by
//! single ASCII spaces, no leading or trailing spaces. Empty lines are errors,
//! not empty sentences. A parallel corpus lives in a `.src`/`.tgt` file pair
//! aligned line by line.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Where a sentence pair came from. Synthetic pairs are machine
/// back-translations; authentic pairs are original parallel data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Authentic,
    Synthetic,
}

pub type Sentence = Vec<String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MonolingualCorpus {
    pub sentences: Vec<Sentence>,
}

/// Splits a validated line into tokens. `line_no` is 1-based for messages.
fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<Sentence> {
    let err = |reason: &str| Error::MalformedLine {
        path: path.to_path_buf(),
        line: line_no,
        reason: reason.to_string(),
    };
    if line.is_empty() {
        return Err(err("empty line"));
    }
    if line.starts_with(' ') || line.ends_with(' ') {
        return Err(err("leading or trailing space"));
    }
    if line.contains("  ") {
        return Err(err("consecutive spaces"));
    }
    if let Some(c) = line.chars().find(|c| c.is_whitespace() && *c != ' ') {
        return Err(err(&format!(
            "whitespace other than a single space (U+{:04X})",
            c as u32
        )));
    }
    Ok(line.split(' ').map(str::to_string).collect())
}

fn read_lines(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    // A trailing LF terminates the last sentence; it does not open an empty one.
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        return Ok(out);
    }
    for (i, line) in body.split('\n').enumerate() {
        out.push(parse_line(path, i + 1, line)?);
    }
    Ok(out)
}

fn write_lines(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut buf = String::new();
    for s in sentences {
        buf.push_str(&s.join(" "));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

impl ParallelCorpus {
    pub fn from_pairs(pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Loads an aligned `.src`/`.tgt` pair, stamping every pair with
    /// `provenance`.
    pub fn load(src_path: &Path, tgt_path: &Path, provenance: Provenance) -> Result<Self> {
        let src = read_lines(src_path)?;
        let tgt = read_lines(tgt_path)?;
        if src.len() != tgt.len() {
            return Err(Error::Misaligned {
                src_path: src_path.to_path_buf(),
                tgt_path: tgt_path.to_path_buf(),
                src_lines: src.len(),
                tgt_lines: tgt.len(),
            });
        }
        let pairs = src
            .into_iter()
            .zip(tgt)
            .map(|(source, target)| SentencePair {
                source,
                target,
                provenance,
            })
            .collect();
        Ok(ParallelCorpus { pairs })
    }

    pub fn save(&self, src_path: &Path, tgt_path: &Path) -> Result<()> {
        let src: Vec<Sentence> = self.pairs.iter().map(|p| p.source.clone()).collect();
        let tgt: Vec<Sentence> = self.pairs.iter().map(|p| p.target.clone()).collect();
        write_lines(src_path, &src)?;
        write_lines(tgt_path, &tgt)
    }

    /// Source and target sides exchanged; used to train backward models.
    pub fn swapped(&self) -> Self {
        ParallelCorpus {
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair {
                    source: p.target.clone(),
                    target: p.source.clone(),
                    provenance: p.provenance,
                })
                .collect(),
        }
    }

    /// Target sides only, sources discarded.
    pub fn targets(&self) -> MonolingualCorpus {
        MonolingualCorpus {
            sentences: self.pairs.iter().map(|p| p.target.clone()).collect(),
        }
    }
}

impl MonolingualCorpus {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(MonolingualCorpus {
            sentences: read_lines(path)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_lines(path, &self.sentences)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Prepends `tag` to the source of every synthetic pair. Authentic pairs and
/// all targets pass through untouched.
pub fn tag_synthetic(corpus: &ParallelCorpus, tag: &str) -> ParallelCorpus {
    ParallelCorpus {
        pairs: corpus
            .pairs
            .iter()
            .map(|p| {
                let mut source = p.source.clone();
                if p.provenance == Provenance::Synthetic {
                    source.insert(0, tag.to_string());
                }
                SentencePair {
                    source,
                    target: p.target.clone(),
                    provenance: p.provenance,
                }
            })
            .collect(),
    }
}

/// Draws `n` pairs without replacement, preserving alignment and provenance.
pub fn subsample(corpus: &ParallelCorpus, n: usize, seed: u64) -> Result<ParallelCorpus> {
    if n > corpus.len() {
        return Err(Error::SampleSize {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, corpus.len(), n);
    Ok(ParallelCorpus {
        pairs: idx.iter().map(|i| corpus.pairs[i].clone()).collect(),
    })
}

/// Combines all of `authentic` with a seeded subsample of `synthetic` sized by
/// `ratio = (authentic_parts, synthetic_parts)`, then shuffles the union.
///
/// 100 authentic pairs at ratio 1:3 request 300 synthetic pairs; if fewer are
/// available the call fails rather than silently shrinking. A ratio that
/// requests zero synthetic pairs returns `authentic` unchanged, so such a run
/// is indistinguishable from one that never mixed at all.
pub fn mix(
    authentic: &ParallelCorpus,
    synthetic: &ParallelCorpus,
    ratio: (u32, u32),
    seed: u64,
) -> Result<ParallelCorpus> {
    let (a, s) = ratio;
    if a == 0 {
        return Err(Error::Config(
            "mix ratio must have a nonzero authentic part".into(),
        ));
    }
    let needed = authentic.len() * s as usize / a as usize;
    if needed > synthetic.len() {
        return Err(Error::RatioUnsatisfiable {
            authentic: a,
            synthetic: s,
            needed,
            available: synthetic.len(),
        });
    }
    if needed == 0 {
        // Nothing to blend in: the mixture IS the authentic corpus, order
        // included, so a 1:0 run reduces exactly to training on authentic.
        return Ok(authentic.clone());
    }
    let sampled = subsample(synthetic, needed, seed)?;
    let mut pairs = authentic.pairs.clone();
    pairs.extend(sampled.pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69_78);
    pairs.shuffle(&mut rng);
    Ok(ParallelCorpus { pairs })
}

/// Replaces each target token with probability `rate` by a token drawn
/// uniformly from the corpus's own target vocabulary (possibly the original).
/// Sources, lengths and provenance are untouched.
pub fn noise_targets(corpus: &ParallelCorpus, rate: f64, seed: u64) -> ParallelCorpus {
    if rate <= 0.0 {
        return corpus.clone();
    }
    let vocab: Vec<&String> = {
        let set: BTreeSet<&String> = corpus.pairs.iter().flat_map(|p| p.target.iter()).collect();
        set.into_iter().collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParallelCorpus {
        pairs: corpus
            .pairs
            .iter()
            .map(|p| SentencePair {
                source: p.source.clone(),
                target: p
                    .target
                    .iter()
                    .map(|tok| {
                        if rng.gen::<f64>() < rate {
                            vocab[rng.gen_range(0..vocab.len())].clone()
                        } else {
                            tok.clone()
                        }
                    })
                    .collect(),
                provenance: p.provenance,
            })
            .collect(),
    }
}

/// Recipe for a deterministic toy language pair.
///
/// Source sentences are uniform random sequences over `s0..s{V-1}`; the target
/// is the token-wise dictionary image (`ti` for `si`), optionally with the
/// word order reversed. All four splits are pairwise disjoint as sentence
/// sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySpec {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_authentic: usize,
    pub n_monolingual: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub reversed: bool,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            vocab_size: 40,
            min_len: 3,
            max_len: 12,
            n_authentic: 2000,
            n_monolingual: 6000,
            n_dev: 150,
            n_test: 300,
            reversed: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyData {
    pub authentic: ParallelCorpus,
    /// Target-language monolingual text; the generating sources are discarded.
    pub mono: MonolingualCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

fn toy_target(source_ids: &[usize], reversed: bool) -> Sentence {
    let mut t: Sentence = source_ids.iter().map(|i| format!("t{i}")).collect();
    if reversed {
        t.reverse();
    }
    t
}

/// Generates the four toy splits. Deterministic in `seed`.
pub fn generate_toy(spec: &ToySpec, seed: u64) -> Result<ToyData> {
    if spec.vocab_size == 0 {
        return Err(Error::ToyGeneration("vocab_size must be positive".into()));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::ToyGeneration(format!(
            "invalid length range {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    let needed = spec.n_authentic + spec.n_monolingual + spec.n_dev + spec.n_test;
    let mut capacity: u128 = 0;
    for len in spec.min_len..=spec.max_len {
        capacity = capacity.saturating_add((spec.vocab_size as u128).saturating_pow(len as u32));
        if capacity >= needed as u128 {
            break;
        }
    }
    if capacity < needed as u128 {
        return Err(Error::ToyGeneration(format!(
            "need {needed} distinct sentences but only {capacity} exist for this vocab and length range"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(needed);
    let mut sentences: Vec<Vec<usize>> = Vec::with_capacity(needed);
    let max_attempts = needed.saturating_mul(200) + 10_000;
    let mut attempts = 0usize;
    while sentences.len() < needed {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::ToyGeneration(format!(
                "could not draw {needed} distinct sentences in {max_attempts} attempts"
            )));
        }
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..spec.vocab_size)).collect();
        if seen.insert(ids.clone()) {
            sentences.push(ids);
        }
    }

    let pair = |ids: &Vec<usize>| SentencePair {
        source: ids.iter().map(|i| format!("s{i}")).collect(),
        target: toy_target(ids, spec.reversed),
        provenance: Provenance::Authentic,
    };
    let mut it = sentences.iter();
    let authentic = ParallelCorpus {
        pairs: it.by_ref().take(spec.n_authentic).map(pair).collect(),
    };
    let mono = MonolingualCorpus {
        sentences: it
            .by_ref()
            .take(spec.n_monolingual)
            .map(|ids| toy_target(ids, spec.reversed))
            .collect(),
    };
    let dev = ParallelCorpus {
        pairs: it.by_ref().take(spec.n_dev).map(pair).collect(),
    };
    let test = ParallelCorpus {
        pairs: it.by_ref().take(spec.n_test).map(pair).collect(),
    };
    Ok(ToyData {
        authentic,
        mono,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toks(s: &str) -> Sentence {
        s.split(' ').map(str::to_string).collect()
    }

    fn corpus_of(side_pairs: &[(&str, &str)], provenance: Provenance) -> ParallelCorpus {
        ParallelCorpus {
            pairs: side_pairs
                .iter()
                .map(|(s, t)| SentencePair {
                    source: toks(s),
                    target: toks(t),
                    provenance,
                })
                .collect(),
        }
    }

    fn uniform_pairs(n: usize, provenance: Provenance) -> ParallelCorpus {
        ParallelCorpus {
            pairs: (0..n)
                .map(|i| SentencePair {
                    source: vec![format!("s{i}")],
                    target: vec![format!("t{i}")],
                    provenance,
                })
                .collect(),
        }
    }

    #[test]
    fn mix_ratio_one_to_three_takes_300_synthetic_for_100_authentic() {
        let auth = uniform_pairs(100, Provenance::Authentic);
        let syn = uniform_pairs(400, Provenance::Synthetic);
        let mixed = mix(&auth, &syn, (1, 3), 7).unwrap();
        assert_eq!(mixed.len(), 400);
        let n_syn = mixed
            .pairs
            .iter()
            .filter(|p| p.provenance == Provenance::Synthetic)
            .count();
        assert_eq!(n_syn, 300);
        // Every authentic pair survives the mix.
        let sources: HashSet<&Sentence> = mixed
            .pairs
            .iter()
            .filter(|p| p.provenance == Provenance::Authentic)
            .map(|p| &p.source)
            .collect();
        assert_eq!(sources.len(), 100);
    }

    #[test]
    fn mix_fails_when_synthetic_is_short() {
        let auth = uniform_pairs(100, Provenance::Authentic);
        let syn = uniform_pairs(200, Provenance::Synthetic);
        match mix(&auth, &syn, (1, 3), 7) {
            Err(Error::RatioUnsatisfiable {
                needed, available, ..
            }) => {
                assert_eq!(needed, 300);
                assert_eq!(available, 200);
            }
            other => panic!("expected RatioUnsatisfiable, got {other:?}"),
        }
    }

    #[test]
    fn mix_with_zero_synthetic_part_returns_authentic_untouched() {
        let auth = uniform_pairs(30, Provenance::Authentic);
        let syn = uniform_pairs(50, Provenance::Synthetic);
        let mixed = mix(&auth, &syn, (1, 0), 99).unwrap();
        assert_eq!(mixed, auth);
    }

    #[test]
    fn mix_is_deterministic_in_seed() {
        let auth = uniform_pairs(20, Provenance::Authentic);
        let syn = uniform_pairs(100, Provenance::Synthetic);
        let a = mix(&auth, &syn, (1, 3), 11).unwrap();
        let b = mix(&auth, &syn, (1, 3), 11).unwrap();
        let c = mix(&auth, &syn, (1, 3), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn subsample_rejects_oversized_requests() {
        let c = uniform_pairs(5, Provenance::Synthetic);
        assert!(matches!(
            subsample(&c, 6, 0),
            Err(Error::SampleSize {
                requested: 6,
                available: 5
            })
        ));
        assert_eq!(subsample(&c, 5, 0).unwrap().len(), 5);
    }

    #[test]
    fn tagging_touches_only_synthetic_sources() {
        let mut corpus = corpus_of(&[("a b", "x y")], Provenance::Authentic);
        corpus
            .pairs
            .extend(corpus_of(&[("c d", "z w")], Provenance::Synthetic).pairs);
        let tagged = tag_synthetic(&corpus, "<BT>");
        assert_eq!(tagged.pairs[0].source, toks("a b"));
        assert_eq!(tagged.pairs[1].source, toks("<BT> c d"));
        assert_eq!(tagged.pairs[0].target, toks("x y"));
        assert_eq!(tagged.pairs[1].target, toks("z w"));
    }

    #[test]
    fn toy_generation_is_deterministic_and_split_disjoint() {
        let spec = ToySpec {
            vocab_size: 10,
            min_len: 2,
            max_len: 5,
            n_authentic: 40,
            n_monolingual: 30,
            n_dev: 10,
            n_test: 10,
            reversed: false,
        };
        let a = generate_toy(&spec, 3).unwrap();
        let b = generate_toy(&spec, 3).unwrap();
        assert_eq!(a.authentic, b.authentic);
        assert_eq!(a.mono, b.mono);
        assert_eq!(a.dev, b.dev);
        assert_eq!(a.test, b.test);
        let c = generate_toy(&spec, 4).unwrap();
        assert_ne!(a.authentic, c.authentic);

        assert_eq!(a.authentic.len(), 40);
        assert_eq!(a.mono.len(), 30);
        assert_eq!(a.dev.len(), 10);
        assert_eq!(a.test.len(), 10);

        // Pairwise disjoint: compare target sides, which are in bijection with
        // the generating sources.
        let sets: Vec<HashSet<Sentence>> = vec![
            a.authentic.pairs.iter().map(|p| p.target.clone()).collect(),
            a.mono.sentences.iter().cloned().collect(),
            a.dev.pairs.iter().map(|p| p.target.clone()).collect(),
            a.test.pairs.iter().map(|p| p.target.clone()).collect(),
        ];
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert!(sets[i].is_disjoint(&sets[j]), "splits {i} and {j} overlap");
            }
        }

        // Token-wise dictionary image.
        for p in &a.authentic.pairs {
            assert_eq!(p.source.len(), p.target.len());
            for (s, t) in p.source.iter().zip(&p.target) {
                assert_eq!(s.replacen('s', "t", 1), *t);
            }
        }
    }

    #[test]
    fn toy_reversed_flag_reverses_target_order() {
        let spec = ToySpec {
            vocab_size: 50,
            min_len: 4,
            max_len: 4,
            n_authentic: 5,
            n_monolingual: 0,
            n_dev: 0,
            n_test: 0,
            reversed: true,
        };
        let data = generate_toy(&spec, 9).unwrap();
        for p in &data.authentic.pairs {
            let forward: Sentence = p.source.iter().map(|s| s.replacen('s', "t", 1)).collect();
            let mut rev = forward.clone();
            rev.reverse();
            assert_eq!(p.target, rev);
        }
    }

    #[test]
    fn toy_generation_rejects_impossible_requests() {
        let spec = ToySpec {
            vocab_size: 2,
            min_len: 1,
            max_len: 2,
            // Only 2 + 4 = 6 distinct sentences exist.
            n_authentic: 7,
            n_monolingual: 0,
            n_dev: 0,
            n_test: 0,
            reversed: false,
        };
        assert!(matches!(
            generate_toy(&spec, 0),
            Err(Error::ToyGeneration(_))
        ));
    }

    #[test]
    fn noise_targets_identity_at_rate_zero_and_full_coverage_at_one() {
        let corpus = corpus_of(
            &[("s1 s2 s3", "t1 t2 t3"), ("s4", "t4")],
            Provenance::Authentic,
        );
        assert_eq!(noise_targets(&corpus, 0.0, 5), corpus);

        let noised = noise_targets(&corpus, 1.0, 5);
        let vocab: HashSet<String> = ["t1", "t2", "t3", "t4"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (orig, new) in corpus.pairs.iter().zip(&noised.pairs) {
            assert_eq!(orig.source, new.source);
            assert_eq!(orig.target.len(), new.target.len());
            for tok in &new.target {
                assert!(vocab.contains(tok));
            }
        }
        assert_eq!(noise_targets(&corpus, 1.0, 5), noised);
    }

    #[test]
    fn swap_exchanges_sides() {
        let corpus = corpus_of(&[("a b", "x")], Provenance::Authentic);
        let swapped = corpus.swapped();
        assert_eq!(swapped.pairs[0].source, toks("x"));
        assert_eq!(swapped.pairs[0].target, toks("a b"));
        assert_eq!(swapped.swapped(), corpus);
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("toy.src");
        let tgt = dir.path().join("toy.tgt");
        let corpus = corpus_of(
            &[("s1 s2", "t1 t2"), ("s3", "t3")],
            Provenance::Authentic,
        );
        corpus.save(&src, &tgt).unwrap();
        let bytes1 = std::fs::read(&src).unwrap();
        assert_eq!(bytes1, b"s1 s2\ns3\n");
        let loaded = ParallelCorpus::load(&src, &tgt, Provenance::Authentic).unwrap();
        assert_eq!(loaded, corpus);
        loaded.save(&src, &tgt).unwrap();
        assert_eq!(std::fs::read(&src).unwrap(), bytes1);
    }

    #[test]
    fn loader_rejects_malformed_lines_and_misalignment() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.path().join(name);
            std::fs::write(&p, bytes).unwrap();
            p
        };
        let good = write("good.tgt", b"t1\nt2\n");

        for (name, bytes) in [
            ("empty_line.src", b"s1\n\ns2\n".as_slice()),
            ("trailing.src", b"s1 \ns2\n".as_slice()),
            ("double.src", b"s1  s2\nok\n".as_slice()),
            ("tab.src", b"s1\ts2\nok\n".as_slice()),
            ("crlf.src", b"s1\r\ns2\n".as_slice()),
        ] {
            let p = write(name, bytes);
            let res = MonolingualCorpus::load(&p);
            assert!(
                matches!(res, Err(Error::MalformedLine { .. })),
                "{name} should be rejected, got {res:?}"
            );
        }

        let three = write("three.src", b"a\nb\nc\n");
        match ParallelCorpus::load(&three, &good, Provenance::Authentic) {
            Err(Error::Misaligned {
                src_lines,
                tgt_lines,
                ..
            }) => {
                assert_eq!((src_lines, tgt_lines), (3, 2));
            }
            other => panic!("expected Misaligned, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        std::fs::write(&p, b"").unwrap();
        assert!(MonolingualCorpus::load(&p).unwrap().is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn token() -> impl Strategy<Value = String> {
            "[a-z0-9@<>]{1,6}"
        }

        fn sentence() -> impl Strategy<Value = Sentence> {
            proptest::collection::vec(token(), 1..8)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn mono_round_trip(sentences in proptest::collection::vec(sentence(), 0..20)) {
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("mono.txt");
                let corpus = MonolingualCorpus { sentences };
                corpus.save(&p).unwrap();
                let first = std::fs::read(&p).unwrap();
                let loaded = MonolingualCorpus::load(&p).unwrap();
                prop_assert_eq!(&loaded, &corpus);
                loaded.save(&p).unwrap();
                prop_assert_eq!(std::fs::read(&p).unwrap(), first);
            }
        }
    }
}

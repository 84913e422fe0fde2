//! Byte-pair encoding and vocabulary construction.
//!
//! Learning splits every word into characters plus a separate end-of-word
//! symbol `</w>`, then repeatedly merges the most frequent adjacent symbol
//! pair. Ties break lexicographically by (left, right); learning stops early
//! once no pair occurs at least twice. Applying a model replays the merge
//! list in priority order and marks word-internal boundaries with an `@@`
//! suffix, so `lower` may become `low@@ er`.
//!
//! Reserved tokens (for example a `<BT>` tag) are atomic: they are never
//! split, never participate in pair counts, and no merge may produce one.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::{MonolingualCorpus, ParallelCorpus, Sentence, SentencePair};
use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
/// Fixed ids of the four structural specials in every vocabulary.
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const MERGES_HEADER: &str = "#version: btforge-bpe 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    /// Merge operations in priority order (earlier = applied first).
    pub merges: Vec<(String, String)>,
    /// Tokens that pass through learning and application untouched.
    pub reserved: BTreeSet<String>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    syms.push(END_OF_WORD.to_string());
    syms
}

fn pairs_of(symbols: &[String]) -> impl Iterator<Item = (String, String)> + '_ {
    symbols
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
}

/// Learns `n_merges` merges over the concatenation of `streams`. Passing the
/// streams of several corpora is what "joint" BPE means; the result is
/// identical to learning over one concatenated corpus.
pub fn learn_bpe<'a, I>(streams: I, n_merges: usize, reserved: &BTreeSet<String>) -> BpeModel
where
    I: IntoIterator<Item = &'a Sentence>,
{
    // Distinct words with frequencies, order fixed for reproducibility.
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    for sentence in streams {
        for tok in sentence {
            if !reserved.contains(tok) {
                *word_counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = {
        let mut v: Vec<(String, u64)> = word_counts.into_iter().collect();
        v.sort_unstable();
        v.into_iter()
            .map(|(w, c)| (word_symbols(&w), c))
            .collect()
    };

    // pair -> total count, and pair -> word indices containing it.
    let mut counts: HashMap<(String, String), i64> = HashMap::new();
    let mut where_seen: HashMap<(String, String), HashSet<usize>> = HashMap::new();
    for (i, (syms, c)) in words.iter().enumerate() {
        for p in pairs_of(syms) {
            *counts.entry(p.clone()).or_insert(0) += *c as i64;
            where_seen.entry(p).or_default().insert(i);
        }
    }

    let mut merges = Vec::with_capacity(n_merges);
    for _ in 0..n_merges {
        let best = counts
            .iter()
            .filter(|(p, c)| {
                **c >= 2 && {
                    let joined = format!("{}{}", p.0, p.1);
                    !reserved.contains(&joined) && joined != END_OF_WORD
                }
            })
            .max_by(|(pa, ca), (pb, cb)| {
                // Highest count wins; ties prefer the lexicographically
                // smallest (left, right).
                ca.cmp(cb).then_with(|| pb.cmp(pa))
            })
            .map(|(p, _)| p.clone());
        let Some(best) = best else { break };

        let members: Vec<usize> = {
            let mut m: Vec<usize> = where_seen
                .get(&best)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default();
            m.sort_unstable();
            m
        };
        for wi in members {
            let (syms, c) = &mut words[wi];
            let c = *c as i64;
            // Retract this word's pair contributions, merge, re-add.
            for p in pairs_of(syms) {
                if let Some(e) = counts.get_mut(&p) {
                    *e -= c;
                }
                if let Some(s) = where_seen.get_mut(&p) {
                    s.remove(&wi);
                }
            }
            merge_in_place(syms, &best);
            for p in pairs_of(syms) {
                *counts.entry(p.clone()).or_insert(0) += c;
                where_seen.entry(p).or_default().insert(wi);
            }
        }
        counts.retain(|_, c| *c > 0);
        merges.push(best);
    }

    BpeModel {
        merges,
        reserved: reserved.clone(),
    }
}

/// Replaces every adjacent occurrence of `pair`, scanning left to right.
fn merge_in_place(symbols: &mut Vec<String>, pair: &(String, String)) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            let joined = format!("{}{}", pair.0, pair.1);
            symbols[i] = joined;
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>, reserved: BTreeSet<String>) -> Self {
        BpeModel { merges, reserved }
    }

    /// Splits one word into output pieces (continuation `@@` already applied,
    /// end-of-word symbol resolved away).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        if self.reserved.contains(word) {
            return vec![word.to_string()];
        }
        let mut syms = word_symbols(word);
        for pair in &self.merges {
            if syms.len() < 2 {
                break;
            }
            merge_in_place(&mut syms, pair);
        }
        if syms.last().map(String::as_str) == Some(END_OF_WORD) {
            syms.pop();
        } else if let Some(last) = syms.last_mut() {
            if let Some(stripped) = last.strip_suffix(END_OF_WORD) {
                *last = stripped.to_string();
            }
        }
        let n = syms.len();
        for s in syms.iter_mut().take(n.saturating_sub(1)) {
            s.push_str(CONTINUATION);
        }
        syms
    }

    pub fn apply_sentence(&self, sentence: &Sentence) -> Sentence {
        let mut cache = HashMap::new();
        self.apply_cached(sentence, &mut cache)
    }

    fn apply_cached(&self, sentence: &Sentence, cache: &mut HashMap<String, Vec<String>>) -> Sentence {
        let mut out = Vec::with_capacity(sentence.len());
        for tok in sentence {
            let pieces = cache
                .entry(tok.clone())
                .or_insert_with(|| self.segment_word(tok));
            out.extend(pieces.iter().cloned());
        }
        out
    }

    pub fn apply_parallel(&self, corpus: &ParallelCorpus) -> ParallelCorpus {
        let mut cache = HashMap::new();
        ParallelCorpus {
            pairs: corpus
                .pairs
                .iter()
                .map(|p| SentencePair {
                    source: self.apply_cached(&p.source, &mut cache),
                    target: self.apply_cached(&p.target, &mut cache),
                    provenance: p.provenance,
                })
                .collect(),
        }
    }

    pub fn apply_mono(&self, corpus: &MonolingualCorpus) -> MonolingualCorpus {
        let mut cache = HashMap::new();
        MonolingualCorpus {
            sentences: corpus
                .sentences
                .iter()
                .map(|s| self.apply_cached(s, &mut cache))
                .collect(),
        }
    }

    /// Writes the merge list. Reserved tokens are runtime configuration and
    /// are not part of the file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = String::from(MERGES_HEADER);
        buf.push('\n');
        for (l, r) in &self.merges {
            buf.push_str(l);
            buf.push(' ');
            buf.push_str(r);
            buf.push('\n');
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, reserved: &BTreeSet<String>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == MERGES_HEADER => {}
            other => {
                return Err(Error::Subword(format!(
                    "{}: expected header {MERGES_HEADER:?}, found {other:?}",
                    path.display()
                )))
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut fields = line.split(' ');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Subword(format!(
                        "{}:{}: malformed merge line {line:?}",
                        path.display(),
                        i + 2
                    )))
                }
            }
        }
        Ok(BpeModel {
            merges,
            reserved: reserved.clone(),
        })
    }
}

/// Undoes `@@` continuation markers, rejoining subword pieces into words.
/// A final token still carrying `@@` has no continuation and is an error.
pub fn unapply(sentence: &Sentence) -> Result<Sentence> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for tok in sentence {
        if let Some(head) = tok.strip_suffix(CONTINUATION) {
            pending.push_str(head);
        } else {
            pending.push_str(tok);
            out.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        return Err(Error::Subword(format!(
            "dangling continuation marker at end of sentence: {pending:?}"
        )));
    }
    Ok(out)
}

/// Like `unapply` but forgiving: a dangling continuation at the end of the
/// sequence is kept as a word with the marker stripped. Model output is cut
/// off mid-word whenever decoding hits its length limit, so hypothesis
/// restoration must not fail on it.
pub fn restore_hypothesis(tokens: &[String]) -> Sentence {
    let mut out = Vec::new();
    let mut pending = String::new();
    for tok in tokens {
        if let Some(head) = tok.strip_suffix(CONTINUATION) {
            pending.push_str(head);
        } else {
            pending.push_str(tok);
            out.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        out.push(pending);
    }
    out
}

/// Token inventory with dense stable ids.
///
/// Layout: the four structural specials, then reserved tags in the order
/// given at build time, then content tokens ranked by descending frequency
/// (ties lexicographic) and truncated to the configured maximum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, usize>,
    reserved_tags: Vec<String>,
}

pub fn build_vocab<'a, I>(streams: I, max_size: usize, reserved_tags: &[String]) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let specials = [PAD, BOS, EOS, UNK];
    for tag in reserved_tags {
        if specials.contains(&tag.as_str()) {
            return Err(Error::Vocabulary(format!(
                "reserved tag {tag:?} collides with a structural special"
            )));
        }
    }
    let mut fixed: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
    fixed.extend(reserved_tags.iter().cloned());
    let fixed_ids: HashMap<&String, usize> =
        fixed.iter().enumerate().map(|(i, t)| (t, i)).collect();

    let mut fixed_counts = vec![0u64; fixed.len()];
    let mut free_counts: HashMap<String, u64> = HashMap::new();
    for sentence in streams {
        for tok in sentence {
            if let Some(&id) = fixed_ids.get(tok) {
                fixed_counts[id] += 1;
            } else {
                *free_counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(String, u64)> = free_counts.into_iter().collect();
    ranked.sort_unstable_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    ranked.truncate(max_size);

    let mut tokens = fixed;
    let mut counts = fixed_counts;
    for (t, c) in ranked {
        tokens.push(t);
        counts.push(c);
    }
    let ids = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        tokens,
        counts,
        ids,
        reserved_tags: reserved_tags.to_vec(),
    })
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Number of leading ids with fixed meaning (specials plus reserved tags).
    pub fn n_fixed(&self) -> usize {
        4 + self.reserved_tags.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocabulary(format!("id {id} out of range (size {})", self.size())))
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// Unknown tokens map to `<unk>`.
    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Sentence> {
        ids.iter()
            .map(|&id| self.token(id).map(str::to_string))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            buf.push_str(t);
            buf.push('\t');
            buf.push_str(&c.to_string());
            buf.push('\n');
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, reserved_tags: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (t, c) = line.split_once('\t').ok_or_else(|| {
                Error::Vocabulary(format!("{}:{}: missing tab", path.display(), i + 1))
            })?;
            let c: u64 = c.parse().map_err(|_| {
                Error::Vocabulary(format!("{}:{}: bad count {c:?}", path.display(), i + 1))
            })?;
            tokens.push(t.to_string());
            counts.push(c);
        }
        let expect: Vec<&str> = [PAD, BOS, EOS, UNK]
            .into_iter()
            .chain(reserved_tags.iter().map(String::as_str))
            .collect();
        if tokens.len() < expect.len()
            || tokens[..expect.len()].iter().map(String::as_str).ne(expect.iter().copied())
        {
            return Err(Error::Vocabulary(format!(
                "{}: leading entries must be {expect:?}",
                path.display()
            )));
        }
        let ranked = &tokens[expect.len()..];
        let ranked_counts = &counts[expect.len()..];
        for i in 1..ranked.len() {
            let ord_ok = ranked_counts[i - 1] > ranked_counts[i]
                || (ranked_counts[i - 1] == ranked_counts[i] && ranked[i - 1] < ranked[i]);
            if !ord_ok {
                return Err(Error::Vocabulary(format!(
                    "{}: ranked section out of order at entry {:?}",
                    path.display(),
                    ranked[i]
                )));
            }
        }
        let mut ids = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!(
                    "{}: duplicate token {t:?}",
                    path.display()
                )));
            }
        }
        Ok(Vocabulary {
            tokens,
            counts,
            ids,
            reserved_tags: reserved_tags.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Sentence {
        s.split(' ').map(str::to_string).collect()
    }

    /// Corpus as repeated single-word sentences.
    fn word_corpus(words: &[(&str, usize)]) -> Vec<Sentence> {
        words
            .iter()
            .flat_map(|(w, n)| std::iter::repeat(vec![w.to_string()]).take(*n))
            .collect()
    }

    /// Independent learner: recounts every pair from scratch each iteration.
    fn oracle_learn(
        sentences: &[Sentence],
        n_merges: usize,
        reserved: &BTreeSet<String>,
    ) -> Vec<(String, String)> {
        let mut words: Vec<Vec<String>> = sentences
            .iter()
            .flat_map(|s| s.iter())
            .filter(|t| !reserved.contains(*t))
            .map(|t| word_symbols(t))
            .collect();
        let mut merges = Vec::new();
        for _ in 0..n_merges {
            let mut counts: HashMap<(String, String), u64> = HashMap::new();
            for w in &words {
                for p in pairs_of(w) {
                    *counts.entry(p).or_insert(0) += 1;
                }
            }
            let mut candidates: Vec<((String, String), u64)> = counts
                .into_iter()
                .filter(|((l, r), c)| {
                    *c >= 2
                        && !reserved.contains(&format!("{l}{r}"))
                        && format!("{l}{r}") != END_OF_WORD
                })
                .collect();
            candidates.sort_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then_with(|| pa.cmp(pb)));
            let Some((best, _)) = candidates.into_iter().next() else {
                break;
            };
            for w in &mut words {
                merge_in_place(w, &best);
            }
            merges.push(best);
        }
        merges
    }

    #[test]
    fn classic_corpus_first_merge_is_e_s() {
        let corpus = word_corpus(&[("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)]);
        let model = learn_bpe(corpus.iter(), 10, &BTreeSet::new());
        // "es" occurs 9 times; ("t","</w>") also occurs 9 times but loses the
        // lexicographic tie-break.
        assert_eq!(
            model.merges[0],
            ("e".to_string(), "s".to_string()),
            "first merge should be (e, s), got {:?}",
            model.merges
        );
        assert_eq!(model.merges[1], ("es".to_string(), "t".to_string()));
        let oracle = oracle_learn(&corpus, 10, &BTreeSet::new());
        assert_eq!(model.merges, oracle);
    }

    #[test]
    fn incremental_learner_matches_recount_oracle_on_random_corpora() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for case in 0..6 {
            let n_sent = rng.gen_range(1..40);
            let sentences: Vec<Sentence> = (0..n_sent)
                .map(|_| {
                    (0..rng.gen_range(1..8))
                        .map(|_| {
                            let len = rng.gen_range(1..6);
                            (0..len)
                                .map(|_| (b'a' + rng.gen_range(0..5u8)) as char)
                                .collect::<String>()
                        })
                        .collect()
                })
                .collect();
            let n_merges = rng.gen_range(0..30);
            let model = learn_bpe(sentences.iter(), n_merges, &BTreeSet::new());
            let oracle = oracle_learn(&sentences, n_merges, &BTreeSet::new());
            assert_eq!(model.merges, oracle, "case {case} diverged");
        }
    }

    #[test]
    fn empty_merge_list_splits_to_marked_characters() {
        let model = BpeModel::new(vec![], BTreeSet::new());
        assert_eq!(model.apply_sentence(&toks("ab")), toks("a@@ b"));
        assert_eq!(model.apply_sentence(&toks("a")), toks("a"));
    }

    #[test]
    fn apply_replays_merges_in_priority_order() {
        let corpus = word_corpus(&[("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)]);
        let model = learn_bpe(corpus.iter(), 100, &BTreeSet::new());
        // Enough merges for every training word to come back whole.
        for w in ["low", "lower", "newest", "widest"] {
            assert_eq!(model.apply_sentence(&toks(w)), toks(w), "word {w}");
        }
        // An unseen word segments into learned pieces.
        let segmented = model.apply_sentence(&toks("lowest"));
        assert_eq!(unapply(&segmented).unwrap(), toks("lowest"));
        assert!(segmented.len() > 1);
    }

    #[test]
    fn learning_stops_when_no_pair_repeats() {
        let model = learn_bpe(word_corpus(&[("ab", 1)]).iter(), 10, &BTreeSet::new());
        assert!(model.merges.is_empty());
    }

    #[test]
    fn joint_learning_equals_concatenation() {
        let a = word_corpus(&[("low", 3), ("newest", 2)]);
        let b = word_corpus(&[("lower", 4), ("widest", 1)]);
        let joint = learn_bpe(a.iter().chain(b.iter()), 20, &BTreeSet::new());
        let concat: Vec<Sentence> = a.iter().chain(b.iter()).cloned().collect();
        let single = learn_bpe(concat.iter(), 20, &BTreeSet::new());
        assert_eq!(joint, single);
    }

    #[test]
    fn reserved_tokens_are_atomic() {
        let reserved: BTreeSet<String> = [String::from("<BT>")].into();
        let mut corpus = word_corpus(&[("abab", 6)]);
        for _ in 0..20 {
            corpus.push(toks("<BT> abab"));
        }
        let model = learn_bpe(corpus.iter(), 50, &reserved);
        for (l, r) in &model.merges {
            assert_ne!(format!("{l}{r}"), "<BT>");
            assert!(!l.contains("<BT>") && !r.contains("<BT>"));
        }
        assert_eq!(model.apply_sentence(&toks("<BT> abab"))[0], "<BT>");
    }

    #[test]
    fn unapply_rejects_dangling_continuation() {
        assert!(unapply(&toks("a@@ b")).is_ok());
        assert!(matches!(unapply(&toks("a@@ b@@")), Err(Error::Subword(_))));
    }

    #[test]
    fn restore_hypothesis_keeps_truncated_final_word() {
        assert_eq!(restore_hypothesis(&toks("lo@@ w@@ est hi")), toks("lowest hi"));
        // A cut-off hypothesis ends mid-word; the fragment survives.
        assert_eq!(restore_hypothesis(&toks("lo@@ w@@")), toks("low"));
        assert_eq!(restore_hypothesis(&[]), Vec::<String>::new());
    }

    #[test]
    fn merges_file_round_trip_and_golden_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.bpe");
        let model = BpeModel::new(
            vec![
                ("e".into(), "s".into()),
                ("es".into(), "t".into()),
                ("est".into(), "</w>".into()),
            ],
            BTreeSet::new(),
        );
        model.save(&path).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            b"#version: btforge-bpe 1\ne s\nes t\nest </w>\n"
        );
        let loaded = BpeModel::load(&path, &BTreeSet::new()).unwrap();
        assert_eq!(loaded, model);

        std::fs::write(&path, b"#version: other\n").unwrap();
        assert!(BpeModel::load(&path, &BTreeSet::new()).is_err());
        std::fs::write(&path, b"#version: btforge-bpe 1\ne s extra\n").unwrap();
        assert!(BpeModel::load(&path, &BTreeSet::new()).is_err());
    }

    #[test]
    fn vocab_ranks_by_frequency_then_lexicographically() {
        let stream = vec![toks("b a c"), toks("b a"), toks("b a")];
        let v = build_vocab(stream.iter(), 100, &[]).unwrap();
        assert_eq!(v.size(), 4 + 3);
        assert_eq!(v.token(0).unwrap(), PAD);
        assert_eq!(v.token(1).unwrap(), BOS);
        assert_eq!(v.token(2).unwrap(), EOS);
        assert_eq!(v.token(3).unwrap(), UNK);
        // a and b tie at 3; a sorts first.
        assert_eq!(v.token(4).unwrap(), "a");
        assert_eq!(v.token(5).unwrap(), "b");
        assert_eq!(v.token(6).unwrap(), "c");
        assert_eq!(v.id("c"), 6);
        assert_eq!(v.id("zzz"), UNK_ID);
    }

    #[test]
    fn vocab_truncates_and_reserves_tags() {
        let stream = vec![toks("x x x y y z <BT>")];
        let v = build_vocab(stream.iter(), 2, &["<BT>".into()]).unwrap();
        assert_eq!(v.token(4).unwrap(), "<BT>");
        assert_eq!(v.count(4), 1);
        assert_eq!(v.size(), 5 + 2);
        assert_eq!(v.token(5).unwrap(), "x");
        assert_eq!(v.token(6).unwrap(), "y");
        assert!(!v.contains("z"));
        assert_eq!(v.encode(&toks("x z")), vec![5, UNK_ID]);
    }

    #[test]
    fn vocab_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let stream = vec![toks("b a c"), toks("b a"), toks("b")];
        let tags = vec![String::from("<BT>")];
        let v = build_vocab(stream.iter(), 100, &tags).unwrap();
        v.save(&path).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            b"<pad>\t0\n<s>\t0\n</s>\t0\n<unk>\t0\n<BT>\t0\nb\t3\na\t2\nc\t1\n"
        );
        let loaded = Vocabulary::load(&path, &tags).unwrap();
        assert_eq!(loaded, v);

        // Wrong reserved expectations and broken ordering both fail.
        assert!(Vocabulary::load(&path, &[]).is_err());
        std::fs::write(&path, b"<pad>\t0\n<s>\t0\n</s>\t0\n<unk>\t0\nc\t1\nb\t3\n").unwrap();
        assert!(Vocabulary::load(&path, &[]).is_err());
    }

    #[test]
    fn vocab_decode_rejects_out_of_range_ids() {
        let stream = vec![toks("a")];
        let v = build_vocab(stream.iter(), 10, &[]).unwrap();
        assert_eq!(v.decode(&[4]).unwrap(), toks("a"));
        assert!(v.decode(&[99]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn word() -> impl Strategy<Value = String> {
            // No '@' so round trips cannot collide with the continuation marker.
            "[a-z0-9]{1,8}"
        }

        fn sentence() -> impl Strategy<Value = Sentence> {
            proptest::collection::vec(word(), 1..8)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn apply_then_unapply_round_trips(
                corpus in proptest::collection::vec(sentence(), 1..12),
                n_merges in 0usize..40,
            ) {
                let model = learn_bpe(corpus.iter(), n_merges, &BTreeSet::new());
                for s in &corpus {
                    let applied = model.apply_sentence(s);
                    for piece in &applied {
                        prop_assert!(!piece.is_empty());
                        prop_assert!(!piece.contains(END_OF_WORD));
                    }
                    prop_assert_eq!(unapply(&applied).unwrap(), s.clone());
                }
            }

            #[test]
            fn vocab_covers_applied_corpus(
                corpus in proptest::collection::vec(sentence(), 1..10),
                n_merges in 0usize..20,
            ) {
                let model = learn_bpe(corpus.iter(), n_merges, &BTreeSet::new());
                let applied: Vec<Sentence> =
                    corpus.iter().map(|s| model.apply_sentence(s)).collect();
                let v = build_vocab(applied.iter(), usize::MAX, &[]).unwrap();
                for s in &applied {
                    for tok in s {
                        prop_assert!(v.contains(tok), "{} missing", tok);
                    }
                }
            }
        }
    }
}

//! Experiment orchestration: turn a declarative config (data recipe, mixing
//! ratio, training settings, strategy) into trained models, per-checkpoint
//! score curves, translation files and significance tables, reproducibly from
//! the seed list alone.
//!
//! The eight strategies differ only in how synthetic parallel data enters
//! training. All of them (except the baseline, which uses no monolingual
//! text) share one backward model and one back-translated corpus per
//! (data, seed): that corpus is produced once, cached on disk, and reread by
//! later runs, so a strategy sweep compares data schedules rather than
//! back-translation luck.
//!
//! Every vocabulary built here reserves the `<BT>` tag, whether or not the
//! strategy tags anything. This keeps subword artifacts byte-identical
//! between tagged and untagged variants of the same sweep, which is what
//! makes their score differences attributable to the tag itself.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::{
    generate_toy, mix, noise_targets, subsample, tag_synthetic, MonolingualCorpus, ParallelCorpus,
    Provenance, Sentence, ToySpec,
};
use crate::decoder::{back_translate, BeamConfig};
use crate::error::{Error, Result};
use crate::evaluator::{bleu, evaluate_model, paired_bootstrap, translate_corpus, SignificanceReport};
use crate::model::{greedy_decode_batch, remap_vocab, Hyperparams};
use crate::subword::{build_vocab, learn_bpe, restore_hypothesis, BpeModel, Vocabulary, UNK};
use crate::trainer::{
    average_checkpoints, fine_tune, save_checkpoint, splitmix64, train, Checkpoint, EvalHistory,
    Phase, TrainConfig, TrainOutcome,
};
use crate::{Params, Real};

/// Source-side marker prepended to synthetic pairs by the tagged strategy.
/// Reserved in every pipeline vocabulary so that tagging never perturbs the
/// learned subword inventory.
pub const BT_TAG: &str = "<BT>";

/// How many trailing checkpoints the averaged model blends.
pub const AVG_WINDOW: usize = 8;

/// Bootstrap sample sizes reported by [`compare`].
pub const COMPARE_SAMPLE_SIZES: [usize; 3] = [100, 500, 1000];

// Distinct salts so that every consumer of randomness in a run draws from its
// own stream derived from the experiment seed.
const SALT_NOISE: u64 = 0x6e6f_6973_65;
const SALT_BWD_INIT: u64 = 0x6277_6469;
const SALT_BWD_TRAIN: u64 = 0x6277_6474;
const SALT_FWD_INIT: u64 = 0x6677_6469;
const SALT_FWD_TRAIN: u64 = 0x6677_6474;
const SALT_MIX: u64 = 0x6d69_78;
const SALT_REMAP: u64 = 0x7265_6d61_70;

fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ salt)
}

/// The competing training schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Authentic parallel data only.
    Baseline,
    /// Authentic plus untagged synthetic, mixed at the configured ratio.
    StandardBt,
    /// As [`Strategy::StandardBt`] with `<BT>` prepended to synthetic sources.
    TaggedBt,
    /// Shared subword inventory; pre-train on synthetic, fine-tune on
    /// authentic.
    TaglessJointBpe,
    /// Subword inventory learned on synthetic only; the vocabulary is rebuilt
    /// for authentic text before fine-tuning.
    TaglessSeparateBpe,
    /// Phases of [`Strategy::TaglessJointBpe`] swapped: pre-train on
    /// authentic, fine-tune on synthetic.
    ReverseTagless,
    /// [`Strategy::StandardBt`] followed by fine-tuning on authentic.
    FinetuneStandardBt,
    /// [`Strategy::TaggedBt`] followed by fine-tuning on authentic.
    FinetuneTaggedBt,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Baseline,
        Strategy::StandardBt,
        Strategy::TaggedBt,
        Strategy::TaglessJointBpe,
        Strategy::TaglessSeparateBpe,
        Strategy::ReverseTagless,
        Strategy::FinetuneStandardBt,
        Strategy::FinetuneTaggedBt,
    ];

    /// Stable identifier used in config files, directory names and tables.
    pub fn id(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::StandardBt => "standard_bt",
            Strategy::TaggedBt => "tagged_bt",
            Strategy::TaglessJointBpe => "tagless_joint_bpe",
            Strategy::TaglessSeparateBpe => "tagless_separate_bpe",
            Strategy::ReverseTagless => "reverse_tagless",
            Strategy::FinetuneStandardBt => "finetune_standard_bt",
            Strategy::FinetuneTaggedBt => "finetune_tagged_bt",
        }
    }

    /// True when some phase trains on synthetic data alone, which makes a
    /// zero synthetic ratio meaningless.
    fn needs_synthetic_phase(self) -> bool {
        matches!(
            self,
            Strategy::TaglessJointBpe | Strategy::TaglessSeparateBpe | Strategy::ReverseTagless
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Where the four corpora (authentic train, monolingual, dev, test) come
/// from: generated on the fly or loaded from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Toy(ToySpec),
    Files(CorpusPaths),
}

/// File locations for an experiment on real corpora. All seven files use the
/// one-sentence-per-line text format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPaths {
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub mono_tgt: PathBuf,
    pub dev_src: PathBuf,
    pub dev_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
}

/// Full description of one experiment. Serializes to a flat `key = value`
/// file; see [`ExperimentConfig::serialize`] for the key inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub data: DataSource,
    /// Probability of replacing each authentic target token with a random
    /// in-corpus token at load time. Degrades the supervised signal so that
    /// extra synthetic data has headroom to help; 0 disables.
    pub label_noise: f64,
    /// `(authentic_parts, synthetic_parts)`.
    pub ratio: (u32, u32),
    pub n_merges: usize,
    pub vocab_max: usize,
    pub hyper: Hyperparams,
    /// Per-phase training settings. The `seed` field is ignored; run seeds
    /// come from `seeds` and per-purpose streams are derived from them.
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub seeds: Vec<u64>,
}

fn parse_key<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key {key}: cannot parse {value:?}: {e}")))
}

fn take_or<T: FromStr>(map: &mut BTreeMap<String, String>, key: &str, default: T) -> Result<T>
where
    T::Err: fmt::Display,
{
    match map.remove(key) {
        Some(v) => parse_key(key, &v),
        None => Ok(default),
    }
}

fn take_required(map: &mut BTreeMap<String, String>, key: &str) -> Result<String> {
    map.remove(key)
        .ok_or_else(|| Error::Config(format!("missing required key {key}")))
}

impl ExperimentConfig {
    /// Toy-data defaults for `strategy`: the stock toy language pair, ratio
    /// 1:1, three seeds.
    pub fn toy_default(strategy: Strategy) -> Self {
        ExperimentConfig {
            strategy,
            data: DataSource::Toy(ToySpec::default()),
            label_noise: 0.0,
            ratio: (1, 1),
            n_merges: 200,
            vocab_max: 512,
            hyper: Hyperparams::default(),
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            seeds: vec![1, 2, 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio.0 == 0 {
            return Err(Error::Config(
                "ratio must have a nonzero authentic part".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label_noise must lie in [0, 1], got {}",
                self.label_noise
            )));
        }
        if self.strategy.needs_synthetic_phase() && self.ratio.1 == 0 {
            return Err(Error::Config(format!(
                "strategy {} trains a phase on synthetic data alone; ratio {}:0 provides none",
                self.strategy, self.ratio.0
            )));
        }
        self.train.validate()?;
        self.beam.validate()?;
        if let Some(ms) = self.train.max_steps {
            if ms < self.train.eval_every {
                return Err(Error::Config(format!(
                    "max_steps {ms} ends before the first evaluation at step {}; no checkpoint would exist",
                    self.train.eval_every
                )));
            }
        }
        Ok(())
    }

    /// Canonical text form: one `key = value` line per field in a fixed
    /// order. `parse_str` of this text reproduces the config exactly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("strategy", self.strategy.id().to_string());
        match &self.data {
            DataSource::Toy(t) => {
                line("data", "toy".into());
                line("toy_vocab_size", t.vocab_size.to_string());
                line("toy_min_len", t.min_len.to_string());
                line("toy_max_len", t.max_len.to_string());
                line("toy_authentic", t.n_authentic.to_string());
                line("toy_monolingual", t.n_monolingual.to_string());
                line("toy_dev", t.n_dev.to_string());
                line("toy_test", t.n_test.to_string());
                line("toy_reversed", t.reversed.to_string());
            }
            DataSource::Files(p) => {
                line("data", "files".into());
                line("train_src", p.train_src.display().to_string());
                line("train_tgt", p.train_tgt.display().to_string());
                line("mono_tgt", p.mono_tgt.display().to_string());
                line("dev_src", p.dev_src.display().to_string());
                line("dev_tgt", p.dev_tgt.display().to_string());
                line("test_src", p.test_src.display().to_string());
                line("test_tgt", p.test_tgt.display().to_string());
            }
        }
        line("label_noise", format!("{}", self.label_noise));
        line("ratio", format!("{}:{}", self.ratio.0, self.ratio.1));
        line("n_merges", self.n_merges.to_string());
        line("vocab_max", self.vocab_max.to_string());
        line("embed_dim", self.hyper.embed_dim.to_string());
        line("hidden_dim", self.hyper.hidden_dim.to_string());
        line("n_layers", self.hyper.n_layers.to_string());
        line("attention", self.hyper.attention.to_string());
        line("direction", self.hyper.direction.to_string());
        line("batch_size", self.train.batch_size.to_string());
        line("learning_rate", format!("{}", self.train.learning_rate));
        line("dropout", format!("{}", self.train.dropout_p));
        line("eval_every", self.train.eval_every.to_string());
        line("patience", self.train.patience_evals.to_string());
        line("min_delta", format!("{}", self.train.min_delta_bleu));
        line(
            "max_steps",
            match self.train.max_steps {
                None => "none".into(),
                Some(n) => n.to_string(),
            },
        );
        line("adam_beta1", format!("{}", self.train.adam.beta1));
        line("adam_beta2", format!("{}", self.train.adam.beta2));
        line("adam_epsilon", format!("{}", self.train.adam.epsilon));
        line("beam_size", self.beam.beam_size.to_string());
        line("beam_max_len", self.beam.max_len.to_string());
        line(
            "length_norm_alpha",
            format!("{}", self.beam.length_norm_alpha),
        );
        line(
            "seeds",
            self.seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        s
    }

    /// Parses the flat `key = value` format. `#` starts a comment, blank
    /// lines are skipped, unknown or duplicate keys are errors. Unlisted
    /// optional keys fall back to the toy defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got {:?}",
                    i + 1,
                    line
                ))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("duplicate key {k}")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let strategy: Strategy = take_required(&mut map, "strategy")?.parse()?;
        let data = match map.remove("data").as_deref().unwrap_or("toy") {
            "toy" => {
                let d = ToySpec::default();
                DataSource::Toy(ToySpec {
                    vocab_size: take_or(&mut map, "toy_vocab_size", d.vocab_size)?,
                    min_len: take_or(&mut map, "toy_min_len", d.min_len)?,
                    max_len: take_or(&mut map, "toy_max_len", d.max_len)?,
                    n_authentic: take_or(&mut map, "toy_authentic", d.n_authentic)?,
                    n_monolingual: take_or(&mut map, "toy_monolingual", d.n_monolingual)?,
                    n_dev: take_or(&mut map, "toy_dev", d.n_dev)?,
                    n_test: take_or(&mut map, "toy_test", d.n_test)?,
                    reversed: take_or(&mut map, "toy_reversed", d.reversed)?,
                })
            }
            "files" => DataSource::Files(CorpusPaths {
                train_src: PathBuf::from(take_required(&mut map, "train_src")?),
                train_tgt: PathBuf::from(take_required(&mut map, "train_tgt")?),
                mono_tgt: PathBuf::from(take_required(&mut map, "mono_tgt")?),
                dev_src: PathBuf::from(take_required(&mut map, "dev_src")?),
                dev_tgt: PathBuf::from(take_required(&mut map, "dev_tgt")?),
                test_src: PathBuf::from(take_required(&mut map, "test_src")?),
                test_tgt: PathBuf::from(take_required(&mut map, "test_tgt")?),
            }),
            other => {
                return Err(Error::Config(format!(
                    "key data: expected toy or files, got {other:?}"
                )))
            }
        };
        let base = Self::toy_default(strategy);
        let ratio = match map.remove("ratio") {
            None => base.ratio,
            Some(v) => {
                let (a, s) = v
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("key ratio: expected a:s, got {v:?}")))?;
                (parse_key("ratio", a.trim())?, parse_key("ratio", s.trim())?)
            }
        };
        let max_steps = match map.remove("max_steps") {
            None => base.train.max_steps,
            Some(v) if v == "none" => None,
            Some(v) => Some(parse_key("max_steps", &v)?),
        };
        let seeds = match map.remove("seeds") {
            None => base.seeds.clone(),
            Some(v) => {
                let seeds: Vec<u64> = v
                    .split(',')
                    .map(|p| parse_key("seeds", p.trim()))
                    .collect::<Result<_>>()?;
                seeds
            }
        };
        let attention = match map.remove("attention") {
            None => base.hyper.attention,
            Some(v) => v.parse()?,
        };
        let direction = match map.remove("direction") {
            None => base.hyper.direction,
            Some(v) => v.parse()?,
        };
        let config = ExperimentConfig {
            strategy,
            data,
            label_noise: take_or(&mut map, "label_noise", base.label_noise)?,
            ratio,
            n_merges: take_or(&mut map, "n_merges", base.n_merges)?,
            vocab_max: take_or(&mut map, "vocab_max", base.vocab_max)?,
            hyper: Hyperparams {
                embed_dim: take_or(&mut map, "embed_dim", base.hyper.embed_dim)?,
                hidden_dim: take_or(&mut map, "hidden_dim", base.hyper.hidden_dim)?,
                n_layers: take_or(&mut map, "n_layers", base.hyper.n_layers)?,
                attention,
                direction,
            },
            train: TrainConfig {
                batch_size: take_or(&mut map, "batch_size", base.train.batch_size)?,
                learning_rate: take_or(&mut map, "learning_rate", base.train.learning_rate)?,
                dropout_p: take_or(&mut map, "dropout", base.train.dropout_p)?,
                eval_every: take_or(&mut map, "eval_every", base.train.eval_every)?,
                patience_evals: take_or(&mut map, "patience", base.train.patience_evals)?,
                min_delta_bleu: take_or(&mut map, "min_delta", base.train.min_delta_bleu)?,
                max_steps,
                seed: 0,
                adam: crate::trainer::AdamConfig {
                    beta1: take_or(&mut map, "adam_beta1", base.train.adam.beta1)?,
                    beta2: take_or(&mut map, "adam_beta2", base.train.adam.beta2)?,
                    epsilon: take_or(&mut map, "adam_epsilon", base.train.adam.epsilon)?,
                },
            },
            beam: BeamConfig {
                beam_size: take_or(&mut map, "beam_size", base.beam.beam_size)?,
                max_len: take_or(&mut map, "beam_max_len", base.beam.max_len)?,
                length_norm_alpha: take_or(
                    &mut map,
                    "length_norm_alpha",
                    base.beam.length_norm_alpha,
                )?,
            },
            seeds,
        };
        if !map.is_empty() {
            let keys: Vec<&str> = map.keys().map(String::as_str).collect();
            return Err(Error::Config(format!("unknown keys: {}", keys.join(", "))));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    /// Hash of everything except the strategy, so the strategies of one sweep
    /// land under a common results directory. Stable across machines: it is
    /// a digest of the canonical config text.
    pub fn config_hash(&self) -> String {
        hex16(&self.canonical_without(&["strategy"]))
    }

    /// Cache key for the back-translated corpus of one seed. Excludes the
    /// strategy (all strategies share the corpus), the ratio (subsetting
    /// happens after back-translation) and the seed list (only this seed
    /// matters).
    fn synthetic_key(&self, seed: u64) -> String {
        let mut text = self.canonical_without(&["strategy", "ratio", "seeds"]);
        text.push_str(&format!("seed = {seed}\n"));
        hex16(&text)
    }

    fn canonical_without(&self, excluded: &[&str]) -> String {
        let mut out = String::new();
        for line in self.serialize().lines() {
            let key = line.split(" = ").next().unwrap_or("");
            if !excluded.contains(&key) {
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }
}

fn hex16(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Test BLEU of one checkpoint, labeled with its phase.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub bleu: f64,
    pub phase: Phase,
}

/// Everything one seed of an experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Dev-BLEU trajectory across all phases.
    pub history: EvalHistory,
    /// Step of the final phase's best-dev checkpoint.
    pub best_step: u64,
    /// Test BLEU of that checkpoint, decoded with the configured beam.
    pub best_bleu: f64,
    /// Test BLEU of the averaged model (last [`AVG_WINDOW`] checkpoints of
    /// the final phase).
    pub averaged_bleu: f64,
    /// Test BLEU of every checkpoint, greedy-decoded, in training order.
    pub test_curve: Vec<CurvePoint>,
    /// Test-set translations of the averaged model; input to [`compare`].
    pub test_translations: Vec<Sentence>,
}

/// One strategy's results across all requested seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub strategy: Strategy,
    pub config_hash: String,
    pub seeds: Vec<SeedOutcome>,
}

impl ExperimentRecord {
    pub fn mean_best_bleu(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.best_bleu))
    }

    pub fn mean_averaged_bleu(&self) -> f64 {
        mean(self.seeds.iter().map(|s| s.averaged_bleu))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// The four corpora a seeded run trains and scores on.
struct SeedData {
    authentic: ParallelCorpus,
    mono: MonolingualCorpus,
    dev: ParallelCorpus,
    test: ParallelCorpus,
}

fn load_seed_data(config: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let (authentic, mono, dev, test) = match &config.data {
        DataSource::Toy(spec) => {
            let toy = generate_toy(spec, seed)?;
            (toy.authentic, toy.mono, toy.dev, toy.test)
        }
        DataSource::Files(p) => (
            ParallelCorpus::load(&p.train_src, &p.train_tgt, Provenance::Authentic)?,
            MonolingualCorpus::load(&p.mono_tgt)?,
            ParallelCorpus::load(&p.dev_src, &p.dev_tgt, Provenance::Authentic)?,
            ParallelCorpus::load(&p.test_src, &p.test_tgt, Provenance::Authentic)?,
        ),
    };
    if authentic.is_empty() {
        return Err(Error::Experiment("authentic corpus is empty".into()));
    }
    let authentic = noise_targets(&authentic, config.label_noise, derive_seed(seed, SALT_NOISE));
    Ok(SeedData {
        authentic,
        mono,
        dev,
        test,
    })
}

fn reserved_tag_set() -> BTreeSet<String> {
    BTreeSet::from([BT_TAG.to_string()])
}

fn reserved_tag_list() -> Vec<String> {
    vec![BT_TAG.to_string()]
}

/// Learns BPE merges over the sources and targets of all `corpora`, then
/// builds the vocabulary from the same text segmented with those merges.
fn learn_artifacts(
    corpora: &[&ParallelCorpus],
    config: &ExperimentConfig,
) -> Result<(BpeModel, Vocabulary)> {
    let sentences: Vec<&Sentence> = corpora
        .iter()
        .flat_map(|c| c.pairs.iter().flat_map(|p| [&p.source, &p.target]))
        .collect();
    let bpe = learn_bpe(sentences.into_iter(), config.n_merges, &reserved_tag_set());
    let segmented: Vec<ParallelCorpus> = corpora.iter().map(|c| bpe.apply_parallel(c)).collect();
    let stream = segmented
        .iter()
        .flat_map(|c| c.pairs.iter().flat_map(|p| [&p.source, &p.target]));
    let vocab = build_vocab(stream, config.vocab_max, &reserved_tag_list())?;
    Ok((bpe, vocab))
}

/// Vocabulary over `corpus` segmented with an already-learned `bpe`; used
/// when fine-tuning data keeps the merges but rebuilds the token inventory.
fn rebuild_vocab(
    corpus: &ParallelCorpus,
    bpe: &BpeModel,
    config: &ExperimentConfig,
) -> Result<Vocabulary> {
    let segmented = bpe.apply_parallel(corpus);
    let stream = segmented
        .pairs
        .iter()
        .flat_map(|p| [&p.source, &p.target]);
    build_vocab(stream, config.vocab_max, &reserved_tag_list())
}

/// Segments both sides and maps them to vocabulary ids, ready for training.
pub fn encode_pairs(
    corpus: &ParallelCorpus,
    bpe: &BpeModel,
    vocab: &Vocabulary,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let segmented = bpe.apply_parallel(corpus);
    segmented
        .pairs
        .iter()
        .map(|p| (vocab.encode(&p.source), vocab.encode(&p.target)))
        .collect()
}

/// Greedy-decodes `corpus` sources and scores against its word-level targets.
/// Used for dev scoring during training and for per-checkpoint test curves;
/// final reported numbers use the beam instead.
pub fn greedy_corpus_bleu(
    params: &Params,
    corpus: &ParallelCorpus,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    max_len: usize,
    batch_size: usize,
) -> Result<f64> {
    let segmented = bpe.apply_parallel(corpus);
    let sources: Vec<Vec<usize>> = segmented
        .pairs
        .iter()
        .map(|p| vocab.encode(&p.source))
        .collect();
    let outputs = greedy_decode_batch(params, &sources, max_len, batch_size)?;
    let hypotheses: Vec<Sentence> = outputs
        .iter()
        .map(|ids| {
            let words = restore_hypothesis(&vocab.decode(ids)?);
            Ok(if words.is_empty() {
                vec![UNK.to_string()]
            } else {
                words
            })
        })
        .collect::<Result<_>>()?;
    let references: Vec<Sentence> = corpus.pairs.iter().map(|p| p.target.clone()).collect();
    Ok(bleu(&hypotheses, &references)?.bleu)
}

fn tail<T>(xs: &[T], k: usize) -> &[T] {
    &xs[xs.len().saturating_sub(k)..]
}

/// Artifact cache location: `$BTFORGE_CACHE`, or `.btforge-cache` when the
/// variable is unset.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("BTFORGE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".btforge-cache"))
}

/// Trains the backward model on swapped authentic data and translates the
/// whole monolingual corpus with it. This is the expensive shared step, so
/// the result is cached: the first run writes it, later runs (any strategy,
/// any ratio) read it back.
fn obtain_synthetic(
    config: &ExperimentConfig,
    data: &SeedData,
    seed: u64,
    cache_dir: &Path,
) -> Result<ParallelCorpus> {
    let key = config.synthetic_key(seed);
    let src = cache_dir.join(format!("syn-{key}.src"));
    let tgt = cache_dir.join(format!("syn-{key}.tgt"));
    if src.exists() && tgt.exists() {
        return ParallelCorpus::load(&src, &tgt, Provenance::Synthetic);
    }
    let synthetic = build_synthetic(config, data, seed)?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    // Write-once discipline: land the files under temporary names, then
    // rename only if no concurrent run beat us to it.
    let pid = std::process::id();
    let tmp_src = cache_dir.join(format!("syn-{key}.src.tmp{pid}"));
    let tmp_tgt = cache_dir.join(format!("syn-{key}.tgt.tmp{pid}"));
    synthetic.save(&tmp_src, &tmp_tgt)?;
    if src.exists() && tgt.exists() {
        let _ = fs::remove_file(&tmp_src);
        let _ = fs::remove_file(&tmp_tgt);
    } else {
        fs::rename(&tmp_src, &src).map_err(|e| Error::io(&src, e))?;
        fs::rename(&tmp_tgt, &tgt).map_err(|e| Error::io(&tgt, e))?;
    }
    Ok(synthetic)
}

fn build_synthetic(
    config: &ExperimentConfig,
    data: &SeedData,
    seed: u64,
) -> Result<ParallelCorpus> {
    let swapped = data.authentic.swapped();
    let (bpe, vocab) = learn_artifacts(&[&swapped], config)?;
    let mut params = Params::init(config.hyper, vocab.size(), derive_seed(seed, SALT_BWD_INIT))?;
    let mut cfg = config.train;
    cfg.seed = derive_seed(seed, SALT_BWD_TRAIN);
    let dev_swapped = data.dev.swapped();
    let encoded = encode_pairs(&swapped, &bpe, &vocab);
    let mut history = EvalHistory::new();
    let decode_len = config.beam.max_len;
    let batch = cfg.batch_size;
    let outcome = train(
        &mut params,
        &encoded,
        &cfg,
        Phase::Single,
        &mut history,
        &mut |p: &Params| greedy_corpus_bleu(p, &dev_swapped, &bpe, &vocab, decode_len, batch),
    )?;
    if outcome.checkpoints.is_empty() {
        return Err(Error::Experiment(
            "backward training produced no checkpoints; raise max_steps or lower eval_every".into(),
        ));
    }
    // Decode with the best-dev checkpoint, not the averaged tail: the tail
    // can straddle the steep early part of the learning curve, and a weak
    // backward model poisons every synthetic corpus downstream.
    let best = &outcome.checkpoints[outcome.best_index().expect("nonempty tail")];
    back_translate(&best.params, &data.mono, &bpe, &vocab, &config.beam)
}

/// The ratio-sized synthetic subset this run trains on. Empty when the ratio
/// has no synthetic part, in which case the backward model is never built.
fn subset_for(
    config: &ExperimentConfig,
    data: &SeedData,
    seed: u64,
    cache_dir: &Path,
) -> Result<ParallelCorpus> {
    let (a, s) = config.ratio;
    let needed = data.authentic.len() * s as usize / a as usize;
    if needed == 0 {
        return Ok(ParallelCorpus::default());
    }
    let full = obtain_synthetic(config, data, seed, cache_dir)?;
    if needed > full.len() {
        return Err(Error::RatioUnsatisfiable {
            authentic: a,
            synthetic: s,
            needed,
            available: full.len(),
        });
    }
    subsample(&full, needed, derive_seed(seed, SALT_MIX))
}

/// One finished phase plus the artifacts its checkpoints must be decoded
/// with. Kept per phase because the separate-BPE strategy changes vocabulary
/// between phases.
struct PhaseRun {
    phase: Phase,
    outcome: TrainOutcome<Real>,
    bpe: BpeModel,
    vocab: Vocabulary,
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    params: &mut Params,
    data: &ParallelCorpus,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    config: &ExperimentConfig,
    phase: Phase,
    ordinal: u64,
    start_step: u64,
    seed: u64,
    history: &mut EvalHistory,
    dev: &ParallelCorpus,
) -> Result<TrainOutcome<Real>> {
    let mut cfg = config.train;
    cfg.seed = derive_seed(seed, SALT_FWD_TRAIN.wrapping_add(ordinal));
    let encoded = encode_pairs(data, bpe, vocab);
    let decode_len = config.beam.max_len;
    let batch = cfg.batch_size;
    let mut scorer =
        |p: &Params| greedy_corpus_bleu(p, dev, bpe, vocab, decode_len, batch);
    let outcome = match phase {
        Phase::Finetune => fine_tune(params, &encoded, &cfg, start_step, history, &mut scorer)?,
        _ => train(params, &encoded, &cfg, phase, history, &mut scorer)?,
    };
    if outcome.checkpoints.is_empty() {
        return Err(Error::Experiment(format!(
            "{phase} phase produced no checkpoints; raise max_steps or lower eval_every"
        )));
    }
    Ok(outcome)
}

fn run_seed(
    config: &ExperimentConfig,
    data: &SeedData,
    seed: u64,
    seed_dir: &Path,
    cache_dir: &Path,
) -> Result<SeedOutcome> {
    let init_seed = derive_seed(seed, SALT_FWD_INIT);
    let mut history = EvalHistory::new();
    let mut phases: Vec<PhaseRun> = Vec::new();

    match config.strategy {
        Strategy::Baseline => {
            let (bpe, vocab) = learn_artifacts(&[&data.authentic], config)?;
            let mut params = Params::init(config.hyper, vocab.size(), init_seed)?;
            let outcome = run_phase(
                &mut params,
                &data.authentic,
                &bpe,
                &vocab,
                config,
                Phase::Single,
                0,
                0,
                seed,
                &mut history,
                &data.dev,
            )?;
            phases.push(PhaseRun {
                phase: Phase::Single,
                outcome,
                bpe,
                vocab,
            });
        }
        Strategy::StandardBt | Strategy::TaggedBt => {
            let subset = subset_for(config, data, seed, cache_dir)?;
            let (bpe, vocab) = learn_artifacts(&[&data.authentic, &subset], config)?;
            let blended = if config.strategy == Strategy::TaggedBt {
                tag_synthetic(&subset, BT_TAG)
            } else {
                subset
            };
            let mixture = mix(
                &data.authentic,
                &blended,
                config.ratio,
                derive_seed(seed, SALT_MIX),
            )?;
            let mut params = Params::init(config.hyper, vocab.size(), init_seed)?;
            let outcome = run_phase(
                &mut params,
                &mixture,
                &bpe,
                &vocab,
                config,
                Phase::Single,
                0,
                0,
                seed,
                &mut history,
                &data.dev,
            )?;
            phases.push(PhaseRun {
                phase: Phase::Single,
                outcome,
                bpe,
                vocab,
            });
        }
        Strategy::TaglessJointBpe => {
            let subset = subset_for(config, data, seed, cache_dir)?;
            let (bpe, vocab) = learn_artifacts(&[&data.authentic, &subset], config)?;
            let mut params = Params::init(config.hyper, vocab.size(), init_seed)?;
            let pre = run_phase(
                &mut params,
                &subset,
                &bpe,
                &vocab,
                config,
                Phase::Pretrain,
                0,
                0,
                seed,
                &mut history,
                &data.dev,
            )?;
            let start = pre.final_step;
            phases.push(PhaseRun {
                phase: Phase::Pretrain,
                outcome: pre,
                bpe: bpe.clone(),
                vocab: vocab.clone(),
            });
            let fine = run_phase(
                &mut params,
                &data.authentic,
                &bpe,
                &vocab,
                config,
                Phase::Finetune,
                1,
                start,
                seed,
                &mut history,
                &data.dev,
            )?;
            phases.push(PhaseRun {
                phase: Phase::Finetune,
                outcome: fine,
                bpe,
                vocab,
            });
        }
        Strategy::TaglessSeparateBpe => {
            let subset = subset_for(config, data, seed, cache_dir)?;
            let (bpe, vocab_pre) = learn_artifacts(&[&subset], config)?;
            let mut params = Params::init(config.hyper, vocab_pre.size(), init_seed)?;
            let pre = run_phase(
                &mut params,
                &subset,
                &bpe,
                &vocab_pre,
                config,
                Phase::Pretrain,
                0,
                0,
                seed,
                &mut history,
                &data.dev,
            )?;
            let start = pre.final_step;
            phases.push(PhaseRun {
                phase: Phase::Pretrain,
                outcome: pre,
                bpe: bpe.clone(),
                vocab: vocab_pre.clone(),
            });
            // Same merges, fresh token inventory for the authentic text;
            // embeddings carry over where tokens coincide.
            let vocab_fine = rebuild_vocab(&data.authentic, &bpe, config)?;
            let mut params = remap_vocab(
                &params,
                &vocab_pre,
                &vocab_fine,
                derive_seed(seed, SALT_REMAP),
            )?;
            let fine = run_phase(
                &mut params,
                &data.authentic,
                &bpe,
                &vocab_fine,
                config,
                Phase::Finetune,
                1,
                start,
                seed,
                &mut history,
                &data.dev,
            )?;
            phases.push(PhaseRun {
                phase: Phase::Finetune,
                outcome: fine,
                bpe,
                vocab: vocab_fine,
            });
        }
        Strategy::ReverseTagless => {
            let subset = subset_for(config, data, seed, cache_dir)?;
            let (bpe, vocab) = learn_artifacts(&[&data.authentic, &subset], config)?;
            let mut params = Params::init(config.hyper, vocab.size(), init_seed)?;
            let pre = run_phase(
                &mut params,
                &data.authentic,
                &bpe,
                &vocab,
                config,
                Phase::Pretrain,
                0,
                0,
                seed,
                &mut history,
                &data.dev,
            )?;
            let start = pre.final_step;
            phases.push(PhaseRun {
                phase: Phase::Pretrain,
                outcome: pre,
                bpe: bpe.clone(),
                vocab: vocab.clone(),
            });
            let fine = run_phase(
                &mut params,
                &subset,
                &bpe,
                &vocab,
                config,
                Phase::Finetune,
                1,
                start,
                seed,
                &mut history,
                &data.dev,
            )?;
            phases.push(PhaseRun {
                phase: Phase::Finetune,
                outcome: fine,
                bpe,
                vocab,
            });
        }
        Strategy::FinetuneStandardBt | Strategy::FinetuneTaggedBt => {
            let subset = subset_for(config, data, seed, cache_dir)?;
            let (bpe, vocab) = learn_artifacts(&[&data.authentic, &subset], config)?;
            let blended = if config.strategy == Strategy::FinetuneTaggedBt {
                tag_synthetic(&subset, BT_TAG)
            } else {
                subset
            };
            let mixture = mix(
                &data.authentic,
                &blended,
                config.ratio,
                derive_seed(seed, SALT_MIX),
            )?;
            let mut params = Params::init(config.hyper, vocab.size(), init_seed)?;
            let pre = run_phase(
                &mut params,
                &mixture,
                &bpe,
                &vocab,
                config,
                Phase::Pretrain,
                0,
                0,
                seed,
                &mut history,
                &data.dev,
            )?;
            let start = pre.final_step;
            phases.push(PhaseRun {
                phase: Phase::Pretrain,
                outcome: pre,
                bpe: bpe.clone(),
                vocab: vocab.clone(),
            });
            let fine = run_phase(
                &mut params,
                &data.authentic,
                &bpe,
                &vocab,
                config,
                Phase::Finetune,
                1,
                start,
                seed,
                &mut history,
                &data.dev,
            )?;
            phases.push(PhaseRun {
                phase: Phase::Finetune,
                outcome: fine,
                bpe,
                vocab,
            });
        }
    }

    // Test curve: greedy test BLEU of every checkpoint, decoded with the
    // artifacts of its own phase. Dev alone drives stopping; this is
    // reporting only.
    let decode_len = config.beam.max_len;
    let batch = config.train.batch_size;
    let mut test_curve = Vec::new();
    for run in &phases {
        for c in &run.outcome.checkpoints {
            let b = greedy_corpus_bleu(&c.params, &data.test, &run.bpe, &run.vocab, decode_len, batch)?;
            test_curve.push(CurvePoint {
                step: c.step,
                bleu: b,
                phase: run.phase,
            });
        }
    }

    let last = phases.last().expect("every strategy runs at least one phase");
    let checkpoints = &last.outcome.checkpoints;
    let best = &checkpoints[last
        .outcome
        .best_index()
        .expect("phases with zero checkpoints are rejected earlier")];
    let best_report = evaluate_model(&best.params, &data.test, &last.bpe, &last.vocab, &config.beam)?;
    let averaged = average_checkpoints(tail(checkpoints, AVG_WINDOW))?;
    let translations = translate_corpus(&averaged, &data.test, &last.bpe, &last.vocab, &config.beam)?;
    let references: Vec<Sentence> = data.test.pairs.iter().map(|p| p.target.clone()).collect();
    let averaged_bleu = bleu(&translations, &references)?.bleu;
    let averaged_dev =
        greedy_corpus_bleu(&averaged, &data.dev, &last.bpe, &last.vocab, decode_len, batch)?;

    fs::create_dir_all(seed_dir).map_err(|e| Error::io(seed_dir, e))?;
    history.save(&seed_dir.join("history.csv"))?;
    let ckpt_dir = seed_dir.join("checkpoints");
    save_checkpoint(&ckpt_dir.join("best"), best, config.strategy.id(), seed)?;
    let averaged_ckpt = Checkpoint {
        step: last.outcome.final_step,
        dev_bleu: averaged_dev,
        params: averaged,
    };
    save_checkpoint(&ckpt_dir.join("averaged"), &averaged_ckpt, config.strategy.id(), seed)?;
    MonolingualCorpus {
        sentences: translations.clone(),
    }
    .save(&seed_dir.join("test_translations.txt"))?;
    let rows: Vec<CurveRow> = test_curve
        .iter()
        .map(|p| CurveRow {
            step: p.step,
            bleu: p.bleu,
            phase: p.phase,
            strategy: config.strategy.id().to_string(),
            seed,
        })
        .collect();
    write_curves_csv(&rows, &seed_dir.join("curve.csv"))?;
    last.bpe.save(&seed_dir.join("bpe.codes"))?;
    last.vocab.save(&seed_dir.join("vocab.txt"))?;

    Ok(SeedOutcome {
        seed,
        history,
        best_step: best.step,
        best_bleu: best_report.bleu,
        averaged_bleu,
        test_curve,
        test_translations: translations,
    })
}

/// Runs the configured strategy for every seed, writing per-seed artifacts
/// under `out_dir/<config-hash>/<strategy>/<seed>/` and a summary one level
/// up. `cache_dir` holds the shared back-translated corpora.
pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    cache_dir: &Path,
) -> Result<ExperimentRecord> {
    config.validate()?;
    let hash = config.config_hash();
    let strategy_dir = out_dir.join(&hash).join(config.strategy.id());
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let data = load_seed_data(config, seed)?;
        let seed_dir = strategy_dir.join(seed.to_string());
        seeds.push(run_seed(config, &data, seed, &seed_dir, cache_dir)?);
    }
    let record = ExperimentRecord {
        strategy: config.strategy,
        config_hash: hash,
        seeds,
    };
    write_summary(&record, &strategy_dir.join("summary.txt"))?;
    Ok(record)
}

fn write_summary(record: &ExperimentRecord, path: &Path) -> Result<()> {
    let mut s = String::new();
    s.push_str(&format!("strategy {}\n", record.strategy));
    s.push_str(&format!("config_hash {}\n", record.config_hash));
    for seed in &record.seeds {
        s.push_str(&format!(
            "seed {} best_step {} best_bleu {:.4} averaged_bleu {:.4}\n",
            seed.seed, seed.best_step, seed.best_bleu, seed.averaged_bleu
        ));
    }
    s.push_str(&format!(
        "mean_best_bleu {:.4}\nmean_averaged_bleu {:.4}\n",
        record.mean_best_bleu(),
        record.mean_averaged_bleu()
    ));
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// One line of the pairwise significance table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy_a: String,
    pub strategy_b: String,
    /// Full-corpus BLEU(A) - BLEU(B).
    pub bleu_diff: f64,
    /// One bootstrap report per entry of [`COMPARE_SAMPLE_SIZES`].
    pub by_sample_size: Vec<SignificanceReport>,
}

/// Pairwise paired-bootstrap comparison over the stored first-seed test
/// translations of every ordered record pair.
pub fn compare(
    records: &[ExperimentRecord],
    references: &[Sentence],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    for r in records {
        let t = r
            .seeds
            .first()
            .ok_or_else(|| Error::Experiment(format!("record {} has no seeds", r.strategy)))?;
        if t.test_translations.len() != references.len() {
            return Err(Error::Experiment(format!(
                "record {} stores {} translations but {} references were given; the records do not share a test set",
                r.strategy,
                t.test_translations.len(),
                references.len()
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, a) in records.iter().enumerate() {
        for (j, b) in records.iter().enumerate() {
            if i == j {
                continue;
            }
            let ta = &a.seeds[0].test_translations;
            let tb = &b.seeds[0].test_translations;
            let by_sample_size: Vec<SignificanceReport> = COMPARE_SAMPLE_SIZES
                .iter()
                .map(|&ss| paired_bootstrap(ta, tb, references, n_samples, ss, seed))
                .collect::<Result<_>>()?;
            rows.push(ComparisonRow {
                strategy_a: a.strategy.id().to_string(),
                strategy_b: b.strategy.id().to_string(),
                bleu_diff: by_sample_size[0].bleu_diff,
                by_sample_size,
            });
        }
    }
    Ok(rows)
}

/// Human-readable fixed-width table of [`compare`] output: how often system A
/// beat system B across bootstrap samples, by sample size.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<22} {:<22} {:>10}  {:>7} {:>7} {:>7}\n",
        "system_a", "system_b", "bleu_diff", "n=100", "n=500", "n=1000"
    ));
    for row in rows {
        s.push_str(&format!(
            "{:<22} {:<22} {:>10.4}",
            row.strategy_a, row.strategy_b, row.bleu_diff
        ));
        for rep in &row.by_sample_size {
            s.push_str(&format!("  {:>6.3}", rep.superiority_frequency));
        }
        s.push('\n');
    }
    s
}

/// One row of the curves CSV: a checkpoint's test BLEU with its coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub bleu: f64,
    pub phase: Phase,
    pub strategy: String,
    pub seed: u64,
}

pub fn curve_rows(records: &[ExperimentRecord]) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for record in records {
        for seed in &record.seeds {
            for p in &seed.test_curve {
                rows.push(CurveRow {
                    step: p.step,
                    bleu: p.bleu,
                    phase: p.phase,
                    strategy: record.strategy.id().to_string(),
                    seed: seed.seed,
                });
            }
        }
    }
    rows
}

/// CSV with header `step,bleu,phase,strategy,seed`. Floats use the shortest
/// round-tripping decimal form.
pub fn write_curves_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Experiment(e.to_string());
    w.write_record(["step", "bleu", "phase", "strategy", "seed"])
        .map_err(fail)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            format!("{}", r.bleu),
            r.phase.to_string(),
            r.strategy.clone(),
            r.seed.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Experiment(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let malformed = |line: usize, reason: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let headers = r
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["step", "bleu", "phase", "strategy", "seed"] {
        return Err(malformed(1, format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(malformed(line, format!("expected 5 fields, got {}", rec.len())));
        }
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        rows.push(CurveRow {
            step: field(0)
                .parse()
                .map_err(|e| malformed(line, format!("step: {e}")))?,
            bleu: field(1)
                .parse()
                .map_err(|e| malformed(line, format!("bleu: {e}")))?,
            phase: field(2)
                .parse()
                .map_err(|e: Error| malformed(line, e.to_string()))?,
            strategy: field(3).to_string(),
            seed: field(4)
                .parse()
                .map_err(|e| malformed(line, format!("seed: {e}")))?,
        });
    }
    Ok(rows)
}

/// Renders the score curves as an SVG line plot: one polyline per
/// (strategy, seed, phase) so a phase switch shows as a visible break,
/// colored by strategy, dashed by seed order. Pure function of `rows`.
pub fn render_curves_svg(rows: &[CurveRow], path: &Path) -> Result<()> {
    const PALETTE: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
    ];
    const DASHES: [&str; 4] = ["none", "7 3", "2 2", "7 3 2 3"];
    let (left, right, top, bottom) = (60.0, 620.0, 20.0, 460.0);

    let min_step = rows.iter().map(|r| r.step).min().unwrap_or(0);
    let max_step = rows.iter().map(|r| r.step).max().unwrap_or(1);
    let span = (max_step.saturating_sub(min_step)).max(1) as f64;
    let y_top = rows.iter().map(|r| r.bleu).fold(0.0_f64, f64::max).max(1.0) * 1.05;
    let x = |step: u64| left + (step - min_step) as f64 / span * (right - left);
    let y = |b: f64| bottom - b / y_top * (bottom - top);

    let mut strategies: Vec<&str> = Vec::new();
    for r in rows {
        if !strategies.contains(&r.strategy.as_str()) {
            strategies.push(&r.strategy);
        }
    }
    let mut seeds_by_strategy: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for r in rows {
        let seeds = seeds_by_strategy.entry(&r.strategy).or_default();
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }

    let mut svg = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" viewBox=\"0 0 800 500\">\n<rect width=\"800\" height=\"500\" fill=\"white\"/>\n",
    );
    // Axes with five horizontal gridlines.
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let gy = bottom - frac * (bottom - top);
        svg.push_str(&format!(
            "<line x1=\"{left:.2}\" y1=\"{gy:.2}\" x2=\"{right:.2}\" y2=\"{gy:.2}\" stroke=\"#dddddd\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{:.1}</text>\n",
            left - 6.0,
            gy + 4.0,
            frac * y_top
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{left:.2}\" y1=\"{top:.2}\" x2=\"{left:.2}\" y2=\"{bottom:.2}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{left:.2}\" y1=\"{bottom:.2}\" x2=\"{right:.2}\" y2=\"{bottom:.2}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{left:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{min_step}</text>\n",
        bottom + 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"{right:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{max_step}</text>\n",
        bottom + 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">training step</text>\n",
        (left + right) / 2.0,
        bottom + 32.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">test BLEU</text>\n",
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    ));

    // Series in row order: consecutive rows with the same identity and phase
    // form one polyline.
    let mut i = 0;
    while i < rows.len() {
        let head = &rows[i];
        let mut j = i;
        while j < rows.len() {
            let r = &rows[j];
            if r.strategy != head.strategy || r.seed != head.seed || r.phase != head.phase {
                break;
            }
            j += 1;
        }
        let color_idx = strategies.iter().position(|s| *s == head.strategy).unwrap_or(0);
        let color = PALETTE[color_idx % PALETTE.len()];
        let seed_idx = seeds_by_strategy[head.strategy.as_str()]
            .iter()
            .position(|&s| s == head.seed)
            .unwrap_or(0);
        let dash = DASHES[seed_idx % DASHES.len()];
        if j - i == 1 {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                x(head.step),
                y(head.bleu)
            ));
        } else {
            let points: Vec<String> = rows[i..j]
                .iter()
                .map(|r| format!("{:.2},{:.2}", x(r.step), y(r.bleu)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" stroke-dasharray=\"{dash}\" points=\"{}\"/>\n",
                points.join(" ")
            ));
        }
        i = j;
    }

    for (k, name) in strategies.iter().enumerate() {
        let ly = top + 14.0 * k as f64 + 8.0;
        let color = PALETTE[k % PALETTE.len()];
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            right + 14.0,
            right + 40.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{name}</text>\n",
            right + 46.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Writes `curves.csv` for all records, then re-reads that CSV and renders
/// `curves.svg` from the parsed rows, so the plot provably depends on the CSV
/// alone. Returns the two paths.
pub fn emit_curves(records: &[ExperimentRecord], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("curves.csv");
    write_curves_csv(&curve_rows(records), &csv_path)?;
    let rows = read_curves_csv(&csv_path)?;
    let svg_path = dir.join("curves.svg");
    render_curves_svg(&rows, &svg_path)?;
    Ok((csv_path, svg_path))
}

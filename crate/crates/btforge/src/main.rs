//! Command-line entry point. Every subcommand wraps one library operation
//! (or a small composition) and speaks the same file formats as the library:
//! one-sentence-per-line text, merges/vocab files, checkpoint directories,
//! flat `key = value` experiment configs.
//!
//! Exit codes: 0 on success, 1 with `ERROR <stage>: <message>` on stderr for
//! any runtime failure, 2 for usage errors (clap). All randomness flows from
//! `--seed`; nothing is written outside `--out` (or the explicitly given
//! output/cache paths).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use btforge::corpus::{generate_toy, MonolingualCorpus, ParallelCorpus, Provenance, ToySpec};
use btforge::decoder::{back_translate, translate, BeamConfig};
use btforge::evaluator::{bleu_with_options, paired_bootstrap};
use btforge::model::{AttentionKind, EncoderDirection, Hyperparams};
use btforge::pipeline::{
    self, default_cache_dir, encode_pairs, greedy_corpus_bleu, read_curves_csv,
    render_curves_svg, write_curves_csv, CurveRow, ExperimentConfig, Strategy,
};
use btforge::subword::{build_vocab, learn_bpe, BpeModel, Vocabulary};
use btforge::trainer::{
    average_checkpoints, fine_tune, load_checkpoint, save_checkpoint, train, Checkpoint,
    EvalHistory, Phase, TrainConfig,
};
use btforge::{Error, Params, Real, Result};

#[derive(Parser)]
#[command(
    name = "btforge",
    version,
    about = "Back-translation experimentation toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the deterministic toy language pair (train/mono/dev/test).
    GenToy(GenToyArgs),
    /// Learn BPE merges from text files.
    LearnBpe(LearnBpeArgs),
    /// Segment a text file with learned merges.
    ApplyBpe(ApplyBpeArgs),
    /// Build a token vocabulary from segmented text files.
    BuildVocab(BuildVocabArgs),
    /// Train a model from scratch on a parallel corpus.
    Train(TrainArgs),
    /// Continue training a saved checkpoint on new data.
    FineTune(FineTuneArgs),
    /// Beam-translate a text file with a saved checkpoint.
    Translate(TranslateArgs),
    /// Back-translate monolingual text into a synthetic parallel corpus.
    BackTranslate(BackTranslateArgs),
    /// Score a hypothesis file against a reference file (corpus BLEU).
    Evaluate(EvaluateArgs),
    /// Paired bootstrap significance between two hypothesis files.
    Significance(SignificanceArgs),
    /// Average saved checkpoints into one model.
    AverageCheckpoints(AverageArgs),
    /// Run a full experiment from a config file.
    RunExperiment(RunExperimentArgs),
    /// Merge per-seed curve files into one CSV and render the plot.
    EmitCurves(EmitCurvesArgs),
}

#[derive(Args)]
struct GenToyArgs {
    /// Output directory for the seven split files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 2000)]
    authentic: usize,
    #[arg(long, default_value_t = 6000)]
    monolingual: usize,
    #[arg(long, default_value_t = 150)]
    dev: usize,
    #[arg(long, default_value_t = 300)]
    test: usize,
    /// Reverse target word order relative to the source.
    #[arg(long)]
    reversed: bool,
}

#[derive(Args)]
struct LearnBpeArgs {
    /// Input text files; merges are learned over all of them jointly.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    merges: usize,
    /// Tokens kept atomic during learning (repeatable).
    #[arg(long = "reserved")]
    reserved: Vec<String>,
    /// Output merges file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApplyBpeArgs {
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Tokens the merges file was learned with (repeatable).
    #[arg(long = "reserved")]
    reserved: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Segmented input text files.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    max_size: usize,
    /// Reserved tag tokens placed right after the structural specials
    /// (repeatable).
    #[arg(long = "reserved-tag")]
    reserved_tags: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Training-loop settings shared by `train` and `fine-tune`.
#[derive(Args)]
struct TrainLoopArgs {
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, default_value_t = 5000)]
    eval_every: u64,
    #[arg(long, default_value_t = 4)]
    patience: usize,
    #[arg(long, default_value_t = 0.2)]
    min_delta: f64,
    /// Hard step cap; omit to train until the stopping rule fires.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Length cap for greedy dev decoding.
    #[arg(long, default_value_t = 50)]
    decode_max_len: usize,
}

impl TrainLoopArgs {
    fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            dropout_p: self.dropout,
            eval_every: self.eval_every,
            patience_evals: self.patience,
            min_delta_bleu: self.min_delta,
            max_steps: self.max_steps,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct ModelShapeArgs {
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 2)]
    n_layers: usize,
    #[arg(long, default_value = "additive", value_parser = AttentionKind::from_str)]
    attention: AttentionKind,
    #[arg(long, default_value = "uni", value_parser = EncoderDirection::from_str)]
    direction: EncoderDirection,
}

impl ModelShapeArgs {
    fn to_hyper(&self) -> Hyperparams {
        Hyperparams {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
            attention: self.attention,
            direction: self.direction,
        }
    }
}

/// Subword artifacts every model-running subcommand loads.
#[derive(Args)]
struct ArtifactArgs {
    /// Merges file from `learn-bpe`.
    #[arg(long)]
    codes: PathBuf,
    /// Vocabulary file from `build-vocab`.
    #[arg(long)]
    vocab: PathBuf,
    /// Reserved tags the artifacts were built with (repeatable).
    #[arg(long = "reserved-tag")]
    reserved_tags: Vec<String>,
}

impl ArtifactArgs {
    fn load(&self) -> Result<(BpeModel, Vocabulary)> {
        let reserved: BTreeSet<String> = self.reserved_tags.iter().cloned().collect();
        let bpe = BpeModel::load(&self.codes, &reserved)?;
        let vocab = Vocabulary::load(&self.vocab, &self.reserved_tags)?;
        Ok((bpe, vocab))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    dev_src: PathBuf,
    #[arg(long)]
    dev_tgt: PathBuf,
    #[command(flatten)]
    artifacts: ArtifactArgs,
    /// Output directory (history.csv, best/, averaged/).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Label stored in the checkpoint metadata.
    #[arg(long, default_value = "run")]
    label: String,
    #[command(flatten)]
    shape: ModelShapeArgs,
    #[command(flatten)]
    train_loop: TrainLoopArgs,
}

#[derive(Args)]
struct FineTuneArgs {
    /// Checkpoint directory to continue from.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    dev_src: PathBuf,
    #[arg(long)]
    dev_tgt: PathBuf,
    #[command(flatten)]
    artifacts: ArtifactArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Overrides the label carried over from the loaded checkpoint.
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    train_loop: TrainLoopArgs,
}

#[derive(Args)]
struct BeamArgs {
    #[arg(long, default_value_t = 5)]
    beam_size: usize,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
    #[arg(long, default_value_t = 0.6)]
    alpha: f64,
}

impl BeamArgs {
    fn to_config(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            max_len: self.max_len,
            length_norm_alpha: self.alpha,
        }
    }
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    artifacts: ArtifactArgs,
    /// Source sentences, one per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    beam: BeamArgs,
}

#[derive(Args)]
struct BackTranslateArgs {
    /// Backward-model checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    artifacts: ArtifactArgs,
    /// Target-language monolingual text.
    #[arg(long)]
    mono: PathBuf,
    /// Synthetic source side (the translations).
    #[arg(long)]
    out_src: PathBuf,
    /// Synthetic target side (the monolingual text, copied).
    #[arg(long)]
    out_tgt: PathBuf,
    #[command(flatten)]
    beam: BeamArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Add-one smoothing for n-gram orders 2-4.
    #[arg(long)]
    smoothing: bool,
}

#[derive(Args)]
struct SignificanceArgs {
    #[arg(long)]
    hyp_a: PathBuf,
    #[arg(long)]
    hyp_b: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,
    /// Bootstrap sample sizes (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [100, 500, 1000])]
    sample_sizes: Vec<usize>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct AverageArgs {
    /// Checkpoint directories to blend (repeatable).
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    checkpoints: Vec<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunExperimentArgs {
    /// Experiment config file (flat `key = value`).
    #[arg(long)]
    config: PathBuf,
    /// Results root; artifacts land under `<out>/<config-hash>/...`.
    #[arg(long)]
    out: PathBuf,
    /// Back-translation cache directory. Defaults to $BTFORGE_CACHE, then
    /// `.btforge-cache`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Overrides the strategy from the config file (flags win).
    #[arg(long, value_parser = Strategy::from_str)]
    strategy: Option<Strategy>,
    /// Overrides the mixing ratio, as `a:s`.
    #[arg(long)]
    ratio: Option<String>,
    /// Overrides the seed list (comma separated).
    #[arg(long)]
    seeds: Option<String>,
    /// Accepted for compatibility; runs execute sequentially in this build.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EmitCurvesArgs {
    /// A `<results>/<config-hash>` directory containing
    /// `<strategy>/<seed>/curve.csv` files.
    #[arg(long)]
    runs: PathBuf,
    /// Output directory for curves.csv and curves.svg.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("ERROR {}: {e}", e.stage());
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenToy(a) => gen_toy(a),
        Command::LearnBpe(a) => learn_bpe_cmd(a),
        Command::ApplyBpe(a) => apply_bpe_cmd(a),
        Command::BuildVocab(a) => build_vocab_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::FineTune(a) => fine_tune_cmd(a),
        Command::Translate(a) => translate_cmd(a),
        Command::BackTranslate(a) => back_translate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Significance(a) => significance_cmd(a),
        Command::AverageCheckpoints(a) => average_cmd(a),
        Command::RunExperiment(a) => run_experiment_cmd(a),
        Command::EmitCurves(a) => emit_curves_cmd(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn gen_toy(a: GenToyArgs) -> Result<()> {
    let spec = ToySpec {
        vocab_size: a.vocab_size,
        min_len: a.min_len,
        max_len: a.max_len,
        n_authentic: a.authentic,
        n_monolingual: a.monolingual,
        n_dev: a.dev,
        n_test: a.test,
        reversed: a.reversed,
    };
    let toy = generate_toy(&spec, a.seed)?;
    create_dir(&a.out)?;
    toy.authentic
        .save(&a.out.join("train.src"), &a.out.join("train.tgt"))?;
    toy.mono.save(&a.out.join("mono.tgt"))?;
    toy.dev.save(&a.out.join("dev.src"), &a.out.join("dev.tgt"))?;
    toy.test
        .save(&a.out.join("test.src"), &a.out.join("test.tgt"))?;
    println!("toy train {} pairs", toy.authentic.len());
    println!("toy mono {} sentences", toy.mono.len());
    println!("toy dev {} pairs", toy.dev.len());
    println!("toy test {} pairs", toy.test.len());
    Ok(())
}

fn load_mono_files(paths: &[PathBuf]) -> Result<Vec<MonolingualCorpus>> {
    paths.iter().map(|p| MonolingualCorpus::load(p)).collect()
}

fn learn_bpe_cmd(a: LearnBpeArgs) -> Result<()> {
    let corpora = load_mono_files(&a.input)?;
    let reserved: BTreeSet<String> = a.reserved.iter().cloned().collect();
    let model = learn_bpe(
        corpora.iter().flat_map(|c| c.sentences.iter()),
        a.merges,
        &reserved,
    );
    model.save(&a.out)?;
    println!("learned {} merges", model.merges.len());
    Ok(())
}

fn apply_bpe_cmd(a: ApplyBpeArgs) -> Result<()> {
    let reserved: BTreeSet<String> = a.reserved.iter().cloned().collect();
    let model = BpeModel::load(&a.codes, &reserved)?;
    let input = MonolingualCorpus::load(&a.input)?;
    let segmented = model.apply_mono(&input);
    segmented.save(&a.out)?;
    println!("segmented {} sentences", segmented.len());
    Ok(())
}

fn build_vocab_cmd(a: BuildVocabArgs) -> Result<()> {
    let corpora = load_mono_files(&a.input)?;
    let vocab = build_vocab(
        corpora.iter().flat_map(|c| c.sentences.iter()),
        a.max_size,
        &a.reserved_tags,
    )?;
    vocab.save(&a.out)?;
    println!("vocabulary of {} tokens", vocab.size());
    Ok(())
}

fn print_history(history: &EvalHistory) {
    for e in &history.entries {
        println!("step={} dev_bleu={} phase={}", e.step, e.dev_bleu, e.phase);
    }
}

/// Saves the run artifacts shared by `train` and `fine-tune`: the dev
/// history, the best-dev checkpoint and the trailing-window average.
fn save_run(
    out: &Path,
    history: &EvalHistory,
    checkpoints: &[Checkpoint<Real>],
    best_index: usize,
    label: &str,
    seed: u64,
    averaged_dev: f64,
    final_step: u64,
) -> Result<()> {
    create_dir(out)?;
    history.save(&out.join("history.csv"))?;
    save_checkpoint(&out.join("best"), &checkpoints[best_index], label, seed)?;
    let window = &checkpoints[checkpoints.len().saturating_sub(pipeline::AVG_WINDOW)..];
    let averaged = Checkpoint {
        step: final_step,
        dev_bleu: averaged_dev,
        params: average_checkpoints(window)?,
    };
    save_checkpoint(&out.join("averaged"), &averaged, label, seed)?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (bpe, vocab) = a.artifacts.load()?;
    let corpus = ParallelCorpus::load(&a.train_src, &a.train_tgt, Provenance::Authentic)?;
    let dev = ParallelCorpus::load(&a.dev_src, &a.dev_tgt, Provenance::Authentic)?;
    let encoded = encode_pairs(&corpus, &bpe, &vocab);
    let config = a.train_loop.to_config(a.seed);
    let decode_len = a.train_loop.decode_max_len;
    let batch = config.batch_size;
    let mut params = Params::init(a.shape.to_hyper(), vocab.size(), a.seed)?;
    let mut history = EvalHistory::new();
    let outcome = train(
        &mut params,
        &encoded,
        &config,
        Phase::Single,
        &mut history,
        &mut |p: &Params| greedy_corpus_bleu(p, &dev, &bpe, &vocab, decode_len, batch),
    )?;
    print_history(&history);
    let best = outcome.best_index().ok_or_else(|| {
        Error::Experiment("training produced no checkpoints; raise max_steps or lower eval_every".into())
    })?;
    let window_start = outcome.checkpoints.len().saturating_sub(pipeline::AVG_WINDOW);
    let averaged = average_checkpoints(&outcome.checkpoints[window_start..])?;
    let averaged_dev = greedy_corpus_bleu(&averaged, &dev, &bpe, &vocab, decode_len, batch)?;
    save_run(
        &a.out,
        &history,
        &outcome.checkpoints,
        best,
        &a.label,
        a.seed,
        averaged_dev,
        outcome.final_step,
    )?;
    println!(
        "best step={} dev_bleu={} averaged dev_bleu={}",
        outcome.checkpoints[best].step, outcome.checkpoints[best].dev_bleu, averaged_dev
    );
    Ok(())
}

fn fine_tune_cmd(a: FineTuneArgs) -> Result<()> {
    let (bpe, vocab) = a.artifacts.load()?;
    let (loaded, loaded_label, _) = load_checkpoint::<Real>(&a.checkpoint)?;
    let label = a.label.clone().unwrap_or(loaded_label);
    let corpus = ParallelCorpus::load(&a.train_src, &a.train_tgt, Provenance::Authentic)?;
    let dev = ParallelCorpus::load(&a.dev_src, &a.dev_tgt, Provenance::Authentic)?;
    let encoded = encode_pairs(&corpus, &bpe, &vocab);
    let config = a.train_loop.to_config(a.seed);
    let decode_len = a.train_loop.decode_max_len;
    let batch = config.batch_size;
    let mut params = loaded.params;
    let mut history = EvalHistory::new();
    let outcome = fine_tune(
        &mut params,
        &encoded,
        &config,
        loaded.step,
        &mut history,
        &mut |p: &Params| greedy_corpus_bleu(p, &dev, &bpe, &vocab, decode_len, batch),
    )?;
    print_history(&history);
    let best = outcome.best_index().ok_or_else(|| {
        Error::Experiment("fine-tuning produced no checkpoints; raise max_steps or lower eval_every".into())
    })?;
    let window_start = outcome.checkpoints.len().saturating_sub(pipeline::AVG_WINDOW);
    let averaged = average_checkpoints(&outcome.checkpoints[window_start..])?;
    let averaged_dev = greedy_corpus_bleu(&averaged, &dev, &bpe, &vocab, decode_len, batch)?;
    save_run(
        &a.out,
        &history,
        &outcome.checkpoints,
        best,
        &label,
        a.seed,
        averaged_dev,
        outcome.final_step,
    )?;
    println!(
        "best step={} dev_bleu={} averaged dev_bleu={}",
        outcome.checkpoints[best].step, outcome.checkpoints[best].dev_bleu, averaged_dev
    );
    Ok(())
}

fn translate_cmd(a: TranslateArgs) -> Result<()> {
    let (bpe, vocab) = a.artifacts.load()?;
    let (ckpt, _, _) = load_checkpoint::<Real>(&a.checkpoint)?;
    let input = MonolingualCorpus::load(&a.input)?;
    let beam = a.beam.to_config();
    let sentences = input
        .sentences
        .iter()
        .map(|s| translate(&ckpt.params, s, &bpe, &vocab, &beam))
        .collect::<Result<Vec<_>>>()?;
    MonolingualCorpus { sentences }.save(&a.out)?;
    println!("translated {} sentences", input.len());
    Ok(())
}

fn back_translate_cmd(a: BackTranslateArgs) -> Result<()> {
    let (bpe, vocab) = a.artifacts.load()?;
    let (ckpt, _, _) = load_checkpoint::<Real>(&a.checkpoint)?;
    let mono = MonolingualCorpus::load(&a.mono)?;
    let synthetic = back_translate(&ckpt.params, &mono, &bpe, &vocab, &a.beam.to_config())?;
    synthetic.save(&a.out_src, &a.out_tgt)?;
    println!("back-translated {} sentences", synthetic.len());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let hyp = MonolingualCorpus::load(&a.hyp)?;
    let refs = MonolingualCorpus::load(&a.refs)?;
    let report = bleu_with_options(&hyp.sentences, &refs.sentences, a.smoothing)?;
    let ratio = if report.ref_len == 0 {
        0.0
    } else {
        report.hyp_len as f64 / report.ref_len as f64
    };
    println!(
        "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
        report.bleu,
        report.precisions[0] * 100.0,
        report.precisions[1] * 100.0,
        report.precisions[2] * 100.0,
        report.precisions[3] * 100.0,
        report.brevity_penalty,
        ratio,
        report.hyp_len,
        report.ref_len
    );
    if report.degenerate {
        println!("note: some n-gram order has no hypothesis n-grams at all");
    }
    Ok(())
}

fn significance_cmd(a: SignificanceArgs) -> Result<()> {
    let hyp_a = MonolingualCorpus::load(&a.hyp_a)?;
    let hyp_b = MonolingualCorpus::load(&a.hyp_b)?;
    let refs = MonolingualCorpus::load(&a.refs)?;
    for &size in &a.sample_sizes {
        let report = paired_bootstrap(
            &hyp_a.sentences,
            &hyp_b.sentences,
            &refs.sentences,
            a.n_samples,
            size,
            a.seed,
        )?;
        println!(
            "sample_size={} bleu_diff={:.4} frequency={:.4} n_samples={}",
            report.sample_size, report.bleu_diff, report.superiority_frequency, report.n_samples
        );
    }
    Ok(())
}

fn average_cmd(a: AverageArgs) -> Result<()> {
    let mut checkpoints = Vec::new();
    let mut label = String::from("averaged");
    let mut rng_state = 0;
    for (i, dir) in a.checkpoints.iter().enumerate() {
        let (ckpt, l, r) = load_checkpoint::<Real>(dir)?;
        if i == 0 {
            label = l;
            rng_state = r;
        }
        checkpoints.push(ckpt);
    }
    let averaged = average_checkpoints(&checkpoints)?;
    let step = checkpoints.iter().map(|c| c.step).max().unwrap_or(0);
    let dev = checkpoints.iter().map(|c| c.dev_bleu).sum::<f64>() / checkpoints.len() as f64;
    save_checkpoint(
        &a.out,
        &Checkpoint {
            step,
            dev_bleu: dev,
            params: averaged,
        },
        &label,
        rng_state,
    )?;
    println!("averaged {} checkpoints", checkpoints.len());
    Ok(())
}

fn parse_ratio(s: &str) -> Result<(u32, u32)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("ratio: expected a:s, got {s:?}")))?;
    let a = a
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("ratio: {e}")))?;
    let b = b
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("ratio: {e}")))?;
    Ok((a, b))
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| Error::Config(format!("seeds: {e}")))
        })
        .collect()
}

fn run_experiment_cmd(a: RunExperimentArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let mut config = ExperimentConfig::load(&a.config)?;
    // Command-line flags win over config file values.
    if let Some(s) = a.strategy {
        config.strategy = s;
    }
    if let Some(r) = &a.ratio {
        config.ratio = parse_ratio(r)?;
    }
    if let Some(s) = &a.seeds {
        config.seeds = parse_seed_list(s)?;
    }
    let cache = a.cache.clone().unwrap_or_else(default_cache_dir);
    let record = pipeline::run(&config, &a.out, &cache)?;
    for seed in &record.seeds {
        for e in &seed.history.entries {
            println!(
                "run strategy={} seed={} step={} dev_bleu={} phase={}",
                record.strategy, seed.seed, e.step, e.dev_bleu, e.phase
            );
        }
    }
    for seed in &record.seeds {
        println!(
            "result strategy={} seed={} best_step={} best_bleu={:.4} averaged_bleu={:.4}",
            record.strategy, seed.seed, seed.best_step, seed.best_bleu, seed.averaged_bleu
        );
    }
    println!(
        "result strategy={} mean_best_bleu={:.4} mean_averaged_bleu={:.4} hash={}",
        record.strategy,
        record.mean_best_bleu(),
        record.mean_averaged_bleu(),
        record.config_hash
    );
    Ok(())
}

fn emit_curves_cmd(a: EmitCurvesArgs) -> Result<()> {
    let mut rows: Vec<CurveRow> = Vec::new();
    let mut strategy_dirs: Vec<PathBuf> = std::fs::read_dir(&a.runs)
        .map_err(|e| Error::io(&a.runs, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    strategy_dirs.sort();
    for strategy_dir in strategy_dirs {
        let mut seed_dirs: Vec<PathBuf> = std::fs::read_dir(&strategy_dir)
            .map_err(|e| Error::io(&strategy_dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        // Numeric seed order where possible, lexicographic otherwise.
        seed_dirs.sort_by_key(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            (name.parse::<u64>().ok(), name.to_string())
        });
        for seed_dir in seed_dirs {
            let curve = seed_dir.join("curve.csv");
            if curve.is_file() {
                rows.extend(read_curves_csv(&curve)?);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Experiment(format!(
            "no curve.csv files under {}",
            a.runs.display()
        )));
    }
    create_dir(&a.out)?;
    let csv_path = a.out.join("curves.csv");
    write_curves_csv(&rows, &csv_path)?;
    // The plot is derived from the merged CSV, not from the in-memory rows.
    let reread = read_curves_csv(&csv_path)?;
    let svg_path = a.out.join("curves.svg");
    render_curves_svg(&reread, &svg_path)?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", svg_path.display());
    Ok(())
}

//! Adam training loop with periodic dev evaluation, early stopping,
//! checkpointing and fine-tuning continuation.
//!
//! The loop is deterministic: batch order, dropout masks and evaluation
//! cadence are pure functions of `(TrainConfig::seed, step)`, so identical
//! inputs reproduce the evaluation history bitwise.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    loss_and_gradients, AttentionKind, EncodedBatch, EncoderDirection, Hyperparams,
    ModelParameters,
};
use crate::scalar::Scalar;

/// Adam moment-decay and stabilization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Knobs for one training phase.
///
/// `max_steps` of `None` runs until the stopping rule fires. The stopping
/// rule compares dev BLEU at evaluation points spaced `eval_every` optimizer
/// steps apart; `patience_evals` counts evaluation points, not steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_p: f64,
    pub eval_every: u64,
    pub patience_evals: usize,
    pub min_delta_bleu: f64,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 2e-4,
            dropout_p: 0.3,
            eval_every: 5000,
            patience_evals: 4,
            min_delta_bleu: 0.2,
            max_steps: None,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        // Zero is allowed so a frozen model can be re-evaluated in place.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.patience_evals == 0 {
            return Err(Error::Config("patience_evals must be at least 1".into()));
        }
        if !(self.min_delta_bleu >= 0.0) {
            return Err(Error::Config(format!(
                "min_delta_bleu must be non-negative, got {}",
                self.min_delta_bleu
            )));
        }
        for (name, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Which phase of a strategy produced an evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Pretrain,
    Finetune,
    Single,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Single => "single",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "finetune" => Ok(Phase::Finetune),
            "single" => Ok(Phase::Single),
            other => Err(Error::Config(format!("unknown phase {other:?}"))),
        }
    }
}

/// One dev evaluation: global step, dev BLEU, and the phase that ran it.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub step: u64,
    pub dev_bleu: f64,
    pub phase: Phase,
}

/// Ordered dev-BLEU trajectory across all phases of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalHistory {
    pub entries: Vec<HistoryEntry>,
}

impl EvalHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, dev_bleu: f64, phase: Phase) {
        debug_assert!(self.entries.last().map_or(true, |e| e.step < step));
        self.entries.push(HistoryEntry {
            step,
            dev_bleu,
            phase,
        });
    }

    pub fn scores_for(&self, phase: Phase) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.phase == phase)
            .map(|e| e.dev_bleu)
            .collect()
    }

    /// CSV with header `step,dev_bleu,phase`. Floats use the shortest
    /// round-tripping decimal form, so save/load is value-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "dev_bleu", "phase"])
            .map_err(|e| Error::Evaluation(e.to_string()))?;
        for e in &self.entries {
            w.write_record([
                e.step.to_string(),
                format!("{}", e.dev_bleu),
                e.phase.to_string(),
            ])
            .map_err(|e| Error::Evaluation(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Evaluation(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
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
        if headers.iter().collect::<Vec<_>>() != ["step", "dev_bleu", "phase"] {
            return Err(malformed(1, "expected header step,dev_bleu,phase".into()));
        }
        let mut history = EvalHistory::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
            if rec.len() != 3 {
                return Err(malformed(line, format!("expected 3 fields, got {}", rec.len())));
            }
            let step: u64 = rec[0]
                .parse()
                .map_err(|_| malformed(line, format!("bad step {:?}", &rec[0])))?;
            let dev_bleu: f64 = rec[1]
                .parse()
                .map_err(|_| malformed(line, format!("bad dev_bleu {:?}", &rec[1])))?;
            let phase = Phase::from_str(&rec[2]).map_err(|e| malformed(line, e.to_string()))?;
            if history.entries.last().map_or(false, |e| e.step >= step) {
                return Err(malformed(line, "steps must be strictly increasing".into()));
            }
            history.push(step, dev_bleu, phase);
        }
        Ok(history)
    }
}

/// Parameters snapshot taken at an evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F: Scalar> {
    pub step: u64,
    pub dev_bleu: f64,
    pub params: ModelParameters<F>,
}

/// What a finished phase hands back. Checkpoints appear in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<F: Scalar> {
    pub checkpoints: Vec<Checkpoint<F>>,
    pub stopped_early: bool,
    pub final_step: u64,
}

impl<F: Scalar> TrainOutcome<F> {
    /// Index of the best checkpoint by dev BLEU, earliest on ties.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in self.checkpoints.iter().enumerate() {
            if best.map_or(true, |b| c.dev_bleu > self.checkpoints[b].dev_bleu) {
                best = Some(i);
            }
        }
        best
    }
}

/// True when the most recent `patience_evals` scores failed to beat the best
/// earlier score by more than `min_delta_bleu`. Histories no longer than the
/// patience window never stop.
pub fn stopping_criterion(dev_scores: &[f64], patience_evals: usize, min_delta_bleu: f64) -> bool {
    if dev_scores.len() <= patience_evals {
        return false;
    }
    let split = dev_scores.len() - patience_evals;
    let best_before = dev_scores[..split]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let recent_best = dev_scores[split..]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    recent_best <= best_before + min_delta_bleu
}

/// Adam over an ordered tensor list. Slot `i` tracks the `i`-th tensor in
/// `ModelParameters::tensors()` order.
pub struct Adam<F: Scalar> {
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    t: i32,
    beta1: F,
    beta2: F,
    epsilon: F,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ModelParameters<F>, config: &AdamConfig) -> Self {
        let shapes: Vec<Array2<F>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Array2::zeros(t.dim()))
            .collect();
        Adam {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            beta1: F::of_f64(config.beta1),
            beta2: F::of_f64(config.beta2),
            epsilon: F::of_f64(config.epsilon),
        }
    }

    /// One bias-corrected update over parallel tensor slices.
    pub fn step_tensors(&mut self, tensors: &mut [(String, &mut Array2<F>)], grads: &[(String, &Array2<F>)], lr: F) {
        assert_eq!(tensors.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let one = F::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for (i, ((_, p), (_, g))) in tensors.iter_mut().zip(grads).enumerate() {
            ndarray::Zip::from(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&mut **p)
                .and(*g)
                .for_each(|m, v, p, &g| {
                    *m = self.beta1 * *m + (one - self.beta1) * g;
                    *v = self.beta2 * *v + (one - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + self.epsilon);
                });
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters<F>, grads: &ModelParameters<F>, lr: F) {
        self.step_tensors(&mut params.tensors_mut(), &grads.tensors(), lr);
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Length-bucketed batch order for one epoch: sentences sorted by source
/// length with seeded tie-breaks, chunked, then the chunks shuffled.
fn epoch_batches(lens: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut keyed: Vec<(usize, u64, usize)> = lens
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, rng.gen::<u64>(), i))
        .collect();
    keyed.sort_unstable();
    let mut batches: Vec<Vec<usize>> = keyed
        .chunks(batch_size)
        .map(|c| c.iter().map(|&(_, _, i)| i).collect())
        .collect();
    batches.shuffle(rng);
    batches
}

fn run_loop<F, S>(
    params: &mut ModelParameters<F>,
    data: &[(Vec<usize>, Vec<usize>)],
    config: &TrainConfig,
    start_step: u64,
    phase: Phase,
    history: &mut EvalHistory,
    scorer: &mut S,
) -> Result<TrainOutcome<F>>
where
    F: Scalar,
    S: FnMut(&ModelParameters<F>) -> Result<f64>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    let mut outcome = TrainOutcome {
        checkpoints: Vec::new(),
        stopped_early: false,
        final_step: start_step,
    };
    if config.max_steps == Some(0) {
        return Ok(outcome);
    }

    let lr = F::of_f64(config.learning_rate);
    let mut adam = Adam::new(params, &config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x6261_7463_6865_7321));
    let lens: Vec<usize> = data.iter().map(|(s, _)| s.len()).collect();
    let mut pending: Vec<Vec<usize>> = Vec::new();
    let mut phase_scores: Vec<f64> = Vec::new();
    let mut step = start_step;
    let mut batch_no = 0usize;

    loop {
        if config.max_steps.map_or(false, |ms| step - start_step >= ms) {
            outcome.final_step = step;
            return Ok(outcome);
        }
        if pending.is_empty() {
            pending = epoch_batches(&lens, config.batch_size, &mut rng);
            pending.reverse();
        }
        let idxs = pending.pop().expect("epoch produced no batches");
        let batch = EncodedBatch {
            sources: idxs.iter().map(|&i| data[i].0.clone()).collect(),
            targets: idxs.iter().map(|&i| data[i].1.clone()).collect(),
        };
        step += 1;
        batch_no += 1;
        let dropout_seed = splitmix64(config.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (loss, grads) = loss_and_gradients(params, &batch, config.dropout_p, dropout_seed)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                step,
                batch: batch_no,
                detail: format!("loss {loss} is not finite"),
            });
        }
        adam.step(params, &grads, lr);

        if (step - start_step) % config.eval_every == 0 {
            let dev_bleu = scorer(params)?;
            history.push(step, dev_bleu, phase);
            phase_scores.push(dev_bleu);
            outcome.checkpoints.push(Checkpoint {
                step,
                dev_bleu,
                params: params.clone(),
            });
            if stopping_criterion(&phase_scores, config.patience_evals, config.min_delta_bleu) {
                outcome.stopped_early = true;
                outcome.final_step = step;
                return Ok(outcome);
            }
        }
    }
}

/// Train from scratch. `phase` labels the history rows: `Single` for
/// one-phase strategies, `Pretrain` for the first half of two-phase ones.
pub fn train<F, S>(
    params: &mut ModelParameters<F>,
    data: &[(Vec<usize>, Vec<usize>)],
    config: &TrainConfig,
    phase: Phase,
    history: &mut EvalHistory,
    scorer: &mut S,
) -> Result<TrainOutcome<F>>
where
    F: Scalar,
    S: FnMut(&ModelParameters<F>) -> Result<f64>,
{
    run_loop(params, data, config, 0, phase, history, scorer)
}

/// Continue training on new data with the global step counter intact and a
/// fresh optimizer. Token ids must fit the model's vocabulary; an id outside
/// it means the data was encoded with a different vocabulary than the one the
/// model was pre-trained on.
pub fn fine_tune<F, S>(
    params: &mut ModelParameters<F>,
    data: &[(Vec<usize>, Vec<usize>)],
    config: &TrainConfig,
    start_step: u64,
    history: &mut EvalHistory,
    scorer: &mut S,
) -> Result<TrainOutcome<F>>
where
    F: Scalar,
    S: FnMut(&ModelParameters<F>) -> Result<f64>,
{
    for (src, tgt) in data {
        if let Some(&bad) = src.iter().chain(tgt).find(|&&id| id >= params.vocab_size) {
            return Err(Error::VocabularyDrift(format!(
                "token id {bad} is outside the model's vocabulary of {}",
                params.vocab_size
            )));
        }
    }
    run_loop(params, data, config, start_step, Phase::Finetune, history, scorer)
}

/// Element-wise arithmetic mean of checkpoint parameters.
///
/// Accumulates deviations from the first checkpoint, so averaging k copies of
/// one checkpoint returns it unchanged, to the bit.
pub fn average_checkpoints<F: Scalar>(checkpoints: &[Checkpoint<F>]) -> Result<ModelParameters<F>> {
    let in_memory = |reason: String| Error::Checkpoint {
        path: "(in-memory)".into(),
        reason,
    };
    let first = checkpoints
        .first()
        .ok_or_else(|| in_memory("cannot average zero checkpoints".into()))?;
    let mut avg = first.params.clone();
    if checkpoints.len() == 1 {
        return Ok(avg);
    }
    for c in &checkpoints[1..] {
        if c.params.hyper != first.params.hyper || c.params.vocab_size != first.params.vocab_size {
            return Err(in_memory(format!(
                "shape mismatch: step {} disagrees with step {}",
                c.step, first.step
            )));
        }
    }
    let k = F::of_f64(checkpoints.len() as f64);
    let reference = first.params.clone();
    for (i, (_, out)) in avg.tensors_mut().into_iter().enumerate() {
        let base = reference.tensors()[i].1.clone();
        let mut acc = Array2::<F>::zeros(base.dim());
        for c in checkpoints {
            acc = acc + (c.params.tensors()[i].1 - &base);
        }
        *out = &base + &(acc / k);
    }
    Ok(avg)
}

const MANIFEST_FILE: &str = "manifest";
const META_FILE: &str = "meta";

/// Write a checkpoint directory: a `manifest` of `name rows cols` lines, one
/// raw little-endian f64 file per tensor, and a `meta` file with the training
/// step, dev BLEU, strategy id and RNG state.
pub fn save_checkpoint<F: Scalar>(
    dir: &Path,
    checkpoint: &Checkpoint<F>,
    strategy: &str,
    rng_state: u64,
) -> Result<()> {
    let bad = |reason: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        reason,
    };
    if strategy.is_empty() || strategy.contains(char::is_whitespace) {
        return Err(bad(format!("invalid strategy id {strategy:?}")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (name, t) in checkpoint.params.tensors() {
        if t.iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("tensor {name} contains non-finite values")));
        }
        manifest.push_str(&format!("{name} {} {}\n", t.nrows(), t.ncols()));
        let mut bytes = Vec::with_capacity(t.len() * 8);
        for x in t.iter() {
            bytes.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
        let path = dir.join(format!("{name}.bin"));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let meta = format!(
        "step {}\ndev_bleu {}\nstrategy {}\nrng_state {}\n",
        checkpoint.step, checkpoint.dev_bleu, strategy, rng_state
    );
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

/// Reads back a checkpoint directory. The architecture is reconstructed from
/// the manifest: embedding shapes give vocabulary and embedding sizes, the
/// presence of `enc_bwd_*`/`attn_u` tensors gives direction and attention
/// kind, and layer names give the depth.
pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<(Checkpoint<F>, String, u64)> {
    let bad = |reason: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        reason,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut shapes: Vec<(String, usize, usize)> = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let parts: Vec<&str> = line.split(' ').collect();
        let parsed = if parts.len() == 3 {
            parts[1]
                .parse::<usize>()
                .ok()
                .zip(parts[2].parse::<usize>().ok())
        } else {
            None
        };
        match parsed {
            Some((r, c)) if r > 0 && c > 0 => shapes.push((parts[0].to_string(), r, c)),
            _ => return Err(bad(format!("manifest line {}: {line:?}", i + 1))),
        }
    }
    let find = |name: &str| shapes.iter().find(|(n, _, _)| n == name);
    let (_, vocab_size, embed_dim) = find("src_embed")
        .ok_or_else(|| bad("manifest lacks src_embed".into()))?;
    let (_, hidden_dim, _) = find("dec_l0_wh")
        .ok_or_else(|| bad("manifest lacks dec_l0_wh".into()))?;
    let n_layers = shapes
        .iter()
        .filter(|(n, _, _)| n.starts_with("dec_l") && n.ends_with("_wx"))
        .count();
    let hyper = Hyperparams {
        embed_dim: *embed_dim,
        hidden_dim: *hidden_dim,
        n_layers,
        attention: if find("attn_u").is_some() {
            AttentionKind::Additive
        } else {
            AttentionKind::General
        },
        direction: if find("enc_bwd_l0_wx").is_some() {
            EncoderDirection::Bi
        } else {
            EncoderDirection::Uni
        },
    };
    let mut params = ModelParameters::<F>::init(hyper, *vocab_size, 0)
        .map_err(|e| bad(format!("manifest describes no valid model: {e}")))?;

    let expected: Vec<(String, usize, usize)> = params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.nrows(), t.ncols()))
        .collect();
    if shapes != expected {
        return Err(bad("manifest does not list the model's tensors in canonical order".into()));
    }

    for (name, t) in params.tensors_mut() {
        let path = dir.join(format!("{name}.bin"));
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != t.len() * 8 {
            return Err(bad(format!(
                "{name}.bin holds {} bytes, expected {}",
                bytes.len(),
                t.len() * 8
            )));
        }
        for (x, chunk) in t.iter_mut().zip(bytes.chunks_exact(8)) {
            let value = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !value.is_finite() {
                return Err(bad(format!("{name}.bin contains non-finite values")));
            }
            *x = F::of_f64(value);
        }
    }

    let meta_path = dir.join(META_FILE);
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut step = None;
    let mut dev_bleu = None;
    let mut strategy = None;
    let mut rng_state = None;
    for line in meta.lines() {
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("meta line {line:?}")))?;
        match key {
            "step" => step = value.parse::<u64>().ok(),
            "dev_bleu" => dev_bleu = value.parse::<f64>().ok(),
            "strategy" => strategy = Some(value.to_string()),
            "rng_state" => rng_state = value.parse::<u64>().ok(),
            _ => return Err(bad(format!("unknown meta key {key:?}"))),
        }
    }
    let step = step.ok_or_else(|| bad("meta lacks step".into()))?;
    let dev_bleu = dev_bleu.ok_or_else(|| bad("meta lacks dev_bleu".into()))?;
    let strategy = strategy.ok_or_else(|| bad("meta lacks strategy".into()))?;
    let rng_state = rng_state.ok_or_else(|| bad("meta lacks rng_state".into()))?;
    Ok((
        Checkpoint {
            step,
            dev_bleu,
            params,
        },
        strategy,
        rng_state,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::teacher_forced_nll;
    use tempfile::TempDir;

    fn tiny_params(seed: u64) -> ModelParameters<f64> {
        let hyper = Hyperparams {
            embed_dim: 4,
            hidden_dim: 5,
            n_layers: 1,
            attention: AttentionKind::Additive,
            direction: EncoderDirection::Uni,
        };
        ModelParameters::init(hyper, 12, seed).unwrap()
    }

    fn tiny_data() -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..8)
            .map(|i| {
                let a = 4 + i % 8;
                let b = 4 + (i + 3) % 8;
                (vec![a, b, 4 + (i + 5) % 8], vec![b, a])
            })
            .collect()
    }

    fn fast_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            learning_rate: 0.05,
            dropout_p: 0.0,
            eval_every: 5,
            patience_evals: 2,
            min_delta_bleu: 0.2,
            max_steps: Some(10),
            seed: 9,
            adam: AdamConfig::default(),
        }
    }

    #[test]
    fn stopping_rule_matches_frozen_examples() {
        assert!(stopping_criterion(&[20.0, 20.1, 20.1, 20.05, 20.15], 4, 0.2));
        assert!(!stopping_criterion(&[10.0, 11.0, 12.0, 13.0, 14.0], 4, 0.2));
        assert!(!stopping_criterion(&[20.0, 20.1, 20.1, 20.05], 4, 0.2));
        // The recent window must exceed best + delta to count as improvement.
        assert!(stopping_criterion(&[20.0, 20.2], 1, 0.2));
        assert!(!stopping_criterion(&[20.0, 20.21], 1, 0.2));
        assert!(!stopping_criterion(&[], 4, 0.2));
    }

    #[test]
    fn stopping_rule_never_fires_while_gains_exceed_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let delta = rng.gen_range(0.0..1.0);
            let patience = rng.gen_range(1..6);
            let mut scores = vec![rng.gen_range(0.0..30.0)];
            for _ in 0..rng.gen_range(1..12) {
                let jump = delta + rng.gen_range(0.001..2.0);
                scores.push(scores.last().unwrap() + jump);
            }
            assert!(
                !stopping_criterion(&scores, patience, delta),
                "fired on {scores:?} patience {patience} delta {delta}"
            );
        }
    }

    #[test]
    fn adam_first_step_follows_the_gradient_sign() {
        let mut params = tiny_params(1);
        let before = params.clone();
        let mut grads = params.zeros_like();
        for (_, t) in grads.tensors_mut() {
            t.fill(0.25);
        }
        let mut adam = Adam::new(&params, &AdamConfig::default());
        let lr = 0.001;
        adam.step(&mut params, &grads, lr);
        // Bias correction makes the first update lr * g / (|g| + eps).
        let expected_delta = lr * 0.25 / (0.25 + 1e-8);
        for ((_, after), (_, orig)) in params.tensors().iter().zip(before.tensors()) {
            for (a, o) in after.iter().zip(orig.iter()) {
                assert!(((o - a) - expected_delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_matches_a_scalar_reference() {
        let mut theta = ndarray::arr2(&[[0.7f64]]);
        let mut adam: Adam<f64> = Adam {
            m: vec![Array2::zeros((1, 1))],
            v: vec![Array2::zeros((1, 1))],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let lr = 0.01;
        let grad_script = [0.3, -0.8, 0.1, 0.0, 2.0, -0.05];
        let (mut m, mut v, mut reference) = (0.0f64, 0.0f64, 0.7f64);
        for (t, &g) in grad_script.iter().enumerate() {
            let gm = ndarray::arr2(&[[g]]);
            adam.step_tensors(
                &mut [("theta".to_string(), &mut theta)],
                &[("theta".to_string(), &gm)],
                lr,
            );
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            reference -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((theta[(0, 0)] - reference).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_walks_a_quadratic_toward_zero() {
        let mut theta = ndarray::arr2(&[[1.0f64]]);
        let mut adam: Adam<f64> = Adam {
            m: vec![Array2::zeros((1, 1))],
            v: vec![Array2::zeros((1, 1))],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        for _ in 0..50 {
            let before = theta[(0, 0)].abs();
            let grad = ndarray::arr2(&[[2.0 * theta[(0, 0)]]]);
            adam.step_tensors(
                &mut [("theta".to_string(), &mut theta)],
                &[("theta".to_string(), &grad)],
                0.01,
            );
            assert!(theta[(0, 0)].abs() < before);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
        let mut params = tiny_params(2);
        let before = params.clone();
        let mut config = fast_config();
        config.learning_rate = 0.0;
        let mut history = EvalHistory::new();
        let outcome = train(
            &mut params,
            &tiny_data(),
            &config,
            Phase::Single,
            &mut history,
            &mut |_: &ModelParameters<f64>| Ok(1.0),
        )
        .unwrap();
        assert_eq!(outcome.final_step, 10);
        assert_eq!(params, before);
    }

    #[test]
    fn training_stops_when_dev_scores_stall() {
        let mut params = tiny_params(3);
        let mut config = fast_config();
        config.max_steps = None;
        config.eval_every = 2;
        let script = [5.0, 4.9, 4.8, 4.7, 4.6];
        let mut calls = 0usize;
        let mut history = EvalHistory::new();
        let outcome = train(
            &mut params,
            &tiny_data(),
            &config,
            Phase::Single,
            &mut history,
            &mut |_: &ModelParameters<f64>| {
                calls += 1;
                Ok(script[calls - 1])
            },
        )
        .unwrap();
        assert!(outcome.stopped_early);
        assert_eq!(outcome.final_step, 6);
        assert_eq!(outcome.checkpoints.len(), 3);
        assert_eq!(outcome.best_index(), Some(0));
        let steps: Vec<u64> = history.entries.iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![2, 4, 6]);
        assert!(history.entries.iter().all(|e| e.phase == Phase::Single));
    }

    #[test]
    fn training_honors_max_steps_without_stopping_early() {
        let mut params = tiny_params(4);
        let mut config = fast_config();
        config.eval_every = 3;
        config.max_steps = Some(7);
        let mut score = 0.0;
        let mut history = EvalHistory::new();
        let outcome = train(
            &mut params,
            &tiny_data(),
            &config,
            Phase::Single,
            &mut history,
            &mut |_: &ModelParameters<f64>| {
                score += 1.0;
                Ok(score)
            },
        )
        .unwrap();
        assert!(!outcome.stopped_early);
        assert_eq!(outcome.final_step, 7);
        assert_eq!(outcome.checkpoints.len(), 2);
        assert_eq!(history.entries.last().unwrap().step, 6);
    }

    #[test]
    fn zero_max_steps_changes_nothing() {
        let mut params = tiny_params(5);
        let before = params.clone();
        let mut config = fast_config();
        config.max_steps = Some(0);
        let mut history = EvalHistory::new();
        let outcome = train(
            &mut params,
            &tiny_data(),
            &config,
            Phase::Single,
            &mut history,
            &mut |_: &ModelParameters<f64>| panic!("no evaluation expected"),
        )
        .unwrap();
        assert!(outcome.checkpoints.is_empty());
        assert!(history.entries.is_empty());
        assert_eq!(params, before);
    }

    #[test]
    fn empty_data_is_a_config_error() {
        let mut params = tiny_params(6);
        let err = train(
            &mut params,
            &[],
            &fast_config(),
            Phase::Single,
            &mut EvalHistory::new(),
            &mut |_: &ModelParameters<f64>| Ok(0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn training_descends_and_reruns_bitwise_identically() {
        let data = tiny_data();
        let probe = (vec![4usize, 7, 9], vec![7usize, 4]);
        let mut scorer = |p: &ModelParameters<f64>| {
            Ok(-teacher_forced_nll(p, &probe.0, &probe.1).unwrap())
        };
        let mut config = fast_config();
        config.max_steps = Some(30);
        config.eval_every = 10;

        let mut run = |seed_model: u64| -> (EvalHistory, ModelParameters<f64>) {
            let mut params = tiny_params(seed_model);
            let mut history = EvalHistory::new();
            train(&mut params, &data, &config, Phase::Single, &mut history, &mut scorer).unwrap();
            (history, params)
        };
        let (h1, p1) = run(7);
        let (h2, p2) = run(7);
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        let initial = -teacher_forced_nll(&tiny_params(7), &probe.0, &probe.1).unwrap();
        assert!(h1.entries.last().unwrap().dev_bleu > initial);
        let (h3, _) = run(8);
        assert_ne!(h1, h3);
    }

    #[test]
    fn fine_tuning_continues_the_step_counter() {
        let mut params = tiny_params(9);
        let mut config = fast_config();
        config.eval_every = 5;
        config.max_steps = Some(10);
        let mut history = EvalHistory::new();
        let mut n = 0.0;
        let mut scorer = |_: &ModelParameters<f64>| {
            n += 1.0;
            Ok(n)
        };
        let pre = train(&mut params, &tiny_data(), &config, Phase::Pretrain, &mut history, &mut scorer).unwrap();
        assert_eq!(pre.final_step, 10);
        let ft = fine_tune(&mut params, &tiny_data(), &config, pre.final_step, &mut history, &mut scorer).unwrap();
        assert_eq!(ft.final_step, 20);
        let steps: Vec<u64> = history.entries.iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![5, 10, 15, 20]);
        assert_eq!(history.scores_for(Phase::Finetune), vec![3.0, 4.0]);
    }

    #[test]
    fn fine_tuning_rejects_foreign_token_ids() {
        let mut params = tiny_params(10);
        let data = vec![(vec![4usize, 50], vec![5usize])];
        let err = fine_tune(
            &mut params,
            &data,
            &fast_config(),
            10,
            &mut EvalHistory::new(),
            &mut |_: &ModelParameters<f64>| Ok(0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::VocabularyDrift(_)), "{err}");
    }

    #[test]
    fn history_csv_round_trips_exactly() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("history.csv");
        let mut history = EvalHistory::new();
        history.push(5000, 20.150000000000002, Phase::Pretrain);
        history.push(10000, 1.0 / 3.0, Phase::Pretrain);
        history.push(15000, 22.0, Phase::Finetune);
        history.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,dev_bleu,phase\n"));
        assert_eq!(EvalHistory::load(&path).unwrap(), history);
        // Byte-stable across identical saves.
        let again = dir.path().join("again.csv");
        history.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn history_csv_rejects_malformed_rows() {
        let dir = TempDir::new().unwrap();
        for (name, body) in [
            ("phase.csv", "step,dev_bleu,phase\n5,1.0,warmup\n"),
            ("order.csv", "step,dev_bleu,phase\n5,1.0,single\n5,2.0,single\n"),
            ("header.csv", "step,bleu,phase\n5,1.0,single\n"),
            ("float.csv", "step,dev_bleu,phase\n5,abc,single\n"),
        ] {
            let path = dir.path().join(name);
            std::fs::write(&path, body).unwrap();
            assert!(matches!(
                EvalHistory::load(&path).unwrap_err(),
                Error::MalformedLine { .. }
            ), "{name}");
        }
    }

    fn checkpoint_with(params: ModelParameters<f64>, step: u64) -> Checkpoint<f64> {
        Checkpoint {
            step,
            dev_bleu: 1.0,
            params,
        }
    }

    #[test]
    fn averaging_identical_checkpoints_is_bitwise_neutral() {
        let params = tiny_params(11);
        let ckpts: Vec<_> = (0..3)
            .map(|i| checkpoint_with(params.clone(), i))
            .collect();
        let avg = average_checkpoints(&ckpts).unwrap();
        assert_eq!(avg, params);
    }

    #[test]
    fn averaging_opposite_checkpoints_cancels_exactly() {
        let params = tiny_params(12);
        let mut negated = params.clone();
        for (_, t) in negated.tensors_mut() {
            t.mapv_inplace(|x| -x);
        }
        let avg = average_checkpoints(&[
            checkpoint_with(params, 0),
            checkpoint_with(negated, 1),
        ])
        .unwrap();
        for (_, t) in avg.tensors() {
            assert!(t.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn averaging_matches_a_naive_oracle() {
        let ckpts: Vec<_> = (0..8)
            .map(|i| checkpoint_with(tiny_params(100 + i), i))
            .collect();
        let avg = average_checkpoints(&ckpts).unwrap();
        let n_tensors = avg.tensors().len();
        for ti in 0..n_tensors {
            let dim = avg.tensors()[ti].1.dim();
            for r in 0..dim.0 {
                for c in 0..dim.1 {
                    let naive: f64 = ckpts
                        .iter()
                        .map(|k| k.params.tensors()[ti].1[(r, c)])
                        .sum::<f64>()
                        / 8.0;
                    assert!((avg.tensors()[ti].1[(r, c)] - naive).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn averaging_rejects_empty_and_mismatched_inputs() {
        let none: [Checkpoint<f64>; 0] = [];
        assert!(matches!(
            average_checkpoints(&none).unwrap_err(),
            Error::Checkpoint { .. }
        ));
        let small = tiny_params(13);
        let big = ModelParameters::init(small.hyper, 20, 13).unwrap();
        let err = average_checkpoints(&[
            checkpoint_with(small, 0),
            checkpoint_with(big, 1),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }));
    }

    fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().into_string().unwrap(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        for (attention, direction) in [
            (AttentionKind::Additive, EncoderDirection::Bi),
            (AttentionKind::General, EncoderDirection::Uni),
        ] {
            let hyper = Hyperparams {
                embed_dim: 3,
                hidden_dim: 4,
                n_layers: 2,
                attention,
                direction,
            };
            let params = ModelParameters::<f64>::init(hyper, 9, 21).unwrap();
            let ckpt = Checkpoint {
                step: 15000,
                dev_bleu: 24.816326530612244,
                params,
            };
            let dir = TempDir::new().unwrap();
            let first = dir.path().join("a");
            save_checkpoint(&first, &ckpt, "standard_bt", 77).unwrap();
            let (loaded, strategy, rng_state) = load_checkpoint::<f64>(&first).unwrap();
            assert_eq!(loaded, ckpt);
            assert_eq!(strategy, "standard_bt");
            assert_eq!(rng_state, 77);
            let second = dir.path().join("b");
            save_checkpoint(&second, &loaded, &strategy, rng_state).unwrap();
            assert_eq!(dir_snapshot(&first), dir_snapshot(&second));
        }
    }

    #[test]
    fn checkpoint_io_rejects_corruption() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ckpt");
        let ckpt = checkpoint_with(tiny_params(22), 5);
        save_checkpoint(&path, &ckpt, "baseline", 1).unwrap();

        let truncated = std::fs::read(path.join("attn_w.bin")).unwrap();
        std::fs::write(path.join("attn_w.bin"), &truncated[..truncated.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path).unwrap_err(),
            Error::Checkpoint { .. }
        ));
        std::fs::write(path.join("attn_w.bin"), &truncated).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_ok());

        let nan_bytes: Vec<u8> = truncated
            .chunks_exact(8)
            .flat_map(|_| f64::NAN.to_le_bytes())
            .collect();
        std::fs::write(path.join("attn_w.bin"), nan_bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path).unwrap_err(),
            Error::Checkpoint { .. }
        ));
        std::fs::write(path.join("attn_w.bin"), &truncated).unwrap();

        std::fs::write(path.join("meta"), "step 5\n").unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path).unwrap_err(),
            Error::Checkpoint { .. }
        ));

        let mut broken = ckpt;
        broken.params.out_b[(0, 0)] = f64::INFINITY;
        assert!(matches!(
            save_checkpoint(&dir.path().join("x"), &broken, "baseline", 1).unwrap_err(),
            Error::Checkpoint { .. }
        ));
    }
}

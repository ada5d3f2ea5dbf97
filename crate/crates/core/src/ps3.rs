//! Alternating completion and maximum-likelihood training on a mix of
//! complete and partially-specified sequences.
//!
//! Step 1 replaces every partial example by the most probable sequence its
//! automaton accepts, found by constrained beam search against a read-only
//! view of the current parameters. Step 2 takes gradient steps on the union
//! of complete and completed sequences. The offline driver alternates the two
//! over the whole dataset; the online driver does both per minibatch.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automaton::Fsa;
use crate::decode::{beam_search, constrained_beam_search, DecodeConfig, Scorer};
use crate::error::{Error, Result};
use crate::lexicon::{DisjunctiveSet, TokenId, Vocabulary};
use crate::model::{ContextVector, Example, ModelParams};

/// Constraint attached to a partial example.
#[derive(Debug, Clone, PartialEq)]
pub enum PartialSpec {
    Fixed(Fsa),
    /// Label groups; each realization draws `sample` of them at random and
    /// requires mentions from at least `m` of the drawn groups.
    Labels {
        groups: Vec<DisjunctiveSet>,
        m: usize,
        sample: usize,
    },
}

impl PartialSpec {
    pub fn realize(&self, vocab: &Vocabulary, rng: &mut impl Rng) -> Result<Fsa> {
        match self {
            PartialSpec::Fixed(f) => Ok(f.clone()),
            PartialSpec::Labels { groups, m, sample } => {
                if groups.len() <= *sample {
                    return Fsa::at_least_m_of_n(vocab, groups, (*m).min(groups.len()));
                }
                let mut picked = index::sample(rng, groups.len(), *sample).into_vec();
                picked.sort_unstable();
                let chosen: Vec<DisjunctiveSet> = picked.iter().map(|&i| groups[i].clone()).collect();
                Fsa::at_least_m_of_n(vocab, &chosen, (*m).min(*sample))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Token ids ending in eos.
    Complete(Vec<TokenId>),
    Partial(PartialSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub context: ContextVector,
    pub payload: Payload,
}

impl TrainingExample {
    /// `content` excludes eos; it is appended here.
    pub fn complete(
        id: impl Into<String>,
        context: ContextVector,
        content: &[TokenId],
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let mut seq = Vec::with_capacity(content.len() + 1);
        for &t in content {
            if t == vocab.eos_id() {
                return Err(Error::MalformedSequence("eos inside a caption".into()));
            }
            if t >= vocab.size() {
                return Err(Error::InvalidToken(t));
            }
            seq.push(t);
        }
        seq.push(vocab.eos_id());
        Ok(Self {
            id: id.into(),
            context,
            payload: Payload::Complete(seq),
        })
    }

    /// Fails with [`Error::Unsatisfiable`] unless some sequence of at most
    /// `max_len` tokens meets the constraint.
    pub fn partial(
        id: impl Into<String>,
        context: ContextVector,
        spec: PartialSpec,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let probe = spec.realize(vocab, &mut ChaCha8Rng::seed_from_u64(0))?;
        if probe.alphabet_size() != vocab.content_size() {
            return Err(Error::AlphabetMismatch(vocab.content_size(), probe.alphabet_size()));
        }
        let needed = match &spec {
            PartialSpec::Labels { m, .. } => *m,
            PartialSpec::Fixed(_) => 0,
        };
        if !probe.language_nonempty(max_len) || needed > max_len {
            return Err(Error::Unsatisfiable(max_len));
        }
        Ok(Self {
            id: id.into(),
            context,
            payload: Payload::Partial(spec),
        })
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.payload, Payload::Complete(_))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub examples: Vec<TrainingExample>,
}

impl Dataset {
    fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let (c, p): (Vec<usize>, Vec<usize>) = (0..self.examples.len()).partition(|&i| self.examples[i].is_complete());
        (c, p)
    }

    fn sequence(&self, i: usize) -> &[TokenId] {
        match &self.examples[i].payload {
            Payload::Complete(s) => s,
            Payload::Partial(_) => panic!("example {i} is partial"),
        }
    }

    fn partial_spec(&self, i: usize) -> &PartialSpec {
        match &self.examples[i].payload {
            Payload::Partial(p) => p,
            Payload::Complete(_) => panic!("example {i} is complete"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Offline,
    Online,
}

/// Minibatch SGD on complete sequences with a linearly decaying rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub steps: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            minibatch_size: 100,
            lr: 0.001,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ps3Config {
    pub mode: Mode,
    /// Offline: number of Step 1 / Step 2 alternations.
    pub outer_iters: usize,
    /// Offline: passes over the completed data per alternation.
    pub epochs_per_iter: usize,
    /// Online: number of minibatch updates.
    pub total_steps: usize,
    pub minibatch_size: usize,
    /// Complete : partial examples per minibatch.
    pub mix_ratio: (usize, usize),
    pub decode: DecodeConfig,
    /// Initial learning rate, decayed linearly to zero.
    pub lr: f64,
    pub embed_lr_multiplier: f64,
    /// Supervised training on the complete subset before the first Step 1.
    pub pretrain: SupervisedConfig,
    /// Skip pretraining.
    pub cold_start: bool,
    /// Label groups drawn per realization of a label-set constraint.
    pub labels_per_example: usize,
    /// Online: measure the unconstrained satisfaction rate every this many
    /// steps (and at the last step); 0 disables it.
    pub satisfaction_every: usize,
    pub seed: u64,
}

impl Default for Ps3Config {
    fn default() -> Self {
        Self {
            mode: Mode::Online,
            outer_iters: 3,
            epochs_per_iter: 1,
            total_steps: 5000,
            minibatch_size: 100,
            mix_ratio: (1, 1),
            decode: DecodeConfig::default(),
            lr: 0.001,
            embed_lr_multiplier: 0.1,
            pretrain: SupervisedConfig::default(),
            cold_start: false,
            labels_per_example: 3,
            satisfaction_every: 0,
            seed: 0,
        }
    }
}

impl Ps3Config {
    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        let positive = [
            ("minibatch_size", self.minibatch_size),
            ("outer_iters", self.outer_iters),
            ("epochs_per_iter", self.epochs_per_iter),
            ("labels_per_example", self.labels_per_example),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.mix_ratio.0 + self.mix_ratio.1 == 0 {
            return Err(Error::InvalidConfig("mix_ratio must not be 0:0".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {}", self.lr)));
        }
        if !(self.embed_lr_multiplier >= 0.0 && self.embed_lr_multiplier.is_finite()) {
            return Err(Error::InvalidConfig("embed_lr_multiplier".into()));
        }
        Ok(())
    }
}

/// Linear decay from `initial` at step 0 to zero at step `total`.
pub fn lr_at(initial: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return initial;
    }
    initial * (1.0 - step as f64 / total as f64).max(0.0)
}

/// Split of a minibatch into complete and partial slots.
pub fn minibatch_split(size: usize, ratio: (usize, usize), complete: usize, partial: usize) -> (usize, usize) {
    if partial == 0 || ratio.1 == 0 {
        return (size, 0);
    }
    if complete == 0 || ratio.0 == 0 {
        return (0, size);
    }
    let n_partial = (size * ratio.1 + (ratio.0 + ratio.1) / 2) / (ratio.0 + ratio.1);
    (size - n_partial, n_partial)
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` indices from `pool` (without replacement when possible) and
/// returns them sorted so the gradient reduction order is canonical.
fn draw(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = if n <= pool.len() {
        index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    };
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub phase: String,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub step1_failures: usize,
    pub constraint_satisfaction_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub step1_failures: usize,
    pub constraint_satisfaction_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub pretrain: Vec<StepLog>,
    pub iterations: Vec<IterationReport>,
    /// Set when every partial example failed completion in some iteration.
    pub aborted: bool,
}

/// A partial example ready for Step 1.
pub struct PartialItem<'a> {
    pub id: &'a str,
    pub context: &'a ContextVector,
    pub fsa: Fsa,
}

/// Step 1: completes each partial example with constrained beam search
/// under a fixed scorer. Failures are returned per example.
pub fn complete_partial<S: Scorer>(
    scorer: &S,
    items: &[PartialItem<'_>],
    decode: &DecodeConfig,
) -> Vec<(String, Result<Vec<TokenId>>)> {
    items
        .par_iter()
        .map(|item| {
            let res = constrained_beam_search(scorer, item.context, decode, &item.fsa).map(|h| h.tokens);
            (item.id.to_string(), res)
        })
        .collect()
}

/// Fraction of items whose unconstrained beam-search decode already
/// satisfies the item's automaton.
pub fn constraint_satisfaction_rate<S: Scorer>(
    scorer: &S,
    items: &[PartialItem<'_>],
    decode: &DecodeConfig,
) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    let hits = items
        .par_iter()
        .filter(|item| match beam_search(scorer, item.context, decode) {
            Ok(h) => item.fsa.accepts(h.content()).unwrap_or(false),
            Err(_) => false,
        })
        .count();
    Some(hits as f64 / items.len() as f64)
}

fn realize_items<'a>(
    data: &'a Dataset,
    indices: &[usize],
    labels_per_example: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<PartialItem<'a>>> {
    let mut rng = step_rng(seed ^ 0x6c61_6265_6c73, stream);
    indices
        .iter()
        .map(|&i| {
            let ex = &data.examples[i];
            let spec = match data.partial_spec(i) {
                PartialSpec::Labels { groups, m, .. } => PartialSpec::Labels {
                    groups: groups.clone(),
                    m: *m,
                    sample: labels_per_example,
                },
                fixed => fixed.clone(),
            };
            Ok(PartialItem {
                id: &ex.id,
                context: &ex.context,
                fsa: spec.realize(&data.vocab, &mut rng)?,
            })
        })
        .collect()
}

/// Plain supervised training on complete examples, sampling each minibatch
/// from a per-step random stream. `start_step` resumes a run.
pub fn train_supervised(
    model: &mut ModelParams,
    data: &Dataset,
    config: &SupervisedConfig,
    start_step: usize,
    mut hook: impl FnMut(&StepLog, &ModelParams) -> Result<()>,
) -> Result<Vec<StepLog>> {
    let (complete, _) = data.split();
    if complete.is_empty() {
        return Err(Error::NoCompleteExamples);
    }
    if config.minibatch_size == 0 {
        return Err(Error::InvalidConfig("minibatch_size must be >= 1".into()));
    }
    let mut logs = Vec::new();
    for step in start_step..config.steps {
        let mut rng = step_rng(config.seed, step as u64);
        let batch_idx = draw(&complete, config.minibatch_size, &mut rng);
        let batch: Vec<Example<'_>> = batch_idx
            .iter()
            .map(|&i| (&data.examples[i].context, data.sequence(i)))
            .collect();
        let lr = lr_at(config.lr, step, config.steps);
        let loss = model.train_step(&batch, lr)?;
        let log = StepLog {
            phase: "supervised".into(),
            step,
            loss,
            lr,
            step1_failures: 0,
            constraint_satisfaction_rate: None,
        };
        hook(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}

fn pretrain(model: &mut ModelParams, data: &Dataset, config: &Ps3Config) -> Result<Vec<StepLog>> {
    if config.cold_start || config.pretrain.steps == 0 {
        return Ok(Vec::new());
    }
    let mut logs = train_supervised(model, data, &config.pretrain, 0, |_, _| Ok(()))?;
    for l in &mut logs {
        l.phase = "pretrain".into();
    }
    Ok(logs)
}

fn check_dataset(data: &Dataset) -> Result<()> {
    if data.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !data.examples.iter().any(TrainingExample::is_complete) {
        return Err(Error::NoCompleteExamples);
    }
    Ok(())
}

/// Online training: pretraining (unless disabled), then per minibatch a
/// Step 1 completion of its partial members followed by one gradient step.
pub fn ps3_online(model: &mut ModelParams, data: &Dataset, config: &Ps3Config) -> Result<Vec<StepLog>> {
    config.validate()?;
    check_dataset(data)?;
    let mut logs = pretrain(model, data, config)?;
    logs.extend(ps3_online_from(model, data, config, 0, |_, _| Ok(()))?);
    Ok(logs)
}

/// The online loop from `start_step` on, without pretraining. `hook` sees
/// every step's log and the updated parameters (for checkpointing).
pub fn ps3_online_from(
    model: &mut ModelParams,
    data: &Dataset,
    config: &Ps3Config,
    start_step: usize,
    mut hook: impl FnMut(&StepLog, &ModelParams) -> Result<()>,
) -> Result<Vec<StepLog>> {
    config.validate()?;
    check_dataset(data)?;
    model.embed_lr_scale = config.embed_lr_multiplier;
    let (complete, partial) = data.split();
    let (n_complete, n_partial) =
        minibatch_split(config.minibatch_size, config.mix_ratio, complete.len(), partial.len());
    let mut logs = Vec::new();
    for step in start_step..config.total_steps {
        let mut rng = step_rng(config.seed, step as u64);
        let complete_idx = draw(&complete, n_complete, &mut rng);
        let partial_idx = draw(&partial, n_partial, &mut rng);

        let items = realize_items(data, &partial_idx, config.labels_per_example, config.seed, step as u64)?;
        let snapshot: &ModelParams = model;
        let completions = complete_partial(snapshot, &items, &config.decode);
        let measure =
            config.satisfaction_every > 0 && (step % config.satisfaction_every == 0 || step + 1 == config.total_steps);
        let satisfaction = if measure {
            constraint_satisfaction_rate(snapshot, &items, &config.decode)
        } else {
            None
        };

        let mut failures = 0;
        let mut batch: Vec<Example<'_>> = complete_idx
            .iter()
            .map(|&i| (&data.examples[i].context, data.sequence(i)))
            .collect();
        for (item, (_, res)) in items.iter().zip(&completions) {
            match res {
                Ok(seq) => batch.push((item.context, seq)),
                Err(_) => failures += 1,
            }
        }
        let lr = lr_at(config.lr, step, config.total_steps);
        let loss = if batch.is_empty() {
            f64::NAN
        } else {
            model.train_step(&batch, lr)?
        };
        let log = StepLog {
            phase: "ps3".into(),
            step,
            loss,
            lr,
            step1_failures: failures,
            constraint_satisfaction_rate: satisfaction,
        };
        hook(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Offline training: alternate Step 1 over every partial example and
/// Step 2 epochs over the union, re-completing each iteration.
pub fn ps3_offline(model: &mut ModelParams, data: &Dataset, config: &Ps3Config) -> Result<OfflineReport> {
    config.validate()?;
    check_dataset(data)?;
    let pretrain_logs = pretrain(model, data, config)?;
    model.embed_lr_scale = config.embed_lr_multiplier;
    let (complete, partial) = data.split();
    let batches_per_epoch = data.examples.len().div_ceil(config.minibatch_size);
    let total_steps = config.outer_iters * config.epochs_per_iter * batches_per_epoch;
    let mut step = 0;
    let mut iterations = Vec::new();
    for iter in 0..config.outer_iters {
        let items = realize_items(data, &partial, config.labels_per_example, config.seed, iter as u64)?;
        let completions = complete_partial(&*model, &items, &config.decode);
        let satisfaction = constraint_satisfaction_rate(&*model, &items, &config.decode);
        let failures = completions.iter().filter(|(_, r)| r.is_err()).count();
        if !partial.is_empty() && failures == partial.len() {
            iterations.push(IterationReport {
                iter,
                loss: f64::NAN,
                lr: lr_at(config.lr, step, total_steps),
                step1_failures: failures,
                constraint_satisfaction_rate: satisfaction,
            });
            return Ok(OfflineReport {
                pretrain: pretrain_logs,
                iterations,
                aborted: true,
            });
        }
        let mut pool: Vec<Example<'_>> = complete
            .iter()
            .map(|&i| (&data.examples[i].context, data.sequence(i)))
            .collect();
        for (item, (_, res)) in items.iter().zip(&completions) {
            if let Ok(seq) = res {
                pool.push((item.context, seq));
            }
        }

        let mut rng = step_rng(config.seed, (1 << 32) + iter as u64);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut lr = config.lr;
        for _ in 0..config.epochs_per_iter {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch_size) {
                let mut chunk = chunk.to_vec();
                chunk.sort_unstable();
                let batch: Vec<Example<'_>> = chunk.iter().map(|&i| pool[i]).collect();
                lr = lr_at(config.lr, step, total_steps);
                loss_sum += model.train_step(&batch, lr)?;
                batches += 1;
                step += 1;
            }
        }
        iterations.push(IterationReport {
            iter,
            loss: loss_sum / batches.max(1) as f64,
            lr,
            step1_failures: failures,
            constraint_satisfaction_rate: satisfaction,
        });
    }
    Ok(OfflineReport {
        pretrain: pretrain_logs,
        iterations,
        aborted: false,
    })
}

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ps3_core::automaton::ConstraintSpec;
use ps3_core::decode::decode_batch;
use ps3_core::eval::{mention_f1, perplexity, Concept, EvalReport, MentionEvalSpec};
use ps3_core::model::{parse_embedding_table, Example};
use ps3_core::oracle::shortest_accepted;
use ps3_core::ps3::{ps3_offline, ps3_online_from, train_supervised, Dataset, Mode, Payload, StepLog, TrainingExample};
use ps3_core::{DecodeConfig, DisjunctiveSet, Fsa, ModelConfig, ModelParams, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{read_records, training_examples, write_jsonl, Record};
use crate::synth::{self, SynthConfig};
use crate::CommandError;

pub const TRAIN_CHECKPOINT_VERSION: u32 = 1;

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Vocabulary::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Completed optimizer steps, pretraining included.
    pub step: usize,
    pub model: serde_json::Value,
}

impl Checkpoint {
    pub fn new(step: usize, model: &ModelParams) -> Self {
        Self {
            format_version: TRAIN_CHECKPOINT_VERSION,
            step,
            model: model.to_json_value(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))?;
        if ck.format_version != TRAIN_CHECKPOINT_VERSION {
            bail!(
                "{}: unsupported checkpoint format_version {}",
                path.display(),
                ck.format_version
            );
        }
        Ok(ck)
    }

    pub fn params(&self) -> Result<ModelParams> {
        Ok(ModelParams::from_json_value(self.model.clone())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn load_model(checkpoint: &Path, vocab: &Vocabulary) -> Result<ModelParams> {
    let model = Checkpoint::load(checkpoint)?.params()?;
    if model.config.vocab_size != vocab.size() {
        bail!(
            "checkpoint vocabulary has {} entries, the vocabulary file has {}",
            model.config.vocab_size,
            vocab.size()
        );
    }
    Ok(model)
}

// ---------------------------------------------------------------- compile-fsa

#[derive(Debug, Clone)]
pub struct CompileArgs {
    pub vocab: PathBuf,
    pub spec: PathBuf,
    pub out: PathBuf,
    pub max_len: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompileSummary {
    pub num_states: usize,
    pub num_accepting: usize,
    pub shortest_len: usize,
    pub samples: Vec<Vec<String>>,
}

pub fn compile_fsa(args: &CompileArgs) -> Result<CompileSummary> {
    let vocab = load_vocab(&args.vocab)?;
    let text = fs::read_to_string(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let spec = ConstraintSpec::from_json(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    let fsa = spec.compile(&vocab)?;
    let Some(shortest_len) = fsa.shortest_accepted_len() else {
        return Err(CommandError::EmptyLanguage.into());
    };
    if shortest_len > args.max_len {
        return Err(ps3_core::Error::Unsatisfiable(args.max_len).into());
    }
    fs::write(&args.out, fsa.to_json(&vocab)?).with_context(|| format!("writing {}", args.out.display()))?;
    let samples = shortest_accepted(&fsa, args.samples, args.max_len)
        .iter()
        .map(|s| vocab.decode(s))
        .collect();
    Ok(CompileSummary {
        num_states: fsa.num_states(),
        num_accepting: fsa.accepting_states().count(),
        shortest_len,
        samples,
    })
}

// ---------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub vocab: PathBuf,
    pub config: PathBuf,
    pub data: Vec<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub phase: String,
    pub iter: usize,
    pub loss: Option<f64>,
    pub lr: f64,
    pub step1_failures: usize,
    pub constraint_satisfaction_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub steps: usize,
    pub complete: usize,
    pub partial: usize,
    pub aborted: bool,
}

fn report_line(phase: &str, iter: usize, log: &StepLog) -> ReportLine {
    ReportLine {
        phase: phase.to_string(),
        iter,
        loss: log.loss.is_finite().then_some(log.loss),
        lr: log.lr,
        step1_failures: log.step1_failures,
        constraint_satisfaction_rate: log.constraint_satisfaction_rate,
    }
}

pub fn load_training_data(vocab: &Vocabulary, files: &[PathBuf], max_len: usize) -> Result<Dataset> {
    let mut examples: Vec<TrainingExample> = Vec::new();
    for path in files {
        let records = read_records(path, vocab)?;
        examples.extend(training_examples(path, &records, vocab, max_len)?);
    }
    let mut ids = std::collections::BTreeSet::new();
    for ex in &examples {
        if !ids.insert(ex.id.as_str()) {
            bail!("duplicate example id {:?} across data files", ex.id);
        }
    }
    if let Some(first) = examples.first() {
        if let Some(bad) = examples.iter().find(|e| e.context.dim() != first.context.dim()) {
            bail!(
                "example {:?} has a {}-dimensional context, expected {}",
                bad.id,
                bad.context.dim(),
                first.context.dim()
            );
        }
    }
    Ok(Dataset {
        vocab: vocab.clone(),
        examples,
    })
}

fn init_model(cfg: &TrainConfig, vocab: &Vocabulary, context_dim: usize) -> Result<ModelParams> {
    let config = ModelConfig {
        embed_dim: cfg.model.embed_dim,
        hidden_dim: cfg.model.hidden_dim,
        context_dim,
        vocab_size: vocab.size(),
    };
    let mut model = ModelParams::init(config, cfg.model.tied_output, cfg.model.init_seed)?;
    if let Some(path) = &cfg.model.embeddings {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table = parse_embedding_table(&text).with_context(|| format!("parsing {}", path.display()))?;
        model
            .load_fixed_embeddings(table, cfg.model.freeze_embeddings)
            .with_context(|| format!("loading {}", path.display()))?;
    }
    Ok(model)
}

/// Appends report lines and writes checkpoints as training proceeds.
struct Recorder {
    out: PathBuf,
    report: BufWriter<File>,
    every: usize,
}

impl Recorder {
    fn record(&mut self, line: &ReportLine, completed: usize, model: &ModelParams) -> Result<()> {
        serde_json::to_writer(&mut self.report, line)?;
        self.report.write_all(b"\n")?;
        if self.every > 0 && completed.is_multiple_of(self.every) {
            self.report.flush()?;
            Checkpoint::new(completed, model).save(&self.out.join(format!("checkpoint-{completed:06}.json")))?;
        }
        Ok(())
    }
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary> {
    let vocab = load_vocab(&args.vocab)?;
    let mut cfg = TrainConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let data = load_training_data(&vocab, &args.data, cfg.ps3.decode.max_len)?;
    if data.examples.is_empty() {
        bail!("no training examples");
    }
    let complete = data.examples.iter().filter(|e| e.is_complete()).count();
    let partial = data.examples.len() - complete;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let context_dim = data.examples[0].context.dim();
    let (mut model, start) = match &args.resume {
        Some(path) => {
            if cfg.ps3.mode == Mode::Offline {
                bail!("resuming is only supported in online mode");
            }
            let ck = Checkpoint::load(path)?;
            (ck.params()?, ck.step)
        }
        None => (init_model(&cfg, &vocab, context_dim)?, 0),
    };
    if model.config.context_dim != context_dim || model.config.vocab_size != vocab.size() {
        bail!("checkpoint dimensions do not match the data");
    }

    let report_path = args.out.join("report.jsonl");
    let kept = if start > 0 {
        previous_report(&report_path, start)?
    } else {
        Vec::new()
    };
    let mut report =
        BufWriter::new(File::create(&report_path).with_context(|| format!("creating {}", report_path.display()))?);
    for line in &kept {
        serde_json::to_writer(&mut report, line)?;
        report.write_all(b"\n")?;
    }
    let mut rec = Recorder {
        out: args.out.clone(),
        report,
        every: cfg.checkpoint_every,
    };

    let ps3 = &cfg.ps3;
    let pretrain_steps = if ps3.cold_start { 0 } else { ps3.pretrain.steps };
    let (steps, aborted) = match ps3.mode {
        Mode::Online => {
            ps3.validate()?;
            if start < pretrain_steps {
                train_supervised(&mut model, &data, &ps3.pretrain, start, |log, m| {
                    rec.record(&report_line("pretrain", log.step, log), log.step + 1, m)
                        .map_err(|e| ps3_core::Error::Format(e.to_string()))
                })?;
            }
            let ps3_start = start.saturating_sub(pretrain_steps);
            ps3_online_from(&mut model, &data, ps3, ps3_start, |log, m| {
                let global = pretrain_steps + log.step;
                rec.record(&report_line("ps3", global, log), global + 1, m)
                    .map_err(|e| ps3_core::Error::Format(e.to_string()))
            })?;
            (pretrain_steps + ps3.total_steps, false)
        }
        Mode::Offline => {
            // Offline runs report per iteration and only save the final model.
            let report = ps3_offline(&mut model, &data, ps3)?;
            let pretrain_lines = report.pretrain.iter().map(|log| report_line("pretrain", log.step, log));
            let iteration_lines = report.iterations.iter().map(|it| ReportLine {
                phase: "ps3".into(),
                iter: it.iter,
                loss: it.loss.is_finite().then_some(it.loss),
                lr: it.lr,
                step1_failures: it.step1_failures,
                constraint_satisfaction_rate: it.constraint_satisfaction_rate,
            });
            for line in pretrain_lines.chain(iteration_lines) {
                serde_json::to_writer(&mut rec.report, &line)?;
                rec.report.write_all(b"\n")?;
            }
            (report.pretrain.len() + report.iterations.len(), report.aborted)
        }
    };
    rec.report.flush()?;
    let final_checkpoint = args.out.join("final.json");
    Checkpoint::new(steps, &model).save(&final_checkpoint)?;
    if aborted {
        bail!("every partial example failed completion; training aborted");
    }
    Ok(TrainSummary {
        final_checkpoint,
        steps,
        complete,
        partial,
        aborted,
    })
}

fn previous_report(path: &Path, before: usize) -> Result<Vec<ReportLine>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let mut lines = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let parsed: ReportLine = serde_json::from_str(line).with_context(|| format!("parsing {}", path.display()))?;
        if parsed.iter < before {
            lines.push(parsed);
        }
    }
    Ok(lines)
}

// --------------------------------------------------------------------- decode

#[derive(Debug, Clone)]
pub struct DecodeArgs {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
    pub decode: DecodeConfig,
    /// Decode records that carry a constraint with constrained beam search.
    pub constrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRow {
    pub id: String,
    /// Content words; the trailing eos is omitted.
    pub tokens: Vec<String>,
    pub logprob: Option<f64>,
    /// Whether the output satisfies the record's constraint (true when the
    /// record has none).
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn decode_records(
    model: &ModelParams,
    vocab: &Vocabulary,
    records: &[Record],
    decode: &DecodeConfig,
    constrained: bool,
) -> Result<Vec<DecodeRow>> {
    let constraints: Vec<Option<Fsa>> = records
        .iter()
        .map(|r| r.constraint(vocab))
        .collect::<ps3_core::Result<_>>()?;
    let items: Vec<_> = records
        .iter()
        .zip(&constraints)
        .map(|(r, c)| (r.context.clone(), if constrained { c.as_ref() } else { None }))
        .collect();
    let results = decode_batch(model, &items, decode);
    Ok(records
        .iter()
        .zip(&constraints)
        .zip(results)
        .map(|((r, c), res)| match res {
            Ok(h) => DecodeRow {
                id: r.id.clone(),
                tokens: vocab.decode(h.content()),
                logprob: Some(h.logprob),
                accepted: c.as_ref().is_none_or(|f| f.accepts(h.content()).unwrap_or(false)),
                error: None,
            },
            Err(e) => DecodeRow {
                id: r.id.clone(),
                tokens: Vec::new(),
                logprob: None,
                accepted: false,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

pub fn decode(args: &DecodeArgs) -> Result<Vec<DecodeRow>> {
    args.decode.validate()?;
    let vocab = load_vocab(&args.vocab)?;
    let model = load_model(&args.checkpoint, &vocab)?;
    let records = read_records(&args.data, &vocab)?;
    let rows = decode_records(&model, &vocab, &records, &args.decode, args.constrained)?;
    match &args.out {
        Some(path) => write_jsonl(path, &rows).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            for row in &rows {
                serde_json::to_writer(&mut stdout, row)?;
                stdout.write_all(b"\n")?;
            }
        }
    }
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        return Err(CommandError::DecodeFailures(failures, rows.len()).into());
    }
    Ok(rows)
}

// ----------------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub data: PathBuf,
    pub mentions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub decode: DecodeConfig,
}

#[derive(Debug, Clone, Deserialize)]
struct ConceptEntry {
    name: String,
    words: Vec<String>,
}

pub fn load_concepts(path: &Path, vocab: &Vocabulary) -> Result<Vec<Concept>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let entries: Vec<ConceptEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    entries
        .into_iter()
        .map(|e| {
            let words = DisjunctiveSet::from_words(vocab, &e.words).with_context(|| format!("concept {:?}", e.name))?;
            Ok(Concept { name: e.name, words })
        })
        .collect()
}

/// Perplexity over the caption records and, when concepts are given, mention
/// F1 of unconstrained decodes against each record's `concepts`.
pub fn evaluate(
    model: &ModelParams,
    vocab: &Vocabulary,
    records: &[Record],
    concepts: Option<Vec<Concept>>,
    decode: &DecodeConfig,
) -> Result<EvalReport> {
    let sequences: Vec<(usize, Vec<usize>)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match r.to_training_example(vocab, decode.max_len) {
            Ok(TrainingExample {
                payload: Payload::Complete(seq),
                ..
            }) => Some((i, seq)),
            _ => None,
        })
        .collect();
    let examples: Vec<Example<'_>> = sequences
        .iter()
        .map(|(i, s)| (&records[*i].context, s.as_slice()))
        .collect();
    let ppl = if examples.is_empty() {
        None
    } else {
        Some(perplexity(model, &examples)?)
    };

    let (per_concept, macro_f1) = match concepts {
        None => (BTreeMap::new(), None),
        Some(concepts) => {
            let truth = records
                .iter()
                .map(|r| (r.id.clone(), r.concepts.clone().unwrap_or_default()))
                .collect();
            let spec = MentionEvalSpec::new(concepts, truth)?;
            let items: Vec<_> = records.iter().map(|r| (r.context.clone(), None)).collect();
            let decodes = decode_batch(model, &items, decode)
                .into_iter()
                .zip(records)
                .map(|(res, r)| (r.id.clone(), res.map(|h| h.content().to_vec()).unwrap_or_default()))
                .collect::<Vec<_>>();
            let report = mention_f1(&decodes, &spec)?;
            (report.per_concept, Some(report.macro_f1))
        }
    };
    Ok(EvalReport {
        perplexity: ppl,
        per_concept,
        macro_f1,
    })
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    args.decode.validate()?;
    let vocab = load_vocab(&args.vocab)?;
    let model = load_model(&args.checkpoint, &vocab)?;
    let records = read_records(&args.data, &vocab)?;
    let concepts = args.mentions.as_deref().map(|p| load_concepts(p, &vocab)).transpose()?;
    let report = evaluate(&model, &vocab, &records, concepts, &args.decode)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(report)
}

// ---------------------------------------------------------------------- synth

pub fn synth(config: &SynthConfig, out: &Path) -> Result<synth::Corpus> {
    let corpus = synth::generate(config);
    corpus.write(out)?;
    Ok(corpus)
}

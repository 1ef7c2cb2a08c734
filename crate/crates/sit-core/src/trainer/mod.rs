//! Dataset assembly, training, evaluation, and the ablation suites.

mod ablate;
mod corpus;
mod metrics;
mod optimizer;

pub use ablate::{ablate, rows_to_csv, AblateOptions, AblateRow, Suite};
pub use corpus::{
    corpus_from_jsonl, corpus_to_jsonl, dataflow_summary, gen_corpus, CorpusItem, Task,
};
pub use metrics::{bleu, rouge_l, MetricError};
pub use optimizer::AdamW;

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegraph::{graph_from_source, sbt_flatten, BuildError, GraphOptions, MultiViewGraph};
use crate::minilang::{lex, parse};
use crate::numkit::{backward_collect, DType};
use crate::sitmodel::{SitConfig, SitError, SitModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Sit(#[from] SitError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("example {index}: {source}")]
    BadExample { index: usize, source: BuildError },
    #[error("vocabulary has {vocab} entries but the model was built for {model}")]
    VocabMismatch { vocab: usize, model: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

/// Special token ids, fixed at the front of every vocabulary.
pub mod special {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const ROOT: usize = 2;
    pub const BOS: usize = 3;
    pub const EOS: usize = 4;
    pub const NAMES: [&str; 5] = ["<pad>", "<unk>", "<root>", "<bos>", "<eos>"];
}

/// Subtoken-level vocabulary shared by source and target sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from token streams, min frequency 1, ordered by descending
    /// count then token text (deterministic).
    pub fn build<'a>(streams: impl Iterator<Item = &'a [String]>) -> Vocab {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for stream in streams {
            for tok in stream {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !special::NAMES.contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<String> = special::NAMES.iter().map(|s| s.to_string()).collect();
        tokens.extend(entries.into_iter().map(|(t, _)| t.to_string()));
        Vocab::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(special::UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(|s| s.as_str()).unwrap_or("<unk>")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Vocab, TrainError> {
        let tokens: Vec<String> =
            serde_json::from_str(text).map_err(|e| TrainError::Format(e.to_string()))?;
        Ok(Vocab::from_tokens(tokens))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleMeta {
    pub code: String,
    pub summary: String,
}

/// One training/evaluation instance: root-prefixed source ids, the matching
/// graph, and the bos/eos-wrapped target ids.
#[derive(Debug, Clone)]
pub struct Example {
    pub source_ids: Vec<usize>,
    pub graph: MultiViewGraph,
    pub target_ids: Vec<usize>,
    pub meta: ExampleMeta,
}

/// A batch view: example indices plus targets padded to a common length.
#[derive(Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn from_indices(examples: &[Example], indices: &[usize]) -> Batch {
        let width = indices
            .iter()
            .map(|&i| examples[i].target_ids.len())
            .max()
            .unwrap_or(0);
        let mut targets = Vec::with_capacity(indices.len());
        let mut target_mask = Vec::with_capacity(indices.len());
        for &i in indices {
            let mut row = examples[i].target_ids.clone();
            let mut mask = vec![true; row.len()];
            row.resize(width, special::PAD);
            mask.resize(width, false);
            targets.push(row);
            target_mask.push(mask);
        }
        Batch {
            indices: indices.to_vec(),
            targets,
            target_mask,
        }
    }

    /// Target row with every padded position normalized to the pad id. The
    /// mask decides what is padding, so mutating stored values at padded
    /// positions cannot affect anything downstream.
    pub fn masked_target(&self, slot: usize) -> Vec<usize> {
        self.targets[slot]
            .iter()
            .zip(&self.target_mask[slot])
            .map(|(&t, &real)| if real { t } else { special::PAD })
            .collect()
    }
}

/// How corpus items become source token sequences.
#[derive(Debug, Clone)]
pub enum SourceMode {
    /// Parse, build the multi-view graph, subtokenize.
    Graph(GraphOptions),
    /// Flatten the AST with structure-based traversal; attention is left
    /// unrestricted (the sequential baseline).
    Sbt,
}

fn item_tokens_and_graph(
    item: &CorpusItem,
    mode: &SourceMode,
    max_src: usize,
) -> Result<MultiViewGraph, BuildError> {
    match mode {
        SourceMode::Graph(opts) => {
            let opts = GraphOptions {
                max_tokens: max_src,
                ..opts.clone()
            };
            graph_from_source(&item.code, &opts)
        }
        SourceMode::Sbt => {
            let ast = parse(&lex(&item.code)?)?;
            let mut tokens = sbt_flatten(&ast);
            tokens.truncate(max_src - 1);
            Ok(MultiViewGraph::full(tokens))
        }
    }
}

fn summary_words(summary: &str, max_words: usize) -> Vec<String> {
    summary
        .split_whitespace()
        .take(max_words)
        .map(|w| w.to_lowercase())
        .collect()
}

/// Build the vocabulary (unless one is supplied) and the examples for a
/// corpus under one source mode.
pub fn prepare_dataset(
    corpus: &[CorpusItem],
    mode: &SourceMode,
    cfg: &SitConfig,
    vocab: Option<&Vocab>,
) -> Result<(Vocab, Vec<Example>), TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut graphs = Vec::with_capacity(corpus.len());
    let mut summaries = Vec::with_capacity(corpus.len());
    for (index, item) in corpus.iter().enumerate() {
        let g = item_tokens_and_graph(item, mode, cfg.max_src_len)
            .map_err(|source| TrainError::BadExample { index, source })?;
        graphs.push(g);
        summaries.push(summary_words(&item.summary, cfg.max_tgt_len - 1));
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocab::build(
            graphs
                .iter()
                .map(|g| g.tokens.as_slice())
                .chain(summaries.iter().map(|s| s.as_slice())),
        ),
    };
    let examples = corpus
        .iter()
        .zip(graphs)
        .zip(summaries)
        .map(|((item, graph), words)| {
            let mut source_ids = Vec::with_capacity(graph.n());
            source_ids.push(special::ROOT);
            source_ids.extend(graph.tokens.iter().map(|t| vocab.id(t)));
            let mut target_ids = Vec::with_capacity(words.len() + 2);
            target_ids.push(special::BOS);
            target_ids.extend(words.iter().map(|w| vocab.id(w)));
            target_ids.push(special::EOS);
            Example {
                source_ids,
                graph,
                target_ids,
                meta: ExampleMeta {
                    code: item.code.clone(),
                    summary: item.summary.clone(),
                },
            }
        })
        .collect();
    Ok((vocab, examples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps; 0 means epochs decide.
    pub max_steps: usize,
    pub seed: u64,
    pub eval_beam: usize,
    pub len_norm: f64,
    /// Worker threads for batch-parallel examples; 0 resolves SIT_THREADS
    /// or the machine's parallelism.
    pub threads: usize,
    pub precision: DType,
    /// Stop once training token accuracy reaches this value.
    pub acc_target: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-3,
            warmup_frac: 0.06,
            weight_decay: 0.01,
            max_epochs: 10,
            max_steps: 0,
            seed: 1,
            eval_beam: 4,
            len_norm: 0.6,
            threads: 0,
            precision: DType::F64,
            acc_target: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            problems.push(format!(
                "warmup_frac ({}) must be in [0, 1]",
                self.warmup_frac
            ));
        }
        if self.eval_beam == 0 {
            problems.push("eval_beam must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Format(problems.join("\n")))
        }
    }

    pub fn resolve_threads(&self) -> usize {
        if self.threads > 0 {
            return self.threads;
        }
        if let Ok(v) = std::env::var("SIT_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n > 0 {
                    return n;
                }
            }
        }
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps_done: usize,
    pub train_loss: f64,
    pub token_acc: f64,
    pub val_bleu: Option<f64>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub model: SitModel,
    pub log: Vec<EpochLog>,
    pub steps_run: usize,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,steps,train_loss,token_acc,val_bleu,seconds\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{:.3}\n",
            row.epoch,
            row.steps_done,
            row.train_loss,
            row.token_acc,
            row.val_bleu.map(|b| format!("{b:.6}")).unwrap_or_default(),
            row.seconds
        ));
    }
    out
}

fn per_example_rng(seed: u64, step: usize, slot: usize) -> ChaCha8Rng {
    let s = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((step as u64) << 24)
        .wrapping_add(slot as u64);
    ChaCha8Rng::seed_from_u64(s)
}

type ExampleGrads = (crate::numkit::GradMap, f64, usize);

fn example_pass(
    model: &SitModel,
    example: &Example,
    target_row: &[usize],
    rng: &mut ChaCha8Rng,
    dropout: bool,
) -> Result<ExampleGrads, TrainError> {
    let mut rng_holder: Option<&mut ChaCha8Rng> = if dropout { Some(rng) } else { None };
    let (loss, count) = model.example_loss(
        &example.source_ids,
        &example.graph,
        target_row,
        special::PAD,
        &mut rng_holder,
    )?;
    let value = loss.item();
    let grads = backward_collect(&loss).map_err(SitError::from)?;
    Ok((grads, value, count))
}

/// Train a fresh model on `examples`. Token cross-entropy excludes padding;
/// gradients from a batch reduce in example order regardless of thread
/// count, so a fixed seed gives a bit-identical checkpoint.
pub fn train(
    examples: &[Example],
    val: Option<&[Example]>,
    sit_cfg: &SitConfig,
    tcfg: &TrainConfig,
    vocab: &Vocab,
) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut model = SitModel::new(sit_cfg.clone(), vocab.len(), tcfg.seed, tcfg.precision)?;
    let steps_per_epoch = examples.len().div_ceil(tcfg.batch_size);
    let planned_epochs = if tcfg.max_epochs > 0 {
        tcfg.max_epochs
    } else {
        tcfg.max_steps.div_ceil(steps_per_epoch)
    };
    let mut total_steps = planned_epochs * steps_per_epoch;
    if tcfg.max_steps > 0 {
        total_steps = total_steps.min(tcfg.max_steps);
    }
    let warmup = ((tcfg.warmup_frac * total_steps as f64).round() as usize).max(1);
    let mut opt = AdamW::new(&model.params, tcfg.lr, warmup, total_steps, tcfg.weight_decay);
    let threads = tcfg.resolve_threads();
    let pool = build_pool(threads);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5EED);
    let mut log = Vec::new();
    let mut steps_run = 0usize;
    let dropout_active = sit_cfg.dropout > 0.0;

    'epochs: for epoch in 0..planned_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss_sum = 0.0;
        let mut epoch_token_count = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            if steps_run >= total_steps {
                break;
            }
            let batch = Batch::from_indices(examples, chunk);
            let step_id = steps_run;
            let work = |slot: usize| {
                let ex = &examples[batch.indices[slot]];
                let mut rng = per_example_rng(tcfg.seed, step_id, slot);
                let target = batch.masked_target(slot);
                example_pass(&model, ex, &target, &mut rng, dropout_active)
            };
            let passes: Vec<Result<ExampleGrads, TrainError>> = match &pool {
                Some(p) => p.install(|| {
                    use rayon::prelude::*;
                    (0..batch.indices.len())
                        .into_par_iter()
                        .map(work)
                        .collect()
                }),
                None => (0..batch.indices.len()).map(work).collect(),
            };
            // Deterministic reduction in batch slot order.
            let param_tids: Vec<u64> = model.params.iter().map(|p| p.tensor.id()).collect();
            let mut grad_acc: Vec<Vec<f64>> = model
                .params
                .iter()
                .map(|p| vec![0.0; p.tensor.len()])
                .collect();
            let mut loss_sum = 0.0;
            let mut token_count = 0usize;
            for pass in passes {
                let (gmap, value, count) = pass?;
                loss_sum += value;
                token_count += count;
                for (idx, tid) in param_tids.iter().enumerate() {
                    if let Some(g) = gmap.get(tid) {
                        let acc = &mut grad_acc[idx];
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
            }
            if token_count == 0 {
                continue;
            }
            let inv = 1.0 / token_count as f64;
            for g in &mut grad_acc {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            let mean_loss = loss_sum * inv;
            if !mean_loss.is_finite() {
                return Err(TrainError::Diverged {
                    step: steps_run,
                    loss: mean_loss,
                });
            }
            opt.apply(&mut model.params, &grad_acc);
            steps_run += 1;
            epoch_loss_sum += loss_sum;
            epoch_token_count += token_count;
        }

        // Teacher-forced accuracy over (a prefix of) the training set.
        let acc_n = examples.len().min(64);
        let (mut hits, mut total) = (0usize, 0usize);
        for ex in &examples[..acc_n] {
            let (h, t) =
                model.token_accuracy(&ex.source_ids, &ex.graph, &ex.target_ids, special::PAD)?;
            hits += h;
            total += t;
        }
        let token_acc = if total > 0 {
            hits as f64 / total as f64
        } else {
            0.0
        };
        let val_bleu = match val {
            Some(vs) if !vs.is_empty() => {
                // Greedy decoding for per-epoch validation.
                Some(evaluate_with(&model, vocab, vs, 1, tcfg.len_norm, &pool)?.bleu)
            }
            _ => None,
        };
        log.push(EpochLog {
            epoch,
            steps_done: steps_run,
            train_loss: if epoch_token_count > 0 {
                epoch_loss_sum / epoch_token_count as f64
            } else {
                f64::NAN
            },
            token_acc,
            val_bleu,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let Some(target) = tcfg.acc_target {
            if token_acc >= target {
                break 'epochs;
            }
        }
        if steps_run >= total_steps {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        steps_run,
    })
}

fn build_pool(threads: usize) -> Option<rayon::ThreadPool> {
    (threads > 1).then(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleOutput {
    pub index: usize,
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub bleu: f64,
    pub rouge_l: f64,
    pub outputs: Vec<ExampleOutput>,
}

/// Decode every example with beam search and score against references.
pub fn evaluate(
    model: &SitModel,
    vocab: &Vocab,
    examples: &[Example],
    beam: usize,
    len_norm: f64,
) -> Result<EvalReport, TrainError> {
    evaluate_with(model, vocab, examples, beam, len_norm, &None)
}

/// Like [`evaluate`] but decoding examples on a thread pool.
pub fn evaluate_parallel(
    model: &SitModel,
    vocab: &Vocab,
    examples: &[Example],
    beam: usize,
    len_norm: f64,
    threads: usize,
) -> Result<EvalReport, TrainError> {
    evaluate_with(model, vocab, examples, beam, len_norm, &build_pool(threads))
}

fn evaluate_with(
    model: &SitModel,
    vocab: &Vocab,
    examples: &[Example],
    beam: usize,
    len_norm: f64,
    pool: &Option<rayon::ThreadPool>,
) -> Result<EvalReport, TrainError> {
    if vocab.len() != model.vocab_size {
        return Err(TrainError::VocabMismatch {
            vocab: vocab.len(),
            model: model.vocab_size,
        });
    }
    let decode_one = |(index, ex): (usize, &Example)| -> Result<ExampleOutput, TrainError> {
        let enc = model.encode(&ex.source_ids, &ex.graph, None, None)?;
        let ids = model.beam(&enc, beam, len_norm, special::BOS, special::EOS)?;
        let words: Vec<&str> = ids.iter().map(|&i| vocab.token(i)).collect();
        Ok(ExampleOutput {
            index,
            hypothesis: words.join(" "),
            reference: summary_words(&ex.meta.summary, usize::MAX).join(" "),
        })
    };
    let outputs: Vec<Result<ExampleOutput, TrainError>> = match pool {
        Some(p) => p.install(|| {
            use rayon::prelude::*;
            examples.par_iter().enumerate().map(decode_one).collect()
        }),
        None => examples.iter().enumerate().map(decode_one).collect(),
    };
    let outputs: Vec<ExampleOutput> = outputs.into_iter().collect::<Result<_, _>>()?;
    let hyps: Vec<Vec<String>> = outputs
        .iter()
        .map(|o| o.hypothesis.split_whitespace().map(String::from).collect())
        .collect();
    let refs: Vec<Vec<String>> = outputs
        .iter()
        .map(|o| o.reference.split_whitespace().map(String::from).collect())
        .collect();
    Ok(EvalReport {
        bleu: bleu(&hyps, &refs)?,
        rouge_l: rouge_l(&hyps, &refs)?,
        outputs,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Persist a trained run: checkpoint, vocabulary, and both configs.
pub fn save_run(
    dir: &Path,
    model: &SitModel,
    vocab: &Vocab,
    tcfg: &TrainConfig,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let ckpt = dir.join("checkpoint.bin");
    std::fs::write(&ckpt, model.to_checkpoint()).map_err(|e| io_err(&ckpt, e))?;
    let vpath = dir.join("vocab.json");
    std::fs::write(&vpath, vocab.to_json()).map_err(|e| io_err(&vpath, e))?;
    let cpath = dir.join("config.json");
    let cfg_json = serde_json::json!({ "sit": model.cfg, "train": tcfg });
    std::fs::write(&cpath, serde_json::to_string_pretty(&cfg_json).unwrap())
        .map_err(|e| io_err(&cpath, e))?;
    Ok(())
}

/// Load a run saved by [`save_run`].
pub fn load_run(dir: &Path) -> Result<(SitModel, Vocab, TrainConfig), TrainError> {
    let cpath = dir.join("config.json");
    let text = std::fs::read_to_string(&cpath).map_err(|e| io_err(&cpath, e))?;
    let parsed: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| TrainError::Format(e.to_string()))?;
    let sit: SitConfig = serde_json::from_value(parsed["sit"].clone())
        .map_err(|e| TrainError::Format(format!("bad sit config: {e}")))?;
    let tcfg: TrainConfig = serde_json::from_value(parsed["train"].clone())
        .map_err(|e| TrainError::Format(format!("bad train config: {e}")))?;
    let vpath = dir.join("vocab.json");
    let vocab =
        Vocab::from_json(&std::fs::read_to_string(&vpath).map_err(|e| io_err(&vpath, e))?)?;
    let ckpt = dir.join("checkpoint.bin");
    let bytes = std::fs::read(&ckpt).map_err(|e| io_err(&ckpt, e))?;
    let model = SitModel::from_checkpoint(sit, vocab.len(), &bytes)?;
    Ok((model, vocab, tcfg))
}

//! Command-line workflows: corpus generation, graph extraction, training,
//! evaluation, one-shot summarization, and the ablation suites.
//!
//! Every command writes a run manifest into its output directory before
//! doing any work, so a run is reproducible from the manifest alone.
//! Failures print a machine-readable JSON object on stderr and exit
//! non-zero.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sit_core::codegraph::{graph_from_source, serialize_graph, DepMode, GraphOptions};
use sit_core::sitmodel::{PatternKind, SitConfig};
use sit_core::trainer::{
    ablate, corpus_from_jsonl, corpus_to_jsonl, evaluate_parallel, gen_corpus, load_run,
    log_to_csv, prepare_dataset, rows_to_csv, save_run, special, train, AblateOptions,
    SourceMode, Suite, Task, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "sit",
    about = "Structure-induced transformer for code summarization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GraphFlags {
    /// Weight of the abstract-syntax view
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Weight of the control-flow view
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Weight of the data-dependency view
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Dependency edges: def-use chains or all occurrence pairs
    #[arg(long, default_value = "defuse", value_parser = parse_dep_mode)]
    dep_mode: DepMode,
}

fn parse_dep_mode(s: &str) -> Result<DepMode, String> {
    match s {
        "defuse" => Ok(DepMode::DefUse),
        "allpairs" => Ok(DepMode::AllPairs),
        other => Err(format!("unknown dep mode {other:?} (defuse|allpairs)")),
    }
}

impl GraphFlags {
    fn options(&self) -> GraphOptions {
        GraphOptions {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            dep_mode: self.dep_mode,
            ..GraphOptions::default()
        }
    }
}

#[derive(Args, Clone)]
struct ConfigFlags {
    /// JSON config file holding {"sit": {...}, "train": {...}}; flags
    /// override file values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    decoder_layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Encoder layer pattern, e.g. GSGS
    #[arg(long)]
    layer_pattern: Option<String>,
    /// structured | full | window:<w> | random:<r>:<seed>
    #[arg(long, value_parser = parse_pattern)]
    pattern: Option<PatternKind>,
    #[arg(long)]
    module_aggregation: Option<bool>,
    #[arg(long)]
    share_encoder_params: Option<bool>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_pattern(s: &str) -> Result<PatternKind, String> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["structured"] => Ok(PatternKind::Structured),
        ["full"] => Ok(PatternKind::Full),
        ["window", w] => w
            .parse()
            .map(|w| PatternKind::Window { w })
            .map_err(|e: std::num::ParseIntError| e.to_string()),
        ["random", r, seed] => Ok(PatternKind::Random {
            r: r.parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            seed: seed
                .parse()
                .map_err(|e: std::num::ParseIntError| e.to_string())?,
        }),
        _ => Err(format!(
            "unknown pattern {s:?} (structured|full|window:<w>|random:<r>:<seed>)"
        )),
    }
}

impl ConfigFlags {
    fn resolve(&self) -> Result<(SitConfig, TrainConfig), CliError> {
        let (mut sit, mut tr) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::io(path.display().to_string(), e))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                let sit = match value.get("sit") {
                    Some(v) => serde_json::from_value(v.clone())
                        .map_err(|e| CliError::config(format!("bad sit config: {e}")))?,
                    None => SitConfig::default(),
                };
                let tr = match value.get("train") {
                    Some(v) => serde_json::from_value(v.clone())
                        .map_err(|e| CliError::config(format!("bad train config: {e}")))?,
                    None => TrainConfig::default(),
                };
                (sit, tr)
            }
            None => (SitConfig::default(), TrainConfig::default()),
        };
        macro_rules! over {
            ($field:expr, $opt:expr) => {
                if let Some(v) = $opt.clone() {
                    $field = v;
                }
            };
        }
        over!(sit.d_model, self.d_model);
        over!(sit.heads, self.heads);
        over!(sit.d_ff, self.d_ff);
        over!(sit.encoder_layers, self.encoder_layers);
        over!(sit.decoder_layers, self.decoder_layers);
        over!(sit.dropout, self.dropout);
        over!(sit.layer_pattern, self.layer_pattern);
        over!(sit.pattern, self.pattern);
        over!(sit.module_aggregation, self.module_aggregation);
        over!(sit.share_encoder_params, self.share_encoder_params);
        if self.layer_pattern.is_none() && sit.layer_pattern.len() != sit.encoder_layers {
            // keep the pattern consistent with an overridden layer count
            // unless the caller pinned one explicitly
            sit.layer_pattern = SitConfig::gs_pattern(sit.encoder_layers);
        }
        over!(tr.batch_size, self.batch_size);
        over!(tr.lr, self.lr);
        over!(tr.max_epochs, self.epochs);
        over!(tr.max_steps, self.max_steps);
        over!(tr.seed, self.seed);
        over!(tr.threads, self.threads);
        sit.validate().map_err(|e| CliError::config(e.to_string()))?;
        tr.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok((sit, tr))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus as JSON Lines
    GenCorpus {
        /// Number of examples (at least 1)
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// rename | dataflow | mixed
        #[arg(long, default_value = "mixed")]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one multi-view graph file per corpus example
    BuildGraphs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        graph: GraphFlags,
        /// Fail on the first unparsable example instead of reporting it
        #[arg(long, default_value_t = false)]
        strict: bool,
    },
    /// Train a model on a corpus
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Held-out corpus for per-epoch greedy validation
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        graph: GraphFlags,
        /// Feed SBT-flattened sequences instead of graphs
        #[arg(long, default_value_t = false)]
        sbt: bool,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Evaluate a checkpoint on a corpus with beam search
    Evaluate {
        /// Run directory produced by `sit train`
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = 4)]
        beam: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        graph: GraphFlags,
    },
    /// Summarize one source file (or stdin) with a trained model
    Summarize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source file; stdin when omitted
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = 4)]
        beam: u64,
        #[command(flatten)]
        graph: GraphFlags,
    },
    /// Run an ablation suite and emit a comparison CSV
    Ablate {
        /// patterns | proportion | sharing | sbt
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training seeds
        #[arg(long, default_value = "1")]
        seeds: String,
        #[arg(long, default_value_t = 4)]
        window_w: usize,
        #[arg(long, default_value_t = 2)]
        random_r: usize,
        #[command(flatten)]
        config: ConfigFlags,
    },
}

#[derive(Debug, serde::Serialize)]
struct CliError {
    error: &'static str,
    message: String,
}

impl CliError {
    fn io(path: String, e: std::io::Error) -> CliError {
        CliError {
            error: "io",
            message: format!("{path}: {e}"),
        }
    }
    fn config(message: String) -> CliError {
        CliError {
            error: "config",
            message,
        }
    }
    fn run(message: String) -> CliError {
        CliError {
            error: "run",
            message,
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::run(e.to_string())
    }
}

/// Written into every output directory before any work happens.
#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config_paths: Vec<String>,
    seed: Option<u64>,
    git_describe: String,
    timestamp: String,
    output_dir: String,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn write_manifest(
    out: &Path,
    command: &str,
    config_paths: Vec<String>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out.display().to_string(), e))?;
    let manifest = RunManifest {
        command: command.to_string(),
        args: std::env::args().collect(),
        config_paths,
        seed,
        git_describe: git_describe(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        output_dir: out.display().to_string(),
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| CliError::io(path.display().to_string(), e))
}

fn read_corpus(path: &Path) -> Result<Vec<sit_core::trainer::CorpusItem>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(path.display().to_string(), e))?;
    corpus_from_jsonl(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus { n, seed, task, out } => {
            write_manifest(&out, "gen-corpus", vec![], Some(seed))?;
            let items = gen_corpus(n as usize, seed, task);
            write_file(&out.join("corpus.jsonl"), corpus_to_jsonl(&items))?;
            println!("wrote {} examples to {}", items.len(), out.display());
            Ok(())
        }
        Command::BuildGraphs {
            corpus,
            out,
            graph,
            strict,
        } => {
            write_manifest(&out, "build-graphs", vec![], None)?;
            let items = read_corpus(&corpus)?;
            let opts = graph.options();
            let mut failures = Vec::new();
            let mut written = 0usize;
            for (i, item) in items.iter().enumerate() {
                match graph_from_source(&item.code, &opts) {
                    Ok(g) => {
                        write_file(&out.join(format!("graph_{i:06}.json")), serialize_graph(&g))?;
                        written += 1;
                    }
                    Err(e) => {
                        if strict {
                            return Err(CliError::run(format!("example {i}: {e}")));
                        }
                        failures.push(serde_json::json!({"index": i, "error": e.to_string()}));
                    }
                }
            }
            write_file(
                &out.join("errors.json"),
                serde_json::to_string_pretty(&failures).unwrap(),
            )?;
            println!(
                "wrote {written} graphs to {} ({} failures)",
                out.display(),
                failures.len()
            );
            Ok(())
        }
        Command::Train {
            corpus,
            val,
            out,
            graph,
            sbt,
            config,
        } => {
            let (sit_cfg, tcfg) = config.resolve()?;
            write_manifest(
                &out,
                "train",
                config
                    .config
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect(),
                Some(tcfg.seed),
            )?;
            let items = read_corpus(&corpus)?;
            let mode = if sbt {
                SourceMode::Sbt
            } else {
                SourceMode::Graph(graph.options())
            };
            let (vocab, examples) = prepare_dataset(&items, &mode, &sit_cfg, None)?;
            let val_examples = match val {
                Some(vpath) => {
                    let vitems = read_corpus(&vpath)?;
                    Some(prepare_dataset(&vitems, &mode, &sit_cfg, Some(&vocab))?.1)
                }
                None => None,
            };
            let outcome = train(&examples, val_examples.as_deref(), &sit_cfg, &tcfg, &vocab)?;
            save_run(&out, &outcome.model, &vocab, &tcfg)?;
            write_file(&out.join("train_log.csv"), log_to_csv(&outcome.log))?;
            let last = outcome.log.last();
            println!(
                "trained {} steps; final loss {:.4}, token accuracy {:.3}; run saved to {}",
                outcome.steps_run,
                last.map(|l| l.train_loss).unwrap_or(f64::NAN),
                last.map(|l| l.token_acc).unwrap_or(0.0),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            beam,
            out,
            graph,
        } => {
            write_manifest(&out, "evaluate", vec![], None)?;
            let (model, vocab, tcfg) = load_run(&checkpoint)?;
            let items = read_corpus(&corpus)?;
            let mode = SourceMode::Graph(graph.options());
            let (_, examples) = prepare_dataset(&items, &mode, &model.cfg, Some(&vocab))?;
            let report = evaluate_parallel(
                &model,
                &vocab,
                &examples,
                beam as usize,
                tcfg.len_norm,
                tcfg.resolve_threads(),
            )?;
            let csv = format!(
                "beam,bleu,rouge_l,examples\n{beam},{:.6},{:.6},{}\n",
                report.bleu,
                report.rouge_l,
                report.outputs.len()
            );
            write_file(&out.join("metrics.csv"), csv)?;
            let mut outputs = report
                .outputs
                .iter()
                .map(|o| serde_json::to_string(o).unwrap())
                .collect::<Vec<_>>()
                .join("\n");
            outputs.push('\n');
            write_file(&out.join("outputs.jsonl"), outputs)?;
            println!(
                "BLEU {:.4}  ROUGE-L {:.4} over {} examples",
                report.bleu,
                report.rouge_l,
                report.outputs.len()
            );
            Ok(())
        }
        Command::Summarize {
            checkpoint,
            source,
            beam,
            graph,
        } => {
            let code = match source {
                Some(path) => std::fs::read_to_string(&path)
                    .map_err(|e| CliError::io(path.display().to_string(), e))?,
                None => {
                    let mut buf = String::new();
                    std::io::stdin()
                        .read_to_string(&mut buf)
                        .map_err(|e| CliError::io("<stdin>".into(), e))?;
                    buf
                }
            };
            let (model, vocab, tcfg) = load_run(&checkpoint)?;
            let opts = GraphOptions {
                max_tokens: model.cfg.max_src_len,
                ..graph.options()
            };
            let g = graph_from_source(&code, &opts)?;
            let mut ids = Vec::with_capacity(g.n());
            ids.push(special::ROOT);
            ids.extend(g.tokens.iter().map(|t| vocab.id(t)));
            let memory = model.encode(&ids, &g, None, None)?;
            let out_ids = model.beam(
                &memory,
                beam as usize,
                tcfg.len_norm,
                special::BOS,
                special::EOS,
            )?;
            let words: Vec<&str> = out_ids.iter().map(|&i| vocab.token(i)).collect();
            println!("{}", words.join(" "));
            Ok(())
        }
        Command::Ablate {
            suite,
            corpus,
            test,
            out,
            seeds,
            window_w,
            random_r,
            config,
        } => {
            let (sit_cfg, tcfg) = config.resolve()?;
            write_manifest(
                &out,
                "ablate",
                config
                    .config
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect(),
                Some(tcfg.seed),
            )?;
            let train_items = read_corpus(&corpus)?;
            let test_items = read_corpus(&test)?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::config(format!("bad --seeds: {e}")))?;
            let rows = ablate(
                suite,
                &train_items,
                &test_items,
                &sit_cfg,
                &tcfg,
                &AblateOptions {
                    seeds,
                    window_w,
                    random_r,
                },
            )?;
            write_file(&out.join("ablation.csv"), rows_to_csv(&rows))?;
            println!("{}", rows_to_csv(&rows).trim_end());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).unwrap());
            ExitCode::FAILURE
        }
    }
}

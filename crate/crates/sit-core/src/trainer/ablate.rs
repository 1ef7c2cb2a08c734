//! Ablation suites: attention patterns, graph-layer proportion, encoder
//! parameter sharing, and the SBT sequential baseline. Every variant trains
//! with matched seeds and budgets and reports test BLEU / ROUGE-L plus
//! wall-clock per epoch.

use crate::codegraph::GraphOptions;
use crate::sitmodel::{PatternKind, SitConfig};

use super::{
    evaluate_parallel, prepare_dataset, train, CorpusItem, SourceMode, TrainConfig, TrainError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Patterns,
    Proportion,
    Sharing,
    Sbt,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patterns" => Ok(Suite::Patterns),
            "proportion" => Ok(Suite::Proportion),
            "sharing" => Ok(Suite::Sharing),
            "sbt" => Ok(Suite::Sbt),
            other => Err(format!(
                "unknown suite {other:?} (patterns|proportion|sharing|sbt)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblateOptions {
    pub seeds: Vec<u64>,
    /// Window half-width for the window pattern.
    pub window_w: usize,
    /// Random partners per row for the random pattern.
    pub random_r: usize,
}

impl Default for AblateOptions {
    fn default() -> Self {
        AblateOptions {
            seeds: vec![1],
            window_w: 4,
            random_r: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblateRow {
    pub variant: String,
    pub seed: u64,
    pub bleu: f64,
    pub rouge_l: f64,
    pub epochs: usize,
    pub seconds_per_epoch: f64,
}

pub fn rows_to_csv(rows: &[AblateRow]) -> String {
    let mut out = String::from("variant,seed,bleu,rouge_l,epochs,seconds_per_epoch\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{:.3}\n",
            r.variant, r.seed, r.bleu, r.rouge_l, r.epochs, r.seconds_per_epoch
        ));
    }
    out
}

struct Variant {
    name: &'static str,
    cfg: SitConfig,
    mode: SourceMode,
}

fn all_s(base: &SitConfig) -> String {
    "S".repeat(base.encoder_layers)
}

fn all_g(base: &SitConfig) -> String {
    "G".repeat(base.encoder_layers)
}

/// Alternating pattern used by the 50% proportion row: S on every even
/// position counted from 1 (the second, fourth, ... layer).
fn half_gs(base: &SitConfig) -> String {
    (0..base.encoder_layers)
        .map(|i| if i % 2 == 1 { 'S' } else { 'G' })
        .collect()
}

fn variants(suite: Suite, base: &SitConfig, opts: &AblateOptions) -> Vec<Variant> {
    let graph_mode = SourceMode::Graph(GraphOptions::default());
    match suite {
        Suite::Patterns => {
            let plain = SitConfig {
                layer_pattern: all_s(base),
                module_aggregation: false,
                ..base.clone()
            };
            [
                ("full", PatternKind::Full),
                ("window", PatternKind::Window { w: opts.window_w }),
                (
                    "random",
                    PatternKind::Random {
                        r: opts.random_r,
                        seed: 13,
                    },
                ),
                ("structured", PatternKind::Structured),
            ]
            .into_iter()
            .map(|(name, pattern)| Variant {
                name,
                cfg: SitConfig {
                    pattern,
                    ..plain.clone()
                },
                mode: graph_mode.clone(),
            })
            .collect()
        }
        Suite::Proportion => vec![
            Variant {
                name: "0%",
                cfg: SitConfig {
                    layer_pattern: all_g(base),
                    module_aggregation: false,
                    ..base.clone()
                },
                mode: graph_mode.clone(),
            },
            Variant {
                name: "50%",
                cfg: SitConfig {
                    layer_pattern: half_gs(base),
                    module_aggregation: false,
                    ..base.clone()
                },
                mode: graph_mode.clone(),
            },
            Variant {
                name: "100%",
                cfg: SitConfig {
                    layer_pattern: all_s(base),
                    module_aggregation: false,
                    ..base.clone()
                },
                mode: graph_mode.clone(),
            },
            Variant {
                name: "sit_50%",
                cfg: SitConfig {
                    layer_pattern: SitConfig::gs_pattern(base.encoder_layers),
                    module_aggregation: true,
                    ..base.clone()
                },
                mode: graph_mode.clone(),
            },
        ],
        Suite::Sharing => {
            let transformer = SitConfig {
                layer_pattern: all_g(base),
                module_aggregation: false,
                pattern: PatternKind::Full,
                ..base.clone()
            };
            let sit = SitConfig {
                layer_pattern: SitConfig::gs_pattern(base.encoder_layers),
                module_aggregation: true,
                pattern: PatternKind::Structured,
                ..base.clone()
            };
            vec![
                Variant {
                    name: "transformer",
                    cfg: transformer.clone(),
                    mode: graph_mode.clone(),
                },
                Variant {
                    name: "transformer_shared",
                    cfg: SitConfig {
                        share_encoder_params: true,
                        ..transformer
                    },
                    mode: graph_mode.clone(),
                },
                Variant {
                    name: "sit",
                    cfg: sit.clone(),
                    mode: graph_mode.clone(),
                },
                Variant {
                    name: "sit_shared",
                    cfg: SitConfig {
                        share_encoder_params: true,
                        ..sit
                    },
                    mode: graph_mode.clone(),
                },
            ]
        }
        Suite::Sbt => vec![
            // Both rows use syntax information only: the graph side keeps
            // the abstract-syntax view alone, the SBT side linearizes it.
            Variant {
                name: "sit_ast_only",
                cfg: base.clone(),
                mode: SourceMode::Graph(GraphOptions {
                    beta: 0.0,
                    gamma: 0.0,
                    ..GraphOptions::default()
                }),
            },
            Variant {
                name: "sbt",
                cfg: SitConfig {
                    layer_pattern: all_g(base),
                    module_aggregation: false,
                    pattern: PatternKind::Full,
                    ..base.clone()
                },
                mode: SourceMode::Sbt,
            },
        ],
    }
}

/// Train and evaluate every suite variant under every seed, sequentially
/// (so per-epoch timings are comparable).
pub fn ablate(
    suite: Suite,
    train_corpus: &[CorpusItem],
    test_corpus: &[CorpusItem],
    base_cfg: &SitConfig,
    base_train: &TrainConfig,
    opts: &AblateOptions,
) -> Result<Vec<AblateRow>, TrainError> {
    let mut rows = Vec::new();
    for variant in variants(suite, base_cfg, opts) {
        for &seed in &opts.seeds {
            let (vocab, train_set) =
                prepare_dataset(train_corpus, &variant.mode, &variant.cfg, None)?;
            let (_, test_set) =
                prepare_dataset(test_corpus, &variant.mode, &variant.cfg, Some(&vocab))?;
            let tcfg = TrainConfig {
                seed,
                ..base_train.clone()
            };
            let outcome = train(&train_set, None, &variant.cfg, &tcfg, &vocab)?;
            let report = evaluate_parallel(
                &outcome.model,
                &vocab,
                &test_set,
                tcfg.eval_beam,
                tcfg.len_norm,
                tcfg.resolve_threads(),
            )?;
            let epochs = outcome.log.len();
            let seconds_per_epoch = if epochs > 0 {
                outcome.log.iter().map(|l| l.seconds).sum::<f64>() / epochs as f64
            } else {
                0.0
            };
            rows.push(AblateRow {
                variant: variant.name.to_string(),
                seed,
                bleu: report.bleu,
                rouge_l: report.rouge_l,
                epochs,
                seconds_per_epoch,
            });
        }
    }
    Ok(rows)
}

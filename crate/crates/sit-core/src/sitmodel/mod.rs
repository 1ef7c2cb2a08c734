//! The structure-induced transformer.
//!
//! An encoder-decoder over subtoken sequences. Encoder layers follow a
//! configurable pattern of plain self-attention (`G`) and graph-restricted
//! self-attention (`S`); in the default configuration each `GS` pair forms
//! a module whose two sublayer outputs are summed position-wise. The
//! decoder is a standard transformer decoder with causal self-attention
//! and unrestricted cross-attention. Relative position encoding (clipped,
//! keys-only, shared across heads) replaces absolute positions everywhere.

mod attention;
mod search;

pub use attention::{pattern_mask, AttentionMask};
pub use search::{beam_decode, greedy_decode, Hypothesis};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegraph::MultiViewGraph;
use crate::numkit::{
    self, add, add_bias, concat_cols, cross_entropy_sum, embedding_lookup, layer_norm,
    load_checkpoint, matmul, mul, relu, rpe_scores, save_checkpoint, scale, slice_cols,
    softmax_rows, transpose, CheckpointEntry, DType, NumError, ParamId, ParamSet, Tensor,
};

#[derive(Debug, Error)]
pub enum SitError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("token sequence has {tokens} positions but the graph has {graph}")]
    GraphSizeMismatch { tokens: usize, graph: usize },
    #[error("prefix of {len} tokens exceeds max_tgt_len {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("source of {len} tokens exceeds max_src_len {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

/// How the combined matrix enters attention. `Masked` drops forbidden
/// pairs to exactly zero probability; `Multiplicative` scales the
/// pre-softmax logits by the combined weights (and still zeroes pairs
/// whose weight is zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    #[default]
    Masked,
    Multiplicative,
}

/// Encoder attention pattern for `S` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PatternKind {
    #[default]
    Structured,
    Full,
    Window {
        w: usize,
    },
    Random {
        r: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout: f64,
    /// Relative-position clip distance; 0 disables relative positions.
    pub rpe_clip: usize,
    pub attention_mode: AttentionMode,
    pub pattern: PatternKind,
    /// One char per encoder layer: `G` for plain self-attention, `S` for
    /// structure-induced self-attention.
    pub layer_pattern: String,
    /// Sum each consecutive layer pair's outputs (the structure-induced
    /// module). Requires an even layer count.
    pub module_aggregation: bool,
    pub share_encoder_params: bool,
}

impl Default for SitConfig {
    /// Desk-scale defaults. The full-scale setting (d_model 512, 8 heads,
    /// d_ff 2048, 6+6 layers) is reachable through configuration.
    fn default() -> Self {
        SitConfig {
            d_model: 128,
            heads: 4,
            d_ff: 512,
            encoder_layers: 4,
            decoder_layers: 4,
            max_src_len: 400,
            max_tgt_len: 32,
            dropout: 0.1,
            rpe_clip: 16,
            attention_mode: AttentionMode::Masked,
            pattern: PatternKind::Structured,
            layer_pattern: "GSGS".into(),
            module_aggregation: true,
            share_encoder_params: false,
        }
    }
}

impl SitConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn n_modules(&self) -> usize {
        self.encoder_layers / 2
    }

    /// The default alternating pattern for a given depth.
    pub fn gs_pattern(encoder_layers: usize) -> String {
        "GS".repeat(encoder_layers / 2)
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<(), SitError> {
        let mut problems = Vec::new();
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            problems.push(format!(
                "d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            ));
        }
        if self.encoder_layers == 0 || self.encoder_layers % 2 != 0 {
            problems.push(format!(
                "encoder_layers ({}) must be positive and even",
                self.encoder_layers
            ));
        }
        if self.decoder_layers == 0 {
            problems.push("decoder_layers must be positive".into());
        }
        if self.layer_pattern.len() != self.encoder_layers {
            problems.push(format!(
                "layer_pattern {:?} must have one character per encoder layer ({})",
                self.layer_pattern, self.encoder_layers
            ));
        }
        if !self.layer_pattern.chars().all(|c| c == 'G' || c == 'S') {
            problems.push(format!(
                "layer_pattern {:?} may only contain 'G' and 'S'",
                self.layer_pattern
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout ({}) must be in [0, 1)", self.dropout));
        }
        if self.max_src_len < 2 || self.max_tgt_len < 2 {
            problems.push("max_src_len and max_tgt_len must be at least 2".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SitError::Config(problems))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
    rpe: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct FfnIds {
    lift: LinearIds,
    drop: LinearIds,
}

#[derive(Debug, Clone, Copy)]
struct EncLayerIds {
    attn: AttnIds,
    ln_attn: NormIds,
    ffn: FfnIds,
    ln_ffn: NormIds,
}

#[derive(Debug, Clone, Copy)]
struct DecLayerIds {
    self_attn: AttnIds,
    ln_self: NormIds,
    cross: AttnIds,
    ln_cross: NormIds,
    ffn: FfnIds,
    ln_ffn: NormIds,
}

#[derive(Debug, Clone)]
struct Arch {
    src_embed: ParamId,
    tgt_embed: ParamId,
    enc: Vec<EncLayerIds>,
    dec: Vec<DecLayerIds>,
    out: LinearIds,
}

/// Attention probabilities captured during a forward pass, for mask and
/// pattern diagnostics.
#[derive(Debug, Default)]
pub struct AttnCapture {
    pub records: Vec<AttnRecord>,
}

#[derive(Debug)]
pub struct AttnRecord {
    pub layer: usize,
    pub head: usize,
    /// True when the layer used the structured/pattern mask (an S layer).
    pub structured: bool,
    pub rows: usize,
    pub cols: usize,
    pub probs: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller keeps the dependency surface small and the stream
    // deterministic.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub struct SitModel {
    pub cfg: SitConfig,
    pub vocab_size: usize,
    pub params: ParamSet,
    arch: Arch,
    dtype: DType,
}

impl SitModel {
    pub fn new(
        cfg: SitConfig,
        vocab_size: usize,
        seed: u64,
        dtype: DType,
    ) -> Result<Self, SitError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = cfg.d_model;
        let embed =
            |params: &mut ParamSet, name: &str, rows: usize, rng: &mut ChaCha8Rng| -> ParamId {
                let data = (0..rows * d).map(|_| normal(rng, 0.02)).collect();
                params.add(name, Tensor::param_with_dtype(&[rows, d], data, dtype))
            };
        let src_embed = embed(&mut params, "src_embed", vocab_size, &mut rng);
        let tgt_embed = embed(&mut params, "tgt_embed", vocab_size, &mut rng);

        let linear = |params: &mut ParamSet,
                      name: &str,
                      fan_in: usize,
                      fan_out: usize,
                      rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            LinearIds {
                w: params.add(
                    format!("{name}.w"),
                    Tensor::param_with_dtype(&[fan_in, fan_out], w, dtype),
                ),
                b: params.add(
                    format!("{name}.b"),
                    Tensor::param_with_dtype(&[fan_out], vec![0.0; fan_out], dtype),
                ),
            }
        };
        let norm = |params: &mut ParamSet, name: &str| NormIds {
            g: params.add(
                format!("{name}.g"),
                Tensor::param_with_dtype(&[d], vec![1.0; d], dtype),
            ),
            b: params.add(
                format!("{name}.b"),
                Tensor::param_with_dtype(&[d], vec![0.0; d], dtype),
            ),
        };
        let attn = |params: &mut ParamSet, name: &str, rng: &mut ChaCha8Rng| {
            let rpe = if cfg.rpe_clip > 0 {
                let rows = 2 * cfg.rpe_clip + 1;
                let data = (0..rows * cfg.d_k()).map(|_| normal(rng, 0.02)).collect();
                Some(params.add(
                    format!("{name}.rpe"),
                    Tensor::param_with_dtype(&[rows, cfg.d_k()], data, dtype),
                ))
            } else {
                None
            };
            AttnIds {
                q: linear(params, &format!("{name}.q"), d, d, rng),
                k: linear(params, &format!("{name}.k"), d, d, rng),
                v: linear(params, &format!("{name}.v"), d, d, rng),
                o: linear(params, &format!("{name}.o"), d, d, rng),
                rpe,
            }
        };
        let ffn = |params: &mut ParamSet, name: &str, rng: &mut ChaCha8Rng| FfnIds {
            lift: linear(params, &format!("{name}.lift"), d, cfg.d_ff, rng),
            drop: linear(params, &format!("{name}.drop"), cfg.d_ff, d, rng),
        };

        let mut enc = Vec::with_capacity(cfg.encoder_layers);
        if cfg.share_encoder_params {
            let p = "encoder.shared";
            let layer = EncLayerIds {
                attn: attn(&mut params, &format!("{p}.attn"), &mut rng),
                ln_attn: norm(&mut params, &format!("{p}.ln_attn")),
                ffn: ffn(&mut params, &format!("{p}.ffn"), &mut rng),
                ln_ffn: norm(&mut params, &format!("{p}.ln_ffn")),
            };
            enc.resize(cfg.encoder_layers, layer);
        } else {
            for i in 0..cfg.encoder_layers {
                let p = format!("encoder.{i}");
                enc.push(EncLayerIds {
                    attn: attn(&mut params, &format!("{p}.attn"), &mut rng),
                    ln_attn: norm(&mut params, &format!("{p}.ln_attn")),
                    ffn: ffn(&mut params, &format!("{p}.ffn"), &mut rng),
                    ln_ffn: norm(&mut params, &format!("{p}.ln_ffn")),
                });
            }
        }
        let mut dec = Vec::with_capacity(cfg.decoder_layers);
        for i in 0..cfg.decoder_layers {
            let p = format!("decoder.{i}");
            dec.push(DecLayerIds {
                self_attn: attn(&mut params, &format!("{p}.self"), &mut rng),
                ln_self: norm(&mut params, &format!("{p}.ln_self")),
                cross: attn(&mut params, &format!("{p}.cross"), &mut rng),
                ln_cross: norm(&mut params, &format!("{p}.ln_cross")),
                ffn: ffn(&mut params, &format!("{p}.ffn"), &mut rng),
                ln_ffn: norm(&mut params, &format!("{p}.ln_ffn")),
            });
        }
        let out = linear(&mut params, "out", d, vocab_size, &mut rng);
        Ok(SitModel {
            cfg,
            vocab_size,
            params,
            arch: Arch {
                src_embed,
                tgt_embed,
                enc,
                dec,
                out,
            },
            dtype,
        })
    }

    fn p(&self, id: ParamId) -> Tensor {
        self.params.get(id)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Scalar count of encoder-owned parameters.
    pub fn encoder_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("encoder."))
            .map(|p| p.tensor.len())
            .sum()
    }

    fn linear(&self, x: &Tensor, ids: &LinearIds) -> Result<Tensor, SitError> {
        Ok(add_bias(&matmul(x, &self.p(ids.w))?, &self.p(ids.b))?)
    }

    fn dropout(&self, x: &Tensor, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Tensor, SitError> {
        let p = self.cfg.dropout;
        let Some(r) = rng.as_deref_mut() else {
            return Ok(x.clone());
        };
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if r.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(mul(x, &Tensor::from_vec(x.shape(), mask))?)
    }

    /// Multi-head attention core: projections, per-head masked softmax
    /// (with optional relative-position scores and multiplicative weights),
    /// head concatenation and the output projection. No residual, norm or
    /// feed-forward here.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        ids: &AttnIds,
        x_q: &Tensor,
        x_kv: &Tensor,
        mask: &AttentionMask,
        use_rpe: bool,
        capture: &mut Option<&mut AttnCapture>,
        layer: usize,
        structured: bool,
    ) -> Result<Tensor, SitError> {
        let dk = self.cfg.d_k();
        let q = self.linear(x_q, &ids.q)?;
        let k = self.linear(x_kv, &ids.k)?;
        let v = self.linear(x_kv, &ids.v)?;
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = slice_cols(&q, h * dk, dk)?;
            let kh = slice_cols(&k, h * dk, dk)?;
            let vh = slice_cols(&v, h * dk, dk)?;
            let mut scores = matmul(&qh, &transpose(&kh)?)?;
            if use_rpe {
                if let Some(rpe) = ids.rpe {
                    scores = add(&scores, &rpe_scores(&qh, &self.p(rpe), self.cfg.rpe_clip)?)?;
                }
            }
            scores = scale(&scores, inv_sqrt);
            if let Some(w) = &mask.weights {
                scores = mul(
                    &scores,
                    &Tensor::from_vec(scores.shape(), w.as_ref().clone()),
                )?;
            }
            let probs = softmax_rows(&scores, Some(&mask.allowed))?;
            if let Some(cap) = capture.as_deref_mut() {
                cap.records.push(AttnRecord {
                    layer,
                    head: h,
                    structured,
                    rows: mask.n_q,
                    cols: mask.n_k,
                    probs: probs.data().to_vec(),
                });
            }
            heads.push(matmul(&probs, &vh)?);
        }
        let cat = concat_cols(&heads)?;
        self.linear(&cat, &ids.o)
    }

    /// Plain self-attention over `x` using an encoder layer's weights (the
    /// `G` sublayer core). With no mask the attention graph is complete.
    pub fn san(
        &self,
        layer: usize,
        x: &Tensor,
        self_mask: Option<&AttentionMask>,
    ) -> Result<Tensor, SitError> {
        let l = x.shape()[0];
        let full = AttentionMask::full(l);
        let mask = self_mask.unwrap_or(&full);
        self.attention(
            &self.arch.enc[layer].attn,
            x,
            x,
            mask,
            true,
            &mut None,
            layer,
            false,
        )
    }

    /// Structure-induced self-attention: the same computation as
    /// [`SitModel::san`] under a graph-derived mask.
    pub fn si_san(&self, layer: usize, x: &Tensor, mask: &AttentionMask) -> Result<Tensor, SitError> {
        self.attention(
            &self.arch.enc[layer].attn,
            x,
            x,
            mask,
            true,
            &mut None,
            layer,
            true,
        )
    }

    fn ffn(&self, x: &Tensor, ids: &FfnIds) -> Result<Tensor, SitError> {
        let h = relu(&self.linear(x, &ids.lift)?);
        self.linear(&h, &ids.drop)
    }

    fn encoder_layer(
        &self,
        li: usize,
        x: &Tensor,
        mask: &AttentionMask,
        structured: bool,
        rng: &mut Option<&mut ChaCha8Rng>,
        capture: &mut Option<&mut AttnCapture>,
    ) -> Result<Tensor, SitError> {
        let ids = &self.arch.enc[li];
        let a = self.attention(&ids.attn, x, x, mask, true, capture, li, structured)?;
        let a = self.dropout(&a, rng)?;
        let h = layer_norm(&add(x, &a)?, &self.p(ids.ln_attn.g), &self.p(ids.ln_attn.b))?;
        let f = self.ffn(&h, &ids.ffn)?;
        let f = self.dropout(&f, rng)?;
        Ok(layer_norm(
            &add(&h, &f)?,
            &self.p(ids.ln_ffn.g),
            &self.p(ids.ln_ffn.b),
        )?)
    }

    /// Mask used by `S` layers for a sequence of length `l`.
    fn structure_mask(&self, graph: &MultiViewGraph, l: usize) -> AttentionMask {
        pattern_mask(&self.cfg.pattern, graph, l, self.cfg.attention_mode)
    }

    pub fn encode(
        &self,
        src_ids: &[usize],
        graph: &MultiViewGraph,
        mut rng: Option<&mut ChaCha8Rng>,
        mut capture: Option<&mut AttnCapture>,
    ) -> Result<Tensor, SitError> {
        self.encode_with(src_ids, graph, &mut rng, &mut capture, false)
    }

    /// Encoder with a diagnostic switch that zeroes the second sublayer of
    /// each module, reducing the stack to its first-sublayer path.
    pub fn encode_with(
        &self,
        src_ids: &[usize],
        graph: &MultiViewGraph,
        rng: &mut Option<&mut ChaCha8Rng>,
        capture: &mut Option<&mut AttnCapture>,
        zero_second_path: bool,
    ) -> Result<Tensor, SitError> {
        let l = src_ids.len();
        if l != graph.n() {
            return Err(SitError::GraphSizeMismatch {
                tokens: l,
                graph: graph.n(),
            });
        }
        if l > self.cfg.max_src_len {
            return Err(SitError::SourceTooLong {
                len: l,
                max: self.cfg.max_src_len,
            });
        }
        let d = self.cfg.d_model;
        let x = embedding_lookup(src_ids, &self.p(self.arch.src_embed))?;
        let x = scale(&x, (d as f64).sqrt());
        let mut x = self.dropout(&x, rng)?;
        let full = AttentionMask::full(l);
        let s_mask = self.structure_mask(graph, l);
        let pattern: Vec<char> = self.cfg.layer_pattern.chars().collect();
        let mask_of = |li: usize| -> (&AttentionMask, bool) {
            if pattern[li] == 'S' {
                (&s_mask, true)
            } else {
                (&full, false)
            }
        };
        if self.cfg.module_aggregation {
            for m in 0..self.cfg.encoder_layers / 2 {
                let (m0, s0) = mask_of(2 * m);
                let h = self.encoder_layer(2 * m, &x, m0, s0, rng, capture)?;
                if zero_second_path {
                    x = h;
                    continue;
                }
                let (m1, s1) = mask_of(2 * m + 1);
                let h2 = self.encoder_layer(2 * m + 1, &h, m1, s1, rng, capture)?;
                x = add(&h, &h2)?;
            }
        } else {
            for li in 0..self.cfg.encoder_layers {
                let (mask, s) = mask_of(li);
                x = self.encoder_layer(li, &x, mask, s, rng, capture)?;
            }
        }
        Ok(x)
    }

    /// Teacher-forced decoder pass: logits for every position of `tgt_in`.
    pub fn decode_train(
        &self,
        memory: &Tensor,
        tgt_in: &[usize],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor, SitError> {
        let t = tgt_in.len();
        if t > self.cfg.max_tgt_len + 1 {
            return Err(SitError::PrefixTooLong {
                len: t,
                max: self.cfg.max_tgt_len,
            });
        }
        let l_mem = memory.shape()[0];
        let d = self.cfg.d_model;
        let y = embedding_lookup(tgt_in, &self.p(self.arch.tgt_embed))?;
        let y = scale(&y, (d as f64).sqrt());
        let mut y = self.dropout(&y, rng)?;
        let causal = AttentionMask::causal(t);
        let cross = AttentionMask::cross(t, l_mem);
        for (li, ids) in self.arch.dec.iter().enumerate() {
            let a = self.attention(&ids.self_attn, &y, &y, &causal, true, &mut None, li, false)?;
            let a = self.dropout(&a, rng)?;
            y = layer_norm(&add(&y, &a)?, &self.p(ids.ln_self.g), &self.p(ids.ln_self.b))?;
            let c = self.attention(&ids.cross, &y, memory, &cross, false, &mut None, li, false)?;
            let c = self.dropout(&c, rng)?;
            y = layer_norm(
                &add(&y, &c)?,
                &self.p(ids.ln_cross.g),
                &self.p(ids.ln_cross.b),
            )?;
            let f = self.ffn(&y, &ids.ffn)?;
            let f = self.dropout(&f, rng)?;
            y = layer_norm(&add(&y, &f)?, &self.p(ids.ln_ffn.g), &self.p(ids.ln_ffn.b))?;
        }
        self.linear(&y, &self.arch.out)
    }

    /// Next-token logits after `prefix` (which starts with the begin
    /// marker).
    pub fn decode_step(&self, memory: &Tensor, prefix: &[usize]) -> Result<Vec<f64>, SitError> {
        if prefix.len() > self.cfg.max_tgt_len {
            return Err(SitError::PrefixTooLong {
                len: prefix.len(),
                max: self.cfg.max_tgt_len,
            });
        }
        let logits = self.decode_train(memory, prefix, &mut None)?;
        let v = self.vocab_size;
        Ok(logits.data()[(prefix.len() - 1) * v..].to_vec())
    }

    pub fn greedy(&self, memory: &Tensor, bos: usize, eos: usize) -> Result<Vec<usize>, SitError> {
        greedy_decode(
            |prefix| self.decode_step(memory, prefix),
            bos,
            eos,
            self.cfg.max_tgt_len,
        )
    }

    pub fn beam(
        &self,
        memory: &Tensor,
        beam: usize,
        len_norm: f64,
        bos: usize,
        eos: usize,
    ) -> Result<Vec<usize>, SitError> {
        beam_decode(
            |prefix| self.decode_step(memory, prefix),
            beam,
            len_norm,
            bos,
            eos,
            self.cfg.max_tgt_len,
        )
    }

    /// Summed token cross-entropy for one example (teacher forcing), plus
    /// the number of counted target positions.
    pub fn example_loss(
        &self,
        src_ids: &[usize],
        graph: &MultiViewGraph,
        tgt: &[usize],
        pad: usize,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, usize), SitError> {
        debug_assert!(tgt.len() >= 2, "target needs begin and end markers");
        let memory = self.encode_with(src_ids, graph, rng, &mut None, false)?;
        let input = &tgt[..tgt.len() - 1];
        let expect: Arc<Vec<usize>> = Arc::new(tgt[1..].to_vec());
        let logits = self.decode_train(&memory, input, rng)?;
        let count = numkit::count_targets(&expect, Some(pad));
        let loss = cross_entropy_sum(&logits, &expect, Some(pad))?;
        Ok((loss, count))
    }

    /// Teacher-forced argmax accuracy: (hits, counted positions).
    pub fn token_accuracy(
        &self,
        src_ids: &[usize],
        graph: &MultiViewGraph,
        tgt: &[usize],
        pad: usize,
    ) -> Result<(usize, usize), SitError> {
        let memory = self.encode_with(src_ids, graph, &mut None, &mut None, false)?;
        let input = &tgt[..tgt.len() - 1];
        let expect = &tgt[1..];
        let logits = self.decode_train(&memory, input, &mut None)?;
        let v = self.vocab_size;
        let mut hit = 0;
        let mut total = 0;
        for (i, &t) in expect.iter().enumerate() {
            if t == pad {
                continue;
            }
            let row = &logits.data()[i * v..(i + 1) * v];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(j, _)| j)
                .unwrap();
            total += 1;
            if argmax == t {
                hit += 1;
            }
        }
        Ok((hit, total))
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let entries: Vec<CheckpointEntry> = self
            .params
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        save_checkpoint(&entries)
    }

    /// Rebuild a model from checkpoint bytes. The configuration and vocab
    /// size must describe the architecture the checkpoint came from; every
    /// parameter must match by name and shape.
    pub fn from_checkpoint(
        cfg: SitConfig,
        vocab_size: usize,
        bytes: &[u8],
    ) -> Result<Self, SitError> {
        let mut model = SitModel::new(cfg, vocab_size, 0, DType::F64)?;
        let entries = load_checkpoint(bytes)?;
        if entries.len() != model.params.len() {
            return Err(SitError::Checkpoint(format!(
                "checkpoint has {} parameters, architecture has {}",
                entries.len(),
                model.params.len()
            )));
        }
        let ids: Vec<ParamId> = model.params.ids().collect();
        for (id, entry) in ids.into_iter().zip(&entries) {
            let current = model.params.get(id);
            let name = model.params.name(id).to_string();
            if entry.name != name {
                return Err(SitError::Checkpoint(format!(
                    "parameter order mismatch: expected {name}, found {}",
                    entry.name
                )));
            }
            if entry.shape != current.shape() {
                return Err(SitError::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    entry.shape,
                    current.shape()
                )));
            }
            let data: Vec<f64> = entry.data.iter().map(|&v| v as f64).collect();
            model
                .params
                .replace(id, Tensor::param_with_dtype(&entry.shape, data, model.dtype));
        }
        Ok(model)
    }
}

impl Clone for SitModel {
    fn clone(&self) -> Self {
        let mut params = ParamSet::new();
        for p in self.params.iter() {
            params.add(
                p.name.clone(),
                Tensor::param_with_dtype(p.tensor.shape(), p.tensor.data().to_vec(), self.dtype),
            );
        }
        SitModel {
            cfg: self.cfg.clone(),
            vocab_size: self.vocab_size,
            params,
            arch: self.arch.clone(),
            dtype: self.dtype,
        }
    }
}

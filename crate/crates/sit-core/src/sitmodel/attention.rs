//! Attention masks: graph-derived, causal, and the sparse ablation patterns
//! (full, window, random).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codegraph::MultiViewGraph;

use super::{AttentionMode, PatternKind};

/// Boolean attention mask over query/key positions, with optional
/// per-pair weights for the multiplicative attention mode.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    pub n_q: usize,
    pub n_k: usize,
    pub allowed: Arc<Vec<bool>>,
    pub weights: Option<Arc<Vec<f64>>>,
}

impl AttentionMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n_k + j]
    }

    /// Everything may attend to everything.
    pub fn full(n: usize) -> AttentionMask {
        AttentionMask {
            n_q: n,
            n_k: n,
            allowed: Arc::new(vec![true; n * n]),
            weights: None,
        }
    }

    /// Rectangular all-allowed mask for cross-attention.
    pub fn cross(n_q: usize, n_k: usize) -> AttentionMask {
        AttentionMask {
            n_q,
            n_k,
            allowed: Arc::new(vec![true; n_q * n_k]),
            weights: None,
        }
    }

    /// Position i may attend to j <= i.
    pub fn causal(n: usize) -> AttentionMask {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = true;
            }
        }
        AttentionMask {
            n_q: n,
            n_k: n,
            allowed: Arc::new(allowed),
            weights: None,
        }
    }

    /// Band mask: allowed iff |i - j| <= w.
    pub fn window(n: usize, w: usize) -> AttentionMask {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                allowed[i * n + j] = i.abs_diff(j) <= w;
            }
        }
        AttentionMask {
            n_q: n,
            n_k: n,
            allowed: Arc::new(allowed),
            weights: None,
        }
    }

    /// Self-loops plus `r` uniformly sampled undirected partners per row.
    /// Deterministic in (seed, n, r).
    pub fn random(n: usize, r: usize, seed: u64) -> AttentionMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 20 ^ r as u64);
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            allowed[i * n + i] = true;
        }
        for i in 0..n {
            if n <= 1 {
                break;
            }
            let picks = r.min(n - 1);
            let mut chosen = std::collections::HashSet::new();
            while chosen.len() < picks {
                let j = rng.gen_range(0..n);
                if j != i {
                    chosen.insert(j);
                }
            }
            let mut sorted: Vec<usize> = chosen.into_iter().collect();
            sorted.sort_unstable();
            for j in sorted {
                allowed[i * n + j] = true;
                allowed[j * n + i] = true;
            }
        }
        AttentionMask {
            n_q: n,
            n_k: n,
            allowed: Arc::new(allowed),
            weights: None,
        }
    }

    /// Mask induced by the combined multi-view matrix: attention is allowed
    /// where the combined weight is positive. In multiplicative mode the
    /// raw weights ride along and scale the pre-softmax logits.
    pub fn from_graph(g: &MultiViewGraph, mode: AttentionMode) -> AttentionMask {
        let n = g.n();
        let allowed: Vec<bool> = g.combined.iter().map(|&v| v > 0.0).collect();
        AttentionMask {
            n_q: n,
            n_k: n,
            allowed: Arc::new(allowed),
            weights: match mode {
                AttentionMode::Masked => None,
                AttentionMode::Multiplicative => Some(Arc::new(g.combined.clone())),
            },
        }
    }
}

/// The ablation attention patterns. `Structured` requires the graph; the
/// other patterns ignore it.
pub fn pattern_mask(
    kind: &PatternKind,
    graph: &MultiViewGraph,
    l: usize,
    mode: AttentionMode,
) -> AttentionMask {
    match kind {
        PatternKind::Structured => AttentionMask::from_graph(graph, mode),
        PatternKind::Full => AttentionMask::full(l),
        PatternKind::Window { w } => AttentionMask::window(l, *w),
        PatternKind::Random { r, seed } => AttentionMask::random(l, *r, *seed),
    }
}
